//! The hierarchical generative model: hyperparameters, latent state,
//! simulation, variational-state initialization, and the sparsity-driven
//! hyperparameter heuristics.
//!
//! Per user u: activity r_u ~ Ga(ρ, ρ/ϱ), factors s_uk ~ Ga(η, r_u).
//! Per item i: popularity w_i ~ Ga(ω, ω/ϖ), factors v_ik ~ Ga(ζ, w_i).
//! Per entry: count n_ui ~ Po(Σ_k s_uk v_ik); a response is drawn from the
//! element distribution at dispersion n_ui·κ when the count is positive.

use crate::data::{Entry, SparseDataset};
use crate::edm::{EdmFamily, Element, ElementSpec};
use crate::error::{Error, Result};
use crate::svi::TrainingSource;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::Distribution;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DEFAULT_K: usize = 160;
pub const DEFAULT_XI: f64 = 0.7;
pub const DEFAULT_TAU: f64 = 10_000.0;

/// Assumed sparsity when training never sees the missing entries.
pub const NONMISSING_SPARSITY: f64 = 0.001;

const MODEL_MAGIC: &[u8; 4] = b"HCPF";
const MODEL_VERSION: u32 = 1;

/// All fixed model constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// User factor shape η.
    pub eta: f64,
    /// Item factor shape ζ.
    pub zeta: f64,
    /// User activity shape ρ.
    pub rho: f64,
    /// User activity mean ϱ.
    pub varrho: f64,
    /// Item popularity shape ω.
    pub omega: f64,
    /// Item popularity mean ϖ.
    pub varpi: f64,
    /// Factor count K.
    pub k: usize,
    /// Response element distribution (θ, κ), or the degenerate point mass.
    pub element: Element,
    /// Learning-rate delay τ.
    pub tau: f64,
    /// Learning-rate power ξ.
    pub xi: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("eta", self.eta),
            ("zeta", self.zeta),
            ("rho", self.rho),
            ("varrho", self.varrho),
            ("omega", self.omega),
            ("varpi", self.varpi),
            ("tau", self.tau),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a positive real, got {v}"
                )));
            }
        }
        if !(self.xi > 0.5 && self.xi < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "xi must lie in (0.5, 1.0), got {}",
                self.xi
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        Ok(())
    }

    /// Homogeneous expected count implied by the sparsity heuristic:
    /// K · (η/ϱ)(ζ/ϖ), which the defaults arrange to equal -ln(sparsity).
    pub fn implied_expected_count(&self) -> f64 {
        self.k as f64 * (self.eta / self.varrho) * (self.zeta / self.varpi)
    }
}

/// Build hyperparameters from the observed sparsity level.
///
/// Heavy-tail shapes ϖ = ϱ = 0.1 and ω = ρ = 0.01; the expected entry count
/// E[n] inverts the zero probability, E[n] = -ln(sparsity); factor shapes
/// split that budget evenly, η = ϱ√(E[n]/K) and ζ = ϖ√(E[n]/K). When
/// training on the non-missing entries only, the sparsity is overridden to
/// 0.001 and the element dispersion is divided by E[n] (rounded back to an
/// integer for the count-dispersion families).
pub fn default_hyperparams(
    sparsity: f64,
    element: Element,
    k: usize,
    source: TrainingSource,
) -> Result<Hyperparams> {
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sparsity must lie in (0, 1), got {sparsity}"
        )));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let (sparsity, element) = match source {
        TrainingSource::FullMatrix => (sparsity, element),
        TrainingSource::NonmissingOnly => {
            let expected_n = -NONMISSING_SPARSITY.ln();
            let element = match element {
                Element::DegenerateOne => Element::DegenerateOne,
                Element::Edm(spec) => {
                    let mut kappa = spec.kappa() / expected_n;
                    if spec.family().integer_kappa() {
                        kappa = kappa.round().max(1.0);
                    }
                    Element::Edm(ElementSpec::new(spec.family(), spec.theta(), kappa)?)
                }
            };
            (NONMISSING_SPARSITY, element)
        }
    };
    let expected_n = -sparsity.ln();
    let varrho = 0.1;
    let varpi = 0.1;
    let hyper = Hyperparams {
        eta: varrho * (expected_n / k as f64).sqrt(),
        zeta: varpi * (expected_n / k as f64).sqrt(),
        rho: 0.01,
        varrho,
        omega: 0.01,
        varpi,
        k,
        element,
        tau: DEFAULT_TAU,
        xi: DEFAULT_XI,
    };
    hyper.validate()?;
    Ok(hyper)
}

/// Hyperparameters for simulating synthetic data at a target sparsity.
///
/// The default fitting priors set heavy-tailed activity shapes (ρ = ω = 0.01)
/// that are fine as priors but useless as a data-generating process: a Gamma
/// with shape 0.01 puts a third of its mass below 1e-50, so rates drawn from
/// the hierarchy explode across hundreds of decades. Simulation instead uses
/// concentrated shapes with the same rate recipe, keeping the homogeneous
/// expected count at -ln(target_sparsity) while the realized sparsity stays
/// near the target.
pub fn simulation_hyperparams(
    target_sparsity: f64,
    element: Element,
    k: usize,
) -> Result<Hyperparams> {
    let shape = factor_shape_for(target_sparsity, k)?;
    simulation_hyperparams_with_shape(target_sparsity, element, k, shape)
}

fn factor_shape_for(target_sparsity: f64, k: usize) -> Result<f64> {
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target sparsity must lie in (0, 1), got {target_sparsity}"
        )));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    Ok((-target_sparsity.ln() / k as f64).sqrt())
}

/// Like [`simulation_hyperparams`], with the factor Gamma shape chosen
/// directly. Smaller shapes give sharper factors: each user and item then
/// loads on few components, which produces block-structured rather than
/// margin-dominated matrices. The activity/popularity means are solved so the
/// homogeneous expected count stays at -ln(target_sparsity) either way.
pub fn simulation_hyperparams_with_shape(
    target_sparsity: f64,
    element: Element,
    k: usize,
    factor_shape: f64,
) -> Result<Hyperparams> {
    factor_shape_for(target_sparsity, k)?;
    if !(factor_shape.is_finite() && factor_shape > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "factor shape must be a positive real, got {factor_shape}"
        )));
    }
    let expected_n = -target_sparsity.ln();
    // E[s]E[v]K = (η/ϱ)(ζ/ϖ)K = E[n]
    let varrho = factor_shape / (expected_n / k as f64).sqrt();
    let hyper = Hyperparams {
        eta: factor_shape,
        zeta: factor_shape,
        rho: 10.0,
        varrho,
        omega: 10.0,
        varpi: varrho,
        k,
        element,
        tau: DEFAULT_TAU,
        xi: DEFAULT_XI,
    };
    hyper.validate()?;
    Ok(hyper)
}

/// One draw of the full latent hierarchy.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub c_u: usize,
    pub c_i: usize,
    pub k: usize,
    /// r_u, length C_U.
    pub user_activity: Vec<f64>,
    /// s_uk, row-major C_U × K.
    pub user_factors: Vec<f64>,
    /// w_i, length C_I.
    pub item_popularity: Vec<f64>,
    /// v_ik, row-major C_I × K.
    pub item_factors: Vec<f64>,
}

impl LatentState {
    /// Entry rate Σ_k s_uk v_ik.
    pub fn rate(&self, u: usize, i: usize) -> f64 {
        let k = self.k;
        (0..k)
            .map(|j| self.user_factors[u * k + j] * self.item_factors[i * k + j])
            .sum()
    }
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    rand_distr::Gamma::new(shape, 1.0 / rate)
        .expect("positive shape and rate")
        .sample(rng)
}

/// Draw the full hierarchy and the induced sparse response matrix.
///
/// Entries with a zero count are the missing entries and are omitted; a drawn
/// response of exactly zero is indistinguishable from missing in the sparse
/// coordinate form and is omitted as well (only possible for the families
/// whose support contains zero).
pub fn simulate<R: Rng + ?Sized>(
    hyper: &Hyperparams,
    c_u: usize,
    c_i: usize,
    rng: &mut R,
) -> Result<(LatentState, SparseDataset)> {
    hyper.validate()?;
    if c_u < 1 || c_i < 1 {
        return Err(Error::InvalidParameter(
            "simulation needs at least one user and one item".into(),
        ));
    }
    let k = hyper.k;
    let mut user_activity = Vec::with_capacity(c_u);
    let mut user_factors = Vec::with_capacity(c_u * k);
    for _ in 0..c_u {
        let r_u = gamma_draw(hyper.rho, hyper.rho / hyper.varrho, rng);
        user_activity.push(r_u);
        for _ in 0..k {
            user_factors.push(gamma_draw(hyper.eta, r_u, rng));
        }
    }
    let mut item_popularity = Vec::with_capacity(c_i);
    let mut item_factors = Vec::with_capacity(c_i * k);
    for _ in 0..c_i {
        let w_i = gamma_draw(hyper.omega, hyper.omega / hyper.varpi, rng);
        item_popularity.push(w_i);
        for _ in 0..k {
            item_factors.push(gamma_draw(hyper.zeta, w_i, rng));
        }
    }
    let latent = LatentState {
        c_u,
        c_i,
        k,
        user_activity,
        user_factors,
        item_popularity,
        item_factors,
    };
    let mut entries = Vec::new();
    for u in 0..c_u {
        for i in 0..c_i {
            let rate = latent.rate(u, i);
            if rate.is_nan() || rate <= 0.0 {
                continue;
            }
            let rate = if rate.is_finite() { rate } else { f64::MAX };
            let n: f64 = rand_distr::Poisson::new(rate)
                .expect("positive rate")
                .sample(rng);
            if n < 1.0 {
                continue;
            }
            let n = if n >= u64::MAX as f64 {
                u64::MAX
            } else {
                n as u64
            };
            let y = hyper.element.sample_n(n, rng);
            if y != 0.0 {
                entries.push(Entry {
                    user: u as u32,
                    item: i as u32,
                    value: y,
                });
            }
        }
    }
    let dataset = SparseDataset::from_dense_indices(c_u, c_i, entries)?;
    Ok((latent, dataset))
}

/// All Gamma variational parameters and the per-entity learning counters.
///
/// The shapes a_r and a_w are fixed at ρ + Kη and ω + Kζ for every user and
/// item and so are stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub c_u: usize,
    pub c_i: usize,
    pub k: usize,
    /// Fixed activity shape ρ + Kη.
    pub a_r: f64,
    /// Fixed popularity shape ω + Kζ.
    pub a_w: f64,
    /// Activity rates, length C_U.
    pub b_r: Vec<f64>,
    /// User factor shapes, row-major C_U × K.
    pub a_s: Vec<f64>,
    /// User factor rates, row-major C_U × K.
    pub b_s: Vec<f64>,
    /// Per-user learning counters, start at τ.
    pub t_u: Vec<f64>,
    /// Popularity rates, length C_I.
    pub b_w: Vec<f64>,
    /// Item factor shapes, row-major C_I × K.
    pub a_v: Vec<f64>,
    /// Item factor rates, row-major C_I × K.
    pub b_v: Vec<f64>,
    /// Per-item learning counters, start at τ.
    pub t_i: Vec<f64>,
}

impl VariationalState {
    /// The initialization block: b_r = ρ/ϱ, a_s = η, b_s = ϱ, b_w = ω/ϖ,
    /// a_v = ζ, b_v = ϖ, t_u = t_i = τ, with the fixed shapes above. No
    /// symmetry-breaking jitter; see [`VariationalState::apply_init_jitter`].
    pub fn init(hyper: &Hyperparams, c_u: usize, c_i: usize) -> Result<Self> {
        hyper.validate()?;
        if c_u < 1 || c_i < 1 {
            return Err(Error::InvalidParameter(
                "state needs at least one user and one item".into(),
            ));
        }
        let k = hyper.k;
        Ok(VariationalState {
            c_u,
            c_i,
            k,
            a_r: hyper.rho + k as f64 * hyper.eta,
            a_w: hyper.omega + k as f64 * hyper.zeta,
            b_r: vec![hyper.rho / hyper.varrho; c_u],
            a_s: vec![hyper.eta; c_u * k],
            b_s: vec![hyper.varrho; c_u * k],
            t_u: vec![hyper.tau; c_u],
            b_w: vec![hyper.omega / hyper.varpi; c_i],
            a_v: vec![hyper.zeta; c_i * k],
            b_v: vec![hyper.varpi; c_i * k],
            t_i: vec![hyper.tau; c_i],
        })
    }

    /// Break factor symmetry by scaling the initial factor shapes with
    /// independent uniform draws in [0.9, 1.1]. Without it all K factors
    /// receive identical updates and never separate.
    pub fn apply_init_jitter<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for a in self.a_s.iter_mut() {
            *a *= rng.random_range(0.9..1.1);
        }
        for a in self.a_v.iter_mut() {
            *a *= rng.random_range(0.9..1.1);
        }
    }

    /// Variational expected entry rate Λ_ui = Σ_k (a_s a_v)/(b_s b_v).
    pub fn expected_rate(&self, u: usize, i: usize) -> Result<f64> {
        if u >= self.c_u || i >= self.c_i {
            return Err(Error::Index(format!(
                "entry ({u}, {i}) outside a {} x {} matrix",
                self.c_u, self.c_i
            )));
        }
        Ok(self.expected_rate_unchecked(u, i))
    }

    #[inline]
    pub(crate) fn expected_rate_unchecked(&self, u: usize, i: usize) -> f64 {
        let k = self.k;
        let us = &self.a_s[u * k..(u + 1) * k];
        let ub = &self.b_s[u * k..(u + 1) * k];
        let is = &self.a_v[i * k..(i + 1) * k];
        let ib = &self.b_v[i * k..(i + 1) * k];
        let mut rate = 0.0;
        for j in 0..k {
            rate += (us[j] / ub[j]) * (is[j] / ib[j]);
        }
        rate
    }

    /// Upper bound on Λ_ui over the whole grid: Σ_k max_u(a_s/b_s) max_i(a_v/b_v).
    pub fn rate_upper_bound(&self) -> f64 {
        let k = self.k;
        (0..k)
            .map(|j| {
                let mu = (0..self.c_u)
                    .map(|u| self.a_s[u * k + j] / self.b_s[u * k + j])
                    .fold(0.0_f64, f64::max);
                let mi = (0..self.c_i)
                    .map(|i| self.a_v[i * k + j] / self.b_v[i * k + j])
                    .fold(0.0_f64, f64::max);
                mu * mi
            })
            .sum()
    }

    /// Every shape, rate, and counter strictly positive and finite.
    pub fn all_positive_finite(&self) -> bool {
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        self.a_r > 0.0
            && self.a_w > 0.0
            && ok(&self.b_r)
            && ok(&self.a_s)
            && ok(&self.b_s)
            && ok(&self.t_u)
            && ok(&self.b_w)
            && ok(&self.a_v)
            && ok(&self.b_v)
            && ok(&self.t_i)
    }
}

fn element_tag(element: &Element) -> (u8, f64, f64) {
    match element {
        Element::DegenerateOne => (0, 0.0, 0.0),
        Element::Edm(spec) => {
            let tag = match spec.family() {
                EdmFamily::Normal => 1,
                EdmFamily::Gamma => 2,
                EdmFamily::InverseGaussian => 3,
                EdmFamily::Poisson => 4,
                EdmFamily::Binomial => 5,
                EdmFamily::NegativeBinomial => 6,
                EdmFamily::ZeroTruncatedPoisson => 7,
            };
            (tag, spec.theta(), spec.kappa())
        }
    }
}

fn element_from_tag(tag: u8, theta: f64, kappa: f64) -> Result<Element> {
    let family = match tag {
        0 => return Ok(Element::DegenerateOne),
        1 => EdmFamily::Normal,
        2 => EdmFamily::Gamma,
        3 => EdmFamily::InverseGaussian,
        4 => EdmFamily::Poisson,
        5 => EdmFamily::Binomial,
        6 => EdmFamily::NegativeBinomial,
        7 => EdmFamily::ZeroTruncatedPoisson,
        other => return Err(Error::Format(format!("unknown element tag {other}"))),
    };
    Ok(Element::Edm(ElementSpec::new(family, theta, kappa)?))
}

/// Write the model (hyperparameters plus variational state) as the versioned
/// binary format: magic, version, dimensions, K, hyperparameters, element
/// spec, then the variational arrays in row-major order.
pub fn write_model<W: Write>(
    w: &mut W,
    hyper: &Hyperparams,
    state: &VariationalState,
) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_VERSION)?;
    w.write_u64::<LittleEndian>(state.c_u as u64)?;
    w.write_u64::<LittleEndian>(state.c_i as u64)?;
    w.write_u64::<LittleEndian>(state.k as u64)?;
    for v in [
        hyper.eta,
        hyper.zeta,
        hyper.rho,
        hyper.varrho,
        hyper.omega,
        hyper.varpi,
        hyper.tau,
        hyper.xi,
    ] {
        w.write_f64::<LittleEndian>(v)?;
    }
    let (tag, theta, kappa) = element_tag(&hyper.element);
    w.write_u8(tag)?;
    w.write_f64::<LittleEndian>(theta)?;
    w.write_f64::<LittleEndian>(kappa)?;
    w.write_f64::<LittleEndian>(state.a_r)?;
    w.write_f64::<LittleEndian>(state.a_w)?;
    for arr in [
        &state.b_r, &state.a_s, &state.b_s, &state.t_u, &state.b_w, &state.a_v, &state.b_v,
        &state.t_i,
    ] {
        for &v in arr.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<(Hyperparams, VariationalState)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let c_u = r.read_u64::<LittleEndian>()? as usize;
    let c_i = r.read_u64::<LittleEndian>()? as usize;
    let k = r.read_u64::<LittleEndian>()? as usize;
    let mut h = [0.0f64; 8];
    for v in h.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let tag = r.read_u8()?;
    let theta = r.read_f64::<LittleEndian>()?;
    let kappa = r.read_f64::<LittleEndian>()?;
    let element = element_from_tag(tag, theta, kappa)?;
    let hyper = Hyperparams {
        eta: h[0],
        zeta: h[1],
        rho: h[2],
        varrho: h[3],
        omega: h[4],
        varpi: h[5],
        tau: h[6],
        xi: h[7],
        k,
        element,
    };
    hyper.validate()?;
    let a_r = r.read_f64::<LittleEndian>()?;
    let a_w = r.read_f64::<LittleEndian>()?;
    let mut read_vec = |len: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(r.read_f64::<LittleEndian>()?);
        }
        Ok(v)
    };
    let b_r = read_vec(c_u)?;
    let a_s = read_vec(c_u * k)?;
    let b_s = read_vec(c_u * k)?;
    let t_u = read_vec(c_u)?;
    let b_w = read_vec(c_i)?;
    let a_v = read_vec(c_i * k)?;
    let b_v = read_vec(c_i * k)?;
    let t_i = read_vec(c_i)?;
    let state = VariationalState {
        c_u,
        c_i,
        k,
        a_r,
        a_w,
        b_r,
        a_s,
        b_s,
        t_u,
        b_w,
        a_v,
        b_v,
        t_i,
    };
    Ok((hyper, state))
}

pub fn save_model<P: AsRef<Path>>(
    path: P,
    hyper: &Hyperparams,
    state: &VariationalState,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut w, hyper, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<(Hyperparams, VariationalState)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_model(&mut r)
}
