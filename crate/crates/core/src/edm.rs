//! Additive exponential dispersion models.
//!
//! Seven families share the density form exp(xθ - κΨ(θ)) h(x, κ): normal,
//! gamma, inverse Gaussian, Poisson, binomial, negative binomial, and
//! zero-truncated Poisson. Each is described by its natural parameter θ and
//! dispersion κ; sums of independent members with a shared θ stay in the
//! family with added dispersions, which is what makes the compound response
//! model work.
//!
//! The module covers densities, native <-> (θ, κ) conversion, moments,
//! sampling, maximum-likelihood fitting, and the per-family unnormalized
//! count weights used by the local variational step.

use crate::error::{Error, Result};
use crate::special::{ln_1m_exp, ln_1p_exp, ln_factorial, ln_gamma, log_add_exp};
use rand::Rng;
use rand_distr::Distribution;

/// Tolerance for treating a stored real response as an integer count.
pub const INTEGER_TOLERANCE: f64 = 1e-9;

/// Dispersions above this switch the zero-truncated Poisson base measure from
/// the alternating sum to the all-positive convolution recurrence; near 30
/// the alternating sum cancels down to ~4 significant digits.
const ZTP_ALTERNATING_SUM_MAX_KAPPA: u64 = 30;

/// The seven supported additive exponential dispersion families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdmFamily {
    Normal,
    Gamma,
    InverseGaussian,
    Poisson,
    Binomial,
    NegativeBinomial,
    ZeroTruncatedPoisson,
}

impl EdmFamily {
    pub const ALL: [EdmFamily; 7] = [
        EdmFamily::Normal,
        EdmFamily::Gamma,
        EdmFamily::InverseGaussian,
        EdmFamily::Poisson,
        EdmFamily::Binomial,
        EdmFamily::NegativeBinomial,
        EdmFamily::ZeroTruncatedPoisson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdmFamily::Normal => "normal",
            EdmFamily::Gamma => "gamma",
            EdmFamily::InverseGaussian => "invgauss",
            EdmFamily::Poisson => "poisson",
            EdmFamily::Binomial => "binomial",
            EdmFamily::NegativeBinomial => "negbinomial",
            EdmFamily::ZeroTruncatedPoisson => "ztp",
        }
    }

    /// Families whose dispersion plays the role of an integer count.
    pub fn integer_kappa(self) -> bool {
        matches!(
            self,
            EdmFamily::Binomial | EdmFamily::NegativeBinomial | EdmFamily::ZeroTruncatedPoisson
        )
    }

    /// Families with a point mass at zero (zero IS in the support).
    pub fn has_zero_mass(self) -> bool {
        matches!(
            self,
            EdmFamily::Poisson | EdmFamily::Binomial | EdmFamily::NegativeBinomial
        )
    }

    /// Families whose responses are counts.
    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            EdmFamily::Poisson
                | EdmFamily::Binomial
                | EdmFamily::NegativeBinomial
                | EdmFamily::ZeroTruncatedPoisson
        )
    }

    fn theta_in_domain(self, theta: f64) -> bool {
        if !theta.is_finite() {
            return false;
        }
        match self {
            EdmFamily::Gamma | EdmFamily::InverseGaussian | EdmFamily::NegativeBinomial => {
                theta < 0.0
            }
            _ => true,
        }
    }

    fn check_theta(self, theta: f64) -> Result<()> {
        if self.theta_in_domain(theta) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "theta = {theta} outside the domain of the {} log-partition",
                self.name()
            )))
        }
    }

    fn check_kappa(self, kappa: f64) -> Result<()> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be a positive real, got {kappa}"
            )));
        }
        if self.integer_kappa() {
            let rounded = kappa.round();
            if (kappa - rounded).abs() > INTEGER_TOLERANCE || rounded < 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "{} requires a positive integer kappa, got {kappa}",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    /// Base log-partition Ψ(θ).
    pub fn log_partition(self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            EdmFamily::Normal => theta * theta / 2.0,
            EdmFamily::Gamma => -(-theta).ln(),
            EdmFamily::InverseGaussian => -(-2.0 * theta).sqrt(),
            EdmFamily::Poisson => theta.exp(),
            EdmFamily::Binomial => ln_1p_exp(theta),
            EdmFamily::NegativeBinomial => -ln_1m_exp(theta),
            EdmFamily::ZeroTruncatedPoisson => {
                // log(e^{e^θ} - 1): expm1 below, and λ + log(1 - e^{-λ})
                // above the point where e^λ would overflow precision.
                let lambda = theta.exp();
                if lambda < 30.0 {
                    lambda.exp_m1().ln()
                } else {
                    lambda + ln_1m_exp(-lambda)
                }
            }
        })
    }

    /// First derivative Ψ'(θ); κΨ'(θ) is the family mean.
    pub fn log_partition_deriv(self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            EdmFamily::Normal => theta,
            EdmFamily::Gamma => -1.0 / theta,
            EdmFamily::InverseGaussian => 1.0 / (-2.0 * theta).sqrt(),
            EdmFamily::Poisson => theta.exp(),
            EdmFamily::Binomial => sigmoid(theta),
            // e^θ / (1 - e^θ) = 1 / (e^{-θ} - 1)
            EdmFamily::NegativeBinomial => 1.0 / (-theta).exp_m1(),
            EdmFamily::ZeroTruncatedPoisson => {
                let lambda = theta.exp();
                lambda / -(-lambda).exp_m1()
            }
        })
    }

    /// Second derivative Ψ''(θ); κΨ''(θ) is the family variance.
    pub fn log_partition_deriv2(self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(match self {
            EdmFamily::Normal => 1.0,
            EdmFamily::Gamma => 1.0 / (theta * theta),
            EdmFamily::InverseGaussian => (-2.0 * theta).powf(-1.5),
            EdmFamily::Poisson => theta.exp(),
            EdmFamily::Binomial => {
                let p = sigmoid(theta);
                p * (1.0 - p)
            }
            EdmFamily::NegativeBinomial => {
                let p = theta.exp();
                p / ((1.0 - p) * (1.0 - p))
            }
            EdmFamily::ZeroTruncatedPoisson => {
                let lambda = theta.exp();
                let q = -(-lambda).exp_m1(); // 1 - e^{-λ}
                lambda * (q - lambda * (1.0 - q)) / (q * q)
            }
        })
    }

    /// Log base measure log h(x, κ).
    ///
    /// Returns -inf for x outside the family support, so callers summing over
    /// counts can skip impossible terms without branching.
    pub fn log_base_measure(self, x: f64, kappa: f64) -> Result<f64> {
        self.check_kappa(kappa)?;
        Ok(match self {
            EdmFamily::Normal => {
                if !x.is_finite() {
                    f64::NEG_INFINITY
                } else {
                    -0.5 * (2.0 * std::f64::consts::PI * kappa).ln() - x * x / (2.0 * kappa)
                }
            }
            EdmFamily::Gamma => {
                if x > 0.0 && x.is_finite() {
                    (kappa - 1.0) * x.ln() - ln_gamma(kappa)
                } else {
                    f64::NEG_INFINITY
                }
            }
            EdmFamily::InverseGaussian => {
                if x > 0.0 && x.is_finite() {
                    kappa.ln()
                        - 0.5 * (2.0 * std::f64::consts::PI * x * x * x).ln()
                        - kappa * kappa / (2.0 * x)
                } else {
                    f64::NEG_INFINITY
                }
            }
            EdmFamily::Poisson => match as_count(x) {
                Some(n) => n as f64 * kappa.ln() - ln_factorial(n),
                None => f64::NEG_INFINITY,
            },
            EdmFamily::Binomial => {
                let k = kappa.round() as u64;
                match as_count(x) {
                    Some(n) if n <= k => {
                        ln_factorial(k) - ln_factorial(n) - ln_factorial(k - n)
                    }
                    _ => f64::NEG_INFINITY,
                }
            }
            EdmFamily::NegativeBinomial => match as_count(x) {
                Some(n) => ln_gamma(n as f64 + kappa) - ln_gamma(kappa) - ln_factorial(n),
                None => f64::NEG_INFINITY,
            },
            EdmFamily::ZeroTruncatedPoisson => {
                let k = kappa.round() as u64;
                match as_count(x) {
                    Some(n) if n >= k => ztp_ln_surjections(n, k) - ln_factorial(n),
                    _ => f64::NEG_INFINITY,
                }
            }
        })
    }

    fn support_contains(self, x: f64, kappa: f64) -> bool {
        match self {
            EdmFamily::Normal => x.is_finite(),
            EdmFamily::Gamma | EdmFamily::InverseGaussian => x.is_finite() && x > 0.0,
            EdmFamily::Poisson | EdmFamily::NegativeBinomial => as_count(x).is_some(),
            EdmFamily::Binomial => {
                matches!(as_count(x), Some(n) if n <= kappa.round() as u64)
            }
            EdmFamily::ZeroTruncatedPoisson => {
                matches!(as_count(x), Some(n) if n >= kappa.round() as u64)
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Round a stored real to a count if it is one (within tolerance).
pub fn as_count(x: f64) -> Option<u64> {
    if !x.is_finite() || x < -INTEGER_TOLERANCE {
        return None;
    }
    let rounded = x.round();
    if (x - rounded).abs() <= INTEGER_TOLERANCE && rounded >= 0.0 {
        Some(rounded as u64)
    } else {
        None
    }
}

/// log Σ_{j=0}^{κ} (-1)^j C(κ,j) (κ-j)^x, the number of surjections from an
/// x-set onto a κ-set, which is the combinatorial core of the generalized
/// zero-truncated Poisson base measure. Zero (-inf) for x < κ.
///
/// For κ <= 30 the alternating sum is evaluated as a signed log-sum (track the
/// max magnitude, accumulate signed ratios). Beyond that the terms cancel
/// catastrophically, so the value is built by the all-positive Stirling-style
/// convolution recurrence instead; the fallback also catches the rare case
/// where the signed sum collapses to a non-positive total.
fn ztp_ln_surjections(x: u64, kappa: u64) -> f64 {
    if kappa == 0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x < kappa {
        return f64::NEG_INFINITY;
    }
    if kappa <= ZTP_ALTERNATING_SUM_MAX_KAPPA {
        if let Some(v) = ztp_ln_surjections_alternating(x, kappa) {
            return v;
        }
    }
    ztp_ln_surjections_recurrence(x, kappa)
}

fn ztp_ln_surjections_alternating(x: u64, kappa: u64) -> Option<f64> {
    let xf = x as f64;
    // j = κ contributes 0^x = 0 for x >= 1.
    let log_mag = |j: u64| -> f64 {
        ln_factorial(kappa) - ln_factorial(j) - ln_factorial(kappa - j)
            + xf * ((kappa - j) as f64).ln()
    };
    let max = (0..kappa).map(log_mag).fold(f64::NEG_INFINITY, f64::max);
    let mut signed = 0.0;
    for j in 0..kappa {
        let term = (log_mag(j) - max).exp();
        if j % 2 == 0 {
            signed += term;
        } else {
            signed -= term;
        }
    }
    if signed > 0.0 {
        Some(max + signed.ln())
    } else {
        None
    }
}

/// ln(κ! S(x, κ)) via the Stirling second-kind recurrence in log space; every
/// term is positive so nothing cancels.
fn ztp_ln_surjections_recurrence(x: u64, kappa: u64) -> f64 {
    let k = kappa as usize;
    // row[j] = ln S(n, j+1) for the current n
    let mut row = vec![f64::NEG_INFINITY; k];
    row[0] = 0.0; // S(1, 1) = 1
    for _n in 2..=x {
        for j in (1..k).rev() {
            // S(n, j+1) = (j+1) S(n-1, j+1) + S(n-1, j)
            row[j] = log_add_exp(((j + 1) as f64).ln() + row[j], row[j - 1]);
        }
        row[0] = 0.0; // S(n, 1) = 1
    }
    row[k - 1] + ln_factorial(kappa)
}

/// Native parameterizations of the seven families, as used in the per-family
/// distribution literature. The negative binomial NB(r, p) here counts events
/// that each occur with probability p, so its mean is r p / (1 - p); the
/// binomial Bi(r, p) is the usual r-trial success count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NativeParams {
    Normal { mean: f64, variance: f64 },
    Gamma { shape: f64, rate: f64 },
    InverseGaussian { mean: f64, shape: f64 },
    Poisson { rate: f64 },
    Binomial { trials: u64, p: f64 },
    NegativeBinomial { size: u64, p: f64 },
    ZeroTruncatedPoisson { rate: f64 },
}

impl NativeParams {
    pub fn family(&self) -> EdmFamily {
        match self {
            NativeParams::Normal { .. } => EdmFamily::Normal,
            NativeParams::Gamma { .. } => EdmFamily::Gamma,
            NativeParams::InverseGaussian { .. } => EdmFamily::InverseGaussian,
            NativeParams::Poisson { .. } => EdmFamily::Poisson,
            NativeParams::Binomial { .. } => EdmFamily::Binomial,
            NativeParams::NegativeBinomial { .. } => EdmFamily::NegativeBinomial,
            NativeParams::ZeroTruncatedPoisson { .. } => EdmFamily::ZeroTruncatedPoisson,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            NativeParams::Normal { mean, variance } => {
                if !mean.is_finite() || !(variance.is_finite() && variance > 0.0) {
                    return bad(format!("Normal({mean}, {variance}) needs a positive variance"));
                }
            }
            NativeParams::Gamma { shape, rate } => {
                if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
                    return bad(format!("Gamma({shape}, {rate}) needs positive shape and rate"));
                }
            }
            NativeParams::InverseGaussian { mean, shape } => {
                if !(mean.is_finite() && mean > 0.0 && shape.is_finite() && shape > 0.0) {
                    return bad(format!("IG({mean}, {shape}) needs positive mean and shape"));
                }
            }
            NativeParams::Poisson { rate } | NativeParams::ZeroTruncatedPoisson { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return bad(format!("rate must be positive, got {rate}"));
                }
            }
            NativeParams::Binomial { trials: r, p } | NativeParams::NegativeBinomial { size: r, p } => {
                if r < 1 {
                    return bad("count parameter r must be >= 1".into());
                }
                if !(p.is_finite() && p > 0.0 && p < 1.0) {
                    return bad(format!("p must lie in (0, 1), got {p}"));
                }
            }
        }
        Ok(())
    }

    /// Convert native parameters to the (θ, κ) pair of the dispersion form.
    pub fn to_edm(&self) -> Result<ElementSpec> {
        self.validate()?;
        let (theta, kappa) = match *self {
            NativeParams::Normal { mean, variance } => (mean / variance, variance),
            NativeParams::Gamma { shape, rate } => (-rate, shape),
            NativeParams::InverseGaussian { mean, shape } => {
                (-shape / (2.0 * mean * mean), shape.sqrt())
            }
            NativeParams::Poisson { rate } => (rate.ln(), 1.0),
            NativeParams::Binomial { trials, p } => ((p / (1.0 - p)).ln(), trials as f64),
            NativeParams::NegativeBinomial { size, p } => (p.ln(), size as f64),
            NativeParams::ZeroTruncatedPoisson { rate } => (rate.ln(), 1.0),
        };
        ElementSpec::new(self.family(), theta, kappa)
    }
}

/// One additive EDM member: family plus natural parameter θ and dispersion κ.
///
/// Validated at construction, so the density/moment/sampling operations are
/// infallible on a live value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementSpec {
    family: EdmFamily,
    theta: f64,
    kappa: f64,
}

impl ElementSpec {
    pub fn new(family: EdmFamily, theta: f64, kappa: f64) -> Result<Self> {
        family.check_theta(theta)?;
        family.check_kappa(kappa)?;
        Ok(ElementSpec {
            family,
            theta,
            kappa,
        })
    }

    pub fn family(&self) -> EdmFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Replace θ, keeping κ. Used by the optional hyperparameter update.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        ElementSpec::new(self.family, theta, self.kappa)
    }

    /// Recover native parameters from (θ, κ).
    ///
    /// Bijective per family; Poisson and ZTP require the canonical κ = 1
    /// because their native forms carry a single parameter.
    pub fn to_native(&self) -> Result<NativeParams> {
        let native = match self.family {
            EdmFamily::Normal => NativeParams::Normal {
                mean: self.theta * self.kappa,
                variance: self.kappa,
            },
            EdmFamily::Gamma => NativeParams::Gamma {
                shape: self.kappa,
                rate: -self.theta,
            },
            EdmFamily::InverseGaussian => NativeParams::InverseGaussian {
                mean: self.kappa / (-2.0 * self.theta).sqrt(),
                shape: self.kappa * self.kappa,
            },
            EdmFamily::Poisson => {
                if (self.kappa - 1.0).abs() > INTEGER_TOLERANCE {
                    return Err(Error::InvalidParameter(format!(
                        "Poisson EDM with kappa = {} has no single-parameter native form",
                        self.kappa
                    )));
                }
                NativeParams::Poisson {
                    rate: self.theta.exp(),
                }
            }
            EdmFamily::Binomial => NativeParams::Binomial {
                trials: self.kappa.round() as u64,
                p: sigmoid(self.theta),
            },
            EdmFamily::NegativeBinomial => NativeParams::NegativeBinomial {
                size: self.kappa.round() as u64,
                p: self.theta.exp(),
            },
            EdmFamily::ZeroTruncatedPoisson => {
                if (self.kappa - 1.0).abs() > INTEGER_TOLERANCE {
                    return Err(Error::InvalidParameter(format!(
                        "ZTP EDM with kappa = {} has no single-parameter native form",
                        self.kappa
                    )));
                }
                NativeParams::ZeroTruncatedPoisson {
                    rate: self.theta.exp(),
                }
            }
        };
        native.validate()?;
        Ok(native)
    }

    /// Log density exp(xθ - κΨ(θ)) h(x, κ) at dispersion κ.
    pub fn log_density(&self, x: f64) -> f64 {
        self.log_density_scaled(x, 1)
    }

    /// Log density of the m-fold sum, i.e. dispersion m·κ.
    pub fn log_density_scaled(&self, x: f64, m: u64) -> f64 {
        debug_assert!(m >= 1);
        let kappa = self.kappa * m as f64;
        if !self.family.support_contains(x, kappa) {
            return f64::NEG_INFINITY;
        }
        let psi = self
            .family
            .log_partition(self.theta)
            .expect("validated spec");
        let h = self
            .family
            .log_base_measure(x, kappa)
            .expect("validated spec");
        x * self.theta - kappa * psi + h
    }

    /// Mean κΨ'(θ).
    pub fn mean(&self) -> f64 {
        self.kappa
            * self
                .family
                .log_partition_deriv(self.theta)
                .expect("validated spec")
    }

    /// Variance κΨ''(θ).
    pub fn variance(&self) -> f64 {
        self.kappa
            * self
                .family
                .log_partition_deriv2(self.theta)
                .expect("validated spec")
    }

    /// One draw from the member distribution (dispersion κ).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_scaled(1, rng)
    }

    /// One draw from the m-fold sum (dispersion m·κ).
    pub fn sample_scaled<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> f64 {
        debug_assert!(m >= 1);
        let kappa = self.kappa * m as f64;
        match self.family {
            EdmFamily::Normal => {
                let mean = self.theta * kappa;
                rand_distr::Normal::new(mean, kappa.sqrt())
                    .expect("validated spec")
                    .sample(rng)
            }
            EdmFamily::Gamma => rand_distr::Gamma::new(kappa, 1.0 / -self.theta)
                .expect("validated spec")
                .sample(rng),
            EdmFamily::InverseGaussian => {
                let mean = kappa / (-2.0 * self.theta).sqrt();
                rand_distr::InverseGaussian::new(mean, kappa * kappa)
                    .expect("validated spec")
                    .sample(rng)
            }
            EdmFamily::Poisson => {
                let rate = kappa * self.theta.exp();
                rand_distr::Poisson::new(rate).expect("validated spec").sample(rng)
            }
            EdmFamily::Binomial => {
                let trials = kappa.round() as u64;
                let p = sigmoid(self.theta);
                rand_distr::Binomial::new(trials, p)
                    .expect("validated spec")
                    .sample(rng) as f64
            }
            EdmFamily::NegativeBinomial => {
                // Poisson mixed over Gamma(r, scale p/(1-p)) has the NB(r, p)
                // pmf used here.
                let p = self.theta.exp();
                let scale = p / (1.0 - p);
                let lambda: f64 = rand_distr::Gamma::new(kappa, scale)
                    .expect("validated spec")
                    .sample(rng);
                if lambda > 0.0 {
                    rand_distr::Poisson::new(lambda)
                        .expect("positive rate")
                        .sample(rng)
                } else {
                    0.0
                }
            }
            EdmFamily::ZeroTruncatedPoisson => {
                let lambda = self.theta.exp();
                let count = kappa.round() as u64;
                (0..count).map(|_| sample_ztp(lambda, rng) as f64).sum()
            }
        }
    }
}

fn sample_ztp<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda >= 1.0 {
        // Rejection from the untruncated Poisson: zero probability <= e^{-1}.
        let po = rand_distr::Poisson::new(lambda).expect("positive rate");
        loop {
            let v: f64 = po.sample(rng);
            if v >= 1.0 {
                return v as u64;
            }
        }
    }
    // Inverse transform on the truncated pmf, exact for tiny rates where
    // rejection would spin.
    let u: f64 = rng.random();
    let mut x = 1u64;
    let mut p = lambda / lambda.exp_m1();
    let mut cdf = p;
    while u > cdf && x < 1_000_000 {
        x += 1;
        p *= lambda / x as f64;
        cdf += p;
    }
    x
}

/// The response distribution of the compound model: one of the seven EDM
/// families, or the degenerate point mass at 1 that turns the compound model
/// into plain Poisson factorization. The degenerate element is a realization
/// device, not a public family: it cannot be fitted, only selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element {
    Edm(ElementSpec),
    DegenerateOne,
}

impl Element {
    pub fn spec(&self) -> Option<&ElementSpec> {
        match self {
            Element::Edm(spec) => Some(spec),
            Element::DegenerateOne => None,
        }
    }

    /// Whether a single response of exactly zero has positive probability.
    pub fn has_zero_mass(&self) -> bool {
        match self {
            Element::Edm(spec) => spec.family().has_zero_mass(),
            Element::DegenerateOne => false,
        }
    }

    pub fn is_discrete(&self) -> bool {
        match self {
            Element::Edm(spec) => spec.family().is_discrete(),
            Element::DegenerateOne => true,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Element::Edm(spec) => spec.mean(),
            Element::DegenerateOne => 1.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Element::Edm(spec) => spec.variance(),
            Element::DegenerateOne => 0.0,
        }
    }

    /// Log density of the sum of n element draws (n >= 1).
    pub fn log_density_n(&self, y: f64, n: u64) -> f64 {
        match self {
            Element::Edm(spec) => spec.log_density_scaled(y, n),
            Element::DegenerateOne => match as_count(y) {
                Some(c) if c == n => 0.0,
                _ => f64::NEG_INFINITY,
            },
        }
    }

    /// Draw the sum of n element draws.
    pub fn sample_n<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        match self {
            Element::Edm(spec) => spec.sample_scaled(n, rng),
            Element::DegenerateOne => n as f64,
        }
    }

    /// Smallest truncation bound under which every response up to
    /// `max_response` has at least one admissible count, with all admissible
    /// counts below the bound for the families whose per-term response is
    /// bounded (degenerate, ZTP from below, binomial from above).
    pub fn feasibility_truncation(&self, max_response: f64) -> u64 {
        let needed = match self {
            Element::DegenerateOne => max_response.ceil(),
            Element::Edm(spec) => match spec.family() {
                EdmFamily::ZeroTruncatedPoisson | EdmFamily::Binomial => {
                    (max_response / spec.kappa()).ceil()
                }
                _ => 1.0,
            },
        };
        (needed.max(1.0)) as u64
    }

    /// Log of the unnormalized local weight q(n) from the per-family table,
    /// with the log rate supplied directly to dodge underflow.
    ///
    /// The result is proportional (in n) to p(y; θ, nκ) · Po(n | Λ): it may
    /// differ from `log_density_n(y, n) + n·log_rate - ln n!` by an additive
    /// constant only.
    pub fn log_poisson_weight(&self, y: f64, log_rate: f64, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "count weights are defined for n >= 1 only".into(),
            ));
        }
        let nf = n as f64;
        let w = match self {
            Element::DegenerateOne => match as_count(y) {
                Some(c) if c == n => nf * log_rate - ln_factorial(n),
                _ => f64::NEG_INFINITY,
            },
            Element::Edm(spec) => {
                let theta = spec.theta();
                let kappa = spec.kappa();
                let nk = nf * kappa;
                match spec.family() {
                    EdmFamily::Normal => {
                        // exp{-(n²μ² + y²)/(2nσ²)} Λ^n / (n! √n)
                        let mu = theta * kappa;
                        let var = kappa;
                        -(nf * nf * mu * mu + y * y) / (2.0 * nf * var) + nf * log_rate
                            - ln_factorial(n)
                            - 0.5 * nf.ln()
                    }
                    EdmFamily::Gamma => {
                        // (b^a y^a Λ)^n / (Γ(na) n!)
                        if y <= 0.0 || !y.is_finite() {
                            return Ok(f64::NEG_INFINITY);
                        }
                        let a = kappa;
                        let b = -theta;
                        nf * (a * b.ln() + a * y.ln() + log_rate) - ln_gamma(nk)
                            - ln_factorial(n)
                    }
                    EdmFamily::InverseGaussian => {
                        // exp{nλ/μ - n²λ/(2y)} Λ^n / (n-1)!
                        if y <= 0.0 || !y.is_finite() {
                            return Ok(f64::NEG_INFINITY);
                        }
                        let lam = kappa * kappa;
                        let lam_over_mu = kappa * (-2.0 * theta).sqrt();
                        nf * lam_over_mu - nf * nf * lam / (2.0 * y) + nf * log_rate
                            - ln_factorial(n - 1)
                    }
                    EdmFamily::Poisson => {
                        // exp{-nκλ} (nκ)^y Λ^n / n!
                        let Some(c) = as_count(y) else {
                            return Ok(f64::NEG_INFINITY);
                        };
                        -nk * theta.exp() + c as f64 * nk.ln() + nf * log_rate
                            - ln_factorial(n)
                    }
                    EdmFamily::Binomial => {
                        // (nr)! (1-p)^{nr} Λ^n / (n! (nr - y)!)
                        let r = kappa.round() as u64;
                        let nr = n * r;
                        let Some(c) = as_count(y) else {
                            return Ok(f64::NEG_INFINITY);
                        };
                        if c > nr {
                            return Ok(f64::NEG_INFINITY);
                        }
                        let ln_1m_p = -spec.family().log_partition(theta)?;
                        ln_factorial(nr) - ln_factorial(nr - c) + nr as f64 * ln_1m_p
                            + nf * log_rate
                            - ln_factorial(n)
                    }
                    EdmFamily::NegativeBinomial => {
                        // (y + nr - 1)! (1-p)^{nr} Λ^n / (n! (nr - 1)!)
                        let r = kappa.round() as u64;
                        let nr = n * r;
                        let Some(c) = as_count(y) else {
                            return Ok(f64::NEG_INFINITY);
                        };
                        let ln_1m_p = -spec.family().log_partition(theta)?;
                        ln_gamma((c + nr) as f64) - ln_gamma(nr as f64)
                            + nr as f64 * ln_1m_p
                            + nf * log_rate
                            - ln_factorial(n)
                    }
                    EdmFamily::ZeroTruncatedPoisson => {
                        // (Λ / (e^λ - 1)^κ)^n Σ_j (-1)^j (nκ - j)^y C(nκ,j) / (nκ)!·...
                        // written through the surjection count shared with h.
                        let Some(c) = as_count(y) else {
                            return Ok(f64::NEG_INFINITY);
                        };
                        let nk_int = n * kappa.round() as u64;
                        if c < nk_int {
                            return Ok(f64::NEG_INFINITY);
                        }
                        let psi = spec.family().log_partition(theta)?;
                        nf * (log_rate - kappa * psi) + ztp_ln_surjections(c, nk_int)
                            - ln_factorial(n)
                    }
                }
            }
        };
        Ok(w)
    }
}

/// Maximum-likelihood fit of the family's native parameters.
///
/// Closed forms where they exist; a guarded one-dimensional solve for the
/// gamma shape and the ZTP rate; integer scan with the success probability
/// profiled out for the binomial and negative binomial count.
pub fn mle_fit(family: EdmFamily, samples: &[f64]) -> Result<NativeParams> {
    if samples.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let check_support = |kappa_probe: f64| -> Result<()> {
        if let Some(bad) = samples
            .iter()
            .find(|&&x| !family.support_contains(x, kappa_probe))
        {
            return Err(Error::Fit(format!(
                "sample {bad} outside the {} support",
                family.name()
            )));
        }
        Ok(())
    };
    match family {
        EdmFamily::Normal => {
            check_support(1.0)?;
            let variance = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            if variance <= 0.0 {
                return Err(Error::Fit("all samples equal; normal variance is zero".into()));
            }
            Ok(NativeParams::Normal { mean, variance })
        }
        EdmFamily::Gamma => {
            check_support(1.0)?;
            let mean_ln = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
            let s = mean.ln() - mean_ln;
            if s.is_nan() || s <= 0.0 {
                return Err(Error::Fit(
                    "gamma shape undefined: zero spread in the sample".into(),
                ));
            }
            // ln a - ψ(a) decreases from +inf to 0; bracket then bisect.
            let shape = bisect_decreasing(|a| a.ln() - crate::special::digamma(a) - s, 1e-12)?;
            Ok(NativeParams::Gamma {
                shape,
                rate: shape / mean,
            })
        }
        EdmFamily::InverseGaussian => {
            check_support(1.0)?;
            // Closed-form MLE: 1/λ = mean of (1/x - 1/x̄).
            let recip_spread = samples.iter().map(|x| 1.0 / x - 1.0 / mean).sum::<f64>() / n;
            if recip_spread.is_nan() || recip_spread <= 0.0 {
                return Err(Error::Fit(
                    "inverse Gaussian shape undefined: zero spread in the sample".into(),
                ));
            }
            Ok(NativeParams::InverseGaussian {
                mean,
                shape: 1.0 / recip_spread,
            })
        }
        EdmFamily::Poisson => {
            check_support(1.0)?;
            if mean <= 0.0 {
                return Err(Error::Fit("all counts zero; Poisson rate must be positive".into()));
            }
            Ok(NativeParams::Poisson { rate: mean })
        }
        EdmFamily::Binomial => {
            let max = samples.iter().cloned().fold(0.0_f64, f64::max);
            let r_min = (max.round() as u64).max(1);
            check_support(r_min as f64)?;
            let sum: f64 = samples.iter().sum();
            if samples.iter().all(|&x| x == samples[0]) {
                return Err(Error::Fit("all counts equal; binomial fit is degenerate".into()));
            }
            let mut best: Option<(f64, u64, f64)> = None;
            for r in r_min..=(4 * r_min) {
                let p = (sum / (n * r as f64)).clamp(1e-12, 1.0 - 1e-12);
                let ll: f64 = samples
                    .iter()
                    .map(|&x| {
                        let c = x.round() as u64;
                        ln_factorial(r) - ln_factorial(c) - ln_factorial(r - c)
                            + c as f64 * p.ln()
                            + (r - c) as f64 * (1.0 - p).ln()
                    })
                    .sum();
                if best.is_none_or(|(b, _, _)| ll > b) {
                    best = Some((ll, r, p));
                }
            }
            let (_, trials, p) = best.expect("nonempty scan");
            Ok(NativeParams::Binomial { trials, p })
        }
        EdmFamily::NegativeBinomial => {
            check_support(1.0)?;
            if mean <= 0.0 {
                return Err(Error::Fit("all counts zero; negative binomial needs events".into()));
            }
            let max = samples.iter().cloned().fold(0.0_f64, f64::max).max(1.0);
            let mut best: Option<(f64, u64, f64)> = None;
            for r in 1..=(4 * max.round() as u64) {
                let rf = r as f64;
                // mean = r p / (1 - p)  =>  p = mean / (r + mean)
                let p = mean / (rf + mean);
                let ll: f64 = samples
                    .iter()
                    .map(|&x| {
                        let c = x.round() as u64;
                        ln_gamma((c + r) as f64) - ln_gamma(rf) - ln_factorial(c)
                            + c as f64 * p.ln()
                            + rf * (1.0 - p).ln()
                    })
                    .sum::<f64>();
                if best.is_none_or(|(b, _, _)| ll > b) {
                    best = Some((ll, r, p));
                }
            }
            let (_, size, p) = best.expect("nonempty scan");
            Ok(NativeParams::NegativeBinomial { size, p })
        }
        EdmFamily::ZeroTruncatedPoisson => {
            check_support(1.0)?;
            if mean <= 1.0 {
                return Err(Error::Fit(
                    "ZTP moment condition needs a sample mean above 1".into(),
                ));
            }
            // mean = λ / (1 - e^{-λ}) is increasing in λ with limit 1 at 0.
            let rate = bisect_decreasing(
                |lam| mean - lam / -(-lam).exp_m1(),
                1e-12,
            )?;
            Ok(NativeParams::ZeroTruncatedPoisson { rate })
        }
    }
}

/// Root of a strictly decreasing function crossing zero on (lo, ∞).
fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, lo_start: f64) -> Result<f64> {
    let mut lo = lo_start;
    let mut hi = 1.0;
    let mut guard = 0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Fit("bisection failed to bracket a root".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{Continuous, Discrete};

    fn native_strategy() -> impl Strategy<Value = NativeParams> {
        prop_oneof![
            (-50.0..50.0_f64, 0.01..100.0_f64)
                .prop_map(|(mean, variance)| NativeParams::Normal { mean, variance }),
            (0.05..80.0_f64, 0.01..50.0_f64)
                .prop_map(|(shape, rate)| NativeParams::Gamma { shape, rate }),
            (0.05..50.0_f64, 0.05..80.0_f64)
                .prop_map(|(mean, shape)| NativeParams::InverseGaussian { mean, shape }),
            (0.01..100.0_f64).prop_map(|rate| NativeParams::Poisson { rate }),
            (1u64..80, 0.01..0.99_f64).prop_map(|(trials, p)| NativeParams::Binomial { trials, p }),
            (1u64..50, 0.01..0.99_f64)
                .prop_map(|(size, p)| NativeParams::NegativeBinomial { size, p }),
            (0.01..50.0_f64).prop_map(|rate| NativeParams::ZeroTruncatedPoisson { rate }),
        ]
    }

    proptest! {
        #[test]
        fn native_edm_round_trip(native in native_strategy()) {
            let spec = native.to_edm().unwrap();
            let back = spec.to_native().unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
            let ok = match (native, back) {
                (NativeParams::Normal { mean: m1, variance: v1 },
                 NativeParams::Normal { mean: m2, variance: v2 }) => rel(m1, m2) && rel(v1, v2),
                (NativeParams::Gamma { shape: a1, rate: b1 },
                 NativeParams::Gamma { shape: a2, rate: b2 }) => rel(a1, a2) && rel(b1, b2),
                (NativeParams::InverseGaussian { mean: m1, shape: l1 },
                 NativeParams::InverseGaussian { mean: m2, shape: l2 }) => rel(m1, m2) && rel(l1, l2),
                (NativeParams::Poisson { rate: r1 }, NativeParams::Poisson { rate: r2 }) => rel(r1, r2),
                (NativeParams::Binomial { trials: t1, p: p1 },
                 NativeParams::Binomial { trials: t2, p: p2 }) => t1 == t2 && rel(p1, p2),
                (NativeParams::NegativeBinomial { size: s1, p: p1 },
                 NativeParams::NegativeBinomial { size: s2, p: p2 }) => s1 == s2 && rel(p1, p2),
                (NativeParams::ZeroTruncatedPoisson { rate: r1 },
                 NativeParams::ZeroTruncatedPoisson { rate: r2 }) => rel(r1, r2),
                _ => false,
            };
            prop_assert!(ok, "{native:?} -> {spec:?} -> {back:?}");
        }

        #[test]
        fn edm_native_round_trip(native in native_strategy()) {
            // Spec -> native -> spec is also the identity on canonical specs.
            let spec = native.to_edm().unwrap();
            let again = spec.to_native().unwrap().to_edm().unwrap();
            prop_assert!((spec.theta() - again.theta()).abs() <= 1e-12 * spec.theta().abs().max(1e-300));
            prop_assert!((spec.kappa() - again.kappa()).abs() <= 1e-12 * spec.kappa());
        }

        #[test]
        fn density_matches_independent_classical_form(
            native in native_strategy(),
            points in prop::collection::vec(0.0..1.0_f64, 25),
        ) {
            let spec = native.to_edm().unwrap();
            for u in points {
                // Map the unit draw onto a representative support point.
                let (x, classical) = match native {
                    NativeParams::Normal { mean, variance } => {
                        let x = mean + (u - 0.5) * 8.0 * variance.sqrt();
                        let d = statrs::distribution::Normal::new(mean, variance.sqrt()).unwrap();
                        (x, d.ln_pdf(x))
                    }
                    NativeParams::Gamma { shape, rate } => {
                        let x = (u + 0.01) * 3.0 * (shape / rate);
                        let d = statrs::distribution::Gamma::new(shape, rate).unwrap();
                        (x, d.ln_pdf(x))
                    }
                    NativeParams::InverseGaussian { mean, shape } => {
                        // ln pdf written out by hand; statrs has no IG.
                        let x = (u + 0.01) * 3.0 * mean;
                        let ld = 0.5 * (shape / (2.0 * std::f64::consts::PI * x * x * x)).ln()
                            - shape * (x - mean) * (x - mean) / (2.0 * mean * mean * x);
                        (x, ld)
                    }
                    NativeParams::Poisson { rate } => {
                        let x = (u * (3.0 * rate + 10.0)).floor();
                        let d = statrs::distribution::Poisson::new(rate).unwrap();
                        (x, d.ln_pmf(x as u64))
                    }
                    NativeParams::Binomial { trials, p } => {
                        let x = (u * (trials as f64 + 0.999)).floor();
                        let d = statrs::distribution::Binomial::new(p, trials).unwrap();
                        (x, d.ln_pmf(x as u64))
                    }
                    NativeParams::NegativeBinomial { size, p } => {
                        let x = (u * (3.0 * size as f64 * p / (1.0 - p) + 10.0)).floor();
                        // statrs parameterizes by the success probability of
                        // the stopping trials, i.e. 1 - p in our convention.
                        let d = statrs::distribution::NegativeBinomial::new(size as f64, 1.0 - p)
                            .unwrap();
                        (x, d.ln_pmf(x as u64))
                    }
                    NativeParams::ZeroTruncatedPoisson { rate } => {
                        let x = 1.0 + (u * (3.0 * rate + 10.0)).floor();
                        let ld = x * rate.ln() - crate::special::ln_factorial(x as u64)
                            - rate.exp_m1().ln();
                        (x, ld)
                    }
                };
                let got = spec.log_density(x);
                prop_assert!(
                    (got - classical).abs() < 1e-10,
                    "{native:?} at x = {x}: {got} vs {classical}"
                );
            }
        }
    }
}
