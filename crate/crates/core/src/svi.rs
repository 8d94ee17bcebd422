//! Stochastic variational inference for the compound factorization model.
//!
//! Each iteration samples one coordinate, computes the local variational
//! quantities (the count distribution q(n) and the factor allocation φ), and
//! takes a convex step on the global Gamma parameters of the touched user and
//! item. The six global targets are all computed from the pre-step state, so
//! the update block acts as one simultaneous step.
//!
//! Setting q(n) = δ_y instead of the count posterior turns the model into
//! plain Poisson factorization; with the degenerate element the two coincide
//! exactly.

use crate::compound::choose_truncation;
use crate::data::{HeldOutSet, SparseDataset};
use crate::edm::{as_count, Element, ElementSpec};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{Hyperparams, VariationalState};
use crate::special::{digamma, log_sum_exp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::time::Instant;

/// Count-posterior treatment: the compound model or the Poisson-factorization
/// degeneration q(n) = δ_y.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Hcpf,
    Hpf,
}

/// What a training draw ranges over: the full coordinate grid (absent cells
/// read as zero) or the stored entries only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingSource {
    FullMatrix,
    NonmissingOnly,
}

/// Fit-loop configuration. Convergence is judged on the validation
/// log-likelihood every `eval_every` iterations: fitting stops once the best
/// value has failed to improve by `tolerance` (relative) for `patience`
/// consecutive evaluations, or at `max_iterations`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub mode: FitMode,
    pub source: TrainingSource,
    pub max_iterations: u64,
    pub eval_every: u64,
    pub patience: u32,
    pub tolerance: f64,
    pub seed: u64,
    /// Local steps averaged per global step; 1 is the reference path.
    pub batch_size: usize,
    /// Refit the element natural parameter every this many iterations.
    pub element_update_every: Option<u64>,
    /// Multiplicative symmetry-breaking jitter on the initial factor shapes.
    pub jitter_init: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: FitMode::Hcpf,
            source: TrainingSource::FullMatrix,
            max_iterations: 1_000_000,
            eval_every: 10_000,
            patience: 10,
            tolerance: 1e-4,
            seed: 0,
            batch_size: 1,
            element_update_every: None,
            jitter_init: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Local variational quantities for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    /// Expected entry rate Λ_ui.
    pub rate: f64,
    /// q(n) over n = 0..=truncation; sums to one.
    pub q_n: Vec<f64>,
    /// E[n] = Σ n q(n).
    pub expected_n: f64,
    /// Factor allocation φ over k = 0..K; sums to one.
    pub phi: Vec<f64>,
}

/// Compute the local step for (u, i) with response y (zero when the cell is
/// absent).
///
/// The count weights come from the per-family table; the n = 0 slot is the
/// point-mass atom, which only competes when y = 0. For a zero response with
/// an element that cannot itself produce zero, q collapses to δ₀ and φ is
/// left uniform (it multiplies E[n] = 0 in every update target).
pub fn local_step(
    y: f64,
    u: usize,
    i: usize,
    state: &VariationalState,
    element: &Element,
    truncation: u64,
    mode: FitMode,
) -> Result<LocalStep> {
    if u >= state.c_u || i >= state.c_i {
        return Err(Error::Index(format!(
            "entry ({u}, {i}) outside a {} x {} matrix",
            state.c_u, state.c_i
        )));
    }
    let rate = state.expected_rate_unchecked(u, i);
    let k = state.k;
    let n_slots = truncation as usize + 1;

    let zero_shortcut = y == 0.0 && !element.has_zero_mass();
    let (q_n, expected_n) = if mode == FitMode::Hpf {
        let c = as_count(y).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "q(n) = δ_y needs integer responses, got y = {y} at ({u}, {i})"
            ))
        })?;
        if c > truncation {
            return Err(Error::Truncation {
                user: u,
                item: i,
                y,
                truncation: truncation as usize,
            });
        }
        let mut q = vec![0.0; n_slots];
        q[c as usize] = 1.0;
        (q, c as f64)
    } else if zero_shortcut {
        let mut q = vec![0.0; n_slots];
        q[0] = 1.0;
        (q, 0.0)
    } else {
        let ln_rate = rate.ln();
        let mut lw = vec![f64::NEG_INFINITY; n_slots];
        if y == 0.0 {
            // Atom weight relative to the table weights: Λ^0/0! times the
            // sure zero, i.e. log 1. The e^{-Λ} and e^{yθ} factors shared
            // with the n >= 1 terms cancel in normalization (yθ = 0 here).
            lw[0] = 0.0;
        }
        for n in 1..=truncation {
            lw[n as usize] = element.log_poisson_weight(y, ln_rate, n)?;
        }
        let total = log_sum_exp(&lw);
        if total == f64::NEG_INFINITY {
            return Err(Error::Truncation {
                user: u,
                item: i,
                y,
                truncation: truncation as usize,
            });
        }
        let q: Vec<f64> = lw.iter().map(|w| (w - total).exp()).collect();
        let expected_n = q
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum::<f64>();
        (q, expected_n)
    };

    let phi = if expected_n > 0.0 {
        let mut lp = Vec::with_capacity(k);
        for j in 0..k {
            lp.push(
                digamma(state.a_s[u * k + j]) - state.b_s[u * k + j].ln()
                    + digamma(state.a_v[i * k + j])
                    - state.b_v[i * k + j].ln(),
            );
        }
        let total = log_sum_exp(&lp);
        lp.iter().map(|v| (v - total).exp()).collect()
    } else {
        vec![1.0 / k as f64; k]
    };

    Ok(LocalStep {
        rate,
        q_n,
        expected_n,
        phi,
    })
}

/// Apply the six convex-combination updates for user u and item i, then
/// advance both learning counters. All targets read the pre-step state.
pub fn global_step(
    u: usize,
    i: usize,
    local: &LocalStep,
    state: &mut VariationalState,
    hyper: &Hyperparams,
    c_u: usize,
    c_i: usize,
) {
    let k = state.k;
    let su = state.t_u[u].powf(-hyper.xi);
    let si = state.t_i[i].powf(-hyper.xi);
    let cu = c_u as f64;
    let ci = c_i as f64;
    let e_n = local.expected_n;

    let sum_s: f64 = (0..k)
        .map(|j| state.a_s[u * k + j] / state.b_s[u * k + j])
        .sum();
    let sum_v: f64 = (0..k)
        .map(|j| state.a_v[i * k + j] / state.b_v[i * k + j])
        .sum();
    let target_b_r = hyper.rho / hyper.varrho + sum_s;
    let target_b_w = hyper.omega / hyper.varpi + sum_v;
    let activity = state.a_r / state.b_r[u];
    let popularity = state.a_w / state.b_w[i];

    for j in 0..k {
        let us = u * k + j;
        let is = i * k + j;
        let target_a_s = hyper.eta + ci * e_n * local.phi[j];
        let target_b_s = activity + ci * state.a_v[is] / state.b_v[is];
        let target_a_v = hyper.zeta + cu * e_n * local.phi[j];
        let target_b_v = popularity + cu * state.a_s[us] / state.b_s[us];
        state.a_s[us] = (1.0 - su) * state.a_s[us] + su * target_a_s;
        state.b_s[us] = (1.0 - su) * state.b_s[us] + su * target_b_s;
        state.a_v[is] = (1.0 - si) * state.a_v[is] + si * target_a_v;
        state.b_v[is] = (1.0 - si) * state.b_v[is] + si * target_b_v;
    }
    state.b_r[u] = (1.0 - su) * state.b_r[u] + su * target_b_r;
    state.b_w[i] = (1.0 - si) * state.b_w[i] + si * target_b_w;
    state.t_u[u] += 1.0;
    state.t_i[i] += 1.0;
}

/// One point of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iteration: u64,
    /// The convergence score: sparsity-adjusted combined log-likelihood on
    /// the validation parts (non-missing part only when training never sees
    /// the missing entries).
    pub validation: f64,
    pub l_m: f64,
    pub l_nm: f64,
    pub seconds: f64,
}

/// Outcome of a fit: the state at the best validation score, the trace, and
/// the element actually used (it can drift when hyperparameter updates are
/// enabled).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: VariationalState,
    pub trace: Vec<TracePoint>,
    pub element: Element,
    pub truncation: u64,
    pub iterations: u64,
    pub best_validation: f64,
}

fn integral_responses_required(element: &Element, data: &SparseDataset, held: &HeldOutSet) -> Result<()> {
    if !element.is_discrete() {
        return Ok(());
    }
    for e in data.entries().iter().chain(held.nonmissing.iter()) {
        if as_count(e.value).is_none() {
            return Err(Error::Fit(format!(
                "discrete element needs integer responses; entry ({}, {}) has value {}",
                e.user, e.item, e.value
            )));
        }
    }
    Ok(())
}

/// Run the fit loop.
///
/// In full-matrix mode a draw is a uniformly random grid coordinate with the
/// response looked up (zero when absent); in non-missing mode draws are
/// uniform over the stored entries. The returned state is the one observed at
/// the best validation score.
pub fn fit(
    data: &SparseDataset,
    hyper: &Hyperparams,
    config: &FitConfig,
    validation: &HeldOutSet,
) -> Result<FitResult> {
    config.validate()?;
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    if config.mode == FitMode::Hpf && hyper.element != Element::DegenerateOne {
        return Err(Error::Config(
            "q(n) = δ_y requires the degenerate element".into(),
        ));
    }
    let mut element = hyper.element;
    integral_responses_required(&element, data, validation)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = VariationalState::init(hyper, data.c_u(), data.c_i())?;
    if config.jitter_init {
        state.apply_init_jitter(&mut rng);
    }

    let max_y = data
        .max_response()
        .max(validation.nonmissing.iter().map(|e| e.value).fold(0.0, f64::max));
    let rate_bound = state.rate_upper_bound().max(1.0);
    let truncation = choose_truncation(&element, rate_bound, max_y)?;

    let lookup = match config.source {
        TrainingSource::FullMatrix => Some(data.value_map()),
        TrainingSource::NonmissingOnly => None,
    };
    let total_missing = data.total_cells() - data.len() as u64;
    let c_u = data.c_u();
    let c_i = data.c_i();

    let start = Instant::now();
    let mut trace = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_state = state.clone();
    let mut stall = 0u32;
    let mut iterations = 0u64;
    let mut next_eval = config.eval_every;

    let draw = |rng: &mut ChaCha8Rng| -> (usize, usize, f64) {
        match &lookup {
            Some(map) => {
                let u = rng.random_range(0..c_u as u64) as usize;
                let i = rng.random_range(0..c_i as u64) as usize;
                let y = map.get(&(u as u32, i as u32)).copied().unwrap_or(0.0);
                (u, i, y)
            }
            None => {
                let at = rng.random_range(0..data.len() as u64) as usize;
                let e = &data.entries()[at];
                (e.user as usize, e.item as usize, e.value)
            }
        }
    };

    'outer: while iterations < config.max_iterations {
        if config.batch_size == 1 {
            let (u, i, y) = draw(&mut rng);
            let local = local_step(y, u, i, &state, &element, truncation, config.mode)?;
            global_step(u, i, &local, &mut state, hyper, c_u, c_i);
            iterations += 1;
        } else {
            let take = config
                .batch_size
                .min((config.max_iterations - iterations) as usize);
            let batch: Vec<(usize, usize, f64)> = (0..take).map(|_| draw(&mut rng)).collect();
            let locals: Result<Vec<LocalStep>> = batch
                .iter()
                .map(|&(u, i, y)| local_step(y, u, i, &state, &element, truncation, config.mode))
                .collect();
            apply_batched_step(&batch, &locals?, &mut state, hyper, c_u, c_i);
            iterations += take as u64;
        }

        if let Some(every) = config.element_update_every {
            if iterations.is_multiple_of(every) {
                if let Element::Edm(spec) = element {
                    let updated = update_element_hyperparams(
                        &state,
                        data.entries(),
                        spec,
                        truncation,
                    );
                    element = Element::Edm(updated);
                }
            }
        }

        if iterations >= next_eval || iterations >= config.max_iterations {
            next_eval = (iterations / config.eval_every + 1) * config.eval_every;
            let point = validation_point(
                &state,
                &element,
                validation,
                config.source,
                total_missing,
                truncation,
                iterations,
                start,
            )?;
            let score = point.validation;
            trace.push(point);
            if score > best_score {
                best_state = state.clone();
            }
            let improved = best_score == f64::NEG_INFINITY
                || score > best_score + config.tolerance * best_score.abs();
            best_score = best_score.max(score);
            if improved {
                stall = 0;
            } else {
                stall += 1;
                if stall >= config.patience {
                    break 'outer;
                }
            }
        }
    }

    Ok(FitResult {
        state: best_state,
        trace,
        element,
        truncation,
        iterations,
        best_validation: best_score,
    })
}

#[allow(clippy::too_many_arguments)]
fn validation_point(
    state: &VariationalState,
    element: &Element,
    validation: &HeldOutSet,
    source: TrainingSource,
    total_missing: u64,
    truncation: u64,
    iteration: u64,
    start: Instant,
) -> Result<TracePoint> {
    let l_m = eval::loglik_missing(state, &validation.missing);
    let l_nm = eval::loglik_nonmissing(state, element, &validation.nonmissing, false, truncation)?;
    let score = match source {
        TrainingSource::FullMatrix => {
            eval::combined_loglik(l_m, l_nm, total_missing, validation.missing.len())?
        }
        TrainingSource::NonmissingOnly => l_nm,
    };
    if !score.is_finite() {
        // Locate an offending entry for the diagnostic dump.
        for e in &validation.nonmissing {
            let rate = state.expected_rate_unchecked(e.user as usize, e.item as usize);
            if !rate.is_finite() {
                return Err(Error::NonFinite {
                    user: e.user as usize,
                    item: e.item as usize,
                    y: e.value,
                    detail: format!("rate {rate}"),
                });
            }
        }
        return Err(Error::NonFinite {
            user: 0,
            item: 0,
            y: f64::NAN,
            detail: format!("validation score {score}"),
        });
    }
    Ok(TracePoint {
        iteration,
        validation: score,
        l_m,
        l_nm,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Batched variant: average the user-side and item-side targets of the local
/// steps touching each entity, then take one convex step per touched entity.
fn apply_batched_step(
    batch: &[(usize, usize, f64)],
    locals: &[LocalStep],
    state: &mut VariationalState,
    hyper: &Hyperparams,
    c_u: usize,
    c_i: usize,
) {
    let k = state.k;
    let cu = c_u as f64;
    let ci = c_i as f64;
    // entity -> (count, summed a targets, summed b targets, summed scalar-b target)
    let mut users: HashMap<usize, (f64, Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut items: HashMap<usize, (f64, Vec<f64>, Vec<f64>)> = HashMap::new();
    for (&(u, i, _y), local) in batch.iter().zip(locals) {
        let activity = state.a_r / state.b_r[u];
        let popularity = state.a_w / state.b_w[i];
        let ue = users
            .entry(u)
            .or_insert_with(|| (0.0, vec![0.0; k], vec![0.0; k]));
        ue.0 += 1.0;
        for j in 0..k {
            ue.1[j] += hyper.eta + ci * local.expected_n * local.phi[j];
            ue.2[j] += activity + ci * state.a_v[i * k + j] / state.b_v[i * k + j];
        }
        let ie = items
            .entry(i)
            .or_insert_with(|| (0.0, vec![0.0; k], vec![0.0; k]));
        ie.0 += 1.0;
        for j in 0..k {
            ie.1[j] += hyper.zeta + cu * local.expected_n * local.phi[j];
            ie.2[j] += popularity + cu * state.a_s[u * k + j] / state.b_s[u * k + j];
        }
    }
    let mut touched_users: Vec<usize> = users.keys().cloned().collect();
    touched_users.sort_unstable();
    for u in touched_users {
        let (count, ta, tb) = &users[&u];
        let su = state.t_u[u].powf(-hyper.xi);
        let sum_s: f64 = (0..k)
            .map(|j| state.a_s[u * k + j] / state.b_s[u * k + j])
            .sum();
        let target_b_r = hyper.rho / hyper.varrho + sum_s;
        for j in 0..k {
            let us = u * k + j;
            state.a_s[us] = (1.0 - su) * state.a_s[us] + su * ta[j] / count;
            state.b_s[us] = (1.0 - su) * state.b_s[us] + su * tb[j] / count;
        }
        state.b_r[u] = (1.0 - su) * state.b_r[u] + su * target_b_r;
        state.t_u[u] += 1.0;
    }
    let mut touched_items: Vec<usize> = items.keys().cloned().collect();
    touched_items.sort_unstable();
    for i in touched_items {
        let (count, ta, tb) = &items[&i];
        let si = state.t_i[i].powf(-hyper.xi);
        let sum_v: f64 = (0..k)
            .map(|j| state.a_v[i * k + j] / state.b_v[i * k + j])
            .sum();
        let target_b_w = hyper.omega / hyper.varpi + sum_v;
        for j in 0..k {
            let is = i * k + j;
            state.a_v[is] = (1.0 - si) * state.a_v[is] + si * ta[j] / count;
            state.b_v[is] = (1.0 - si) * state.b_v[is] + si * tb[j] / count;
        }
        state.b_w[i] = (1.0 - si) * state.b_w[i] + si * target_b_w;
        state.t_i[i] += 1.0;
    }
}

/// Refit the element natural parameter θ (κ held fixed) on a sample of
/// non-missing entries, maximizing Σ [yθ - E[n] κ Ψ(θ)] by one-dimensional
/// Newton with domain clamping. On failure the previous θ is kept and a
/// warning logged.
pub fn update_element_hyperparams(
    state: &VariationalState,
    sample: &[crate::data::Entry],
    current: ElementSpec,
    truncation: u64,
) -> ElementSpec {
    let element = Element::Edm(current);
    let mut sum_y = 0.0;
    let mut sum_en = 0.0;
    for e in sample {
        let local = match local_step(
            e.value,
            e.user as usize,
            e.item as usize,
            state,
            &element,
            truncation,
            FitMode::Hcpf,
        ) {
            Ok(l) => l,
            Err(err) => {
                log::warn!("element update skipped an entry: {err}");
                continue;
            }
        };
        sum_y += e.value;
        sum_en += local.expected_n;
    }
    if sum_en.is_nan() || sum_en <= 0.0 {
        log::warn!("element update skipped: no expected counts in the sample");
        return current;
    }
    let family = current.family();
    let kappa = current.kappa();
    let mut theta = current.theta();
    let mut converged = false;
    for _ in 0..100 {
        let (Ok(d1), Ok(d2)) = (
            family.log_partition_deriv(theta),
            family.log_partition_deriv2(theta),
        ) else {
            break;
        };
        let grad = sum_y - kappa * sum_en * d1;
        let hess = kappa * sum_en * d2;
        if hess.is_nan() || hess <= 0.0 || !grad.is_finite() {
            break;
        }
        let mut next = theta + grad / hess;
        // keep Newton inside the domain by halving toward the boundary
        if matches!(
            family,
            crate::edm::EdmFamily::Gamma
                | crate::edm::EdmFamily::InverseGaussian
                | crate::edm::EdmFamily::NegativeBinomial
        ) && next >= 0.0
        {
            next = theta / 2.0;
        }
        if !next.is_finite() {
            break;
        }
        let delta = (next - theta).abs();
        theta = next;
        if delta <= 1e-12 * theta.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("element θ update did not converge; keeping θ = {}", current.theta());
        return current;
    }
    match current.with_theta(theta) {
        Ok(updated) => updated,
        Err(err) => {
            log::warn!("element θ update produced an invalid value: {err}");
            current
        }
    }
}
