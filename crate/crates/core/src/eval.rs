//! Held-out evaluation: the missing, non-missing, sparsity-adjusted combined,
//! and conditional non-missing log-likelihoods, plus the missingness AUC.
//!
//! Everything here is read-only over the variational state. Sums run over
//! fixed-size chunks combined in index order, so results are bit-identical
//! for any worker count.

use crate::compound::{choose_truncation, log_marginal_density_at, log_truncated_density_at};
use crate::data::{Entry, SplitSet};
use crate::edm::Element;
use crate::error::{Error, Result};
use crate::model::VariationalState;
use rayon::prelude::*;

const SUM_CHUNK: usize = 4096;

/// Deterministic parallel sum: chunk sub-sums are sequential and combined in
/// chunk order, independent of scheduling.
fn chunked_sum<T: Sync, F: Fn(&T) -> f64 + Sync>(items: &[T], f: F) -> f64 {
    if items.len() <= SUM_CHUNK {
        return items.iter().map(&f).sum();
    }
    items
        .par_chunks(SUM_CHUNK)
        .map(|chunk| chunk.iter().map(&f).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

fn chunked_try_sum<T: Sync, F: Fn(&T) -> Result<f64> + Sync>(items: &[T], f: F) -> Result<f64> {
    if items.len() <= SUM_CHUNK {
        let mut total = 0.0;
        for item in items {
            total += f(item)?;
        }
        return Ok(total);
    }
    let partials: Result<Vec<f64>> = items
        .par_chunks(SUM_CHUNK)
        .map(|chunk| {
            let mut sub = 0.0;
            for item in chunk {
                sub += f(item)?;
            }
            Ok(sub)
        })
        .collect();
    Ok(partials?.iter().sum())
}

/// Log-likelihood of held-out missing coordinates: Σ log Po(0 | Λ_ui) = -ΣΛ.
pub fn loglik_missing(state: &VariationalState, coords: &[(u32, u32)]) -> f64 {
    chunked_sum(coords, |&(u, i)| {
        -state.expected_rate_unchecked(u as usize, i as usize)
    })
}

/// Log-likelihood of held-out non-missing entries under the count-truncated
/// compound marginal (unconditional) or the zero-truncated density
/// (conditional on being non-missing).
pub fn loglik_nonmissing(
    state: &VariationalState,
    element: &Element,
    entries: &[Entry],
    conditional: bool,
    truncation: u64,
) -> Result<f64> {
    chunked_try_sum(entries, |e| {
        let rate = state.expected_rate_unchecked(e.user as usize, e.item as usize);
        let ld = if conditional {
            log_truncated_density_at(element, rate, truncation, e.value)
        } else {
            log_marginal_density_at(element, rate, truncation, e.value)
        };
        if ld == f64::NEG_INFINITY {
            return Err(Error::Truncation {
                user: e.user as usize,
                item: e.item as usize,
                y: e.value,
                truncation: truncation as usize,
            });
        }
        if !ld.is_finite() {
            return Err(Error::NonFinite {
                user: e.user as usize,
                item: e.item as usize,
                y: e.value,
                detail: format!("log-density {ld} at rate {rate}"),
            });
        }
        Ok(ld)
    })
}

/// Sparsity-adjusted combined log-likelihood:
/// 0.2 · (#total missing) / |held-out missing| · L_M + L_NM.
pub fn combined_loglik(
    l_m: f64,
    l_nm: f64,
    total_missing: u64,
    held_out_missing: usize,
) -> Result<f64> {
    if held_out_missing == 0 {
        return Err(Error::InvalidParameter(
            "combined log-likelihood needs at least one held-out missing coordinate".into(),
        ));
    }
    Ok(adjustment_factor(total_missing, held_out_missing) * l_m + l_nm)
}

/// The scaling 0.2 · (#total missing) / |held-out missing| that restores the
/// true sparsity ratio to the missing-part sum.
pub fn adjustment_factor(total_missing: u64, held_out_missing: usize) -> f64 {
    0.2 * total_missing as f64 / held_out_missing as f64
}

/// Probability that a uniformly random non-missing score exceeds a random
/// missing score, ties counted half (the rank-sum statistic).
///
/// `scores` pairs a label (true = non-missing) with the model score.
pub fn auc(scores: &[(bool, f64)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|s| s.0).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut sorted: Vec<&(bool, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].1 == sorted[i].1 {
            j += 1;
        }
        // ranks are 1-based; tied scores share the average rank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for s in &sorted[i..j] {
            if s.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos as f64) * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Full held-out evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Missing-part log-likelihood Σ log Po(0 | Λ).
    pub l_m: f64,
    /// Non-missing log-likelihood under the compound marginal.
    pub l_nm: f64,
    /// Sparsity-adjusted combined log-likelihood.
    pub l: f64,
    /// Non-missing log-likelihood conditioned on non-missingness.
    pub l_cnm: f64,
    /// Missingness AUC from the scores 1 - e^{-Λ}.
    pub auc: f64,
    pub n_test_missing: usize,
    pub n_test_nonmissing: usize,
    /// The factor applied to the missing part inside `l`.
    pub adjustment: f64,
    /// Truncation bound used for the non-missing densities.
    pub truncation: u64,
}

impl EvalReport {
    /// Per-entry non-missing normalizations (nats per non-missing entry).
    pub fn l_nm_per_entry(&self) -> f64 {
        self.l_nm / self.n_test_nonmissing as f64
    }

    pub fn l_cnm_per_entry(&self) -> f64 {
        self.l_cnm / self.n_test_nonmissing as f64
    }

    /// Combined log-likelihood per thousand modeled test cells, where the
    /// missing part counts at its adjusted weight.
    pub fn l_per_thousand(&self) -> f64 {
        let cells = self.adjustment * self.n_test_missing as f64 + self.n_test_nonmissing as f64;
        1000.0 * self.l / cells
    }

    /// One `name<TAB>value` line per metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, value) in [
            ("l_m", self.l_m),
            ("l_nm", self.l_nm),
            ("l", self.l),
            ("l_cnm", self.l_cnm),
            ("auc", self.auc),
            ("adjustment", self.adjustment),
            ("l_per_thousand", self.l_per_thousand()),
            ("l_nm_per_entry", self.l_nm_per_entry()),
            ("l_cnm_per_entry", self.l_cnm_per_entry()),
            ("n_test_missing", self.n_test_missing as f64),
            ("n_test_nonmissing", self.n_test_nonmissing as f64),
            ("truncation", self.truncation as f64),
        ] {
            out.push_str(&format!("{name}\t{value}\n"));
        }
        out
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "held-out evaluation over {} non-missing / {} missing entries (truncation {})",
            self.n_test_nonmissing, self.n_test_missing, self.truncation
        )?;
        writeln!(f, "  missing          L_M   = {:.6}", self.l_m)?;
        writeln!(f, "  non-missing      L_NM  = {:.6}", self.l_nm)?;
        writeln!(
            f,
            "  combined         L     = {:.6}  (adjustment {:.6}, per-thousand {:.6})",
            self.l,
            self.adjustment,
            self.l_per_thousand()
        )?;
        writeln!(
            f,
            "  conditional      L_CNM = {:.6}  (per-entry {:.6})",
            self.l_cnm,
            self.l_cnm_per_entry()
        )?;
        write!(f, "  missingness AUC  = {:.6}", self.auc)
    }
}

/// Evaluate a fitted state on the test parts of a split.
///
/// Scores for the AUC are the non-missing probabilities 1 - e^{-Λ}; since
/// that map is strictly increasing, ranking by Λ must give the same AUC, and
/// this is asserted.
pub fn evaluate(
    state: &VariationalState,
    element: &Element,
    splits: &SplitSet,
) -> Result<EvalReport> {
    let test = &splits.test;
    if test.nonmissing.is_empty() || test.missing.is_empty() {
        return Err(Error::Config(
            "evaluation needs non-empty test parts".into(),
        ));
    }
    let l_m = loglik_missing(state, &test.missing);
    let max_rate = test
        .nonmissing
        .iter()
        .map(|e| state.expected_rate_unchecked(e.user as usize, e.item as usize))
        .fold(f64::MIN_POSITIVE, f64::max);
    let max_y = test
        .nonmissing
        .iter()
        .map(|e| e.value)
        .fold(0.0_f64, f64::max);
    let truncation = choose_truncation(element, max_rate, max_y)?;
    let l_nm = loglik_nonmissing(state, element, &test.nonmissing, false, truncation)?;
    let l_cnm = loglik_nonmissing(state, element, &test.nonmissing, true, truncation)?;
    let total_missing = splits.total_missing();
    let l = combined_loglik(l_m, l_nm, total_missing, test.missing.len())?;

    let mut scores = Vec::with_capacity(test.missing.len() + test.nonmissing.len());
    let mut rate_scores = Vec::with_capacity(scores.capacity());
    for &(u, i) in &test.missing {
        let rate = state.expected_rate_unchecked(u as usize, i as usize);
        scores.push((false, -(-rate).exp_m1()));
        rate_scores.push((false, rate));
    }
    for e in &test.nonmissing {
        let rate = state.expected_rate_unchecked(e.user as usize, e.item as usize);
        scores.push((true, -(-rate).exp_m1()));
        rate_scores.push((true, rate));
    }
    let auc_value = auc(&scores)?;
    let auc_by_rate = auc(&rate_scores)?;
    assert!(
        (auc_value - auc_by_rate).abs() <= 1e-12,
        "AUC must be invariant under the monotone score transform: {auc_value} vs {auc_by_rate}"
    );

    Ok(EvalReport {
        l_m,
        l_nm,
        l,
        l_cnm,
        auc: auc_value,
        n_test_missing: test.missing.len(),
        n_test_nonmissing: test.nonmissing.len(),
        adjustment: adjustment_factor(total_missing, test.missing.len()),
        truncation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HeldOutSet;
    use crate::edm::NativeParams;
    use crate::model::{default_hyperparams, VariationalState};
    use crate::svi::TrainingSource;

    /// A K=1 state whose expected rate is `rate` everywhere.
    fn uniform_rate_state(c_u: usize, c_i: usize, rate: f64) -> VariationalState {
        let hyper = default_hyperparams(
            0.95,
            Element::DegenerateOne,
            1,
            TrainingSource::FullMatrix,
        )
        .unwrap();
        let mut state = VariationalState::init(&hyper, c_u, c_i).unwrap();
        // a_s/b_s = rate, a_v/b_v = 1
        for v in state.a_s.iter_mut() {
            *v = rate;
        }
        for v in state.b_s.iter_mut() {
            *v = 1.0;
        }
        for v in state.a_v.iter_mut() {
            *v = 1.0;
        }
        for v in state.b_v.iter_mut() {
            *v = 1.0;
        }
        state
    }

    #[test]
    fn missing_loglik_is_negative_rate_sum() {
        let state = uniform_rate_state(5, 5, 1.0);
        let coords: Vec<(u32, u32)> = (0..5).flat_map(|u| (0..2).map(move |i| (u, i))).collect();
        assert!((loglik_missing(&state, &coords) - -10.0).abs() < 1e-12);
        assert_eq!(loglik_missing(&state, &[]), 0.0);
    }

    #[test]
    fn missing_loglik_matches_direct_recomputation() {
        let hyper = default_hyperparams(
            0.9,
            Element::DegenerateOne,
            3,
            TrainingSource::FullMatrix,
        )
        .unwrap();
        let mut state = VariationalState::init(&hyper, 8, 9).unwrap();
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        state.apply_init_jitter(&mut rng);
        let coords: Vec<(u32, u32)> =
            (0..8).flat_map(|u| (0..9).map(move |i| (u, i))).collect();
        let direct: f64 = coords
            .iter()
            .map(|&(u, i)| -state.expected_rate(u as usize, i as usize).unwrap())
            .sum();
        assert!((loglik_missing(&state, &coords) - direct).abs() < 1e-12);
    }

    #[test]
    fn nonmissing_single_entry_poisson_values() {
        // δ₁ element, y = 1, Λ = 0.1: marginal is Po(1 | 0.1), conditional
        // divides by 1 - e^{-0.1}.
        let state = uniform_rate_state(1, 1, 0.1);
        let entries = [Entry {
            user: 0,
            item: 0,
            value: 1.0,
        }];
        let l = loglik_nonmissing(&state, &Element::DegenerateOne, &entries, false, 20).unwrap();
        assert!((l - -2.4025850929940455).abs() < 1e-12);
        let l = loglik_nonmissing(&state, &Element::DegenerateOne, &entries, true, 20).unwrap();
        assert!((l - -0.050416631949954875).abs() < 1e-12);
    }

    #[test]
    fn conditional_at_least_unconditional() {
        let elem = Element::Edm(
            NativeParams::Gamma {
                shape: 5.0,
                rate: 0.5,
            }
            .to_edm()
            .unwrap(),
        );
        let state = uniform_rate_state(4, 4, 0.7);
        for y in [0.5, 3.0, 11.0] {
            let entries = [Entry {
                user: 1,
                item: 2,
                value: y,
            }];
            let unc = loglik_nonmissing(&state, &elem, &entries, false, 30).unwrap();
            let cond = loglik_nonmissing(&state, &elem, &entries, true, 30).unwrap();
            assert!(cond >= unc, "y {y}: {cond} < {unc}");
        }
    }

    #[test]
    fn infeasible_entry_names_coordinates() {
        let state = uniform_rate_state(3, 3, 0.5);
        let entries = [Entry {
            user: 2,
            item: 1,
            value: 50.0,
        }];
        let err =
            loglik_nonmissing(&state, &Element::DegenerateOne, &entries, false, 10).unwrap_err();
        match err {
            Error::Truncation { user, item, y, .. } => {
                assert_eq!((user, item), (2, 1));
                assert_eq!(y, 50.0);
            }
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn combined_loglik_examples() {
        // factor cancels when held-out missing is exactly a fifth of total
        assert!((combined_loglik(-5.0, -2.0, 50, 10).unwrap() - -7.0).abs() < 1e-15);
        // hand case: 20·(-5) + (-2)
        assert!((combined_loglik(-5.0, -2.0, 1000, 10).unwrap() - -102.0).abs() < 1e-12);
        // linear in L_M
        let a = combined_loglik(-5.0, 0.0, 1000, 10).unwrap();
        let b = combined_loglik(-10.0, 0.0, 1000, 10).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(combined_loglik(-5.0, -2.0, 1000, 0).is_err());
    }

    #[test]
    fn auc_examples() {
        let sep = [(false, 0.1), (false, 0.2), (true, 0.3), (true, 0.9)];
        assert_eq!(auc(&sep).unwrap(), 1.0);
        let tie = [(false, 0.2), (true, 0.2)];
        assert_eq!(auc(&tie).unwrap(), 0.5);
        assert!(auc(&[(true, 0.5)]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let scores = [
            (true, 0.9),
            (false, 0.3),
            (true, 0.3),
            (false, 0.1),
            (true, 0.05),
        ];
        // O(n²) pairwise: wins + half-ties over all (pos, neg) pairs.
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for &(lp, sp) in &scores {
            if !lp {
                continue;
            }
            for &(ln_, sn) in &scores {
                if ln_ {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        let want = wins / pairs;
        assert!((auc(&scores).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn evaluate_report_is_internally_consistent() {
        let state = uniform_rate_state(20, 20, 0.4);
        let entries: Vec<Entry> = (0..10)
            .map(|j| Entry {
                user: j,
                item: (j + 1) % 20,
                value: 1.0 + (j % 3) as f64,
            })
            .collect();
        let train = crate::data::SparseDataset::from_dense_indices(20, 20, entries.clone())
            .unwrap();
        let splits = SplitSet {
            train,
            validation: HeldOutSet {
                nonmissing: vec![],
                missing: vec![],
            },
            test: HeldOutSet {
                nonmissing: entries,
                missing: (0..10u32).map(|j| (j, (j + 5) % 20)).collect(),
            },
            original_entry_count: 20,
        };
        let report = evaluate(&state, &Element::DegenerateOne, &splits).unwrap();
        let want = report.adjustment * report.l_m + report.l_nm;
        assert!((report.l - want).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&report.auc));
        assert!(report.l_cnm >= report.l_nm);
        let tsv = report.to_tsv();
        assert!(tsv.contains("auc\t"));
        assert_eq!(tsv.lines().count(), 12);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn auc_invariant_under_monotone_transform(
            grid in prop::collection::vec((any::<bool>(), 0u8..=200), 4..60),
        ) {
            // Rates on a 0.05 grid: ties are exact in both score spaces and
            // 1 - e^{-rate} stays clear of f64 saturation.
            let raw: Vec<(bool, f64)> = grid
                .iter()
                .map(|&(l, s)| (l, 0.05 * s as f64 + 0.01))
                .collect();
            let n_pos = raw.iter().filter(|s| s.0).count();
            prop_assume!(n_pos > 0 && n_pos < raw.len());
            let a1 = auc(&raw).unwrap();
            let transformed: Vec<(bool, f64)> = raw
                .iter()
                .map(|&(l, s)| (l, -(-s).exp_m1()))
                .collect();
            let a2 = auc(&transformed).unwrap();
            prop_assert!((a1 - a2).abs() < 1e-12);
        }
    }
}
