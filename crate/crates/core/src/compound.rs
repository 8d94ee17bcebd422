//! Compound Poisson and zero-truncated compound Poisson distributions.
//!
//! A compound response is the sum of N element draws with N ~ Poisson(Λ);
//! N = 0 gives a point mass at zero. Conditional on N = n the sum is the same
//! element family with dispersion nκ, so the marginal and truncated densities
//! are finite sums over n up to a truncation bound chosen from the Poisson
//! tail and the feasibility of observed responses.

use crate::edm::Element;
use crate::error::{Error, Result};
use crate::special::{log_sum_exp, poisson_ln_pmf, ztp_ln_pmf};
use rand::Rng;
use rand_distr::Distribution;

/// Poisson tail mass allowed beyond the truncation bound.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;

/// Hard ceiling on the truncation bound; configurable safety cap.
pub const DEFAULT_TRUNCATION_CAP: u64 = 128;

/// Probability that a compound response is exactly zero: e^{-Λ}.
#[inline]
pub fn prob_zero(rate: f64) -> f64 {
    (-rate).exp()
}

/// P(N > n) for N ~ Poisson(rate), by direct pmf summation.
pub fn poisson_tail_above(rate: f64, n: u64) -> f64 {
    let mut pmf = (-rate).exp();
    let mut cdf = pmf;
    for k in 1..=n {
        pmf *= rate / k as f64;
        cdf += pmf;
    }
    (1.0 - cdf).max(0.0)
}

/// Smallest truncation bound meeting the Poisson tail tolerance at the
/// largest rate in play, and large enough that every response up to
/// `max_response` keeps at least one admissible count.
pub fn choose_truncation(element: &Element, max_rate: f64, max_response: f64) -> Result<u64> {
    choose_truncation_capped(element, max_rate, max_response, DEFAULT_TRUNCATION_CAP)
}

pub fn choose_truncation_capped(
    element: &Element,
    max_rate: f64,
    max_response: f64,
    cap: u64,
) -> Result<u64> {
    if max_rate.is_nan() || max_rate <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "max_rate must be positive, got {max_rate}"
        )));
    }
    let feasible = element.feasibility_truncation(max_response);
    if feasible > cap {
        return Err(Error::Config(format!(
            "response {max_response} needs a truncation bound of {feasible}, above the cap {cap}"
        )));
    }
    let mut n = feasible.max(1);
    while poisson_tail_above(max_rate, n) >= DEFAULT_TAIL_TOLERANCE {
        n += 1;
        if n > cap {
            return Err(Error::Config(format!(
                "Poisson tail at rate {max_rate} stays above {DEFAULT_TAIL_TOLERANCE} up to the cap {cap}"
            )));
        }
    }
    Ok(n)
}

/// Log marginal density of the compound response at rate Λ, truncated at
/// `truncation`, without constructing a validated spec. Exposed for the
/// evaluation path, which sweeps per-entry rates under one shared bound.
///
/// At y = 0 the value is the point-mass probability: exactly -Λ when a single
/// element draw cannot be zero, and the atom mixed with the n >= 1 terms for
/// the families whose support contains zero.
pub fn log_marginal_density_at(element: &Element, rate: f64, truncation: u64, y: f64) -> f64 {
    let ln_rate = rate.ln();
    if y == 0.0 && !element.has_zero_mass() {
        return -rate;
    }
    let mut terms = Vec::with_capacity(truncation as usize + 1);
    if y == 0.0 {
        terms.push(-rate);
    }
    for n in 1..=truncation {
        let ld = element.log_density_n(y, n);
        if ld > f64::NEG_INFINITY {
            terms.push(ld + poisson_ln_pmf(n, rate, ln_rate));
        }
    }
    log_sum_exp(&terms)
}

/// Log density of the zero-truncated compound response: the n-sum with the
/// Poisson weights replaced by zero-truncated Poisson weights.
pub fn log_truncated_density_at(element: &Element, rate: f64, truncation: u64, y: f64) -> f64 {
    let ln_rate = rate.ln();
    let mut terms = Vec::with_capacity(truncation as usize);
    for n in 1..=truncation {
        let ld = element.log_density_n(y, n);
        if ld > f64::NEG_INFINITY {
            terms.push(ld + ztp_ln_pmf(n, rate, ln_rate));
        }
    }
    log_sum_exp(&terms)
}

/// Mean of the zero-truncated compound response: Λ/(1 - e^{-Λ}) · E[X].
pub fn truncated_mean_at(element: &Element, rate: f64) -> f64 {
    rate / -(-rate).exp_m1() * element.mean()
}

/// A compound Poisson response distribution: element, Poisson rate Λ, and the
/// truncation bound used in every marginal sum. Construction checks that the
/// Poisson tail mass beyond the bound is below the tail tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundSpec {
    element: Element,
    rate: f64,
    truncation: u64,
}

impl CompoundSpec {
    pub fn new(element: Element, rate: f64, truncation: u64) -> Result<Self> {
        Self::with_tail_tolerance(element, rate, truncation, DEFAULT_TAIL_TOLERANCE)
    }

    pub fn with_tail_tolerance(
        element: Element,
        rate: f64,
        truncation: u64,
        tail_tolerance: f64,
    ) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "compound rate must be a positive real, got {rate}"
            )));
        }
        if truncation < 1 {
            return Err(Error::InvalidParameter(
                "truncation bound must be at least 1".into(),
            ));
        }
        let tail = poisson_tail_above(rate, truncation);
        if tail >= tail_tolerance {
            return Err(Error::InvalidParameter(format!(
                "Poisson tail beyond {truncation} is {tail:.3e}, above the tolerance {tail_tolerance:.3e}"
            )));
        }
        Ok(CompoundSpec {
            element,
            rate,
            truncation,
        })
    }

    pub fn element(&self) -> &Element {
        &self.element
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn truncation(&self) -> u64 {
        self.truncation
    }

    pub fn prob_zero(&self) -> f64 {
        prob_zero(self.rate)
    }

    pub fn log_marginal_density(&self, y: f64) -> f64 {
        log_marginal_density_at(&self.element, self.rate, self.truncation, y)
    }

    pub fn log_truncated_density(&self, y: f64) -> f64 {
        log_truncated_density_at(&self.element, self.rate, self.truncation, y)
    }

    pub fn truncated_mean(&self) -> f64 {
        truncated_mean_at(&self.element, self.rate)
    }

    /// Draw one compound response: n from Poisson(Λ), then the n-fold element.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n: f64 = rand_distr::Poisson::new(self.rate)
            .expect("validated rate")
            .sample(rng);
        if n < 1.0 {
            0.0
        } else {
            self.element.sample_n(n as u64, rng)
        }
    }
}

/// Rows of the truncated-density grid over (rate, response) pairs, for the
/// diagnostic dump consumed by external plotting.
pub fn density_grid(
    element: &Element,
    rates: &[f64],
    responses: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let max_rate = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let max_y = responses.iter().cloned().fold(0.0_f64, f64::max);
    let truncation = choose_truncation(element, max_rate, max_y)?;
    let mut rows = Vec::with_capacity(rates.len() * responses.len());
    for &rate in rates {
        for &y in responses {
            rows.push((rate, y, log_truncated_density_at(element, rate, truncation, y)));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::{EdmFamily, ElementSpec, NativeParams};
    use crate::special::{ln_1m_exp, ln_factorial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, Discrete};

    fn gamma_element() -> Element {
        Element::Edm(
            NativeParams::Gamma {
                shape: 5.0,
                rate: 0.5,
            }
            .to_edm()
            .unwrap(),
        )
    }

    /// Poisson pmf by repeated multiplication; independent of the log-space
    /// path used in the implementation.
    fn poisson_pmf_direct(n: u64, rate: f64) -> f64 {
        let mut p = (-rate).exp();
        for k in 1..=n {
            p *= rate / k as f64;
        }
        p
    }

    #[test]
    fn prob_zero_examples() {
        let rate = -(0.988224_f64.ln());
        assert!((prob_zero(rate) - 0.988224).abs() < 1e-12);
        assert!((prob_zero(1e-15) - 1.0).abs() < 1e-12);
        assert!((prob_zero(1.0) - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn degenerate_element_reproduces_poisson() {
        for rate in [0.5, 2.0, 7.0] {
            let spec = CompoundSpec::new(Element::DegenerateOne, rate, 60).unwrap();
            for n in 0..=20u64 {
                let got = spec.log_marginal_density(n as f64).exp();
                let want = poisson_pmf_direct(n, rate);
                assert!(
                    (got - want).abs() < 1e-12,
                    "rate {rate}, n {n}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn atom_at_zero_for_zero_free_elements() {
        let spec = CompoundSpec::new(gamma_element(), 2.0, 40).unwrap();
        assert_eq!(spec.log_marginal_density(0.0), -2.0);
    }

    #[test]
    fn marginal_matches_brute_force_sum() {
        // Independent oracle: statrs Gamma(n·a, b) pdf times direct Poisson
        // weights, summed in linear space.
        let rate = 0.5;
        let spec = CompoundSpec::new(gamma_element(), rate, 30).unwrap();
        for y in [0.5, 3.0, 10.0, 42.0] {
            let mut total = 0.0;
            for n in 1..=30u64 {
                let d = statrs::distribution::Gamma::new(5.0 * n as f64, 0.5).unwrap();
                total += d.pdf(y) * poisson_pmf_direct(n, rate);
            }
            let got = spec.log_marginal_density(y);
            assert!(
                (got - total.ln()).abs() < 1e-10,
                "y {y}: {got} vs {}",
                total.ln()
            );
        }
    }

    #[test]
    fn marginal_mixes_atom_for_zero_in_support() {
        // Poisson element: mass at 0 is the atom plus the n >= 1 terms.
        let elem = Element::Edm(NativeParams::Poisson { rate: 2.0 }.to_edm().unwrap());
        let rate = 1.5;
        let spec = CompoundSpec::new(elem, rate, 40).unwrap();
        let neg_rate: f64 = -rate;
        let mut want = neg_rate.exp();
        for n in 1..=40u64 {
            let d = statrs::distribution::Poisson::new(2.0 * n as f64).unwrap();
            want += d.pmf(0) * poisson_pmf_direct(n, rate);
        }
        let got = spec.log_marginal_density(0.0).exp();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn conditioning_identity() {
        let spec = CompoundSpec::new(gamma_element(), 2.0, 40).unwrap();
        for y in [0.25, 1.0, 8.0, 30.0] {
            let lhs = spec.log_truncated_density(y);
            let rhs = spec.log_marginal_density(y) - ln_1m_exp(-2.0);
            assert!((lhs - rhs).abs() < 1e-12, "y {y}");
        }
    }

    #[test]
    fn truncated_density_decouples_at_tiny_rate() {
        let elem = gamma_element();
        let spec = CompoundSpec::new(elem, 1e-6, 20).unwrap();
        let inner = match elem {
            Element::Edm(s) => s,
            _ => unreachable!(),
        };
        for j in 0..50 {
            let y = 0.5 + j as f64;
            let gap = (spec.log_truncated_density(y).exp() - inner.log_density(y).exp()).abs();
            assert!(gap < 1e-4, "y {y}: gap {gap}");
        }
    }

    #[test]
    fn ztp_element_marginal_matches_convolution_oracle() {
        // n-fold ZTP pmf built by explicit convolution of the single-term
        // pmf, then mixed with direct Poisson weights.
        let lambda: f64 = 7.0;
        let elem = Element::Edm(
            NativeParams::ZeroTruncatedPoisson { rate: lambda }
                .to_edm()
                .unwrap(),
        );
        let rate = 7.0;
        let spec = CompoundSpec::new(elem, rate, 40).unwrap();
        let y = 7u64;
        let single: Vec<f64> = (0..=y)
            .map(|x| {
                if x == 0 {
                    0.0
                } else {
                    (x as f64 * lambda.ln() - ln_factorial(x) - lambda.exp_m1().ln()).exp()
                }
            })
            .collect();
        let mut fold = single.clone(); // n = 1
        let mut want = fold[y as usize] * poisson_pmf_direct(1, rate);
        for n in 2..=y {
            let mut next = vec![0.0; y as usize + 1];
            for target in 0..=y as usize {
                let mut acc = 0.0;
                for a in 0..=target {
                    acc += fold[a] * single[target - a];
                }
                next[target] = acc;
            }
            fold = next;
            want += fold[y as usize] * poisson_pmf_direct(n, rate);
        }
        let got = spec.log_marginal_density(y as f64).exp();
        assert!(
            (got - want).abs() < 1e-12 * want.max(1e-300),
            "{got} vs {want}"
        );
    }

    #[test]
    fn truncated_mean_examples() {
        let elem = gamma_element();
        assert!(
            (truncated_mean_at(&elem, 1e-8) - elem.mean()).abs() / elem.mean() < 1e-6
        );
        let want = 2.0 / (1.0 - (-2.0_f64).exp()) * 10.0;
        assert!((truncated_mean_at(&elem, 2.0) - want).abs() < 1e-12);
        // Λ = ln 2, degenerate element: ln 2 / (1 - 1/2) = 2 ln 2.
        let want = 2.0 * std::f64::consts::LN_2;
        assert!(
            (truncated_mean_at(&Element::DegenerateOne, std::f64::consts::LN_2) - want).abs()
                < 1e-12
        );
    }

    #[test]
    fn sample_zero_fraction_and_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = CompoundSpec::new(gamma_element(), 0.05, 12).unwrap();
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| spec.sample(&mut rng) == 0.0).count();
        let p = (-0.05_f64).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(((zeros as f64 / n as f64) - p).abs() < 3.0 * se);

        let spec = CompoundSpec::new(gamma_element(), 2.0, 40).unwrap();
        assert!((0..10_000).all(|_| spec.sample(&mut rng) >= 0.0));
    }

    #[test]
    fn sample_degenerate_chi_squared_against_poisson() {
        // Histogram of δ₁-element draws vs Poisson(2), χ² test at the 0.001
        // level: 10 bins (0..=8 and the right tail), df = 9.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = CompoundSpec::new(Element::DegenerateOne, 2.0, 60).unwrap();
        let n = 1_000_000usize;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            let v = spec.sample(&mut rng) as usize;
            counts[v.min(9)] += 1;
        }
        let mut chi2 = 0.0;
        let mut tail = 1.0;
        for (v, &c) in counts.iter().enumerate().take(9) {
            let p = poisson_pmf_direct(v as u64, 2.0);
            tail -= p;
            let expect = p * n as f64;
            chi2 += (c as f64 - expect).powi(2) / expect;
        }
        let expect_tail = tail * n as f64;
        chi2 += (counts[9] as f64 - expect_tail).powi(2) / expect_tail;
        assert!(chi2 < 27.877164871256568, "chi2 = {chi2}"); // χ²(0.999, df=9)
    }

    #[test]
    fn marginal_normalizes_discrete() {
        for rate in [0.1, 2.0] {
            for elem in [
                Element::DegenerateOne,
                Element::Edm(NativeParams::Poisson { rate: 2.0 }.to_edm().unwrap()),
                Element::Edm(NativeParams::Binomial { trials: 6, p: 0.4 }.to_edm().unwrap()),
                Element::Edm(
                    NativeParams::NegativeBinomial { size: 4, p: 0.35 }
                        .to_edm()
                        .unwrap(),
                ),
                Element::Edm(
                    NativeParams::ZeroTruncatedPoisson { rate: 3.0 }
                        .to_edm()
                        .unwrap(),
                ),
            ] {
                let spec = CompoundSpec::new(elem, rate, 40).unwrap();
                let total: f64 = (0..1200)
                    .map(|y| spec.log_marginal_density(y as f64).exp())
                    .sum();
                assert!(
                    (total - 1.0).abs() < 1e-6,
                    "rate {rate}, {elem:?}: total {total}"
                );
            }
        }
    }

    #[test]
    fn marginal_normalizes_continuous() {
        // Atom at 0 plus adaptive-Simpson quadrature over the continuous part.
        #[allow(clippy::too_many_arguments)]
        fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, fa: f64, fb: f64, fm: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() < 15.0 * eps {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(f, a, m, fa, fm, flm, eps / 2.0, depth - 1)
                    + simpson(f, m, b, fm, fb, frm, eps / 2.0, depth - 1)
            }
        }
        for rate in [0.1, 2.0] {
            for elem in [
                gamma_element(),
                Element::Edm(
                    NativeParams::Normal {
                        mean: 3.0,
                        variance: 1.0,
                    }
                    .to_edm()
                    .unwrap(),
                ),
                Element::Edm(
                    NativeParams::InverseGaussian {
                        mean: 2.0,
                        shape: 4.0,
                    }
                    .to_edm()
                    .unwrap(),
                ),
            ] {
                let trunc = 40u64;
                let spec = CompoundSpec::new(elem, rate, trunc).unwrap();
                let scaled_mean = trunc as f64 * elem.mean();
                let scaled_sd = (trunc as f64 * elem.variance()).sqrt();
                let (lo, hi) = match elem {
                    Element::Edm(s) if s.family() == EdmFamily::Normal => {
                        (-scaled_mean.abs() - 14.0 * scaled_sd, scaled_mean + 14.0 * scaled_sd)
                    }
                    _ => (1e-8, scaled_mean + 14.0 * scaled_sd),
                };
                let f = |y: f64| spec.log_marginal_density(y).exp();
                // Panel the range so narrow mass cannot hide from the
                // adaptive refinement.
                let panels = 256;
                let mut integral = 0.0;
                for p in 0..panels {
                    let a = lo + (hi - lo) * p as f64 / panels as f64;
                    let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
                    let m = 0.5 * (a + b);
                    integral += simpson(f, a, b, f(a), f(b), f(m), 1e-12, 24);
                }
                let total = integral + prob_zero(rate);
                assert!(
                    (total - 1.0).abs() < 1e-6,
                    "rate {rate} {elem:?}: total {total}"
                );
            }
        }
    }

    #[test]
    fn compound_cumulants_match_mgf_identity() {
        // First two cumulants of the compound: ΛE[X] and Λ(Var[X] + E[X]²).
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for elem in [
            gamma_element(),
            Element::Edm(NativeParams::Poisson { rate: 3.0 }.to_edm().unwrap()),
        ] {
            let rate = 2.0;
            let spec = CompoundSpec::new(elem, rate, 60).unwrap();
            let n = 1_000_000usize;
            let draws: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let want_mean = rate * elem.mean();
            let want_var = rate * (elem.variance() + elem.mean() * elem.mean());
            let se_mean = (want_var / n as f64).sqrt();
            assert!(
                (mean - want_mean).abs() < 4.0 * se_mean,
                "{elem:?}: mean {mean} vs {want_mean}"
            );
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            let m4 = draws.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / n as f64;
            let se_var = ((m4 - var * var) / n as f64).sqrt();
            assert!(
                (var - want_var).abs() < 4.0 * se_var,
                "{elem:?}: var {var} vs {want_var}"
            );
        }
    }

    #[test]
    fn choose_truncation_criteria() {
        // Tail criterion alone: Po(0.02) tail drops below 1e-12 at n = 5.
        let n = choose_truncation(&gamma_element(), 0.02, 100.0).unwrap();
        assert_eq!(n, 5);
        // Feasibility for the bounded-increment families.
        assert!(choose_truncation(&Element::DegenerateOne, 0.02, 9.0).unwrap() >= 9);
        let ztp = Element::Edm(
            NativeParams::ZeroTruncatedPoisson { rate: 2.0 }
                .to_edm()
                .unwrap(),
        );
        assert!(choose_truncation(&ztp, 0.02, 9.0).unwrap() >= 9);
        // Cap exceeded names the offending observation.
        let err = choose_truncation(&Element::DegenerateOne, 0.02, 1000.0).unwrap_err();
        assert!(err.to_string().contains("1000"));
    }

    #[test]
    fn spec_construction_validates_tail() {
        assert!(CompoundSpec::new(gamma_element(), 2.0, 2).is_err());
        assert!(CompoundSpec::new(gamma_element(), 2.0, 0).is_err());
        assert!(CompoundSpec::new(gamma_element(), -1.0, 30).is_err());
        assert!(CompoundSpec::new(gamma_element(), 2.0, 30).is_ok());
    }

    #[test]
    fn density_grid_rows() {
        let elem = gamma_element();
        let rows = density_grid(&elem, &[0.1, 1.0], &[1.0, 5.0, 10.0]).unwrap();
        assert_eq!(rows.len(), 6);
        let spec_elem = match elem {
            Element::Edm(s) => s,
            _ => unreachable!(),
        };
        // At the small rate the grid hugs the element density.
        let near: Vec<_> = rows.iter().filter(|r| r.0 == 0.1).collect();
        for (_, y, ld) in near {
            assert!((ld.exp() - spec_elem.log_density(*y).exp()).abs() < 0.05);
        }
    }

    #[test]
    fn ztp_spec_construction() {
        let e = ElementSpec::new(EdmFamily::ZeroTruncatedPoisson, 7.0_f64.ln(), 1.0).unwrap();
        assert!((e.mean() - 7.0 / (1.0 - (-7.0_f64).exp())).abs() < 1e-12);
    }
}
