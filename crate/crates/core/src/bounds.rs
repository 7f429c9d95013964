//! Per-class CVaR weight bounds.
//!
//! Class `j` with `n_j` samples gets an upper weight `1/(α_j n)` and a lower
//! weight `1/(β_j n)` for each of its samples. The bound-minimizing choice is
//!
//! ```text
//! α_j = τ₁ · n_j^k / Σ_m n_m^(1/2 − k),     β_j = α_j / η
//! ```
//!
//! where `k = 1/4 − k₁/2` is the exponent exposed to users (the raw exponent
//! is `k₁ = k₂ = 1/2 − 2k`) and `τ₂ = τ₁ / η`. With `k > 0` the smaller
//! classes receive the larger weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TauInterval};
use crate::solver::WeightBox;

/// Relative slack used when checking `Σ n_j l_j ≤ 1 ≤ Σ n_j u_j`.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Effective exponent: `α_j ∝ n_j^k`.
    pub k: f64,
    pub tau1: f64,
    /// Ratio `τ₁ / τ₂`, so `β_j = α_j / η`.
    pub eta: f64,
}

impl BoundParams {
    pub fn new(k: f64, tau1: f64, eta: f64) -> Result<Self> {
        let p = BoundParams { k, tau1, eta };
        p.validate()?;
        Ok(p)
    }

    /// Raw exponent `k₁ = k₂ = 1/2 − 2k`.
    pub fn k1(&self) -> f64 {
        0.5 - 2.0 * self.k
    }

    pub fn k2(&self) -> f64 {
        self.k1()
    }

    pub fn tau2(&self) -> f64 {
        self.tau1 / self.eta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::arg(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.tau1 > 0.0 && self.tau1.is_finite()) {
            return Err(Error::arg(format!("tau1 must be positive, got {}", self.tau1)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::arg(format!(
                "k must be positive (k1 = {} must stay below 1/2)",
                self.k1()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBounds {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `1/(β_j n)`
    pub lower_weight: Vec<f64>,
    /// `1/(α_j n)`
    pub upper_weight: Vec<f64>,
    pub n: usize,
    pub counts: Vec<usize>,
}

impl ClassBounds {
    /// Builds bounds from explicit `α`, `β`. Requires `0 < α_j ≤ β_j`; does not
    /// check simplex feasibility (see [`ClassBounds::check_feasible`]).
    pub fn from_alpha_beta(alpha: Vec<f64>, beta: Vec<f64>, counts: &[usize]) -> Result<Self> {
        validate_counts(counts)?;
        if alpha.len() != counts.len() || beta.len() != counts.len() {
            return Err(Error::shape("alpha/beta length must match the number of classes"));
        }
        for (j, (&a, &b)) in alpha.iter().zip(&beta).enumerate() {
            if !(a > 0.0 && a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::arg(format!(
                    "class {j}: need 0 < alpha <= beta, got alpha={a}, beta={b}"
                )));
            }
        }
        let n: usize = counts.iter().sum();
        let nf = n as f64;
        let lower_weight = beta.iter().map(|b| 1.0 / (b * nf)).collect();
        let upper_weight = alpha.iter().map(|a| 1.0 / (a * nf)).collect();
        Ok(ClassBounds {
            alpha,
            beta,
            lower_weight,
            upper_weight,
            n,
            counts: counts.to_vec(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// `(Σ_j n_j·lower_j, Σ_j n_j·upper_j)`.
    pub fn total_mass(&self) -> (f64, f64) {
        let lo = self
            .counts
            .iter()
            .zip(&self.lower_weight)
            .map(|(&c, w)| c as f64 * w)
            .sum();
        let hi = self
            .counts
            .iter()
            .zip(&self.upper_weight)
            .map(|(&c, w)| c as f64 * w)
            .sum();
        (lo, hi)
    }

    pub fn is_feasible(&self) -> bool {
        let (lo, hi) = self.total_mass();
        lo <= 1.0 + FEASIBILITY_TOL && hi >= 1.0 - FEASIBILITY_TOL
    }

    pub fn check_feasible(&self) -> Result<()> {
        let (lo, hi) = self.total_mass();
        if self.is_feasible() {
            Ok(())
        } else {
            Err(Error::infeasible(format!(
                "class bounds admit no unit-mass weights (sum of lower bounds {lo}, sum of upper bounds {hi})"
            )))
        }
    }

    /// Logit-adjustment prior `π_j = m·α_j`, for a sample count `m`.
    pub fn logit_prior(&self, m: usize) -> Vec<f64> {
        self.alpha.iter().map(|a| a * m as f64).collect()
    }

    /// Per-sample box for a minibatch of `labels`: the class bounds with the
    /// total sample count `n` replaced by the batch size.
    pub fn batch_box(&self, labels: &[usize]) -> Result<WeightBox> {
        let b = labels.len() as f64;
        let mut lower = Vec::with_capacity(labels.len());
        let mut upper = Vec::with_capacity(labels.len());
        for &y in labels {
            if y >= self.num_classes() {
                return Err(Error::arg(format!("label {y} out of range")));
            }
            lower.push(1.0 / (self.beta[y] * b));
            upper.push(1.0 / (self.alpha[y] * b));
        }
        WeightBox::new(lower, upper)
    }

    /// Per-sample box over the full training set.
    pub fn full_box(&self, labels: &[usize]) -> Result<WeightBox> {
        let lower = labels.iter().map(|&y| self.lower_weight[y]).collect();
        let upper = labels.iter().map(|&y| self.upper_weight[y]).collect();
        WeightBox::new(lower, upper)
    }
}

fn validate_counts(counts: &[usize]) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::arg("no classes"));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::arg(format!("class {j} has no samples")));
    }
    Ok(())
}

/// `α_j = τ · n_j^(1/4 − e/2) / Σ_m n_m^(1/4 + e/2)` for raw exponent `e`.
fn alpha_from_raw(counts: &[usize], raw_exponent: f64, tau: f64) -> Vec<f64> {
    let denom: f64 = counts
        .iter()
        .map(|&c| (c as f64).powf(0.25 + raw_exponent / 2.0))
        .sum();
    counts
        .iter()
        .map(|&c| tau * (c as f64).powf(0.25 - raw_exponent / 2.0) / denom)
        .collect()
}

/// Bound-minimizing `α*`, `β*` for the given class counts.
///
/// Fails with [`Error::Infeasible`] (carrying [`feasible_tau_range`]) when no
/// weight vector on the simplex fits inside the resulting box.
pub fn optimal_bounds(counts: &[usize], params: &BoundParams) -> Result<ClassBounds> {
    params.validate()?;
    validate_counts(counts)?;
    let alpha = alpha_from_raw(counts, params.k1(), params.tau1);
    let beta = alpha_from_raw(counts, params.k2(), params.tau2());
    let bounds = ClassBounds::from_alpha_beta(alpha, beta, counts)?;
    if !bounds.is_feasible() {
        let (lo, hi) = bounds.total_mass();
        return Err(Error::Infeasible {
            message: format!(
                "tau1={} with k={}, eta={} gives lower-bound mass {lo} and upper-bound mass {hi}",
                params.tau1, params.k, params.eta
            ),
            feasible_tau: Some(feasible_tau_range(counts, params.k, params.eta)),
        });
    }
    Ok(bounds)
}

/// Bounds from raw, independent exponents `k₁`, `k₂` and scales `τ₁`, `τ₂`.
///
/// No sign or ordering constraints are imposed on the exponents beyond
/// `α_j ≤ β_j`; this admits degenerate settings such as `k₁ = k₂ = −3/2`,
/// `τ₁ = τ₂` (plain inverse-frequency weights) used for cross-checks.
pub fn bounds_from_raw_exponents(
    counts: &[usize],
    k1: f64,
    k2: f64,
    tau1: f64,
    tau2: f64,
) -> Result<ClassBounds> {
    validate_counts(counts)?;
    if !(tau1 > 0.0 && tau2 > 0.0) {
        return Err(Error::arg("tau1 and tau2 must be positive"));
    }
    let alpha = alpha_from_raw(counts, k1, tau1);
    let beta = alpha_from_raw(counts, k2, tau2);
    ClassBounds::from_alpha_beta(alpha, beta, counts)
}

/// Interval of `τ₁` for which [`optimal_bounds`] is feasible.
///
/// Upper-bound mass is `A/τ₁` and lower-bound mass is `η·A/τ₁`, where `A` is
/// the upper-bound mass at `τ₁ = 1`, so the interval is `[η·A, A]`. It is
/// reported empty when `A` is not a finite positive number (overflow at
/// extreme exponents).
pub fn feasible_tau_range(counts: &[usize], k: f64, eta: f64) -> TauInterval {
    const EMPTY: TauInterval = TauInterval {
        lo: f64::NAN,
        hi: f64::NAN,
    };
    if counts.is_empty() || counts.contains(&0) || !(eta > 0.0 && eta < 1.0) {
        return EMPTY;
    }
    let n: f64 = counts.iter().sum::<usize>() as f64;
    let alpha = alpha_from_raw(counts, 0.5 - 2.0 * k, 1.0);
    if alpha.iter().any(|&al| !(al.is_finite() && al > 0.0)) {
        return EMPTY;
    }
    let a: f64 = counts
        .iter()
        .zip(&alpha)
        .map(|(&c, al)| c as f64 / (al * n))
        .sum();
    if !(a.is_finite() && a > 0.0 && (eta * a) > 0.0) {
        return EMPTY;
    }
    TauInterval { lo: eta * a, hi: a }
}

/// `Σ_j √n_j / a_j`: the class-dependent factor of the generalization bound.
pub fn bound_objective(bounds: &[f64], counts: &[usize]) -> Result<f64> {
    if bounds.len() != counts.len() {
        return Err(Error::shape("bounds and counts differ in length"));
    }
    if let Some(j) = bounds.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::arg(format!("entry {j} is not positive")));
    }
    Ok(bounds
        .iter()
        .zip(counts)
        .map(|(a, &c)| (c as f64).sqrt() / a)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn single_class_alpha_is_tau() {
        // k = 1/4 means k1 = 0
        let b = bounds_from_raw_exponents(&[37], 0.0, 0.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(b.alpha[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn equal_counts_give_uniform_alpha() {
        let b = bounds_from_raw_exponents(&[50; 4], 0.0, 0.0, 1.0, 2.0).unwrap();
        for a in &b.alpha {
            assert_relative_eq!(*a, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_class_hand_values() {
        let p = BoundParams::new(0.25, 1.0, 0.5).unwrap();
        assert_eq!(p.k1(), 0.0);
        let r = feasible_tau_range(&[10, 1000], p.k, p.eta);
        let b = bounds_from_raw_exponents(&[10, 1000], 0.0, 0.0, 1.0, 2.0).unwrap();
        let s = 10f64.powf(0.25) + 1000f64.powf(0.25);
        assert_relative_eq!(b.alpha[0], 10f64.powf(0.25) / s, epsilon = 1e-14);
        assert_relative_eq!(b.alpha[1], 1000f64.powf(0.25) / s, epsilon = 1e-14);
        // tau1 = 1 may not be feasible here; the error must carry the range
        match optimal_bounds(&[10, 1000], &p) {
            Ok(ok) => assert!(r.contains(1.0) && ok.is_feasible()),
            Err(Error::Infeasible { feasible_tau, .. }) => {
                assert_eq!(feasible_tau, Some(r));
                assert!(!r.contains(1.0));
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn eta_out_of_range() {
        assert!(matches!(
            BoundParams::new(0.5, 1.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        let bad = BoundParams {
            k: 0.5,
            tau1: 1.0,
            eta: 1.5,
        };
        assert!(matches!(optimal_bounds(&[3, 4], &bad), Err(Error::InvalidArgument(_))));
        assert!(BoundParams::new(-0.1, 1.0, 0.5).is_err());
    }

    fn predicate(counts: &[usize], k: f64, eta: f64, tau1: f64) -> bool {
        let b = bounds_from_raw_exponents(counts, 0.5 - 2.0 * k, 0.5 - 2.0 * k, tau1, tau1 / eta)
            .unwrap();
        b.is_feasible()
    }

    #[test]
    fn balanced_range_contains_one() {
        // two balanced classes, k1 = 0, eta = 1/2: A = L = 2, interval [1, 2]
        let r = feasible_tau_range(&[40, 40], 0.25, 0.5);
        assert!(r.contains(1.0));
        // grid scan oracle
        for i in 1..400 {
            let tau = i as f64 * 0.01;
            let inside = tau >= r.lo * (1.0 + 1e-9) && tau <= r.hi * (1.0 - 1e-9);
            let outside = tau < r.lo * (1.0 - 1e-9) || tau > r.hi * (1.0 + 1e-9);
            if inside {
                assert!(predicate(&[40, 40], 0.25, 0.5, tau), "tau {tau}");
            }
            if outside {
                assert!(!predicate(&[40, 40], 0.25, 0.5, tau), "tau {tau}");
            }
        }
    }

    #[test]
    fn balanced_range_is_eta_l_to_l() {
        for l in 2..8 {
            let r = feasible_tau_range(&vec![30; l], 0.25, 0.5);
            assert_abs_diff_eq!(r.lo, l as f64 / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.hi, l as f64, epsilon = 1e-12);
            assert_eq!(r.contains(1.0), l <= 2);
            assert!(predicate(&vec![30; l], 0.25, 0.5, 0.75 * l as f64));
            assert!(!predicate(&vec![30; l], 0.25, 0.5, 0.45 * l as f64));
            assert!(!predicate(&vec![30; l], 0.25, 0.5, 1.05 * l as f64));
        }
    }

    #[test]
    fn endpoints_feasible() {
        for counts in [vec![5usize, 50, 500], vec![3, 3, 9, 27], vec![12, 1200]] {
            for k in [0.1, 0.5, 1.0, 2.0] {
                for eta in [0.5, 1.0 / 3.0, 1.0 / 16.0] {
                    let r = feasible_tau_range(&counts, k, eta);
                    assert!(!r.is_empty());
                    assert!(predicate(&counts, k, eta, r.lo));
                    assert!(predicate(&counts, k, eta, r.hi));
                    let mid = optimal_bounds(&counts, &BoundParams::new(k, (r.lo + r.hi) / 2.0, eta).unwrap())
                        .unwrap();
                    assert!(mid.is_feasible());
                }
            }
        }
    }

    #[test]
    fn extreme_k_gives_empty_range() {
        let r = feasible_tau_range(&[1, 1_000_000], 400.0, 0.5);
        assert!(r.is_empty());
        assert!(!r.contains(1.0));
    }

    #[test]
    fn bound_objective_examples() {
        assert_eq!(bound_objective(&[1.0, 1.0], &[4, 9]).unwrap(), 5.0);
        let a = [0.3, 0.7, 1.1];
        let c = [3, 30, 300];
        let base = bound_objective(&a, &c).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * 2.5).collect();
        assert_relative_eq!(bound_objective(&scaled, &c).unwrap(), base / 2.5, epsilon = 1e-14);
        assert!(matches!(bound_objective(&[1.0, 0.0], &[1, 1]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn alpha_star_minimizes_bound_objective() {
        let mut rng = RngState::new(2024);
        for _ in 0..20 {
            let l = 2 + rng.below(8);
            let counts: Vec<usize> = (0..l).map(|_| 1 + rng.below(2000)).collect();
            let k1 = rng.uniform_range(-2.0, 0.49);
            let tau1 = rng.uniform_range(0.1, 10.0);
            let star = alpha_from_raw(&counts, k1, tau1);
            let best = bound_objective(&star, &counts).unwrap();
            for _ in 0..100 {
                // random positive direction projected back onto the constraint
                let mut a: Vec<f64> = star.iter().map(|s| s * rng.uniform_range(0.2, 3.0)).collect();
                let lhs: f64 = a.iter().zip(&counts).map(|(x, &c)| (c as f64).powf(k1) * x).sum();
                for x in a.iter_mut() {
                    *x *= tau1 / lhs;
                }
                assert!(bound_objective(&a, &counts).unwrap() >= best - 1e-12);
            }
        }
    }

    #[test]
    fn monotone_in_counts() {
        let counts = [4usize, 9, 40, 400, 401];
        let r = feasible_tau_range(&counts, 0.6, 0.25);
        let b = optimal_bounds(&counts, &BoundParams::new(0.6, r.hi * 0.8, 0.25).unwrap()).unwrap();
        for j in 1..counts.len() {
            assert!(b.upper_weight[j - 1] > b.upper_weight[j]);
            assert!(b.lower_weight[j - 1] > b.lower_weight[j]);
            assert!(b.alpha[j] < b.beta[j]);
        }
    }

    #[test]
    fn vanilla_degeneracy_is_inverse_frequency() {
        let counts = [3usize, 10, 70, 200];
        let b = bounds_from_raw_exponents(&counts, -1.5, -1.5, 1.0, 1.0).unwrap();
        let ratio0 = b.upper_weight[0] * counts[0] as f64;
        for (u, &c) in b.upper_weight.iter().zip(&counts) {
            assert_relative_eq!(u * c as f64, ratio0, max_relative = 1e-12);
        }
        assert_eq!(b.upper_weight, b.lower_weight);
    }
}
