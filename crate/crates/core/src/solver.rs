//! Exact solver for the inner maximization of label-aware bounded CVaR:
//!
//! ```text
//! max Σ w_i ℓ_i   s.t.   Σ w_i = 1,   l_i ≤ w_i ≤ u_i
//! ```
//!
//! This is a fractional knapsack over the box-constrained simplex. Starting
//! from `w = l`, the free mass `1 − Σ l_i` is poured into samples in order of
//! decreasing loss until it runs out; an exchange argument shows no other
//! feasible point does better. Every optimum found this way is a vertex with
//! at most one coordinate strictly inside its interval.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bounds::{ClassBounds, FEASIBILITY_TOL};
use crate::error::{Error, Result};

/// Largest instance [`brute_force_lp`] accepts.
pub const BRUTE_FORCE_MAX: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl WeightBox {
    /// Requires `0 ≤ l_i ≤ u_i` with finite entries. Simplex feasibility is
    /// checked by the solver, not here.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::shape("lower and upper bounds differ in length"));
        }
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l >= 0.0 && l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::arg(format!(
                    "sample {i}: need 0 <= lower <= upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(WeightBox { lower, upper })
    }

    /// `l_i = 0`, `u_i = 1/(α n)` for every sample: plain α-CVaR.
    pub fn alpha_cvar(n: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::arg(format!("alpha must be positive, got {alpha}")));
        }
        WeightBox::new(vec![0.0; n], vec![1.0 / (alpha * n as f64); n])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn lower_mass(&self) -> f64 {
        self.lower.iter().sum()
    }

    pub fn upper_mass(&self) -> f64 {
        self.upper.iter().sum()
    }

    pub fn is_feasible(&self) -> bool {
        !self.is_empty()
            && self.lower_mass() <= 1.0 + FEASIBILITY_TOL
            && self.upper_mass() >= 1.0 - FEASIBILITY_TOL
    }

    /// Restores feasibility by rescaling whichever side is violated:
    /// lower bounds are scaled down to unit mass when `Σ l > 1`, upper bounds
    /// scaled up to unit mass when `Σ u < 1`. Returns whether anything
    /// changed.
    pub fn repair(&mut self) -> bool {
        let lo = self.lower_mass();
        let hi = self.upper_mass();
        if lo > 1.0 + FEASIBILITY_TOL {
            for l in &mut self.lower {
                *l /= lo;
            }
            true
        } else if hi < 1.0 - FEASIBILITY_TOL && hi > 0.0 {
            for u in &mut self.upper {
                *u /= hi;
            }
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    /// The sample whose weight lies strictly inside its interval, if any.
    pub fractional_index: Option<usize>,
}

fn check_inputs(losses: &[f64], bx: &WeightBox) -> Result<()> {
    if losses.len() != bx.len() {
        return Err(Error::shape(format!(
            "{} losses for a box over {} samples",
            losses.len(),
            bx.len()
        )));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::arg(format!("loss {i} is not finite ({})", losses[i])));
    }
    if !bx.is_feasible() {
        return Err(Error::infeasible(format!(
            "weight box admits no unit-mass point (sum lower {}, sum upper {})",
            bx.lower_mass(),
            bx.upper_mass()
        )));
    }
    Ok(())
}

/// Maximizes `Σ w_i ℓ_i` over the box-constrained simplex.
///
/// Samples with equal loss are filled in ascending index order.
pub fn solve_lab_cvar(losses: &[f64], bx: &WeightBox) -> Result<WeightSolution> {
    check_inputs(losses, bx)?;
    let n = losses.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ascending index among ties
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]));

    let mut weights = bx.lower.clone();
    let mut remaining = (1.0 - bx.lower_mass()).max(0.0);
    let mut fractional_index = None;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let room = bx.upper[i] - bx.lower[i];
        if room <= remaining {
            weights[i] = bx.upper[i];
            remaining -= room;
        } else {
            weights[i] += remaining;
            remaining = 0.0;
            fractional_index = Some(i);
        }
    }
    let objective = weights.iter().zip(losses).map(|(w, l)| w * l).sum();
    Ok(WeightSolution {
        weights,
        objective,
        fractional_index,
    })
}

/// Vertex enumeration oracle for small instances.
///
/// Visits every assignment of samples to their lower or upper bound with at
/// most one sample left free (its weight then fixed by `Σ w = 1`) and keeps
/// the best feasible one. Exponential; refuses more than
/// [`BRUTE_FORCE_MAX`] samples.
pub fn brute_force_lp(losses: &[f64], bx: &WeightBox) -> Result<WeightSolution> {
    let n = losses.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::arg(format!(
            "brute force limited to {BRUTE_FORCE_MAX} samples, got {n}"
        )));
    }
    check_inputs(losses, bx)?;
    let tol = 1e-12;
    let mut best: Option<WeightSolution> = None;
    let mut consider = |w: Vec<f64>, frac: Option<usize>| {
        let obj: f64 = w.iter().zip(losses).map(|(a, b)| a * b).sum();
        if best.as_ref().is_none_or(|b| obj > b.objective) {
            best = Some(WeightSolution {
                weights: w,
                objective: obj,
                fractional_index: frac,
            });
        }
    };
    for mask in 0u32..(1u32 << n) {
        let at_bound = |i: usize| {
            if mask & (1 << i) != 0 {
                bx.upper[i]
            } else {
                bx.lower[i]
            }
        };
        let w: Vec<f64> = (0..n).map(at_bound).collect();
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() <= tol {
            consider(w.clone(), None);
        }
        for free in 0..n {
            // each (free, assignment of others) pair is visited once: skip
            // masks with the free bit set
            if mask & (1 << free) != 0 {
                continue;
            }
            let rest = s - w[free];
            let wf = 1.0 - rest;
            if wf >= bx.lower[free] - tol && wf <= bx.upper[free] + tol {
                let mut w2 = w.clone();
                w2[free] = wf;
                let interior = wf > bx.lower[free] && wf < bx.upper[free];
                consider(w2, interior.then_some(free));
            }
        }
    }
    best.ok_or_else(|| Error::infeasible("no feasible vertex found"))
}

/// Closed-form value of the bounded CVaR of the zero-one loss in terms of the
/// per-class error rates `R_j`:
///
/// ```text
/// min{ 1 − Σ_j n_j l_j + Σ_j n_j l_j R_j ,  Σ_j n_j u_j R_j }
/// ```
///
/// with `l_j = 1/(β_j n)`, `u_j = 1/(α_j n)`.
pub fn closed_form_zero_one(per_class_error: &[f64], bounds: &ClassBounds) -> Result<f64> {
    if per_class_error.len() != bounds.num_classes() {
        return Err(Error::shape("one error rate per class required"));
    }
    if let Some(j) = per_class_error.iter().position(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::arg(format!("error rate of class {j} outside [0, 1]")));
    }
    let mut lower_mass = 0.0;
    let mut via_lower = 0.0;
    let mut via_upper = 0.0;
    #[allow(clippy::needless_range_loop)]
    for j in 0..bounds.num_classes() {
        let c = bounds.counts[j] as f64;
        lower_mass += c * bounds.lower_weight[j];
        via_lower += c * bounds.lower_weight[j] * per_class_error[j];
        via_upper += c * bounds.upper_weight[j] * per_class_error[j];
    }
    Ok((1.0 - lower_mass + via_lower).min(via_upper))
}

/// Mean of the `⌈α n⌉` largest losses with the boundary sample weighted so the
/// total mass is one: the direct definition of α-CVaR on a finite sample.
pub fn top_fraction_mean(losses: &[f64], alpha: f64) -> Result<f64> {
    if losses.is_empty() || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg("need non-empty losses and alpha in (0, 1]"));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mass = alpha * losses.len() as f64;
    let whole = mass.floor() as usize;
    let mut acc: f64 = sorted[..whole.min(sorted.len())].iter().sum();
    let frac = mass - whole as f64;
    if frac > 0.0 && whole < sorted.len() {
        acc += frac * sorted[whole];
    }
    Ok(acc / mass)
}
