//! Training losses on a minibatch of logits.
//!
//! Every function returns a [`LossOutput`]: the per-sample loss before any
//! weighting, the scalar objective, and its exact gradient with respect to the
//! logits. Sample weights produced by the CVaR solver are treated as constants
//! in the gradient (the envelope theorem for the inner maximum).
//!
//! All `log[1 + Σ_{j'≠y} exp(g_{j'} − g_y)]` terms are evaluated as
//! `logsumexp(g) − g_y` over the adjusted logit row `g`.

use serde::{Deserialize, Serialize};

use crate::bounds::{feasible_tau_range, optimal_bounds, BoundParams, ClassBounds};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp_unchecked, softmax_in_place, Matrix};
use crate::solver::{solve_lab_cvar, WeightBox};

/// CB weight parameter used for the deferred re-weighting stage of LDAM+DRW.
pub const DRW_CB_GAMMA: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Loss of each sample before weighting (for the adjusted losses, the
    /// adjusted cross-entropy).
    pub per_sample: Vec<f64>,
    pub total: f64,
    /// `∂ total / ∂ logits`, same shape as the logits.
    pub grad_logits: Matrix,
    /// Solver weights, for the CVaR family.
    pub weights_used: Option<Vec<f64>>,
}

impl LossOutput {
    fn scaled(mut self, c: f64) -> Self {
        self.total *= c;
        for g in self.grad_logits.as_mut_slice() {
            *g *= c;
        }
        self
    }
}

/// Class prior `π` used to shift logits by `log π_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitAdjustment {
    pi: Vec<f64>,
    log_pi: Vec<f64>,
}

impl LogitAdjustment {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if let Some(j) = pi.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::arg(format!("pi[{j}] must be positive, got {}", pi[j])));
        }
        let log_pi = pi.iter().map(|p| p.ln()).collect();
        Ok(LogitAdjustment { pi, log_pi })
    }

    pub fn uniform(classes: usize) -> Self {
        LogitAdjustment {
            pi: vec![1.0; classes],
            log_pi: vec![0.0; classes],
        }
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }
}

fn check_batch(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::arg("empty batch"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::arg(format!(
            "label {y} out of range for {} classes",
            logits.cols()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::arg("non-finite logits"));
    }
    Ok(())
}

fn check_counts(counts: &[usize], classes: usize) -> Result<()> {
    if counts.len() != classes {
        return Err(Error::shape(format!(
            "{} class counts for {classes} classes",
            counts.len()
        )));
    }
    if counts.contains(&0) {
        return Err(Error::arg("class counts must be positive"));
    }
    Ok(())
}

/// Cross-entropy of every row after adding `offset[j]` to every logit and
/// subtracting `true_shift[i]` from the true logit. Returns the per-sample
/// losses and `softmax(adjusted) − one_hot(y)` per row.
fn adjusted_ce(
    logits: &Matrix,
    labels: &[usize],
    offset: Option<&[f64]>,
    true_shift: Option<&[f64]>,
) -> (Vec<f64>, Matrix) {
    let (b, l) = logits.shape();
    let mut losses = Vec::with_capacity(b);
    let mut grad = Matrix::zeros(b, l);
    let mut row = vec![0.0; l];
    for (i, &y) in labels.iter().enumerate() {
        row.copy_from_slice(logits.row(i));
        if let Some(off) = offset {
            for (r, o) in row.iter_mut().zip(off) {
                *r += o;
            }
        }
        if let Some(shift) = true_shift {
            row[y] -= shift[i];
        }
        let lse = log_sum_exp_unchecked(&row);
        losses.push(lse - row[y]);
        softmax_in_place(&mut row);
        row[y] -= 1.0;
        grad.row_mut(i).copy_from_slice(&row);
    }
    (losses, grad)
}

/// Combines per-sample losses with per-sample coefficients `c`:
/// `total = Σ c_i ℓ_i`, gradient rows scaled by `c_i`.
fn combine(per_sample: Vec<f64>, mut grad: Matrix, coeff: &[f64]) -> LossOutput {
    let mut total = 0.0;
    for (i, (&c, &li)) in coeff.iter().zip(&per_sample).enumerate() {
        total += c * li;
        for g in grad.row_mut(i) {
            *g *= c;
        }
    }
    LossOutput {
        per_sample,
        total,
        grad_logits: grad,
        weights_used: None,
    }
}

fn mean_coeff(b: usize) -> Vec<f64> {
    vec![1.0 / b as f64; b]
}

/// Mean softmax cross-entropy.
pub fn softmax_ce(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    let (ls, g) = adjusted_ce(logits, labels, None, None);
    Ok(combine(ls, g, &mean_coeff(labels.len())))
}

/// `Σ_i c_i ℓ_ce(i)` with fixed coefficients.
pub fn weighted_ce(logits: &Matrix, labels: &[usize], coeff: &[f64]) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    if coeff.len() != labels.len() {
        return Err(Error::shape("one coefficient per sample required"));
    }
    let (ls, g) = adjusted_ce(logits, labels, None, None);
    Ok(combine(ls, g, coeff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `1 / n_j`
    Vanilla,
    /// `(1 − γ) / (1 − γ^{n_j})`
    ClassBalanced,
}

/// Raw per-class weights, before minibatch rescaling.
pub fn class_weights(kind: ClassWeighting, counts: &[usize], gamma: Option<f64>) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::arg("class counts must be positive"));
    }
    match kind {
        ClassWeighting::Vanilla => Ok(counts.iter().map(|&n| 1.0 / n as f64).collect()),
        ClassWeighting::ClassBalanced => {
            let g = gamma.ok_or_else(|| Error::arg("class-balanced weights need gamma"))?;
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::arg(format!("gamma must lie in (0, 1), got {g}")));
            }
            let ln_g = g.ln();
            // 1 − γ^n = −expm1(n ln γ)
            Ok(counts
                .iter()
                .map(|&n| (1.0 - g) / -(n as f64 * ln_g).exp_m1())
                .collect())
        }
    }
}

/// Scales weights so their mean is one.
pub fn rescale_weights_minibatch(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::arg("no weights"));
    }
    if raw.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::arg("weights must be finite and non-negative"));
    }
    let m = raw.iter().sum::<f64>() / raw.len() as f64;
    if m <= 0.0 {
        return Err(Error::arg("all weights are zero"));
    }
    Ok(raw.iter().map(|w| w / m).collect())
}

/// Mean of `r_i ℓ_ce(i)` with class weights rescaled to mean one on the batch.
pub fn class_weighted_ce(logits: &Matrix, labels: &[usize], class_w: &[f64]) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    let raw: Vec<f64> = labels.iter().map(|&y| class_w[y]).collect();
    let b = labels.len() as f64;
    let coeff: Vec<f64> = rescale_weights_minibatch(&raw)?.iter().map(|r| r / b).collect();
    let (ls, g) = adjusted_ce(logits, labels, None, None);
    let mut out = combine(ls, g, &coeff);
    out.weights_used = Some(coeff);
    Ok(out)
}

/// Mean focal loss `(1 − p_y)^γ · (−log p_y)`, differentiated through the
/// modulating factor.
pub fn focal_loss(logits: &Matrix, labels: &[usize], gamma: f64) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    if !(gamma > 0.0) {
        return Err(Error::arg(format!("focal gamma must be positive, got {gamma}")));
    }
    let (b, l) = logits.shape();
    let inv_b = 1.0 / b as f64;
    let mut per_sample = Vec::with_capacity(b);
    let mut grad = Matrix::zeros(b, l);
    let mut total = 0.0;
    let mut s = vec![0.0; l];
    for (i, &y) in labels.iter().enumerate() {
        s.copy_from_slice(logits.row(i));
        let nll = log_sum_exp_unchecked(&s) - s[y];
        softmax_in_place(&mut s);
        let p = s[y];
        // 1 − p as the mass on the other classes, accurate when p ≈ 1
        let q: f64 = s.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| v).sum();
        let modulator = q.powf(gamma);
        let fl = modulator * nll;
        per_sample.push(fl);
        total += fl * inv_b;
        // d fl / d p
        let d_mod = if q > 0.0 { gamma * q.powf(gamma - 1.0) * nll } else { 0.0 };
        let dfl_dp = -d_mod - modulator / p;
        // d p / d f_k = p (δ_ky − s_k)
        let grow = grad.row_mut(i);
        for k in 0..l {
            let delta = if k == y { 1.0 } else { 0.0 };
            grow[k] = inv_b * dfl_dp * p * (delta - s[k]);
        }
    }
    Ok(LossOutput {
        per_sample,
        total,
        grad_logits: grad,
        weights_used: None,
    })
}

/// LDAM margins `C / n_j^{1/4}`.
pub fn ldam_margins(c: f64, counts: &[usize]) -> Vec<f64> {
    counts.iter().map(|&n| c / (n as f64).powf(0.25)).collect()
}

/// Per-sample LDAM losses and per-row gradients (unreduced).
fn ldam_rows(logits: &Matrix, labels: &[usize], c: f64, counts: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    check_batch(logits, labels)?;
    check_counts(counts, logits.cols())?;
    if !(c >= 0.0) {
        return Err(Error::arg(format!("LDAM C must be non-negative, got {c}")));
    }
    let margins = ldam_margins(c, counts);
    let shift: Vec<f64> = labels.iter().map(|&y| margins[y]).collect();
    Ok(adjusted_ce(logits, labels, None, Some(&shift)))
}

/// Mean cross-entropy with the true logit lowered by `C / n_y^{1/4}`.
pub fn ldam_loss(logits: &Matrix, labels: &[usize], c: f64, counts: &[usize]) -> Result<LossOutput> {
    let (ls, g) = ldam_rows(logits, labels, c, counts)?;
    Ok(combine(ls, g, &mean_coeff(labels.len())))
}

/// LDAM with class-balanced weights (rescaled to mean one on the batch).
pub fn ldam_weighted_loss(
    logits: &Matrix,
    labels: &[usize],
    c: f64,
    counts: &[usize],
    class_w: &[f64],
) -> Result<LossOutput> {
    let (ls, g) = ldam_rows(logits, labels, c, counts)?;
    let raw: Vec<f64> = labels.iter().map(|&y| class_w[y]).collect();
    let b = labels.len() as f64;
    let coeff: Vec<f64> = rescale_weights_minibatch(&raw)?.iter().map(|r| r / b).collect();
    let mut out = combine(ls, g, &coeff);
    out.weights_used = Some(coeff);
    Ok(out)
}

/// `Σ_i π_y w_i log[1 + Σ_{j'≠y} exp(f_{j'} + log π_{j'} − f_y − log π_y)]`.
///
/// `per_sample` holds the adjusted cross-entropy without the `π_y w_i`
/// prefactor.
pub fn logit_adjusted_weighted_ce(
    logits: &Matrix,
    labels: &[usize],
    weights: &[f64],
    adjustment: &LogitAdjustment,
) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    if weights.len() != labels.len() {
        return Err(Error::shape("one weight per sample required"));
    }
    if adjustment.pi.len() != logits.cols() {
        return Err(Error::shape("one prior entry per class required"));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::arg("weights must be non-negative"));
    }
    let (ls, g) = adjusted_ce(logits, labels, Some(&adjustment.log_pi), None);
    let coeff: Vec<f64> = labels
        .iter()
        .zip(weights)
        .map(|(&y, w)| adjustment.pi[y] * w)
        .collect();
    let mut out = combine(ls, g, &coeff);
    out.weights_used = Some(weights.to_vec());
    Ok(out)
}

/// Mean of `log[1 + Σ_{j'≠y} exp(f_{j'} − f_y + τ(log n_{j'} − log n_y))]`.
pub fn la_loss(logits: &Matrix, labels: &[usize], tau: f64, counts: &[usize]) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    check_counts(counts, logits.cols())?;
    if !(tau > 0.0) {
        return Err(Error::arg(format!("LA tau must be positive, got {tau}")));
    }
    let offset: Vec<f64> = counts.iter().map(|&n| tau * (n as f64).ln()).collect();
    let (ls, g) = adjusted_ce(logits, labels, Some(&offset), None);
    Ok(combine(ls, g, &mean_coeff(labels.len())))
}

/// α-CVaR of the batch cross-entropy losses.
pub fn alpha_cvar_loss(logits: &Matrix, labels: &[usize], alpha: f64) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    let bx = WeightBox::alpha_cvar(labels.len(), alpha)?;
    cvar_with_box(logits, labels, &bx)
}

/// Bounded CVaR of the batch cross-entropy losses over an explicit box.
pub fn cvar_with_box(logits: &Matrix, labels: &[usize], bx: &WeightBox) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    let (ls, g) = adjusted_ce(logits, labels, None, None);
    let sol = solve_lab_cvar(&ls, bx)?;
    let mut out = combine(ls, g, &sol.weights);
    out.weights_used = Some(sol.weights);
    Ok(out)
}

/// LAB-CVaR on a minibatch: the box uses the class bounds with `n` replaced
/// by the batch size. Fails if that box is infeasible.
pub fn lab_cvar_loss(logits: &Matrix, labels: &[usize], bounds: &ClassBounds) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    let bx = bounds.batch_box(labels)?;
    cvar_with_box(logits, labels, &bx)
}

/// LAB-CVaR with logit adjustment: weights from the LAB-CVaR solve on the
/// plain cross-entropy, then the logit-adjusted weighted loss with
/// `π_j = B·α_j` (B the batch size).
pub fn lab_cvar_logit_loss(logits: &Matrix, labels: &[usize], bounds: &ClassBounds) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    let bx = bounds.batch_box(labels)?;
    lab_cvar_logit_with_box(logits, labels, bounds, &bx)
}

pub fn lab_cvar_logit_with_box(
    logits: &Matrix,
    labels: &[usize],
    bounds: &ClassBounds,
    bx: &WeightBox,
) -> Result<LossOutput> {
    check_batch(logits, labels)?;
    if bounds.num_classes() != logits.cols() {
        return Err(Error::shape("bounds cover a different number of classes"));
    }
    let (plain, _) = adjusted_ce(logits, labels, None, None);
    let sol = solve_lab_cvar(&plain, bx)?;
    let adj = LogitAdjustment::new(bounds.logit_prior(labels.len()))?;
    logit_adjusted_weighted_ce(logits, labels, &sol.weights, &adj)
}

/// Norm of the gradient of one logit-adjusted weighted sample loss with
/// respect to the classifier row `W_t` of a non-true class `t`:
/// `π_y w · softmax(f + log π)_t · ‖Φ(x)‖`.
pub fn gradient_norm_probe(
    logit_row: &[f64],
    label: usize,
    pi: &[f64],
    weight: f64,
    t: usize,
    feature_norm: f64,
) -> Result<f64> {
    if t == label {
        return Err(Error::arg("probe class must differ from the label"));
    }
    if pi.len() != logit_row.len() || label >= pi.len() || t >= pi.len() {
        return Err(Error::shape("prior, logits and class indices disagree"));
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::arg("prior entries must be positive"));
    }
    let mut g: Vec<f64> = logit_row.iter().zip(pi).map(|(f, p)| f + p.ln()).collect();
    softmax_in_place(&mut g);
    Ok(pi[label] * weight * g[t] * feature_norm)
}

/// Scale `τ₁` given either directly or as a position in the feasible range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Absolute(f64),
    /// `τ₁ = lo + t·(hi − lo)` inside the feasible interval `[lo, hi]`.
    Relative { relative: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabCvarParams {
    pub k: f64,
    pub tau1: TauSpec,
    pub eta: f64,
}

impl LabCvarParams {
    pub fn resolve(&self, counts: &[usize]) -> Result<BoundParams> {
        let tau1 = match self.tau1 {
            TauSpec::Absolute(t) => t,
            TauSpec::Relative { relative } => {
                if !(0.0..=1.0).contains(&relative) {
                    return Err(Error::arg(format!(
                        "relative tau1 must lie in [0, 1], got {relative}"
                    )));
                }
                let r = feasible_tau_range(counts, self.k, self.eta);
                if r.is_empty() {
                    return Err(Error::Infeasible {
                        message: format!("no feasible tau1 for k={}, eta={}", self.k, self.eta),
                        feasible_tau: Some(r),
                    });
                }
                r.lo + relative * (r.hi - r.lo)
            }
        };
        BoundParams::new(self.k, tau1, self.eta)
    }
}

/// A training loss and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Erm,
    VanillaRw,
    CbRw { gamma: f64 },
    Focal { gamma: f64 },
    Ldam { c: f64 },
    LdamDrw { c: f64, drw_epoch: usize },
    La { tau: f64 },
    AlphaCvar { alpha: f64 },
    LabCvar(LabCvarParams),
    LabCvarLogit(LabCvarParams),
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Erm => "erm",
            LossSpec::VanillaRw => "vanilla_rw",
            LossSpec::CbRw { .. } => "cb_rw",
            LossSpec::Focal { .. } => "focal",
            LossSpec::Ldam { .. } => "ldam",
            LossSpec::LdamDrw { .. } => "ldam_drw",
            LossSpec::La { .. } => "la",
            LossSpec::AlphaCvar { .. } => "alpha_cvar",
            LossSpec::LabCvar(_) => "lab_cvar",
            LossSpec::LabCvarLogit(_) => "lab_cvar_logit",
        }
    }

    /// Short label including hyperparameters, stable across runs.
    pub fn label(&self) -> String {
        fn tau(t: &TauSpec) -> String {
            match t {
                TauSpec::Absolute(v) => format!("{v}"),
                TauSpec::Relative { relative } => format!("rel{relative}"),
            }
        }
        match self {
            LossSpec::Erm | LossSpec::VanillaRw => self.name().to_string(),
            LossSpec::CbRw { gamma } | LossSpec::Focal { gamma } => format!("{}(gamma={gamma})", self.name()),
            LossSpec::Ldam { c } => format!("ldam(c={c})"),
            LossSpec::LdamDrw { c, drw_epoch } => format!("ldam_drw(c={c},drw={drw_epoch})"),
            LossSpec::La { tau } => format!("la(tau={tau})"),
            LossSpec::AlphaCvar { alpha } => format!("alpha_cvar(alpha={alpha})"),
            LossSpec::LabCvar(p) | LossSpec::LabCvarLogit(p) => {
                format!("{}(k={},tau1={},eta={})", self.name(), p.k, tau(&p.tau1), p.eta)
            }
        }
    }

    /// Admissible-range checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::arg(m));
        match *self {
            LossSpec::CbRw { gamma } if !(gamma > 0.0 && gamma < 1.0) => {
                bad(format!("cb_rw gamma must lie in (0, 1), got {gamma}"))
            }
            LossSpec::Focal { gamma } if !(gamma > 0.0) => bad(format!("focal gamma must be positive, got {gamma}")),
            LossSpec::Ldam { c } | LossSpec::LdamDrw { c, .. } if !(c > 0.0) => {
                bad(format!("ldam C must be positive, got {c}"))
            }
            LossSpec::La { tau } if !(tau > 0.0) => bad(format!("la tau must be positive, got {tau}")),
            LossSpec::AlphaCvar { alpha } if !(alpha > 0.0) => bad(format!("alpha must be positive, got {alpha}")),
            LossSpec::AlphaCvar { alpha } if alpha > 1.0 => Err(Error::infeasible(format!(
                "alpha={alpha} > 1 caps every weight below 1/n; no unit-mass weights exist"
            ))),
            LossSpec::LabCvar(p) | LossSpec::LabCvarLogit(p) => {
                if !(p.eta > 0.0 && p.eta < 1.0) {
                    return bad(format!("eta must lie in (0, 1), got {}", p.eta));
                }
                if !(p.k > 0.0) {
                    return bad(format!("k must be positive, got {}", p.k));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Result of evaluating an [`Objective`] on one batch.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub output: LossOutput,
    /// The batch box was infeasible and had to be rescaled.
    pub repaired: bool,
}

/// A [`LossSpec`] bound to the class counts of a training set.
#[derive(Debug, Clone)]
pub struct Objective {
    spec: LossSpec,
    counts: Vec<usize>,
    class_w: Option<Vec<f64>>,
    bounds: Option<ClassBounds>,
}

impl Objective {
    /// Validates the hyperparameters and, for the LAB-CVaR family, builds the
    /// class bounds on the full training counts (failing with the feasible
    /// `τ₁` range if they are infeasible).
    pub fn new(spec: LossSpec, counts: &[usize]) -> Result<Self> {
        spec.validate()?;
        check_counts(counts, counts.len())?;
        let (class_w, bounds) = match spec {
            LossSpec::VanillaRw => (Some(class_weights(ClassWeighting::Vanilla, counts, None)?), None),
            LossSpec::CbRw { gamma } => (
                Some(class_weights(ClassWeighting::ClassBalanced, counts, Some(gamma))?),
                None,
            ),
            LossSpec::LdamDrw { .. } => (
                Some(class_weights(ClassWeighting::ClassBalanced, counts, Some(DRW_CB_GAMMA))?),
                None,
            ),
            LossSpec::LabCvar(p) | LossSpec::LabCvarLogit(p) => {
                let params = p.resolve(counts)?;
                (None, Some(optimal_bounds(counts, &params)?))
            }
            _ => (None, None),
        };
        Ok(Objective {
            spec,
            counts: counts.to_vec(),
            class_w,
            bounds,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn bounds(&self) -> Option<&ClassBounds> {
        self.bounds.as_ref()
    }

    /// Loss handed to the optimizer for one batch at the given epoch.
    ///
    /// For LAB-CVaR-logit this is the summed logit-adjusted objective divided
    /// by the batch size, which keeps its scale comparable to the weighted
    /// means of the other losses.
    pub fn evaluate(&self, logits: &Matrix, labels: &[usize], epoch: usize) -> Result<Evaluation> {
        check_batch(logits, labels)?;
        if logits.cols() != self.counts.len() {
            return Err(Error::shape("logit width differs from the number of classes"));
        }
        let plain = |output| Evaluation {
            output,
            repaired: false,
        };
        match self.spec {
            LossSpec::Erm => softmax_ce(logits, labels).map(plain),
            LossSpec::VanillaRw | LossSpec::CbRw { .. } => {
                class_weighted_ce(logits, labels, self.class_w.as_deref().unwrap_or_default()).map(plain)
            }
            LossSpec::Focal { gamma } => focal_loss(logits, labels, gamma).map(plain),
            LossSpec::Ldam { c } => ldam_loss(logits, labels, c, &self.counts).map(plain),
            LossSpec::LdamDrw { c, drw_epoch } => {
                if epoch < drw_epoch {
                    ldam_loss(logits, labels, c, &self.counts).map(plain)
                } else {
                    ldam_weighted_loss(
                        logits,
                        labels,
                        c,
                        &self.counts,
                        self.class_w.as_deref().unwrap_or_default(),
                    )
                    .map(plain)
                }
            }
            LossSpec::La { tau } => la_loss(logits, labels, tau, &self.counts).map(plain),
            LossSpec::AlphaCvar { alpha } => alpha_cvar_loss(logits, labels, alpha).map(plain),
            LossSpec::LabCvar(_) | LossSpec::LabCvarLogit(_) => {
                let bounds = self.bounds.as_ref().expect("bounds built in Objective::new");
                let mut bx = bounds.batch_box(labels)?;
                let repaired = bx.repair();
                let output = if matches!(self.spec, LossSpec::LabCvar(_)) {
                    cvar_with_box(logits, labels, &bx)?
                } else {
                    lab_cvar_logit_with_box(logits, labels, bounds, &bx)?.scaled(1.0 / labels.len() as f64)
                };
                Ok(Evaluation { output, repaired })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::bounds_from_raw_exponents;
    use crate::numerics::RngState;
    use approx::assert_abs_diff_eq;

    fn random_logits(rng: &mut RngState, b: usize, l: usize, scale: f64) -> (Matrix, Vec<usize>) {
        let m = Matrix::from_vec(b, l, (0..b * l).map(|_| rng.normal() * scale).collect()).unwrap();
        let y = (0..b).map(|_| rng.below(l)).collect();
        (m, y)
    }

    /// Central differences, relative error in the max norm.
    fn fd_rel_err(f: impl Fn(&Matrix) -> f64, x: &Matrix, analytic: &Matrix) -> f64 {
        let h = 1e-5;
        let mut num = 0.0f64;
        let mut den = 1e-12f64;
        for idx in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[idx] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let a = analytic.as_slice()[idx];
            num = num.max((fd - a).abs());
            den = den.max(fd.abs()).max(a.abs());
        }
        num / den
    }

    #[test]
    fn ce_uniform_logits() {
        let l = 7;
        let out = softmax_ce(&Matrix::zeros(3, l), &[0, 3, 6]).unwrap();
        for v in &out.per_sample {
            assert_abs_diff_eq!(*v, (l as f64).ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn ce_decreases_with_true_logit() {
        let m20 = Matrix::from_vec(1, 3, vec![20.0, 0.0, 1.0]).unwrap();
        let m30 = Matrix::from_vec(1, 3, vec![30.0, 0.0, 1.0]).unwrap();
        let a = softmax_ce(&m20, &[0]).unwrap().total;
        let b = softmax_ce(&m30, &[0]).unwrap().total;
        assert!(b < a && b >= 0.0);
    }

    #[test]
    fn ce_gradient_fd() {
        let mut rng = RngState::new(1);
        let (x, y) = random_logits(&mut rng, 4, 3, 1.0);
        let out = softmax_ce(&x, &y).unwrap();
        let err = fd_rel_err(|z| softmax_ce(z, &y).unwrap().total, &x, &out.grad_logits);
        assert!(err < 1e-5, "{err}");
        for i in 0..4 {
            assert_abs_diff_eq!(out.grad_logits.row(i).iter().sum::<f64>(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(softmax_ce(&Matrix::zeros(1, 3), &[3]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(ClassWeighting::Vanilla, &[10, 1000], None).unwrap(), vec![0.1, 0.001]);
        let w = class_weights(ClassWeighting::ClassBalanced, &[1, 5, 500], Some(1e-9)).unwrap();
        for v in w {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-8);
        }
        let w = class_weights(ClassWeighting::ClassBalanced, &[1], Some(0.9)).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert!(class_weights(ClassWeighting::ClassBalanced, &[1], Some(1.0)).is_err());
        assert!(class_weights(ClassWeighting::ClassBalanced, &[1], None).is_err());
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_weights_minibatch(&[2.0, 2.0, 2.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(rescale_weights_minibatch(&[1.0, 3.0]).unwrap(), vec![0.5, 1.5]);
        assert!(rescale_weights_minibatch(&[0.0, 0.0]).is_err());
        let raw = [0.3, 0.01, 7.0, 2.2];
        let r = rescale_weights_minibatch(&raw).unwrap();
        assert_abs_diff_eq!(r.iter().sum::<f64>() / 4.0, 1.0, epsilon = 1e-12);
        let k = r[0] / raw[0];
        for (a, b) in r.iter().zip(raw) {
            assert_abs_diff_eq!(a / b, k, epsilon = 1e-12);
        }
    }

    #[test]
    fn focal_limits_and_gradient() {
        let mut rng = RngState::new(2);
        let (x, y) = random_logits(&mut rng, 5, 4, 1.5);
        let ce = softmax_ce(&x, &y).unwrap().total;
        let f0 = focal_loss(&x, &y, 1e-8).unwrap().total;
        assert!((ce - f0).abs() < 1e-6);

        // p = 1 exactly
        let sure = Matrix::from_vec(1, 2, vec![800.0, 0.0]).unwrap();
        assert_eq!(focal_loss(&sure, &[0], 2.0).unwrap().total, 0.0);

        for gamma in [0.5, 2.0, 5.0] {
            let out = focal_loss(&x, &y, gamma).unwrap();
            let err = fd_rel_err(|z| focal_loss(z, &y, gamma).unwrap().total, &x, &out.grad_logits);
            assert!(err < 1e-5, "gamma {gamma}: {err}");
        }
    }

    #[test]
    fn ldam_examples() {
        let mut rng = RngState::new(3);
        let (x, y) = random_logits(&mut rng, 6, 2, 1.0);
        let counts = [16, 81];
        assert_eq!(ldam_margins(1.0, &counts), vec![0.5, 1.0 / 3.0]);
        let zero = ldam_loss(&x, &y, 0.0, &counts).unwrap();
        let ce = softmax_ce(&x, &y).unwrap();
        assert_abs_diff_eq!(zero.total, ce.total, epsilon = 1e-15);

        let bal = ldam_loss(&x, &y, 0.8, &[50, 50]).unwrap();
        for (a, b) in bal.per_sample.iter().zip(&ce.per_sample) {
            assert!(a > b);
        }
        // the margin is exactly a shift of the true logit
        let l = ldam_loss(&x, &y, 1.0, &counts).unwrap();
        let mut shifted = x.clone();
        for (i, &yi) in y.iter().enumerate() {
            let v = shifted.get(i, yi) - [0.5, 1.0 / 3.0][yi];
            shifted.set(i, yi, v);
        }
        assert_abs_diff_eq!(l.total, softmax_ce(&shifted, &y).unwrap().total, epsilon = 1e-14);
        let err = fd_rel_err(|z| ldam_loss(z, &y, 1.0, &counts).unwrap().total, &x, &l.grad_logits);
        assert!(err < 1e-5);
    }

    #[test]
    fn logit_adjusted_reductions() {
        let mut rng = RngState::new(4);
        let (x, y) = random_logits(&mut rng, 6, 3, 1.0);
        let w: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let plain = weighted_ce(&x, &y, &w).unwrap();
        let adj = logit_adjusted_weighted_ce(&x, &y, &w, &LogitAdjustment::uniform(3)).unwrap();
        assert_abs_diff_eq!(plain.total, adj.total, epsilon = 1e-14);

        // binary balanced, w = 1/n, π_j = n_j/n = 1/2 ⇒ ERM scaled by 1/2
        let (xb, _) = random_logits(&mut rng, 4, 2, 1.0);
        let yb = [0, 1, 0, 1];
        let erm = softmax_ce(&xb, &yb).unwrap();
        let adj = logit_adjusted_weighted_ce(&xb, &yb, &[0.25; 4], &LogitAdjustment::new(vec![0.5, 0.5]).unwrap())
            .unwrap();
        assert_abs_diff_eq!(adj.total, 0.5 * erm.total, epsilon = 1e-14);
        for (a, b) in adj.per_sample.iter().zip(&erm.per_sample) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }

        let pi = LogitAdjustment::new(vec![0.2, 1.3, 4.0]).unwrap();
        let out = logit_adjusted_weighted_ce(&x, &y, &w, &pi).unwrap();
        let err = fd_rel_err(
            |z| logit_adjusted_weighted_ce(z, &y, &w, &pi).unwrap().total,
            &x,
            &out.grad_logits,
        );
        assert!(err < 1e-5);
        assert!(LogitAdjustment::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn la_examples() {
        let mut rng = RngState::new(5);
        let (x, y) = random_logits(&mut rng, 5, 3, 1.0);
        let bal = la_loss(&x, &y, 1.3, &[20, 20, 20]).unwrap();
        assert_abs_diff_eq!(bal.total, softmax_ce(&x, &y).unwrap().total, epsilon = 1e-13);

        // counts [1, e]: offset log(n2/n1) = 1 (counts are integral, so use a
        // ratio with known log instead)
        let row = Matrix::from_vec(1, 2, vec![0.3, -0.4]).unwrap();
        let got = la_loss(&row, &[0], 1.0, &[10, 100]).unwrap().total;
        let want = (1.0 + (-0.4f64 - 0.3 + 100f64.ln() - 10f64.ln()).exp()).ln();
        assert_abs_diff_eq!(got, want, epsilon = 1e-14);

        let out = la_loss(&x, &y, 0.7, &[3, 30, 300]).unwrap();
        let err = fd_rel_err(|z| la_loss(z, &y, 0.7, &[3, 30, 300]).unwrap().total, &x, &out.grad_logits);
        assert!(err < 1e-5);
    }

    fn feasible_bounds(counts: &[usize], k: f64, eta: f64, rel: f64) -> ClassBounds {
        let p = LabCvarParams {
            k,
            tau1: TauSpec::Relative { relative: rel },
            eta,
        };
        optimal_bounds(counts, &p.resolve(counts).unwrap()).unwrap()
    }

    #[test]
    fn lab_cvar_degenerate_box_is_mean() {
        let mut rng = RngState::new(6);
        let (x, y) = random_logits(&mut rng, 8, 3, 1.0);
        let bx = WeightBox::new(vec![1.0 / 8.0; 8], vec![1.0 / 8.0; 8]).unwrap();
        let a = cvar_with_box(&x, &y, &bx).unwrap();
        let b = softmax_ce(&x, &y).unwrap();
        assert_abs_diff_eq!(a.total, b.total, epsilon = 1e-14);
    }

    #[test]
    fn lab_cvar_dominates_mean() {
        let mut rng = RngState::new(7);
        let y = vec![0, 0, 1, 1, 1, 2, 2, 2, 2, 2];
        let counts = [2, 3, 5];
        let b = feasible_bounds(&counts, 0.5, 0.5, 0.5);
        let bx = b.batch_box(&y).unwrap();
        let inside = bx
            .lower()
            .iter()
            .zip(bx.upper())
            .all(|(l, u)| *l <= 0.1 + 1e-15 && 0.1 <= *u + 1e-15);
        for _ in 0..20 {
            let x = Matrix::from_vec(10, 3, (0..30).map(|_| rng.normal()).collect()).unwrap();
            let out = lab_cvar_loss(&x, &y, &b).unwrap();
            let mean = softmax_ce(&x, &y).unwrap().total;
            if inside {
                assert!(out.total >= mean - 1e-12);
            }
            let err = fd_rel_err(|z| lab_cvar_loss(z, &y, &b).unwrap().total, &x, &out.grad_logits);
            assert!(err < 1e-5);
        }
    }

    #[test]
    fn lab_cvar_logit_composition() {
        let mut rng = RngState::new(8);
        let counts = [4, 6, 10];
        let b = feasible_bounds(&counts, 0.8, 0.4, 0.3);
        let y = vec![0, 1, 1, 2, 2, 2, 0, 2, 1, 2];
        let (x, _) = random_logits(&mut rng, 10, 3, 1.0);
        let out = lab_cvar_logit_loss(&x, &y, &b).unwrap();
        let w = lab_cvar_loss(&x, &y, &b).unwrap().weights_used.unwrap();
        let pi = LogitAdjustment::new(b.logit_prior(10)).unwrap();
        let direct = logit_adjusted_weighted_ce(&x, &y, &w, &pi).unwrap();
        assert_eq!(out.total, direct.total);
        assert_eq!(out.grad_logits, direct.grad_logits);
        // frozen-w finite differences
        let err = fd_rel_err(
            |z| logit_adjusted_weighted_ce(z, &y, &w, &pi).unwrap().total,
            &x,
            &out.grad_logits,
        );
        assert!(err < 1e-5);
    }

    #[test]
    fn lab_cvar_logit_uniform_reduces_to_mean() {
        // equal alphas and a degenerate box: offsets vanish, π w = 1
        let mut rng = RngState::new(9);
        let y = vec![0, 1, 2, 0, 1, 2];
        // α = β = 1 on a batch of 6: l = u = 1/6, π = 6
        let b = ClassBounds::from_alpha_beta(vec![1.0; 3], vec![1.0; 3], &[2, 2, 2]).unwrap();
        let (x, _) = random_logits(&mut rng, 6, 3, 1.0);
        let out = lab_cvar_logit_loss(&x, &y, &b).unwrap();
        let ce = softmax_ce(&x, &y).unwrap();
        assert_abs_diff_eq!(out.total, 6.0 * ce.total, epsilon = 1e-13);
        for (a, c) in out.per_sample.iter().zip(&ce.per_sample) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-14);
        }
    }

    #[test]
    fn la_is_degenerate_lab_cvar_logit() {
        let mut rng = RngState::new(10);
        let y = vec![0, 1, 1, 2, 2, 2, 2, 2];
        let counts = [1usize, 2, 5];
        // k1 = k2 = −3/2, τ1 = τ2 chosen so Σ_batch u = 1
        let probe = bounds_from_raw_exponents(&counts, -1.5, -1.5, 1.0, 1.0).unwrap();
        let mass: f64 = probe.batch_box(&y).unwrap().upper_mass();
        let b = bounds_from_raw_exponents(&counts, -1.5, -1.5, mass, mass).unwrap();
        for _ in 0..10 {
            let (x, _) = random_logits(&mut rng, 8, 3, 1.0);
            let ours = lab_cvar_logit_loss(&x, &y, &b).unwrap();
            let la = la_loss(&x, &y, 1.0, &counts).unwrap();
            let c = ours.total / la.total;
            assert!(c > 0.0);
            assert_abs_diff_eq!(c, 8.0, epsilon = 1e-9);
            for (g1, g2) in ours.grad_logits.as_slice().iter().zip(la.grad_logits.as_slice()) {
                assert_abs_diff_eq!(*g1, c * g2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn probe_examples() {
        let f = [0.3, -1.0, 2.0, 0.5];
        let s = crate::numerics::softmax(&f);
        let g = gradient_norm_probe(&f, 0, &[1.0; 4], 0.7, 2, 3.0).unwrap();
        assert_abs_diff_eq!(g, 0.7 * s[2] * 3.0, epsilon = 1e-15);
        assert!(gradient_norm_probe(&f, 1, &[1.0; 4], 0.7, 1, 3.0).is_err());
        let pi = [0.1, 0.5, 2.0, 3.0];
        let pic: Vec<f64> = pi.iter().map(|p| p * 4.0).collect();
        let a = gradient_norm_probe(&f, 1, &pi, 0.7, 2, 3.0).unwrap();
        let b = gradient_norm_probe(&f, 1, &pic, 0.7, 2, 3.0).unwrap();
        assert_abs_diff_eq!(b, 4.0 * a, epsilon = 1e-14);
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::CbRw { gamma: 1.0 }.validate().is_err());
        assert!(LossSpec::Focal { gamma: 0.0 }.validate().is_err());
        assert!(matches!(LossSpec::AlphaCvar { alpha: 2.0 }.validate(), Err(Error::Infeasible { .. })));
        assert!(LossSpec::AlphaCvar { alpha: 0.5 }.validate().is_ok());
        let json = r#"{"kind":"lab_cvar","k":0.5,"tau1":{"relative":0.5},"eta":0.5}"#;
        let s: LossSpec = serde_json::from_str(json).unwrap();
        assert!(matches!(s, LossSpec::LabCvar(LabCvarParams { tau1: TauSpec::Relative { .. }, .. })));
        let json = r#"{"kind":"lab_cvar_logit","k":1.0,"tau1":2.0,"eta":0.5}"#;
        let s: LossSpec = serde_json::from_str(json).unwrap();
        assert!(matches!(s, LossSpec::LabCvarLogit(LabCvarParams { tau1: TauSpec::Absolute(_), .. })));
    }

    #[test]
    fn objective_reports_infeasible_tau() {
        let spec = LossSpec::LabCvar(LabCvarParams {
            k: 2.0,
            tau1: TauSpec::Absolute(5.0),
            eta: 0.5,
        });
        match Objective::new(spec, &[10, 100, 1000]) {
            Err(Error::Infeasible { feasible_tau: Some(r), .. }) => assert!(!r.contains(5.0)),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn objective_repairs_batch() {
        let counts = [10, 1000];
        let spec = LossSpec::LabCvar(LabCvarParams {
            k: 1.0,
            tau1: TauSpec::Relative { relative: 0.5 },
            eta: 0.2,
        });
        let obj = Objective::new(spec, &counts).unwrap();
        // a batch with only majority samples cannot reach unit mass
        let x = Matrix::zeros(4, 2);
        let ev = obj.evaluate(&x, &[1, 1, 1, 1], 0).unwrap();
        assert!(ev.repaired);
        let w = ev.output.weights_used.unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
