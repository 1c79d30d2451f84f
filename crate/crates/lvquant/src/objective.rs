//! Loss and regularization mathematics: Euclidean regression losses,
//! cross-entropy phase loss, group-lasso feature selection over the
//! regression heads, and the phase-guided temporal-consistency hinges.
//!
//! Sign conventions for the temporal hinges, with `z` the per-index change
//! from the previous frame: on Diastole frames the cavity area and the
//! dimensions must not shrink and the myocardium area and wall thicknesses
//! must not grow; Systole frames penalize the opposite directions. The
//! phase indicator always reads the ground-truth label.

use serde::{Deserialize, Serialize};

use crate::model::{PredGrads, Predictions};
use crate::scalar::{sigmoid, Fnv64, Scalar};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalBoundary {
    /// Frame 0's predecessor is the last frame (sequences are full cycles).
    Cyclic,
    /// Frame 0 contributes no difference term.
    SkipFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub area: bool,
    pub dim: bool,
    pub rwt: bool,
    pub phase: bool,
}

impl TaskSet {
    pub fn all() -> Self {
        TaskSet {
            area: true,
            dim: true,
            rwt: true,
            phase: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Group-lasso weight.
    pub lambda1: f64,
    /// Phase-guided constraint weight.
    pub lambda2: f64,
    pub temporal_boundary: TemporalBoundary,
    pub enabled: TaskSet,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda1: 1e-4,
            lambda2: 1e-2,
            temporal_boundary: TemporalBoundary::Cyclic,
            enabled: TaskSet::all(),
        }
    }
}

impl ObjectiveConfig {
    /// The `N/N` setting: no regularization at all.
    pub fn ablation_none(mut self) -> Self {
        self.lambda1 = 0.0;
        self.lambda2 = 0.0;
        self
    }

    /// The `intra/N` setting: group lasso only.
    pub fn ablation_intra(mut self) -> Self {
        self.lambda2 = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.lambda1 < 0.0 || !self.lambda1.is_finite() {
            return Err(ObjectiveError::Config(format!(
                "lambda1 must be finite and >= 0, got {}",
                self.lambda1
            )));
        }
        if self.lambda2 < 0.0 || !self.lambda2.is_finite() {
            return Err(ObjectiveError::Config(format!(
                "lambda2 must be finite and >= 0, got {}",
                self.lambda2
            )));
        }
        if self.lambda2 > 0.0 && !(self.enabled.area && self.enabled.dim && self.enabled.rwt) {
            return Err(ObjectiveError::Config(
                "phase-guided penalties need the area, dim and rwt tasks enabled".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum ObjectiveError {
    ShapeMismatch(String),
    TooFewFrames(usize),
    Config(String),
}

impl std::fmt::Display for ObjectiveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObjectiveError::ShapeMismatch(m) => write!(f, "objective shape mismatch: {}", m),
            ObjectiveError::TooFewFrames(n) => {
                write!(f, "temporal penalties need at least 2 frames, got {}", n)
            }
            ObjectiveError::Config(m) => write!(f, "objective config: {}", m),
        }
    }
}

impl std::error::Error for ObjectiveError {}

/// Ground-truth targets for one sequence, in the model's normalized units.
#[derive(Debug, Clone)]
pub struct SequenceTargets<S: Scalar> {
    /// `[F, 2]`
    pub area: Tensor<S>,
    /// `[F, 3]`
    pub dim: Tensor<S>,
    /// `[F, 6]`
    pub rwt: Tensor<S>,
    /// `[F]`, 0 = Diastole, 1 = Systole.
    pub phase: Vec<u8>,
}

impl<S: Scalar> SequenceTargets<S> {
    pub fn frames(&self) -> usize {
        self.phase.len()
    }

    /// Assemble from per-frame 11-vectors ordered (cavity, myo, dim1..3,
    /// rwt1..6).
    pub fn from_rows(rows: &[[S; 11]], phase: &[u8]) -> Self {
        let f = rows.len();
        let mut area = Tensor::zeros(&[f, 2]);
        let mut dim = Tensor::zeros(&[f, 3]);
        let mut rwt = Tensor::zeros(&[f, 6]);
        for (i, row) in rows.iter().enumerate() {
            area.data[i * 2..i * 2 + 2].copy_from_slice(&row[0..2]);
            dim.data[i * 3..i * 3 + 3].copy_from_slice(&row[2..5]);
            rwt.data[i * 6..i * 6 + 6].copy_from_slice(&row[5..11]);
        }
        SequenceTargets {
            area,
            dim,
            rwt,
            phase: phase.to_vec(),
        }
    }
}

/// Per-sequence breakdown of every objective component, plus the assembled
/// total. All values are reported in 64-bit regardless of compute precision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    pub loss_area: f64,
    pub loss_dim: f64,
    pub loss_rwt: f64,
    pub loss_phase: f64,
    pub r_intra: f64,
    pub r_inter_area: f64,
    pub r_inter_dim: f64,
    pub r_inter_rwt: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub const CSV_HEADER: &'static str =
        "epoch,loss_area,loss_dim,loss_rwt,loss_phase,r_intra,r_inter_area,r_inter_dim,r_inter_rwt,total";

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            epoch,
            self.loss_area,
            self.loss_dim,
            self.loss_rwt,
            self.loss_phase,
            self.r_intra,
            self.r_inter_area,
            self.r_inter_dim,
            self.r_inter_rwt,
            self.total
        )
    }
}

// ---------------------------------------------------------------------------
// task losses

/// Mean over frames of 0.5·‖ŷ − y‖²₂.
pub fn loss_regression<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<S, ObjectiveError> {
    if pred.shape != target.shape || pred.shape.len() != 2 {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "regression pred {:?} vs target {:?}",
            pred.shape, target.shape
        )));
    }
    let f = pred.shape[0];
    let mut acc = S::zero();
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        let d = p - t;
        acc += d * d;
    }
    Ok(S::from_f64(0.5) * acc / S::from_usize(f.max(1)))
}

/// d(loss_regression)/d(pred) scaled by `scale`, accumulated into `out`.
pub fn loss_regression_grad<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    scale: S,
    out: &mut Tensor<S>,
) {
    let f = S::from_usize(pred.shape[0].max(1));
    for i in 0..pred.data.len() {
        out.data[i] += scale * (pred.data[i] - target.data[i]) / f;
    }
}

fn clamp_prob<S: Scalar>(p: S) -> (S, bool) {
    let lo = S::from_f64(PROB_CLAMP);
    let hi = S::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Mean over frames of −log p(true class); probabilities clamped to
/// `[1e-7, 1−1e-7]`.
pub fn loss_phase<S: Scalar>(p_diastole: &[S], target: &[u8]) -> Result<S, ObjectiveError> {
    if p_diastole.len() != target.len() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "phase probabilities {} vs targets {}",
            p_diastole.len(),
            target.len()
        )));
    }
    let mut acc = S::zero();
    for (&p, &t) in p_diastole.iter().zip(target) {
        let p_true = if t == 0 { p } else { S::one() - p };
        let (p_true, _) = clamp_prob(p_true);
        acc -= p_true.ln();
    }
    Ok(acc / S::from_usize(target.len().max(1)))
}

/// d(loss_phase)/d(logit) scaled by `scale`, accumulated into `dlogit`.
/// The Diastole probability is `sigmoid(-logit)`. Clamped frames get zero
/// gradient; each frame's clamp state is folded into `pattern`.
pub fn loss_phase_grad_logit<S: Scalar>(
    logits: &[S],
    target: &[u8],
    scale: S,
    dlogit: &mut [S],
    mut pattern: Option<&mut Fnv64>,
) {
    let f = S::from_usize(target.len().max(1));
    for i in 0..logits.len() {
        let q = sigmoid(-logits[i]); // p(Diastole)
        let p_true = if target[i] == 0 { q } else { S::one() - q };
        let (_, clamped) = clamp_prob(p_true);
        if let Some(h) = pattern.as_deref_mut() {
            h.write_bool(clamped);
        }
        if clamped {
            continue;
        }
        // d(−ln p_true)/dz with q = σ(−z): (1−q) for Diastole, −q for Systole.
        let g = if target[i] == 0 { S::one() - q } else { -q };
        dlogit[i] += scale * g / f;
    }
}

// ---------------------------------------------------------------------------
// group lasso

/// Σ over the three regression heads of the column-wise L2 norms of the
/// weight matrix. Biases and the phase head are excluded.
pub fn reg_group_lasso<S: Scalar>(w_area: &Tensor<S>, w_dim: &Tensor<S>, w_rwt: &Tensor<S>) -> S {
    let mut acc = S::zero();
    for w in [w_area, w_dim, w_rwt] {
        let (rows, cols) = (w.shape[0], w.shape[1]);
        for j in 0..cols {
            let mut sq = S::zero();
            for i in 0..rows {
                let v = w.data[i * cols + j];
                sq += v * v;
            }
            acc += sq.sqrt();
        }
    }
    acc
}

/// Accumulate `coeff · d(‖columns‖₂)/dw` into the tensor's grad buffer.
/// Columns with exactly zero norm take the zero subgradient; each column's
/// zero/nonzero state is folded into `pattern`.
pub fn add_group_lasso_grad<S: Scalar>(
    w: &mut Tensor<S>,
    coeff: S,
    mut pattern: Option<&mut Fnv64>,
) {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    let mut colnorm = vec![S::zero(); cols];
    for j in 0..cols {
        let mut sq = S::zero();
        for i in 0..rows {
            let v = w.data[i * cols + j];
            sq += v * v;
        }
        colnorm[j] = sq.sqrt();
        if let Some(h) = pattern.as_deref_mut() {
            h.write_bool(colnorm[j] == S::zero());
        }
    }
    for j in 0..cols {
        if colnorm[j] == S::zero() {
            continue;
        }
        for i in 0..rows {
            let idx = i * cols + j;
            let v = w.data[idx];
            w.grad_mut()[idx] += coeff * v / colnorm[j];
        }
    }
}

// ---------------------------------------------------------------------------
// phase-guided temporal hinges

fn check_frames(f: usize) -> Result<(), ObjectiveError> {
    if f < 2 {
        Err(ObjectiveError::TooFewFrames(f))
    } else {
        Ok(())
    }
}

/// Iterate the frame transitions: yields (frame, predecessor).
fn transitions(f: usize, boundary: TemporalBoundary) -> impl Iterator<Item = (usize, usize)> {
    let start = match boundary {
        TemporalBoundary::Cyclic => 0,
        TemporalBoundary::SkipFirst => 1,
    };
    (start..f).map(move |i| (i, if i == 0 { f - 1 } else { i - 1 }))
}

fn hinge<S: Scalar>(u: S) -> S {
    if u > S::zero() {
        u
    } else {
        S::zero()
    }
}

/// Cavity must not shrink and myocardium must not grow on Diastole frames;
/// the opposite on Systole frames. Scaled by 1/(2F) per subject.
pub fn reg_phase_area<S: Scalar>(
    area_hat: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
) -> Result<S, ObjectiveError> {
    let f = phase.len();
    check_frames(f)?;
    if area_hat.shape != [f, 2] {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "area predictions {:?} vs [{}, 2]",
            area_hat.shape, f
        )));
    }
    let mut acc = S::zero();
    for (i, prev) in transitions(f, boundary) {
        let z_cav = area_hat.data[i * 2] - area_hat.data[prev * 2];
        let z_myo = area_hat.data[i * 2 + 1] - area_hat.data[prev * 2 + 1];
        acc += if phase[i] == 0 {
            hinge(-z_cav) + hinge(z_myo)
        } else {
            hinge(z_cav) + hinge(-z_myo)
        };
    }
    Ok(acc / S::from_usize(2 * f))
}

/// Gradient of `reg_phase_area` scaled by `scale`, accumulated into `out`;
/// hinge sides are folded into `pattern`.
pub fn reg_phase_area_grad<S: Scalar>(
    area_hat: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
    scale: S,
    out: &mut Tensor<S>,
    mut pattern: Option<&mut Fnv64>,
) {
    let f = phase.len();
    let k = scale / S::from_usize(2 * f);
    for (i, prev) in transitions(f, boundary) {
        for (col, dia_sign) in [(0usize, -1.0), (1usize, 1.0)] {
            // Diastole penalizes sign·z; Systole the negation.
            let sign = if phase[i] == 0 { dia_sign } else { -dia_sign };
            let z = area_hat.data[i * 2 + col] - area_hat.data[prev * 2 + col];
            let u = S::from_f64(sign) * z;
            let active = u > S::zero();
            if let Some(h) = pattern.as_deref_mut() {
                h.write_bool(active);
            }
            if active {
                let g = k * S::from_f64(sign);
                out.data[i * 2 + col] += g;
                out.data[prev * 2 + col] -= g;
            }
        }
    }
}

/// Shared shape for the averaged-z penalties: dims penalize decreases in
/// Diastole / increases in Systole (`dia_sign = -1`); wall thicknesses the
/// opposite (`dia_sign = +1`). Scaled by 1/F per subject.
fn reg_phase_mean<S: Scalar>(
    pred: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
    dia_sign: f64,
) -> Result<S, ObjectiveError> {
    let f = phase.len();
    check_frames(f)?;
    if pred.shape.len() != 2 || pred.shape[0] != f {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "predictions {:?} vs frames {}",
            pred.shape, f
        )));
    }
    let k = pred.shape[1];
    let inv_k = S::one() / S::from_usize(k);
    let mut acc = S::zero();
    for (i, prev) in transitions(f, boundary) {
        let mut zbar = S::zero();
        for c in 0..k {
            zbar += pred.data[i * k + c] - pred.data[prev * k + c];
        }
        zbar *= inv_k;
        let sign = if phase[i] == 0 { dia_sign } else { -dia_sign };
        acc += hinge(S::from_f64(sign) * zbar);
    }
    Ok(acc / S::from_usize(f))
}

fn reg_phase_mean_grad<S: Scalar>(
    pred: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
    dia_sign: f64,
    scale: S,
    out: &mut Tensor<S>,
    mut pattern: Option<&mut Fnv64>,
) {
    let f = phase.len();
    let k = pred.shape[1];
    let inv_k = S::one() / S::from_usize(k);
    let kf = scale / S::from_usize(f);
    for (i, prev) in transitions(f, boundary) {
        let mut zbar = S::zero();
        for c in 0..k {
            zbar += pred.data[i * k + c] - pred.data[prev * k + c];
        }
        zbar *= inv_k;
        let sign = if phase[i] == 0 { dia_sign } else { -dia_sign };
        let active = S::from_f64(sign) * zbar > S::zero();
        if let Some(h) = pattern.as_deref_mut() {
            h.write_bool(active);
        }
        if active {
            let g = kf * S::from_f64(sign) * inv_k;
            for c in 0..k {
                out.data[i * k + c] += g;
                out.data[prev * k + c] -= g;
            }
        }
    }
}

/// Mean dimension change must be nonnegative in Diastole, nonpositive in
/// Systole.
pub fn reg_phase_dim<S: Scalar>(
    dim_hat: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
) -> Result<S, ObjectiveError> {
    reg_phase_mean(dim_hat, phase, boundary, -1.0)
}

/// Mean wall-thickness change must be nonpositive in Diastole, nonnegative
/// in Systole.
pub fn reg_phase_rwt<S: Scalar>(
    rwt_hat: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
) -> Result<S, ObjectiveError> {
    reg_phase_mean(rwt_hat, phase, boundary, 1.0)
}

pub fn reg_phase_dim_grad<S: Scalar>(
    dim_hat: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
    scale: S,
    out: &mut Tensor<S>,
    pattern: Option<&mut Fnv64>,
) {
    reg_phase_mean_grad(dim_hat, phase, boundary, -1.0, scale, out, pattern)
}

pub fn reg_phase_rwt_grad<S: Scalar>(
    rwt_hat: &Tensor<S>,
    phase: &[u8],
    boundary: TemporalBoundary,
    scale: S,
    out: &mut Tensor<S>,
    pattern: Option<&mut Fnv64>,
) {
    reg_phase_mean_grad(rwt_hat, phase, boundary, 1.0, scale, out, pattern)
}

// ---------------------------------------------------------------------------
// assembly

/// Head weights feeding the group lasso.
pub struct HeadWeights<'a, S: Scalar> {
    pub area: &'a Tensor<S>,
    pub dim: &'a Tensor<S>,
    pub rwt: &'a Tensor<S>,
}

/// Assemble the full objective over a batch of sequences: sum of enabled
/// per-task population means + λ1·group lasso + λ2·(temporal penalties).
/// Task losses pool all frames; temporal penalties average the
/// per-sequence values.
pub fn total_objective<S: Scalar>(
    preds: &[Predictions<S>],
    targets: &[SequenceTargets<S>],
    heads: &HeadWeights<'_, S>,
    config: &ObjectiveConfig,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    config.validate()?;
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "{} prediction sequences vs {} target sequences",
            preds.len(),
            targets.len()
        )));
    }
    let subjects = preds.len();
    let total_frames: usize = targets.iter().map(|t| t.frames()).sum();
    let mut b = ObjectiveBreakdown::default();
    for (p, t) in preds.iter().zip(targets) {
        let f = t.frames();
        let w = f as f64 / total_frames as f64; // frame-population weighting
        if config.enabled.area {
            b.loss_area += loss_regression(&p.area, &t.area)?.to_f64() * w;
        }
        if config.enabled.dim {
            b.loss_dim += loss_regression(&p.dim, &t.dim)?.to_f64() * w;
        }
        if config.enabled.rwt {
            b.loss_rwt += loss_regression(&p.rwt, &t.rwt)?.to_f64() * w;
        }
        if config.enabled.phase {
            b.loss_phase += loss_phase(&p.p_diastole(), &t.phase)?.to_f64() * w;
        }
        if config.lambda2 > 0.0 {
            let inv_s = 1.0 / subjects as f64;
            b.r_inter_area +=
                reg_phase_area(&p.area, &t.phase, config.temporal_boundary)?.to_f64() * inv_s;
            b.r_inter_dim +=
                reg_phase_dim(&p.dim, &t.phase, config.temporal_boundary)?.to_f64() * inv_s;
            b.r_inter_rwt +=
                reg_phase_rwt(&p.rwt, &t.phase, config.temporal_boundary)?.to_f64() * inv_s;
        }
    }
    if config.lambda1 > 0.0 {
        b.r_intra = reg_group_lasso(heads.area, heads.dim, heads.rwt).to_f64();
    }
    b.total = b.loss_area
        + b.loss_dim
        + b.loss_rwt
        + b.loss_phase
        + config.lambda1 * b.r_intra
        + config.lambda2 * (b.r_inter_area + b.r_inter_dim + b.r_inter_rwt);
    Ok(b)
}

/// Gradients of the data-dependent objective terms w.r.t. every sequence's
/// predictions. Group-lasso gradients live on the head weights and are
/// added separately via [`add_group_lasso_grad`]. Discrete decisions
/// (hinge sides, clamp states) fold into `pattern` when provided.
pub fn objective_pred_grads<S: Scalar>(
    preds: &[Predictions<S>],
    targets: &[SequenceTargets<S>],
    config: &ObjectiveConfig,
    mut pattern: Option<&mut Fnv64>,
) -> Result<Vec<PredGrads<S>>, ObjectiveError> {
    config.validate()?;
    let subjects = preds.len();
    let total_frames: usize = targets.iter().map(|t| t.frames()).sum();
    let mut out = Vec::with_capacity(subjects);
    for (p, t) in preds.iter().zip(targets) {
        let f = t.frames();
        let mut g = PredGrads::zeros(f);
        let w = S::from_f64(f as f64 / total_frames as f64);
        if config.enabled.area {
            loss_regression_grad(&p.area, &t.area, w, &mut g.area);
        }
        if config.enabled.dim {
            loss_regression_grad(&p.dim, &t.dim, w, &mut g.dim);
        }
        if config.enabled.rwt {
            loss_regression_grad(&p.rwt, &t.rwt, w, &mut g.rwt);
        }
        if config.enabled.phase {
            loss_phase_grad_logit(
                &p.phase_logit,
                &t.phase,
                w,
                &mut g.phase_logit,
                pattern.as_deref_mut(),
            );
        }
        if config.lambda2 > 0.0 {
            let s = S::from_f64(config.lambda2 / subjects as f64);
            reg_phase_area_grad(
                &p.area,
                &t.phase,
                config.temporal_boundary,
                s,
                &mut g.area,
                pattern.as_deref_mut(),
            );
            reg_phase_dim_grad(
                &p.dim,
                &t.phase,
                config.temporal_boundary,
                s,
                &mut g.dim,
                pattern.as_deref_mut(),
            );
            reg_phase_rwt_grad(
                &p.rwt,
                &t.phase,
                config.temporal_boundary,
                s,
                &mut g.rwt,
                pattern.as_deref_mut(),
            );
        }
        out.push(g);
    }
    Ok(out)
}
