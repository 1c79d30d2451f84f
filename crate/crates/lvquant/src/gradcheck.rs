//! Central-difference verification of the hand-written backward passes.
//!
//! The checker compares analytic gradients against (f(θ+ε) − f(θ−ε))/2ε in
//! 64-bit precision. Probes where the function's active set changes between
//! the two evaluation points — a relu flipping sign, a pool argmax moving,
//! a hinge or probability clamp switching sides — are excluded as
//! kink-adjacent rather than failed: the difference quotient spans two
//! smooth pieces there and estimates nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{ForwardCtx, Mode};
use crate::model::{LvNet, ModelConfig};
use crate::objective::{
    add_group_lasso_grad, objective_pred_grads, total_objective, HeadWeights, ObjectiveConfig,
    SequenceTargets, TaskSet, TemporalBoundary,
};
use crate::scalar::Fnv64;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Relative error denominator floor: below this magnitude, agreement is
/// judged absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst probe (within the whole parameter vector).
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub checked: usize,
    pub excluded: usize,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>8} {:>9} {:>13}\n",
            "group", "checked", "excluded", "max rel err"
        ));
        for g in &self.groups {
            out.push_str(&format!(
                "{:<22} {:>8} {:>9} {:>13.3e}\n",
                g.name, g.checked, g.excluded, g.max_rel_err
            ));
        }
        out.push_str(&format!(
            "overall: {} probes, {} kink-adjacent excluded, max rel err {:.3e} ({} at {:.0e})\n",
            self.checked,
            self.excluded,
            self.max_rel_err,
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        out
    }
}

#[derive(Debug)]
pub enum GradCheckError {
    NonDeterministic(String),
}

impl std::fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradCheckError::NonDeterministic(m) => {
                write!(f, "objective is not deterministic: {}", m)
            }
        }
    }
}

impl std::error::Error for GradCheckError {}

/// Verify `analytic` against central differences of `eval`.
///
/// `eval` maps the parameter vector to the objective value plus an
/// active-set signature; a probe is excluded when the signature at θ±ε
/// differs from the baseline. `eval` must be deterministic — it is invoked
/// twice at θ before any probing and the run aborts if the two results
/// disagree.
pub fn finite_diff_check(
    theta: &mut [f64],
    groups: &[ParamGroup],
    analytic: &[f64],
    eval: &mut dyn FnMut(&[f64]) -> (f64, u64),
    epsilon: f64,
    tolerance: f64,
) -> Result<FdReport, GradCheckError> {
    let (v1, p1) = eval(theta);
    let (v2, p2) = eval(theta);
    if v1.to_bits() != v2.to_bits() || p1 != p2 {
        return Err(GradCheckError::NonDeterministic(format!(
            "two evaluations at the same point gave {:?}/{:016x} and {:?}/{:016x}; \
             fix the seed or switch stochastic layers to a frozen mask",
            v1, p1, v2, p2
        )));
    }
    let base_pattern = p1;

    let mut report = FdReport {
        groups: Vec::new(),
        max_rel_err: 0.0,
        checked: 0,
        excluded: 0,
        tolerance,
    };
    for g in groups {
        let mut gr = GroupReport {
            name: g.name.clone(),
            checked: 0,
            excluded: 0,
            max_rel_err: 0.0,
            worst_index: g.start,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for i in g.start..g.start + g.len {
            let orig = theta[i];
            theta[i] = orig + epsilon;
            let (fp, pat_p) = eval(theta);
            theta[i] = orig - epsilon;
            let (fm, pat_m) = eval(theta);
            theta[i] = orig;
            if pat_p != base_pattern || pat_m != base_pattern {
                gr.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > gr.max_rel_err {
                gr.max_rel_err = rel;
                gr.worst_index = i;
                gr.worst_analytic = a;
                gr.worst_numeric = numeric;
            }
            gr.checked += 1;
        }
        report.checked += gr.checked;
        report.excluded += gr.excluded;
        report.max_rel_err = report.max_rel_err.max(gr.max_rel_err);
        report.groups.push(gr);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// the reduced-model suite

pub fn flatten_params(net: &mut LvNet<f64>) -> (Vec<f64>, Vec<ParamGroup>) {
    let mut theta = Vec::new();
    let mut groups = Vec::new();
    net.visit_trainable(|name, t| {
        groups.push(ParamGroup {
            name: name.to_string(),
            start: theta.len(),
            len: t.data.len(),
        });
        theta.extend_from_slice(&t.data);
    });
    (theta, groups)
}

pub fn write_params(net: &mut LvNet<f64>, theta: &[f64]) {
    let mut pos = 0;
    net.visit_trainable(|_, t| {
        let n = t.data.len();
        t.data.copy_from_slice(&theta[pos..pos + n]);
        pos += n;
    });
    assert_eq!(pos, theta.len(), "parameter vector length mismatch");
}

pub fn flatten_grads(net: &mut LvNet<f64>) -> Vec<f64> {
    let mut g = Vec::new();
    net.visit_trainable(|name, t| {
        let grad = t
            .grad
            .as_ref()
            .unwrap_or_else(|| panic!("{} has no gradient buffer", name));
        g.extend_from_slice(grad);
    });
    g
}

fn fold_column_zero_bits(w: &Tensor<f64>, h: &mut Fnv64) {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    for j in 0..cols {
        let mut sq = 0.0;
        for i in 0..rows {
            let v = w.data[i * cols + j];
            sq += v * v;
        }
        h.write_bool(sq == 0.0);
    }
}

/// Full-objective gradient check on the reduced architecture: 8×8 frames,
/// two conv blocks, 6-d embedding, hidden size 4, two frames, all four
/// tasks plus both regularizers, train mode with a frozen dropout mask.
pub fn run_reduced_suite(seed: u64) -> Result<FdReport, GradCheckError> {
    let cfg = ObjectiveConfig {
        lambda1: 0.1,
        lambda2: 0.1,
        temporal_boundary: TemporalBoundary::Cyclic,
        enabled: TaskSet::all(),
    };
    let mut net = LvNet::<f64>::new(ModelConfig::reduced()).expect("reduced config is valid");
    net.init_params(seed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let frames = 2usize;
    let x = Tensor::from_vec(
        &[frames, 1, 8, 8],
        (0..frames * 64).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let rows: Vec<[f64; 11]> = (0..frames)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..0.5)))
        .collect();
    let targets = vec![SequenceTargets::from_rows(&rows, &[0, 1])];

    // Train mode exercises the batch-statistics batchnorm backward; the
    // dropout mask is a pure function of the fixed ctx seed, and running
    // statistics are left untouched so repeated evaluations agree.
    let ctx = ForwardCtx {
        mode: Mode::Train,
        seed: seed ^ 0xD06,
        update_stats: false,
    };

    let (mut theta, groups) = flatten_params(&mut net);

    let mut eval_net = net.clone();
    let eval_x = x.clone();
    let eval_targets = targets.clone();
    let mut eval = move |theta: &[f64]| -> (f64, u64) {
        write_params(&mut eval_net, theta);
        let (preds, cache) = eval_net
            .forward_sequence(&eval_x, &ctx)
            .expect("forward on fixed shapes");
        let mut h = Fnv64::new();
        cache.fold_pattern(&mut h);
        let _ = objective_pred_grads(&[preds.clone()], &eval_targets, &cfg, Some(&mut h));
        fold_column_zero_bits(&eval_net.head_area.w, &mut h);
        fold_column_zero_bits(&eval_net.head_dim.w, &mut h);
        fold_column_zero_bits(&eval_net.head_rwt.w, &mut h);
        let b = total_objective(
            &[preds],
            &eval_targets,
            &HeadWeights {
                area: &eval_net.head_area.w,
                dim: &eval_net.head_dim.w,
                rwt: &eval_net.head_rwt.w,
            },
            &cfg,
        )
        .expect("objective on fixed shapes");
        (b.total, h.finish())
    };

    // Analytic gradients at the base point.
    write_params(&mut net, &theta);
    net.zero_grads();
    let (preds, cache) = net.forward_sequence(&x, &ctx).expect("forward");
    let grads = objective_pred_grads(&[preds], &targets, &cfg, None).expect("grads");
    net.backward_sequence(&cache, &grads[0], true).expect("backward");
    let l1 = cfg.lambda1;
    add_group_lasso_grad(&mut net.head_area.w, l1, None);
    add_group_lasso_grad(&mut net.head_dim.w, l1, None);
    add_group_lasso_grad(&mut net.head_rwt.w, l1, None);
    let analytic = flatten_grads(&mut net);

    finite_diff_check(
        &mut theta,
        &groups,
        &analytic,
        &mut eval,
        DEFAULT_EPSILON,
        DEFAULT_TOLERANCE,
    )
}
