//! Randomized agreement checks between the conditional backward pass, the
//! dense chain rule and finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::{Activation, SmoothStep};
use crate::backward::{
    conditional_backward, dense_backward, fd_gradients, fd_step, DenseGradients, FdGradients, ProbeLoss,
};
use crate::ensemble::Mode;
use crate::error::Result;
use crate::forward::{compute_dots, conditional_forward, dense_forward, reachable_stats, ForwardTrace};
use crate::matrix::Matrix;
use crate::nn::{softmax_cross_entropy, BatchNorm, Model, TrainConfig};
use crate::parallel::Parallelism;
use crate::tree::{TreeParams, TreeTopology};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

/// Passes if `|a - b| <= max(rel * max(|a|, |b|), abs)`.
#[inline]
pub fn close(a: f64, b: f64, tol: Tolerance) -> bool {
    (a - b).abs() <= (tol.rel * a.abs().max(b.abs())).max(tol.abs)
}

#[inline]
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Outcome of one comparison; `failure` describes the first mismatch.
#[derive(Debug, Clone, Default)]
pub struct Comparison {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failure: Option<String>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    fn record(&mut self, what: &str, a: f64, b: f64, tol: Tolerance) {
        self.checked += 1;
        let err = rel_err(a, b, tol.abs / tol.rel);
        if err > self.max_rel_err {
            self.max_rel_err = err;
        }
        if !close(a, b, tol) && self.failure.is_none() {
            self.failure = Some(format!("{what}: {a:e} vs {b:e}"));
        }
    }

    pub fn merge(&mut self, other: Comparison) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        if self.failure.is_none() {
            self.failure = other.failure;
        }
    }
}

/// Analytic gradients against central differences, skipping flagged coordinates.
pub fn compare_with_fd(analytic: &DenseGradients, fd: &FdGradients, tol: Tolerance) -> Comparison {
    let mut cmp = Comparison::default();
    for (j, (&a, &b)) in analytic.d_x.iter().zip(&fd.grads.d_x).enumerate() {
        if fd.flag_x[j] {
            cmp.skipped += 1;
        } else {
            cmp.record(&format!("dL/dx[{j}]"), a, b, tol);
        }
    }
    let p = analytic.d_w.cols();
    for (idx, (&a, &b)) in analytic
        .d_w
        .as_slice()
        .iter()
        .zip(fd.grads.d_w.as_slice())
        .enumerate()
    {
        if fd.flag_w[idx] {
            cmp.skipped += 1;
        } else {
            cmp.record(&format!("dL/dW[{}][{}]", idx / p, idx % p), a, b, tol);
        }
    }
    let k = analytic.d_o.cols();
    for (idx, (&a, &b)) in analytic.d_o.as_slice().iter().zip(fd.grads.d_o.as_slice()).enumerate() {
        cmp.record(&format!("dL/dO[{}][{}]", idx / k, idx % k), a, b, tol);
    }
    cmp
}

/// Entrywise agreement between the conditional and dense gradients, scaled
/// by each tensor's largest magnitude. Outside the support given by the
/// trace (rows in `F`, leaves in `R`) the dense gradients must be exactly 0.
pub fn compare_with_dense(
    conditional: &DenseGradients,
    dense: &DenseGradients,
    trace: &ForwardTrace,
    rel: f64,
) -> Comparison {
    let mut cmp = Comparison::default();
    let mut tensor = |name: &str, a: &[f64], b: &[f64], width: usize, support: &[bool]| {
        let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = Tolerance {
            rel,
            abs: rel * scale,
        };
        for (idx, (&x, &y)) in a.iter().zip(b).enumerate() {
            let row = idx / width.max(1);
            if !support[row] {
                cmp.checked += 1;
                if (x != 0.0 || y != 0.0) && cmp.failure.is_none() {
                    cmp.failure = Some(format!(
                        "{name}[{row}] outside support is not exactly zero: {x:e} vs {y:e}"
                    ));
                }
            } else {
                cmp.record(&format!("{name}[{row}][{}]", idx % width.max(1)), x, y, tol);
            }
        }
    };
    let p = conditional.d_x.len();
    tensor("dL/dx", &conditional.d_x, &dense.d_x, p, &[true]);
    let mut in_f = vec![false; conditional.d_w.rows()];
    for f in &trace.fractional_nodes {
        in_f[f.node.0] = true;
    }
    tensor(
        "dL/dW",
        conditional.d_w.as_slice(),
        dense.d_w.as_slice(),
        conditional.d_w.cols(),
        &in_f,
    );
    let mut in_r = vec![false; conditional.d_o.rows()];
    for l in &trace.reachable_leaves {
        in_r[l.leaf] = l.prob > 0.0;
    }
    tensor(
        "dL/dO",
        conditional.d_o.as_slice(),
        dense.d_o.as_slice(),
        conditional.d_o.cols(),
        &in_r,
    );
    cmp
}

/// A random tree, input and smooth-step width.
#[derive(Debug, Clone)]
pub struct Instance {
    pub topo: TreeTopology,
    pub params: TreeParams,
    pub act: SmoothStep,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub max_depth: usize,
    pub max_p: usize,
    pub max_k: usize,
    pub gammas: Vec<f64>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            max_depth: 8,
            max_p: 20,
            max_k: 5,
            gammas: vec![0.05, 0.5, 1.0],
        }
    }
}

/// Draws an instance whose dot products have standard deviation
/// `c * gamma` with `c` in {0.3, 1, 3}, so hard and fractional nodes mix.
pub fn random_instance(rng: &mut impl Rng, spec: &InstanceSpec) -> Instance {
    let depth = rng.random_range(1..=spec.max_depth);
    let p = rng.random_range(1..=spec.max_p);
    let k = rng.random_range(1..=spec.max_k);
    let gamma = spec.gammas[rng.random_range(0..spec.gammas.len())];
    let spread = [0.3, 1.0, 3.0][rng.random_range(0..3)];
    let topo = TreeTopology::new(depth).expect("depth within range");
    let mut params = TreeParams::init(&topo, p, k, 0).expect("dims >= 1");
    let sigma = spread * gamma / (p as f64).sqrt();
    for v in params.w.as_mut_slice() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sigma * z;
    }
    for v in params.o.as_mut_slice() {
        *v = StandardNormal.sample(rng);
    }
    let x = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    Instance {
        topo,
        params,
        act: SmoothStep::new(gamma).expect("gamma > 0"),
        x,
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    pub spec: InstanceSpec,
    pub fd_tol: Tolerance,
    pub dense_rel: f64,
    /// Compare against finite differences as well as the dense pass.
    pub finite_differences: bool,
    /// Adds a small offset to one analytic entry so the harness must fail.
    pub corrupt: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 0,
            spec: InstanceSpec::default(),
            fd_tol: Tolerance { rel: 1e-5, abs: 1e-8 },
            dense_rel: 1e-12,
            finite_differences: true,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub trials: usize,
    pub fd: Comparison,
    pub dense: Comparison,
    pub forward_max_rel_err: f64,
    pub structural_failures: usize,
    /// Seed of the first failing instance.
    pub failing_seed: Option<u64>,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

pub fn instance_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (trial as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Runs every check on `trials` random instances and three probe losses.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        trials: cfg.trials,
        ..Default::default()
    };
    for trial in 0..cfg.trials {
        let seed = instance_seed(cfg.seed, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, &cfg.spec);
        let label = rng.random_range(0..inst.params.output_dim());
        let fail = |report: &mut SuiteReport, msg: String| {
            if report.first_failure.is_none() {
                report.first_failure = Some(format!("instance seed {seed}: {msg}"));
                report.failing_seed = Some(seed);
            }
        };
        let act = Activation::SmoothStep(inst.act);
        let (out, trace) = conditional_forward(&inst.params, &inst.topo, &inst.act, &inst.x)?;
        let dense_out = dense_forward(&inst.params, &inst.topo, &act, &inst.x)?;
        let scale = out.logits.iter().chain(&dense_out.logits).fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in out.logits.iter().zip(&dense_out.logits) {
            let err = (a - b).abs() / scale.max(f64::MIN_POSITIVE);
            report.forward_max_rel_err = report.forward_max_rel_err.max(err);
            if err > cfg.dense_rel {
                fail(&mut report, format!("forward mismatch {a:e} vs {b:e}"));
            }
        }
        let stats = reachable_stats(&trace);
        if stats.fractional + 1 != stats.leaves {
            report.structural_failures += 1;
            fail(&mut report, format!("|F| = {} but U = {}", stats.fractional, stats.leaves));
        }

        for loss in [
            ProbeLoss::SumOfLogits,
            ProbeLoss::SquaredNorm,
            ProbeLoss::SoftmaxCrossEntropy { label },
        ] {
            let dl_dt = loss.grad(&out.logits);
            let sparse = conditional_backward(&inst.params, &inst.x, &trace, &dl_dt)?;
            if sparse.visited != 2 * stats.leaves - 1
                || sparse.visited > stats.internal + stats.leaves
            {
                report.structural_failures += 1;
                fail(
                    &mut report,
                    format!(
                        "backward visited {} nodes, U = {}, N = {}",
                        sparse.visited, stats.leaves, stats.internal
                    ),
                );
            }
            let mut analytic = sparse.to_dense(&inst.topo);
            if cfg.corrupt {
                analytic.d_x[0] += 1e-3 * (1.0 + analytic.d_x[0].abs());
            }
            let dense = dense_backward(&inst.params, &inst.topo, &act, &inst.x, &dl_dt)?;
            let cmp = compare_with_dense(&analytic, &dense, &trace, cfg.dense_rel);
            if let Some(f) = &cmp.failure {
                fail(&mut report, format!("{loss:?} vs dense: {f}"));
            }
            report.dense.merge(cmp);

            if !cfg.finite_differences {
                continue;
            }
            let fd = fd_gradients(&inst.params, &inst.topo, &act, &inst.x, &|t| loss.value(t))?;
            let cmp = compare_with_fd(&analytic, &fd, cfg.fd_tol);
            if let Some(f) = &cmp.failure {
                fail(&mut report, format!("{loss:?} vs finite differences: {f}"));
            }
            report.fd.merge(cmp);
        }
    }
    Ok(report)
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, mean: f64, sd: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + sd * z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("rows * cols values")
}

/// Batch-norm backward against central differences of `sum(R * BN(X))`
/// with random `R`, over inputs, scale and shift.
pub fn check_batchnorm(seed: u64, tol: Tolerance) -> Result<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let p = rng.random_range(1..=6);
    let mut bn = BatchNorm::new(p, 0.99, 1e-3)?;
    {
        let (scale, shift) = bn.params_mut();
        scale.iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));
        shift.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let x = normal_matrix(&mut rng, n, p, 1.0, 2.0);
    let r = normal_matrix(&mut rng, n, p, 0.0, 1.0);
    let loss = |bn: &BatchNorm, x: &Matrix| -> Result<f64> {
        let (y, _) = bn.clone().forward(x, Mode::Train)?;
        Ok(crate::matrix::dot(y.as_slice(), r.as_slice()))
    };
    let mut probe = bn.clone();
    let (_, cache) = probe.forward(&x, Mode::Train)?;
    let g = probe.backward(&cache.expect("train mode returns a cache"), &r)?;

    let mut cmp = Comparison::default();
    for i in 0..n * p {
        let h = fd_step(x.as_slice()[i]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.as_mut_slice()[i] += h;
        xm.as_mut_slice()[i] -= h;
        let fd = (loss(&bn, &xp)? - loss(&bn, &xm)?) / (2.0 * h);
        cmp.record(&format!("BN dL/dx[{i}]"), g.d_x.as_slice()[i], fd, tol);
    }
    for j in 0..p {
        for which in 0..2 {
            let (mut bp, mut bm) = (bn.clone(), bn.clone());
            let theta = if which == 0 { bn.scale()[j] } else { bn.shift()[j] };
            let h = fd_step(theta);
            if which == 0 {
                bp.params_mut().0[j] += h;
                bm.params_mut().0[j] -= h;
            } else {
                bp.params_mut().1[j] += h;
                bm.params_mut().1[j] -= h;
            }
            let fd = (loss(&bp, &x)? - loss(&bm, &x)?) / (2.0 * h);
            let (name, a) = if which == 0 { ("scale", g.d_scale[j]) } else { ("shift", g.d_shift[j]) };
            cmp.record(&format!("BN dL/d{name}[{j}]"), a, fd, tol);
        }
    }
    Ok(cmp)
}

/// Softmax cross-entropy gradient against central differences.
pub fn check_softmax_ce(seed: u64, tol: Tolerance) -> Result<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let k = rng.random_range(2..=10);
    let logits = normal_matrix(&mut rng, n, k, 0.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
    let mut cmp = Comparison::default();
    for i in 0..n * k {
        let h = fd_step(logits.as_slice()[i]);
        let (mut lp, mut lm) = (logits.clone(), logits.clone());
        lp.as_mut_slice()[i] += h;
        lm.as_mut_slice()[i] -= h;
        let fd = (softmax_cross_entropy(&lp, &labels)?.0 - softmax_cross_entropy(&lm, &labels)?.0) / (2.0 * h);
        cmp.record(&format!("CE dL/dt[{i}]"), grad.as_slice()[i], fd, tol);
    }
    Ok(cmp)
}

/// Which side of the smooth-step ramp every node of every tree is on, for
/// every sample of a train-mode pass.
fn ramp_regions(model: &Model, x: &Matrix) -> Result<Vec<i8>> {
    let gamma = match model.ensemble.activation() {
        Activation::SmoothStep(s) => s.gamma(),
        Activation::Logistic(_) => return Ok(Vec::new()),
    };
    let (y, _) = model.bn.clone().forward(x, Mode::Train)?;
    let mut dots = vec![0.0; model.ensemble.topology().num_internal()];
    let mut out = Vec::new();
    for row in y.iter_rows() {
        for tree in &model.ensemble.trees {
            compute_dots(tree, row, &mut dots);
            out.extend(dots.iter().map(|&t| {
                if t <= -gamma / 2.0 {
                    -1
                } else if t >= gamma / 2.0 {
                    1
                } else {
                    0
                }
            }));
        }
    }
    Ok(out)
}

fn network_loss(model: &Model, x: &Matrix, labels: &[usize], l2: f64) -> Result<f64> {
    let (y, _) = model.bn.clone().forward(x, Mode::Train)?;
    let fwd = model.ensemble.forward(&y, Mode::Infer, &Parallelism::serial())?;
    Ok(softmax_cross_entropy(&fwd.logits, labels)?.0 + model.ensemble.l2_penalty(l2))
}

/// End-to-end check of a small batch-norm plus tree-layer network
/// (`m = 2, d = 3, p = 5, k = 3`, batch 4, smooth-step) with cross-entropy
/// and an L2 term. Coordinates whose perturbation moves any node across a
/// ramp boundary are skipped.
pub fn check_end_to_end(seed: u64, tol: Tolerance) -> Result<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p, k) = (4, 5, 3);
    let l2 = 0.01;
    let cfg = TrainConfig {
        depth: 3,
        num_trees: 2,
        activation: Activation::smooth_step(1.0)?,
        seed,
        init_scale: 2.0,
        ..TrainConfig::default()
    };
    let mut model = Model::new(p, k, &cfg)?;
    {
        let mut params = model.param_slices_mut();
        params[0].iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        params[1].iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        for t in (3..params.len()).step_by(2) {
            params[t].iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        }
    }
    let x = normal_matrix(&mut rng, n, p, 0.5, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let analytic = model.clone().train_step(&x, &labels, l2, &Parallelism::serial())?;
    let base_regions = ramp_regions(&model, &x)?;

    let mut cmp = Comparison::default();
    let base: Vec<Vec<f64>> = model.clone().param_slices_mut().iter().map(|s| s.to_vec()).collect();
    for (t, grad) in analytic.grads.slices().into_iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let h = fd_step(base[t][i]);
            let (mut mp, mut mm) = (model.clone(), model.clone());
            mp.param_slices_mut()[t][i] += h;
            mm.param_slices_mut()[t][i] -= h;
            if ramp_regions(&mp, &x)? != base_regions || ramp_regions(&mm, &x)? != base_regions {
                cmp.skipped += 1;
                continue;
            }
            let fd = (network_loss(&mp, &x, &labels, l2)? - network_loss(&mm, &x, &labels, l2)?) / (2.0 * h);
            cmp.record(&format!("network tensor {t} entry {i}"), a, fd, tol);
        }
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_corruption_is_caught() {
        let cfg = SuiteConfig {
            trials: 25,
            seed: 3,
            ..SuiteConfig::default()
        };
        let report = run_suite(&cfg).unwrap();
        assert!(report.passed(), "{:?}", report.first_failure);
        assert!(report.fd.checked > 0 && report.dense.checked > 0);
        let bad = run_suite(&SuiteConfig { corrupt: true, ..cfg }).unwrap();
        assert!(!bad.passed());
        assert!(bad.failing_seed.is_some());
    }

    #[test]
    fn layer_checks_pass() {
        let tol = Tolerance { rel: 1e-5, abs: 1e-8 };
        for seed in 0..10 {
            let bn = check_batchnorm(seed, tol).unwrap();
            assert!(bn.passed(), "{:?}", bn.failure);
            let ce = check_softmax_ce(seed, tol).unwrap();
            assert!(ce.passed(), "{:?}", ce.failure);
        }
    }

    #[test]
    fn end_to_end_network_check() {
        let tol = Tolerance { rel: 1e-4, abs: 1e-8 };
        for seed in 0..5 {
            let cmp = check_end_to_end(seed, tol).unwrap();
            assert!(cmp.passed(), "seed {seed}: {:?}", cmp.failure);
            assert!(cmp.checked > 100, "{cmp:?}");
        }
    }
}
