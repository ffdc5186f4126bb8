//! Finite-difference oracle for every backward rule.
//!
//! The oracle only ever runs forward passes: each coordinate is nudged by
//! `±h` and the scalar loss re-evaluated. Analytic gradients come from the
//! layers' own backward code and are compared coordinate by coordinate.
//!
//! A coordinate is excluded when the function is not smooth around it:
//! ReLU inputs within `kink_margin` of zero, max-pool windows whose top two
//! values are that close, and, for whole networks, any nudge that flips a
//! ReLU sign or a pooling argmax somewhere downstream.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::SamplingTriplet;
use crate::layers::{
    cross_entropy_loss, maxpool_forward, softmax_backward, softmax_ce_backward, softmax_forward, BatchNorm,
    BatchNormState, Conv2d, Data, Dense, Flatten, Layer, MaxPool, Mode, Relu,
};
use crate::network::{ArchSpec, LayerSpec, Network, Shortcut};
use crate::parallel::{self, Execution};
use crate::tensor::{Matrix, Tensor4, Vector};

/// Steps tried when looking for the best-behaved `h`.
pub const STEP_SWEEP: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub kink_margin: f64,
    /// Absolute disagreement treated as agreement, for true zeros where the
    /// relative error is all rounding noise.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-5,
            tolerance: 1e-6,
            kink_margin: 1e-3,
            abs_floor: 1e-12,
            seed: 17,
        }
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h`
pub fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, params: &[f64], i: usize, h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Usage(format!("finite-difference step must be positive, got {h}")));
    }
    let mut p = params.to_vec();
    p[i] = params[i] + h;
    let up = f(&p)?;
    p[i] = params[i] - h;
    let down = f(&p)?;
    if !up.is_finite() || !down.is_finite() {
        return Err(Error::Numeric(format!("probe loss at coordinate {i}")));
    }
    Ok((up - down) / (2.0 * h))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorstCoordinate {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub target: String,
    pub kind: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub passed: bool,
    pub tolerance: f64,
    pub step: f64,
    /// Step from [`STEP_SWEEP`] with the smallest maximum relative error.
    pub best_step: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// One array of coordinates under test: its current values, the analytic
/// gradient and a statically excluded mask.
#[derive(Clone, Debug)]
pub struct Block {
    pub name: String,
    pub values: Vec<f64>,
    pub analytic: Vec<f64>,
    pub excluded: Vec<bool>,
}

impl Block {
    pub fn new(name: impl Into<String>, values: Vec<f64>, analytic: Vec<f64>) -> Block {
        let excluded = vec![false; values.len()];
        Block {
            name: name.into(),
            values,
            analytic,
            excluded,
        }
    }

    pub fn with_excluded(mut self, excluded: Vec<bool>) -> Block {
        self.excluded = excluded;
        self
    }
}

/// Loss value plus a fingerprint of the piecewise-smooth regime it came
/// from. Nudges that change the regime are not trusted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub regime: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Probe {
        Probe { loss, regime: 0 }
    }
}

struct Sweep {
    numeric: Vec<Option<f64>>,
}

fn sweep(blocks: &[Block], loss: &(dyn Fn(&[Vec<f64>]) -> Result<Probe> + Sync), h: f64, base: u64) -> Result<Sweep> {
    let coords: Vec<(usize, usize)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, blk)| (0..blk.values.len()).map(move |i| (b, i)))
        .collect();
    let values: Vec<Vec<f64>> = blocks.iter().map(|b| b.values.clone()).collect();
    let results = parallel::map_indices(Execution::default(), coords.len(), |c| -> Result<Option<f64>> {
        let (b, i) = coords[c];
        if blocks[b].excluded[i] {
            return Ok(None);
        }
        let mut v = values.clone();
        v[b][i] = values[b][i] + h;
        let up = loss(&v)?;
        v[b][i] = values[b][i] - h;
        let down = loss(&v)?;
        if !up.loss.is_finite() || !down.loss.is_finite() {
            return Err(Error::Numeric(format!("probe loss at {}[{i}]", blocks[b].name)));
        }
        if up.regime != base || down.regime != base {
            return Ok(None);
        }
        Ok(Some((up.loss - down.loss) / (2.0 * h)))
    });
    Ok(Sweep {
        numeric: results.into_iter().collect::<Result<_>>()?,
    })
}

struct Summary {
    max_rel: f64,
    max_abs: f64,
    worst: Option<WorstCoordinate>,
    checked: usize,
    excluded: usize,
}

fn summarize(blocks: &[Block], numeric: &[Option<f64>], abs_floor: f64) -> Summary {
    let mut s = Summary {
        max_rel: 0.0,
        max_abs: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
    };
    let mut worst_key = (-1.0, -1.0);
    let analytic = blocks
        .iter()
        .flat_map(|b| b.analytic.iter().enumerate().map(move |(i, &a)| (b.name.as_str(), i, a)));
    for ((tensor, index, a), n) in analytic.zip(numeric) {
        let Some(n) = *n else {
            s.excluded += 1;
            continue;
        };
        s.checked += 1;
        let abs = (a - n).abs();
        let rel = if abs <= abs_floor { 0.0 } else { relative_error(a, n) };
        s.max_abs = s.max_abs.max(abs);
        s.max_rel = s.max_rel.max(rel);
        if (rel, abs) > worst_key {
            worst_key = (rel, abs);
            s.worst = Some(WorstCoordinate {
                tensor: tensor.to_string(),
                index,
                analytic: a,
                numeric: n,
            });
        }
    }
    s
}

/// Compares every block's analytic gradient with central differences of `loss`.
pub fn check_blocks(
    target: &str,
    kind: &str,
    blocks: Vec<Block>,
    loss: &(dyn Fn(&[Vec<f64>]) -> Result<Probe> + Sync),
    cfg: &CheckConfig,
) -> Result<GradCheckReport> {
    for b in &blocks {
        if b.values.len() != b.analytic.len() || b.values.len() != b.excluded.len() {
            return Err(Error::shape("check_blocks", &b.name, b.analytic.len()));
        }
    }
    let values: Vec<Vec<f64>> = blocks.iter().map(|b| b.values.clone()).collect();
    let base = loss(&values)?.regime;
    let main = summarize(&blocks, &sweep(&blocks, loss, cfg.step, base)?.numeric, cfg.abs_floor);
    let mut best = (f64::INFINITY, cfg.step);
    for h in STEP_SWEEP {
        let s = if h == cfg.step {
            main.max_rel
        } else {
            summarize(&blocks, &sweep(&blocks, loss, h, base)?.numeric, cfg.abs_floor).max_rel
        };
        if s < best.0 {
            best = (s, h);
        }
    }
    Ok(GradCheckReport {
        target: target.to_string(),
        kind: kind.to_string(),
        max_rel_error: main.max_rel,
        max_abs_error: main.max_abs,
        passed: main.max_rel <= cfg.tolerance,
        worst: main.worst,
        tolerance: cfg.tolerance,
        step: cfg.step,
        best_step: best.1,
        checked: main.checked,
        excluded: main.excluded,
    })
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn half_squared_distance(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum()
}

/// Checks one layer against the probe loss `½·Σ(output − target)²`, with a
/// fixed random target, over its input and all of its parameters.
pub fn check_layer_instance(target: &str, layer: &Layer, x: &Data, cfg: &CheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
    let out_shape = layer.output_shape(x.shape())?;
    let goal = random_vec(&mut rng, out_shape.samples() * out_shape.per_sample());

    let mut trained = layer.clone();
    let out = trained.forward(x, Mode::Train)?;
    let delta: Vec<f64> = out.values().iter().zip(&goal).map(|(o, t)| o - t).collect();
    let delta_in = trained
        .backward(&out.with_values(delta)?, true)?
        .ok_or_else(|| Error::Usage("layer returned no input gradient".into()))?;

    let mut blocks = vec![Block::new("input", x.values().to_vec(), delta_in.values().to_vec())
        .with_excluded(layer.kinks(x, cfg.kink_margin)?)];
    for (orig, with_grad) in layer.params().iter().zip(trained.params()) {
        blocks.push(Block::new(orig.name.clone(), orig.value.clone(), with_grad.grad.clone()));
    }

    let loss = |vals: &[Vec<f64>]| -> Result<Probe> {
        let mut l = layer.clone();
        for (p, v) in l.params_mut().into_iter().zip(&vals[1..]) {
            p.value.clone_from(v);
        }
        let out = l.forward(&x.with_values(vals[0].clone())?, Mode::Train)?;
        Ok(Probe::smooth(half_squared_distance(out.values(), &goal)))
    };
    check_blocks(target, layer.kind(), blocks, &loss, cfg)
}

/// Softmax alone, under the same squared probe loss.
pub fn check_softmax(logits: &Matrix, cfg: &CheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x50F7);
    let goal = random_vec(&mut rng, logits.data().len());
    let y = softmax_forward(logits)?;
    let delta = Matrix::new(y.rows(), y.cols(), y.data().iter().zip(&goal).map(|(o, t)| o - t).collect())?;
    let analytic = softmax_backward(&y, &delta)?;
    let (r, c) = logits.shape();
    let loss = |vals: &[Vec<f64>]| -> Result<Probe> {
        let y = softmax_forward(&Matrix::new(r, c, vals[0].clone())?)?;
        Ok(Probe::smooth(half_squared_distance(y.data(), &goal)))
    };
    let blocks = vec![Block::new("logits", logits.data().to_vec(), analytic.into_data())];
    check_blocks("softmax", "softmax", blocks, &loss, cfg)
}

/// Softmax followed by cross-entropy, against the fused `Y_pred − Y_gt` rule.
pub fn check_softmax_ce(logits: &Matrix, labels: &Matrix, cfg: &CheckConfig) -> Result<GradCheckReport> {
    let analytic = softmax_ce_backward(&softmax_forward(logits)?, labels)?;
    let (r, c) = logits.shape();
    let loss = |vals: &[Vec<f64>]| -> Result<Probe> {
        let y = softmax_forward(&Matrix::new(r, c, vals[0].clone())?)?;
        Ok(Probe::smooth(cross_entropy_loss(&y, labels)?.total))
    };
    let blocks = vec![Block::new("logits", logits.data().to_vec(), analytic.into_data())];
    check_blocks("softmax_ce", "softmax", blocks, &loss, cfg)
}

/// What a network-level check differentiates.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Summed cross-entropy of the softmax of the logits (the training loss).
    CrossEntropy(Matrix),
    /// `½·Σ(logits − target)²`.
    Squared(Matrix),
}

fn regime(net: &Network, acts: &[Data]) -> Result<u64> {
    let mut h = DefaultHasher::new();
    for (layer, input) in net.layers().iter().zip(acts) {
        match layer {
            Layer::Relu(_) => input.values().iter().for_each(|&v| (v >= 0.0).hash(&mut h)),
            Layer::MaxPool(p) => maxpool_forward(input.as_image()?, p.sampling)?.1.argmax.hash(&mut h),
            _ => {}
        }
    }
    Ok(h.finish())
}

/// Checks every parameter coordinate of `net` on the batch `x`. Batch-norm
/// layers use batch statistics, as in training.
pub fn check_network(target: &str, net: &Network, x: &Tensor4, objective: &Objective, cfg: &CheckConfig) -> Result<GradCheckReport> {
    let mut trained = net.clone();
    let logits = trained.forward(x, Mode::Train)?.logits;
    match objective {
        Objective::CrossEntropy(labels) => {
            trained.backward(&softmax_forward(&logits)?, labels)?;
        }
        Objective::Squared(goal) => {
            trained.backward_with_delta(logits.sub(goal)?)?;
        }
    }
    let blocks: Vec<Block> = net
        .params()
        .iter()
        .zip(trained.params())
        .map(|(orig, g)| Block::new(orig.name.clone(), orig.value.clone(), g.grad.clone()))
        .collect();

    let loss = |vals: &[Vec<f64>]| -> Result<Probe> {
        let mut probe = net.clone();
        for (p, v) in probe.params_mut().into_iter().zip(vals) {
            p.value.clone_from(v);
        }
        let acts = probe.forward_trace(x, Mode::Train)?;
        let logits = acts.last().expect("non-empty").as_flat()?;
        let value = match objective {
            Objective::CrossEntropy(labels) => cross_entropy_loss(&softmax_forward(logits)?, labels)?.total,
            Objective::Squared(goal) => half_squared_distance(logits.data(), goal.data()),
        };
        Ok(Probe {
            loss: value,
            regime: regime(&probe, &acts)?,
        })
    };
    check_blocks(target, "network", blocks, &loss, cfg)
}

fn random_tensor(rng: &mut ChaCha8Rng, n: usize, d: usize, r: usize) -> Tensor4 {
    Tensor4::from_fn(n, d, r, r, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Matrix {
    let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    Matrix::from_fn(n, classes, |i, j| if picks[i] == j { 1.0 } else { 0.0 })
}

fn triplet(k: usize, s: usize, p: usize) -> SamplingTriplet {
    SamplingTriplet::new(k, s, p).expect("positive kernel and stride")
}

/// Convolution, ReLU, max-pool, flatten and a dense head: 210 parameters.
pub fn miniature_conv_arch() -> ArchSpec {
    ArchSpec {
        input_depth: 1,
        input_size: 8,
        layers: vec![
            LayerSpec::Conv {
                filters: 2,
                sampling: triplet(3, 1, 0),
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                sampling: triplet(2, 2, 0),
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { outputs: 10 },
        ],
        shortcuts: vec![],
    }
}

/// Dense stack with an identity skip over two dense+ReLU pairs.
pub fn miniature_shortcut_arch() -> ArchSpec {
    ArchSpec {
        input_depth: 1,
        input_size: 4,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: 4 },
        ],
        shortcuts: vec![Shortcut { from: 3, to: 7 }],
    }
}

/// One residual block: `A3 = relu(dense(A1)) → dense`, plus `A1` added at `A4`.
fn residual_block_arch() -> ArchSpec {
    ArchSpec {
        input_depth: 1,
        input_size: 2,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { outputs: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: 4 },
        ],
        shortcuts: vec![Shortcut { from: 1, to: 4 }],
    }
}

/// Names and kinds of the checks run by [`run_suite`].
pub const SUITE: [(&str, &str); 15] = [
    ("softmax", "softmax"),
    ("softmax_ce", "softmax"),
    ("relu", "relu"),
    ("relu_image", "relu"),
    ("dense", "dense"),
    ("maxpool", "maxpool"),
    ("maxpool_overlap", "maxpool"),
    ("flatten", "flatten"),
    ("conv", "conv"),
    ("conv_padded", "conv"),
    ("batchnorm", "batchnorm"),
    ("batchnorm_image", "batchnorm"),
    ("shortcut", "shortcut"),
    ("network_conv", "network"),
    ("network_shortcut", "network"),
];

/// Runs one named check from [`SUITE`].
pub fn run_check(target: &str, cfg: &CheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let image = |rng: &mut ChaCha8Rng, n, d, r| Data::Image(random_tensor(rng, n, d, r));
    match target {
        "softmax" => check_softmax(&Matrix::from_fn(3, 5, |_, _| rng.gen_range(-3.0..3.0)), cfg),
        "softmax_ce" => {
            let logits = Matrix::from_fn(3, 5, |_, _| rng.gen_range(-3.0..3.0));
            check_softmax_ce(&logits, &random_labels(&mut rng, 3, 5), cfg)
        }
        "relu" => {
            let mut x = Matrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
            x.set(0, 2, 0.0);
            check_layer_instance(target, &Layer::Relu(Relu::new()), &Data::Flat(x), cfg)
        }
        "relu_image" => check_layer_instance(target, &Layer::Relu(Relu::new()), &image(&mut rng, 2, 2, 3), cfg),
        "dense" => {
            let layer = Dense::new("fc", Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0)), Vector::new(random_vec(&mut rng, 3)))?;
            let x = Matrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
            check_layer_instance(target, &Layer::Dense(layer), &Data::Flat(x), cfg)
        }
        "maxpool" => check_layer_instance(target, &Layer::MaxPool(MaxPool::new(triplet(2, 2, 0))), &image(&mut rng, 2, 2, 4), cfg),
        "maxpool_overlap" => {
            check_layer_instance(target, &Layer::MaxPool(MaxPool::new(triplet(3, 2, 1))), &image(&mut rng, 1, 2, 5), cfg)
        }
        "flatten" => check_layer_instance(target, &Layer::Flatten(Flatten::new()), &image(&mut rng, 2, 2, 3), cfg),
        "conv" | "conv_padded" => {
            let (d_in, d_out, r, p) = if target == "conv" { (2, 3, 6, triplet(3, 2, 0)) } else { (2, 2, 6, triplet(3, 2, 1)) };
            let n = if target == "conv" { 2 } else { 1 };
            let w = random_tensor(&mut rng, d_out, d_in, 3);
            let layer = Conv2d::new("conv", w, Vector::new(random_vec(&mut rng, d_out)), p)?;
            check_layer_instance(target, &Layer::Conv(layer), &image(&mut rng, n, d_in, r), cfg)
        }
        "batchnorm" | "batchnorm_image" => {
            let (features, x) = if target == "batchnorm" {
                (4, Data::Flat(Matrix::from_fn(7, 4, |_, _| rng.gen_range(-1.0..1.0))))
            } else {
                (3, image(&mut rng, 2, 3, 3))
            };
            let mut state = BatchNormState::new("bn", features);
            state.weight.value = random_vec(&mut rng, features);
            state.bias.value = random_vec(&mut rng, features);
            check_layer_instance(target, &Layer::BatchNorm(BatchNorm::new(state)), &x, cfg)
        }
        "shortcut" => {
            let net = Network::build(residual_block_arch(), cfg.seed)?;
            let x = random_tensor(&mut rng, 3, 1, 2);
            let goal = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
            let mut report = check_network(target, &net, &x, &Objective::Squared(goal), cfg)?;
            report.kind = "shortcut".into();
            Ok(report)
        }
        "network_conv" => {
            let net = Network::build(miniature_conv_arch(), cfg.seed)?;
            let x = Tensor4::from_fn(3, 1, 8, 8, |_, _, _, _| rng.gen_range(0.0..1.0));
            check_network(target, &net, &x, &Objective::CrossEntropy(random_labels(&mut rng, 3, 10)), cfg)
        }
        "network_shortcut" => {
            let net = Network::build(miniature_shortcut_arch(), cfg.seed)?;
            let x = Tensor4::from_fn(3, 1, 4, 4, |_, _, _, _| rng.gen_range(0.0..1.0));
            check_network(target, &net, &x, &Objective::CrossEntropy(random_labels(&mut rng, 3, 4)), cfg)
        }
        other => Err(Error::Usage(format!("unknown gradient check `{other}`"))),
    }
}

/// Runs every check in [`SUITE`] whose target or kind equals `filter`
/// (all of them when `filter` is `None`).
pub fn run_suite(filter: Option<&str>, cfg: &CheckConfig) -> Result<Vec<GradCheckReport>> {
    let selected: Vec<&str> = SUITE
        .iter()
        .filter(|(t, k)| filter.is_none_or(|f| f == *t || f == *k))
        .map(|(t, _)| *t)
        .collect();
    if selected.is_empty() {
        let kinds: Vec<&str> = SUITE.iter().map(|(t, _)| *t).collect();
        return Err(Error::Usage(format!(
            "no gradient check matches `{}`; known: {}",
            filter.unwrap_or_default(),
            kinds.join(", ")
        )));
    }
    selected.into_iter().map(|t| run_check(t, cfg)).collect()
}

/// Plain-text table, one row per report.
pub fn render_table(reports: &[GradCheckReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<10} {:>12} {:>12} {:>8} {:>8} {:>8}  status",
        "target", "kind", "max_rel", "max_abs", "checked", "skipped", "best_h"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<18} {:<10} {:>12.3e} {:>12.3e} {:>8} {:>8} {:>8.0e}  {}",
            r.target,
            r.kind,
            r.max_rel_error,
            r.max_abs_error,
            r.checked,
            r.excluded,
            r.best_step,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_examples() {
        let sq = |p: &[f64]| Ok(p[0] * p[0]);
        assert!((central_difference(sq, &[3.0], 0, 1e-5).unwrap() - 6.0).abs() < 1e-9);
        let flat = |_: &[f64]| Ok(4.2);
        assert!(central_difference(flat, &[1.0, 2.0], 1, 1e-5).unwrap().abs() < 1e-10);
        let h = 1e-5;
        let exp = |p: &[f64]| Ok(p[0].exp());
        let got = central_difference(exp, &[0.0], 0, h).unwrap();
        assert!((got - 1.0).abs() < h * h / 6.0 + 1e-10);
        assert!(central_difference(sq, &[1.0], 0, 0.0).is_err());
        assert!(matches!(central_difference(|_: &[f64]| Ok(f64::NAN), &[1.0], 0, h), Err(Error::Numeric(_))));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relu_plant_is_excluded() {
        let r = run_check("relu", &CheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.excluded >= 1);
    }

    #[test]
    fn dense_and_conv_pass() {
        for t in ["dense", "conv", "conv_padded", "batchnorm"] {
            let r = run_check(t, &CheckConfig::default()).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn tight_tolerance_fails() {
        let cfg = CheckConfig {
            tolerance: 1e-12,
            ..CheckConfig::default()
        };
        assert!(!run_check("conv", &cfg).unwrap().passed);
    }

    #[test]
    fn filter_and_table() {
        let reports = run_suite(Some("maxpool"), &CheckConfig::default()).unwrap();
        assert_eq!(reports.len(), 2);
        let table = render_table(&reports);
        assert!(table.lines().count() == 3 && table.contains("maxpool_overlap"));
        assert!(run_suite(Some("lstm"), &CheckConfig::default()).is_err());
    }
}
