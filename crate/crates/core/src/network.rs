//! Feedforward composition of layers with optional identity shortcuts.
//!
//! Activations are numbered `A0` (the input) to `AL`; layer `i` maps `A_i`
//! to `A_{i+1}`. A shortcut edge `(from, to)` adds `A_from` onto the output
//! of layer `to - 1`, so `A_to = f(A_{to-1}) + A_from`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::SamplingTriplet;
use crate::layers::{
    shortcut_add, softmax_ce_backward, BatchNorm, BatchNormState, Conv2d, Data, DataShape, Dense, Flatten, Layer,
    MaxPool, Mode, ParamTensor, Relu,
};
use crate::tensor::{Matrix, Tensor4, Vector};

/// One layer of an [`ArchSpec`], without its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { filters: usize, sampling: SamplingTriplet },
    Relu,
    BatchNorm,
    MaxPool { sampling: SamplingTriplet },
    Flatten,
    Dense { outputs: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

/// Identity skip from activation `from` to activation `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Shortcut {
    pub from: usize,
    pub to: usize,
}

/// Network architecture: input image geometry, layer stack and shortcuts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_depth: usize,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    pub shortcuts: Vec<Shortcut>,
}

impl ArchSpec {
    /// The LeNet-style 16-layer MNIST classifier.
    pub fn reference() -> ArchSpec {
        let t = |k, s| SamplingTriplet { kernel: k, stride: s, padding: 0 };
        use LayerSpec::*;
        ArchSpec {
            input_depth: 1,
            input_size: 28,
            layers: vec![
                Conv { filters: 6, sampling: t(5, 1) },
                Relu,
                BatchNorm,
                MaxPool { sampling: t(2, 2) },
                Conv { filters: 16, sampling: t(5, 1) },
                Relu,
                BatchNorm,
                MaxPool { sampling: t(2, 2) },
                Flatten,
                Dense { outputs: 120 },
                Relu,
                BatchNorm,
                Dense { outputs: 84 },
                Relu,
                BatchNorm,
                Dense { outputs: 10 },
            ],
            shortcuts: Vec::new(),
        }
    }

    pub fn input_shape(&self, n: usize) -> DataShape {
        DataShape::Image {
            n,
            d: self.input_depth,
            h: self.input_size,
            w: self.input_size,
        }
    }
}

/// Logits plus the shape of every activation after the input.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Matrix,
    pub shapes: Vec<DataShape>,
}

#[derive(Clone, Debug)]
pub struct Network {
    arch: ArchSpec,
    layers: Vec<Layer>,
}

fn glorot(rng: &mut ChaCha8Rng, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..=limit)).collect()
}

fn reject_loose_fit(index: usize, size: usize, p: SamplingTriplet) -> Result<()> {
    if p.fits_exactly(size) {
        Ok(())
    } else {
        Err(Error::Geometry(format!("layer {index}: {p} does not tile a {size}x{size} input exactly")))
    }
}

/// Builds the reference classifier with freshly initialized parameters.
pub fn build_reference_net(seed: u64) -> Network {
    Network::build(ArchSpec::reference(), seed).expect("reference architecture is valid")
}

impl Network {
    /// Instantiates `arch`, checking shape compatibility, exact window fits and
    /// shortcut validity. Weights are drawn uniformly from
    /// `±sqrt(6 / (fan_in + fan_out))`; biases start at zero, batch-norm scales at one.
    pub fn build(arch: ArchSpec, seed: u64) -> Result<Network> {
        if arch.layers.is_empty() {
            return Err(Error::Usage("network needs at least one layer".into()));
        }
        if arch.input_depth == 0 || arch.input_size == 0 {
            return Err(Error::Usage("input geometry must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = arch.input_shape(1);
        let mut shapes = vec![shape];
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let layer = match (*spec, shape) {
                (LayerSpec::Conv { filters, sampling }, DataShape::Image { d, h, .. }) => {
                    reject_loose_fit(i, h, sampling)?;
                    let k = sampling.kernel;
                    let w = glorot(&mut rng, filters * d * k * k, d * k * k, filters * k * k);
                    Layer::Conv(Conv2d::new(
                        &format!("conv{i}"),
                        Tensor4::new(filters, d, k, k, w)?,
                        Vector::zeros(filters),
                        sampling,
                    )?)
                }
                (LayerSpec::MaxPool { sampling }, DataShape::Image { h, .. }) => {
                    reject_loose_fit(i, h, sampling)?;
                    Layer::MaxPool(MaxPool::new(sampling))
                }
                (LayerSpec::Dense { outputs }, DataShape::Flat { f, .. }) => {
                    let w = glorot(&mut rng, f * outputs, f, outputs);
                    Layer::Dense(Dense::new(&format!("fc{i}"), Matrix::new(f, outputs, w)?, Vector::zeros(outputs))?)
                }
                (LayerSpec::BatchNorm, DataShape::Flat { f: features, .. } | DataShape::Image { d: features, .. }) => {
                    Layer::BatchNorm(BatchNorm::new(BatchNormState::new(&format!("bn{i}"), features)))
                }
                (LayerSpec::Relu, _) => Layer::Relu(Relu::new()),
                (LayerSpec::Flatten, DataShape::Image { .. }) => Layer::Flatten(Flatten::new()),
                (spec, shape) => {
                    return Err(Error::shape("build", shape, spec.kind()).in_layer(i, spec.kind()));
                }
            };
            shape = layer.output_shape(shape).map_err(|e| e.in_layer(i, spec.kind()))?;
            shapes.push(shape);
            layers.push(layer);
        }
        if !matches!(shape, DataShape::Flat { .. }) {
            return Err(Error::Usage(format!("network must end in class scores, ends in {}", shape.symbolic())));
        }
        let mut targets = std::collections::BTreeSet::new();
        for e in &arch.shortcuts {
            if e.to > arch.layers.len() || e.from + 2 > e.to {
                return Err(Error::Usage(format!(
                    "shortcut {}->{} must skip at least two of {} layers",
                    e.from,
                    e.to,
                    arch.layers.len()
                )));
            }
            if shapes[e.from] != shapes[e.to] {
                return Err(Error::shape("shortcut", shapes[e.from], shapes[e.to]));
            }
            if !targets.insert(e.to) {
                return Err(Error::Usage(format!("two shortcuts end at activation {}", e.to)));
            }
        }
        Ok(Network { arch, layers })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.output_shapes(1).last().map_or(0, |s| s.per_sample())
    }

    /// Shapes of `A1..AL` for a batch of `n`.
    pub fn output_shapes(&self, n: usize) -> Vec<DataShape> {
        let mut shape = self.arch.input_shape(n);
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(shape).expect("validated at build");
                shape
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let [_, d, h, w] = x.dims();
        let (ed, es) = (self.arch.input_depth, self.arch.input_size);
        if d != ed || h != es || w != es {
            let first = self.layers[0].kind();
            return Err(Error::shape("network input", x.shape_string(), format!("n×{ed}×{es}×{es}")).in_layer(0, first));
        }
        Ok(())
    }

    fn shortcut_into(&self, to: usize) -> Option<usize> {
        self.arch.shortcuts.iter().find(|e| e.to == to).map(|e| e.from)
    }

    /// Every activation `A0..AL` of one forward pass.
    pub fn forward_trace(&mut self, x: &Tensor4, mode: Mode) -> Result<Vec<Data>> {
        self.check_input(x)?;
        let mut acts = vec![Data::Image(x.clone())];
        for i in 0..self.layers.len() {
            let layer = &mut self.layers[i];
            let kind = layer.kind();
            let mut out = layer.forward(&acts[i], mode).map_err(|e| e.in_layer(i, kind))?;
            if let Some(from) = self.shortcut_into(i + 1) {
                out = shortcut_add(&acts[from], &out).map_err(|e| e.in_layer(i, kind))?;
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Forward pass. Training mode leaves a cache in every layer for the next
    /// [`Network::backward`]; inference mode touches no state.
    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<ForwardPass> {
        let mut acts = self.forward_trace(x, mode)?;
        let shapes = acts[1..].iter().map(Data::shape).collect();
        let logits = acts.pop().expect("non-empty").into_flat()?;
        Ok(ForwardPass { logits, shapes })
    }

    /// Inference-mode logits; needs only shared access.
    pub fn infer(&self, x: &Tensor4) -> Result<Matrix> {
        self.check_input(x)?;
        let mut acts = vec![Data::Image(x.clone())];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.infer(&acts[i]).map_err(|e| e.in_layer(i, layer.kind()))?;
            if let Some(from) = self.shortcut_into(i + 1) {
                out = shortcut_add(&acts[from], &out)?;
            }
            acts.push(out);
        }
        acts.pop().expect("non-empty").into_flat()
    }

    /// Seeds `Δ = Y_pred − Y_gt` (softmax probabilities against one-hot
    /// labels) and runs [`Network::backward_with_delta`].
    pub fn backward(&mut self, y_pred: &Matrix, y_gt: &Matrix) -> Result<Vec<DataShape>> {
        let delta = softmax_ce_backward(y_pred, y_gt)?;
        self.backward_with_delta(delta)
    }

    /// Walks the layers in reverse from an error on the logits, filling every
    /// parameter gradient. Returns the shapes of `Δ1..ΔL`. The error on the
    /// input is never formed.
    pub fn backward_with_delta(&mut self, delta: Matrix) -> Result<Vec<DataShape>> {
        if let Some(i) = self.layers.iter().position(|l| !l.has_cache()) {
            return Err(Error::Usage("backward needs a training-mode forward pass first".into())
                .in_layer(i, self.layers[i].kind()));
        }
        let last = self.layers.len();
        let expected = self.output_shapes(delta.rows())[last - 1];
        let mut delta = Data::Flat(delta);
        if delta.shape() != expected {
            return Err(Error::shape("backward seed", delta.shape(), expected));
        }
        let mut stashed: BTreeMap<usize, Data> = BTreeMap::new();
        let mut shapes = vec![expected; last];
        for i in (0..last).rev() {
            let at = i + 1;
            if let Some(extra) = stashed.remove(&at) {
                delta = delta.add(&extra)?;
            }
            if let Some(from) = self.shortcut_into(at) {
                let skip = match stashed.remove(&from) {
                    Some(d) => d.add(&delta)?,
                    None => delta.clone(),
                };
                stashed.insert(from, skip);
            }
            shapes[i] = delta.shape();
            let layer = &mut self.layers[i];
            let kind = layer.kind();
            match layer.backward(&delta, i > 0).map_err(|e| e.in_layer(i, kind))? {
                Some(d) => delta = d,
                None => break,
            }
        }
        for layer in &mut self.layers {
            layer.clear_cache();
        }
        Ok(shapes)
    }

    /// Trainable tensors in update order: last layer first, weights before biases.
    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().rev().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().rev().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Adds `step[t]` onto parameter tensor `t`, in [`Network::params`] order.
    pub fn apply_update(&mut self, step: &[Vec<f64>]) -> Result<()> {
        let mut params = self.params_mut();
        if step.len() != params.len() {
            return Err(Error::shape("apply_update", step.len(), params.len()));
        }
        for (p, s) in params.iter().zip(step) {
            if s.len() != p.len() {
                return Err(Error::shape("apply_update", format!("{} {:?}", p.name, p.dims), s.len()));
            }
        }
        for (p, s) in params.iter_mut().zip(step) {
            p.value.iter_mut().zip(s).for_each(|(v, d)| *v += d);
        }
        Ok(())
    }

    /// Batch-norm states in forward order.
    pub fn batch_norms(&self) -> Vec<&BatchNormState> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some(&b.state),
                _ => None,
            })
            .collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormState> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some(&mut b.state),
                _ => None,
            })
            .collect()
    }

    pub fn has_caches(&self) -> bool {
        self.layers.iter().any(Layer::has_cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax_forward;

    fn random_input(n: usize, d: usize, r: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(n, d, r, r, |_, _, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn reference_ledger() {
        let net = build_reference_net(0);
        assert_eq!(net.num_params(), 44_878);
        let counts: Vec<(String, usize)> = net.params().iter().map(|p| (p.name.clone(), p.len())).collect();
        assert_eq!(counts.len(), 18);
        assert_eq!(counts[0], ("fc15.w".to_string(), 840));
        assert_eq!(counts[1], ("fc15.b".to_string(), 10));
        assert_eq!(counts[17], ("conv0.b".to_string(), 6));
        let fc9 = net.params().into_iter().find(|p| p.name == "fc9.w").unwrap();
        assert_eq!(fc9.dims, vec![256, 120]);
    }

    #[test]
    fn reference_shape_trace() {
        let mut net = build_reference_net(1);
        let pass = net.forward(&random_input(2, 1, 28, 2), Mode::Train).unwrap();
        let symbolic: Vec<String> = pass.shapes.iter().map(DataShape::symbolic).collect();
        for want in ["n×6×24×24", "n×6×12×12", "n×16×8×8", "n×16×4×4", "n×256", "n×120", "n×84", "n×10"] {
            assert!(symbolic.iter().any(|s| s == want), "{want} missing from {symbolic:?}");
        }
        assert_eq!(pass.logits.shape(), (2, 10));
    }

    #[test]
    fn backward_error_shapes_mirror_forward() {
        let mut net = build_reference_net(3);
        let pass = net.forward(&random_input(3, 1, 28, 4), Mode::Train).unwrap();
        let probs = softmax_forward(&pass.logits).unwrap();
        let gt = Matrix::from_fn(3, 10, |i, j| if j == i { 1.0 } else { 0.0 });
        let deltas = net.backward(&probs, &gt).unwrap();
        assert_eq!(deltas, pass.shapes);
        assert!(!net.has_caches());
        assert!(matches!(net.backward(&probs, &gt), Err(Error::Layer { .. })));
    }

    #[test]
    fn identity_dense_net_passes_input_through() {
        let arch = ArchSpec {
            input_depth: 1,
            input_size: 2,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { outputs: 4 }],
            shortcuts: vec![],
        };
        let mut net = Network::build(arch, 0).unwrap();
        if let Layer::Dense(d) = &mut net.layers[1] {
            d.weight.value = Matrix::identity(4).into_data();
        }
        let x = random_input(3, 1, 2, 5);
        assert_eq!(net.infer(&x).unwrap().data(), x.data());
        net.forward(&x, Mode::Infer).unwrap();
        assert!(!net.has_caches());
    }

    #[test]
    fn build_rejects_bad_architectures() {
        let mut arch = ArchSpec::reference();
        arch.layers[3] = LayerSpec::MaxPool {
            sampling: SamplingTriplet::new(3, 2, 0).unwrap(),
        };
        assert!(matches!(Network::build(arch, 0), Err(Error::Geometry(_))));

        let mut arch = ArchSpec::reference();
        arch.layers.insert(0, LayerSpec::Dense { outputs: 3 });
        assert!(matches!(Network::build(arch, 0), Err(Error::Layer { index: 0, .. })));

        let mut arch = ArchSpec::reference();
        arch.shortcuts.push(Shortcut { from: 10, to: 11 });
        assert!(Network::build(arch, 0).is_err());

        let mut arch = ArchSpec::reference();
        arch.shortcuts.push(Shortcut { from: 9, to: 12 });
        assert!(matches!(Network::build(arch, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn wrong_input_names_first_layer() {
        let mut net = build_reference_net(0);
        let err = net.forward(&Tensor4::zeros(1, 1, 27, 27), Mode::Train).unwrap_err();
        assert!(matches!(err, Error::Layer { index: 0, .. }));
    }

    #[test]
    fn update_round_trip() {
        let mut net = build_reference_net(4);
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
        let zero: Vec<Vec<f64>> = before.iter().map(|v| vec![0.0; v.len()]).collect();
        net.apply_update(&zero).unwrap();
        assert_eq!(net.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>(), before);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step: Vec<Vec<f64>> = before.iter().map(|v| v.iter().map(|_| rng.gen_range(-0.1..0.1)).collect()).collect();
        let neg: Vec<Vec<f64>> = step.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        net.apply_update(&step).unwrap();
        net.apply_update(&neg).unwrap();
        for (p, b) in net.params().iter().zip(&before) {
            assert!(crate::tensor::max_abs_diff(&p.value, b) <= 1e-15);
        }
        assert!(net.apply_update(&zero[1..]).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = build_reference_net(9);
        let b = build_reference_net(9);
        let c = build_reference_net(10);
        let values = |n: &Network| n.params().iter().flat_map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
        let limit = (6.0f64 / (25.0 + 150.0)).sqrt();
        let conv0 = a.params().into_iter().find(|p| p.name == "conv0.w").unwrap();
        assert!(conv0.value.iter().all(|v| v.abs() <= limit));
        let bn = a.batch_norms();
        assert_eq!(bn.len(), 4);
        assert!(bn[0].weight.value.iter().all(|&v| v == 1.0));
    }
}
