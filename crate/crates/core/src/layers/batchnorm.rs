use super::{missing_cache, Data, DataShape, Mode, ParamTensor};
use crate::error::{Error, Result};
use crate::tensor::{f2d_t, f4d_t, Matrix, Vector};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Learned affine transform plus the population estimates used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub running_mean: Vector,
    pub running_var: Vector,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    /// `w = 1`, `b = 0`, running mean 0 and running variance 1.
    pub fn new(name: &str, features: usize) -> Self {
        BatchNormState {
            weight: ParamTensor {
                name: format!("{name}.w"),
                dims: vec![features],
                value: vec![1.0; features],
                grad: vec![0.0; features],
            },
            bias: ParamTensor::zeros(format!("{name}.b"), vec![features]),
            running_mean: Vector::zeros(features),
            running_var: Vector::filled(features, 1.0),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Usage(format!("batch norm eps must be finite and non-negative, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::Usage(format!("batch norm momentum must lie in (0, 1], got {momentum}")));
        }
        self.momentum = momentum;
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.weight.len()
    }
}

/// Normalized input and per-feature `σ` of a training forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Matrix,
    pub sigma: Vector,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub delta_in: Matrix,
    pub dw: Vector,
    pub db: Vector,
}

fn column_moments(a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, f) = a.shape();
    let mut mean = vec![0.0; f];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(a.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; f];
    for i in 0..n {
        for ((v, &x), &m) in var.iter_mut().zip(a.row(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var)
}

/// Standardizes every feature column and applies `Ā·diag(w) + b̃`.
///
/// Training mode uses the minibatch statistics (biased variance), folds them
/// into the running estimates and returns a cache; inference mode uses the
/// running estimates and returns none.
pub fn batchnorm_forward(
    a: &Matrix,
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Matrix, Option<BatchNormCache>)> {
    let (n, f) = a.shape();
    if f != state.features() {
        return Err(Error::shape("batchnorm", a.shape_string(), format!("n×{}", state.features())));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::BatchSize(n));
            }
            column_moments(a)
        }
        Mode::Infer => (state.running_mean.as_slice().to_vec(), state.running_var.as_slice().to_vec()),
    };
    let sigma: Vec<f64> = var.iter().map(|v| (v + state.eps).sqrt()).collect();
    let normalized = Matrix::from_fn(n, f, |i, j| {
        if sigma[j] == 0.0 {
            0.0
        } else {
            (a.get(i, j) - mean[j]) / sigma[j]
        }
    });
    let (w, b) = (&state.weight.value, &state.bias.value);
    let out = Matrix::from_fn(n, f, |i, j| normalized.get(i, j) * w[j] + b[j]);
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("batch norm output".into()));
    }
    if mode == Mode::Infer {
        return Ok((out, None));
    }
    let m = state.momentum;
    for j in 0..f {
        let rm = &mut state.running_mean.as_mut_slice()[j];
        *rm = (1.0 - m) * *rm + m * mean[j];
        let rv = &mut state.running_var.as_mut_slice()[j];
        *rv = (1.0 - m) * *rv + m * var[j];
    }
    Ok((
        out,
        Some(BatchNormCache {
            normalized,
            sigma: Vector::new(sigma),
        }),
    ))
}

/// `Δ_in = (nΔw̃ − ΣΔw̃ − Ā∘Σ(Ā∘Δw̃)) / (nσ)`, `dW = diag(ĀᵗΔ)`, `dB = ΣΔ`.
pub fn batchnorm_backward(delta: &Matrix, cache: &BatchNormCache, state: &BatchNormState) -> Result<BatchNormGrads> {
    let (n, f) = cache.normalized.shape();
    if delta.shape() != (n, f) {
        return Err(Error::shape("batchnorm_backward", delta.shape_string(), cache.normalized.shape_string()));
    }
    let w = &state.weight.value;
    let abar = &cache.normalized;
    let mut dw = vec![0.0; f];
    let mut db = vec![0.0; f];
    for i in 0..n {
        for j in 0..f {
            dw[j] += abar.get(i, j) * delta.get(i, j);
            db[j] += delta.get(i, j);
        }
    }
    // with Δw̃ = Δ·diag(w) the two sums are w∘dB and w∘dW
    let nf = n as f64;
    let sigma = cache.sigma.as_slice();
    let delta_in = Matrix::from_fn(n, f, |i, j| {
        if sigma[j] == 0.0 {
            return 0.0;
        }
        w[j] * (nf * delta.get(i, j) - db[j] - abar.get(i, j) * dw[j]) / (nf * sigma[j])
    });
    Ok(BatchNormGrads {
        delta_in,
        dw: Vector::new(dw),
        db: Vector::new(db),
    })
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNormLayerCache {
    inner: BatchNormCache,
    shape: DataShape,
}

/// Batch normalization over feature vectors or over the depth axis of images,
/// where every pixel of every sample counts as one observation.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub state: BatchNormState,
    pub(crate) cache: Option<BatchNormLayerCache>,
}

fn to_rows(x: &Data) -> Matrix {
    match x {
        Data::Flat(m) => m.clone(),
        Data::Image(t) => f2d_t(t),
    }
}

fn from_rows(m: Matrix, shape: DataShape) -> Result<Data> {
    match shape {
        DataShape::Flat { .. } => Ok(Data::Flat(m)),
        DataShape::Image { n, d, h, .. } => Ok(Data::Image(f4d_t(&m, n, d, h)?)),
    }
}

impl BatchNorm {
    pub fn new(state: BatchNormState) -> Self {
        BatchNorm { state, cache: None }
    }

    pub fn check_input(&self, shape: DataShape) -> Result<()> {
        let f = self.state.features();
        match shape {
            DataShape::Flat { f: got, .. } if got == f => Ok(()),
            DataShape::Image { d, h, w, .. } if d == f && h == w => Ok(()),
            other => Err(Error::shape("batchnorm", other, format!("{f} features"))),
        }
    }

    pub fn forward(&mut self, x: &Data) -> Result<Data> {
        let shape = x.shape();
        self.check_input(shape)?;
        let (out, cache) = batchnorm_forward(&to_rows(x), &mut self.state, Mode::Train)?;
        self.cache = cache.map(|inner| BatchNormLayerCache { inner, shape });
        from_rows(out, shape)
    }

    pub fn infer(&self, x: &Data) -> Result<Data> {
        let shape = x.shape();
        self.check_input(shape)?;
        // inference never touches the state, a scratch copy keeps `&self`
        let mut state = self.state.clone();
        let (out, _) = batchnorm_forward(&to_rows(x), &mut state, Mode::Infer)?;
        from_rows(out, shape)
    }

    pub fn backward(&mut self, delta: &Data) -> Result<Data> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
        if delta.shape() != cache.shape {
            return Err(Error::shape("batchnorm_backward", delta.shape(), cache.shape));
        }
        let grads = batchnorm_backward(&to_rows(delta), &cache.inner, &self.state)?;
        self.state.weight.set_grad(grads.dw.into_vec());
        self.state.bias.set_grad(grads.db.into_vec());
        from_rows(grads.delta_in, cache.shape)
    }
}
