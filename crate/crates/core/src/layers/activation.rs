use super::{missing_cache, Data};
use crate::error::{Error, Result};

/// Input of the ReLU forward pass.
#[derive(Clone, Debug)]
pub struct ReluCache {
    input: Data,
}

/// `max(x, 0)` elementwise.
pub fn relu_forward(a: &Data) -> (Data, ReluCache) {
    let mut out = a.clone();
    out.values_mut().iter_mut().for_each(|x| *x = x.max(0.0));
    (out, ReluCache { input: a.clone() })
}

/// Masks the upstream error with `g'(x)`, taking `g'(0) = 1`.
pub fn relu_backward(delta: &Data, cache: &ReluCache) -> Result<Data> {
    if delta.shape() != cache.input.shape() {
        return Err(Error::shape("relu_backward", delta.shape(), cache.input.shape()));
    }
    let masked = delta
        .values()
        .iter()
        .zip(cache.input.values())
        .map(|(&d, &x)| if x >= 0.0 { d } else { 0.0 })
        .collect();
    delta.with_values(masked)
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    pub(crate) cache: Option<ReluCache>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward(&mut self, x: &Data) -> Data {
        let (out, cache) = relu_forward(x);
        self.cache = Some(cache);
        out
    }

    pub fn backward(&mut self, delta: &Data) -> Result<Data> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("relu"))?;
        relu_backward(delta, &cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Matrix, Tensor4};

    fn row(v: &[f64]) -> Data {
        Data::Flat(Matrix::from_rows(&[v]))
    }

    #[test]
    fn forward_and_backward_examples() {
        let (out, cache) = relu_forward(&row(&[-1.0, 0.0, 2.0]));
        assert_eq!(out.values(), &[0.0, 0.0, 2.0]);
        let back = relu_backward(&row(&[5.0, 5.0, 5.0]), &cache).unwrap();
        assert_eq!(back.values(), &[0.0, 5.0, 5.0]);

        let (_, cache) = relu_forward(&row(&[0.5, 3.0]));
        let d = row(&[-2.0, 7.0]);
        assert_eq!(relu_backward(&d, &cache).unwrap(), d);
    }

    #[test]
    fn works_on_images_and_consumes_cache() {
        let x = Data::Image(Tensor4::from_fn(1, 2, 2, 2, |_, c, i, j| c as f64 - i as f64 + j as f64 - 0.5));
        let mut layer = Relu::new();
        let y = layer.forward(&x);
        assert!(y.values().iter().all(|&v| v >= 0.0));
        assert!(layer.backward(&y).is_ok());
        assert!(matches!(layer.backward(&y), Err(Error::Usage(_))));
    }
}
