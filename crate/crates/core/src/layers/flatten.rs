use super::missing_cache;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

/// Image dimensions seen by the flatten forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FlattenCache {
    pub dims: [usize; 4],
}

/// `n × d × r × r` to `n × (d·r·r)`, each row read depth-major, then row, then column.
pub fn flatten_forward(a: &Tensor4) -> (Matrix, FlattenCache) {
    let [n, d, h, w] = a.dims();
    let m = Matrix::new(n, d * h * w, a.data().to_vec()).expect("non-empty image batch");
    (m, FlattenCache { dims: a.dims() })
}

/// Inverse of [`flatten_forward`].
pub fn fold_backward(delta: &Matrix, cache: &FlattenCache) -> Result<Tensor4> {
    let [n, d, h, w] = cache.dims;
    if delta.rows() != n || delta.cols() != d * h * w {
        return Err(Error::shape("fold_backward", delta.shape_string(), format!("{n}x{}", d * h * w)));
    }
    Tensor4::new(n, d, h, w, delta.data().to_vec())
}

#[derive(Clone, Debug, Default)]
pub struct Flatten {
    pub(crate) cache: Option<FlattenCache>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten::default()
    }

    pub fn forward(&mut self, a: &Tensor4) -> Result<Matrix> {
        let (m, cache) = flatten_forward(a);
        self.cache = Some(cache);
        Ok(m)
    }

    pub fn backward(&mut self, delta: &Matrix) -> Result<Tensor4> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("flatten"))?;
        fold_backward(delta, &cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declared_order_and_shapes() {
        let x = Tensor4::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten_forward(&x).0.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flatten_forward(&Tensor4::zeros(5, 16, 4, 4)).0.shape(), (5, 256));
    }

    #[test]
    fn round_trip_is_exact() {
        let x = Tensor4::from_fn(2, 16, 4, 4, |s, c, i, j| ((s * 31 + c * 7 + i * 3 + j) as f64).sin());
        let (m, cache) = flatten_forward(&x);
        assert_eq!(fold_backward(&m, &cache).unwrap(), x);
        assert!(fold_backward(&Matrix::zeros(2, 255), &cache).is_err());
    }
}
