use super::Data;
use crate::error::{Error, Result};

/// Identity skip: `a_skip + a_residual`, shapes must agree.
pub fn shortcut_add(a_skip: &Data, a_residual: &Data) -> Result<Data> {
    if a_skip.shape() != a_residual.shape() {
        return Err(Error::shape("shortcut", a_skip.shape(), a_residual.shape()));
    }
    a_skip.add(a_residual)
}

/// The upstream error goes unchanged down both the skip and the residual
/// branch, as `(skip, residual)`.
pub fn shortcut_backward(delta: &Data) -> (Data, Data) {
    (delta.clone(), delta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Matrix, Tensor4};

    #[test]
    fn zero_residual_is_identity() {
        let a = Data::Image(Tensor4::from_fn(1, 2, 3, 3, |_, c, i, j| (c + i * j) as f64));
        let zero = Data::Image(Tensor4::zeros(1, 2, 3, 3));
        assert_eq!(shortcut_add(&a, &zero).unwrap(), a);
        assert!(shortcut_add(&a, &Data::Flat(Matrix::zeros(1, 18))).is_err());
    }

    #[test]
    fn identity_branches_double_the_error() {
        let delta = Data::Flat(Matrix::from_rows(&[[1.0, -2.0, 0.5]]));
        let (skip, residual) = shortcut_backward(&delta);
        assert_eq!(skip.add(&residual).unwrap(), delta.scale(2.0));
    }
}
