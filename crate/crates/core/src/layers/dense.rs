use super::{missing_cache, DataShape, ParamTensor};
use crate::error::{Error, Result};
use crate::tensor::{broadcast_add_bias, contract_bias, matmul, Matrix, Vector};

/// Input of the fully connected forward pass.
#[derive(Clone, Debug)]
pub struct DenseCache {
    pub input: Matrix,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub delta_in: Matrix,
    pub dw: Matrix,
    pub db: Vector,
}

/// `a · w + b̃`
pub fn fc_forward(a: &Matrix, w: &Matrix, b: &Vector) -> Result<(Matrix, DenseCache)> {
    let out = broadcast_add_bias(&matmul(a, w)?, b)?;
    Ok((out, DenseCache { input: a.clone() }))
}

/// `Δ wᵗ`, `aᵗ Δ` and the sample-sum of `Δ`.
pub fn fc_backward(delta: &Matrix, cache: &DenseCache, w: &Matrix) -> Result<DenseGrads> {
    if delta.rows() != cache.input.rows() || delta.cols() != w.cols() {
        return Err(Error::shape("fc_backward", delta.shape_string(), w.shape_string()));
    }
    Ok(DenseGrads {
        delta_in: matmul(delta, &w.transpose())?,
        dw: matmul(&cache.input.transpose(), delta)?,
        db: contract_bias(delta),
    })
}

/// Fully connected layer with weights `f_in × f_out`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub(crate) cache: Option<DenseCache>,
}

impl Dense {
    pub fn new(name: &str, weight: Matrix, bias: Vector) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::shape("Dense::new", weight.shape_string(), bias.len()));
        }
        let (r, c) = weight.shape();
        Ok(Dense {
            weight: ParamTensor::new(format!("{name}.w"), vec![r, c], weight.into_data())?,
            bias: ParamTensor::new(format!("{name}.b"), vec![c], bias.into_vec())?,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims[1]
    }

    fn bias_vector(&self) -> Vector {
        Vector::new(self.bias.value.clone())
    }

    pub fn forward(&mut self, a: &Matrix) -> Result<Matrix> {
        let (out, cache) = fc_forward(a, &self.weight.as_matrix(), &self.bias_vector())?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn infer(&self, a: &Matrix) -> Result<Matrix> {
        Ok(fc_forward(a, &self.weight.as_matrix(), &self.bias_vector())?.0)
    }

    pub fn backward(&mut self, delta: &Matrix, need_input_grad: bool) -> Result<Option<Matrix>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("dense"))?;
        let w = self.weight.as_matrix();
        let grads = fc_backward(delta, &cache, &w)?;
        self.weight.set_grad(grads.dw.into_data());
        self.bias.set_grad(grads.db.into_vec());
        Ok(need_input_grad.then_some(grads.delta_in))
    }

    pub fn output_shape(&self, input: DataShape) -> Result<DataShape> {
        match input {
            DataShape::Flat { n, f } if f == self.inputs() => Ok(DataShape::Flat {
                n,
                f: self.outputs(),
            }),
            other => Err(Error::shape("dense", other, format!("n×{}", self.inputs()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let a = Matrix::from_rows(&[[1.0, -2.0, 3.0]]);
        let (out, _) = fc_forward(&a, &Matrix::identity(3), &Vector::zeros(3)).unwrap();
        assert_eq!(out, a);

        let (out, _) = fc_forward(&Matrix::zeros(3, 4), &Matrix::filled(4, 2, 0.7), &Vector::new(vec![1.0, 2.0])).unwrap();
        for s in 0..3 {
            assert_eq!(out.row(s), &[1.0, 2.0]);
        }

        let w = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]);
        let (out, _) = fc_forward(&Matrix::from_rows(&[[1.0, 2.0]]), &w, &Vector::zeros(3)).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
        assert!(fc_forward(&Matrix::zeros(1, 3), &w, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn backward_examples() {
        let cache = DenseCache {
            input: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
        };
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.0, 1.0]]);
        let g = fc_backward(&Matrix::zeros(2, 3), &cache, &w).unwrap();
        assert_eq!(g.delta_in, Matrix::zeros(2, 2));
        assert_eq!(g.dw, Matrix::zeros(2, 3));
        assert_eq!(g.db, Vector::zeros(3));

        let delta = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]);
        let g = fc_backward(&delta, &cache, &Matrix::identity(2)).unwrap();
        assert_eq!(g.delta_in, delta);

        let cache = DenseCache {
            input: Matrix::from_rows(&[[1.0], [2.0]]),
        };
        let g = fc_backward(&Matrix::from_rows(&[[3.0], [4.0]]), &cache, &Matrix::identity(1)).unwrap();
        assert_eq!(g.dw.data(), &[11.0]);
        assert_eq!(g.db.as_slice(), &[7.0]);
    }

    #[test]
    fn layer_requires_cache() {
        let mut layer = Dense::new("fc", Matrix::identity(2), Vector::zeros(2)).unwrap();
        assert!(layer.backward(&Matrix::zeros(1, 2), true).is_err());
        layer.forward(&Matrix::from_rows(&[[1.0, 2.0]])).unwrap();
        let d = layer.backward(&Matrix::from_rows(&[[1.0, 1.0]]), true).unwrap().unwrap();
        assert_eq!(d.data(), &[1.0, 1.0]);
        assert_eq!(layer.weight.grad, vec![1.0, 1.0, 2.0, 2.0]);
    }
}
