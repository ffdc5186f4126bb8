use super::{missing_cache, DataShape, ParamTensor};
use crate::error::{Error, Result};
use crate::geometry::{
    backward_sampling, dilate_internal, im2col_with, out_resolution, pad, pad_asymmetric, roll_kernels,
    rot180_transpose_depth, unroll_kernels, SamplingTriplet,
};
use crate::parallel::{self, Execution};
use crate::tensor::{broadcast_add_bias_4d, contract_bias_4d, f2d, f4d, matmul, matmul_with, Tensor4, Vector};

/// What the convolution backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    pub input_dims: [usize; 4],
    /// `im2col` of the input, reused for the weight gradient.
    pub cols: crate::tensor::Matrix,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub delta_in: Option<Tensor4>,
    pub dw: Tensor4,
    pub db: Vector,
}

fn check_conv(a: &Tensor4, w: &Tensor4, b: &Vector) -> Result<()> {
    let [d_out, d_in, kh, kw] = w.dims();
    if d_in != a.depth() {
        return Err(Error::shape("conv depth", a.shape_string(), w.shape_string()));
    }
    if kh != kw {
        return Err(Error::Geometry(format!("non-square kernel {kh}x{kw}")));
    }
    if b.len() != d_out {
        return Err(Error::shape("conv bias", w.shape_string(), b.len()));
    }
    if a.height() != a.width() {
        return Err(Error::Geometry(format!("non-square input {}", a.shape_string())));
    }
    Ok(())
}

/// Convolution lowered to one GEMM: `f4d(unroll(w) · im2col(a)) + b̃`.
pub fn conv_forward_gemm(a: &Tensor4, w: &Tensor4, b: &Vector, p: SamplingTriplet) -> Result<(Tensor4, ConvCache)> {
    conv_forward_gemm_with(Execution::default(), a, w, b, p)
}

pub fn conv_forward_gemm_with(
    exec: Execution,
    a: &Tensor4,
    w: &Tensor4,
    b: &Vector,
    p: SamplingTriplet,
) -> Result<(Tensor4, ConvCache)> {
    check_conv(a, w, b)?;
    if w.height() != p.kernel {
        return Err(Error::Geometry(format!("kernel {} does not match {p}", w.height())));
    }
    let r_out = out_resolution(a.height(), p)?;
    let cols = im2col_with(exec, a, p)?;
    let product = matmul_with(exec, &unroll_kernels(w), &cols)?;
    let out = broadcast_add_bias_4d(&f4d(&product, a.n(), r_out, r_out)?, b)?;
    Ok((
        out,
        ConvCache {
            input_dims: a.dims(),
            cols,
        },
    ))
}

/// Direct sliding-window convolution, one patch contraction at a time.
pub fn conv_forward_naive(a: &Tensor4, w: &Tensor4, b: &Vector, p: SamplingTriplet) -> Result<Tensor4> {
    conv_forward_naive_with(Execution::default(), a, w, b, p)
}

pub fn conv_forward_naive_with(
    exec: Execution,
    a: &Tensor4,
    w: &Tensor4,
    b: &Vector,
    p: SamplingTriplet,
) -> Result<Tensor4> {
    check_conv(a, w, b)?;
    let [n, d_in, _, _] = a.dims();
    let [d_out, _, k, _] = w.dims();
    if k != p.kernel {
        return Err(Error::Geometry(format!("kernel {k} does not match {p}")));
    }
    let r_out = out_resolution(a.height(), p)?;
    let canvas = pad(a, p.padding);
    let plane = r_out * r_out;
    let mut data = vec![0.0; n * d_out * plane];
    parallel::for_each_chunk_mut(exec, &mut data, plane, |idx, out| {
        let (s, co) = (idx / d_out, idx % d_out);
        for oi in 0..r_out {
            for oj in 0..r_out {
                let mut acc = 0.0;
                for ci in 0..d_in {
                    for ki in 0..k {
                        for kj in 0..k {
                            acc += w.get(co, ci, ki, kj) * canvas.get(s, ci, oi * p.stride + ki, oj * p.stride + kj);
                        }
                    }
                }
                out[oi * r_out + oj] = acc + b.as_slice()[co];
            }
        }
    });
    Tensor4::new(n, d_out, r_out, r_out, data)
}

/// Downstream error by fractionally strided convolution: the upstream error
/// is spread apart by `s - 1` zeros, padded by `k - p - 1` (plus the cells a
/// non-exact forward fit left unread), then convolved at unit stride with
/// the depth-transposed, 180°-rotated kernels.
pub fn conv_input_grad(delta: &Tensor4, w: &Tensor4, p: SamplingTriplet, r_in: usize) -> Result<Tensor4> {
    let bs = backward_sampling(p)?;
    let r_out = out_resolution(r_in, p)?;
    if delta.height() != r_out || delta.width() != r_out || delta.depth() != w.dims()[0] {
        return Err(Error::shape("conv_input_grad", delta.shape_string(), w.shape_string()));
    }
    let leftover = p.padded(r_in) - p.kernel - (r_out - 1) * p.stride;
    let lo = bs.base.padding;
    let canvas = pad_asymmetric(&dilate_internal(delta, bs.internal_gap), lo, lo + leftover);
    let flipped = rot180_transpose_depth(w);
    let unit = SamplingTriplet::new(p.kernel, 1, 0)?;
    let zero_bias = Vector::zeros(flipped.dims()[0]);
    Ok(conv_forward_gemm(&canvas, &flipped, &zero_bias, unit)?.0)
}

/// Weight, bias and (optionally) input gradients of a convolution.
pub fn conv_backward(
    delta: &Tensor4,
    cache: &ConvCache,
    w: &Tensor4,
    p: SamplingTriplet,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let [n, d_in, r_in, _] = cache.input_dims;
    let r_out = out_resolution(r_in, p)?;
    let [d_out, _, k, _] = w.dims();
    if delta.dims() != [n, d_out, r_out, r_out] {
        return Err(Error::shape(
            "conv_backward",
            delta.shape_string(),
            format!("{n}x{d_out}x{r_out}x{r_out}"),
        ));
    }
    let dw = roll_kernels(&matmul(&f2d(delta), &cache.cols.transpose())?, d_in, k)?;
    let db = contract_bias_4d(delta);
    let delta_in = if need_input_grad {
        Some(conv_input_grad(delta, w, p, r_in)?)
    } else {
        None
    };
    Ok(ConvGrads { delta_in, dw, db })
}

/// 2-d convolution layer with a `d_out × d_in × k × k` filter bank.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub sampling: SamplingTriplet,
    pub(crate) cache: Option<ConvCache>,
}

impl Conv2d {
    pub fn new(name: &str, weight: Tensor4, bias: Vector, sampling: SamplingTriplet) -> Result<Self> {
        let dims = weight.dims();
        if dims[2] != sampling.kernel || dims[3] != sampling.kernel {
            return Err(Error::Geometry(format!("kernel {dims:?} does not match {sampling}")));
        }
        if bias.len() != dims[0] {
            return Err(Error::shape("Conv2d::new", weight.shape_string(), bias.len()));
        }
        Ok(Conv2d {
            weight: ParamTensor::new(format!("{name}.w"), dims.to_vec(), weight.into_data())?,
            bias: ParamTensor::new(format!("{name}.b"), vec![dims[0]], bias.into_vec())?,
            sampling,
            cache: None,
        })
    }

    fn bias_vector(&self) -> Vector {
        Vector::new(self.bias.value.clone())
    }

    pub fn forward(&mut self, a: &Tensor4) -> Result<Tensor4> {
        let (out, cache) = conv_forward_gemm(a, &self.weight.as_tensor4(), &self.bias_vector(), self.sampling)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn infer(&self, a: &Tensor4) -> Result<Tensor4> {
        Ok(conv_forward_gemm(a, &self.weight.as_tensor4(), &self.bias_vector(), self.sampling)?.0)
    }

    pub fn backward(&mut self, delta: &Tensor4, need_input_grad: bool) -> Result<Option<Tensor4>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("conv"))?;
        let grads = conv_backward(delta, &cache, &self.weight.as_tensor4(), self.sampling, need_input_grad)?;
        self.weight.set_grad(grads.dw.into_data());
        self.bias.set_grad(grads.db.into_vec());
        Ok(grads.delta_in)
    }

    pub fn output_shape(&self, input: DataShape) -> Result<DataShape> {
        let d_in = self.weight.dims[1];
        match input {
            DataShape::Image { n, d, h, w } if d == d_in && h == w => {
                let r = out_resolution(h, self.sampling)?;
                Ok(DataShape::Image {
                    n,
                    d: self.weight.dims[0],
                    h: r,
                    w: r,
                })
            }
            other => Err(Error::shape("conv", other, format!("n×{d_in}×r×r"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(k: usize, s: usize, pad: usize) -> SamplingTriplet {
        SamplingTriplet::new(k, s, pad).unwrap()
    }

    fn rand_t(rng: &mut ChaCha8Rng, n: usize, d: usize, h: usize, w: usize) -> Tensor4 {
        Tensor4::from_fn(n, d, h, w, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pointwise_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_t(&mut rng, 2, 3, 4, 4);
        let ones = Tensor4::from_fn(1, 3, 1, 1, |_, _, _, _| 1.0);
        let (out, _) = conv_forward_gemm(&a, &ones, &Vector::zeros(1), p(1, 1, 0)).unwrap();
        for s in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let sum: f64 = (0..3).map(|c| a.get(s, c, i, j)).sum();
                    assert!((out.get(s, 0, i, j) - sum).abs() < 1e-15);
                }
            }
        }

        let eye = Tensor4::from_fn(3, 3, 1, 1, |co, ci, _, _| if co == ci { 1.0 } else { 0.0 });
        let (out, _) = conv_forward_gemm(&a, &eye, &Vector::zeros(3), p(1, 1, 0)).unwrap();
        assert_eq!(out, a);

        let (out, _) = conv_forward_gemm(&Tensor4::zeros(2, 1, 28, 28), &Tensor4::zeros(6, 1, 5, 5), &Vector::zeros(6), p(5, 1, 0)).unwrap();
        assert_eq!(out.dims(), [2, 6, 24, 24]);
    }

    #[test]
    fn naive_matches_gemm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_t(&mut rng, 2, 3, 7, 7);
        let w = rand_t(&mut rng, 4, 3, 3, 3);
        let b = Vector::new((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (gemm, _) = conv_forward_gemm(&a, &w, &b, p(3, 2, 1)).unwrap();
        let naive = conv_forward_naive(&a, &w, &b, p(3, 2, 1)).unwrap();
        assert!(gemm.max_abs_diff(&naive) < 1e-12);
        assert_eq!(
            conv_forward_naive_with(Execution::Serial, &a, &w, &b, p(3, 2, 1)).unwrap(),
            conv_forward_naive_with(Execution::Parallel, &a, &w, &b, p(3, 2, 1)).unwrap()
        );
    }

    #[test]
    fn single_patch_and_zero_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_t(&mut rng, 1, 2, 3, 3);
        let w = rand_t(&mut rng, 1, 2, 3, 3);
        let out = conv_forward_naive(&a, &w, &Vector::new(vec![0.5]), p(3, 1, 0)).unwrap();
        let frob = crate::tensor::frobenius(
            &Matrix::new(1, 18, a.data().to_vec()).unwrap(),
            &Matrix::new(1, 18, w.data().to_vec()).unwrap(),
        )
        .unwrap();
        assert!((out.data()[0] - (frob + 0.5)).abs() < 1e-14);

        let out = conv_forward_naive(&a, &Tensor4::zeros(2, 2, 2, 2), &Vector::new(vec![1.0, -2.0]), p(2, 1, 0)).unwrap();
        assert!(out.plane(0, 0).iter().all(|&v| v == 1.0));
        assert!(out.plane(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn backward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_t(&mut rng, 2, 2, 6, 6);
        let w = rand_t(&mut rng, 3, 2, 3, 3);
        let (_, cache) = conv_forward_gemm(&a, &w, &Vector::zeros(3), p(3, 2, 0)).unwrap();
        let g = conv_backward(&Tensor4::zeros(2, 3, 2, 2), &cache, &w, p(3, 2, 0), true).unwrap();
        assert_eq!(g.delta_in.unwrap(), Tensor4::zeros(2, 2, 6, 6));
        assert_eq!(g.dw, Tensor4::zeros(3, 2, 3, 3));
        assert_eq!(g.db, Vector::zeros(3));

        let a = rand_t(&mut rng, 2, 1, 4, 4);
        let two = Tensor4::new(1, 1, 1, 1, vec![2.0]).unwrap();
        let (_, cache) = conv_forward_gemm(&a, &two, &Vector::zeros(1), p(1, 1, 0)).unwrap();
        let delta = rand_t(&mut rng, 2, 1, 4, 4);
        let g = conv_backward(&delta, &cache, &two, p(1, 1, 0), true).unwrap();
        assert!(g.delta_in.unwrap().max_abs_diff(&delta.scale(2.0)) < 1e-15);
    }

    /// Scatter-based transpose of the forward map: every output error cell
    /// adds `w · Δ` back onto the input cells its window read.
    fn scatter_input_grad(delta: &Tensor4, w: &Tensor4, p: SamplingTriplet, r_in: usize) -> Tensor4 {
        let [n, d_out, r_out, _] = delta.dims();
        let [_, d_in, k, _] = w.dims();
        let mut canvas = Tensor4::zeros(n, d_in, p.padded(r_in), p.padded(r_in));
        for s in 0..n {
            for co in 0..d_out {
                for oi in 0..r_out {
                    for oj in 0..r_out {
                        let g = delta.get(s, co, oi, oj);
                        for ci in 0..d_in {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let (i, j) = (oi * p.stride + ki, oj * p.stride + kj);
                                    let v = canvas.get(s, ci, i, j) + g * w.get(co, ci, ki, kj);
                                    canvas.set(s, ci, i, j, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        crate::geometry::crop(&canvas, p.padding, p.padding)
    }

    #[test]
    fn fractional_stride_matches_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(r, k, s, pad) in &[(5, 3, 2, 0), (6, 3, 2, 0), (7, 3, 2, 1), (8, 5, 3, 2), (12, 5, 1, 0), (6, 1, 2, 0)] {
            let tp = p(k, s, pad);
            let r_out = out_resolution(r, tp).unwrap();
            let delta = rand_t(&mut rng, 2, 3, r_out, r_out);
            let w = rand_t(&mut rng, 3, 2, k, k);
            let frac = conv_input_grad(&delta, &w, tp, r).unwrap();
            let scatter = scatter_input_grad(&delta, &w, tp, r);
            assert_eq!(frac.dims(), [2, 2, r, r]);
            assert!(frac.max_abs_diff(&scatter) < 1e-12, "r={r} {tp}");
        }
    }

    #[test]
    fn over_padded_backward_is_rejected() {
        let w = Tensor4::zeros(1, 1, 3, 3);
        let delta = Tensor4::zeros(1, 1, 6, 6);
        assert!(matches!(conv_input_grad(&delta, &w, p(3, 1, 3), 2), Err(Error::Geometry(_))));
    }
}
