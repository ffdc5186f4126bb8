use super::{missing_cache, DataShape};
use crate::error::{Error, Result};
use crate::geometry::{crop, out_resolution, pad, SamplingTriplet};
use crate::tensor::Tensor4;

/// Where each pooled value came from.
#[derive(Clone, Debug)]
pub struct PoolCache {
    pub sampling: SamplingTriplet,
    pub input_dims: [usize; 4],
    pub output_dims: [usize; 4],
    /// Flat index into the zero-padded input, one per output cell.
    pub argmax: Vec<usize>,
}

/// Max over every window; ties go to the first cell in row-major window order.
pub fn maxpool_forward(a: &Tensor4, p: SamplingTriplet) -> Result<(Tensor4, PoolCache)> {
    let [n, d, h, w] = a.dims();
    if h != w {
        return Err(Error::Geometry(format!("non-square input {h}x{w}")));
    }
    let r_out = out_resolution(h, p)?;
    let canvas = pad(a, p.padding);
    let mut out = Tensor4::zeros(n, d, r_out, r_out);
    let mut argmax = Vec::with_capacity(n * d * r_out * r_out);
    for s in 0..n {
        for c in 0..d {
            for oi in 0..r_out {
                for oj in 0..r_out {
                    let mut best = canvas.offset(s, c, oi * p.stride, oj * p.stride);
                    for ki in 0..p.kernel {
                        for kj in 0..p.kernel {
                            let idx = canvas.offset(s, c, oi * p.stride + ki, oj * p.stride + kj);
                            if canvas.data()[idx] > canvas.data()[best] {
                                best = idx;
                            }
                        }
                    }
                    out.set(s, c, oi, oj, canvas.data()[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            sampling: p,
            input_dims: a.dims(),
            output_dims: [n, d, r_out, r_out],
            argmax,
        },
    ))
}

/// Routes each upstream error cell to its window's maximum; overlapping
/// windows accumulate.
pub fn maxpool_backward(delta: &Tensor4, cache: &PoolCache) -> Result<Tensor4> {
    if delta.dims() != cache.output_dims {
        return Err(Error::shape(
            "maxpool_backward",
            delta.shape_string(),
            format!("{:?}", cache.output_dims),
        ));
    }
    let [n, d, h, w] = cache.input_dims;
    let p = cache.sampling.padding;
    let mut canvas = Tensor4::zeros(n, d, h + 2 * p, w + 2 * p);
    for (&idx, &g) in cache.argmax.iter().zip(delta.data()) {
        canvas.data_mut()[idx] += g;
    }
    Ok(crop(&canvas, p, p))
}

#[derive(Clone, Debug)]
pub struct MaxPool {
    pub sampling: SamplingTriplet,
    pub(crate) cache: Option<PoolCache>,
}

impl MaxPool {
    pub fn new(sampling: SamplingTriplet) -> Self {
        MaxPool { sampling, cache: None }
    }

    pub fn forward(&mut self, a: &Tensor4) -> Result<Tensor4> {
        let (out, cache) = maxpool_forward(a, self.sampling)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, delta: &Tensor4) -> Result<Tensor4> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("maxpool"))?;
        maxpool_backward(delta, &cache)
    }

    pub fn output_shape(&self, input: DataShape) -> Result<DataShape> {
        match input {
            DataShape::Image { n, d, h, w } if h == w => {
                let r = out_resolution(h, self.sampling)?;
                Ok(DataShape::Image { n, d, h: r, w: r })
            }
            other => Err(Error::shape("maxpool", other, "n×d×r×r")),
        }
    }

    /// Marks every input cell of a window whose two largest values lie within `margin`.
    pub(crate) fn near_ties(&self, a: &Tensor4, margin: f64) -> Result<Vec<bool>> {
        let p = self.sampling;
        let [n, d, h, w] = a.dims();
        let r_out = out_resolution(h, p)?;
        let canvas = pad(a, p.padding);
        let mut mask = vec![false; a.data().len()];
        for s in 0..n {
            for c in 0..d {
                for oi in 0..r_out {
                    for oj in 0..r_out {
                        let mut vals = Vec::with_capacity(p.kernel * p.kernel);
                        let mut cells = Vec::new();
                        for ki in 0..p.kernel {
                            for kj in 0..p.kernel {
                                let (ci, cj) = (oi * p.stride + ki, oj * p.stride + kj);
                                vals.push(canvas.get(s, c, ci, cj));
                                if ci >= p.padding && cj >= p.padding && ci - p.padding < h && cj - p.padding < w {
                                    cells.push(a.offset(s, c, ci - p.padding, cj - p.padding));
                                }
                            }
                        }
                        vals.sort_by(|x, y| y.total_cmp(x));
                        if vals.len() > 1 && vals[0] - vals[1] < margin {
                            cells.into_iter().for_each(|i| mask[i] = true);
                        }
                    }
                }
            }
        }
        Ok(mask)
    }
}
