//! Sliding-window arithmetic shared by convolution and pooling.
//!
//! Padding is always materialised as an explicit zero canvas. The lowering
//! `im2col` lays patch `q` of sample `s` out as column `q * n + s` (patches
//! row-major), with rows ordered depth-major, then kernel row, then kernel
//! column. [`unroll_kernels`] uses the same row order, so
//! `unroll_kernels(w) · im2col(a)` is the convolution in `d_out × (r·r·n)`
//! form and folds back with [`crate::tensor::f4d`].

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::parallel::{self, Execution};
use crate::tensor::{Matrix, Tensor4};

/// Kernel size, stride and zero padding of a sliding window, all in cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SamplingTriplet {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl SamplingTriplet {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Geometry(format!(
                "kernel and stride must be positive (k={kernel}, s={stride})"
            )));
        }
        Ok(SamplingTriplet {
            kernel,
            stride,
            padding,
        })
    }

    /// Size of the zero-padded canvas for an `r_in` input.
    pub fn padded(&self, r_in: usize) -> usize {
        r_in + 2 * self.padding
    }

    /// True when the windows tile the padded canvas with no leftover cells.
    pub fn fits_exactly(&self, r_in: usize) -> bool {
        self.padded(r_in) >= self.kernel && (self.padded(r_in) - self.kernel).is_multiple_of(self.stride)
    }
}

impl fmt::Display for SamplingTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(k={}, s={}, p={})", self.kernel, self.stride, self.padding)
    }
}

/// Geometry of the fractionally strided convolution that runs a forward
/// convolution's error backwards: a unit-stride window over the upstream
/// error with `internal_gap` zeros between neighbouring cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardSampling {
    pub base: SamplingTriplet,
    pub internal_gap: usize,
}

/// Output resolution `floor((r + 2p - k) / s) + 1`.
pub fn out_resolution(r_in: usize, p: SamplingTriplet) -> Result<usize> {
    if p.padded(r_in) < p.kernel {
        return Err(Error::Geometry(format!(
            "no window fits: r_in={r_in} with {p}"
        )));
    }
    Ok((p.padded(r_in) - p.kernel) / p.stride + 1)
}

/// Top-left corners of every window, in padded coordinates, row-major.
pub fn enumerate_patches(r_in: usize, p: SamplingTriplet) -> Result<Vec<(usize, usize)>> {
    let r_out = out_resolution(r_in, p)?;
    let mut origins = Vec::with_capacity(r_out * r_out);
    for i in 0..r_out {
        for j in 0..r_out {
            origins.push((i * p.stride, j * p.stride));
        }
    }
    Ok(origins)
}

/// Zero-pads both spatial axes by `padding` on every side.
pub fn pad(a: &Tensor4, padding: usize) -> Tensor4 {
    pad_asymmetric(a, padding, padding)
}

/// Zero-pads both spatial axes with `lo` cells before and `hi` cells after.
pub fn pad_asymmetric(a: &Tensor4, lo: usize, hi: usize) -> Tensor4 {
    if lo == 0 && hi == 0 {
        return a.clone();
    }
    let [n, d, h, w] = a.dims();
    let (ph, pw) = (h + lo + hi, w + lo + hi);
    let mut out = Tensor4::zeros(n, d, ph, pw);
    for s in 0..n {
        for c in 0..d {
            let src = a.plane(s, c);
            for i in 0..h {
                let o = out.offset(s, c, i + lo, lo);
                out.data_mut()[o..o + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
    }
    out
}

/// Drops `lo` leading and `hi` trailing cells on both spatial axes.
pub fn crop(a: &Tensor4, lo: usize, hi: usize) -> Tensor4 {
    if lo == 0 && hi == 0 {
        return a.clone();
    }
    let [n, d, h, w] = a.dims();
    Tensor4::from_fn(n, d, h - lo - hi, w - lo - hi, |s, c, i, j| a.get(s, c, i + lo, j + lo))
}

/// Lowers every window of `a` to a column: `(d·k·k) × (r_out·r_out·n)`.
pub fn im2col(a: &Tensor4, p: SamplingTriplet) -> Result<Matrix> {
    im2col_with(Execution::default(), a, p)
}

pub fn im2col_with(exec: Execution, a: &Tensor4, p: SamplingTriplet) -> Result<Matrix> {
    let [n, d, h, w] = a.dims();
    if h != w {
        return Err(Error::Geometry(format!("non-square input {h}x{w}")));
    }
    let r_out = out_resolution(h, p)?;
    let k = p.kernel;
    let canvas = pad(a, p.padding);
    let cw = canvas.width();
    let cols = r_out * r_out * n;
    let mut data = vec![0.0; d * k * k * cols];
    parallel::for_each_chunk_mut(exec, &mut data, cols, |row, out| {
        let c = row / (k * k);
        let ki = (row / k) % k;
        let kj = row % k;
        for s in 0..n {
            let plane = canvas.plane(s, c);
            for oi in 0..r_out {
                let src_row = (oi * p.stride + ki) * cw;
                for oj in 0..r_out {
                    out[(oi * r_out + oj) * n + s] = plane[src_row + oj * p.stride + kj];
                }
            }
        }
    });
    Matrix::new(d * k * k, cols, data)
}

/// Filter bank `d_out × d_in × k × k` to `d_out × (d_in·k·k)`.
pub fn unroll_kernels(w: &Tensor4) -> Matrix {
    let [d_out, d_in, kh, kw] = w.dims();
    Matrix::new(d_out, d_in * kh * kw, w.data().to_vec()).expect("non-empty filter bank")
}

/// Inverse of [`unroll_kernels`].
pub fn roll_kernels(m: &Matrix, d_in: usize, k: usize) -> Result<Tensor4> {
    if m.cols() != d_in * k * k {
        return Err(Error::shape(
            "roll_kernels",
            m.shape_string(),
            format!("{}x({d_in}*{k}*{k})", m.rows()),
        ));
    }
    Tensor4::new(m.rows(), d_in, k, k, m.data().to_vec())
}

/// Sampling of the backward pass for a forward window `p`: `(k, 1, k - p - 1)`
/// with `s - 1` zeros inserted between error cells.
pub fn backward_sampling(p: SamplingTriplet) -> Result<BackwardSampling> {
    if p.padding + 1 > p.kernel {
        return Err(Error::Geometry(format!(
            "backward padding k - p - 1 is negative for {p}"
        )));
    }
    Ok(BackwardSampling {
        base: SamplingTriplet {
            kernel: p.kernel,
            stride: 1,
            padding: p.kernel - p.padding - 1,
        },
        internal_gap: p.stride - 1,
    })
}

/// Spreads the spatial cells of `delta` apart by `gap` zeros.
pub fn dilate_internal(delta: &Tensor4, gap: usize) -> Tensor4 {
    if gap == 0 {
        return delta.clone();
    }
    let [n, d, h, w] = delta.dims();
    let step = gap + 1;
    let mut out = Tensor4::zeros(n, d, (h - 1) * step + 1, (w - 1) * step + 1);
    for s in 0..n {
        for c in 0..d {
            for i in 0..h {
                for j in 0..w {
                    out.set(s, c, i * step, j * step, delta.get(s, c, i, j));
                }
            }
        }
    }
    out
}

/// Swaps the two depth axes and rotates every kernel by 180 degrees.
pub fn rot180_transpose_depth(w: &Tensor4) -> Tensor4 {
    let [d_out, d_in, kh, kw] = w.dims();
    Tensor4::from_fn(d_in, d_out, kh, kw, |ci, co, i, j| {
        w.get(co, ci, kh - 1 - i, kw - 1 - j)
    })
}

/// One weight-mediated link between an input cell and an output cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Connection {
    pub input: (usize, usize),
    pub output: (usize, usize),
    /// Kernel offset in the forward (unrotated) orientation.
    pub tap: (usize, usize),
}

/// Links made by the forward windows of `p` over an `r_in × r_in` input.
/// Taps that land on padding are not links.
pub fn forward_connectivity(r_in: usize, p: SamplingTriplet) -> Result<BTreeSet<Connection>> {
    let r_out = out_resolution(r_in, p)?;
    let mut set = BTreeSet::new();
    for (q, (oi, oj)) in enumerate_patches(r_in, p)?.into_iter().enumerate() {
        let output = (q / r_out, q % r_out);
        for ti in 0..p.kernel {
            for tj in 0..p.kernel {
                let (pi, pj) = (oi + ti, oj + tj);
                if pi < p.padding || pj < p.padding {
                    continue;
                }
                let input = (pi - p.padding, pj - p.padding);
                if input.0 < r_in && input.1 < r_in {
                    set.insert(Connection {
                        input,
                        output,
                        tap: (ti, tj),
                    });
                }
            }
        }
    }
    Ok(set)
}

/// Links made by the fractionally strided backward convolution: unit-stride
/// windows of the rotated kernel over the dilated, re-padded error grid,
/// one window per input cell.
pub fn backward_connectivity(r_in: usize, p: SamplingTriplet) -> Result<BTreeSet<Connection>> {
    let r_out = out_resolution(r_in, p)?;
    let bs = backward_sampling(p)?;
    let k = p.kernel;
    let step = bs.internal_gap + 1;
    let dilated = (r_out - 1) * step + 1;
    let lo = bs.base.padding;
    let mut set = BTreeSet::new();
    let locate = |canvas: usize| -> Option<usize> {
        let idx = canvas.checked_sub(lo)?;
        (idx < dilated && idx % step == 0).then_some(idx / step)
    };
    for xi in 0..r_in {
        for xj in 0..r_in {
            for a in 0..k {
                for b in 0..k {
                    if let (Some(oi), Some(oj)) = (locate(xi + a), locate(xj + b)) {
                        set.insert(Connection {
                            input: (xi, xj),
                            output: (oi, oj),
                            tap: (k - 1 - a, k - 1 - b),
                        });
                    }
                }
            }
        }
    }
    Ok(set)
}
