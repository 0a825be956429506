//! Channel-last 2-D convolution as one custom op: im2col followed by a single
//! gemm, with a backward pass of two gemms plus the adjoint gather.

use std::sync::{Arc, Mutex};

use candle_core::{CpuStorage, CustomOp2, Layout, Result, Shape, Tensor};
use gemm::{gemm, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: (usize, usize, usize, usize), kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let (batch, height, width, channels) = input;
        if height + 2 * padding < kernel || width + 2 * padding < kernel {
            candle_core::bail!("conv kernel {kernel} larger than padded input {height}x{width}");
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: (height + 2 * padding - kernel) / stride + 1,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    fn rows(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }

    /// Calls `f(column_offset, input_offset)` for every in-bounds tap; each
    /// offset addresses a run of `channels` contiguous values.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let patch = self.patch_len();
        let c = self.channels;
        for b in 0..self.batch {
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    let row = ((b * self.out_height + oy) * self.out_width + ox) * patch;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let src = ((b * self.height + iy as usize) * self.width + ix as usize) * c;
                            f(row + (ky * self.kernel + kx) * c, src);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn contiguous_f32<'a>(storage: &'a CpuStorage, layout: &Layout) -> Result<&'a [f32]> {
    let data = match storage {
        CpuStorage::F32(v) => v,
        _ => candle_core::bail!("convolution supports f32 tensors only"),
    };
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("convolution op expects a contiguous input"),
    }
}

impl ConvGeometry {
    fn im2col(&self, x: &[f32]) -> Vec<f32> {
        let c = self.channels;
        let mut cols = vec![0f32; self.rows() * self.patch_len()];
        self.for_each_tap(|dst, src| cols[dst..dst + c].copy_from_slice(&x[src..src + c]));
        cols
    }

    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let c = self.channels;
        let mut x = vec![0f32; self.batch * self.height * self.width * c];
        self.for_each_tap(|src, dst| {
            for (o, v) in x[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                *o += v;
            }
        });
        x
    }
}

/// Row-major `dst (m×n) = lhs (m×k) · rhs (k×n)` where each operand is given
/// by its (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn matmul_strided(
    dst: &mut [f32],
    (m, n, k): (usize, usize, usize),
    lhs: &[f32],
    (lhs_rs, lhs_cs): (usize, usize),
    rhs: &[f32],
    (rhs_rs, rhs_cs): (usize, usize),
) {
    assert_eq!(dst.len(), m * n);
    assert!(m == 0 || k == 0 || (m - 1) * lhs_rs + (k - 1) * lhs_cs < lhs.len());
    assert!(n == 0 || k == 0 || (k - 1) * rhs_rs + (n - 1) * rhs_cs < rhs.len());
    // SAFETY: the asserts above keep every addressed element in bounds and
    // `dst` does not alias either operand.
    unsafe {
        gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            false,
            lhs.as_ptr(),
            lhs_cs as isize,
            lhs_rs as isize,
            rhs.as_ptr(),
            rhs_cs as isize,
            rhs_rs as isize,
            0.0,
            1.0,
            false,
            false,
            false,
            Parallelism::None,
        );
    }
}

/// Convolution of `(B, H, W, C)` with a `(k·k·C, O)` weight; the im2col
/// matrix of the last forward call is kept for the weight gradient.
pub(crate) struct Conv2d {
    geometry: ConvGeometry,
    out_channels: usize,
    cols: Arc<Mutex<Vec<f32>>>,
}

impl CustomOp2 for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d-nhwc"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.geometry;
        let x = contiguous_f32(s1, l1)?;
        let w = contiguous_f32(s2, l2)?;
        let (p, o) = (g.patch_len(), self.out_channels);
        let cols = g.im2col(x);
        let mut y = vec![0f32; g.rows() * o];
        matmul_strided(&mut y, (g.rows(), o, p), &cols, (p, 1), w, (o, 1));
        *self.cols.lock().expect("im2col lock poisoned") = cols;
        Ok((CpuStorage::F32(y), Shape::from((g.batch, g.out_height, g.out_width, o))))
    }

    fn bwd(&self, arg1: &Tensor, arg2: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let g = self.geometry;
        let (p, o, rows) = (g.patch_len(), self.out_channels, g.rows());
        let dy = grad.flatten_all()?.to_vec1::<f32>()?;
        let cols = self.cols.lock().expect("im2col lock poisoned");
        let mut dw = vec![0f32; p * o];
        matmul_strided(&mut dw, (p, o, rows), &cols, (1, p), &dy, (o, 1));
        drop(cols);
        let dw = Tensor::from_vec(dw, (p, o), arg2.device())?;
        let dx = if arg1.track_op() {
            let w = arg2.flatten_all()?.to_vec1::<f32>()?;
            let mut dcols = vec![0f32; rows * p];
            matmul_strided(&mut dcols, (rows, p, o), &dy, (o, 1), &w, (1, o));
            Some(Tensor::from_vec(g.col2im(&dcols), arg1.shape(), arg1.device())?)
        } else {
            None
        };
        Ok((dx, Some(dw)))
    }
}

/// `input`: `(B, H, W, C)`; `weight`: `(k·k·C, O)` with rows ordered
/// `(ky, kx, c)`. Returns `(B, H', W', O)`.
pub fn conv2d_nhwc(input: &Tensor, weight: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let geometry = ConvGeometry::new(input.dims4()?, kernel, stride, padding)?;
    let (patch, out_channels) = weight.dims2()?;
    if patch != geometry.patch_len() {
        candle_core::bail!("conv weight has {patch} rows, expected {}", geometry.patch_len());
    }
    let op = Conv2d { geometry, out_channels, cols: Arc::default() };
    input.contiguous()?.apply_op2(&weight.contiguous()?, op)
}

/// Nearest-neighbour ×2 upsampling of a `(B, H, W, C)` tensor.
pub fn upsample2_nhwc(input: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = input.dims4()?;
    input
        .reshape((b, h, 1, w, 1, c))?
        .broadcast_as((b, h, 2, w, 2, c))?
        .contiguous()?
        .reshape((b, 2 * h, 2 * w, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    /// Direct convolution oracle on NHWC data.
    fn naive(x: &[f32], dims: (usize, usize, usize, usize), w: &[f32], k: usize, o: usize, s: usize, p: usize) -> Vec<f32> {
        let (b, h, wd, c) = dims;
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0f32; b * ho * wo * o];
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for oc in 0..o {
                        let mut acc = 0f32;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    let xv = x[((bi * h + iy as usize) * wd + ix as usize) * c + ci];
                                    acc += xv * w[((ky * k + kx) * c + ci) * o + oc];
                                }
                            }
                        }
                        out[((bi * ho + oy) * wo + ox) * o + oc] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f32) -> Vec<f32> {
        (0..n).map(|i| ((i * 37 % 23) as f32 - 11.0) * scale).collect()
    }

    #[test]
    fn matches_direct_convolution() {
        let dev = Device::Cpu;
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (4, 2, 1), (7, 1, 3), (1, 1, 0)] {
            let dims = (2, 9, 8, 3);
            let x = ramp(2 * 9 * 8 * 3, 0.05);
            let w = ramp(k * k * 3 * 4, 0.03);
            let xt = Tensor::from_vec(x.clone(), dims, &dev).unwrap();
            let wt = Tensor::from_vec(w.clone(), (k * k * 3, 4), &dev).unwrap();
            let got = conv2d_nhwc(&xt, &wt, k, s, p).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let want = naive(&x, dims, &w, k, 4, s, p);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "k{k} s{s} p{p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let dev = Device::Cpu;
        let dims = (1, 5, 5, 2);
        let x0 = ramp(50, 0.1);
        let w = Tensor::from_vec(ramp(9 * 2 * 3, 0.07), (18, 3), &dev).unwrap();
        let x = Var::from_tensor(&Tensor::from_vec(x0.clone(), dims, &dev).unwrap()).unwrap();
        let loss = |t: &Tensor| conv2d_nhwc(t, &w, 3, 2, 1).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss(x.as_tensor()).backward().unwrap();
        let g = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let eps = 1e-2f32;
        for i in [0usize, 7, 13, 24, 49] {
            let mut plus = x0.clone();
            plus[i] += eps;
            let mut minus = x0.clone();
            minus[i] -= eps;
            let f = |v: Vec<f32>| loss(&Tensor::from_vec(v, dims, &dev).unwrap()).to_scalar::<f32>().unwrap();
            let numeric = (f(plus) - f(minus)) / (2.0 * eps);
            assert!((numeric - g[i]).abs() < 1e-2 * (1.0 + numeric.abs()), "index {i}: {numeric} vs {}", g[i]);
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let dev = Device::Cpu;
        let dims = (2, 4, 5, 2);
        let x = Tensor::from_vec(ramp(80, 0.1), dims, &dev).unwrap();
        let w0 = ramp(9 * 2 * 3, 0.07);
        let w = Var::from_tensor(&Tensor::from_vec(w0.clone(), (18, 3), &dev).unwrap()).unwrap();
        let loss = |t: &Tensor| conv2d_nhwc(&x, t, 3, 1, 1).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss(w.as_tensor()).backward().unwrap();
        assert!(grads.get(&x).is_none());
        let g = grads.get(w.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let eps = 1e-2f32;
        for i in [0usize, 5, 17, 30, 53] {
            let mut plus = w0.clone();
            plus[i] += eps;
            let mut minus = w0.clone();
            minus[i] -= eps;
            let f = |v: Vec<f32>| loss(&Tensor::from_vec(v, (18, 3), &dev).unwrap()).to_scalar::<f32>().unwrap();
            let numeric = (f(plus) - f(minus)) / (2.0 * eps);
            assert!((numeric - g[i]).abs() < 1e-2 * (1.0 + numeric.abs()), "index {i}: {numeric} vs {}", g[i]);
        }
    }

    #[test]
    fn upsample_repeats_pixels() {
        let dev = Device::Cpu;
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 2, 2, 1), &dev).unwrap();
        let y = upsample2_nhwc(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(y, vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]);
    }
}
