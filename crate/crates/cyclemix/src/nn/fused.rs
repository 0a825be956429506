//! Hand-written CPU kernels for the normalisation and pooling layers, which
//! otherwise expand into many full-size temporaries per call.

use std::sync::{Arc, Mutex};

use candle_core::{CpuStorage, CustomOp1, CustomOp3, Layout, Result, Shape, Tensor};

use super::conv::contiguous_f32;

/// Standardises `(G, N, C)` over the `N` axis for every `(g, c)`:
/// `x̂ = (x − mean) / sqrt(var + eps)` with the biased variance.
///
/// The per-group statistics of the last forward call are left in `stats` as
/// `(mean, var)` pairs laid out `[g * C + c]`.
pub(crate) struct Standardize {
    pub groups: usize,
    pub eps: f64,
    pub stats: Arc<Mutex<Vec<(f64, f64)>>>,
}

fn moments(x: &[f32], groups: usize, n: usize, c: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(groups * c);
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    for g in 0..groups {
        sum.iter_mut().for_each(|v| *v = 0.0);
        let block = &x[g * n * c..(g + 1) * n * c];
        for row in block.chunks_exact(c) {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        sq.iter_mut().for_each(|v| *v = 0.0);
        for row in block.chunks_exact(c) {
            for ((q, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = v as f64 - m;
                *q += d * d;
            }
        }
        out.extend(mean.iter().zip(&sq).map(|(m, q)| (*m, q / n as f64)));
    }
    out
}

impl Standardize {
    fn dims(&self, layout: &Layout) -> Result<(usize, usize)> {
        let dims = layout.shape().dims();
        let c = *dims.last().unwrap_or(&1);
        let total = layout.shape().elem_count();
        if c == 0 || self.groups == 0 || !total.is_multiple_of(self.groups * c) {
            candle_core::bail!("standardize: shape {:?} does not split into {} groups", dims, self.groups);
        }
        Ok((total / (self.groups * c), c))
    }
}

impl CustomOp1 for Standardize {
    fn name(&self) -> &'static str {
        "standardize"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = contiguous_f32(storage, layout)?;
        let (n, c) = self.dims(layout)?;
        let stats = moments(x, self.groups, n, c);
        let inv: Vec<(f32, f32)> = stats.iter().map(|(m, v)| (*m as f32, (1.0 / (v + self.eps).sqrt()) as f32)).collect();
        let mut y = vec![0f32; x.len()];
        for g in 0..self.groups {
            let range = g * n * c..(g + 1) * n * c;
            let mi = &inv[g * c..(g + 1) * c];
            for (out, row) in y[range.clone()].chunks_exact_mut(c).zip(x[range].chunks_exact(c)) {
                for ((o, &v), (m, s)) in out.iter_mut().zip(row).zip(mi) {
                    *o = (v - m) * s;
                }
            }
        }
        *self.stats.lock().expect("statistics lock poisoned") = stats;
        Ok((CpuStorage::F32(y), layout.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let (n, c) = self.dims(arg.layout())?;
        let x = arg.flatten_all()?.to_vec1::<f32>()?;
        let xh = res.flatten_all()?.to_vec1::<f32>()?;
        let g = grad.flatten_all()?.to_vec1::<f32>()?;
        let stats = moments(&x, self.groups, n, c);
        let mut dx = vec![0f32; x.len()];
        let mut mg = vec![0f64; c];
        let mut mgx = vec![0f64; c];
        for grp in 0..self.groups {
            let range = grp * n * c..(grp + 1) * n * c;
            mg.iter_mut().for_each(|v| *v = 0.0);
            mgx.iter_mut().for_each(|v| *v = 0.0);
            for (gr, xr) in g[range.clone()].chunks_exact(c).zip(xh[range.clone()].chunks_exact(c)) {
                for k in 0..c {
                    mg[k] += gr[k] as f64;
                    mgx[k] += gr[k] as f64 * xr[k] as f64;
                }
            }
            let coef: Vec<(f32, f32, f32)> = (0..c)
                .map(|k| {
                    let inv = 1.0 / (stats[grp * c + k].1 + self.eps).sqrt();
                    (inv as f32, (mg[k] / n as f64) as f32, (mgx[k] / n as f64) as f32)
                })
                .collect();
            for ((out, gr), xr) in dx[range.clone()].chunks_exact_mut(c).zip(g[range.clone()].chunks_exact(c)).zip(xh[range].chunks_exact(c)) {
                for k in 0..c {
                    let (inv, m, mx) = coef[k];
                    out[k] = inv * (gr[k] - m - xr[k] * mx);
                }
            }
        }
        Ok(Some(Tensor::from_vec(dx, arg.shape(), arg.device())?))
    }
}

/// Training-mode batch norm over a contiguous `(N, C)` input with per-channel
/// `gamma`/`beta`, optionally followed by ReLU. Batch `(mean, var)` per channel
/// are left in `stats`.
pub(crate) struct BatchNormAct {
    pub eps: f64,
    pub relu: bool,
    pub stats: Arc<Mutex<Vec<(f64, f64)>>>,
}

fn channel_vec(storage: &CpuStorage, layout: &Layout, c: usize) -> Result<Vec<f32>> {
    let v = contiguous_f32(storage, layout)?;
    if v.len() != c {
        candle_core::bail!("batch norm: expected {c} channel parameters, got {}", v.len());
    }
    Ok(v.to_vec())
}

impl CustomOp3 for BatchNormAct {
    fn name(&self) -> &'static str {
        "batch-norm-act"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let (n, c) = l1.shape().dims2()?;
        let x = contiguous_f32(s1, l1)?;
        let gamma = channel_vec(s2, l2, c)?;
        let beta = channel_vec(s3, l3, c)?;
        let stats = moments(x, 1, n, c);
        let affine: Vec<(f32, f32)> = stats
            .iter()
            .zip(gamma.iter().zip(&beta))
            .map(|((m, v), (g, b))| {
                let scale = *g as f64 / (v + self.eps).sqrt();
                (scale as f32, (*b as f64 - m * scale) as f32)
            })
            .collect();
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(c) {
            y.extend(row.iter().zip(&affine).map(|(&v, (a, b))| {
                let o = v * a + b;
                if self.relu && o < 0.0 { 0.0 } else { o }
            }));
        }
        *self.stats.lock().expect("statistics lock poisoned") = stats;
        Ok((CpuStorage::F32(y), l1.shape().clone()))
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        arg2: &Tensor,
        _arg3: &Tensor,
        res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (n, c) = arg1.dims2()?;
        let x = arg1.flatten_all()?.to_vec1::<f32>()?;
        let gamma = arg2.flatten_all()?.to_vec1::<f32>()?;
        let y = res.flatten_all()?.to_vec1::<f32>()?;
        let mut g = grad.flatten_all()?.to_vec1::<f32>()?;
        let stats = self.stats.lock().expect("statistics lock poisoned").clone();
        let norm: Vec<(f32, f32)> = stats.iter().map(|(m, v)| (*m as f32, (1.0 / (v + self.eps).sqrt()) as f32)).collect();
        if self.relu {
            for (gi, yi) in g.iter_mut().zip(&y) {
                if *yi <= 0.0 {
                    *gi = 0.0;
                }
            }
        }
        let mut dbeta = vec![0f64; c];
        let mut dgamma = vec![0f64; c];
        for (gr, xr) in g.chunks_exact(c).zip(x.chunks_exact(c)) {
            for k in 0..c {
                let xh = (xr[k] - norm[k].0) * norm[k].1;
                dbeta[k] += gr[k] as f64;
                dgamma[k] += (gr[k] * xh) as f64;
            }
        }
        let coef: Vec<(f32, f32, f32)> = (0..c)
            .map(|k| (gamma[k] * norm[k].1, (dbeta[k] / n as f64) as f32, (dgamma[k] / n as f64) as f32))
            .collect();
        let mut dx = Vec::with_capacity(x.len());
        for (gr, xr) in g.chunks_exact(c).zip(x.chunks_exact(c)) {
            dx.extend((0..c).map(|k| {
                let xh = (xr[k] - norm[k].0) * norm[k].1;
                let (s, mb, mg) = coef[k];
                s * (gr[k] - mb - xh * mg)
            }));
        }
        let dev = arg1.device();
        let to_t = |v: Vec<f64>| Tensor::from_vec(v.into_iter().map(|e| e as f32).collect::<Vec<_>>(), c, dev);
        Ok((Some(Tensor::from_vec(dx, (n, c), dev)?), Some(to_t(dgamma)?), Some(to_t(dbeta)?)))
    }
}

/// 2×2, stride-2 max pooling of a contiguous `(B, H, W, C)` tensor; a trailing
/// odd row or column is dropped. Gradients go to the first maximum of each window.
pub(crate) struct MaxPool2;

fn pool_dims(layout: &Layout) -> Result<(usize, usize, usize, usize)> {
    layout.shape().dims4()
}

impl CustomOp1 for MaxPool2 {
    fn name(&self) -> &'static str {
        "max-pool2-nhwc"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = contiguous_f32(storage, layout)?;
        let (b, h, w, c) = pool_dims(layout)?;
        let (oh, ow) = (h / 2, w / 2);
        let mut y = vec![f32::NEG_INFINITY; b * oh * ow * c];
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let dst = ((bi * oh + oy) * ow + ox) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                        for (o, &v) in y[dst..dst + c].iter_mut().zip(&x[src..src + c]) {
                            if v > *o {
                                *o = v;
                            }
                        }
                    }
                }
            }
        }
        Ok((CpuStorage::F32(y), Shape::from((b, oh, ow, c))))
    }

    fn bwd(&self, arg: &Tensor, res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let (b, h, w, c) = arg.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        let x = arg.flatten_all()?.to_vec1::<f32>()?;
        let y = res.flatten_all()?.to_vec1::<f32>()?;
        let g = grad.flatten_all()?.to_vec1::<f32>()?;
        let mut dx = vec![0f32; x.len()];
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((bi * oh + oy) * ow + ox) * c;
                    for k in 0..c {
                        for (dy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let i = ((bi * h + 2 * oy + dy) * w + 2 * ox + ddx) * c + k;
                            if x[i] == y[o + k] {
                                dx[i] = g[o + k];
                                break;
                            }
                        }
                    }
                }
            }
        }
        Ok(Some(Tensor::from_vec(dx, arg.shape(), arg.device())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn standardize(x: &Tensor, groups: usize) -> Tensor {
        let op = Standardize { groups, eps: 1e-5, stats: Arc::default() };
        x.apply_op1(op).unwrap()
    }

    fn reference(x: &Tensor) -> Tensor {
        let mean = x.mean_keepdim(1).unwrap();
        let centred = x.broadcast_sub(&mean).unwrap();
        let var = centred.sqr().unwrap().mean_keepdim(1).unwrap();
        centred.broadcast_div(&(var + 1e-5).unwrap().sqrt().unwrap()).unwrap()
    }

    #[test]
    fn standardize_matches_composed_ops_and_gradients() {
        let data: Vec<f32> = (0..2 * 5 * 3).map(|i| ((i * 37 % 17) as f32 - 8.0) / 3.0).collect();
        let x = Var::from_tensor(&Tensor::from_vec(data, (2, 5, 3), &Device::Cpu).unwrap()).unwrap();
        let w = Tensor::from_vec((0..30).map(|i| (i % 7) as f32 - 3.0).collect::<Vec<_>>(), (2, 5, 3), &Device::Cpu).unwrap();
        let fused = standardize(&x, 2);
        let composed = reference(&x);
        let diff = (&fused - &composed).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5, "{diff}");
        let ga = (&fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (&composed * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let (ga, gb) = (ga.get(&x).unwrap(), gb.get(&x).unwrap());
        let diff = (ga - gb).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn batch_norm_act_matches_composed_ops_and_gradients() {
        let dev = Device::Cpu;
        let data: Vec<f32> = (0..12 * 3).map(|i| ((i * 29 % 23) as f32 - 11.0) / 4.0).collect();
        let x = Var::from_tensor(&Tensor::from_vec(data, (12, 3), &dev).unwrap()).unwrap();
        let gamma = Var::from_tensor(&Tensor::new(&[0.5f32, -1.5, 2.0], &dev).unwrap()).unwrap();
        let beta = Var::from_tensor(&Tensor::new(&[0.1f32, 0.3, -0.2], &dev).unwrap()).unwrap();
        let w = Tensor::from_vec((0..36).map(|i| (i % 5) as f32 - 2.0).collect::<Vec<_>>(), (12, 3), &dev).unwrap();
        for relu in [false, true] {
            let op = BatchNormAct { eps: 1e-5, relu, stats: Arc::default() };
            let fused = x.apply_op3(&gamma, &beta, op).unwrap();
            let mean = x.mean_keepdim(0).unwrap();
            let centred = x.broadcast_sub(&mean).unwrap();
            let var = centred.sqr().unwrap().mean_keepdim(0).unwrap();
            let xh = centred.broadcast_div(&(var + 1e-5).unwrap().sqrt().unwrap()).unwrap();
            let mut composed = xh.broadcast_mul(&gamma).unwrap().broadcast_add(&beta).unwrap();
            if relu {
                composed = composed.relu().unwrap();
            }
            let diff = (&fused - &composed).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(diff < 1e-5, "{diff}");
            let ga = (&fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
            let gb = (&composed * &w).unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &gamma, &beta] {
                let d = (ga.get(v).unwrap() - gb.get(v).unwrap()).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
                assert!(d < 1e-4, "relu {relu}: {d}");
            }
        }
    }

    #[test]
    fn max_pool_gradient_routes_to_window_maximum() {
        let x = Var::from_tensor(
            &Tensor::from_vec(vec![1f32, 5., 2., 0., 3., 4., 9., 8., 0., 0., 1., 1., 0., 7., 1., 2.], (1, 4, 4, 1), &Device::Cpu).unwrap(),
        )
        .unwrap();
        let y = x.apply_op1(MaxPool2).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![5., 9., 7., 2.]);
        let g = y.affine(1.0, 0.0).unwrap().sum_all().unwrap().backward().unwrap();
        let gx = g.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(gx, vec![0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0., 1.]);
    }
}
