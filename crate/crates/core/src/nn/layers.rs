//! Layers with explicit forward/backward passes. Each layer caches what its
//! backward pass needs from the most recent training-mode forward call.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::conv3;
use super::reduce;
use super::tensor::Tensor;

/// A trainable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and the
    // row-major `c` (m×n); the slices outlive the call.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square-kernel convolution with zero "same" padding and stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    /// `cout × (cin·k·k)`, row-major.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
    /// Reused im2col buffers; contents are overwritten before every use.
    col: Vec<f32>,
    dcol: Vec<f32>,
}

impl Conv2d {
    /// He-normal initialized weights, zero bias.
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let fan_in = (cin * kernel * kernel) as f32;
        let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("valid std");
        let weight = (0..cout * cin * kernel * kernel)
            .map(|_| normal.sample(rng))
            .collect();
        Conv2d {
            cin,
            cout,
            kernel,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; cout]),
            input: None,
            col: Vec::new(),
            dcol: Vec::new(),
        }
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, col: &mut [f32]) {
        let k = self.kernel;
        let r = (k / 2) as isize;
        let hw = h * w;
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - r;
                    let dx = kx as isize - r;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        let dst = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        dst[..x0.min(w)].fill(0.0);
                        if x1 > x0 {
                            let s0 = (x0 as isize + dx) as usize;
                            dst[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                        }
                        dst[x1.max(x0).min(w)..].fill(0.0);
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f32], h: usize, w: usize, dx_out: &mut [f32]) {
        let k = self.kernel;
        let r = (k / 2) as isize;
        let hw = h * w;
        for ci in 0..self.cin {
            let plane = &mut dx_out[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - r;
                    let dx = kx as isize - r;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[y * w..(y + 1) * w];
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        if x1 > x0 {
                            let d0 = (x0 as isize + dx) as usize;
                            for (d, s) in dst[d0..d0 + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let out = self.apply(x);
        self.input = if train { Some(x.clone()) } else { None };
        out
    }

    /// As [`Conv2d::forward`], keeping `x` itself for the backward pass.
    pub fn forward_owned(&mut self, x: Tensor, train: bool) -> Tensor {
        let out = self.apply(&x);
        self.input = if train { Some(x) } else { None };
        out
    }

    fn apply(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let hw = x.hw();
        let kk = self.cin * self.kernel * self.kernel;
        let mut out = Tensor::zeros(x.n, self.cout, x.h, x.w);
        if self.kernel == 3 {
            let wb = conv3::block_weights(&self.weight.value, self.cout, self.cin, false);
            for i in 0..x.n {
                let y = out.item_mut(i);
                for (co, b) in self.bias.value.iter().enumerate() {
                    y[co * hw..(co + 1) * hw].fill(*b);
                }
                let (pad, stride) = conv3::pad_planes(x.item(i), x.c, x.h, x.w);
                conv3::conv_forward(&pad, stride, self.cin, x.h, x.w, &wb, y, self.cout);
            }
            return out;
        }
        let mut col = std::mem::take(&mut self.col);
        if self.kernel != 1 {
            col.resize(kk * hw, 0.0);
        }
        for i in 0..x.n {
            let y = out.item_mut(i);
            for (co, b) in self.bias.value.iter().enumerate() {
                y[co * hw..(co + 1) * hw].fill(*b);
            }
            let src: &[f32] = if self.kernel == 1 {
                x.item(i)
            } else {
                self.im2col(x.item(i), x.h, x.w, &mut col);
                &col
            };
            sgemm(
                self.cout,
                kk,
                hw,
                &self.weight.value,
                (kk as isize, 1),
                src,
                (hw as isize, 1),
                1.0,
                y,
            );
        }
        self.col = col;
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without cached forward");
        let hw = x.hw();
        let kk = self.cin * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        if self.kernel == 3 {
            let wt = conv3::block_weights(&self.weight.value, self.cout, self.cin, true);
            for i in 0..x.n {
                let g = dy.item(i);
                for co in 0..self.cout {
                    self.bias.grad[co] += reduce::sum(&g[co * hw..(co + 1) * hw]) as f32;
                }
                let (pad, stride) = conv3::pad_planes(x.item(i), x.c, x.h, x.w);
                conv3::conv_weight_grad(&pad, stride, self.cin, x.h, x.w, g, self.cout, &mut self.weight.grad);
                let (gpad, gstride) = conv3::pad_planes(g, self.cout, x.h, x.w);
                conv3::conv_forward(&gpad, gstride, self.cout, x.h, x.w, &wt, dx.item_mut(i), self.cin);
            }
            return dx;
        }
        let mut col = std::mem::take(&mut self.col);
        let mut dcol = std::mem::take(&mut self.dcol);
        if self.kernel != 1 {
            col.resize(kk * hw, 0.0);
            dcol.resize(kk * hw, 0.0);
        }
        for i in 0..x.n {
            let g = dy.item(i);
            for co in 0..self.cout {
                self.bias.grad[co] += g[co * hw..(co + 1) * hw].iter().sum::<f32>();
            }
            let src: &[f32] = if self.kernel == 1 {
                x.item(i)
            } else {
                self.im2col(x.item(i), x.h, x.w, &mut col);
                &col
            };
            // dW (cout×kk) += dY (cout×hw) · colᵀ (hw×kk)
            sgemm(
                self.cout,
                hw,
                kk,
                g,
                (hw as isize, 1),
                src,
                (1, hw as isize),
                1.0,
                &mut self.weight.grad,
            );
            // dcol (kk×hw) = Wᵀ (kk×cout) · dY (cout×hw)
            let target: &mut [f32] = if self.kernel == 1 { dx.item_mut(i) } else { &mut dcol };
            sgemm(
                kk,
                self.cout,
                hw,
                &self.weight.value,
                (1, kk as isize),
                g,
                (hw as isize, 1),
                0.0,
                target,
            );
            if self.kernel != 1 {
                self.col2im_add(&dcol, x.h, x.w, dx.item_mut(i));
            }
        }
        self.col = col;
        self.dcol = dcol;
        dx
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
        self.col = Vec::new();
        self.dcol = Vec::new();
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Batch normalization followed by ReLU, reading the first `channels`
/// channels of a (possibly wider) input tensor.
#[derive(Debug, Clone)]
pub struct BnRelu {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    input_channels: usize,
}

impl BnRelu {
    pub fn new(channels: usize) -> Self {
        BnRelu {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert!(x.c >= self.channels, "bn input narrower than layer");
        let c = self.channels;
        let hw = x.hw();
        let count = (x.n * hw) as f64;
        let mut out = Tensor::zeros(x.n, c, x.h, x.w);
        let mut xhat = if train { Tensor::zeros(x.n, c, x.h, x.w) } else { Tensor::zeros(0, 0, 0, 0) };
        let mut inv_stds = vec![0.0f32; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut s = 0.0f64;
                let mut ss = 0.0f64;
                for i in 0..x.n {
                    let (a, b) = reduce::sum_and_squares(&x.item(i)[ch * hw..(ch + 1) * hw]);
                    s += a;
                    ss += b;
                }
                let mean = s / count;
                let var = (ss / count - mean * mean).max(0.0);
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                self.running_mean[ch] =
                    (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * mean as f32;
                self.running_var[ch] =
                    (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * unbiased as f32;
                (mean as f32, var)
            } else {
                (self.running_mean[ch], self.running_var[ch] as f64)
            };
            let inv_std = (1.0 / (var + BN_EPS).sqrt()) as f32;
            inv_stds[ch] = inv_std;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..x.n {
                let src = &x.item(i)[ch * hw..(ch + 1) * hw];
                let dst = &mut out.item_mut(i)[ch * hw..(ch + 1) * hw];
                for (d, &v) in dst.iter_mut().zip(src) {
                    let xh = (v - mean) * inv_std;
                    *d = (g * xh + b).max(0.0);
                }
                if train {
                    let xh_dst = &mut xhat.item_mut(i)[ch * hw..(ch + 1) * hw];
                    for (d, &v) in xh_dst.iter_mut().zip(src) {
                        *d = (v - mean) * inv_std;
                    }
                }
            }
        }
        self.cache = train.then_some(BnCache {
            xhat,
            inv_std: inv_stds,
            input_channels: x.c,
        });
        out
    }

    /// Accumulates into `dx` (shaped like the forward input, possibly wider).
    pub fn backward_into(&mut self, dy: &Tensor, dx: &mut Tensor) {
        let cache = self.cache.take().expect("bn backward without cached forward");
        assert_eq!(dx.c, cache.input_channels);
        let c = self.channels;
        let hw = dy.hw();
        let count = (dy.n * hw) as f64;
        let mut dz = vec![0.0f32; dy.n * hw];
        for ch in 0..c {
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            let mut sum_dz = 0.0f64;
            let mut sum_dz_xh = 0.0f64;
            for i in 0..dy.n {
                let gy = &dy.item(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.item(i)[ch * hw..(ch + 1) * hw];
                let dzi = &mut dz[i * hw..(i + 1) * hw];
                for ((d, &x), &gv) in dzi.iter_mut().zip(xh).zip(gy) {
                    *d = if g * x + b > 0.0 { gv } else { 0.0 };
                }
                sum_dz += reduce::sum(dzi);
                sum_dz_xh += reduce::dot(dzi, xh);
            }
            self.beta.grad[ch] += sum_dz as f32;
            self.gamma.grad[ch] += sum_dz_xh as f32;
            let mean_dz = (sum_dz / count) as f32;
            let mean_dz_xh = (sum_dz_xh / count) as f32;
            let k = g * cache.inv_std[ch];
            for i in 0..dy.n {
                let xh = &cache.xhat.item(i)[ch * hw..(ch + 1) * hw];
                let dzi = &dz[i * hw..(i + 1) * hw];
                let dst = &mut dx.item_mut(i)[ch * hw..(ch + 1) * hw];
                for p in 0..hw {
                    dst[p] += k * (dzi[p] - mean_dz - xh[p] * mean_dz_xh);
                }
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Inverted dropout; identity outside training.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Dropout { rate, mask: None }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, mut x: Tensor, train: bool, rng: &mut R) -> Tensor {
        if !train || self.rate <= 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.data.len())
            .map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 })
            .collect();
        for (v, m) in x.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Tensor {
        if let Some(mask) = self.mask.take() {
            for (v, m) in dy.data.iter_mut().zip(&mask) {
                *v *= m;
            }
        }
        dy
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// 2×2 max pooling with stride 2 (input sides must be even).
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<u32>, (usize, usize, usize, usize))>,
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert!(x.h % 2 == 0 && x.w % 2 == 0, "maxpool needs even sides");
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let mut arg = vec![0u32; out.data.len()];
        let hw = x.hw();
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * hw..(nc + 1) * hw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * x.w + 2 * ox;
                    let cands = [base, base + 1, base + x.w, base + x.w + 1];
                    let mut best = cands[0];
                    for &c in &cands[1..] {
                        if src[c] > src[best] {
                            best = c;
                        }
                    }
                    let o = nc * oh * ow + oy * ow + ox;
                    out.data[o] = src[best];
                    arg[o] = best as u32;
                }
            }
        }
        self.argmax = train.then_some((arg, x.shape()));
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (arg, (n, c, h, w)) = self.argmax.take().expect("pool backward without cached forward");
        let mut dx = Tensor::zeros(n, c, h, w);
        let (ohw, hw) = (dy.hw(), h * w);
        for nc in 0..n * c {
            for o in 0..ohw {
                dx.data[nc * hw + arg[nc * ohw + o] as usize] += dy.data[nc * ohw + o];
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.argmax = None;
    }
}

/// Source taps for ×2 bilinear upsampling with half-pixel centers.
fn upsample_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|o| {
            let s = ((o as f32 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}

/// ×2 bilinear upsampling (half-pixel centers, edge clamped).
pub fn upsample2_forward(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let ty = upsample_taps(oh, x.h);
    let tx = upsample_taps(ow, x.w);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let hw = x.hw();
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * hw..(nc + 1) * hw];
        let dst = &mut out.data[nc * oh * ow..(nc + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * x.w + x0] * (1.0 - fx) + src[y0 * x.w + x1] * fx;
                let bot = src[y1 * x.w + x0] * (1.0 - fx) + src[y1 * x.w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let ty = upsample_taps(dy.h, h);
    let tx = upsample_taps(dy.w, w);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let ohw = dy.hw();
    for nc in 0..dy.n * dy.c {
        let g = &dy.data[nc * ohw..(nc + 1) * ohw];
        let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * dy.w + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    #[test]
    fn conv3x3_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(2, 3, 3, &mut rng);
        conv.bias.value = vec![0.1, -0.2, 0.3];
        let x = rand_tensor(2, 2, 5, 4, 2);
        let y = conv.forward(&x, false);
        for n in 0..2 {
            for co in 0..3 {
                for yy in 0..5i32 {
                    for xx in 0..4i32 {
                        let mut acc = conv.bias.value[co];
                        for ci in 0..2 {
                            for ky in 0..3i32 {
                                for kx in 0..3i32 {
                                    let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                    if sy < 0 || sy >= 5 || sx < 0 || sx >= 4 {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize];
                                    acc += wv * x.item(n)[ci * 20 + sy as usize * 4 + sx as usize];
                                }
                            }
                        }
                        let got = y.item(n)[co * 20 + yy as usize * 4 + xx as usize];
                        assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    /// Naive 3×3 forward, input gradient and weight gradient.
    fn naive_conv3(
        w: &[f32],
        x: &Tensor,
        g: &Tensor,
        cout: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, cin, h, wd) = x.shape();
        let mut y = vec![0.0f64; n * cout * h * wd];
        let mut dx = vec![0.0f64; x.data.len()];
        let mut dw = vec![0.0f64; w.len()];
        for b in 0..n {
            for o in 0..cout {
                for yy in 0..h as i64 {
                    for xx in 0..wd as i64 {
                        let oi = ((b * cout + o) * h + yy as usize) * wd + xx as usize;
                        for i in 0..cin {
                            for t in 0..9i64 {
                                let (sy, sx) = (yy + t / 3 - 1, xx + t % 3 - 1);
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= wd as i64 {
                                    continue;
                                }
                                let xi = ((b * cin + i) * h + sy as usize) * wd + sx as usize;
                                let wi = (o * cin + i) * 9 + t as usize;
                                y[oi] += w[wi] as f64 * x.data[xi] as f64;
                                dx[xi] += w[wi] as f64 * g.data[oi] as f64;
                                dw[wi] += g.data[oi] as f64 * x.data[xi] as f64;
                            }
                        }
                    }
                }
            }
        }
        (y, dx, dw)
    }

    #[test]
    fn direct_kernels_match_naive_loops() {
        for (cin, cout, h, w) in [(3, 5, 7, 19), (1, 9, 4, 33), (6, 4, 2, 2), (2, 1, 16, 16)] {
            let mut rng = ChaCha8Rng::seed_from_u64((cin * 100 + w) as u64);
            let mut conv = Conv2d::new(cin, cout, 3, &mut rng);
            let x = rand_tensor(2, cin, h, w, 3);
            let g = rand_tensor(2, cout, h, w, 4);
            let (y_ref, dx_ref, dw_ref) = naive_conv3(&conv.weight.value, &x, &g, cout);
            let y = conv.forward(&x, true);
            let dx = conv.backward(&g);
            let close = |a: &[f32], b: &[f64], what: &str| {
                for (k, (u, v)) in a.iter().zip(b).enumerate() {
                    assert!((*u as f64 - v).abs() < 1e-4 * (1.0 + v.abs()), "{what}[{k}] {u} vs {v} ({cin},{cout},{h},{w})");
                }
                assert_eq!(a.len(), b.len());
            };
            close(&y.data, &y_ref, "y");
            close(&dx.data, &dx_ref, "dx");
            close(&conv.weight.grad, &dw_ref, "dw");
        }
    }

    /// Checks `backward` against central differences of `⟨forward(x), probe⟩`.
    #[test]
    fn conv_backward_matches_finite_differences() {
        for k in [1, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let mut conv = Conv2d::new(2, 2, k, &mut rng);
            let x = rand_tensor(1, 2, 4, 3, 7);
            let probe = rand_tensor(1, 2, 4, 3, 8);
            conv.forward(&x, true);
            let dx = conv.backward(&probe);
            let eps = 1e-2f32;
            for idx in [0, 5, 13, 23] {
                let mut xp = x.clone();
                xp.data[idx] += eps;
                let mut xm = x.clone();
                xm.data[idx] -= eps;
                let fd = (dot(&conv.forward(&xp, false), &probe) - dot(&conv.forward(&xm, false), &probe))
                    / (2.0 * eps as f64);
                assert!((fd - dx.data[idx] as f64).abs() < 1e-3, "k={k} idx={idx}: {fd} vs {}", dx.data[idx]);
            }
            for idx in [0, 3, conv.weight.value.len() - 1] {
                let orig = conv.weight.value[idx];
                conv.weight.value[idx] = orig + eps;
                let fp = dot(&conv.forward(&x, false), &probe);
                conv.weight.value[idx] = orig - eps;
                let fm = dot(&conv.forward(&x, false), &probe);
                conv.weight.value[idx] = orig;
                let fd = (fp - fm) / (2.0 * eps as f64);
                assert!((fd - conv.weight.grad[idx] as f64).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn bn_relu_backward_matches_finite_differences() {
        let mut bn = BnRelu::new(2);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.2, -0.1];
        // a wider input: only the first two channels are normalized
        let x = rand_tensor(2, 3, 3, 3, 11);
        let probe = rand_tensor(2, 2, 3, 3, 12);
        let f = |bn: &mut BnRelu, x: &Tensor| {
            let saved = (bn.running_mean.clone(), bn.running_var.clone());
            let v = dot(&bn.forward(x, true), &probe);
            bn.running_mean = saved.0;
            bn.running_var = saved.1;
            bn.clear_cache();
            v
        };
        bn.forward(&x, true);
        let mut dx = Tensor::zeros(2, 3, 3, 3);
        bn.backward_into(&probe, &mut dx);
        let eps = 1e-3f32;
        for idx in [0, 4, 9, 17, 20, 30, 40] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (f(&mut bn, &xp) - f(&mut bn, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data[idx] as f64).abs() < 2e-3, "idx={idx}: {fd} vs {}", dx.data[idx]);
        }
        // third channel is untouched
        assert!(dx.item(0)[18..27].iter().all(|&v| v == 0.0));
        let orig = bn.gamma.value[1];
        bn.gamma.value[1] = orig + eps;
        let fp = f(&mut bn, &x);
        bn.gamma.value[1] = orig - eps;
        let fm = f(&mut bn, &x);
        bn.gamma.value[1] = orig;
        assert!(((fp - fm) / (2.0 * eps as f64) - bn.gamma.grad[1] as f64).abs() < 2e-3);
    }

    #[test]
    fn bn_eval_uses_running_stats() {
        let mut bn = BnRelu::new(1);
        bn.running_mean = vec![1.0];
        bn.running_var = vec![4.0 - BN_EPS as f32];
        let x = Tensor::from_vec(1, 1, 1, 2, vec![3.0, -1.0]).unwrap();
        let y = bn.forward(&x, false);
        assert!((y.data[0] - 1.0).abs() < 1e-6);
        assert_eq!(y.data[1], 0.0);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(1, 1, 2, 4, vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 9.0]).unwrap();
        let mut pool = MaxPool2::default();
        let y = pool.forward(&x, true);
        assert_eq!(y.data, vec![5.0, 9.0]);
        let dx = pool.backward(&Tensor::from_vec(1, 1, 1, 2, vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn upsample_matches_half_pixel_oracle_and_is_adjoint() {
        // Half-pixel ×2 upsampling of [0, 1] gives [0, 0.25, 0.75, 1].
        let x = Tensor::from_vec(1, 1, 1, 2, vec![0.0, 1.0]).unwrap();
        let y = upsample2_forward(&x);
        assert_eq!(y.data, vec![0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
        let a = rand_tensor(1, 2, 3, 5, 3);
        let b = rand_tensor(1, 2, 6, 10, 4);
        let lhs = dot(&upsample2_forward(&a), &b);
        let rhs = dot(&a, &upsample2_backward(&b));
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_unbiased_in_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dropout::new(0.2);
        let x = Tensor::from_vec(1, 1, 100, 100, vec![1.0; 10_000]).unwrap();
        assert_eq!(d.forward(x.clone(), false, &mut rng), x);
        let y = d.forward(x, true, &mut rng);
        let m = y.data.iter().sum::<f32>() / 10_000.0;
        assert!((m - 1.0).abs() < 0.05);
        let zeros = y.data.iter().filter(|&&v| v == 0.0).count();
        assert!((1700..2300).contains(&zeros));
    }
}
