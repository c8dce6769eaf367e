//! Direct 3×3 "same" convolution kernels.
//!
//! Inputs are copied once into zero-bordered planes whose row stride leaves
//! room for whole vector blocks, so the inner loops run without bounds
//! logic. Output channels are processed in blocks of [`CB`] and pixels in
//! runs of [`XB`], which keeps the accumulators in registers.

const CB: usize = 4;
const XB: usize = 16;
const LANES: usize = 8;

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Zero-bordered copy of `c` planes of `h × w`: row `y + 1`, column `x + 1`
/// holds `x[c, y, x]`. Returns the buffer and its row stride.
pub(super) fn pad_planes(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, usize) {
    let stride = round_up(w, XB) + XB;
    let plane = (h + 2) * stride;
    let mut out = vec![0.0f32; c * plane];
    for ci in 0..c {
        for y in 0..h {
            let src = &x[(ci * h + y) * w..][..w];
            out[ci * plane + (y + 1) * stride + 1..][..w].copy_from_slice(src);
        }
    }
    (out, stride)
}

/// Rearranges `cout × cin × 3 × 3` weights into `[block][ci][tap][CB]`,
/// zero-filling the missing channels of the last block. With `transpose`
/// the roles of input and output channels swap and taps are mirrored, which
/// turns the forward kernel into the input-gradient kernel.
pub(super) fn block_weights(w: &[f32], cout: usize, cin: usize, transpose: bool) -> Vec<f32> {
    let (o_n, i_n) = if transpose { (cin, cout) } else { (cout, cin) };
    let blocks = o_n.div_ceil(CB);
    let mut out = vec![0.0f32; blocks * i_n * 9 * CB];
    for o in 0..o_n {
        for i in 0..i_n {
            for t in 0..9 {
                let v = if transpose { w[(i * cin + o) * 9 + (8 - t)] } else { w[(o * cin + i) * 9 + t] };
                out[((o / CB * i_n + i) * 9 + t) * CB + o % CB] = v;
            }
        }
    }
    out
}

/// `out[o, y, x] += Σ_i Σ_taps wb · pad[i, y + ky, x + kx]` for one item.
pub(super) fn conv_forward(pad: &[f32], stride: usize, cin: usize, h: usize, w: usize, wb: &[f32], out: &mut [f32], cout: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            unsafe { forward_avx2(pad, stride, cin, h, w, wb, out, cout) };
            return;
        }
    }
    forward_kernel(pad, stride, cin, h, w, wb, out, cout);
}

/// `dw[o, i, tap] += Σ_{y,x} dy[o, y, x] · pad[i, y + ky, x + kx]` for one item.
pub(super) fn conv_weight_grad(pad: &[f32], stride: usize, cin: usize, h: usize, w: usize, dy: &[f32], cout: usize, dw: &mut [f32]) {
    let sw = round_up(w, LANES);
    let mut dys = vec![0.0f32; cout * h * sw];
    for o in 0..cout {
        for y in 0..h {
            dys[(o * h + y) * sw..][..w].copy_from_slice(&dy[(o * h + y) * w..][..w]);
        }
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            unsafe { weight_grad_avx2(pad, stride, cin, h, sw, &dys, cout, dw) };
            return;
        }
    }
    weight_grad_kernel(pad, stride, cin, h, sw, &dys, cout, dw);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn forward_avx2(pad: &[f32], stride: usize, cin: usize, h: usize, w: usize, wb: &[f32], out: &mut [f32], cout: usize) {
    use std::arch::x86_64::*;
    debug_assert_eq!((CB, XB), (4, 16));
    let plane = (h + 2) * stride;
    assert!(pad.len() >= cin * plane && round_up(w, XB) + 2 <= stride);
    let hw = h * w;
    let pp = pad.as_ptr();
    for blk in 0..cout.div_ceil(CB) {
        let wblk = &wb[blk * cin * 9 * CB..][..cin * 9 * CB];
        let wp = wblk.as_ptr();
        let o0 = blk * CB;
        let on = CB.min(cout - o0);
        for y in 0..h {
            for xb in (0..w).step_by(XB) {
                let mut a00 = _mm256_setzero_ps();
                let mut a01 = _mm256_setzero_ps();
                let mut a10 = _mm256_setzero_ps();
                let mut a11 = _mm256_setzero_ps();
                let mut a20 = _mm256_setzero_ps();
                let mut a21 = _mm256_setzero_ps();
                let mut a30 = _mm256_setzero_ps();
                let mut a31 = _mm256_setzero_ps();
                // SAFETY: bounds asserted above (every block start is followed
                // by XB + 2 readable values); weights hold `cin · 9 · CB` values
                // per block, consumed in order.
                let mut plane_ptr = pp.wrapping_add(y * stride + xb);
                let mut wt = wp;
                for _ in 0..cin {
                    let mut row = plane_ptr;
                    for _ in 0..3 {
                        for kx in 0..3 {
                            let s0 = _mm256_loadu_ps(row.wrapping_add(kx));
                            let s1 = _mm256_loadu_ps(row.wrapping_add(kx + 8));
                            let w0 = _mm256_broadcast_ss(&*wt);
                            let w1 = _mm256_broadcast_ss(&*wt.wrapping_add(1));
                            let w2 = _mm256_broadcast_ss(&*wt.wrapping_add(2));
                            let w3 = _mm256_broadcast_ss(&*wt.wrapping_add(3));
                            a00 = _mm256_fmadd_ps(w0, s0, a00);
                            a01 = _mm256_fmadd_ps(w0, s1, a01);
                            a10 = _mm256_fmadd_ps(w1, s0, a10);
                            a11 = _mm256_fmadd_ps(w1, s1, a11);
                            a20 = _mm256_fmadd_ps(w2, s0, a20);
                            a21 = _mm256_fmadd_ps(w2, s1, a21);
                            a30 = _mm256_fmadd_ps(w3, s0, a30);
                            a31 = _mm256_fmadd_ps(w3, s1, a31);
                            wt = wt.wrapping_add(CB);
                        }
                        row = row.wrapping_add(stride);
                    }
                    plane_ptr = plane_ptr.wrapping_add(plane);
                }
                let mut acc = [[0.0f32; XB]; CB];
                for (dst, (lo, hi)) in acc.iter_mut().zip([(a00, a01), (a10, a11), (a20, a21), (a30, a31)]) {
                    _mm256_storeu_ps(dst.as_mut_ptr(), lo);
                    _mm256_storeu_ps(dst.as_mut_ptr().add(8), hi);
                }
                let len = XB.min(w - xb);
                for (c, a) in acc.iter().enumerate().take(on) {
                    let dst = &mut out[(o0 + c) * hw + y * w + xb..][..len];
                    for (d, v) in dst.iter_mut().zip(a) {
                        *d += v;
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn weight_grad_avx2(pad: &[f32], stride: usize, cin: usize, h: usize, sw: usize, dys: &[f32], cout: usize, dw: &mut [f32]) {
    use std::arch::x86_64::*;
    let plane = (h + 2) * stride;
    assert!(pad.len() >= cin * plane && dys.len() >= cout * h * sw && sw + 2 <= stride);
    let pp = pad.as_ptr();
    let dp = dys.as_ptr();
    for i in 0..cin {
        for o in 0..cout {
            let mut acc = [_mm256_setzero_ps(); 9];
            // SAFETY: bounds asserted above; `sw` is a multiple of LANES and
            // rows of `pad` extend past `sw + 2`.
            let mut drow = dp.wrapping_add(o * h * sw);
            let mut prow = pp.wrapping_add(i * plane);
            for _ in 0..h {
                for (ky, taps) in acc.chunks_exact_mut(3).enumerate() {
                    let mut d = drow;
                    let mut p = prow.wrapping_add(ky * stride);
                    for _ in 0..sw / LANES {
                        let dv = _mm256_loadu_ps(d);
                        taps[0] = _mm256_fmadd_ps(dv, _mm256_loadu_ps(p), taps[0]);
                        taps[1] = _mm256_fmadd_ps(dv, _mm256_loadu_ps(p.wrapping_add(1)), taps[1]);
                        taps[2] = _mm256_fmadd_ps(dv, _mm256_loadu_ps(p.wrapping_add(2)), taps[2]);
                        d = d.wrapping_add(LANES);
                        p = p.wrapping_add(LANES);
                    }
                }
                drow = drow.wrapping_add(sw);
                prow = prow.wrapping_add(stride);
            }
            for (t, a) in acc.iter().enumerate() {
                let mut lanes = [0.0f32; LANES];
                _mm256_storeu_ps(lanes.as_mut_ptr(), *a);
                dw[(o * cin + i) * 9 + t] += lanes.iter().sum::<f32>();
            }
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn forward_kernel(pad: &[f32], stride: usize, cin: usize, h: usize, w: usize, wb: &[f32], out: &mut [f32], cout: usize) {
    let plane = (h + 2) * stride;
    let hw = h * w;
    for blk in 0..cout.div_ceil(CB) {
        let wblk = &wb[blk * cin * 9 * CB..][..cin * 9 * CB];
        let o0 = blk * CB;
        let on = CB.min(cout - o0);
        for y in 0..h {
            for xb in (0..w).step_by(XB) {
                let mut acc = [[0.0f32; XB]; CB];
                for i in 0..cin {
                    let base = i * plane + y * stride + xb;
                    let wi = &wblk[i * 9 * CB..][..9 * CB];
                    for ky in 0..3 {
                        let row = &pad[base + ky * stride..][..XB + 2];
                        for kx in 0..3 {
                            let s: &[f32; XB] = row[kx..kx + XB].try_into().expect("block");
                            let wt: &[f32; CB] = wi[(ky * 3 + kx) * CB..][..CB].try_into().expect("block");
                            for c in 0..CB {
                                let wv = wt[c];
                                for j in 0..XB {
                                    acc[c][j] += wv * s[j];
                                }
                            }
                        }
                    }
                }
                let len = XB.min(w - xb);
                for (c, a) in acc.iter().enumerate().take(on) {
                    let dst = &mut out[(o0 + c) * hw + y * w + xb..][..len];
                    for (d, v) in dst.iter_mut().zip(a) {
                        *d += v;
                    }
                }
            }
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn weight_grad_kernel(pad: &[f32], stride: usize, cin: usize, h: usize, sw: usize, dys: &[f32], cout: usize, dw: &mut [f32]) {
    let plane = (h + 2) * stride;
    for i in 0..cin {
        let p = &pad[i * plane..][..plane];
        for o in 0..cout {
            let d = &dys[o * h * sw..][..h * sw];
            let mut acc = [[0.0f32; LANES]; 9];
            for y in 0..h {
                let drow = &d[y * sw..][..sw];
                for ky in 0..3 {
                    let prow = &p[(y + ky) * stride..][..sw + 2];
                    for xb in (0..sw).step_by(LANES) {
                        let dv: &[f32; LANES] = drow[xb..xb + LANES].try_into().expect("lanes");
                        for kx in 0..3 {
                            let pv: &[f32; LANES] = prow[xb + kx..xb + kx + LANES].try_into().expect("lanes");
                            let a = &mut acc[ky * 3 + kx];
                            for j in 0..LANES {
                                a[j] += dv[j] * pv[j];
                            }
                        }
                    }
                }
            }
            for (t, a) in acc.iter().enumerate() {
                dw[(o * cin + i) * 9 + t] += a.iter().sum::<f32>();
            }
        }
    }
}
