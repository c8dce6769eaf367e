//! Reductions with independent accumulator lanes, so the compiler can keep
//! several additions in flight instead of serializing on one sum.

const LANES: usize = 8;

pub(crate) fn sum(xs: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for j in 0..LANES {
            acc[j] += c[j] as f64;
        }
    }
    acc.iter().sum::<f64>() + tail.iter().map(|&v| v as f64).sum::<f64>()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x as f64 * y as f64).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..LANES {
            acc[j] += x[j] as f64 * y[j] as f64;
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `(Σx, Σx²)`.
pub(crate) fn sum_and_squares(xs: &[f32]) -> (f64, f64) {
    let mut s = [0.0f64; LANES];
    let mut ss = [0.0f64; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for j in 0..LANES {
            let v = c[j] as f64;
            s[j] += v;
            ss[j] += v * v;
        }
    }
    let (mut ts, mut tss) = (0.0, 0.0);
    for &v in tail {
        ts += v as f64;
        tss += v as f64 * v as f64;
    }
    (s.iter().sum::<f64>() + ts, ss.iter().sum::<f64>() + tss)
}
