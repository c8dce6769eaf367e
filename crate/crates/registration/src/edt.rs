//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas.

/// Euclidean distance from every pixel center to the nearest pixel with
/// `inside[i] == true`, capped at `cap` (also the value for an empty set).
pub(crate) fn distance_to_set(inside: &[bool], height: usize, width: usize, cap: f32) -> Vec<f32> {
    const FAR: f64 = 1e20;
    let mut f: Vec<f64> = inside.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let mut scratch = Scratch::new(height.max(width));
    let mut col = vec![0.0f64; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = f[y * width + x];
        }
        scratch.transform(&col);
        for y in 0..height {
            f[y * width + x] = scratch.out[y];
        }
    }
    for y in 0..height {
        let row = &mut f[y * width..(y + 1) * width];
        scratch.transform(row);
        row.copy_from_slice(&scratch.out[..width]);
    }
    f.iter().map(|&d2| (d2.sqrt() as f32).min(cap)).collect()
}

struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
    out: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            v: vec![0; n],
            z: vec![0.0; n + 1],
            out: vec![0.0; n],
        }
    }

    /// 1-D squared distance transform `out[q] = min_p (q − p)² + f[p]`.
    fn transform(&mut self, f: &[f64]) {
        let n = f.len();
        let (v, z) = (&mut self.v, &mut self.z);
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            loop {
                let p = v[k];
                let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    // k == 0 and the new parabola dominates everywhere
                    v[0] = q;
                    z[1] = f64::INFINITY;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                }
                break;
            }
        }
        let mut k = 0usize;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let d = q as f64 - v[k] as f64;
            self.out[q] = d * d + f[v[k]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(inside: &[bool], h: usize, w: usize, cap: f32) -> Vec<f32> {
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let best = (0..h * w)
                    .filter(|&j| inside[j])
                    .map(|j| ((j / w) as f64 - y).hypot((j % w) as f64 - x))
                    .fold(f64::INFINITY, f64::min);
                (best as f32).min(cap)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(h in 1usize..12, w in 1usize..12, bits in prop::collection::vec(prop::bool::weighted(0.15), 144)) {
            let inside = &bits[..h * w];
            let fast = distance_to_set(inside, h, w, 100.0);
            let slow = brute(inside, h, w, 100.0);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn empty_set_is_capped() {
        assert!(distance_to_set(&[false; 6], 2, 3, 7.5).iter().all(|&d| d == 7.5));
    }
}
