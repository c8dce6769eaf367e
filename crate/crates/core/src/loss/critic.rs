use serde::{Deserialize, Serialize};

use crate::error::{ComirError, Result};

/// Guard added to each norm of the cosine critic.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    Mse,
    Cosine,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Shape of one representation: `channels × height × width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        LatentShape {
            channels,
            height,
            width,
        }
    }

    /// A flat vector of `len` values, seen as `len` channels at one pixel.
    pub fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Similarity `h(a, b)` between two representations.
///
/// The bilinear critic applies a `c × c` matrix per pixel and averages over
/// pixels: `h = (1/P) Σ_p a(p)ᵀ W b(p)`. For a single-pixel shape this is the
/// plain `flatten(a)ᵀ W flatten(b)` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub kind: CriticKind,
    /// Row-major `c × c` weights; present iff `kind == Bilinear`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bilinear_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub reduction: Reduction,
}

impl CriticSpec {
    pub fn mse() -> Self {
        CriticSpec {
            kind: CriticKind::Mse,
            bilinear_weights: None,
            reduction: Reduction::Mean,
        }
    }

    pub fn cosine() -> Self {
        CriticSpec {
            kind: CriticKind::Cosine,
            bilinear_weights: None,
            reduction: Reduction::Mean,
        }
    }

    pub fn bilinear(weights: Vec<f64>) -> Self {
        CriticSpec {
            kind: CriticKind::Bilinear,
            bilinear_weights: Some(weights),
            reduction: Reduction::Mean,
        }
    }

    /// Identity plus a small seeded perturbation, for a `c`-channel representation.
    pub fn bilinear_init(channels: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; channels * channels];
        for i in 0..channels {
            for j in 0..channels {
                let noise = rng.random_range(-0.01..0.01);
                w[i * channels + j] = if i == j { 1.0 } else { 0.0 } + noise;
            }
        }
        Self::bilinear(w)
    }

    pub fn validate(&self, shape: LatentShape) -> Result<()> {
        match (self.kind, &self.bilinear_weights) {
            (CriticKind::Bilinear, Some(w)) => {
                if w.len() != shape.channels * shape.channels {
                    return Err(ComirError::ShapeMismatch(format!(
                        "bilinear weights have {} entries, need {}x{}",
                        w.len(),
                        shape.channels,
                        shape.channels
                    )));
                }
                Ok(())
            }
            (CriticKind::Bilinear, None) => Err(ComirError::Config(
                "bilinear critic requires weights".into(),
            )),
            (_, Some(_)) => Err(ComirError::Config(
                "only the bilinear critic takes weights".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        !matches!(self.kind, CriticKind::Bilinear)
    }

    /// Evaluates `h(a, b)` for two flattened representations of `shape`.
    pub fn eval(&self, shape: LatentShape, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() || a.len() != shape.len() {
            return Err(ComirError::ShapeMismatch(format!(
                "critic inputs of length {} and {}, shape needs {}",
                a.len(),
                b.len(),
                shape.len()
            )));
        }
        match self.kind {
            CriticKind::Mse => {
                let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                Ok(match self.reduction {
                    Reduction::Mean => -ss / a.len() as f64,
                    Reduction::Sum => -ss,
                })
            }
            CriticKind::Cosine => {
                let na = norm(a);
                let nb = norm(b);
                if na < COSINE_EPS && nb < COSINE_EPS {
                    return Err(ComirError::Degenerate(
                        "cosine critic with two (near-)zero inputs".into(),
                    ));
                }
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                Ok(dot / ((na + COSINE_EPS) * (nb + COSINE_EPS)))
            }
            CriticKind::Bilinear => {
                self.validate(shape)?;
                let w = self.bilinear_weights.as_ref().expect("validated");
                Ok(bilinear_form(w, shape, a, b))
            }
        }
    }

    /// Adds `scale · ∂h/∂a` to `ga` and `scale · ∂h/∂b` to `gb`.
    pub(crate) fn accumulate_grad(
        &self,
        shape: LatentShape,
        a: &[f64],
        b: &[f64],
        scale: f64,
        ga: &mut [f64],
        gb: &mut [f64],
    ) {
        match self.kind {
            CriticKind::Mse => {
                let k = match self.reduction {
                    Reduction::Mean => 2.0 / a.len() as f64,
                    Reduction::Sum => 2.0,
                } * scale;
                for i in 0..a.len() {
                    let d = k * (a[i] - b[i]);
                    ga[i] -= d;
                    gb[i] += d;
                }
            }
            CriticKind::Cosine => {
                let na = norm(a);
                let nb = norm(b);
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let (da, db) = (na + COSINE_EPS, nb + COSINE_EPS);
                let inv = 1.0 / (da * db);
                // ∂/∂a [dot / ((|a|+ε)(|b|+ε))] = b/(da·db) − dot/(da²·db) · a/|a|
                let ka = if na > 0.0 { dot / (da * da * db * na) } else { 0.0 };
                let kb = if nb > 0.0 { dot / (db * db * da * nb) } else { 0.0 };
                for i in 0..a.len() {
                    ga[i] += scale * (b[i] * inv - ka * a[i]);
                    gb[i] += scale * (a[i] * inv - kb * b[i]);
                }
            }
            CriticKind::Bilinear => {
                let w = self.bilinear_weights.as_ref().expect("validated");
                let c = shape.channels;
                let p = shape.pixels();
                let k = scale / p as f64;
                for px in 0..p {
                    for i in 0..c {
                        let ai = a[i * p + px];
                        for j in 0..c {
                            // h = Σ a_i W_ij b_j
                            ga[i * p + px] += k * w[i * c + j] * b[j * p + px];
                            gb[j * p + px] += k * w[i * c + j] * ai;
                        }
                    }
                }
            }
        }
    }

    /// Adds `scale · ∂h/∂W` for the bilinear critic.
    pub(crate) fn accumulate_weight_grad(
        &self,
        shape: LatentShape,
        a: &[f64],
        b: &[f64],
        scale: f64,
        gw: &mut [f64],
    ) {
        let c = shape.channels;
        let p = shape.pixels();
        let k = scale / p as f64;
        for i in 0..c {
            for j in 0..c {
                let s: f64 = (0..p).map(|px| a[i * p + px] * b[j * p + px]).sum();
                gw[i * c + j] += k * s;
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bilinear_form(w: &[f64], shape: LatentShape, a: &[f64], b: &[f64]) -> f64 {
    let c = shape.channels;
    let p = shape.pixels();
    let mut acc = 0.0;
    for px in 0..p {
        for i in 0..c {
            let ai = a[i * p + px];
            if ai == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..c {
                row += w[i * c + j] * b[j * p + px];
            }
            acc += ai * row;
        }
    }
    acc / p as f64
}

/// Evaluates a critic on two flattened representations.
pub fn critic_eval(spec: &CriticSpec, shape: LatentShape, y1: &[f64], y2: &[f64]) -> Result<f64> {
    spec.eval(shape, y1, y2)
}
