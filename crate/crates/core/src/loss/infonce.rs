use serde::{Deserialize, Serialize};

use super::critic::{CriticKind, CriticSpec, LatentShape};
use crate::error::{ComirError, Result};

/// Transformation group the positives are routed through during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    #[default]
    C4,
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    #[serde(default)]
    pub group: Group,
    #[serde(default = "default_modalities")]
    pub modalities: usize,
}

fn default_modalities() -> usize {
    2
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ComirError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.modalities < 2 {
            return Err(ComirError::Config(format!(
                "need at least 2 modalities, got {}",
                self.modalities
            )));
        }
        Ok(())
    }
}

/// `M × N` representations flattened modality-major: index `m·N + k` is the
/// `k`-th tuple's representation in modality `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    modalities: usize,
    tuples: usize,
    shape: LatentShape,
    z: Vec<Vec<f64>>,
}

impl LatentBatch {
    pub fn new(modalities: usize, tuples: usize, shape: LatentShape, z: Vec<Vec<f64>>) -> Result<Self> {
        if tuples < 2 {
            return Err(ComirError::BatchTooSmall(tuples));
        }
        if modalities < 2 {
            return Err(ComirError::Config(format!("need at least 2 modalities, got {modalities}")));
        }
        if z.len() != modalities * tuples {
            return Err(ComirError::ShapeMismatch(format!(
                "{} latents for {modalities} modalities x {tuples} tuples",
                z.len()
            )));
        }
        if let Some(bad) = z.iter().position(|v| v.len() != shape.len()) {
            return Err(ComirError::ShapeMismatch(format!(
                "latent {bad} has {} values, shape needs {}",
                z[bad].len(),
                shape.len()
            )));
        }
        Ok(LatentBatch {
            modalities,
            tuples,
            shape,
            z,
        })
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn tuples(&self) -> usize {
        self.tuples
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        &self.z[i]
    }

    pub fn latents(&self) -> &[Vec<f64>] {
        &self.z
    }
}

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }
}

/// `S[i][j] = h(z_i, z_j) / τ`.
pub fn similarity_matrix(batch: &LatentBatch, spec: &CriticSpec, tau: f64) -> Result<SimilarityMatrix> {
    spec.validate(batch.shape)?;
    let dim = batch.len();
    let mut values = vec![0.0; dim * dim];
    let symmetric = spec.is_symmetric();
    for i in 0..dim {
        for j in 0..dim {
            if symmetric && j < i {
                values[i * dim + j] = values[j * dim + i];
                continue;
            }
            values[i * dim + j] = spec.eval(batch.shape, &batch.z[i], &batch.z[j])? / tau;
        }
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(ComirError::NonFinite(format!(
            "similarity entry ({}, {})",
            k / dim,
            k % dim
        )));
    }
    Ok(SimilarityMatrix { dim, values })
}

/// Loss value with gradients w.r.t. every latent (and the bilinear weights).
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub latent_grads: Vec<Vec<f64>>,
    pub weight_grad: Option<Vec<f64>>,
}

/// Per-(anchor, positive) denominator mask: all `j` except the anchor itself
/// and its cross-modal positives, with the current positive put back.
fn in_denominator(j: usize, i: usize, p: usize, n: usize) -> bool {
    j == p || (j % n != i % n)
}

/// `dL/dS` for the multi-modality InfoNCE loss, plus the loss value.
fn loss_and_dsim(sim: &SimilarityMatrix, modalities: usize, tuples: usize) -> (f64, Vec<f64>) {
    let dim = sim.dim;
    let norm = 1.0 / (dim * (modalities - 1)) as f64;
    let mut total = 0.0;
    let mut dsim = vec![0.0; dim * dim];
    let mut weights = vec![0.0; dim];
    for i in 0..dim {
        let row = &sim.values[i * dim..(i + 1) * dim];
        for m in 1..modalities {
            let p = (i + m * tuples) % dim;
            let max = (0..dim)
                .filter(|&j| in_denominator(j, i, p, tuples))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..dim {
                weights[j] = if in_denominator(j, i, p, tuples) {
                    (row[j] - max).exp()
                } else {
                    0.0
                };
                z += weights[j];
            }
            total += -row[p] + max + z.ln();
            let drow = &mut dsim[i * dim..(i + 1) * dim];
            for j in 0..dim {
                drow[j] += norm * weights[j] / z;
            }
            drow[p] -= norm;
        }
    }
    (total * norm, dsim)
}

/// The `M`-modality InfoNCE loss averaged over the `MN(M−1)` (anchor, positive) terms.
pub fn infonce_loss(batch: &LatentBatch, spec: &CriticSpec, tau: f64) -> Result<f64> {
    let sim = similarity_matrix(batch, spec, tau)?;
    Ok(loss_and_dsim(&sim, batch.modalities, batch.tuples).0)
}

/// Loss together with its analytic gradient.
pub fn infonce_loss_and_grad(batch: &LatentBatch, spec: &CriticSpec, tau: f64) -> Result<LossGrad> {
    let sim = similarity_matrix(batch, spec, tau)?;
    let (loss, dsim) = loss_and_dsim(&sim, batch.modalities, batch.tuples);
    let dim = batch.len();
    let len = batch.shape.len();
    let mut latent_grads = vec![vec![0.0; len]; dim];
    let mut weight_grad = matches!(spec.kind, CriticKind::Bilinear)
        .then(|| vec![0.0; batch.shape.channels * batch.shape.channels]);
    for i in 0..dim {
        for j in 0..dim {
            let g = dsim[i * dim + j] / tau;
            if g == 0.0 {
                continue;
            }
            let (gi, gj) = if i == j {
                // h(z, z): both argument slots feed the same latent.
                let mut tmp = vec![0.0; len];
                let mut tmp2 = vec![0.0; len];
                spec.accumulate_grad(batch.shape, &batch.z[i], &batch.z[j], g, &mut tmp, &mut tmp2);
                for k in 0..len {
                    latent_grads[i][k] += tmp[k] + tmp2[k];
                }
                if let Some(gw) = weight_grad.as_mut() {
                    spec.accumulate_weight_grad(batch.shape, &batch.z[i], &batch.z[j], g, gw);
                }
                continue;
            } else if i < j {
                let (lo, hi) = latent_grads.split_at_mut(j);
                (&mut lo[i], &mut hi[0])
            } else {
                let (lo, hi) = latent_grads.split_at_mut(i);
                (&mut hi[0], &mut lo[j])
            };
            spec.accumulate_grad(batch.shape, &batch.z[i], &batch.z[j], g, gi, gj);
            if let Some(gw) = weight_grad.as_mut() {
                spec.accumulate_weight_grad(batch.shape, &batch.z[i], &batch.z[j], g, gw);
            }
        }
    }
    Ok(LossGrad {
        loss,
        latent_grads,
        weight_grad,
    })
}
