//! Stratified random rigid transforms for the evaluation set.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use comir::imaging::{Point2D, RigidTransform2D};

use crate::error::{EvalError, Result};

/// Side length of the patches the published protocol was defined on.
pub const PAPER_SIDE_PX: f64 = 834.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Small,
    Medium,
    Large,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Small, Stratum::Medium, Stratum::Large];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Small => "small",
            Stratum::Medium => "medium",
            Stratum::Large => "large",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Upper displacement bounds (px) of the small and medium strata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrataThresholds {
    pub small_max: f64,
    pub medium_max: f64,
}

impl StrataThresholds {
    pub const PAPER: StrataThresholds = StrataThresholds {
        small_max: 100.0,
        medium_max: 200.0,
    };

    /// Small `≤ small_max`, medium `(small_max, medium_max]`, large above.
    pub fn classify(&self, displacement: f64) -> Stratum {
        if displacement <= self.small_max {
            Stratum::Small
        } else if displacement <= self.medium_max {
            Stratum::Medium
        } else {
            Stratum::Large
        }
    }

    pub fn lower_bound(&self, stratum: Stratum) -> f64 {
        match stratum {
            Stratum::Small => 0.0,
            Stratum::Medium => self.small_max,
            Stratum::Large => self.medium_max,
        }
    }
}

/// Sampling ranges: rotation uniform in `±max_rotation` (radians) about the
/// image center, then each translation component uniform in `±max_translation` px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub max_rotation: f64,
    pub max_translation: f64,
}

impl SamplingRanges {
    pub const PAPER: SamplingRanges = SamplingRanges {
        max_rotation: 30.0 * std::f64::consts::PI / 180.0,
        max_translation: 100.0,
    };
}

/// Ranges and thresholds for one image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub height: usize,
    pub width: usize,
    pub ranges: SamplingRanges,
    pub thresholds: StrataThresholds,
}

impl EvalProtocol {
    /// The published ranges with every pixel quantity scaled by `side / 834`.
    pub fn scaled_to(height: usize, width: usize) -> Self {
        let k = height.min(width) as f64 / PAPER_SIDE_PX;
        EvalProtocol {
            height,
            width,
            ranges: SamplingRanges {
                max_rotation: SamplingRanges::PAPER.max_rotation,
                max_translation: SamplingRanges::PAPER.max_translation * k,
            },
            thresholds: StrataThresholds {
                small_max: StrataThresholds::PAPER.small_max * k,
                medium_max: StrataThresholds::PAPER.medium_max * k,
            },
        }
    }

    pub fn center(&self) -> Point2D {
        Point2D::image_center(self.height, self.width)
    }

    /// Upper bound on the mean corner displacement reachable under the ranges.
    pub fn max_displacement(&self) -> f64 {
        let radius = Point2D::image_corners(self.height, self.width)
            .iter()
            .map(|c| c.distance(&self.center()))
            .fold(0.0, f64::max);
        2.0 * radius * (self.ranges.max_rotation / 2.0).sin() + std::f64::consts::SQRT_2 * self.ranges.max_translation
    }

    pub fn displacement(&self, t: &RigidTransform2D) -> f64 {
        t.corner_displacement(self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTransform {
    pub transform: RigidTransform2D,
    pub displacement: f64,
    pub stratum: Stratum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataCounts {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

impl StrataCounts {
    /// The published 134-pair split.
    pub const PAPER: StrataCounts = StrataCounts {
        small: 45,
        medium: 45,
        large: 44,
    };

    pub fn total(&self) -> usize {
        self.small + self.medium + self.large
    }

    pub fn get(&self, s: Stratum) -> usize {
        match s {
            Stratum::Small => self.small,
            Stratum::Medium => self.medium,
            Stratum::Large => self.large,
        }
    }

    fn get_mut(&mut self, s: Stratum) -> &mut usize {
        match s {
            Stratum::Small => &mut self.small,
            Stratum::Medium => &mut self.medium,
            Stratum::Large => &mut self.large,
        }
    }

    /// Splits `n` as evenly as possible, earlier strata taking the remainder.
    pub fn balanced(n: usize) -> Self {
        let base = n / 3;
        let extra = n % 3;
        StrataCounts {
            small: base + usize::from(extra > 0),
            medium: base + usize::from(extra > 1),
            large: base,
        }
    }

    pub fn tally<'a>(transforms: impl IntoIterator<Item = &'a EvalTransform>) -> Self {
        let mut c = StrataCounts::default();
        for t in transforms {
            *c.get_mut(t.stratum) += 1;
        }
        c
    }
}

const MAX_ATTEMPTS: usize = 1_000_000;

/// Rejection-samples transforms until every stratum quota is met; samples
/// landing in an already full stratum are discarded. Output is in
/// acceptance order.
pub fn generate_eval_transforms<R: Rng + ?Sized>(
    n_total: usize,
    quotas: StrataCounts,
    rng: &mut R,
    protocol: &EvalProtocol,
) -> Result<Vec<EvalTransform>> {
    if quotas.total() != n_total {
        return Err(EvalError::QuotaMismatch {
            n_total,
            quota_total: quotas.total(),
        });
    }
    let reach = protocol.max_displacement();
    for s in Stratum::ALL {
        if quotas.get(s) > 0 && protocol.thresholds.lower_bound(s) >= reach {
            return Err(EvalError::StratumUnreachable {
                stratum: s,
                max_displacement: reach,
            });
        }
    }

    let mut remaining = quotas;
    let mut out = Vec::with_capacity(n_total);
    let (r, m) = (protocol.ranges.max_rotation, protocol.ranges.max_translation);
    let mut attempts = 0;
    while out.len() < n_total {
        if attempts == MAX_ATTEMPTS {
            return Err(EvalError::SamplingExhausted { attempts });
        }
        attempts += 1;
        let angle = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let (tx, ty) = if m > 0.0 {
            (rng.random_range(-m..=m), rng.random_range(-m..=m))
        } else {
            (0.0, 0.0)
        };
        let transform = RigidTransform2D::new(angle, tx, ty, protocol.center());
        let displacement = protocol.displacement(&transform);
        let stratum = protocol.thresholds.classify(displacement);
        let slot = remaining.get_mut(stratum);
        if *slot > 0 {
            *slot -= 1;
            out.push(EvalTransform {
                transform,
                displacement,
                stratum,
            });
        }
    }
    Ok(out)
}
