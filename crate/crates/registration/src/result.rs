use std::fmt;

use serde::{Deserialize, Serialize};

use comir::imaging::RigidTransform2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mi,
    Intensity,
    Feature,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mi, Method::Intensity, Method::Feature];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mi => "mi",
            Method::Intensity => "intensity",
            Method::Feature => "feature",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown registration method `{s}` (expected mi, intensity or feature)"))
    }
}

/// Outcome of one registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps reference coordinates to floating coordinates, pivoting about the
    /// reference image center.
    pub transform: RigidTransform2D,
    pub method: Method,
    /// Final objective in the method's own sense: mutual information (higher
    /// is better), level-set distance (lower is better) or inlier count.
    pub objective: f64,
    /// Objective after every accepted step (MI), every iteration (intensity)
    /// or the best consensus size after every improvement (features).
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index into the start list when produced by a multistart run.
    pub start_index: Option<usize>,
    pub runtime_seconds: f64,
}

impl RegistrationResult {
    /// Objective oriented so that lower is better for every method.
    pub fn score(&self) -> f64 {
        match self.method {
            Method::Intensity => self.objective,
            Method::Mi | Method::Feature => -self.objective,
        }
    }

    /// A copy with the wall-clock runtime zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        RegistrationResult {
            runtime_seconds: 0.0,
            ..self.clone()
        }
    }
}
