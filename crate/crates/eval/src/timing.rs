//! Per-stage wall-clock totals.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Infer,
    Register,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Train, Stage::Infer, Stage::Register];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Register => "register",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One timed job: a stage run over `images` images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub stage: Stage,
    pub seconds: f64,
    pub images: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: Stage,
    pub total_seconds: f64,
    pub images: usize,
    pub seconds_per_image: Option<f64>,
}

/// Sums entries per stage, in stage order; stages without entries are omitted.
pub fn timing_report(entries: &[TimingEntry]) -> Vec<TimingRow> {
    Stage::ALL
        .iter()
        .filter_map(|&stage| {
            let mine: Vec<_> = entries.iter().filter(|e| e.stage == stage).collect();
            if mine.is_empty() {
                return None;
            }
            let total_seconds = mine.iter().map(|e| e.seconds).sum();
            let images = mine.iter().map(|e| e.images).sum();
            Some(TimingRow {
                stage,
                total_seconds,
                images,
                seconds_per_image: (images > 0).then(|| total_seconds / images as f64),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_gives_empty_table() {
        assert!(timing_report(&[]).is_empty());
    }

    #[test]
    fn known_durations_sum_exactly() {
        let log = [
            TimingEntry { stage: Stage::Register, seconds: 1.25, images: 2 },
            TimingEntry { stage: Stage::Train, seconds: 10.5, images: 1 },
            TimingEntry { stage: Stage::Register, seconds: 0.75, images: 2 },
        ];
        let table = timing_report(&log);
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].stage, Stage::Train);
        assert_eq!(table[0].total_seconds, 10.5);
        assert_eq!(table[1].total_seconds, 2.0);
        assert_eq!(table[1].images, 4);
        assert_eq!(table[1].seconds_per_image, Some(0.5));
    }
}
