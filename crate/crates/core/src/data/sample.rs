use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{ComirError, Result};
use crate::imaging::{Image, Interpolation, Point2D};

/// One scene imaged in `M ≥ 2` pixel-aligned modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: String,
    pub images: Vec<Image>,
}

impl MultimodalSample {
    pub fn new(id: impl Into<String>, images: Vec<Image>) -> Result<Self> {
        let id = id.into();
        if images.len() < 2 {
            return Err(ComirError::Dataset {
                sample: id,
                reason: format!("needs at least 2 modalities, got {}", images.len()),
            });
        }
        let (h, w) = (images[0].height(), images[0].width());
        if let Some(bad) = images.iter().find(|i| (i.height(), i.width()) != (h, w)) {
            return Err(ComirError::Dataset {
                sample: id,
                reason: format!(
                    "modality `{}` is {}x{}, expected {h}x{w}",
                    bad.modality,
                    bad.height(),
                    bad.width()
                ),
            });
        }
        Ok(MultimodalSample { id, images })
    }

    pub fn modalities(&self) -> usize {
        self.images.len()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }
}

/// Co-located patches cut from every modality of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTuple {
    pub patches: Vec<Image>,
    pub source_id: String,
    pub center: Point2D,
    /// Sampling orientation in radians.
    pub orientation: f64,
    pub flipped: bool,
    pub interpolation: Interpolation,
}

/// Log transform for second-harmonic-generation images: `log(1 + x)`.
pub fn preprocess_shg(img: &Image) -> Result<Image> {
    if let Some((index, &value)) = img
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(ComirError::ValueOutOfRange { index, value });
    }
    Ok(img.map(|v| v.ln_1p()))
}

/// Disjoint train/validation/tuning/test id lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    #[serde(default)]
    pub tuning: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl DatasetSplit {
    fn parts(&self) -> [(&'static str, &Vec<String>); 4] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("tuning", &self.tuning),
            ("test", &self.test),
        ]
    }

    /// Checks pairwise disjointness and that the union is exactly `all_ids`.
    pub fn validate(&self, all_ids: &[String]) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        for (name, ids) in self.parts() {
            for id in ids {
                if !seen.insert(id) {
                    return Err(ComirError::Config(format!(
                        "sample `{id}` appears twice in the split (again in `{name}`)"
                    )));
                }
            }
        }
        let declared: BTreeSet<&str> = all_ids.iter().map(String::as_str).collect();
        let listed: BTreeSet<&str> = seen.into_iter().collect();
        if let Some(missing) = declared.difference(&listed).next() {
            return Err(ComirError::Config(format!("sample `{missing}` is in no split")));
        }
        if let Some(unknown) = listed.difference(&declared).next() {
            return Err(ComirError::Config(format!("split names unknown sample `{unknown}`")));
        }
        Ok(())
    }

    /// Samples whose ids are in `ids`, in the order of `samples`.
    pub fn select<'a>(samples: &'a [MultimodalSample], ids: &[String]) -> Vec<&'a MultimodalSample> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        samples.iter().filter(|s| wanted.contains(s.id.as_str())).collect()
    }
}
