//! Dataset layout descriptors and directory ingestion.
//!
//! A descriptor is a small TOML file. Paired layouts give one file pattern
//! per modality; files are paired by the text the wildcards matched, which
//! also becomes the sample id. Multichannel layouts give one pattern and
//! split every file into channel groups.
//!
//! ```toml
//! layout = "multichannel"
//! files = "images/*.tif"
//!
//! [[modalities]]
//! name = "nir"
//! channels = [0]
//!
//! [[modalities]]
//! name = "rgb"
//! channels = [3, 2, 1]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{preprocess_shg, DatasetSplit, MultimodalSample};
use crate::error::{ComirError, Result};
use crate::imaging::io::load_any;
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    #[default]
    Paired,
    Multichannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityDescriptor {
    pub name: String,
    /// File pattern relative to the root (paired layouts).
    #[serde(default)]
    pub files: Option<String>,
    /// Channel group taken from each file (multichannel layouts).
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    /// Apply `log(1 + x)` after loading.
    #[serde(default)]
    pub shg_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDescriptor {
    #[serde(default)]
    pub layout: LayoutKind,
    /// File pattern for multichannel layouts.
    #[serde(default)]
    pub files: Option<String>,
    pub modalities: Vec<ModalityDescriptor>,
    #[serde(default)]
    pub split: Option<DatasetSplit>,
}

impl LayoutDescriptor {
    pub fn from_toml(text: &str) -> Result<Self> {
        let d: LayoutDescriptor =
            toml::from_str(text).map_err(|e| ComirError::Config(format!("layout descriptor: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ComirError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.len() < 2 {
            return Err(ComirError::Config("a layout needs at least 2 modalities".into()));
        }
        match self.layout {
            LayoutKind::Paired => {
                if let Some(m) = self.modalities.iter().find(|m| m.files.is_none()) {
                    return Err(ComirError::Config(format!(
                        "paired layout: modality `{}` has no `files` pattern",
                        m.name
                    )));
                }
            }
            LayoutKind::Multichannel => {
                if self.files.is_none() {
                    return Err(ComirError::Config("multichannel layout needs `files`".into()));
                }
                if let Some(m) = self
                    .modalities
                    .iter()
                    .find(|m| m.channels.as_ref().is_none_or(|c| c.is_empty()))
                {
                    return Err(ComirError::Config(format!(
                        "multichannel layout: modality `{}` has no channel group",
                        m.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Matches `name` against a pattern with `*` (any run) and `?` (one char)
/// wildcards, returning the concatenated wildcard text on success.
pub fn wildcard_capture(pattern: &str, name: &str) -> Option<String> {
    fn go(p: &[char], s: &[char], acc: &mut String) -> bool {
        match p.first() {
            None => s.is_empty(),
            Some('*') => {
                for take in 0..=s.len() {
                    let before = acc.len();
                    acc.extend(&s[..take]);
                    if go(&p[1..], &s[take..], acc) {
                        return true;
                    }
                    acc.truncate(before);
                }
                false
            }
            Some('?') => {
                if s.is_empty() {
                    return false;
                }
                acc.push(s[0]);
                if go(&p[1..], &s[1..], acc) {
                    return true;
                }
                acc.pop();
                false
            }
            Some(c) => !s.is_empty() && s[0] == *c && go(&p[1..], &s[1..], acc),
        }
    }
    let p: Vec<char> = pattern.chars().collect();
    let s: Vec<char> = name.chars().collect();
    let mut acc = String::new();
    go(&p, &s, &mut acc).then_some(acc)
}

/// Files under `root` matching `pattern` (wildcards in the file name only),
/// keyed by captured id.
fn match_files(root: &Path, pattern: &str) -> Result<BTreeMap<String, PathBuf>> {
    let rel = Path::new(pattern);
    let file_pat = rel
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| ComirError::Config(format!("bad file pattern `{pattern}`")))?;
    let dir = root.join(rel.parent().unwrap_or(Path::new("")));
    let mut out = BTreeMap::new();
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(ComirError::io(&dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| ComirError::io(&dir, e))?;
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
            continue;
        };
        if let Some(id) = wildcard_capture(file_pat, &name) {
            out.insert(id, entry.path());
        }
    }
    Ok(out)
}

fn finish(img: Image, m: &ModalityDescriptor, sample: &str) -> Result<Image> {
    let img = if m.shg_log {
        preprocess_shg(&img).map_err(|e| ComirError::Dataset {
            sample: sample.to_string(),
            reason: e.to_string(),
        })?
    } else {
        img
    };
    Ok(img.with_modality(m.name.clone()))
}

fn wrap(sample: &str, e: ComirError) -> ComirError {
    match e {
        e @ ComirError::Dataset { .. } => e,
        other => ComirError::Dataset {
            sample: sample.to_string(),
            reason: other.to_string(),
        },
    }
}

/// Loads every sample described by `layout` under `root`, ordered by id.
///
/// A root without matching files yields an empty list; callers decide
/// whether that deserves a warning.
pub fn load_dataset(root: &Path, layout: &LayoutDescriptor) -> Result<Vec<MultimodalSample>> {
    layout.validate()?;
    let mut samples = Vec::new();
    match layout.layout {
        LayoutKind::Paired => {
            let per_modality: Vec<BTreeMap<String, PathBuf>> = layout
                .modalities
                .iter()
                .map(|m| match_files(root, m.files.as_deref().expect("validated")))
                .collect::<Result<_>>()?;
            let mut ids: Vec<&String> = per_modality.iter().flat_map(|m| m.keys()).collect();
            ids.sort();
            ids.dedup();
            for id in ids {
                let mut images = Vec::with_capacity(layout.modalities.len());
                for (m, files) in layout.modalities.iter().zip(&per_modality) {
                    let path = files.get(id).ok_or_else(|| ComirError::Dataset {
                        sample: id.clone(),
                        reason: format!("missing `{}` counterpart", m.name),
                    })?;
                    let img = load_any(path).map_err(|e| wrap(id, e))?;
                    images.push(finish(img, m, id)?);
                }
                samples.push(MultimodalSample::new(id.clone(), images)?);
            }
        }
        LayoutKind::Multichannel => {
            let files = match_files(root, layout.files.as_deref().expect("validated"))?;
            for (id, path) in files {
                let full = load_any(&path).map_err(|e| wrap(&id, e))?;
                let mut images = Vec::with_capacity(layout.modalities.len());
                for m in &layout.modalities {
                    let part = full
                        .select_channels(m.channels.as_deref().expect("validated"))
                        .map_err(|e| wrap(&id, e))?;
                    images.push(finish(part, m, &id)?);
                }
                samples.push(MultimodalSample::new(id, images)?);
            }
        }
    }
    Ok(samples)
}
