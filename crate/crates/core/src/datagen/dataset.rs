//! Dataset generation and the JSON manifest.
//!
//! Manifest schema (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "records": [
//!     {
//!       "id": "rec00000",
//!       "split": "train",
//!       "blurred": "images/rec00000_blur.png",
//!       "reference": "images/rec00000_ref.png",
//!       "sharp": "images/rec00000_sharp.png",
//!       "mask": "images/rec00000_mask.png",
//!       "scene": { "seed": 17, "motion_length": 9.3, ... }
//!     }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use imgcore::io::{read_png, write_png};
use imgcore::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{render_scene, SceneParams, SceneSpec};
use crate::error::{invalid, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    pub scene: SceneSpec,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub blurred: String,
    pub reference: String,
    pub sharp: String,
    pub mask: String,
    pub scene: SceneParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub records: Vec<ManifestRecord>,
    /// Directory that record paths are relative to; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Images of one record, loaded from disk.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub blurred: Image,
    pub reference: Image,
    pub sharp: Image,
    pub mask: Image,
}

impl DatasetManifest {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Self = serde_json::from_str(text)?;
        if m.version != MANIFEST_VERSION {
            return Err(invalid(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &m.records {
            if !seen.insert(r.id.as_str()) {
                return Err(invalid(format!("duplicate record id `{}`", r.id)));
            }
        }
        m.root = root.into();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Loads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_json(&fs::read_to_string(path)?, root)?;
        for r in &m.records {
            for p in [&r.blurred, &r.reference, &r.sharp, &r.mask] {
                if !m.root.join(p).is_file() {
                    return Err(invalid(format!("record `{}` references missing file {p}", r.id)));
                }
            }
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_sample(&self, record: &ManifestRecord) -> Result<Sample> {
        let load = |p: &str| read_png(self.root.join(p));
        let inner = || -> Result<Sample> {
            let sample = Sample {
                id: record.id.clone(),
                blurred: load(&record.blurred)?,
                reference: load(&record.reference)?,
                sharp: load(&record.sharp)?,
                mask: load(&record.mask)?,
            };
            sample.blurred.ensure_same_size(&sample.reference)?;
            sample.blurred.ensure_same_size(&sample.sharp)?;
            sample.blurred.ensure_same_size(&sample.mask)?;
            sample.mask.ensure_channels(1)?;
            Ok(sample)
        };
        inner().map_err(|e| e.in_record(&record.id))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        let records: Vec<&ManifestRecord> = self.split(split).collect();
        records.par_iter().map(|r| self.load_sample(r)).collect()
    }
}

/// Desk-scale record list: `count` scenes of `height`×`width`, the last
/// `⌈count·eval_fraction⌉` tagged as eval. Per-record seeds derive from `seed`.
pub fn desk_record_specs(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    eval_fraction: f64,
) -> Vec<RecordSpec> {
    let n_eval = (count as f64 * eval_fraction).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| RecordSpec {
            scene: SceneSpec {
                height,
                width,
                seed: rng.gen(),
                ..SceneSpec::default()
            },
            split: if i + n_eval >= count { Split::Eval } else { Split::Train },
        })
        .collect()
}

/// Renders every record, writes PNGs under `out_dir/images` and the manifest
/// to `out_dir/manifest.json`.
pub fn generate_dataset(specs: &[RecordSpec], out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("images"))?;
    let records: Vec<ManifestRecord> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let id = format!("rec{i:05}");
            write_record(out_dir, &id, spec).map_err(|e| e.in_record(&id))
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn write_record(out_dir: &Path, id: &str, spec: &RecordSpec) -> Result<ManifestRecord> {
    let scene = render_scene(&spec.scene)?;
    let rel = |kind: &str| format!("images/{id}_{kind}.png");
    let record = ManifestRecord {
        id: id.to_string(),
        split: spec.split,
        blurred: rel("blur"),
        reference: rel("ref"),
        sharp: rel("sharp"),
        mask: rel("mask"),
        scene: scene.params,
    };
    for (img, p) in [
        (&scene.blurred, &record.blurred),
        (&scene.reference, &record.reference),
        (&scene.sharp, &record.sharp),
        (&scene.mask_gt, &record.mask),
    ] {
        write_png(img, out_dir.join(p)).map_err(Error::from)?;
    }
    Ok(record)
}
