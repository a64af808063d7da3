//! JSON dataset manifests: `{"classes": K, "samples": [{"image", "label", "instances"?}]}`.
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{pnm, SegSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: usize,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        if !(2..=255).contains(&m.classes) {
            return Err(Error::format("manifest", format!("class count {} outside 2..=255", m.classes)));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Every referenced path, resolved against `base`.
    pub fn resolved(&self, base: &Path) -> Vec<ManifestEntry> {
        self.samples
            .iter()
            .map(|e| ManifestEntry {
                image: base.join(&e.image),
                label: base.join(&e.label),
                instances: e.instances.as_ref().map(|p| base.join(p)),
            })
            .collect()
    }

    /// Fails with the first referenced path that does not exist.
    pub fn check_files(&self, base: &Path) -> Result<()> {
        for e in self.resolved(base) {
            for p in [Some(&e.image), Some(&e.label), e.instances.as_ref()].into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_dataset(manifest_path: &Path, ignore: u8) -> Result<(Manifest, Vec<SegSample>)> {
    let manifest = Manifest::read(manifest_path)?;
    let base = base_dir(manifest_path);
    manifest.check_files(&base)?;
    let samples = manifest
        .resolved(&base)
        .iter()
        .map(|e| pnm::read_sample(&e.image, &e.label, e.instances.as_deref(), manifest.classes, ignore))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

/// Writes samples as `NNNN.ppm`, `NNNN_label.pgm` (and `NNNN_inst.pgm`) under `dir`, then
/// the manifest last. Returns the manifest path.
pub fn save_dataset(dir: &Path, samples: &[SegSample], classes: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let entry = ManifestEntry {
            image: format!("{i:04}.ppm").into(),
            label: format!("{i:04}_label.pgm").into(),
            instances: s.instances.as_ref().map(|_| format!("{i:04}_inst.pgm").into()),
        };
        pnm::write_sample(
            s,
            &dir.join(&entry.image),
            &dir.join(&entry.label),
            entry.instances.as_ref().map(|p| dir.join(p)).as_deref(),
        )?;
        entries.push(entry);
    }
    let manifest = Manifest {
        classes,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
