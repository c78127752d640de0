use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::Dtype;
use super::DataError;

/// A dataset: shared sample geometry plus one entry per sample.
///
/// ```toml
/// root = "."
/// dtype = "int16"
/// dims = [4, 64, 64, 64]
///
/// [[samples]]
/// id = 0
/// file = "sample_00000.hsb"
/// target = [0.1, 0.2, 0.3, 0.4]
/// ```
///
/// Segmentation samples name a `label` file (one int16 class id per voxel)
/// instead of a `target`. A relative `root` is resolved against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub root: PathBuf,
    pub dtype: Dtype,
    /// `(C, D, H, W)` of every sample.
    pub dims: [usize; 4],
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: usize,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
        if m.root.is_relative() {
            m.root = path.parent().unwrap_or(Path::new(".")).join(&m.root);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = toml::to_string(self).map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| DataError::io(path, e))
    }

    /// Ids are dense and in order, every sample has either a target vector
    /// of a common length or a label file.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.samples.is_empty() {
            return Err(DataError::Manifest("no samples".into()));
        }
        if self.dims.contains(&0) {
            return Err(DataError::Manifest(format!("empty dims {:?}", self.dims)));
        }
        let labelled = self.samples[0].label.is_some();
        let k = self.samples[0].target.as_ref().map(Vec::len);
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != i {
                return Err(DataError::Manifest(format!(
                    "sample ids must be 0..{} in order, found {} at {i}",
                    self.samples.len(),
                    s.id
                )));
            }
            let ok = if labelled {
                s.label.is_some() && s.target.is_none()
            } else {
                s.label.is_none() && s.target.as_ref().map(Vec::len) == k && k.is_some_and(|k| k > 0)
            };
            if !ok {
                return Err(DataError::Manifest(format!("sample {i}: every sample needs the same kind of target")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// The first `at` samples and the rest, each renumbered from 0.
    pub fn split(&self, at: usize) -> (Manifest, Manifest) {
        let part = |entries: &[SampleEntry]| Manifest {
            samples: entries.iter().enumerate().map(|(i, e)| SampleEntry { id: i, ..e.clone() }).collect(),
            ..self.clone()
        };
        let at = at.min(self.samples.len());
        (part(&self.samples[..at]), part(&self.samples[at..]))
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.samples[0].label.is_some()
    }

    /// Length of the regression targets (0 for labelled data).
    pub fn target_len(&self) -> usize {
        self.samples[0].target.as_ref().map_or(0, Vec::len)
    }

    pub fn sample_path(&self, id: usize) -> PathBuf {
        self.root.join(&self.samples[id].file)
    }

    pub fn label_path(&self, id: usize) -> Option<PathBuf> {
        self.samples[id].label.as_ref().map(|l| self.root.join(l))
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.dims.iter().product::<usize>() * self.dtype.bytes()) as u64
    }

    /// Bytes of every sample payload (labels included).
    pub fn dataset_bytes(&self) -> u64 {
        let [_, d, h, w] = self.dims;
        let label = if self.has_labels() { (d * h * w * 2) as u64 } else { 0 };
        (self.payload_bytes() + label) * self.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            root: ".".into(),
            dtype: Dtype::Int16,
            dims: [1, 4, 4, 4],
            samples: (0..2)
                .map(|id| SampleEntry { id, file: format!("s{id}"), target: Some(vec![0.5]), label: None })
                .collect(),
        };
        let p = dir.path().join("manifest.toml");
        m.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back.root, dir.path().join("."));
        assert_eq!(back.samples, m.samples);
        assert_eq!(back.dataset_bytes(), 2 * 128);
        let mut bad = m.clone();
        bad.samples[1].id = 5;
        assert!(bad.validate().is_err());
        let mut bad = m;
        bad.samples[1].target = None;
        assert!(bad.validate().is_err());
    }
}
