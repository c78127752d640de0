use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::format::{write_sample, Dtype};
use super::manifest::{Manifest, SampleEntry};
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Per-sample target vector; channel `c` is brighter the larger target
    /// `c mod outputs` is.
    Regression { outputs: usize },
    /// Per-voxel label: 1 where channel 0 is at least half its range.
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub samples: usize,
    /// `(C, D, H, W)`.
    pub dims: [usize; 4],
    pub dtype: Dtype,
    pub seed: u64,
    pub task: SyntheticTask,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Payload, regression target and label payload of sample `id`, a pure
/// function of `(seed, id)`.
pub fn synthetic_voxels(spec: &SyntheticSpec, id: usize) -> (Vec<u8>, Option<Vec<f64>>, Option<Vec<u8>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(id as u64);
    let [c, d, h, w] = spec.dims;
    let vol = d * h * w;
    let (target, outputs) = match spec.task {
        SyntheticTask::Regression { outputs } => {
            (Some((0..outputs).map(|_| uniform(&mut rng)).collect::<Vec<_>>()), outputs)
        }
        SyntheticTask::Segmentation => (None, 0),
    };
    let mut payload = Vec::with_capacity(c * vol * spec.dtype.bytes());
    let mut label = matches!(spec.task, SyntheticTask::Segmentation).then(|| Vec::with_capacity(vol * 2));
    for ch in 0..c {
        let level = target.as_ref().map_or(0.0, |t| t[ch % outputs]);
        for _ in 0..vol {
            let u = uniform(&mut rng);
            let v = match spec.task {
                SyntheticTask::Regression { .. } => 2.0 * level + u,
                SyntheticTask::Segmentation => 3.0 * u,
            };
            match spec.dtype {
                Dtype::Int16 => payload.extend_from_slice(&((4.0 * v).round() as i16).to_le_bytes()),
                Dtype::Fp32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
            }
            if ch == 0 {
                if let Some(l) = label.as_mut() {
                    l.extend_from_slice(&i16::from(u >= 0.5).to_le_bytes());
                }
            }
        }
    }
    (payload, target, label)
}

/// Write `samples` files plus labels and `manifest.toml` into `dir`.
pub fn generate_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<Manifest, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let [_, d, h, w] = spec.dims;
    let mut samples = Vec::with_capacity(spec.samples);
    for id in 0..spec.samples {
        let (payload, target, label) = synthetic_voxels(spec, id);
        let file = format!("sample_{id:05}.hsb");
        write_sample(&dir.join(&file), spec.dims, spec.dtype, &payload)?;
        let label = match label {
            Some(l) => {
                let name = format!("label_{id:05}.hsb");
                write_sample(&dir.join(&name), [1, d, h, w], Dtype::Int16, &l)?;
                Some(name)
            }
            None => None,
        };
        samples.push(SampleEntry { id, file, target, label });
    }
    let manifest = Manifest { root: ".".into(), dtype: spec.dtype, dims: spec.dims, samples };
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(Manifest { root: dir.to_path_buf(), ..manifest })
}
