//! Data I/O, synthetic data, training, metrics and ablations.

mod ablation;
mod config;
mod exec;
mod manifest;
mod metrics;
mod pipeline;
mod synth;
mod train;

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use ablation::{ablation_csv, default_ablation_flags, run_ablation, AblationRow, EvalSplit};
pub use config::{Modality, TrainConfig, Variant, VariantFlags};
pub use exec::Exec;
pub use manifest::{load_manifest, write_manifest, Dataset, ManifestHeader, ManifestRecord, MANIFEST_VERSION};
pub use metrics::{confusion, evaluate_predictions, mae, top1, Metrics, Prediction};
pub use pipeline::{split, Prepared, Split};
pub use synth::{jitter_drift, median_predictor_mae, synth_generate, JitterDriftSpec, SynthSpec, DRIFT_KEYPOINTS};
pub use train::{
    derive_seed, evaluate, load_checkpoint, predict, read_log, read_meta, save_checkpoint, sidecar_path, train,
    Checkpoint, CheckpointMeta, EpochLog, OptimizerState, TrainOptions, TrainOutcome,
};

use crate::graph::GraphError;
use crate::keypoints::KeypointError;
use crate::network::NetworkError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported manifest version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, sample {sample}: {detail}")]
    Diverged { epoch: usize, sample: String, detail: String },
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, HarnessError::Io { .. })
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
