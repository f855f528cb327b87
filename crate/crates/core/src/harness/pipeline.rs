//! Train/val split and everything fixed from the training split before
//! training starts: selected keypoints, skeleton hierarchy and adjacency.

use serde::{Deserialize, Serialize};

use super::{sha256_hex, HarnessError, TrainConfig};
use crate::graph::{assemble_features, build_adjacency, build_graph, node_summaries, AdjacencySpec, FscGraph};
use crate::keypoints::{generate_sc, selection_stats, KeypointSample, SkeletonHierarchy, NUM_SC};
use crate::tensor::Scalar;

/// Indices into a sample list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// SHA-256 over the train ids then the val ids.
    pub hash: String,
}

/// Orders samples by SHA-256 of `(seed, id)` and sends the first
/// `round(n · val_fraction)` to validation. Membership depends only on the
/// id, so record order does not matter.
pub fn split(samples: &[KeypointSample], val_fraction: f64, seed: u64) -> Split {
    let mut keyed: Vec<(String, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut bytes = seed.to_le_bytes().to_vec();
            bytes.extend_from_slice(s.id.as_bytes());
            (sha256_hex(&bytes), i)
        })
        .collect();
    keyed.sort();
    let n_val = (samples.len() as f64 * val_fraction).round() as usize;
    let mut val: Vec<usize> = keyed[..n_val].iter().map(|k| k.1).collect();
    let mut train: Vec<usize> = keyed[n_val..].iter().map(|k| k.1).collect();
    val.sort_unstable();
    train.sort_unstable();
    let mut ids = String::new();
    for &i in &train {
        ids.push_str(&samples[i].id);
        ids.push('\n');
    }
    ids.push('|');
    for &i in &val {
        ids.push_str(&samples[i].id);
        ids.push('\n');
    }
    Split {
        train,
        val,
        hash: sha256_hex(ids.as_bytes()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Facial landmark indices that become graph nodes, ascending.
    pub selection: Vec<usize>,
    pub hierarchy: SkeletonHierarchy,
    pub adjacency: AdjacencySpec,
}

#[derive(Serialize, Deserialize)]
struct PreparedFile {
    selection: Vec<usize>,
    hierarchy: SkeletonHierarchy,
    adjacency: serde_json::Value,
}

impl Serialize for Prepared {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PreparedFile {
            selection: self.selection.clone(),
            hierarchy: self.hierarchy.clone(),
            adjacency: serde_json::from_str(&self.adjacency.to_json()).expect("adjacency JSON"),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Prepared {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = PreparedFile::deserialize(d)?;
        let adjacency = AdjacencySpec::from_json(&f.adjacency.to_string(), f.selection.len(), NUM_SC)
            .map_err(serde::de::Error::custom)?;
        Ok(Prepared {
            selection: f.selection,
            hierarchy: f.hierarchy,
            adjacency,
        })
    }
}

impl Prepared {
    /// Selection (when enabled) and adjacency from the training samples only.
    pub fn fit(
        cfg: &TrainConfig,
        train: &[&KeypointSample],
        hierarchy: SkeletonHierarchy,
        selection: Option<Vec<usize>>,
    ) -> Result<Self, HarnessError> {
        hierarchy.validate()?;
        if hierarchy.levels.len() != cfg.hierarchy_levels {
            return Err(HarnessError::Config(format!(
                "hierarchy has {} levels, config expects {}",
                hierarchy.levels.len(),
                cfg.hierarchy_levels
            )));
        }
        let selection = match selection {
            Some(r) => r,
            None => Self::select(cfg, train)?,
        };
        if let Some(&k) = selection.iter().find(|&&k| k >= cfg.num_facial) {
            return Err(HarnessError::Config(format!("selected keypoint {k} outside [0, {})", cfg.num_facial)));
        }
        let opts = cfg.features();
        let mut series = Vec::with_capacity(train.len());
        for s in train {
            let sc = generate_sc(&s.joints, &hierarchy)?;
            let x = assemble_features::<f32>(s, &selection, &sc, &opts)?;
            series.push(node_summaries(&x));
        }
        let adjacency = build_adjacency(&series, selection.len(), cfg.top_n)?;
        Ok(Self {
            selection,
            hierarchy,
            adjacency,
        })
    }

    /// The configured facial node set: selected keypoints, or every landmark.
    pub fn select(cfg: &TrainConfig, train: &[&KeypointSample]) -> Result<Vec<usize>, HarnessError> {
        if !cfg.variant.use_keypoint_selection {
            return Ok((0..cfg.num_facial).collect());
        }
        let owned: Vec<KeypointSample> = train
            .iter()
            .map(|s| KeypointSample {
                id: s.id.clone(),
                age: s.age,
                image_size: s.image_size,
                facial: s.facial.clone(),
                joints: s.joints.clone(),
                patch_size: s.patch_size,
                patches: Vec::new(),
            })
            .collect();
        Ok(selection_stats(&owned, cfg.k_neighbors, cfg.root_keypoint, cfg.eta, cfg.n_prime)?.r)
    }

    pub fn graph<T: Scalar>(&self, cfg: &TrainConfig, sample: &KeypointSample) -> Result<FscGraph<T>, HarnessError> {
        if sample.patch_size != cfg.patch_size {
            return Err(HarnessError::Config(format!(
                "sample {:?} has {}px patches, config expects {}",
                sample.id, sample.patch_size, cfg.patch_size
            )));
        }
        let sc = generate_sc(&sample.joints, &self.hierarchy)?;
        Ok(build_graph(sample, &self.selection, &sc, &self.adjacency, &cfg.features())?)
    }
}
