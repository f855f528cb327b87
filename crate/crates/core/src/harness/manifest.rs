//! `manifest.jsonl` + `patches.bin`.
//!
//! The first line is a header object carrying `manifest_version`; every other
//! non-blank line is one record. Patch bytes live in the sidecar as
//! concatenated `patch_size × patch_size × 3` RGB blocks: the facial
//! keypoints first, then the SC slots.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{sha256_hex, write_atomic, HarnessError};
use crate::keypoints::{KeypointSample, Point, NUM_FACIAL, NUM_JOINTS, NUM_SC};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub manifest_version: u32,
    pub patch_size: usize,
    pub num_facial: usize,
    pub num_joints: usize,
    pub num_sc: usize,
    /// Sidecar path, relative to the manifest's directory.
    pub patches: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub age: u32,
    pub image_size: [u32; 2],
    pub facial_keypoints: Vec<Option<Point>>,
    pub skeleton_joints: Vec<Option<Point>>,
    pub patch_offset: u64,
    pub patch_len: u64,
}

/// A loaded, validated manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Option<ManifestHeader>,
    pub samples: Vec<KeypointSample>,
    /// SHA-256 over the manifest bytes followed by the sidecar bytes.
    pub hash: String,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn patch_size(&self) -> Option<usize> {
        self.header.as_ref().map(|h| h.patch_size)
    }
}

fn sidecar_name(manifest: &Path) -> String {
    match manifest.file_stem().and_then(|s| s.to_str()) {
        Some("manifest") | None => "patches.bin".into(),
        Some(stem) => format!("{stem}.patches.bin"),
    }
}

fn format_err(line: usize, id: Option<&str>, msg: impl std::fmt::Display) -> HarnessError {
    match id {
        Some(id) => HarnessError::Format(format!("line {line}, record {id:?}: {msg}")),
        None => HarnessError::Format(format!("line {line}: {msg}")),
    }
}

pub fn load_manifest(path: &Path) -> Result<Dataset, HarnessError> {
    let text = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let text = String::from_utf8(text).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let Some((hline, htext)) = lines.next() else {
        let msg = format!("{}: empty manifest", path.display());
        warn!("{msg}");
        return Ok(Dataset {
            header: None,
            samples: Vec::new(),
            hash: sha256_hex(b""),
            warnings: vec![msg],
        });
    };
    let raw: serde_json::Value = serde_json::from_str(htext).map_err(|e| format_err(hline, None, e))?;
    let version = raw
        .get("manifest_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| format_err(hline, None, "first line must be a header with manifest_version"))?;
    if version != MANIFEST_VERSION as u64 {
        return Err(HarnessError::Version {
            found: version as u32,
            expected: MANIFEST_VERSION,
        });
    }
    let header: ManifestHeader = serde_json::from_value(raw).map_err(|e| format_err(hline, None, e))?;
    if header.patch_size == 0 {
        return Err(format_err(hline, None, "patch_size must be positive"));
    }

    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let sidecar: PathBuf = dir.join(&header.patches);
    let patches = std::fs::read(&sidecar).map_err(|e| HarnessError::io(&sidecar, e))?;
    let block = header.patch_size * header.patch_size * 3;
    let expected_len = ((header.num_facial + header.num_sc) * block) as u64;

    let mut samples = Vec::new();
    let mut ranges: Vec<(u64, u64, String)> = Vec::new();
    let mut seen = HashSet::new();
    for (line, l) in lines {
        let rec: ManifestRecord = serde_json::from_str(l).map_err(|e| format_err(line, None, e))?;
        let id = rec.id.as_str();
        let err = |msg: String| format_err(line, Some(id), msg);
        if !seen.insert(rec.id.clone()) {
            return Err(err("duplicate id".into()));
        }
        if rec.facial_keypoints.len() != header.num_facial || rec.skeleton_joints.len() != header.num_joints {
            return Err(err(format!(
                "{} facial keypoints and {} joints, expected {} and {}",
                rec.facial_keypoints.len(),
                rec.skeleton_joints.len(),
                header.num_facial,
                header.num_joints
            )));
        }
        if rec.patch_len != expected_len {
            return Err(err(format!("patch_len {} != {expected_len}", rec.patch_len)));
        }
        let end = rec.patch_offset.checked_add(rec.patch_len).filter(|&e| e <= patches.len() as u64);
        let Some(end) = end else {
            return Err(err(format!(
                "patch range at offset {} (+{}) exceeds sidecar length {}",
                rec.patch_offset,
                rec.patch_len,
                patches.len()
            )));
        };
        let [w, h] = rec.image_size;
        if w == 0 || h == 0 {
            return Err(err("image_size must be positive".into()));
        }
        let sample = KeypointSample {
            id: rec.id.clone(),
            age: rec.age,
            image_size: (w, h),
            facial: rec.facial_keypoints.clone(),
            joints: rec.skeleton_joints.clone(),
            patch_size: header.patch_size,
            patches: patches[rec.patch_offset as usize..end as usize].to_vec(),
        };
        let outside = sample
            .facial
            .iter()
            .chain(&sample.joints)
            .flatten()
            .find(|p| !(p[0].is_finite() && p[1].is_finite() && sample.in_bounds(**p)));
        if let Some(p) = outside {
            return Err(err(format!("point ({}, {}) outside the {w}×{h} image", p[0], p[1])));
        }
        ranges.push((rec.patch_offset, end, rec.id.clone()));
        samples.push(sample);
    }

    ranges.sort();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(HarnessError::Format(format!(
                "record {:?}: patch range overlaps record {:?}",
                w[1].2, w[0].2
            )));
        }
    }
    let mut bytes = text.into_bytes();
    bytes.extend_from_slice(&patches);
    Ok(Dataset {
        header: Some(header),
        samples,
        hash: sha256_hex(&bytes),
        warnings: Vec::new(),
    })
}

/// Writes `path` and its sidecar (`patches.bin` for `manifest.jsonl`,
/// `<stem>.patches.bin` otherwise), each atomically.
pub fn write_manifest(path: &Path, samples: &[KeypointSample]) -> Result<(), HarnessError> {
    let patch_size = samples.first().map_or(32, |s| s.patch_size);
    let header = ManifestHeader {
        manifest_version: MANIFEST_VERSION,
        patch_size,
        num_facial: samples.first().map_or(NUM_FACIAL, |s| s.facial.len()),
        num_joints: samples.first().map_or(NUM_JOINTS, |s| s.joints.len()),
        num_sc: NUM_SC,
        patches: sidecar_name(path),
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    let mut blob = Vec::new();
    let mut ids = HashMap::new();
    for s in samples {
        if s.patch_size != patch_size || s.facial.len() != header.num_facial || s.joints.len() != header.num_joints {
            return Err(HarnessError::Format(format!("sample {:?} does not match the first sample's layout", s.id)));
        }
        if ids.insert(s.id.as_str(), ()).is_some() {
            return Err(HarnessError::Format(format!("duplicate id {:?}", s.id)));
        }
        let rec = ManifestRecord {
            id: s.id.clone(),
            age: s.age,
            image_size: [s.image_size.0, s.image_size.1],
            facial_keypoints: s.facial.clone(),
            skeleton_joints: s.joints.clone(),
            patch_offset: blob.len() as u64,
            patch_len: s.patches.len() as u64,
        };
        blob.extend_from_slice(&s.patches);
        text.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        text.push('\n');
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    write_atomic(&dir.join(&header.patches), &blob)?;
    write_atomic(path, text.as_bytes())
}
