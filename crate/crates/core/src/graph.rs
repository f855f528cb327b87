//! Per-sample F-SC graphs: hybrid patch + coordinate node features and the
//! correlation-based initial adjacency shared by every sample.

use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::keypoints::{KeypointSample, Point, Provenance, ScKeypointSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid adjacency: {0}")]
    Adjacency(String),
}

/// Which parts of the node features are kept; dropped parts are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub facial_coords: bool,
    pub facial_patches: bool,
    pub sc_coords: bool,
    pub sc_patches: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self {
            facial_coords: true,
            facial_patches: true,
            sc_coords: true,
            sc_patches: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub grayscale: bool,
    pub mask: FeatureMask,
}

/// Length of a flat node feature for a `patch_size²` patch: three colour
/// planes followed by the tiled x and y planes.
pub fn feature_len(patch_size: usize) -> usize {
    5 * patch_size * patch_size
}

fn write_node<T: Scalar>(
    out: &mut [T],
    point: Option<Point>,
    patch: &[u8],
    image_size: (u32, u32),
    patch_size: usize,
    keep_coords: bool,
    keep_patch: bool,
    grayscale: bool,
) {
    let Some(p) = point else { return };
    let area = patch_size * patch_size;
    if keep_patch {
        let inv = 1.0 / 255.0;
        for px in 0..area {
            let rgb = [patch[px * 3], patch[px * 3 + 1], patch[px * 3 + 2]].map(|v| v as f64 * inv);
            let rgb = if grayscale {
                let y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                [y; 3]
            } else {
                rgb
            };
            for c in 0..3 {
                out[c * area + px] = T::from_f64_lossy(rgb[c]);
            }
        }
    }
    if keep_coords {
        let x = T::from_f64_lossy(p[0] / image_size.0 as f64);
        let y = T::from_f64_lossy(p[1] / image_size.1 as f64);
        out[3 * area..4 * area].fill(x);
        out[4 * area..5 * area].fill(y);
    }
}

/// Node feature matrix (J × 5·patch²): selected facial keypoints in the order
/// of `r`, then the SC slots. Missing or zero-filled keypoints give zero rows.
pub fn assemble_features<T: Scalar>(
    sample: &KeypointSample,
    r: &[usize],
    sc: &ScKeypointSet,
    opts: &FeatureOptions,
) -> Result<Tensor<T>, GraphError> {
    let ps = sample.patch_size;
    let expected = (sample.facial.len() + sc.points.len()) * sample.patch_bytes();
    if sample.patches.len() != expected {
        return Err(GraphError::Format(format!(
            "sample {}: {} patch bytes, expected {expected} ({}×{}×3 per keypoint)",
            sample.id,
            sample.patches.len(),
            ps,
            ps
        )));
    }
    let f = feature_len(ps);
    let j = r.len() + sc.points.len();
    let mut data = vec![T::zero(); j * f];
    for (row, &k) in r.iter().enumerate() {
        let point = *sample
            .facial
            .get(k)
            .ok_or_else(|| GraphError::Config(format!("selected index {k} out of range")))?;
        write_node(
            &mut data[row * f..(row + 1) * f],
            point,
            sample.facial_patch(k).unwrap(),
            sample.image_size,
            ps,
            opts.mask.facial_coords,
            opts.mask.facial_patches,
            opts.grayscale,
        );
    }
    for (s, (&p, prov)) in sc.points.iter().zip(&sc.provenance).enumerate() {
        let row = r.len() + s;
        let point = (*prov != Provenance::Zero).then_some(p);
        write_node(
            &mut data[row * f..(row + 1) * f],
            point,
            sample.sc_patch(s).unwrap(),
            sample.image_size,
            ps,
            opts.mask.sc_coords,
            opts.mask.sc_patches,
            opts.grayscale,
        );
    }
    Ok(Tensor::new(vec![j, f], data).expect("sized above"))
}

/// Per-node scalar summary (mean of the flat feature) used for correlations.
pub fn node_summaries<T: Scalar>(features: &Tensor<T>) -> Vec<f64> {
    let (j, f) = features.dims2().expect("feature matrix");
    features
        .data()
        .chunks(f)
        .take(j)
        .map(|row| row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / f as f64)
        .collect()
}

/// Pearson correlation of two series. Zero variance in either gives 0.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "series lengths differ");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        debug!("zero-variance series in correlation, using 0");
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Dense symmetric 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl BinaryMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[[usize; 2]]) -> Result<Self, GraphError> {
        let mut m = Self::new(n);
        for &[i, j] in pairs {
            if i >= n || j >= n || i == j {
                return Err(GraphError::Adjacency(format!("bad edge ({i}, {j}) for {n} nodes")));
            }
            m.set(i, j, true);
            m.set(j, i, true);
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn row_degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.get(i, j)).count()
    }

    /// Upper-triangle pairs `i < j`.
    pub fn pairs(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) {
                    out.push([i, j]);
                }
            }
        }
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![self.n, self.n], |i| if self.bits[i] { T::one() } else { T::zero() })
    }

    fn validate(&self, name: &str) -> Result<(), GraphError> {
        for i in 0..self.n {
            if self.get(i, i) {
                return Err(GraphError::Adjacency(format!("{name}: self loop at {i}")));
            }
            if self.row_degree(i) == 0 && self.n > 1 {
                return Err(GraphError::Adjacency(format!("{name}: node {i} has no edges")));
            }
            for j in 0..self.n {
                if self.get(i, j) != self.get(j, i) {
                    return Err(GraphError::Adjacency(format!("{name}: asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Initial facial and SC adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencySpec {
    pub top_n: usize,
    pub a_f: BinaryMatrix,
    pub a_z: BinaryMatrix,
}

#[derive(Serialize, Deserialize)]
struct AdjacencyFile {
    top_n: usize,
    a_f: Vec<[usize; 2]>,
    a_z: Vec<[usize; 2]>,
}

impl AdjacencySpec {
    pub fn new(top_n: usize, a_f: BinaryMatrix, a_z: BinaryMatrix) -> Result<Self, GraphError> {
        a_f.validate("a_f")?;
        a_z.validate("a_z")?;
        Ok(Self { top_n, a_f, a_z })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&AdjacencyFile {
            top_n: self.top_n,
            a_f: self.a_f.pairs(),
            a_z: self.a_z.pairs(),
        })
        .expect("plain data serializes")
    }

    /// Parses the pair-list JSON; block sizes are not stored in the file.
    pub fn from_json(json: &str, n_facial: usize, n_sc: usize) -> Result<Self, GraphError> {
        let file: AdjacencyFile =
            serde_json::from_str(json).map_err(|e| GraphError::Format(format!("adjacency JSON: {e}")))?;
        Self::new(
            file.top_n,
            BinaryMatrix::from_pairs(n_facial, &file.a_f)?,
            BinaryMatrix::from_pairs(n_sc, &file.a_z)?,
        )
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Connects every node to the partners whose correlation reaches its
/// `top_n`-th largest value (ties all connect), then symmetrizes by OR.
pub fn block_adjacency(corr: &[Vec<f64>], top_n: usize) -> Result<BinaryMatrix, GraphError> {
    let n = corr.len();
    if top_n == 0 || top_n >= n {
        return Err(GraphError::Config(format!(
            "top_n={top_n} must be in [1, {}) for a block of {n} nodes",
            n
        )));
    }
    let mut m = BinaryMatrix::new(n);
    for i in 0..n {
        let mut vals: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| corr[i][j]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let threshold = vals[top_n - 1];
        for j in (0..n).filter(|&j| j != i) {
            if corr[i][j] >= threshold {
                m.set(i, j, true);
                m.set(j, i, true);
            }
        }
    }
    Ok(m)
}

/// Builds both adjacency blocks from per-sample node summaries
/// (`series[sample][node]`, facial nodes first).
pub fn build_adjacency(series: &[Vec<f64>], n_facial: usize, top_n: usize) -> Result<AdjacencySpec, GraphError> {
    if series.len() < 2 {
        return Err(GraphError::Config("correlations need at least two samples".into()));
    }
    let j = series[0].len();
    let column = |node: usize| series.iter().map(|s| s[node]).collect::<Vec<f64>>();
    let columns: Vec<Vec<f64>> = (0..j).map(column).collect();
    let block = |lo: usize, hi: usize| -> Vec<Vec<f64>> {
        (lo..hi)
            .map(|a| (lo..hi).map(|b| correlation(&columns[a], &columns[b])).collect())
            .collect()
    };
    AdjacencySpec::new(
        top_n,
        block_adjacency(&block(0, n_facial), top_n)?,
        block_adjacency(&block(n_facial, j), top_n)?,
    )
}

/// One sample's graph: features plus initial edge weights on each block.
#[derive(Debug, Clone, PartialEq)]
pub struct FscGraph<T: Scalar> {
    pub features: Tensor<T>,
    pub n_facial: usize,
    pub edges_f: Tensor<T>,
    pub edges_z: Tensor<T>,
    pub age: u32,
}

impl<T: Scalar> FscGraph<T> {
    pub fn num_nodes(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn n_sc(&self) -> usize {
        self.num_nodes() - self.n_facial
    }

    pub fn cast<U: Scalar>(&self) -> FscGraph<U> {
        FscGraph {
            features: self.features.cast(),
            n_facial: self.n_facial,
            edges_f: self.edges_f.cast(),
            edges_z: self.edges_z.cast(),
            age: self.age,
        }
    }
}

pub fn build_graph<T: Scalar>(
    sample: &KeypointSample,
    r: &[usize],
    sc: &ScKeypointSet,
    adjacency: &AdjacencySpec,
    opts: &FeatureOptions,
) -> Result<FscGraph<T>, GraphError> {
    if adjacency.a_f.size() != r.len() || adjacency.a_z.size() != sc.points.len() {
        return Err(GraphError::Config(format!(
            "adjacency blocks ({}, {}) do not match graph blocks ({}, {})",
            adjacency.a_f.size(),
            adjacency.a_z.size(),
            r.len(),
            sc.points.len()
        )));
    }
    Ok(FscGraph {
        features: assemble_features(sample, r, sc, opts)?,
        n_facial: r.len(),
        edges_f: adjacency.a_f.to_tensor(),
        edges_z: adjacency.a_z.to_tensor(),
        age: sample.age,
    })
}
