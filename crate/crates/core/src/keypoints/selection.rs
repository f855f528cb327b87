//! Data-driven facial keypoint selection.
//!
//! Each landmark gets an expression score (how much its distances to its
//! nearest neighbours vary across the dataset) and an age score (how much its
//! distance to a root landmark varies). Landmarks that are stable under
//! expression but move with age are kept.

use log::warn;
use serde::{Deserialize, Serialize};

use super::{dist, population_variance, KeypointError, KeypointSample};

/// Nose tip in the 68-landmark layout.
pub const DEFAULT_ROOT: usize = 30;

/// For each keypoint, its `k` nearest other keypoints by mean distance over
/// the samples where both are present. Ties go to the lower index.
pub fn neighbor_sets(samples: &[KeypointSample], k: usize) -> Result<Vec<Vec<usize>>, KeypointError> {
    if k == 0 {
        return Err(KeypointError::Config("K must be at least 1".into()));
    }
    let n = samples.first().ok_or(KeypointError::EmptyDataset)?.facial.len();
    let mut sums = vec![0.0; n * n];
    let mut counts = vec![0usize; n * n];
    for s in samples {
        for i in 0..n {
            let Some(pi) = s.facial[i] else { continue };
            for j in (i + 1)..n {
                if let Some(pj) = s.facial[j] {
                    let d = dist(pi, pj);
                    sums[i * n + j] += d;
                    sums[j * n + i] += d;
                    counts[i * n + j] += 1;
                    counts[j * n + i] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if samples.iter().all(|s| s.facial[i].is_none()) {
            return Err(KeypointError::AbsentKeypoint(i));
        }
        let mut cands: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i && counts[i * n + j] > 0)
            .map(|j| (sums[i * n + j] / counts[i * n + j] as f64, j))
            .collect();
        if cands.len() < k {
            return Err(KeypointError::TooFewNeighbours {
                index: i,
                found: cands.len(),
                needed: k,
            });
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(cands.into_iter().take(k).map(|(_, j)| j).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionStats {
    /// `zeta[sample][keypoint]`, `None` where the keypoint or a neighbour is missing.
    pub zeta: Vec<Vec<Option<f64>>>,
    /// Largest unnormalized neighbour-distance sum over the whole dataset.
    pub h: f64,
    /// Population variance of zeta per keypoint; `None` with fewer than two usable samples.
    pub v_e: Vec<Option<f64>>,
}

/// Expression variance of every keypoint given neighbour sets `beta`.
pub fn expression_variance(samples: &[KeypointSample], beta: &[Vec<usize>]) -> ExpressionStats {
    let raw: Vec<Vec<Option<f64>>> = samples
        .iter()
        .map(|s| {
            beta.iter()
                .enumerate()
                .map(|(k, nbrs)| {
                    let pk = s.facial[k]?;
                    nbrs.iter()
                        .map(|&n| s.facial[n].map(|pn| dist(pk, pn)))
                        .sum::<Option<f64>>()
                })
                .collect()
        })
        .collect();
    let h = raw
        .iter()
        .flatten()
        .flatten()
        .copied()
        .fold(0.0f64, f64::max);
    let zeta: Vec<Vec<Option<f64>>> = raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| v.map(|x| if h > 0.0 { x / h } else { 0.0 }))
                .collect()
        })
        .collect();
    let v_e = (0..beta.len())
        .map(|k| {
            let series: Vec<f64> = zeta.iter().filter_map(|row| row[k]).collect();
            if series.len() < 2 {
                warn!("keypoint {k}: {} usable samples for expression variance, excluded", series.len());
                None
            } else {
                Some(population_variance(&series))
            }
        })
        .collect();
    ExpressionStats { zeta, h, v_e }
}

/// Age variance: variance of each keypoint's distance to `root`, measured in
/// units of the image diagonal.
pub fn age_variance(samples: &[KeypointSample], root: usize) -> Result<Vec<Option<f64>>, KeypointError> {
    let n = samples.first().ok_or(KeypointError::EmptyDataset)?.facial.len();
    if root >= n {
        return Err(KeypointError::Config(format!(
            "root keypoint {root} outside [0, {n})"
        )));
    }
    Ok((0..n)
        .map(|k| {
            let series: Vec<f64> = samples
                .iter()
                .filter_map(|s| Some(dist(s.facial[k]?, s.facial[root]?) / s.diagonal()))
                .collect();
            if series.len() < 2 {
                warn!("keypoint {k}: {} usable samples for age variance, excluded", series.len());
                None
            } else {
                Some(population_variance(&series))
            }
        })
        .collect())
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Combined scores and the `n_prime` best keypoints, sorted ascending.
///
/// Both variances are min-max rescaled over the scored keypoints before
/// `v_t = eta * v_a + (1 - eta) * (1 - v_e)`. Keypoints with a missing score
/// get `v_t = None` and are never selected.
pub fn select_keypoints(
    v_e: &[Option<f64>],
    v_a: &[Option<f64>],
    eta: f64,
    n_prime: usize,
) -> Result<(Vec<Option<f64>>, Vec<usize>), KeypointError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(KeypointError::Config(format!("eta {eta} outside [0, 1]")));
    }
    if v_e.len() != v_a.len() {
        return Err(KeypointError::Config("score vectors differ in length".into()));
    }
    let scored: Vec<usize> = (0..v_e.len())
        .filter(|&k| v_e[k].is_some() && v_a[k].is_some())
        .collect();
    if n_prime > scored.len() {
        return Err(KeypointError::Config(format!(
            "cannot select {n_prime} keypoints, only {} are scored",
            scored.len()
        )));
    }
    let e = min_max(&scored.iter().map(|&k| v_e[k].unwrap()).collect::<Vec<_>>());
    let a = min_max(&scored.iter().map(|&k| v_a[k].unwrap()).collect::<Vec<_>>());
    let mut v_t = vec![None; v_e.len()];
    for (i, &k) in scored.iter().enumerate() {
        v_t[k] = Some(eta * a[i] + (1.0 - eta) * (1.0 - e[i]));
    }
    let mut order = scored;
    order.sort_by(|&x, &y| v_t[y].unwrap().total_cmp(&v_t[x].unwrap()).then(x.cmp(&y)));
    let mut r: Vec<usize> = order.into_iter().take(n_prime).collect();
    r.sort_unstable();
    Ok((v_t, r))
}

/// Everything computed while selecting keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub beta: Vec<Vec<usize>>,
    pub zeta: Vec<Vec<Option<f64>>>,
    pub h: f64,
    pub v_e: Vec<Option<f64>>,
    pub v_a: Vec<Option<f64>>,
    pub v_t: Vec<Option<f64>>,
    pub r: Vec<usize>,
}

pub fn selection_stats(
    samples: &[KeypointSample],
    k: usize,
    root: usize,
    eta: f64,
    n_prime: usize,
) -> Result<SelectionStats, KeypointError> {
    let beta = neighbor_sets(samples, k)?;
    let expr = expression_variance(samples, &beta);
    let v_a = age_variance(samples, root)?;
    let (v_t, r) = select_keypoints(&expr.v_e, &v_a, eta, n_prime)?;
    Ok(SelectionStats {
        beta,
        zeta: expr.zeta,
        h: expr.h,
        v_e: expr.v_e,
        v_a,
        v_t,
        r,
    })
}
