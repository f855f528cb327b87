//! SC keypoint generation from detected body joints.
//!
//! Joints are grouped into hierarchical levels (parents first). Points are
//! generated by interpolating neighbours inside a level and between the same
//! position of consecutive levels. A missing joint whose mirror partner was
//! detected is reflected about the vertical body axis.
//!
//! The output always has [`NUM_SC`] slots laid out by [`SC_SLOTS`]
//! (COCO-18 joint numbering):
//!
//! | slot | rule                  | anatomy           |
//! |------|-----------------------|-------------------|
//! | 0-1  | joint 0, 1            | nose, neck        |
//! | 2-3  | joint 2, 5            | shoulders R/L     |
//! | 4-5  | joint 3, 6            | elbows R/L        |
//! | 6-7  | joint 4, 7            | wrists R/L        |
//! | 8-9  | joint 8, 11           | hips R/L          |
//! | 10   | intra (0, 1)          | throat            |
//! | 11   | intra (2, 5)          | upper chest       |
//! | 12   | intra (3, 6)          | mid torso         |
//! | 13   | intra (8, 11)         | pelvis            |
//! | 14-15| inter (16, 2), (17, 5)| neck sides R/L    |
//! | 16-17| inter (2, 3), (5, 6)  | upper arms R/L    |
//! | 18-19| inter (3, 4), (6, 7)  | forearms R/L      |

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{KeypointError, Point, NUM_JOINTS, NUM_SC};

const NECK: usize = 1;
const R_SHOULDER: usize = 2;
const L_SHOULDER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRule {
    Joint(usize),
    /// Midpoint of two neighbouring joints of one level.
    Intra(usize, usize),
    /// Midpoint of a joint and the joint at the same position one level down.
    Inter(usize, usize),
}

pub const SC_SLOTS: [SlotRule; NUM_SC] = [
    SlotRule::Joint(0),
    SlotRule::Joint(1),
    SlotRule::Joint(2),
    SlotRule::Joint(5),
    SlotRule::Joint(3),
    SlotRule::Joint(6),
    SlotRule::Joint(4),
    SlotRule::Joint(7),
    SlotRule::Joint(8),
    SlotRule::Joint(11),
    SlotRule::Intra(0, 1),
    SlotRule::Intra(2, 5),
    SlotRule::Intra(3, 6),
    SlotRule::Intra(8, 11),
    SlotRule::Inter(16, 2),
    SlotRule::Inter(17, 5),
    SlotRule::Inter(2, 3),
    SlotRule::Inter(5, 6),
    SlotRule::Inter(3, 4),
    SlotRule::Inter(6, 7),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Detected,
    IntraLevelInterp,
    InterLevelInterp,
    Mirrored,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonHierarchy {
    pub levels: Vec<Vec<usize>>,
    pub mirror_pairs: Vec<(usize, usize)>,
    pub end_effectors: BTreeSet<usize>,
}

impl Default for SkeletonHierarchy {
    /// Four upper-body levels; lower-body joints ride along at the end of the
    /// last level so every COCO-18 index is covered.
    fn default() -> Self {
        Self {
            levels: vec![
                vec![16, 17, 0, 1, 14, 15],
                vec![2, 5],
                vec![3, 6],
                vec![4, 7, 8, 11, 9, 12, 10, 13],
            ],
            mirror_pairs: vec![(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17)],
            end_effectors: [4, 7, 10, 13].into_iter().collect(),
        }
    }
}

impl SkeletonHierarchy {
    pub fn num_joints(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<(), KeypointError> {
        let m = self.num_joints();
        let mut level_of = vec![usize::MAX; m];
        for (li, level) in self.levels.iter().enumerate() {
            for &j in level {
                if j >= m || level_of[j] != usize::MAX {
                    return Err(KeypointError::Config(format!(
                        "joint {j} is out of range or listed twice"
                    )));
                }
                level_of[j] = li;
            }
        }
        let mut paired = BTreeSet::new();
        for &(l, r) in &self.mirror_pairs {
            if l >= m || r >= m || l == r || level_of[l] != level_of[r] {
                return Err(KeypointError::Config(format!(
                    "mirror pair ({l}, {r}) must join two joints of one level"
                )));
            }
            if !paired.insert(l) || !paired.insert(r) {
                return Err(KeypointError::Config(format!("joint in pair ({l}, {r}) paired twice")));
            }
        }
        if let Some(e) = self.end_effectors.iter().find(|&&e| e >= m) {
            return Err(KeypointError::Config(format!("end effector {e} out of range")));
        }
        Ok(())
    }

    pub fn mirror_of(&self, j: usize) -> Option<usize> {
        self.mirror_pairs.iter().find_map(|&(l, r)| {
            if l == j {
                Some(r)
            } else if r == j {
                Some(l)
            } else {
                None
            }
        })
    }
}

/// Exactly [`NUM_SC`] points, with how each one was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScKeypointSet {
    pub points: Vec<Point>,
    pub provenance: Vec<Provenance>,
}

fn midpoint(a: Point, b: Point) -> Point {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

/// x of the vertical body axis: the neck, else the shoulder midpoint.
fn body_axis(joints: &[Option<Point>]) -> Option<f64> {
    match (joints[NECK], joints[R_SHOULDER], joints[L_SHOULDER]) {
        (Some(n), _, _) => Some(n[0]),
        (None, Some(r), Some(l)) => Some((r[0] + l[0]) / 2.0),
        _ => None,
    }
}

pub fn generate_sc(joints: &[Option<Point>], hierarchy: &SkeletonHierarchy) -> Result<ScKeypointSet, KeypointError> {
    hierarchy.validate()?;
    if joints.len() != hierarchy.num_joints() || joints.len() != NUM_JOINTS {
        return Err(KeypointError::Config(format!(
            "{} joints given, hierarchy covers {} (expected {NUM_JOINTS})",
            joints.len(),
            hierarchy.num_joints()
        )));
    }

    let axis = body_axis(joints);
    let resolved: Vec<Option<(Point, Provenance)>> = (0..joints.len())
        .map(|j| match joints[j] {
            Some(p) => Some((p, Provenance::Detected)),
            None => {
                let partner = joints[hierarchy.mirror_of(j)?]?;
                Some(([2.0 * axis? - partner[0], partner[1]], Provenance::Mirrored))
            }
        })
        .collect();
    let point = |j: usize| resolved[j].map(|(p, _)| p);

    let mut candidates: HashMap<SlotRule, (Point, Provenance)> = HashMap::new();
    for (j, r) in resolved.iter().enumerate() {
        if let Some(r) = r {
            candidates.insert(SlotRule::Joint(j), *r);
        }
    }
    for (i, level) in hierarchy.levels.iter().enumerate() {
        for (pos, &a) in level.iter().enumerate() {
            if let (Some(pa), Some(&b)) = (point(a), level.get(pos + 1)) {
                if let Some(pb) = point(b) {
                    candidates.insert(SlotRule::Intra(a, b), (midpoint(pa, pb), Provenance::IntraLevelInterp));
                }
            }
            let Some(&child) = hierarchy.levels.get(i + 1).and_then(|next| next.get(pos)) else {
                continue;
            };
            match (point(a), point(child)) {
                (Some(pa), Some(pc)) => {
                    candidates.insert(SlotRule::Inter(a, child), (midpoint(pa, pc), Provenance::InterLevelInterp));
                }
                // Missing non-end-effector children are explicitly zero-filled;
                // missing end effectors are skipped, which leaves their slot zero too.
                _ if !hierarchy.end_effectors.contains(&child) => {
                    candidates.insert(SlotRule::Inter(a, child), ([0.0, 0.0], Provenance::Zero));
                }
                _ => {}
            }
        }
    }

    let (points, provenance) = SC_SLOTS
        .iter()
        .map(|rule| candidates.get(rule).copied().unwrap_or(([0.0, 0.0], Provenance::Zero)))
        .unzip();
    Ok(ScKeypointSet { points, provenance })
}
