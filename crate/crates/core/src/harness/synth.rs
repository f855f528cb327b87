//! Deterministic synthetic populations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::keypoints::{KeypointSample, Point, NUM_FACIAL, NUM_JOINTS, NUM_SC};

/// Faces and upper bodies that grow with age. Skin darkens, skin texture
/// contrast rises and clothing colour shifts from red to blue, all linearly
/// in age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_samples: usize,
    /// Ages cycle through `0..=max_age`.
    pub max_age: u32,
    /// Half-width (px) of independent per-keypoint expression jitter.
    pub jitter: f64,
    /// Relative growth of face and body per year.
    pub drift: f64,
    /// Strength of the age-dependent patch texture and clothing colour, 0 to 1.
    pub texture_contrast: f64,
    /// Half-width of uniform pixel noise.
    pub pixel_noise: u8,
    pub joint_dropout: f64,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_samples: 200,
            max_age: 10,
            jitter: 1.0,
            drift: 0.03,
            texture_contrast: 0.6,
            pixel_noise: 6,
            joint_dropout: 0.05,
            patch_size: 32,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Every sample has identical geometry and pixels; only labels differ.
    pub fn no_signal(num_samples: usize, max_age: u32, seed: u64) -> Self {
        Self {
            num_samples,
            max_age,
            jitter: 0.0,
            drift: 0.0,
            texture_contrast: 0.0,
            pixel_noise: 0,
            joint_dropout: 0.0,
            seed,
            ..Self::default()
        }
    }
}

pub const IMAGE: (u32, u32) = (256, 320);

/// 68-point layout in face units (x right, y down, nose tip near the origin).
fn face_template() -> Vec<Point> {
    let mut pts = Vec::with_capacity(NUM_FACIAL);
    for i in 0..17 {
        let t = PI * i as f64 / 16.0;
        pts.push([-0.9 * t.cos(), 0.1 + 0.85 * t.sin()]);
    }
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let u = i as f64 / 4.0;
            let x = if side < 0.0 { -0.75 + 0.6 * u } else { 0.15 + 0.6 * u };
            pts.push([x, -0.45 - 0.08 * (PI * u).sin()]);
        }
    }
    for i in 0..4 {
        pts.push([0.0, -0.3 + 0.1 * i as f64]);
    }
    for i in 0..5 {
        pts.push([-0.2 + 0.1 * i as f64, 0.15]);
    }
    for cx in [-0.4, 0.4] {
        for i in 0..6 {
            let t = 2.0 * PI * i as f64 / 6.0;
            pts.push([cx + 0.15 * t.cos(), -0.25 + 0.06 * t.sin()]);
        }
    }
    for (n, rx, ry) in [(12, 0.35, 0.12), (8, 0.2, 0.05)] {
        for i in 0..n {
            let t = 2.0 * PI * i as f64 / n as f64;
            pts.push([rx * t.cos(), 0.5 + ry * t.sin()]);
        }
    }
    debug_assert_eq!(pts.len(), NUM_FACIAL);
    pts
}

/// COCO-18 joints relative to the neck, in pixels; `None` below the frame.
fn body_template() -> [Option<Point>; NUM_JOINTS] {
    [
        Some([0.0, -55.0]),
        Some([0.0, 0.0]),
        Some([-40.0, 10.0]),
        Some([-50.0, 55.0]),
        Some([-55.0, 100.0]),
        Some([40.0, 10.0]),
        Some([50.0, 55.0]),
        Some([55.0, 100.0]),
        Some([-22.0, 115.0]),
        None,
        None,
        Some([22.0, 115.0]),
        None,
        None,
        Some([-12.0, -65.0]),
        Some([12.0, -65.0]),
        Some([-25.0, -60.0]),
        Some([25.0, -60.0]),
    ]
}

fn clamp_point(p: Point) -> Point {
    [p[0].clamp(0.0, IMAGE.0 as f64 - 1.0), p[1].clamp(0.0, IMAGE.1 as f64 - 1.0)]
}

const CLOTH_YOUNG: [f64; 3] = [230.0, 80.0, 80.0];
const CLOTH_OLD: [f64; 3] = [70.0, 100.0, 230.0];

pub fn synth_generate(spec: &SynthSpec) -> Vec<KeypointSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let template = face_template();
    let body = body_template();
    let p = spec.patch_size;
    let q1 = spec.max_age + 1;
    (0..spec.num_samples)
        .map(|i| {
            let age = i as u32 % q1;
            let a = age as f64;
            let grow = 1.0 + spec.drift * a;
            let jit = |rng: &mut ChaCha8Rng| -> f64 {
                if spec.jitter > 0.0 {
                    rng.gen_range(-spec.jitter..spec.jitter)
                } else {
                    0.0
                }
            };
            let face_c = [128.0, 80.0];
            let facial: Vec<Option<Point>> = template
                .iter()
                .map(|t| {
                    let x = face_c[0] + 40.0 * grow * t[0] + jit(&mut rng);
                    let y = face_c[1] + 40.0 * grow * t[1] + jit(&mut rng);
                    Some(clamp_point([x, y]))
                })
                .collect();
            let neck = [128.0, 150.0 + 10.0 * spec.drift * a];
            let joints: Vec<Option<Point>> = body
                .iter()
                .map(|j| {
                    let j = (*j)?;
                    let dropped = spec.joint_dropout > 0.0 && rng.gen::<f64>() < spec.joint_dropout;
                    let x = neck[0] + grow * j[0] + jit(&mut rng);
                    let y = neck[1] + grow * j[1] + jit(&mut rng);
                    (!dropped).then(|| clamp_point([x, y]))
                })
                .collect();

            let tc = spec.texture_contrast;
            let u = a / spec.max_age.max(1) as f64;
            let wrinkle = tc * 60.0 * u;
            let tone = tc * 250.0 * u;
            let cloth: [f64; 3] = [0, 1, 2].map(|c| CLOTH_YOUNG[c] + u * (CLOTH_OLD[c] - CLOTH_YOUNG[c]));
            let mut patches = Vec::with_capacity((NUM_FACIAL + NUM_SC) * p * p * 3);
            for node in 0..NUM_FACIAL + NUM_SC {
                for y in 0..p {
                    for x in 0..p {
                        let rgb = if node < NUM_FACIAL {
                            let stripe = (2.0 * PI * 3.0 * (x + y) as f64 / p as f64).sin();
                            [200.0, 160.0, 130.0].map(|c| c - tone + wrinkle * stripe)
                        } else {
                            let base = [128.0, 128.0, 128.0];
                            [0, 1, 2].map(|c| base[c] + tc * (cloth[c] - base[c]))
                        };
                        for c in rgb {
                            let noise = if spec.pixel_noise > 0 {
                                let n = spec.pixel_noise as i32;
                                rng.gen_range(-n..=n) as f64
                            } else {
                                0.0
                            };
                            patches.push((c + noise).round().clamp(0.0, 255.0) as u8);
                        }
                    }
                }
            }
            KeypointSample {
                id: format!("synth-{i:05}"),
                age,
                image_size: IMAGE,
                facial,
                joints,
                patch_size: p,
                patches,
            }
        })
        .collect()
}

/// Facial indices that drift with age in [`jitter_drift`].
pub const DRIFT_KEYPOINTS: std::ops::Range<usize> = 0..19;

/// Two kinds of facial keypoint. Drift keypoints form a rigid 19-point
/// cluster far above the root that moves up by `drift` px per year; every
/// other keypoint (root included) sits on a grid and is jittered uniformly
/// by up to `jitter` px per axis. With `drift ≥ 10 · jitter` the cluster's
/// neighbour distances never change while its distance to the root varies
/// far more than any jittered distance can, so selection must rank every
/// drift keypoint first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterDriftSpec {
    pub num_samples: usize,
    pub max_age: u32,
    pub jitter: f64,
    pub drift: f64,
    pub root: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for JitterDriftSpec {
    fn default() -> Self {
        Self {
            num_samples: 110,
            max_age: 10,
            jitter: 0.5,
            drift: 5.0,
            root: 30,
            patch_size: 4,
            seed: 0,
        }
    }
}

pub fn jitter_drift(spec: &JitterDriftSpec) -> Vec<KeypointSample> {
    const SIZE: (u32, u32) = (512, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let root_at = [256.0, 330.0];
    let cluster: Vec<Point> = (0..DRIFT_KEYPOINTS.len())
        .map(|k| [256.0 + 6.0 * (k % 5) as f64 - 12.0, 100.0 + 6.0 * (k / 5) as f64 - 9.0])
        .collect();
    // 7 × 7 grid centred on the root; the root takes the centre cell.
    let mut grid: Vec<Point> = (0..49)
        .map(|c| [root_at[0] + 20.0 * ((c % 7) as f64 - 3.0), root_at[1] + 20.0 * ((c / 7) as f64 - 3.0)])
        .collect();
    let centre = grid.remove(24);
    let block = spec.patch_size * spec.patch_size * 3;
    (0..spec.num_samples)
        .map(|i| {
            let age = i as u32 % (spec.max_age + 1);
            let lift = spec.drift * age as f64;
            let mut cells = grid.iter();
            let facial = (0..NUM_FACIAL)
                .map(|k| {
                    if DRIFT_KEYPOINTS.contains(&k) {
                        let c = cluster[k - DRIFT_KEYPOINTS.start];
                        return Some([c[0], c[1] - lift]);
                    }
                    let base = if k == spec.root { centre } else { *cells.next().expect("49 cells") };
                    let mut j = || if spec.jitter > 0.0 { rng.gen_range(-spec.jitter..spec.jitter) } else { 0.0 };
                    Some([base[0] + j(), base[1] + j()])
                })
                .collect();
            KeypointSample {
                id: format!("jd-{i:05}"),
                age,
                image_size: SIZE,
                facial,
                joints: vec![None; NUM_JOINTS],
                patch_size: spec.patch_size,
                patches: vec![0; (NUM_FACIAL + NUM_SC) * block],
            }
        })
        .collect()
}

/// MAE of always predicting the (lower) median label.
pub fn median_predictor_mae(ages: &[u32]) -> f64 {
    let mut sorted = ages.to_vec();
    sorted.sort_unstable();
    let med = sorted[(sorted.len() - 1) / 2] as f64;
    ages.iter().map(|&a| (a as f64 - med).abs()).sum::<f64>() / ages.len() as f64
}
