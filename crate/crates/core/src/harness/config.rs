use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::graph::{feature_len, FeatureMask, FeatureOptions};
use crate::keypoints::DEFAULT_ROOT;
use crate::network::NetworkConfig;
use crate::tensor::DType;

/// Which node features a run sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    /// Facial keypoint coordinates.
    #[serde(rename = "FK")]
    Fk,
    /// Facial patches of pixels.
    #[serde(rename = "FPP")]
    Fpp,
    #[serde(rename = "FK+FPP")]
    FkFpp,
    /// SC keypoint coordinates.
    #[serde(rename = "SCK")]
    Sck,
    /// SC image patches.
    #[serde(rename = "SCIP")]
    Scip,
    #[serde(rename = "SCK+SCIP")]
    SckScip,
    #[serde(rename = "all")]
    All,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::Fk,
        Modality::Fpp,
        Modality::FkFpp,
        Modality::Sck,
        Modality::Scip,
        Modality::SckScip,
        Modality::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Fk => "FK",
            Modality::Fpp => "FPP",
            Modality::FkFpp => "FK+FPP",
            Modality::Sck => "SCK",
            Modality::Scip => "SCIP",
            Modality::SckScip => "SCK+SCIP",
            Modality::All => "all",
        }
    }

    pub fn mask(self) -> FeatureMask {
        let (fc, fp, sc, sp) = match self {
            Modality::Fk => (true, false, false, false),
            Modality::Fpp => (false, true, false, false),
            Modality::FkFpp => (true, true, false, false),
            Modality::Sck => (false, false, true, false),
            Modality::Scip => (false, false, false, true),
            Modality::SckScip => (false, false, true, true),
            Modality::All => (true, true, true, true),
        };
        FeatureMask {
            facial_coords: fc,
            facial_patches: fp,
            sc_coords: sc,
            sc_patches: sp,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Config(format!("unknown modality {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantFlags {
    pub temporal_aware: bool,
    pub adaptive_f: bool,
    pub adaptive_z: bool,
    pub use_keypoint_selection: bool,
    pub modality: Modality,
}

impl Default for VariantFlags {
    fn default() -> Self {
        Self::named(Variant::TaaGcn)
    }
}

/// The four architectures compared in the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Gcn,
    TaGcn,
    Agcn,
    TaaGcn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gcn, Variant::TaGcn, Variant::Agcn, Variant::TaaGcn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gcn => "GCN",
            Variant::TaGcn => "TA-GCN",
            Variant::Agcn => "AGCN",
            Variant::TaaGcn => "TAA-GCN",
        }
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Config(format!("unknown variant {s:?}")))
    }
}

impl VariantFlags {
    pub fn named(v: Variant) -> Self {
        let (ta, ad) = match v {
            Variant::Gcn => (false, false),
            Variant::TaGcn => (true, false),
            Variant::Agcn => (false, true),
            Variant::TaaGcn => (true, true),
        };
        Self {
            temporal_aware: ta,
            adaptive_f: ad,
            adaptive_z: ad,
            use_keypoint_selection: true,
            modality: Modality::All,
        }
    }

    /// Architecture name; partial adaptivity reads as adaptive.
    pub fn variant(&self) -> Variant {
        match (self.temporal_aware, self.adaptive_f || self.adaptive_z) {
            (false, false) => Variant::Gcn,
            (true, false) => Variant::TaGcn,
            (false, true) => Variant::Agcn,
            (true, true) => Variant::TaaGcn,
        }
    }
}

/// Every hyperparameter of a run. Serialized next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_facial: usize,
    pub num_joints: usize,
    pub n_prime: usize,
    pub k_neighbors: usize,
    pub eta: f64,
    pub num_sc: usize,
    pub hierarchy_levels: usize,
    pub patch_size: usize,
    pub agcl_channels: Vec<usize>,
    pub tmm_layers: usize,
    pub tmm_hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: String,
    pub weight_decay: f64,
    pub omega: f64,

    pub top_n: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub max_age: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub dtype: DType,
    pub val_fraction: f64,
    pub root_keypoint: usize,
    pub grayscale: bool,
    /// Lower bounds of age groups after the first (e.g. `[3, 13, 20]`); empty
    /// means top-1 is scored on exact ages.
    pub age_groups: Vec<u32>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Per-sample gradients whose global L2 norm exceeds this are rescaled to
    /// it before the batch mean.
    pub grad_clip: Option<f64>,
    pub variant: VariantFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_facial: 68,
            num_joints: 18,
            n_prime: 19,
            k_neighbors: 5,
            eta: 0.4,
            num_sc: 20,
            hierarchy_levels: 4,
            patch_size: 32,
            agcl_channels: vec![64, 64, 128, 128, 256, 256],
            tmm_layers: 5,
            tmm_hidden: 64,
            learning_rate: 1e-5,
            epochs: 300,
            optimizer: "adam".into(),
            weight_decay: 1e-6,
            omega: 0.65,
            top_n: 5,
            alpha: 2.0,
            dropout: 0.1,
            max_age: 116,
            batch_size: 32,
            seed: 0,
            dtype: DType::F32,
            val_fraction: 0.2,
            root_keypoint: DEFAULT_ROOT,
            grayscale: false,
            age_groups: Vec::new(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(10.0),
            variant: VariantFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.optimizer != "adam" {
            return bad(format!("optimizer {:?} unsupported (adam only)", self.optimizer));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch_size and patch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning_rate and weight_decay must be non-negative".into());
        }
        if self.root_keypoint >= self.num_facial {
            return bad(format!("root keypoint {} outside [0, {})", self.root_keypoint, self.num_facial));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if self.top_n == 0 || self.k_neighbors == 0 {
            return bad("top_n and k_neighbors must be positive".into());
        }
        if !self.age_groups.windows(2).all(|w| w[0] < w[1]) {
            return bad("age_groups must be strictly increasing".into());
        }
        self.network().validate()?;
        Ok(())
    }

    /// Number of facial graph nodes: the selected subset, or every landmark
    /// when selection is switched off.
    pub fn facial_nodes(&self) -> usize {
        if self.variant.use_keypoint_selection {
            self.n_prime
        } else {
            self.num_facial
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            feature_len: feature_len(self.patch_size),
            agcl_channels: self.agcl_channels.clone(),
            tmm_layers: self.tmm_layers,
            tmm_hidden: self.tmm_hidden,
            max_age: self.max_age,
            k_max: self.k_neighbors as u32,
            alpha: self.alpha,
            omega: self.omega,
            dropout: self.dropout,
            temporal_aware: self.variant.temporal_aware,
            adaptive_f: self.variant.adaptive_f,
            adaptive_z: self.variant.adaptive_z,
        }
    }

    pub fn features(&self) -> FeatureOptions {
        FeatureOptions {
            grayscale: self.grayscale,
            mask: self.variant.modality.mask(),
        }
    }

    /// Group index of an age under `age_groups`.
    pub fn age_group(&self, age: u32) -> usize {
        self.age_groups.iter().take_while(|&&b| age >= b).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::Config(format!("config: {e}")))
    }
}
