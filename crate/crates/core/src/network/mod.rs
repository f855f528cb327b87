//! Temporally-aware adaptive GCN.
//!
//! Adaptive graph convolution layers (AGCL) reweight facial and SC edges from
//! node cosine similarity. Their stacked output `L0` (nodes × channels) feeds
//! a spatial head (pool, linear, softmax) and a temporal head, where a
//! recurrent temporal memory module (TMM) runs over one row per age using the
//! adaptive logistic activation. Both age distributions are mixed by `omega`.

mod model;
mod ops;
mod params;
mod toy;

use serde::{Deserialize, Serialize};

pub use model::{argmax, expected_age, forward, forward_with, sample_dropout_masks, DropoutMasks, Forward, Mode};
pub use ops::{cosine_sim, fc_f, fc_sc, gamma_ranks, phi, psi_for, BASE_EPS, COSINE_EPS, GAMMA_TIE_TOL, PSI_MAX};
pub use params::{age_prior, param_group, ParamStore};
pub use toy::{toy_config, toy_grad_check, toy_problem, TOY_FACIAL};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("label {age} outside [0, {max}]")]
    Label { age: u32, max: u32 },
    #[error("parameter {0} missing")]
    MissingParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Flat node feature length (5 · patch²).
    pub feature_len: usize,
    pub agcl_channels: Vec<usize>,
    pub tmm_layers: usize,
    pub tmm_hidden: usize,
    /// Largest age label Q; distributions have Q + 1 entries.
    pub max_age: u32,
    /// Highest neighbour exponent in the facial weighting (K).
    pub k_max: u32,
    pub alpha: f64,
    pub omega: f64,
    pub dropout: f64,
    pub temporal_aware: bool,
    pub adaptive_f: bool,
    pub adaptive_z: bool,
}

impl NetworkConfig {
    pub fn num_ages(&self) -> usize {
        self.max_age as usize + 1
    }

    pub fn output_channels(&self) -> usize {
        *self.agcl_channels.last().expect("at least one AGCL")
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::Contract(m));
        if self.agcl_channels.is_empty() || self.agcl_channels.contains(&0) {
            return bad("agcl_channels must be non-empty and positive".into());
        }
        if self.alpha <= 1.0 {
            return bad(format!("alpha must exceed 1, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("omega {} outside [0, 1]", self.omega));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.tmm_layers == 0 || self.tmm_hidden == 0 || self.k_max == 0 {
            return bad("tmm_layers, tmm_hidden and k_max must be positive".into());
        }
        Ok(())
    }
}
