//! Small end-to-end model for gradient verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward_with, sample_dropout_masks, DropoutMasks, Mode, NetworkConfig, NetworkError, ParamStore};
use crate::graph::{build_adjacency, FscGraph};
use crate::keypoints::NUM_SC;
use crate::tensor::{grad_check_objective, GradCheckOptions, GradReport, Objective, Scalar, Tape, Tensor, TensorError, Var};

pub const TOY_FACIAL: usize = 19;

/// Patch 2 (20 features), channels (4, 4, 6, 6, 8, 8), TMM 5 × 4, Q = 10.
pub fn toy_config() -> NetworkConfig {
    NetworkConfig {
        feature_len: 20,
        agcl_channels: vec![4, 4, 6, 6, 8, 8],
        tmm_layers: 5,
        tmm_hidden: 4,
        max_age: 10,
        k_max: 5,
        alpha: 2.0,
        omega: 0.65,
        dropout: 0.1,
        temporal_aware: true,
        adaptive_f: true,
        adaptive_z: true,
    }
}

/// A 39-node graph with random features in [0, 1), adjacency built from a
/// random series, and parameters moved off their symmetric initial values.
pub fn toy_problem(cfg: &NetworkConfig, seed: u64) -> Result<(FscGraph<f64>, ParamStore<f64>), NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = TOY_FACIAL + NUM_SC;
    let series: Vec<Vec<f64>> = (0..12).map(|_| (0..j).map(|_| rng.gen()).collect()).collect();
    let adj = build_adjacency(&series, TOY_FACIAL, 5).map_err(|e| NetworkError::Contract(e.to_string()))?;
    let graph = FscGraph {
        features: Tensor::from_fn(vec![j, cfg.feature_len], |_| rng.gen()),
        n_facial: TOY_FACIAL,
        edges_f: adj.a_f.to_tensor(),
        edges_z: adj.a_z.to_tensor(),
        age: rng.gen_range(0..=cfg.max_age),
    };
    let base = ParamStore::init(cfg, &graph.edges_f, &graph.edges_z, seed ^ 0x5eed);
    let named = base
        .named()
        .map(|(name, t)| {
            let mut t = t.clone();
            let leaf = name.rsplit('.').next().unwrap_or_default();
            for v in t.data_mut() {
                match leaf {
                    "edge_f" | "edge_z" if *v != 0.0 => *v = rng.gen_range(0.5..1.5),
                    "w_f" | "w_z" | "w_age" => *v = rng.gen_range(0.5..1.5),
                    "bias" => *v = rng.gen_range(-0.1..0.1),
                    _ => {}
                }
            }
            (name.to_string(), t)
        })
        .collect();
    Ok((graph, ParamStore::from_named(named)))
}

struct ToyLoss<'a> {
    cfg: &'a NetworkConfig,
    graph: &'a FscGraph<f64>,
    store: &'a ParamStore<f64>,
    masks: &'a DropoutMasks<f64>,
}

impl Objective for ToyLoss<'_> {
    fn eval<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var, TensorError> {
        let masks = DropoutMasks(self.masks.0.iter().map(Tensor::cast).collect());
        forward_with(
            tape,
            &self.store.cast::<T>(),
            params.to_vec(),
            &self.graph.cast(),
            self.cfg,
            Mode::Train,
            Some(&masks),
        )
        .map(|f| f.loss)
        .map_err(|e| match e {
            NetworkError::Tensor(t) => t,
            other => TensorError::Contract(other.to_string()),
        })
    }
}

/// Finite-difference check of the training loss with respect to every
/// parameter, dropout mask sampled once and held fixed.
pub fn toy_grad_check(seed: u64, opts: &GradCheckOptions) -> Result<GradReport, NetworkError> {
    let cfg = toy_config();
    let (graph, store) = toy_problem(&cfg, seed)?;
    let masks = sample_dropout_masks(&cfg, graph.num_nodes(), &mut ChaCha8Rng::seed_from_u64(seed));
    let params: Vec<(String, Tensor<f64>)> = store.named().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let loss = ToyLoss {
        cfg: &cfg,
        graph: &graph,
        store: &store,
        masks: &masks,
    };
    Ok(grad_check_objective(&loss, &params, opts)?)
}
