use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetworkConfig, NetworkError};
use crate::tensor::{CheckpointEntry, Scalar, Storable, Tensor};

/// Named model tensors in a fixed, canonical order.
///
/// Names: `agcl.{i}.{theta,w_f,w_z,edge_f,edge_z}`,
/// `tmm.{l}.{input,recurrent,bias}`, `tmm.out.{weight,bias}`, `tmm.w_age`,
/// `head.{spt,pre_tmm,temp}.{weight,bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn from_named(named: Vec<(String, Tensor<T>)>) -> Self {
        let (names, tensors): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names,
            tensors,
            index,
        }
    }

    /// Fresh parameters: projections uniform in ±1/√fan_in, biases zero
    /// except the two age heads (see [`age_prior`]),
    /// scalar edge weights and `w_age` one, per-edge weights one on the
    /// adjacency support and zero elsewhere. An AGCL output sums `c_in`
    /// channels over every neighbour, so its fan-in is `c_in` times the mean
    /// degree.
    pub fn init(cfg: &NetworkConfig, support_f: &Tensor<T>, support_z: &Tensor<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = support_f.shape()[0] + support_z.shape()[0];
        let edges = support_f.data().iter().chain(support_z.data()).filter(|v| **v != T::zero()).count();
        let degree = (edges as f64 / j.max(1) as f64).max(1.0);
        let mut uniform = |rows: usize, cols: usize, fan_in: f64| -> Tensor<T> {
            let bound = 1.0 / fan_in.sqrt();
            Tensor::from_fn(vec![rows, cols], |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        };
        let q = cfg.num_ages();
        let c = cfg.output_channels();
        let mut named: Vec<(String, Tensor<T>)> = Vec::new();

        let mut c_in = cfg.feature_len;
        for (i, &c_out) in cfg.agcl_channels.iter().enumerate() {
            named.push((format!("agcl.{i}.theta"), uniform(c_in, c_out, c_in as f64 * degree)));
            named.push((format!("agcl.{i}.w_f"), Tensor::scalar(T::one())));
            named.push((format!("agcl.{i}.w_z"), Tensor::scalar(T::one())));
            named.push((format!("agcl.{i}.edge_f"), support_f.clone()));
            named.push((format!("agcl.{i}.edge_z"), support_z.clone()));
            c_in = c_out;
        }

        let h = cfg.tmm_hidden;
        let mut d_in = j;
        for l in 0..cfg.tmm_layers {
            named.push((format!("tmm.{l}.input"), uniform(d_in, h, d_in as f64)));
            named.push((format!("tmm.{l}.recurrent"), uniform(h, h, h as f64)));
            named.push((format!("tmm.{l}.bias"), Tensor::zeros(vec![h])));
            d_in = h;
        }
        named.push(("tmm.out.weight".into(), uniform(h, j, h as f64)));
        named.push(("tmm.out.bias".into(), Tensor::zeros(vec![j])));
        named.push(("tmm.w_age".into(), Tensor::full(vec![q], T::one())));

        named.push(("head.spt.weight".into(), uniform(c, q, c as f64)));
        named.push(("head.spt.bias".into(), age_prior(q)));
        named.push(("head.pre_tmm.weight".into(), uniform(c, q, c as f64)));
        named.push(("head.pre_tmm.bias".into(), Tensor::zeros(vec![q])));
        named.push(("head.temp.weight".into(), uniform(q, q, q as f64)));
        named.push(("head.temp.bias".into(), age_prior(q)));
        Self::from_named(named)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn idx(&self, name: &str) -> Result<usize, NetworkError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::MissingParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore::from_named(
            self.named()
                .map(|(n, t)| (n.to_string(), t.cast()))
                .collect(),
        )
    }

}

impl<T: Storable> ParamStore<T> {
    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        self.named()
            .map(|(n, t)| CheckpointEntry::from_tensor(n, t))
            .collect()
    }

    /// Replaces every tensor with the checkpoint entry of the same name and shape.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<(), NetworkError> {
        let by_name: HashMap<&str, &CheckpointEntry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
        for (i, name) in self.names.iter().enumerate() {
            let entry = by_name
                .get(name.as_str())
                .ok_or_else(|| NetworkError::MissingParam(name.clone()))?;
            let t: Tensor<T> = entry.to_tensor()?;
            if t.shape() != self.tensors[i].shape() {
                return Err(NetworkError::Contract(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

/// Parameter group used when reporting gradient checks:
/// `agcl.3.theta` → `theta.3`, `agcl.0.edge_f` → `edge_f`, `tmm.1.input` → `tmm_maps`.
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["agcl", i, "theta"] => format!("theta.{i}"),
        ["agcl", _, kind] => (*kind).to_string(),
        ["tmm", "w_age"] => "w_age".into(),
        ["tmm", ..] => "tmm_maps".into(),
        ["head", ..] => "head_maps".into(),
        _ => name.to_string(),
    }
}

/// Log of a discretised Gaussian over `0..q` centred on the middle age with
/// σ = q/8 (at least 1). A linear tilt of these logits shifts the peak, so
/// the head stays unimodal and its argmax tracks its expectation.
pub fn age_prior<T: Scalar>(q: usize) -> Tensor<T> {
    let mid = (q as f64 - 1.0) / 2.0;
    let sigma = (q as f64 / 8.0).max(1.0);
    Tensor::from_fn(vec![q], |k| T::from_f64_lossy(0.0 - (k as f64 - mid).powi(2) / (2.0 * sigma * sigma)))
}

