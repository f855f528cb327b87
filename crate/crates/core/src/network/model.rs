use rand::Rng;

use super::{gamma_ranks, psi_for, NetworkConfig, NetworkError, ParamStore, BASE_EPS, COSINE_EPS, PSI_MAX};
use crate::graph::FscGraph;
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// ψ_t = 1/|t − q_g| inside the TMM activation.
    Train,
    /// ψ_t = 1.
    Eval,
}

/// Keep masks applied after each AGCL except the last, already scaled by 1/(1 − p).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T: Scalar>(pub Vec<Tensor<T>>);

pub fn sample_dropout_masks<T: Scalar, R: Rng>(cfg: &NetworkConfig, num_nodes: usize, rng: &mut R) -> DropoutMasks<T> {
    let keep = 1.0 - cfg.dropout;
    let scale = T::from_f64_lossy(1.0 / keep);
    let layers = cfg.agcl_channels.len().saturating_sub(1);
    DropoutMasks(
        cfg.agcl_channels[..layers]
            .iter()
            .map(|&c| {
                Tensor::from_fn(vec![num_nodes, c], |_| {
                    if cfg.dropout == 0.0 || rng.gen::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
            })
            .collect(),
    )
}

/// Handles into the tape for one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// One leaf per parameter, in [`ParamStore`] order.
    pub params: Vec<Var>,
    /// Output of every AGCL (J × C_i), before dropout.
    pub layers: Vec<Var>,
    /// Final node embedding, J × C.
    pub l0: Var,
    pub p_spt: Var,
    /// `None` when the model is not temporally aware.
    pub p_temp: Option<Var>,
    pub p_tot: Var,
    /// Expected ages under each head, shape [1, 1].
    pub q_spt: Var,
    pub q_temp: Option<Var>,
    pub loss: Var,
}

struct Ctx<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    vars: &'a [Var],
}

impl<T: Scalar> Ctx<'_, T> {
    fn p(&self, name: &str) -> Result<Var, NetworkError> {
        Ok(self.vars[self.store.idx(name)?])
    }
}

pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    graph: &FscGraph<T>,
    cfg: &NetworkConfig,
    mode: Mode,
    dropout: Option<&DropoutMasks<T>>,
) -> Result<Forward, NetworkError> {
    let params: Vec<Var> = store.tensors().iter().map(|t| tape.param(t.clone())).collect();
    forward_with(tape, store, params, graph, cfg, mode, dropout)
}

/// Like [`forward`], with parameter leaves already on the tape (one per
/// store entry, in store order). `store` supplies only the name lookup.
pub fn forward_with<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: Vec<Var>,
    graph: &FscGraph<T>,
    cfg: &NetworkConfig,
    mode: Mode,
    dropout: Option<&DropoutMasks<T>>,
) -> Result<Forward, NetworkError> {
    if params.len() != store.len() {
        return Err(NetworkError::Contract(format!(
            "{} parameter handles for {} parameters",
            params.len(),
            store.len()
        )));
    }
    if graph.age > cfg.max_age {
        return Err(NetworkError::Label {
            age: graph.age,
            max: cfg.max_age,
        });
    }
    let ctx = Ctx { store, vars: &params };

    let mut x = tape.constant(graph.features.clone());
    let mut layers = Vec::with_capacity(cfg.agcl_channels.len());
    for i in 0..cfg.agcl_channels.len() {
        let out = agcl(tape, &ctx, i, x, graph, cfg)?;
        layers.push(out);
        x = match dropout.and_then(|m| m.0.get(i)) {
            Some(mask) => tape.apply_mask(out, mask.clone())?,
            None => out,
        };
    }
    let l0 = *layers.last().expect("validated config has layers");

    let q1 = cfg.num_ages();
    let ages = tape.constant(Tensor::from_fn(vec![q1, 1], |t| T::from_usize(t).unwrap()));
    let q_g = T::from_u32(graph.age).unwrap();

    let pooled = tape.mean_axis(l0, 0)?;
    let c = tape.value(pooled).numel();
    let pooled = tape.reshape(pooled, vec![1, c])?;
    let logits = tape.matmul(pooled, ctx.p("head.spt.weight")?)?;
    let logits = tape.add_row(logits, ctx.p("head.spt.bias")?)?;
    let p_spt = tape.softmax(logits, 1)?;
    let q_spt = tape.matmul(p_spt, ages)?;
    let d_spt = tape.add_const(q_spt, -q_g)?;
    let sq_spt = tape.mul(d_spt, d_spt)?;

    let (p_temp, q_temp, p_tot, loss) = if cfg.temporal_aware {
        let p_temp = temporal_head(tape, &ctx, l0, graph.age, cfg, mode)?;
        let q_temp = tape.matmul(p_temp, ages)?;
        let d_temp = tape.add_const(q_temp, -q_g)?;
        let sq_temp = tape.mul(d_temp, d_temp)?;
        let omega = T::from_f64_lossy(cfg.omega);
        let rest = T::one() - omega;
        let a = tape.scale(p_spt, omega)?;
        let b = tape.scale(p_temp, rest)?;
        let p_tot = tape.add(a, b)?;
        let a = tape.scale(sq_spt, omega)?;
        let b = tape.scale(sq_temp, rest)?;
        let loss = tape.add(a, b)?;
        (Some(p_temp), Some(q_temp), p_tot, loss)
    } else {
        (None, None, p_spt, sq_spt)
    };
    let loss = tape.reshape(loss, Vec::<usize>::new())?;

    Ok(Forward {
        params,
        layers,
        l0,
        p_spt,
        p_temp,
        p_tot,
        q_spt,
        q_temp,
        loss,
    })
}

/// Pairwise cosine similarity of the rows of `x`, with norms smoothed by
/// [`COSINE_EPS`].
fn cosine_matrix<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var, NetworkError> {
    let n = tape.normalize_rows(x, T::from_f64_lossy(COSINE_EPS))?;
    Ok(tape.matmul_nt(n, n)?)
}

fn agcl<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &Ctx<'_, T>,
    i: usize,
    x: Var,
    graph: &FscGraph<T>,
    cfg: &NetworkConfig,
) -> Result<Var, NetworkError> {
    let n_f = graph.n_facial;
    let n_z = graph.n_sc();
    let theta = ctx.p(&format!("agcl.{i}.theta"))?;
    let c_in = tape.value(x).shape()[1];
    let c_theta = tape.value(theta).shape()[0];
    if c_in != c_theta {
        return Err(NetworkError::Contract(format!(
            "agcl.{i}: input has {c_in} channels, theta expects {c_theta}"
        )));
    }
    let x_f = tape.slice(x, 0, 0, n_f)?;
    let x_z = tape.slice(x, 0, n_f, n_z)?;

    let a_f = if cfg.adaptive_f {
        let c_s = cosine_matrix(tape, x_f)?;
        let gamma = gamma_tensor(tape.value(c_s), &graph.edges_f, cfg.k_max);
        let u = tape.mul(c_s, ctx.p(&format!("agcl.{i}.edge_f"))?)?;
        let u = tape.clamp_min(u, T::from_f64_lossy(BASE_EPS))?;
        let u = tape.pow(u, gamma)?;
        let u = tape.add_const(u, T::one())?;
        let u = tape.recip(u)?;
        let u = tape.mul_scalar(u, ctx.p(&format!("agcl.{i}.w_f"))?)?;
        tape.apply_mask(u, graph.edges_f.clone())?
    } else {
        tape.constant(graph.edges_f.clone())
    };
    let a_z = if cfg.adaptive_z {
        let c_s = cosine_matrix(tape, x_z)?;
        let u = tape.mul(c_s, ctx.p(&format!("agcl.{i}.edge_z"))?)?;
        let u = tape.mul_scalar(u, ctx.p(&format!("agcl.{i}.w_z"))?)?;
        tape.apply_mask(u, graph.edges_z.clone())?
    } else {
        tape.constant(graph.edges_z.clone())
    };

    // A·(XΘ) equals (A·X)·Θ and is cheaper when C_out < C_in.
    let xt = tape.matmul(x, theta)?;
    let c_out = tape.value(xt).shape()[1];
    let xt_f = tape.slice(xt, 0, 0, n_f)?;
    let xt_z = tape.slice(xt, 0, n_f, n_z)?;
    let out_f = tape.matmul(a_f, xt_f)?;
    let out_z = tape.matmul(a_z, xt_z)?;
    let out = tape.concat(&[out_f, out_z], 0)?;
    debug_assert_eq!(tape.value(out).shape(), &[n_f + n_z, c_out]);
    Ok(tape.relu(out)?)
}

/// Per-entry `-γ` exponents; entries off the support get −1 (masked later).
fn gamma_tensor<T: Scalar>(c_s: &Tensor<T>, support: &Tensor<T>, k_max: u32) -> Tensor<T> {
    let n = support.shape()[0];
    let mut out = vec![-T::one(); n * n];
    for m in 0..n {
        let row: Vec<f64> = (0..n).map(|k| c_s.at2(m, k).to_f64().unwrap()).collect();
        let sup: Vec<bool> = (0..n).map(|k| support.at2(m, k) != T::zero()).collect();
        for (k, g) in gamma_ranks(&row, &sup, k_max) {
            out[m * n + k] = -T::from_u32(g).unwrap();
        }
    }
    Tensor::new(vec![n, n], out).expect("square")
}

fn temporal_head<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &Ctx<'_, T>,
    l0: Var,
    age: u32,
    cfg: &NetworkConfig,
    mode: Mode,
) -> Result<Var, NetworkError> {
    let q1 = cfg.num_ages();
    let z = tape.matmul(l0, ctx.p("head.pre_tmm.weight")?)?;
    let z = tape.add_row(z, ctx.p("head.pre_tmm.bias")?)?;
    let mut seq = tape.transpose(z)?;

    let w_age = ctx.p("tmm.w_age")?;
    let alpha = T::from_f64_lossy(cfg.alpha);
    for l in 0..cfg.tmm_layers {
        let xa = tape.matmul(seq, ctx.p(&format!("tmm.{l}.input"))?)?;
        let rec = ctx.p(&format!("tmm.{l}.recurrent"))?;
        let bias = ctx.p(&format!("tmm.{l}.bias"))?;
        let mut rows = Vec::with_capacity(q1);
        let mut h: Option<Var> = None;
        for t in 0..q1 {
            let mut pre = tape.slice(xa, 0, t, 1)?;
            if let Some(h_prev) = h {
                let r = tape.matmul(h_prev, rec)?;
                pre = tape.add(pre, r)?;
            }
            pre = tape.add_row(pre, bias)?;
            let psi = match mode {
                Mode::Train => psi_for(t as u32, age),
                Mode::Eval => 1.0,
            };
            debug_assert!(psi <= PSI_MAX);
            let e = tape.scale(pre, T::from_f64_lossy(-psi))?;
            let e = tape.exp(e)?;
            let e = tape.scale(e, alpha)?;
            let e = tape.add_const(e, T::one())?;
            let e = tape.recip(e)?;
            let w_t = tape.slice(w_age, 0, t, 1)?;
            let h_t = tape.mul_scalar(e, w_t)?;
            rows.push(h_t);
            h = Some(h_t);
        }
        seq = tape.concat(&rows, 0)?;
    }

    let out = tape.matmul(seq, ctx.p("tmm.out.weight")?)?;
    let out = tape.add_row(out, ctx.p("tmm.out.bias")?)?;
    let pooled = tape.mean_axis(out, 1)?;
    let pooled = tape.reshape(pooled, vec![1, q1])?;
    let logits = tape.matmul(pooled, ctx.p("head.temp.weight")?)?;
    let logits = tape.add_row(logits, ctx.p("head.temp.bias")?)?;
    Ok(tape.softmax(logits, 1)?)
}

/// `Σ_t t · p_t`.
pub fn expected_age<T: Scalar>(p: &[T]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(t, v)| t as f64 * v.to_f64().unwrap())
        .sum()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> NetworkConfig {
        NetworkConfig {
            feature_len: 6,
            agcl_channels: vec![4, 5],
            tmm_layers: 2,
            tmm_hidden: 3,
            max_age: 4,
            k_max: 3,
            alpha: 2.0,
            omega: 0.65,
            dropout: 0.0,
            temporal_aware: true,
            adaptive_f: true,
            adaptive_z: true,
        }
    }

    fn ring(n: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![n, n], |i| {
            let (a, b) = (i / n, i % n);
            if (a + 1) % n == b || (b + 1) % n == a {
                1.0
            } else {
                0.0
            }
        })
    }

    fn toy_graph(seed: u64, zero: bool) -> FscGraph<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FscGraph {
            features: Tensor::from_fn(vec![7, 6], |_| if zero { 0.0 } else { rng.gen_range(-1.0..1.0) }),
            n_facial: 4,
            edges_f: ring(4),
            edges_z: ring(3),
            age: 2,
        }
    }

    fn store(cfg: &NetworkConfig) -> ParamStore<f64> {
        ParamStore::init(cfg, &ring(4), &ring(3), 11)
    }

    #[test]
    fn zero_graph_gives_zero_embedding_and_prior_spatial() {
        let cfg = toy_cfg();
        let mut tape = Tape::new();
        let f = forward(&mut tape, &store(&cfg), &toy_graph(0, true), &cfg, Mode::Eval, None).unwrap();
        assert!(tape.value(f.l0).data().iter().all(|v| *v == 0.0));
        let prior: Vec<f64> = (0..5).map(|k| (-((k as f64 - 2.0).powi(2)) / 2.0).exp()).collect();
        let z: f64 = prior.iter().sum();
        for (p, w) in tape.value(f.p_spt).data().iter().zip(&prior) {
            assert_relative_eq!(*p, w / z, epsilon = 1e-15);
        }
    }

    #[test]
    fn distributions_normalized() {
        let cfg = toy_cfg();
        let mut tape = Tape::new();
        let f = forward(&mut tape, &store(&cfg), &toy_graph(1, false), &cfg, Mode::Train, None).unwrap();
        for v in [f.p_spt, f.p_temp.unwrap(), f.p_tot] {
            let p = tape.value(v).data();
            assert_eq!(p.len(), 5);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|x| *x > 0.0));
        }
        assert!(tape.value(f.loss).item() >= 0.0);
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = toy_cfg();
        let s = store(&cfg);
        let g = toy_graph(2, false);
        let run = || {
            let mut tape = Tape::new();
            let f = forward(&mut tape, &s, &g, &cfg, Mode::Eval, None).unwrap();
            tape.value(f.p_tot).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn blocks_do_not_mix() {
        let cfg = toy_cfg();
        let s = store(&cfg);
        let g = toy_graph(3, false);
        let mut g2 = g.clone();
        for v in &mut g2.features.data_mut()[4 * 6..] {
            *v = 0.0;
        }
        let facial = |g: &FscGraph<f64>| {
            let mut tape = Tape::new();
            let f = forward(&mut tape, &s, g, &cfg, Mode::Eval, None).unwrap();
            f.layers
                .iter()
                .map(|l| tape.value(*l).data()[..4 * tape.value(*l).shape()[1]].to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(facial(&g), facial(&g2));
    }

    #[test]
    fn label_out_of_range() {
        let cfg = toy_cfg();
        let mut g = toy_graph(0, false);
        g.age = 5;
        let mut tape = Tape::new();
        assert!(matches!(
            forward(&mut tape, &store(&cfg), &g, &cfg, Mode::Train, None),
            Err(NetworkError::Label { age: 5, max: 4 })
        ));
    }

    #[test]
    fn spatial_only_model() {
        let mut cfg = toy_cfg();
        cfg.temporal_aware = false;
        let mut tape = Tape::new();
        let f = forward(&mut tape, &store(&cfg), &toy_graph(4, false), &cfg, Mode::Train, None).unwrap();
        assert!(f.p_temp.is_none());
        assert_eq!(tape.value(f.p_tot), tape.value(f.p_spt));
        let q = expected_age(tape.value(f.p_spt).data());
        assert_relative_eq!(tape.value(f.loss).item(), (q - 2.0).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn dropout_masks_scale_kept_units() {
        let mut cfg = toy_cfg();
        cfg.dropout = 0.5;
        let m: DropoutMasks<f64> = sample_dropout_masks(&cfg, 7, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.0.len(), 1);
        assert!(m.0[0].data().iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn argmax_and_expectation() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_relative_eq!(expected_age(&[0.25, 0.25, 0.5]), 1.25);
    }
}
