//! Mini-batch Adam training, checkpoints and evaluation.
//!
//! Each sample's dropout mask comes from a generator seeded by
//! `(seed, epoch, sample index)` and each epoch's order from `(seed, epoch)`,
//! so a run is a pure function of config, seed and manifest, and resuming
//! from a checkpoint replays exactly the same steps.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_predictions, split, write_atomic, Dataset, Exec, HarnessError, Metrics, Prediction, Prepared,
    TrainConfig,
};
use crate::graph::AdjacencySpec;
use crate::keypoints::{KeypointSample, SkeletonHierarchy};
use crate::network::{forward, sample_dropout_masks, Mode, ParamStore};
use crate::tensor::{read_checkpoint, write_checkpoint, CheckpointEntry, DType, Scalar, Storable, Tape, Tensor};

/// One row of `metrics.jsonl`. Train rows carry the mean training-mode loss
/// of the epoch; val rows the eval-mode loss. MAE is always eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub mae: f64,
    pub loss: f64,
}

/// JSON sidecar of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub prepared: Prepared,
    pub adjacency_hash: String,
    pub manifest_hash: String,
    pub split_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub params: ParamStore<T>,
    pub opt: OptimizerState<T>,
    pub meta: CheckpointMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint<T: Storable>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), HarnessError> {
    let mut entries = ckpt.params.to_entries();
    for (prefix, moments) in [("adam.m", &ckpt.opt.m), ("adam.v", &ckpt.opt.v)] {
        for (name, t) in ckpt.params.names().iter().zip(moments) {
            entries.push(CheckpointEntry::from_tensor(format!("{prefix}.{name}"), t));
        }
    }
    entries.push(CheckpointEntry::from_tensor("adam.step", &Tensor::scalar(ckpt.opt.step as f64)));
    write_atomic(path, &write_checkpoint(&entries))?;
    let meta = serde_json::to_string_pretty(&ckpt.meta).expect("meta serializes");
    write_atomic(&sidecar_path(path), meta.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta, HarnessError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| HarnessError::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", side.display())))
}

pub fn load_checkpoint<T: Storable>(path: &Path) -> Result<Checkpoint<T>, HarnessError> {
    let meta = read_meta(path)?;
    if meta.config.dtype != T::DTYPE {
        return Err(HarnessError::Config(format!(
            "checkpoint holds {:?} parameters, requested {:?}",
            meta.config.dtype,
            T::DTYPE
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let entries = read_checkpoint(&bytes)?;
    let mut params = fresh_params::<T>(&meta.config, &meta.prepared);
    params.load_entries(&entries)?;
    let find = |name: &str| -> Result<&CheckpointEntry, HarnessError> {
        entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| HarnessError::Format(format!("checkpoint lacks {name}")))
    };
    let mut opt = OptimizerState::new(&params);
    for (i, name) in params.names().iter().enumerate() {
        opt.m[i] = find(&format!("adam.m.{name}"))?.to_tensor()?;
        opt.v[i] = find(&format!("adam.v.{name}"))?.to_tensor()?;
    }
    opt.step = find("adam.step")?.to_tensor::<f64>()?.item() as u64;
    Ok(Checkpoint { params, opt, meta })
}

fn fresh_params<T: Scalar>(cfg: &TrainConfig, prepared: &Prepared) -> ParamStore<T> {
    ParamStore::init(
        &cfg.network(),
        &prepared.adjacency.a_f.to_tensor(),
        &prepared.adjacency.a_z.to_tensor(),
        cfg.seed,
    )
}

/// A generator seed from the run seed and a path of counters.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    for p in path {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let digest = super::sha256_hex(&bytes);
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

const ORDER: u64 = 1;
const DROPOUT: u64 = 2;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Where `last.taag`, `best.taag` and `metrics.jsonl` go.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last.taag` when it exists.
    pub resume: bool,
    pub exec: Exec,
    pub hierarchy: SkeletonHierarchy,
    /// Precomputed facial node set; computed from the training split otherwise.
    pub selection: Option<Vec<usize>>,
    pub adjacency: Option<AdjacencySpec>,
    /// Stop once the eval-mode train MAE falls below this.
    pub stop_below_train_mae: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            resume: false,
            exec: Exec::default(),
            hierarchy: SkeletonHierarchy::default(),
            selection: None,
            adjacency: None,
            stop_below_train_mae: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub epochs_run: usize,
    pub train: Metrics,
    pub val: Option<Metrics>,
    pub best_epoch: Option<usize>,
    pub best_mae: Option<f64>,
    pub split_hash: String,
    pub adjacency_hash: String,
    #[serde(skip)]
    pub prepared: Prepared,
}

pub fn train(data: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    match cfg.dtype {
        DType::F32 => train_typed::<f32>(data, cfg, opts),
        DType::F64 => train_typed::<f64>(data, cfg, opts),
    }
}

fn check_labels(cfg: &TrainConfig, samples: &[KeypointSample]) -> Result<(), HarnessError> {
    match samples.iter().find(|s| s.age > cfg.max_age) {
        Some(s) => Err(HarnessError::Config(format!(
            "sample {:?} has age {} above max_age {}",
            s.id, s.age, cfg.max_age
        ))),
        None => Ok(()),
    }
}

fn same_run(a: &TrainConfig, b: &TrainConfig) -> bool {
    let mut a = a.clone();
    a.epochs = b.epochs;
    a == *b
}

fn diverged(epoch: usize, sample: &str, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Diverged {
        epoch,
        sample: sample.to_string(),
        detail: e.to_string(),
    }
}

fn train_typed<T: Storable>(data: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome, HarnessError> {
    let samples = &data.samples;
    check_labels(cfg, samples)?;
    let sp = split(samples, cfg.val_fraction, cfg.seed);
    if sp.train.len() < 2 && opts.selection.is_none() {
        return Err(HarnessError::Config("training needs at least two samples".into()));
    }
    let train_set: Vec<&KeypointSample> = sp.train.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&KeypointSample> = sp.val.iter().map(|&i| &samples[i]).collect();
    let last_path = opts.out_dir.as_ref().map(|d| d.join("last.taag"));
    let best_path = opts.out_dir.as_ref().map(|d| d.join("best.taag"));
    let log_path = opts.out_dir.as_ref().map(|d| d.join("metrics.jsonl"));

    let resumed = match &last_path {
        Some(p) if opts.resume && p.exists() => Some(load_checkpoint::<T>(p)?),
        _ => None,
    };
    let (prepared, mut params, mut opt, start, mut best, mut log) = match resumed {
        Some(ck) => {
            if !same_run(&ck.meta.config, cfg) || ck.meta.manifest_hash != data.hash {
                return Err(HarnessError::Config(
                    "resume target was trained with a different config or manifest".into(),
                ));
            }
            let log = match &log_path {
                Some(p) if p.exists() => read_log(p)?.into_iter().filter(|r| r.epoch <= ck.meta.epoch).collect(),
                _ => Vec::new(),
            };
            let best = ck.meta.best_epoch.zip(ck.meta.best_mae);
            info!("resuming after epoch {}", ck.meta.epoch);
            (ck.meta.prepared, ck.params, ck.opt, ck.meta.epoch, best, log)
        }
        None => {
            let prepared = match &opts.adjacency {
                Some(adj) => Prepared {
                    selection: match &opts.selection {
                        Some(r) => r.clone(),
                        None => Prepared::select(cfg, &train_set)?,
                    },
                    hierarchy: opts.hierarchy.clone(),
                    adjacency: adj.clone(),
                },
                None => Prepared::fit(cfg, &train_set, opts.hierarchy.clone(), opts.selection.clone())?,
            };
            let params = fresh_params::<T>(cfg, &prepared);
            let opt = OptimizerState::new(&params);
            (prepared, params, opt, 0, None, Vec::new())
        }
    };
    let net = cfg.network();
    let adjacency_hash = prepared.adjacency.hash();
    let meta = |epoch: usize, best: Option<(usize, f64)>| CheckpointMeta {
        config: cfg.clone(),
        prepared: prepared.clone(),
        adjacency_hash: adjacency_hash.clone(),
        manifest_hash: data.hash.clone(),
        split_hash: sp.hash.clone(),
        epoch,
        best_epoch: best.map(|b| b.0),
        best_mae: best.map(|b| b.1),
    };

    let mut last_metrics = None;
    let mut epochs_run = start;
    for epoch in start..cfg.epochs {
        let mut order = sp.train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[ORDER, epoch as u64])));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = opts.exec.map(batch, |_, &idx| {
                let s = &samples[idx];
                let graph = prepared.graph::<T>(cfg, s)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[DROPOUT, epoch as u64, idx as u64]));
                let masks = sample_dropout_masks(&net, graph.num_nodes(), &mut rng);
                let mut tape = Tape::new();
                let f = forward(&mut tape, &params, &graph, &net, Mode::Train, Some(&masks))
                    .map_err(|e| diverged(epoch, &s.id, e))?;
                let loss = tape.value(f.loss).item().to_f64().unwrap_or(f64::NAN);
                let grads = tape.backward(f.loss).map_err(|e| diverged(epoch, &s.id, e))?;
                let mut g: Vec<Tensor<T>> = f.params.iter().map(|&p| grads.wrt(p)).collect();
                if !loss.is_finite() || !g.iter().all(Tensor::all_finite) {
                    return Err(diverged(epoch, &s.id, "non-finite loss or gradient"));
                }
                if let Some(clip) = cfg.grad_clip {
                    clip_norm(&mut g, clip, || format!("epoch {}, sample {}", epoch + 1, s.id));
                }
                Ok::<_, HarnessError>((loss, g))
            });
            let mut acc: Option<Vec<Tensor<T>>> = None;
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                match &mut acc {
                    None => acc = Some(g),
                    Some(a) => {
                        for (dst, src) in a.iter_mut().zip(&g) {
                            dst.data_mut().iter_mut().zip(src.data()).for_each(|(d, s)| *d = *d + *s);
                        }
                    }
                }
            }
            let scale = T::one() / T::from_usize(batch.len()).expect("batch size");
            let mut grads = acc.expect("non-empty batch");
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v = *v * scale));
            adam_step(&mut params, &grads, &mut opt, cfg);
        }
        if !params.tensors().iter().all(Tensor::all_finite) {
            return Err(diverged(epoch, "-", "parameters became non-finite"));
        }

        let train_eval = predict_with_loss(&params, cfg, &prepared, &train_set, opts.exec)?;
        let train_m = evaluate_predictions(&train_eval.0, &cfg.age_groups, cfg.max_age as usize + 1)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            split: "train".into(),
            mae: train_m.mae,
            loss: loss_sum / sp.train.len() as f64,
        });
        let val_m = if val_set.is_empty() {
            None
        } else {
            let (preds, loss) = predict_with_loss(&params, cfg, &prepared, &val_set, opts.exec)?;
            let m = evaluate_predictions(&preds, &cfg.age_groups, cfg.max_age as usize + 1)?;
            log.push(EpochLog {
                epoch: epoch + 1,
                split: "val".into(),
                mae: m.mae,
                loss,
            });
            Some(m)
        };
        let score = val_m.as_ref().unwrap_or(&train_m).mae;
        let improved = best.is_none_or(|(_, b)| score < b);
        if improved {
            best = Some((epoch + 1, score));
        }
        epochs_run = epoch + 1;
        if let (Some(last), Some(best_p), Some(log_p)) = (&last_path, &best_path, &log_path) {
            let ck = Checkpoint {
                params: params.clone(),
                opt: opt.clone(),
                meta: meta(epoch + 1, best),
            };
            if improved {
                save_checkpoint(best_p, &ck)?;
            }
            save_checkpoint(last, &ck)?;
            write_log(log_p, &log)?;
        }
        info!(
            "epoch {}: train mae {:.4}{}",
            epoch + 1,
            train_m.mae,
            val_m.as_ref().map(|m| format!(", val mae {:.4}", m.mae)).unwrap_or_default()
        );
        let stop = opts.stop_below_train_mae.is_some_and(|t| train_m.mae < t);
        last_metrics = Some((train_m, val_m));
        if stop {
            break;
        }
    }

    let (train_m, val_m) = match last_metrics {
        Some(m) => m,
        None => {
            let (tp, _) = predict_with_loss(&params, cfg, &prepared, &train_set, opts.exec)?;
            let tm = evaluate_predictions(&tp, &cfg.age_groups, cfg.max_age as usize + 1)?;
            let vm = if val_set.is_empty() {
                None
            } else {
                let (vp, _) = predict_with_loss(&params, cfg, &prepared, &val_set, opts.exec)?;
                Some(evaluate_predictions(&vp, &cfg.age_groups, cfg.max_age as usize + 1)?)
            };
            (tm, vm)
        }
    };
    Ok(TrainOutcome {
        log,
        epochs_run,
        train: train_m,
        val: val_m,
        best_epoch: best.map(|b| b.0),
        best_mae: best.map(|b| b.1),
        split_hash: sp.hash,
        adjacency_hash,
        prepared,
    })
}

/// Rescales `grads` to global L2 norm `clip` when they exceed it.
fn clip_norm<T: Scalar>(grads: &mut [Tensor<T>], clip: f64, what: impl FnOnce() -> String) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        debug!("{}: clipping gradient norm {norm:.3e}", what());
        let k = T::from_f64_lossy(clip / norm);
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v = *v * k));
    }
}

/// Adam with L2 weight decay folded into the gradient.
fn adam_step<T: Scalar>(params: &mut ParamStore<T>, grads: &[Tensor<T>], opt: &mut OptimizerState<T>, cfg: &TrainConfig) {
    opt.step += 1;
    let t = opt.step as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2) = (c(cfg.adam_beta1), c(cfg.adam_beta2));
    let bc1 = c(1.0 - cfg.adam_beta1.powi(t));
    let bc2 = c(1.0 - cfg.adam_beta2.powi(t));
    let (lr, wd, eps) = (c(cfg.learning_rate), c(cfg.weight_decay), c(cfg.adam_eps));
    for (i, theta) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (opt.m[i].data_mut(), opt.v[i].data_mut());
        for (k, (w, g)) in theta.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            let g = *g + wd * *w;
            m[k] = b1 * m[k] + (T::one() - b1) * g;
            v[k] = b2 * v[k] + (T::one() - b2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn predict_with_loss<T: Scalar>(
    params: &ParamStore<T>,
    cfg: &TrainConfig,
    prepared: &Prepared,
    samples: &[&KeypointSample],
    exec: Exec,
) -> Result<(Vec<Prediction>, f64), HarnessError> {
    let net = cfg.network();
    let out = exec.map(samples, |_, s| {
        let graph = prepared.graph::<T>(cfg, s)?;
        let mut tape = Tape::new();
        let f = forward(&mut tape, params, &graph, &net, Mode::Eval, None)?;
        let probs: Vec<f64> = tape.value(f.p_tot).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let loss = tape.value(f.loss).item().to_f64().unwrap_or(f64::NAN);
        Ok::<_, HarnessError>((
            Prediction {
                id: s.id.clone(),
                label: s.age,
                probs,
            },
            loss,
        ))
    });
    let mut preds = Vec::with_capacity(out.len());
    let mut total = 0.0;
    for r in out {
        let (p, l) = r?;
        total += l;
        preds.push(p);
    }
    let n = preds.len().max(1) as f64;
    Ok((preds, total / n))
}

/// Eval-mode predictions (ψ = 1, no dropout).
pub fn predict<T: Scalar>(
    params: &ParamStore<T>,
    cfg: &TrainConfig,
    prepared: &Prepared,
    samples: &[&KeypointSample],
    exec: Exec,
) -> Result<Vec<Prediction>, HarnessError> {
    Ok(predict_with_loss(params, cfg, prepared, samples, exec)?.0)
}

/// Metrics of a saved checkpoint on every sample of `data`.
pub fn evaluate(checkpoint: &Path, data: &Dataset, exec: Exec) -> Result<Metrics, HarnessError> {
    let meta = read_meta(checkpoint)?;
    let cfg = &meta.config;
    check_labels(cfg, &data.samples)?;
    let samples: Vec<&KeypointSample> = data.samples.iter().collect();
    let preds = match cfg.dtype {
        DType::F32 => predict(&load_checkpoint::<f32>(checkpoint)?.params, cfg, &meta.prepared, &samples, exec)?,
        DType::F64 => predict(&load_checkpoint::<f64>(checkpoint)?.params, cfg, &meta.prepared, &samples, exec)?,
    };
    evaluate_predictions(&preds, &cfg.age_groups, cfg.max_age as usize + 1)
}

fn write_log(path: &Path, rows: &[EpochLog]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::Format(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}
