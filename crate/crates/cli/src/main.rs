use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use taagcn::graph::AdjacencySpec;
use taagcn::harness::{
    ablation_csv, default_ablation_flags, evaluate, hash_file, jitter_drift, load_manifest, read_meta, run_ablation,
    sha256_hex, split, synth_generate, train, write_atomic, write_manifest, Dataset, EvalSplit, Exec, HarnessError,
    JitterDriftSpec, Modality, Prepared, SynthSpec, TrainConfig, TrainOptions, Variant, VariantFlags,
};
use taagcn::keypoints::{generate_sc, KeypointSample, SkeletonHierarchy, NUM_SC};
use taagcn::network::toy_grad_check;
use taagcn::tensor::{DType, GradCheckOptions, Reference, Stencil};

#[derive(Parser)]
#[command(name = "taagcn", version, about = "Keypoint-graph age estimation: data prep, training, evaluation")]
struct Cli {
    /// Run every per-sample loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic manifest and its patch sidecar.
    Synth(SynthArgs),
    /// Rank facial keypoints on the training split and keep the top n_prime.
    SelectKeypoints(StageArgs),
    /// Generate the 20 skeletal-cosmetic keypoints of every sample (JSON lines).
    GenSc(GenScArgs),
    /// Build the initial facial and SC adjacency from the training split.
    BuildAdjacency(AdjacencyArgs),
    Train(TrainArgs),
    /// Evaluate a checkpoint; metrics JSON goes to stdout.
    Eval(EvalArgs),
    /// Train every variant on one split and write the comparison CSV.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients of the loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Faces and bodies whose geometry, skin and clothing change with age.
    Aging,
    /// Drift cluster plus jittered grid, for checking keypoint selection.
    JitterDrift,
    /// Identical geometry and pixels for every age.
    NoSignal,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "aging")]
    kind: SynthKind,
    #[arg(long = "num_samples", alias = "num-samples", default_value_t = 200)]
    num_samples: usize,
    #[arg(long = "max_age", alias = "max-age", default_value_t = 10)]
    max_age: u32,
    #[arg(long = "patch_size", alias = "patch-size")]
    patch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest path; the sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

/// TrainConfig fields settable from the command line; names match the
/// config file keys.
#[derive(Args, Serialize, Default)]
struct Overrides {
    /// Full TrainConfig JSON; flags given here take precedence over it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long = "num_facial", alias = "num-facial")]
    #[serde(skip_serializing_if = "Option::is_none")]
    num_facial: Option<usize>,
    #[arg(long = "n_prime", alias = "n-prime")]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_prime: Option<usize>,
    #[arg(long = "k_neighbors", alias = "k-neighbors")]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_neighbors: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[arg(long = "patch_size", alias = "patch-size")]
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
    /// Comma-separated channel widths, e.g. 64,64,128,128,256,256.
    #[arg(long = "agcl_channels", alias = "agcl-channels", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    agcl_channels: Option<Vec<usize>>,
    #[arg(long = "tmm_layers", alias = "tmm-layers")]
    #[serde(skip_serializing_if = "Option::is_none")]
    tmm_layers: Option<usize>,
    #[arg(long = "tmm_hidden", alias = "tmm-hidden")]
    #[serde(skip_serializing_if = "Option::is_none")]
    tmm_hidden: Option<usize>,
    #[arg(long = "learning_rate", alias = "learning-rate")]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long = "weight_decay", alias = "weight-decay")]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[arg(long = "top_n", alias = "top-n")]
    #[serde(skip_serializing_if = "Option::is_none")]
    top_n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    #[arg(long = "max_age", alias = "max-age")]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_age: Option<u32>,
    #[arg(long = "batch_size", alias = "batch-size")]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_dtype)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dtype: Option<DType>,
    #[arg(long = "val_fraction", alias = "val-fraction")]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_fraction: Option<f64>,
    #[arg(long = "root_keypoint", alias = "root-keypoint")]
    #[serde(skip_serializing_if = "Option::is_none")]
    root_keypoint: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grayscale: Option<bool>,
    /// Comma-separated lower bounds of age groups after the first.
    #[arg(long = "age_groups", alias = "age-groups", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    age_groups: Option<Vec<u32>>,
    #[arg(long = "grad_clip", alias = "grad-clip")]
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_clip: Option<f64>,
    /// GCN, TA-GCN, AGCN or TAA-GCN.
    #[arg(long)]
    #[serde(skip)]
    variant: Option<Variant>,
    #[arg(long = "use_keypoint_selection", alias = "use-keypoint-selection")]
    #[serde(skip)]
    use_keypoint_selection: Option<bool>,
    /// FK, FPP, FK+FPP, SCK, SCIP, SCK+SCIP or all.
    #[arg(long)]
    #[serde(skip)]
    modality: Option<Modality>,
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        _ => Err(format!("unknown dtype {s:?} (f32 or f64)")),
    }
}

impl Overrides {
    /// Built-in defaults, then the config file, then these flags.
    fn resolve(&self) -> Result<TrainConfig> {
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                eprintln!("input {} sha256 {}", p.display(), sha256_hex(text.as_bytes()));
                TrainConfig::from_json(&text)?
            }
            None => TrainConfig::default(),
        };
        let mut merged = serde_json::to_value(&base)?;
        let Value::Object(flags) = serde_json::to_value(self)? else {
            unreachable!("overrides serialize to an object")
        };
        let obj = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in flags {
            obj.insert(k, v);
        }
        let mut cfg: TrainConfig = serde_json::from_value(merged)?;
        if let Some(v) = self.variant {
            let keep = cfg.variant;
            cfg.variant = VariantFlags {
                use_keypoint_selection: keep.use_keypoint_selection,
                modality: keep.modality,
                ..VariantFlags::named(v)
            };
        }
        if let Some(s) = self.use_keypoint_selection {
            cfg.variant.use_keypoint_selection = s;
        }
        if let Some(m) = self.modality {
            cfg.variant.modality = m;
        }
        cfg.validate()?;
        eprintln!("config {}", serde_json::to_string(&cfg)?);
        Ok(cfg)
    }
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenScArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Skeleton hierarchy JSON; the COCO-18 hierarchy when absent.
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdjacencyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output of select-keypoints; recomputed from the training split when absent.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Continue from OUT/last.taag.
    #[arg(long)]
    resume: bool,
    /// Directory for checkpoints and metrics.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Which split the table reports.
    #[arg(long, default_value = "val")]
    split: EvalSplit,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    F64,
    Dd,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "toy")]
    scale: Scale,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    /// Arithmetic of the finite differences.
    #[arg(long, value_enum, default_value = "dd")]
    reference: RefArg,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn load(path: &Path) -> Result<Dataset> {
    let data = load_manifest(path)?;
    eprintln!("input {} sha256 {} ({} samples)", path.display(), data.hash, data.samples.len());
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    Ok(data)
}

fn read_input(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    eprintln!("input {} sha256 {}", path.display(), hash_file(path)?);
    Ok(text)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn train_refs<'a>(data: &'a Dataset, cfg: &TrainConfig) -> Vec<&'a KeypointSample> {
    split(&data.samples, cfg.val_fraction, cfg.seed)
        .train
        .into_iter()
        .map(|i| &data.samples[i])
        .collect()
}

fn read_selection(path: &Path) -> Result<Vec<usize>> {
    let v: Value = serde_json::from_str(&read_input(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let sel = v.get("selection").cloned().ok_or_else(|| anyhow!("{} has no \"selection\"", path.display()))?;
    Ok(serde_json::from_value(sel)?)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => {
            eprintln!("config {}", json!({"kind": a.kind.to_possible_value().unwrap().get_name(), "num_samples": a.num_samples, "max_age": a.max_age, "patch_size": a.patch_size, "seed": a.seed}));
            let samples = match a.kind {
                SynthKind::Aging => synth_generate(&SynthSpec {
                    num_samples: a.num_samples,
                    max_age: a.max_age,
                    patch_size: a.patch_size.unwrap_or(SynthSpec::default().patch_size),
                    seed: a.seed,
                    ..SynthSpec::default()
                }),
                SynthKind::NoSignal => synth_generate(&SynthSpec {
                    patch_size: a.patch_size.unwrap_or(SynthSpec::default().patch_size),
                    ..SynthSpec::no_signal(a.num_samples, a.max_age, a.seed)
                }),
                SynthKind::JitterDrift => jitter_drift(&JitterDriftSpec {
                    num_samples: a.num_samples,
                    max_age: a.max_age,
                    patch_size: a.patch_size.unwrap_or(JitterDriftSpec::default().patch_size),
                    seed: a.seed,
                    ..JitterDriftSpec::default()
                }),
            };
            write_manifest(&a.out, &samples)?;
            eprintln!("wrote {} samples to {}", samples.len(), a.out.display());
            Ok(true)
        }
        Command::SelectKeypoints(a) => {
            let cfg = a.overrides.resolve()?;
            let data = load(&a.manifest)?;
            let sp = split(&data.samples, cfg.val_fraction, cfg.seed);
            let train: Vec<&KeypointSample> = sp.train.iter().map(|&i| &data.samples[i]).collect();
            let selection = Prepared::select(&cfg, &train)?;
            write_json(
                &a.out,
                &json!({"selection": selection, "manifest_hash": data.hash, "split_hash": sp.hash}),
            )?;
            Ok(true)
        }
        Command::GenSc(a) => {
            let hierarchy: SkeletonHierarchy = match &a.hierarchy {
                Some(p) => serde_json::from_str(&read_input(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SkeletonHierarchy::default(),
            };
            hierarchy.validate()?;
            eprintln!("config {}", serde_json::to_string(&hierarchy)?);
            let data = load(&a.manifest)?;
            let mut out = String::new();
            for s in &data.samples {
                let sc = generate_sc(&s.joints, &hierarchy)?;
                out.push_str(&serde_json::to_string(&json!({"id": s.id, "points": sc.points, "provenance": sc.provenance}))?);
                out.push('\n');
            }
            write_atomic(&a.out, out.as_bytes())?;
            Ok(true)
        }
        Command::BuildAdjacency(a) => {
            let cfg = a.overrides.resolve()?;
            let data = load(&a.manifest)?;
            let selection = a.selection.as_deref().map(read_selection).transpose()?;
            let prepared = Prepared::fit(&cfg, &train_refs(&data, &cfg), SkeletonHierarchy::default(), selection)?;
            let mut text = prepared.adjacency.to_json();
            text.push('\n');
            write_atomic(&a.out, text.as_bytes())?;
            eprintln!("adjacency sha256 {}", prepared.adjacency.hash());
            Ok(true)
        }
        Command::Train(a) => {
            let cfg = a.overrides.resolve()?;
            let data = load(&a.manifest)?;
            let selection = a.selection.as_deref().map(read_selection).transpose()?;
            let adjacency = match &a.adjacency {
                Some(p) => {
                    let n_facial = selection.as_ref().map_or(cfg.facial_nodes(), Vec::len);
                    Some(AdjacencySpec::from_json(&read_input(p)?, n_facial, NUM_SC)?)
                }
                None => None,
            };
            let opts = TrainOptions {
                out_dir: Some(a.out.clone()),
                resume: a.resume,
                exec: exec(cli),
                selection,
                adjacency,
                ..TrainOptions::default()
            };
            let out = train(&data, &cfg, &opts)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(true)
        }
        Command::Eval(a) => {
            let meta = read_meta(&a.checkpoint)?;
            eprintln!("input {} sha256 {}", a.checkpoint.display(), hash_file(&a.checkpoint)?);
            eprintln!("config {}", serde_json::to_string(&meta.config)?);
            let data = load(&a.manifest)?;
            let m = evaluate(&a.checkpoint, &data, exec(cli))?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(true)
        }
        Command::Ablate(a) => {
            let cfg = a.overrides.resolve()?;
            let data = load(&a.manifest)?;
            let opts = TrainOptions {
                exec: exec(cli),
                ..TrainOptions::default()
            };
            let rows = run_ablation(&data, &cfg, &default_ablation_flags(), a.split, &opts)?;
            let csv = ablation_csv(&rows);
            match &a.out {
                Some(p) => write_atomic(p, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Command::Gradcheck(a) => {
            let Scale::Toy = a.scale;
            let opts = GradCheckOptions {
                eps: a.eps,
                stencil: Stencil::Central,
                seed: a.seed,
                reference: match a.reference {
                    RefArg::F64 => Reference::F64,
                    RefArg::Dd => Reference::DoubleDouble,
                },
                ..GradCheckOptions::default()
            };
            eprintln!("config {}", serde_json::to_string(&json!({"scale": "toy", "seed": a.seed, "options": opts, "tol": a.tol}))?);
            let started = std::time::Instant::now();
            let report = toy_grad_check(a.seed, &opts)?;
            let max = report.max_rel_err();
            let pass = max < a.tol;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "max_rel_err": max,
                    "tol": a.tol,
                    "pass": pass,
                    "seconds": started.elapsed().as_secs_f64(),
                    "params": report.params,
                }))?
            );
            Ok(pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let kind = match e.downcast_ref::<HarnessError>() {
                Some(h) if h.is_io() => "io",
                Some(_) => "input",
                None => "error",
            };
            eprintln!("{}", json!({"error": kind, "message": format!("{e:#}")}));
            ExitCode::from(1)
        }
    }
}
