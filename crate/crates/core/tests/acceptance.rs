//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass substrings as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taagcn::harness::{
    ablation_csv, default_ablation_flags, jitter_drift, load_checkpoint, load_manifest, mae, run_ablation,
    save_checkpoint, synth_generate, top1, train, write_manifest, Dataset, EvalSplit, Exec, JitterDriftSpec,
    Prediction, SynthSpec, TrainConfig, TrainOptions, Variant, VariantFlags, DRIFT_KEYPOINTS,
};
use taagcn::keypoints::{generate_sc, selection_stats, KeypointSample, Point, Provenance, SkeletonHierarchy, NUM_JOINTS};
use taagcn::network::{fc_f, forward, phi, toy_config, toy_grad_check, toy_problem, Mode};
use taagcn::tensor::{GradCheckOptions, Reference, Stencil, Tape};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient_fidelity", gradient_fidelity),
        ("phi_limits", phi_limits),
        ("fc_f_monotonicity", fc_f_monotonicity),
        ("probability_laws", probability_laws),
        ("selection_oracle", selection_oracle),
        ("sc_generation_totality", sc_generation_totality),
        ("overfit_capability", overfit_capability),
        ("ablation_contract", ablation_contract),
        ("determinism_and_round_trips", determinism_and_round_trips),
        ("metric_oracle", metric_oracle),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s) {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn gradient_fidelity() -> Outcome {
    let opts = GradCheckOptions {
        eps: 1e-9,
        stencil: Stencil::Central,
        seed: 7,
        reference: Reference::DoubleDouble,
        ..GradCheckOptions::default()
    };
    let started = Instant::now();
    let report = toy_grad_check(7, &opts).map_err(|e| e.to_string())?;
    let took = started.elapsed();
    let groups = report.params.len();
    let checked: usize = report.params.iter().map(|p| p.checked).sum();
    let worst = report.max_rel_err();
    ensure!(worst < 1e-5, "max relative error {worst:e} over {groups} parameters");
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!("max_rel_err {worst:.2e} over {checked} entries in {groups} parameters, {:.1} s", took.as_secs_f64()))
}

fn phi_limits() -> Outcome {
    let alpha = 2.0;
    let mut worst_hi: f64 = 0.0;
    let mut worst_lo: f64 = 0.0;
    for w in [0.25, 0.5, 1.0, 1.7, 3.0] {
        let hi = (phi(0.1, w, 1e6, alpha) - w).abs();
        let lo = (phi(0.1, w, 1e-6, alpha) - w / (1.0 + alpha)).abs();
        ensure!(hi < 1e-6, "psi=1e6: |phi - w| = {hi:e} at w={w}");
        ensure!(lo < 1e-6, "psi=1e-6: |phi - w/(1+alpha)| = {lo:e} at w={w}");
        for psi in [1e-6, 1.0, 1e6] {
            ensure!(phi(0.0, w, psi, alpha) == w / (1.0 + alpha), "x=0 not exact at w={w}, psi={psi}");
        }
        worst_hi = worst_hi.max(hi);
        worst_lo = worst_lo.max(lo);
    }
    Ok(format!("high-psi gap {worst_hi:.1e}, low-psi gap {worst_lo:.1e}"))
}

fn fc_f_monotonicity() -> Outcome {
    let (lo, hi) = (1e-6f64, 10.0f64);
    let mut violations = 0;
    for gamma in 1..=5 {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..1000 {
            let u = lo + (hi - lo) * i as f64 / 999.0;
            let v = fc_f(u, 1.0, 1.0, gamma, 5).map_err(|e| e.to_string())?;
            if v <= prev {
                violations += 1;
            }
            prev = v;
        }
    }
    ensure!(violations == 0, "{violations} violations");
    Ok("5 x 1000 points, 0 violations".into())
}

fn probability_laws() -> Outcome {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut min_p = f64::INFINITY;
    for i in 0..10_000u64 {
        let (mut graph, store) = toy_problem(&cfg, i).map_err(|e| e.to_string())?;
        // Node features live in [0, 1]; sample well beyond that on both sides.
        let scale = 10f64.powf(rng.gen_range(-3.0..2.0));
        for v in graph.features.data_mut() {
            *v *= scale;
        }
        let mode = if i % 2 == 0 { Mode::Train } else { Mode::Eval };
        let mut tape = Tape::new();
        let f = forward(&mut tape, &store, &graph, &cfg, mode, None).map_err(|e| e.to_string())?;
        let heads = [Some(f.p_spt), f.p_temp, Some(f.p_tot)];
        ensure!(heads.iter().all(Option::is_some), "temporal head missing");
        for p in heads.into_iter().flatten() {
            let p = tape.value(p).data();
            ensure!(p.len() == cfg.num_ages(), "distribution of length {}", p.len());
            let sum: f64 = p.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            for &x in p {
                ensure!(x > 0.0, "non-positive probability {x:e} at input {i}");
                min_p = min_p.min(x);
            }
        }
    }
    ensure!(worst <= 1e-9, "sum deviates from 1 by {worst:e}");
    Ok(format!("10000 inputs, max |sum - 1| {worst:.1e}, min p {min_p:.1e}"))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn two_pass_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn rescale(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    xs.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Combined scores and full ranking by brute force over a fully detected dataset.
fn ranking_oracle(samples: &[KeypointSample], k: usize, root: usize, eta: f64) -> (Vec<f64>, Vec<usize>) {
    let n = samples[0].facial.len();
    let pt = |s: &KeypointSample, i: usize| s.facial[i].expect("fully detected");
    let mean_d = |i: usize, j: usize| samples.iter().map(|s| dist(pt(s, i), pt(s, j))).sum::<f64>() / samples.len() as f64;
    let beta: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (mean_d(i, j), j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.iter().take(k).map(|o| o.1).collect()
        })
        .collect();
    let raw: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| (0..n).map(|i| beta[i].iter().map(|&j| dist(pt(s, i), pt(s, j))).sum()).collect())
        .collect();
    let h = raw.iter().flatten().copied().fold(0.0, f64::max);
    let v_e: Vec<f64> = (0..n).map(|i| two_pass_variance(&raw.iter().map(|r| r[i] / h).collect::<Vec<_>>())).collect();
    let v_a: Vec<f64> = (0..n)
        .map(|i| {
            let g: Vec<f64> = samples
                .iter()
                .map(|s| {
                    let (w, hh) = s.image_size;
                    dist(pt(s, i), pt(s, root)) / ((w as f64).hypot(hh as f64))
                })
                .collect();
            two_pass_variance(&g)
        })
        .collect();
    let (e, a) = (rescale(&v_e), rescale(&v_a));
    let v_t: Vec<f64> = (0..n).map(|i| eta * a[i] + (1.0 - eta) * (1.0 - e[i])).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| v_t[y].total_cmp(&v_t[x]).then(x.cmp(&y)));
    (v_t, order)
}

fn selection_oracle() -> Outcome {
    let spec = JitterDriftSpec::default();
    ensure!(spec.drift >= 10.0 * spec.jitter, "dataset violates drift >= 10 x jitter");
    let samples = jitter_drift(&spec);
    let n_prime = DRIFT_KEYPOINTS.len();
    let eta = 0.5;
    let (oracle_vt, oracle_order) = ranking_oracle(&samples, 5, spec.root, eta);
    let drift_first = oracle_order[..n_prime].iter().all(|k| DRIFT_KEYPOINTS.contains(k));
    ensure!(drift_first, "oracle ranks a jitter keypoint among the first {n_prime}");

    let stats = selection_stats(&samples, 5, spec.root, eta, n_prime).map_err(|e| e.to_string())?;
    let v_t: Vec<f64> = stats.v_t.iter().map(|v| v.ok_or("unscored keypoint")).collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..v_t.len()).collect();
    order.sort_by(|&x, &y| v_t[y].total_cmp(&v_t[x]).then(x.cmp(&y)));
    ensure!(order == oracle_order, "ranking differs from oracle");
    let expected: Vec<usize> = DRIFT_KEYPOINTS.collect();
    ensure!(stats.r == expected, "selected {:?}", stats.r);
    let gap = v_t.iter().zip(&oracle_vt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(gap < 1e-12, "scores differ from oracle by {gap:e}");
    let margin = oracle_vt[oracle_order[n_prime - 1]] - oracle_vt[oracle_order[n_prime]];
    Ok(format!("{} samples, full 68-way ranking matches, margin {margin:.3}", samples.len()))
}

const MIRROR_PAIRS: [(usize, usize); 8] = [(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17)];

#[derive(Clone, Copy)]
enum Slot {
    Joint(usize),
    Mid(usize, usize, Provenance),
}

/// Slot table as documented: joints, then within-level midpoints, then
/// between-level midpoints.
const SLOTS: [Slot; 20] = {
    use Provenance::{InterLevelInterp as E, IntraLevelInterp as A};
    [
        Slot::Joint(0),
        Slot::Joint(1),
        Slot::Joint(2),
        Slot::Joint(5),
        Slot::Joint(3),
        Slot::Joint(6),
        Slot::Joint(4),
        Slot::Joint(7),
        Slot::Joint(8),
        Slot::Joint(11),
        Slot::Mid(0, 1, A),
        Slot::Mid(2, 5, A),
        Slot::Mid(3, 6, A),
        Slot::Mid(8, 11, A),
        Slot::Mid(16, 2, E),
        Slot::Mid(17, 5, E),
        Slot::Mid(2, 3, E),
        Slot::Mid(5, 6, E),
        Slot::Mid(3, 4, E),
        Slot::Mid(6, 7, E),
    ]
};

/// Expected output of SC generation, from the branch rules alone.
fn sc_oracle(joints: &[Option<Point>]) -> Vec<(Point, Provenance)> {
    let axis = match (joints[1], joints[2], joints[5]) {
        (Some(n), _, _) => Some(n[0]),
        (None, Some(r), Some(l)) => Some((r[0] + l[0]) / 2.0),
        _ => None,
    };
    let partner = |j: usize| {
        MIRROR_PAIRS
            .iter()
            .find_map(|&(a, b)| if a == j { Some(b) } else if b == j { Some(a) } else { None })
    };
    let resolve = |j: usize| -> Option<(Point, Provenance)> {
        if let Some(p) = joints[j] {
            return Some((p, Provenance::Detected));
        }
        let m = joints[partner(j)?]?;
        Some(([2.0 * axis? - m[0], m[1]], Provenance::Mirrored))
    };
    SLOTS
        .iter()
        .map(|slot| match *slot {
            Slot::Joint(j) => resolve(j).unwrap_or(([0.0, 0.0], Provenance::Zero)),
            Slot::Mid(a, b, tag) => match (resolve(a), resolve(b)) {
                (Some((pa, _)), Some((pb, _))) => ([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0], tag),
                _ => ([0.0, 0.0], Provenance::Zero),
            },
        })
        .collect()
}

fn sc_generation_totality() -> Outcome {
    let hierarchy = SkeletonHierarchy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let body: Vec<Point> = (0..NUM_JOINTS).map(|_| [rng.gen_range(20.0..200.0), rng.gen_range(20.0..300.0)]).collect();
    // Head-to-wrist chain on the right side: ear, neck, shoulder, elbow, wrist.
    let chain = [16, 1, 2, 3, 4];
    let mut masks: Vec<Vec<bool>> = (0..1u32 << chain.len())
        .map(|bits| {
            let mut m = vec![true; NUM_JOINTS];
            for (i, &j) in chain.iter().enumerate() {
                m[j] = bits & (1 << i) == 0;
            }
            m
        })
        .collect();
    for _ in 0..500 {
        let keep = rng.gen_range(0.0..1.0);
        masks.push((0..NUM_JOINTS).map(|_| rng.gen_bool(keep)).collect());
    }

    let mut tally = std::collections::BTreeMap::new();
    let mut mirrored = 0;
    for (case, mask) in masks.iter().enumerate() {
        let joints: Vec<Option<Point>> = (0..NUM_JOINTS).map(|j| mask[j].then_some(body[j])).collect();
        let sc = generate_sc(&joints, &hierarchy).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(sc.points.len() == 20 && sc.provenance.len() == 20, "case {case}: {} points", sc.points.len());
        for (slot, (expected, (p, tag))) in sc_oracle(&joints).iter().zip(sc.points.iter().zip(&sc.provenance)).enumerate() {
            ensure!(
                expected.1 == *tag && expected.0 == *p,
                "case {case} slot {slot}: got {p:?} {tag:?}, expected {:?} {:?}",
                expected.0,
                expected.1
            );
            *tally.entry(format!("{tag:?}")).or_insert(0usize) += 1;
            if *tag == Provenance::Mirrored {
                mirrored += 1;
            }
        }
    }
    ensure!(tally.len() == 5, "only provenance kinds {:?} were exercised", tally.keys());
    ensure!(mirrored > 0, "no mirrored slot was exercised");
    Ok(format!("{} masks, slot tags {tally:?}", masks.len()))
}

fn overfit_config() -> (Dataset, TrainConfig) {
    let samples = synth_generate(&SynthSpec {
        patch_size: 8,
        ..SynthSpec::default()
    });
    let data = Dataset {
        header: None,
        samples,
        hash: "synth-default-p8".into(),
        warnings: Vec::new(),
    };
    let cfg = TrainConfig {
        patch_size: 8,
        max_age: 10,
        learning_rate: 1e-5 * 10.0,
        epochs: 300,
        batch_size: 4,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    (data, cfg)
}

fn overfit_capability() -> Outcome {
    let (data, cfg) = overfit_config();
    ensure!(data.samples.len() == 200 && cfg.max_age == 10, "not the 200-sample, Q=10 set");
    let opts = TrainOptions {
        stop_below_train_mae: Some(0.5),
        ..TrainOptions::default()
    };
    let started = Instant::now();
    let out = train(&data, &cfg, &opts).map_err(|e| e.to_string())?;
    let took = started.elapsed();
    ensure!(out.epochs_run <= 300, "{} epochs", out.epochs_run);
    ensure!(out.train.mae < 0.5, "train MAE {} after {} epochs", out.train.mae, out.epochs_run);
    ensure!(took < Duration::from_secs(600), "took {took:?}");
    Ok(format!("train MAE {:.3} after {} epochs, {:.0} s", out.train.mae, out.epochs_run, took.as_secs_f64()))
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        patch_size: 2,
        max_age: 10,
        agcl_channels: vec![4, 4, 6, 6, 8, 8],
        tmm_hidden: 4,
        learning_rate: 1e-3,
        epochs: 3,
        batch_size: 8,
        val_fraction: 0.25,
        dtype: taagcn::tensor::DType::F64,
        ..TrainConfig::default()
    }
}

fn tiny_data(n: usize) -> Dataset {
    Dataset {
        header: None,
        samples: synth_generate(&SynthSpec {
            num_samples: n,
            patch_size: 2,
            ..SynthSpec::default()
        }),
        hash: format!("synth-{n}-p2"),
        warnings: Vec::new(),
    }
}

const ABLATION_EPOCHS: usize = 120;

fn ablation_contract() -> Outcome {
    let flags = default_ablation_flags();
    let rows = run_ablation(&tiny_data(40), &tiny_config(), &flags, EvalSplit::Val, &TrainOptions::default())
        .map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for v in Variant::ALL {
        for selection in [true, false] {
            let hit = rows.iter().any(|r| r.variant == v.name() && r.selection == selection);
            ensure!(hit, "no row for {} with selection {selection}", v.name());
            seen.push(format!("{}/{}", v.name(), if selection { "on" } else { "off" }));
        }
    }
    let csv = ablation_csv(&rows);
    ensure!(csv.lines().count() == rows.len() + 1, "csv has {} lines", csv.lines().count());

    let (data, cfg) = overfit_config();
    let cfg = TrainConfig {
        epochs: ABLATION_EPOCHS,
        ..cfg
    };
    let pair = [VariantFlags::named(Variant::Gcn), VariantFlags::named(Variant::TaaGcn)];
    let rows = run_ablation(&data, &cfg, &pair, EvalSplit::Train, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let (gcn, full) = (rows[0].mae, rows[1].mae);
    ensure!(full <= gcn, "TAA-GCN train MAE {full} > GCN {gcn} after {ABLATION_EPOCHS} epochs");
    Ok(format!("{} rows incl. {}; train MAE after {ABLATION_EPOCHS} epochs: TAA-GCN {full:.3} <= GCN {gcn:.3}", rows.len() + flags.len() - 2, seen.len()))
}

fn determinism_and_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tiny_data(48);
    let cfg = tiny_config();
    let run = |sub: &str, exec: Exec| {
        let opts = TrainOptions {
            out_dir: Some(dir.path().join(sub)),
            exec,
            ..TrainOptions::default()
        };
        train(&data, &cfg, &opts).map_err(|e| e.to_string())
    };
    let a = run("a", Exec::Parallel)?;
    let b = run("b", Exec::Parallel)?;
    let c = run("c", Exec::Sequential)?;
    for (other, label) in [(&b, "repeat"), (&c, "sequential")] {
        ensure!(a.log == other.log && a.train == other.train && a.val == other.val, "{label} run differs");
        ensure!(a.split_hash == other.split_hash && a.adjacency_hash == other.adjacency_hash, "{label} hashes differ");
    }
    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    for sub in ["b", "c"] {
        ensure!(read(&dir.path().join("a/last.taag"))? == read(&dir.path().join(sub).join("last.taag"))?, "checkpoint bytes differ ({sub})");
    }

    let ckpt = load_checkpoint::<f64>(&dir.path().join("a/last.taag")).map_err(|e| e.to_string())?;
    let copy = dir.path().join("copy.taag");
    save_checkpoint(&copy, &ckpt).map_err(|e| e.to_string())?;
    ensure!(read(&copy)? == read(&dir.path().join("a/last.taag"))?, "checkpoint re-save differs");
    let back = load_checkpoint::<f64>(&copy).map_err(|e| e.to_string())?;
    ensure!(back == ckpt, "checkpoint reload differs");

    let manifest = dir.path().join("manifest.jsonl");
    write_manifest(&manifest, &data.samples).map_err(|e| e.to_string())?;
    let loaded = load_manifest(&manifest).map_err(|e| e.to_string())?;
    ensure!(loaded.samples == data.samples, "manifest round-trip changed samples");
    ensure!(loaded.warnings.is_empty(), "warnings {:?}", loaded.warnings);
    let again = dir.path().join("again/manifest.jsonl");
    write_manifest(&again, &loaded.samples).map_err(|e| e.to_string())?;
    ensure!(read(&again)? == read(&manifest)?, "manifest re-write differs");
    ensure!(
        read(&dir.path().join("again/patches.bin"))? == read(&dir.path().join("patches.bin"))?,
        "patch sidecar re-write differs"
    );
    let reloaded = load_manifest(&manifest).map_err(|e| e.to_string())?;
    ensure!(reloaded.hash == loaded.hash, "manifest hash unstable");
    Ok(format!("3 runs identical (parallel x2, sequential), {} epochs; checkpoint and manifest bit-exact", a.epochs_run))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for set in 0..1000 {
        let q = rng.gen_range(1..40usize);
        let n = rng.gen_range(1..60usize);
        let groups: Vec<u32> = if set % 2 == 0 {
            Vec::new()
        } else {
            let mut g: Vec<u32> = (1..=q as u32).filter(|_| rng.gen_bool(0.2)).collect();
            g.dedup();
            g
        };
        let preds: Vec<Prediction> = (0..n)
            .map(|i| {
                let mut probs: Vec<f64> = (0..=q).map(|_| rng.gen::<f64>().powi(3)).collect();
                let s: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= s);
                Prediction {
                    id: format!("p{i}"),
                    label: rng.gen_range(0..=q as u32),
                    probs,
                }
            })
            .collect();

        let first_max = |v: &[f64]| {
            let mut best = 0;
            for i in 1..v.len() {
                if v[i] > v[best] {
                    best = i;
                }
            }
            best
        };
        let group_of = |a: usize| groups.iter().filter(|&&b| a as u32 >= b).count();
        let mut abs_sum = 0.0;
        let mut hits = 0usize;
        for p in &preds {
            let age = first_max(&p.probs);
            abs_sum += (age as f64 - p.label as f64).abs();
            let hit = if groups.is_empty() {
                age == p.label as usize
            } else {
                let mut mass = vec![0.0; groups.len() + 1];
                for (t, pr) in p.probs.iter().enumerate() {
                    mass[group_of(t)] += pr;
                }
                first_max(&mass) == group_of(p.label as usize)
            };
            hits += hit as usize;
        }
        let want_mae = abs_sum / n as f64;
        let want_top1 = hits as f64 / n as f64;
        let (got_mae, got_top1) = (mae(&preds), top1(&preds, &groups));
        ensure!((got_mae - want_mae).abs() <= 1e-12, "set {set}: MAE {got_mae} vs {want_mae}");
        ensure!((got_top1 - want_top1).abs() <= 1e-12, "set {set}: top-1 {got_top1} vs {want_top1}");
        worst = worst.max((got_mae - want_mae).abs()).max((got_top1 - want_top1).abs());
    }
    Ok(format!("1000 prediction sets, max deviation {worst:.1e}"))
}
