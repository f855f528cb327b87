use proptest::prelude::*;

use taagcn::harness::{
    evaluate, load_checkpoint, median_predictor_mae, read_log, save_checkpoint, split, Prepared, synth_generate, train, Dataset,
    Exec, SynthSpec, TrainConfig, TrainOptions,
};
use taagcn::keypoints::{KeypointSample, SkeletonHierarchy, NUM_JOINTS};
use taagcn::network::ParamStore;
use taagcn::tensor::DType;

fn tiny() -> TrainConfig {
    TrainConfig {
        patch_size: 2,
        max_age: 10,
        agcl_channels: vec![4, 4, 6, 6, 8, 8],
        tmm_hidden: 4,
        learning_rate: 1e-3,
        epochs: 4,
        batch_size: 8,
        val_fraction: 0.25,
        dtype: DType::F64,
        ..TrainConfig::default()
    }
}

fn dataset(spec: SynthSpec) -> Dataset {
    let samples = synth_generate(&spec);
    Dataset {
        header: None,
        hash: format!("{spec:?}"),
        samples,
        warnings: Vec::new(),
    }
}

fn small(n: usize) -> Dataset {
    dataset(SynthSpec {
        num_samples: n,
        patch_size: 2,
        ..SynthSpec::default()
    })
}

fn in_dir(dir: &std::path::Path) -> TrainOptions {
    TrainOptions {
        out_dir: Some(dir.to_path_buf()),
        ..TrainOptions::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny()
    };
    let out = train(&small(32), &cfg, &in_dir(dir.path())).unwrap();
    let ckpt = load_checkpoint::<f64>(&dir.path().join("last.taag")).unwrap();
    let fresh = ParamStore::<f64>::init(
        &cfg.network(),
        &out.prepared.adjacency.a_f.to_tensor(),
        &out.prepared.adjacency.a_z.to_tensor(),
        cfg.seed,
    );
    assert_eq!(ckpt.opt.step, 4 * 3);
    for ((name, a), b) in fresh.named().zip(ckpt.params.tensors()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} changed");
    }
}

#[test]
fn resume_continues_with_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(32);
    let straight = train(&data, &tiny(), &in_dir(&dir.path().join("a"))).unwrap();

    let b = dir.path().join("b");
    let first = TrainConfig { epochs: 2, ..tiny() };
    train(&data, &first, &in_dir(&b)).unwrap();
    let resumed = train(&data, &tiny(), &TrainOptions {
        resume: true,
        ..in_dir(&b)
    })
    .unwrap();

    assert_eq!(resumed.log, straight.log);
    assert_eq!(resumed.train, straight.train);
    assert_eq!(resumed.val, straight.val);
    assert_eq!(read_log(&b.join("metrics.jsonl")).unwrap(), straight.log);
    for file in ["last.taag", "best.taag"] {
        let x = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn resume_rejects_a_different_manifest() {
    let dir = tempfile::tempdir().unwrap();
    train(&small(32), &TrainConfig { epochs: 1, ..tiny() }, &in_dir(dir.path())).unwrap();
    let other = dataset(SynthSpec {
        num_samples: 32,
        patch_size: 2,
        seed: 9,
        ..SynthSpec::default()
    });
    let err = train(&other, &tiny(), &TrainOptions {
        resume: true,
        ..in_dir(dir.path())
    });
    assert!(err.is_err());
}

#[test]
fn saved_checkpoint_evaluates_to_the_final_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(24);
    let cfg = TrainConfig {
        val_fraction: 0.0,
        ..tiny()
    };
    let out = train(&data, &cfg, &in_dir(dir.path())).unwrap();
    let last = dir.path().join("last.taag");
    let before = evaluate(&last, &data, Exec::Sequential).unwrap();
    assert_eq!(before, out.train);

    let copy = dir.path().join("copy.taag");
    save_checkpoint(&copy, &load_checkpoint::<f64>(&last).unwrap()).unwrap();
    assert_eq!(evaluate(&copy, &data, Exec::Parallel).unwrap(), before);
}

#[test]
fn f32_runs_are_deterministic_across_executors() {
    let data = small(24);
    let cfg = TrainConfig {
        dtype: DType::F32,
        epochs: 2,
        ..tiny()
    };
    let a = train(&data, &cfg, &TrainOptions { exec: Exec::Parallel, ..TrainOptions::default() }).unwrap();
    let b = train(&data, &cfg, &TrainOptions { exec: Exec::Sequential, ..TrainOptions::default() }).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.train, b.train);
}

#[test]
fn no_signal_model_is_a_constant_predictor() {
    let data = dataset(SynthSpec {
        patch_size: 2,
        ..SynthSpec::no_signal(44, 10, 3)
    });
    let ages: Vec<u32> = data.samples.iter().map(|s| s.age).collect();
    let cfg = TrainConfig {
        val_fraction: 0.0,
        epochs: 6,
        ..tiny()
    };
    let out = train(&data, &cfg, &TrainOptions::default()).unwrap();
    let m = &out.train;
    let columns: Vec<usize> = (0..=10).filter(|&c| m.confusion.iter().any(|row| row[c] > 0)).collect();
    assert_eq!(columns.len(), 1, "{:?}", m.confusion);
    let c = columns[0] as f64;
    let constant_mae = ages.iter().map(|&a| (a as f64 - c).abs()).sum::<f64>() / ages.len() as f64;
    assert!((m.mae - constant_mae).abs() < 1e-12);
    assert!(m.mae >= median_predictor_mae(&ages) - 1e-12);
}

#[test]
fn median_predictor_closed_form() {
    let ages: Vec<u32> = (0..=10).collect();
    assert!((median_predictor_mae(&ages) - 30.0 / 11.0).abs() < 1e-15);
    let synth: Vec<u32> = synth_generate(&SynthSpec {
        patch_size: 1,
        ..SynthSpec::default()
    })
    .iter()
    .map(|s| s.age)
    .collect();
    // 200 = 18 full cycles of 0..=10 plus ages 0 and 1; the lower median is 5.
    let expected = (18.0 * 30.0 + 5.0 + 4.0) / 200.0;
    assert!((median_predictor_mae(&synth) - expected).abs() < 1e-15);
}

#[test]
fn single_sample_loss_decreases() {
    let mut data = small(16);
    let cfg = TrainConfig {
        val_fraction: 0.0,
        epochs: 50,
        batch_size: 1,
        ..tiny()
    };
    // Selection and correlations need several samples; fit them first.
    let refs: Vec<&KeypointSample> = data.samples.iter().collect();
    let prepared = Prepared::fit(&cfg, &refs, SkeletonHierarchy::default(), None).unwrap();
    data.samples.truncate(1);
    let opts = TrainOptions {
        selection: Some(prepared.selection),
        adjacency: Some(prepared.adjacency),
        ..TrainOptions::default()
    };
    let out = train(&data, &cfg, &opts).unwrap();
    let losses: Vec<f64> = out.log.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    assert_eq!(losses.len(), 50);
    let windows: Vec<f64> = losses.chunks(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for (i, w) in windows.windows(2).enumerate() {
        assert!(w[1] <= w[0] * (1.0 + 1e-3), "window {} rose: {:?}", i + 1, windows);
    }
    assert!(windows[9] < windows[0]);
}

#[test]
fn labels_above_max_age_are_rejected() {
    let cfg = TrainConfig { max_age: 5, ..tiny() };
    assert!(train(&small(12), &cfg, &TrainOptions::default()).is_err());
}

fn bare(id: String) -> KeypointSample {
    KeypointSample {
        id,
        age: 0,
        image_size: (10, 10),
        facial: Vec::new(),
        joints: vec![None; NUM_JOINTS],
        patch_size: 1,
        patches: Vec::new(),
    }
}

proptest! {
    #[test]
    fn split_is_a_disjoint_cover_keyed_by_id(
        ids in prop::collection::hash_set("[a-z0-9]{1,8}", 1..60),
        frac in 0.0f64..0.9,
        seed in any::<u64>(),
        rotate in 0usize..60,
    ) {
        let samples: Vec<KeypointSample> = ids.into_iter().map(bare).collect();
        let n = samples.len();
        let sp = split(&samples, frac, seed);
        let mut all: Vec<usize> = sp.train.iter().chain(&sp.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(sp.val.len(), (n as f64 * frac).round() as usize);

        let mut shuffled = samples.clone();
        shuffled.rotate_left(rotate % n);
        let other = split(&shuffled, frac, seed);
        let val_ids = |s: &[KeypointSample], idx: &[usize]| {
            let mut v: Vec<String> = idx.iter().map(|&i| s[i].id.clone()).collect();
            v.sort();
            v
        };
        prop_assert_eq!(val_ids(&samples, &sp.val), val_ids(&shuffled, &other.val));
    }

    #[test]
    fn median_predictor_is_the_best_constant(ages in prop::collection::vec(0u32..30, 1..50)) {
        let best = (0..30)
            .map(|c| ages.iter().map(|&a| (a as f64 - c as f64).abs()).sum::<f64>() / ages.len() as f64)
            .fold(f64::INFINITY, f64::min);
        prop_assert!((median_predictor_mae(&ages) - best).abs() < 1e-12);
    }
}
