//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails. Run with `cargo test --test acceptance`.

mod support;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kdlab::cli::ExperimentConfig;
use kdlab::datagen::{
    sample_dataset, sample_splits, Layout, MixedFeatureDataset, Split, SplitSizes, TransformSet, VocabularySpec,
};
use kdlab::evalcal::{accuracy, distribution_error, ece, fidelity, fit_temperature, nll, nll_at_temperature, PNorm};
use kdlab::netlib::{Architecture, Network};
use kdlab::rng::SeedStream;
use kdlab::tensor::Tensor;
use kdlab::theory::{theorem_sweep, verify_lemma1, verify_lemma2, SweepBase, SweepParameter, TheoremSweepConfig};
use kdlab::trainlab::{
    init_network, train_student, train_teacher, train_teacher_with, DistillConfig, TeacherMode, TeacherTrainConfig,
};
use rand::Rng as _;
use rand_distr::{Distribution, WeightedIndex};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn gradient_correctness() -> Outcome {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while checked < 200 {
        let kind = support::LOSSES[seed as usize % support::LOSSES.len()];
        let case = support::random_case(1_000_000 + seed, kind);
        seed += 1;
        if !support::admissible(&case) {
            continue;
        }
        worst = worst.max(support::max_relative_error(&case));
        checked += 1;
    }
    outcome(
        worst < 1e-5,
        format!("{checked} random networks over CE/MSE/Lipschitz/KD/teacher objective, max relative error {worst:.2e} (< 1e-5)"),
    )
}

fn lemma1_data() -> MixedFeatureDataset {
    let (data, _) = ExperimentConfig::default().dataset().unwrap();
    data.split(Split::Train).unwrap()
}

fn lemma1_oracle() -> Outcome {
    let data = lemma1_data();
    let v = data.vocabulary.as_ref().unwrap();
    let r = verify_lemma1(&data, 5000, 0.5).unwrap();
    outcome(
        r.max_gap < 1e-3,
        format!(
            "|Z|={} M={} K={} N={}: max_z ||p(z) - ybar_z||_inf = {:.3e} (< 1e-3)",
            v.len(),
            data.patches,
            data.classes,
            data.len(),
            r.max_gap
        ),
    )
}

fn lemma2_scaling() -> Outcome {
    let spec = VocabularySpec {
        features: 8,
        classes: 3,
        patch_dim: 2,
        concentration: 1.0,
        mean_spread: 1.0,
        representation_scale: 0.1,
        layout: Layout::Random,
        sampling_weights: None,
    };
    let vocab = spec.build(&mut SeedStream::new(5).stream("vocab")).unwrap();
    let r = verify_lemma2(&vocab, &[500, 2000, 8000, 32000], 2, &SEEDS).unwrap();
    outcome(
        (r.slope + 0.5).abs() <= 0.1,
        format!("log-log slope {:.4} over N in {{500, 2000, 8000, 32000}}, 5 seeds (-0.5 +/- 0.1)", r.slope),
    )
}

fn sweep_base(features: usize, n_train: usize) -> SweepBase {
    SweepBase {
        vocab: VocabularySpec {
            features,
            classes: 4,
            patch_dim: 8,
            concentration: 1.0,
            mean_spread: 1.0,
            representation_scale: 0.1,
            layout: Layout::Manifold {
                sharpness: 3.0,
                window: 2,
            },
            sampling_weights: None,
        },
        n_train,
        n_test: 1000,
        patches: 3,
        transform_count: 4,
        transform_magnitude: 0.0,
        augment: false,
        hidden: vec![32],
        feature_dim: 16,
        head: kdlab::netlib::Head::ModifiedSoftmax,
        train: TeacherTrainConfig::new(30, TeacherMode::Standard, 0),
        delta: 0.1,
    }
}

fn theorem_direction() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (parameter, grid, base) in [
        (SweepParameter::N, vec![500.0, 2000.0, 8000.0], sweep_base(32, 0)),
        (SweepParameter::Features, vec![8.0, 16.0, 32.0], sweep_base(0, 32000)),
    ] {
        let cfg = TheoremSweepConfig {
            parameter,
            grid,
            seeds: SEEDS.to_vec(),
            base,
        };
        let curve = theorem_sweep(&cfg, 1).unwrap();
        let ok = SEEDS.iter().filter(|&&s| nonincreasing(&curve.per_seed(s))).count();
        pass &= ok >= 4;
        details.push(format!(
            "{}: mean L1 error {} nonincreasing in {ok}/5 seeds",
            parameter.name(),
            fmt(&curve.mean_error)
        ));
    }
    outcome(pass, format!("patchwise teacher; {} (>= 4/5 each)", details.join("; ")))
}

fn realistic_levers() -> Outcome {
    let spec = VocabularySpec {
        features: 16,
        classes: 4,
        patch_dim: 8,
        concentration: 1.0,
        mean_spread: 1.0,
        representation_scale: 0.1,
        layout: Layout::Manifold {
            sharpness: 3.0,
            window: 2,
        },
        sampling_weights: None,
    };
    let arch = Architecture::mlp(3, 8, vec![128, 128], 4);
    let mut inflation_std = Vec::new();
    let mut inflation_cr = Vec::new();
    let mut wins = 0;
    let lambdas = [0.0, 1e-5, 1e-4, 1e-3];
    let mut lips = vec![Vec::new(); lambdas.len()];
    for seed in SEEDS {
        let st = SeedStream::new(seed);
        let vocab = spec.build(&mut st.stream("vocab")).unwrap();
        let mut errs = Vec::new();
        for magnitude in [0.0, 0.5] {
            let tr = TransformSet::random(&vocab, 4, magnitude, &mut st.stream("transforms")).unwrap();
            let train = sample_dataset(&vocab, 4000, 3, &tr, seed).unwrap();
            let test = sample_dataset(&vocab, 1000, 3, &tr, seed + 1000).unwrap();
            for mode in [TeacherMode::Standard, TeacherMode::NoLr] {
                let mut net = init_network(arch.clone(), seed).unwrap();
                let cfg = TeacherTrainConfig::new(60, mode, seed);
                train_teacher(&mut net, &train, &cfg, None).unwrap();
                errs.push(distribution_error(&net, &test, PNorm::L1).unwrap());
            }
            if magnitude == 0.0 {
                for (i, &lam) in lambdas.iter().enumerate() {
                    let mut net = init_network(arch.clone(), seed).unwrap();
                    let mut cfg = TeacherTrainConfig::new(60, TeacherMode::NoCr, seed);
                    cfg.lambda_lr = lam;
                    lips[i].push(train_teacher(&mut net, &train, &cfg, None).unwrap().final_lipschitz);
                }
            }
        }
        let (is, ic) = (errs[2] - errs[0], errs[3] - errs[1]);
        inflation_std.push(is);
        inflation_cr.push(ic);
        if ic < is {
            wins += 1;
        }
    }
    let mean_lips: Vec<f64> = lips.iter().map(|v| mean(v)).collect();
    let inversions = mean_lips.windows(2).filter(|w| w[1] > w[0]).count();
    let raised = mean(&inflation_std) > 0.0;
    outcome(
        raised && wins >= 4 && inversions <= 1,
        format!(
            "magnitude 0 -> 0.5 raises Standard error by {:.4} (mean); consistency inflation {:.4}, smaller in {wins}/5 seeds (>= 4); \
             final Lipschitz over lambda_LR {{0, 1e-5, 1e-4, 1e-3}} = {} with {inversions} inversion(s) (<= 1)",
            mean(&inflation_std),
            mean(&inflation_cr),
            fmt(&mean_lips)
        ),
    )
}

/// Data, teacher and student setup shared by the two distillation criteria.
struct KdSetup {
    vocab: VocabularySpec,
    teacher_epochs: usize,
    lambda_lr: f64,
}

impl KdSetup {
    fn new() -> Self {
        Self {
            vocab: VocabularySpec {
                features: 24,
                classes: 5,
                patch_dim: 8,
                concentration: 0.3,
                mean_spread: 1.0,
                representation_scale: 0.1,
                layout: Layout::Random,
                sampling_weights: None,
            },
            teacher_epochs: 100,
            lambda_lr: 1e-3,
        }
    }

    fn data(&self, seed: u64) -> MixedFeatureDataset {
        let vocab = self.vocab.build(&mut SeedStream::new(seed).stream("vocab")).unwrap();
        let sizes = SplitSizes {
            train: 8000,
            holdout: 1000,
            temperature_holdout: 1000,
            test: 2000,
        };
        sample_splits(&vocab, &sizes, 3, &TransformSet::identity(&vocab), seed).unwrap()
    }

    fn teacher_config(&self, mode: TeacherMode, seed: u64) -> TeacherTrainConfig {
        let mut cfg = TeacherTrainConfig::new(self.teacher_epochs, mode, seed);
        cfg.lambda_lr = self.lambda_lr;
        cfg
    }

    fn student(&self, teacher: &Network, data: &MixedFeatureDataset, epochs: usize, seed: u64) -> Network {
        let mut student = init_network(Architecture::mlp(3, 8, vec![32], 5), seed + 100).unwrap();
        train_student(&mut student, teacher, data, &DistillConfig::new(epochs, seed)).unwrap();
        student
    }
}

fn probs(net: &Network, d: &MixedFeatureDataset) -> Tensor {
    net.predict_rows(d.inputs(), d.len(), 512).unwrap().normalized()
}

fn distillation_directions() -> Outcome {
    let setup = KdSetup::new();
    // [mode][seed]
    let mut t_nll = [[0.0; 5]; 2];
    let mut t_ece = [[0.0; 5]; 2];
    let mut s_acc = [[0.0; 5]; 2];
    let mut fid = [[0.0; 5]; 2];
    for (si, &seed) in SEEDS.iter().enumerate() {
        let data = setup.data(seed);
        let hold = data.split(Split::Holdout).unwrap();
        let test = data.split(Split::Test).unwrap();
        for (mi, mode) in [TeacherMode::Standard, TeacherMode::Soteacher].into_iter().enumerate() {
            let mut teacher = init_network(Architecture::mlp(3, 8, vec![128, 128], 5), seed).unwrap();
            train_teacher(&mut teacher, &data, &setup.teacher_config(mode, seed), None).unwrap();
            let hp = probs(&teacher, &hold);
            t_nll[mi][si] = nll(&hp, hold.labels());
            t_ece[mi][si] = ece(&hp, hold.labels(), 15);
            let student = setup.student(&teacher, &data, 80, seed);
            let sp = probs(&student, &test);
            s_acc[mi][si] = accuracy(&sp, test.labels());
            fid[mi][si] = fidelity(&sp, &probs(&teacher, &test)).unwrap().top1_agreement;
        }
    }
    let m = |a: &[f64; 5]| mean(a);
    let a_ok = m(&t_nll[1]) < m(&t_nll[0]) && m(&t_ece[1]) < m(&t_ece[0]);
    let gap_pos = (0..5).filter(|&i| s_acc[1][i] > s_acc[0][i]).count();
    let b_ok = m(&s_acc[1]) >= m(&s_acc[0]) && gap_pos >= 4;
    let c_ok = m(&fid[1]) > m(&fid[0]);
    outcome(
        a_ok && b_ok && c_ok,
        format!(
            "(a) teacher holdout NLL {:.4} -> {:.4}, ECE {:.4} -> {:.4} [{}]; \
             (b) student test acc {:.4} -> {:.4}, positive gap in {gap_pos}/5 seeds [{}]; \
             (c) fidelity {:.2}% -> {:.2}% [{}] (Standard -> SoTeacher)",
            m(&t_nll[0]),
            m(&t_nll[1]),
            m(&t_ece[0]),
            m(&t_ece[1]),
            if a_ok { "ok" } else { "fail" },
            m(&s_acc[0]),
            m(&s_acc[1]),
            if b_ok { "ok" } else { "fail" },
            m(&fid[0]),
            m(&fid[1]),
            if c_ok { "ok" } else { "fail" },
        ),
    )
}

fn checkpoint_sweep() -> Outcome {
    let setup = KdSetup::new();
    let late = 3;
    let mut wins = 0;
    let mut curves = [vec![0.0; 10], vec![0.0; 10]];
    for &seed in &SEEDS {
        let data = setup.data(seed);
        let test = data.split(Split::Test).unwrap();
        let mut lates = [0.0; 2];
        for (mi, mode) in [TeacherMode::Standard, TeacherMode::Soteacher].into_iter().enumerate() {
            let mut teacher = init_network(Architecture::mlp(3, 8, vec![128, 128], 5), seed).unwrap();
            let mut cfg = setup.teacher_config(mode, seed);
            cfg.checkpoint_every = 10;
            let mut snapshots = Vec::new();
            train_teacher_with(&mut teacher, &data, &cfg, |ck| {
                snapshots.push(ck.network.clone());
                Ok(None)
            })
            .unwrap();
            assert!(snapshots.len() >= 8);
            let curve: Vec<f64> = snapshots
                .iter()
                .map(|t| accuracy(&probs(&setup.student(t, &data, 40, seed), &test), test.labels()))
                .collect();
            for (c, v) in curves[mi].iter_mut().zip(&curve) {
                *c += v / SEEDS.len() as f64;
            }
            lates[mi] = mean(&curve[curve.len() - late..]);
        }
        if lates[1] >= lates[0] {
            wins += 1;
        }
    }
    outcome(
        wins >= 4,
        format!(
            "students from 10 checkpoints; mean curve Standard {} SoTeacher {}; late (last {late}) mean SoTeacher >= Standard in {wins}/5 seeds (>= 4)",
            fmt(&curves[0]),
            fmt(&curves[1])
        ),
    )
}

fn calibration_machinery() -> Outcome {
    let k = 4;
    let uniform = Tensor::matrix(10, k, vec![0.25; 10 * k]).unwrap();
    let labels: Vec<usize> = (0..10).map(|i| i % k).collect();
    let nll_err = (nll(&uniform, &labels) - (k as f64).ln()).abs();

    let rows: Vec<f64> = (0..20).flat_map(|_| [0.75, 0.25]).collect();
    let probs = Tensor::matrix(20, 2, rows).unwrap();
    let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 9)).collect();
    let one_bin = ece(&probs, &y, 15);

    let mut rng = SeedStream::new(8).stream("calibration");
    let (n, classes, inverse_scale) = (5000, 5, 2.5);
    let mut logits = Vec::with_capacity(n * classes);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        ys.push(WeightedIndex::new(&p).unwrap().sample(&mut rng));
        logits.extend(z.iter().map(|v| v * inverse_scale));
    }
    let logits = Tensor::matrix(n, classes, logits).unwrap();
    let t = fit_temperature(&logits, &ys).unwrap();
    let recovered = ((t - inverse_scale) / inverse_scale).abs();
    let nll_gain = nll_at_temperature(&logits, &ys, 1.0) - nll_at_temperature(&logits, &ys, t);

    let pass = nll_err <= 1e-9 && one_bin == 0.3 && recovered < 0.1 && nll_gain >= -1e-3;
    outcome(
        pass,
        format!(
            "uniform NLL - ln K = {nll_err:.1e}; one-bin ECE = {one_bin}; fitted T = {t:.4} for scale {inverse_scale} ({:.2}% off); \
             holdout NLL change {:.4}",
            100.0 * recovered,
            -nll_gain
        ),
    )
}

fn files(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let first = verify_lemma1(&lemma1_data(), 5000, 0.5).unwrap();
    let second = verify_lemma1(&lemma1_data(), 5000, 0.5).unwrap();
    let lemma_same = first == second;

    let setup = KdSetup::new();
    let config = serde_json::json!({
        "schema_version": 1,
        "seed": 0,
        "data": {
            "vocab": setup.vocab,
            "splits": {"train": 8000, "holdout": 1000, "temperature_holdout": 1000, "test": 2000},
            "patches": 3
        },
        "teacher": {
            "architecture": {"kind": "generic-mlp", "hidden": [128, 128]},
            "epochs": setup.teacher_epochs, "batch_size": 64, "mode": "soteacher",
            "lambda_lr": setup.lambda_lr, "lambda_cr_max": 1.0, "cr_schedule": "linear", "checkpoint_every": 10
        },
        "student": {
            "architecture": {"kind": "generic-mlp", "hidden": [32]},
            "epochs": 80, "batch_size": 64, "alpha": 0.5, "temperature": 4.0
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("c.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let run = |args: &[&str]| {
        let status = Command::new(env!("CARGO_BIN_EXE_kdlab"))
            .current_dir(root)
            .args(args)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "kdlab {args:?} failed");
    };
    for r in ["r1", "r2"] {
        let (t, s, e) = (format!("{r}/teacher"), format!("{r}/student"), format!("{r}/eval"));
        run(&["train-teacher", "--config", "c.json", "--out", &t]);
        run(&["distill", "--config", "c.json", "--teacher", &t, "--out", &s]);
        run(&["evaluate", "--config", "c.json", "--teacher", &t, "--student", &s, "--out", &e]);
    }
    let (a, b) = (root.join("r1"), root.join("r2"));
    let names = files(&a);
    let same_names = names == files(&b);
    let differing: Vec<&String> = names
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .collect();
    let checkpoints = names.iter().filter(|f| f.ends_with("manifest.json")).count();
    outcome(
        lemma_same && same_names && differing.is_empty(),
        format!(
            "lemma-1 rerun identical: {lemma_same}; CLI train/distill/evaluate rerun: {} files ({checkpoints} checkpoints), {} differ",
            names.len(),
            differing.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 gradient correctness", gradient_correctness, Duration::from_secs(60)),
        ("2 lemma-1 oracle equivalence", lemma1_oracle, Duration::from_secs(120)),
        ("3 lemma-2 scaling", lemma2_scaling, Duration::from_secs(120)),
        ("4 theorem direction", theorem_direction, Duration::from_secs(20 * 60)),
        ("5 realistic-case levers", realistic_levers, Duration::from_secs(30 * 60)),
        ("6 distillation directions", distillation_directions, Duration::from_secs(30 * 60)),
        ("7 checkpoint sweep", checkpoint_sweep, Duration::from_secs(40 * 60)),
        ("8 calibration machinery", calibration_machinery, Duration::from_secs(60)),
        ("9 determinism", determinism, Duration::from_secs(30 * 60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} ({:.1}s, budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
