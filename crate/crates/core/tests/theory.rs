use kdlab::datagen::{
    sample_dataset, Cooccurrence, FeatureSpec, FeatureVocabulary, Layout, MixedFeatureDataset, Split, SplitRange,
    TransformSet, VocabularySpec,
};
use kdlab::rng::SeedStream;
use kdlab::theory::{
    chebyshev_envelope, feature_minimizer, lemma2_deviation, lemma3_sweep, verify_lemma1, verify_lemma1_with,
    verify_lemma2, verify_lemma3, Lemma1Config,
};
use proptest::prelude::*;
use rand::Rng as _;

fn vocab(features: usize, classes: usize, layout: Layout, seed: u64) -> FeatureVocabulary {
    VocabularySpec {
        features,
        classes,
        patch_dim: 2,
        concentration: 1.0,
        mean_spread: 1.0,
        representation_scale: 0.1,
        layout,
        sampling_weights: None,
    }
    .build(&mut SeedStream::new(seed).stream("vocab"))
    .unwrap()
}

fn shared_vocab(features: usize, p: Vec<f64>) -> FeatureVocabulary {
    let k = p.len();
    let specs = (0..features)
        .map(|z| FeatureSpec {
            name: format!("z{z}"),
            label_distribution: p.clone(),
            representation_mean: vec![z as f64],
            representation_scale: 0.0,
        })
        .collect();
    FeatureVocabulary::new(k, 1, specs, vec![1.0 / features as f64; features], Cooccurrence::Iid).unwrap()
}

/// Hand-built dataset: one feature per input, given labels.
fn hand_built(names: Vec<usize>, labels: Vec<usize>, classes: usize) -> MixedFeatureDataset {
    let n = labels.len();
    let truth = vec![1.0 / classes as f64; n * classes];
    MixedFeatureDataset::from_parts(
        1,
        1,
        classes,
        vec![0.0; n],
        labels,
        Some(names),
        Some(truth),
        None,
        None,
        vec![SplitRange {
            split: Split::Train,
            start: 0,
            end: n,
        }],
    )
    .unwrap()
}

#[test]
fn minimizer_counts_labels() {
    let data = hand_built(vec![0, 0, 0, 1], vec![0, 0, 1, 1], 2);
    let fm = feature_minimizer(&data).unwrap();
    let z0 = &fm.stats[0];
    assert_eq!(z0.n_z, 3);
    assert!((z0.label_mean[0] - 2.0 / 3.0).abs() < 1e-15 && (z0.label_mean[1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(fm.stats[1].label_mean, vec![0.0, 1.0]);
}

#[test]
fn features_absent_from_data_are_excluded() {
    let mut data = hand_built(vec![0, 2], vec![0, 1], 2);
    data.vocabulary = None;
    let fm = feature_minimizer(&data).unwrap();
    assert_eq!(fm.stats.iter().map(|s| s.feature).collect::<Vec<_>>(), vec![0, 2]);
}

#[test]
fn minimizer_requires_ground_truth() {
    let d = MixedFeatureDataset::from_parts(
        1,
        1,
        2,
        vec![0.0],
        vec![0],
        None,
        None,
        None,
        None,
        vec![SplitRange {
            split: Split::Train,
            start: 0,
            end: 1,
        }],
    )
    .unwrap();
    assert!(matches!(feature_minimizer(&d), Err(kdlab::Error::NoGroundTruth)));
}

#[test]
fn lemma1_two_patches() {
    let v = vocab(8, 3, Layout::Random, 1);
    let data = sample_dataset(&v, 2000, 2, &TransformSet::identity(&v), 1).unwrap();
    let t = std::time::Instant::now();
    let r = verify_lemma1(&data, 5000, 0.5).unwrap();
    eprintln!("gap {} loss {} risk {} in {:?}", r.max_gap, r.final_loss, r.optimal_risk, t.elapsed());
    assert!(r.max_gap < 1e-3, "{}", r.max_gap);
    assert!((r.final_loss - r.optimal_risk).abs() < 1e-5);
}

#[test]
fn lemma1_single_patch_decouples() {
    let v = vocab(8, 3, Layout::Random, 2);
    let data = sample_dataset(&v, 2000, 1, &TransformSet::identity(&v), 2).unwrap();
    let r = verify_lemma1(&data, 5000, 0.5).unwrap();
    eprintln!("gap {}", r.max_gap);
    assert!(r.max_gap < 1e-6, "{}", r.max_gap);
}

#[test]
fn lemma1_single_feature_is_label_frequency() {
    let v = shared_vocab(1, vec![0.3, 0.7]);
    let data = sample_dataset(&v, 500, 2, &TransformSet::identity(&v), 3).unwrap();
    let fm = feature_minimizer(&data).unwrap();
    let freq = data.labels().iter().filter(|&&y| y == 1).count() as f64 / 500.0;
    assert!((fm.stats[0].label_mean[1] - freq).abs() < 1e-15);
    let mut cfg = Lemma1Config::new(2000, 0.5);
    cfg.seed = 3;
    assert!(verify_lemma1_with(&data, &cfg).unwrap().max_gap < 1e-6);
}

#[test]
fn lemma2_deterministic_labels() {
    let v = shared_vocab(4, vec![0.0, 1.0, 0.0]);
    let data = sample_dataset(&v, 300, 3, &TransformSet::identity(&v), 4).unwrap();
    assert_eq!(lemma2_deviation(&data).unwrap(), 0.0);
}

#[test]
fn lemma2_slope() {
    let v = vocab(8, 3, Layout::Random, 5);
    let r = verify_lemma2(&v, &[500, 2000, 8000, 32000], 2, &[0, 1, 2, 3, 4]).unwrap();
    assert!((r.slope + 0.5).abs() < 0.1, "{}", r.slope);
}

#[test]
fn lemma2_chebyshev_binomial() {
    let v = shared_vocab(1, vec![0.3, 0.7]);
    let delta = 0.1;
    let trials = 200;
    let mut inside = 0;
    for s in 0..trials {
        let data = sample_dataset(&v, 50, 1, &TransformSet::identity(&v), s).unwrap();
        let dev = lemma2_deviation(&data).unwrap();
        // binomial oracle: ‖(p̂ − p, p − p̂)‖₂ = √2 |p̂ − p|
        let ones = data.labels().iter().filter(|&&y| y == 1).count() as f64 / 50.0;
        assert!((dev - 2f64.sqrt() * (ones - 0.7).abs()).abs() < 1e-12);
        if dev <= chebyshev_envelope(2, 50, delta) {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.9 * trials as f64, "{inside}");
}

#[test]
fn lemma3_identical_features() {
    let v = shared_vocab(5, vec![0.2, 0.3, 0.5]);
    let data = sample_dataset(&v, 400, 3, &TransformSet::identity(&v), 6).unwrap();
    let r = verify_lemma3(&data).unwrap();
    assert!(r.max_gap < 1e-12, "{}", r.max_gap);
}

#[test]
fn lemma3_full_mixing() {
    // M = |Z| with every feature in every input
    let v = vocab(3, 3, Layout::Random, 7);
    let names: Vec<usize> = (0..50).flat_map(|_| [0, 1, 2]).collect();
    let p = v.true_label_distribution(&[0, 1, 2]).unwrap();
    let n = 50;
    let data = MixedFeatureDataset::from_parts(
        3,
        2,
        3,
        vec![0.0; n * 6],
        vec![0; n],
        Some(names),
        Some(p.iter().cycle().take(n * 3).copied().collect()),
        Some(v),
        None,
        vec![SplitRange {
            split: Split::Train,
            start: 0,
            end: n,
        }],
    )
    .unwrap();
    let fm = feature_minimizer(&data).unwrap();
    for s in &fm.stats {
        assert_eq!(s.true_mean, fm.stats[0].true_mean);
    }
}

#[test]
fn lemma3_gap_shrinks_with_vocabulary() {
    let spec = VocabularySpec {
        features: 8,
        classes: 4,
        patch_dim: 2,
        concentration: 1.0,
        mean_spread: 1.0,
        representation_scale: 0.1,
        layout: Layout::Manifold {
            sharpness: 3.0,
            window: 2,
        },
        sampling_weights: None,
    };
    let seeds = [0, 1, 2, 3, 4];
    let pts = lemma3_sweep(&spec, &[8, 16, 32, 64], 3, 20000, &seeds).unwrap();
    let mut ok = 0;
    for s in 0..seeds.len() {
        if pts.windows(2).all(|w| w[1].per_seed[s] < w[0].per_seed[s]) {
            ok += 1;
        }
    }
    assert!(ok >= 3, "{pts:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn minimizer_is_locally_optimal(seed in 0u64..1000) {
        let v = vocab(5, 3, Layout::Random, seed);
        let data = sample_dataset(&v, 300, 2, &TransformSet::identity(&v), seed).unwrap();
        let fm = feature_minimizer(&data).unwrap();
        for s in &fm.stats {
            prop_assert!((s.label_mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let best: Vec<Vec<f64>> = fm.stats.iter().map(|s| s.label_mean.clone()).collect();
        let mut rng = SeedStream::new(seed).stream("perturb");
        for j in 0..best.len() {
            for _ in 0..100 {
                let mut cand = best.clone();
                let noise: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
                let eps = rng.gen_range(0.0..0.5);
                let ns: f64 = noise.iter().sum();
                for (c, e) in cand[j].iter_mut().zip(&noise) {
                    *c = (1.0 - eps) * *c + eps * e / ns;
                }
                prop_assert!(fm.risk_of(&cand) >= fm.risk - 1e-12);
            }
        }
    }
}
