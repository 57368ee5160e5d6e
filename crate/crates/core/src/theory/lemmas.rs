use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{sample_dataset, FeatureVocabulary, MixedFeatureDataset, TransformSet, VocabularySpec};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::{lr_at, sgd_step, softmax_row, Graph, OptimizerConfig, Parameter, Tensor};

/// Per-feature label statistics. Every average weights an input by the
/// number of its patch slots that carry the feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature: usize,
    /// Number of inputs containing the feature.
    pub n_z: usize,
    /// Number of patch slots carrying the feature.
    pub slots: usize,
    /// Mean one-hot label, `ȳ_z`.
    pub label_mean: Vec<f64>,
    /// Mean true label distribution of the inputs containing the feature.
    pub true_mean: Vec<f64>,
    /// The feature's own label distribution, when the vocabulary is known.
    pub feature_distribution: Option<Vec<f64>>,
}

/// Statistics of every feature that occurs at least once.
pub fn feature_stats(data: &MixedFeatureDataset) -> Result<Vec<FeatureStat>> {
    if !data.has_ground_truth() {
        return Err(Error::NoGroundTruth);
    }
    let k = data.classes;
    let z_count = match &data.vocabulary {
        Some(v) => v.len(),
        None => (0..data.len())
            .flat_map(|i| data.feature_names(i).expect("ground truth").iter().copied())
            .max()
            .map_or(0, |z| z + 1),
    };
    let mut slots = vec![0usize; z_count];
    let mut n_z = vec![0usize; z_count];
    let mut labels = vec![0.0; z_count * k];
    let mut truth = vec![0.0; z_count * k];
    let mut seen = vec![0usize; z_count];
    for i in 0..data.len() {
        let names = data.feature_names(i).expect("ground truth");
        let p = data.true_distribution(i).expect("ground truth");
        let y = data.label(i);
        for &z in names {
            slots[z] += 1;
            if seen[z] != i + 1 {
                seen[z] = i + 1;
                n_z[z] += 1;
            }
            labels[z * k + y] += 1.0;
            for (t, pk) in truth[z * k..(z + 1) * k].iter_mut().zip(p) {
                *t += pk;
            }
        }
    }
    Ok((0..z_count)
        .filter(|&z| slots[z] > 0)
        .map(|z| {
            let s = slots[z] as f64;
            FeatureStat {
                feature: z,
                n_z: n_z[z],
                slots: slots[z],
                label_mean: labels[z * k..(z + 1) * k].iter().map(|c| c / s).collect(),
                true_mean: truth[z * k..(z + 1) * k].iter().map(|c| c / s).collect(),
                feature_distribution: data
                    .vocabulary
                    .as_ref()
                    .map(|v| v.features[z].label_distribution.clone()),
            }
        })
        .collect())
}

/// Closed-form minimizer of the regrouped empirical risk under an invariant
/// extractor with the modified softmax head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMinimizer {
    pub stats: Vec<FeatureStat>,
    pub n: usize,
    pub patches: usize,
    /// Empirical risk attained by `p_z = ȳ_z`.
    pub risk: f64,
}

impl FeatureMinimizer {
    /// Risk attained by per-feature predictions `candidate[j]` for
    /// `stats[j]`.
    pub fn risk_of(&self, candidate: &[Vec<f64>]) -> f64 {
        regrouped_risk(&self.stats, candidate, self.n, self.patches)
    }
}

/// `−(1/(N·M)) Σ_z Σ_k C_{z,k} log p_{z,k}` where `C_{z,k}` counts the
/// slots carrying `z` in inputs labelled `k`.
pub fn regrouped_risk(stats: &[FeatureStat], candidate: &[Vec<f64>], n: usize, patches: usize) -> f64 {
    let mut total = 0.0;
    for (s, p) in stats.iter().zip(candidate) {
        for (y, q) in s.label_mean.iter().zip(p) {
            if *y > 0.0 {
                total -= s.slots as f64 * y * q.ln();
            }
        }
    }
    total / (n * patches) as f64
}

pub fn feature_minimizer(data: &MixedFeatureDataset) -> Result<FeatureMinimizer> {
    let stats = feature_stats(data)?;
    let best: Vec<Vec<f64>> = stats.iter().map(|s| s.label_mean.clone()).collect();
    let risk = regrouped_risk(&stats, &best, data.len(), data.patches);
    Ok(FeatureMinimizer {
        stats,
        n: data.len(),
        patches: data.patches,
        risk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Config {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Width of the per-feature vectors; at least `K`.
    pub dim: usize,
    pub seed: u64,
    /// Record the gap every this many steps.
    pub log_every: usize,
}

impl Lemma1Config {
    pub fn new(steps: usize, learning_rate: f64) -> Self {
        Self {
            steps,
            learning_rate,
            momentum: 0.9,
            dim: 0,
            seed: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// `max_z ‖p_trained(z) − ȳ_z‖∞`.
    pub max_gap: f64,
    pub gaps: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub optimal_risk: f64,
    /// `(step, max gap)` pairs.
    pub gap_trace: Vec<(usize, f64)>,
}

pub fn verify_lemma1(data: &MixedFeatureDataset, steps: usize, lr: f64) -> Result<Lemma1Report> {
    let mut cfg = Lemma1Config::new(steps, lr);
    cfg.seed = data.seed.unwrap_or(0);
    verify_lemma1_with(data, &cfg)
}

/// Trains a lookup-table extractor (one free vector per feature) with a
/// shared bias-free classifier and the modified softmax head, full batch,
/// and compares its per-feature predictions with `ȳ_z`.
pub fn verify_lemma1_with(data: &MixedFeatureDataset, cfg: &Lemma1Config) -> Result<Lemma1Report> {
    let minimizer = feature_minimizer(data)?;
    let k = data.classes;
    let m = data.patches;
    let n = data.len();
    let z_count = minimizer.stats.iter().map(|s| s.feature + 1).max().unwrap_or(0);
    if n == 0 || z_count == 0 {
        return Err(Error::invalid("lemma 1 needs a nonempty dataset"));
    }
    let d = cfg.dim.max(k);

    let mut lookup = vec![0.0; n * m * z_count];
    for i in 0..n {
        for (slot, &z) in data.feature_names(i).expect("ground truth").iter().enumerate() {
            lookup[(i * m + slot) * z_count + z] = 1.0;
        }
    }
    let lookup = Tensor::new(vec![n * m, z_count], lookup)?;
    let mut onehot = vec![0.0; n * k];
    for i in 0..n {
        onehot[i * k + data.label(i)] = 1.0;
    }
    let onehot = Tensor::new(vec![n, k], onehot)?;

    let mut rng = SeedStream::new(cfg.seed).stream("init");
    let mut init = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::from_raw(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect(),
        )
    };
    let mut params = vec![
        Parameter::new("table", init(z_count, d)),
        Parameter::new("classifier", init(k, d)),
    ];
    let opt = OptimizerConfig {
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        weight_decay: 0.0,
        decay_milestones: vec![],
        decay_factor: 1.0,
    };
    opt.validate()?;

    let gaps_of = |params: &[Parameter]| -> Vec<(usize, f64)> {
        let table = &params[0].tensor;
        let w = &params[1].tensor;
        minimizer
            .stats
            .iter()
            .map(|s| {
                let e = table.row(s.feature);
                let mut logits: Vec<f64> = (0..k)
                    .map(|c| w.row(c).iter().zip(e).map(|(a, b)| a * b).sum())
                    .collect();
                softmax_row(&mut logits);
                let gap = logits
                    .iter()
                    .zip(&s.label_mean)
                    .map(|(p, y)| (p - y).abs())
                    .fold(0.0, f64::max);
                (s.feature, gap)
            })
            .collect()
    };

    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    let mut loss = f64::NAN;
    for step in 0..cfg.steps {
        let mut g = Graph::new();
        let t = g.param(0, params[0].tensor.clone());
        let w = g.param(1, params[1].tensor.clone());
        let o = g.input(lookup.clone());
        let h = g.matmul(o, t)?;
        let logits = g.matmul_t(h, w)?;
        let per_patch = g.log_softmax(logits)?;
        let log_f = g.group_mean(per_patch, m)?;
        let y = g.input(onehot.clone());
        let picked = g.mul(log_f, y)?;
        let s = g.sum(picked)?;
        let l = g.scale(s, -1.0 / n as f64)?;
        loss = g.value(l).item();
        if loss > prev {
            rising += 1;
            if rising >= 10 {
                return Err(Error::Diverged {
                    epoch: step,
                    batch: 0,
                    detail: format!("loss rose for 10 consecutive steps, now {loss}"),
                });
            }
        } else {
            rising = 0;
        }
        prev = loss;
        let grads = g.backward(l)?;
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            let gap = gaps_of(&params).iter().map(|g| g.1).fold(0.0, f64::max);
            trace.push((step, gap));
        }
        sgd_step(&mut params, &grads, lr_at(step, &opt), &opt)?;
    }
    let gaps = gaps_of(&params);
    let max_gap = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    trace.push((cfg.steps, max_gap));
    Ok(Lemma1Report {
        max_gap,
        gaps,
        final_loss: loss,
        optimal_risk: minimizer.risk,
        gap_trace: trace,
    })
}

/// Mean over occurring features of `‖ȳ_z − p̄(·|z)‖₂`.
pub fn lemma2_deviation(data: &MixedFeatureDataset) -> Result<f64> {
    let stats = feature_stats(data)?;
    if stats.is_empty() {
        return Ok(0.0);
    }
    Ok(stats
        .iter()
        .map(|s| {
            s.label_mean
                .iter()
                .zip(&s.true_mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / stats.len() as f64)
}

/// Chebyshev radius `√((K − 1) / (N_z·δ))` for the L2 deviation of a mean
/// of `N_z` one-hot labels.
pub fn chebyshev_envelope(classes: usize, n_z: usize, delta: f64) -> f64 {
    ((classes as f64 - 1.0) / (n_z as f64 * delta)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Point {
    pub n: usize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub points: Vec<Lemma2Point>,
    /// Least-squares slope of `log mean` against `log N`.
    pub slope: f64,
}

/// Measures the label-mean deviation over a grid of dataset sizes.
pub fn verify_lemma2(vocab: &FeatureVocabulary, n_grid: &[usize], m: usize, seeds: &[u64]) -> Result<Lemma2Report> {
    if seeds.is_empty() || n_grid.is_empty() {
        return Err(Error::invalid("lemma 2 needs at least one N and one seed"));
    }
    let identity = TransformSet::identity(vocab);
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let per_seed = seeds
            .iter()
            .map(|&s| lemma2_deviation(&sample_dataset(vocab, n, m, &identity, s)?))
            .collect::<Result<Vec<f64>>>()?;
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        points.push(Lemma2Point { n, per_seed, mean });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    Ok(Lemma2Report {
        slope: fit_loglog_slope(&xs, &ys),
        points,
    })
}

/// Least-squares slope of `ln y` on `ln x`; NaN with fewer than two points
/// or any nonpositive value.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 || xs.len() != ys.len() || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    /// `(feature, ‖p̄(·|z) − p_Y(·|z)‖₁)`.
    pub per_feature: Vec<(usize, f64)>,
    pub mean_gap: f64,
    pub max_gap: f64,
}

/// Gap between the average true distribution of the inputs containing each
/// feature and the feature's own label distribution.
pub fn verify_lemma3(data: &MixedFeatureDataset) -> Result<Lemma3Report> {
    if data.vocabulary.is_none() {
        return Err(Error::NoGroundTruth);
    }
    let per_feature: Vec<(usize, f64)> = feature_stats(data)?
        .iter()
        .map(|s| {
            let own = s.feature_distribution.as_ref().expect("vocabulary present");
            let gap = s.true_mean.iter().zip(own).map(|(a, b)| (a - b).abs()).sum();
            (s.feature, gap)
        })
        .collect();
    let mean_gap = if per_feature.is_empty() {
        0.0
    } else {
        per_feature.iter().map(|p| p.1).sum::<f64>() / per_feature.len() as f64
    };
    let max_gap = per_feature.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(Lemma3Report {
        per_feature,
        mean_gap,
        max_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Point {
    pub features: usize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

/// Mean Lemma-3 gap over a grid of vocabulary sizes at fixed `M`; each seed
/// draws its own vocabulary from `spec` and its own dataset of size `n`.
pub fn lemma3_sweep(
    spec: &VocabularySpec,
    z_grid: &[usize],
    m: usize,
    n: usize,
    seeds: &[u64],
) -> Result<Vec<Lemma3Point>> {
    z_grid
        .iter()
        .map(|&features| {
            let spec = VocabularySpec {
                features,
                ..spec.clone()
            };
            let per_seed = seeds
                .iter()
                .map(|&s| {
                    let vocab = spec.build(&mut SeedStream::new(s).stream("vocab"))?;
                    let data = sample_dataset(&vocab, n, m, &TransformSet::identity(&vocab), s)?;
                    Ok(verify_lemma3(&data)?.mean_gap)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
            Ok(Lemma3Point {
                features,
                per_seed,
                mean,
            })
        })
        .collect()
}
