//! Command-line front end.
//!
//! Every command reads an [`ExperimentConfig`] (or the stock default),
//! applies flag overrides, validates it, writes the resolved config as
//! `config.resolved.json` into the output directory and then runs.
//!
//! Exit codes: 0 success, 1 other failure (including failed theory checks),
//! 2 config error, 3 missing artifact, 4 partial sweep failure.

mod config;

pub use config::{
    DataSection, EvalSection, ExperimentConfig, NetworkSpec, Overrides, StudentSection, SweepSection,
    TeacherSection, TheorySection, TransformSection, SCHEMA_VERSION,
};

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::datagen::{load_dataset, save_dataset, MixedFeatureDataset, Split};
use crate::error::{Error, Result};
use crate::evalcal::{accuracy, calibration_report, distribution_error_of, fidelity, CalibrationReport};
use crate::netlib::{Checkpoint, Network};
use crate::store::{ensure_dir, write_json};
use crate::theory::{
    lemma3_sweep, verify_lemma1_with, verify_lemma2, theorem_sweep, Lemma1Config, PartialSweep, ScalingCurve,
};
use crate::trainlab::{init_network, train_student, train_teacher, RunRecord, TeacherMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "kdlab", version, about = "Teacher training and distillation on synthetic mixed-feature data")]
pub struct Cli {
    /// Experiment config (JSON); the stock config when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Override the root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the distillation weight on the hard-label term.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Override the distillation temperature.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Override the teacher mode: standard, soteacher, no-lr or no-cr.
    #[arg(long, global = true)]
    pub mode: Option<TeacherMode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the resolved config.
    Config,
    /// Sample the configured dataset and save it to the output directory.
    GenData,
    /// Train a teacher and save its checkpoints.
    TrainTeacher {
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Distill a student from a teacher checkpoint.
    Distill {
        /// Checkpoint directory, or a teacher run directory (latest checkpoint).
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Calibration, accuracy and fidelity of trained networks.
    Evaluate {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the lemma verifiers and a theorem sweep and report pass/fail.
    VerifyTheory,
    /// Run the configured theorem sweep.
    Sweep,
}

enum Failure {
    Lib(Error),
    Partial(PartialSweep),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(Failure::Partial(p)) => {
            eprintln!("error: {p}");
            EXIT_PARTIAL
        }
        Err(Failure::Checks(n)) => {
            eprintln!("error: {n} theory check(s) failed");
            EXIT_FAILURE
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::MissingArtifact(_) => EXIT_MISSING,
        _ => EXIT_FAILURE,
    }
}

/// Loads, overrides, validates and resolves the config named by `cli`.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        alpha: cli.alpha,
        temperature: cli.temperature,
        mode: cli.mode,
    });
    cfg.validate()?;
    cfg.resolve();
    Ok(cfg)
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    if let Command::Config = cli.command {
        let text = serde_json::to_string_pretty(&cfg).map_err(Error::from)?;
        let _ = writeln!(std::io::stdout().lock(), "{text}");
        return Ok(());
    }
    let out = cli.out.as_path();
    ensure_dir(out)?;
    write_json(&out.join("config.resolved.json"), &cfg)?;
    match &cli.command {
        Command::Config => unreachable!(),
        Command::GenData => gen_data(&cfg, out)?,
        Command::TrainTeacher { data } => train_teacher_cmd(&cfg, data.as_deref(), out)?,
        Command::Distill { teacher, data } => distill_cmd(&cfg, teacher, data.as_deref(), out)?,
        Command::Evaluate { teacher, student, data } => {
            evaluate_cmd(&cfg, teacher, student.as_deref(), data.as_deref(), out)?
        }
        Command::VerifyTheory => verify_theory_cmd(&cfg, cli.jobs, out)?,
        Command::Sweep => {
            let sweep = cfg.sweep_config()?;
            match theorem_sweep(&sweep, cli.jobs) {
                Ok(curve) => write_curve(&curve, out)?,
                Err(p) => {
                    write_curve(&p.curve, out)?;
                    return Err(Failure::Partial(p));
                }
            }
        }
    }
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (data, _) = cfg.dataset()?;
    save_dataset(&data, out)?;
    let z = data.vocabulary.as_ref().map_or(0, |v| v.len());
    println!(
        "N={} M={} |Z|={} K={} -> {}",
        data.len(),
        data.patches,
        z,
        data.classes,
        out.display()
    );
    Ok(())
}

/// The dataset from `dir`, or generated from the config together with its
/// training-time transforms. Loaded datasets are never augmented.
fn dataset_for(
    cfg: &ExperimentConfig,
    dir: Option<&Path>,
) -> Result<(MixedFeatureDataset, Option<crate::datagen::TransformSet>)> {
    match dir {
        Some(d) => Ok((load_dataset(d)?, None)),
        None => cfg.dataset(),
    }
}

/// Record checkpoint paths relative to `out` so reruns into different
/// directories produce identical records.
fn relativize(record: &mut RunRecord, out: &Path) {
    for p in &mut record.checkpoints {
        if let Ok(rel) = p.strip_prefix(out) {
            *p = rel.to_path_buf();
        }
    }
}

fn write_record(record: &RunRecord, out: &Path) -> Result<()> {
    record.write_json(&out.join("record.json"))?;
    record.write_csv(&out.join("epochs.csv"))
}

fn train_teacher_cmd(cfg: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<()> {
    let (data, augment) = dataset_for(cfg, data_dir)?;
    let tcfg = cfg.teacher_config(augment);
    let arch = cfg
        .teacher
        .architecture
        .architecture(data.patches, data.patch_dim, data.classes);
    let mut net = init_network(arch, cfg.seed)?;
    let mut record = train_teacher(&mut net, &data, &tcfg, Some(out))?;
    relativize(&mut record, out);
    write_record(&record, out)?;
    println!(
        "teacher ({:?}): train acc {:.4}, test acc {}, {} checkpoint(s)",
        tcfg.mode,
        record.final_train_acc,
        record.final_test_acc.map_or("n/a".into(), |a| format!("{a:.4}")),
        record.checkpoints.len()
    );
    Ok(())
}

/// A checkpoint directory, or the latest checkpoint under a run directory.
pub fn resolve_checkpoint(dir: &Path) -> Result<PathBuf> {
    if dir.join("manifest.json").exists() {
        return Ok(dir.to_path_buf());
    }
    let ckpts = dir.join("checkpoints");
    let mut entries: Vec<PathBuf> = match fs::read_dir(&ckpts) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").exists())
            .collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    entries.pop().ok_or_else(|| Error::MissingArtifact(dir.join("manifest.json")))
}

fn distill_cmd(cfg: &ExperimentConfig, teacher: &Path, data_dir: Option<&Path>, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(&resolve_checkpoint(teacher)?)?;
    let (data, augment) = dataset_for(cfg, data_dir)?;
    let dcfg = cfg.distill_config(augment);
    let arch = cfg
        .student
        .architecture
        .architecture(data.patches, data.patch_dim, data.classes);
    let mut student = init_network(arch, cfg.student_seed())?;
    let record = train_student(&mut student, &ckpt.network, &data, &dcfg)?;
    write_record(&record, out)?;
    Checkpoint {
        network: student,
        epoch: dcfg.epochs,
        seed: cfg.seed,
        config_hash: record.config_hash.clone(),
        buffer: None,
    }
    .save(&out.join("student"))?;
    println!(
        "student (alpha {}, temperature {}): train acc {:.4}, test acc {}",
        dcfg.alpha,
        dcfg.temperature,
        record.final_train_acc,
        record.final_test_acc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    model: &'a str,
    split: &'a str,
    metric: String,
    value: f64,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Holdout => "holdout",
        Split::TemperatureHoldout => "temperature_holdout",
        Split::Test => "test",
    }
}

fn first_split(data: &MixedFeatureDataset, order: &[Split]) -> Option<(Split, MixedFeatureDataset)> {
    order
        .iter()
        .find(|&&s| data.range_of(s).is_some_and(|r| !r.is_empty()))
        .and_then(|&s| data.split(s).ok().map(|d| (s, d)))
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    teacher: &Path,
    student: Option<&Path>,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let t_net = Checkpoint::load(&resolve_checkpoint(teacher)?)?.network;
    let s_net = match student {
        Some(dir) => {
            let dir = if dir.join("student").join("manifest.json").exists() {
                dir.join("student")
            } else {
                resolve_checkpoint(dir)?
            };
            Some(Checkpoint::load(&dir)?.network)
        }
        None => None,
    };
    let (data, _) = dataset_for(cfg, data_dir)?;
    let (cal_split, cal) = first_split(&data, &[Split::Holdout, Split::Test, Split::Train])
        .ok_or_else(|| Error::invalid("dataset has no examples"))?;
    let (_, temp) = first_split(&data, &[Split::TemperatureHoldout, Split::Holdout, Split::Train])
        .ok_or_else(|| Error::invalid("dataset has no examples"))?;
    let (test_split, test) = first_split(&data, &[Split::Test, Split::Holdout, Split::Train])
        .ok_or_else(|| Error::invalid("dataset has no examples"))?;

    let mut rows = Vec::new();
    let mut models: Vec<(&str, &Network)> = vec![("teacher", &t_net)];
    if let Some(s) = &s_net {
        models.push(("student", s));
    }
    let mut test_probs = Vec::new();
    for (name, net) in &models {
        let report = calibrate(net, &cal, &temp, cfg.eval.bins)?;
        write_json(&out.join(format!("{name}_calibration.json")), &report)?;
        let cs = split_name(cal_split);
        for (metric, value) in [
            ("nll", report.nll_raw),
            ("ece", report.ece_raw),
            ("fitted_temperature", report.fitted_temperature),
            ("nll_scaled", report.nll_scaled),
            ("ece_scaled", report.ece_scaled),
        ] {
            rows.push(MetricRow {
                model: name,
                split: cs,
                metric: metric.into(),
                value,
            });
        }
        let probs = net.predict_rows(test.inputs(), test.len(), 512)?.normalized();
        let ts = split_name(test_split);
        rows.push(MetricRow {
            model: name,
            split: ts,
            metric: "accuracy".into(),
            value: accuracy(&probs, test.labels()),
        });
        if test.has_ground_truth() {
            for &norm in &cfg.eval.norms {
                let metric = format!("distribution_error_{}", serde_json::to_value(norm)?.as_str().unwrap_or("?"));
                rows.push(MetricRow {
                    model: name,
                    split: ts,
                    metric,
                    value: distribution_error_of(&probs, &test, norm)?,
                });
            }
        }
        test_probs.push(probs);
    }
    if test_probs.len() == 2 {
        let f = fidelity(&test_probs[1], &test_probs[0])?;
        write_json(&out.join("fidelity.json"), &f)?;
        rows.push(MetricRow {
            model: "student",
            split: split_name(test_split),
            metric: "fidelity".into(),
            value: f.top1_agreement,
        });
    }
    let path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io { path, source: e })?;
    for r in &rows {
        println!("{:8} {:20} {:28} {:.6}", r.model, r.split, r.metric, r.value);
    }
    Ok(())
}

fn calibrate(net: &Network, eval: &MixedFeatureDataset, temp: &MixedFeatureDataset, bins: usize) -> Result<CalibrationReport> {
    let logits = |d: &MixedFeatureDataset| -> Result<crate::tensor::Tensor> {
        // log of the simplex-normalized head output
        let p = net.predict_rows(d.inputs(), d.len(), 512)?.normalized();
        Ok(crate::tensor::Tensor::from_raw(
            p.shape().to_vec(),
            p.data().iter().map(|v| v.max(1e-300).ln()).collect(),
        ))
    };
    calibration_report(&logits(eval)?, eval.labels(), &logits(temp)?, temp.labels(), bins)
}

fn write_curve(curve: &ScalingCurve, out: &Path) -> Result<()> {
    curve.write_csv(&out.join("curve.csv"))?;
    curve.write_json(&out.join("curve.json"))?;
    curve.write_csv(&out.join("results.csv"))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

/// Fraction-of-seeds rule: `count` of `total` seeds must agree.
fn majority(count: usize, total: usize) -> bool {
    2 * count > total
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn verify_theory_cmd(cfg: &ExperimentConfig, jobs: usize, out: &Path) -> std::result::Result<(), Failure> {
    let th = &cfg.theory;
    let mut checks = Vec::new();

    let (data, _) = cfg.dataset()?;
    let train = data.split(Split::Train)?;
    let mut l1 = Lemma1Config::new(th.lemma1_steps, th.lemma1_learning_rate);
    l1.seed = cfg.seed;
    let r1 = verify_lemma1_with(&train, &l1)?;
    write_json(&out.join("lemma1.json"), &r1)?;
    checks.push(CheckResult {
        check: "lemma1_max_gap".into(),
        value: r1.max_gap,
        threshold: format!("< {}", th.lemma1_tolerance),
        pass: r1.max_gap < th.lemma1_tolerance,
    });

    let vocab = data
        .vocabulary
        .clone()
        .ok_or(Error::NoGroundTruth)?;
    let r2 = verify_lemma2(&vocab, &th.lemma2_grid, data.patches, &th.lemma2_seeds)?;
    write_json(&out.join("lemma2.json"), &r2)?;
    checks.push(CheckResult {
        check: "lemma2_slope".into(),
        value: r2.slope,
        threshold: format!("-0.5 +/- {}", th.lemma2_slope_tolerance),
        pass: (r2.slope + 0.5).abs() <= th.lemma2_slope_tolerance,
    });

    let r3 = lemma3_sweep(&th.lemma3_vocab, &th.lemma3_features, th.lemma3_patches, th.lemma3_n, &th.lemma3_seeds)?;
    write_json(&out.join("lemma3.json"), &r3)?;
    let ok3 = (0..th.lemma3_seeds.len())
        .filter(|&s| nonincreasing(&r3.iter().map(|p| p.per_seed[s]).collect::<Vec<_>>()))
        .count();
    checks.push(CheckResult {
        check: "lemma3_gap_nonincreasing_in_features".into(),
        value: ok3 as f64,
        threshold: format!("majority of {} seeds", th.lemma3_seeds.len()),
        pass: majority(ok3, th.lemma3_seeds.len()),
    });

    let sweep = cfg.sweep_config()?;
    let curve = match theorem_sweep(&sweep, jobs) {
        Ok(c) => c,
        Err(p) => {
            write_curve(&p.curve, out)?;
            return Err(Failure::Partial(p));
        }
    };
    write_curve(&curve, out)?;
    let ok4 = sweep
        .seeds
        .iter()
        .filter(|&&s| nonincreasing(&curve.per_seed(s)))
        .count();
    checks.push(CheckResult {
        check: format!("theorem_error_nonincreasing_in_{}", sweep.parameter.name()),
        value: ok4 as f64,
        threshold: format!("majority of {} seeds", sweep.seeds.len()),
        pass: majority(ok4, sweep.seeds.len()),
    });

    write_json(&out.join("theory.json"), &checks)?;
    let path = out.join("theory.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    for c in &checks {
        w.serialize(c).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::Io { path, source: e })?;
    for c in &checks {
        println!("{} {} = {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.check, c.value, c.threshold);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}
