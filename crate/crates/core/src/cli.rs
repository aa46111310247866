//! The `facile` command-line tool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{digests, DataSource, RunConfig, StageSeeds};
use crate::data::LabeledInstance;
use crate::diagnostics::{
    estimate_central_condition, estimate_relative_lipschitz, run_risk_experiment, CentralConditionEstimate,
    LipschitzEstimate, LipschitzPair, RiskCurve, SetModel,
};
use crate::error::{Error, Result};
use crate::eval::{LogisticRegression, LrConfig};
use crate::models::ModelCheckpoint;
use crate::pipeline::{
    build_dictionary, embed_instances, evaluate_encoder, pretrain_coarse, PretrainMethod, RunManifest,
};
use crate::selftest::run_selftest;
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "facile", version, about = "Coarse-to-fine pretraining, few-shot evaluation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat JSON config with dotted keys; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for task-parallel evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Generate (or load) the datasets and coarse sets; write them with digests.
    GenData,
    /// Pretrain an encoder on coarse sets; write checkpoint.json and manifest.json.
    Pretrain,
    /// Evaluate out/checkpoint.json on few-shot tasks; write summary.json and tasks.csv.
    Evaluate,
    /// Fit excess-risk curves under each configured growth of m with n.
    RiskCurve,
    /// Central-condition and relative-Lipschitz estimates.
    Diagnose,
    /// Run the built-in property checks.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Evaluate => "evaluate",
            Command::RiskCurve => "risk-curve",
            Command::Diagnose => "diagnose",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Serialize)]
struct CommandManifest<'a> {
    command: &'a str,
    version: &'a str,
    created_unix: u64,
    seeds: StageSeeds,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrain: Option<&'a RunManifest>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_manifest(out: &Path, cmd: Command, cfg: &RunConfig, pretrain: Option<&RunManifest>) -> Result<()> {
    let file = match cmd {
        Command::Pretrain => "manifest.json".to_string(),
        other => format!("manifest-{}.json", other.name()),
    };
    let m = CommandManifest {
        command: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        created_unix: now_unix(),
        seeds: cfg.seeds(),
        config: cfg,
        pretrain,
    };
    write_json(&out.join(file), &m)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Selftest = cli.command {
        return selftest();
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let out = cli.out.as_path();
    let pretrain_manifest = match cli.command {
        Command::GenData => gen_data(&cfg, out).map(|()| None),
        Command::Pretrain => pretrain(&cfg, out).map(Some),
        Command::Evaluate => evaluate(&cfg, out).map(|()| None),
        Command::RiskCurve => risk_curve(&cfg, out).map(|()| None),
        Command::Diagnose => diagnose_command(&cfg, out).map(|()| None),
        Command::Selftest => unreachable!("handled above"),
    }?;
    write_manifest(out, cli.command, &cfg, pretrain_manifest.as_ref())
}

fn selftest() -> Result<()> {
    let outcomes = run_selftest();
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(()) => println!("PASS {}", o.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}: {msg}", o.name);
            }
        }
    }
    println!("selftest: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} selftest checks failed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct DataSummary {
    source: DataSource,
    train_instances: usize,
    test_instances: usize,
    digests: Vec<(String, String)>,
    coarse_sets: usize,
    coarse_classes: usize,
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let coarse = cfg.build_coarse(&train)?;
    if cfg.data.source == DataSource::Synthetic {
        let mut splits = BTreeMap::new();
        splits.insert("train", &train);
        splits.insert("test", &test);
        write(&out.join("data.json"), &serde_json::to_string(&splits)?)?;
        write(&out.join("coarse.json"), &serde_json::to_string(&coarse)?)?;
    }
    let summary = DataSummary {
        source: cfg.data.source,
        train_instances: train.len(),
        test_instances: test.len(),
        digests: digests(&train, &test),
        coarse_sets: coarse.len(),
        coarse_classes: coarse.num_classes(),
    };
    write_json(&out.join("data_summary.json"), &summary)?;
    for (name, d) in &summary.digests {
        println!("{name}: {d}");
    }
    Ok(())
}

fn pretrain(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let (train, test) = cfg.load_data()?;
    let coarse = cfg.build_coarse(&train)?;
    let spec = cfg.pretrain_spec();
    let result = pretrain_coarse(&spec, &coarse)?;
    let ckpt = ModelCheckpoint::encoder_only(spec.encoder.clone(), &result.encoder)?;
    let ckpt_path = out.join("checkpoint.json");
    ckpt.save(&ckpt_path)?;
    let seeds = cfg.seeds();
    println!(
        "pretrained {:?}: {} steps, final loss {:?}",
        spec.method,
        result.steps,
        result.final_loss()
    );
    Ok(RunManifest {
        spec,
        data_seed: seeds.data,
        coarse_seed: seeds.coarse,
        dataset_digests: digests(&train, &test),
        final_coarse_loss: result.final_loss(),
        steps: result.steps,
        checkpoint: Some(ckpt_path.display().to_string()),
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: now_unix(),
    })
}

fn evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&out.join("checkpoint.json"))?;
    let encoder = &ckpt.header.encoder;
    let (train, test) = cfg.load_data()?;
    let seed = cfg.seeds().eval;
    let dict = if cfg.eval.arms.iter().any(|a| a.la) {
        let pool: Vec<Vec<f64>> = train.into_iter().map(|i| i.features).collect();
        Some(build_dictionary(encoder, &ckpt.params, &pool, &cfg.eval.la, seed)?)
    } else {
        None
    };
    let report = evaluate_encoder(encoder, &ckpt.params, &test, &cfg.eval, dict.as_ref(), seed)?;
    report.write(out)?;
    for (arm, s) in &report.summary {
        println!("{arm}: F1 {:.4} ± {:.4}, ACC {:.4}", s.mean_f1, s.ci95, s.mean_acc);
    }
    Ok(())
}

#[derive(Serialize)]
struct RiskSummary {
    gamma: f64,
    log_c: f64,
    residual_rms: f64,
}

fn risk_curve(cfg: &RunConfig, out: &Path) -> Result<()> {
    let risk = cfg.risk_config()?;
    if cfg.risk.growths.is_empty() {
        return Err(Error::Config("risk.growths is empty".into()));
    }
    let mut csv = String::from("growth,n,m,error\n");
    let mut summary = BTreeMap::new();
    for &growth in &cfg.risk.growths {
        let curve: RiskCurve = run_risk_experiment(growth, &cfg.risk.n_grid, &risk, cfg.seed)?;
        let name = serde_json::to_value(growth)?.as_str().unwrap_or_default().to_string();
        for p in &curve.points {
            let _ = writeln!(csv, "{name},{},{},{}", p.n, p.m, p.error);
        }
        println!("{name}: gamma {:.4}", curve.gamma);
        summary.insert(
            name,
            RiskSummary {
                gamma: curve.gamma,
                log_c: curve.log_c,
                residual_rms: curve.residual_rms,
            },
        );
    }
    write(&out.join("risk_curve.csv"), &csv)?;
    write_json(&out.join("risk_summary.json"), &summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct CentralReport {
    pub lambdas: Vec<f64>,
    /// Mean held-out loss of each candidate head.
    pub mean_losses: Vec<f64>,
    pub fstar_lambda: f64,
    pub estimate: CentralConditionEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub note: String,
    pub central: CentralReport,
    pub lipschitz: LipschitzEstimate,
}

const DIAGNOSTICS_NOTE: &str = "Empirical proxies only. The rate exponents and class constants of the \
transfer bound have no measurable counterpart and are not reported. The Lipschitz value uses trained \
set heads in place of exact minimizers.";

/// Per-row cross-entropy of a fitted logistic-regression head.
fn lr_losses(lr: &LogisticRegression, z: &Tensor, labels: &[usize]) -> Vec<f64> {
    let s = lr.scores(z);
    s.row_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .collect()
}

fn fine_labels(data: &[LabeledInstance]) -> (Vec<usize>, usize) {
    let labels: Vec<usize> = data.iter().map(|i| i.fine_label).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (labels, k)
}

/// Pretrains two set models from different initializations and measures the
/// central condition over fine heads of the first, and the relative
/// Lipschitz constant between the two.
pub fn run_diagnostics(cfg: &RunConfig) -> Result<DiagnosticsReport> {
    if cfg.pretrain.method != PretrainMethod::FacileFsp {
        return Err(Error::Config("diagnose needs a facile_fsp set head".into()));
    }
    if cfg.diagnose.lambdas.is_empty() || cfg.diagnose.pairs == 0 {
        return Err(Error::Config("diagnose.lambdas and diagnose.pairs must be nonempty".into()));
    }
    let (train, test) = cfg.load_data()?;
    let coarse = cfg.build_coarse(&train)?;
    let spec_a = cfg.pretrain_spec();
    let mut spec_b = spec_a.clone();
    spec_b.seed = spec_a.seed.wrapping_add(1);
    let a = pretrain_coarse(&spec_a, &coarse)?;
    let b = pretrain_coarse(&spec_b, &coarse)?;

    let (train_y, k) = fine_labels(&train);
    let (test_y, _) = fine_labels(&test);
    let z_train = embed_instances(&spec_a.encoder, &a.encoder, &train)?;
    let z_test = embed_instances(&spec_a.encoder, &a.encoder, &test)?;
    let heads = cfg
        .diagnose
        .lambdas
        .iter()
        .map(|&lambda| {
            let lr_cfg = LrConfig {
                lambda,
                ..cfg.eval.classifier.lr
            };
            LogisticRegression::fit(&z_train, &train_y, k, &lr_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<Vec<f64>> = heads.iter().map(|h| lr_losses(h, &z_test, &test_y)).collect();
    let mean_losses: Vec<f64> = losses.iter().map(|l| l.iter().sum::<f64>() / l.len() as f64).collect();
    let best = (0..mean_losses.len())
        .min_by(|&i, &j| mean_losses[i].total_cmp(&mean_losses[j]))
        .expect("nonempty lambdas");
    let estimate = estimate_central_condition(&losses[best], &losses, cfg.diagnose.eta)?;

    let agg_a = a
        .aggregator
        .clone()
        .ok_or_else(|| Error::Contract("pretraining returned no set head".into()))?;
    let agg_b = b
        .aggregator
        .clone()
        .ok_or_else(|| Error::Contract("pretraining returned no set head".into()))?;
    let mut params_a = a.encoder.clone();
    params_a.extend(a.heads.clone());
    let mut params_b = b.encoder.clone();
    params_b.extend(b.heads.clone());
    let model_a = SetModel {
        encoder: &spec_a.encoder,
        aggregator: &agg_a,
        params: &params_a,
    };
    let model_b = SetModel {
        encoder: &spec_b.encoder,
        aggregator: &agg_b,
        params: &params_b,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().eval);
    let hi = cfg.coarse.size_max.min(train.len());
    let pairs: Vec<LipschitzPair> = (0..cfg.diagnose.pairs)
        .map(|_| {
            let size = rng.random_range(cfg.coarse.size_min.min(hi)..=hi);
            let members = sample(&mut rng, train.len(), size).into_vec();
            LipschitzPair {
                set: members.iter().map(|&m| train[m].features.clone()).collect(),
                x: train[members[0]].features.clone(),
                y: train[members[0]].fine_label,
            }
        })
        .collect();
    let f = &heads[best];
    let fine_loss = |z: &[f64], y: usize| -> Result<f64> {
        let row = Tensor::from_rows(&[z])?;
        Ok(lr_losses(f, &row, &[y])[0])
    };
    let lipschitz = estimate_relative_lipschitz(&model_a, &model_b, fine_loss, &pairs, cfg.diagnose.tol)?;
    Ok(DiagnosticsReport {
        note: DIAGNOSTICS_NOTE.to_string(),
        central: CentralReport {
            lambdas: cfg.diagnose.lambdas.clone(),
            mean_losses,
            fstar_lambda: cfg.diagnose.lambdas[best],
            estimate,
        },
        lipschitz,
    })
}

fn diagnose_command(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = run_diagnostics(cfg)?;
    println!("central condition epsilon: {:.6}", report.central.estimate.epsilon);
    match report.lipschitz.estimate {
        Some(l) => println!(
            "relative Lipschitz ({}): {l:.6} over {} disagreements",
            report.lipschitz.label, report.lipschitz.disagreements
        ),
        None => println!("relative Lipschitz: absent (no disagreements)"),
    }
    write_json(&out.join("diagnostics.json"), &report)
}
