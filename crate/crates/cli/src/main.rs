//! `sb`: command-line front end for data generation, training, evaluation,
//! attacks, theory checks and experiment runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use slabbench::attacks::{adversarial_train, class_uaps, uap, AttackConfig, Norm, UapConfig};
use slabbench::datagen::{generate_dataset, load_dataset, save_dataset, DatasetSpec, PresetOptions};
use slabbench::harness::{
    emit_report, rerun, run_experiment, ExperimentConfig, ExperimentKind, RunManifest,
};
use slabbench::metrics::{evaluate, robust_accuracy, RobustEntry};
use slabbench::mlp::{
    init_model, load_model, save_model, train, Activation, Arch, LossKind, ModelOptions,
    OptimizerSpec, TrainConfig,
};
use slabbench::theory::{verify_theorem, TheoremConfig};

#[derive(Parser)]
#[command(name = "sb", version, about = "Simplicity-bias benchmark on synthetic slab data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset and write `<out>.bin` / `<out>.json`.
    Gen(GenArgs),
    /// Train a network on a saved dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint: standard, randomized and robust metrics.
    Eval(EvalArgs),
    /// Compute a universal adversarial perturbation against a checkpoint.
    Uap(UapArgs),
    /// PGD adversarial training on a saved dataset.
    Advtrain(AdvArgs),
    /// Check the one-hidden-layer trajectory on LSN data.
    Theory(TheoryArgs),
    /// Run an experiment and write its report.
    Run(RunArgs),
    /// Re-emit (or re-run and verify) the report of a manifest.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Preset name, e.g. `lms-5`, `^lms-7`, `ms-(5,7)`, `advms`, `lsn`.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 50)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    noise_p: Option<f64>,
    #[arg(long)]
    rotation_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainOpts {
    /// Architecture as WIDTHxDEPTH.
    #[arg(long, default_value = "100x1")]
    arch: String,
    #[arg(long, default_value = "relu")]
    activation: String,
    /// Optimizer as `sgd:LR`, `adam:LR` or `rmsprop:LR`.
    #[arg(long, default_value = "sgd:0.1")]
    optimizer: String,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value = "logistic")]
    loss: String,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Early-stopping threshold on the epoch loss; negative disables it.
    #[arg(long, default_value_t = 1e-2)]
    early_stop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOpts {
    fn build(&self) -> Result<(Arch, ModelOptions, TrainConfig)> {
        let arch = Arch::parse(&self.arch)?;
        let mut optimizer = OptimizerSpec::parse(&self.optimizer)?;
        if let Some(m) = self.momentum {
            optimizer = optimizer.with_momentum(m);
        }
        if let Some(w) = self.weight_decay {
            optimizer = optimizer.with_weight_decay(w);
        }
        let cfg = TrainConfig {
            loss: LossKind::parse(&self.loss)?,
            optimizer,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout: self.dropout,
            seed: slabbench::seed::derive(self.seed, "train"),
            early_stop_loss: (self.early_stop >= 0.0).then_some(self.early_stop),
            ..TrainConfig::default()
        };
        cfg.validate()?;
        let opts = ModelOptions {
            activation: Activation::parse(&self.activation)?,
            ..ModelOptions::default()
        };
        Ok((arch, opts, cfg))
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset stem written by `sb gen`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackOpts {
    #[arg(long, default_value = "l2")]
    norm: String,
    #[arg(long, default_value_t = 40)]
    pgd_steps: usize,
    /// Step size; defaults to 2.5 * budget / steps.
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

impl AttackOpts {
    fn build(&self, budget: f64, seed: u64) -> Result<AttackConfig> {
        let steps = self.pgd_steps.max(1);
        let cfg = AttackConfig {
            norm: Norm::parse(&self.norm)?,
            budget,
            steps,
            step_size: self.step_size.unwrap_or(2.5 * budget / steps as f64),
            restarts: self.restarts,
            seed,
            monotone: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Feature groups to randomize (`S`, `Sc`, `linear`, `x3`, ...).
    #[arg(long, value_delimiter = ',', default_value = "S,Sc")]
    groups: Vec<String>,
    /// Budgets for robust accuracy.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<f64>,
    #[command(flatten)]
    attack: AttackOpts,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct UapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "l2")]
    norm: String,
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    /// One perturbation per class instead of a single shared one.
    #[arg(long)]
    class_conditional: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result as JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdvArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    eps: f64,
    #[command(flatten)]
    attack: AttackOpts,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    /// JSON theorem configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_log_power: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    experiment: Option<String>,
    /// JSON experiment configuration; missing fields take the experiment's
    /// defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Re-run the experiment and fail unless every number is reproduced.
    #[arg(long)]
    verify: bool,
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_data(stem: &Path) -> Result<slabbench::datagen::Dataset> {
    load_dataset(stem).with_context(|| format!("loading dataset {}", stem.display()))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let defaults = PresetOptions::default();
    let opts = PresetOptions {
        d: a.d,
        gamma: a.gamma.unwrap_or(defaults.gamma),
        noise_p: a.noise_p.unwrap_or(defaults.noise_p),
        rotation_seed: a.rotation_seed,
        ..defaults
    };
    let spec = DatasetSpec::preset(&a.preset, &opts)?;
    let data = generate_dataset(&spec, a.n, a.seed)?;
    save_dataset(&data, &a.out)?;
    eprintln!("wrote {} rows x {} columns to {}", data.len(), data.dim(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let (arch, opts, cfg) = a.opts.build()?;
    let model = init_model(data.dim(), arch, &opts, slabbench::seed::derive(a.opts.seed, "init"))?;
    let (model, hist) = train(&model, &data, &cfg)?;
    hist.check()?;
    save_model(&model, &a.out)?;
    print_json(&serde_json::json!({
        "epochs": hist.epochs,
        "steps": hist.steps,
        "final_loss": hist.final_loss(),
        "stopped_early": hist.stopped_early,
    }))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let mut report = evaluate(&model, &data, &a.groups, &[], &AttackConfig::default(), a.repeats, a.seed)?;
    for &b in &a.budgets {
        let at = a.attack.build(b, a.seed)?;
        report.robust.push(RobustEntry {
            norm: at.norm,
            budget: b,
            accuracy: robust_accuracy(&model, &data, &at)?,
        });
    }
    print_json(&report)
}

fn cmd_uap(a: UapArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let cfg = UapConfig {
        attack: AttackConfig {
            norm: Norm::parse(&a.norm)?,
            budget: a.budget,
            steps: a.steps,
            step_size: a.step_size,
            restarts: 1,
            seed: a.seed,
            monotone: false,
        },
        batch_size: a.batch_size,
    };
    let json = if a.class_conditional {
        serde_json::to_string_pretty(&class_uaps(&model, &data, &cfg)?)?
    } else {
        serde_json::to_string_pretty(&uap(&model, &data, &cfg)?)?
    };
    if let Some(p) = &a.out {
        fs::write(p, format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_advtrain(a: AdvArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let (arch, opts, cfg) = a.opts.build()?;
    let model = match &a.init {
        Some(p) => load_model(p)?,
        None => init_model(data.dim(), arch, &opts, slabbench::seed::derive(a.opts.seed, "init"))?,
    };
    let attack = a.attack.build(a.eps, slabbench::seed::derive(a.opts.seed, "attack"))?;
    let (model, hist) = adversarial_train(&model, &data, &attack, &cfg)?;
    hist.check()?;
    save_model(&model, &a.out)?;
    print_json(&serde_json::json!({
        "epochs": hist.epochs,
        "steps": hist.steps,
        "final_loss": hist.final_loss(),
    }))
}

fn cmd_theory(a: TheoryArgs) -> Result<()> {
    let mut cfg: TheoremConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(slabbench::Error::from)?,
        None => TheoremConfig::default(),
    };
    cfg.d = a.d.unwrap_or(cfg.d);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.eta = a.eta.unwrap_or(cfg.eta);
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.init_log_power = a.init_log_power.unwrap_or(cfg.init_log_power);
    let report = verify_theorem(&cfg)?;
    eprintln!(
        "{}",
        if report.passed() { "all trajectory checks passed" } else { "trajectory checks violated" }
    );
    print_json(&report)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let cfg = match (&a.config, &a.experiment) {
        (Some(p), exp) => {
            let text = fs::read_to_string(p)?;
            let mut v: serde_json::Value =
                serde_json::from_str(&text).map_err(slabbench::Error::from)?;
            if let Some(e) = exp {
                v["experiment"] = serde_json::Value::String(ExperimentKind::parse(e)?.as_str().into());
            }
            ExperimentConfig::from_json(&v.to_string())?
        }
        (None, Some(e)) => ExperimentConfig::defaults(ExperimentKind::parse(e)?),
        (None, None) => {
            return Err(slabbench::Error::Spec("pass --experiment or --config".into()).into())
        }
    };
    if a.print_config {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| slabbench::Error::Spec("pass --out or set output_dir".into()))?;
    let manifest = run_experiment(&cfg)?;
    for p in emit_report(&manifest, &out)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    if a.verify {
        let again = rerun(&manifest)?;
        if !again.same_results(&manifest) {
            return Err(slabbench::Error::Spec("re-run did not reproduce the manifest".into()).into());
        }
        eprintln!("re-run reproduced all {} runs", manifest.runs.len());
    }
    for p in emit_report(&manifest, &a.out)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

/// 2 for configuration errors, 3 for numerical divergence, 4 for I/O.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(se) = cause.downcast_ref::<slabbench::Error>() {
            return se.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Uap(a) => cmd_uap(a),
        Cmd::Advtrain(a) => cmd_advtrain(a),
        Cmd::Theory(a) => cmd_theory(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
