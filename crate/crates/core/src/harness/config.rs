//! Experiment configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attacks::{AttackConfig, Norm, UapConfig};
use crate::datagen::{DatasetSpec, PresetOptions};
use crate::mlp::{Activation, Arch, OptimizerSpec, TrainConfig};
use crate::theory::TheoremConfig;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ExtremeSb,
    Generalization,
    Ensemble,
    AdvSweep,
    Interpolation,
    Theory,
    Uap,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::ExtremeSb,
        Self::Generalization,
        Self::Ensemble,
        Self::AdvSweep,
        Self::Interpolation,
        Self::Theory,
        Self::Uap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExtremeSb => "extreme-sb",
            Self::Generalization => "generalization",
            Self::Ensemble => "ensemble",
            Self::AdvSweep => "adv-sweep",
            Self::Interpolation => "interpolation",
            Self::Theory => "theory",
            Self::Uap => "uap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm || k.as_str().replace('-', "") == norm)
            .ok_or_else(|| Error::spec(format!("unknown experiment `{s}`")))
    }
}

/// One dataset: a preset plus overrides and sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub preset: String,
    #[serde(default)]
    pub options: PresetOptions,
    pub n_train: usize,
    pub n_test: usize,
}

impl DatasetConfig {
    pub fn new(preset: &str, d: usize, n_train: usize, n_test: usize) -> Self {
        Self {
            preset: preset.to_string(),
            options: PresetOptions {
                d,
                ..PresetOptions::default()
            },
            n_train,
            n_test,
        }
    }

    pub fn with_noise(mut self, p: f64) -> Self {
        self.options.noise_p = p;
        self
    }

    pub fn spec(&self) -> Result<DatasetSpec> {
        DatasetSpec::preset(&self.preset, &self.options)
    }

    /// Short label such as `lms-5/d50`.
    pub fn label(&self) -> String {
        format!("{}/d{}", self.preset, self.options.d)
    }
}

/// Hyperparameter grid. Empty lists inherit the base training value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lr: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub weight_decay: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Number of cells kept, stratified over `lr x batch_size`; `None`
    /// keeps the full product.
    pub subsample: Option<usize>,
    /// Fraction of the training set held out for model selection.
    pub validation_frac: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lr: Vec::new(),
            batch_size: Vec::new(),
            weight_decay: Vec::new(),
            momentum: Vec::new(),
            subsample: None,
            validation_frac: 0.2,
        }
    }
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl GridCell {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let optimizer = base
            .optimizer
            .with_lr(self.lr)
            .with_weight_decay(self.weight_decay)
            .with_momentum(self.momentum);
        TrainConfig {
            optimizer,
            batch_size: self.batch_size,
            ..base.clone()
        }
    }
}

impl GridConfig {
    /// The full learning-rate, batch, weight-decay and momentum grid with a
    /// 24-cell stratified subsample.
    pub fn standard() -> Self {
        Self {
            lr: vec![0.001, 0.01, 0.05, 0.1, 0.3],
            batch_size: vec![4, 16, 64, 256],
            weight_decay: vec![0.0, 5e-5, 5e-4],
            momentum: vec![0.0, 0.9, 0.95],
            subsample: Some(24),
            validation_frac: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsample == Some(0) {
            return Err(Error::spec("grid subsample must keep at least one cell"));
        }
        if !(self.validation_frac > 0.0 && self.validation_frac < 1.0) {
            return Err(Error::spec(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_frac
            )));
        }
        Ok(())
    }

    /// Cells in lexicographic `(lr, batch, wd, momentum)` order, optionally
    /// subsampled. Each `lr x batch` stratum gets `subsample / strata` cells
    /// and the remainder goes to randomly chosen strata.
    pub fn cells(&self, base: &TrainConfig, seed: u64) -> Result<Vec<GridCell>> {
        use rand::seq::SliceRandom;
        self.validate()?;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let lrs = or(&self.lr, base.optimizer.lr());
        let batches = if self.batch_size.is_empty() {
            vec![base.batch_size]
        } else {
            self.batch_size.clone()
        };
        let wds = or(&self.weight_decay, weight_decay_of(&base.optimizer));
        let moms = or(&self.momentum, momentum_of(&base.optimizer));
        let inner: Vec<(f64, f64)> = wds
            .iter()
            .flat_map(|&w| moms.iter().map(move |&m| (w, m)))
            .collect();
        let strata: Vec<(f64, usize)> = lrs
            .iter()
            .flat_map(|&l| batches.iter().map(move |&b| (l, b)))
            .collect();
        let total = strata.len() * inner.len();
        let keep = self.subsample.unwrap_or(total).min(total);
        let mut rng = seed::rng(seed::derive(seed, "grid-subsample"));
        let mut quota = vec![keep / strata.len(); strata.len()];
        let mut order: Vec<usize> = (0..strata.len()).collect();
        order.shuffle(&mut rng);
        let mut extra = keep % strata.len();
        // Strata are smaller than the quota only when `keep` is close to
        // `total`; spill the excess over the remaining strata.
        for &s in order.iter().cycle() {
            if extra == 0 {
                break;
            }
            if quota[s] < inner.len() {
                quota[s] += 1;
                extra -= 1;
            }
        }
        let mut out = Vec::with_capacity(keep);
        for (s, &(lr, batch_size)) in strata.iter().enumerate() {
            let mut idx: Vec<usize> = (0..inner.len()).collect();
            idx.shuffle(&mut rng);
            let mut chosen = idx[..quota[s].min(inner.len())].to_vec();
            chosen.sort_unstable();
            for i in chosen {
                let (weight_decay, momentum) = inner[i];
                out.push(GridCell {
                    lr,
                    batch_size,
                    weight_decay,
                    momentum,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::spec("hyperparameter grid is empty"));
        }
        Ok(out)
    }
}

fn weight_decay_of(o: &OptimizerSpec) -> f64 {
    match *o {
        OptimizerSpec::Sgd { weight_decay, .. }
        | OptimizerSpec::Adam { weight_decay, .. }
        | OptimizerSpec::Rmsprop { weight_decay, .. } => weight_decay,
    }
}

fn momentum_of(o: &OptimizerSpec) -> f64 {
    match *o {
        OptimizerSpec::Sgd { momentum, .. } => momentum,
        OptimizerSpec::Adam { .. } | OptimizerSpec::Rmsprop { .. } => 0.0,
    }
}

/// Scores rendered over a 2-D slice through one S and one S^c coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub resolution: usize,
    pub half_width: f64,
    /// Pre-rotation coordinate on the second axis; defaults to the first
    /// S^c coordinate.
    pub coord_b: Option<usize>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            resolution: 41,
            half_width: 1.5,
            coord_b: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Independent permutations per randomized metric.
    pub randomize_repeats: usize,
    pub boundary: Option<BoundaryConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            randomize_repeats: 3,
            boundary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub sizes: Vec<usize>,
    /// Train every member on the same sample instead of its own draw.
    pub shared_data: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 10,
            sizes: vec![1, 3, 5, 10],
            shared_data: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvSweepConfig {
    pub norm: Norm,
    pub epsilons: Vec<f64>,
    /// Standard-training epochs before adversarial training; the resulting
    /// model initializes every budget.
    pub warm_start_epochs: usize,
    /// PGD steps inside the training loop.
    pub train_steps: usize,
    /// PGD steps and restarts used to measure robust accuracy.
    pub eval_steps: usize,
    pub eval_restarts: usize,
    /// Step size as a multiple of `epsilon / steps`.
    pub step_factor: f64,
    /// Reference margins marked in the report.
    pub gamma_s: f64,
    pub gamma_data: f64,
}

impl Default for AdvSweepConfig {
    fn default() -> Self {
        Self {
            norm: Norm::L2,
            epsilons: vec![0.0, 0.1, 0.25, 0.35],
            warm_start_epochs: 0,
            train_steps: 5,
            eval_steps: 20,
            eval_restarts: 1,
            step_factor: 2.5,
            gamma_s: 0.30,
            gamma_data: 0.62,
        }
    }
}

impl AdvSweepConfig {
    pub fn attack(&self, epsilon: f64, steps: usize, restarts: usize, seed: u64) -> AttackConfig {
        AttackConfig {
            norm: self.norm,
            budget: epsilon,
            steps,
            step_size: self.step_factor * epsilon / steps.max(1) as f64,
            restarts,
            seed,
            monotone: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationConfig {
    pub alphas: Vec<f64>,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UapExperimentConfig {
    pub uap: UapConfig,
    /// Presets for which a second, independently trained model receives the
    /// class-conditional perturbations of the first.
    pub transfer_presets: Vec<String>,
    /// Per-preset L2 budgets that override `uap.attack.budget`.
    pub budgets: BTreeMap<String, f64>,
}

impl UapExperimentConfig {
    pub fn budget_for(&self, preset: &str) -> f64 {
        self.budgets
            .iter()
            .find(|(p, _)| p.eq_ignore_ascii_case(preset))
            .map_or(self.uap.attack.budget, |(_, b)| *b)
    }
}

impl Default for UapExperimentConfig {
    fn default() -> Self {
        Self {
            uap: UapConfig::default(),
            transfer_presets: vec!["lms-5".to_string()],
            budgets: BTreeMap::from([("ms-57".to_string(), 0.5)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub datasets: Vec<DatasetConfig>,
    pub archs: Vec<Arch>,
    pub activation: Activation,
    /// Apply a random rotation (seeded per repeat) unless the dataset
    /// options fix one.
    pub rotate: bool,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub repeats: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub eval: EvalConfig,
    pub ensemble: EnsembleConfig,
    pub adv: AdvSweepConfig,
    pub interpolation: InterpolationConfig,
    pub theory: TheoremConfig,
    pub uap: UapExperimentConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            datasets: Vec::new(),
            archs: Vec::new(),
            activation: Activation::Relu,
            rotate: true,
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            repeats: 1,
            seed: 0,
            output_dir: None,
            eval: EvalConfig::default(),
            ensemble: EnsembleConfig::default(),
            adv: AdvSweepConfig::default(),
            interpolation: InterpolationConfig::default(),
            theory: TheoremConfig::default(),
            uap: UapExperimentConfig::default(),
        };
        match kind {
            ExperimentKind::ExtremeSb => Self {
                datasets: vec![
                    DatasetConfig::new("lms-5", 50, 50_000, 10_000),
                    DatasetConfig::new("lms-5", 250, 50_000, 10_000),
                    DatasetConfig::new("ms-57", 50, 50_000, 10_000),
                ],
                archs: vec![Arch::new(2000, 1)],
                eval: EvalConfig {
                    boundary: Some(BoundaryConfig::default()),
                    ..EvalConfig::default()
                },
                ..base
            },
            ExperimentKind::Generalization => Self {
                datasets: vec![DatasetConfig::new("^lms-7", 50, 40_000, 10_000).with_noise(0.1)],
                archs: vec![Arch::new(100, 1)],
                train: TrainConfig {
                    epochs: 100,
                    ..TrainConfig::default()
                },
                grid: GridConfig::standard(),
                ..base
            },
            ExperimentKind::Ensemble => Self {
                datasets: vec![
                    DatasetConfig::new("ms-5", 50, 4_000, 5_000),
                    DatasetConfig::new("^lms-7", 50, 4_000, 5_000).with_noise(0.5),
                ],
                archs: vec![Arch::new(100, 2)],
                ..base
            },
            ExperimentKind::AdvSweep => Self {
                datasets: vec![DatasetConfig::new("advms-57", 20, 6_000, 2_000)],
                archs: vec![Arch::new(1000, 2)],
                train: TrainConfig {
                    epochs: 20,
                    batch_size: 32,
                    early_stop_loss: None,
                    ..TrainConfig::default()
                },
                adv: AdvSweepConfig {
                    warm_start_epochs: 20,
                    ..AdvSweepConfig::default()
                },
                ..base
            },
            ExperimentKind::Interpolation => Self {
                datasets: vec![
                    DatasetConfig::new("ms-7", 10, 10_000, 5_000),
                    DatasetConfig::new("lms-7", 10, 10_000, 5_000),
                ],
                archs: vec![Arch::new(100, 1)],
                ..base
            },
            ExperimentKind::Theory => base,
            ExperimentKind::Uap => Self {
                datasets: vec![
                    DatasetConfig::new("lms-5", 50, 50_000, 10_000),
                    DatasetConfig::new("ms-57", 50, 50_000, 10_000),
                ],
                archs: vec![Arch::new(2000, 1)],
                ..base
            },
        }
    }

    /// Parses JSON, filling absent fields from the defaults of the named
    /// experiment. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let obj = user
            .as_object()
            .ok_or_else(|| Error::spec("experiment config must be a JSON object"))?;
        let kind = match obj.get("experiment") {
            Some(Value::String(s)) => ExperimentKind::parse(s)?,
            Some(_) => return Err(Error::spec("`experiment` must be a string")),
            None => return Err(Error::spec("config is missing `experiment`")),
        };
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        let mut user = user;
        user["experiment"] = Value::String(kind.as_str().to_string());
        merge(&mut merged, user);
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(crate::datagen::sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::spec("repeats must be at least 1"));
        }
        self.train.validate()?;
        self.grid.cells(&self.train, self.seed)?;
        let needs_data = self.experiment != ExperimentKind::Theory;
        if needs_data && self.datasets.is_empty() {
            return Err(Error::spec("experiment needs at least one dataset"));
        }
        if needs_data && self.archs.is_empty() {
            return Err(Error::spec("experiment needs at least one architecture"));
        }
        for d in &self.datasets {
            d.spec()?;
            if d.n_train == 0 || d.n_test == 0 {
                return Err(Error::spec(format!("{}: sample sizes must be positive", d.label())));
            }
        }
        for a in &self.archs {
            if a.width == 0 || a.depth == 0 {
                return Err(Error::spec(format!("architecture {} is empty", a.tag())));
            }
        }
        if self.eval.randomize_repeats == 0 {
            return Err(Error::spec("randomize_repeats must be at least 1"));
        }
        match self.experiment {
            ExperimentKind::Ensemble => {
                let e = &self.ensemble;
                if e.members == 0 || e.sizes.is_empty() {
                    return Err(Error::spec("ensemble needs members and sizes"));
                }
                if let Some(&s) = e.sizes.iter().find(|&&s| s == 0 || s > e.members) {
                    return Err(Error::spec(format!(
                        "ensemble size {s} outside 1..={}",
                        e.members
                    )));
                }
            }
            ExperimentKind::AdvSweep => {
                if self.adv.epsilons.is_empty() {
                    return Err(Error::spec("adversarial sweep needs at least one epsilon"));
                }
                if let Some(e) = self.adv.epsilons.iter().find(|e| !(**e >= 0.0)) {
                    return Err(Error::spec(format!("epsilon must be non-negative, got {e}")));
                }
                if self.adv.train_steps == 0 || self.adv.eval_steps == 0 {
                    return Err(Error::spec("PGD needs at least one step"));
                }
            }
            ExperimentKind::Interpolation => {
                if self.datasets.len() != 2 {
                    return Err(Error::spec(
                        "interpolation needs two datasets: slab pre-training, then fine-tuning",
                    ));
                }
                if self.datasets[0].options.d != self.datasets[1].options.d {
                    return Err(Error::spec("interpolation datasets must share a dimension"));
                }
                if self.interpolation.alphas.is_empty()
                    || self.interpolation.alphas.iter().any(|a| !(0.0..=1.0).contains(a))
                {
                    return Err(Error::spec("interpolation alphas must be a non-empty subset of [0, 1]"));
                }
            }
            ExperimentKind::Theory => {
                crate::theory::TheoremParams::with_sample_constant(
                    self.theory.d,
                    self.theory.k,
                    self.theory.eta,
                    self.theory.c,
                )?;
            }
            ExperimentKind::Uap => {
                self.uap.uap.attack.validate()?;
                if self.uap.budgets.values().any(|b| !b.is_finite() || *b < 0.0) {
                    return Err(Error::spec("uap budgets must be finite and non-negative"));
                }
            }
            ExperimentKind::ExtremeSb | ExperimentKind::Generalization => {}
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`; objects merge key by key,
/// anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
