//! Experiment drivers. Every random choice is drawn from a stream derived
//! from the config seed, the repeat index and a fixed label, so repeats are
//! independent of each other and of execution order.

use std::time::Instant;

use super::config::{DatasetConfig, ExperimentConfig, ExperimentKind};
use super::report::{BoundaryGrid, RunManifest, RunRecord};
use crate::attacks::{
    adversarial_train, class_uap_transfer, class_uaps, uap, uap_transfer, AttackConfig,
};
use crate::datagen::{generate_dataset, Dataset, DatasetSpec};
use crate::metrics::{
    accuracy, auc, decision_boundary_grid, evaluate, randomized_metrics, RandomizedMetrics,
};
use crate::mlp::{
    init_model, interpolate, train, Arch, Ensemble, MlpModel, ModelOptions, Scorer, TrainConfig,
    TrainHistory,
};
use crate::theory::{verify_theorem, TheoremConfig};
use crate::{seed, Error, Result};

/// Runs the experiment named in `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    match cfg.experiment {
        ExperimentKind::ExtremeSb => run_extreme_sb(cfg),
        ExperimentKind::Generalization => run_generalization(cfg),
        ExperimentKind::Ensemble => run_ensemble(cfg),
        ExperimentKind::AdvSweep => run_adv_sweep(cfg),
        ExperimentKind::Interpolation => run_interpolation(cfg),
        ExperimentKind::Theory => run_theory(cfg),
        ExperimentKind::Uap => run_uap(cfg),
    }
}

/// Re-runs the configuration stored in `manifest`.
pub fn rerun(manifest: &RunManifest) -> Result<RunManifest> {
    run_experiment(&manifest.config)
}

/// Seed of repeat `r`.
pub fn repeat_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    seed::derive_index(cfg.seed, "repeat", r as u64)
}

fn drive(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    mut body: impl FnMut(usize, u64) -> Result<Vec<RunRecord>>,
) -> Result<RunManifest> {
    if cfg.experiment != kind {
        return Err(Error::spec(format!(
            "config is for `{}`, not `{}`",
            cfg.experiment.as_str(),
            kind.as_str()
        )));
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut m = RunManifest::new(cfg.clone())?;
    for r in 0..cfg.repeats {
        let s = repeat_seed(cfg, r);
        m.seeds.insert(format!("repeat{r}"), s);
        m.runs.extend(body(r, s)?);
    }
    m.runs.sort_by(|a, b| a.id.cmp(&b.id));
    m.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(m)
}

fn arch_tag(a: Arch) -> String {
    format!("{}x{}", a.width, a.depth)
}

/// Dataset spec for one repeat. All datasets of a repeat share a rotation
/// seed so that models can be moved between them.
fn dataset_spec(cfg: &ExperimentConfig, dc: &DatasetConfig, rep_seed: u64) -> Result<DatasetSpec> {
    let spec = dc.spec()?;
    Ok(if spec.rotation_seed.is_some() || !cfg.rotate {
        spec
    } else {
        spec.with_rotation(Some(seed::derive(rep_seed, "rotation")))
    })
}

struct Split {
    train: Dataset,
    test: Dataset,
}

fn datasets(spec: &DatasetSpec, dc: &DatasetConfig, rep_seed: u64, tag: &str) -> Result<Split> {
    let label = dc.label();
    Ok(Split {
        train: generate_dataset(
            spec,
            dc.n_train,
            seed::derive(rep_seed, &format!("train/{label}/{tag}")),
        )?,
        test: generate_dataset(spec, dc.n_test, seed::derive(rep_seed, &format!("test/{label}")))?,
    })
}

fn model_options(cfg: &ExperimentConfig, train: &TrainConfig) -> ModelOptions {
    ModelOptions {
        activation: cfg.activation,
        init: train.init,
        ..ModelOptions::default()
    }
}

/// Initializes and trains one model; divergence is an error.
fn fit(
    cfg: &ExperimentConfig,
    data: &Dataset,
    arch: Arch,
    train_cfg: &TrainConfig,
    base: u64,
    record: &mut RunRecord,
) -> Result<(MlpModel, TrainHistory)> {
    let init_seed = seed::derive(base, "init");
    let train_seed = seed::derive(base, "train");
    record.seeds.insert("init".into(), init_seed);
    record.seeds.insert("train".into(), train_seed);
    let model = init_model(data.dim(), arch, &model_options(cfg, train_cfg), init_seed)?;
    let tc = TrainConfig {
        seed: train_seed,
        ..train_cfg.clone()
    };
    let (m, h) = train(&model, data, &tc)?;
    h.check()?;
    Ok((m, h))
}

fn acc<M: Scorer + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    let s = model.scores(data.features.view())?;
    accuracy(s.view(), data.labels.view())
}

fn randomized<M: Scorer + ?Sized>(
    cfg: &ExperimentConfig,
    model: &M,
    data: &Dataset,
    group: &str,
    base: u64,
) -> Result<RandomizedMetrics> {
    randomized_metrics(
        model,
        data,
        group,
        cfg.eval.randomize_repeats,
        seed::derive(base, &format!("randomize/{group}")),
    )
}

/// Randomized AUCs and logit shifts of trained `(width, depth)` networks on
/// LMS and MS datasets, with optional boundary grids.
pub fn run_extreme_sb(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::ExtremeSb, |rep, rs| {
        let mut out = Vec::new();
        for dc in &cfg.datasets {
            let spec = dataset_spec(cfg, dc, rs)?;
            let data = datasets(&spec, dc, rs, "main")?;
            for &arch in &cfg.archs {
                let id = format!("{}/{}", dc.label(), arch_tag(arch));
                let base = seed::derive(rs, &id);
                let mut rec = RunRecord::new(format!("{id}/r{rep}"), rep)
                    .label("dataset", dc.label())
                    .label("arch", arch_tag(arch));
                let (model, hist) = fit(cfg, &data.train, arch, &cfg.train, base, &mut rec)?;
                let eval_seed = seed::derive(base, "eval");
                rec.seeds.insert("eval".into(), eval_seed);
                let report = evaluate(
                    &model,
                    &data.test,
                    &["S".to_string(), "Sc".to_string()],
                    &[],
                    &AttackConfig::default(),
                    cfg.eval.randomize_repeats,
                    eval_seed,
                )?;
                let s = report.randomized["S"];
                let sc = report.randomized["Sc"];
                rec.set("d", data.test.dim() as f64);
                rec.set("sc_size", data.test.group("Sc")?.len() as f64);
                rec.set("epochs", hist.epochs as f64);
                rec.set("train_accuracy", acc(&model, &data.train)?);
                rec.set("test_accuracy", report.standard_accuracy);
                rec.set("test_auc", report.standard_auc);
                rec.set("s_rand_auc", s.auc);
                rec.set("sc_rand_auc", sc.auc);
                rec.set("s_rand_accuracy", s.accuracy);
                rec.set("sc_rand_accuracy", sc.accuracy);
                rec.set("s_logit_shift", s.logit_shift);
                rec.set("sc_logit_shift", sc.logit_shift);
                if let Some(b) = cfg.eval.boundary {
                    let coord_a = data.test.group("S")?[0];
                    let coord_b = match b.coord_b {
                        Some(c) => c,
                        None => *data.test.group("Sc")?.first().ok_or_else(|| {
                            Error::spec("boundary grid needs an S^c coordinate")
                        })?,
                    };
                    let g = decision_boundary_grid(
                        &model,
                        &data.test,
                        coord_a,
                        coord_b,
                        b.resolution,
                        b.half_width,
                        0,
                    )?;
                    rec.grid = Some(BoundaryGrid {
                        coord_a,
                        coord_b,
                        half_width: b.half_width,
                        scores: g.outer_iter().map(|r| r.to_vec()).collect(),
                    });
                }
                rec.report = Some(report);
                out.push(rec);
            }
        }
        Ok(out)
    })
}

/// Grid search with a held-out validation split on the dataset and on the
/// same dataset without its simple coordinates.
pub fn run_generalization(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::Generalization, |rep, rs| {
        let cells = cfg.grid.cells(&cfg.train, cfg.seed)?;
        let mut out = Vec::new();
        for dc in &cfg.datasets {
            let full = dataset_spec(cfg, dc, rs)?;
            let reduced = full.without(&full.simple)?;
            for (role, spec) in [("candidate", &full), ("without-simple", &reduced)] {
                let data = datasets(spec, dc, rs, "main")?;
                let (fit_set, val_set) = data.train.split(cfg.grid.validation_frac);
                let has_s = !data.test.group("S")?.is_empty();
                for &arch in &cfg.archs {
                    let prefix = format!("{}/{}/{role}", dc.label(), arch_tag(arch));
                    let mut rows = Vec::with_capacity(cells.len());
                    for (ci, cell) in cells.iter().enumerate() {
                        let id = format!("{prefix}/cell{ci:03}");
                        let base = seed::derive(rs, &id);
                        let mut rec = RunRecord::new(format!("{id}/r{rep}"), rep)
                            .label("dataset", dc.label())
                            .label("arch", arch_tag(arch))
                            .label("role", role)
                            .value("lr", cell.lr)
                            .value("batch_size", cell.batch_size as f64)
                            .value("weight_decay", cell.weight_decay)
                            .value("momentum", cell.momentum)
                            .value("selected", 0.0);
                        let (model, hist) = fit(cfg, &fit_set, arch, &cell.apply(&cfg.train), base, &mut rec)?;
                        rec.set("epochs", hist.epochs as f64);
                        rec.set("train_accuracy", acc(&model, &fit_set)?);
                        rec.set("val_accuracy", acc(&model, &val_set)?);
                        rec.set("test_accuracy", acc(&model, &data.test)?);
                        if has_s {
                            rec.set("s_rand_accuracy", randomized(cfg, &model, &data.test, "S", base)?.accuracy);
                        }
                        rec.set("sc_rand_accuracy", randomized(cfg, &model, &data.test, "Sc", base)?.accuracy);
                        rows.push(rec);
                    }
                    // First cell with the highest validation accuracy.
                    let best = (0..rows.len()).fold(0, |b, i| {
                        if rows[i].values["val_accuracy"] > rows[b].values["val_accuracy"] {
                            i
                        } else {
                            b
                        }
                    });
                    rows[best].set("selected", 1.0);
                    out.extend(rows);
                }
            }
        }
        Ok(out)
    })
}

/// Accuracy of mean-score ensembles of independently trained members.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::Ensemble, |rep, rs| {
        let mut out = Vec::new();
        for dc in &cfg.datasets {
            let spec = dataset_spec(cfg, dc, rs)?;
            let shared = datasets(&spec, dc, rs, "main")?;
            for &arch in &cfg.archs {
                let prefix = format!("{}/{}", dc.label(), arch_tag(arch));
                let mut members = Vec::with_capacity(cfg.ensemble.members);
                let mut accs = Vec::with_capacity(cfg.ensemble.members);
                for i in 0..cfg.ensemble.members {
                    let base = seed::derive_index(rs, &format!("{prefix}/member"), i as u64);
                    let train_set = if cfg.ensemble.shared_data {
                        shared.train.clone()
                    } else {
                        generate_dataset(&spec, dc.n_train, seed::derive(base, "data"))?
                    };
                    let mut scratch = RunRecord::new("", rep);
                    let (m, _) = fit(cfg, &train_set, arch, &cfg.train, base, &mut scratch)?;
                    accs.push(acc(&m, &shared.test)?);
                    members.push(m);
                }
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                for &size in &cfg.ensemble.sizes {
                    let id = format!("{prefix}/size{size:03}");
                    let base = seed::derive(rs, &id);
                    let e = Ensemble::new(members[..size].to_vec())?;
                    let ea = acc(&e, &shared.test)?;
                    let rec = RunRecord::new(format!("{id}/r{rep}"), rep)
                        .label("dataset", dc.label())
                        .label("arch", arch_tag(arch))
                        .value("size", size as f64)
                        .value("ensemble_accuracy", ea)
                        .value("first_member_accuracy", accs[0])
                        .value("member_mean_accuracy", mean)
                        .value("gain", ea - mean)
                        .value("s_rand_accuracy", randomized(cfg, &e, &shared.test, "S", base)?.accuracy)
                        .value("sc_rand_accuracy", randomized(cfg, &e, &shared.test, "Sc", base)?.accuracy);
                    out.push(rec);
                }
            }
        }
        Ok(out)
    })
}

/// PGD adversarial training per budget, optionally warm-started from a
/// standard-trained model shared by all budgets.
pub fn run_adv_sweep(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::AdvSweep, |rep, rs| {
        let a = &cfg.adv;
        let mut out = Vec::new();
        for dc in &cfg.datasets {
            let spec = dataset_spec(cfg, dc, rs)?;
            let data = datasets(&spec, dc, rs, "main")?;
            for &arch in &cfg.archs {
                let prefix = format!("{}/{}", dc.label(), arch_tag(arch));
                let base = seed::derive(rs, &prefix);
                let init_seed = seed::derive(base, "init");
                let mut start =
                    init_model(data.train.dim(), arch, &model_options(cfg, &cfg.train), init_seed)?;
                if a.warm_start_epochs > 0 {
                    let tc = TrainConfig {
                        epochs: a.warm_start_epochs,
                        seed: seed::derive(base, "warm-start"),
                        ..cfg.train.clone()
                    };
                    let (m, h) = train(&start, &data.train, &tc)?;
                    h.check()?;
                    start = m;
                }
                for (ei, &eps) in a.epsilons.iter().enumerate() {
                    let id = format!("{prefix}/eps{ei:02}");
                    let eb = seed::derive(rs, &id);
                    let train_seed = seed::derive(eb, "train");
                    let attack_seed = seed::derive(eb, "attack");
                    let eval_seed = seed::derive(eb, "eval");
                    let tc = TrainConfig {
                        seed: train_seed,
                        ..cfg.train.clone()
                    };
                    let atk = a.attack(eps, a.train_steps, 1, attack_seed);
                    let (model, hist) = adversarial_train(&start, &data.train, &atk, &tc)?;
                    hist.check()?;
                    let ev = a.attack(eps, a.eval_steps, a.eval_restarts, eval_seed);
                    let mut rec = RunRecord::new(format!("{id}/r{rep}"), rep)
                        .label("dataset", dc.label())
                        .label("arch", arch_tag(arch))
                        .label("norm", format!("{:?}", a.norm).to_lowercase())
                        .value("epsilon", eps)
                        .value("epochs", hist.epochs as f64)
                        .value("final_loss", hist.final_loss().unwrap_or(f64::NAN))
                        .value("standard_accuracy", acc(&model, &data.test)?)
                        .value("robust_accuracy", crate::metrics::robust_accuracy(&model, &data.test, &ev)?)
                        .value("s_rand_accuracy", randomized(cfg, &model, &data.test, "S", eb)?.accuracy)
                        .value("sc_rand_accuracy", randomized(cfg, &model, &data.test, "Sc", eb)?.accuracy)
                        .value("gamma_s", a.gamma_s)
                        .value("gamma_data", a.gamma_data);
                    rec.seeds.insert("init".into(), init_seed);
                    rec.seeds.insert("train".into(), train_seed);
                    rec.seeds.insert("attack".into(), attack_seed);
                    rec.seeds.insert("eval".into(), eval_seed);
                    out.push(rec);
                }
            }
        }
        Ok(out)
    })
}

/// Interpolates a slab-trained model with a random one, then fine-tunes each
/// interpolant on the second dataset.
pub fn run_interpolation(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::Interpolation, |rep, rs| {
        let (pre_dc, post_dc) = (&cfg.datasets[0], &cfg.datasets[1]);
        let pre_spec = dataset_spec(cfg, pre_dc, rs)?;
        let post_spec = dataset_spec(cfg, post_dc, rs)?;
        let pre = datasets(&pre_spec, pre_dc, rs, "pre")?;
        let post = datasets(&post_spec, post_dc, rs, "post")?;
        let mut out = Vec::new();
        for &arch in &cfg.archs {
            let prefix = format!("{}/{}", post_dc.label(), arch_tag(arch));
            let base = seed::derive(rs, &prefix);
            let mut scratch = RunRecord::new("", rep);
            let (slab, _) = fit(cfg, &pre.train, arch, &cfg.train, seed::derive(base, "slab"), &mut scratch)?;
            let random = init_model(
                pre.train.dim(),
                arch,
                &model_options(cfg, &cfg.train),
                seed::derive(base, "random"),
            )?;
            for (ai, &alpha) in cfg.interpolation.alphas.iter().enumerate() {
                let id = format!("{prefix}/alpha{ai:02}");
                let ab = seed::derive(rs, &id);
                let m0 = interpolate(&slab, &random, alpha)?;
                let s0 = m0.scores(pre.test.features.view())?;
                let tc = TrainConfig {
                    seed: seed::derive(ab, "train"),
                    ..cfg.train.clone()
                };
                let (m1, h) = train(&m0, &post.train, &tc)?;
                h.check()?;
                let s1 = m1.scores(post.test.features.view())?;
                let mut rec = RunRecord::new(format!("{id}/r{rep}"), rep)
                    .label("dataset", format!("{} -> {}", pre_dc.label(), post_dc.label()))
                    .label("arch", arch_tag(arch))
                    .value("alpha", alpha)
                    .value("pre_accuracy", accuracy(s0.view(), pre.test.labels.view())?)
                    .value("pre_s_rand_auc", randomized(cfg, &m0, &pre.test, "S", ab)?.auc)
                    .value("pre_sc_rand_auc", randomized(cfg, &m0, &pre.test, "Sc", ab)?.auc)
                    .value("post_accuracy", accuracy(s1.view(), post.test.labels.view())?)
                    .value("post_auc", auc(s1.view(), post.test.labels.view())?)
                    .value("post_s_rand_auc", randomized(cfg, &m1, &post.test, "S", ab)?.auc)
                    .value("post_sc_rand_auc", randomized(cfg, &m1, &post.test, "Sc", ab)?.auc);
                rec.seeds.insert("train".into(), tc.seed);
                out.push(rec);
            }
        }
        Ok(out)
    })
}

/// Trajectory checks of a one-hidden-layer network on LSN data, one row per
/// step. Repeat `r` uses theorem seed `seed + r`.
pub fn run_theory(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::Theory, |rep, _| {
        let tc = TheoremConfig {
            seed: cfg.theory.seed.wrapping_add(rep as u64),
            ..cfg.theory
        };
        let report = verify_theorem(&tc)?;
        let passed = if report.passed() { 1.0 } else { 0.0 };
        let mut out = Vec::new();
        for s in &report.steps {
            let p = &s.prediction;
            let mut rec = RunRecord::new(format!("theory/step{:03}/r{rep}", s.t), rep)
                .label("role", "step")
                .value("step", s.t as f64)
                .value("hinge_active_fraction", s.hinge_active_fraction)
                .value("w1_abs_min", s.w1_abs_min)
                .value("w1_abs_max", s.w1_abs_max)
                .value("w1_expected", p.expected_w1_abs)
                .value("w1_band_lo", p.expected_w1_abs - p.w1_band)
                .value("w1_band_hi", p.expected_w1_abs + p.w1_band)
                .value("w1_in_band", f64::from(u8::from(s.w1_in_band)))
                .value("w2_abs_max", s.w2_abs_max)
                .value("w2_bound", p.w2_bound)
                .value("slab_to_linear_ratio", s.slab_to_linear_ratio)
                .value("test_error", s.test_error)
                .value("passed", passed);
            rec.seeds.insert("theorem".into(), tc.seed);
            if !report.violations.is_empty() {
                rec.labels.insert("violations".into(), report.violations.join("; "));
            }
            out.push(rec);
        }
        Ok(out)
    })
}

/// Universal perturbations against trained models: energy split between S
/// and S^c, and transfer of class-conditional perturbations to a second,
/// independently trained model.
pub fn run_uap(cfg: &ExperimentConfig) -> Result<RunManifest> {
    drive(cfg, ExperimentKind::Uap, |rep, rs| {
        let mut out = Vec::new();
        for dc in &cfg.datasets {
            let spec = dataset_spec(cfg, dc, rs)?;
            let data = datasets(&spec, dc, rs, "source")?;
            for &arch in &cfg.archs {
                let id = format!("{}/{}", dc.label(), arch_tag(arch));
                let base = seed::derive(rs, &id);
                let mut rec = RunRecord::new(format!("{id}/r{rep}"), rep)
                    .label("dataset", dc.label())
                    .label("arch", arch_tag(arch));
                let (source, _) = fit(cfg, &data.train, arch, &cfg.train, seed::derive(base, "source"), &mut rec)?;
                let mut uc = cfg.uap.uap;
                uc.attack.seed = seed::derive(base, "uap");
                uc.attack.budget = cfg.uap.budget_for(&dc.preset);
                rec.seeds.insert("uap".into(), uc.attack.seed);
                let shared = uap(&source, &data.test, &uc)?;
                let class = class_uaps(&source, &data.test, &uc)?;
                rec.set("source_accuracy", acc(&source, &data.test)?);
                rec.set("fooled_fraction", shared.fooled_fraction);
                rec.set("energy_s", shared.energy_by_group["S"]);
                rec.set("energy_sc", shared.energy_by_group["Sc"]);
                rec.set(
                    "class_energy_s",
                    0.5 * (class.positive.energy_by_group["S"] + class.negative.energy_by_group["S"]),
                );
                let transfer = cfg
                    .uap
                    .transfer_presets
                    .iter()
                    .any(|p| p.eq_ignore_ascii_case(&dc.preset));
                if transfer {
                    let other = datasets(&spec, dc, rs, "target")?;
                    let mut scratch = RunRecord::new("", rep);
                    let (target, _) =
                        fit(cfg, &other.train, arch, &cfg.train, seed::derive(base, "target"), &mut scratch)?;
                    rec.seeds.insert("target_init".into(), scratch.seeds["init"]);
                    rec.set("target_accuracy", acc(&target, &data.test)?);
                    rec.set("transfer_error", uap_transfer(&shared.delta, &target, &data.test)?);
                    rec.set("class_transfer_error", class_uap_transfer(&class, &target, &data.test)?);
                }
                out.push(rec);
            }
        }
        Ok(out)
    })
}
