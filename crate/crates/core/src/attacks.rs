//! PGD attacks, universal adversarial perturbations and adversarial training.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::metrics::accuracy;
use crate::mlp::{train_with, Differentiable, MlpModel, TrainConfig, TrainHistory};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    Linf,
}

impl Norm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Self::L2),
            "linf" | "inf" => Ok(Self::Linf),
            _ => Err(Error::spec(format!("unknown norm `{s}`"))),
        }
    }

    pub fn of(self, v: ArrayView1<f64>) -> f64 {
        match self {
            Self::L2 => v.dot(&v).sqrt(),
            Self::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// Projects `v` onto the ball of radius `budget` in place.
    fn project(self, mut v: ndarray::ArrayViewMut1<f64>, budget: f64) {
        match self {
            Self::L2 => {
                let n = v.dot(&v).sqrt();
                if n > budget {
                    let f = budget / n;
                    v.mapv_inplace(|x| x * f);
                }
            }
            Self::Linf => v.mapv_inplace(|x| x.clamp(-budget, budget)),
        }
    }

    /// Steepest-ascent direction for gradient `g` under this norm.
    fn step_direction(self, g: ArrayView1<f64>) -> Array1<f64> {
        match self {
            Self::L2 => {
                let n = g.dot(&g).sqrt();
                if n > 0.0 {
                    g.mapv(|x| x / n)
                } else {
                    Array1::zeros(g.len())
                }
            }
            Self::Linf => g.mapv(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
        }
    }

    fn random_in_ball<R: Rng>(self, d: usize, budget: f64, rng: &mut R) -> Array1<f64> {
        match self {
            Self::L2 => {
                let g: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = g.dot(&g).sqrt().max(f64::MIN_POSITIVE);
                let r = budget * rng.random::<f64>().powf(1.0 / d as f64);
                g.mapv(|x| x * r / n)
            }
            Self::Linf => (0..d).map(|_| budget * (2.0 * rng.random::<f64>() - 1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub norm: Norm,
    pub budget: f64,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Halve a row's step size and reject the step whenever it lowers the
    /// attack objective.
    pub monotone: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            norm: Norm::L2,
            budget: 0.0,
            steps: 40,
            step_size: 0.1,
            restarts: 1,
            seed: 0,
            monotone: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::spec("attack needs at least one step"));
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::spec(format!(
                "attack budget must be non-negative, got {}",
                self.budget
            )));
        }
        let step_ok = self.step_size > 0.0 || (self.budget == 0.0 && self.step_size == 0.0);
        if !(step_ok && self.step_size.is_finite()) {
            return Err(Error::spec(format!(
                "attack step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.restarts == 0 {
            return Err(Error::spec("attack needs at least one restart"));
        }
        Ok(())
    }
}

/// Attack objective `-y s(x)` per row and its input gradient. Every loss that
/// decreases in the margin `y s` has the same normalized ascent direction.
fn objective<M: Differentiable + ?Sized>(
    model: &M,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let dscore = y.mapv(|v| -v);
    let (s, g) = model.score_input_grad(x, dscore.view())?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model output is not finite".into()));
    }
    Ok((&s * &dscore, g))
}

/// Per-row PGD. Returns the perturbed inputs; every row stays within the
/// budget of its original.
pub fn pgd_batch<M: Differentiable + ?Sized>(
    model: &M,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &AttackConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if cfg.budget == 0.0 {
        return Ok(x.to_owned());
    }
    let (n, d) = x.dim();
    let mut best = x.to_owned();
    let mut best_obj = Array1::from_elem(n, f64::NEG_INFINITY);
    let mut rng = seed::rng(seed::derive(cfg.seed, "pgd"));
    for restart in 0..cfg.restarts {
        let mut delta = Array2::<f64>::zeros((n, d));
        if restart > 0 {
            for mut row in delta.rows_mut() {
                row.assign(&cfg.norm.random_in_ball(d, cfg.budget, &mut rng));
            }
        }
        let mut step = Array1::from_elem(n, cfg.step_size);
        let mut cur = &x + &delta;
        let (mut obj, mut grad) = objective(model, cur.view(), y)?;
        for _ in 0..cfg.steps {
            let mut cand = delta.clone();
            for i in 0..n {
                let dir = cfg.norm.step_direction(grad.row(i));
                let mut row = cand.row_mut(i);
                row.scaled_add(step[i], &dir);
                cfg.norm.project(row, cfg.budget);
            }
            let cand_x = &x + &cand;
            let (cobj, cgrad) = objective(model, cand_x.view(), y)?;
            if cfg.monotone {
                for i in 0..n {
                    if cobj[i] >= obj[i] {
                        delta.row_mut(i).assign(&cand.row(i));
                        obj[i] = cobj[i];
                        grad.row_mut(i).assign(&cgrad.row(i));
                    } else {
                        step[i] /= 2.0;
                    }
                }
                cur = &x + &delta;
            } else {
                delta = cand;
                cur = cand_x;
                obj = cobj;
                grad = cgrad;
            }
        }
        for i in 0..n {
            if obj[i] > best_obj[i] {
                best_obj[i] = obj[i];
                best.row_mut(i).assign(&cur.row(i));
            }
        }
    }
    Ok(best)
}

/// PGD on a single example.
pub fn pgd<M: Differentiable + ?Sized>(
    model: &M,
    x: ArrayView1<f64>,
    y: f64,
    cfg: &AttackConfig,
) -> Result<Array1<f64>> {
    let yv = Array1::from_elem(1, y);
    let out = pgd_batch(model, x.insert_axis(Axis(0)), yv.view(), cfg)?;
    Ok(out.row(0).to_owned())
}

/// Universal-perturbation settings on top of the attack configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UapConfig {
    pub attack: AttackConfig,
    /// Rows sampled per ascent step (`0` uses the full set).
    pub batch_size: usize,
}

impl Default for UapConfig {
    fn default() -> Self {
        Self {
            attack: AttackConfig {
                budget: 1.0,
                steps: 400,
                step_size: 0.05,
                ..AttackConfig::default()
            },
            batch_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UapResult {
    /// Perturbation in model (rotated) coordinates.
    pub delta: Vec<f64>,
    pub norm_used: f64,
    pub fooled_fraction: f64,
    /// Share of `|delta|^2` on `S` and `Sc`, measured in the pre-rotation basis.
    pub energy_by_group: BTreeMap<String, f64>,
    /// Share of `|delta|^2` on each pre-rotation coordinate.
    pub energy_by_coord: Vec<f64>,
}

/// Energy shares of `delta` (model coordinates) per `S`/`Sc` group and per
/// coordinate, in the pre-rotation basis.
pub fn energy_by_group(data: &Dataset, delta: &Array1<f64>) -> Result<(BTreeMap<String, f64>, Vec<f64>)> {
    let raw = data.to_raw_basis(delta);
    let total: f64 = raw.dot(&raw);
    let per: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v * v / total).collect()
    } else {
        vec![0.0; raw.len()]
    };
    let mut groups = BTreeMap::new();
    for g in ["S", "Sc"] {
        let coords = data.group(g)?;
        groups.insert(g.to_string(), coords.iter().map(|&i| per[i]).sum());
    }
    Ok((groups, per))
}

/// One shared perturbation maximizing the mean logistic loss over `data`,
/// by projected normalized gradient ascent on random mini-batches.
pub fn uap<M: Differentiable + ?Sized>(model: &M, data: &Dataset, cfg: &UapConfig) -> Result<UapResult> {
    let a = &cfg.attack;
    a.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("UAP needs data".into()));
    }
    let (n, d) = data.features.dim();
    let mut delta = Array1::<f64>::zeros(d);
    let mut rng = seed::rng(seed::derive(a.seed, "uap"));
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    if a.budget > 0.0 {
        for _ in 0..a.steps {
            let rows: Vec<usize> = if batch == n {
                (0..n).collect()
            } else {
                (0..batch).map(|_| rng.random_range(0..n)).collect()
            };
            let x = data.features.select(Axis(0), &rows) + &delta;
            let y: Array1<f64> = rows.iter().map(|&i| data.labels[i]).collect();
            let s = model.scores(x.view())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model output is not finite".into()));
            }
            let dscore = ndarray::Zip::from(&s)
                .and(&y)
                .map_collect(|&s, &y| crate::mlp::LossKind::Logistic.dscore(y, s));
            let (_, g) = model.score_input_grad(x.view(), dscore.view())?;
            let mean = g.sum_axis(Axis(0)) / rows.len() as f64;
            delta.scaled_add(a.step_size, &a.norm.step_direction(mean.view()));
            a.norm.project(delta.view_mut(), a.budget);
        }
    }
    let fooled = 1.0 - {
        let x = &data.features + &delta;
        let s = model.scores(x.view())?;
        accuracy(s.view(), data.labels.view())?
    };
    let (energy_by_group, energy_by_coord) = energy_by_group(data, &delta)?;
    Ok(UapResult {
        norm_used: a.norm.of(delta.view()),
        delta: delta.to_vec(),
        fooled_fraction: fooled,
        energy_by_group,
        energy_by_coord,
    })
}

/// Class-conditional universal perturbations: one for the positive rows and
/// one for the negative rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassUap {
    pub positive: UapResult,
    pub negative: UapResult,
}

pub fn class_uaps<M: Differentiable + ?Sized>(model: &M, data: &Dataset, cfg: &UapConfig) -> Result<ClassUap> {
    let pos: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] > 0.0).collect();
    let neg: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] <= 0.0).collect();
    let sub = |rows: &[usize], label: &str| {
        let c = UapConfig {
            attack: AttackConfig {
                seed: seed::derive(cfg.attack.seed, label),
                ..cfg.attack
            },
            ..*cfg
        };
        uap(model, &data.select(rows), &c)
    };
    Ok(ClassUap {
        positive: sub(&pos, "positive")?,
        negative: sub(&neg, "negative")?,
    })
}

/// Error rate of `model` on `data` shifted by `delta`.
pub fn uap_transfer<M: Differentiable + ?Sized>(delta: &[f64], model: &M, data: &Dataset) -> Result<f64> {
    if delta.len() != data.dim() {
        return Err(Error::shape(format!(
            "perturbation has {} entries, data has {} columns",
            delta.len(),
            data.dim()
        )));
    }
    let x = &data.features + &Array1::from(delta.to_vec());
    let s = model.scores(x.view())?;
    Ok(1.0 - accuracy(s.view(), data.labels.view())?)
}

/// Error rate of `model` when each row is shifted by its class's perturbation.
pub fn class_uap_transfer<M: Differentiable + ?Sized>(uaps: &ClassUap, model: &M, data: &Dataset) -> Result<f64> {
    let mut x = data.features.clone();
    let dp = Array1::from(uaps.positive.delta.clone());
    let dn = Array1::from(uaps.negative.delta.clone());
    if dp.len() != data.dim() || dn.len() != data.dim() {
        return Err(Error::shape("perturbation and data dimensions differ"));
    }
    for (mut row, &y) in x.rows_mut().into_iter().zip(&data.labels) {
        row += if y > 0.0 { &dp } else { &dn };
    }
    let s = model.scores(x.view())?;
    Ok(1.0 - accuracy(s.view(), data.labels.view())?)
}

/// Standard training where every batch is replaced by its PGD perturbation.
pub fn adversarial_train(
    model: &MlpModel,
    data: &Dataset,
    attack: &AttackConfig,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    attack.validate()?;
    let mut perturb = |m: &MlpModel, x: ArrayView2<f64>, y: ArrayView1<f64>, step: usize| {
        let c = AttackConfig {
            seed: seed::derive_index(attack.seed, "adv-train", step as u64),
            ..*attack
        };
        pgd_batch(m, x, y, &c)
    };
    train_with(model, data, cfg, Some(&mut perturb))
}
