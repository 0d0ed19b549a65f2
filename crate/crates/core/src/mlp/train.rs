//! Mini-batch training loop.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::compute::{DropoutMasks, LossKind};
use super::model::{InitSpec, MlpModel};
use super::optim::{Optimizer, OptimizerSpec};
use crate::datagen::Dataset;
use crate::{seed, Error, Result};

/// Loss above which (or NaN) a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Multiplies the learning rate by `factor` every `every_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on the total number of optimizer steps.
    pub max_steps: Option<usize>,
    pub dropout: f64,
    /// Initialization used when a harness builds the model for this run.
    pub init: InitSpec,
    pub seed: u64,
    /// Stop once an epoch's mean training loss falls below this value.
    pub early_stop_loss: Option<f64>,
    pub lr_decay: Option<LrDecay>,
    /// Record per-group first-layer weight norms after every step
    /// (one-hidden-layer models only).
    pub record_group_norms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            optimizer: OptimizerSpec::default(),
            batch_size: 256,
            epochs: 500,
            max_steps: None,
            dropout: 0.0,
            init: InitSpec::default(),
            seed: 0,
            early_stop_loss: Some(1e-2),
            lr_decay: None,
            record_group_norms: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.init.validate()?;
        if self.batch_size == 0 {
            return Err(Error::spec("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::spec(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Some(d) = self.lr_decay {
            if d.every_epochs == 0 || !(d.factor > 0.0) {
                return Err(Error::spec("learning-rate decay needs a positive period and factor"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupNorms {
    pub groups: Vec<String>,
    /// `values[step][g]`: Frobenius norm of the pre-rotation first-layer rows in group `g`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub epochs: usize,
    pub stopped_early: bool,
    pub diverged: Option<Divergence>,
    pub group_norms: Option<GroupNorms>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// Converts a recorded divergence into an error.
    pub fn check(&self) -> Result<()> {
        match &self.diverged {
            Some(d) => Err(Error::Divergence {
                step: d.step,
                loss: d.loss,
            }),
            None => Ok(()),
        }
    }
}

/// Replaces a training batch before the gradient step (used for adversarial
/// training). Arguments: current model, batch inputs, labels, global step.
pub type Perturb<'a> =
    dyn FnMut(&MlpModel, ArrayView2<f64>, ArrayView1<f64>, usize) -> Result<Array2<f64>> + 'a;

pub fn train(model: &MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    train_with(model, data, cfg, None)
}

pub fn train_with(
    model: &MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut perturb: Option<&mut Perturb<'_>>,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::shape(format!(
            "model expects {} inputs, data has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut history = TrainHistory::default();
    let recorder = GroupRecorder::new(&model, data, cfg.record_group_norms);
    if let Some(r) = &recorder {
        history.group_norms = Some(GroupNorms {
            groups: r.names.clone(),
            values: Vec::new(),
        });
    }
    let n = data.len();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut dropout_rng = seed::rng(seed::derive(cfg.seed, "dropout"));
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for epoch in 0..cfg.epochs {
        if history.steps >= max_steps {
            break;
        }
        if let Some(decay) = cfg.lr_decay {
            let k = (epoch / decay.every_epochs) as i32;
            opt.set_lr(cfg.optimizer.lr() * decay.factor.powi(k));
        }
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive_index(cfg.seed, "shuffle", epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if history.steps >= max_steps {
                break;
            }
            let x = data.features.select(Axis(0), chunk);
            let y: Array1<f64> = chunk.iter().map(|&i| data.labels[i]).collect();
            let x = match perturb.as_deref_mut() {
                Some(f) => f(&model, x.view(), y.view(), history.steps)?,
                None => x,
            };
            let masks = (cfg.dropout > 0.0)
                .then(|| DropoutMasks::sample(&model, chunk.len(), cfg.dropout, &mut dropout_rng));
            let (loss, grads) = model.loss_and_grad(x.view(), y.view(), cfg.loss, masks.as_ref())?;
            history.step_losses.push(loss);
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                history.diverged = Some(Divergence {
                    step: history.steps,
                    loss,
                });
                break 'epochs;
            }
            opt.step(&mut model, &grads);
            history.steps += 1;
            if let (Some(r), Some(g)) = (&recorder, history.group_norms.as_mut()) {
                g.values.push(r.norms(&model));
            }
            epoch_loss += loss;
            batches += 1;
        }
        if batches == 0 {
            break;
        }
        let mean = epoch_loss / batches as f64;
        history.epoch_losses.push(mean);
        history.epochs = epoch + 1;
        if cfg.early_stop_loss.is_some_and(|t| mean < t) {
            history.stopped_early = true;
            break;
        }
    }
    Ok((model, history))
}

struct GroupRecorder {
    names: Vec<String>,
    coords: Vec<Vec<usize>>,
    rotation: Option<Array2<f64>>,
}

impl GroupRecorder {
    fn new(model: &MlpModel, data: &Dataset, enabled: bool) -> Option<Self> {
        if !enabled || model.hidden_layers() != 1 {
            return None;
        }
        let (names, coords) = data.group_map.iter().map(|(k, v)| (k.clone(), v.clone())).unzip();
        Some(Self {
            names,
            coords,
            rotation: data.rotation.clone(),
        })
    }

    fn norms(&self, model: &MlpModel) -> Vec<f64> {
        // Features are Q x_raw, so w . (Q x_raw) = (Q^T w) . x_raw.
        let w = model.first_layer();
        let w_raw = match &self.rotation {
            Some(q) => q.t().dot(w),
            None => w.clone(),
        };
        self.coords
            .iter()
            .map(|c| {
                c.iter()
                    .map(|&i| w_raw.row(i).iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, DatasetSpec, PresetOptions};
    use crate::mlp::{init_model, Arch, ModelOptions};

    fn small_data() -> Dataset {
        let spec = DatasetSpec::preset(
            "lms-5",
            &PresetOptions {
                d: 5,
                ..Default::default()
            },
        )
        .unwrap();
        generate_dataset(&spec, 400, 1).unwrap()
    }

    #[test]
    fn zero_steps_return_the_input_model() {
        let data = small_data();
        let m = init_model(5, Arch::new(8, 1), &ModelOptions::default(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, h) = train(&m, &data, &cfg).unwrap();
        assert_eq!(out, m);
        assert_eq!(h.steps, 0);
        let cfg = TrainConfig {
            max_steps: Some(0),
            ..Default::default()
        };
        assert_eq!(train(&m, &data, &cfg).unwrap().0, m);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = small_data();
        let m = init_model(5, Arch::new(16, 1), &ModelOptions::default(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            dropout: 0.1,
            seed: 4,
            record_group_norms: true,
            ..Default::default()
        };
        let (a, ha) = train(&m, &data, &cfg).unwrap();
        let (b, hb) = train(&m, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.epoch_losses.last().unwrap() < &ha.epoch_losses[0]);
        let g = ha.group_norms.unwrap();
        assert_eq!(g.values.len(), ha.steps);
        assert!(g.groups.contains(&"S".to_string()));
    }

    #[test]
    fn divergence_is_flagged() {
        let data = small_data();
        let m = init_model(5, Arch::new(8, 2), &ModelOptions::default(), 0).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::Hinge,
            optimizer: OptimizerSpec::sgd(1e9),
            epochs: 5,
            ..Default::default()
        };
        let (_, h) = train(&m, &data, &cfg).unwrap();
        assert!(h.diverged.is_some());
        assert!(matches!(h.check(), Err(Error::Divergence { .. })));
    }

    #[test]
    fn rejects_bad_configs() {
        let data = small_data();
        let m = init_model(5, Arch::new(8, 1), &ModelOptions::default(), 0).unwrap();
        for cfg in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..Default::default()
            },
        ] {
            assert!(train(&m, &data, &cfg).is_err());
        }
    }
}
