//! First-order optimizers operating on a model's parameter blocks.

use serde::{Deserialize, Serialize};

use super::compute::Gradients;
use super::model::MlpModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Rmsprop {
        lr: f64,
        #[serde(default = "rms_alpha")]
        alpha: f64,
        #[serde(default = "rms_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn rms_alpha() -> f64 {
    0.99
}
fn rms_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 5e-7,
        }
    }
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        Self::Sgd {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self::Rmsprop {
            lr,
            alpha: rms_alpha(),
            eps: rms_eps(),
            weight_decay: 0.0,
        }
    }

    /// Parses `sgd:0.1`, `adam:0.001`, `rmsprop:0.01`; momentum and weight
    /// decay are set separately.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, lr) = s
            .split_once(':')
            .ok_or_else(|| Error::spec(format!("optimizer `{s}` is not NAME:LR")))?;
        let lr: f64 = lr
            .parse()
            .map_err(|_| Error::spec(format!("bad learning rate in `{s}`")))?;
        let spec = match name.to_ascii_lowercase().as_str() {
            "sgd" => Self::sgd(lr),
            "adam" => Self::adam(lr),
            "rmsprop" => Self::rmsprop(lr),
            _ => return Err(Error::spec(format!("unknown optimizer `{name}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } | Self::Rmsprop { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new: f64) -> Self {
        match &mut self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } | Self::Rmsprop { lr, .. } => *lr = new,
        }
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        match &mut self {
            Self::Sgd { weight_decay, .. }
            | Self::Adam { weight_decay, .. }
            | Self::Rmsprop { weight_decay, .. } => *weight_decay = wd,
        }
        self
    }

    pub fn with_momentum(mut self, m: f64) -> Self {
        if let Self::Sgd { momentum, .. } = &mut self {
            *momentum = m;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::spec(format!("learning rate must be positive, got {lr}")));
        }
        let ok = match *self {
            Self::Sgd {
                momentum,
                weight_decay,
                ..
            } => (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            Self::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
                    && weight_decay >= 0.0
            }
            Self::Rmsprop {
                alpha,
                eps,
                weight_decay,
                ..
            } => (0.0..1.0).contains(&alpha) && eps > 0.0 && weight_decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::spec(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer with per-parameter state, updating trainable blocks in place.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            lr: spec.lr(),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        let trainable: Vec<bool> = (0..model.param_blocks().len())
            .map(|i| model.block_trainable(i))
            .collect();
        let gblocks = grads.blocks();
        let mut pblocks = model.param_blocks_mut();
        if self.first.is_empty() {
            self.first = pblocks.iter().map(|b| vec![0.0; b.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let lr = self.lr;
        for (bi, (p, g)) in pblocks.iter_mut().zip(&gblocks).enumerate() {
            if !trainable[bi] {
                continue;
            }
            let m = &mut self.first[bi];
            let v = &mut self.second[bi];
            match self.spec {
                OptimizerSpec::Sgd {
                    momentum,
                    weight_decay,
                    ..
                } => {
                    for i in 0..p.len() {
                        let mut gi = g[i];
                        if weight_decay != 0.0 {
                            gi += weight_decay * p[i];
                        }
                        if momentum != 0.0 {
                            m[i] = if self.step == 1 { gi } else { momentum * m[i] + gi };
                            gi = m[i];
                        }
                        p[i] -= lr * gi;
                    }
                }
                OptimizerSpec::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                    ..
                } => {
                    let t = self.step as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    for i in 0..p.len() {
                        let mut gi = g[i];
                        if weight_decay != 0.0 {
                            gi += weight_decay * p[i];
                        }
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let denom = (v[i] / bc2).sqrt() + eps;
                        p[i] -= lr * (m[i] / bc1) / denom;
                    }
                }
                OptimizerSpec::Rmsprop {
                    alpha,
                    eps,
                    weight_decay,
                    ..
                } => {
                    for i in 0..p.len() {
                        let mut gi = g[i];
                        if weight_decay != 0.0 {
                            gi += weight_decay * p[i];
                        }
                        v[i] = alpha * v[i] + (1.0 - alpha) * gi * gi;
                        p[i] -= lr * gi / (v[i].sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_model, Arch, LossKind, ModelOptions};
    use ndarray::array;

    fn setup() -> (MlpModel, Gradients) {
        let m = init_model(3, Arch::new(4, 1), &ModelOptions::default(), 2).unwrap();
        let x = array![[0.5, -1.0, 0.2], [0.1, 0.4, -0.3]];
        let y = array![1.0, -1.0];
        let (_, g) = m
            .loss_and_grad(x.view(), y.view(), LossKind::Logistic, None)
            .unwrap();
        (m, g)
    }

    #[test]
    fn plain_sgd_is_gradient_descent() {
        let (m, g) = setup();
        let mut opt = Optimizer::new(OptimizerSpec::sgd(0.3)).unwrap();
        let mut m2 = m.clone();
        opt.step(&mut m2, &g);
        for ((p, q), gi) in m.flat_params().iter().zip(m2.flat_params()).zip(g.flat()) {
            assert_eq!(q, p - 0.3 * gi);
        }
    }

    #[test]
    fn frozen_output_never_moves() {
        let mut m = init_model(3, Arch::new(4, 1), &ModelOptions::theorem(2), 2).unwrap();
        let v0 = m.output_weights();
        let mut opt = Optimizer::new(OptimizerSpec::Sgd {
            lr: 0.5,
            momentum: 0.9,
            weight_decay: 0.1,
        })
        .unwrap();
        let x = array![[0.5, -1.0, 0.2]];
        let y = array![1.0];
        for _ in 0..10 {
            let (_, g) = m
                .loss_and_grad(x.view(), y.view(), LossKind::Hinge, None)
                .unwrap();
            opt.step(&mut m, &g);
        }
        assert_eq!(m.output_weights(), v0);
        assert!(m.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn adaptive_optimizers_reduce_loss() {
        for spec in [OptimizerSpec::adam(0.01), OptimizerSpec::rmsprop(0.01)] {
            let (mut m, _) = setup();
            let x = array![[0.5, -1.0, 0.2], [0.1, 0.4, -0.3]];
            let y = array![1.0, -1.0];
            let mut opt = Optimizer::new(spec).unwrap();
            let (l0, _) = m
                .loss_and_grad(x.view(), y.view(), LossKind::Logistic, None)
                .unwrap();
            for _ in 0..50 {
                let (_, g) = m
                    .loss_and_grad(x.view(), y.view(), LossKind::Logistic, None)
                    .unwrap();
                opt.step(&mut m, &g);
            }
            let (l1, _) = m
                .loss_and_grad(x.view(), y.view(), LossKind::Logistic, None)
                .unwrap();
            assert!(l1 < l0, "{spec:?}: {l0} -> {l1}");
        }
    }

    #[test]
    fn parse_and_validate() {
        assert_eq!(OptimizerSpec::parse("sgd:0.1").unwrap(), OptimizerSpec::sgd(0.1));
        assert!(OptimizerSpec::parse("sgd:-1").is_err());
        assert!(OptimizerSpec::parse("lbfgs:1").is_err());
    }
}
