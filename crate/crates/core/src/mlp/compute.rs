//! Forward pass, losses and backpropagation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Activation, Dense, MlpModel, LEAKY_SLOPE};
use crate::{Error, Result};

/// Rows evaluated per chunk when scoring large inputs.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `max(0, 1 - y s)`, active (subgradient `-y`) at `y s = 1`.
    Hinge,
    /// `log(1 + exp(-y s))`.
    #[default]
    Logistic,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hinge" => Ok(Self::Hinge),
            "logistic" | "bce" | "log" => Ok(Self::Logistic),
            _ => Err(Error::spec(format!("unknown loss `{s}`"))),
        }
    }

    pub fn value(self, y: f64, s: f64) -> f64 {
        let m = y * s;
        match self {
            Self::Hinge => (1.0 - m).max(0.0),
            // log(1 + e^{-m}) without overflow.
            Self::Logistic => {
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative of the loss with respect to the score.
    pub fn dscore(self, y: f64, s: f64) -> f64 {
        let m = y * s;
        match self {
            Self::Hinge => {
                if m <= 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            Self::Logistic => {
                // -y * sigmoid(-m)
                let sig = if m >= 0.0 {
                    let e = (-m).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + m.exp())
                };
                -y * sig
            }
        }
    }
}

/// Gradient record with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub prelu: Vec<f64>,
}

impl Gradients {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        if !self.prelu.is_empty() {
            out.push(&self.prelu);
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }
}

/// Inverted-dropout masks, one `batch x width` matrix per hidden layer with
/// entries `0` or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(model: &MlpModel, batch: usize, p: f64, rng: &mut R) -> Self {
        let keep = 1.0 - p;
        let masks = model.layers[..model.hidden_layers()]
            .iter()
            .map(|l| {
                Array2::from_shape_fn((batch, l.output_dim()), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Self(masks)
    }
}

struct Cache {
    /// Input to each layer (`inputs[0]` is the batch).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
    scores: Array1<f64>,
}

fn activate(act: Activation, slope: f64, z: f64) -> f64 {
    match act {
        Activation::Relu => {
            if z >= 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::LeakyRelu => {
            if z >= 0.0 {
                z
            } else {
                LEAKY_SLOPE * z
            }
        }
        Activation::Prelu => {
            if z >= 0.0 {
                z
            } else {
                slope * z
            }
        }
        Activation::Tanh => z.tanh(),
    }
}

fn activate_grad(act: Activation, slope: f64, z: f64) -> f64 {
    match act {
        Activation::Relu => {
            if z >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu => {
            if z >= 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        }
        Activation::Prelu => {
            if z >= 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
    }
}

fn check_finite(x: ArrayView2<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or infinity")))
    }
}

impl MlpModel {
    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::shape(format!(
                "model expects {} inputs, got {d}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn slope(&self, layer: usize) -> f64 {
        self.prelu.get(layer).copied().unwrap_or(0.0)
    }

    fn forward_cached(&self, x: ArrayView2<f64>, masks: Option<&DropoutMasks>) -> Cache {
        let hidden = self.hidden_layers();
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        inputs.push(x.to_owned());
        for l in 0..hidden {
            let layer = &self.layers[l];
            let mut z = inputs[l].dot(&layer.weight);
            z += &layer.bias;
            let slope = self.slope(l);
            let mut a = z.mapv(|v| activate(self.activation, slope, v));
            if let Some(m) = masks {
                a *= &m.0[l];
            }
            pre.push(z);
            inputs.push(a);
        }
        let out = &self.layers[hidden];
        let scores = inputs[hidden].dot(&out.weight.column(0)) + out.bias[0];
        Cache {
            inputs,
            pre,
            scores,
        }
    }

    /// Backpropagates `dscore` (dL/ds per row). Returns parameter gradients
    /// and, if requested, the gradient with respect to the inputs.
    fn backward(
        &self,
        cache: &Cache,
        dscore: ArrayView1<f64>,
        masks: Option<&DropoutMasks>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<Gradients>, Option<Array2<f64>>) {
        let hidden = self.hidden_layers();
        let mut grads: Vec<Dense> = Vec::new();
        let mut prelu = vec![0.0; self.prelu.len()];
        let out = &self.layers[hidden];
        if want_params {
            grads = self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect();
            if !self.freeze_output {
                let gw = cache.inputs[hidden].t().dot(&dscore);
                grads[hidden].weight.column_mut(0).assign(&gw);
                if self.use_bias {
                    grads[hidden].bias[0] = dscore.sum();
                }
            }
        }
        // dA for the last hidden layer output: outer(dscore, v).
        let v = out.weight.column(0);
        let mut da = Array2::from_shape_fn((dscore.len(), v.len()), |(i, j)| dscore[i] * v[j]);
        for l in (0..hidden).rev() {
            if let Some(m) = masks {
                da *= &m.0[l];
            }
            let slope = self.slope(l);
            let z = &cache.pre[l];
            if want_params && self.activation == Activation::Prelu {
                prelu[l] = Zip::from(&da)
                    .and(z)
                    .fold(0.0, |acc, &g, &zv| if zv < 0.0 { acc + g * zv } else { acc });
            }
            let mut dz = da;
            Zip::from(&mut dz)
                .and(z)
                .for_each(|g, &zv| *g *= activate_grad(self.activation, slope, zv));
            if want_params {
                grads[l].weight = cache.inputs[l].t().dot(&dz);
                if self.use_bias {
                    grads[l].bias = dz.sum_axis(Axis(0));
                }
            }
            if l == 0 && !want_input {
                return (
                    want_params.then(|| Gradients {
                        layers: grads,
                        prelu,
                    }),
                    None,
                );
            }
            da = dz.dot(&self.layers[l].weight.t());
        }
        (
            want_params.then_some(Gradients {
                layers: grads,
                prelu,
            }),
            want_input.then_some(da),
        )
    }

    /// Score of a single input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        let x2 = x.insert_axis(Axis(0));
        Ok(self.forward_cached(x2, None).scores[0])
    }

    /// Scores of every row of `x`.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = Array1::zeros(x.nrows());
        for start in (0..x.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(x.nrows());
            let s = self
                .forward_cached(x.slice(ndarray::s![start..end, ..]), None)
                .scores;
            out.slice_mut(ndarray::s![start..end]).assign(&s);
        }
        Ok(out)
    }

    /// Mean loss over the batch and its gradient. Frozen parameters get zero
    /// gradient.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        loss: LossKind,
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Gradients)> {
        self.check_dim(x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::Empty("loss needs a non-empty batch".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::shape(format!(
                "{} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        check_finite(x, "batch")?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("labels contain NaN or infinity".into()));
        }
        let cache = self.forward_cached(x, masks);
        let n = x.nrows() as f64;
        let mut total = 0.0;
        let mut dscore = Array1::zeros(x.nrows());
        for i in 0..x.nrows() {
            let s = cache.scores[i];
            total += loss.value(y[i], s);
            dscore[i] = loss.dscore(y[i], s) / n;
        }
        let (grads, _) = self.backward(&cache, dscore.view(), masks, true, false);
        Ok((total / n, grads.expect("requested")))
    }

    /// `sum_i dscore_i * d s(x_i) / d x_i` row by row, i.e. the input gradient
    /// of each row's score scaled by `dscore`. Also returns the scores.
    pub fn score_input_grad(
        &self,
        x: ArrayView2<f64>,
        dscore: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_dim(x.ncols())?;
        let cache = self.forward_cached(x, None);
        let (_, dx) = self.backward(&cache, dscore, None, false, true);
        Ok((cache.scores, dx.expect("requested")))
    }

    /// Per-row loss and its input gradient, used by attacks.
    pub fn loss_input_grad(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        loss: LossKind,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_dim(x.ncols())?;
        let cache = self.forward_cached(x, None);
        let losses = Zip::from(&cache.scores)
            .and(&y)
            .map_collect(|&s, &yy| loss.value(yy, s));
        if losses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model output is not finite".into()));
        }
        let dscore = Zip::from(&cache.scores)
            .and(&y)
            .map_collect(|&s, &yy| loss.dscore(yy, s));
        let (_, dx) = self.backward(&cache, dscore.view(), None, false, true);
        Ok((losses, dx.expect("requested")))
    }
}
