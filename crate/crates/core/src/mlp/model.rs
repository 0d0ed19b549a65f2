//! Network parameters and initialization.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    /// Leaky ReLU with one learned negative slope per hidden layer.
    Prelu,
    Tanh,
}

pub const LEAKY_SLOPE: f64 = 0.01;
pub const PRELU_INIT: f64 = 0.25;

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "leaky_relu" | "leakyrelu" | "lrelu" => Ok(Self::LeakyRelu),
            "prelu" => Ok(Self::Prelu),
            "tanh" => Ok(Self::Tanh),
            _ => Err(Error::spec(format!("unknown activation `{s}`"))),
        }
    }
}

/// `(width, depth)`: `depth` hidden layers of `width` units each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub width: usize,
    pub depth: usize,
}

impl Arch {
    pub fn new(width: usize, depth: usize) -> Self {
        Self { width, depth }
    }

    /// Parses `100x1` (width x depth).
    pub fn parse(s: &str) -> Result<Self> {
        let (w, d) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::spec(format!("architecture `{s}` is not WIDTHxDEPTH")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::spec(format!("architecture `{s}` is not WIDTHxDEPTH")))
        };
        Ok(Self::new(parse(w)?, parse(d)?))
    }

    pub fn tag(&self) -> String {
        format!("({},{})", self.width, self.depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    /// Uniform `±1/sqrt(fan_in)` for weights and biases (PyTorch `Linear` default).
    Kaiming,
    /// Glorot uniform weights, zero biases.
    Xavier,
    /// Hidden weights `N(0, 1/(d k log^p d))`, zero biases; `p` is `log_power`.
    TheoremGaussian { log_power: u32 },
    /// All weights `N(0, variance)`, zero biases.
    Custom { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    #[serde(flatten)]
    pub scheme: InitScheme,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            scheme: InitScheme::Kaiming,
            scale: 1.0,
        }
    }
}

impl InitSpec {
    pub fn new(scheme: InitScheme) -> Self {
        Self { scheme, scale: 1.0 }
    }

    pub fn theorem(log_power: u32) -> Self {
        Self::new(InitScheme::TheoremGaussian { log_power })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::spec(format!(
                "init scale must be positive, got {}",
                self.scale
            )));
        }
        if let InitScheme::Custom { variance } = self.scheme {
            if !(variance >= 0.0 && variance.is_finite()) {
                return Err(Error::spec(format!(
                    "init variance must be non-negative, got {variance}"
                )));
            }
        }
        Ok(())
    }
}

/// Variance `1/(d k log^p d)` of the theorem's Gaussian initialization.
pub fn theorem_variance(d: usize, k: usize, log_power: u32) -> f64 {
    let ld = (d as f64).ln();
    1.0 / (d as f64 * k as f64 * ld.powi(log_power as i32))
}

/// Fully-connected layer mapping `in` to `out`; `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Multilayer perceptron with a scalar output score.
///
/// `layers` holds the hidden layers followed by the output layer. For the
/// one-hidden-layer case `layers[0].weight[[i, j]]` is `w_ij` and
/// `layers[1].weight[[j, 0]]` is `v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    /// Negative slopes of PReLU hidden layers (empty for other activations).
    pub prelu: Vec<f64>,
    pub freeze_output: bool,
    pub use_bias: bool,
    pub arch: Arch,
    pub seed: u64,
}

/// Options for [`init_model`] beyond the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub activation: Activation,
    pub init: InitSpec,
    pub freeze_output: bool,
    pub use_bias: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            activation: Activation::Relu,
            init: InitSpec::default(),
            freeze_output: false,
            use_bias: true,
        }
    }
}

impl ModelOptions {
    /// One-hidden-layer ReLU network without biases, frozen `±1/sqrt(k)`
    /// output weights and the theorem's Gaussian initialization.
    pub fn theorem(log_power: u32) -> Self {
        Self {
            activation: Activation::Relu,
            init: InitSpec::theorem(log_power),
            freeze_output: true,
            use_bias: false,
        }
    }
}

pub fn init_model(d: usize, arch: Arch, opts: &ModelOptions, seed: u64) -> Result<MlpModel> {
    opts.init.validate()?;
    if d == 0 || arch.width == 0 || arch.depth == 0 {
        return Err(Error::spec(format!(
            "input dimension, width and depth must be positive (d={d}, arch={})",
            arch.tag()
        )));
    }
    if opts.freeze_output && arch.width % 2 != 0 {
        return Err(Error::spec(format!(
            "a frozen output layer needs an even width to split ±1/sqrt(k) evenly, got {}",
            arch.width
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, "init"));
    let k = arch.width;
    let scale = opts.init.scale;
    let mut layers = Vec::with_capacity(arch.depth + 1);
    let mut fan_in = d;
    for l in 0..=arch.depth {
        let fan_out = if l == arch.depth { 1 } else { k };
        let mut layer = Dense::zeros(fan_in, fan_out);
        let is_output = l == arch.depth;
        if !(is_output && opts.freeze_output) {
            fill_layer(&mut layer, opts.init.scheme, d, k, &mut rng)?;
            layer.weight.mapv_inplace(|w| w * scale);
            layer.bias.mapv_inplace(|b| b * scale);
        }
        if !opts.use_bias {
            layer.bias.fill(0.0);
        }
        layers.push(layer);
        fan_in = fan_out;
    }
    if opts.freeze_output {
        let v = 1.0 / (k as f64).sqrt();
        let mut signs: Vec<f64> = (0..k).map(|j| if j < k / 2 { v } else { -v }).collect();
        signs.shuffle(&mut rng);
        let out = layers.last_mut().expect("output layer");
        for (j, s) in signs.into_iter().enumerate() {
            out.weight[[j, 0]] = s;
        }
        out.bias.fill(0.0);
    }
    let prelu = if opts.activation == Activation::Prelu {
        vec![PRELU_INIT; arch.depth]
    } else {
        Vec::new()
    };
    Ok(MlpModel {
        layers,
        activation: opts.activation,
        prelu,
        freeze_output: opts.freeze_output,
        use_bias: opts.use_bias,
        arch,
        seed,
    })
}

fn fill_layer<R: Rng>(
    layer: &mut Dense,
    scheme: InitScheme,
    d: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    let (fan_in, fan_out) = layer.weight.dim();
    match scheme {
        InitScheme::Kaiming => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            layer.weight.mapv_inplace(|_| u.sample(rng));
            layer.bias.mapv_inplace(|_| u.sample(rng));
        }
        InitScheme::Xavier => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            layer.weight.mapv_inplace(|_| u.sample(rng));
        }
        InitScheme::TheoremGaussian { log_power } => {
            if d < 2 {
                return Err(Error::spec("theorem initialization needs d >= 2"));
            }
            let sd = theorem_variance(d, k, log_power).sqrt();
            let n = Normal::new(0.0, sd).expect("finite sd");
            layer.weight.mapv_inplace(|_| n.sample(rng));
        }
        InitScheme::Custom { variance } => {
            if variance > 0.0 {
                let n = Normal::new(0.0, variance.sqrt()).expect("finite sd");
                layer.weight.mapv_inplace(|_| n.sample(rng));
            }
        }
    }
    Ok(())
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Number of scalar parameters, frozen ones included.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self.prelu.len()
    }

    /// Whether parameter block `i` (in [`MlpModel::param_blocks`] order) is updated by training.
    pub(crate) fn block_trainable(&self, i: usize) -> bool {
        let n_layer_blocks = 2 * self.layers.len();
        if i >= n_layer_blocks {
            return true;
        }
        let layer = i / 2;
        let is_bias = i % 2 == 1;
        if self.freeze_output && layer == self.layers.len() - 1 {
            return false;
        }
        !(is_bias && !self.use_bias)
    }

    /// Parameter blocks in a fixed order: per layer weight then bias, then PReLU slopes.
    pub fn param_blocks(&self) -> Vec<&[f64]> {
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

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        if !self.prelu.is_empty() {
            out.push(&mut self.prelu);
        }
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_blocks().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for block in self.param_blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Hidden-unit incoming weights `w_j` as columns (`d x k`), first layer.
    pub fn first_layer(&self) -> &Array2<f64> {
        &self.layers[0].weight
    }

    /// Output weights `v_j`.
    pub fn output_weights(&self) -> Array1<f64> {
        self.layers.last().expect("output").weight.column(0).to_owned()
    }

    pub fn same_shape(&self, other: &MlpModel) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim())
            && self.prelu.len() == other.prelu.len()
            && self.activation == other.activation
    }
}
