//! Closed-form population gradients of the hinge loss on the
//! linear-slab-noise (LSN) distribution and the predicted weight trajectory
//! of a one-hidden-layer ReLU network trained on it.
//!
//! Notation: a hidden unit has incoming weights `w = (w1, w2, w̄)` where `w1`
//! reads the linear coordinate, `w2` the 3-slab coordinate and `w̄` the
//! `d - 2` Gaussian coordinates; `v` is its output weight.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, DatasetSpec, PresetOptions};
use crate::metrics::accuracy;
use crate::mlp::{init_model, Arch, LossKind, MlpModel, ModelOptions, Optimizer, OptimizerSpec};
use crate::{seed, Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn gauss_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function via `erfc`, accurate in both tails.
pub fn gauss_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `Φ(a / n)`, with `n = 0` mapped to the step function when `limit` is set.
fn cdf_ratio(a: f64, n: f64, limit: bool) -> Result<f64> {
    if n > 0.0 {
        Ok(gauss_cdf(a / n))
    } else if n == 0.0 && limit {
        Ok(if a >= 0.0 { 1.0 } else { 0.0 })
    } else {
        Err(Error::OutOfRange(format!(
            "noise-weight norm must be positive, got {n} (formula undefined at 0)"
        )))
    }
}

fn check_inputs(vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("population-gradient inputs must be finite".into()))
    }
}

/// Population hinge gradient along the linear coordinate, assuming every
/// point is hinge-active:
/// `-(v/4) [2 + Φ((w1+w2)/n) + Φ((w1-w2)/n) - 2Φ(w1/n)]` with `n = ‖w̄‖`.
pub fn pop_grad_linear(w1: f64, w2: f64, noise_norm: f64, v: f64) -> Result<f64> {
    pop_grad_linear_with(w1, w2, noise_norm, v, false)
}

/// As [`pop_grad_linear`]; with `limit` a zero `noise_norm` uses `Φ(±∞)`.
pub fn pop_grad_linear_with(w1: f64, w2: f64, noise_norm: f64, v: f64, limit: bool) -> Result<f64> {
    check_inputs(&[w1, w2, noise_norm, v])?;
    let p = cdf_ratio(w1 + w2, noise_norm, limit)?;
    let m = cdf_ratio(w1 - w2, noise_norm, limit)?;
    let c = cdf_ratio(w1, noise_norm, limit)?;
    Ok(-(v / 4.0) * (2.0 + p + m - 2.0 * c))
}

/// Population hinge gradient along the slab coordinate:
/// `-(v/4) [Φ((w1+w2)/n) - Φ((w1-w2)/n)]`.
pub fn pop_grad_slab(w1: f64, w2: f64, noise_norm: f64, v: f64) -> Result<f64> {
    pop_grad_slab_with(w1, w2, noise_norm, v, false)
}

pub fn pop_grad_slab_with(w1: f64, w2: f64, noise_norm: f64, v: f64, limit: bool) -> Result<f64> {
    check_inputs(&[w1, w2, noise_norm, v])?;
    let p = cdf_ratio(w1 + w2, noise_norm, limit)?;
    let m = cdf_ratio(w1 - w2, noise_norm, limit)?;
    Ok(-(v / 4.0) * (p - m))
}

/// Coefficient `Ḡ` such that the population gradient along the noise
/// coordinates is `Ḡ w̄` (up to the residuals of [`noise_residual_bounds`]):
/// `-(v/(4n)) [φ((w1+w2)/n) + φ((w1-w2)/n) - 2φ(w1/n)]`.
pub fn pop_grad_noise_coeff(w1: f64, w2: f64, noise_norm: f64, v: f64) -> Result<f64> {
    check_inputs(&[w1, w2, noise_norm, v])?;
    if noise_norm <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "noise-weight norm must be positive, got {noise_norm}"
        )));
    }
    let n = noise_norm;
    Ok(-(v / (4.0 * n))
        * (gauss_pdf((w1 + w2) / n) + gauss_pdf((w1 - w2) / n) - 2.0 * gauss_pdf(w1 / n)))
}

/// Finite-sample deviation bounds for a batch of `n = c d^2` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientBounds {
    /// Linear and slab coordinates: `5|v|/d · sqrt(log(c d^2)/c)`.
    pub coordinate: f64,
    /// Noise gradient along `w̄`: `3|v| log(sqrt(c) d)/(sqrt(c) d)`.
    pub noise_along: f64,
    /// Noise gradient orthogonal to `w̄`: `6|v|/sqrt(c d)`.
    pub noise_orthogonal: f64,
}

pub fn gradient_bounds(v: f64, c: f64, d: usize) -> GradientBounds {
    let d = d as f64;
    let a = v.abs();
    GradientBounds {
        coordinate: 5.0 * a / d * ((c * d * d).ln() / c).sqrt(),
        noise_along: 3.0 * a * (c.sqrt() * d).ln() / (c.sqrt() * d),
        noise_orthogonal: 6.0 * a / (c * d).sqrt(),
    }
}

/// Constants of the trajectory lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub d: usize,
    pub k: usize,
    pub eta: f64,
    /// Total number of samples (split evenly over the steps).
    pub m: usize,
    /// Exponent with `m <= d^alpha / c`.
    pub alpha: f64,
    pub c: f64,
    pub c0: f64,
}

impl TheoremParams {
    /// `m = c d^2` and the smallest `alpha` with `m <= d^alpha / c`.
    pub fn with_sample_constant(d: usize, k: usize, eta: f64, c: f64) -> Result<Self> {
        let m = (c * (d * d) as f64).round() as usize;
        let alpha = (c * m as f64).ln() / (d as f64).ln();
        let p = Self {
            d,
            k,
            eta,
            m,
            alpha,
            c,
            c0: 2.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::spec("LSN needs d >= 3"));
        }
        if self.k < 2 || self.k % 2 != 0 {
            return Err(Error::spec(format!(
                "hidden width k must be even and >= 2, got {}",
                self.k
            )));
        }
        if !(self.eta > 0.0 && self.c > 0.0 && self.c0 > 0.0) {
            return Err(Error::spec("eta, c and c0 must be positive"));
        }
        let d = self.d as f64;
        let lo = self.c * d * d;
        let hi = d.powf(self.alpha) / self.c;
        let m = self.m as f64;
        if m < lo * (1.0 - 1e-12) || m > hi * (1.0 + 1e-12) {
            return Err(Error::spec(format!(
                "sample size {} outside [c d^2, d^alpha / c] = [{lo}, {hi}]",
                self.m
            )));
        }
        Ok(())
    }

    pub fn c_hat(&self) -> f64 {
        self.eta / 4.0
    }

    pub fn growth(&self, t: usize) -> f64 {
        (1.0 + self.c_hat()).powi(t as i32)
    }

    pub fn c_n(&self, t: usize) -> f64 {
        5.0 * self.alpha.sqrt() * self.c0 * self.growth(t)
    }

    pub fn log_d(&self) -> f64 {
        (self.d as f64).ln()
    }

    /// Last step covered by the lemma, `(4/eta)(1 - c_n/sqrt(log d))`.
    pub fn lemma_range(&self, t: usize) -> f64 {
        4.0 / self.eta * (1.0 - self.c_n(t) / self.log_d().sqrt())
    }

    /// The lemma's dimension requirements: `d >= exp((8 c_n/eta)^2)` and
    /// `sqrt(d / log^3 d) > 24 sqrt(k) / (c0 c)`.
    pub fn dimension_conditions(&self, t: usize) -> (bool, bool) {
        let d = self.d as f64;
        let big = (8.0 * self.c_n(t) / self.eta).powi(2);
        let first = d.ln() >= big;
        let second = (d / self.log_d().powi(3)).sqrt() > 24.0 * (self.k as f64).sqrt() / (self.c0 * self.c);
        (first, second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPrediction {
    pub t: usize,
    /// `t eta / (2 sqrt(k))`.
    pub expected_w1_abs: f64,
    /// `c0 (1 + c_hat)^t / (sqrt(d k) log d)`.
    pub w1_band: f64,
    pub w2_bound: f64,
    /// `c0 (1 + c_hat)^t / (sqrt(k) log d)`.
    pub noise_norm_bound: f64,
    /// Centre `t eta / 4` of the margin band `y f(x)`.
    pub score_center: f64,
    /// Lemma half-width `c_n / sqrt(log d)`.
    pub score_halfwidth: f64,
    /// Half-width `eta/8` of the simplified band `(t ± 1/2) eta / 4`.
    pub score_halfwidth_simplified: f64,
    /// Whether `t` lies inside the lemma's range `(4/eta)(1 - c_n/sqrt(log d))`.
    pub in_lemma_range: bool,
    pub lemma_range: f64,
}

/// Predicted bands after `t` full-batch steps. Fails only when `t` exceeds
/// `4/eta`, past which the hinge can no longer be active everywhere; whether
/// the lemma's sharper range holds is reported in `in_lemma_range`.
pub fn predict_trajectory(p: &TheoremParams, t: usize) -> Result<TrajectoryPrediction> {
    p.validate()?;
    let coarse = 4.0 / p.eta;
    if t as f64 > coarse {
        return Err(Error::OutOfRange(format!(
            "step {t} exceeds 4/eta = {coarse}"
        )));
    }
    Ok(prediction(p, t))
}

/// As [`predict_trajectory`] but enforcing `t <= (4/eta)(1 - c_n/sqrt(log d))`.
pub fn predict_trajectory_strict(p: &TheoremParams, t: usize) -> Result<TrajectoryPrediction> {
    p.validate()?;
    let pred = prediction(p, t);
    if !pred.in_lemma_range {
        return Err(Error::OutOfRange(format!(
            "step {t} exceeds the lemma range (4/eta)(1 - c_n/sqrt(log d)) = {}",
            pred.lemma_range
        )));
    }
    Ok(pred)
}

fn prediction(p: &TheoremParams, t: usize) -> TrajectoryPrediction {
    let (d, k) = (p.d as f64, p.k as f64);
    let band = p.c0 * p.growth(t) / ((d * k).sqrt() * p.log_d());
    let range = p.lemma_range(t);
    TrajectoryPrediction {
        t,
        expected_w1_abs: t as f64 * p.eta / (2.0 * k.sqrt()),
        w1_band: band,
        w2_bound: band,
        noise_norm_bound: p.c0 * p.growth(t) / (k.sqrt() * p.log_d()),
        score_center: t as f64 * p.eta / 4.0,
        score_halfwidth: p.c_n(t) / p.log_d().sqrt(),
        score_halfwidth_simplified: p.eta / 8.0,
        in_lemma_range: t as f64 <= range,
        lemma_range: range,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    pub d: usize,
    pub k: usize,
    pub eta: f64,
    pub c: f64,
    pub steps: usize,
    pub seed: u64,
    /// Exponent `p` of the initial variance `1/(d k log^p d)`.
    pub init_log_power: u32,
    pub test_n: usize,
    /// Rows generated and processed at a time.
    pub chunk: usize,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            d: 400,
            k: 16,
            eta: 0.4,
            c: 2.0,
            steps: 4,
            seed: 1,
            init_log_power: 4,
            test_n: 100_000,
            chunk: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub prediction: TrajectoryPrediction,
    /// Fraction of the step's batch with `y f(x) < 1` (for the final state,
    /// of the test sample).
    pub hinge_active_fraction: f64,
    pub w1_abs_min: f64,
    pub w1_abs_max: f64,
    /// `max_j | |w1j| - expected |`.
    pub w1_max_deviation: f64,
    pub w1_in_band: bool,
    /// Whether `sign(w1j) = sign(v_j)` for every unit once `t >= 1`.
    pub w1_sign_matches_v: bool,
    pub w2_abs_max: f64,
    pub w2_in_bound: bool,
    pub noise_norm_max: f64,
    pub noise_in_bound: bool,
    /// `max_j |w2j| / min_j |w1j|`.
    pub slab_to_linear_ratio: f64,
    /// Fraction of batch margins `y f(x)` inside `(t ± 1/2) eta / 4`.
    pub score_in_band_fraction: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub config: TheoremConfig,
    pub params: TheoremParams,
    pub batch_size: usize,
    pub steps: Vec<StepRecord>,
    /// Lemma dimension requirements at the final step.
    pub dimension_conditions: (bool, bool),
    /// Human-readable list of band violations.
    pub violations: Vec<String>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn lsn_spec(d: usize) -> Result<DatasetSpec> {
    DatasetSpec::preset(
        "lsn",
        &PresetOptions {
            d,
            ..Default::default()
        },
    )
}

/// Trains the theorem's network (frozen `±1/sqrt(k)` output, no biases,
/// Gaussian init, hinge loss, plain gradient descent with a fresh batch of
/// `m / steps` LSN points per step) and compares each step with the
/// predicted bands.
pub fn verify_theorem(cfg: &TheoremConfig) -> Result<TheoremReport> {
    if cfg.steps == 0 || cfg.chunk == 0 || cfg.test_n == 0 {
        return Err(Error::spec("steps, chunk and test_n must be positive"));
    }
    let params = TheoremParams::with_sample_constant(cfg.d, cfg.k, cfg.eta, cfg.c)?;
    let batch = params.m / cfg.steps;
    if batch == 0 {
        return Err(Error::spec("fewer samples than steps"));
    }
    let spec = lsn_spec(cfg.d)?;
    let mut model = init_model(
        cfg.d,
        Arch::new(cfg.k, 1),
        &ModelOptions::theorem(cfg.init_log_power),
        seed::derive(cfg.seed, "theorem-init"),
    )?;
    let mut opt = Optimizer::new(OptimizerSpec::sgd(cfg.eta))?;
    let mut steps = Vec::with_capacity(cfg.steps + 1);
    let mut violations = Vec::new();

    for t in 0..=cfg.steps {
        let pred = predict_trajectory(&params, t)?;
        let (active, in_band, grads) = if t < cfg.steps {
            let stats = batch_pass(&model, &spec, batch, cfg.chunk, seed::derive_index(cfg.seed, "batch", t as u64), t, cfg.eta, true)?;
            (stats.active, stats.in_band, stats.grad)
        } else {
            let stats = batch_pass(&model, &spec, cfg.test_n, cfg.chunk, seed::derive(cfg.seed, "final-active"), t, cfg.eta, false)?;
            (stats.active, stats.in_band, None)
        };
        let test_error = test_error(&model, &spec, cfg.test_n, cfg.chunk, seed::derive_index(cfg.seed, "test", t as u64))?;
        let rec = record(&model, &pred, t, active, in_band, test_error);
        collect_violations(&rec, &mut violations);
        steps.push(rec);
        if let Some(g) = grads {
            opt.step(&mut model, &g);
        }
    }
    Ok(TheoremReport {
        config: *cfg,
        params,
        batch_size: batch,
        dimension_conditions: params.dimension_conditions(cfg.steps),
        steps,
        violations,
    })
}

struct BatchStats {
    active: f64,
    in_band: f64,
    grad: Option<crate::mlp::Gradients>,
}

#[allow(clippy::too_many_arguments)]
fn batch_pass(
    model: &MlpModel,
    spec: &DatasetSpec,
    n: usize,
    chunk: usize,
    seed: u64,
    t: usize,
    eta: f64,
    want_grad: bool,
) -> Result<BatchStats> {
    let mut active = 0usize;
    let mut in_band = 0usize;
    let mut grad: Option<crate::mlp::Gradients> = None;
    let center = t as f64 * eta / 4.0;
    let half = eta / 8.0;
    let mut done = 0;
    let mut idx = 0u64;
    while done < n {
        let size = chunk.min(n - done);
        let data = generate_dataset(spec, size, seed::derive_index(seed, "chunk", idx))?;
        let s = model.scores(data.features.view())?;
        for (&si, &y) in s.iter().zip(&data.labels) {
            let m = y * si;
            active += usize::from(m < 1.0);
            in_band += usize::from((m - center).abs() <= half);
        }
        if want_grad {
            let (_, g) = model.loss_and_grad(data.features.view(), data.labels.view(), LossKind::Hinge, None)?;
            let w = size as f64 / n as f64;
            grad = Some(match grad {
                None => scale(g, w),
                Some(acc) => add_scaled(acc, &g, w),
            });
        }
        done += size;
        idx += 1;
    }
    Ok(BatchStats {
        active: active as f64 / n as f64,
        in_band: in_band as f64 / n as f64,
        grad,
    })
}

fn scale(mut g: crate::mlp::Gradients, w: f64) -> crate::mlp::Gradients {
    for l in &mut g.layers {
        l.weight.mapv_inplace(|x| x * w);
        l.bias.mapv_inplace(|x| x * w);
    }
    g
}

fn add_scaled(mut acc: crate::mlp::Gradients, g: &crate::mlp::Gradients, w: f64) -> crate::mlp::Gradients {
    for (a, b) in acc.layers.iter_mut().zip(&g.layers) {
        a.weight.scaled_add(w, &b.weight);
        a.bias.scaled_add(w, &b.bias);
    }
    acc
}

fn test_error(model: &MlpModel, spec: &DatasetSpec, n: usize, chunk: usize, seed: u64) -> Result<f64> {
    let mut correct = 0.0;
    let mut done = 0;
    let mut idx = 0u64;
    while done < n {
        let size = chunk.min(n - done);
        let data = generate_dataset(spec, size, seed::derive_index(seed, "chunk", idx))?;
        let s = model.scores(data.features.view())?;
        correct += accuracy(s.view(), data.labels.view())? * size as f64;
        done += size;
        idx += 1;
    }
    Ok(1.0 - correct / n as f64)
}

fn record(
    model: &MlpModel,
    pred: &TrajectoryPrediction,
    t: usize,
    active: f64,
    in_band: f64,
    test_error: f64,
) -> StepRecord {
    let w = model.first_layer();
    let v = model.output_weights();
    let w1: Array1<f64> = w.row(0).to_owned();
    let w2: Array1<f64> = w.row(1).to_owned();
    let noise: Vec<f64> = w
        .slice(ndarray::s![2.., ..])
        .map_axis(Axis(0), |c| c.dot(&c).sqrt())
        .to_vec();
    let abs1: Vec<f64> = w1.iter().map(|x| x.abs()).collect();
    let w1_abs_min = abs1.iter().cloned().fold(f64::INFINITY, f64::min);
    let w1_abs_max = abs1.iter().cloned().fold(0.0, f64::max);
    let dev = abs1
        .iter()
        .map(|a| (a - pred.expected_w1_abs).abs())
        .fold(0.0, f64::max);
    // The signed band w1 = t eta v / 2 ± band.
    let signed_ok = w1
        .iter()
        .zip(&v)
        .all(|(&a, &vj)| (a - t as f64 * pred_eta(pred) * vj / 2.0).abs() <= pred.w1_band);
    let sign_ok = t == 0 || w1.iter().zip(&v).all(|(&a, &vj)| a.signum() == vj.signum());
    let w2_abs_max = w2.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let noise_norm_max = noise.iter().cloned().fold(0.0, f64::max);
    StepRecord {
        t,
        prediction: *pred,
        hinge_active_fraction: active,
        w1_abs_min,
        w1_abs_max,
        w1_max_deviation: dev,
        w1_in_band: signed_ok && dev <= pred.w1_band,
        w1_sign_matches_v: sign_ok,
        w2_abs_max,
        w2_in_bound: w2_abs_max <= pred.w2_bound,
        noise_norm_max,
        noise_in_bound: noise_norm_max <= pred.noise_norm_bound,
        slab_to_linear_ratio: if w1_abs_min > 0.0 {
            w2_abs_max / w1_abs_min
        } else {
            f64::INFINITY
        },
        score_in_band_fraction: in_band,
        test_error,
    }
}

/// Recovers eta from a prediction (`score_center = t eta / 4`, `eta/8` half-width).
fn pred_eta(p: &TrajectoryPrediction) -> f64 {
    8.0 * p.score_halfwidth_simplified
}

fn collect_violations(r: &StepRecord, out: &mut Vec<String>) {
    let t = r.t;
    if r.hinge_active_fraction < 1.0 {
        out.push(format!("t={t}: hinge active on {:.6} of points", r.hinge_active_fraction));
    }
    if !r.w1_in_band {
        out.push(format!(
            "t={t}: linear weight deviates by {:.3e} (band {:.3e})",
            r.w1_max_deviation, r.prediction.w1_band
        ));
    }
    if !r.w2_in_bound {
        out.push(format!(
            "t={t}: slab weight {:.3e} exceeds {:.3e}",
            r.w2_abs_max, r.prediction.w2_bound
        ));
    }
    if !r.noise_in_bound {
        out.push(format!(
            "t={t}: noise-weight norm {:.3e} exceeds {:.3e}",
            r.noise_norm_max, r.prediction.noise_norm_bound
        ));
    }
}
