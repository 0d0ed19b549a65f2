//! Independent oracles shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use slabbench::attacks::{pgd_batch, AttackConfig, Norm};
use slabbench::datagen::{generate_dataset, DatasetSpec, PresetOptions};
use slabbench::metrics::{accuracy, auc, robust_accuracy};
use slabbench::mlp::{
    init_model, Activation, Arch, InitScheme, InitSpec, LinearScorer, LossKind, MlpModel,
    ModelOptions,
};
use slabbench::seed;

/// `P(s+ > s-) + P(s+ = s-)/2` by counting every pair.
pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        if yi <= 0.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj > 0.0 {
                continue;
            }
            den += 1.0;
            num += if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

/// Largest gap between rank AUC and pairwise counting over `cases` random
/// instances with `n <= 200`, half of them with heavy ties.
pub fn auc_max_gap(cases: usize) -> f64 {
    let mut rng = seed::rng(11);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        labels[0] = 1.0;
        labels[1] = -1.0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if c % 2 == 0 {
                    rng.random_range(0..5) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let fast = auc(
            Array1::from(scores.clone()).view(),
            Array1::from(labels.clone()).view(),
        )
        .unwrap();
        worst = worst.max((fast - pairwise_auc(&scores, &labels)).abs());
    }
    worst
}

fn random_batch<R: Rng>(rng: &mut R, n: usize, d: usize) -> (Array2<f64>, Array1<f64>) {
    let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    (x, y)
}

/// Worst relative error between analytic parameter gradients and central
/// finite differences over `cases` random networks, activations and losses.
/// Draws whose finite-difference stencil straddles a kink of ReLU or hinge
/// (forward and backward differences disagree) are redrawn, since no
/// derivative exists there.
pub fn gradient_check_max_rel_err(cases: usize) -> f64 {
    let acts = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Prelu,
        Activation::Tanh,
    ];
    let mut rng = seed::rng(12);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut draw = 0u64;
    while done < cases {
        draw += 1;
        let d = rng.random_range(1..=6);
        let arch = Arch::new(rng.random_range(1..=5), rng.random_range(1..=3));
        let opts = ModelOptions {
            activation: acts[done % acts.len()],
            init: InitSpec::new(InitScheme::Kaiming),
            ..ModelOptions::default()
        };
        let model = init_model(d, arch, &opts, draw).unwrap();
        let loss = if done % 3 == 0 {
            LossKind::Hinge
        } else {
            LossKind::Logistic
        };
        let rows = rng.random_range(1..=8);
        let (x, y) = random_batch(&mut rng, rows, d);
        let (base, g) = model.loss_and_grad(x.view(), y.view(), loss, None).unwrap();
        let analytic = g.flat();
        let params = model.flat_params();
        let h = 1e-6;
        let f = |p: &[f64]| {
            let mut m: MlpModel = model.clone();
            m.set_flat_params(p).unwrap();
            m.loss_and_grad(x.view(), y.view(), loss, None).unwrap().0
        };
        let mut numeric = Vec::with_capacity(params.len());
        let mut kink = false;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            let (fwd, bwd) = ((up - base) / h, (base - down) / h);
            if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()).max(1e-3) {
                kink = true;
                break;
            }
            numeric.push((up - down) / (2.0 * h));
        }
        if kink {
            continue;
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        if scale > 1e-8 {
            worst = worst.max(norm(&diff) / scale);
        }
        done += 1;
    }
    worst
}

/// Worst relative gap between the logistic loss PGD reaches on a linear
/// scorer and the closed-form optimum `log(1 + exp(-(y s(x) - eps ||w||_*)))`.
pub fn pgd_linear_max_rel_gap(cases: usize) -> f64 {
    let mut rng = seed::rng(13);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let d = rng.random_range(1..=20);
        let w = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        let b = rng.random_range(-1.0..1.0);
        let model = LinearScorer::new(w.clone(), b);
        let (x, y) = random_batch(&mut rng, 16, d);
        let norm = if c % 2 == 0 { Norm::L2 } else { Norm::Linf };
        let eps = rng.random_range(0.01..1.0);
        let cfg = AttackConfig {
            norm,
            budget: eps,
            steps: 10,
            step_size: eps / 2.0,
            ..AttackConfig::default()
        };
        let adv = pgd_batch(&model, x.view(), y.view(), &cfg).unwrap();
        let dual = match norm {
            Norm::L2 => w.dot(&w).sqrt(),
            Norm::Linf => w.iter().map(|v| v.abs()).sum(),
        };
        for i in 0..x.nrows() {
            let got = y[i] * (adv.row(i).dot(&w) + b);
            let best = y[i] * (x.row(i).dot(&w) + b) - eps * dual;
            let (lg, lb) = (LossKind::Logistic.value(1.0, got), LossKind::Logistic.value(1.0, best));
            worst = worst.max((lg - lb).abs() / lb);
        }
    }
    worst
}

/// Largest gap between robust accuracy at budget 0 and standard accuracy
/// over random networks and datasets.
pub fn robust_zero_max_gap(cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let spec = DatasetSpec::preset(
            "lms-5",
            &PresetOptions {
                d: 10,
                ..PresetOptions::default()
            },
        )
        .unwrap();
        let data = generate_dataset(&spec, 300, c as u64).unwrap();
        let model = init_model(10, Arch::new(20, 2), &ModelOptions::default(), c as u64).unwrap();
        let s = model.scores(data.features.view()).unwrap();
        let standard = accuracy(s.view(), data.labels.view()).unwrap();
        let cfg = AttackConfig {
            budget: 0.0,
            step_size: 0.0,
            ..AttackConfig::default()
        };
        let robust = robust_accuracy(&model, &data, &cfg).unwrap();
        worst = worst.max((robust - standard).abs());
    }
    worst
}

/// Monte-Carlo estimates of hinge gradients on LSN.
pub mod mc {
    use ndarray::Array1;
    use rand::Rng;
    use slabbench::datagen::{generate_dataset, Dataset, DatasetSpec, PresetOptions};
    use slabbench::mlp::{init_model, Arch, LossKind, MlpModel, ModelOptions};
    use slabbench::seed;
    use slabbench::theory::{pop_grad_linear, pop_grad_noise_coeff, pop_grad_slab};

    pub const D: usize = 10;

    #[derive(Debug, Clone, Copy)]
    pub struct Unit {
        pub w1: f64,
        pub w2: f64,
        pub noise: [f64; D - 2],
    }

    impl Unit {
        pub fn noise_norm(&self) -> f64 {
            self.noise.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
    }

    /// Small weights keep `|f(x)| < 1` so every point is hinge-active; the
    /// closed forms only depend on ratios to the noise norm.
    pub fn random_unit<R: Rng>(rng: &mut R) -> Unit {
        let norm = rng.random_range(0.03..0.12);
        let mut noise = [0.0; D - 2];
        for z in noise.iter_mut() {
            *z = rng.random_range(-1.0..1.0);
        }
        let n = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        noise.iter_mut().for_each(|z| *z *= norm / n);
        Unit {
            w1: rng.random_range(-0.15..0.15),
            w2: rng.random_range(-0.15..0.15),
            noise,
        }
    }

    pub fn lsn(n: usize, s: u64) -> Dataset {
        let spec = DatasetSpec::preset(
            "lsn",
            &PresetOptions {
                d: D,
                ..PresetOptions::default()
            },
        )
        .unwrap();
        generate_dataset(&spec, n, s).unwrap()
    }

    /// Two hidden units with opposite frozen output weights.
    pub fn network(units: [Unit; 2]) -> MlpModel {
        let mut m = init_model(D, Arch::new(2, 1), &ModelOptions::theorem(4), 1).unwrap();
        for (j, u) in units.iter().enumerate() {
            m.layers[0].weight[[0, j]] = u.w1;
            m.layers[0].weight[[1, j]] = u.w2;
            for (i, z) in u.noise.iter().enumerate() {
                m.layers[0].weight[[2 + i, j]] = *z;
            }
        }
        m
    }

    /// Absolute errors of the linear, slab and along-noise gradients of both
    /// units.
    pub fn errors(units: [Unit; 2], data: &Dataset) -> Vec<f64> {
        let m = network(units);
        let scores = m.scores(data.features.view()).unwrap();
        let margin_max = scores
            .iter()
            .zip(&data.labels)
            .map(|(s, y)| s * y)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(margin_max < 1.0, "hinge inactive on some point: {margin_max}");
        let (_, g) = m
            .loss_and_grad(data.features.view(), data.labels.view(), LossKind::Hinge, None)
            .unwrap();
        let v = m.output_weights();
        let mut out = Vec::new();
        for (j, u) in units.iter().enumerate() {
            let nn = u.noise_norm();
            let gw = g.layers[0].weight.column(j);
            out.push((gw[0] - pop_grad_linear(u.w1, u.w2, nn, v[j]).unwrap()).abs());
            out.push((gw[1] - pop_grad_slab(u.w1, u.w2, nn, v[j]).unwrap()).abs());
            let along: f64 = (0..D - 2).map(|i| gw[2 + i] * u.noise[i]).sum::<f64>() / nn;
            out.push((along - pop_grad_noise_coeff(u.w1, u.w2, nn, v[j]).unwrap() * nn).abs());
        }
        out
    }

    pub fn settings(count: usize) -> Vec<[Unit; 2]> {
        let mut rng = seed::rng(seed::derive(2024, "mc-settings"));
        (0..count)
            .map(|_| [random_unit(&mut rng), random_unit(&mut rng)])
            .collect()
    }

    /// Worst error over `count` settings at sample size `n`.
    pub fn worst_error(count: usize, n: usize) -> f64 {
        let data = lsn(n, 77);
        settings(count)
            .into_iter()
            .flat_map(|s| errors(s, &data))
            .fold(0.0, f64::max)
    }

    /// Least-squares slope of log mean error against log n.
    pub fn error_slope(count: usize, ns: &[usize]) -> f64 {
        let sets = settings(count);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, &n) in ns.iter().enumerate() {
            let data = lsn(n, 1000 + k as u64);
            let all: Vec<f64> = sets.iter().flat_map(|s| errors(*s, &data)).collect();
            xs.push((n as f64).ln());
            ys.push((all.iter().sum::<f64>() / all.len() as f64).ln());
        }
        let x = Array1::from(xs);
        let y = Array1::from(ys);
        let (mx, my) = (x.mean().unwrap(), y.mean().unwrap());
        (&x - mx).dot(&(&y - my)) / (&x - mx).dot(&(&x - mx))
    }
}

/// Toy-scale configurations of every experiment kind.
pub mod toy {
    use slabbench::harness::ExperimentConfig;

    pub fn toy(kind: &str, extra: &str) -> ExperimentConfig {
        let text = format!(r#"{{"experiment":"{kind}"{extra}}}"#);
        ExperimentConfig::from_json(&text).unwrap()
    }

    pub const SMALL_TRAIN: &str = r#","train":{"epochs":3,"batch_size":32}"#;

    pub fn small(kind: &str, datasets: &str, archs: &str, extra: &str) -> ExperimentConfig {
        toy(
            kind,
            &format!(r#","datasets":{datasets},"archs":{archs}{SMALL_TRAIN}{extra}"#),
        )
    }

    pub fn lms(d: usize, n: usize) -> String {
        format!(r#"{{"preset":"lms-5","options":{{"d":{d}}},"n_train":{n},"n_test":{n}}}"#)
    }

    pub fn configs() -> Vec<ExperimentConfig> {
        let one = format!("[{}]", lms(6, 200));
        let arch = r#"[{"width":8,"depth":1}]"#;
        vec![
            small("extreme-sb", &one, arch, r#","eval":{"boundary":{"resolution":5}}"#),
            small(
                "generalization",
                &one,
                arch,
                r#","grid":{"lr":[0.05,0.1],"batch_size":[16],"weight_decay":[0],"momentum":[0]}"#,
            ),
            small("ensemble", &one, arch, r#","ensemble":{"members":3,"sizes":[1,3]}"#),
            small(
                "adv-sweep",
                &format!(
                    r#"[{{"preset":"advms-57","options":{{"d":4}},"n_train":200,"n_test":100}}]"#
                ),
                arch,
                r#","adv":{"epsilons":[0,0.2],"warm_start_epochs":1,"eval_steps":3}"#,
            ),
            small(
                "interpolation",
                r#"[{"preset":"ms-7","options":{"d":4},"n_train":200,"n_test":100},{"preset":"lms-7","options":{"d":4},"n_train":200,"n_test":100}]"#,
                arch,
                r#","interpolation":{"alphas":[0,0.5,1]}"#,
            ),
            toy("theory", r#","theory":{"d":60,"k":4,"steps":2,"test_n":2000}"#),
            small(
                "uap",
                &one,
                arch,
                r#","uap":{"uap":{"attack":{"budget":0.5,"steps":5,"step_size":0.1},"batch_size":64}}"#,
            ),
        ]
    }
}
