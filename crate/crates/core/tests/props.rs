//! Property-based invariants across the data, model, metric and attack layers.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use slabbench::attacks::{pgd_batch, AttackConfig, Norm};
use slabbench::datagen::{
    generate_dataset, random_rotation, sample_block, slab_label, BlockSpec, DatasetSpec,
    PresetOptions, SlabLayout,
};
use slabbench::harness::format_sig6;
use slabbench::metrics::{accuracy, auc, ks_distance};
use slabbench::mlp::{init_model, interpolate, Arch, Ensemble, ModelOptions, Scorer};
use slabbench::seed;

fn labels_with_both(n: usize, bits: &[bool]) -> Vec<f64> {
    let mut y: Vec<f64> = bits.iter().take(n).map(|&b| if b { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_is_rank_invariant_and_antisymmetric(
        scores in prop::collection::vec(-5.0f64..5.0, 2..120),
        bits in prop::collection::vec(any::<bool>(), 120),
    ) {
        let y = Array1::from(labels_with_both(scores.len(), &bits));
        let s = Array1::from(scores);
        let a = auc(s.view(), y.view()).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let squashed = s.mapv(|v| v.tanh() * 3.0 + 1.0);
        prop_assert!((auc(squashed.view(), y.view()).unwrap() - a).abs() < 1e-12);
        let neg = s.mapv(|v| -v);
        prop_assert!((auc(neg.view(), y.view()).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn accuracy_flips_with_score_sign(
        scores in prop::collection::vec(0.01f64..5.0, 1..100),
        signs in prop::collection::vec(any::<bool>(), 100),
    ) {
        let s = Array1::from_iter(scores.iter().zip(&signs).map(|(v, &b)| if b { *v } else { -v }));
        let y = s.mapv(|v| v.signum());
        prop_assert_eq!(accuracy(s.view(), y.view()).unwrap(), 1.0);
        prop_assert_eq!(accuracy(s.view(), (-&y).view()).unwrap(), 0.0);
    }

    #[test]
    fn ks_is_a_symmetric_distance(
        a in prop::collection::vec(-3.0f64..3.0, 1..80),
        b in prop::collection::vec(-3.0f64..3.0, 1..80),
    ) {
        let ab = ks_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ks_distance(&b, &a).unwrap());
        prop_assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn linear_block_respects_margin(gamma in 0.01f64..0.5, s in any::<u64>()) {
        let spec = BlockSpec::linear(gamma, 1.0);
        let mut rng = seed::rng(s);
        for i in 0..200 {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = sample_block(&spec, y, &mut rng).unwrap();
            prop_assert!(y * x >= gamma - 1e-12 && y * x <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn slab_samples_land_in_own_class_slabs(
        k in prop::sample::select(vec![3u32, 5, 7]),
        gamma in 0.02f64..0.1,
        s in any::<u64>(),
    ) {
        let spec = BlockSpec::slab(gamma, 1.0, k);
        let layout = SlabLayout::new(gamma, 1.0, k);
        let mut rng = seed::rng(s);
        for i in 0..200 {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = sample_block(&spec, y, &mut rng).unwrap();
            let j = (x / layout.pitch).round() as i64;
            let (lo, hi) = layout.interval(j);
            prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12, "x={} outside slab {}", x, j);
            prop_assert_eq!(slab_label(j.unsigned_abs() as usize), y);
            prop_assert!(x.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn rotations_are_orthogonal(d in 1usize..24, s in any::<u64>()) {
        let q = random_rotation(d, s);
        let err = (&q.t().dot(&q) - &Array2::<f64>::eye(d)).mapv(f64::abs).sum();
        prop_assert!(err < 1e-9 * d as f64);
    }

    #[test]
    fn generation_is_deterministic_and_randomization_preserves_labels(
        s in any::<u64>(),
        r in any::<u64>(),
    ) {
        let spec = DatasetSpec::preset(
            "lms-5",
            &PresetOptions { d: 6, rotation_seed: Some(s ^ 1), ..PresetOptions::default() },
        ).unwrap();
        let a = generate_dataset(&spec, 64, s).unwrap();
        let b = generate_dataset(&spec, 64, s).unwrap();
        prop_assert_eq!(&a, &b);
        let sc = a.group("Sc").unwrap();
        let rnd = a.randomize_group("S", r).unwrap();
        prop_assert_eq!(&rnd.labels, &a.labels);
        for &c in &sc {
            prop_assert_eq!(rnd.raw.column(c), a.raw.column(c));
        }
        let mut orig: Vec<f64> = a.raw.column(0).to_vec();
        let mut perm: Vec<f64> = rnd.raw.column(0).to_vec();
        orig.sort_by(f64::total_cmp);
        perm.sort_by(f64::total_cmp);
        prop_assert_eq!(orig, perm);
    }

    #[test]
    fn pgd_stays_inside_the_ball(
        eps in 0.01f64..2.0,
        linf in any::<bool>(),
        s in 0u64..1000,
    ) {
        let spec = DatasetSpec::preset("ms-5", &PresetOptions { d: 4, ..PresetOptions::default() }).unwrap();
        let data = generate_dataset(&spec, 20, s).unwrap();
        let model = init_model(4, Arch::new(8, 1), &ModelOptions::default(), s).unwrap();
        let norm = if linf { Norm::Linf } else { Norm::L2 };
        let cfg = AttackConfig { norm, budget: eps, steps: 5, step_size: eps / 2.0, restarts: 2, seed: s, ..AttackConfig::default() };
        let adv = pgd_batch(&model, data.features.view(), data.labels.view(), &cfg).unwrap();
        for i in 0..data.len() {
            let delta = &adv.row(i) - &data.features.row(i);
            prop_assert!(norm.of(delta.view()) <= eps * (1.0 + 1e-9));
        }
    }

    #[test]
    fn interpolation_endpoints_and_singleton_ensembles(s in 0u64..1000, alpha in 0.0f64..=1.0) {
        let a = init_model(3, Arch::new(5, 2), &ModelOptions::default(), s).unwrap();
        let b = init_model(3, Arch::new(5, 2), &ModelOptions::default(), s + 1).unwrap();
        prop_assert_eq!(interpolate(&a, &b, 1.0).unwrap().flat_params(), a.flat_params());
        prop_assert_eq!(interpolate(&a, &b, 0.0).unwrap().flat_params(), b.flat_params());
        let mid = interpolate(&a, &b, alpha).unwrap().flat_params();
        for ((m, x), y) in mid.iter().zip(a.flat_params()).zip(b.flat_params()) {
            prop_assert!((m - (alpha * x + (1.0 - alpha) * y)).abs() < 1e-15);
        }
        let x = Array2::from_shape_fn((7, 3), |(i, j)| (i as f64 - 3.0) * 0.3 + j as f64 * 0.1);
        let single = Ensemble::new(vec![a.clone()]).unwrap();
        prop_assert_eq!(single.scores(x.view()).unwrap(), a.scores(x.view()).unwrap());
    }

    #[test]
    fn sig6_roundtrips_to_six_digits(x in -1e12f64..1e12) {
        let text = format_sig6(x);
        let back: f64 = text.parse().unwrap();
        let expect: f64 = format!("{x:.5e}").parse().unwrap();
        prop_assert_eq!(back, expect);
        prop_assert!(!text.contains('e'));
    }
}
