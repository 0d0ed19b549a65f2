//! One-dimensional building blocks and their class-conditional samplers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Linear,
    NoisyLinear,
    Slab,
    NoisySlab,
    /// Standard normal, independent of the label.
    Gaussian,
    /// `x = y`.
    SingletonLinear,
    /// `x = ((y + 1) / 2) * eps` with `eps = ±1`, i.e. support `{-1, 0, 1}`.
    SingletonSlab3,
}

/// Parameters of a single coordinate's class-conditional distribution.
///
/// `gamma` is the effective margin (half the gap between adjacent regions of
/// opposite label, in units of `width_b`), `width_b` the half-support width,
/// `slabs_k` the number of slabs and `noise_p` the fraction of label-independent
/// points. Fields a kind does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub gamma: f64,
    pub width_b: f64,
    pub slabs_k: u32,
    pub noise_p: f64,
}

impl BlockSpec {
    pub fn linear(gamma: f64, width_b: f64) -> Self {
        Self {
            kind: BlockKind::Linear,
            gamma,
            width_b,
            slabs_k: 0,
            noise_p: 0.0,
        }
    }

    pub fn noisy_linear(gamma: f64, width_b: f64, noise_p: f64) -> Self {
        Self {
            kind: BlockKind::NoisyLinear,
            noise_p,
            ..Self::linear(gamma, width_b)
        }
    }

    pub fn slab(gamma: f64, width_b: f64, slabs_k: u32) -> Self {
        Self {
            kind: BlockKind::Slab,
            gamma,
            width_b,
            slabs_k,
            noise_p: 0.0,
        }
    }

    pub fn noisy_slab(gamma: f64, width_b: f64, slabs_k: u32, noise_p: f64) -> Self {
        Self {
            kind: BlockKind::NoisySlab,
            noise_p,
            ..Self::slab(gamma, width_b, slabs_k)
        }
    }

    fn parameterless(kind: BlockKind) -> Self {
        Self {
            kind,
            gamma: 0.0,
            width_b: 0.0,
            slabs_k: 0,
            noise_p: 0.0,
        }
    }

    pub fn gaussian() -> Self {
        Self::parameterless(BlockKind::Gaussian)
    }

    pub fn singleton_linear() -> Self {
        Self::parameterless(BlockKind::SingletonLinear)
    }

    pub fn singleton_slab3() -> Self {
        Self::parameterless(BlockKind::SingletonSlab3)
    }

    pub fn is_slab(&self) -> bool {
        matches!(self.kind, BlockKind::Slab | BlockKind::NoisySlab)
    }

    fn is_noisy(&self) -> bool {
        matches!(self.kind, BlockKind::NoisyLinear | BlockKind::NoisySlab)
    }

    fn is_parametric(&self) -> bool {
        !matches!(
            self.kind,
            BlockKind::Gaussian | BlockKind::SingletonLinear | BlockKind::SingletonSlab3
        )
    }

    /// Short group label used in dataset group maps (`linear`, `slab5`, ...).
    pub fn group_label(&self) -> String {
        match self.kind {
            BlockKind::Linear => "linear".into(),
            BlockKind::NoisyLinear => "noisy_linear".into(),
            BlockKind::Slab => format!("slab{}", self.slabs_k),
            BlockKind::NoisySlab => format!("noisy_slab{}", self.slabs_k),
            BlockKind::Gaussian => "noise".into(),
            BlockKind::SingletonLinear => "linear".into(),
            BlockKind::SingletonSlab3 => "slab3".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_parametric() {
            return Ok(());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::spec(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.width_b > 0.0 && self.width_b.is_finite()) {
            return Err(Error::spec(format!(
                "width B must be positive and finite, got {}",
                self.width_b
            )));
        }
        if self.is_noisy() && !(0.0..=1.0).contains(&self.noise_p) {
            return Err(Error::spec(format!(
                "noise p must lie in [0, 1], got {}",
                self.noise_p
            )));
        }
        if self.is_slab() {
            let k = self.slabs_k;
            if k < 3 || k % 2 == 0 {
                return Err(Error::spec(format!(
                    "slab count k must be odd and at least 3, got {k}"
                )));
            }
            let w = slab_width(self.gamma, self.width_b, k);
            if w <= 0.0 {
                return Err(Error::spec(format!(
                    "slab width 2B(1-(k-1)gamma)/k = {w} is not positive \
                     (gamma must be below 1/(k-1) = {})",
                    1.0 / f64::from(k - 1)
                )));
            }
        }
        Ok(())
    }
}

pub fn slab_width(gamma: f64, width_b: f64, k: u32) -> f64 {
    2.0 * width_b * (1.0 - f64::from(k - 1) * gamma) / f64::from(k)
}

/// Label of slab `j` counted outward from the centre (centre is `-1`,
/// alternating outward, mirrored across the origin).
pub fn slab_label(j: usize) -> f64 {
    if j % 2 == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Total probability mass of the outermost pair of slabs for the class that
/// owns it. `None` means "spread uniformly over the owner's slabs".
fn outer_pair_mass(k: u32) -> Option<f64> {
    match k {
        5 => Some(0.25),
        7 => Some(0.125),
        _ => None,
    }
}

/// Closed-form geometry of a k-slab block plus the per-class slab masses.
///
/// Slab `j` (for `j = 0..=m`, `m = (k-1)/2`) is centred at `±j * pitch` and has
/// width `width`. Index 0 is the single centre slab, every other index is a
/// mirrored pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabLayout {
    pub width: f64,
    pub gap: f64,
    pub pitch: f64,
    pub half_count: usize,
    /// `(slab index, probability)` for the positive class.
    pub positive: Vec<(usize, f64)>,
    /// `(slab index, probability)` for the negative class.
    pub negative: Vec<(usize, f64)>,
}

impl SlabLayout {
    pub fn new(gamma: f64, width_b: f64, k: u32) -> Self {
        let width = slab_width(gamma, width_b, k);
        let gap = 2.0 * width_b * gamma;
        let pitch = width + gap;
        let m = ((k - 1) / 2) as usize;

        let owner = slab_label(m);
        let owned: Vec<usize> = (0..=m).filter(|&j| slab_label(j) == owner).collect();
        let other: Vec<usize> = (0..=m).filter(|&j| slab_label(j) != owner).collect();

        // Owner of the outermost pair: fixed outer mass, the rest uniform.
        let owned_mass: Vec<(usize, f64)> = match (outer_pair_mass(k), owned.len()) {
            (_, 1) => vec![(m, 1.0)],
            (Some(q), n) => owned
                .iter()
                .map(|&j| (j, if j == m { q } else { (1.0 - q) / (n - 1) as f64 }))
                .collect(),
            (None, n) => owned.iter().map(|&j| (j, 1.0 / n as f64)).collect(),
        };

        // Second moment of a slab at index j: (j * pitch)^2 + width^2 / 12.
        let moment = |j: usize| (j as f64 * pitch).powi(2) + width * width / 12.0;
        let target: f64 = owned_mass.iter().map(|&(j, p)| p * moment(j)).sum();

        // Other class: innermost slab gets mass a, the remainder is shared
        // uniformly; a is chosen so both classes have the same variance. The
        // second moment is linear in a, so the equation is solved exactly.
        let other_mass: Vec<(usize, f64)> = if other.len() == 1 {
            vec![(other[0], 1.0)]
        } else {
            let inner = other[0];
            let rest = &other[1..];
            let rest_moment: f64 =
                rest.iter().map(|&j| moment(j)).sum::<f64>() / rest.len() as f64;
            let a = ((rest_moment - target) / (rest_moment - moment(inner))).clamp(0.0, 1.0);
            std::iter::once((inner, a))
                .chain(rest.iter().map(|&j| (j, (1.0 - a) / rest.len() as f64)))
                .collect()
        };

        let (positive, negative) = if owner > 0.0 {
            (owned_mass, other_mass)
        } else {
            (other_mass, owned_mass)
        };
        Self {
            width,
            gap,
            pitch,
            half_count: m,
            positive,
            negative,
        }
    }

    pub fn masses(&self, y: f64) -> &[(usize, f64)] {
        if y > 0.0 {
            &self.positive
        } else {
            &self.negative
        }
    }

    /// Closed interval `[lo, hi]` covered by the slab with signed index `j`.
    pub fn interval(&self, j: i64) -> (f64, f64) {
        let c = j as f64 * self.pitch;
        (c - self.width / 2.0, c + self.width / 2.0)
    }

    /// Class-conditional second moment (the mean is zero by symmetry).
    pub fn class_variance(&self, y: f64) -> f64 {
        self.masses(y)
            .iter()
            .map(|&(j, p)| p * ((j as f64 * self.pitch).powi(2) + self.width.powi(2) / 12.0))
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> f64 {
        let masses = self.masses(y);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = masses[masses.len() - 1].0;
        for &(idx, p) in masses {
            acc += p;
            if u < acc {
                j = idx;
                break;
            }
        }
        let offset = (rng.random::<f64>() - 0.5) * self.width;
        if j == 0 {
            offset
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * (j as f64 * self.pitch + offset)
        }
    }

    /// Uniform draw from the union of the gaps between slabs.
    fn sample_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let j = rng.random_range(1..=self.half_count);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lo = (j - 1) as f64 * self.pitch + self.width / 2.0;
        sign * (lo + self.gap * rng.random::<f64>())
    }
}

/// A validated block with its precomputed slab layout.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    spec: BlockSpec,
    layout: Option<SlabLayout>,
}

impl BlockSampler {
    pub fn new(spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec
            .is_slab()
            .then(|| SlabLayout::new(spec.gamma, spec.width_b, spec.slabs_k));
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn layout(&self) -> Option<&SlabLayout> {
        self.layout.as_ref()
    }

    pub fn sample<R: Rng + ?Sized>(&self, y: f64, rng: &mut R) -> f64 {
        let s = &self.spec;
        let linear = |rng: &mut R| {
            let lo = s.width_b * s.gamma;
            y * (lo + (s.width_b - lo) * rng.random::<f64>())
        };
        match s.kind {
            BlockKind::Linear => linear(rng),
            BlockKind::NoisyLinear => {
                if rng.random::<f64>() < s.noise_p {
                    let half = s.width_b * s.gamma;
                    -half + 2.0 * half * rng.random::<f64>()
                } else {
                    linear(rng)
                }
            }
            BlockKind::Slab => self.layout.as_ref().expect("slab layout").sample(y, rng),
            BlockKind::NoisySlab => {
                let layout = self.layout.as_ref().expect("slab layout");
                if rng.random::<f64>() < s.noise_p {
                    layout.sample_gap(rng)
                } else {
                    layout.sample(y, rng)
                }
            }
            BlockKind::Gaussian => rng.sample(StandardNormal),
            BlockKind::SingletonLinear => y,
            BlockKind::SingletonSlab3 => {
                let eps = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (y + 1.0) / 2.0 * eps
            }
        }
    }
}

/// Draws one value of `spec` conditioned on label `y` (±1).
pub fn sample_block<R: Rng + ?Sized>(spec: &BlockSpec, y: f64, rng: &mut R) -> Result<f64> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::spec(format!("label must be ±1, got {y}")));
    }
    Ok(BlockSampler::new(*spec)?.sample(y, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn rejects_invalid_specs() {
        assert!(BlockSpec::slab(0.1, 1.0, 4).validate().is_err());
        assert!(BlockSpec::slab(0.1, 1.0, 1).validate().is_err());
        assert!(BlockSpec::slab(0.3, 1.0, 5).validate().is_err());
        assert!(BlockSpec::linear(0.0, 1.0).validate().is_err());
        assert!(BlockSpec::linear(0.1, -1.0).validate().is_err());
        assert!(BlockSpec::noisy_linear(0.1, 1.0, 1.5).validate().is_err());
        assert!(BlockSpec::gaussian().validate().is_ok());
        let mut rng = seed::rng(0);
        assert!(sample_block(&BlockSpec::slab(0.1, 1.0, 6), 1.0, &mut rng).is_err());
    }

    #[test]
    fn linear_support() {
        let mut rng = seed::rng(3);
        let spec = BlockSpec::linear(0.1, 1.0);
        for _ in 0..10_000 {
            let x = sample_block(&spec, 1.0, &mut rng).unwrap();
            assert!((0.1..=1.0).contains(&x));
            let x = sample_block(&spec, -1.0, &mut rng).unwrap();
            assert!((-1.0..=-0.1).contains(&x));
        }
    }

    #[test]
    fn zero_noise_linear_matches_linear_in_law() {
        // Both consume one extra uniform for the noise coin, so compare laws by
        // quantiles rather than streams.
        let mut rng = seed::rng(4);
        let noisy = BlockSampler::new(BlockSpec::noisy_linear(0.1, 1.0, 0.0)).unwrap();
        let clean = BlockSampler::new(BlockSpec::linear(0.1, 1.0)).unwrap();
        let mut a: Vec<f64> = (0..20_000).map(|_| noisy.sample(-1.0, &mut rng)).collect();
        let mut b: Vec<f64> = (0..20_000).map(|_| clean.sample(-1.0, &mut rng)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert!(a.iter().all(|&x| (-1.0..=-0.1).contains(&x)));
        for q in [0.1, 0.5, 0.9] {
            let i = (q * 20_000.0) as usize;
            assert!((a[i] - b[i]).abs() < 0.02);
        }
    }

    #[test]
    fn slab_layout_reaches_width() {
        for k in [3u32, 5, 7] {
            let l = SlabLayout::new(0.1, 1.0, k);
            let (_, hi) = l.interval(l.half_count as i64);
            assert!((hi - 1.0).abs() < 1e-12, "k={k} outer edge {hi}");
            let total: f64 = l.positive.iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let total: f64 = l.negative.iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slab_masses_equalise_class_variance() {
        for (k, gamma) in [(5u32, 0.1), (7, 0.1), (5, 0.05), (7, 0.15)] {
            let l = SlabLayout::new(gamma, 1.0, k);
            let (vp, vn) = (l.class_variance(1.0), l.class_variance(-1.0));
            assert!((vp - vn).abs() < 1e-12, "k={k}: {vp} vs {vn}");
        }
        let l5 = SlabLayout::new(0.1, 1.0, 5);
        assert_eq!(l5.negative, vec![(0, 0.75), (2, 0.25)]);
        let l7 = SlabLayout::new(0.1, 1.0, 7);
        assert_eq!(l7.positive, vec![(1, 0.875), (3, 0.125)]);
        assert!((l7.negative[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slab_empirical_variances_agree() {
        let sampler = BlockSampler::new(BlockSpec::slab(0.1, 1.0, 5)).unwrap();
        let mut rng = seed::rng(11);
        let n = 1_000_000;
        let var = |y: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x = sampler.sample(y, rng);
                s += x;
                s2 += x * x;
            }
            let m = s / n as f64;
            s2 / n as f64 - m * m
        };
        let vp = var(1.0, &mut rng);
        let vn = var(-1.0, &mut rng);
        assert!((vp / vn - 1.0).abs() < 0.02, "{vp} vs {vn}");
    }

    #[test]
    fn slab_samples_respect_geometry() {
        for (k, gamma) in [(3u32, 0.1), (5, 0.1), (7, 0.1), (5, 0.05), (7, 0.15)] {
            let spec = BlockSpec::slab(gamma, 1.0, k);
            let sampler = BlockSampler::new(spec).unwrap();
            let l = sampler.layout().unwrap().clone();
            let m = l.half_count as i64;
            let mut rng = seed::rng(u64::from(k));
            for i in 0..20_000 {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                let x = sampler.sample(y, &mut rng);
                // Lies in a slab of its own label.
                let own = (-m..=m).find(|&j| {
                    let (lo, hi) = l.interval(j);
                    x >= lo && x <= hi
                });
                let j = own.expect("sample outside every slab");
                assert_eq!(slab_label(j.unsigned_abs() as usize), y);
                // Distance to every opposite-label slab is at least the gap.
                for j2 in -m..=m {
                    if slab_label(j2.unsigned_abs() as usize) == y {
                        continue;
                    }
                    let (lo, hi) = l.interval(j2);
                    let dist = if x < lo { lo - x } else { x - hi };
                    assert!(dist >= 2.0 * gamma - 1e-12, "k={k} x={x} dist={dist}");
                }
            }
        }
    }

    #[test]
    fn noisy_linear_noise_fraction() {
        let p = 0.2;
        let sampler = BlockSampler::new(BlockSpec::noisy_linear(0.1, 1.0, p)).unwrap();
        let mut rng = seed::rng(5);
        let n = 100_000;
        let inside = (0..n)
            .filter(|i| sampler.sample(if i % 2 == 0 { 1.0 } else { -1.0 }, &mut rng).abs() < 0.1)
            .count();
        let frac = inside as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * sigma, "{frac}");
    }

    #[test]
    fn singleton_blocks() {
        let mut rng = seed::rng(9);
        let s = BlockSampler::new(BlockSpec::singleton_slab3()).unwrap();
        for _ in 0..1000 {
            assert_eq!(s.sample(-1.0, &mut rng), 0.0);
            assert_eq!(s.sample(1.0, &mut rng).abs(), 1.0);
        }
        let l = BlockSampler::new(BlockSpec::singleton_linear()).unwrap();
        assert_eq!(l.sample(-1.0, &mut rng), -1.0);
    }
}
