//! Realized samples, feature groups and randomization.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::block::BlockSampler;
use super::rotation::random_rotation;
use super::spec::DatasetSpec;
use crate::{seed, Error, Result};

/// A sampled dataset.
///
/// `raw` holds the pre-rotation features, `features` what a model sees
/// (`raw` rotated by `rotation`, or a copy of `raw`). Group indices always
/// refer to pre-rotation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub raw: Array2<f64>,
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub rotation: Option<Array2<f64>>,
    pub group_map: BTreeMap<String, Vec<usize>>,
}

pub fn generate_dataset(spec: &DatasetSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("dataset size must be at least 1".into()));
    }
    let samplers = spec
        .blocks
        .iter()
        .map(|b| BlockSampler::new(*b))
        .collect::<Result<Vec<_>>>()?;
    let d = spec.dim();
    let mut rng = seed::rng(seed::derive(seed, "samples"));
    let mut raw = Array2::<f64>::zeros((n, d));
    let mut labels = Array1::<f64>::zeros(n);
    for (i, mut row) in raw.rows_mut().into_iter().enumerate() {
        let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        labels[i] = y;
        for (x, s) in row.iter_mut().zip(&samplers) {
            *x = s.sample(y, &mut rng);
        }
    }
    let rotation = spec.rotation_seed.map(|rs| random_rotation(d, rs));
    Ok(Dataset::from_parts(spec.clone(), seed, raw, labels, rotation))
}

/// Applies `x -> Q x` to every row.
pub fn rotate_rows(raw: ArrayView2<f64>, rotation: Option<&Array2<f64>>) -> Array2<f64> {
    match rotation {
        Some(q) => raw.dot(&q.t()),
        None => raw.to_owned(),
    }
}

/// Coordinate groups derived from the block layout: `S`, `Sc`, `all`, and one
/// group per block kind label.
pub fn build_group_map(spec: &DatasetSpec) -> BTreeMap<String, Vec<usize>> {
    let d = spec.dim();
    let mut map = BTreeMap::new();
    map.insert("S".to_string(), spec.simple.clone());
    map.insert(
        "Sc".to_string(),
        (0..d).filter(|i| !spec.simple.contains(i)).collect(),
    );
    map.insert("all".to_string(), (0..d).collect());
    for (i, b) in spec.blocks.iter().enumerate() {
        map.entry(b.group_label())
            .or_insert_with(Vec::new)
            .push(i);
    }
    map
}

impl Dataset {
    pub(crate) fn from_parts(
        spec: DatasetSpec,
        seed: u64,
        raw: Array2<f64>,
        labels: Array1<f64>,
        rotation: Option<Array2<f64>>,
    ) -> Self {
        let features = rotate_rows(raw.view(), rotation.as_ref());
        let group_map = build_group_map(&spec);
        Self {
            spec,
            seed,
            raw,
            features,
            labels,
            rotation,
            group_map,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }

    /// Resolves a group name. Besides the entries of `group_map`, `none`
    /// (empty set) and `x<i>` (single 0-based coordinate) are accepted.
    pub fn group(&self, name: &str) -> Result<Vec<usize>> {
        if let Some(g) = self.group_map.get(name) {
            return Ok(g.clone());
        }
        if name == "none" || name.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(i) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if i < self.dim() {
                return Ok(vec![i]);
            }
        }
        Err(Error::UnknownGroup(name.to_string()))
    }

    /// Replaces the `coords` block of every row by that of a uniformly
    /// permuted row (one joint permutation for all listed columns), in the
    /// pre-rotation basis, then re-applies the rotation. Labels are unchanged.
    pub fn randomize_coords(&self, coords: &[usize], seed: u64) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::Empty("cannot randomize an empty dataset".into()));
        }
        if let Some(&c) = coords.iter().find(|&&c| c >= self.dim()) {
            return Err(Error::UnknownGroup(format!("x{c}")));
        }
        if coords.is_empty() {
            return Ok(self.clone());
        }
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut seed::rng(seed::derive(seed, "randomize")));
        let mut raw = self.raw.clone();
        for &c in coords {
            let col = self.raw.column(c);
            for (dst, &src) in raw.column_mut(c).iter_mut().zip(&perm) {
                *dst = col[src];
            }
        }
        let features = rotate_rows(raw.view(), self.rotation.as_ref());
        Ok(Dataset {
            raw,
            features,
            ..self.clone()
        })
    }

    pub fn randomize_group(&self, group: &str, seed: u64) -> Result<Dataset> {
        let coords = self.group(group)?;
        self.randomize_coords(&coords, seed)
    }

    /// Rows `range` as a new dataset (same spec, rotation and seed).
    pub fn slice(&self, rows: std::ops::Range<usize>) -> Dataset {
        let raw = self.raw.slice(s![rows.clone(), ..]).to_owned();
        let features = self.features.slice(s![rows.clone(), ..]).to_owned();
        let labels = self.labels.slice(s![rows]).to_owned();
        Dataset {
            raw,
            features,
            labels,
            ..self.clone()
        }
    }

    /// Chosen rows as a new dataset.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            raw: self.raw.select(Axis(0), rows),
            features: self.features.select(Axis(0), rows),
            labels: self.labels.select(Axis(0), rows),
            ..self.clone()
        }
    }

    /// Splits off the last `frac` of the rows (rounded down, at least one row
    /// kept on each side when possible).
    pub fn split(&self, frac: f64) -> (Dataset, Dataset) {
        let n = self.len();
        let tail = ((n as f64 * frac).floor() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
        let head = n - tail;
        (self.slice(0..head), self.slice(head..n))
    }

    /// Maps a direction expressed in model (rotated) coordinates back to the
    /// pre-rotation basis.
    pub fn to_raw_basis(&self, v: &Array1<f64>) -> Array1<f64> {
        match &self.rotation {
            Some(q) => q.t().dot(v),
            None => v.clone(),
        }
    }

    /// Maps a pre-rotation direction to model coordinates.
    pub fn to_model_basis(&self, v: &Array1<f64>) -> Array1<f64> {
        match &self.rotation {
            Some(q) => q.dot(v),
            None => v.clone(),
        }
    }
}

/// Half the minimum Euclidean distance between points of opposite label,
/// restricted to `coords` (all coordinates when `None`).
pub fn empirical_margin(
    x: ArrayView2<f64>,
    labels: &Array1<f64>,
    coords: Option<&[usize]>,
) -> Result<f64> {
    let x = match coords {
        Some(c) => x.select(Axis(1), c),
        None => x.to_owned(),
    };
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.0).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty(
            "margin needs samples from both classes".into(),
        ));
    }
    let a = x.select(Axis(0), &pos);
    let b = x.select(Axis(0), &neg);
    let na: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let nb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();

    // Squared distances via |a|^2 + |b|^2 - 2 a.b in blocks; the few smallest
    // candidates are then recomputed exactly to remove cancellation error.
    const BLOCK: usize = 2048;
    let mut best = f64::INFINITY;
    let mut best_pair = (0, 0);
    let bt = b.t();
    for i0 in (0..a.nrows()).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(a.nrows());
        let g = a.slice(s![i0..i1, ..]).dot(&bt);
        for (di, row) in g.rows().into_iter().enumerate() {
            let ai = na[i0 + di];
            for (j, &dot) in row.iter().enumerate() {
                let d2 = ai + nb[j] - 2.0 * dot;
                if d2 < best {
                    best = d2;
                    best_pair = (i0 + di, j);
                }
            }
        }
    }
    // Exact recomputation around the winning pair: the approximate minimum is
    // within a tiny tolerance of the exact one, so rescan anything close.
    let tol = 1e-9 * (1.0 + na.iter().chain(&nb).fold(0.0f64, |m, &v| m.max(v)));
    let exact = |i: usize, j: usize| {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
    };
    let mut best_exact = exact(best_pair.0, best_pair.1);
    if tol > 0.0 {
        for i0 in (0..a.nrows()).step_by(BLOCK) {
            let i1 = (i0 + BLOCK).min(a.nrows());
            let g = a.slice(s![i0..i1, ..]).dot(&bt);
            for (di, row) in g.rows().into_iter().enumerate() {
                for (j, &dot) in row.iter().enumerate() {
                    if na[i0 + di] + nb[j] - 2.0 * dot <= best + tol {
                        best_exact = best_exact.min(exact(i0 + di, j));
                    }
                }
            }
        }
    }
    Ok(best_exact.sqrt() / 2.0)
}

/// Empirical margin of `n` fresh samples from `spec`; `coords` restricts the
/// distance to a subset of pre-rotation coordinates.
pub fn estimate_margin(
    spec: &DatasetSpec,
    n: usize,
    seed: u64,
    coords: Option<&[usize]>,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::Empty("margin needs at least two samples".into()));
    }
    // Distances are rotation invariant, so sample without rotating.
    let spec = spec.clone().with_rotation(None);
    let data = generate_dataset(&spec, n, seed)?;
    empirical_margin(data.raw.view(), &data.labels, coords)
}
