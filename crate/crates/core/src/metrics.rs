//! Standard, randomized and robust evaluation metrics.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_batch, AttackConfig, Norm};
use crate::datagen::{rotate_rows, Dataset};
use crate::mlp::{predict_label, Differentiable, Scorer};
use crate::{seed, Error, Result};

fn check_lengths(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scores to evaluate".into()));
    }
    Ok(())
}

/// Fraction of rows with `sign(score) == label`, ties predicted `+1`.
pub fn accuracy(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    check_lengths(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| predict_label(s) == y)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Rank (ROC) AUC: `P(s+ > s-) + P(s+ = s-)/2`, via average ranks.
pub fn auc(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Empty("AUC needs both positive and negative labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] > 0.0 {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision (area under the precision-recall curve, step-wise),
/// with tied scores processed as one block.
pub fn pr_auc(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    if n_pos == 0 {
        return Err(Error::Empty("PR-AUC needs positive labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let block_tp = idx[i..=j].iter().filter(|&&k| labels[k] > 0.0).count();
        tp += block_tp;
        seen += j - i + 1;
        ap += block_tp as f64 / n_pos as f64 * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Ok(ap)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS distance needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizedMetrics {
    pub accuracy: f64,
    pub auc: f64,
    /// KS distance between original and randomized scores of the original
    /// true positives.
    pub logit_shift: f64,
    pub accuracy_std: f64,
    pub auc_std: f64,
    pub repeats: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Metrics on copies of `data` whose `coords` block is randomized, averaged
/// over `repeats` independent permutations.
pub fn randomized_metrics_coords<M: Scorer + ?Sized>(
    model: &M,
    data: &Dataset,
    coords: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<RandomizedMetrics> {
    if repeats == 0 {
        return Err(Error::spec("randomized metrics need at least one repeat"));
    }
    let base = model.scores(data.features.view())?;
    let tp: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] > 0.0 && predict_label(base[i]) > 0.0)
        .collect();
    let base_tp: Vec<f64> = tp.iter().map(|&i| base[i]).collect();
    let (mut accs, mut aucs, mut shifts) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..repeats {
        let rs = seed::derive_index(seed, "randomized-metrics", r as u64);
        let scores = if coords.is_empty() {
            base.clone()
        } else {
            let shuffled = data.randomize_coords(coords, rs)?;
            model.scores(shuffled.features.view())?
        };
        accs.push(accuracy(scores.view(), data.labels.view())?);
        aucs.push(auc(scores.view(), data.labels.view())?);
        let shift = if tp.is_empty() {
            0.0
        } else {
            let rand_tp: Vec<f64> = tp.iter().map(|&i| scores[i]).collect();
            ks_distance(&base_tp, &rand_tp)?
        };
        shifts.push(shift);
    }
    let (accuracy, accuracy_std) = mean_std(&accs);
    let (auc, auc_std) = mean_std(&aucs);
    Ok(RandomizedMetrics {
        accuracy,
        auc,
        logit_shift: shifts.iter().sum::<f64>() / repeats as f64,
        accuracy_std,
        auc_std,
        repeats,
    })
}

pub fn randomized_metrics<M: Scorer + ?Sized>(
    model: &M,
    data: &Dataset,
    group: &str,
    repeats: usize,
    seed: u64,
) -> Result<RandomizedMetrics> {
    let coords = data.group(group)?;
    randomized_metrics_coords(model, data, &coords, repeats, seed)
}

/// Accuracy after a per-example PGD attack (an upper bound on the true
/// robust accuracy, since the attack may miss adversarial points).
pub fn robust_accuracy<M: Differentiable + ?Sized>(
    model: &M,
    data: &Dataset,
    attack: &AttackConfig,
) -> Result<f64> {
    attack.validate()?;
    if attack.budget == 0.0 {
        let s = model.scores(data.features.view())?;
        return accuracy(s.view(), data.labels.view());
    }
    let adv = pgd_batch(model, data.features.view(), data.labels.view(), attack)?;
    let s = model.scores(adv.view())?;
    accuracy(s.view(), data.labels.view())
}

/// Scores on a `resolution x resolution` grid over `[-half_width, half_width]^2`
/// in pre-rotation coordinates `coord_a` (rows) and `coord_b` (columns), the
/// remaining coordinates fixed at row `reference` of `data`.
pub fn decision_boundary_grid<M: Scorer + ?Sized>(
    model: &M,
    data: &Dataset,
    coord_a: usize,
    coord_b: usize,
    resolution: usize,
    half_width: f64,
    reference: usize,
) -> Result<Array2<f64>> {
    let d = data.dim();
    if coord_a >= d || coord_b >= d || reference >= data.len() {
        return Err(Error::OutOfRange(format!(
            "grid coordinates ({coord_a}, {coord_b}) or reference row {reference} out of range"
        )));
    }
    if resolution < 2 {
        return Err(Error::spec("grid resolution must be at least 2"));
    }
    let axis = |i: usize| -half_width + 2.0 * half_width * i as f64 / (resolution - 1) as f64;
    let mut raw = Array2::zeros((resolution * resolution, d));
    for i in 0..resolution {
        for j in 0..resolution {
            let mut row = raw.row_mut(i * resolution + j);
            row.assign(&data.raw.row(reference));
            row[coord_a] = axis(i);
            row[coord_b] = axis(j);
        }
    }
    let x = rotate_rows(raw.view(), data.rotation.as_ref());
    let s = model.scores(x.view())?;
    Ok(s.into_shape_with_order((resolution, resolution))
        .expect("grid shape"))
}

/// Coordinates ordered by the AUC drop caused by randomizing each one alone,
/// largest first. Returns `(coordinate, drop)`.
pub fn influence_ranking<M: Scorer + ?Sized>(
    model: &M,
    data: &Dataset,
    repeats: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if data.is_empty() {
        return Err(Error::Empty("influence ranking needs data".into()));
    }
    let s = model.scores(data.features.view())?;
    let base = auc(s.view(), data.labels.view())?;
    let mut out = Vec::with_capacity(data.dim());
    for i in 0..data.dim() {
        let r = randomized_metrics_coords(
            model,
            data,
            &[i],
            repeats,
            seed::derive_index(seed, "influence", i as u64),
        )?;
        out.push((i, base - r.auc));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustEntry {
    pub norm: Norm,
    pub budget: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub standard_accuracy: f64,
    pub standard_auc: f64,
    pub standard_pr_auc: f64,
    pub randomized: BTreeMap<String, RandomizedMetrics>,
    pub robust: Vec<RobustEntry>,
    pub n_eval: usize,
    pub seed: u64,
}

/// Standard metrics, randomized metrics per group and robust accuracy per
/// `(norm, budget)`.
pub fn evaluate<M: Differentiable + ?Sized>(
    model: &M,
    data: &Dataset,
    groups: &[String],
    robust: &[(Norm, f64)],
    attack: &AttackConfig,
    repeats: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let s = model.scores(data.features.view())?;
    let mut randomized = BTreeMap::new();
    for g in groups {
        let r = randomized_metrics(model, data, g, repeats, seed::derive(seed, g))?;
        randomized.insert(g.clone(), r);
    }
    let mut robust_out = Vec::new();
    for &(norm, budget) in robust {
        let cfg = AttackConfig {
            norm,
            budget,
            ..*attack
        };
        robust_out.push(RobustEntry {
            norm,
            budget,
            accuracy: robust_accuracy(model, data, &cfg)?,
        });
    }
    Ok(MetricsReport {
        standard_accuracy: accuracy(s.view(), data.labels.view())?,
        standard_auc: auc(s.view(), data.labels.view())?,
        standard_pr_auc: pr_auc(s.view(), data.labels.view())?,
        randomized,
        robust: robust_out,
        n_eval: data.len(),
        seed,
    })
}

/// Labels as an owned vector of `±1` predictions.
pub fn predictions(scores: ArrayView1<f64>) -> Array1<f64> {
    scores.mapv(predict_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_examples() {
        let y = array![1.0, 1.0, -1.0, -1.0];
        assert_eq!(accuracy(y.view(), y.view()).unwrap(), 1.0);
        assert_eq!(accuracy((-&y).view(), y.view()).unwrap(), 0.0);
        let s = array![0.3, -0.2, 0.1, -0.4];
        assert_eq!(accuracy(s.view(), y.view()).unwrap(), 0.5);
        assert_eq!(accuracy(array![0.0].view(), array![1.0].view()).unwrap(), 1.0);
        assert!(accuracy(s.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn auc_examples() {
        let y = array![1.0, 1.0, -1.0, -1.0];
        assert_eq!(auc(array![0.9, 0.4, 0.6, 0.1].view(), y.view()).unwrap(), 0.75);
        assert_eq!(auc(array![2.0, 3.0, 0.0, 1.0].view(), y.view()).unwrap(), 1.0);
        assert_eq!(auc(array![1.0, 1.0, 1.0, 1.0].view(), y.view()).unwrap(), 0.5);
        assert!(auc(array![1.0, 2.0].view(), array![1.0, 1.0].view()).is_err());
    }

    #[test]
    fn pr_auc_endpoints() {
        let y = array![1.0, 1.0, -1.0, -1.0];
        assert_eq!(pr_auc(array![2.0, 3.0, 0.0, 1.0].view(), y.view()).unwrap(), 1.0);
        assert_eq!(pr_auc(array![1.0, 1.0, 1.0, 1.0].view(), y.view()).unwrap(), 0.5);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[5.0, 6.0]).unwrap(), 1.0);
        assert!((ks_distance(&[0.0, 1.0], &[0.5, 1.5]).unwrap() - 0.5).abs() < 1e-15);
    }
}
