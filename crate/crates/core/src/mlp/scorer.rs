//! Scoring interfaces shared by models, ensembles and hand-built classifiers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::model::MlpModel;
use crate::{Error, Result};

/// Anything that maps inputs to a real score; the predicted label is
/// `sign(score)` with ties going to `+1`.
pub trait Scorer {
    fn input_dim(&self) -> usize;
    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>>;
}

/// A scorer with an input gradient.
pub trait Differentiable: Scorer {
    /// Scores of the rows of `x` and, row by row, `dscore_i * grad_x s(x_i)`.
    fn score_input_grad(
        &self,
        x: ArrayView2<f64>,
        dscore: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)>;
}

pub fn predict_label(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl Scorer for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        MlpModel::scores(self, x)
    }
}

impl Differentiable for MlpModel {
    fn score_input_grad(
        &self,
        x: ArrayView2<f64>,
        dscore: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        MlpModel::score_input_grad(self, x, dscore)
    }
}

/// `s(x) = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub w: Array1<f64>,
    pub b: f64,
}

impl LinearScorer {
    pub fn new(w: Array1<f64>, b: f64) -> Self {
        Self { w, b }
    }

    /// Scorer that reads a single coordinate.
    pub fn coordinate(d: usize, i: usize) -> Self {
        let mut w = Array1::zeros(d);
        w[i] = 1.0;
        Self { w, b: 0.0 }
    }
}

impl Scorer for LinearScorer {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_dim(self.w.len(), x.ncols())?;
        Ok(x.dot(&self.w) + self.b)
    }
}

impl Differentiable for LinearScorer {
    fn score_input_grad(
        &self,
        x: ArrayView2<f64>,
        dscore: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let s = self.scores(x)?;
        let g = Array2::from_shape_fn(x.dim(), |(i, j)| dscore[i] * self.w[j]);
        Ok((s, g))
    }
}

fn check_dim(want: usize, got: usize) -> Result<()> {
    if want == got {
        Ok(())
    } else {
        Err(Error::shape(format!("scorer expects {want} inputs, got {got}")))
    }
}

/// Averages member scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<MlpModel>,
}

impl Ensemble {
    pub fn new(members: Vec<MlpModel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Empty("ensemble needs at least one member".into()))?;
        let d = first.input_dim();
        if members.iter().any(|m| m.input_dim() != d) {
            return Err(Error::shape("ensemble members disagree on input dimension"));
        }
        Ok(Self { members })
    }
}

impl Scorer for Ensemble {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut acc = Array1::zeros(x.nrows());
        for m in &self.members {
            acc += &m.scores(x)?;
        }
        Ok(acc / self.members.len() as f64)
    }
}

impl Differentiable for Ensemble {
    fn score_input_grad(
        &self,
        x: ArrayView2<f64>,
        dscore: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let k = self.members.len() as f64;
        let mut s = Array1::zeros(x.nrows());
        let mut g = Array2::zeros(x.dim());
        for m in &self.members {
            let (sm, gm) = m.score_input_grad(x, dscore)?;
            s += &sm;
            g += &gm;
        }
        Ok((s / k, g / k))
    }
}

/// Mean member score at a single input.
pub fn ensemble_score(models: &[MlpModel], x: ArrayView1<f64>) -> Result<f64> {
    let e = Ensemble::new(models.to_vec())?;
    Ok(e.scores(x.insert_axis(ndarray::Axis(0)))?[0])
}

/// Parameter-wise `alpha * a + (1 - alpha) * b`.
pub fn interpolate(a: &MlpModel, b: &MlpModel, alpha: f64) -> Result<MlpModel> {
    if !a.same_shape(b) {
        return Err(Error::shape("interpolated models must share an architecture"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!(
            "interpolation constant must lie in [0, 1], got {alpha}"
        )));
    }
    // Metadata (seed) follows the dominant endpoint.
    let mut out = if alpha >= 0.5 { a.clone() } else { b.clone() };
    let pa = a.flat_params();
    let pb = b.flat_params();
    let mixed: Vec<f64> = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    out.set_flat_params(&mixed)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_model, Arch, ModelOptions};
    use ndarray::array;

    #[test]
    fn single_member_ensemble_matches_forward() {
        let m = init_model(3, Arch::new(5, 1), &ModelOptions::default(), 1).unwrap();
        let x = array![0.2, -0.5, 1.0];
        assert_eq!(
            ensemble_score(std::slice::from_ref(&m), x.view()).unwrap(),
            m.forward(x.view()).unwrap()
        );
        assert!(ensemble_score(&[], x.view()).is_err());
    }

    #[test]
    fn opposite_members_cancel() {
        let mut a = init_model(1, Arch::new(1, 1), &ModelOptions::default(), 1).unwrap();
        a.layers[0].weight = array![[1.0]];
        a.layers[0].bias = array![0.0];
        a.layers[1].weight = array![[1.0]];
        a.layers[1].bias = array![0.0];
        let mut b = a.clone();
        b.layers[1].weight = array![[-1.0]];
        let x = array![1.0];
        let s = ensemble_score(&[a, b], x.view()).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(predict_label(s), 1.0);
    }

    #[test]
    fn interpolation_endpoints() {
        let a = init_model(3, Arch::new(4, 2), &ModelOptions::default(), 1).unwrap();
        let b = init_model(3, Arch::new(4, 2), &ModelOptions::default(), 2).unwrap();
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b);
        let mid = interpolate(&a, &b, 0.5).unwrap();
        for ((x, y), m) in a.flat_params().iter().zip(b.flat_params()).zip(mid.flat_params()) {
            assert!((m - (x + y) / 2.0).abs() <= 1e-15);
        }
        let c = init_model(3, Arch::new(5, 2), &ModelOptions::default(), 2).unwrap();
        assert!(interpolate(&a, &c, 0.5).is_err());
    }
}
