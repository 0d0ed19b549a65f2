//! Random orthogonal matrices.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed;

/// Orthogonal factor of a seeded `d x d` Gaussian matrix, with column signs
/// fixed so that the triangular factor has a positive diagonal. This makes the
/// result Haar-distributed and a pure function of `(d, seed)`.
pub fn random_rotation(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed::derive(seed, "rotation"));
    let g = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    householder_q(g)
}

/// Householder QR; returns `Q` with `diag(R) > 0`.
fn householder_q(mut a: Array2<f64>) -> Array2<f64> {
    let d = a.nrows();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut r_sign = vec![1.0; d];
    for j in 0..d {
        let norm = (j..d).map(|i| a[[i, j]] * a[[i, j]]).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (j..d).map(|i| a[[i, j]]).collect();
        if norm == 0.0 {
            reflectors.push(vec![0.0; d - j]);
            continue;
        }
        // v = x + sign(x0) |x| e0 avoids cancellation; R_jj = -sign(x0) |x|.
        let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += s * norm;
        r_sign[j] = -s;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for col in j..d {
            let dot: f64 = (j..d).map(|i| v[i - j] * a[[i, col]]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in j..d {
                a[[i, col]] -= f * v[i - j];
            }
        }
        let vn = vnorm2.sqrt();
        reflectors.push(v.into_iter().map(|x| x / vn).collect());
    }
    // Q = H_0 H_1 ... H_{d-1}; accumulate by applying reflectors to I in reverse.
    let mut q = Array2::<f64>::eye(d);
    for j in (0..d).rev() {
        let v = &reflectors[j];
        for col in 0..d {
            let dot: f64 = (j..d).map(|i| v[i - j] * q[[i, col]]).sum();
            if dot != 0.0 {
                for i in j..d {
                    q[[i, col]] -= 2.0 * dot * v[i - j];
                }
            }
        }
    }
    for (j, &s) in r_sign.iter().enumerate() {
        if s < 0.0 {
            q.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    q
}
