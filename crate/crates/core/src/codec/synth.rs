//! Synthetic data for decoder benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::Matrix;

use super::kalman::KalmanModel;

/// `n_per` isotropic Gaussian draws around each mean, labelled by mean
/// index, interleaved class by class.
pub fn gaussian_clusters(
    means: &[Vec<f64>],
    sigma: f64,
    n_per: usize,
    rng: &mut impl Rng,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut xs = Vec::with_capacity(means.len() * n_per);
    let mut ys = Vec::with_capacity(means.len() * n_per);
    for _ in 0..n_per {
        for (label, m) in means.iter().enumerate() {
            xs.push(m.iter().map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal)).collect());
            ys.push(label);
        }
    }
    (xs, ys)
}

/// Six 2D points on a circle of the given radius.
pub fn hexagon_means(radius: f64) -> Vec<Vec<f64>> {
    (0..6)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / 6.0;
            vec![radius * th.cos(), radius * th.sin()]
        })
        .collect()
}

fn gaussian_draw(chol: &Matrix<f64>, rng: &mut impl Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..chol.cols()).map(|_| rng.sample(StandardNormal)).collect();
    chol.matvec(&z).expect("square factor")
}

/// Lower Cholesky factor of a PSD matrix; zero pivots give zero columns.
pub fn cholesky(m: &Matrix<f64>) -> Matrix<f64> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                l[(i, i)] = (m[(i, i)] - s).max(0.0).sqrt();
            } else if l[(j, j)] > 0.0 {
                l[(i, j)] = (m[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    l
}

/// Simulates `steps` samples of the linear-Gaussian system from `x0`.
pub fn simulate_linear_system(
    model: &KalmanModel<f64>,
    x0: &[f64],
    steps: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    model.validate()?;
    let lq = cholesky(&model.q_cov);
    let lr = cholesky(&model.r_cov);
    let mut x = x0.to_vec();
    let mut xs = Vec::with_capacity(steps);
    let mut ys = Vec::with_capacity(steps);
    for _ in 0..steps {
        let n = gaussian_draw(&lq, rng);
        x = model.dyn_a.matvec(&x)?.iter().zip(&n).map(|(a, b)| a + b).collect();
        let m = gaussian_draw(&lr, rng);
        ys.push(model.meas_b.matvec(&x)?.iter().zip(&m).map(|(a, b)| a + b).collect());
        xs.push(x.clone());
    }
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let m = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&m);
        assert!(l.matmul(&l.transpose()).unwrap().sub(&m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn hexagon_is_regular() {
        let h = hexagon_means(4.0);
        for p in &h {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 4.0).abs() < 1e-12);
        }
    }
}
