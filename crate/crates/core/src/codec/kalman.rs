//! Linear-Gaussian kinematic decoder.
//!
//! Dynamics `x_t = A x_{t-1} + n_t`, measurements `y_t = B x_t + m_t`, with
//! `n_t ~ N(0, Q)` and `m_t ~ N(0, R)`.

use crate::checkpoint::{Checkpoint, NamedArray};
use crate::error::{Error, Result};
use crate::linalg::{outer, Matrix};
use crate::scalar::Scalar;

/// Relative pivot tolerance for the regressor rank checks in [`kalman_fit`].
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel<T> {
    pub dyn_a: Matrix<T>,
    pub meas_b: Matrix<T>,
    pub q_cov: Matrix<T>,
    pub r_cov: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBelief<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Scalar> KalmanModel<T> {
    pub fn state_dim(&self) -> usize {
        self.dyn_a.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.meas_b.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.obs_dim());
        for (name, mat, shape) in [
            ("dyn_a", &self.dyn_a, (n, n)),
            ("meas_b", &self.meas_b, (m, n)),
            ("q_cov", &self.q_cov, (n, n)),
            ("r_cov", &self.r_cov, (m, m)),
        ] {
            if mat.shape() != shape {
                return Err(Error::dim(name, shape.0 * shape.1, mat.rows() * mat.cols()));
            }
        }
        let tol = T::lit(1e-9);
        for (name, c) in [("q_cov", &self.q_cov), ("r_cov", &self.r_cov)] {
            if !c.is_symmetric(tol * (T::one() + c.max_abs())) {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::new();
        ck.push(NamedArray::matrix("kalman.dyn_a", "matrix", &self.dyn_a));
        ck.push(NamedArray::matrix("kalman.meas_b", "matrix", &self.meas_b));
        ck.push(NamedArray::matrix("kalman.q_cov", "covariance", &self.q_cov));
        ck.push(NamedArray::matrix("kalman.r_cov", "covariance", &self.r_cov));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let m = Self {
            dyn_a: ck.require("kalman.dyn_a")?.to_matrix(),
            meas_b: ck.require("kalman.meas_b")?.to_matrix(),
            q_cov: ck.require("kalman.q_cov")?.to_matrix(),
            r_cov: ck.require("kalman.r_cov")?.to_matrix(),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Least-squares fit of `M` in `target_t ≈ M regressor_t`, with the
/// residual covariance (divisor = number of pairs).
fn regress<T: Scalar>(regressors: &[&Vec<T>], targets: &[&Vec<T>], what: &str) -> Result<(Matrix<T>, Matrix<T>)> {
    let p = regressors[0].len();
    let q = targets[0].len();
    let mut xx = Matrix::zeros(p, p);
    let mut yx = Matrix::zeros(q, p);
    for (x, y) in regressors.iter().zip(targets) {
        xx = xx.add(&outer(x, x))?;
        yx = yx.add(&outer(y, x))?;
    }
    let rank = xx.rank(T::lit(RANK_TOL));
    if rank < p {
        return Err(Error::RankDeficient(format!(
            "{what}: state regressors span rank {rank} of {p} dimensions"
        )));
    }
    // M = YX^T (XX^T)^-1, solved as (XX^T) M^T = XY^T
    let m = xx.solve(&yx.transpose())?.transpose();
    let mut cov = Matrix::zeros(q, q);
    for (x, y) in regressors.iter().zip(targets) {
        let pred = m.matvec(x)?;
        let e: Vec<T> = y.iter().zip(&pred).map(|(&a, &b)| a - b).collect();
        cov = cov.add(&outer(&e, &e))?;
    }
    let n = T::lit(regressors.len() as f64);
    Ok((m, cov.scale(T::one() / n).symmetrize()))
}

/// Ordinary least squares: `A` regresses `x_t` on `x_{t-1}`, `B` regresses
/// `y_t` on `x_t`; `Q` and `R` are the residual covariances.
pub fn kalman_fit<T: Scalar>(states: &[Vec<T>], observations: &[Vec<T>]) -> Result<KalmanModel<T>> {
    if states.len() != observations.len() {
        return Err(Error::SequenceLength(format!(
            "{} states paired with {} observations",
            states.len(),
            observations.len()
        )));
    }
    let n = states.first().map_or(0, Vec::len);
    let m = observations.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("states and observations must be non-empty vectors".into()));
    }
    if states.len() < n + m {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples, got {}",
            n + m,
            states.len()
        )));
    }
    if let Some(i) = states.iter().position(|s| s.len() != n) {
        return Err(Error::dim(format!("state {i}"), n, states[i].len()));
    }
    if let Some(i) = observations.iter().position(|o| o.len() != m) {
        return Err(Error::dim(format!("observation {i}"), m, observations[i].len()));
    }
    let prev: Vec<&Vec<T>> = states[..states.len() - 1].iter().collect();
    let next: Vec<&Vec<T>> = states[1..].iter().collect();
    let (dyn_a, q_cov) = regress(&prev, &next, "dynamics")?;
    let all: Vec<&Vec<T>> = states.iter().collect();
    let obs: Vec<&Vec<T>> = observations.iter().collect();
    let (meas_b, r_cov) = regress(&all, &obs, "measurement")?;
    Ok(KalmanModel {
        dyn_a,
        meas_b,
        q_cov,
        r_cov,
    })
}

/// Predict then update with observation `y`. The covariance is updated in
/// Joseph form and symmetrised.
pub fn kalman_step<T: Scalar>(model: &KalmanModel<T>, belief: &KalmanBelief<T>, y: &[T]) -> Result<KalmanBelief<T>> {
    let (n, m) = (model.state_dim(), model.obs_dim());
    if belief.mean.len() != n || belief.cov.shape() != (n, n) {
        return Err(Error::dim("belief", n, belief.mean.len()));
    }
    if y.len() != m {
        return Err(Error::dim("observation", m, y.len()));
    }
    let a = &model.dyn_a;
    let b = &model.meas_b;
    let mean = a.matvec(&belief.mean)?;
    let cov = a.matmul(&belief.cov)?.matmul(&a.transpose())?.add(&model.q_cov)?.symmetrize();

    let pbt = cov.matmul(&b.transpose())?;
    let s = b.matmul(&pbt)?.add(&model.r_cov)?.symmetrize();
    // K = P B^T S^-1, computed as (S K^T = B P)^T using the symmetry of S and P
    let k = s
        .solve(&pbt.transpose())
        .map_err(|e| Error::Singular(format!("innovation covariance: {e}")))?
        .transpose();
    let pred = b.matvec(&mean)?;
    let innov: Vec<T> = y.iter().zip(&pred).map(|(&o, &p)| o - p).collect();
    let corr = k.matvec(&innov)?;
    let mean: Vec<T> = mean.iter().zip(&corr).map(|(&x, &c)| x + c).collect();

    let ikb = Matrix::identity(n).sub(&k.matmul(b)?)?;
    let cov = ikb
        .matmul(&cov)?
        .matmul(&ikb.transpose())?
        .add(&k.matmul(&model.r_cov)?.matmul(&k.transpose())?)?
        .symmetrize();
    if !cov.is_finite() || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kalman posterior".into()));
    }
    Ok(KalmanBelief { mean, cov })
}

/// Position-velocity model in 2D (state `[px, py, vx, vy]`) with step
/// `dt_s` and velocity damping `damping` per step.
pub fn constant_velocity_dynamics<T: Scalar>(dt_s: T, damping: T) -> Matrix<T> {
    let mut a = Matrix::identity(4);
    a[(0, 2)] = dt_s;
    a[(1, 3)] = dt_s;
    a[(2, 2)] = damping;
    a[(3, 3)] = damping;
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, s: f64) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
    }

    fn random_spd(rng: &mut impl Rng, n: usize, s: f64) -> Matrix<f64> {
        let l = random_matrix(rng, n, n, 1.0);
        l.matmul(&l.transpose()).unwrap().scale(s).add(&Matrix::identity(n).scale(0.1 * s)).unwrap()
    }

    #[test]
    fn noiseless_data_recovers_generating_matrices() {
        let mut rng = rng_for(1, "kalman-fit");
        let a = Matrix::from_rows(&[vec![0.9, 0.2, 0.0], vec![-0.2, 0.9, 0.1], vec![0.0, 0.0, 0.7]]).unwrap();
        let b = random_matrix(&mut rng, 4, 3, 1.0);
        let mut x = vec![1.0, -0.5, 2.0];
        let (mut xs, mut ys) = (vec![], vec![]);
        for _ in 0..30 {
            xs.push(x.clone());
            ys.push(b.matvec(&x).unwrap());
            x = a.matvec(&x).unwrap();
        }
        let m = kalman_fit(&xs, &ys).unwrap();
        assert!(m.dyn_a.sub(&a).unwrap().max_abs() < 1e-8);
        assert!(m.meas_b.sub(&b).unwrap().max_abs() < 1e-8);
        assert!(m.q_cov.max_abs() < 1e-12 && m.r_cov.max_abs() < 1e-12);
    }

    #[test]
    fn constant_states_are_rank_deficient() {
        let xs = vec![vec![1.0, 2.0]; 10];
        let ys = vec![vec![0.5, 0.1, 3.0]; 10];
        let err = kalman_fit(&xs, &ys).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
        assert!(err.to_string().contains("rank 1 of 2"));
    }

    #[test]
    fn noisy_fit_recovers_covariances() {
        let mut rng = rng_for(2, "kalman-noise");
        let a = constant_velocity_dynamics(0.1, 0.8);
        let b = random_matrix(&mut rng, 3, 4, 1.0);
        let q: Matrix<f64> = Matrix::diagonal(&[0.01, 0.02, 0.05, 0.04]);
        let r: Matrix<f64> = Matrix::diagonal(&[0.3, 0.5, 0.2]);
        let mut x = vec![0.0; 4];
        let (mut xs, mut ys) = (vec![], vec![]);
        for _ in 0..10_000 {
            let ax = a.matvec(&x).unwrap();
            x = (0..4).map(|i| ax[i] + q[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            let bx = b.matvec(&x).unwrap();
            ys.push((0..3).map(|i| bx[i] + r[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal)).collect());
            xs.push(x.clone());
        }
        let m = kalman_fit(&xs, &ys).unwrap();
        for i in 0..4 {
            assert!((m.q_cov[(i, i)] / q[(i, i)] - 1.0).abs() < 0.2, "q {i}");
        }
        for i in 0..3 {
            assert!((m.r_cov[(i, i)] / r[(i, i)] - 1.0).abs() < 0.2, "r {i}");
        }
    }

    #[test]
    fn exact_measurement_inverts_b() {
        let mut rng = rng_for(3, "kalman-exact");
        let b = random_matrix(&mut rng, 3, 3, 1.0);
        let model = KalmanModel {
            dyn_a: Matrix::identity(3),
            meas_b: b.clone(),
            q_cov: Matrix::identity(3),
            r_cov: Matrix::zeros(3, 3),
        };
        let belief = KalmanBelief {
            mean: vec![0.0; 3],
            cov: Matrix::identity(3),
        };
        let y = vec![0.3, -1.2, 2.0];
        let post = kalman_step(&model, &belief, &y).unwrap();
        let expected = b.solve_vec(&y).unwrap();
        for (p, e) in post.mean.iter().zip(&expected) {
            assert!((p - e).abs() < 1e-8);
        }
    }

    #[test]
    fn repeated_observation_shrinks_covariance() {
        let mut rng = rng_for(4, "kalman-shrink");
        let model = KalmanModel {
            dyn_a: Matrix::identity(2),
            meas_b: random_matrix(&mut rng, 3, 2, 1.0),
            q_cov: Matrix::zeros(2, 2),
            r_cov: random_spd(&mut rng, 3, 0.5),
        };
        let mut b = KalmanBelief {
            mean: vec![0.0; 2],
            cov: Matrix::identity(2).scale(4.0),
        };
        let y = vec![1.0, 0.5, -0.3];
        let mut prev = b.cov.trace();
        for _ in 0..20 {
            b = kalman_step(&model, &b, &y).unwrap();
            assert!(b.cov.trace() <= prev);
            assert!(b.cov.is_symmetric(0.0));
            prev = b.cov.trace();
        }
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let model = KalmanModel {
            dyn_a: Matrix::identity(2),
            meas_b: Matrix::zeros(2, 2),
            q_cov: Matrix::zeros(2, 2),
            r_cov: Matrix::zeros(2, 2),
        };
        let b = KalmanBelief {
            mean: vec![0.0; 2],
            cov: Matrix::identity(2),
        };
        assert!(matches!(kalman_step(&model, &b, &[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rng_for(5, "kalman-ck");
        let m = KalmanModel {
            dyn_a: random_matrix(&mut rng, 2, 2, 1.0),
            meas_b: random_matrix(&mut rng, 3, 2, 1.0),
            q_cov: random_spd(&mut rng, 2, 1.0),
            r_cov: random_spd(&mut rng, 3, 1.0),
        };
        let text = m.to_checkpoint().to_text().unwrap();
        let back = KalmanModel::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
