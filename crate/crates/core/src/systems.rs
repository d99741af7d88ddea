//! Seeded random test systems for the identity suites.

use nalgebra::{DMatrix, DVector};

use crate::linalg::symmetrize;
use crate::mhe::NoiseSchedule;
use crate::simulate::SampleStream;
use crate::system_model::NltvModel;

/// Linear time-variant system `x_{j+1} = A_j x_j + u_j`, `y_j = C_j x_j + d_j`
/// with per-epoch noise covariances, optionally bent by smooth nonlinearities.
#[derive(Clone, Debug)]
pub struct RandomSystem {
    pub a: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub u: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    /// `f` adds `alpha · sin(x)` elementwise.
    pub alpha: f64,
    /// `h` evaluates `C (x + beta · tanh(x)) + d`.
    pub beta: f64,
}

impl RandomSystem {
    pub fn steps(&self) -> usize {
        self.a.len()
    }

    pub fn is_linear(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// Shape parameters for [`random_system`].
#[derive(Clone, Copy, Debug)]
pub struct SystemShape {
    pub state_dim: usize,
    /// Measurement dimension drawn per epoch from this inclusive range.
    pub meas_dim: (usize, usize),
    pub steps: usize,
    pub alpha: f64,
    pub beta: f64,
}

pub fn random_matrix(rng: &mut SampleStream, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

pub fn random_vector(rng: &mut SampleStream, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.normal())
}

/// `L Lᵀ · scale + floor · I` with a random `L`.
pub fn random_spd(rng: &mut SampleStream, dim: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let l = random_matrix(rng, dim, dim, 1.0);
    symmetrize(&(&l * l.transpose() * scale + DMatrix::identity(dim, dim) * floor))
}

pub fn random_system(rng: &mut SampleStream, shape: SystemShape) -> RandomSystem {
    let n = shape.state_dim;
    let mut sys = RandomSystem {
        a: Vec::with_capacity(shape.steps),
        c: Vec::with_capacity(shape.steps),
        u: Vec::with_capacity(shape.steps),
        d: Vec::with_capacity(shape.steps),
        q: Vec::with_capacity(shape.steps),
        r: Vec::with_capacity(shape.steps),
        alpha: shape.alpha,
        beta: shape.beta,
    };
    let (lo, hi) = shape.meas_dim;
    for _ in 0..shape.steps {
        let m = lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo);
        sys.a.push(DMatrix::identity(n, n) * 0.8 + random_matrix(rng, n, n, 0.3 / (n as f64).sqrt()));
        sys.c.push(random_matrix(rng, m, n, 1.0));
        sys.u.push(random_vector(rng, n, 0.5));
        sys.d.push(random_vector(rng, m, 0.5));
        sys.q.push(random_spd(rng, n, 0.05, 0.02));
        sys.r.push(random_spd(rng, m, 0.2, 0.1));
    }
    sys
}

impl NltvModel for RandomSystem {
    fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    fn meas_dim(&self, k: usize) -> usize {
        self.c[k].nrows()
    }

    fn f(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.a[k] * x + &self.u[k] + x.map(f64::sin) * self.alpha
    }

    fn h(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.c[k] * (x + x.map(f64::tanh) * self.beta) + &self.d[k]
    }

    fn df_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        &self.a[k] + DMatrix::from_diagonal(&x.map(f64::cos)) * self.alpha
    }

    fn dh_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let slope = x.map(|v| 1.0 + self.beta / v.cosh().powi(2));
        &self.c[k] * DMatrix::from_diagonal(&slope)
    }
}

impl NoiseSchedule for RandomSystem {
    fn process(&self, j: usize) -> DMatrix<f64> {
        self.q[j].clone()
    }

    fn measurement(&self, j: usize) -> DMatrix<f64> {
        self.r[j].clone()
    }
}

fn correlated(rng: &mut SampleStream, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(cov.nrows(), cov.ncols()));
    l * random_vector(rng, cov.nrows(), 1.0)
}

/// Draws a noisy trajectory from `x0` and returns the measurements `y_0 … y_{steps−1}`.
pub fn simulate_measurements<M, S>(
    rng: &mut SampleStream,
    model: &M,
    noise: &S,
    x0: &DVector<f64>,
    steps: usize,
) -> Vec<DVector<f64>>
where
    M: NltvModel + ?Sized,
    S: NoiseSchedule + ?Sized,
{
    let mut x = x0.clone();
    let mut ys = Vec::with_capacity(steps);
    for k in 0..steps {
        ys.push(model.h(k, &x) + correlated(rng, &noise.measurement(k)));
        x = model.f(k, &x) + correlated(rng, &noise.process(k));
    }
    ys
}
