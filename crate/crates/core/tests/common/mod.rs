#![allow(dead_code)]

use horizon_core::mhe::{riccati_update, HorizonWindow};
use horizon_core::simulate::SampleStream;
use horizon_core::system_model::NltvModel;
use horizon_core::systems::{random_spd, random_system, random_vector, RandomSystem, SystemShape};
use nalgebra::{DMatrix, DVector};

pub fn ltv(rng: &mut SampleStream, n: usize, meas: (usize, usize), steps: usize) -> RandomSystem {
    random_system(rng, SystemShape { state_dim: n, meas_dim: meas, steps, alpha: 0.0, beta: 0.0 })
}

pub fn nonlinear(rng: &mut SampleStream, n: usize, meas: (usize, usize), steps: usize) -> RandomSystem {
    random_system(rng, SystemShape { state_dim: n, meas_dim: meas, steps, alpha: 0.1, beta: 0.1 })
}

/// Window over `start ..= end` with random measurements and linearization points,
/// prior covariance chained from a random initial covariance.
pub fn window(rng: &mut SampleStream, sys: &RandomSystem, start: usize, end: usize) -> HorizonWindow {
    let n = sys.state_dim();
    let mut p = spd(rng, n);
    for j in 0..start {
        p = riccati_update(&p, &sys.a[j], &sys.c[j], &sys.q[j], &sys.r[j]).unwrap();
    }
    let ys: Vec<_> = (start..=end).map(|j| random_vector(rng, sys.meas_dim(j), 1.0)).collect();
    let pts = |rng: &mut SampleStream| -> Vec<DVector<f64>> { (start..=end).map(|_| random_vector(rng, n, 1.0)).collect() };
    let pred = pts(rng);
    let filt = pts(rng);
    HorizonWindow::linearize(sys, sys, start, random_vector(rng, n, 1.0), p, &ys, &pred, &filt).unwrap()
}

pub fn spd(rng: &mut SampleStream, n: usize) -> DMatrix<f64> {
    random_spd(rng, n, 0.5, 0.1)
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Textbook covariance-form Kalman update followed by prediction.
#[allow(clippy::too_many_arguments)]
pub fn covariance_form_step(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    h_at_x: &DVector<f64>,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = c * p * c.transpose() + r;
    let k = p * c.transpose() * s.try_inverse().unwrap();
    let x_filt = x + &k * (y - h_at_x);
    let p_filt = p - &k * c * p;
    (f(&x_filt), a * p_filt * a.transpose() + q)
}
