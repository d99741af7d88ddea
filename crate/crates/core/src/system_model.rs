//! Nonlinear time-variant system models and their affine linearizations.
//!
//! A model supplies the dynamics `x_{k+1} = f_k(x_k) + w_k`, the measurement
//! function `y_k = h_k(x_k) + v_k`, and analytic Jacobians for both. The
//! estimators never differentiate numerically; [`fd_jacobian`] exists to check
//! the analytic Jacobians in tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_finite_matrix, is_finite_vector};

/// A discrete-time nonlinear time-variant system.
///
/// Implementations must be deterministic: identical `(k, x)` inputs give
/// bit-identical outputs. The measurement dimension may change with `k`.
pub trait NltvModel {
    fn state_dim(&self) -> usize;

    fn meas_dim(&self, k: usize) -> usize;

    /// State transition from epoch `k` to `k + 1`.
    fn f(&self, k: usize, x: &DVector<f64>) -> DVector<f64>;

    /// Measurement function at epoch `k`.
    fn h(&self, k: usize, x: &DVector<f64>) -> DVector<f64>;

    /// Jacobian of [`NltvModel::f`], `state_dim × state_dim`.
    fn df_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobian of [`NltvModel::h`], `meas_dim(k) × state_dim`.
    fn dh_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64>;
}

impl<M: NltvModel + ?Sized> NltvModel for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn meas_dim(&self, k: usize) -> usize {
        (**self).meas_dim(k)
    }
    fn f(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        (**self).f(k, x)
    }
    fn h(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        (**self).h(k, x)
    }
    fn df_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).df_dx(k, x)
    }
    fn dh_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).dh_dx(k, x)
    }
}

/// Affine approximation `x_{k+1} ≈ A x_k + u` of the dynamics around an anchor point.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    pub u: DVector<f64>,
    /// Linearization point `x̃`.
    pub anchor: DVector<f64>,
    /// `f(x̃)`.
    pub value: DVector<f64>,
}

impl LinearizedDynamics {
    /// Evaluates the affine map at `x` as `f(x̃) + A (x − x̃)`.
    ///
    /// Algebraically equal to `A x + u`, but avoids the cancellation between
    /// `A x` and `u` when the state carries large offsets (ECEF coordinates).
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.value + &self.a * (x - &self.anchor)
    }
}

/// Affine approximation `y_k ≈ C x_k + d` of the measurement function.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedMeasurement {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub anchor: DVector<f64>,
    /// `h(x̃)`.
    pub value: DVector<f64>,
}

impl LinearizedMeasurement {
    /// Evaluates `h(x̃) + C (x − x̃)`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.value + &self.c * (x - &self.anchor)
    }

    /// Residual `y − (C x + d)`, evaluated in the anchored form.
    pub fn residual(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        (y - &self.value) - &self.c * (x - &self.anchor)
    }
}

fn check_state(model_dim: usize, x: &DVector<f64>) -> Result<()> {
    if x.len() != model_dim {
        return Err(Error::contract(format!(
            "state has length {}, model expects {model_dim}",
            x.len()
        )));
    }
    Ok(())
}

pub fn linearize_dynamics<M: NltvModel + ?Sized>(
    model: &M,
    k: usize,
    x_tilde: &DVector<f64>,
) -> Result<LinearizedDynamics> {
    let n = model.state_dim();
    check_state(n, x_tilde)?;
    let a = model.df_dx(k, x_tilde);
    if a.shape() != (n, n) {
        return Err(Error::contract(format!(
            "df_dx at k={k} has shape {:?}, expected ({n}, {n})",
            a.shape()
        )));
    }
    if !is_finite_matrix(&a) {
        return Err(Error::numeric(format!(
            "non-finite dynamics Jacobian at k={k}"
        )));
    }
    let value = model.f(k, x_tilde);
    if value.len() != n || !is_finite_vector(&value) {
        return Err(Error::numeric(format!("invalid f value at k={k}")));
    }
    let u = &value - &a * x_tilde;
    Ok(LinearizedDynamics {
        a,
        u,
        anchor: x_tilde.clone(),
        value,
    })
}

pub fn linearize_measurement<M: NltvModel + ?Sized>(
    model: &M,
    k: usize,
    x_tilde: &DVector<f64>,
) -> Result<LinearizedMeasurement> {
    let n = model.state_dim();
    check_state(n, x_tilde)?;
    let m = model.meas_dim(k);
    if m == 0 {
        return Err(Error::contract(format!("meas_dim({k}) is zero")));
    }
    let c = model.dh_dx(k, x_tilde);
    if c.shape() != (m, n) {
        return Err(Error::contract(format!(
            "dh_dx at k={k} has shape {:?}, expected ({m}, {n})",
            c.shape()
        )));
    }
    if !is_finite_matrix(&c) {
        return Err(Error::numeric(format!(
            "non-finite measurement Jacobian at k={k}"
        )));
    }
    let value = model.h(k, x_tilde);
    if value.len() != m || !is_finite_vector(&value) {
        return Err(Error::numeric(format!("invalid h value at k={k}")));
    }
    let d = &value - &c * x_tilde;
    Ok(LinearizedMeasurement {
        c,
        d,
        anchor: x_tilde.clone(),
        value,
    })
}

/// Central-difference Jacobian of `func` at `x`.
pub fn fd_jacobian<F>(func: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::contract(format!("step must be positive, got {step}")));
    }
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let fp = func(&xp);
        let fm = func(&xm);
        if !is_finite_vector(&fp) || !is_finite_vector(&fm) {
            return Err(Error::numeric(format!(
                "non-finite evaluation along basis direction {j}"
            )));
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), n));
        let col = (fp - fm) / (2.0 * step);
        jac.set_column(j, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(func(x).len(), 0)))
}

type StateFn = Box<dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Box<dyn Fn(usize, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Closure-backed model, convenient for tests and bindings.
pub struct FnModel {
    state_dim: usize,
    meas_dim: Box<dyn Fn(usize) -> usize + Send + Sync>,
    f: StateFn,
    h: StateFn,
    df: JacobianFn,
    dh: JacobianFn,
}

impl FnModel {
    pub fn new(
        state_dim: usize,
        meas_dim: impl Fn(usize) -> usize + Send + Sync + 'static,
        f: impl Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        h: impl Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        df: impl Fn(usize, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        dh: impl Fn(usize, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            meas_dim: Box::new(meas_dim),
            f: Box::new(f),
            h: Box::new(h),
            df: Box::new(df),
            dh: Box::new(dh),
        }
    }
}

impl NltvModel for FnModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn meas_dim(&self, k: usize) -> usize {
        (self.meas_dim)(k)
    }
    fn f(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(k, x)
    }
    fn h(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.h)(k, x)
    }
    fn df_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        (self.df)(k, x)
    }
    fn dh_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        (self.dh)(k, x)
    }
}

/// Linear time-invariant model `f(x) = A x`, `h(x) = C x`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl NltvModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn meas_dim(&self, _k: usize) -> usize {
        self.c.nrows()
    }
    fn f(&self, _k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn h(&self, _k: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn df_dx(&self, _k: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn dh_dx(&self, _k: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
}
