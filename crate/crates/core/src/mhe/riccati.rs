//! Filtering Riccati recursion, the information-form gain, and the horizon identities
//! relating them to the stacked least-squares matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_spd, rel_frobenius, spd_inverse, symmetrize, SpdFactor};

use super::horizon::{assemble_horizon, ArrivalCost, HorizonSystem};
use super::window::HorizonWindow;

fn check_shapes(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    if !p.is_square() || c.ncols() != n || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::contract(format!(
            "non-conformable shapes: P {:?}, C {:?}, R {:?}",
            p.shape(),
            c.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// `(P⁻¹ + Cᵀ R⁻¹ C)⁻¹`, the filtered covariance in information form.
fn filtered_covariance(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p_inv = spd_inverse(p, "Riccati matrix P")?;
    let r_inv = spd_inverse(r, "measurement noise R")?;
    let info = p_inv + c.transpose() * r_inv * c;
    Ok(SpdFactor::new(&info, "filtered information matrix")?.inverse())
}

/// One step of the filtering Riccati recursion,
/// `P_k = Q + A (P_{k−1}⁻¹ + Cᵀ R⁻¹ C)⁻¹ Aᵀ`, symmetrized.
pub fn riccati_update(
    p_prev: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(p_prev, c, r)?;
    let n = p_prev.nrows();
    if a.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::contract(format!(
            "A {:?} and Q {:?} must be {n}x{n}",
            a.shape(),
            q.shape()
        )));
    }
    let filtered = filtered_covariance(p_prev, c, r)?;
    let p = symmetrize(&(q + a * filtered * a.transpose()));
    check_spd(&p, "updated Riccati matrix").map_err(|_| {
        Error::numeric("Riccati update lost positive definiteness after symmetrization")
    })?;
    Ok(p)
}

/// Kalman gain in information form, `K = (P⁻¹ + Cᵀ R⁻¹ C)⁻¹ Cᵀ R⁻¹`.
pub fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(p, c, r)?;
    let r_inv = spd_inverse(r, "measurement noise R")?;
    let p_inv = spd_inverse(p, "Riccati matrix P")?;
    let ct_rinv = c.transpose() * r_inv;
    let info = p_inv + &ct_rinv * c;
    Ok(SpdFactor::new(&info, "filtered information matrix")?.solve(&ct_rinv))
}

/// Riccati matrices `P_{k−N}, …, P_{k+1}` chained through the window from its prior covariance.
pub fn riccati_chain(window: &HorizonWindow) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(window.epochs.len() + 1);
    out.push(window.prior_cov.clone());
    for e in &window.epochs {
        let next = riccati_update(out.last().unwrap(), &e.dynamics.a, &e.meas.c, &e.q, &e.r)
            .map_err(|err| err.at_epoch(e.k))?;
        out.push(next);
    }
    Ok(out)
}

/// `P_{k+1} = Ã_N^k (E_N + Q̃_N)⁻¹ Ã_N^kᵀ + Q_k` for the window ending at `k`.
pub fn riccati_via_horizon(window: &HorizonWindow, sys: &HorizonSystem) -> Result<DMatrix<f64>> {
    if sys.arrival_cost != ArrivalCost::Include {
        return Err(Error::contract(
            "Riccati matrix via horizon requires the arrival cost",
        ));
    }
    let factor = SpdFactor::new(&sys.normal_matrix(), "normal matrix E + Q̃")?;
    let inner = factor.solve(&sys.a_tilde.transpose());
    Ok(symmetrize(&(&sys.a_tilde * inner + &window.last().q)))
}

/// `L_N^{k−N}` rebuilt from the horizon one epoch shorter:
/// `[(A_k − A_k K_k C_k) Ã_{N−1}^{k−1} (E_{N−1} + Q̃_{N−1})⁻¹ G_{N−1}, A_k K_k]`.
pub fn lemma3_gain_decomposition(window: &HorizonWindow) -> Result<DMatrix<f64>> {
    let big_n = window.horizon();
    if big_n == 0 {
        return Err(Error::contract("gain decomposition requires N > 0"));
    }
    let n = window.state_dim();
    let last = window.last();
    let p_chain = riccati_chain(window)?;
    let p_k = &p_chain[big_n];
    let gain = kalman_gain(p_k, &last.meas.c, &last.r)?;
    let a_k = &last.dynamics.a;

    let shorter = window.head(big_n)?;
    let sys_prev = assemble_horizon(&shorter, ArrivalCost::Include)?;
    let factor = SpdFactor::new(&sys_prev.normal_matrix(), "normal matrix E + Q̃")?;
    let left_inner = &sys_prev.a_tilde * factor.solve(&sys_prev.g());
    let closed_loop = a_k - a_k * &gain * &last.meas.c;
    let left = closed_loop * left_inner;
    let right = a_k * gain;

    let mut out = DMatrix::zeros(n, left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(&left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(&right);
    Ok(out)
}

/// Relative residual of the identity
/// `(P_k⁻¹ + C_kᵀ R_k⁻¹ C_k)⁻¹ = Ẽ⁻¹ + Λ`, where `Ẽ = C_kᵀ R_k⁻¹ C_k + Q_{k−1}⁻¹`,
/// `Λ = Ẽ⁻¹ Q⁻¹ Ã W⁻¹ Ãᵀ Q⁻¹ Ẽ⁻¹`, `W = E + Q̃ + Ãᵀ Θ Ã`, `Θ = Q⁻¹ − Q⁻¹ Ẽ⁻¹ Q⁻¹`.
///
/// `window_prev` is the horizon ending at `k − 1`; `c_k`, `r_k` describe epoch `k`.
pub fn corollary21_identity_check(
    p_k: &DMatrix<f64>,
    c_k: &DMatrix<f64>,
    r_k: &DMatrix<f64>,
    window_prev: &HorizonWindow,
) -> Result<f64> {
    check_shapes(p_k, c_k, r_k)?;
    let sys = assemble_horizon(window_prev, ArrivalCost::Include)?;
    let lhs = filtered_covariance(p_k, c_k, r_k)?;

    let q_inv = spd_inverse(&window_prev.last().q, "process noise Q_{k-1}")?;
    let r_inv = spd_inverse(r_k, "measurement noise R_k")?;
    let e_tilde = c_k.transpose() * r_inv * c_k + &q_inv;
    let e_tilde_inv = SpdFactor::new(&e_tilde, "Ẽ")?.inverse();
    let theta = &q_inv - &q_inv * &e_tilde_inv * &q_inv;
    let w = sys.normal_matrix() + sys.a_tilde.transpose() * theta * &sys.a_tilde;
    let w_factor = SpdFactor::new(&w, "W").map_err(|_| Error::numeric("W is singular"))?;
    let left = &e_tilde_inv * &q_inv * &sys.a_tilde;
    let lambda = &left * w_factor.solve(&left.transpose());
    let rhs = e_tilde_inv + lambda;
    Ok(rel_frobenius(&rhs, &lhs))
}

/// `E_N` built block-recursively from `E_{N−1}`:
/// `[[E_{N−1} + Ãᵀ F Ã, Ãᵀ F], [F Ã, F]]` with `F = C_kᵀ R_k⁻¹ C_k` and
/// `Ã = Ã_{N−1}^{k−1}`.
pub fn information_recursive(window: &HorizonWindow) -> Result<DMatrix<f64>> {
    let n = window.state_dim();
    let first = &window.epochs[0];
    let r_inv = spd_inverse(&first.r, "measurement noise R")?;
    let mut e = first.meas.c.transpose() * r_inv * &first.meas.c;
    for len in 2..=window.epochs.len() {
        let epoch = &window.epochs[len - 1];
        let shorter = window.head(len - 1)?;
        let a_tilde = assemble_horizon(&shorter, ArrivalCost::Include)?.a_tilde;
        let r_inv = spd_inverse(&epoch.r, "measurement noise R")?;
        let f = epoch.meas.c.transpose() * r_inv * &epoch.meas.c;
        let cols = n * len;
        let prev = n * (len - 1);
        let mut next = DMatrix::zeros(cols, cols);
        let top_left = &e + a_tilde.transpose() * &f * &a_tilde;
        let top_right = a_tilde.transpose() * &f;
        next.view_mut((0, 0), (prev, prev)).copy_from(&top_left);
        next.view_mut((0, prev), (prev, n)).copy_from(&top_right);
        next.view_mut((prev, 0), (n, prev))
            .copy_from(&top_right.transpose());
        next.view_mut((prev, prev), (n, n)).copy_from(&f);
        e = next;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn no_measurement_information_propagates() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let q = DMatrix::identity(2, 2) * 0.1;
        let c = DMatrix::zeros(1, 2);
        let got = riccati_update(&p, &a, &c, &q, &s(1.0)).unwrap();
        let want = &a * &p * a.transpose() + &q;
        assert!(rel_frobenius(&got, &want) < 1e-14);
    }

    #[test]
    fn scalar_riccati_and_gain() {
        let p = riccati_update(&s(1.0), &s(1.0), &s(1.0), &s(0.0), &s(1.0)).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        let k = kalman_gain(&s(1.0), &s(1.0), &s(1.0)).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn huge_measurement_noise_ignores_measurements() {
        let p = DMatrix::identity(3, 3);
        let k = kalman_gain(&p, &DMatrix::identity(3, 3), &(DMatrix::identity(3, 3) * 1e12)).unwrap();
        assert!(k.norm() < 1e-9);
    }

    #[test]
    fn singular_p_is_numeric_error() {
        let err = kalman_gain(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), &DMatrix::identity(2, 2))
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let err = kalman_gain(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3), &DMatrix::identity(3, 3))
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
