//! Horizon assembly and the closed-form least-squares solution over one window.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, spd_inverse, SpdFactor, CONDITION_WARNING};

use super::window::HorizonWindow;

/// Whether the prior-state (arrival) cost enters the horizon cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ArrivalCost {
    #[default]
    Include,
    /// Zero prior information: the factor-graph formulation without a prior factor.
    Omit,
}

/// `A_k · A_{k−1} ⋯ A_{k−n+1}` where `a_seq` ends with `A_k`; identity for `n = 0`.
pub fn chained_transition(a_seq: &[DMatrix<f64>], n: usize, dim: usize) -> Result<DMatrix<f64>> {
    if n > a_seq.len() {
        return Err(Error::contract(format!(
            "chained transition of length {n} needs {n} matrices, got {}",
            a_seq.len()
        )));
    }
    let mut out = DMatrix::identity(dim, dim);
    for a in &a_seq[a_seq.len() - n..] {
        if a.shape() != (dim, dim) {
            return Err(Error::contract(format!(
                "transition has shape {:?}, expected ({dim}, {dim})",
                a.shape()
            )));
        }
        out = a * out;
    }
    Ok(out)
}

/// The stacked least-squares problem of one horizon.
///
/// Unknowns are the stacked noise estimates `Ω = [ŵ_{k−N−1}, …, ŵ_{k−1}]`;
/// the cost is `Ωᵀ Q̃ Ω + (B − D Ω)ᵀ R̃ (B − D Ω)`.
#[derive(Clone, Debug)]
pub struct HorizonSystem {
    pub state_dim: usize,
    pub horizon: usize,
    pub meas_dims: Vec<usize>,
    pub arrival_cost: ArrivalCost,
    /// `diag{P⁻¹, Q_{k−N}⁻¹, …, Q_{k−1}⁻¹}` (prior block zero when the arrival cost is omitted).
    pub q_tilde: DMatrix<f64>,
    /// `diag{R_{k−N}⁻¹, …, R_k⁻¹}`.
    pub r_big: DMatrix<f64>,
    pub r_inv_blocks: Vec<DMatrix<f64>>,
    /// Stacked measurement residuals after deterministic propagation of the prior.
    pub b: DVector<f64>,
    /// Block-lower-triangular map from stacked noise to stacked measurements.
    pub d: DMatrix<f64>,
    /// `[A_k^{N+1}, A_k^N, …, A_k]`.
    pub a_tilde: DMatrix<f64>,
    /// `A_k^{N+1} x̂_{k−N|k−N−1} + Σ A_k^{N−i} u_{k−N+i}`.
    pub drift: DVector<f64>,
    /// `[A_{k−1}^N, …, A_{k−1}^1, I]`: maps stacked noise onto the state at `k`.
    pub last_state_map: DMatrix<f64>,
    /// Prior propagated through the window without noise, one state per epoch.
    pub deterministic: Vec<DVector<f64>>,
}

impl HorizonSystem {
    pub fn noise_len(&self) -> usize {
        self.state_dim * (self.horizon + 1)
    }

    /// `G = Dᵀ R̃`, computed block-wise.
    pub fn g(&self) -> DMatrix<f64> {
        let mut weighted = DMatrix::zeros(self.d.nrows(), self.d.ncols());
        let mut row = 0;
        for r_inv in &self.r_inv_blocks {
            let m = r_inv.nrows();
            let block = r_inv * self.d.rows(row, m);
            weighted.rows_mut(row, m).copy_from(&block);
            row += m;
        }
        weighted.transpose()
    }

    /// `E = Dᵀ R̃ D`.
    pub fn information(&self) -> DMatrix<f64> {
        let e = self.g() * &self.d;
        crate::linalg::symmetrize(&e)
    }

    /// `E + Q̃`.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        self.information() + &self.q_tilde
    }
}

/// Assembles the horizon matrices for `window`.
pub fn assemble_horizon(window: &HorizonWindow, arrival: ArrivalCost) -> Result<HorizonSystem> {
    window.validate()?;
    let n = window.state_dim();
    let big_n = window.horizon();
    let cols = n * (big_n + 1);

    let mut q_blocks = Vec::with_capacity(big_n + 1);
    q_blocks.push(match arrival {
        ArrivalCost::Include => spd_inverse(&window.prior_cov, "prior covariance P")?,
        ArrivalCost::Omit => DMatrix::zeros(n, n),
    });
    for e in &window.epochs[..big_n] {
        q_blocks.push(spd_inverse(&e.q, &format!("process noise Q at k={}", e.k))?);
    }
    let r_inv_blocks = window
        .epochs
        .iter()
        .map(|e| spd_inverse(&e.r, &format!("measurement noise R at k={}", e.k)))
        .collect::<Result<Vec<_>>>()?;

    // transitions[r][i] = A_{r-1} ⋯ A_i (window-relative), identity when i == r, for r ≤ N+1.
    let mut transitions: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(big_n + 2);
    for r in 0..=big_n + 1 {
        let mut row = vec![DMatrix::zeros(n, n); r + 1];
        row[r] = DMatrix::identity(n, n);
        for i in (0..r).rev() {
            row[i] = &row[i + 1] * &window.epochs[i].dynamics.a;
        }
        transitions.push(row);
    }

    let mut deterministic = Vec::with_capacity(big_n + 1);
    deterministic.push(window.prior_state.clone());
    for e in &window.epochs[..big_n] {
        let next = e.dynamics.apply(deterministic.last().unwrap());
        deterministic.push(next);
    }
    let drift = window.last().dynamics.apply(&deterministic[big_n]);

    let meas_dims: Vec<usize> = window.epochs.iter().map(|e| e.meas_dim()).collect();
    let rows: usize = meas_dims.iter().sum();
    let mut d = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    let mut row0 = 0;
    for (r, e) in window.epochs.iter().enumerate() {
        let m = e.meas_dim();
        for i in 0..=r {
            let block = &e.meas.c * &transitions[r][i];
            d.view_mut((row0, i * n), (m, n)).copy_from(&block);
        }
        let br = e.meas.residual(&e.y, &deterministic[r]);
        b.rows_mut(row0, m).copy_from(&br);
        row0 += m;
    }

    let mut a_tilde = DMatrix::zeros(n, cols);
    let mut last_state_map = DMatrix::zeros(n, cols);
    for i in 0..=big_n {
        a_tilde
            .view_mut((0, i * n), (n, n))
            .copy_from(&transitions[big_n + 1][i]);
        last_state_map
            .view_mut((0, i * n), (n, n))
            .copy_from(&transitions[big_n][i]);
    }

    Ok(HorizonSystem {
        state_dim: n,
        horizon: big_n,
        meas_dims,
        arrival_cost: arrival,
        q_tilde: block_diag(&q_blocks),
        r_big: block_diag(&r_inv_blocks),
        r_inv_blocks,
        b,
        d,
        a_tilde,
        drift,
        last_state_map,
        deterministic,
    })
}

/// Optimal stacked noise estimates plus solve diagnostics.
#[derive(Clone, Debug)]
pub struct NoiseSolution {
    pub omega: DVector<f64>,
    /// 1-norm condition number of `E + Q̃`.
    pub condition: f64,
    pub jittered: bool,
}

impl NoiseSolution {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > CONDITION_WARNING
    }
}

/// `Ω̂ = (E + Q̃)⁻¹ G B`.
pub fn solve_noise_estimates(sys: &HorizonSystem) -> Result<NoiseSolution> {
    let normal = sys.normal_matrix();
    let factor = SpdFactor::new(&normal, "normal matrix E + Q̃")?;
    let rhs = sys.g() * &sys.b;
    let omega = factor.solve_vec(&rhs);
    if !crate::linalg::is_finite_vector(&omega) {
        return Err(Error::numeric("noise estimates are not finite"));
    }
    Ok(NoiseSolution {
        omega,
        condition: factor.condition_1norm(&normal),
        jittered: factor.jittered,
    })
}

/// `x̂_{k+1|k} = drift + Ã Ω̂` (equivalently `drift + L B`).
pub fn predict_state(sys: &HorizonSystem, omega: &DVector<f64>) -> DVector<f64> {
    &sys.drift + &sys.a_tilde * omega
}

/// `x̂_{k|k}`: the state at the last epoch of the window implied by `Ω̂`.
pub fn filtered_state(sys: &HorizonSystem, omega: &DVector<f64>) -> DVector<f64> {
    &sys.deterministic[sys.horizon] + &sys.last_state_map * omega
}

/// `L = Ã (E + Q̃)⁻¹ G`.
pub fn horizon_gain(sys: &HorizonSystem) -> Result<DMatrix<f64>> {
    let factor = SpdFactor::new(&sys.normal_matrix(), "normal matrix E + Q̃")?;
    Ok(&sys.a_tilde * factor.solve(&sys.g()))
}

/// The state at epoch `j` implied by the prior and noise estimates, via the explicit
/// sum of chained transitions over offsets and noise terms.
pub fn lemma1_state(window: &HorizonWindow, omega: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
    let n = window.state_dim();
    let start = window.start();
    if j < start || j > window.k() {
        return Err(Error::contract(format!(
            "epoch {j} outside window [{start}, {}]",
            window.k()
        )));
    }
    if omega.len() != n * (window.horizon() + 1) {
        return Err(Error::contract(format!(
            "noise vector has length {}, expected {}",
            omega.len(),
            n * (window.horizon() + 1)
        )));
    }
    let r = j - start;
    let a_seq: Vec<DMatrix<f64>> = window.epochs[..r]
        .iter()
        .map(|e| e.dynamics.a.clone())
        .collect();
    // a_seq ends with A_{j−1}; chained_transition over its tail gives A_{j−1}^m.
    let mut x = chained_transition(&a_seq, r, n)? * &window.prior_state;
    for i in 0..r {
        let phi = chained_transition(&a_seq, r - i - 1, n)?;
        x += phi * &window.epochs[i].dynamics.u;
    }
    for i in 0..=r {
        let phi = chained_transition(&a_seq, r - i, n)?;
        x += phi * omega.rows(i * n, n);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::window::WindowEpoch;
    use crate::system_model::{LinearizedDynamics, LinearizedMeasurement};

    fn scalar_epoch(k: usize, y: f64, a: f64, c: f64, q: f64, r: f64) -> WindowEpoch {
        let x0 = DVector::zeros(1);
        WindowEpoch {
            k,
            y: DVector::from_element(1, y),
            meas: LinearizedMeasurement {
                c: DMatrix::from_element(1, 1, c),
                d: DVector::zeros(1),
                anchor: x0.clone(),
                value: DVector::zeros(1),
            },
            dynamics: LinearizedDynamics {
                a: DMatrix::from_element(1, 1, a),
                u: DVector::zeros(1),
                anchor: x0,
                value: DVector::zeros(1),
            },
            r: DMatrix::from_element(1, 1, r),
            q: DMatrix::from_element(1, 1, q),
        }
    }

    #[test]
    fn chained_transition_cases() {
        let i = chained_transition(&[], 0, 2).unwrap();
        assert_eq!(i, DMatrix::identity(2, 2));

        let two = DMatrix::identity(2, 2) * 2.0;
        let m = chained_transition(&[two.clone(), two.clone(), two], 3, 2).unwrap();
        assert_eq!(m, DMatrix::identity(2, 2) * 8.0);

        // A_1 = 2, A_2 = 3: order A_2 · A_1
        let a1 = DMatrix::from_element(1, 1, 2.0);
        let a2 = DMatrix::from_element(1, 1, 3.0);
        assert_eq!(chained_transition(&[a1, a2], 2, 1).unwrap()[(0, 0)], 6.0);

        assert!(matches!(
            chained_transition(&[], 1, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_epoch_horizon() {
        let e = scalar_epoch(0, 3.0, 1.0, 2.0, 1.0, 4.0);
        let w = HorizonWindow::new(
            DVector::from_element(1, 0.5),
            DMatrix::from_element(1, 1, 0.25),
            vec![e],
        )
        .unwrap();
        let sys = assemble_horizon(&w, ArrivalCost::Include).unwrap();
        assert_eq!(sys.q_tilde[(0, 0)], 4.0);
        assert_eq!(sys.r_big[(0, 0)], 0.25);
        assert_eq!(sys.d[(0, 0)], 2.0);
        assert_eq!(sys.b[0], 3.0 - 2.0 * 0.5);
    }

    #[test]
    fn two_epoch_d_structure() {
        let epochs = vec![
            scalar_epoch(0, 0.0, 1.0, 1.0, 1.0, 1.0),
            scalar_epoch(1, 0.0, 1.0, 1.0, 1.0, 1.0),
        ];
        let w = HorizonWindow::new(DVector::zeros(1), DMatrix::identity(1, 1), epochs).unwrap();
        let sys = assemble_horizon(&w, ArrivalCost::Include).unwrap();
        assert_eq!(sys.d, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
    }

    #[test]
    fn zero_residual_gives_zero_noise() {
        let epochs = vec![
            scalar_epoch(0, 0.0, 0.9, 1.0, 0.5, 1.0),
            scalar_epoch(1, 0.0, 0.9, 1.0, 0.5, 1.0),
        ];
        let w = HorizonWindow::new(DVector::zeros(1), DMatrix::identity(1, 1), epochs).unwrap();
        let sys = assemble_horizon(&w, ArrivalCost::Include).unwrap();
        let sol = solve_noise_estimates(&sys).unwrap();
        assert!(sol.omega.amax() == 0.0);
        assert_eq!(predict_state(&sys, &sol.omega), sys.drift);
    }

    #[test]
    fn scalar_noise_estimate_is_half_residual() {
        let b = 1.7;
        let e = scalar_epoch(0, b, 1.0, 1.0, 1.0, 1.0);
        let w = HorizonWindow::new(DVector::zeros(1), DMatrix::identity(1, 1), vec![e]).unwrap();
        let sys = assemble_horizon(&w, ArrivalCost::Include).unwrap();
        let sol = solve_noise_estimates(&sys).unwrap();
        assert!((sol.omega[0] - b / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lemma1_closed_form_cases() {
        let epochs = (0..3)
            .map(|k| scalar_epoch(k, 0.0, 1.0, 1.0, 1.0, 1.0))
            .collect();
        let w = HorizonWindow::new(DVector::from_element(1, 2.0), DMatrix::identity(1, 1), epochs)
            .unwrap();
        let omega = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(lemma1_state(&w, &omega, 2).unwrap()[0], 5.0);
        let omega = DVector::from_vec(vec![0.25, 7.0, 9.0]);
        assert_eq!(lemma1_state(&w, &omega, 0).unwrap()[0], 2.25);
        assert!(lemma1_state(&w, &omega, 3).is_err());
    }

    #[test]
    fn non_spd_noise_names_block() {
        let mut e = scalar_epoch(0, 0.0, 1.0, 1.0, 1.0, 1.0);
        e.r = DMatrix::from_element(1, 1, -1.0);
        let w = HorizonWindow::new(DVector::zeros(1), DMatrix::identity(1, 1), vec![e]).unwrap();
        let err = assemble_horizon(&w, ArrivalCost::Include).unwrap_err();
        assert!(err.to_string().contains("measurement noise R at k=0"), "{err}");
    }
}
