//! Deterministic density-matrix evolution under a Lindblad generator, and
//! the closed-form solution of the dephasing qubit used as its oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{
    pauli, pure_density, validate_density, Complex, DensityMatrix, Matrix, Operator, StateVector, I, ZERO,
};
use crate::tol;

/// `H`, the Lindblad operators `L_n` and the coupling `lambda`, generating
/// `d rho/dt = -i[H, rho] - (lambda^2/2) sum_n {L_n^† L_n, rho} - 2 L_n rho L_n^†`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    hamiltonian: Operator,
    lindblad_ops: Vec<Operator>,
    lambda: f64,
    // L_n^† L_n, cached
    dissipators: Vec<Operator>,
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, lindblad_ops: Vec<Operator>, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !hamiltonian.is_hermitian(tol::OPERATOR) {
            return Err(Error::NotHermitian);
        }
        let dim = hamiltonian.dim();
        for l in &lindblad_ops {
            if l.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: l.dim() });
            }
        }
        let dissipators = lindblad_ops.iter().map(|l| l.adjoint().matmul(l)).collect::<Result<Vec<_>>>()?;
        Ok(Self { hamiltonian, lindblad_ops, lambda, dissipators })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn lindblad_ops(&self) -> &[Operator] {
        &self.lindblad_ops
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn channels(&self) -> usize {
        self.lindblad_ops.len()
    }

    pub(crate) fn dissipators(&self) -> &[Operator] {
        &self.dissipators
    }

    /// The same model with every `L_n` replaced by `e^{i phi_n} L_n`.
    pub fn with_rephased_operators(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.channels() {
            return Err(Error::DimensionMismatch { expected: self.channels(), found: phases.len() });
        }
        let ops = self.lindblad_ops.iter().zip(phases).map(|(l, &p)| l.scale(Complex::from_polar(1.0, p))).collect();
        Self::new(self.hamiltonian.clone(), ops, self.lambda)
    }
}

/// Spin in a field along z with dephasing: `H = -mu_b sigma_z`, single
/// `L = sigma_z`, starting from `cos(theta/2)|+> + sin(theta/2)|->`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingSpinModel {
    pub mu_b: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl DephasingSpinModel {
    pub fn new(mu_b: f64, lambda: f64, theta: f64) -> Result<Self> {
        let m = Self { mu_b, lambda, theta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_b.is_finite() {
            return Err(Error::param("mu_b must be finite"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta) {
            return Err(Error::param(format!("theta must lie in [0, pi], got {}", self.theta)));
        }
        Ok(())
    }

    pub fn lindblad(&self) -> LindbladModel {
        let h = pauli::sigma_z().scale(Complex::new(-self.mu_b, 0.0));
        LindbladModel::new(h, vec![pauli::sigma_z()], self.lambda).expect("dephasing model is well formed")
    }

    pub fn initial_state(&self) -> StateVector {
        pauli::polar_state(self.theta)
    }

    pub fn initial_density(&self) -> DensityMatrix {
        pure_density(&self.initial_state()).expect("polar state is normalized")
    }
}

/// The generator applied to `rho`; Hermitian and traceless for Hermitian input.
pub fn lindblad_rhs(model: &LindbladModel, rho: &DensityMatrix) -> Result<Matrix> {
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: rho.dim() });
    }
    Ok(generator(model, rho.matrix()))
}

fn generator(model: &LindbladModel, rho: &Matrix) -> Matrix {
    let d = model.dim();
    let mut out = model.hamiltonian.commutator(rho).expect("dims checked").scale(-I);
    let half_rate = Complex::new(-0.5 * model.lambda * model.lambda, 0.0);
    if half_rate == ZERO {
        return out;
    }
    for (l, ldl) in model.lindblad_ops.iter().zip(&model.dissipators) {
        let anti = ldl.matmul(rho).and_then(|a| a.add(&rho.matmul(ldl)?)).expect("dims checked");
        let sandwich = l.matmul(rho).and_then(|a| a.matmul(&l.adjoint())).expect("dims checked");
        let term = anti.sub(&sandwich.scale(Complex::new(2.0, 0.0))).expect("dims checked");
        out = out.add(&term.scale(half_rate)).expect("dims checked");
    }
    debug_assert_eq!(out.dim(), d);
    out
}

/// Snapshots of a deterministic density-matrix evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPath {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Number of uniform steps covering `[0, t_final]` with step at most `dt`.
pub(crate) fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param(format!("dt must be > 0, got {dt}")));
    }
    if !(t_final.is_finite() && t_final >= 0.0) {
        return Err(Error::param(format!("t_final must be >= 0, got {t_final}")));
    }
    Ok((t_final / dt - tol::STEP_COUNT).ceil().max(0.0) as usize)
}

/// Classical RK4 on the density matrix. When `t_final / dt` is not an
/// integer the step is shortened uniformly so the path ends at `t_final`.
pub fn integrate_master(model: &LindbladModel, rho0: &DensityMatrix, t_final: f64, dt: f64) -> Result<DensityPath> {
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: rho0.dim() });
    }
    let steps = step_count(t_final, dt)?;
    let h = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(rho0.clone());
    let mut rho = rho0.matrix().clone();
    let half = Complex::new(0.5 * h, 0.0);
    let full = Complex::new(h, 0.0);
    for step in 1..=steps {
        let k1 = generator(model, &rho);
        let k2 = generator(model, &rho.add(&k1.scale(half))?);
        let k3 = generator(model, &rho.add(&k2.scale(half))?);
        let k4 = generator(model, &rho.add(&k3.scale(full))?);
        let incr = k1
            .add(&k2.scale(Complex::new(2.0, 0.0)))?
            .add(&k3.scale(Complex::new(2.0, 0.0)))?
            .add(&k4)?
            .scale(Complex::new(h / 6.0, 0.0));
        rho = rho.add(&incr)?;
        validate_density(&rho).map_err(|e| Error::InvariantViolation { step, reason: e.to_string() })?;
        times.push(step as f64 * h);
        states.push(DensityMatrix::unchecked(rho.clone()));
    }
    Ok(DensityPath { times, states })
}

/// Closed-form dephasing solution: populations frozen, coherence
/// `rho_01(t) = (sin theta / 2) e^{(2 i mu_b - 2 lambda^2) t}`.
pub fn dephasing_exact(model: &DephasingSpinModel, t: f64) -> DensityMatrix {
    let (s, c) = model.theta.sin_cos();
    let decay = (-2.0 * model.lambda * model.lambda * t).exp();
    let coherence = Complex::from_polar(0.5 * s * decay, 2.0 * model.mu_b * t);
    let m = Matrix::from_raw(
        2,
        vec![Complex::new(0.5 * (1.0 + c), 0.0), coherence, coherence.conj(), Complex::new(0.5 * (1.0 - c), 0.0)],
    );
    DensityMatrix::unchecked(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{Matrix, ONE};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    fn spin(mu_b: f64, lambda: f64, theta: f64) -> DephasingSpinModel {
        DephasingSpinModel::new(mu_b, lambda, theta).unwrap()
    }

    #[test]
    fn fixed_points_of_dephasing() {
        let model = spin(1.0, 0.7, FRAC_PI_3).lindblad();
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(lindblad_rhs(&model, &mixed).unwrap().max_abs() < 1e-15);
        let up = pure_density(&pauli::plus()).unwrap();
        assert!(lindblad_rhs(&model, &up).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn coherence_rate() {
        let (mu_b, lambda) = (1.3, 0.6);
        let model = spin(mu_b, lambda, FRAC_PI_2).lindblad();
        let half = Complex::new(0.5, 0.0);
        let rho = DensityMatrix::from_entries(2, vec![half, half, half, half]).unwrap();
        let d = lindblad_rhs(&model, &rho).unwrap();
        let expected = Complex::new(-2.0 * lambda * lambda, 2.0 * mu_b) * half;
        assert_abs_diff_eq!(d.get(0, 1).re, expected.re, epsilon = 1e-14);
        assert_abs_diff_eq!(d.get(0, 1).im, expected.im, epsilon = 1e-14);
        assert!(d.get(0, 0).norm() < 1e-15 && d.get(1, 1).norm() < 1e-15);
    }

    #[test]
    fn generator_is_hermitian_and_traceless() {
        let h = Matrix::from_rows(&[
            &[Complex::new(0.3, 0.0), Complex::new(0.1, 0.2), ZERO],
            &[Complex::new(0.1, -0.2), Complex::new(-0.5, 0.0), Complex::new(0.0, 0.4)],
            &[ZERO, Complex::new(0.0, -0.4), Complex::new(0.2, 0.0)],
        ])
        .unwrap();
        let l1 = Matrix::from_rows(&[&[ZERO, ONE, ZERO], &[ZERO, ZERO, ONE], &[ZERO, ZERO, ZERO]]).unwrap();
        let l2 = Matrix::diagonal(&[ONE, Complex::new(0.0, 1.0), Complex::new(-0.5, 0.5)]).unwrap();
        let model = LindbladModel::new(h, vec![l1, l2], 0.8).unwrap();
        let psi = StateVector::normalize(vec![Complex::new(0.2, 0.1), Complex::new(0.7, -0.3), ONE]).unwrap();
        let rho = pure_density(&psi).unwrap();
        let d = lindblad_rhs(&model, &rho).unwrap();
        assert!(d.is_hermitian(1e-12));
        assert!(d.trace().norm() < 1e-12);

        let rephased = model.with_rephased_operators(&[0.9, -2.1]).unwrap();
        let d2 = lindblad_rhs(&rephased, &rho).unwrap();
        assert!(d.max_abs_diff(&d2).unwrap() <= 1e-14);
    }

    #[test]
    fn rejects_bad_models() {
        let not_hermitian = Matrix::from_rows(&[&[ZERO, ONE], &[ZERO, ZERO]]).unwrap();
        assert_eq!(LindbladModel::new(not_hermitian, vec![], 1.0), Err(Error::NotHermitian));
        assert!(LindbladModel::new(pauli::sigma_z(), vec![Matrix::identity(3).unwrap()], 1.0).is_err());
        assert!(LindbladModel::new(pauli::sigma_z(), vec![], -1.0).is_err());
        assert!(DephasingSpinModel::new(1.0, 0.5, 4.0).is_err());
        let m = spin(1.0, 0.5, 1.0).lindblad();
        let rho3 = DensityMatrix::maximally_mixed(3).unwrap();
        assert!(lindblad_rhs(&m, &rho3).is_err());
        assert!(integrate_master(&m, &spin(1.0, 0.5, 1.0).initial_density(), 1.0, 0.0).is_err());
    }

    #[test]
    fn unitary_limit_coherence() {
        // rho_01(t) = e^{2 i mu_b t} / 2: i/2 at t = pi/(4 mu_b), -1/2 at t = pi/(2 mu_b)
        let mu_b = 1.0;
        let p = spin(mu_b, 0.0, FRAC_PI_2);
        for (t, expected) in [(PI / (4.0 * mu_b), Complex::new(0.0, 0.5)), (PI / (2.0 * mu_b), Complex::new(-0.5, 0.0))]
        {
            let path = integrate_master(&p.lindblad(), &p.initial_density(), t, 1e-3).unwrap();
            let last = path.states.last().unwrap();
            assert_abs_diff_eq!(*path.times.last().unwrap(), t, epsilon = 1e-12);
            assert_abs_diff_eq!(last.get(0, 1).re, expected.re, epsilon = 1e-10);
            assert_abs_diff_eq!(last.get(0, 1).im, expected.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let p = spin(1.0, 0.5, 1.0);
        let path = integrate_master(&p.lindblad(), &p.initial_density(), 0.0, 1e-3).unwrap();
        assert_eq!(path.times, vec![0.0]);
        assert_eq!(path.states, vec![p.initial_density()]);
    }

    #[test]
    fn long_time_dephasing() {
        let p = spin(1.0, 1.0, FRAC_PI_3);
        let path = integrate_master(&p.lindblad(), &p.initial_density(), 10.0, 1e-2).unwrap();
        let last = path.states.last().unwrap();
        assert!(last.get(0, 1).norm() < 1e-8);
        assert_abs_diff_eq!(last.get(0, 0).re, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(last.get(1, 1).re, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn exact_solution_examples() {
        let p = spin(1.0, 1.0, FRAC_PI_2);
        let rho = dephasing_exact(&p, 0.5);
        assert_abs_diff_eq!(rho.get(0, 1).norm(), 0.5 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(rho.get(0, 1).arg(), 1.0, epsilon = 1e-15);
        assert!(dephasing_exact(&p, 0.0).max_abs_diff(&p.initial_density()).unwrap() < 1e-15);
        let up = spin(2.0, 1.0, 0.0);
        for t in [0.0, 0.3, 7.0] {
            let rho = dephasing_exact(&up, t);
            assert_eq!(rho.get(0, 0), ONE);
            assert_eq!(rho.get(0, 1).norm(), 0.0);
        }
        let path = integrate_master(&p.lindblad(), &p.initial_density(), 0.5, 1e-3).unwrap();
        assert!(path.states.last().unwrap().max_abs_diff(&rho).unwrap() <= 1e-8);
    }

    #[test]
    fn rk4_matches_oracle_over_parameter_grid() {
        for mu_b in [0.5, 1.0, 2.0] {
            for lambda in [0.5, 1.0, 2.0] {
                let p = spin(mu_b, lambda, FRAC_PI_3);
                let path = integrate_master(&p.lindblad(), &p.initial_density(), 5.0, 1e-3).unwrap();
                for (t, rho) in path.times.iter().zip(&path.states) {
                    let exact = dephasing_exact(&p, *t);
                    assert!(rho.max_abs_diff(&exact).unwrap() <= 1e-8, "mu_b={mu_b} lambda={lambda} t={t}");
                    assert!((rho.trace() - 1.0).abs() <= 1e-10);
                }
            }
        }
    }
}
