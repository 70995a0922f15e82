//! Total, dynamical and geometric phases, per trajectory and on average.
//!
//! Conventions:
//!
//! * The total phase of an ensemble is `Arg E_P[f] = Arg E_Q[<φ_T|φ_T> f]`,
//!   where the interference functional `f` weights each σ_z channel by its
//!   population and its field phase `e^{-i h_k T}`. For the dephasing spin
//!   this is `Arg[e^{iμBT} cos²(θ/2) + e^{-iμBT} sin²(θ/2)]`, the argument of
//!   `E_Q[<φ_0|φ_T>]`.
//! * The dynamical phase is `Im ∫ <ψ|dψ>` accumulated with Itô (left-point)
//!   increments and kept unwrapped; reduction into `(-π, π]` happens only
//!   when a geometric phase is formed.
//! * Both averaging conventions for the dynamical phase (average of phases,
//!   argument of the averaged phase factor) are reported side by side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{DephasingSpinModel, LindbladModel};
use crate::quantum::{inner, Complex, StateVector};
use crate::sse::{reduce_angle, Kernel, Measure, TrajectoryRecord, UnravellingGauge};
use crate::tol;

/// Mach–Zehnder arrangement: phase shifter `chi` in one arm, the spin field
/// acting for `t_field` in the other, equal arm lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerSetup {
    pub chi: f64,
    pub t_field: f64,
    pub model: DephasingSpinModel,
}

/// Phases of one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub trajectory_id: usize,
    /// Principal value in `(-π, π]`.
    pub total: f64,
    /// Unwrapped.
    pub dynamical: f64,
    /// `total - dynamical` reduced into `(-π, π]`.
    pub geometric: f64,
}

impl PhaseRecord {
    pub fn new(trajectory_id: usize, total: f64, dynamical: f64) -> Self {
        let total = reduce_angle(total);
        let mut rec = Self { trajectory_id, total, dynamical, geometric: 0.0 };
        rec.geometric = geometric_phase(&rec);
        rec
    }
}

/// What one trajectory contributes to the phase statistics at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub trajectory_id: usize,
    /// `<φ_T|φ_T>` for linear trajectories, 1 for nonlinear ones.
    pub weight: f64,
    /// Interference functional; `None` when the model has no σ_z-channel
    /// structure (non-diagonal `H` or `L`).
    pub f: Option<Complex>,
    pub dynamical: f64,
    /// `Σ <σ_z> dt` (left point), qubits only.
    pub int_sz: f64,
    /// `Σ <σ_z>² dt` (left point), qubits only.
    pub int_sz2: f64,
}

impl TrajectoryOutcome {
    pub fn from_record(trajectory_id: usize, traj: &TrajectoryRecord, setup: &InterferometerSetup) -> Result<Self> {
        let f = trajectory_f(traj, setup)?;
        let (mut int_sz, mut int_sz2) = (0.0, 0.0);
        if let Some(sz) = &traj.sz_path {
            for (w, z) in traj.times.windows(2).zip(sz) {
                let dt = w[1] - w[0];
                int_sz += z * dt;
                int_sz2 += z * z * dt;
            }
        }
        Ok(Self {
            trajectory_id,
            weight: *traj.weight_path.last().expect("non-empty trajectory"),
            f: Some(f),
            dynamical: *traj.dyn_phase_path.last().expect("non-empty trajectory"),
            int_sz,
            int_sz2,
        })
    }

    pub fn phase_record(&self) -> Result<PhaseRecord> {
        let f = self.f.ok_or_else(|| Error::UnsupportedModel("no interference functional for this model".into()))?;
        if f.norm() <= tol::ORTHOGONAL_OVERLAP {
            return Err(Error::UndefinedPhase { modulus: f.norm() });
        }
        Ok(PhaseRecord::new(self.trajectory_id, f.arg(), self.dynamical))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// A phase estimate; `value` is `None` when the underlying modulus is below
/// [`tol::UNDEFINED_PHASE_MODULUS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub value: Option<f64>,
    pub stderr: f64,
}

impl PhaseEstimate {
    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// Mean of a complex sample with delta-method errors for modulus and argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub mean: Complex,
    pub modulus: Estimate,
    pub arg: PhaseEstimate,
}

/// Sample mean and standard error (`sd / √n`).
pub fn mean_stderr(values: impl IntoIterator<Item = f64>) -> Result<Estimate> {
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sum_sq += v * v;
    }
    estimate_from_sums(n, sum, sum_sq)
}

pub(crate) fn estimate_from_sums(n: usize, sum: f64, sum_sq: f64) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let stderr = if n > 1 { ((sum_sq - nf * mean * mean).max(0.0) / (nf - 1.0) / nf).sqrt() } else { 0.0 };
    Ok(Estimate { value: mean, stderr })
}

pub fn complex_mean(values: &[Complex]) -> Result<ComplexEstimate> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let nf = n as f64;
    let mean: Complex = values.iter().sum::<Complex>() / nf;
    let (mut vrr, mut vii, mut vri) = (0.0, 0.0, 0.0);
    for z in values {
        let d = z - mean;
        vrr += d.re * d.re;
        vii += d.im * d.im;
        vri += d.re * d.im;
    }
    let denom = if n > 1 { (nf - 1.0) * nf } else { f64::INFINITY };
    let (vrr, vii, vri) = (vrr / denom, vii / denom, vri / denom);
    let m = mean.norm();
    let (x, y) = (mean.re, mean.im);
    let (modulus, arg) = if m > 0.0 {
        let var_mod = (x * x * vrr + y * y * vii + 2.0 * x * y * vri) / (m * m);
        let var_arg = (y * y * vrr + x * x * vii - 2.0 * x * y * vri) / (m * m * m * m);
        (
            Estimate { value: m, stderr: var_mod.max(0.0).sqrt() },
            PhaseEstimate {
                value: (m >= tol::UNDEFINED_PHASE_MODULUS).then(|| mean.arg()),
                stderr: var_arg.max(0.0).sqrt(),
            },
        )
    } else {
        (Estimate { value: 0.0, stderr: (vrr + vii).sqrt() }, PhaseEstimate { value: None, stderr: f64::INFINITY })
    };
    Ok(ComplexEstimate { mean, modulus, arg })
}

/// A statistic of a sample together with its per-sample influence values:
/// the first-order contribution of each sample point, so that
/// `stderr = sd(influence) / √n`. Statistics of the same (paired) samples
/// combine by combining influences, which yields paired standard errors
/// for differences under common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearized {
    pub value: f64,
    pub influence: Vec<f64>,
}

impl Linearized {
    pub fn mean(values: &[f64]) -> Result<Self> {
        let e = mean_stderr(values.iter().copied())?;
        Ok(Self { value: e.value, influence: values.iter().map(|v| v - e.value).collect() })
    }

    /// `Arg` of the mean; errors when the mean modulus is below
    /// [`tol::UNDEFINED_PHASE_MODULUS`].
    pub fn arg(values: &[Complex]) -> Result<Self> {
        let m = complex_mean(values)?.mean;
        let n2 = m.norm_sqr();
        if m.norm() < tol::UNDEFINED_PHASE_MODULUS {
            return Err(Error::UndefinedPhase { modulus: m.norm() });
        }
        let influence = values.iter().map(|z| (m.re * (z.im - m.im) - m.im * (z.re - m.re)) / n2).collect();
        Ok(Self { value: m.arg(), influence })
    }

    pub fn modulus(values: &[Complex]) -> Result<Self> {
        let m = complex_mean(values)?.mean;
        let r = m.norm();
        if r == 0.0 {
            return Err(Error::UndefinedPhase { modulus: 0.0 });
        }
        let influence = values.iter().map(|z| (m.re * (z.re - m.re) + m.im * (z.im - m.im)) / r).collect();
        Ok(Self { value: r, influence })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.influence.len() != other.influence.len() {
            return Err(Error::DimensionMismatch { expected: self.influence.len(), found: other.influence.len() });
        }
        Ok(Self {
            value: self.value - other.value,
            influence: self.influence.iter().zip(&other.influence).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn stderr(&self) -> f64 {
        let n = self.influence.len();
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        let mean = self.influence.iter().sum::<f64>() / nf;
        let var = self.influence.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        (var / nf).sqrt()
    }
}

/// Weighted interference functionals `w f` of the outcomes.
pub fn weighted_f(outcomes: &[TrajectoryOutcome]) -> Result<Vec<Complex>> {
    outcomes
        .iter()
        .map(|o| {
            o.f.map(|f| o.weight * f)
                .ok_or_else(|| Error::UnsupportedModel("no interference functional for this model".into()))
        })
        .collect()
}

/// Weighted dynamical phase factors `w e^{iγ_dyn}` of the outcomes.
pub fn weighted_dyn_factors(outcomes: &[TrajectoryOutcome]) -> Vec<Complex> {
    outcomes.iter().map(|o| o.weight * Complex::from_polar(1.0, o.dynamical)).collect()
}

/// `Arg <psi0|psiT>` in `(-π, π]`.
pub fn pancharatnam_total_phase(psi0: &StateVector, psi_t: &StateVector) -> Result<f64> {
    psi0.require_normalized()?;
    psi_t.require_normalized()?;
    let overlap = inner(psi0, psi_t)?;
    if overlap.norm() <= tol::ORTHOGONAL_OVERLAP {
        return Err(Error::UndefinedPhase { modulus: overlap.norm() });
    }
    Ok(overlap.arg())
}

/// `Σ_k |a_k|² e^{-i h_k T} / Σ_k |a_k|²` for amplitudes in the eigenbasis of
/// a diagonal Hamiltonian with entries `h`.
pub(crate) fn channel_functional(amps: &[Complex], h: &[f64], t_field: f64) -> Result<Complex> {
    let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if !(norm.sqrt() > tol::DEGENERATE_NORM) {
        return Err(Error::DegenerateState { norm: norm.sqrt() });
    }
    Ok(amps.iter().zip(h).map(|(a, e)| a.norm_sqr() * Complex::from_polar(1.0, -e * t_field)).sum::<Complex>() / norm)
}

/// Diagonal of `H` when both `H` and every `L_n` are diagonal: the channel
/// structure the interferometric functional needs.
pub(crate) fn channel_energies(model: &LindbladModel) -> Option<Vec<f64>> {
    let diagonal = model.hamiltonian().is_diagonal(tol::OPERATOR)
        && model.lindblad_ops().iter().all(|l| l.is_diagonal(tol::OPERATOR));
    diagonal.then(|| (0..model.dim()).map(|k| model.hamiltonian().get(k, k).re).collect())
}

/// The interference functional `f` of a spin trajectory at the end of the
/// field region; its argument is that realization's total phase.
///
/// Noise phases are common to both arms and cancel, so only the channel
/// populations of the (normalized) final state and the field phases
/// `e^{±iμBT}` enter. Linear and nonlinear trajectories give the same `f`
/// along corresponding noise paths.
pub fn trajectory_f(traj: &TrajectoryRecord, setup: &InterferometerSetup) -> Result<Complex> {
    let last = traj.final_state();
    if last.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: last.dim() });
    }
    if (traj.t_final() - setup.t_field).abs() > tol::STEP_COUNT * setup.t_field.max(1.0) {
        return Err(Error::param(format!(
            "trajectory ends at {} but the field acts for {}",
            traj.t_final(),
            setup.t_field
        )));
    }
    let mu_b = setup.model.mu_b;
    channel_functional(last.amplitudes(), &[-mu_b, mu_b], setup.t_field)
}

/// Output intensity along the horizontal port for one realization,
/// `1/2 + |f| cos(χ + Arg f) / 2`.
pub fn intensity(setup: &InterferometerSetup, f: Complex) -> f64 {
    debug_assert!(f.norm() <= 1.0 + 1e-9);
    0.5 + 0.5 * f.norm() * (setup.chi + f.arg()).cos()
}

/// Measure-weighted mean intensity at each `chi`.
pub fn average_intensity(
    outcomes: &[TrajectoryOutcome],
    model: DephasingSpinModel,
    t_field: f64,
    chi: &[f64],
) -> Result<Vec<Estimate>> {
    let fs = outcomes
        .iter()
        .map(|o| {
            o.f.map(|f| (o.weight, f))
                .ok_or_else(|| Error::UnsupportedModel("no interference functional for this model".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    chi.iter()
        .map(|&c| {
            let setup = InterferometerSetup { chi: c, t_field, model };
            mean_stderr(fs.iter().map(|(w, f)| w * intensity(&setup, *f)))
        })
        .collect()
}

/// Least-squares fit of `I(χ) = 1/2 + (ν/2) cos(χ + γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    /// `None` when the fitted visibility is below the phase-definition floor.
    pub phase: Option<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

pub fn fit_fringe(chi: &[f64], intensity: &[f64]) -> Result<FringeFit> {
    if chi.len() != intensity.len() {
        return Err(Error::DimensionMismatch { expected: chi.len(), found: intensity.len() });
    }
    if chi.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    // I - 1/2 = a cos χ + b sin χ with a = (ν/2) cos γ, b = -(ν/2) sin γ
    let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in chi.iter().zip(intensity) {
        let (s, c) = x.sin_cos();
        let y = y - 0.5;
        cc += c * c;
        ss += s * s;
        cs += c * s;
        yc += y * c;
        ys += y * s;
    }
    let det = cc * ss - cs * cs;
    if !(det.abs() > 1e-12 * (cc + ss).powi(2)) {
        return Err(Error::param(
            "chi grid does not determine a fringe (need two angles not differing by a multiple of π)",
        ));
    }
    let a = (yc * ss - ys * cs) / det;
    let b = (ys * cc - yc * cs) / det;
    let residual =
        (chi.iter().zip(intensity).map(|(&x, &y)| (y - 0.5 - a * x.cos() - b * x.sin()).powi(2)).sum::<f64>()
            / chi.len() as f64)
            .sqrt();
    let visibility = 2.0 * a.hypot(b);
    Ok(FringeFit { visibility, phase: (visibility >= tol::UNDEFINED_PHASE_MODULUS).then(|| (-b).atan2(a)), residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalPhase {
    pub phase: PhaseEstimate,
    pub visibility: Estimate,
}

fn total_from_values(values: &[Complex]) -> Result<TotalPhase> {
    let m = complex_mean(values)?;
    Ok(TotalPhase { phase: m.arg, visibility: m.modulus })
}

/// `Arg` and modulus of the measure-weighted mean of `f` over trajectories
/// of either equation.
pub fn ensemble_total_phase(trajectories: &[TrajectoryRecord], setup: &InterferometerSetup) -> Result<TotalPhase> {
    if trajectories.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let values = trajectories
        .iter()
        .map(|t| {
            let w = match t.measure {
                Measure::P => 1.0,
                Measure::Q => *t.weight_path.last().expect("non-empty trajectory"),
            };
            Ok(w * trajectory_f(t, setup)?)
        })
        .collect::<Result<Vec<_>>>()?;
    total_from_values(&values)
}

/// Itô increment of `Im <ψ|dψ>` for the nonlinear equation at `psi`.
pub fn dynamical_phase_increment(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    psi: &StateVector,
    dw: &[f64],
    dt: f64,
) -> Result<f64> {
    if psi.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: psi.dim() });
    }
    if dw.len() != model.channels() {
        return Err(Error::DimensionMismatch { expected: model.channels(), found: dw.len() });
    }
    psi.require_normalized()?;
    let mut k = Kernel::new(model, gauge)?;
    k.coefficients(psi.amplitudes());
    Ok(k.dynamical_increment(psi.amplitudes(), dw, dt))
}

/// Measure-weighted average of the dynamical phase.
pub fn mean_dynamical_phase(outcomes: &[TrajectoryOutcome]) -> Result<Estimate> {
    mean_stderr(outcomes.iter().map(|o| o.weight * o.dynamical))
}

/// Measure-weighted average of `e^{i γ_dyn}`.
pub fn mean_dynamical_phase_factor(outcomes: &[TrajectoryOutcome]) -> Result<ComplexEstimate> {
    complex_mean(&weighted_dyn_factors(outcomes))
}

/// `total - dynamical` reduced into `(-π, π]`.
pub fn geometric_phase(record: &PhaseRecord) -> f64 {
    reduce_angle(record.total - record.dynamical)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynAveraging {
    /// Subtract the average dynamical phase.
    PhaseAverage,
    /// Subtract the argument of the averaged phase factor.
    FactorAverage,
}

fn total_from_outcomes(outcomes: &[TrajectoryOutcome]) -> Result<TotalPhase> {
    total_from_values(&weighted_f(outcomes)?)
}

fn difference(a: PhaseEstimate, b: Option<f64>, b_stderr: f64) -> PhaseEstimate {
    PhaseEstimate {
        value: a.value.zip(b).map(|(x, y)| reduce_angle(x - y)),
        stderr: (a.stderr * a.stderr + b_stderr * b_stderr).sqrt(),
    }
}

/// Average total phase minus the average dynamical phase under `convention`.
pub fn mean_geometric_phase(outcomes: &[TrajectoryOutcome], convention: DynAveraging) -> Result<PhaseEstimate> {
    let total = total_from_outcomes(outcomes)?;
    Ok(match convention {
        DynAveraging::PhaseAverage => {
            let d = mean_dynamical_phase(outcomes)?;
            difference(total.phase, Some(d.value), d.stderr)
        }
        DynAveraging::FactorAverage => {
            let d = mean_dynamical_phase_factor(outcomes)?;
            difference(total.phase, d.arg.value, d.arg.stderr)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub gauge: UnravellingGauge,
    pub n_traj: usize,
    pub total: PhaseEstimate,
    pub visibility: Estimate,
    pub dyn_phase_average: Estimate,
    pub dyn_factor_average: ComplexEstimate,
    pub geo_by_phase: PhaseEstimate,
    pub geo_by_factor: PhaseEstimate,
    /// Average of `∫ <σ_z>² dt` (qubits), the integral multiplying
    /// `λ² sinφ cosφ` in the mean dynamical phase.
    pub int_sz2: Estimate,
}

pub fn summarize(gauge: &UnravellingGauge, outcomes: &[TrajectoryOutcome]) -> Result<PhaseSummary> {
    let total = total_from_outcomes(outcomes)?;
    let dyn_phase_average = mean_dynamical_phase(outcomes)?;
    let dyn_factor_average = mean_dynamical_phase_factor(outcomes)?;
    Ok(PhaseSummary {
        gauge: gauge.clone(),
        n_traj: outcomes.len(),
        total: total.phase,
        visibility: total.visibility,
        geo_by_phase: difference(total.phase, Some(dyn_phase_average.value), dyn_phase_average.stderr),
        geo_by_factor: difference(total.phase, dyn_factor_average.arg.value, dyn_factor_average.arg.stderr),
        dyn_phase_average,
        dyn_factor_average,
        int_sz2: mean_stderr(outcomes.iter().map(|o| o.weight * o.int_sz2))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{pauli, ONE};
    use crate::sse::{simulate_linear, simulate_nonlinear, NoisePath, SdeConfig};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

    fn spin(mu_b: f64, lambda: f64, theta: f64) -> DephasingSpinModel {
        DephasingSpinModel::new(mu_b, lambda, theta).unwrap()
    }

    fn gauge(phi: f64) -> UnravellingGauge {
        UnravellingGauge::uniform(1, phi).unwrap()
    }

    fn setup(model: DephasingSpinModel, t: f64) -> InterferometerSetup {
        InterferometerSetup { chi: 0.0, t_field: t, model }
    }

    #[test]
    fn pancharatnam_examples() {
        let psi = pauli::polar_state(1.1);
        assert_eq!(pancharatnam_total_phase(&psi, &psi).unwrap(), 0.0);
        let shifted = psi.scale(Complex::from_polar(1.0, 0.7)).unwrap().to_normalized().unwrap();
        assert_abs_diff_eq!(pancharatnam_total_phase(&psi, &shifted).unwrap(), 0.7, epsilon = 1e-14);

        // unitary evolution of the θ = π/2 state: overlap is cos(μB T)
        let evolve = |t: f64| {
            StateVector::normalized(vec![
                Complex::from_polar(FRAC_PI_4.cos(), t),
                Complex::from_polar(FRAC_PI_4.sin(), -t),
            ])
            .unwrap()
        };
        let psi0 = pauli::polar_state(FRAC_PI_2);
        assert!(matches!(pancharatnam_total_phase(&psi0, &evolve(FRAC_PI_2)), Err(Error::UndefinedPhase { .. })));
        assert_abs_diff_eq!(pancharatnam_total_phase(&psi0, &evolve(FRAC_PI_4)).unwrap(), 0.0, epsilon = 1e-15);
    }

    fn unitary_run(
        model: DephasingSpinModel,
        phi: f64,
        t: f64,
        steps: usize,
        noise_seed: Option<u64>,
    ) -> TrajectoryRecord {
        let config = SdeConfig::with_steps(t, steps).unwrap();
        let noise = match noise_seed {
            Some(s) => NoisePath::sample(s, 0, 1, steps, config.dt, Measure::Q),
            None => NoisePath::zeros(1, steps, config.dt, Measure::Q),
        };
        simulate_linear(&model.lindblad(), &gauge(phi), &model.initial_state(), &config, &noise).unwrap()
    }

    #[test]
    fn f_on_an_eigenstate_is_a_pure_field_phase() {
        let (mu_b, t) = (1.0, 0.8);
        let m = spin(mu_b, 0.0, 0.0);
        let traj = unitary_run(m, 0.0, t, 100, None);
        let f = trajectory_f(&traj, &setup(m, t)).unwrap();
        assert_abs_diff_eq!(f.norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.arg(), mu_b * t, epsilon = 1e-14);
    }

    #[test]
    fn f_cancels_for_equal_channels_at_quarter_period() {
        let mu_b = 2.0;
        let t = PI / (2.0 * mu_b);
        let m = spin(mu_b, 0.0, FRAC_PI_2);
        let traj = unitary_run(m, 0.0, t, 200, None);
        let f = trajectory_f(&traj, &setup(m, t)).unwrap();
        assert!(f.norm() < 1e-12, "{f}");
    }

    #[test]
    fn f_ignores_noise_when_cos_phi_vanishes() {
        let t = 1.3;
        let noisy = spin(1.0, 0.9, FRAC_PI_2);
        let quiet = spin(1.0, 0.0, FRAC_PI_2);
        let a = trajectory_f(&unitary_run(noisy, FRAC_PI_2, t, 400, Some(3)), &setup(noisy, t)).unwrap();
        let b = trajectory_f(&unitary_run(quiet, FRAC_PI_2, t, 400, None), &setup(quiet, t)).unwrap();
        assert!((a - b).norm() < 1e-12, "{a} {b}");
    }

    #[test]
    fn f_matches_closed_form_channel_weights() {
        // |φ_±(T)|² ∝ cos²/sin²(θ/2) e^{±2λ ξ cos φ} up to a common factor.
        let (mu_b, lambda, theta, phi, t) = (1.0, 0.5, 1.0, 0.4, 1.0);
        let m = spin(mu_b, lambda, theta);
        let traj = unitary_run(m, phi, t, 20_000, Some(8));
        let xi: f64 = traj.noise.channel(0).iter().sum();
        let (c2, s2) = ((0.5 * theta).cos().powi(2), (0.5 * theta).sin().powi(2));
        let up = c2 * (2.0 * lambda * xi * phi.cos()).exp();
        let down = s2 * (-2.0 * lambda * xi * phi.cos()).exp();
        let expected =
            (up * Complex::from_polar(1.0, mu_b * t) + down * Complex::from_polar(1.0, -mu_b * t)) / (up + down);
        let f = trajectory_f(&traj, &setup(m, t)).unwrap();
        assert!((f - expected).norm() < 5e-3, "{f} vs {expected}");
    }

    #[test]
    fn intensity_examples() {
        let s = |chi| InterferometerSetup { chi, t_field: 1.0, model: spin(1.0, 0.0, 0.0) };
        assert_abs_diff_eq!(intensity(&s(0.0), ONE), 1.0);
        assert_abs_diff_eq!(intensity(&s(PI), ONE), 0.0, epsilon = 1e-15);
        let f = Complex::from_polar(0.5, PI / 3.0);
        assert_abs_diff_eq!(intensity(&s(-PI / 3.0), f), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn linearized_errors_match_direct_ones() {
        let z: Vec<Complex> =
            (0..50).map(|k| Complex::from_polar(1.0 + 0.01 * k as f64, 0.3 + 0.02 * (k % 7) as f64)).collect();
        let direct = complex_mean(&z).unwrap();
        let arg = Linearized::arg(&z).unwrap();
        let modulus = Linearized::modulus(&z).unwrap();
        assert_abs_diff_eq!(arg.value, direct.arg.value.unwrap(), epsilon = 1e-15);
        assert_abs_diff_eq!(arg.stderr(), direct.arg.stderr, epsilon = 1e-12);
        assert_abs_diff_eq!(modulus.stderr(), direct.modulus.stderr, epsilon = 1e-12);
        // a statistic minus itself has no spread
        let zero = arg.sub(&arg).unwrap();
        assert_eq!(zero.value, 0.0);
        assert_eq!(zero.stderr(), 0.0);
        let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert_abs_diff_eq!(
            Linearized::mean(&x).unwrap().stderr(),
            mean_stderr(x.iter().copied()).unwrap().stderr,
            epsilon = 1e-14
        );
        assert!(Linearized::arg(&[ONE, -ONE]).is_err());
    }

    #[test]
    fn fringe_fit_recovers_parameters() {
        let chi: Vec<f64> = (0..24).map(|k| k as f64 * PI / 12.0).collect();
        for (nu, gamma) in [(1.0, PI), (0.4, -1.2), (0.8, 0.3)] {
            let y: Vec<f64> = chi.iter().map(|c| 0.5 + 0.5 * nu * (c + gamma).cos()).collect();
            let fit = fit_fringe(&chi, &y).unwrap();
            assert_abs_diff_eq!(fit.visibility, nu, epsilon = 1e-12);
            assert_abs_diff_eq!(reduce_angle(fit.phase.unwrap() - gamma), 0.0, epsilon = 1e-12);
            assert!(fit.residual < 1e-14);
        }
        let flat = fit_fringe(&chi, &vec![0.5; chi.len()]).unwrap();
        assert_eq!(flat.visibility, 0.0);
        assert!(flat.phase.is_none());
        assert!(fit_fringe(&[0.0, PI], &[1.0, 0.0]).is_err());
        assert!(fit_fringe(&[], &[]).is_err());
    }

    #[test]
    fn dynamical_increment_matches_spin_formula() {
        let (mu_b, lambda, dt) = (0.9, 0.7, 1e-3);
        let model = spin(mu_b, lambda, 0.0).lindblad();
        let psi = StateVector::normalize(vec![Complex::new(0.6, 0.1), Complex::new(0.2, -0.5)]).unwrap();
        let z = psi.amplitudes()[0].norm_sqr() - psi.amplitudes()[1].norm_sqr();
        for phi in [0.0, 0.5, FRAC_PI_4, FRAC_PI_2, -2.0] {
            for dw in [0.0, 0.03, -0.02] {
                let got = dynamical_phase_increment(&model, &gauge(phi), &psi, &[dw], dt).unwrap();
                let (s, c) = phi.sin_cos();
                let expected = mu_b * z * dt + lambda * s * z * dw + lambda * lambda * s * c * z * z * dt;
                assert_abs_diff_eq!(got, expected, epsilon = 1e-16);
            }
        }
        // φ = 0: only the field term
        let got = dynamical_phase_increment(&model, &gauge(0.0), &psi, &[0.05], dt).unwrap();
        assert_abs_diff_eq!(got, mu_b * z * dt, epsilon = 1e-17);
    }

    #[test]
    fn dynamical_phase_on_eigenstate_integrates_exactly() {
        let (mu_b, lambda, t, steps) = (1.0, 0.8, 1.5, 1500);
        let m = spin(mu_b, lambda, 0.0);
        let config = SdeConfig::with_steps(t, steps).unwrap();
        let noise = NoisePath::sample(4, 0, 1, steps, config.dt, Measure::P);
        let w_t: f64 = noise.channel(0).iter().sum();
        for phi in [0.0, 0.7, FRAC_PI_2] {
            let traj = simulate_nonlinear(&m.lindblad(), &gauge(phi), &pauli::plus(), &config, &noise).unwrap();
            let (s, c) = phi.sin_cos();
            let expected = mu_b * t + lambda * s * w_t + lambda * lambda * s * c * t;
            assert_abs_diff_eq!(*traj.dyn_phase_path.last().unwrap(), expected, epsilon = 1e-10);
        }
        // φ = π/2 from a tilted state: <σz> frozen at cos θ
        let theta = FRAC_PI_3;
        let tilted = spin(mu_b, lambda, theta);
        let traj = simulate_nonlinear(&tilted.lindblad(), &gauge(FRAC_PI_2), &tilted.initial_state(), &config, &noise)
            .unwrap();
        let expected = mu_b * theta.cos() * t + lambda * theta.cos() * w_t;
        assert_abs_diff_eq!(*traj.dyn_phase_path.last().unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn unitary_geometric_phase_is_half_the_solid_angle() {
        let mu_b = 1.0;
        let t = PI / mu_b;
        for theta in [PI / 6.0, FRAC_PI_3, FRAC_PI_2] {
            let m = spin(mu_b, 0.0, theta);
            let config = SdeConfig::with_steps(t, 3142).unwrap();
            let noise = NoisePath::zeros(1, 3142, config.dt, Measure::P);
            let traj = simulate_nonlinear(&m.lindblad(), &gauge(0.0), &m.initial_state(), &config, &noise).unwrap();
            let out = TrajectoryOutcome::from_record(0, &traj, &setup(m, t)).unwrap();
            let rec = out.phase_record().unwrap();
            assert_abs_diff_eq!(rec.total.abs(), PI, epsilon = 1e-12);
            assert_abs_diff_eq!(rec.dynamical, PI * theta.cos(), epsilon = 1e-9);
            let expected = reduce_angle(PI * (1.0 - theta.cos()));
            assert_abs_diff_eq!(reduce_angle(rec.geometric - expected), 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn eigenstate_geometric_phase_vanishes() {
        let (mu_b, lambda, t, steps) = (1.0, 0.9, 2.0, 2000);
        let m = spin(mu_b, lambda, 0.0);
        let config = SdeConfig::with_steps(t, steps).unwrap();
        for seed in 0..5 {
            let noise = NoisePath::sample(seed, 0, 1, steps, config.dt, Measure::P);
            let traj = simulate_nonlinear(&m.lindblad(), &gauge(0.0), &pauli::plus(), &config, &noise).unwrap();
            let rec = TrajectoryOutcome::from_record(0, &traj, &setup(m, t)).unwrap().phase_record().unwrap();
            assert!(reduce_angle(rec.geometric).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_record_identity() {
        for (total, dynamical) in [(0.3, 17.2), (-3.0, -40.0), (PI, PI), (1.0, 0.0)] {
            let r = PhaseRecord::new(3, total, dynamical);
            assert!(r.geometric > -PI && r.geometric <= PI);
            assert!(reduce_angle(r.geometric + r.dynamical - r.total).abs() < 1e-9);
        }
    }

    #[test]
    fn complex_mean_errors() {
        assert_eq!(complex_mean(&[]), Err(Error::EmptyEnsemble));
        let m = complex_mean(&[ONE, -ONE]).unwrap();
        assert!(m.arg.value.is_none());
        let m = complex_mean(&[Complex::new(0.0, 2.0); 4]).unwrap();
        assert_abs_diff_eq!(m.arg.value.unwrap(), FRAC_PI_2);
        assert_eq!(m.arg.stderr, 0.0);
        assert_eq!(m.modulus.value, 2.0);
        assert_eq!(mean_dynamical_phase(&[]), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn delta_method_matches_resampling_spread() {
        // modulus/argument standard errors vs. the spread of repeated means
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Complex> {
            (0..400).map(|_| Complex::from_polar(1.0, 0.8 + rng.random_range(-1.0..1.0))).collect()
        };
        let predicted = complex_mean(&sample(&mut rng)).unwrap();
        let args: Vec<f64> = (0..400).map(|_| complex_mean(&sample(&mut rng)).unwrap().arg.value.unwrap()).collect();
        let spread = mean_stderr(args.iter().copied()).unwrap().stderr * (args.len() as f64).sqrt();
        assert!((predicted.arg.stderr / spread - 1.0).abs() < 0.15, "{} vs {}", predicted.arg.stderr, spread);
    }
}
