//! Stochastic Schrödinger equations unravelling a Lindblad model.
//!
//! Two equations are integrated with Euler–Maruyama:
//!
//! * the nonlinear, norm-preserving equation driven by Wiener noise `W`
//!   under the measure `P`
//!   ```text
//!   dψ = [-iH dt + λ Σ (L̃ - r) dW - (λ²/2) Σ (L̃†L̃ - 2 r L̃ + r²) dt] ψ,
//!   r  = ½ <ψ|L̃† + L̃|ψ>
//!   ```
//! * the linear, free-norm equation driven by `ξ` under the measure `Q`
//!   ```text
//!   dφ = [-iH dt + λ Σ L̃ dξ - (λ²/2) Σ L̃†L̃ dt] φ
//!   ```
//!
//! with `L̃_n = e^{iφ_n} L_n` for the chosen [`UnravellingGauge`]. The two are
//! related pathwise by `dξ = dW + 2λ r dt`, and `<φ|φ>` is the density of
//! `P` with respect to `Q`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::LindbladModel;
use crate::quantum::{dot, norm_sqr, Complex, Matrix, StateVector, ZERO};
use crate::rng;
use crate::tol;

/// Reduces an angle into `(-π, π]`.
pub fn reduce_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// One phase `φ_n` per Lindblad operator, `L_n → e^{iφ_n} L_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnravellingGauge {
    phases: Vec<f64>,
}

impl UnravellingGauge {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("gauge"));
        }
        Ok(Self { phases: phases.into_iter().map(reduce_angle).collect() })
    }

    /// The same angle on each of `channels` operators.
    pub fn uniform(channels: usize, phi: f64) -> Result<Self> {
        Self::new(vec![phi; channels])
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn factors(&self) -> Vec<Complex> {
        self.phases.iter().map(|&p| Complex::from_polar(1.0, p)).collect()
    }

    pub fn channels(&self) -> usize {
        self.phases.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    /// Nonlinear equation only.
    pub renormalize_each_step: bool,
    /// Record every `record_stride`-th step (the final step is always kept).
    pub record_stride: usize,
}

impl SdeConfig {
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        let c = Self { dt, t_final, scheme: Scheme::EulerMaruyama, renormalize_each_step: true, record_stride: 1 };
        c.validate()?;
        Ok(c)
    }

    /// Exactly `steps` uniform steps over `[0, t_final]`.
    pub fn with_steps(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_final > 0.0) {
            return Err(Error::param("with_steps needs t_final > 0 and at least one step"));
        }
        Self::new(t_final / steps as f64, t_final)
    }

    /// The step count nearest to `t_final / dt_max` with step at most `dt_max`.
    pub fn covering(t_final: f64, dt_max: f64) -> Result<Self> {
        let steps = crate::lindblad::step_count(t_final, dt_max)?;
        if steps == 0 {
            Self::new(dt_max, 0.0)
        } else {
            Self::with_steps(t_final, steps)
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.record_stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::param(format!("t_final must be >= 0, got {}", self.t_final)));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > tol::STEP_COUNT * ratio.max(1.0) {
            return Err(Error::param(format!("t_final / dt = {ratio} is not an integer number of steps")));
        }
        if self.record_stride == 0 {
            return Err(Error::param("record_stride must be >= 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Step indices at which the state is recorded.
    pub fn recorded_steps(&self) -> Vec<usize> {
        let steps = self.steps();
        let mut out: Vec<usize> = (0..=steps).step_by(self.record_stride).collect();
        if *out.last().unwrap() != steps {
            out.push(steps);
        }
        out
    }

    pub fn recorded_times(&self) -> Vec<f64> {
        self.recorded_steps().into_iter().map(|k| k as f64 * self.dt).collect()
    }
}

/// Which probability measure a noise path is Wiener under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Nonlinear equation, noise `W`.
    P,
    /// Linear equation, noise `ξ`.
    Q,
}

/// Wiener increments, one row per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    dt: f64,
    measure: Measure,
    increments: Vec<Vec<f64>>,
}

impl NoisePath {
    pub fn new(dt: f64, measure: Measure, increments: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param("noise dt must be > 0"));
        }
        let steps = increments.first().map_or(0, Vec::len);
        if increments.iter().any(|row| row.len() != steps) {
            return Err(Error::param("noise channels have different lengths"));
        }
        if increments.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("noise increment"));
        }
        Ok(Self { dt, measure, increments })
    }

    /// Draws the increments trajectory `index` of a run seeded with
    /// `master_seed` consumes (step-major, channels in order).
    pub fn sample(master_seed: u64, index: u64, channels: usize, steps: usize, dt: f64, measure: Measure) -> Self {
        let mut rng = rng::trajectory_rng(master_seed, index);
        let mut increments = vec![Vec::with_capacity(steps); channels];
        let mut buf = vec![0.0; channels];
        for _ in 0..steps {
            rng::fill_increments(&mut rng, dt, &mut buf);
            for (row, w) in increments.iter_mut().zip(&buf) {
                row.push(*w);
            }
        }
        Self { dt, measure, increments }
    }

    pub fn zeros(channels: usize, steps: usize, dt: f64, measure: Measure) -> Self {
        Self { dt, measure, increments: vec![vec![0.0; steps]; channels] }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn channels(&self) -> usize {
        self.increments.len()
    }

    pub fn steps(&self) -> usize {
        self.increments.first().map_or(0, Vec::len)
    }

    pub fn channel(&self, n: usize) -> &[f64] {
        &self.increments[n]
    }

    pub fn increments_at(&self, step: usize, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.increments) {
            *o = row[step];
        }
    }

    /// `W_t` sampled on the step grid, starting at 0.
    pub fn cumulative(&self, channel: usize) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.increments[channel].iter().map(|w| {
                acc += w;
                acc
            }))
            .collect()
    }

    /// The same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::param(format!("cannot coarsen {} steps by {factor}", self.steps())));
        }
        let increments =
            self.increments.iter().map(|row| row.chunks(factor).map(|c| c.iter().sum()).collect()).collect();
        Ok(Self { dt: self.dt * factor as f64, measure: self.measure, increments })
    }
}

/// A recorded trajectory of either equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub measure: Measure,
    pub times: Vec<f64>,
    /// Nonlinear: normalized states. Linear: the free-norm solution.
    pub states: Vec<StateVector>,
    pub noise: NoisePath,
    /// `<σ_z>` of the normalized state (qubits only).
    pub sz_path: Option<Vec<f64>>,
    /// `<φ_t|φ_t>`; identically 1 for nonlinear trajectories.
    pub weight_path: Vec<f64>,
    /// Itô-accumulated `Im ∫ <ψ|dψ>` along the normalized trajectory.
    pub dyn_phase_path: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one time")
    }
}

/// Drift and diffusion vectors of the nonlinear equation at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub drift: Vec<Complex>,
    pub diffusion: Vec<Vec<Complex>>,
    /// `r_n = Re <ψ|L̃_n|ψ>`
    pub r: Vec<f64>,
}

/// Gauged operators plus scratch space for in-place stepping.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    dim: usize,
    lambda: f64,
    neg_i_h: Matrix,
    ops: Vec<Matrix>,
    ldl: Vec<Matrix>,
    linear_drift: Matrix,
    drift: Vec<Complex>,
    diffusion: Vec<Vec<Complex>>,
    ldl_psi: Vec<Complex>,
    r: Vec<f64>,
}

impl Kernel {
    pub(crate) fn new(model: &LindbladModel, gauge: &UnravellingGauge) -> Result<Self> {
        if gauge.channels() != model.channels() {
            return Err(Error::DimensionMismatch { expected: model.channels(), found: gauge.channels() });
        }
        let dim = model.dim();
        let ops: Vec<Matrix> = model.lindblad_ops().iter().zip(gauge.factors()).map(|(l, c)| l.scale(c)).collect();
        let ldl = model.dissipators().to_vec();
        let neg_i_h = model.hamiltonian().scale(Complex::new(0.0, -1.0));
        let half = Complex::new(-0.5 * model.lambda() * model.lambda(), 0.0);
        let mut linear_drift = neg_i_h.clone();
        for d in &ldl {
            linear_drift = linear_drift.add(&d.scale(half))?;
        }
        Ok(Self {
            dim,
            lambda: model.lambda(),
            neg_i_h,
            ldl,
            linear_drift,
            drift: vec![ZERO; dim],
            diffusion: vec![vec![ZERO; dim]; ops.len()],
            ldl_psi: vec![ZERO; dim],
            r: vec![0.0; ops.len()],
            ops,
        })
    }

    pub(crate) fn channels(&self) -> usize {
        self.ops.len()
    }

    pub(crate) fn r(&self) -> &[f64] {
        &self.r
    }

    /// Fills drift, diffusion and `r` for a normalized `psi`.
    pub(crate) fn coefficients(&mut self, psi: &[Complex]) {
        let lam = self.lambda;
        let half_sq = 0.5 * lam * lam;
        self.neg_i_h.apply_into(psi, &mut self.drift);
        for n in 0..self.ops.len() {
            let lpsi = &mut self.diffusion[n];
            self.ops[n].apply_into(psi, lpsi);
            let r = dot(psi, lpsi).re;
            self.r[n] = r;
            self.ldl[n].apply_into(psi, &mut self.ldl_psi);
            for k in 0..self.dim {
                let l = lpsi[k];
                self.drift[k] -= half_sq * (self.ldl_psi[k] - 2.0 * r * l + r * r * psi[k]);
                lpsi[k] = lam * (l - r * psi[k]);
            }
        }
    }

    /// `Im <ψ|drift> dt + Σ Im <ψ|diffusion_n> dW_n`, after [`coefficients`].
    pub(crate) fn dynamical_increment(&self, psi: &[Complex], dw: &[f64], dt: f64) -> f64 {
        let mut inc = dot(psi, &self.drift).im * dt;
        for (diff, w) in self.diffusion.iter().zip(dw) {
            inc += dot(psi, diff).im * w;
        }
        inc
    }

    /// One nonlinear Euler–Maruyama step in place; returns the dynamical
    /// phase increment (Itô, left point).
    pub(crate) fn nonlinear_step(
        &mut self,
        psi: &mut [Complex],
        dw: &[f64],
        dt: f64,
        renormalize: bool,
    ) -> Result<f64> {
        self.coefficients(psi);
        let dyn_inc = self.dynamical_increment(psi, dw, dt);
        for k in 0..self.dim {
            let mut v = psi[k] + self.drift[k] * dt;
            for (diff, w) in self.diffusion.iter().zip(dw) {
                v += diff[k] * w;
            }
            psi[k] = v;
        }
        let norm = norm_sqr(psi).sqrt();
        if !(norm >= tol::DEGENERATE_NORM) {
            return Err(Error::DegenerateState { norm });
        }
        if renormalize {
            let inv = 1.0 / norm;
            psi.iter_mut().for_each(|a| *a *= inv);
        }
        Ok(dyn_inc)
    }

    /// One linear Euler–Maruyama step in place.
    pub(crate) fn linear_step(&mut self, phi: &mut [Complex], dxi: &[f64], dt: f64) -> Result<()> {
        self.linear_drift.apply_into(phi, &mut self.drift);
        for (op, lphi) in self.ops.iter().zip(self.diffusion.iter_mut()) {
            op.apply_into(phi, lphi);
        }
        for k in 0..self.dim {
            let mut v = phi[k] + self.drift[k] * dt;
            for (lphi, x) in self.diffusion.iter().zip(dxi) {
                v += self.lambda * x * lphi[k];
            }
            phi[k] = v;
        }
        if phi.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::NonFinite("linear state"));
        }
        Ok(())
    }

    /// `r_n` at a normalized state.
    pub(crate) fn fill_r(&mut self, psi: &[Complex]) {
        for n in 0..self.ops.len() {
            self.ops[n].apply_into(psi, &mut self.ldl_psi);
            self.r[n] = dot(psi, &self.ldl_psi).re;
        }
    }
}

/// `<σ_z>` of a normalized qubit state in the `(|+>, |->)` basis.
pub(crate) fn qubit_sz(psi: &[Complex]) -> Option<f64> {
    (psi.len() == 2).then(|| psi[0].norm_sqr() - psi[1].norm_sqr())
}

/// Advances one trajectory of either equation step by step, carrying the
/// normalized state, the measure weight and the pathwise phase integrals.
#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    kernel: Kernel,
    lambda: f64,
    measure: Measure,
    renormalize: bool,
    /// nonlinear: ψ; linear: φ
    state: Vec<Complex>,
    normalized: Vec<Complex>,
    dw: Vec<f64>,
    pub(crate) weight: f64,
    pub(crate) dyn_phase: f64,
    pub(crate) int_sz: f64,
    pub(crate) int_sz2: f64,
    pub(crate) ito_sz_dw: f64,
}

impl Propagator {
    pub(crate) fn new(
        model: &LindbladModel,
        gauge: &UnravellingGauge,
        initial: &StateVector,
        measure: Measure,
        renormalize: bool,
    ) -> Result<Self> {
        if initial.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: initial.dim() });
        }
        initial.require_normalized()?;
        let kernel = Kernel::new(model, gauge)?;
        let n = kernel.channels();
        let mut p = Self {
            kernel,
            lambda: model.lambda(),
            measure,
            renormalize,
            state: initial.amplitudes().to_vec(),
            normalized: initial.amplitudes().to_vec(),
            dw: vec![0.0; n],
            weight: 1.0,
            dyn_phase: 0.0,
            int_sz: 0.0,
            int_sz2: 0.0,
            ito_sz_dw: 0.0,
        };
        p.refresh()?;
        Ok(p)
    }

    fn refresh(&mut self) -> Result<()> {
        let n2 = norm_sqr(&self.state);
        let norm = n2.sqrt();
        if !(norm >= tol::DEGENERATE_NORM) {
            return Err(Error::DegenerateState { norm });
        }
        let inv = 1.0 / norm;
        for (o, a) in self.normalized.iter_mut().zip(&self.state) {
            *o = a * inv;
        }
        self.weight = match self.measure {
            Measure::P => 1.0,
            Measure::Q => n2,
        };
        Ok(())
    }

    pub(crate) fn channels(&self) -> usize {
        self.kernel.channels()
    }

    pub(crate) fn normalized(&self) -> &[Complex] {
        &self.normalized
    }

    pub(crate) fn sz(&self) -> Option<f64> {
        qubit_sz(&self.normalized)
    }

    /// `increments` are `dW` under P, `dξ` under Q.
    pub(crate) fn step(&mut self, increments: &[f64], dt: f64) -> Result<()> {
        let sz = self.sz();
        match self.measure {
            Measure::P => {
                self.dw.copy_from_slice(increments);
                self.dyn_phase += self.kernel.nonlinear_step(&mut self.state, increments, dt, self.renormalize)?;
            }
            Measure::Q => {
                let psi = &self.normalized;
                self.kernel.coefficients(psi);
                for ((w, x), r) in self.dw.iter_mut().zip(increments).zip(self.kernel.r()) {
                    *w = x - 2.0 * self.lambda * r * dt;
                }
                self.dyn_phase += self.kernel.dynamical_increment(psi, &self.dw, dt);
                self.kernel.linear_step(&mut self.state, increments, dt)?;
            }
        }
        if let Some(z) = sz {
            self.int_sz += z * dt;
            self.int_sz2 += z * z * dt;
            self.ito_sz_dw += z * self.dw.iter().sum::<f64>();
        }
        self.refresh()
    }

    pub(crate) fn snapshot(&self) -> StateVector {
        match self.measure {
            Measure::P => StateVector::from_parts(self.state.clone(), self.renormalize),
            Measure::Q => StateVector::from_parts(self.state.clone(), false),
        }
    }
}

/// Drift and diffusion of the nonlinear equation at a normalized `psi`.
pub fn nonlinear_drift_diffusion(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    psi: &StateVector,
) -> Result<DriftDiffusion> {
    check_state(model, psi)?;
    psi.require_normalized()?;
    let mut k = Kernel::new(model, gauge)?;
    k.coefficients(psi.amplitudes());
    Ok(DriftDiffusion { drift: k.drift, diffusion: k.diffusion, r: k.r })
}

fn check_state(model: &LindbladModel, psi: &StateVector) -> Result<()> {
    if psi.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: psi.dim() });
    }
    Ok(())
}

fn check_increments(model: &LindbladModel, dw: &[f64]) -> Result<()> {
    if dw.len() != model.channels() {
        return Err(Error::DimensionMismatch { expected: model.channels(), found: dw.len() });
    }
    if dw.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("noise increment"));
    }
    Ok(())
}

/// One Euler–Maruyama step of the nonlinear equation.
pub fn step_nonlinear(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    psi: &StateVector,
    dw: &[f64],
    dt: f64,
    renormalize: bool,
) -> Result<StateVector> {
    check_state(model, psi)?;
    check_increments(model, dw)?;
    psi.require_normalized()?;
    let mut k = Kernel::new(model, gauge)?;
    let mut amps = psi.amplitudes().to_vec();
    k.nonlinear_step(&mut amps, dw, dt, renormalize)?;
    Ok(StateVector::from_parts(amps, renormalize))
}

/// One Euler–Maruyama step of the linear equation; never renormalizes.
pub fn step_linear(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    phi: &StateVector,
    dxi: &[f64],
    dt: f64,
) -> Result<StateVector> {
    check_state(model, phi)?;
    check_increments(model, dxi)?;
    let mut k = Kernel::new(model, gauge)?;
    let mut amps = phi.amplitudes().to_vec();
    k.linear_step(&mut amps, dxi, dt)?;
    Ok(StateVector::from_parts(amps, false))
}

fn simulate(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    initial: &StateVector,
    config: &SdeConfig,
    noise: &NoisePath,
    measure: Measure,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if noise.measure() != measure {
        return Err(Error::param(format!("noise path is under {:?}, expected {:?}", noise.measure(), measure)));
    }
    if noise.channels() != model.channels() {
        return Err(Error::DimensionMismatch { expected: model.channels(), found: noise.channels() });
    }
    let steps = config.steps();
    if noise.steps() < steps || (noise.dt() - config.dt).abs() > tol::STEP_COUNT * config.dt {
        return Err(Error::param("noise path does not cover the configured time grid"));
    }
    let mut prop = Propagator::new(model, gauge, initial, measure, config.renormalize_each_step)?;
    let recorded = config.recorded_steps();
    let mut rec = TrajectoryRecord {
        measure,
        times: Vec::with_capacity(recorded.len()),
        states: Vec::with_capacity(recorded.len()),
        noise: noise.clone(),
        sz_path: (model.dim() == 2).then(Vec::new),
        weight_path: Vec::with_capacity(recorded.len()),
        dyn_phase_path: Vec::with_capacity(recorded.len()),
    };
    let push = |prop: &Propagator, k: usize, rec: &mut TrajectoryRecord| {
        rec.times.push(k as f64 * config.dt);
        rec.states.push(prop.snapshot());
        if let (Some(path), Some(z)) = (rec.sz_path.as_mut(), prop.sz()) {
            path.push(z);
        }
        rec.weight_path.push(prop.weight);
        rec.dyn_phase_path.push(prop.dyn_phase);
    };
    push(&prop, 0, &mut rec);
    let mut next = 1;
    let mut inc = vec![0.0; prop.channels()];
    for k in 0..steps {
        noise.increments_at(k, &mut inc);
        prop.step(&inc, config.dt)?;
        if next < recorded.len() && recorded[next] == k + 1 {
            push(&prop, k + 1, &mut rec);
            next += 1;
        }
    }
    Ok(rec)
}

/// Integrates the nonlinear equation along a `P` noise path.
pub fn simulate_nonlinear(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    psi0: &StateVector,
    config: &SdeConfig,
    noise: &NoisePath,
) -> Result<TrajectoryRecord> {
    simulate(model, gauge, psi0, config, noise, Measure::P)
}

/// Integrates the linear equation along a `Q` noise path.
pub fn simulate_linear(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    phi0: &StateVector,
    config: &SdeConfig,
    noise: &NoisePath,
) -> Result<TrajectoryRecord> {
    simulate(model, gauge, phi0, config, noise, Measure::Q)
}

/// The `Q` noise `dξ = dW + 2λ r dt` seen along a nonlinear trajectory.
/// The trajectory must be recorded at every step.
pub fn girsanov_shift(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    trajectory: &TrajectoryRecord,
) -> Result<NoisePath> {
    if trajectory.measure != Measure::P {
        return Err(Error::param("girsanov_shift needs a nonlinear (P) trajectory"));
    }
    let steps = trajectory.states.len() - 1;
    if trajectory.noise.steps() < steps {
        return Err(Error::param("trajectory noise is shorter than its state path"));
    }
    let dt = trajectory.noise.dt();
    if steps > 0 && ((trajectory.times[1] - trajectory.times[0]) - dt).abs() > tol::STEP_COUNT * dt.max(1.0) {
        return Err(Error::param("girsanov_shift needs a trajectory recorded at every step"));
    }
    let mut k = Kernel::new(model, gauge)?;
    let lam = model.lambda();
    let mut rows = vec![Vec::with_capacity(steps); model.channels()];
    for (step, psi) in trajectory.states[..steps].iter().enumerate() {
        let normalized = psi.to_normalized()?;
        k.fill_r(normalized.amplitudes());
        for (n, row) in rows.iter_mut().enumerate() {
            row.push(trajectory.noise.channel(n)[step] + 2.0 * lam * k.r()[n] * dt);
        }
    }
    NoisePath::new(dt, Measure::Q, rows)
}

/// `min_α || a - e^{iα} b ||` for unit vectors.
pub(crate) fn ray_distance(a: &[Complex], b: &[Complex]) -> f64 {
    let overlap = dot(b, a);
    let align = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex::new(1.0, 0.0) };
    a.iter().zip(b).map(|(x, y)| (x - align * y).norm_sqr()).sum::<f64>().sqrt()
}

/// Integrates the linear equation with `ξ` and, simultaneously, the
/// nonlinear equation with `dW = dξ - 2λ r dt`; returns the largest
/// phase-aligned distance between the normalized linear solution and the
/// nonlinear one.
pub fn pathwise_equivalence_check(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    phi0: &StateVector,
    noise: &NoisePath,
    dt: f64,
) -> Result<f64> {
    if noise.measure() != Measure::Q {
        return Err(Error::param("pathwise_equivalence_check needs Q noise"));
    }
    if (noise.dt() - dt).abs() > tol::STEP_COUNT * dt {
        return Err(Error::param("noise dt differs from the integration dt"));
    }
    check_state(model, phi0)?;
    phi0.require_normalized()?;
    let mut lin = Kernel::new(model, gauge)?;
    let mut nl = Kernel::new(model, gauge)?;
    let lam = model.lambda();
    let mut phi = phi0.amplitudes().to_vec();
    let mut psi = phi0.amplitudes().to_vec();
    let mut dxi = vec![0.0; model.channels()];
    let mut dw = vec![0.0; model.channels()];
    let mut worst: f64 = 0.0;
    for step in 0..noise.steps() {
        noise.increments_at(step, &mut dxi);
        nl.fill_r(&psi);
        for ((w, x), r) in dw.iter_mut().zip(&dxi).zip(nl.r()) {
            *w = x - 2.0 * lam * r * dt;
        }
        lin.linear_step(&mut phi, &dxi, dt)?;
        nl.nonlinear_step(&mut psi, &dw, dt, true)?;
        let norm = norm_sqr(&phi).sqrt();
        if !(norm >= tol::DEGENERATE_NORM) {
            return Err(Error::DegenerateState { norm });
        }
        let unit: Vec<Complex> = phi.iter().map(|a| a / norm).collect();
        worst = worst.max(ray_distance(&unit, &psi));
    }
    Ok(worst)
}

/// `<φ_t|φ_t>` along a linear trajectory: the density of `P` relative to `Q`.
pub fn measure_weight(trajectory: &TrajectoryRecord) -> Result<Vec<f64>> {
    if trajectory.measure != Measure::Q {
        return Err(Error::param("measure_weight needs a linear (Q) trajectory"));
    }
    Ok(trajectory.states.iter().map(StateVector::norm_sqr).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::DephasingSpinModel;
    use crate::quantum::{expectation, pauli, ONE};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    fn spin(mu_b: f64, lambda: f64, theta: f64) -> DephasingSpinModel {
        DephasingSpinModel::new(mu_b, lambda, theta).unwrap()
    }

    fn gauge(phi: f64) -> UnravellingGauge {
        UnravellingGauge::uniform(1, phi).unwrap()
    }

    fn close(a: &[Complex], b: &[Complex], eps: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() <= eps)
    }

    #[test]
    fn gauge_angles_are_reduced() {
        let g = UnravellingGauge::new(vec![3.0 * PI, -PI, 0.5, -7.0]).unwrap();
        assert_abs_diff_eq!(g.phases()[0], PI, epsilon = 1e-12);
        assert_abs_diff_eq!(g.phases()[1], PI, epsilon = 1e-12);
        assert_abs_diff_eq!(g.phases()[2], 0.5);
        assert_abs_diff_eq!(g.phases()[3], -7.0 + 2.0 * PI, epsilon = 1e-12);
        assert!(g.phases().iter().all(|p| *p > -PI && *p <= PI));
    }

    #[test]
    fn sde_config_grid() {
        assert!(SdeConfig::new(1e-3, 2.0).is_ok());
        assert!(SdeConfig::new(1e-3, 2.0005).is_err());
        assert!(SdeConfig::new(0.0, 1.0).is_err());
        let c = SdeConfig::with_steps(PI, 3142).unwrap();
        assert_eq!(c.steps(), 3142);
        let c = SdeConfig::new(0.1, 1.0).unwrap().with_stride(3).unwrap();
        assert_eq!(c.recorded_steps(), vec![0, 3, 6, 9, 10]);
        assert_eq!(SdeConfig::new(0.1, 0.0).unwrap().recorded_steps(), vec![0]);
    }

    #[test]
    fn noise_coarsening_preserves_the_path() {
        let fine = NoisePath::sample(3, 9, 2, 40, 0.01, Measure::Q);
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.steps(), 10);
        for n in 0..2 {
            let wf = fine.cumulative(n);
            let wc = coarse.cumulative(n);
            for (k, w) in wc.iter().enumerate() {
                assert_abs_diff_eq!(*w, wf[4 * k], epsilon = 1e-14);
            }
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn diffusion_on_sigma_z_eigenstate_is_pure_phase() {
        let lambda = 0.7;
        let model = spin(1.0, lambda, 0.0).lindblad();
        for phi in [0.0, 0.4, FRAC_PI_2, 2.5] {
            let dd = nonlinear_drift_diffusion(&model, &gauge(phi), &pauli::plus()).unwrap();
            assert_abs_diff_eq!(dd.r[0], phi.cos(), epsilon = 1e-15);
            let d = dd.diffusion[0][0];
            assert_abs_diff_eq!(d.re, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(d.im, lambda * phi.sin(), epsilon = 1e-15);
            assert_eq!(dd.diffusion[0][1], ZERO);
        }
    }

    #[test]
    fn schrodinger_limit() {
        let p = spin(1.3, 0.0, 1.1);
        let psi = p.initial_state();
        let dd = nonlinear_drift_diffusion(&p.lindblad(), &gauge(0.8), &psi).unwrap();
        let h_psi = p.lindblad().hamiltonian().apply(&psi).unwrap();
        let expected: Vec<Complex> = h_psi.iter().map(|z| z * Complex::new(0.0, -1.0)).collect();
        assert!(close(&dd.drift, &expected, 1e-15));
        assert!(dd.diffusion[0].iter().all(|z| *z == ZERO));
    }

    #[test]
    fn zero_mean_sz_at_phi_zero() {
        let lambda = 0.9;
        let p = spin(0.6, lambda, FRAC_PI_2);
        let psi = p.initial_state();
        let dd = nonlinear_drift_diffusion(&p.lindblad(), &gauge(0.0), &psi).unwrap();
        let sz_psi = pauli::sigma_z().apply(&psi).unwrap();
        let expected: Vec<Complex> = sz_psi.iter().map(|z| z * lambda).collect();
        assert!(close(&dd.diffusion[0], &expected, 1e-15));
        // noise part of the drift is -(λ²/2) ψ
        let h_part: Vec<Complex> =
            p.lindblad().hamiltonian().apply(&psi).unwrap().iter().map(|z| z * Complex::new(0.0, -1.0)).collect();
        for ((d, h), a) in dd.drift.iter().zip(&h_part).zip(psi.amplitudes()) {
            assert!((d - h + 0.5 * lambda * lambda * a).norm() < 1e-15);
        }
    }

    /// Coefficients of the spin equation written out by hand for a generic
    /// state and gauge.
    #[test]
    fn spin_coefficients_match_closed_form() {
        let (mu_b, lambda) = (0.8, 0.6);
        let model = spin(mu_b, lambda, 0.0).lindblad();
        let psi = StateVector::normalize(vec![Complex::new(0.3, 0.4), Complex::new(-0.2, 0.7)]).unwrap();
        let z = expectation(&pauli::sigma_z(), &psi).unwrap().re;
        for phi in [0.0, 0.3, FRAC_PI_4, FRAC_PI_2, 2.0, -1.2] {
            let c = Complex::from_polar(1.0, phi);
            let cp = phi.cos();
            let dd = nonlinear_drift_diffusion(&model, &gauge(phi), &psi).unwrap();
            for (k, s) in [(0usize, 1.0), (1, -1.0)] {
                let a = psi.amplitudes()[k];
                let drift = Complex::new(0.0, mu_b * s) * a
                    - 0.5 * lambda * lambda * (1.0 - 2.0 * c * cp * z * s + cp * cp * z * z) * a;
                let diff = lambda * (c * s - cp * z) * a;
                assert!((dd.drift[k] - drift).norm() < 1e-14);
                assert!((dd.diffusion[0][k] - diff).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn unitary_step_has_second_order_norm_change() {
        let p = spin(1.0, 0.0, 1.0);
        let dt = 1e-3;
        let next = step_nonlinear(&p.lindblad(), &gauge(0.0), &p.initial_state(), &[0.0], dt, false).unwrap();
        let change = (next.norm_sqr() - 1.0).abs();
        assert!(change <= 2.0 * dt * dt && change > 0.0);
        let lin = step_linear(&p.lindblad(), &gauge(0.0), &p.initial_state(), &[0.0], dt).unwrap();
        assert_eq!(lin.amplitudes(), next.amplitudes());
    }

    #[test]
    fn eigenstate_ray_is_fixed() {
        let p = spin(1.0, 0.8, 0.0);
        for phi in [0.0, 1.0, FRAC_PI_2] {
            let next = step_nonlinear(&p.lindblad(), &gauge(phi), &pauli::plus(), &[0.05], 1e-3, true).unwrap();
            assert_abs_diff_eq!(expectation(&pauli::sigma_z(), &next).unwrap().re, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn sz_frozen_at_phi_half_pi() {
        let p = spin(1.0, 1.0, FRAC_PI_3);
        let dt = 1e-3;
        let mut psi = p.initial_state();
        let z0 = expectation(&pauli::sigma_z(), &psi).unwrap().re;
        for dw in [0.03, -0.05, 0.01, 0.08] {
            psi = step_nonlinear(&p.lindblad(), &gauge(FRAC_PI_2), &psi, &[dw], dt, true).unwrap();
            let z = expectation(&pauli::sigma_z(), &psi).unwrap().re;
            assert!((z - z0).abs() <= 10.0 * dt * dt);
        }
        // contrast: at φ = 0 the same kick moves <σz> at O(√dt)
        let moved = step_nonlinear(&p.lindblad(), &gauge(0.0), &p.initial_state(), &[0.03], dt, true).unwrap();
        assert!((expectation(&pauli::sigma_z(), &moved).unwrap().re - z0).abs() > 0.01);
    }

    #[test]
    fn linear_step_multiplies_eigen_amplitudes() {
        let (mu_b, lambda, dt, dxi) = (0.7, 0.9, 1e-3, 0.021);
        let p = spin(mu_b, lambda, 0.0);
        for phi in [0.0, 0.6, FRAC_PI_2] {
            let c = Complex::from_polar(1.0, phi);
            let next = step_linear(&p.lindblad(), &gauge(phi), &pauli::plus(), &[dxi], dt).unwrap();
            let factor = ONE + Complex::new(0.0, mu_b * dt) + lambda * c * dxi - 0.5 * lambda * lambda * dt;
            assert!((next.amplitudes()[0] - factor).norm() < 1e-15);
            assert_eq!(next.amplitudes()[1], ZERO);
        }
        // φ = 0: norm² factor 1 + 2λ dξ + O(dt)
        let next = step_linear(&p.lindblad(), &gauge(0.0), &pauli::plus(), &[dxi], dt).unwrap();
        assert!((next.norm_sqr() - (1.0 + 2.0 * lambda * dxi)).abs() < 5.0 * dt);
    }

    #[test]
    fn girsanov_shift_examples() {
        let dt = 1e-3;
        let steps = 200;
        let noise = NoisePath::sample(11, 0, 1, steps, dt, Measure::P);
        let config = SdeConfig::new(dt, steps as f64 * dt).unwrap();

        let p = spin(1.0, 0.8, FRAC_PI_3);
        let traj = simulate_nonlinear(&p.lindblad(), &gauge(FRAC_PI_2), &p.initial_state(), &config, &noise).unwrap();
        let xi = girsanov_shift(&p.lindblad(), &gauge(FRAC_PI_2), &traj).unwrap();
        for (a, b) in xi.channel(0).iter().zip(noise.channel(0)) {
            assert!((a - b).abs() < 1e-17);
        }

        let free = spin(1.0, 0.0, FRAC_PI_3);
        let traj = simulate_nonlinear(&free.lindblad(), &gauge(0.0), &free.initial_state(), &config, &noise).unwrap();
        let xi = girsanov_shift(&free.lindblad(), &gauge(0.0), &traj).unwrap();
        assert_eq!(xi.channel(0), noise.channel(0));

        let lambda = 0.8;
        let up = spin(1.0, lambda, 0.0);
        let traj = simulate_nonlinear(&up.lindblad(), &gauge(0.0), &pauli::plus(), &config, &noise).unwrap();
        let xi = girsanov_shift(&up.lindblad(), &gauge(0.0), &traj).unwrap();
        for (a, b) in xi.channel(0).iter().zip(noise.channel(0)) {
            assert_abs_diff_eq!(*a, b + 2.0 * lambda * dt, epsilon = 1e-15);
        }
    }

    #[test]
    fn pathwise_equivalence_limits() {
        let dt = 1e-3;
        let noise = NoisePath::sample(5, 1, 1, 1000, dt, Measure::Q);
        let free = spin(1.0, 0.0, FRAC_PI_3);
        let dev = pathwise_equivalence_check(&free.lindblad(), &gauge(0.0), &free.initial_state(), &noise, dt).unwrap();
        assert!(dev <= 1e-10, "{dev}");

        let p = spin(1.0, 1.0, 0.0);
        for dt in [1e-2, 1e-3] {
            let noise = NoisePath::sample(5, 2, 1, 500, dt, Measure::Q);
            let dev = pathwise_equivalence_check(&p.lindblad(), &gauge(0.3), &pauli::plus(), &noise, dt).unwrap();
            assert!(dev <= 1e-9, "{dev}");
        }
    }

    #[test]
    fn pathwise_equivalence_is_exact_when_r_vanishes() {
        // cos φ = 0 gives r = 0: both equations share one linear step map.
        let dt = 1e-3;
        let noise = NoisePath::sample(5, 3, 1, 2000, dt, Measure::Q);
        let p = spin(1.0, 1.0, FRAC_PI_3);
        let dev = pathwise_equivalence_check(&p.lindblad(), &gauge(FRAC_PI_2), &p.initial_state(), &noise, dt).unwrap();
        assert!(dev <= 1e-12, "{dev}");
    }

    #[test]
    fn measure_weight_limits() {
        let dt = 1e-3;
        let steps = 500;
        let config = SdeConfig::new(dt, steps as f64 * dt).unwrap();
        let noise = NoisePath::sample(1, 0, 1, steps, dt, Measure::Q);
        let free = spin(1.0, 0.0, 1.0);
        let traj = simulate_linear(&free.lindblad(), &gauge(0.0), &free.initial_state(), &config, &noise).unwrap();
        let w = measure_weight(&traj).unwrap();
        assert_eq!(w[0], 1.0);
        // unitary Euler inflates the norm by (1 + μB² dt²) per step
        assert!(w.iter().all(|x| (x - 1.0).abs() < steps as f64 * 2.0 * dt * dt));

        let lambda = 0.6;
        let up = spin(1.0, lambda, 0.0);
        let traj = simulate_linear(&up.lindblad(), &gauge(0.0), &pauli::plus(), &config, &noise).unwrap();
        let w = measure_weight(&traj).unwrap();
        let xi = noise.cumulative(0);
        for (k, (wk, xk)) in w.iter().zip(&xi).enumerate() {
            let t = k as f64 * dt;
            let exact = (2.0 * lambda * xk - 2.0 * lambda * lambda * t).exp();
            assert!((wk / exact - 1.0).abs() < 0.02, "k={k} {wk} vs {exact}");
        }
        assert_eq!(w, traj.weight_path);
    }

    #[test]
    fn trajectory_records_respect_invariants() {
        let dt = 1e-3;
        let config = SdeConfig::new(dt, 1.0).unwrap().with_stride(10).unwrap();
        let noise = NoisePath::sample(2, 7, 1, config.steps(), dt, Measure::P);
        let p = spin(1.0, 1.0, FRAC_PI_3);
        let traj = simulate_nonlinear(&p.lindblad(), &gauge(0.4), &p.initial_state(), &config, &noise).unwrap();
        assert_eq!(traj.times.len(), 101);
        assert!(traj.states.iter().all(|s| (s.norm_sqr() - 1.0).abs() <= tol::TRAJECTORY_NORM));
        assert!(traj.weight_path.iter().all(|w| *w == 1.0));
        assert_abs_diff_eq!(traj.sz_path.as_ref().unwrap()[0], FRAC_PI_3.cos(), epsilon = 1e-15);
        assert!(simulate_linear(&p.lindblad(), &gauge(0.4), &p.initial_state(), &config, &noise).is_err());
        // decimated records cannot be shifted
        assert!(girsanov_shift(&p.lindblad(), &gauge(0.4), &traj).is_err());
    }
}
