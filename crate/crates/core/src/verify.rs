//! The acceptance checks, runnable from tests and from the command line.
//!
//! Each criterion returns a [`CriterionResult`]; nothing here panics on a
//! failed check. Statistical criteria are reported as
//! [`Status::Inconclusive`] when the configured ensemble is too small to
//! resolve them, and criteria that need noise are skipped for `λ = 0`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::ensemble::{
    compare_gauges, run_ensemble, with_workers, EnsembleSpec, Equation, GaugeComparison, InitialEnsemble,
};
use crate::error::{Error, Result};
use crate::lindblad::{dephasing_exact, integrate_master, DephasingSpinModel, LindbladModel};
use crate::phase::{
    average_intensity, fit_fringe, mean_stderr, weighted_dyn_factors, weighted_f, Linearized, PhaseEstimate,
    PhaseSummary, TrajectoryOutcome,
};
use crate::quantum::StateVector;
use crate::sse::{
    girsanov_shift, ray_distance, reduce_angle, simulate_linear, simulate_nonlinear, Measure, NoisePath, SdeConfig,
    UnravellingGauge,
};
use crate::tol;

pub const DEFAULT_SEED: u64 = 2005;

/// Below this many trajectories the statistical criteria are not judged.
pub const MIN_POWERED_TRAJ: usize = 1000;

pub const PATHWISE_PATHS: usize = 100;

const ORACLE_HORIZON: f64 = 5.0;
const ORACLE_TOLERANCE: f64 = 1e-8;
const DENSITY_FLOOR: f64 = 0.02;
const GAUGE_EFFECT_SIGMAS: f64 = 5.0;
const UNITARY_GEOMETRIC_TOLERANCE: f64 = 1e-6;
const FRINGE_POINTS: usize = 64;
const FRINGE_RESIDUAL: f64 = 1e-6;
const WORKER_COUNTS: [usize; 3] = [1, 2, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Skipped => "SKIPPED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {:>2} {}: {}", self.status, self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    /// No failures and nothing left undecided.
    pub fn succeeded(&self) -> bool {
        self.criteria.iter().all(|c| matches!(c.status, Status::Pass | Status::Skipped))
    }
}

/// Model and discretization the criteria run at. Criteria that fix their own
/// parameters (horizon, λ grid, θ) override the relevant fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub model: DephasingSpinModel,
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            model: DephasingSpinModel { mu_b: 1.0, lambda: 0.5, theta: PI / 3.0 },
            dt: 1e-3,
            t_final: 2.0,
            n_traj: 10_000,
            seed: DEFAULT_SEED,
        }
    }
}

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "oracle equivalence"),
    (2, "unravelling consistency"),
    (3, "pathwise linear/nonlinear correspondence"),
    (4, "measure-change martingale"),
    (5, "moment laws"),
    (6, "total phase pi-pulse"),
    (7, "gauge and lambda independence of total phase"),
    (8, "gauge dependence of dynamical and geometric phase"),
    (9, "closed-form phase-factor average"),
    (10, "unitary-limit geometric phase"),
    (11, "determinism across worker counts"),
];

fn band(stderr: f64) -> f64 {
    tol::SIGMA_BAND * stderr + tol::ROUNDING_FLOOR
}

fn combined(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { ok, detail: detail.into() })
}

fn defined(p: PhaseEstimate, what: &str) -> Result<f64> {
    p.value.ok_or_else(|| Error::param(format!("{what} is undefined (vanishing modulus)")))
}

pub struct Verifier {
    cfg: VerifyConfig,
    preset_gauges: OnceLock<GaugeComparison>,
}

impl Verifier {
    pub fn new(cfg: VerifyConfig) -> Result<Self> {
        cfg.model.validate()?;
        if cfg.n_traj == 0 {
            return Err(Error::param("n_traj must be >= 1"));
        }
        SdeConfig::covering(cfg.t_final, cfg.dt)?;
        Ok(Self { cfg, preset_gauges: OnceLock::new() })
    }

    pub fn config(&self) -> &VerifyConfig {
        &self.cfg
    }

    pub fn run_all(&self) -> VerifyReport {
        self.run(&CRITERIA.map(|c| c.0))
    }

    pub fn run(&self, ids: &[u8]) -> VerifyReport {
        VerifyReport { config: self.cfg, criteria: ids.iter().map(|&id| self.criterion(id)).collect() }
    }

    fn statistical(id: u8) -> bool {
        matches!(id, 2 | 4 | 5 | 6 | 7 | 8 | 9)
    }

    fn needs_noise(id: u8) -> bool {
        matches!(id, 3 | 4 | 7 | 8 | 9)
    }

    pub fn criterion(&self, id: u8) -> CriterionResult {
        let name =
            CRITERIA.iter().find(|c| c.0 == id).map_or_else(|| "unknown criterion".to_string(), |c| c.1.to_string());
        let lambda = self.cfg.model.lambda;
        let (status, detail) = if Self::needs_noise(id) && lambda == 0.0 {
            (Status::Skipped, "requires lambda > 0".to_string())
        } else if Self::statistical(id) && lambda > 0.0 && self.cfg.n_traj < MIN_POWERED_TRAJ {
            (
                Status::Inconclusive,
                format!("n_traj = {} is below the {MIN_POWERED_TRAJ} needed for a 3-sigma test", self.cfg.n_traj),
            )
        } else {
            let result = match id {
                1 => self.oracle_equivalence(),
                2 => self.unravelling_consistency(),
                3 => self.pathwise_correspondence(),
                4 => self.martingale(),
                5 => self.moment_laws(),
                6 => self.pi_pulse(),
                7 => self.total_phase_independence(),
                8 => self.gauge_dependence(),
                9 => self.closed_form_factor(),
                10 => self.unitary_geometric(),
                11 => self.determinism(),
                _ => Err(Error::param(format!("no criterion {id}"))),
            };
            match result {
                Ok(o) => (if o.ok { Status::Pass } else { Status::Fail }, o.detail),
                Err(e) => (Status::Fail, format!("error: {e}")),
            }
        };
        CriterionResult { id, name, status, detail }
    }

    fn spec(&self, model: DephasingSpinModel, phi: f64, sde: SdeConfig) -> Result<EnsembleSpec> {
        EnsembleSpec::new(
            model.lindblad(),
            UnravellingGauge::uniform(1, phi)?,
            InitialEnsemble::pure(model.initial_state())?,
            sde,
            self.cfg.n_traj,
            self.cfg.seed,
        )
    }

    fn preset_sde(&self, points: usize) -> Result<SdeConfig> {
        let sde = SdeConfig::covering(self.cfg.t_final, self.cfg.dt)?;
        let stride = (sde.steps() / points).max(1);
        sde.with_stride(stride)
    }

    fn gauges(phis: &[f64]) -> Result<Vec<UnravellingGauge>> {
        phis.iter().map(|&p| UnravellingGauge::uniform(1, p)).collect()
    }

    /// The configured model under φ ∈ {0, π/4, π/2} on shared noise.
    fn preset_comparison(&self) -> Result<&GaugeComparison> {
        if let Some(c) = self.preset_gauges.get() {
            return Ok(c);
        }
        let spec = self.spec(self.cfg.model, 0.0, self.preset_sde(100)?)?;
        let cmp = compare_gauges(&spec, &Self::gauges(&[0.0, FRAC_PI_4, FRAC_PI_2])?)?;
        Ok(self.preset_gauges.get_or_init(|| cmp))
    }

    fn oracle_equivalence(&self) -> Result<Outcome> {
        let model = self.cfg.model;
        let path = integrate_master(&model.lindblad(), &model.initial_density(), ORACLE_HORIZON, self.cfg.dt)?;
        let mut worst: f64 = 0.0;
        for (t, rho) in path.times.iter().zip(&path.states) {
            worst = worst.max(rho.max_abs_diff(&dephasing_exact(&model, *t))?);
        }
        outcome(
            worst <= ORACLE_TOLERANCE,
            format!("max entrywise deviation {worst:.3e} over t in [0, {ORACLE_HORIZON}] (limit {ORACLE_TOLERANCE:e})"),
        )
    }

    fn unravelling_consistency(&self) -> Result<Outcome> {
        let cmp = self.preset_comparison()?;
        let mut worst_ratio: f64 = 0.0;
        let mut worst_at = (0.0, 0.0);
        for (g, stats) in cmp.gauges.iter().zip(&cmp.stats) {
            for ((t, mean), se) in stats.times.iter().zip(&stats.mean_density).zip(&stats.stderr_density) {
                let exact = dephasing_exact(&self.cfg.model, *t);
                for ((m, e), s) in mean.entries().iter().zip(exact.matrix().entries()).zip(se.entries()) {
                    for (d, s) in [((m.re - e.re).abs(), s.re), ((m.im - e.im).abs(), s.im)] {
                        let ratio = d / (3.0 * s).max(DENSITY_FLOOR);
                        if ratio > worst_ratio {
                            worst_ratio = ratio;
                            worst_at = (g.phases()[0], *t);
                        }
                    }
                }
            }
        }
        outcome(
            worst_ratio <= 1.0,
            format!(
                "worst |mean - exact| / max(3 se, {DENSITY_FLOOR}) = {worst_ratio:.3} (phi = {:.4}, t = {:.3})",
                worst_at.0, worst_at.1
            ),
        )
    }

    /// Median over paths of the largest ray distance between the nonlinear
    /// solution and the normalized linear solution driven by its
    /// Girsanov-shifted noise, at `dt` and `dt / 2` on the same Brownian
    /// paths.
    pub fn pathwise_medians(&self) -> Result<(f64, f64)> {
        let model = self.cfg.model.lindblad();
        let gauge = UnravellingGauge::uniform(1, 0.0)?;
        let psi0 = self.cfg.model.initial_state();
        let coarse = SdeConfig::covering(self.cfg.t_final, self.cfg.dt)?;
        let fine = SdeConfig::with_steps(coarse.t_final, 2 * coarse.steps())?;
        let mut dev_coarse = Vec::with_capacity(PATHWISE_PATHS);
        let mut dev_fine = Vec::with_capacity(PATHWISE_PATHS);
        for i in 0..PATHWISE_PATHS {
            let w = NoisePath::sample(self.cfg.seed, i as u64, 1, fine.steps(), fine.dt, Measure::P);
            dev_fine.push(girsanov_deviation(&model, &gauge, &psi0, &fine, &w)?);
            dev_coarse.push(girsanov_deviation(&model, &gauge, &psi0, &coarse, &w.coarsen(2)?)?);
        }
        Ok((median(dev_coarse), median(dev_fine)))
    }

    fn pathwise_correspondence(&self) -> Result<Outcome> {
        let (coarse, fine) = self.pathwise_medians()?;
        let ratio = coarse / fine;
        outcome(
            ratio >= std::f64::consts::SQRT_2,
            format!(
                "median max deviation {coarse:.4e} at dt = {:e}, {fine:.4e} at dt/2; ratio {ratio:.4} (need >= sqrt 2 = 1.4142)",
                self.cfg.dt
            ),
        )
    }

    fn martingale(&self) -> Result<Outcome> {
        let spec = self.spec(self.cfg.model, 0.0, self.preset_sde(100)?)?.with_equation(Equation::LinearQ);
        let stats = run_ensemble(&spec)?;
        let mut worst: f64 = 0.0;
        let mut worst_t = 0.0;
        let mut ok = true;
        for ((t, m), se) in stats.times.iter().zip(&stats.weight.mean).zip(&stats.weight.stderr) {
            let d = (m - 1.0).abs();
            ok &= d <= band(*se);
            let z = d / se.max(f64::MIN_POSITIVE);
            if z > worst {
                worst = z;
                worst_t = *t;
            }
        }
        outcome(
            ok,
            format!(
                "largest |E_Q<phi|phi> - 1| / se = {worst:.3} at t = {worst_t:.3} over {} times",
                stats.times.len()
            ),
        )
    }

    fn moment_laws(&self) -> Result<Outcome> {
        let cmp = self.preset_comparison()?;
        let cos_theta = self.cfg.model.theta.cos();
        let mut notes = Vec::new();
        let mut ok = true;
        for (g, stats) in cmp.gauges.iter().zip(&cmp.stats) {
            let phi = g.phases()[0];
            let flat_bad = stats
                .mean_sz
                .iter()
                .zip(&stats.stderr_sz)
                .filter(|(m, se)| (*m - cos_theta).abs() > band(**se))
                .count();
            let rising_bad = stats
                .mean_sz2
                .windows(2)
                .zip(stats.stderr_sz2.windows(2))
                .filter(|(m, se)| m[1] < m[0] - (se[0].max(se[1]) + tol::ROUNDING_FLOOR))
                .count();
            ok &= flat_bad == 0 && rising_bad == 0;
            notes.push(format!(
                "phi={phi:.4}: E<sz> off-band at {flat_bad} times, E<sz>^2 drops at {rising_bad} steps, E<sz>^2(T)={:.4}",
                stats.mean_sz2.last().copied().unwrap_or(f64::NAN)
            ));
        }
        let spec = self.spec(self.cfg.model, FRAC_PI_2, SdeConfig::covering(self.cfg.t_final, self.cfg.dt)?)?;
        let limit = 10.0 * spec.sde.dt;
        let mut fluct: f64 = 0.0;
        for i in 0..spec.n_traj.min(PATHWISE_PATHS) {
            let rec = spec.trajectory(i)?;
            let sz = rec.sz_path.as_deref().unwrap_or_default();
            let (lo, hi) = sz.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), z| (l.min(*z), h.max(*z)));
            fluct = fluct.max(hi - lo);
        }
        ok &= fluct <= limit;
        notes.push(format!("phi=pi/2 per-path <sz> fluctuation {fluct:.2e} (limit {limit:.1e})"));
        outcome(ok, notes.join("; "))
    }

    fn pi_pulse(&self) -> Result<Outcome> {
        let model = self.cfg.model;
        let t = PI / model.mu_b;
        let steps = ((t / self.cfg.dt).round() as usize).max(1);
        let sde = SdeConfig::with_steps(t, steps)?.with_stride(steps)?;
        let stats = run_ensemble(&self.spec(model, 0.0, sde)?)?;
        let summary = stats.phase_summary.ok_or_else(|| Error::UnsupportedModel("no phase summary".into()))?;
        let chi: Vec<f64> = (0..FRINGE_POINTS).map(|k| 2.0 * PI * k as f64 / FRINGE_POINTS as f64).collect();
        let curve = average_intensity(&stats.outcomes, model, t, &chi)?;
        let fit = fit_fringe(&chi, &curve.iter().map(|e| e.value).collect::<Vec<_>>())?;
        let gamma = fit.phase.ok_or_else(|| Error::param("fitted visibility vanishes"))?;
        let phase_err = reduce_angle(gamma - PI).abs();
        let nu_err = (fit.visibility - 1.0).abs();
        let ok = phase_err <= band(summary.total.stderr)
            && nu_err <= band(summary.visibility.stderr)
            && fit.residual <= FRINGE_RESIDUAL;
        outcome(
            ok,
            format!(
                "fitted gamma = {gamma:.15} (|gamma - pi| mod 2pi = {phase_err:.2e}, se {:.2e}), nu = {:.15} (se {:.2e}), fit rms {:.1e}",
                summary.total.stderr, fit.visibility, summary.visibility.stderr, fit.residual
            ),
        )
    }

    fn total_phase_independence(&self) -> Result<Outcome> {
        struct Row {
            lambda: f64,
            phi: f64,
            phase: Linearized,
            visibility: Linearized,
        }
        let mut rows = Vec::new();
        for lambda in [0.25, 0.5, 1.0] {
            let model = DephasingSpinModel::new(self.cfg.model.mu_b, lambda, self.cfg.model.theta)?;
            let spec = self.spec(model, 0.0, self.preset_sde(1)?)?;
            let cmp = compare_gauges(&spec, &Self::gauges(&[0.0, FRAC_PI_4, FRAC_PI_2])?)?;
            for (g, s) in cmp.gauges.iter().zip(&cmp.stats) {
                let wf = weighted_f(&s.outcomes)?;
                rows.push(Row {
                    lambda,
                    phi: g.phases()[0],
                    phase: Linearized::arg(&wf)?,
                    visibility: Linearized::modulus(&wf)?,
                });
            }
        }
        let mut ok = true;
        let (mut worst_phase, mut worst_vis) = ((0.0f64, 0.0, 0.0), (0.0f64, 0.0, 0.0));
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                let dv = a.visibility.sub(&b.visibility)?;
                let dp = a.phase.sub(&b.phase)?;
                let (dv_abs, dp_abs) = (dv.value.abs(), reduce_angle(dp.value).abs());
                let (sv, sp) = (dv.stderr(), dp.stderr());
                ok &= dv_abs <= band(sv) && dp_abs <= band(sp);
                let zv = dv_abs / sv.max(f64::MIN_POSITIVE);
                if zv > worst_vis.0 {
                    worst_vis = (zv, dv_abs, combined(a.visibility.stderr(), b.visibility.stderr()));
                }
                let zp = dp_abs / sp.max(f64::MIN_POSITIVE);
                if zp > worst_phase.0 {
                    worst_phase = (zp, dp_abs, combined(a.phase.stderr(), b.phase.stderr()));
                }
            }
        }
        let table: Vec<String> = rows
            .iter()
            .map(|r| format!("(l={}, phi={:.4}: {:.5}, {:.5})", r.lambda, r.phi, r.phase.value, r.visibility.value))
            .collect();
        outcome(
            ok,
            format!(
                "gamma_tot, nu per configuration {}; largest paired |d gamma_tot| = {:.2e} ({:.2} paired se, unpaired se {:.1e}), |d nu| = {:.2e} ({:.2} paired se, unpaired se {:.1e})",
                table.join(" "),
                worst_phase.1,
                worst_phase.0,
                worst_phase.2,
                worst_vis.1,
                worst_vis.0,
                worst_vis.2
            ),
        )
    }

    fn gauge_dependence(&self) -> Result<Outcome> {
        let cmp = self.preset_comparison()?;
        let lambda = self.cfg.model.lambda;
        let (a, b) = (&cmp.stats[0].outcomes, &cmp.stats[1].outcomes);
        let dyn_of = |o: &[TrajectoryOutcome]| o.iter().map(|x| x.weight * x.dynamical).collect::<Vec<_>>();
        let (dyn_a, dyn_b) = (Linearized::mean(&dyn_of(a))?, Linearized::mean(&dyn_of(b))?);
        let d_dyn = dyn_b.sub(&dyn_a)?;
        let unpaired_dyn = combined(dyn_a.stderr(), dyn_b.stderr());
        let int_sz2 = mean_stderr(b.iter().map(|o| o.weight * o.int_sz2))?;
        let target = 0.5 * lambda * lambda * int_sz2.value;
        let resid = mean_stderr(a.iter().zip(b).map(|(oa, ob)| {
            ob.weight * ob.dynamical - oa.weight * oa.dynamical - 0.5 * lambda * lambda * ob.weight * ob.int_sz2
        }))?;
        let d_tot = Linearized::arg(&weighted_f(b)?)?.sub(&Linearized::arg(&weighted_f(a)?)?)?;
        let geo_phase = d_tot.sub(&d_dyn)?;
        let d_factor = Linearized::arg(&weighted_dyn_factors(b))?.sub(&Linearized::arg(&weighted_dyn_factors(a))?)?;
        let geo_factor = d_tot.sub(&d_factor)?;
        let (gp, gf) = (reduce_angle(geo_phase.value), reduce_angle(geo_factor.value));
        let z = |x: f64, se: f64| x.abs() / se.max(f64::MIN_POSITIVE);
        let ok = d_dyn.value > 0.0
            && d_dyn.value >= GAUGE_EFFECT_SIGMAS * d_dyn.stderr()
            && resid.value.abs() <= band(resid.stderr)
            && gp.abs() >= GAUGE_EFFECT_SIGMAS * geo_phase.stderr()
            && gf.abs() >= GAUGE_EFFECT_SIGMAS * geo_factor.stderr();
        let (sa, sb) = (summary(cmp.stats[0].phase_summary.as_ref())?, summary(cmp.stats[1].phase_summary.as_ref())?);
        outcome(
            ok,
            format!(
                "d<gamma_dyn>(pi/4 - 0) = {:.5} ({:.1} paired se, {:.1} unpaired), predicted {target:.5}, residual {:.2e} +- {:.1e}; \
                 d gamma_geo = {gp:.5} ({:.1} paired se, {:.1} unpaired) by phase average, {gf:.5} ({:.1} paired se, {:.1} unpaired) by factor average",
                d_dyn.value,
                z(d_dyn.value, d_dyn.stderr()),
                z(d_dyn.value, unpaired_dyn),
                resid.value,
                resid.stderr,
                z(gp, geo_phase.stderr()),
                z(gp, combined(sa.geo_by_phase.stderr, sb.geo_by_phase.stderr)),
                z(gf, geo_factor.stderr()),
                z(gf, combined(sa.geo_by_factor.stderr, sb.geo_by_factor.stderr)),
            ),
        )
    }

    fn closed_form_factor(&self) -> Result<Outcome> {
        let (lambda, t) = (1.0, 1.0);
        let model = DephasingSpinModel::new(self.cfg.model.mu_b, lambda, 0.0)?;
        let sde = SdeConfig::covering(t, self.cfg.dt)?;
        let sde = sde.clone().with_stride(sde.steps().max(1))?;
        let spec = self.spec(model, 0.0, sde)?;
        let cmp = compare_gauges(&spec, &Self::gauges(&[FRAC_PI_4, FRAC_PI_2])?)?;
        let mut ok = true;
        let mut notes = Vec::new();
        for (g, stats) in cmp.gauges.iter().zip(&cmp.stats) {
            let phi = g.phases()[0];
            let (s, c) = phi.sin_cos();
            let modulus = (-0.5 * lambda * lambda * s * s * t).exp();
            let arg = reduce_angle((model.mu_b + lambda * lambda * s * c) * t);
            let est = summary(stats.phase_summary.as_ref())?.dyn_factor_average;
            let got_arg = defined(est.arg, "phase-factor argument")?;
            let dm = (est.modulus.value - modulus).abs();
            let da = reduce_angle(got_arg - arg).abs();
            ok &= dm <= band(est.modulus.stderr) && da <= band(est.arg.stderr);
            notes.push(format!(
                "phi={phi:.4}: |E| = {:.5} vs {modulus:.5} ({:.2} se), arg = {got_arg:.5} vs {arg:.5} ({:.2} se)",
                est.modulus.value,
                dm / est.modulus.stderr,
                da / est.arg.stderr
            ));
        }
        outcome(ok, notes.join("; "))
    }

    fn unitary_geometric(&self) -> Result<Outcome> {
        let mu_b = self.cfg.model.mu_b;
        let t = PI / mu_b;
        let steps = ((t / self.cfg.dt).round() as usize).max(1);
        let mut worst: f64 = 0.0;
        for theta in [PI / 6.0, PI / 3.0, FRAC_PI_2] {
            let model = DephasingSpinModel::new(mu_b, 0.0, theta)?;
            let mut spec = self.spec(model, 0.0, SdeConfig::with_steps(t, steps)?.with_stride(steps)?)?;
            spec.n_traj = 1;
            let s = run_ensemble(&spec)?;
            let geo = defined(summary(s.phase_summary.as_ref())?.geo_by_phase, "geometric phase")?;
            worst = worst.max(reduce_angle(geo - PI * (1.0 - theta.cos())).abs());
        }
        outcome(
            worst <= UNITARY_GEOMETRIC_TOLERANCE,
            format!(
                "largest |gamma_geo - pi(1 - cos theta)| mod 2pi = {worst:.2e} (limit {UNITARY_GEOMETRIC_TOLERANCE:e})"
            ),
        )
    }

    fn determinism(&self) -> Result<Outcome> {
        let mut outputs = Vec::new();
        for equation in [Equation::NonlinearP, Equation::LinearQ] {
            let spec = self.spec(self.cfg.model, FRAC_PI_4, self.preset_sde(20)?)?.with_equation(equation);
            let runs = WORKER_COUNTS
                .iter()
                .map(|&n| with_workers(n, || run_ensemble(&spec)).and_then(|r| r).map(|s| format!("{s:?}")))
                .collect::<Result<Vec<_>>>()?;
            outputs.push(runs.windows(2).all(|w| w[0] == w[1]));
        }
        outcome(
            outputs.iter().all(|&b| b),
            format!(
                "nonlinear identical: {}, linear identical: {} across {WORKER_COUNTS:?} workers",
                outputs[0], outputs[1]
            ),
        )
    }
}

/// Largest ray distance between the nonlinear solution driven by `w` and
/// the normalized linear solution driven by the Girsanov shift of `w`.
fn girsanov_deviation(
    model: &LindbladModel,
    gauge: &UnravellingGauge,
    psi0: &StateVector,
    sde: &SdeConfig,
    w: &NoisePath,
) -> Result<f64> {
    let nonlinear = simulate_nonlinear(model, gauge, psi0, sde, w)?;
    let xi = girsanov_shift(model, gauge, &nonlinear)?;
    let linear = simulate_linear(model, gauge, psi0, sde, &xi)?;
    let mut worst: f64 = 0.0;
    for (psi, phi) in nonlinear.states.iter().zip(&linear.states) {
        worst = worst.max(ray_distance(phi.to_normalized()?.amplitudes(), psi.amplitudes()));
    }
    Ok(worst)
}

fn summary(s: Option<&PhaseSummary>) -> Result<&PhaseSummary> {
    s.ok_or_else(|| Error::UnsupportedModel("no phase summary".into()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
