//! Seeded Monte Carlo ensembles of trajectories.
//!
//! Trajectory `i` always draws its noise from stream `(master_seed, i)` and
//! starts from the initial member assigned to `i` by a deterministic
//! stratification, so the result of a run is a function of the spec alone.
//! Trajectories are simulated in fixed-size blocks; every block is reduced in
//! trajectory order and the block sums are folded in block order, which
//! makes the statistics bit-identical for any number of workers.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{integrate_master, LindbladModel};
use crate::phase::{channel_energies, channel_functional, summarize, PhaseSummary, TrajectoryOutcome};
use crate::quantum::{dot, Complex, DensityMatrix, Matrix, Operator, StateVector, ZERO};
use crate::rng;
use crate::sse::{
    ray_distance, simulate_linear, simulate_nonlinear, Measure, NoisePath, Propagator, SdeConfig, TrajectoryRecord,
    UnravellingGauge,
};
use crate::tol;

const BLOCK: usize = 64;

/// A weighted mixture of pure initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialEnsemble {
    members: Vec<(StateVector, f64)>,
}

impl InitialEnsemble {
    pub fn new(members: Vec<(StateVector, f64)>) -> Result<Self> {
        let Some((first, _)) = members.first() else {
            return Err(Error::EmptyEnsemble);
        };
        let dim = first.dim();
        for (psi, p) in &members {
            if psi.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: psi.dim() });
            }
            psi.require_normalized()?;
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::param(format!("initial weight must be > 0, got {p}")));
            }
        }
        let total: f64 = members.iter().map(|m| m.1).sum();
        if (total - 1.0).abs() > tol::ENSEMBLE_WEIGHTS {
            return Err(Error::param(format!("initial weights sum to {total}, not 1")));
        }
        Ok(Self { members })
    }

    pub fn pure(psi: StateVector) -> Result<Self> {
        Self::new(vec![(psi, 1.0)])
    }

    pub fn members(&self) -> &[(StateVector, f64)] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].0.dim()
    }

    /// `Σ p_n |ψ_n><ψ_n|`
    pub fn density(&self) -> Result<DensityMatrix> {
        let d = self.dim();
        let mut m = vec![ZERO; d * d];
        for (psi, p) in &self.members {
            let a = psi.amplitudes();
            for r in 0..d {
                for c in 0..d {
                    m[r * d + c] += *p * a[r] * a[c].conj();
                }
            }
        }
        DensityMatrix::from_entries(d, m)
    }

    /// Contiguous trajectory ranges per member. Member `n` receives
    /// `floor(p_n N)` trajectories plus one of the leftovers, handed out by
    /// largest remainder (ties to the lower index).
    pub fn allocation(&self, n_traj: usize) -> Vec<Range<usize>> {
        let exact: Vec<f64> = self.members.iter().map(|m| m.1 * n_traj as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &k in order.iter().cycle().take(n_traj.saturating_sub(assigned)) {
            counts[k] += 1;
        }
        let mut start = 0;
        counts
            .into_iter()
            .map(|c| {
                let r = start..start + c;
                start += c;
                r
            })
            .collect()
    }

    fn member_index(ranges: &[Range<usize>], trajectory: usize) -> usize {
        ranges.iter().position(|r| r.contains(&trajectory)).unwrap_or(ranges.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    NonlinearP,
    LinearQ,
}

impl Equation {
    pub fn measure(self) -> Measure {
        match self {
            Equation::NonlinearP => Measure::P,
            Equation::LinearQ => Measure::Q,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub model: LindbladModel,
    pub gauge: UnravellingGauge,
    pub initial: InitialEnsemble,
    pub sde: SdeConfig,
    pub n_traj: usize,
    pub master_seed: u64,
    pub equation: Equation,
    /// Extra Hermitian observables averaged at every recorded time.
    pub observables: Vec<Operator>,
}

impl EnsembleSpec {
    pub fn new(
        model: LindbladModel,
        gauge: UnravellingGauge,
        initial: InitialEnsemble,
        sde: SdeConfig,
        n_traj: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            model,
            gauge,
            initial,
            sde,
            n_traj,
            master_seed,
            equation: Equation::NonlinearP,
            observables: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_equation(mut self, equation: Equation) -> Self {
        self.equation = equation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::param("n_traj must be >= 1"));
        }
        if self.initial.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch { expected: self.model.dim(), found: self.initial.dim() });
        }
        if self.gauge.channels() != self.model.channels() {
            return Err(Error::DimensionMismatch { expected: self.model.channels(), found: self.gauge.channels() });
        }
        for op in &self.observables {
            if op.dim() != self.model.dim() {
                return Err(Error::DimensionMismatch { expected: self.model.dim(), found: op.dim() });
            }
            if !op.is_hermitian(tol::OPERATOR) {
                return Err(Error::NotHermitian);
            }
        }
        self.sde.validate()
    }

    /// Replays trajectory `index` of this spec with its full record.
    pub fn trajectory(&self, index: usize) -> Result<TrajectoryRecord> {
        self.validate()?;
        if index >= self.n_traj {
            return Err(Error::param(format!("trajectory {index} out of range (n_traj = {})", self.n_traj)));
        }
        let ranges = self.initial.allocation(self.n_traj);
        let psi0 = &self.initial.members[InitialEnsemble::member_index(&ranges, index)].0;
        let measure = self.equation.measure();
        let noise = NoisePath::sample(
            self.master_seed,
            index as u64,
            self.model.channels(),
            self.sde.steps(),
            self.sde.dt,
            measure,
        );
        let run = match measure {
            Measure::P => simulate_nonlinear(&self.model, &self.gauge, psi0, &self.sde, &noise),
            Measure::Q => simulate_linear(&self.model, &self.gauge, psi0, &self.sde, &noise),
        };
        run.map_err(|e| Error::Trajectory { index, source: Box::new(e) })
    }
}

/// Per-time mean and standard error of a scalar.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Ensemble statistics at the recorded times. Under `Q` every average is
/// weighted by `<φ_t|φ_t>`, so all means estimate `P`-expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub mean_density: Vec<Matrix>,
    /// Standard errors of the real and imaginary parts, packed as
    /// `re + i im`.
    pub stderr_density: Vec<Matrix>,
    /// Empty unless the model is a qubit.
    pub mean_sz: Vec<f64>,
    pub stderr_sz: Vec<f64>,
    pub mean_sz2: Vec<f64>,
    pub stderr_sz2: Vec<f64>,
    pub weight: Series,
    pub observables: Vec<Series>,
    pub outcomes: Vec<TrajectoryOutcome>,
    /// Present when `H` and every `L_n` are diagonal.
    pub phase_summary: Option<PhaseSummary>,
}

#[derive(Debug, Clone)]
struct Sums {
    dim: usize,
    density: Vec<Complex>,
    density_sq: Vec<Complex>,
    sz: Vec<[f64; 4]>,
    weight: Vec<[f64; 2]>,
    obs: Vec<Vec<[f64; 2]>>,
}

impl Sums {
    fn new(dim: usize, times: usize, observables: usize, qubit: bool) -> Self {
        Self {
            dim,
            density: vec![ZERO; times * dim * dim],
            density_sq: vec![ZERO; times * dim * dim],
            sz: if qubit { vec![[0.0; 4]; times] } else { Vec::new() },
            weight: vec![[0.0; 2]; times],
            obs: vec![vec![[0.0; 2]; times]; observables],
        }
    }

    fn record(&mut self, slot: usize, psi: &[Complex], w: f64, observables: &[Operator], scratch: &mut [Complex]) {
        let d = self.dim;
        let base = slot * d * d;
        for r in 0..d {
            for c in 0..d {
                let x = w * psi[r] * psi[c].conj();
                self.density[base + r * d + c] += x;
                self.density_sq[base + r * d + c] += Complex::new(x.re * x.re, x.im * x.im);
            }
        }
        if !self.sz.is_empty() {
            let z = psi[0].norm_sqr() - psi[1].norm_sqr();
            let (a, b) = (w * z, w * z * z);
            let s = &mut self.sz[slot];
            s[0] += a;
            s[1] += a * a;
            s[2] += b;
            s[3] += b * b;
        }
        self.weight[slot][0] += w;
        self.weight[slot][1] += w * w;
        for (acc, op) in self.obs.iter_mut().zip(observables) {
            op.apply_into(psi, scratch);
            let x = w * dot(psi, scratch).re;
            acc[slot][0] += x;
            acc[slot][1] += x * x;
        }
    }

    fn absorb(&mut self, other: &Self) {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        add(&mut self.density, &other.density);
        add(&mut self.density_sq, &other.density_sq);
        for (a, b) in self.sz.iter_mut().zip(&other.sz) {
            add(a, b);
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            add(a, b);
        }
        for (oa, ob) in self.obs.iter_mut().zip(&other.obs) {
            for (a, b) in oa.iter_mut().zip(ob) {
                add(a, b);
            }
        }
    }
}

fn mean_se(n: usize, sum: f64, sum_sq: f64) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let se = if n > 1 { ((sum_sq - nf * mean * mean).max(0.0) / ((nf - 1.0) * nf)).sqrt() } else { 0.0 };
    (mean, se)
}

fn series(n: usize, acc: &[[f64; 2]]) -> Series {
    let (mean, stderr) = acc.iter().map(|a| mean_se(n, a[0], a[1])).unzip();
    Series { mean, stderr }
}

struct BlockResult {
    sums: Vec<Sums>,
    outcomes: Vec<Vec<TrajectoryOutcome>>,
    distances: Vec<Vec<f64>>,
}

struct Engine<'a> {
    spec: &'a EnsembleSpec,
    models: Vec<LindbladModel>,
    gauges: &'a [UnravellingGauge],
    ranges: Vec<Range<usize>>,
    recorded: Vec<usize>,
    energies: Option<Vec<f64>>,
    track_distance: bool,
}

impl<'a> Engine<'a> {
    fn new(spec: &'a EnsembleSpec, gauges: &'a [UnravellingGauge], track_distance: bool) -> Result<Self> {
        spec.validate()?;
        for g in gauges {
            if g.channels() != spec.model.channels() {
                return Err(Error::DimensionMismatch { expected: spec.model.channels(), found: g.channels() });
            }
        }
        Ok(Self {
            spec,
            models: vec![spec.model.clone(); gauges.len()],
            gauges,
            ranges: spec.initial.allocation(spec.n_traj),
            recorded: spec.sde.recorded_steps(),
            energies: channel_energies(&spec.model),
            track_distance,
        })
    }

    fn empty_sums(&self) -> Sums {
        Sums::new(self.spec.model.dim(), self.recorded.len(), self.spec.observables.len(), self.spec.model.dim() == 2)
    }

    fn run_block(&self, block: usize) -> Result<BlockResult> {
        let start = block * BLOCK;
        let end = (start + BLOCK).min(self.spec.n_traj);
        let g = self.gauges.len();
        let mut out = BlockResult {
            sums: (0..g).map(|_| self.empty_sums()).collect(),
            outcomes: vec![Vec::with_capacity(end - start); g],
            distances: vec![Vec::with_capacity(end - start); g],
        };
        for i in start..end {
            self.run_trajectory(i, &mut out).map_err(|e| Error::Trajectory { index: i, source: Box::new(e) })?;
        }
        Ok(out)
    }

    fn run_trajectory(&self, index: usize, out: &mut BlockResult) -> Result<()> {
        let spec = self.spec;
        let psi0 = &spec.initial.members[InitialEnsemble::member_index(&self.ranges, index)].0;
        let measure = spec.equation.measure();
        let renorm = spec.sde.renormalize_each_step;
        let mut props = self
            .models
            .iter()
            .zip(self.gauges)
            .map(|(m, g)| Propagator::new(m, g, psi0, measure, renorm))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = rng::trajectory_rng(spec.master_seed, index as u64);
        let mut inc = vec![0.0; spec.model.channels()];
        let mut scratch = vec![ZERO; spec.model.dim()];
        let mut worst = vec![0.0f64; props.len()];
        let dt = spec.sde.dt;
        let mut next = 0;
        for k in 0..=spec.sde.steps() {
            if k > 0 {
                rng::fill_increments(&mut rng, dt, &mut inc);
                for p in &mut props {
                    p.step(&inc, dt)?;
                }
                if self.track_distance {
                    for j in 1..props.len() {
                        worst[j] = worst[j].max(ray_distance(props[j].normalized(), props[0].normalized()));
                    }
                }
            }
            if next < self.recorded.len() && self.recorded[next] == k {
                for (p, sums) in props.iter().zip(&mut out.sums) {
                    sums.record(next, p.normalized(), p.weight, &spec.observables, &mut scratch);
                }
                next += 1;
            }
        }
        for (j, p) in props.iter().enumerate() {
            let f = match &self.energies {
                Some(h) => Some(channel_functional(p.normalized(), h, spec.sde.t_final)?),
                None => None,
            };
            out.outcomes[j].push(TrajectoryOutcome {
                trajectory_id: index,
                weight: p.weight,
                f,
                dynamical: p.dyn_phase,
                int_sz: p.int_sz,
                int_sz2: p.int_sz2,
            });
            out.distances[j].push(worst[j]);
        }
        Ok(())
    }

    fn run(&self) -> Result<(Vec<EnsembleStats>, Vec<Vec<f64>>)> {
        let g = self.gauges.len();
        let n_blocks = self.spec.n_traj.div_ceil(BLOCK);
        let mut totals: Vec<Sums> = (0..g).map(|_| self.empty_sums()).collect();
        let mut outcomes: Vec<Vec<TrajectoryOutcome>> = vec![Vec::with_capacity(self.spec.n_traj); g];
        let mut distances: Vec<Vec<f64>> = vec![Vec::with_capacity(self.spec.n_traj); g];
        let wave = 4 * workers();
        let mut first = 0;
        while first < n_blocks {
            let last = (first + wave).min(n_blocks);
            for block in self.run_blocks(first..last)? {
                for j in 0..g {
                    totals[j].absorb(&block.sums[j]);
                    outcomes[j].extend_from_slice(&block.outcomes[j]);
                    distances[j].extend_from_slice(&block.distances[j]);
                }
            }
            first = last;
        }
        let times: Vec<f64> = self.recorded.iter().map(|&k| k as f64 * self.spec.sde.dt).collect();
        let stats = totals
            .into_iter()
            .zip(outcomes)
            .zip(self.gauges)
            .map(|((sums, outs), gauge)| self.finish(&times, sums, outs, gauge))
            .collect::<Result<Vec<_>>>()?;
        Ok((stats, distances))
    }

    #[cfg(feature = "parallel")]
    fn run_blocks(&self, blocks: Range<usize>) -> Result<Vec<BlockResult>> {
        use rayon::prelude::*;
        blocks.into_par_iter().map(|b| self.run_block(b)).collect()
    }

    #[cfg(not(feature = "parallel"))]
    fn run_blocks(&self, blocks: Range<usize>) -> Result<Vec<BlockResult>> {
        blocks.map(|b| self.run_block(b)).collect()
    }

    fn finish(
        &self,
        times: &[f64],
        sums: Sums,
        outcomes: Vec<TrajectoryOutcome>,
        gauge: &UnravellingGauge,
    ) -> Result<EnsembleStats> {
        let n = self.spec.n_traj;
        let d = sums.dim;
        let mut mean_density = Vec::with_capacity(times.len());
        let mut stderr_density = Vec::with_capacity(times.len());
        for slot in 0..times.len() {
            let range = slot * d * d..(slot + 1) * d * d;
            let (mut m, mut s) = (Vec::with_capacity(d * d), Vec::with_capacity(d * d));
            for (x, x2) in sums.density[range.clone()].iter().zip(&sums.density_sq[range]) {
                let (mr, sr) = mean_se(n, x.re, x2.re);
                let (mi, si) = mean_se(n, x.im, x2.im);
                m.push(Complex::new(mr, mi));
                s.push(Complex::new(sr, si));
            }
            mean_density.push(Matrix::new(d, m)?);
            stderr_density.push(Matrix::new(d, s)?);
        }
        let sz_pairs: Vec<[f64; 2]> = sums.sz.iter().map(|s| [s[0], s[1]]).collect();
        let sz2_pairs: Vec<[f64; 2]> = sums.sz.iter().map(|s| [s[2], s[3]]).collect();
        let (sz, sz2) = (series(n, &sz_pairs), series(n, &sz2_pairs));
        let phase_summary = match self.energies {
            Some(_) => Some(summarize(gauge, &outcomes)?),
            None => None,
        };
        Ok(EnsembleStats {
            n_traj: n,
            times: times.to_vec(),
            mean_density,
            stderr_density,
            mean_sz: sz.mean,
            stderr_sz: sz.stderr,
            mean_sz2: sz2.mean,
            stderr_sz2: sz2.stderr,
            weight: series(n, &sums.weight),
            observables: sums.obs.iter().map(|o| series(n, o)).collect(),
            outcomes,
            phase_summary,
        })
    }
}

#[cfg(feature = "parallel")]
fn workers() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn workers() -> usize {
    1
}

/// Runs `f` with `n` worker threads (or inline without the `parallel`
/// feature). Results never depend on `n`.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_n: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(f())
}

pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleStats> {
    let gauges = [spec.gauge.clone()];
    let (mut stats, _) = Engine::new(spec, &gauges, false)?.run()?;
    Ok(stats.pop().expect("one gauge"))
}

/// Per-time average of `<ψ|op|ψ>`.
pub fn observable_average(spec: &EnsembleSpec, op: &Operator) -> Result<Series> {
    if op.dim() != spec.model.dim() {
        return Err(Error::DimensionMismatch { expected: spec.model.dim(), found: op.dim() });
    }
    let mut spec = spec.clone();
    spec.observables = vec![op.clone()];
    let mut stats = run_ensemble(&spec)?;
    Ok(stats.observables.pop().expect("one observable"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeComparison {
    pub gauges: Vec<UnravellingGauge>,
    pub stats: Vec<EnsembleStats>,
    /// `max_distance[k][i]`: largest ray distance over the time grid between
    /// trajectory `i` under gauge `k` and under gauge 0.
    pub max_distance: Vec<Vec<f64>>,
}

/// Runs every gauge on the same noise, trajectory by trajectory.
pub fn compare_gauges(spec: &EnsembleSpec, gauges: &[UnravellingGauge]) -> Result<GaugeComparison> {
    if gauges.len() < 2 {
        return Err(Error::param("compare_gauges needs at least two gauges"));
    }
    let (stats, max_distance) = Engine::new(spec, gauges, true)?.run()?;
    Ok(GaugeComparison { gauges: gauges.to_vec(), stats, max_distance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    /// Largest entrywise deviation of the final mean density from the
    /// master-equation solution.
    pub deviation: f64,
    /// Largest entrywise standard error of that mean.
    pub stderr: f64,
}

/// Final-time deviation of the ensemble density from a fine RK4 solution,
/// for each `dt` (strictly decreasing).
pub fn convergence_report(spec: &EnsembleSpec, dt_list: &[f64]) -> Result<Vec<ConvergenceRow>> {
    if dt_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::param("dt_list must be strictly decreasing"));
    }
    spec.validate()?;
    let t = spec.sde.t_final;
    let reference = integrate_master(&spec.model, &spec.initial.density()?, t, 1e-3_f64.min(t.max(1e-3) / 100.0))?;
    let oracle = reference.states.last().expect("non-empty path").matrix().clone();
    dt_list
        .iter()
        .map(|&dt| {
            let mut s = spec.clone();
            s.sde = SdeConfig::new(dt, t)?;
            s.sde.renormalize_each_step = spec.sde.renormalize_each_step;
            s.sde.record_stride = s.sde.steps().max(1);
            let stats = run_ensemble(&s)?;
            let last = stats.mean_density.last().expect("recorded final time");
            let se = stats.stderr_density.last().expect("recorded final time");
            let stderr = se.entries().iter().map(|c| c.re.max(c.im)).fold(0.0, f64::max);
            Ok(ConvergenceRow { dt, deviation: last.max_abs_diff(&oracle)?, stderr })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{dephasing_exact, DephasingSpinModel};
    use crate::quantum::{pauli, pure_density};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    #[allow(clippy::too_many_arguments)]
    fn spin_spec(mu_b: f64, lambda: f64, theta: f64, phi: f64, t: f64, dt: f64, n: usize, seed: u64) -> EnsembleSpec {
        let m = DephasingSpinModel::new(mu_b, lambda, theta).unwrap();
        EnsembleSpec::new(
            m.lindblad(),
            UnravellingGauge::uniform(1, phi).unwrap(),
            InitialEnsemble::pure(m.initial_state()).unwrap(),
            SdeConfig::new(dt, t).unwrap(),
            n,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn allocation_is_stratified() {
        let e = InitialEnsemble::new(vec![(pauli::plus(), 0.5), (pauli::minus(), 0.3), (pauli::polar_state(1.0), 0.2)])
            .unwrap();
        let ranges = e.allocation(7);
        let counts: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
        assert_eq!(counts.iter().sum::<usize>(), 7);
        for (c, (_, p)) in counts.iter().zip(e.members()) {
            let x = p * 7.0;
            assert!(*c == x.floor() as usize || *c == x.ceil() as usize);
        }
        assert_eq!(ranges[0].start, 0);
        assert_eq!(ranges[2].end, 7);
    }

    #[test]
    fn initial_ensemble_rejects_bad_weights() {
        assert!(InitialEnsemble::new(vec![(pauli::plus(), 0.5), (pauli::minus(), 0.4)]).is_err());
        assert!(InitialEnsemble::new(vec![(pauli::plus(), 1.5), (pauli::minus(), -0.5)]).is_err());
        assert_eq!(InitialEnsemble::new(vec![]), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn single_unitary_trajectory_is_the_projector_path() {
        let spec = spin_spec(1.0, 0.0, FRAC_PI_3, 0.3, 1.0, 1e-3, 1, 5);
        let stats = run_ensemble(&spec).unwrap();
        let traj = spec.trajectory(0).unwrap();
        for (m, psi) in stats.mean_density.iter().zip(&traj.states) {
            let p = pure_density(psi).unwrap();
            assert!(m.max_abs_diff(p.matrix()).unwrap() < 1e-15);
        }
        assert!(stats.stderr_sz.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn engine_matches_replayed_trajectories() {
        for eq in [Equation::NonlinearP, Equation::LinearQ] {
            let spec = spin_spec(1.0, 0.7, 1.0, 0.4, 0.5, 1e-2, 3, 11).with_equation(eq);
            let stats = run_ensemble(&spec).unwrap();
            for (i, out) in stats.outcomes.iter().enumerate() {
                let rec = spec.trajectory(i).unwrap();
                assert_eq!(out.trajectory_id, i);
                assert_eq!(out.dynamical, *rec.dyn_phase_path.last().unwrap());
                assert_eq!(out.weight, *rec.weight_path.last().unwrap());
            }
        }
    }

    #[test]
    fn mixed_fixed_rays_stay_maximally_mixed() {
        let m = DephasingSpinModel::new(1.0, 0.8, 0.0).unwrap();
        let init = InitialEnsemble::new(vec![(pauli::plus(), 0.5), (pauli::minus(), 0.5)]).unwrap();
        let spec = EnsembleSpec::new(
            m.lindblad(),
            UnravellingGauge::uniform(1, 0.6).unwrap(),
            init,
            SdeConfig::new(1e-2, 1.0).unwrap(),
            10,
            3,
        )
        .unwrap();
        let stats = run_ensemble(&spec).unwrap();
        let half = DensityMatrix::maximally_mixed(2).unwrap();
        for m in &stats.mean_density {
            assert!(m.max_abs_diff(half.matrix()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn identity_observable_is_exactly_one() {
        let spec = spin_spec(1.0, 0.5, FRAC_PI_3, 0.0, 0.5, 1e-2, 50, 1);
        let s = observable_average(&spec, &Matrix::identity(2).unwrap()).unwrap();
        assert!(s.mean.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sigma_x_tracks_the_decaying_coherence() {
        let (mu_b, lambda) = (1.0, 0.5);
        let spec = spin_spec(mu_b, lambda, FRAC_PI_2, 1.1, 1.0, 1e-3, 2000, 9).with_stride_for_test(50);
        let s = observable_average(&spec, &pauli::sigma_x()).unwrap();
        for ((t, m), se) in spec.sde.recorded_times().iter().zip(&s.mean).zip(&s.stderr) {
            let target = (-2.0 * lambda * lambda * t).exp() * (2.0 * mu_b * t).cos();
            assert!((m - target).abs() <= 4.0 * se + 5e-3, "t={t}: {m} vs {target} ± {se}");
        }
    }

    impl EnsembleSpec {
        fn with_stride_for_test(mut self, stride: usize) -> Self {
            self.sde.record_stride = stride;
            self
        }
    }

    #[test]
    fn unravellings_reproduce_the_master_equation() {
        for eq in [Equation::NonlinearP, Equation::LinearQ] {
            let spec = spin_spec(1.0, 0.5, FRAC_PI_3, FRAC_PI_4, 1.0, 1e-3, 2000, 21)
                .with_equation(eq)
                .with_stride_for_test(100);
            let model = DephasingSpinModel::new(1.0, 0.5, FRAC_PI_3).unwrap();
            let stats = run_ensemble(&spec).unwrap();
            for ((t, m), se) in stats.times.iter().zip(&stats.mean_density).zip(&stats.stderr_density) {
                let exact = dephasing_exact(&model, *t);
                for (k, (x, e)) in m.entries().iter().zip(exact.matrix().entries()).enumerate() {
                    let s = se.entries()[k];
                    assert!((x.re - e.re).abs() <= 4.0 * s.re + 2e-3, "{eq:?} t={t} {x} vs {e}");
                    assert!((x.im - e.im).abs() <= 4.0 * s.im + 2e-3, "{eq:?} t={t} {x} vs {e}");
                }
            }
        }
    }

    #[test]
    fn equal_gauges_are_bitwise_identical() {
        let spec = spin_spec(1.0, 0.7, 1.0, 0.0, 0.5, 1e-2, 40, 2);
        let g = UnravellingGauge::uniform(1, 0.0).unwrap();
        let cmp = compare_gauges(&spec, &[g.clone(), g]).unwrap();
        assert_eq!(cmp.stats[0], cmp.stats[1]);
        assert!(cmp.max_distance[1].iter().all(|&d| d == 0.0));
        assert_eq!(cmp.stats[0], run_ensemble(&spec).unwrap());
    }

    #[test]
    fn distinct_gauges_diverge_pathwise() {
        let spec = spin_spec(1.0, 1.0, FRAC_PI_3, 0.0, 2.0, 1e-3, 40, 4).with_stride_for_test(2000);
        let gauges = [0.0, FRAC_PI_2].map(|p| UnravellingGauge::uniform(1, p).unwrap());
        let cmp = compare_gauges(&spec, &gauges).unwrap();
        let mut d = cmp.max_distance[1].clone();
        d.sort_by(f64::total_cmp);
        assert!(d[d.len() / 2] > 0.1, "median {}", d[d.len() / 2]);
        assert!(compare_gauges(&spec, &gauges[..1]).is_err());
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let spec = spin_spec(1.0, 0.5, FRAC_PI_3, 0.3, 0.2, 1e-2, 300, 77).with_equation(Equation::LinearQ);
        let one = with_workers(1, || run_ensemble(&spec)).unwrap().unwrap();
        let three = with_workers(3, || run_ensemble(&spec)).unwrap().unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn phase_summary_present_for_diagonal_models() {
        let spec = spin_spec(1.0, 0.0, 0.0, 0.0, 1.0, 1e-2, 2, 0);
        let s = run_ensemble(&spec).unwrap().phase_summary.unwrap();
        assert!((s.total.value.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.visibility.value - 1.0).abs() < 1e-12);

        let h = pauli::sigma_x().scale(Complex::new(-1.0, 0.0));
        let model = LindbladModel::new(h, vec![pauli::sigma_z()], 0.3).unwrap();
        let spec = EnsembleSpec::new(
            model,
            UnravellingGauge::uniform(1, 0.0).unwrap(),
            InitialEnsemble::pure(pauli::plus()).unwrap(),
            SdeConfig::new(1e-2, 0.1).unwrap(),
            2,
            0,
        )
        .unwrap();
        assert!(run_ensemble(&spec).unwrap().phase_summary.is_none());
    }

    #[test]
    fn convergence_report_limits() {
        let spec = spin_spec(1.0, 0.0, FRAC_PI_3, 0.0, 0.0, 1e-2, 1, 0);
        let rows = convergence_report(&spec, &[0.1, 0.05]).unwrap();
        assert!(rows.iter().all(|r| r.deviation < 1e-15));

        let spec = spin_spec(1.0, 0.0, FRAC_PI_3, 0.0, 1.0, 1e-2, 1, 0);
        let rows = convergence_report(&spec, &[0.02, 0.01, 0.005]).unwrap();
        for w in rows.windows(2) {
            let ratio = w[0].deviation / w[1].deviation;
            assert!(ratio >= 1.5, "{ratio}");
            assert!(w[1].deviation < 1e-4);
        }
        assert!(convergence_report(&spec, &[0.01, 0.02]).is_err());
    }

    #[test]
    fn errors_carry_the_trajectory_index() {
        let mut spec = spin_spec(1.0, 0.5, 1.0, 0.0, 1.0, 0.1, 3, 0);
        spec.n_traj = 0;
        assert!(run_ensemble(&spec).is_err());
        let e = Error::Trajectory { index: 2, source: Box::new(Error::EmptyEnsemble) };
        assert!(e.to_string().starts_with("trajectory 2"));
    }
}
