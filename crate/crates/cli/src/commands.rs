use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use geophase::ensemble::{compare_gauges, run_ensemble, EnsembleSpec, EnsembleStats, InitialEnsemble};
use geophase::lindblad::{dephasing_exact, integrate_master};
use geophase::phase::{average_intensity, fit_fringe};
use geophase::quantum::bloch;
use geophase::sse::{reduce_angle, UnravellingGauge};
use geophase::verify::{Status, Verifier, VerifyConfig};

use crate::config::{ExperimentConfig, Format};
use crate::table::ResultTable;

/// Largest tolerated gap between fitted fringe parameters and the direct
/// estimates, on top of the fit's own rms residual.
pub const FIT_CONSISTENCY: f64 = 1e-6;

pub struct Output {
    dir: PathBuf,
    csv: bool,
    json: bool,
}

impl Output {
    /// Creates the output directory and echoes the resolved config into it.
    pub fn prepare(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        let dir = cfg.output.directory.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let echo = dir.join("config.toml");
        std::fs::write(&echo, cfg.to_toml()?).with_context(|| format!("cannot write {}", echo.display()))?;
        Ok(Self { dir, csv: cfg.wants(Format::Csv), json: cfg.wants(Format::Json) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn emit(&self, name: &str, table: &ResultTable) -> anyhow::Result<()> {
        if self.csv {
            table.write_csv(&self.dir.join(format!("{name}.csv")))?;
        }
        if self.json {
            table.write_json(&self.dir.join(format!("{name}.json")))?;
        }
        Ok(())
    }
}

fn header(table: &mut ResultTable, cfg: &ExperimentConfig, what: &str) {
    table
        .comment(what)
        .comment(format!(
            "model: mu_b = {}, lambda = {}, theta = {} rad; dt = {}, t_final = {}",
            cfg.model.mu_b, cfg.model.lambda, cfg.model.theta, cfg.sde.dt, cfg.sde.t_final
        ))
        .comment("angles and phases in radians, times in units of 1/mu_b's time scale");
}

fn gauges(cfg: &ExperimentConfig) -> anyhow::Result<Vec<UnravellingGauge>> {
    Ok(cfg.model.phi.iter().map(|&p| UnravellingGauge::uniform(1, p)).collect::<Result<_, _>>()?)
}

fn spec(cfg: &ExperimentConfig, lambda: f64, record_final_only: bool) -> anyhow::Result<EnsembleSpec> {
    let model = cfg.spin_model(lambda)?;
    let mut sde = cfg.sde_config()?;
    if record_final_only {
        sde = sde.clone().with_stride(sde.steps().max(1))?;
    }
    Ok(EnsembleSpec::new(
        model.lindblad(),
        UnravellingGauge::uniform(1, cfg.model.phi[0])?,
        InitialEnsemble::pure(model.initial_state())?,
        sde,
        cfg.ensemble.n_traj,
        cfg.ensemble.master_seed,
    )?
    .with_equation(cfg.ensemble.equation))
}

/// All configured gauges on common random numbers.
fn per_gauge(cfg: &ExperimentConfig, lambda: f64, record_final_only: bool) -> anyhow::Result<Vec<EnsembleStats>> {
    let spec = spec(cfg, lambda, record_final_only)?;
    let gauges = gauges(cfg)?;
    Ok(if gauges.len() == 1 { vec![run_ensemble(&spec)?] } else { compare_gauges(&spec, &gauges)?.stats })
}

const RHO: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

pub fn master(cfg: &ExperimentConfig, out: &Output) -> anyhow::Result<bool> {
    let model = cfg.spin_model(cfg.model.lambda)?;
    let path = integrate_master(&model.lindblad(), &model.initial_density(), cfg.sde.t_final, cfg.sde.dt)?;
    let mut columns = vec!["t".to_string()];
    for prefix in ["rho", "exact"] {
        for (r, c) in RHO {
            columns.push(format!("{prefix}{r}{c}_re"));
            columns.push(format!("{prefix}{r}{c}_im"));
        }
    }
    columns.push("abs_dev".into());
    let mut table = ResultTable::new(columns);
    header(&mut table, cfg, "RK4 master-equation path next to the closed-form dephasing solution");
    table.comment("basis: index 0 = sigma_z eigenstate |+>, index 1 = |->; abs_dev = max entrywise |rho - exact|");
    let last = path.times.len() - 1;
    for (k, (t, rho)) in path.times.iter().zip(&path.states).enumerate() {
        if k % cfg.sde.record_stride != 0 && k != last {
            continue;
        }
        let exact = dephasing_exact(&model, *t);
        let mut row = vec![*t];
        for m in [rho, &exact] {
            for (r, c) in RHO {
                row.push(m.get(r, c).re);
                row.push(m.get(r, c).im);
            }
        }
        row.push(rho.max_abs_diff(&exact)?);
        table.push(row);
    }
    out.emit("master", &table)?;
    let worst = table.column("abs_dev").unwrap_or_default().into_iter().fold(0.0, f64::max);
    println!("master: {} rows, max |rho - exact| = {worst:.3e}", table.rows.len());
    Ok(true)
}

pub fn trajectories(cfg: &ExperimentConfig, out: &Output) -> anyhow::Result<bool> {
    let stats = per_gauge(cfg, cfg.model.lambda, false)?;
    for (k, (phi, s)) in cfg.model.phi.iter().zip(&stats).enumerate() {
        let mut table =
            ResultTable::new(["t", "mean_sz", "stderr_sz", "mean_sz2", "stderr_sz2", "mean_weight", "stderr_weight"]);
        header(&mut table, cfg, &format!("sigma_z moments over {} trajectories, gauge phi = {phi}", s.n_traj));
        table.comment("mean_sz2 is the ensemble mean of <sigma_z>^2; weight is <phi|phi> (identically 1 for the nonlinear equation)");
        for (i, t) in s.times.iter().enumerate() {
            table.push(vec![
                *t,
                s.mean_sz[i],
                s.stderr_sz[i],
                s.mean_sz2[i],
                s.stderr_sz2[i],
                s.weight.mean[i],
                s.weight.stderr[i],
            ]);
        }
        out.emit(&format!("trajectories_phi{k}"), &table)?;
        println!(
            "trajectories phi={phi:.6}: E<sz>(T) = {:.6} +- {:.1e}, E<sz>^2(T) = {:.6} +- {:.1e}",
            s.mean_sz.last().unwrap_or(&f64::NAN),
            s.stderr_sz.last().unwrap_or(&f64::NAN),
            s.mean_sz2.last().unwrap_or(&f64::NAN),
            s.stderr_sz2.last().unwrap_or(&f64::NAN)
        );
    }
    let dump = cfg.trajectories.dump_paths.min(cfg.ensemble.n_traj);
    if dump > 0 {
        let base = spec(cfg, cfg.model.lambda, false)?;
        for (k, (phi, gauge)) in cfg.model.phi.iter().zip(gauges(cfg)?).enumerate() {
            let mut table = ResultTable::new(["trajectory", "t", "x", "y", "z", "dyn_phase", "weight"]);
            header(&mut table, cfg, &format!("individual trajectories on the Bloch sphere, gauge phi = {phi}"));
            let spec = EnsembleSpec { gauge, ..base.clone() };
            for i in 0..dump {
                let rec = spec.trajectory(i)?;
                let last = rec.times.len() - 1;
                for (j, t) in rec.times.iter().enumerate() {
                    if j % cfg.trajectories.dump_stride != 0 && j != last {
                        continue;
                    }
                    let b = bloch(&rec.states[j].to_normalized()?)?;
                    table.push(vec![i as f64, *t, b.x, b.y, b.z, rec.dyn_phase_path[j], rec.weight_path[j]]);
                }
            }
            out.emit(&format!("paths_phi{k}"), &table)?;
        }
    }
    Ok(true)
}

pub fn phase_scan(cfg: &ExperimentConfig, out: &Output) -> anyhow::Result<bool> {
    if cfg.model.phi.len() < 2 {
        bail!("phase-scan needs at least two gauge angles in model.phi");
    }
    let stats = per_gauge(cfg, cfg.model.lambda, true)?;
    let (mu_b, lambda, theta, t) = (cfg.model.mu_b, cfg.model.lambda, cfg.model.theta, cfg.sde.t_final);
    let mut table = ResultTable::new([
        "phi",
        "total_phase",
        "total_phase_se",
        "visibility",
        "visibility_se",
        "dyn_phase_avg",
        "dyn_phase_avg_se",
        "dyn_factor_arg",
        "dyn_factor_arg_se",
        "dyn_factor_modulus",
        "dyn_factor_modulus_se",
        "geo_phase_avg",
        "geo_phase_avg_se",
        "geo_factor_avg",
        "geo_factor_avg_se",
        "int_sz2",
        "int_sz2_se",
        "dyn_phase_target",
    ]);
    header(
        &mut table,
        cfg,
        &format!("phases at t_final over {} trajectories per gauge (common random numbers)", cfg.ensemble.n_traj),
    );
    table
        .comment("geo_phase_avg = total_phase - dyn_phase_avg; geo_factor_avg = total_phase - arg E[exp(i dyn)]; both reduced to (-pi, pi]")
        .comment("int_sz2 = E[integral of <sigma_z>^2 dt]; dyn_phase_target = mu_b t cos(theta) + lambda^2 sin(phi) cos(phi) int_sz2")
        .comment("undefined phases (vanishing modulus) are NaN");
    for (phi, s) in cfg.model.phi.iter().zip(&stats) {
        let p = s.phase_summary.as_ref().context("no phase summary")?;
        let (sn, cs) = phi.sin_cos();
        table.push(vec![
            *phi,
            p.total.value.unwrap_or(f64::NAN),
            p.total.stderr,
            p.visibility.value,
            p.visibility.stderr,
            p.dyn_phase_average.value,
            p.dyn_phase_average.stderr,
            p.dyn_factor_average.arg.value.unwrap_or(f64::NAN),
            p.dyn_factor_average.arg.stderr,
            p.dyn_factor_average.modulus.value,
            p.dyn_factor_average.modulus.stderr,
            p.geo_by_phase.value.unwrap_or(f64::NAN),
            p.geo_by_phase.stderr,
            p.geo_by_factor.value.unwrap_or(f64::NAN),
            p.geo_by_factor.stderr,
            p.int_sz2.value,
            p.int_sz2.stderr,
            mu_b * t * theta.cos() + lambda * lambda * sn * cs * p.int_sz2.value,
        ]);
        println!(
            "phase-scan phi={phi:.6}: total {:.6} +- {:.1e}, dyn {:.6} +- {:.1e}, geo {:.6} (phase avg) / {:.6} (factor avg)",
            p.total.value.unwrap_or(f64::NAN),
            p.total.stderr,
            p.dyn_phase_average.value,
            p.dyn_phase_average.stderr,
            p.geo_by_phase.value.unwrap_or(f64::NAN),
            p.geo_by_factor.value.unwrap_or(f64::NAN)
        );
    }
    out.emit("phase_scan", &table)?;
    Ok(true)
}

pub fn interference(cfg: &ExperimentConfig, out: &Output) -> anyhow::Result<bool> {
    let chi = &cfg.interference.chi;
    if chi.is_empty() {
        bail!("interference.chi is empty");
    }
    let mut curve = ResultTable::new(["lambda", "phi", "chi", "intensity", "intensity_se"]);
    header(&mut curve, cfg, "ensemble-averaged output intensity I(chi) = 1/2 + (nu/2) cos(chi + gamma_tot)");
    let mut fits = ResultTable::new([
        "lambda",
        "phi",
        "fit_visibility",
        "fit_phase",
        "fit_rms",
        "visibility",
        "visibility_se",
        "total_phase",
        "total_phase_se",
    ]);
    header(&mut fits, cfg, "least-squares fringe fit next to the direct estimates |E[f]| and arg E[f]");
    let mut consistent = true;
    for &lambda in &cfg.interference.lambdas {
        let stats = per_gauge(cfg, lambda, true)?;
        let model = cfg.spin_model(lambda)?;
        for (phi, s) in cfg.model.phi.iter().zip(&stats) {
            let intensity = average_intensity(&s.outcomes, model, cfg.sde.t_final, chi)?;
            for (c, e) in chi.iter().zip(&intensity) {
                curve.push(vec![lambda, *phi, *c, e.value, e.stderr]);
            }
            let values: Vec<f64> = intensity.iter().map(|e| e.value).collect();
            let p = s.phase_summary.as_ref().context("no phase summary")?;
            let (fit_phase, fit_vis, fit_rms) = match fit_fringe(chi, &values) {
                Ok(fit) => (fit.phase.unwrap_or(f64::NAN), fit.visibility, fit.residual),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            let phase = p.total.value.unwrap_or(f64::NAN);
            let slack = FIT_CONSISTENCY + fit_rms;
            let vis_gap = (fit_vis - p.visibility.value).abs();
            let phase_gap =
                if phase.is_nan() && fit_phase.is_nan() { 0.0 } else { reduce_angle(fit_phase - phase).abs() };
            if !(vis_gap <= slack && phase_gap <= slack) {
                consistent = false;
                eprintln!(
                    "interference lambda={lambda} phi={phi}: fit (nu {fit_vis:.9}, gamma {fit_phase:.9}) disagrees with direct (nu {:.9}, gamma {phase:.9})",
                    p.visibility.value
                );
            }
            fits.push(vec![
                lambda,
                *phi,
                fit_vis,
                fit_phase,
                fit_rms,
                p.visibility.value,
                p.visibility.stderr,
                phase,
                p.total.stderr,
            ]);
            println!(
                "interference lambda={lambda} phi={phi:.6}: nu = {fit_vis:.9}, gamma_tot = {fit_phase:.9} (direct {:.9} +- {:.1e}, {phase:.9} +- {:.1e})",
                p.visibility.value, p.visibility.stderr, p.total.stderr
            );
        }
    }
    out.emit("interference", &curve)?;
    out.emit("interference_fit", &fits)?;
    Ok(consistent)
}

fn status_code(s: Status) -> f64 {
    match s {
        Status::Pass => 0.0,
        Status::Fail => 1.0,
        Status::Inconclusive => 2.0,
        Status::Skipped => 3.0,
    }
}

pub fn verify(cfg: &ExperimentConfig, out: &Output) -> anyhow::Result<bool> {
    let verifier = Verifier::new(VerifyConfig {
        model: cfg.spin_model(cfg.model.lambda)?,
        dt: cfg.sde.dt,
        t_final: cfg.sde.t_final,
        n_traj: cfg.ensemble.n_traj,
        seed: cfg.ensemble.master_seed,
    })?;
    let mut results = Vec::new();
    for &id in &cfg.verify.criteria {
        let r = verifier.criterion(id);
        println!("{r}");
        results.push(r);
    }
    let report = geophase::verify::VerifyReport { config: *verifier.config(), criteria: results };
    let succeeded = report.succeeded();
    let mut table = ResultTable::new(["criterion", "status"]);
    table.comment("acceptance criteria; status: 0 = pass, 1 = fail, 2 = inconclusive, 3 = skipped");
    for c in &report.criteria {
        table.comment(format!("{c}"));
        table.push(vec![c.id as f64, status_code(c.status)]);
    }
    out.emit("verify", &table)?;
    let json = serde_json::json!({ "succeeded": succeeded, "report": report });
    std::fs::write(out.dir().join("verify_report.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    println!("verify: {}", if succeeded { "all criteria passed" } else { "NOT all criteria passed" });
    Ok(succeeded)
}
