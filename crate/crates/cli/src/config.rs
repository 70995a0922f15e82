//! Experiment configuration.
//!
//! A config file is TOML with the sections `model`, `sde`, `ensemble` and
//! `output`, plus optional per-command sections. Every key is optional: the
//! file is laid over a preset (`preset = "..."` at the top level, default
//! `paper-dephasing`), and the fully resolved result is what commands run
//! with and what gets echoed next to their output. Unknown keys are errors.
//!
//! ```toml
//! preset = "paper-dephasing"
//!
//! [model]
//! mu_b = 1.0
//! lambda = 0.5
//! theta = 1.0471975511965976
//! phi = [0.0, 0.7853981633974483, 1.5707963267948966]
//!
//! [sde]
//! dt = 1e-3
//! t_final = 2.0
//! record_stride = 10
//!
//! [ensemble]
//! n_traj = 10000
//! master_seed = 2005
//! equation = "nonlinear_p"   # or "linear_q"
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "json"]
//!
//! [trajectories]
//! dump_paths = 5
//! dump_stride = 20
//!
//! [interference]
//! chi_points = 64
//! lambdas = [0.25, 1.0]
//!
//! [verify]
//! criteria = [1, 2, 3]
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use geophase::ensemble::Equation;
use geophase::lindblad::DephasingSpinModel;
use geophase::sse::SdeConfig;
use geophase::verify::{self, DEFAULT_SEED};
use serde::{Deserialize, Serialize};

pub const PRESETS: [&str; 2] = ["paper-dephasing", "paper-pi-pulse"];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    preset: Option<String>,
    #[serde(default)]
    model: PartialModel,
    #[serde(default)]
    sde: PartialSde,
    #[serde(default)]
    ensemble: PartialEnsemble,
    #[serde(default)]
    output: PartialOutput,
    #[serde(default)]
    trajectories: PartialTrajectories,
    #[serde(default)]
    interference: PartialInterference,
    #[serde(default)]
    verify: PartialVerify,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialModel {
    mu_b: Option<f64>,
    lambda: Option<f64>,
    theta: Option<f64>,
    phi: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSde {
    dt: Option<f64>,
    t_final: Option<f64>,
    record_stride: Option<usize>,
    renormalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialEnsemble {
    n_traj: Option<usize>,
    master_seed: Option<u64>,
    equation: Option<Equation>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialOutput {
    directory: Option<PathBuf>,
    formats: Option<Vec<Format>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialTrajectories {
    dump_paths: Option<usize>,
    dump_stride: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialInterference {
    chi: Option<Vec<f64>>,
    chi_points: Option<usize>,
    lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialVerify {
    criteria: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mu_b: f64,
    pub lambda: f64,
    pub theta: f64,
    /// Gauge angles, radians.
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    /// Effective step: `t_final / steps`.
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: usize,
    pub master_seed: u64,
    pub equation: Equation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoriesSection {
    /// Number of individual trajectories written out per gauge.
    pub dump_paths: usize,
    /// Write every `dump_stride`-th recorded point of those trajectories.
    pub dump_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceSection {
    pub chi: Vec<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub criteria: Vec<u8>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub model: ModelSection,
    pub sde: SdeSection,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
    pub trajectories: TrajectoriesSection,
    pub interference: InterferenceSection,
    pub verify: VerifySection,
}

const DEFAULT_CHI_POINTS: usize = 64;

fn chi_grid(points: usize) -> Vec<f64> {
    (0..points).map(|k| 2.0 * PI * k as f64 / points as f64).collect()
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> anyhow::Result<Self> {
        let defaults = verify::VerifyConfig::default();
        let model = defaults.model;
        let mut cfg = Self {
            preset: name.to_string(),
            model: ModelSection {
                mu_b: model.mu_b,
                lambda: model.lambda,
                theta: model.theta,
                phi: vec![0.0, PI / 4.0, PI / 2.0],
            },
            sde: SdeSection { dt: defaults.dt, t_final: defaults.t_final, record_stride: 10, renormalize: true },
            ensemble: EnsembleSection {
                n_traj: defaults.n_traj,
                master_seed: DEFAULT_SEED,
                equation: Equation::NonlinearP,
            },
            output: OutputSection { directory: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] },
            trajectories: TrajectoriesSection { dump_paths: 0, dump_stride: 10 },
            interference: InterferenceSection { chi: chi_grid(DEFAULT_CHI_POINTS), lambdas: vec![model.lambda] },
            verify: VerifySection { criteria: verify::CRITERIA.iter().map(|c| c.0).collect() },
        };
        match name {
            "paper-dephasing" => {}
            "paper-pi-pulse" => cfg.sde.t_final = PI / cfg.model.mu_b,
            other => bail!("unknown preset `{other}` (available: {})", PRESETS.join(", ")),
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let partial: PartialConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        Self::resolve(partial)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn resolve(p: PartialConfig) -> anyhow::Result<Self> {
        let preset = p.preset.unwrap_or_else(|| PRESETS[0].to_string());
        let mut cfg = Self::preset(&preset)?;
        let mu_b_given = p.model.mu_b.is_some();
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(cfg.model.mu_b, p.model.mu_b);
        set!(cfg.model.lambda, p.model.lambda);
        set!(cfg.model.theta, p.model.theta);
        set!(cfg.model.phi, p.model.phi);
        if preset == "paper-pi-pulse" && mu_b_given {
            cfg.sde.t_final = PI / cfg.model.mu_b;
        }
        set!(cfg.sde.dt, p.sde.dt);
        set!(cfg.sde.t_final, p.sde.t_final);
        set!(cfg.sde.record_stride, p.sde.record_stride);
        set!(cfg.sde.renormalize, p.sde.renormalize);
        set!(cfg.ensemble.n_traj, p.ensemble.n_traj);
        set!(cfg.ensemble.master_seed, p.ensemble.master_seed);
        set!(cfg.ensemble.equation, p.ensemble.equation);
        set!(cfg.output.directory, p.output.directory);
        set!(cfg.output.formats, p.output.formats);
        set!(cfg.trajectories.dump_paths, p.trajectories.dump_paths);
        set!(cfg.trajectories.dump_stride, p.trajectories.dump_stride);
        if p.interference.lambdas.is_none() {
            cfg.interference.lambdas = vec![cfg.model.lambda];
        }
        set!(cfg.interference.lambdas, p.interference.lambdas);
        match (p.interference.chi, p.interference.chi_points) {
            (Some(_), Some(_)) => bail!("give either interference.chi or interference.chi_points, not both"),
            (Some(chi), None) => cfg.interference.chi = chi,
            (None, Some(n)) => cfg.interference.chi = chi_grid(n),
            (None, None) => {}
        }
        set!(cfg.verify.criteria, p.verify.criteria);
        cfg.finish()
    }

    /// Validates and snaps `dt` to the uniform grid over `[0, t_final]`.
    pub fn finish(mut self) -> anyhow::Result<Self> {
        self.spin_model(self.model.lambda)?;
        let sde = SdeConfig::covering(self.sde.t_final, self.sde.dt)?;
        if sde.steps() > 0 {
            self.sde.dt = sde.dt;
        }
        if self.sde.record_stride == 0 {
            bail!("sde.record_stride must be >= 1");
        }
        if self.ensemble.n_traj == 0 {
            bail!("ensemble.n_traj must be >= 1");
        }
        if self.model.phi.is_empty() {
            bail!("model.phi must list at least one gauge angle");
        }
        if self.output.formats.is_empty() {
            bail!("output.formats must not be empty");
        }
        if self.trajectories.dump_stride == 0 {
            bail!("trajectories.dump_stride must be >= 1");
        }
        if self.model.phi.iter().chain(&self.interference.chi).any(|x| !x.is_finite()) {
            bail!("angles must be finite");
        }
        for &l in &self.interference.lambdas {
            self.spin_model(l)?;
        }
        if let Some(bad) = self.verify.criteria.iter().find(|&&c| !verify::CRITERIA.iter().any(|k| k.0 == c)) {
            bail!("verify.criteria: no criterion {bad}");
        }
        Ok(self)
    }

    pub fn spin_model(&self, lambda: f64) -> anyhow::Result<DephasingSpinModel> {
        Ok(DephasingSpinModel::new(self.model.mu_b, lambda, self.model.theta)?)
    }

    pub fn sde_config(&self) -> anyhow::Result<SdeConfig> {
        let mut sde = SdeConfig::covering(self.sde.t_final, self.sde.dt)?.with_stride(self.sde.record_stride)?;
        sde.renormalize_each_step = self.sde.renormalize;
        Ok(sde)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}
