//! Experiment configuration: a flat TOML file plus scenario defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{InitialKind, Model};
use crate::mh::ProposalKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Dynamics,
    ConvDt,
    ConvDx,
    Validate,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Dynamics => "dynamics",
            Scenario::ConvDt => "conv_dt",
            Scenario::ConvDx => "conv_dx",
            Scenario::Validate => "validate",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "dynamics" => Ok(Scenario::Dynamics),
            "conv_dt" => Ok(Scenario::ConvDt),
            "conv_dx" => Ok(Scenario::ConvDx),
            "validate" => Ok(Scenario::Validate),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Fully resolved settings of one scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub model: Model,
    pub n: usize,
    pub n_sweep: Vec<usize>,
    pub length: f64,
    /// `beta = N^gamma` unless `beta` is set.
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub dt: f64,
    pub dt_sweep: Vec<f64>,
    /// Reference step is `min(dt_sweep) / ref_refinement`.
    pub ref_refinement: usize,
    /// conv_dx uses `dt = N^-dx_dt_exponent` (4 when unset).
    pub dx_dt_exponent: Option<f64>,
    pub t_end: f64,
    pub ic: InitialKind,
    pub amplitude: Option<f64>,
    pub proposal: ProposalKind,
    pub realizations: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// 0 means one worker per core.
    pub workers: usize,
    pub record_every: usize,
    pub validate: ValidateSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateSettings {
    pub eps_list: Vec<f64>,
    pub n_trials: usize,
    /// Lattice and inverse temperature of the one-step expansion checks.
    /// A short chain keeps the pinned proposal sizes in the cubic regime.
    pub expansion_n: usize,
    pub expansion_length: f64,
    pub expansion_beta: f64,
    pub uniformity_steps: usize,
    pub uniformity_dt: f64,
    pub energy_b: f64,
    pub energy_realizations: usize,
    pub energy_t_end: f64,
    pub taylor_eps: Vec<f64>,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self {
            eps_list: vec![0.05, 0.02, 0.01],
            n_trials: 100_000,
            expansion_n: 5,
            expansion_length: 1.0,
            expansion_beta: 0.1,
            uniformity_steps: 1_000_000,
            uniformity_dt: 1e-2,
            energy_b: 1.0,
            energy_realizations: 100,
            energy_t_end: 1.0,
            taylor_eps: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: Option<Scenario>,
    pub model: Option<Model>,
    pub n: Option<usize>,
    pub n_sweep: Option<Vec<usize>>,
    pub length: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub dt: Option<f64>,
    pub dt_sweep: Option<Vec<f64>>,
    pub ref_refinement: Option<usize>,
    pub dx_dt_exponent: Option<f64>,
    pub t_end: Option<f64>,
    pub ic: Option<InitialKind>,
    pub amplitude: Option<f64>,
    pub proposal: Option<ProposalKind>,
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub record_every: Option<usize>,
    pub eps_list: Option<Vec<f64>>,
    pub n_trials: Option<usize>,
    pub expansion_n: Option<usize>,
    pub expansion_length: Option<f64>,
    pub expansion_beta: Option<f64>,
    pub uniformity_steps: Option<usize>,
    pub uniformity_dt: Option<f64>,
    pub energy_b: Option<f64>,
    pub energy_realizations: Option<usize>,
    pub energy_t_end: Option<f64>,
    pub taylor_eps: Option<Vec<f64>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })*
    };
}

impl ExperimentConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let mut c = Self {
            scenario,
            model: Model::Xy,
            n: 10,
            n_sweep: vec![10, 20, 40],
            length: 2.0,
            gamma: Some(1.5),
            beta: None,
            dt: 1e-3,
            dt_sweep: vec![1e-3, 5e-4, 2.5e-4, 1.25e-4],
            ref_refinement: 16,
            dx_dt_exponent: None,
            t_end: 1.0,
            ic: InitialKind::OutOfEquilibrium,
            amplitude: None,
            proposal: ProposalKind::Normalized,
            realizations: 200,
            seed: 20_240_601,
            output_dir: PathBuf::from(format!("out/{}", scenario.name())),
            workers: 0,
            record_every: 50,
            validate: ValidateSettings::default(),
        };
        match scenario {
            Scenario::Dynamics => c.realizations = 1,
            Scenario::ConvDt => {
                c.t_end = 0.2;
                c.ic = InitialKind::NearEquilibrium;
            }
            Scenario::ConvDx => c.t_end = 0.2,
            Scenario::Validate => {}
        }
        c
    }

    /// Scenario defaults overlaid with the file. The file's `scenario` key,
    /// when present, must agree with `scenario`.
    pub fn from_file(scenario: Scenario, file: &ConfigFile) -> Result<Self> {
        if let Some(s) = file.scenario {
            if s != scenario {
                return Err(Error::Config(format!(
                    "config file is for scenario `{}`, not `{}`",
                    s.name(),
                    scenario.name()
                )));
            }
        }
        let mut c = Self::for_scenario(scenario);
        overlay!(
            c, file, model, n, n_sweep, length, dt, dt_sweep, ref_refinement, t_end, ic, proposal,
            realizations, seed, output_dir, workers, record_every
        );
        if file.beta.is_some() {
            c.beta = file.beta;
            c.gamma = None;
        }
        if file.gamma.is_some() {
            if file.beta.is_some() {
                return Err(Error::Config("set either `beta` or `gamma`, not both".into()));
            }
            c.gamma = file.gamma;
        }
        if file.amplitude.is_some() {
            c.amplitude = file.amplitude;
        }
        if file.dx_dt_exponent.is_some() {
            c.dx_dt_exponent = file.dx_dt_exponent;
        }
        overlay!(
            c.validate, file, eps_list, n_trials, expansion_n, expansion_length, expansion_beta, uniformity_steps, uniformity_dt,
            energy_b, energy_realizations, energy_t_end, taylor_eps
        );
        c.check()?;
        Ok(c)
    }

    pub fn beta_for(&self, n: usize) -> f64 {
        match (self.beta, self.gamma) {
            (Some(b), _) => b,
            (None, Some(g)) => (n as f64).powf(g),
            (None, None) => f64::INFINITY,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("`{field}`: {msg}")));
        if self.n < 1 {
            return bad("n", "must be at least 1".into());
        }
        if !(self.length > 0.0) || (self.length * self.n as f64).round() < 3.0 {
            return bad("length", format!("{} gives fewer than 3 sites", self.length));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0) {
                return bad("beta", format!("must be positive (or inf), got {b}"));
            }
        }
        if !(self.dt > 0.0) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad("t_end", format!("must be finite and non-negative, got {}", self.t_end));
        }
        if self.ref_refinement == 0 || !self.ref_refinement.is_power_of_two() {
            return bad("ref_refinement", format!("must be a power of two, got {}", self.ref_refinement));
        }
        if self.realizations == 0 {
            return bad("realizations", "must be at least 1".into());
        }
        match self.scenario {
            Scenario::ConvDt => {
                if self.dt_sweep.len() < 4 {
                    return bad("dt_sweep", format!("needs at least 4 levels, got {}", self.dt_sweep.len()));
                }
                crate::experiment::check_dyadic(&self.dt_sweep)
                    .map_err(|e| Error::Config(format!("`dt_sweep`: {e}")))?;
            }
            Scenario::ConvDx => {
                if self.n_sweep.len() < 3 {
                    return bad("n_sweep", format!("needs at least 3 sizes, got {}", self.n_sweep.len()));
                }
            }
            Scenario::Validate => {
                let v = &self.validate;
                if v.eps_list.len() < 2 || v.eps_list.iter().any(|&e| !(e > 0.0)) {
                    return bad("eps_list", "needs at least 2 positive values".into());
                }
                if (v.expansion_length * v.expansion_n as f64).round() < 3.0 {
                    return bad("expansion_length", "expansion lattice needs at least 3 sites".into());
                }
                if !(v.expansion_beta >= 0.0) || v.expansion_beta.is_infinite() {
                    return bad("expansion_beta", format!("must be finite and non-negative, got {}", v.expansion_beta));
                }
                if v.n_trials < 100 {
                    return bad("n_trials", format!("too small: {}", v.n_trials));
                }
                if !(v.uniformity_dt > 0.0) || v.uniformity_steps < 1000 {
                    return bad("uniformity_steps", "needs at least 1000 steps and dt > 0".into());
                }
            }
            Scenario::Dynamics => {}
        }
        Ok(())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::Dynamics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_and_defaults() {
        let f = ConfigFile::parse(
            "model = \"heisenberg\"\nn = 20\nbeta = inf\nic = \"near_equilibrium\"\nn_trials = 5000\n",
        )
        .unwrap();
        let c = ExperimentConfig::from_file(Scenario::Validate, &f).unwrap();
        assert_eq!(c.model, Model::Heisenberg);
        assert_eq!(c.n, 20);
        assert!(c.beta_for(20).is_infinite());
        assert_eq!(c.validate.n_trials, 5000);
        assert_eq!(c.length, 2.0);
        let d = ExperimentConfig::for_scenario(Scenario::ConvDt);
        assert!((d.beta_for(10) - 10f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ConfigFile::parse("nn = 3\n").is_err());
        assert!(ConfigFile::parse("n = \"ten\"\n").is_err());
        let f = ConfigFile::parse("dt_sweep = [1e-3, 3e-4, 1e-4]\n").unwrap();
        let e = ExperimentConfig::from_file(Scenario::ConvDt, &f).unwrap_err();
        assert!(e.to_string().contains("dt_sweep"), "{e}");
        let f = ConfigFile::parse("scenario = \"conv_dx\"\n").unwrap();
        assert!(ExperimentConfig::from_file(Scenario::ConvDt, &f).is_err());
        let f = ConfigFile::parse("beta = 2.0\ngamma = 1.0\n").unwrap();
        assert!(ExperimentConfig::from_file(Scenario::Dynamics, &f).is_err());
        let f = ConfigFile::parse("n_sweep = [10]\n").unwrap();
        assert!(ExperimentConfig::from_file(Scenario::ConvDx, &f).is_err());
    }
}
