//! The full validator battery for one model, as one report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::map_realizations;
use crate::lattice::{make_initial_condition, InitialKind, Model, ModelParams};
use crate::mh::run_mh;
use crate::noise::PathSpec;
use crate::sde::step_count;
use crate::sphere::Projection;
use crate::validate::{
    compare_uniformity, energy_bound_monitor, taylor_sweep, validate_diffusion, validate_drift,
    validate_sphere_uniformity, EnergyBoundReport, ExpansionReport, TaylorReport, UniformityReport, Z_LIMIT,
};

/// Samples per step length in the Taylor residual sweep.
const TAYLOR_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: Model,
    pub seed: u64,
    pub drift: ExpansionReport,
    pub diffusion: ExpansionReport,
    pub uniformity: Vec<UniformityReport>,
    /// Heisenberg only: largest z between the two projection kinds.
    pub projection_agreement_z: Option<f64>,
    pub energy: EnergyBoundReport,
    pub taylor: TaylorReport,
    pub pass: bool,
}

/// One row of the human-readable summary.
pub struct CheckLine {
    pub name: String,
    pub statistic: String,
    pub threshold: String,
    pub pass: bool,
}

/// Runs every validator for `cfg.model` with the settings in `cfg.validate`.
pub fn run_validation(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let v = &cfg.validate;
    let model = cfg.model;
    let ep = ModelParams::new(model, v.expansion_n, v.expansion_length, v.expansion_beta, cfg.dt)?;
    let start = make_initial_condition(cfg.ic, &ep, cfg.amplitude);
    let drift = validate_drift(&start, v.expansion_beta, &v.eps_list, v.n_trials, cfg.seed, cfg.workers)?;
    let diffusion = validate_diffusion(&start, v.expansion_beta, &v.eps_list, v.n_trials, cfg.seed, cfg.workers)?;

    let mut uniformity =
        vec![validate_sphere_uniformity(model, Projection::Orthogonal, v.uniformity_steps, v.uniformity_dt, cfg.seed)?];
    let mut projection_agreement_z = None;
    if model == Model::Heisenberg {
        let cross = validate_sphere_uniformity(model, Projection::Cross, v.uniformity_steps, v.uniformity_dt, cfg.seed)?;
        projection_agreement_z = Some(compare_uniformity(&uniformity[0], &cross));
        uniformity.push(cross);
    }

    let energy = energy_check(cfg)?;
    let taylor = taylor_sweep(&v.taylor_eps, TAYLOR_SAMPLES, cfg.seed)?;
    let pass = drift.pass
        && diffusion.pass
        && uniformity.iter().all(|u| u.pass)
        && projection_agreement_z.is_none_or(|z| z <= Z_LIMIT)
        && energy.pass
        && taylor.pass;
    Ok(ValidationReport {
        model,
        seed: cfg.seed,
        drift,
        diffusion,
        uniformity,
        projection_agreement_z,
        energy,
        taylor,
        pass,
    })
}

/// M-H runs from the aligned state at the run's own `N`, `dt` and `beta`.
fn energy_check(cfg: &ExperimentConfig) -> Result<EnergyBoundReport> {
    let v = &cfg.validate;
    let p = ModelParams::new(cfg.model, cfg.n, cfg.length, cfg.beta_for(cfg.n), cfg.dt)?;
    let steps = step_count(v.energy_t_end, cfg.dt)?;
    let init = make_initial_condition(InitialKind::Aligned, &p, None);
    let records = map_realizations(v.energy_realizations, cfg.workers, |r| {
        let mut path = PathSpec::new(cfg.seed, cfg.model, p.sites, p.dt, steps).realization(r).generate()?;
        run_mh(init.clone(), &p, &mut path, steps, steps.max(1), cfg.proposal)
    })?;
    energy_bound_monitor(&records, &p, v.energy_b)
}

impl ValidationReport {
    pub fn lines(&self) -> Vec<CheckLine> {
        let mut out = Vec::new();
        for r in [&self.drift, &self.diffusion] {
            out.push(CheckLine {
                name: format!("{} residual slope", r.kind),
                statistic: format!("{:.3}", r.slope),
                threshold: format!(">= {}", r.slope_min),
                pass: r.slope >= r.slope_min,
            });
            for l in &r.levels {
                let worst = l
                    .plain_residual
                    .iter()
                    .zip(&l.plain_se)
                    .map(|(x, s)| x / s.max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                out.push(CheckLine {
                    name: format!("{} eps={}", r.kind, l.eps),
                    statistic: format!("resid {:.3e} ({worst:.1} se)", l.max_residual),
                    threshold: format!("4 se + {:.2e}", l.allowance),
                    pass: l.pass,
                });
            }
        }
        if let (Some(nr), Some(lag)) = (self.diffusion.normal_variance_ratio, self.diffusion.lag1_max_z) {
            out.push(CheckLine {
                name: "normal variance / eps^3".into(),
                statistic: format!("{nr:.3e}"),
                threshold: "< 1".into(),
                pass: nr < 1.0,
            });
            out.push(CheckLine {
                name: "lag-1 covariance".into(),
                statistic: format!("{lag:.2} z"),
                threshold: format!("<= {Z_LIMIT}"),
                pass: lag <= Z_LIMIT,
            });
        }
        for u in &self.uniformity {
            out.push(CheckLine {
                name: format!("uniformity {:?}", u.projection).to_lowercase(),
                statistic: format!("{:.2} z", u.max_z),
                threshold: format!("<= {Z_LIMIT}"),
                pass: u.pass,
            });
        }
        if let Some(z) = self.projection_agreement_z {
            out.push(CheckLine {
                name: "projection kinds agree".into(),
                statistic: format!("{z:.2} z"),
                threshold: format!("<= {Z_LIMIT}"),
                pass: z <= Z_LIMIT,
            });
        }
        let e = &self.energy;
        out.push(CheckLine {
            name: format!("energy bound b={}", e.b),
            statistic: format!("{}/{} exceed", e.exceedances, e.realizations),
            threshold: format!("freq <= {:.1e}", e.allowed_frequency),
            pass: e.pass,
        });
        let t = &self.taylor;
        out.push(CheckLine {
            name: "taylor residual orders".into(),
            statistic: format!("{:.3} {:.3} {:.3}", t.slopes[0], t.slopes[1], t.slopes[2]),
            threshold: format!("3 2 3 +- {}", t.tolerance),
            pass: t.pass,
        });
        out
    }

    /// Aligned-column summary.
    pub fn to_text(&self) -> String {
        let lines = self.lines();
        let w0 = lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
        let w1 = lines.iter().map(|l| l.statistic.len()).max().unwrap_or(0);
        let w2 = lines.iter().map(|l| l.threshold.len()).max().unwrap_or(0);
        let mut s = format!("validation {} seed {}\n", self.model.name(), self.seed);
        for l in &lines {
            let _ = writeln!(
                s,
                "  {:<w0$}  {:>w1$}  {:<w2$}  {}",
                l.name,
                l.statistic,
                l.threshold,
                if l.pass { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "overall {}", if self.pass { "pass" } else { "FAIL" });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;

    #[test]
    fn small_battery_runs_and_renders() {
        let mut cfg = ExperimentConfig::for_scenario(Scenario::Validate);
        cfg.model = Model::Heisenberg;
        cfg.validate.n_trials = 2000;
        cfg.validate.uniformity_steps = 20_000;
        cfg.validate.energy_realizations = 3;
        cfg.validate.energy_t_end = 0.01;
        let r = run_validation(&cfg).unwrap();
        assert_eq!(r.uniformity.len(), 2);
        assert!(r.projection_agreement_z.is_some());
        assert!(r.taylor.pass);
        let text = r.to_text();
        assert!(text.contains("taylor residual orders"));
        assert!(text.lines().last().unwrap().starts_with("overall"));
        let json = serde_json::to_string(&r).unwrap();
        let back: ValidationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.model, Model::Heisenberg);
    }
}
