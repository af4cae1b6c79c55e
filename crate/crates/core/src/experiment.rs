//! Coupled M-H / SDE / heat-flow runs over many realizations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{invalid, Error, Result};
use crate::lattice::{make_initial_condition, ModelParams, SpinConfiguration};
use crate::metrics::{fit_order, rms_config_error, rms_error_series, ErrorSeries, OrderFit};
use crate::mh::run_mh;
use crate::noise::{BrownianLattice, PathSpec};
use crate::pde::run_pde;
use crate::sde::{path_at_resolution, run_sde, step_count};
use crate::stats;
use crate::trajectory::TrajectoryRecord;

/// Runs `f(0), ..., f(n - 1)` on `workers` threads (0 = all cores) and
/// returns the results in index order.
pub fn map_realizations<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n as u64).into_par_iter().map(&f).collect())
}

/// One point of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvPoint {
    pub h: f64,
    pub err: f64,
    pub stderr: f64,
    pub n_realizations: usize,
}

impl ConvPoint {
    fn from_samples(h: f64, xs: &[f64]) -> Self {
        Self {
            h,
            err: stats::mean(xs),
            stderr: if xs.len() > 1 { stats::std_error(xs) } else { 0.0 },
            n_realizations: xs.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub points: Vec<ConvPoint>,
    pub fit: OrderFit,
    /// Per-realization errors, `samples[level][realization]`.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl ConvergenceStudy {
    fn new(hs: &[f64], per_real: Vec<Vec<f64>>) -> Result<Self> {
        let samples: Vec<Vec<f64>> = (0..hs.len())
            .map(|k| per_real.iter().map(|r| r[k]).collect())
            .collect();
        let points: Vec<ConvPoint> = hs
            .iter()
            .zip(&samples)
            .map(|(&h, xs)| ConvPoint::from_samples(h, xs))
            .collect();
        let fit = fit_order(&points.iter().map(|p| (p.h, p.err)).collect::<Vec<_>>())?;
        Ok(Self { points, fit, samples })
    }

    /// `h,err,stderr,n_realizations`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,err,stderr,n_realizations\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                crate::lattice::fmt_f64(p.h),
                crate::lattice::fmt_f64(p.err),
                crate::lattice::fmt_f64(p.stderr),
                p.n_realizations
            ));
        }
        s
    }
}

fn initial_for(cfg: &ExperimentConfig, params: &ModelParams) -> SpinConfiguration {
    make_initial_condition(cfg.ic, params, cfg.amplitude)
}

/// Checks that every sweep entry is a power-of-two multiple of the smallest.
pub fn check_dyadic(dts: &[f64]) -> Result<f64> {
    let min = dts.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Config("dt sweep must be non-empty and positive".into()));
    }
    for &dt in dts {
        let r = (dt / min).log2();
        if (r - r.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "dt sweep is not dyadic: {dt:e} / {min:e} is not a power of two"
            )));
        }
    }
    Ok(min)
}

/// M-H at each swept `dt` against the SDE at `dt_ref`, all on one path.
/// Returns the rms configuration error at `T` for every level.
pub fn conv_dt_realization(cfg: &ExperimentConfig, r: u64) -> Result<Vec<f64>> {
    let dt_min = check_dyadic(&cfg.dt_sweep)?;
    let dt_ref = dt_min / cfg.ref_refinement as f64;
    let n = cfg.n;
    let ref_params = ModelParams::new(cfg.model, n, cfg.length, cfg.beta_for(n), dt_ref)?;
    let n_ref = step_count(cfg.t_end, dt_ref)?;
    let path = PathSpec::new(cfg.seed, cfg.model, ref_params.sites, dt_ref, n_ref)
        .realization(r)
        .generate()?;
    let init = initial_for(cfg, &ref_params);
    let sde = run_sde(init.clone(), &ref_params, &path, cfg.t_end, 0)?;
    let sde_end = sde.last().expect("non-empty record");
    cfg.dt_sweep
        .iter()
        .map(|&dt| {
            let p = ModelParams::new(cfg.model, n, cfg.length, cfg.beta_for(n), dt)?;
            let mut coarse = path_at_resolution(&path, dt)?;
            let steps = step_count(cfg.t_end, dt)?;
            let mh = run_mh(init.clone(), &p, &mut coarse, steps, 0, cfg.proposal)?;
            rms_config_error(mh.last().expect("non-empty record"), sde_end)
        })
        .collect()
}

pub fn conv_dt(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    if cfg.dt_sweep.len() < 4 {
        return Err(Error::Config("conv_dt needs at least 4 dt levels".into()));
    }
    let per_real = map_realizations(cfg.realizations, cfg.workers, |r| conv_dt_realization(cfg, r))?;
    ConvergenceStudy::new(&cfg.dt_sweep, per_real)
}

/// `dt = 1 / N^4` unless overridden.
pub fn conv_dx_dt(cfg: &ExperimentConfig, n: usize) -> f64 {
    cfg.dx_dt_exponent.map_or(1.0 / (n as f64).powi(4), |q| (n as f64).powf(-q))
}

/// M-H at lattice `N` against the heat flow on the same lattice, at `T`.
pub fn conv_dx_realization(cfg: &ExperimentConfig, r: u64) -> Result<Vec<f64>> {
    cfg.n_sweep
        .iter()
        .map(|&n| {
            let dt = conv_dx_dt(cfg, n);
            let p = ModelParams::new(cfg.model, n, cfg.length, cfg.beta_for(n), dt)?;
            let steps = step_count(cfg.t_end, dt)?;
            let init = initial_for(cfg, &p);
            let pde_end = pde_reference(cfg, &p, &init)?;
            let mut path = PathSpec::new(cfg.seed, cfg.model, p.sites, dt, steps)
                .realization(r)
                .generate()?;
            let mh = run_mh(init, &p, &mut path, steps, 0, cfg.proposal)?;
            rms_config_error(mh.last().expect("non-empty record"), &pde_end)
        })
        .collect()
}

fn pde_reference(cfg: &ExperimentConfig, p: &ModelParams, init: &SpinConfiguration) -> Result<SpinConfiguration> {
    let rec = run_pde(init.clone(), p, cfg.t_end, p.dt, 0)?;
    Ok(rec.last().expect("non-empty record").clone())
}

pub fn conv_dx(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    if cfg.n_sweep.len() < 3 {
        return Err(Error::Config(format!(
            "conv_dx needs at least 3 lattice sizes, got {}",
            cfg.n_sweep.len()
        )));
    }
    let per_real = map_realizations(cfg.realizations, cfg.workers, |r| conv_dx_realization(cfg, r))?;
    let hs: Vec<f64> = cfg.n_sweep.iter().map(|&n| 1.0 / n as f64).collect();
    ConvergenceStudy::new(&hs, per_real)
}

/// Three trajectories from one initial condition, M-H and SDE on one path.
#[derive(Clone, Debug)]
pub struct DynamicsRun {
    pub params: ModelParams,
    pub mh: TrajectoryRecord,
    pub sde: TrajectoryRecord,
    pub pde: TrajectoryRecord,
    pub mh_vs_pde: ErrorSeries,
    pub sde_vs_pde: ErrorSeries,
}

pub fn dynamics(cfg: &ExperimentConfig) -> Result<DynamicsRun> {
    let p = ModelParams::new(cfg.model, cfg.n, cfg.length, cfg.beta_for(cfg.n), cfg.dt)?;
    let steps = step_count(cfg.t_end, cfg.dt)?;
    let every = cfg.record_every.max(1);
    let init = initial_for(cfg, &p);
    let path: BrownianLattice = PathSpec::new(cfg.seed, cfg.model, p.sites, cfg.dt, steps).generate()?;
    let mh = run_mh(init.clone(), &p, &mut path.clone(), steps, every, cfg.proposal)?;
    let sde = run_sde(init.clone(), &p, &path, cfg.t_end, every)?;
    let pde = run_pde(init, &p, cfg.t_end, cfg.dt, every)?;
    if mh.len() != sde.len() {
        return Err(invalid("record grids of M-H and SDE differ"));
    }
    let mh_vs_pde = rms_error_series(&mh, &pde)?;
    let sde_vs_pde = rms_error_series(&sde, &pde)?;
    Ok(DynamicsRun {
        params: p,
        mh,
        sde,
        pde,
        mh_vs_pde,
        sde_vs_pde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;
    use crate::lattice::{InitialKind, Model};

    #[test]
    fn dyadic_check() {
        assert_eq!(check_dyadic(&[1e-3, 5e-4, 2.5e-4]).unwrap(), 2.5e-4);
        assert!(check_dyadic(&[1e-3, 3e-4]).is_err());
    }

    #[test]
    fn ordered_reduction_ignores_worker_count() {
        let f = |r: u64| Ok((r as f64 * 0.37).sin());
        let a = map_realizations(50, 1, f).unwrap();
        let b = map_realizations(50, 3, f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_conv_dt_is_deterministic() {
        let mut cfg = ExperimentConfig::for_scenario(Scenario::ConvDt);
        cfg.model = Model::Xy;
        cfg.realizations = 4;
        cfg.t_end = 0.02;
        cfg.ic = InitialKind::OutOfEquilibrium;
        cfg.workers = 1;
        let a = conv_dt(&cfg).unwrap();
        cfg.workers = 2;
        let b = conv_dt(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 4);
        assert!(a.points.iter().all(|p| p.err > 0.0 && p.n_realizations == 4));
        assert!(a.to_csv().starts_with("h,err,stderr,n_realizations\n"));
    }

    #[test]
    fn infinite_beta_dynamics_match_heat_flow() {
        let mut cfg = ExperimentConfig::for_scenario(Scenario::Dynamics);
        cfg.beta = Some(f64::INFINITY);
        cfg.gamma = None;
        cfg.t_end = 0.05;
        let run = dynamics(&cfg).unwrap();
        assert!(run.sde_vs_pde.values.iter().all(|&e| e <= 1e-12));
    }

    #[test]
    fn short_sweep_rejected() {
        let mut cfg = ExperimentConfig::for_scenario(Scenario::ConvDx);
        cfg.n_sweep = vec![10];
        assert!(matches!(conv_dx(&cfg), Err(Error::Config(_))));
    }
}
