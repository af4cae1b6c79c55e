//! Euler-Maruyama integration of the Ito Langevin system
//!
//! `d sigma_i = P(Delta_N sigma_i) dt - c (N / beta) sigma_i dt + P(sqrt(N / beta) dW_i)`
//!
//! with `c = m / 2`, followed by projection back onto the sphere.

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::lattice::{ModelParams, SpinConfiguration};
use crate::noise::BrownianLattice;
use crate::sphere::{self, SpinVector, Vec3};
use crate::trajectory::{should_record, TrajectoryRecord};

/// Ito drift `P(Delta_N sigma_i) - c (N / beta) sigma_i`.
pub fn drift(config: &SpinConfiguration, params: &ModelParams, i: usize) -> Result<Vec3> {
    let lap = config.discrete_laplacian(i)?;
    let s = config.spin(i);
    let p = sphere::project(s, &lap);
    Ok(sphere::sub(&p, &sphere::scale(params.ito_coefficient(), s)))
}

/// Explicit-Euler limit for the `N^2`-scaled Laplacian.
pub fn stability_limit(n: usize) -> f64 {
    1.0 / (2.0 * (n * n) as f64)
}

pub(crate) fn check_dt(params: &ModelParams, dt: f64) -> Result<()> {
    let n2 = (params.n * params.n) as f64;
    if dt > stability_limit(params.n) {
        return Err(invalid(format!(
            "dt = {dt:e} exceeds the explicit stability limit 1/(2N^2) = {:e}",
            stability_limit(params.n)
        )));
    }
    if dt > 1.0 / (4.0 * n2) {
        warn!("dt = {dt:e} is above 1/(4N^2); energy decay is not guaranteed");
    }
    Ok(())
}

/// Shared explicit step. `ito` and `noise` are skipped entirely when absent so
/// that the noise-free SDE and the heat-flow step run identical arithmetic.
pub(crate) fn explicit_step(
    config: &SpinConfiguration,
    dt: f64,
    ito: f64,
    noise: Option<(f64, &[Vec3])>,
    renormalize: bool,
    out: &mut SpinConfiguration,
) -> Result<()> {
    for i in 0..config.len() {
        let s = config.spin(i);
        let mut mu = sphere::project(s, &config.laplacian_at(i));
        if ito != 0.0 {
            mu = sphere::sub(&mu, &sphere::scale(ito, s));
        }
        let mut v = sphere::add(s, &sphere::scale(dt, &mu));
        if let Some((amp, dw)) = noise {
            v = sphere::add(&v, &sphere::project(s, &sphere::scale(amp, &dw[i])));
        }
        let spin = if renormalize {
            let nrm = sphere::norm(&v);
            if !(nrm >= 0.5) {
                return Err(Error::StepTooLarge { site: i, norm: nrm });
            }
            sphere::scale(1.0 / nrm, &v)
        } else {
            v
        };
        out.spins_mut()[i] = SpinVector::from_unit_unchecked(spin);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SdeState {
    pub config: SpinConfiguration,
    pub t: f64,
    pub dt: f64,
    pub renormalize: bool,
    scratch: SpinConfiguration,
}

impl SdeState {
    pub fn new(config: SpinConfiguration, dt: f64) -> Self {
        Self {
            scratch: config.clone(),
            config,
            t: 0.0,
            dt,
            renormalize: true,
        }
    }

    pub fn without_renormalization(mut self) -> Self {
        self.renormalize = false;
        self
    }

    /// One Euler-Maruyama step with Brownian increments `dw` of length `dt`.
    pub fn euler_step(&mut self, params: &ModelParams, dw: &[Vec3]) -> Result<()> {
        if dw.len() != self.config.len() {
            return Err(invalid("increment count does not match site count"));
        }
        let amp = params.noise_amplitude();
        let noise = (amp != 0.0).then_some((amp, dw));
        explicit_step(
            &self.config,
            self.dt,
            params.ito_coefficient(),
            noise,
            self.renormalize,
            &mut self.scratch,
        )?;
        std::mem::swap(&mut self.config, &mut self.scratch);
        self.t += self.dt;
        Ok(())
    }

    /// Stochastic Heun step for the Stratonovich form (no Ito correction),
    /// followed by renormalization.
    pub fn heun_step(&mut self, params: &ModelParams, dw: &[Vec3]) -> Result<()> {
        let amp = params.noise_amplitude();
        let m = self.config.len();
        let dt = self.dt;
        let field = |c: &SpinConfiguration, i: usize| -> (Vec3, Vec3) {
            let s = c.spin(i);
            let f = sphere::project(s, &c.laplacian_at(i));
            let g = sphere::project(s, &sphere::scale(amp, &dw[i]));
            (f, g)
        };
        let mut pred = self.config.clone();
        for i in 0..m {
            let (f, g) = field(&self.config, i);
            let v = sphere::add(&sphere::add(self.config.spin(i), &sphere::scale(dt, &f)), &g);
            pred.spins_mut()[i] = SpinVector::from_unit_unchecked(v);
        }
        for i in 0..m {
            let (f0, g0) = field(&self.config, i);
            let (f1, g1) = field(&pred, i);
            let v = sphere::add(
                self.config.spin(i),
                &sphere::add(
                    &sphere::scale(0.5 * dt, &sphere::add(&f0, &f1)),
                    &sphere::scale(0.5, &sphere::add(&g0, &g1)),
                ),
            );
            let spin = SpinVector::normalize(v)?;
            self.scratch.spins_mut()[i] = spin;
        }
        std::mem::swap(&mut self.config, &mut self.scratch);
        self.t += dt;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdeScheme {
    /// Renormalized Ito Euler-Maruyama.
    Euler,
    /// Renormalized Stratonovich Heun.
    Heun,
}

/// Brings `path` to the resolution `dt`, coarsening when it is finer.
pub fn path_at_resolution(path: &BrownianLattice, dt: f64) -> Result<BrownianLattice> {
    let ratio = dt / path.dt();
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(invalid(format!(
            "step {dt:e} is not an integer multiple of the path step {:e}",
            path.dt()
        )));
    }
    path.coarsen(factor as usize)
}

pub(crate) fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    let k = t_end / dt;
    let n = k.round();
    if !(t_end >= 0.0) || (k - n).abs() > 1e-6 * k.max(1.0) {
        return Err(invalid(format!("T = {t_end} is not a whole number of steps of {dt:e}")));
    }
    Ok(n as usize)
}

/// Integrates on `[0, t_end]` at `params.dt`, driven by `path`.
pub fn run_sde(
    initial: SpinConfiguration,
    params: &ModelParams,
    path: &BrownianLattice,
    t_end: f64,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    run_sde_with(initial, params, path, t_end, record_every, SdeScheme::Euler)
}

pub fn run_sde_with(
    initial: SpinConfiguration,
    params: &ModelParams,
    path: &BrownianLattice,
    t_end: f64,
    record_every: usize,
    scheme: SdeScheme,
) -> Result<TrajectoryRecord> {
    check_dt(params, params.dt)?;
    let mut path = path_at_resolution(path, params.dt)?;
    let n_steps = step_count(t_end, params.dt)?;
    if n_steps > path.n_steps() {
        return Err(invalid(format!(
            "path covers {} steps, {n_steps} requested",
            path.n_steps()
        )));
    }
    let spec = *path.spec();
    let mut rec = TrajectoryRecord::new("sde", params.model, params.dt)
        .with_provenance(spec.seed, spec.realization);
    let mut state = SdeState::new(initial, params.dt);
    rec.push(0.0, &state.config, state.config.hamiltonian(), 1.0);
    let mut dw = vec![[0.0; 3]; state.config.len()];
    for k in 1..=n_steps {
        path.fill_step(k - 1, &mut dw)?;
        match scheme {
            SdeScheme::Euler => state.euler_step(params, &dw)?,
            SdeScheme::Heun => state.heun_step(params, &dw)?,
        }
        if should_record(k, n_steps, record_every) {
            let t = k as f64 * params.dt;
            rec.push(t, &state.config, state.config.hamiltonian(), 1.0);
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_initial_condition, InitialKind, Model};
    use crate::noise::PathSpec;
    use crate::pde;

    fn params(model: Model, beta: f64) -> ModelParams {
        ModelParams::new(model, 10, 2.0, beta, 1e-3).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = params(Model::Heisenberg, 31.6);
        let c = p.empty_config();
        let d = drift(&c, &p, 3).unwrap();
        assert!(sphere::norm(&sphere::sub(&d, &[-10.0 / 31.6, 0.0, 0.0])) < 1e-15);

        let q = params(Model::Heisenberg, f64::INFINITY);
        let o = make_initial_condition(InitialKind::OutOfEquilibrium, &q, None);
        for i in 0..o.len() {
            let lap = o.discrete_laplacian(i).unwrap();
            assert_eq!(drift(&o, &q, i).unwrap(), sphere::project(o.spin(i), &lap));
            let d = drift(&o, &p, i).unwrap();
            let back = sphere::add(&d, &sphere::scale(10.0 / 31.6, o.spin(i)));
            assert!(sphere::dot(&back, o.spin(i)).abs() < 1e-10);
        }
        let xy = params(Model::Xy, 4.0);
        let d = drift(&xy.empty_config(), &xy, 0).unwrap();
        assert!((d[0] + 0.5 * 10.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn aligned_state_is_fixed_without_noise() {
        let p = params(Model::Heisenberg, 31.6);
        let c = p.empty_config();
        let mut st = SdeState::new(c.clone(), p.dt);
        st.euler_step(&p, &vec![[0.0; 3]; c.len()]).unwrap();
        assert_eq!(st.config, c);
    }

    #[test]
    fn noise_free_step_is_heat_flow_step() {
        for model in [Model::Xy, Model::Heisenberg] {
            let p = params(model, f64::INFINITY);
            let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
            let mut st = SdeState::new(c.clone(), 1e-3);
            st.euler_step(&p, &vec![[0.3, -0.1, 0.2]; c.len()]).unwrap();
            let pde = pde::pde_step(&c, 1e-3).unwrap();
            for (a, b) in st.config.spins().iter().zip(pde.spins()) {
                for k in 0..3 {
                    assert_eq!(a[k].to_bits(), b[k].to_bits());
                }
            }
        }
    }

    #[test]
    fn scripted_single_step() {
        let p = params(Model::Heisenberg, 2.0);
        let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
        let mut path = PathSpec::new(17, Model::Heisenberg, p.sites, p.dt, 1).generate().unwrap();
        let dw: Vec<Vec3> = (0..p.sites).map(|i| path.increment(0, i).unwrap()).collect();
        let mut st = SdeState::new(c.clone(), p.dt);
        st.euler_step(&p, &dw).unwrap();
        let m = p.sites;
        let n2 = 100.0;
        let amp = (10.0f64 / 2.0).sqrt();
        for i in 0..m {
            let s = c.spins()[i];
            let a = c.spins()[(i + m - 1) % m];
            let b = c.spins()[(i + 1) % m];
            let lap: Vec<f64> = (0..3).map(|k| n2 * (a[k] + b[k] - 2.0 * s[k])).collect();
            let ls: f64 = (0..3).map(|k| lap[k] * s[k]).sum();
            let ws: f64 = (0..3).map(|k| dw[i][k] * s[k]).sum();
            let v: Vec<f64> = (0..3)
                .map(|k| {
                    s[k] + (lap[k] - ls * s[k] - (10.0 / 2.0) * s[k]) * p.dt
                        + amp * (dw[i][k] - ws * s[k])
                })
                .collect();
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for k in 0..3 {
                assert!((st.config.spins()[i][k] - v[k] / r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tangent_noise_and_unit_norm() {
        let p = params(Model::Heisenberg, 1.0);
        let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
        let mut path = PathSpec::new(2, Model::Heisenberg, p.sites, p.dt, 200).generate().unwrap();
        let mut st = SdeState::new(c, p.dt);
        let mut dw = vec![[0.0; 3]; p.sites];
        for n in 0..200 {
            path.fill_step(n, &mut dw).unwrap();
            for i in 0..p.sites {
                let g = sphere::project(st.config.spin(i), &sphere::scale(p.noise_amplitude(), &dw[i]));
                assert!(sphere::dot(&g, st.config.spin(i)).abs() <= 1e-12);
            }
            st.euler_step(&p, &dw).unwrap();
            assert!(st.config.max_norm_defect() <= 1e-12);
        }
    }

    #[test]
    fn oversized_step_is_reported() {
        // c dt = (m/2)(N/beta) dt = 1 contracts every spin to the origin
        let p = ModelParams::new(Model::Heisenberg, 10, 2.0, 0.01, 1e-3).unwrap();
        let mut st = SdeState::new(p.empty_config(), p.dt);
        let dw = vec![[0.0; 3]; p.sites];
        assert!(matches!(st.euler_step(&p, &dw), Err(Error::StepTooLarge { .. })));
        let q = ModelParams::new(Model::Heisenberg, 10, 2.0, 1.0, 0.01).unwrap();
        let path = PathSpec::new(1, Model::Heisenberg, q.sites, q.dt, 10).generate().unwrap();
        assert!(run_sde(q.empty_config(), &q, &path, 0.1, 1).is_err());
    }

    #[test]
    fn zero_horizon_records_initial_only() {
        let p = params(Model::Xy, 31.6);
        let c = make_initial_condition(InitialKind::NearEquilibrium, &p, None);
        let path = PathSpec::new(1, Model::Xy, p.sites, p.dt, 4).generate().unwrap();
        let rec = run_sde(c.clone(), &p, &path, 0.0, 1).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec.snapshots[0], c);
    }

    #[test]
    fn energy_decreases_without_noise() {
        let p = ModelParams::new(Model::Heisenberg, 10, 2.0, f64::INFINITY, 1.0 / 400.0).unwrap();
        let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
        let path = PathSpec::new(1, Model::Heisenberg, p.sites, p.dt, 400).generate().unwrap();
        let rec = run_sde(c, &p, &path, 1.0, 1).unwrap();
        for w in rec.scalars.windows(2) {
            assert!(w[1].energy <= w[0].energy);
        }
    }
}
