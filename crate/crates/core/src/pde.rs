//! Explicit projected heat flow `d sigma / dt = P(Delta_N sigma)` with
//! renormalization after every step.

use crate::error::{invalid, Result};
use crate::lattice::{ModelParams, SpinConfiguration};
use crate::sde::{check_dt, explicit_step, stability_limit, step_count};
use crate::trajectory::{should_record, TrajectoryRecord};

/// One step `sigma + P(Delta_N sigma) dt`, normalized.
pub fn pde_step(config: &SpinConfiguration, dt: f64) -> Result<SpinConfiguration> {
    if !(dt > 0.0) || dt > stability_limit(config.n) {
        return Err(invalid(format!(
            "dt = {dt:e} outside (0, 1/(2N^2)] for N = {}",
            config.n
        )));
    }
    let mut out = config.clone();
    explicit_step(config, dt, 0.0, None, true, &mut out)?;
    Ok(out)
}

/// Integrates on `[0, t_end]` with step `dt`; `params` supplies the model and
/// lattice, its own `beta` and `dt` are ignored.
pub fn run_pde(
    initial: SpinConfiguration,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    record_every: usize,
) -> Result<TrajectoryRecord> {
    if initial.len() != params.sites || initial.model != params.model {
        return Err(invalid("initial configuration does not match parameters"));
    }
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    check_dt(params, dt)?;
    let n_steps = step_count(t_end, dt)?;
    let mut rec = TrajectoryRecord::new("pde", params.model, dt);
    let mut cur = initial;
    let mut next = cur.clone();
    rec.push(0.0, &cur, cur.hamiltonian(), 1.0);
    for k in 1..=n_steps {
        explicit_step(&cur, dt, 0.0, None, true, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
        if should_record(k, n_steps, record_every) {
            rec.push(k as f64 * dt, &cur, cur.hamiltonian(), 1.0);
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_initial_condition, InitialKind, Model};

    fn setup(model: Model, n: usize) -> (ModelParams, SpinConfiguration) {
        let p = ModelParams::new(model, n, 2.0, f64::INFINITY, 1.0 / (n as f64).powi(4)).unwrap();
        let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
        (p, c)
    }

    #[test]
    fn aligned_is_fixed() {
        let (p, _) = setup(Model::Heisenberg, 10);
        let c = p.empty_config();
        assert_eq!(pde_step(&c, 1e-3).unwrap(), c);
    }

    #[test]
    fn unstable_step_rejected() {
        let (_, c) = setup(Model::Xy, 10);
        assert!(pde_step(&c, 0.006).is_err());
        assert!(pde_step(&c, 0.0).is_err());
    }

    #[test]
    fn energy_strictly_decreases() {
        for model in [Model::Xy, Model::Heisenberg] {
            let (_, mut c) = setup(model, 10);
            let mut h = c.dirichlet_energy();
            for _ in 0..500 {
                c = pde_step(&c, 1.0 / 400.0).unwrap();
                let h1 = c.dirichlet_energy();
                assert!(h1 < h, "{h1} >= {h}");
                assert!(c.max_norm_defect() <= 1e-12);
                h = h1;
            }
        }
    }

    #[test]
    fn zero_horizon() {
        let (p, c) = setup(Model::Xy, 10);
        let rec = run_pde(c.clone(), &p, 0.0, 1e-4, 1).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec.last().unwrap(), &c);
    }

    #[test]
    fn rotation_equivariance() {
        let (p, c) = setup(Model::Heisenberg, 10);
        let (a, b) = (0.7f64, -1.1f64);
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let rx = [[1.0, 0.0, 0.0], [0.0, b.cos(), -b.sin()], [0.0, b.sin(), b.cos()]];
        for rot in [rz, rx] {
            let x = run_pde(c.rotated(&rot).unwrap(), &p, 0.05, 1e-4, 0).unwrap();
            let y = run_pde(c.clone(), &p, 0.05, 1e-4, 0).unwrap().last().unwrap().rotated(&rot).unwrap();
            for (u, v) in x.last().unwrap().spins().iter().zip(y.spins()) {
                for k in 0..3 {
                    assert!((u[k] - v[k]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn relaxes_to_aligned() {
        let p = ModelParams::new(Model::Heisenberg, 6, 1.0, f64::INFINITY, 1e-3).unwrap();
        let c = make_initial_condition(InitialKind::NearEquilibrium, &p, Some(0.5));
        let rec = run_pde(c, &p, 3.0, 5e-3, 0).unwrap();
        assert!(rec.last().unwrap().hamiltonian() < 1e-6);
    }

    #[test]
    fn second_order_in_dx() {
        // compare lattices N and 2N at shared physical points
        let t = 1.0 / 64.0;
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let run = |n: usize| {
                let p = ModelParams::new(Model::Xy, n, 1.0, f64::INFINITY, 1.0).unwrap();
                let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, Some(0.6));
                let dt = 1.0 / (4.0 * 64.0 * 64.0);
                run_pde(c, &p, t, dt, 0).unwrap().last().unwrap().clone()
            };
            let (a, b) = (run(n), run(2 * n));
            let e: f64 = (0..a.len())
                .map(|i| {
                    let d = crate::sphere::sub(a.spin(i), b.spin(2 * i));
                    crate::sphere::norm_sq(&d)
                })
                .sum::<f64>()
                / a.len() as f64;
            errs.push(e.sqrt());
        }
        let s1 = (errs[0] / errs[1]).log2();
        let s2 = (errs[1] / errs[2]).log2();
        assert!((s1 - 2.0).abs() < 0.3 && (s2 - 2.0).abs() < 0.3, "{errs:?}");
    }
}
