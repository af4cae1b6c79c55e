//! Metropolis-Hastings chain with joint full-lattice proposals.
//!
//! Every site receives a tangent Gaussian kick of size `eps` at once and the
//! whole proposal is accepted or rejected with probability
//! `min(1, exp(-beta dH))`. The proposal noise of step `n` is the Brownian
//! increment of the shared path over `[n dt, (n+1) dt)`, rescaled to unit
//! variance; rejected steps still consume their increment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ModelParams, SpinConfiguration};
use crate::noise::{AcceptStream, BrownianLattice};
use crate::sphere::{self, SpinVector, Vec3};
use crate::trajectory::{should_record, TrajectoryRecord};

/// Accepted steps between full energy recomputations.
const ENERGY_REFRESH: u64 = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// `(sigma + eps nu) / |sigma + eps nu|`
    #[default]
    Normalized,
    /// Great-circle step `exp_sigma(eps nu)`.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub delta_h: f64,
    /// `min(1, exp(-beta dH))`
    pub alpha: f64,
}

/// Acceptance probability; `beta = 0` accepts everything.
pub fn acceptance_probability(beta: f64, delta_h: f64) -> f64 {
    if beta == 0.0 || delta_h <= 0.0 {
        1.0
    } else {
        (-beta * delta_h).exp()
    }
}

/// Builds the proposal for every site from standard-normal `noise`.
pub fn propose_into(
    config: &SpinConfiguration,
    eps: f64,
    kind: ProposalKind,
    noise: &[Vec3],
    out: &mut SpinConfiguration,
) -> Result<()> {
    debug_assert_eq!(noise.len(), config.len());
    for (i, (dst, w)) in out.spins_mut().iter_mut().zip(noise).enumerate() {
        let s = config.spin(i);
        let nu = sphere::project(s, w);
        let step = sphere::scale(eps, &nu);
        let v = match kind {
            ProposalKind::Exponential => sphere::exp_map_unchecked(s, &step),
            ProposalKind::Normalized => sphere::normalized_step_unchecked(s, &step)?,
        };
        *dst = SpinVector::from_unit_unchecked(v);
    }
    Ok(())
}

/// Chain state: configuration, counters and the running energy.
#[derive(Clone, Debug)]
pub struct MhState {
    pub config: SpinConfiguration,
    pub step: u64,
    pub accept_count: u64,
    pub proposal_kind: ProposalKind,
    energy: f64,
    accepts_since_refresh: u64,
    scratch: SpinConfiguration,
}

impl MhState {
    pub fn new(config: SpinConfiguration, proposal_kind: ProposalKind) -> Self {
        let energy = config.hamiltonian();
        Self {
            scratch: config.clone(),
            config,
            step: 0,
            accept_count: 0,
            proposal_kind,
            energy,
            accepts_since_refresh: 0,
        }
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn accept_rate(&self) -> f64 {
        if self.step == 0 {
            1.0
        } else {
            self.accept_count as f64 / self.step as f64
        }
    }

    /// The proposal the chain would make with standard-normal `noise`.
    pub fn propose(&self, eps: f64, noise: &[Vec3]) -> Result<SpinConfiguration> {
        let mut out = self.config.clone();
        propose_into(&self.config, eps, self.proposal_kind, noise, &mut out)?;
        Ok(out)
    }

    /// One accept/reject step given the proposal noise and the uniform `u`.
    pub fn step_with(&mut self, params: &ModelParams, noise: &[Vec3], u: f64) -> Result<StepOutcome> {
        propose_into(&self.config, params.eps, self.proposal_kind, noise, &mut self.scratch)?;
        let delta_h = self.config.delta_hamiltonian_unchecked(&self.scratch);
        if !delta_h.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite energy difference at step {}",
                self.step
            )));
        }
        let alpha = acceptance_probability(params.beta, delta_h);
        let accepted = u < alpha;
        if accepted {
            std::mem::swap(&mut self.config, &mut self.scratch);
            self.accept_count += 1;
            self.accepts_since_refresh += 1;
            if self.accepts_since_refresh >= ENERGY_REFRESH {
                self.energy = self.config.hamiltonian();
                self.accepts_since_refresh = 0;
            } else {
                self.energy += delta_h;
            }
        }
        self.step += 1;
        Ok(StepOutcome {
            accepted,
            delta_h,
            alpha,
        })
    }
}

/// A chain wired to its Brownian path and accept stream.
pub struct MhChain<'a> {
    pub state: MhState,
    params: ModelParams,
    path: &'a mut BrownianLattice,
    accept: AcceptStream,
    noise: Vec<Vec3>,
}

impl<'a> MhChain<'a> {
    /// `path` must have step `params.dt`; the accept stream is keyed by the
    /// path's `(seed, realization)`.
    pub fn new(
        initial: SpinConfiguration,
        params: &ModelParams,
        path: &'a mut BrownianLattice,
        kind: ProposalKind,
    ) -> Result<Self> {
        params.check_scaling()?;
        if path.sites() != initial.len() {
            return Err(crate::error::invalid(format!(
                "path has {} sites, configuration has {}",
                path.sites(),
                initial.len()
            )));
        }
        if (path.dt() - params.dt).abs() > 1e-12 * params.dt {
            return Err(crate::error::invalid(format!(
                "path step {} does not match dt {}",
                path.dt(),
                params.dt
            )));
        }
        let spec = *path.spec();
        Ok(Self {
            noise: vec![[0.0; 3]; initial.len()],
            state: MhState::new(initial, kind),
            params: *params,
            path,
            accept: AcceptStream::new(spec.seed, spec.realization),
        })
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let n = self.state.step as usize;
        self.path.fill_step(n, &mut self.noise)?;
        let s = 1.0 / self.params.dt.sqrt();
        for w in &mut self.noise {
            *w = sphere::scale(s, w);
        }
        let u = self.accept.uniform(n as u64);
        self.state.step_with(&self.params, &self.noise, u)
    }

    /// Runs `n_steps`, recording every `record_every` steps (and the last).
    pub fn run(&mut self, n_steps: usize, record_every: usize) -> Result<TrajectoryRecord> {
        let spec = *self.path.spec();
        let mut rec = TrajectoryRecord::new("mh", self.params.model, self.params.dt)
            .with_provenance(spec.seed, spec.realization);
        let t0 = self.state.step as f64 * self.params.dt;
        rec.push(t0, &self.state.config, self.state.energy(), self.state.accept_rate());
        for k in 1..=n_steps {
            self.step()?;
            rec.observe_energy(self.state.energy());
            if should_record(k, n_steps, record_every) {
                let t = self.state.step as f64 * self.params.dt;
                rec.push(t, &self.state.config, self.state.energy(), self.state.accept_rate());
            }
        }
        Ok(rec)
    }
}

/// Runs the chain from `initial` on `path`.
pub fn run_mh(
    initial: SpinConfiguration,
    params: &ModelParams,
    path: &mut BrownianLattice,
    n_steps: usize,
    record_every: usize,
    kind: ProposalKind,
) -> Result<TrajectoryRecord> {
    MhChain::new(initial, params, path, kind)?.run(n_steps, record_every)
}
