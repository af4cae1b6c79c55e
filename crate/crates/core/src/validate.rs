//! Statistical checks of the one-step M-H expansion, the sphere random walk,
//! the energy excursion bound and the proposal Taylor residuals.
//!
//! The one-step estimators replace the Bernoulli accept by its probability
//! (same expectation, lower variance) and subtract control variates whose
//! means are known in closed form, which leaves per-trial noise of the same
//! order as the residual being measured.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Model, ModelParams, SpinConfiguration};
use crate::metrics::fit_order;
use crate::mh::{acceptance_probability, propose_into, MhState, ProposalKind};
use crate::noise::{AcceptStream, CounterRng, PathSpec, StreamKey};
use crate::sphere::{self, Projection, SpinVector, Vec3};
use crate::trajectory::TrajectoryRecord;

pub const Z_LIMIT: f64 = 4.0;
pub const EXPANSION_SLOPE_MIN: f64 = 2.7;
/// Trials per work unit; fixed so reductions do not depend on thread count.
const CHUNK: usize = 2048;

/// Running sums of a fixed-width vector sample.
#[derive(Clone, Debug)]
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    fn new(width: usize) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; width],
            sumsq: vec![0.0; width],
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        for k in 0..self.sum.len() {
            self.sum[k] += o.sum[k];
            self.sumsq[k] += o.sumsq[k];
        }
    }

    #[inline]
    fn push(&mut self, k: usize, x: f64) {
        self.sum[k] += x;
        self.sumsq[k] += x * x;
    }

    fn mean(&self, k: usize) -> f64 {
        self.sum[k] / self.n as f64
    }

    fn se(&self, k: usize) -> f64 {
        let n = self.n as f64;
        let m = self.sum[k] / n;
        ((self.sumsq[k] / n - m * m).max(0.0) / (n - 1.0)).sqrt()
    }
}

fn chunked<F>(n_trials: usize, workers: usize, width: usize, f: F) -> Result<Vec<Moments>>
where
    F: Fn(usize, &mut [Moments]) -> Result<()> + Sync + Send,
{
    let n_chunks = n_trials.div_ceil(CHUNK);
    let run = |c: usize| -> Result<Vec<Moments>> {
        let mut acc = vec![Moments::new(width); 4];
        for t in c * CHUNK..((c + 1) * CHUNK).min(n_trials) {
            f(t, &mut acc)?;
            for a in acc.iter_mut() {
                a.n += 1;
            }
        }
        Ok(acc)
    };
    let parts: Vec<Vec<Moments>> = crate::experiment::map_realizations(n_chunks, workers, |c| run(c as usize))?;
    let mut total = vec![Moments::new(width); 4];
    for p in &parts {
        for (t, x) in total.iter_mut().zip(p) {
            t.merge(x);
        }
    }
    Ok(total)
}

/// Residual of one expansion at one proposal size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionLevel {
    pub eps: f64,
    /// Largest per-site residual norm from the control-variate estimator.
    pub max_residual: f64,
    pub per_site_residual: Vec<f64>,
    pub per_site_se: Vec<f64>,
    /// Plain (no control variate) residual norm and standard error per site.
    pub plain_residual: Vec<f64>,
    pub plain_se: Vec<f64>,
    /// `C eps^3` allowance added to the 4 sigma band (largest over sites).
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub kind: String,
    pub model: Model,
    pub beta: f64,
    pub n_trials: usize,
    pub levels: Vec<ExpansionLevel>,
    pub slope: f64,
    pub slope_min: f64,
    /// Largest per-site `C = r(eps_max) / eps_max^3`.
    pub prefactor: f64,
    /// Diffusion only: largest `sigma^T Cov sigma / eps^3` over sites and levels.
    pub normal_variance_ratio: Option<f64>,
    /// Diffusion only: largest `|z|` of the lag-1 cross covariance.
    pub lag1_max_z: Option<f64>,
    pub pass: bool,
}

/// Raw per-level statistics shared by the drift and diffusion reports.
struct LevelStats {
    eps: f64,
    sites: usize,
    drift: Moments,
    drift_plain: Moments,
    diff: Moments,
    diff_plain: Moments,
    predicted: Vec<Vec3>,
}

const SYM: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn predicted_drift(config: &SpinConfiguration, beta: f64, eps: f64) -> Vec<Vec3> {
    let half_m = 0.5 * config.model.sphere_dim() as f64;
    (0..config.len())
        .map(|i| {
            let s = config.spin(i);
            let g = sphere::project(s, &config.hamiltonian_gradient_at(i));
            sphere::sub(&sphere::scale(-0.5 * beta * eps * eps, &g), &sphere::scale(half_m * eps * eps, s))
        })
        .collect()
}

fn level_stats(
    config: &SpinConfiguration,
    beta: f64,
    eps: f64,
    level: u64,
    n_trials: usize,
    seed: u64,
    workers: usize,
) -> Result<LevelStats> {
    let m = config.len();
    let model = config.model;
    let grads: Vec<Vec3> = (0..m).map(|i| config.hamiltonian_gradient_at(i)).collect();
    let key = StreamKey::derive(seed, "expansion", level);
    let acc = chunked(n_trials, workers, 6 * m, |t, acc| {
        let mut rng = CounterRng::new(key);
        let mut w = vec![[0.0; 3]; m];
        rng.fill_vectors(model, t as u64, &mut w);
        let mut prop = config.clone();
        propose_into(config, eps, ProposalKind::Normalized, &w, &mut prop)?;
        let dh = config.delta_hamiltonian_unchecked(&prop);
        let alpha = acceptance_probability(beta, dh);
        let nus: Vec<Vec3> = (0..m).map(|i| sphere::project(config.spin(i), &w[i])).collect();
        let x: f64 = beta * eps * (0..m).map(|i| sphere::dot(&grads[i], &nus[i])).sum::<f64>();
        let xp = x.max(0.0);
        for i in 0..m {
            let s = config.spin(i);
            let d = sphere::sub(prop.spin(i), s);
            let nu = &nus[i];
            let nn = sphere::norm_sq(nu);
            for k in 0..3 {
                let ad = alpha * d[k];
                let cv = eps * nu[k] * (1.0 - xp) - 0.5 * eps * eps * nn * s[k];
                acc[0].push(3 * i + k, ad - cv);
                acc[1].push(3 * i + k, ad);
            }
            for (q, &(a, b)) in SYM.iter().enumerate() {
                let add = alpha * d[a] * d[b];
                acc[2].push(6 * i + q, add - eps * eps * nu[a] * nu[b]);
                acc[3].push(6 * i + q, add);
            }
        }
        Ok(())
    })?;
    let mut it = acc.into_iter();
    Ok(LevelStats {
        eps,
        sites: m,
        drift: it.next().unwrap(),
        drift_plain: it.next().unwrap(),
        diff: it.next().unwrap(),
        diff_plain: it.next().unwrap(),
        predicted: predicted_drift(config, beta, eps),
    })
}

fn vec_norm(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

fn finish_report(
    kind: &str,
    config: &SpinConfiguration,
    beta: f64,
    n_trials: usize,
    mut levels: Vec<ExpansionLevel>,
) -> Result<ExpansionReport> {
    let pts: Vec<(f64, f64)> = levels.iter().map(|l| (l.eps, l.max_residual)).collect();
    let fit = fit_order(&pts)?;
    // per-site constant C_i calibrated at the largest proposal size
    let top = levels
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.eps.total_cmp(&b.1.eps))
        .map(|(k, _)| k)
        .unwrap();
    let e0 = levels[top].eps;
    let consts: Vec<f64> = levels[top].per_site_residual.iter().map(|r| r / e0.powi(3)).collect();
    let prefactor = consts.iter().copied().fold(0.0, f64::max);
    for l in levels.iter_mut() {
        let e3 = l.eps.powi(3);
        l.allowance = prefactor * e3;
        l.pass = l
            .plain_residual
            .iter()
            .zip(&l.plain_se)
            .zip(&consts)
            .all(|((r, se), c)| *r <= Z_LIMIT * se + c * e3);
    }
    let pass = fit.slope >= EXPANSION_SLOPE_MIN && levels.iter().all(|l| l.pass);
    Ok(ExpansionReport {
        kind: kind.into(),
        model: config.model,
        beta,
        n_trials,
        levels,
        slope: fit.slope,
        slope_min: EXPANSION_SLOPE_MIN,
        prefactor,
        normal_variance_ratio: None,
        lag1_max_z: None,
        pass,
    })
}

fn check_expansion_inputs(config: &SpinConfiguration, beta: f64, eps_list: &[f64], n_trials: usize) -> Result<()> {
    if eps_list.len() < 3 || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(invalid("need at least 3 positive proposal sizes"));
    }
    if n_trials < 100 {
        return Err(invalid(format!("too few trials: {n_trials}")));
    }
    if !(beta >= 0.0) || beta.is_infinite() {
        return Err(invalid(format!("beta must be finite and non-negative, got {beta}")));
    }
    if config.max_norm_defect() > 1e-12 {
        return Err(invalid("configuration is not on the sphere"));
    }
    Ok(())
}

fn drift_level(st: &LevelStats) -> ExpansionLevel {
    let m = st.sites;
    let mut res = Vec::with_capacity(m);
    let mut se = Vec::with_capacity(m);
    let mut plain = Vec::with_capacity(m);
    let mut plain_se = Vec::with_capacity(m);
    for i in 0..m {
        res.push(vec_norm((0..3).map(|k| st.drift.mean(3 * i + k))));
        se.push(vec_norm((0..3).map(|k| st.drift.se(3 * i + k))));
        plain.push(vec_norm((0..3).map(|k| st.drift_plain.mean(3 * i + k) - st.predicted[i][k])));
        plain_se.push(vec_norm((0..3).map(|k| st.drift_plain.se(3 * i + k))));
    }
    ExpansionLevel {
        eps: st.eps,
        max_residual: res.iter().copied().fold(0.0, f64::max),
        per_site_residual: res,
        per_site_se: se,
        plain_residual: plain,
        plain_se,
        allowance: 0.0,
        pass: false,
    }
}

/// Monte Carlo one-step mean of the chain against
/// `-(1/2) beta eps^2 P(dH/dsigma_i) - (m/2) eps^2 sigma_i`.
pub fn validate_drift(
    config: &SpinConfiguration,
    beta: f64,
    eps_list: &[f64],
    n_trials: usize,
    seed: u64,
    workers: usize,
) -> Result<ExpansionReport> {
    check_expansion_inputs(config, beta, eps_list, n_trials)?;
    let levels = eps_list
        .iter()
        .enumerate()
        .map(|(l, &eps)| Ok(drift_level(&level_stats(config, beta, eps, l as u64, n_trials, seed, workers)?)))
        .collect::<Result<Vec<_>>>()?;
    finish_report("drift", config, beta, n_trials, levels)
}

fn diffusion_level(st: &LevelStats, config: &SpinConfiguration) -> (ExpansionLevel, f64) {
    let m = st.sites;
    let eps2 = st.eps * st.eps;
    let mut res = Vec::with_capacity(m);
    let mut se = Vec::with_capacity(m);
    let mut plain = Vec::with_capacity(m);
    let mut plain_se = Vec::with_capacity(m);
    let mut normal_ratio = 0.0f64;
    // ambient identity of the model's plane (XY lives in z = 0)
    let dims = if config.model == crate::lattice::Model::Xy { 2 } else { 3 };
    for i in 0..m {
        let mu: Vec<f64> = (0..3).map(|k| st.drift_plain.mean(3 * i + k)).collect();
        let s = config.spin(i);
        let mut r = [[0.0; 3]; 3];
        let mut c = [[0.0; 3]; 3];
        let (mut rn, mut sn, mut pn, mut psn) = (0.0, 0.0, 0.0, 0.0);
        for (q, &(a, b)) in SYM.iter().enumerate() {
            let w = if a == b { 1.0 } else { 2.0 };
            let mm = mu[a] * mu[b];
            let rv = st.diff.mean(6 * i + q) - mm;
            let cov = st.diff_plain.mean(6 * i + q) - mm;
            let target = eps2 * ((a == b && a < dims) as u8 as f64 - s[a] * s[b]);
            r[a][b] = rv;
            r[b][a] = rv;
            c[a][b] = cov;
            c[b][a] = cov;
            rn += w * rv * rv;
            sn += w * st.diff.se(6 * i + q).powi(2);
            pn += w * (cov - target).powi(2);
            psn += w * st.diff_plain.se(6 * i + q).powi(2);
        }
        let cs: f64 = (0..3).map(|a| (0..3).map(|b| s[a] * c[a][b] * s[b]).sum::<f64>()).sum();
        normal_ratio = normal_ratio.max(cs.abs() / st.eps.powi(3));
        res.push(rn.sqrt());
        se.push(sn.sqrt());
        plain.push(pn.sqrt());
        plain_se.push(psn.sqrt());
    }
    (
        ExpansionLevel {
            eps: st.eps,
            max_residual: res.iter().copied().fold(0.0, f64::max),
            per_site_residual: res,
            per_site_se: se,
            plain_residual: plain,
            plain_se,
            allowance: 0.0,
            pass: false,
        },
        normal_ratio,
    )
}

/// Largest `|z|` over sites of the covariance between the displacement of
/// one chain step and the centred displacement of the next.
///
/// Both steps draw their noise from a two-step Brownian path and their
/// uniforms from the accept stream, as a running chain does. The second step
/// is centred by an independent replicate proposal from the same state, so
/// the estimator has mean zero exactly when consecutive steps are
/// conditionally independent.
pub fn lag1_max_z(
    config: &SpinConfiguration,
    beta: f64,
    eps: f64,
    level: u64,
    n_trials: usize,
    seed: u64,
    workers: usize,
) -> Result<f64> {
    let m = config.len();
    let model = config.model;
    let params = ModelParams::with_eps(model, config.n, m as f64 / config.n as f64, beta, eps)?;
    let replicate = StreamKey::derive(seed, "lag1-replicate", level);
    let path_seed = seed ^ (level.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // width: per site, a (3), b (3), a.b (1)
    let acc = chunked(n_trials, workers, 7 * m, |t, acc| {
        let mut path = PathSpec::new(path_seed, model, m, 1.0, 2).realization(t as u64).generate()?;
        let mut accept = AcceptStream::new(path_seed, t as u64);
        let mut w = vec![[0.0; 3]; m];
        let mut state = MhState::new(config.clone(), ProposalKind::Normalized);
        path.fill_step(0, &mut w)?;
        state.step_with(&params, &w, accept.uniform(0))?;
        let s1 = state.config.clone();
        path.fill_step(1, &mut w)?;
        let mut p2 = s1.clone();
        propose_into(&s1, eps, ProposalKind::Normalized, &w, &mut p2)?;
        let a2 = acceptance_probability(beta, s1.delta_hamiltonian_unchecked(&p2));
        CounterRng::new(replicate).fill_vectors(model, t as u64, &mut w);
        let mut q2 = s1.clone();
        propose_into(&s1, eps, ProposalKind::Normalized, &w, &mut q2)?;
        let b2 = acceptance_probability(beta, s1.delta_hamiltonian_unchecked(&q2));
        for i in 0..m {
            let a = sphere::sub(s1.spin(i), config.spin(i));
            let d2 = sphere::sub(p2.spin(i), s1.spin(i));
            let e2 = sphere::sub(q2.spin(i), s1.spin(i));
            let b = sphere::sub(&sphere::scale(a2, &d2), &sphere::scale(b2, &e2));
            for k in 0..3 {
                acc[0].push(7 * i + k, a[k]);
                acc[0].push(7 * i + 3 + k, b[k]);
            }
            acc[0].push(7 * i + 6, sphere::dot(&a, &b));
        }
        Ok(())
    })?;
    let mo = &acc[0];
    let mut worst = 0.0f64;
    for i in 0..m {
        let cross: f64 = (0..3).map(|k| mo.mean(7 * i + k) * mo.mean(7 * i + 3 + k)).sum();
        let c = mo.mean(7 * i + 6) - cross;
        let se = mo.se(7 * i + 6);
        if se > 0.0 {
            worst = worst.max(c.abs() / se);
        }
    }
    Ok(worst)
}

/// One-step covariance against `eps^2 (I - sigma sigma^T)`, plus the
/// normal-direction variance and lag-1 independence checks.
pub fn validate_diffusion(
    config: &SpinConfiguration,
    beta: f64,
    eps_list: &[f64],
    n_trials: usize,
    seed: u64,
    workers: usize,
) -> Result<ExpansionReport> {
    check_expansion_inputs(config, beta, eps_list, n_trials)?;
    let mut levels = Vec::new();
    let mut normal_ratio = 0.0f64;
    let mut lag = 0.0f64;
    for (l, &eps) in eps_list.iter().enumerate() {
        let st = level_stats(config, beta, eps, l as u64, n_trials, seed, workers)?;
        let (lv, nr) = diffusion_level(&st, config);
        normal_ratio = normal_ratio.max(nr);
        levels.push(lv);
        lag = lag.max(lag1_max_z(config, beta, eps, l as u64, n_trials, seed, workers)?);
    }
    let mut rep = finish_report("diffusion", config, beta, n_trials, levels)?;
    rep.normal_variance_ratio = Some(normal_ratio);
    rep.lag1_max_z = Some(lag);
    rep.pass = rep.pass && normal_ratio < 1.0 && lag <= Z_LIMIT;
    Ok(rep)
}

/// Time-averaged moments of a single projected random walk on the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub model: Model,
    pub projection: Projection,
    pub n_steps: usize,
    pub dt: f64,
    pub n_batches: usize,
    pub mean: Vec3,
    pub mean_se: Vec3,
    /// Entries `(0,0), (1,1), (2,2), (0,1), (0,2), (1,2)` of `E[sigma sigma^T]`.
    pub second: [f64; 6],
    pub second_se: [f64; 6],
    pub target_diagonal: f64,
    pub max_z: f64,
    pub pass: bool,
}

pub const UNIFORMITY_BATCHES: usize = 50;

/// Runs `sigma <- normalize(sigma + Proj_sigma(sqrt(dt) w))` and tests the
/// time averages of `sigma` and `sigma sigma^T` against the uniform measure
/// with batch-means standard errors.
pub fn validate_sphere_uniformity(
    model: Model,
    projection: Projection,
    n_steps: usize,
    dt: f64,
    seed: u64,
) -> Result<UniformityReport> {
    if projection == Projection::Cross && model != Model::Heisenberg {
        return Err(Error::UnsupportedModel(model.name()));
    }
    if n_steps < UNIFORMITY_BATCHES * 20 || !(dt > 0.0) {
        return Err(invalid(format!("need at least {} steps and dt > 0", UNIFORMITY_BATCHES * 20)));
    }
    let comps = model.components();
    let domain = match projection {
        Projection::Orthogonal => "uniformity-orthogonal",
        Projection::Cross => "uniformity-cross",
    };
    let mut rng = CounterRng::new(StreamKey::derive(seed, domain, 0));
    let amp = dt.sqrt();
    let mut s: Vec3 = SpinVector::e1().into_array();
    let per_batch = n_steps / UNIFORMITY_BATCHES;
    let used = per_batch * UNIFORMITY_BATCHES;
    let mut batches = vec![[0.0f64; 9]; UNIFORMITY_BATCHES];
    let mut w = [[0.0; 3]];
    for n in 0..used {
        rng.fill_vectors(model, n as u64, &mut w);
        let kick = projection.apply(&s, &sphere::scale(amp, &w[0]));
        s = sphere::normalized_step_unchecked(&s, &kick)?;
        let b = &mut batches[n / per_batch];
        for k in 0..3 {
            b[k] += s[k];
        }
        for (q, &(a, c)) in SYM.iter().enumerate() {
            b[3 + q] += s[a] * s[c];
        }
    }
    let nb = UNIFORMITY_BATCHES as f64;
    let stat = |j: usize| -> (f64, f64) {
        let xs: Vec<f64> = batches.iter().map(|b| b[j] / per_batch as f64).collect();
        let m = xs.iter().sum::<f64>() / nb;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nb - 1.0);
        (m, (v / nb).sqrt())
    };
    let target_diag = 1.0 / comps as f64;
    let mut mean = [0.0; 3];
    let mut mean_se = [0.0; 3];
    let mut second = [0.0; 6];
    let mut second_se = [0.0; 6];
    let mut max_z = 0.0f64;
    for k in 0..3 {
        (mean[k], mean_se[k]) = stat(k);
        if k < comps {
            max_z = max_z.max(mean[k].abs() / mean_se[k]);
        }
    }
    for (q, &(a, c)) in SYM.iter().enumerate() {
        (second[q], second_se[q]) = stat(3 + q);
        if a < comps && c < comps {
            let target = if a == c { target_diag } else { 0.0 };
            max_z = max_z.max((second[q] - target).abs() / second_se[q]);
        }
    }
    Ok(UniformityReport {
        model,
        projection,
        n_steps: used,
        dt,
        n_batches: UNIFORMITY_BATCHES,
        mean,
        mean_se,
        second,
        second_se,
        target_diagonal: target_diag,
        max_z,
        pass: max_z <= Z_LIMIT,
    })
}

/// Largest `|difference| / combined sigma` over the tested moments of two
/// independent uniformity runs.
pub fn compare_uniformity(a: &UniformityReport, b: &UniformityReport) -> f64 {
    let comps = a.model.components();
    let mut z = 0.0f64;
    for k in 0..comps {
        z = z.max((a.mean[k] - b.mean[k]).abs() / a.mean_se[k].hypot(b.mean_se[k]));
    }
    for (q, &(x, y)) in SYM.iter().enumerate() {
        if x < comps && y < comps {
            z = z.max((a.second[q] - b.second[q]).abs() / a.second_se[q].hypot(b.second_se[q]));
        }
    }
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBoundReport {
    pub realizations: usize,
    pub b: f64,
    /// `4 J N eps^2 T`
    pub drift_allowance: f64,
    pub exceedances: usize,
    pub frequency: f64,
    /// `exp(-b N / eps^2)`
    pub theoretical_bound: f64,
    pub allowed_frequency: f64,
    /// Largest `sup H - H(0) - 4 J N eps^2 T` seen.
    pub max_excess: f64,
    pub pass: bool,
}

/// Counts runs whose energy ever exceeds `H(0) + 4 J N eps^2 T + b`.
pub fn energy_bound_monitor(records: &[TrajectoryRecord], params: &ModelParams, b: f64) -> Result<EnergyBoundReport> {
    if records.is_empty() {
        return Err(invalid("no trajectories to monitor"));
    }
    let n = params.n as f64;
    let eps2 = params.eps * params.eps;
    let mut exceed = 0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut allowance = 0.0;
    for r in records {
        let h0 = r.initial_energy().ok_or_else(|| invalid("empty trajectory"))?;
        let t = *r.times.last().unwrap();
        allowance = 4.0 * params.coupling * n * eps2 * t;
        let excess = r.energy_sup - h0 - allowance;
        max_excess = max_excess.max(excess);
        if excess > b {
            exceed += 1;
        }
    }
    let rr = records.len() as f64;
    let bound = if eps2 > 0.0 { (-b * n / eps2).exp() } else { 0.0 };
    let allowed = bound + Z_LIMIT * (bound * (1.0 - bound) / rr).sqrt();
    let freq = exceed as f64 / rr;
    Ok(EnergyBoundReport {
        realizations: records.len(),
        b,
        drift_allowance: allowance,
        exceedances: exceed,
        frequency: freq,
        theoretical_bound: bound,
        allowed_frequency: allowed,
        max_excess,
        pass: freq <= allowed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub eps: Vec<f64>,
    pub max_a: Vec<f64>,
    pub max_c: Vec<f64>,
    pub max_d: Vec<f64>,
    /// Fitted orders of `a`, `c`, `d`; expected 3, 2, 3.
    pub slopes: [f64; 3],
    pub tolerance: f64,
    pub pass: bool,
}

/// Maximal proposal residuals over `samples` random unit tangent directions
/// at random base points, for each step length in `eps_list`.
pub fn taylor_sweep(eps_list: &[f64], samples: usize, seed: u64) -> Result<TaylorReport> {
    let mut rng = CounterRng::new(StreamKey::derive(seed, "taylor", 0));
    let mut cases = Vec::with_capacity(samples);
    let mut g = [[0.0; 3]; 2];
    for k in 0..samples as u64 {
        rng.fill_vectors(Model::Heisenberg, k, &mut g);
        let s = SpinVector::normalize(g[0])?;
        let t = sphere::project(s.as_array(), &g[1]);
        let u = sphere::scale(1.0 / sphere::norm(&t), &t);
        cases.push((s, u));
    }
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for &e in eps_list {
        let mut mx = [0.0f64; 3];
        for (s, u) in &cases {
            let r = sphere::taylor_residuals(s, &sphere::scale(e, u))?;
            mx[0] = mx[0].max(sphere::norm(&r.a));
            mx[1] = mx[1].max(sphere::norm(&r.c));
            mx[2] = mx[2].max(sphere::norm(&r.d));
        }
        for k in 0..3 {
            out[k].push(mx[k]);
        }
    }
    let mut slopes = [0.0; 3];
    for k in 0..3 {
        let pts: Vec<(f64, f64)> = eps_list.iter().copied().zip(out[k].iter().copied()).collect();
        slopes[k] = fit_order(&pts)?.slope;
    }
    let tolerance = 0.1;
    let pass = (slopes[0] - 3.0).abs() <= tolerance
        && (slopes[1] - 2.0).abs() <= tolerance
        && (slopes[2] - 3.0).abs() <= tolerance;
    let [max_a, max_c, max_d] = out;
    Ok(TaylorReport {
        eps: eps_list.to_vec(),
        max_a,
        max_c,
        max_d,
        slopes,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_initial_condition, InitialKind};

    #[test]
    fn zero_beta_and_aligned_drift_is_pure_curvature() {
        for model in [Model::Xy, Model::Heisenberg] {
            let p = ModelParams::new(model, 5, 2.0, 1.0, 1e-3).unwrap();
            let out = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
            let aligned = p.empty_config();
            for (c, beta) in [(&out, 0.0), (&aligned, 1.0)] {
                let pred = predicted_drift(c, beta, 0.05);
                let half_m = 0.5 * model.sphere_dim() as f64;
                for i in 0..c.len() {
                    let want = sphere::scale(-half_m * 0.0025, c.spin(i));
                    assert!(sphere::norm(&sphere::sub(&pred[i], &want)) < 1e-15);
                }
                let st = level_stats(c, beta, 0.05, 0, 20_000, 3, 1).unwrap();
                let lv = drift_level(&st);
                for (r, se) in lv.plain_residual.iter().zip(&lv.plain_se) {
                    assert!(*r <= Z_LIMIT * se + 0.05f64.powi(3), "{r} {se}");
                }
            }
        }
    }

    #[test]
    fn zero_beta_covariance_is_projected_noise() {
        let p = ModelParams::new(Model::Heisenberg, 5, 2.0, 1.0, 1e-3).unwrap();
        let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
        let st = level_stats(&c, 0.0, 0.02, 0, 20_000, 4, 1).unwrap();
        let (lv, normal) = diffusion_level(&st, &c);
        assert!(normal < 1.0);
        for (r, se) in lv.plain_residual.iter().zip(&lv.plain_se) {
            assert!(*r <= Z_LIMIT * se + 0.02f64.powi(3), "{r} {se}");
        }
    }

    #[test]
    fn chunked_reduction_ignores_worker_count() {
        let p = ModelParams::new(Model::Xy, 5, 2.0, 1.0, 1e-3).unwrap();
        let c = make_initial_condition(InitialKind::OutOfEquilibrium, &p, None);
        let a = validate_drift(&c, 1.0, &[0.1, 0.05, 0.02], 5000, 9, 1).unwrap();
        let b = validate_drift(&c, 1.0, &[0.1, 0.05, 0.02], 5000, 9, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniformity_short_runs() {
        let r = validate_sphere_uniformity(Model::Xy, Projection::Orthogonal, 200_000, 0.05, 1).unwrap();
        assert!((r.target_diagonal - 0.5).abs() < 1e-15);
        assert_eq!(r.mean[2], 0.0);
        assert!(r.max_z < 6.0, "{r:?}");
        assert!(validate_sphere_uniformity(Model::Xy, Projection::Cross, 200_000, 0.05, 1).is_err());
        let s = validate_sphere_uniformity(Model::Heisenberg, Projection::Cross, 200_000, 0.05, 1).unwrap();
        assert!((s.target_diagonal - 1.0 / 3.0).abs() < 1e-15);
    }

    fn fake_record(h: &[f64]) -> TrajectoryRecord {
        let p = ModelParams::new(Model::Xy, 10, 2.0, 31.6, 1e-3).unwrap();
        let c = p.empty_config();
        let mut r = TrajectoryRecord::new("mh", Model::Xy, 1e-3);
        for (k, &e) in h.iter().enumerate() {
            r.push(k as f64 * 0.5, &c, e, 1.0);
        }
        r
    }

    #[test]
    fn energy_monitor_counts_and_is_monotone_in_b() {
        let p = ModelParams::new(Model::Xy, 10, 2.0, 31.6, 1e-3).unwrap();
        let recs = vec![fake_record(&[0.0, 0.5, 0.2]), fake_record(&[0.0, 2.0, 0.1]), fake_record(&[0.0, 0.1, 0.1])];
        let r = energy_bound_monitor(&recs, &p, 1.0).unwrap();
        assert!((r.drift_allowance - 4.0 * 10.0 * 10.0 * p.eps * p.eps * 1.0).abs() < 1e-12);
        assert_eq!(r.exceedances, 1);
        assert!(!r.pass);
        let mut last = usize::MAX;
        for b in [0.0, 0.3, 1.0, 3.0, 1e6] {
            let e = energy_bound_monitor(&recs, &p, b).unwrap().exceedances;
            assert!(e <= last);
            last = e;
        }
        let huge = energy_bound_monitor(&recs, &p, 1e6).unwrap();
        assert_eq!(huge.theoretical_bound, 0.0);
        assert!(huge.pass);
    }

    #[test]
    fn taylor_orders() {
        let r = taylor_sweep(&[1e-1, 1e-2, 1e-3], 200, 1).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
