//! Seedable Brownian increments shared by the Metropolis-Hastings chain and
//! the SDE integrator.
//!
//! Every random number is a pure function of `(key, stream, position)`: the
//! key comes from `(seed, domain, realization)`, the stream is the time step
//! and the position enumerates `(site, component)`. A ChaCha8 block cipher in
//! counter mode provides the uniforms, which are mapped to Gaussians through
//! the inverse normal CDF. Materialized and streaming paths therefore agree
//! bit-for-bit and realizations can run on any number of workers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::lattice::Model;
use crate::sphere::Vec3;

/// Paths larger than this many stored values are generated on the fly.
pub const DEFAULT_MEMORY_CAP: usize = 1 << 24;

/// 256-bit key for one independent random stream family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn derive(seed: u64, domain: &str, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"spinflow/v1\0");
        h.update(seed.to_le_bytes());
        h.update(domain.as_bytes());
        h.update([0u8]);
        h.update(index.to_le_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize());
        StreamKey(key)
    }
}

#[inline]
fn to_open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn standard_normal_from_uniform(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u)
}

/// Random-access source of uniforms and standard normals.
#[derive(Clone, Debug)]
pub struct CounterRng {
    rng: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(key: StreamKey) -> Self {
        Self {
            rng: ChaCha8Rng::from_seed(key.0),
        }
    }

    #[inline]
    fn seek(&mut self, stream: u64, position: u64) {
        self.rng.set_stream(stream);
        self.rng.set_word_pos(2 * position as u128);
    }

    /// Uniform in (0, 1) at `(stream, position)`.
    pub fn uniform(&mut self, stream: u64, position: u64) -> f64 {
        self.seek(stream, position);
        to_open_unit(self.rng.next_u64())
    }

    /// Standard normals at positions `start..start + out.len()` of `stream`.
    pub fn fill_normal(&mut self, stream: u64, start: u64, out: &mut [f64]) {
        self.seek(stream, start);
        for z in out.iter_mut() {
            *z = standard_normal_from_uniform(to_open_unit(self.rng.next_u64()));
        }
    }

    /// One Gaussian vector per site with `model.components()` live entries;
    /// XY vectors keep `z = 0`.
    pub fn fill_vectors(&mut self, model: Model, stream: u64, out: &mut [Vec3]) {
        let comps = model.components();
        self.seek(stream, 0);
        for v in out.iter_mut() {
            for c in v.iter_mut().take(comps) {
                *c = standard_normal_from_uniform(to_open_unit(self.rng.next_u64()));
            }
            if comps == 2 {
                v[2] = 0.0;
            }
        }
    }
}

/// Identifies one Brownian path: `(seed, realization)` plus its shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSpec {
    pub seed: u64,
    pub realization: u64,
    pub model: Model,
    pub sites: usize,
    pub dt: f64,
    pub n_steps: usize,
}

impl PathSpec {
    pub fn new(seed: u64, model: Model, sites: usize, dt: f64, n_steps: usize) -> Self {
        Self {
            seed,
            realization: 0,
            model,
            sites,
            dt,
            n_steps,
        }
    }

    pub fn realization(mut self, r: u64) -> Self {
        self.realization = r;
        self
    }

    pub fn generate(self) -> Result<BrownianLattice> {
        self.generate_with_cap(DEFAULT_MEMORY_CAP)
    }

    /// Materializes the increments unless `n_steps * sites * (m+1)` exceeds
    /// `cap`, in which case they are regenerated on demand.
    pub fn generate_with_cap(self, cap: usize) -> Result<BrownianLattice> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("reference step must be positive, got {}", self.dt)));
        }
        if self.sites == 0 {
            return Err(invalid("path needs at least one site"));
        }
        let mut lattice = BrownianLattice {
            spec: self,
            source: CounterRng::new(StreamKey::derive(self.seed, "brownian", self.realization)),
            factors: Vec::new(),
            dt: self.dt,
            n_steps: self.n_steps,
            data: None,
        };
        let values = self
            .n_steps
            .saturating_mul(self.sites)
            .saturating_mul(self.model.components());
        if values <= cap {
            let mut data = vec![[0.0; 3]; self.n_steps * self.sites];
            for (n, chunk) in data.chunks_exact_mut(self.sites).enumerate() {
                lattice.base_step(n as u64, chunk);
            }
            lattice.data = Some(data);
        }
        Ok(lattice)
    }
}

/// Per-site, per-component Wiener increments on a uniform time grid.
#[derive(Clone, Debug)]
pub struct BrownianLattice {
    spec: PathSpec,
    source: CounterRng,
    /// Coarsening factors applied on top of the generated resolution.
    factors: Vec<usize>,
    dt: f64,
    n_steps: usize,
    /// `n_steps * sites` increments, row-major by step; `None` when streaming.
    data: Option<Vec<Vec3>>,
}

impl PartialEq for BrownianLattice {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.factors == other.factors
    }
}

impl BrownianLattice {
    pub fn spec(&self) -> &PathSpec {
        &self.spec
    }

    pub fn model(&self) -> Model {
        self.spec.model
    }

    pub fn sites(&self) -> usize {
        self.spec.sites
    }

    /// Duration of one increment.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_streaming(&self) -> bool {
        self.data.is_none()
    }

    fn base_step(&mut self, n: u64, out: &mut [Vec3]) {
        self.source.fill_vectors(self.spec.model, n, out);
        let s = self.spec.dt.sqrt();
        for v in out.iter_mut() {
            *v = [s * v[0], s * v[1], s * v[2]];
        }
    }

    /// Increment of step `n` at `level` coarsening factors deep, accumulated
    /// into `out` with the same summation order as a materialized coarsen.
    fn streamed_step(&mut self, level: usize, n: usize, out: &mut [Vec3]) {
        if level == 0 {
            self.base_step(n as u64, out);
            return;
        }
        let f = self.factors[level - 1];
        let mut tmp = vec![[0.0; 3]; out.len()];
        out.iter_mut().for_each(|v| *v = [0.0; 3]);
        for k in 0..f {
            self.streamed_step(level - 1, n * f + k, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o = [o[0] + t[0], o[1] + t[1], o[2] + t[2]];
            }
        }
    }

    /// Writes the increments of step `n` for every site into `out`.
    pub fn fill_step(&mut self, n: usize, out: &mut [Vec3]) -> Result<()> {
        if n >= self.n_steps {
            return Err(invalid(format!("step {n} out of range ({} steps)", self.n_steps)));
        }
        if out.len() != self.spec.sites {
            return Err(invalid(format!(
                "buffer holds {} sites, path has {}",
                out.len(),
                self.spec.sites
            )));
        }
        match &self.data {
            Some(d) => out.copy_from_slice(&d[n * self.spec.sites..(n + 1) * self.spec.sites]),
            None => self.streamed_step(self.factors.len(), n, out),
        }
        Ok(())
    }

    /// Increment `W_i((n+1) dt) - W_i(n dt)`.
    pub fn increment(&mut self, n: usize, site: usize) -> Result<Vec3> {
        if site >= self.spec.sites {
            return Err(invalid(format!("site {site} out of range")));
        }
        if let Some(d) = &self.data {
            if n >= self.n_steps {
                return Err(invalid(format!("step {n} out of range ({} steps)", self.n_steps)));
            }
            return Ok(d[n * self.spec.sites + site]);
        }
        let mut buf = vec![[0.0; 3]; self.spec.sites];
        self.fill_step(n, &mut buf)?;
        Ok(buf[site])
    }

    /// Standard-normal proposal noise `w_i^n = dW / sqrt(dt)`, so that
    /// `eps * w = sqrt(N / beta) * dW` when `beta eps^2 = N dt`.
    pub fn mh_noise(&mut self, n: usize, site: usize) -> Result<Vec3> {
        let s = 1.0 / self.dt.sqrt();
        let v = self.increment(n, site)?;
        Ok([s * v[0], s * v[1], s * v[2]])
    }

    /// The same path seen at `factor` times the step size.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianLattice> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(invalid(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.n_steps
            )));
        }
        let sites = self.spec.sites;
        let n_steps = self.n_steps / factor;
        let data = self.data.as_ref().map(|d| {
            let mut out = vec![[0.0; 3]; n_steps * sites];
            for n in 0..n_steps {
                let row = &mut out[n * sites..(n + 1) * sites];
                for k in 0..factor {
                    let src = &d[(n * factor + k) * sites..(n * factor + k + 1) * sites];
                    for (o, t) in row.iter_mut().zip(src) {
                        *o = [o[0] + t[0], o[1] + t[1], o[2] + t[2]];
                    }
                }
            }
            out
        });
        let mut factors = self.factors.clone();
        factors.push(factor);
        Ok(BrownianLattice {
            spec: self.spec,
            source: self.source.clone(),
            factors,
            dt: self.dt * factor as f64,
            n_steps,
            data,
        })
    }
}

/// Uniform stream for the Metropolis accept/reject draws, keyed separately
/// from the proposal noise.
#[derive(Clone, Debug)]
pub struct AcceptStream {
    rng: CounterRng,
}

impl AcceptStream {
    pub fn new(seed: u64, realization: u64) -> Self {
        Self {
            rng: CounterRng::new(StreamKey::derive(seed, "accept", realization)),
        }
    }

    pub fn uniform(&mut self, step: u64) -> f64 {
        self.rng.uniform(step, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn flat(p: &mut BrownianLattice, comp: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut buf = vec![[0.0; 3]; p.sites()];
        for n in 0..p.n_steps() {
            p.fill_step(n, &mut buf).unwrap();
            out.extend(buf.iter().map(|v| v[comp]));
        }
        out
    }

    #[test]
    fn same_seed_same_path() {
        let spec = PathSpec::new(7, Model::Heisenberg, 5, 1e-3, 50);
        let mut a = spec.generate().unwrap();
        let mut b = spec.generate().unwrap();
        assert_eq!(flat(&mut a, 0), flat(&mut b, 0));
        let mut c = PathSpec::new(8, Model::Heisenberg, 5, 1e-3, 50).generate().unwrap();
        assert_ne!(flat(&mut a, 0), flat(&mut c, 0));
        let mut d = spec.realization(1).generate().unwrap();
        assert_ne!(flat(&mut a, 0), flat(&mut d, 0));
    }

    #[test]
    fn streaming_matches_materialized_bitwise() {
        let spec = PathSpec::new(3, Model::Heisenberg, 4, 1e-4, 64);
        let full = spec.generate().unwrap();
        let lazy = spec.generate_with_cap(0).unwrap();
        assert!(lazy.is_streaming() && !full.is_streaming());
        for (mut a, mut b) in [
            (full.clone(), lazy.clone()),
            (full.coarsen(4).unwrap(), lazy.coarsen(4).unwrap()),
            (
                full.coarsen(2).unwrap().coarsen(8).unwrap(),
                lazy.coarsen(2).unwrap().coarsen(8).unwrap(),
            ),
        ] {
            for c in 0..3 {
                let (x, y) = (flat(&mut a, c), flat(&mut b, c));
                assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn xy_paths_are_planar() {
        let mut p = PathSpec::new(1, Model::Xy, 6, 1e-2, 10).generate().unwrap();
        assert!(flat(&mut p, 2).iter().all(|&z| z == 0.0));
        assert!(flat(&mut p, 1).iter().any(|&z| z != 0.0));
    }

    #[test]
    fn pooled_variance_matches_dt() {
        let dt = 1e-4;
        let mut p = PathSpec::new(11, Model::Heisenberg, 10, dt, 33_334).generate().unwrap();
        let xs: Vec<f64> = (0..3).flat_map(|c| flat(&mut p, c)).collect();
        assert!(xs.len() >= 1_000_000);
        let m = stats::mean(&xs);
        let v = stats::variance(&xs);
        assert!(m.abs() < 4.0 * (dt / xs.len() as f64).sqrt(), "mean {m}");
        assert!((0.98e-4..=1.02e-4).contains(&v), "variance {v}");
    }

    #[test]
    fn sites_are_uncorrelated() {
        let n_steps = 20_000;
        let mut p = PathSpec::new(5, Model::Xy, 3, 1.0, n_steps).generate().unwrap();
        let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n_steps)).collect();
        let mut buf = vec![[0.0; 3]; 3];
        for n in 0..n_steps {
            p.fill_step(n, &mut buf).unwrap();
            for (col, v) in cols.iter_mut().zip(&buf) {
                col.push(v[0]);
            }
        }
        let bound = 4.0 / (n_steps as f64).sqrt();
        assert!(stats::correlation(&cols[0], &cols[1]).abs() < bound);
        assert!(stats::correlation(&cols[1], &cols[2]).abs() < bound);
    }

    #[test]
    fn coarsening_preserves_path() {
        let mut fine = PathSpec::new(9, Model::Heisenberg, 4, 1e-3, 4096).generate().unwrap();
        let mut same = fine.coarsen(1).unwrap();
        assert_eq!(flat(&mut fine, 1), flat(&mut same, 1));

        let mut coarse = fine.coarsen(8).unwrap();
        assert_eq!(coarse.n_steps(), 512);
        assert!((coarse.dt() - 8e-3).abs() < 1e-18);
        for c in 0..3 {
            let total_f: f64 = flat(&mut fine, c).iter().sum();
            let total_c: f64 = flat(&mut coarse, c).iter().sum();
            assert!((total_f - total_c).abs() < 1e-12);
        }
        let xs: Vec<f64> = (0..3).flat_map(|c| flat(&mut coarse, c)).collect();
        let v = stats::variance(&xs);
        let se = 8e-3 * (2.0 / xs.len() as f64).sqrt();
        assert!((v - 8e-3).abs() < 4.0 * se, "variance {v}");
        assert!(fine.coarsen(3).is_err());
        assert!(fine.coarsen(0).is_err());
    }

    #[test]
    fn mh_noise_is_scaled_increment() {
        let dt = 2.5e-4;
        let mut p = PathSpec::new(2, Model::Heisenberg, 4, dt, 10).generate().unwrap();
        let w = p.mh_noise(3, 2).unwrap();
        let dw = p.increment(3, 2).unwrap();
        // eps w = sqrt(N / beta) dW whenever beta eps^2 = N dt
        let (n, beta) = (10.0, 31.6);
        let eps = (n * dt / beta).sqrt();
        let amp = (n / beta).sqrt();
        for c in 0..3 {
            assert!((eps * w[c] - amp * dw[c]).abs() <= 1e-15 * dw[c].abs().max(1e-300) * 10.0);
        }
        assert_eq!(p.mh_noise(3, 2).unwrap(), w);
        assert!(p.mh_noise(10, 0).is_err());
        assert!(p.mh_noise(0, 4).is_err());
    }

    #[test]
    fn mh_noise_unit_variance() {
        let mut p = PathSpec::new(4, Model::Heisenberg, 10, 0.37, 10_000).generate().unwrap();
        let mut xs = Vec::new();
        for n in 0..p.n_steps() {
            for i in 0..10 {
                xs.push(p.mh_noise(n, i).unwrap()[n % 3]);
            }
        }
        let v = stats::variance(&xs);
        assert!((v - 1.0).abs() < 4.0 * (2.0 / xs.len() as f64).sqrt(), "variance {v}");
    }

    #[test]
    fn accept_stream_is_deterministic_and_distinct() {
        let mut a = AcceptStream::new(1, 0);
        let mut b = AcceptStream::new(1, 0);
        let xs: Vec<f64> = (0..100).map(|k| a.uniform(k)).collect();
        let ys: Vec<f64> = (0..100).map(|k| b.uniform(k)).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|&u| u > 0.0 && u < 1.0));
        let mut p = PathSpec::new(1, Model::Xy, 1, 1.0, 100).generate().unwrap();
        let zs: Vec<f64> = (0..100).map(|n| p.increment(n, 0).unwrap()[0]).collect();
        assert!(stats::correlation(&xs, &zs).abs() < 0.5);
    }
}
