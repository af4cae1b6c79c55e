//! Periodic 1-D spin chains: parameters, configurations, energy and the
//! discrete differential operators.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sphere::{self, SpinVector, Vec3};
use crate::stats::CompensatedSum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Spins on S^1.
    Xy,
    /// Spins on S^2.
    Heisenberg,
}

impl Model {
    /// Dimension `m` of the sphere S^m.
    pub fn sphere_dim(self) -> usize {
        match self {
            Model::Xy => 1,
            Model::Heisenberg => 2,
        }
    }

    /// Number of Cartesian components, `m + 1`.
    pub fn components(self) -> usize {
        self.sphere_dim() + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Xy => "XY",
            Model::Heisenberg => "Heisenberg",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(Model::Xy),
            "heisenberg" => Ok(Model::Heisenberg),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Resolved simulation parameters.
///
/// `eps` and `dt` are tied together by `beta * eps^2 = N * dt`; only one of
/// them is ever supplied by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model: Model,
    /// Inverse lattice spacing.
    pub n: usize,
    /// Chain length.
    pub length: f64,
    /// Number of sites, `round(length * n)`.
    pub sites: usize,
    /// Coupling `J = N` in one dimension.
    pub coupling: f64,
    /// Inverse temperature; `f64::INFINITY` switches the noise off.
    pub beta: f64,
    pub gamma: Option<f64>,
    pub dt: f64,
    /// Metropolis-Hastings proposal size.
    pub eps: f64,
}

fn site_count(n: usize, length: f64) -> Result<usize> {
    if n == 0 {
        return Err(invalid("N must be positive"));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(invalid(format!("lattice length must be positive, got {length}")));
    }
    let m = (length * n as f64).round();
    if m < 3.0 {
        return Err(invalid(format!("lattice needs at least 3 sites, got {m}")));
    }
    Ok(m as usize)
}

impl ModelParams {
    /// Parameters from an explicit time step; `eps = sqrt(N dt / beta)`.
    pub fn new(model: Model, n: usize, length: f64, beta: f64, dt: f64) -> Result<Self> {
        let sites = site_count(n, length)?;
        if !(beta > 0.0) {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        let eps = if beta.is_infinite() {
            0.0
        } else {
            (n as f64 * dt / beta).sqrt()
        };
        Ok(Self {
            model,
            n,
            length,
            sites,
            coupling: n as f64,
            beta,
            gamma: None,
            dt,
            eps,
        })
    }

    /// `beta = N^gamma`.
    pub fn with_gamma(model: Model, n: usize, length: f64, gamma: f64, dt: f64) -> Result<Self> {
        let mut p = Self::new(model, n, length, (n as f64).powf(gamma), dt)?;
        p.gamma = Some(gamma);
        Ok(p)
    }

    /// Parameters from an explicit proposal size; `dt = beta eps^2 / N`.
    /// `beta = 0` is allowed here (every proposal is accepted, `dt = 0`).
    pub fn with_eps(model: Model, n: usize, length: f64, beta: f64, eps: f64) -> Result<Self> {
        let sites = site_count(n, length)?;
        if !(beta >= 0.0) || beta.is_infinite() {
            return Err(invalid(format!("beta must be finite and non-negative, got {beta}")));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(invalid(format!("eps must be positive, got {eps}")));
        }
        Ok(Self {
            model,
            n,
            length,
            sites,
            coupling: n as f64,
            beta,
            gamma: None,
            dt: beta * eps * eps / n as f64,
            eps,
        })
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `sqrt(N / beta)`, the SDE noise amplitude.
    pub fn noise_amplitude(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            (self.n as f64 / self.beta).sqrt()
        }
    }

    /// Coefficient of the radial Ito correction, `(m / 2) N / beta`.
    ///
    /// For S^2 this is the `N / beta` of the Heisenberg equations; on S^1
    /// the projected noise has one tangent direction and the correction
    /// halves.
    pub fn ito_coefficient(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            0.5 * self.model.sphere_dim() as f64 * self.n as f64 / self.beta
        }
    }

    /// Checks `|beta eps^2 - N dt| <= 1e-12 N dt`.
    pub fn check_scaling(&self) -> Result<()> {
        if self.beta.is_infinite() {
            return Ok(());
        }
        let lhs = self.beta * self.eps * self.eps;
        let rhs = self.n as f64 * self.dt;
        if (lhs - rhs).abs() > 1e-12 * rhs.max(f64::MIN_POSITIVE) && rhs > 0.0 {
            return Err(invalid(format!("beta eps^2 = {lhs} but N dt = {rhs}")));
        }
        Ok(())
    }

    pub fn empty_config(&self) -> SpinConfiguration {
        SpinConfiguration {
            model: self.model,
            n: self.n,
            spins: vec![SpinVector::e1(); self.sites],
        }
    }
}

/// Periodic chain of unit spins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinConfiguration {
    pub model: Model,
    /// Inverse lattice spacing used by the difference operators.
    pub n: usize,
    spins: Vec<SpinVector>,
}

impl SpinConfiguration {
    pub fn new(model: Model, n: usize, spins: Vec<SpinVector>) -> Result<Self> {
        if spins.len() < 3 {
            return Err(invalid(format!("need at least 3 sites, got {}", spins.len())));
        }
        if n == 0 {
            return Err(invalid("N must be positive"));
        }
        for (i, s) in spins.iter().enumerate() {
            SpinVector::new(*s.as_array())
                .map_err(|_| invalid(format!("site {i} is not a unit vector")))?;
            if model == Model::Xy && s[2] != 0.0 {
                return Err(invalid(format!("XY site {i} has a z component")));
            }
        }
        Ok(Self { model, n, spins })
    }

    pub(crate) fn from_raw_unchecked(model: Model, n: usize, spins: Vec<SpinVector>) -> Self {
        Self { model, n, spins }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self) -> &[SpinVector] {
        &self.spins
    }

    pub(crate) fn spins_mut(&mut self) -> &mut [SpinVector] {
        &mut self.spins
    }

    #[inline]
    pub fn spin(&self, i: usize) -> &Vec3 {
        self.spins[i].as_array()
    }

    #[inline]
    fn next(&self, i: usize) -> usize {
        if i + 1 == self.spins.len() {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.spins.len() - 1
        } else {
            i - 1
        }
    }

    pub fn coupling(&self) -> f64 {
        self.n as f64
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.spins.len() {
            return Err(invalid(format!(
                "site {i} out of range for {} sites",
                self.spins.len()
            )));
        }
        Ok(())
    }

    fn check_same_lattice(&self, other: &Self) -> Result<()> {
        if self.spins.len() != other.spins.len() || self.n != other.n || self.model != other.model
        {
            return Err(invalid(format!(
                "lattice mismatch: {} sites (N={}) vs {} sites (N={})",
                self.spins.len(),
                self.n,
                other.spins.len(),
                other.n
            )));
        }
        Ok(())
    }

    /// `J * sum_i |sigma_i - sigma_{i+1}|^2` over the periodic bonds.
    pub fn hamiltonian(&self) -> f64 {
        let sum: CompensatedSum = (0..self.len())
            .map(|i| sphere::norm_sq(&sphere::sub(self.spin(i), self.spin(self.next(i)))))
            .collect();
        self.coupling() * sum.value()
    }

    #[inline]
    pub(crate) fn laplacian_at(&self, i: usize) -> Vec3 {
        let n2 = (self.n * self.n) as f64;
        let (a, b, c) = (self.spin(self.prev(i)), self.spin(i), self.spin(self.next(i)));
        [
            n2 * (c[0] + a[0] - 2.0 * b[0]),
            n2 * (c[1] + a[1] - 2.0 * b[1]),
            n2 * (c[2] + a[2] - 2.0 * b[2]),
        ]
    }

    /// `N^2 (sigma_{i+1} + sigma_{i-1} - 2 sigma_i)`.
    pub fn discrete_laplacian(&self, i: usize) -> Result<Vec3> {
        self.check_index(i)?;
        Ok(self.laplacian_at(i))
    }

    /// `N (sigma_{i+1} - sigma_i)`.
    pub fn forward_gradient(&self, i: usize) -> Result<Vec3> {
        self.check_index(i)?;
        let d = sphere::sub(self.spin(self.next(i)), self.spin(i));
        Ok(sphere::scale(self.n as f64, &d))
    }

    /// `N (sigma_i - sigma_{i-1})`.
    pub fn backward_gradient(&self, i: usize) -> Result<Vec3> {
        self.check_index(i)?;
        let d = sphere::sub(self.spin(i), self.spin(self.prev(i)));
        Ok(sphere::scale(self.n as f64, &d))
    }

    #[inline]
    pub(crate) fn hamiltonian_gradient_at(&self, i: usize) -> Vec3 {
        let k = 2.0 * self.coupling();
        let (a, b, c) = (self.spin(self.prev(i)), self.spin(i), self.spin(self.next(i)));
        [
            k * (2.0 * b[0] - c[0] - a[0]),
            k * (2.0 * b[1] - c[1] - a[1]),
            k * (2.0 * b[2] - c[2] - a[2]),
        ]
    }

    /// `dH/dsigma_i = 2J (2 sigma_i - sigma_{i+1} - sigma_{i-1})`.
    pub fn hamiltonian_gradient(&self, i: usize) -> Result<Vec3> {
        self.check_index(i)?;
        Ok(self.hamiltonian_gradient_at(i))
    }

    /// `H(proposal) - H(self)` from the exact quadratic expansion: the
    /// gradient term, plus `2J sum |d_j|^2`, minus
    /// `J sum d_j . (d_{j+1} + d_{j-1})` with `d = proposal - self`.
    pub fn delta_hamiltonian(&self, proposal: &SpinConfiguration) -> Result<f64> {
        self.check_same_lattice(proposal)?;
        Ok(self.delta_hamiltonian_unchecked(proposal))
    }

    pub(crate) fn delta_hamiltonian_unchecked(&self, proposal: &SpinConfiguration) -> f64 {
        let m = self.len();
        let j = self.coupling();
        let delta = |k: usize| sphere::sub(proposal.spin(k), self.spin(k));
        let mut linear = CompensatedSum::new();
        let mut quad = CompensatedSum::new();
        let mut d_prev = delta(m - 1);
        let mut d_cur = delta(0);
        for i in 0..m {
            let d_next = delta(self.next(i));
            let g = self.hamiltonian_gradient_at(i);
            linear.add(sphere::dot(&g, &d_cur));
            quad.add(2.0 * sphere::norm_sq(&d_cur) - sphere::dot(&d_cur, &sphere::add(&d_next, &d_prev)));
            d_prev = d_cur;
            d_cur = d_next;
        }
        linear.value() + j * quad.value()
    }

    /// `sum_i |grad^+ sigma_i|^2 dx`; identical to the Hamiltonian when `J = N`.
    pub fn dirichlet_energy(&self) -> f64 {
        let n = self.n as f64;
        let sum: CompensatedSum = (0..self.len())
            .map(|i| {
                let d = sphere::sub(self.spin(self.next(i)), self.spin(i));
                sphere::norm_sq(&sphere::scale(n, &d))
            })
            .collect();
        sum.value() / n
    }

    /// Applies the orthogonal matrix `rot` to every spin.
    pub fn rotated(&self, rot: &[[f64; 3]; 3]) -> Result<SpinConfiguration> {
        let spins = self
            .spins
            .iter()
            .map(|s| {
                let v = s.as_array();
                let r = [sphere::dot(&rot[0], v), sphere::dot(&rot[1], v), sphere::dot(&rot[2], v)];
                SpinVector::normalize(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpinConfiguration { model: self.model, n: self.n, spins })
    }

    /// Largest deviation of any spin norm from 1.
    pub fn max_norm_defect(&self) -> f64 {
        self.spins
            .iter()
            .map(|s| (s.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the `site,x,y[,z]` snapshot CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let comps = self.model.components();
        let mut out = String::from(if comps == 2 { "site,x,y\n" } else { "site,x,y,z\n" });
        for (i, s) in self.spins.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for c in 0..comps {
                write!(out, ",{}", fmt_f64(s[c])).unwrap();
            }
            out.push('\n');
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(model: Model, n: usize, r: R) -> Result<Self> {
        let comps = model.components();
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| invalid("empty snapshot file"))??;
        let expected = if comps == 2 { "site,x,y" } else { "site,x,y,z" };
        if header.trim() != expected {
            return Err(invalid(format!("bad header `{header}`, expected `{expected}`")));
        }
        let mut spins = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != comps + 1 {
                return Err(invalid(format!("row {row}: expected {} fields", comps + 1)));
            }
            let site: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| invalid(format!("row {row}: bad site index")))?;
            if site != spins.len() {
                return Err(invalid(format!("row {row}: site {site} out of order")));
            }
            let mut v = [0.0; 3];
            for c in 0..comps {
                v[c] = fields[c + 1]
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("row {row}: bad number")))?;
            }
            spins.push(SpinVector::new(v)?);
        }
        SpinConfiguration::new(model, n, spins)
    }
}

/// Full-precision (17 significant digit) float formatting used by every CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Aligned,
    NearEquilibrium,
    OutOfEquilibrium,
}

impl InitialKind {
    pub fn default_amplitude(self) -> f64 {
        match self {
            InitialKind::Aligned => 0.0,
            InitialKind::NearEquilibrium => 0.1,
            InitialKind::OutOfEquilibrium => FRAC_PI_2,
        }
    }
}

impl std::str::FromStr for InitialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "aligned" => Ok(InitialKind::Aligned),
            "near_equilibrium" | "near" => Ok(InitialKind::NearEquilibrium),
            "out_of_equilibrium" | "out" => Ok(InitialKind::OutOfEquilibrium),
            other => Err(Error::Config(format!("unknown initial condition `{other}`"))),
        }
    }
}

/// Smooth periodic sine profile in angle coordinates.
///
/// XY: `theta_i = A sin(2 pi x_i / L)`. Heisenberg: polar angle
/// `pi/2 + A sin(2 pi x_i / L)`, azimuth `A cos(2 pi x_i / L)`.
pub fn make_initial_condition(
    kind: InitialKind,
    params: &ModelParams,
    amplitude: Option<f64>,
) -> SpinConfiguration {
    let amp = amplitude.unwrap_or_else(|| kind.default_amplitude());
    let spins = (0..params.sites)
        .map(|i| {
            if kind == InitialKind::Aligned {
                return SpinVector::e1();
            }
            let phase = 2.0 * PI * i as f64 * params.dx() / params.length;
            match params.model {
                Model::Xy => SpinVector::planar(amp * phase.sin()),
                Model::Heisenberg => {
                    SpinVector::spherical(FRAC_PI_2 + amp * phase.sin(), amp * phase.cos())
                }
            }
        })
        .collect();
    SpinConfiguration::from_raw_unchecked(params.model, params.n, spins)
}
