//! Recorded time series of configurations and scalar diagnostics.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{fmt_f64, Model, SpinConfiguration};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarRow {
    pub t: f64,
    pub energy: f64,
    pub accept_rate: f64,
}

/// Snapshots and scalar traces of one run, with the provenance needed to
/// regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub label: String,
    pub model: Model,
    pub seed: Option<u64>,
    pub realization: Option<u64>,
    pub dt: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<SpinConfiguration>,
    pub scalars: Vec<ScalarRow>,
    /// Largest energy seen at any step, recorded or not.
    pub energy_sup: f64,
}

impl TrajectoryRecord {
    pub fn new(label: impl Into<String>, model: Model, dt: f64) -> Self {
        Self {
            label: label.into(),
            model,
            seed: None,
            realization: None,
            dt,
            times: Vec::new(),
            snapshots: Vec::new(),
            scalars: Vec::new(),
            energy_sup: f64::NEG_INFINITY,
        }
    }

    pub fn with_provenance(mut self, seed: u64, realization: u64) -> Self {
        self.seed = Some(seed);
        self.realization = Some(realization);
        self
    }

    pub fn push(&mut self, t: f64, config: &SpinConfiguration, energy: f64, accept_rate: f64) {
        self.times.push(t);
        self.snapshots.push(config.clone());
        self.scalars.push(ScalarRow {
            t,
            energy,
            accept_rate,
        });
        self.observe_energy(energy);
    }

    #[inline]
    pub fn observe_energy(&mut self, energy: f64) {
        if energy > self.energy_sup {
            self.energy_sup = energy;
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> Option<&SpinConfiguration> {
        self.snapshots.first()
    }

    pub fn last(&self) -> Option<&SpinConfiguration> {
        self.snapshots.last()
    }

    pub fn initial_energy(&self) -> Option<f64> {
        self.scalars.first().map(|r| r.energy)
    }

    /// Snapshot in force at time `t` under piecewise-constant interpolation.
    pub fn at_time(&self, t: f64) -> Option<&SpinConfiguration> {
        let k = self.times.partition_point(|&s| s <= t + 1e-12 * t.abs().max(1.0));
        k.checked_sub(1).map(|k| &self.snapshots[k])
    }

    /// `t,site,x,y[,z]`
    pub fn write_snapshots_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let comps = self.model.components();
        let mut out = String::from(if comps == 2 { "t,site,x,y\n" } else { "t,site,x,y,z\n" });
        for (t, cfg) in self.times.iter().zip(&self.snapshots) {
            let ts = fmt_f64(*t);
            for (i, s) in cfg.spins().iter().enumerate() {
                write!(out, "{ts},{i}").unwrap();
                for c in 0..comps {
                    write!(out, ",{}", fmt_f64(s[c])).unwrap();
                }
                out.push('\n');
            }
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// `t,H,accept_rate`
    pub fn write_scalars_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::from("t,H,accept_rate\n");
        for r in &self.scalars {
            writeln!(out, "{},{},{}", fmt_f64(r.t), fmt_f64(r.energy), fmt_f64(r.accept_rate))
                .unwrap();
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub(crate) fn check_grid(&self, other: &TrajectoryRecord) -> Result<()> {
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
        {
            return Err(invalid(format!(
                "time grids differ: `{}` has {} records, `{}` has {}",
                self.label,
                self.times.len(),
                other.label,
                other.times.len()
            )));
        }
        Ok(())
    }
}

/// Indices `0, every, 2 every, ..., n_steps` (the last always included).
pub(crate) fn should_record(step: usize, n_steps: usize, every: usize) -> bool {
    step == n_steps || step.is_multiple_of(every.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_initial_condition, InitialKind, ModelParams};

    #[test]
    fn csv_layout_and_lookup() {
        let p = ModelParams::new(Model::Xy, 3, 1.0, 1.0, 0.01).unwrap();
        let c = make_initial_condition(InitialKind::NearEquilibrium, &p, None);
        let mut rec = TrajectoryRecord::new("mh", Model::Xy, 0.01);
        rec.push(0.0, &c, c.hamiltonian(), 1.0);
        rec.push(0.5, &c, 2.0, 0.5);
        let mut buf = Vec::new();
        rec.write_snapshots_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        assert!(text.starts_with("t,site,x,y\n0.0000000000000000e0,0,1.0000000000000000e0,"));
        let mut buf = Vec::new();
        rec.write_scalars_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "5.0000000000000000e-1,2.0000000000000000e0,5.0000000000000000e-1");
        assert_eq!(rec.energy_sup, 2.0);
        assert!(rec.at_time(0.49).is_some());
        assert!(rec.at_time(-0.1).is_none());
    }

    #[test]
    fn record_schedule() {
        let steps: Vec<usize> = (0..=10).filter(|&s| should_record(s, 10, 4)).collect();
        assert_eq!(steps, vec![0, 4, 8, 10]);
    }
}
