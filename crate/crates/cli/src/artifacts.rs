//! Output directory layout: CSVs, JSON reports, plot scripts and the
//! metadata file that ties them to the resolved configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use spinflow::config::{ExperimentConfig, Scenario};
use spinflow::{Error, ModelParams, Result};

/// Collects files written to one output directory, with their hashes.
pub struct OutputDir {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(bytes);
        self.hashes.insert(name.to_string(), digest.iter().map(|b| format!("{b:02x}")).collect());
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `metadata.json` last, listing every artifact written so far.
    pub fn finish(mut self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let meta = json!({
            "program": "spinflow",
            "version": env!("CARGO_PKG_VERSION"),
            "scenario": cfg.scenario.name(),
            "config": cfg,
            "derived": derived(cfg)?,
            "seeds": {
                "seed": cfg.seed,
                "realizations": realizations(cfg),
            },
            "artifacts": self.hashes,
        });
        self.write_json("metadata.json", &meta)?;
        Ok(self.root)
    }
}

/// JSON has no infinity; the noise-free sentinel is written as a string.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn lattice_entry(p: &ModelParams) -> Value {
    json!({
        "n": p.n,
        "dx": p.dx(),
        "sites": p.sites,
        "coupling": p.coupling,
        "beta": num(p.beta),
        "dt": p.dt,
        "eps": p.eps,
    })
}

fn derived(cfg: &ExperimentConfig) -> Result<Value> {
    let at = |n: usize, dt: f64| ModelParams::new(cfg.model, n, cfg.length, cfg.beta_for(n), dt);
    Ok(match cfg.scenario {
        Scenario::Dynamics => json!({ "lattice": lattice_entry(&at(cfg.n, cfg.dt)?) }),
        Scenario::ConvDt => {
            let dt_min = cfg.dt_sweep.iter().copied().fold(f64::INFINITY, f64::min);
            let levels = cfg
                .dt_sweep
                .iter()
                .map(|&dt| Ok(lattice_entry(&at(cfg.n, dt)?)))
                .collect::<Result<Vec<_>>>()?;
            json!({ "levels": levels, "dt_ref": dt_min / cfg.ref_refinement as f64 })
        }
        Scenario::ConvDx => {
            let levels = cfg
                .n_sweep
                .iter()
                .map(|&n| Ok(lattice_entry(&at(n, spinflow::experiment::conv_dx_dt(cfg, n))?)))
                .collect::<Result<Vec<_>>>()?;
            json!({ "levels": levels })
        }
        Scenario::Validate => {
            let v = &cfg.validate;
            json!({
                "energy_lattice": lattice_entry(&at(cfg.n, cfg.dt)?),
                "expansion_sites": (v.expansion_length * v.expansion_n as f64).round(),
                "expansion_beta": v.expansion_beta,
            })
        }
    })
}

fn realizations(cfg: &ExperimentConfig) -> usize {
    match cfg.scenario {
        Scenario::Validate => cfg.validate.energy_realizations,
        _ => cfg.realizations,
    }
}

pub const PLOT_DYNAMICS: &str = r#"# Renders the dynamics run in this directory: python3 plot_dynamics.py
import csv
import matplotlib.pyplot as plt


def rows(name):
    with open(name) as f:
        return list(csv.DictReader(f))


fig, (ax_e, ax_h) = plt.subplots(1, 2, figsize=(11, 4))
err = rows("errors.csv")
t = [float(r["t"]) for r in err]
ax_e.plot(t, [float(r["mh_vs_pde"]) for r in err], "ro", ms=3, label="M-H vs heat flow")
ax_e.plot(t, [float(r["sde_vs_pde"]) for r in err], "k*", ms=4, label="SDE vs heat flow")
ax_e.set_xlabel("t")
ax_e.set_ylabel("rms error")
ax_e.legend()
for name, style in [("mh", "ro"), ("sde", "k*"), ("pde", "b-")]:
    s = rows(f"{name}_scalars.csv")
    ax_h.plot([float(r["t"]) for r in s], [float(r["H"]) for r in s], style, ms=3, label=name)
ax_h.set_xlabel("t")
ax_h.set_ylabel("H")
ax_h.legend()
fig.tight_layout()
fig.savefig("dynamics.png", dpi=150)
"#;

pub const PLOT_CONVERGENCE: &str = r#"# Renders the convergence study in this directory: python3 plot_convergence.py
import csv
import json
import matplotlib.pyplot as plt

with open("convergence.csv") as f:
    pts = list(csv.DictReader(f))
with open("fit.json") as f:
    fit = json.load(f)["fit"]
h = [float(p["h"]) for p in pts]
e = [float(p["err"]) for p in pts]
s = [float(p["stderr"]) for p in pts]
fig, ax = plt.subplots(figsize=(5, 4))
ax.errorbar(h, e, yerr=s, fmt="o", capsize=3)
from math import exp, log
ax.plot(h, [exp(fit["intercept"] + fit["slope"] * log(x)) for x in h], "k--",
        label=f"slope {fit['slope']:.3f}")
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("h")
ax.set_ylabel("rms error at T")
ax.legend()
fig.tight_layout()
fig.savefig("convergence.png", dpi=150)
"#;
