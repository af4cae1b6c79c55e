//! Trajectory error functionals and convergence-order fits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::SpinConfiguration;
use crate::sphere;
use crate::stats::compensated_sum;
use crate::trajectory::TrajectoryRecord;

/// `sqrt((1/M) sum_i |a_i - b_i|^2)`.
pub fn rms_config_error(a: &SpinConfiguration, b: &SpinConfiguration) -> Result<f64> {
    Ok(mean_sq_error(a, b)?.sqrt())
}

fn mean_sq_error(a: &SpinConfiguration, b: &SpinConfiguration) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("lattice sizes differ: {} vs {}", a.len(), b.len())));
    }
    let s = compensated_sum(
        a.spins()
            .iter()
            .zip(b.spins())
            .map(|(x, y)| sphere::norm_sq(&sphere::sub(x.as_array(), y.as_array()))),
    );
    Ok(s / a.len() as f64)
}

fn max_sq_error(a: &SpinConfiguration, b: &SpinConfiguration) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("lattice sizes differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.spins()
        .iter()
        .zip(b.spins())
        .map(|(x, y)| sphere::norm_sq(&sphere::sub(x.as_array(), y.as_array())))
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RmsAtT,
    SupToT,
    ScaledEOfT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub metric_kind: MetricKind,
    pub p: Option<f64>,
}

impl ErrorSeries {
    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// `e(t) = (1/M) sum_i |eps^-p (sigma_i(t) - tilde sigma_i(t))|^2`.
pub fn scaled_error_e(
    sde: &TrajectoryRecord,
    pde: &TrajectoryRecord,
    p: f64,
    eps_param: f64,
) -> Result<ErrorSeries> {
    sde.check_grid(pde)?;
    if !(eps_param > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps_param}")));
    }
    let w = eps_param.powf(-2.0 * p);
    let values = sde
        .snapshots
        .iter()
        .zip(&pde.snapshots)
        .map(|(a, b)| Ok(w * mean_sq_error(a, b)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorSeries {
        times: sde.times.clone(),
        values,
        metric_kind: MetricKind::ScaledEOfT,
        p: Some(p),
    })
}

/// Running supremum of the per-site maximal squared distance.
pub fn sup_error(a: &TrajectoryRecord, b: &TrajectoryRecord) -> Result<ErrorSeries> {
    a.check_grid(b)?;
    let mut run = 0.0f64;
    let values = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| {
            run = run.max(max_sq_error(x, y)?);
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorSeries {
        times: a.times.clone(),
        values,
        metric_kind: MetricKind::SupToT,
        p: None,
    })
}

/// rms error on every common grid point.
pub fn rms_error_series(a: &TrajectoryRecord, b: &TrajectoryRecord) -> Result<ErrorSeries> {
    a.check_grid(b)?;
    let values = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| rms_config_error(x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorSeries {
        times: a.times.clone(),
        values,
        metric_kind: MetricKind::RmsAtT,
        p: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Least squares of `log err` against `log h`.
pub fn fit_order(points: &[(f64, f64)]) -> Result<OrderFit> {
    if points.len() < 3 {
        return Err(invalid(format!("order fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(&(h, e)) = points.iter().find(|(h, e)| !(*h > 0.0 && *e > 0.0 && h.is_finite() && e.is_finite())) {
        return Err(invalid(format!("order fit needs positive finite points, got ({h}, {e})")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("order fit needs at least two distinct step sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(OrderFit {
        slope,
        intercept,
        r_squared,
        points: points.to_vec(),
    })
}
