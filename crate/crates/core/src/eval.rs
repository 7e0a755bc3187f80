//! Error indicators and summary statistics for comparing trajectories.
//!
//! Trajectory matrices are laid out parameter-major: column `i * n_t + k` holds
//! time step `k` of instance `i`. Norms are Euclidean over all DOFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_pair(truth: &Matrix, approx: &Matrix, n_instances: usize, n_t: usize) -> Result<()> {
    if truth.shape() != approx.shape() {
        return Err(Error::shape(format!(
            "truth is {:?}, approximation is {:?}",
            truth.shape(),
            approx.shape()
        )));
    }
    if n_instances == 0 || n_t == 0 {
        return Err(Error::invalid("empty test set"));
    }
    if truth.cols() != n_instances * n_t {
        return Err(Error::shape(format!(
            "{} columns, expected {n_instances} instances x {n_t} steps",
            truth.cols()
        )));
    }
    Ok(())
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over instances of `||u - ũ||_traj / ||u||_traj`, the trajectory norm
/// summing squared norms over time steps.
pub fn error_indicator(truth: &Matrix, approx: &Matrix, n_instances: usize, n_t: usize) -> Result<f64> {
    check_pair(truth, approx, n_instances, n_t)?;
    let mut total = 0.0;
    for i in 0..n_instances {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..n_t {
            let j = i * n_t + k;
            num += sq_diff(truth.col(j), approx.col(j));
            den += sq_norm(truth.col(j));
        }
        if den == 0.0 {
            return Err(Error::invalid(format!("reference trajectory {i} has zero norm")));
        }
        total += (num / den).sqrt();
    }
    Ok(total / n_instances as f64)
}

/// Pointwise `|u^k - ũ^k|` of one instance, scaled by the RMS over time of `||u^k||`.
pub fn relative_error_field(
    truth: &Matrix,
    approx: &Matrix,
    n_instances: usize,
    n_t: usize,
    instance: usize,
    k: usize,
) -> Result<Vec<f64>> {
    check_pair(truth, approx, n_instances, n_t)?;
    if instance >= n_instances || k >= n_t {
        return Err(Error::invalid(format!("no time step {k} of instance {instance}")));
    }
    let scale = trajectory_rms(truth, instance, n_t)?;
    let j = instance * n_t + k;
    Ok(truth.col(j).iter().zip(approx.col(j)).map(|(u, a)| (u - a).abs() / scale).collect())
}

fn trajectory_rms(truth: &Matrix, instance: usize, n_t: usize) -> Result<f64> {
    let ms = (0..n_t).map(|k| sq_norm(truth.col(instance * n_t + k))).sum::<f64>() / n_t as f64;
    if ms == 0.0 {
        return Err(Error::invalid(format!("reference trajectory {instance} has zero norm")));
    }
    Ok(ms.sqrt())
}

/// Linear-interpolation quantile of sorted data, `p` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl FieldStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("statistics of an empty field"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile_sorted(&v, 0.5),
            q1: quantile_sorted(&v, 0.25),
            q3: quantile_sorted(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

/// Statistics of the relative error field at one time step of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub instance: usize,
    pub step: usize,
    pub time: f64,
    pub stats: FieldStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps_rel: f64,
    pub n_instances: usize,
    pub n_t: usize,
    pub steps: Vec<StepError>,
}

pub const REPORT_HEADER: &str = "test_index,time_index,time,eps_mean,eps_median,eps_q1,eps_q3,eps_min,eps_max";

impl ErrorReport {
    /// `times[j]` is the time of column `j`.
    pub fn build(truth: &Matrix, approx: &Matrix, n_instances: usize, n_t: usize, times: &[f64]) -> Result<Self> {
        let eps_rel = error_indicator(truth, approx, n_instances, n_t)?;
        if times.len() != truth.cols() {
            return Err(Error::shape(format!("{} times for {} columns", times.len(), truth.cols())));
        }
        let mut steps = Vec::with_capacity(truth.cols());
        for instance in 0..n_instances {
            let scale = trajectory_rms(truth, instance, n_t)?;
            for step in 0..n_t {
                let j = instance * n_t + step;
                let field: Vec<f64> =
                    truth.col(j).iter().zip(approx.col(j)).map(|(u, a)| (u - a).abs() / scale).collect();
                steps.push(StepError { instance, step, time: times[j], stats: FieldStats::of(&field)? });
            }
        }
        Ok(Self { eps_rel, n_instances, n_t, steps })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for s in &self.steps {
            let f = &s.stats;
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                s.instance, s.step, s.time, f.mean, f.median, f.q1, f.q3, f.min, f.max
            ));
        }
        out
    }
}

/// Least-squares slope of `log y` against `log x`; `None` with fewer than two
/// distinct positive points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
