use serde::{Deserialize, Serialize};

use super::grid::{assemble, Grid2d, OperatorCoeffs};
use super::{check_box, times_to_steps, FullOrderModel, Interval};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Unsteady advection-diffusion-reaction on the unit square,
///
/// `u_t - div(mu1 grad u) + b(t; mu2) . grad u + c u = f(mu3, mu4)`,
///
/// with `b = (cos(pi t / mu2), sin(pi t / mu2))`, a Gaussian source centred at
/// `(mu3, mu4)`, homogeneous Neumann boundaries and `u(0) = 0`.
///
/// Time marching is BDF2, bootstrapped with one implicit Euler step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdrProblem {
    pub grid: usize,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_reaction")]
    pub reaction: f64,
    #[serde(default = "default_amplitude")]
    pub source_amplitude: f64,
    #[serde(default = "default_width")]
    pub source_width: f64,
    #[serde(default = "default_box")]
    pub parameter_box: Vec<Interval>,
}

fn default_reaction() -> f64 {
    1.0
}

fn default_amplitude() -> f64 {
    10.0
}

fn default_width() -> f64 {
    0.07
}

fn default_box() -> Vec<Interval> {
    vec![
        Interval::new(0.002, 0.005),
        Interval::new(30.0, 70.0),
        Interval::new(0.4, 0.6),
        Interval::new(0.4, 0.6),
    ]
}

impl Default for AdrProblem {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            grid: 33,
            dt: 2.0 * pi / 20.0,
            t_final: 10.0 * pi,
            reaction: default_reaction(),
            source_amplitude: default_amplitude(),
            source_width: default_width(),
            parameter_box: default_box(),
        }
    }
}

impl AdrProblem {
    pub fn grid2d(&self) -> Grid2d {
        Grid2d::new(self.grid, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 3 {
            return Err(Error::invalid("ADR grid needs at least 3 points per axis"));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::invalid("dt and final time must be positive"));
        }
        if self.parameter_box.len() != 4 {
            return Err(Error::invalid("ADR has four parameters"));
        }
        Ok(())
    }

    fn check_params(&self, mu: &[f64]) -> Result<()> {
        check_box(mu, &self.parameter_box)?;
        if !(mu[0] > 0.0) {
            return Err(Error::invalid("diffusion coefficient must be positive"));
        }
        if !(mu[1] != 0.0) {
            return Err(Error::invalid("advection period must be nonzero"));
        }
        if !(0.0 < mu[2] && mu[2] < 1.0 && 0.0 < mu[3] && mu[3] < 1.0) {
            return Err(Error::invalid("source center must lie inside the unit square"));
        }
        Ok(())
    }

    /// Advection field at time `t`.
    pub fn advection(&self, mu: &[f64], t: f64) -> (f64, f64) {
        let arg = std::f64::consts::PI / mu[1] * t;
        (arg.cos(), arg.sin())
    }

    /// Solves with an arbitrary source `f(x, y, t)` and initial state `u0(x, y)`,
    /// sampling the solution at `times`. Used for verification with manufactured
    /// solutions; [`FullOrderModel::solve`] wraps it with the Gaussian source.
    pub fn solve_with_source(
        &self,
        mu: &[f64],
        source: &dyn Fn(f64, f64, f64) -> f64,
        initial: &dyn Fn(f64, f64) -> f64,
        times: &[f64],
    ) -> Result<Matrix> {
        self.validate()?;
        self.check_params(mu)?;
        let steps = times_to_steps(times, self.dt, self.t_final)?;
        let grid = self.grid2d();
        let nh = grid.len();
        let dt = self.dt;
        let last = *steps.last().unwrap();

        let mut out = Matrix::zeros(nh, times.len());
        let mut next_sample = 0;
        let mut prev = grid.sample(initial);
        let mut curr = prev.clone();
        let mut rhs = vec![0.0; nh];

        for step in 1..=last {
            let t = step as f64 * dt;
            let (bx, by) = self.advection(mu, t);
            let coeffs = OperatorCoeffs { dxx: mu[0], dyy: mu[0], dxy: 0.0, bx, by, c: self.reaction };
            let bdf2 = step > 1;
            let shift = if bdf2 { 1.5 / dt } else { 1.0 / dt };
            // b(t) changes every step, so the operator is refactored each time
            let lu = assemble(&grid, &coeffs, shift).factorize().map_err(|e| match e {
                Error::LinearSolve(msg) => Error::LinearSolve(format!("step {step}: {msg}")),
                other => other,
            })?;
            for (k, r) in rhs.iter_mut().enumerate() {
                let (x, y) = grid.coords(k);
                let hist = if bdf2 {
                    (2.0 * curr[k] - 0.5 * prev[k]) / dt
                } else {
                    curr[k] / dt
                };
                *r = source(x, y, t) + hist;
            }
            lu.solve_in_place(&mut rhs);
            if let Some(bad) = rhs.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step, what: format!("u at node {bad}") });
            }
            std::mem::swap(&mut prev, &mut curr);
            std::mem::swap(&mut curr, &mut rhs);
            while next_sample < steps.len() && steps[next_sample] == step {
                out.col_mut(next_sample).copy_from_slice(&curr);
                next_sample += 1;
            }
        }
        Ok(out)
    }
}

impl FullOrderModel for AdrProblem {
    fn name(&self) -> &'static str {
        "adr"
    }

    fn n_params(&self) -> usize {
        4
    }

    fn channel_sizes(&self) -> Vec<usize> {
        vec![self.grid * self.grid]
    }

    fn final_time(&self) -> f64 {
        self.t_final
    }

    fn time_step(&self) -> Option<f64> {
        Some(self.dt)
    }

    fn parameter_box(&self) -> &[Interval] {
        &self.parameter_box
    }

    fn solve(&self, mu: &[f64], times: &[f64]) -> Result<Matrix> {
        self.check_params(mu)?;
        let (cx, cy) = (mu[2], mu[3]);
        let amp = self.source_amplitude;
        let w2 = self.source_width * self.source_width;
        let source = move |x: f64, y: f64, _t: f64| {
            amp * (-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / w2).exp()
        };
        self.solve_with_source(mu, &source, &|_, _| 0.0, times)
    }
}
