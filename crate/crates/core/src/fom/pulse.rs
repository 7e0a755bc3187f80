use serde::{Deserialize, Serialize};

use super::{check_box, check_times, FullOrderModel, Interval};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Closed-form travelling pulse `u(x, t; mu) = exp(-(x - mu t)^2 / sigma^2)` on `(0, 1)`.
///
/// Cheap enough to run the whole training pipeline in a test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse1dProblem {
    pub grid: usize,
    pub sigma: f64,
    pub t_final: f64,
    #[serde(default = "default_speed_box")]
    pub speed: Interval,
}

fn default_speed_box() -> Interval {
    Interval::new(0.0, 1.0)
}

impl Pulse1dProblem {
    pub fn new(grid: usize, sigma: f64, t_final: f64) -> Self {
        Self { grid, sigma, t_final, speed: default_speed_box() }
    }

    pub fn with_speed_range(mut self, speed: Interval) -> Self {
        self.speed = speed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 3 {
            return Err(Error::invalid("pulse grid needs at least 3 points"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("pulse width must be positive"));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::invalid("final time must be positive"));
        }
        if !(self.speed.max >= self.speed.min) {
            return Err(Error::invalid("empty speed range"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = 1.0 / (self.grid - 1) as f64;
        (0..self.grid).map(|i| i as f64 * h).collect()
    }

    /// Field at a single instant; `t = 0` is allowed here.
    pub fn field(&self, mu: f64, t: f64) -> Vec<f64> {
        let c = mu * t;
        let s2 = self.sigma * self.sigma;
        self.nodes().into_iter().map(|x| (-(x - c) * (x - c) / s2).exp()).collect()
    }
}

impl FullOrderModel for Pulse1dProblem {
    fn name(&self) -> &'static str {
        "pulse1d"
    }

    fn n_params(&self) -> usize {
        1
    }

    fn channel_sizes(&self) -> Vec<usize> {
        vec![self.grid]
    }

    fn final_time(&self) -> f64 {
        self.t_final
    }

    fn time_step(&self) -> Option<f64> {
        None
    }

    fn parameter_box(&self) -> &[Interval] {
        std::slice::from_ref(&self.speed)
    }

    fn solve(&self, params: &[f64], times: &[f64]) -> Result<Matrix> {
        self.validate()?;
        check_box(params, self.parameter_box())?;
        check_times(times, self.t_final)?;
        let cols: Vec<Vec<f64>> = times.iter().map(|&t| self.field(params[0], t)).collect();
        Matrix::from_columns(self.grid, &cols)
    }
}
