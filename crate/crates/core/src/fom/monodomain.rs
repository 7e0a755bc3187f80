use serde::{Deserialize, Serialize};

use super::grid::{assemble, Grid2d, OperatorCoeffs};
use super::{check_box, times_to_steps, FullOrderModel, Interval};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, Matrix};

/// Aliev-Panfilov ionic constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonicModel {
    pub k: f64,
    pub a: f64,
    pub b: f64,
    pub eps0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for IonicModel {
    fn default() -> Self {
        Self { k: 8.0, a: 0.01, b: 0.15, eps0: 0.002, c1: 0.2, c2: 0.3 }
    }
}

impl IonicModel {
    /// Ionic current `K u (u - a)(u - 1) + u w`.
    #[inline]
    pub fn current(&self, u: f64, w: f64) -> f64 {
        self.k * u * (u - self.a) * (u - 1.0) + u * w
    }

    /// Recovery rate `dw/dt = (eps0 + c1 w+ / (c2 + u)) (-w - K u (u - b - 1))`.
    ///
    /// The rate factor uses `w+ = max(w, 0)`. A strong stimulus drives `u` above
    /// `1 + b`, which pushes `w` slightly negative; with the plain `w` the factor then
    /// turns negative and `w` runs away to `-inf`. For `w >= 0` nothing changes.
    #[inline]
    pub fn recovery(&self, u: f64, w: f64) -> f64 {
        (self.eps0 + self.c1 * w.max(0.0) / (self.c2 + u)) * (-w - self.k * u * (u - self.b - 1.0))
    }
}

/// Applied current `C / (2 pi alpha) exp(-|x|^2 / (2 beta))` switched on for `t <= duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub amplitude: f64,
    pub alpha: f64,
    pub beta: f64,
    pub duration: f64,
}

impl Default for Stimulus {
    fn default() -> Self {
        Self { amplitude: 100.0, alpha: 1.0, beta: 1.0, duration: 2.0 }
    }
}

impl Stimulus {
    pub fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        if t > self.duration || self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude / (2.0 * std::f64::consts::PI * self.alpha)
            * (-(x * x + y * y) / (2.0 * self.beta)).exp()
    }
}

/// Monodomain equation with Aliev-Panfilov kinetics on a square tissue slab.
/// Parameters are the longitudinal and transversal conductivities.
///
/// Times (`dt`, `t_final`, stimulus duration) are in ms. The equations themselves
/// run on the dimensionless Aliev-Panfilov clock, `time_unit` ms per unit, which
/// is also why the conductivities carry the factor 12.9.
///
/// One-step semi-implicit scheme: the ionic terms and the gating variable are
/// advanced explicitly node by node, then diffusion is solved implicitly. The
/// diffusion operator is constant per parameter, so it is factorized once per solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonodomainProblem {
    pub grid: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_time_unit")]
    pub time_unit: f64,
    #[serde(default = "default_fiber")]
    pub fiber: [f64; 2],
    #[serde(default)]
    pub ionic: IonicModel,
    #[serde(default)]
    pub stimulus: Stimulus,
    #[serde(default = "default_box")]
    pub parameter_box: Vec<Interval>,
}

fn default_length() -> f64 {
    10.0
}

fn default_time_unit() -> f64 {
    12.9
}

fn default_fiber() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_box() -> Vec<Interval> {
    vec![Interval::new(12.9 * 0.06, 12.9 * 0.2), Interval::new(12.9 * 0.03, 12.9 * 0.1)]
}

impl Default for MonodomainProblem {
    fn default() -> Self {
        Self {
            grid: 64,
            length: default_length(),
            dt: 0.1,
            t_final: 400.0,
            time_unit: default_time_unit(),
            fiber: default_fiber(),
            ionic: IonicModel::default(),
            stimulus: Stimulus::default(),
            parameter_box: default_box(),
        }
    }
}

impl MonodomainProblem {
    pub fn grid2d(&self) -> Grid2d {
        Grid2d::new(self.grid, self.length)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 3 {
            return Err(Error::invalid("monodomain grid needs at least 3 points per axis"));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0 && self.length > 0.0 && self.time_unit > 0.0) {
            return Err(Error::invalid("dt, final time, time unit and side length must be positive"));
        }
        let norm = (self.fiber[0].powi(2) + self.fiber[1].powi(2)).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("fiber direction must be a unit vector, |f0| = {norm}")));
        }
        if self.parameter_box.len() != 2 {
            return Err(Error::invalid("monodomain has two parameters"));
        }
        Ok(())
    }

    fn check_params(&self, mu: &[f64]) -> Result<()> {
        check_box(mu, &self.parameter_box)?;
        if !(mu[0] > 0.0 && mu[1] > 0.0) {
            return Err(Error::invalid("conductivities must be positive"));
        }
        Ok(())
    }

    /// Conductivity tensor `mu2 I + (mu1 - mu2) f0 f0ᵀ` as `(dxx, dyy, dxy)`.
    pub fn conductivity(&self, mu: &[f64]) -> (f64, f64, f64) {
        let [fx, fy] = self.fiber;
        let d = mu[0] - mu[1];
        (mu[1] + d * fx * fx, mu[1] + d * fy * fy, d * fx * fy)
    }

    /// Pointwise explicit Euler for the ionic terms over one step, sub-stepped so
    /// that `h |d(rate)/du| <= 0.5` near the stiff upper branch of the cubic.
    fn ionic_step(&self, mut u: f64, mut w: f64, iapp: f64, dt: f64) -> (f64, f64) {
        let m = &self.ionic;
        let mut left = dt;
        while left > 0.0 {
            let stiff = (m.k * (3.0 * u * u - 2.0 * (1.0 + m.a) * u + m.a) + w).abs();
            let h = if stiff * left > 0.5 { (0.5 / stiff).max(dt * 1e-4) } else { left };
            let du = iapp - m.current(u, w);
            let dw = m.recovery(u, w);
            u += h * du;
            w += h * dw;
            left -= h;
        }
        (u, w)
    }

    fn diffusion_lu(&self, mu: &[f64]) -> Result<BandLu> {
        let (dxx, dyy, dxy) = self.conductivity(mu);
        let coeffs = OperatorCoeffs { dxx, dyy, dxy, ..Default::default() };
        assemble(&self.grid2d(), &coeffs, 1.0 / self.model_dt()).factorize()
    }

    /// Step length on the model clock.
    fn model_dt(&self) -> f64 {
        self.dt / self.time_unit
    }

    /// Marches from the rest state, calling `observe(step, t, u)` after every step
    /// until it returns `false` or `last_step` is reached.
    pub fn march(
        &self,
        mu: &[f64],
        last_step: usize,
        mut observe: impl FnMut(usize, f64, &[f64]) -> bool,
    ) -> Result<()> {
        self.validate()?;
        self.check_params(mu)?;
        let grid = self.grid2d();
        let nh = grid.len();
        let dt = self.dt;
        let tau = self.model_dt();
        let lu = self.diffusion_lu(mu)?;
        let stim_profile: Vec<f64> = (0..nh)
            .map(|k| {
                let (x, y) = grid.coords(k);
                self.stimulus.value(x, y, 0.0)
            })
            .collect();
        let mut u = vec![0.0; nh];
        let mut w = vec![0.0; nh];
        let mut rhs = vec![0.0; nh];
        for step in 1..=last_step {
            let t_prev = (step - 1) as f64 * dt;
            let stim_on = t_prev <= self.stimulus.duration;
            for k in 0..nh {
                let iapp = if stim_on { stim_profile[k] } else { 0.0 };
                let (uk, wk) = self.ionic_step(u[k], w[k], iapp, tau);
                rhs[k] = uk / tau;
                w[k] = wk;
            }
            lu.solve_in_place(&mut rhs);
            std::mem::swap(&mut u, &mut rhs);
            if let Some(bad) = u.iter().zip(&w).position(|(a, b)| !(a.is_finite() && b.is_finite())) {
                return Err(Error::NonFinite { step, what: format!("state at node {bad}") });
            }
            if !observe(step, step as f64 * dt, &u) {
                break;
            }
        }
        Ok(())
    }

    /// Earliest time at which `u` at the node nearest `probe` reaches `threshold`,
    /// linearly interpolated between steps. `None` if it never does by `t_final`.
    pub fn activation_time(&self, mu: &[f64], probe: (f64, f64), threshold: f64) -> Result<Option<f64>> {
        let node = self.grid2d().nearest(probe.0, probe.1);
        let last = (self.t_final / self.dt).round() as usize;
        let mut prev = 0.0;
        let mut hit = None;
        self.march(mu, last, |_, t, u| {
            let v = u[node];
            if v >= threshold {
                let frac = (threshold - prev) / (v - prev);
                hit = Some(t - self.dt + frac * self.dt);
                return false;
            }
            prev = v;
            true
        })?;
        Ok(hit)
    }
}

impl FullOrderModel for MonodomainProblem {
    fn name(&self) -> &'static str {
        "monodomain"
    }

    fn n_params(&self) -> usize {
        2
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
        let steps = times_to_steps(times, self.dt, self.t_final)?;
        let nh = self.grid * self.grid;
        let mut out = Matrix::zeros(nh, times.len());
        let mut next = 0;
        self.march(mu, *steps.last().unwrap(), |step, _, u| {
            while next < steps.len() && steps[next] == step {
                out.col_mut(next).copy_from_slice(u);
                next += 1;
            }
            true
        })?;
        Ok(out)
    }
}
