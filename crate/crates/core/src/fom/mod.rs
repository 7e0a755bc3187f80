//! Full order models and snapshot datasets.
//!
//! Every solver implements [`FullOrderModel`]; [`build_dataset`] runs one solve per
//! parameter sample and lays the trajectories out parameter-major, time-minor.

mod adr;
pub mod grid;
mod monodomain;
mod pulse;

pub use adr::AdrProblem;
pub use monodomain::{IonicModel, MonodomainProblem, Stimulus};
pub use pulse::Pulse1dProblem;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Closed interval for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

pub(crate) fn check_box(params: &[f64], bounds: &[Interval]) -> Result<()> {
    if params.len() != bounds.len() {
        return Err(Error::invalid(format!(
            "expected {} parameters, got {}",
            bounds.len(),
            params.len()
        )));
    }
    for (k, (p, b)) in params.iter().zip(bounds).enumerate() {
        if !p.is_finite() || !b.contains(*p) {
            return Err(Error::invalid(format!(
                "parameter {k} = {p} outside [{}, {}]",
                b.min, b.max
            )));
        }
    }
    Ok(())
}

/// A parametrized problem that produces snapshot trajectories.
pub trait FullOrderModel {
    fn name(&self) -> &'static str;

    /// Number of parameters `n_mu`.
    fn n_params(&self) -> usize;

    /// Degrees of freedom per field component.
    fn channel_sizes(&self) -> Vec<usize>;

    fn final_time(&self) -> f64;

    /// Marching step, or `None` for closed-form problems.
    fn time_step(&self) -> Option<f64>;

    fn parameter_box(&self) -> &[Interval];

    /// Solution at each of `times`, one column per instant (`N_h x N_t`).
    fn solve(&self, params: &[f64], times: &[f64]) -> Result<Matrix>;
}

/// Maps strictly increasing sample times in `(0, T]` to marching step indices.
pub(crate) fn times_to_steps(times: &[f64], dt: f64, t_final: f64) -> Result<Vec<usize>> {
    check_times(times, t_final)?;
    times
        .iter()
        .map(|&t| {
            let s = (t / dt).round();
            if (s * dt - t).abs() > 1e-9 * t.max(dt) {
                Err(Error::invalid(format!("sample time {t} is not a multiple of dt = {dt}")))
            } else {
                Ok(s as usize)
            }
        })
        .collect()
}

pub(crate) fn check_times(times: &[f64], t_final: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("no sample times"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sample times must be strictly increasing"));
    }
    let (first, last) = (times[0], times[times.len() - 1]);
    if first <= 0.0 || last > t_final * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "sample times must lie in (0, {t_final}], got [{first}, {last}]"
        )));
    }
    Ok(())
}

/// `n_t` equispaced sample instants in `(0, T]`. With a marching step they are
/// integer multiples of it.
pub fn uniform_times(t_final: f64, dt: Option<f64>, n_t: usize) -> Result<Vec<f64>> {
    if n_t == 0 {
        return Err(Error::invalid("n_t must be positive"));
    }
    match dt {
        None => Ok((1..=n_t).map(|k| k as f64 * t_final / n_t as f64).collect()),
        Some(dt) => {
            let steps = (t_final / dt + 1e-9).floor() as usize;
            let stride = steps / n_t;
            if stride == 0 {
                return Err(Error::invalid(format!(
                    "{n_t} samples requested but only {steps} time steps available"
                )));
            }
            Ok((1..=n_t).map(|k| (k * stride) as f64 * dt).collect())
        }
    }
}

/// Tensor-product lattice; the first axis varies slowest.
pub fn lattice(axes: &[(Interval, usize)]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new()];
    for &(iv, count) in axes {
        if count == 0 {
            return Err(Error::invalid("lattice axis with zero points"));
        }
        let values: Vec<f64> = if count == 1 {
            vec![0.5 * (iv.min + iv.max)]
        } else {
            (0..count).map(|i| iv.min + iv.width() * i as f64 / (count - 1) as f64).collect()
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    Ok(out)
}

/// `count` independent uniform draws from the box, reproducible from `seed`.
pub fn random_samples(bounds: &[Interval], count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, crate::rng::Stream::Sampling, 0);
    (0..count)
        .map(|_| bounds.iter().map(|b| if b.width() > 0.0 { rng.gen_range(b.min..=b.max) } else { b.min }).collect())
        .collect()
}

/// Snapshot matrix `S` (one column per `(t, mu)` sample) with its channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: Matrix,
    channels: Vec<usize>,
    n_train: usize,
    n_t: usize,
}

impl SnapshotMatrix {
    pub fn new(data: Matrix, channels: Vec<usize>, n_train: usize, n_t: usize) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::invalid("channel sizes must be positive"));
        }
        if channels.iter().sum::<usize>() != data.rows() {
            return Err(Error::shape(format!(
                "channel sizes {channels:?} do not partition {} rows",
                data.rows()
            )));
        }
        if n_train * n_t != data.cols() {
            return Err(Error::shape(format!(
                "{} columns but n_train * n_t = {} * {}",
                data.cols(),
                n_train,
                n_t
            )));
        }
        if !data.is_finite() {
            return Err(Error::invalid("snapshot matrix has non-finite entries"));
        }
        Ok(Self { data, channels, n_train, n_t })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// First row of each channel, plus the total row count at the end.
    pub fn channel_offsets(&self) -> Vec<usize> {
        channel_offsets(&self.channels)
    }

    /// Rows belonging to channel `k`.
    pub fn channel(&self, k: usize) -> Matrix {
        let off = self.channel_offsets();
        self.data.row_block(off[k], off[k + 1])
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_samples(&self) -> usize {
        self.data.cols()
    }
}

pub(crate) fn channel_offsets(channels: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(channels.len() + 1);
    let mut acc = 0;
    off.push(0);
    for &c in channels {
        acc += c;
        off.push(acc);
    }
    off
}

/// Parameter matrix `M`: row 0 holds time, rows `1..=n_mu` the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMatrix {
    data: Matrix,
}

impl ParameterMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::shape("parameter matrix needs at least the time row"));
        }
        if !data.is_finite() {
            return Err(Error::invalid("parameter matrix has non-finite entries"));
        }
        Ok(Self { data })
    }

    /// Builds `M` for the parameter-major, time-minor layout.
    pub fn from_samples(params: &[Vec<f64>], times: &[f64]) -> Result<Self> {
        let n_mu = params.first().map_or(0, Vec::len);
        if params.iter().any(|p| p.len() != n_mu) {
            return Err(Error::invalid("parameter samples differ in length"));
        }
        let mut data = Vec::with_capacity((n_mu + 1) * params.len() * times.len());
        for p in params {
            for &t in times {
                data.push(t);
                data.extend_from_slice(p);
            }
        }
        Self::new(Matrix::from_col_major(n_mu + 1, params.len() * times.len(), data)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn n_params(&self) -> usize {
        self.data.rows() - 1
    }

    pub fn n_samples(&self) -> usize {
        self.data.cols()
    }

    /// `(t, mu)` of column `j`.
    pub fn sample(&self, j: usize) -> (f64, &[f64]) {
        let c = self.data.col(j);
        (c[0], &c[1..])
    }
}

/// Snapshots and the `(t, mu)` tuples that produced them, column-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub snapshots: SnapshotMatrix,
    pub params: ParameterMatrix,
}

impl Dataset {
    pub fn new(snapshots: SnapshotMatrix, params: ParameterMatrix) -> Result<Self> {
        if snapshots.n_samples() != params.n_samples() {
            return Err(Error::shape(format!(
                "{} snapshots but {} parameter columns",
                snapshots.n_samples(),
                params.n_samples()
            )));
        }
        Ok(Self { snapshots, params })
    }

    pub fn n_samples(&self) -> usize {
        self.snapshots.n_samples()
    }

    /// Same dataset with columns reordered by `perm` (grouping metadata becomes
    /// one sample per group).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let s = self.snapshots.matrix().select_columns(perm);
        let m = self.params.matrix().select_columns(perm);
        Dataset::new(
            SnapshotMatrix::new(s, self.snapshots.channels().to_vec(), perm.len(), 1)?,
            ParameterMatrix::new(m)?,
        )
    }
}

/// Solves the model at every parameter sample and assembles `(S, M)`.
pub fn build_dataset(
    model: &dyn FullOrderModel,
    params: &[Vec<f64>],
    times: &[f64],
) -> Result<Dataset> {
    if params.is_empty() {
        return Err(Error::invalid("no parameter samples"));
    }
    check_times(times, model.final_time())?;
    let rows: usize = model.channel_sizes().iter().sum();
    let n_t = times.len();
    let mut data = Vec::with_capacity(rows * n_t * params.len());
    for p in params {
        let traj = model.solve(p, times).map_err(|e| Error::Solver {
            params: p.clone(),
            source: Box::new(e),
        })?;
        if traj.shape() != (rows, n_t) {
            return Err(Error::shape(format!(
                "solver returned {:?}, expected ({rows}, {n_t})",
                traj.shape()
            )));
        }
        data.extend_from_slice(traj.as_slice());
    }
    let s = Matrix::from_col_major(rows, n_t * params.len(), data)?;
    Dataset::new(
        SnapshotMatrix::new(s, model.channel_sizes(), params.len(), n_t)?,
        ParameterMatrix::from_samples(params, times)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_samples_stay_in_box_and_repeat() {
        let b = [Interval::new(0.0, 1.0), Interval::new(-2.0, -1.0), Interval::new(3.0, 3.0)];
        let a = random_samples(&b, 50, 4);
        assert_eq!(a, random_samples(&b, 50, 4));
        assert_ne!(a, random_samples(&b, 50, 5));
        assert!(a.iter().all(|p| check_box(p, &b).is_ok()));
    }

    #[test]
    fn uniform_times_are_step_multiples() {
        let t = uniform_times(400.0, Some(0.1), 100).unwrap();
        assert_eq!(t.len(), 100);
        assert!((t[0] - 4.0).abs() < 1e-12);
        assert!((t[99] - 400.0).abs() < 1e-9);
        assert!(times_to_steps(&t, 0.1, 400.0).is_ok());
        assert!(times_to_steps(&[0.15], 0.1, 1.0).is_err());
        assert!(uniform_times(1.0, Some(0.5), 3).is_err());
    }

    #[test]
    fn time_validation() {
        assert!(check_times(&[0.0, 0.5], 1.0).is_err());
        assert!(check_times(&[0.5, 0.5], 1.0).is_err());
        assert!(check_times(&[0.5, 1.5], 1.0).is_err());
        assert!(check_times(&[0.5, 1.0], 1.0).is_ok());
    }

    #[test]
    fn lattice_orders_first_axis_slowest() {
        let l = lattice(&[(Interval::new(0.0, 1.0), 2), (Interval::new(5.0, 7.0), 3)]).unwrap();
        assert_eq!(l.len(), 6);
        assert_eq!(l[0], vec![0.0, 5.0]);
        assert_eq!(l[1], vec![0.0, 6.0]);
        assert_eq!(l[3], vec![1.0, 5.0]);
    }

    #[test]
    fn single_sample_dataset() {
        let p = Pulse1dProblem::new(32, 0.1, 1.0);
        let d = build_dataset(&p, &[vec![0.5]], &[0.3]).unwrap();
        assert_eq!(d.snapshots.matrix().shape(), (32, 1));
        assert_eq!(d.params.matrix().shape(), (2, 1));
        assert_eq!(d.params.sample(0), (0.3, &[0.5][..]));
    }

    #[test]
    fn dataset_layout_is_parameter_major() {
        let p = Pulse1dProblem::new(16, 0.1, 1.0);
        let mus = vec![vec![0.2], vec![0.4]];
        let times = [0.25, 0.5, 1.0];
        let d = build_dataset(&p, &mus, &times).unwrap();
        assert_eq!(d.snapshots.n_train(), 2);
        assert_eq!(d.snapshots.n_t(), 3);
        // column 4 = second parameter, second time
        let (t, mu) = d.params.sample(4);
        assert_eq!((t, mu[0]), (0.5, 0.4));
        let again = p.solve(&[0.4], &[0.5]).unwrap();
        assert_eq!(again.col(0), d.snapshots.matrix().col(4));
    }

    #[test]
    fn solver_errors_carry_parameters() {
        let p = Pulse1dProblem::new(16, 0.1, 1.0);
        let err = build_dataset(&p, &[vec![0.2], vec![7.0]], &[0.5]).unwrap_err();
        match err {
            Error::Solver { params, .. } => assert_eq!(params, vec![7.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapshot_matrix_invariants() {
        let m = Matrix::zeros(6, 4);
        assert!(SnapshotMatrix::new(m.clone(), vec![3, 3], 2, 2).is_ok());
        assert!(SnapshotMatrix::new(m.clone(), vec![3, 2], 2, 2).is_err());
        assert!(SnapshotMatrix::new(m.clone(), vec![6], 3, 2).is_err());
        let mut bad = m;
        bad[(0, 0)] = f64::NAN;
        assert!(SnapshotMatrix::new(bad, vec![6], 2, 2).is_err());
    }
}
