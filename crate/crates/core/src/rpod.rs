//! Randomized POD: a Gaussian range finder with subspace iteration followed by an
//! exact SVD of the small projected matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::fom::SnapshotMatrix;
use crate::linalg::{jacobi_svd, orthonormalize, Matrix, Qr};
use crate::rng::{stream, Gaussian, Stream};

/// Relative threshold below which trailing singular values count as rank loss.
pub const RANK_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsvdConfig {
    /// target rank N
    pub rank: usize,
    /// extra sketch columns, m - N
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    /// power exponent q
    #[serde(default = "default_power")]
    pub power_iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_oversampling() -> usize {
    8
}

fn default_power() -> usize {
    2
}

impl RsvdConfig {
    pub fn new(rank: usize) -> Self {
        Self { rank, oversampling: default_oversampling(), power_iterations: default_power(), seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_oversampling(mut self, p: usize) -> Self {
        self.oversampling = p;
        self
    }

    pub fn with_power_iterations(mut self, q: usize) -> Self {
        self.power_iterations = q;
        self
    }

    pub fn sketch_size(&self) -> usize {
        self.rank + self.oversampling
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rSVD rank must be at least 1"));
        }
        if self.power_iterations > 2 {
            return Err(Error::invalid(format!(
                "power iterations must be 0, 1 or 2, got {}",
                self.power_iterations
            )));
        }
        if self.sketch_size() > rows.min(cols) {
            return Err(Error::shape(format!(
                "rank + oversampling = {} exceeds min({rows}, {cols})",
                self.sketch_size()
            )));
        }
        Ok(())
    }
}

/// Output of one randomized SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsvd {
    /// orthonormal columns, rows x N
    pub basis: Matrix,
    /// leading singular values, descending
    pub singular_values: Vec<f64>,
    /// number of singular values above `RANK_TOLERANCE * sigma_1`
    pub effective_rank: usize,
}

/// Randomized SVD of `s`. `stream_index` separates the sketches of different
/// channels drawn from one seed.
pub fn rsvd(s: &Matrix, cfg: &RsvdConfig, stream_index: u64) -> Result<Rsvd> {
    let (rows, cols) = s.shape();
    cfg.validate(rows, cols)?;
    if !s.is_finite() {
        return Err(Error::invalid("snapshot matrix has non-finite entries"));
    }
    let m = cfg.sketch_size();

    let mut omega = Matrix::zeros(cols, m);
    Gaussian::new(stream(cfg.seed, Stream::Sketch, stream_index)).fill(omega.as_mut_slice());

    // subspace iteration: re-orthonormalize after every product with S or Sᵀ
    let mut q = orthonormalize(&s.matmul(&omega)?)?;
    for _ in 0..cfg.power_iterations {
        let z = orthonormalize(&s.tr_matmul(&q)?)?;
        q = orthonormalize(&s.matmul(&z)?)?;
    }

    // B = QᵀS (m x cols); its left singular vectors are those of Rᵀ where Bᵀ = Q₂R
    let b = q.tr_matmul(s)?;
    let r = Qr::new(&b.transpose())?.r();
    let small = jacobi_svd(&r.transpose())?;

    let lead = small.u.col_block(0, cfg.rank);
    let mut basis = q.matmul(&lead)?;
    fix_signs(&mut basis);
    let singular_values = small.s[..cfg.rank].to_vec();

    let top = singular_values[0];
    let effective_rank = singular_values.iter().filter(|&&x| x > RANK_TOLERANCE * top).count();
    if effective_rank < cfg.rank {
        log::warn!(
            "snapshot matrix has numerical rank {effective_rank} below requested rank {}",
            cfg.rank
        );
    }
    Ok(Rsvd { basis, singular_values, effective_rank })
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn fix_signs(v: &mut Matrix) {
    for j in 0..v.cols() {
        let col = v.col_mut(j);
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// POD basis of one field component.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBasis {
    pub basis: Matrix,
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
}

/// Per-channel rPOD bases sharing one rank N, plus the sketch settings that built them.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    channels: Vec<ChannelBasis>,
    config: RsvdConfig,
}

impl PodBasis {
    pub fn from_parts(channels: Vec<ChannelBasis>, config: RsvdConfig) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("basis needs at least one channel"));
        }
        let n = channels[0].basis.cols();
        for (k, c) in channels.iter().enumerate() {
            if c.basis.cols() != n || c.singular_values.len() != n {
                return Err(Error::shape(format!("channel {k} has a different rank")));
            }
        }
        Ok(Self { channels, config })
    }

    /// rSVD of every channel block of `snapshots`.
    pub fn compute(snapshots: &SnapshotMatrix, cfg: &RsvdConfig) -> Result<Self> {
        let channels = (0..snapshots.n_channels())
            .map(|k| {
                let r = rsvd(&snapshots.channel(k), cfg, k as u64)?;
                Ok(ChannelBasis {
                    basis: r.basis,
                    singular_values: r.singular_values,
                    effective_rank: r.effective_rank,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(channels, *cfg)
    }

    pub fn rank(&self) -> usize {
        self.channels[0].basis.cols()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_sizes(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.basis.rows()).collect()
    }

    pub fn channels(&self) -> &[ChannelBasis] {
        &self.channels
    }

    pub fn config(&self) -> &RsvdConfig {
        &self.config
    }

    /// First `n` columns of every channel basis.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.rank() {
            return Err(Error::invalid(format!("cannot truncate rank {} to {n}", self.rank())));
        }
        let channels = self
            .channels
            .iter()
            .map(|c| ChannelBasis {
                basis: c.basis.col_block(0, n),
                singular_values: c.singular_values[..n].to_vec(),
                effective_rank: c.effective_rank.min(n),
            })
            .collect();
        Ok(Self { channels, config: RsvdConfig { rank: n, ..self.config } })
    }

    fn check_rows(&self, channels: &[usize]) -> Result<()> {
        if channels != self.channel_sizes().as_slice() {
            return Err(Error::shape(format!(
                "snapshot channels {channels:?} do not match basis channels {:?}",
                self.channel_sizes()
            )));
        }
        Ok(())
    }

    /// Intrinsic coordinates `V_{N,i}ᵀ S_i`, channel-blocked (`d N x N_s`).
    pub fn project(&self, snapshots: &SnapshotMatrix) -> Result<Matrix> {
        self.check_rows(snapshots.channels())?;
        self.project_matrix(snapshots.matrix())
    }

    /// Same as [`PodBasis::project`] on a raw matrix with stacked channel rows.
    pub fn project_matrix(&self, s: &Matrix) -> Result<Matrix> {
        let total: usize = self.channel_sizes().iter().sum();
        if s.rows() != total {
            return Err(Error::shape(format!("{} rows, basis expects {total}", s.rows())));
        }
        let mut blocks = Vec::with_capacity(self.channels.len());
        let mut off = 0;
        for c in &self.channels {
            let rows = c.basis.rows();
            blocks.push(c.basis.tr_matmul(&s.row_block(off, off + rows))?);
            off += rows;
        }
        Matrix::vstack(&blocks)
    }

    /// Maps channel-blocked coordinates back to the full space, `V_N S_N`.
    pub fn lift(&self, coords: &Matrix) -> Result<Matrix> {
        let n = self.rank();
        if coords.rows() != n * self.channels.len() {
            return Err(Error::shape(format!(
                "{} coordinate rows, expected {} channels x {n}",
                coords.rows(),
                self.channels.len()
            )));
        }
        let blocks = self
            .channels
            .iter()
            .enumerate()
            .map(|(k, c)| c.basis.matmul(&coords.row_block(k * n, (k + 1) * n)))
            .collect::<Result<Vec<_>>>()?;
        Matrix::vstack(&blocks)
    }

    /// `eps_rel(u, V_N V_Nᵀ u)` over the trajectories of `snapshots`.
    pub fn projection_error(&self, snapshots: &SnapshotMatrix) -> Result<f64> {
        if snapshots.n_samples() == 0 {
            return Err(Error::invalid("empty dataset"));
        }
        let recon = self.lift(&self.project(snapshots)?)?;
        eval::error_indicator(snapshots.matrix(), &recon, snapshots.n_train(), snapshots.n_t())
    }
}

/// Smallest `N` among `candidates` whose projection error is at most `tolerance`.
/// One basis is computed at the largest admissible candidate and truncated, so the
/// candidate bases are nested and the error is monotone in `N`.
pub fn select_rank(
    snapshots: &SnapshotMatrix,
    candidates: &[usize],
    tolerance: f64,
    cfg: &RsvdConfig,
) -> Result<(usize, f64)> {
    let (rows, cols) = snapshots.matrix().shape();
    let limit = snapshots.channels().iter().copied().min().unwrap_or(0).min(cols);
    let mut usable: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&n| n >= 1 && n + cfg.oversampling <= limit.min(rows))
        .collect();
    usable.sort_unstable();
    usable.dedup();
    let Some(&largest) = usable.last() else {
        return Err(Error::invalid("no candidate rank fits the snapshot matrix"));
    };
    let full = PodBasis::compute(snapshots, &RsvdConfig { rank: largest, ..*cfg })?;
    let mut last = (largest, f64::NAN);
    for n in usable {
        let err = full.truncate(n)?.projection_error(snapshots)?;
        last = (n, err);
        if err <= tolerance {
            return Ok(last);
        }
    }
    log::warn!("no candidate rank reaches projection error {tolerance:e}; using N = {}", last.0);
    Ok(last)
}

/// Admissible ranks for the convolutional model: `4^m` for `m >= 1`, up to `max`.
pub fn square_ranks(max: usize) -> Vec<usize> {
    std::iter::successors(Some(4usize), |&n| n.checked_mul(4)).take_while(|&n| n <= max).collect()
}
