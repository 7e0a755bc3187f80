//! Parameter studies built on top of training: accuracy against the POD dimension,
//! against the number of training parameters, and wall-clock timings.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dlrom::{train, ArchitectureConfig, Checkpoint, Init, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{error_indicator, loglog_slope, median};
use crate::fom::{build_dataset, random_samples, Dataset, FullOrderModel, ParameterMatrix};
use crate::rpod::{PodBasis, RsvdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub n: usize,
    /// `eps_rel(u_h, ũ_h)`
    pub eps_total: f64,
    /// `eps_rel(u_h, V_N V_Nᵀ u_h)`
    pub eps_projection: f64,
    /// `eps_rel(V_Nᵀ u_h, ũ_N)`
    pub eps_coords: f64,
    pub epochs: usize,
}

pub const RANK_HEADER: &str = "n,eps_total,eps_projection,eps_coords,epochs";

fn test_error(ckpt: &Checkpoint, basis: &PodBasis, test: &Dataset) -> Result<(f64, f64)> {
    let s = &test.snapshots;
    let coords = ckpt.predict_coords(test.params.matrix())?;
    let approx = basis.lift(&coords)?;
    let total = error_indicator(s.matrix(), &approx, s.n_train(), s.n_t())?;
    let exact = basis.project(s)?;
    let reduced = error_indicator(&exact, &coords, s.n_train(), s.n_t())?;
    Ok((total, reduced))
}

/// Trains one model per `N` on nested truncations of a single basis.
pub fn study_vs_rank(
    train_data: &Dataset,
    test: &Dataset,
    ranks: &[usize],
    rsvd: &RsvdConfig,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
) -> Result<Vec<RankRow>> {
    let mut ranks = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    let Some(&largest) = ranks.last() else {
        return Err(Error::invalid("no ranks given"));
    };
    let full = PodBasis::compute(&train_data.snapshots, &RsvdConfig { rank: largest, ..*rsvd })?;
    let bases = ranks.iter().map(|&n| full.truncate(n)).collect::<Result<Vec<_>>>()?;
    let projection = bases.iter().map(|b| b.projection_error(&test.snapshots)).collect::<Result<Vec<_>>>()?;
    if let Some(w) = projection.windows(2).position(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-15) {
        return Err(Error::invalid(format!(
            "projection error increases from N = {} to N = {}: {:e} -> {:e}",
            ranks[w],
            ranks[w + 1],
            projection[w],
            projection[w + 1]
        )));
    }
    let mut rows = Vec::with_capacity(ranks.len());
    for ((&n, basis), eps_projection) in ranks.iter().zip(&bases).zip(projection) {
        let ckpt = train(train_data, basis, arch, cfg, Init::Cold)?;
        let (eps_total, eps_coords) = test_error(&ckpt, basis, test)?;
        log::info!("N = {n}: eps_rel {eps_total:.3e}, projection {eps_projection:.3e}");
        rows.push(RankRow { n, eps_total, eps_projection, eps_coords, epochs: ckpt.epochs_run });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSizeRow {
    pub n_train: usize,
    /// one value per seed
    pub eps: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSizeStudy {
    pub rows: Vec<TrainSizeRow>,
    /// fitted log-log slope of the median error; absent with fewer than two sizes
    pub slope: Option<f64>,
    /// decay rate reported for the full-scale method, about `1 / N_train`
    pub reference_slope: f64,
}

/// Trains with `N_train` random parameters drawn per seed, for each size in `sizes`.
/// Seeds drive parameter sampling, the rSVD sketch, shuffling and initialization.
#[allow(clippy::too_many_arguments)]
pub fn study_vs_train_size(
    model: &dyn FullOrderModel,
    times: &[f64],
    test: &Dataset,
    sizes: &[usize],
    seeds: &[u64],
    rsvd: &RsvdConfig,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
) -> Result<TrainSizeStudy> {
    if seeds.is_empty() || sizes.is_empty() {
        return Err(Error::invalid("need at least one size and one seed"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut eps = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let params = random_samples(model.parameter_box(), size, seed);
            let data = build_dataset(model, &params, times)?;
            let basis = PodBasis::compute(&data.snapshots, &RsvdConfig { seed, ..*rsvd })?;
            let run = TrainConfig { shuffle_seed: seed, init_seed: seed, ..cfg.clone() };
            let ckpt = train(&data, &basis, arch, &run, Init::Cold)?;
            eps.push(test_error(&ckpt, &basis, test)?.0);
        }
        let m = median(&eps);
        log::info!("N_train = {size}: median eps_rel {m:.3e}");
        rows.push(TrainSizeRow { n_train: size, eps, median: m });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n_train as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median).collect();
    Ok(TrainSizeStudy { slope: loglog_slope(&x, &y), rows, reference_slope: -1.0 })
}

/// Wall-clock timings. Values depend on the machine and are never compared
/// against fixed thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub n_queries: usize,
    /// median seconds to evaluate all queries of one test instance
    pub infer_seconds: f64,
    /// median seconds for one full-order solve, when a model was given
    pub fom_seconds: Option<f64>,
    pub speedup: Option<f64>,
    pub train_seconds: Option<f64>,
    pub note: String,
}

pub const BENCH_NOTE: &str = "timings are hardware dependent; the reference GPU study reports speed-ups of order 1e4 (e.g. 1.62e4 for the ADR test), which desk runs are not expected to match";

fn median_time(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(&times))
}

/// Times inference of the first test instance (its `N_t` columns) and, optionally,
/// the full-order solve of the same instance.
pub fn bench(
    ckpt: &Checkpoint,
    basis: &PodBasis,
    test: &Dataset,
    model: Option<&dyn FullOrderModel>,
    repetitions: usize,
    train_seconds: Option<f64>,
) -> Result<BenchReport> {
    if test.n_samples() == 0 {
        return Err(Error::invalid("empty test set"));
    }
    let reps = repetitions.max(5);
    let n_t = test.snapshots.n_t();
    let first = ParameterMatrix::new(test.params.matrix().col_block(0, n_t))?;
    let infer_seconds = median_time(reps, || ckpt.infer(basis, &first).map(drop))?;
    let fom_seconds = match model {
        Some(m) => {
            let (_, mu) = first.sample(0);
            let mu = mu.to_vec();
            let times: Vec<f64> = (0..n_t).map(|j| first.sample(j).0).collect();
            Some(median_time(reps, || m.solve(&mu, &times).map(drop))?)
        }
        None => None,
    };
    Ok(BenchReport {
        repetitions: reps,
        n_queries: n_t,
        infer_seconds,
        fom_seconds,
        speedup: fom_seconds.map(|f| f / infer_seconds),
        train_seconds,
        note: BENCH_NOTE.to_string(),
    })
}
