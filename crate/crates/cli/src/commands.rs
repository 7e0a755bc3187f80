use std::path::{Path, PathBuf};
use std::time::Instant;

use podlrom::dlrom::{train, Checkpoint, Init};
use podlrom::eval::{median, ErrorReport};
use podlrom::fom::{
    build_dataset, uniform_times, AdrProblem, Dataset, FullOrderModel, Interval, MonodomainProblem, ParameterMatrix,
    Pulse1dProblem, SnapshotMatrix,
};
use podlrom::io;
use podlrom::linalg::{jacobi_svd, Matrix};
use podlrom::rpod::{select_rank, square_ranks, PodBasis, RsvdConfig};
use podlrom::study::{bench, study_vs_rank, study_vs_train_size, RANK_HEADER};
use serde_json::json;

use crate::config::{self, ParamSampling, ProblemConfig, RunConfig, SamplingConfig};
use crate::manifest::{self, Manifest};
use crate::{CliError, Command, ProblemKind, Split};

pub fn run(command: Command) -> Result<(), CliError> {
    let (name, out) = describe(&command);
    let mut m = Manifest::new(name);
    let result = dispatch(command, &mut m);
    if let Err(e) = &result {
        m.status = "error";
        m.error = Some(e.message.clone());
        m.exit_code = e.code;
    }
    if let Err(e) = manifest::write(&out, &m) {
        log::warn!("could not write manifest for {}: {e}", out.display());
    }
    result
}

fn describe(c: &Command) -> (&'static str, PathBuf) {
    match c {
        Command::Template { out, .. } => ("template", out.clone()),
        Command::Gen { out, .. } => ("gen", out.clone()),
        Command::Rsvd { out, .. } => ("rsvd", out.clone()),
        Command::Train { out, .. } => ("train", out.clone()),
        Command::Infer { out, .. } => ("infer", out.clone()),
        Command::Eval { out, .. } => ("eval", out.clone()),
        Command::StudyN { out, .. } => ("study-n", out.clone()),
        Command::StudyNtrain { out, .. } => ("study-ntrain", out.clone()),
        Command::Bench { out, .. } => ("bench", out.clone()),
        Command::BenchSvd { out, .. } => ("bench-svd", out.clone()),
    }
}

fn dispatch(command: Command, m: &mut Manifest) -> Result<(), CliError> {
    match command {
        Command::Template { problem, out } => template(problem, &out, m),
        Command::Gen { config, problem, split, out, seed } => gen(&config, problem, split, &out, seed, m),
        Command::Rsvd { snaps, config, rank, select_tol, seed, out } => {
            rsvd(&snaps, config.as_deref(), rank, select_tol, seed, &out, m)
        }
        Command::Train { snaps, basis, config, warm_start, seed, out } => {
            train_cmd(&snaps, &basis, &config, warm_start.as_deref(), seed, &out, m)
        }
        Command::Infer { ckpt, basis, params, out } => infer(&ckpt, &basis, &params, &out, m),
        Command::Eval { truth, approx, out } => eval(&truth, &approx, &out, m),
        Command::StudyN { snaps, test, config, ranks, seed, out } => study_n(&snaps, &test, &config, &ranks, seed, &out, m),
        Command::StudyNtrain { config, test, sizes, seeds, out } => study_ntrain(&config, &test, &sizes, &seeds, &out, m),
        Command::Bench { ckpt, basis, test, config, train_timing, reps, out } => {
            bench_cmd(&ckpt, &basis, &test, config.as_deref(), train_timing.as_deref(), reps, &out, m)
        }
        Command::BenchSvd { snaps, ranks, reps, seed, out } => bench_svd(&snaps, &ranks, reps, seed, &out, m),
    }
}

/// Attaches the path to load failures so a missing file is named in the message.
fn load<T>(path: &Path, what: &str, f: impl FnOnce(&Path) -> podlrom::Result<T>) -> Result<T, CliError> {
    f(path).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("cannot load {what} {}: {}", path.display(), err.message);
        err
    })
}

fn load_config(path: &Path, m: &mut Manifest) -> Result<RunConfig, CliError> {
    let loaded = config::load(path)?;
    m.config = Some(path.to_path_buf());
    m.config_sha256 = Some(loaded.hash);
    Ok(loaded.config)
}

fn write_text(path: &Path, text: &str, m: &mut Manifest) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::compute(format!("cannot write {}: {e}", path.display())))?;
    m.outputs.push(path.to_path_buf());
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize, m: &mut Manifest) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::compute(e.to_string()))?;
    text.push('\n');
    write_text(path, &text, m)
}

fn saved(path: &Path, r: podlrom::Result<()>, m: &mut Manifest) -> Result<(), CliError> {
    r.map_err(|e| CliError::compute(format!("cannot write {}: {e}", path.display())))?;
    m.outputs.push(path.to_path_buf());
    Ok(())
}

fn kind_of(p: &ProblemConfig) -> ProblemKind {
    match p {
        ProblemConfig::Adr(_) => ProblemKind::Adr,
        ProblemConfig::Monodomain(_) => ProblemKind::Monodomain,
        ProblemConfig::Pulse1d(_) => ProblemKind::Pulse1d,
    }
}

/// Starter configs. The pulse preset is the quickstart and trains in a few
/// minutes on one core.
pub fn preset(kind: ProblemKind) -> RunConfig {
    use podlrom::dlrom::{ArchitectureConfig, TrainConfig};
    match kind {
        ProblemKind::Pulse1d => {
            let speed = Interval::new(0.2, 0.6);
            RunConfig {
                problem: Some(ProblemConfig::Pulse1d(Pulse1dProblem::new(128, 0.1, 1.0).with_speed_range(speed))),
                sampling: Some(SamplingConfig {
                    n_t: 50,
                    train: ParamSampling::Lattice { counts: vec![20], bounds: None },
                    test: Some(ParamSampling::Points {
                        points: (0..5).map(|i| vec![speed.min + speed.width() * (0.07 + 0.2 * i as f64)]).collect(),
                    }),
                }),
                rsvd: Some(RsvdConfig::new(16)),
                architecture: Some(ArchitectureConfig { latent: 2, conv_filters: vec![4, 8], kernel: 3, dfnn_hidden: vec![20, 20] }),
                train: Some(TrainConfig { batch_size: 20, max_epochs: 3000, patience: 3000, ..TrainConfig::default() }),
            }
        }
        ProblemKind::Monodomain => {
            let p = MonodomainProblem { grid: 32, ..MonodomainProblem::default() };
            let b = p.parameter_box.clone();
            let mid = |i: usize, f: f64| b[i].min + b[i].width() * f;
            RunConfig {
                problem: Some(ProblemConfig::Monodomain(p)),
                sampling: Some(SamplingConfig {
                    n_t: 100,
                    train: ParamSampling::Lattice { counts: vec![3, 3], bounds: None },
                    test: Some(ParamSampling::Points { points: vec![vec![mid(0, 0.3), mid(1, 0.3)], vec![mid(0, 0.7), mid(1, 0.6)]] }),
                }),
                rsvd: Some(RsvdConfig::new(64)),
                architecture: Some(ArchitectureConfig { latent: 3, conv_filters: vec![8, 16, 32], kernel: 3, dfnn_hidden: vec![50, 50] }),
                train: Some(TrainConfig { max_epochs: 3000, ..TrainConfig::default() }),
            }
        }
        ProblemKind::Adr => {
            let p = AdrProblem { grid: 24, dt: 0.02, t_final: 1.0, ..AdrProblem::default() };
            RunConfig {
                problem: Some(ProblemConfig::Adr(p)),
                sampling: Some(SamplingConfig {
                    n_t: 50,
                    train: ParamSampling::Random { count: 20, bounds: None },
                    test: Some(ParamSampling::Random { count: 4, bounds: None }),
                }),
                rsvd: Some(RsvdConfig::new(64)),
                architecture: Some(ArchitectureConfig { latent: 4, conv_filters: vec![8, 16, 32], kernel: 3, dfnn_hidden: vec![50, 50] }),
                train: Some(TrainConfig { max_epochs: 2000, ..TrainConfig::default() }),
            }
        }
    }
}

fn template(kind: ProblemKind, out: &Path, m: &mut Manifest) -> Result<(), CliError> {
    write_json(out, &preset(kind), m)
}

fn gen(config: &Path, problem: Option<ProblemKind>, split: Split, out: &Path, seed: Option<u64>, m: &mut Manifest) -> Result<(), CliError> {
    let cfg = load_config(config, m)?;
    let p = cfg.problem()?;
    if let Some(k) = problem {
        if k != kind_of(p) {
            return Err(CliError::config(format!("--problem {k:?} does not match the config's problem {:?}", kind_of(p))));
        }
    }
    let seed = seed.unwrap_or(0);
    m.seed("sampling", seed);
    let (points, times) = config::sample_points(p, cfg.sampling()?, split == Split::Test, seed)?;
    let model = p.model();
    log::info!("solving {} on {} parameter points x {} instants", model.name(), points.len(), times.len());
    let data = build_dataset(model, &points, &times)?;
    m.result("n_instances", points.len());
    m.result("n_t", times.len());
    m.result("n_h", data.snapshots.matrix().rows());
    saved(out, io::save_dataset(out, &data), m)
}

fn rsvd(
    snaps: &Path,
    config: Option<&Path>,
    rank: Option<usize>,
    select_tol: Option<f64>,
    seed: Option<u64>,
    out: &Path,
    m: &mut Manifest,
) -> Result<(), CliError> {
    m.input("snaps", snaps);
    let cfg = match config {
        Some(c) => load_config(c, m)?,
        None => RunConfig { problem: None, sampling: None, rsvd: None, architecture: None, train: None },
    };
    let rcfg = cfg.rsvd_config(rank, seed)?;
    m.seed("rsvd", rcfg.seed);
    let data = load(snaps, "snapshots", io::load_dataset)?;
    let basis = match select_tol {
        Some(tol) => {
            let candidates: Vec<usize> = square_ranks(rcfg.rank);
            let (n, err) = select_rank(&data.snapshots, &candidates, tol, &rcfg)?;
            log::info!("selected N = {n} with projection error {err:.3e}");
            m.result("selected_rank", n);
            PodBasis::compute(&data.snapshots, &RsvdConfig { rank: n, ..rcfg })?
        }
        None => PodBasis::compute(&data.snapshots, &rcfg)?,
    };
    let err = basis.projection_error(&data.snapshots)?;
    log::info!("basis rank {}, projection error on snapshots {err:.3e}", basis.rank());
    m.result("rank", basis.rank());
    m.result("projection_error", err);
    m.result("effective_rank", basis.channels().iter().map(|c| c.effective_rank).collect::<Vec<_>>());
    saved(out, io::save_basis(out, &basis), m)
}

fn train_cmd(
    snaps: &Path,
    basis_path: &Path,
    config: &Path,
    warm: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    m: &mut Manifest,
) -> Result<(), CliError> {
    m.input("snaps", snaps);
    m.input("basis", basis_path);
    let cfg = load_config(config, m)?;
    let arch = cfg.architecture()?.clone();
    let tcfg = cfg.train_config(seed);
    m.seed("shuffle", tcfg.shuffle_seed);
    m.seed("init", tcfg.init_seed);
    let data = load(snaps, "snapshots", io::load_dataset)?;
    let basis = load(basis_path, "basis", io::load_basis)?;
    let warm_ckpt = match warm {
        Some(w) => {
            m.input("warm_start", w);
            Some(load(w, "checkpoint", io::load_checkpoint)?)
        }
        None => None,
    };
    let init = warm_ckpt.as_ref().map_or(Init::Cold, Init::Warm);
    let t0 = Instant::now();
    let ckpt = train(&data, &basis, &arch, &tcfg, init)?;
    let seconds = t0.elapsed().as_secs_f64();
    log::info!(
        "trained {} epochs in {seconds:.1} s, best validation loss {:.3e} at epoch {}",
        ckpt.epochs_run,
        ckpt.best_val_loss,
        ckpt.best_epoch
    );
    m.result("n_parameters", ckpt.model.n_parameters());
    m.result("epochs_run", ckpt.epochs_run);
    m.result("best_epoch", ckpt.best_epoch);
    m.result("best_val_loss", ckpt.best_val_loss);
    m.result("initial_val_loss", ckpt.initial_val_loss);
    saved(out, io::save_checkpoint(out, &ckpt), m)?;
    let mut history = String::from("epoch,train_loss,val_loss\n");
    for (i, (tr, val)) in ckpt.history.iter().enumerate() {
        history.push_str(&format!("{},{tr:e},{val:e}\n", i + 1));
    }
    write_text(&manifest::sibling(out, "history.csv"), &history, m)?;
    // timings go to their own file so the manifest stays reproducible
    let timing = json!({ "train_seconds": seconds, "epochs_run": ckpt.epochs_run, "note": "hardware dependent" });
    write_json(&manifest::sibling(out, "timing.json"), &timing, m)
}

/// CSV rows `t,mu1,...,mu_p`; a non-numeric first line is taken as a header.
fn read_param_csv(path: &Path) -> Result<ParameterMatrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound { 2 } else { 1 };
        CliError { code, message: format!("cannot read parameters {}: {e}", path.display()) }
    })?;
    let mut cols = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match row {
            Ok(r) => cols.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    let Some(first) = cols.first() else {
        return Err(CliError::config(format!("{}: no parameter rows", path.display())));
    };
    let rows = first.len();
    if rows < 2 {
        return Err(CliError::config(format!("{}: rows need t and at least one parameter", path.display())));
    }
    Ok(ParameterMatrix::new(Matrix::from_columns(rows, &cols).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?)?)
}

fn infer(ckpt_path: &Path, basis_path: &Path, params: &Path, out: &Path, m: &mut Manifest) -> Result<(), CliError> {
    m.input("ckpt", ckpt_path);
    m.input("basis", basis_path);
    m.input("params", params);
    let ckpt: Checkpoint = load(ckpt_path, "checkpoint", io::load_checkpoint)?;
    let basis = load(basis_path, "basis", io::load_basis)?;
    let is_csv = params.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (pm, n_inst, n_t) = if is_csv {
        let pm = read_param_csv(params)?;
        let n = pm.n_samples();
        (pm, 1, n)
    } else {
        let d = load(params, "parameters", io::load_dataset)?;
        (d.params, d.snapshots.n_train(), d.snapshots.n_t())
    };
    let approx = ckpt.infer(&basis, &pm)?;
    let snaps = SnapshotMatrix::new(approx, basis.channel_sizes(), n_inst, n_t)?;
    let data = Dataset::new(snaps, pm)?;
    m.result("n_queries", data.n_samples());
    saved(out, io::save_dataset(out, &data), m)
}

fn eval(truth: &Path, approx: &Path, out: &Path, m: &mut Manifest) -> Result<(), CliError> {
    m.input("truth", truth);
    m.input("approx", approx);
    let t = load(truth, "snapshots", io::load_dataset)?;
    let a = load(approx, "snapshots", io::load_dataset)?;
    let (n_inst, n_t) = (t.snapshots.n_train(), t.snapshots.n_t());
    if t.params != a.params {
        log::warn!("truth and approximation were produced at different (t, mu) points");
    }
    let times: Vec<f64> = (0..t.n_samples()).map(|j| t.params.sample(j).0).collect();
    let report = ErrorReport::build(t.snapshots.matrix(), a.snapshots.matrix(), n_inst, n_t, &times)?;
    log::info!("eps_rel = {:.4e}", report.eps_rel);
    m.result("eps_rel", report.eps_rel);
    m.result("n_instances", n_inst);
    m.result("n_t", n_t);
    write_text(out, &report.to_csv(), m)
}

fn study_n(snaps: &Path, test: &Path, config: &Path, ranks: &[usize], seed: Option<u64>, out: &Path, m: &mut Manifest) -> Result<(), CliError> {
    m.input("snaps", snaps);
    m.input("test", test);
    let cfg = load_config(config, m)?;
    let largest = ranks.iter().copied().max().unwrap_or(0);
    let rcfg = cfg.rsvd_config(Some(largest), seed)?;
    let arch = cfg.architecture()?.clone();
    let tcfg = cfg.train_config(seed);
    m.seed("rsvd", rcfg.seed);
    m.seed("shuffle", tcfg.shuffle_seed);
    m.seed("init", tcfg.init_seed);
    let data = load(snaps, "snapshots", io::load_dataset)?;
    let test = load(test, "test snapshots", io::load_dataset)?;
    let rows = study_vs_rank(&data, &test, ranks, &rcfg, &arch, &tcfg)?;
    let mut csv = format!("{RANK_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!("{},{:e},{:e},{:e},{}\n", r.n, r.eps_total, r.eps_projection, r.eps_coords, r.epochs));
    }
    m.result("rows", &rows);
    write_text(out, &csv, m)
}

fn study_ntrain(config: &Path, test: &Path, sizes: &[usize], seeds: &[u64], out: &Path, m: &mut Manifest) -> Result<(), CliError> {
    m.input("test", test);
    let cfg = load_config(config, m)?;
    let p = cfg.problem()?;
    let model = p.model();
    let times = uniform_times(model.final_time(), model.time_step(), cfg.sampling()?.n_t)?;
    let largest = cfg.rsvd.map(|r| r.rank).ok_or_else(|| CliError::config("config has no `rsvd` section"))?;
    let rcfg = cfg.rsvd_config(Some(largest), None)?;
    let arch = cfg.architecture()?.clone();
    let tcfg = cfg.train_config(None);
    for (i, s) in seeds.iter().enumerate() {
        m.seed(&format!("run{i}"), *s);
    }
    let test = load(test, "test snapshots", io::load_dataset)?;
    let study = study_vs_train_size(model, &times, &test, sizes, seeds, &rcfg, &arch, &tcfg)?;
    m.result("slope", study.slope);
    write_json(out, &study, m)
}

#[allow(clippy::too_many_arguments)]
fn bench_cmd(
    ckpt_path: &Path,
    basis_path: &Path,
    test: &Path,
    config: Option<&Path>,
    timing: Option<&Path>,
    reps: usize,
    out: &Path,
    m: &mut Manifest,
) -> Result<(), CliError> {
    m.input("ckpt", ckpt_path);
    m.input("basis", basis_path);
    m.input("test", test);
    let ckpt = load(ckpt_path, "checkpoint", io::load_checkpoint)?;
    let basis = load(basis_path, "basis", io::load_basis)?;
    let test = load(test, "test snapshots", io::load_dataset)?;
    let cfg = match config {
        Some(c) => Some(load_config(c, m)?),
        None => None,
    };
    let model: Option<&dyn FullOrderModel> = match &cfg {
        Some(c) => Some(c.problem()?.model()),
        None => None,
    };
    let train_seconds = match timing {
        Some(t) => {
            m.input("train_timing", t);
            let text = std::fs::read_to_string(t).map_err(|e| CliError::config(format!("cannot read {}: {e}", t.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", t.display())))?;
            v.get("train_seconds").and_then(|s| s.as_f64())
        }
        None => None,
    };
    let report = bench(&ckpt, &basis, &test, model, reps, train_seconds)?;
    log::info!("inference {:.3e} s per trajectory, speed-up {:?}", report.infer_seconds, report.speedup);
    write_json(out, &report, m)
}

fn bench_svd(snaps: &Path, ranks: &[usize], reps: usize, seed: Option<u64>, out: &Path, m: &mut Manifest) -> Result<(), CliError> {
    m.input("snaps", snaps);
    let seed = seed.unwrap_or(0);
    m.seed("rsvd", seed);
    let data = load(snaps, "snapshots", io::load_dataset)?;
    let reps = reps.max(5);
    let time = |f: &mut dyn FnMut() -> podlrom::Result<()>| -> podlrom::Result<f64> {
        let mut t = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            f()?;
            t.push(t0.elapsed().as_secs_f64());
        }
        Ok(median(&t))
    };
    let channels: Vec<Matrix> = (0..data.snapshots.n_channels()).map(|k| data.snapshots.channel(k)).collect();
    let full = time(&mut || {
        for c in &channels {
            jacobi_svd(c)?;
        }
        Ok(())
    })?;
    let mut rows = Vec::new();
    for &n in ranks {
        let cfg = RsvdConfig::new(n).with_seed(seed);
        let secs = time(&mut || PodBasis::compute(&data.snapshots, &cfg).map(drop))?;
        let err = PodBasis::compute(&data.snapshots, &cfg)?.projection_error(&data.snapshots)?;
        rows.push(json!({ "rank": n, "rsvd_seconds": secs, "projection_error": err }));
    }
    let report = json!({
        "repetitions": reps,
        "full_svd_seconds": full,
        "rsvd": rows,
        "note": "timings are hardware dependent; the crossover rank is not a fixed property",
    });
    write_json(out, &report, m)
}
