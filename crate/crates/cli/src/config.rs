use std::path::Path;

use podlrom::dlrom::{ArchitectureConfig, TrainConfig};
use podlrom::fom::{lattice, random_samples, uniform_times, AdrProblem, FullOrderModel, Interval, MonodomainProblem, Pulse1dProblem};
use podlrom::rpod::RsvdConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemConfig {
    Adr(AdrProblem),
    Monodomain(MonodomainProblem),
    Pulse1d(Pulse1dProblem),
}

impl ProblemConfig {
    pub fn model(&self) -> &dyn FullOrderModel {
        match self {
            ProblemConfig::Adr(p) => p,
            ProblemConfig::Monodomain(p) => p,
            ProblemConfig::Pulse1d(p) => p,
        }
    }

    fn validate(&self) -> podlrom::Result<()> {
        match self {
            ProblemConfig::Adr(p) => p.validate(),
            ProblemConfig::Monodomain(p) => p.validate(),
            ProblemConfig::Pulse1d(p) => p.validate(),
        }
    }
}

/// How parameter instances are chosen. `bounds` defaults to the problem's box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ParamSampling {
    /// tensor lattice with `counts[i]` points along parameter `i`
    Lattice {
        counts: Vec<usize>,
        #[serde(default)]
        bounds: Option<Vec<Interval>>,
    },
    /// uniform random draws, seeded by the run seed
    Random {
        count: usize,
        #[serde(default)]
        bounds: Option<Vec<Interval>>,
    },
    /// explicit parameter points
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// number of sampled instants, equispaced in `(0, T]`
    pub n_t: usize,
    pub train: ParamSampling,
    #[serde(default)]
    pub test: Option<ParamSampling>,
}

/// Everything a pipeline run needs. Sections a subcommand does not use may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub rsvd: Option<RsvdConfig>,
    #[serde(default)]
    pub architecture: Option<ArchitectureConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

/// A parsed config and the SHA-256 of its bytes.
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
    config.validate()?;
    Ok(Loaded { config, hash: hex::encode(Sha256::digest(&bytes)) })
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(p) = &self.problem {
            p.validate().map_err(|e| bad(e.to_string()))?;
        }
        if let Some(s) = &self.sampling {
            if s.n_t == 0 {
                return Err(bad("sampling.n_t must be positive"));
            }
            if let Some(p) = &self.problem {
                let n_mu = p.model().n_params();
                for (name, set) in [("train", Some(&s.train)), ("test", s.test.as_ref())] {
                    match set {
                        Some(ParamSampling::Lattice { counts, .. }) if counts.len() != n_mu => {
                            return Err(bad(format!("sampling.{name}: {} lattice counts for {n_mu} parameters", counts.len())));
                        }
                        Some(ParamSampling::Points { points }) if points.iter().any(|q| q.len() != n_mu) => {
                            return Err(bad(format!("sampling.{name}: every point needs {n_mu} values")));
                        }
                        _ => {}
                    }
                }
            }
        }
        if let Some(r) = &self.rsvd {
            if r.rank == 0 || r.power_iterations > 2 {
                return Err(bad("rsvd: rank must be >= 1 and power_iterations <= 2"));
            }
        }
        if let Some(t) = &self.train {
            t.validate().map_err(|e| bad(format!("train: {e}")))?;
        }
        if let Some(a) = &self.architecture {
            if a.latent == 0 || a.kernel % 2 == 0 {
                return Err(bad("architecture: latent must be positive and kernel odd"));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<&ProblemConfig, CliError> {
        self.problem.as_ref().ok_or_else(|| bad("config has no `problem` section"))
    }

    pub fn sampling(&self) -> Result<&SamplingConfig, CliError> {
        self.sampling.as_ref().ok_or_else(|| bad("config has no `sampling` section"))
    }

    pub fn architecture(&self) -> Result<&ArchitectureConfig, CliError> {
        self.architecture.as_ref().ok_or_else(|| bad("config has no `architecture` section"))
    }

    /// Train settings with every seed set to `seed` when one was given on the
    /// command line.
    pub fn train_config(&self, seed: Option<u64>) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_default();
        if let Some(s) = seed {
            t.shuffle_seed = s;
            t.init_seed = s;
        }
        t
    }

    pub fn rsvd_config(&self, rank: Option<usize>, seed: Option<u64>) -> Result<RsvdConfig, CliError> {
        let mut r = match (self.rsvd, rank) {
            (Some(r), Some(n)) => RsvdConfig { rank: n, ..r },
            (Some(r), None) => r,
            (None, Some(n)) => RsvdConfig::new(n),
            (None, None) => return Err(bad("no rSVD rank: add an `rsvd` section or pass --rank")),
        };
        if let Some(s) = seed {
            r.seed = s;
        }
        Ok(r)
    }
}

/// Concrete parameter points and sample times for one split.
pub fn sample_points(problem: &ProblemConfig, sampling: &SamplingConfig, test: bool, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    let model = problem.model();
    let set = if test {
        sampling.test.as_ref().ok_or_else(|| bad("config has no `sampling.test` section"))?
    } else {
        &sampling.train
    };
    let default_box = model.parameter_box().to_vec();
    let points = match set {
        ParamSampling::Lattice { counts, bounds } => {
            let b = bounds.clone().unwrap_or(default_box);
            if b.len() != counts.len() {
                return Err(bad("lattice bounds and counts differ in length"));
            }
            lattice(&b.into_iter().zip(counts.iter().copied()).collect::<Vec<_>>()).map_err(|e| bad(e.to_string()))?
        }
        ParamSampling::Random { count, bounds } => {
            // test draws use a separate seed so they differ from the training draws
            random_samples(&bounds.clone().unwrap_or(default_box), *count, if test { seed ^ 0x7e57 } else { seed })
        }
        ParamSampling::Points { points } => points.clone(),
    };
    let times = uniform_times(model.final_time(), model.time_step(), sampling.n_t).map_err(|e| bad(e.to_string()))?;
    Ok((points, times))
}
