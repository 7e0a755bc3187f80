//! Binary file formats. All integers are little-endian `u64`, all reals
//! little-endian `f64`, matrices column-major.
//!
//! `PDRS` (snapshots): magic `PDRS1\0`, `rows, cols, d, N_h[0..d], n_mu, N_train, N_t`,
//! then `S` (`rows x cols`) and `M` (`(n_mu + 1) x cols`, time in row 0).
//!
//! `PDRB` (basis): magic `PDRB1\0`, `d, N, N_h[0..d]`, the rSVD settings
//! `N, p, q, seed`, the effective rank of each channel, then per channel `V`
//! (`N_h x N`) followed by its `N` singular values.
//!
//! `PDRC` (checkpoint): magic `PDRC1\0`, architecture (config and explicit layer
//! lists), normalization statistics, the three parameter vectors, the three Adam
//! states, the training config, basis provenance, epoch counters and history.

use std::path::Path;

use crate::dlrom::{ArchitectureConfig, BasisProvenance, Checkpoint, ModelParams, NormalizationStats, PodDlRom, TrainConfig};
use crate::error::{Error, Result};
use crate::fom::{Dataset, ParameterMatrix, SnapshotMatrix};
use crate::linalg::Matrix;
use crate::nn::{Activation, AdamState, LayerSpec, Network};
use crate::rpod::{ChannelBasis, PodBasis, RsvdConfig};

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"PDRS1\0";
pub const BASIS_MAGIC: &[u8; 6] = b"PDRB1\0";
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"PDRC1\0";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    /// Length-prefixed vector.
    fn vec(&mut self, v: &[f64]) {
        self.usize(v.len());
        self.f64s(v);
    }

    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 6], what: &'static str) -> Result<Self> {
        if buf.len() < magic.len() || &buf[..magic.len()] != magic {
            return Err(Error::Format(format!("not a {what} file (bad magic or version)")));
        }
        Ok(Self { buf, pos: magic.len(), what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated {} file at byte {}", self.what, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("size {v} out of range")))
    }

    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(unit).map_or(true, |b| b > self.buf.len() - self.pos) {
            return Err(Error::Format(format!("truncated {} file: {n} entries announced", self.what)));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        self.f64s(n)
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("size overflow".into()))?;
        Matrix::from_col_major(rows, cols, self.f64s(n)?)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {} data",
                self.buf.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let s = &data.snapshots;
    let mut w = Writer::default();
    w.0.extend_from_slice(SNAPSHOT_MAGIC);
    w.usize(s.matrix().rows());
    w.usize(s.matrix().cols());
    w.usize(s.n_channels());
    for &c in s.channels() {
        w.usize(c);
    }
    w.usize(data.params.n_params());
    w.usize(s.n_train());
    w.usize(s.n_t());
    w.f64s(s.matrix().as_slice());
    w.f64s(data.params.matrix().as_slice());
    w.0
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(buf, SNAPSHOT_MAGIC, "PDRS snapshot")?;
    let rows = r.usize()?;
    let cols = r.usize()?;
    let d = r.count(8)?;
    let channels = (0..d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n_mu = r.usize()?;
    let n_train = r.usize()?;
    let n_t = r.usize()?;
    let s = r.matrix(rows, cols)?;
    let m = r.matrix(n_mu + 1, cols)?;
    r.finish()?;
    Dataset::new(SnapshotMatrix::new(s, channels, n_train, n_t)?, ParameterMatrix::new(m)?)
}

pub fn encode_basis(basis: &PodBasis) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(BASIS_MAGIC);
    w.usize(basis.n_channels());
    w.usize(basis.rank());
    for c in basis.channel_sizes() {
        w.usize(c);
    }
    let cfg = basis.config();
    w.usize(cfg.rank);
    w.usize(cfg.oversampling);
    w.usize(cfg.power_iterations);
    w.u64(cfg.seed);
    for c in basis.channels() {
        w.usize(c.effective_rank);
    }
    for c in basis.channels() {
        w.f64s(c.basis.as_slice());
        w.f64s(&c.singular_values);
    }
    w.0
}

pub fn decode_basis(buf: &[u8]) -> Result<PodBasis> {
    let mut r = Reader::new(buf, BASIS_MAGIC, "PDRB basis")?;
    let d = r.count(8)?;
    let n = r.usize()?;
    let sizes = (0..d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let cfg = RsvdConfig {
        rank: r.usize()?,
        oversampling: r.usize()?,
        power_iterations: r.usize()?,
        seed: r.u64()?,
    };
    let ranks = (0..d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let mut channels = Vec::with_capacity(d);
    for (&rows, &effective_rank) in sizes.iter().zip(&ranks) {
        let basis = r.matrix(rows, n)?;
        let singular_values = r.f64s(n)?;
        channels.push(ChannelBasis { basis, singular_values, effective_rank });
    }
    r.finish()?;
    PodBasis::from_parts(channels, cfg)
}

fn write_layers(w: &mut Writer, net: &Network) {
    let specs = net.specs();
    w.usize(specs.len());
    for s in specs {
        let (tag, f) = match s {
            LayerSpec::Dense { units } => (0, [units, 0, 0, 0, 0]),
            LayerSpec::Conv { filters, kernel, stride, padding } => (1, [filters, kernel, stride, padding, 0]),
            LayerSpec::ConvTranspose { filters, kernel, stride, padding, output_padding } => {
                (2, [filters, kernel, stride, padding, output_padding])
            }
            LayerSpec::Reshape { height, width, channels } => (3, [height, width, channels, 0, 0]),
            LayerSpec::Activation { function } => (4, [function as usize, 0, 0, 0, 0]),
        };
        w.u64(tag);
        for v in f {
            w.usize(v);
        }
    }
}

fn read_layers(r: &mut Reader<'_>) -> Result<Vec<LayerSpec>> {
    let n = r.count(48)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u64()?;
        let f: Vec<usize> = (0..5).map(|_| r.usize()).collect::<Result<_>>()?;
        out.push(match tag {
            0 => LayerSpec::Dense { units: f[0] },
            1 => LayerSpec::Conv { filters: f[0], kernel: f[1], stride: f[2], padding: f[3] },
            2 => LayerSpec::ConvTranspose {
                filters: f[0],
                kernel: f[1],
                stride: f[2],
                padding: f[3],
                output_padding: f[4],
            },
            3 => LayerSpec::Reshape { height: f[0], width: f[1], channels: f[2] },
            4 => LayerSpec::Activation {
                function: match f[0] {
                    0 => Activation::Elu,
                    1 => Activation::Linear,
                    x => return Err(Error::Format(format!("unknown activation code {x}"))),
                },
            },
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        });
    }
    Ok(out)
}

fn write_adam(w: &mut Writer, a: &AdamState) {
    w.u64(a.t);
    w.f64(a.lr);
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
    w.vec(&a.m);
    w.vec(&a.v);
}

fn read_adam(r: &mut Reader<'_>) -> Result<AdamState> {
    Ok(AdamState {
        t: r.u64()?,
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        m: r.vec()?,
        v: r.vec()?,
    })
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    let m = &c.model;
    w.usize(m.arch.latent);
    w.usize(m.arch.kernel);
    w.usizes(&m.arch.conv_filters);
    w.usizes(&m.arch.dfnn_hidden);
    w.usize(m.n_pod);
    w.usize(m.channels);
    w.usize(m.n_mu);
    for net in [&m.encoder, &m.dfnn, &m.decoder] {
        write_layers(&mut w, net);
    }

    let s = &c.stats;
    for v in [&s.param_min, &s.param_max, &s.coord_min, &s.coord_max] {
        w.vec(v);
    }
    for p in c.params.parts() {
        w.vec(p);
    }
    for a in &c.adam {
        write_adam(&mut w, a);
    }

    let t = &c.train_config;
    w.f64(t.alpha);
    w.f64(t.learning_rate);
    w.usize(t.batch_size);
    w.usize(t.max_epochs);
    w.usize(t.patience);
    w.f64(t.omega_h);
    w.u64(t.shuffle_seed);
    w.u64(t.init_seed);
    w.u64(t.target_loss.is_some() as u64);
    w.f64(t.target_loss.unwrap_or(0.0));

    let b = &c.basis;
    w.usize(b.rsvd.rank);
    w.usize(b.rsvd.oversampling);
    w.usize(b.rsvd.power_iterations);
    w.u64(b.rsvd.seed);
    w.usize(b.n_channels);

    w.usize(c.epochs_run);
    w.usize(c.best_epoch);
    w.f64(c.best_val_loss);
    w.f64(c.initial_val_loss);
    w.usize(c.history.len());
    for &(a, v) in &c.history {
        w.f64(a);
        w.f64(v);
    }
    w.0
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(buf, CHECKPOINT_MAGIC, "PDRC checkpoint")?;
    let latent = r.usize()?;
    let kernel = r.usize()?;
    let conv_filters = r.usizes()?;
    let dfnn_hidden = r.usizes()?;
    let arch = ArchitectureConfig { latent, conv_filters, kernel, dfnn_hidden };
    let (n_pod, channels, n_mu) = (r.usize()?, r.usize()?, r.usize()?);
    let model = PodDlRom::new(&arch, n_pod, channels, n_mu).map_err(|e| Error::Format(format!("bad architecture: {e}")))?;
    for (name, net) in [("encoder", &model.encoder), ("dfnn", &model.dfnn), ("decoder", &model.decoder)] {
        if read_layers(&mut r)? != net.specs() {
            return Err(Error::Format(format!("stored {name} layers do not match the architecture config")));
        }
    }

    let stats = NormalizationStats { param_min: r.vec()?, param_max: r.vec()?, coord_min: r.vec()?, coord_max: r.vec()? };
    if stats.param_min.len() != n_mu + 1 || stats.coord_min.len() != channels {
        return Err(Error::Format("normalization statistics do not match the model".into()));
    }
    let params = ModelParams { encoder: r.vec()?, dfnn: r.vec()?, decoder: r.vec()? };
    for (name, p, net) in [
        ("encoder", &params.encoder, &model.encoder),
        ("dfnn", &params.dfnn, &model.dfnn),
        ("decoder", &params.decoder, &model.decoder),
    ] {
        if p.len() != net.n_params() {
            return Err(Error::Format(format!("{name} has {} parameters, expected {}", p.len(), net.n_params())));
        }
    }
    let adam = [read_adam(&mut r)?, read_adam(&mut r)?, read_adam(&mut r)?];

    let train_config = TrainConfig {
        alpha: r.f64()?,
        learning_rate: r.f64()?,
        batch_size: r.usize()?,
        max_epochs: r.usize()?,
        patience: r.usize()?,
        omega_h: r.f64()?,
        shuffle_seed: r.u64()?,
        init_seed: r.u64()?,
        target_loss: {
            let flag = r.u64()?;
            let v = r.f64()?;
            (flag != 0).then_some(v)
        },
    };
    let basis = BasisProvenance {
        rsvd: RsvdConfig { rank: r.usize()?, oversampling: r.usize()?, power_iterations: r.usize()?, seed: r.u64()? },
        n_channels: r.usize()?,
    };
    let epochs_run = r.usize()?;
    let best_epoch = r.usize()?;
    let best_val_loss = r.f64()?;
    let initial_val_loss = r.f64()?;
    let n_hist = r.count(16)?;
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        history.push((r.f64()?, r.f64()?));
    }
    r.finish()?;
    Ok(Checkpoint {
        model,
        params,
        stats,
        adam,
        train_config,
        basis,
        epochs_run,
        best_epoch,
        best_val_loss,
        initial_val_loss,
        history,
    })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    Ok(std::fs::write(path, encode_dataset(data))?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn save_basis(path: &Path, basis: &PodBasis) -> Result<()> {
    Ok(std::fs::write(path, encode_basis(basis))?)
}

pub fn load_basis(path: &Path) -> Result<PodBasis> {
    decode_basis(&std::fs::read(path)?)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    Ok(std::fs::write(path, encode_checkpoint(ckpt))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
