//! The POD-DL-ROM network: an encoder compressing POD coordinates to `n` latent
//! values, a feed-forward network mapping `(t, mu)` to the same latent space, and a
//! convolutional decoder back to the POD coordinates. Training follows the usual
//! shuffle / split / normalize / minibatch-Adam loop with early stopping; inference
//! only runs the feed-forward network and the decoder.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{Dataset, ParameterMatrix};
use crate::linalg::Matrix;
use crate::nn::{Activation, AdamState, LayerSpec, Network, Tensor4};
use crate::rng::{stream, Stream};
use crate::rpod::{PodBasis, RsvdConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// latent dimension n
    pub latent: usize,
    /// filters of each encoder convolution; the decoder mirrors them
    #[serde(default = "default_filters")]
    pub conv_filters: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_hidden")]
    pub dfnn_hidden: Vec<usize>,
}

fn default_filters() -> Vec<usize> {
    vec![8, 16, 32, 64]
}

fn default_kernel() -> usize {
    5
}

fn default_hidden() -> Vec<usize> {
    vec![50, 50]
}

impl ArchitectureConfig {
    pub fn new(latent: usize) -> Self {
        Self { latent, conv_filters: default_filters(), kernel: default_kernel(), dfnn_hidden: default_hidden() }
    }
}

fn elu() -> LayerSpec {
    LayerSpec::Activation { function: Activation::Elu }
}

/// Side length of the square image holding `n_pod` coordinates.
pub fn image_side(n_pod: usize) -> Result<usize> {
    let s = (n_pod as f64).sqrt().round() as usize;
    if s == 0 || s * s != n_pod {
        return Err(Error::invalid(format!("POD dimension {n_pod} is not a perfect square")));
    }
    Ok(s)
}

/// Encoder, feed-forward network and decoder for a given `(N, d, n_mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PodDlRom {
    pub arch: ArchitectureConfig,
    pub n_pod: usize,
    pub channels: usize,
    pub n_mu: usize,
    pub encoder: Network,
    pub dfnn: Network,
    pub decoder: Network,
}

/// Flat parameter vectors of the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<f64>,
    pub dfnn: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl ModelParams {
    pub fn parts(&self) -> [&[f64]; 3] {
        [&self.encoder, &self.dfnn, &self.decoder]
    }
}

impl PodDlRom {
    pub fn new(arch: &ArchitectureConfig, n_pod: usize, channels: usize, n_mu: usize) -> Result<Self> {
        let side = image_side(n_pod)?;
        if arch.latent == 0 || channels == 0 {
            return Err(Error::invalid("latent dimension and channel count must be positive"));
        }
        if arch.latent > n_pod * channels {
            return Err(Error::invalid(format!(
                "latent dimension {} exceeds N d = {}",
                arch.latent,
                n_pod * channels
            )));
        }
        if arch.kernel == 0 || arch.kernel % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        let pad = (arch.kernel - 1) / 2;

        // encoder: stride 1 first, then stride 2 while the side is even
        let mut enc = Vec::new();
        let mut convs = Vec::new(); // (input shape, stride)
        let mut shape = [side, side, channels];
        for (i, &filters) in arch.conv_filters.iter().enumerate() {
            let stride = if i > 0 && shape[0] % 2 == 0 && shape[0] >= 2 { 2 } else { 1 };
            convs.push((shape, stride));
            enc.push(LayerSpec::Conv { filters, kernel: arch.kernel, stride, padding: pad });
            enc.push(elu());
            let out = (shape[0] + 2 * pad - arch.kernel) / stride + 1;
            shape = [out, out, filters];
        }
        enc.push(LayerSpec::Dense { units: arch.latent });
        let encoder = Network::new([side, side, channels], &enc)?;

        let mut df = Vec::new();
        for &w in &arch.dfnn_hidden {
            df.push(LayerSpec::Dense { units: w });
            df.push(elu());
        }
        df.push(LayerSpec::Dense { units: arch.latent });
        let dfnn = Network::new([1, 1, n_mu + 1], &df)?;

        let mut dec = vec![
            LayerSpec::Dense { units: shape.iter().product() },
            elu(),
            LayerSpec::Reshape { height: shape[0], width: shape[1], channels: shape[2] },
        ];
        for (k, &(input, stride)) in convs.iter().enumerate().rev() {
            let output_padding = (input[0] + 2 * pad - arch.kernel) % stride;
            dec.push(LayerSpec::ConvTranspose {
                filters: input[2],
                kernel: arch.kernel,
                stride,
                padding: pad,
                output_padding,
            });
            if k > 0 {
                dec.push(elu());
            }
        }
        if convs.is_empty() {
            dec.push(LayerSpec::Dense { units: n_pod * channels });
            dec.push(LayerSpec::Reshape { height: side, width: side, channels });
        }
        let decoder = Network::new([1, 1, arch.latent], &dec)?;
        if decoder.output_shape() != [side, side, channels] {
            return Err(Error::shape(format!(
                "decoder produces {:?}, expected {:?}",
                decoder.output_shape(),
                [side, side, channels]
            )));
        }
        Ok(Self { arch: arch.clone(), n_pod, channels, n_mu, encoder, dfnn, decoder })
    }

    pub fn n_parameters(&self) -> usize {
        self.encoder.n_params() + self.dfnn.n_params() + self.decoder.n_params()
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams {
            encoder: self.encoder.init_params(seed, 0),
            dfnn: self.dfnn.init_params(seed, 1),
            decoder: self.decoder.init_params(seed, 2),
        }
    }

    /// Layer-by-layer differences from `other`, empty when compatible.
    pub fn shape_differences(&self, other: &PodDlRom) -> Vec<String> {
        let mut out = Vec::new();
        if (self.n_pod, self.channels, self.n_mu) != (other.n_pod, other.channels, other.n_mu) {
            out.push(format!(
                "(N, d, n_mu): ({}, {}, {}) vs ({}, {}, {})",
                self.n_pod, self.channels, self.n_mu, other.n_pod, other.channels, other.n_mu
            ));
        }
        for (name, a, b) in [
            ("encoder", &self.encoder, &other.encoder),
            ("dfnn", &self.dfnn, &other.dfnn),
            ("decoder", &self.decoder, &other.decoder),
        ] {
            let (sa, sb) = (a.shapes(), b.shapes());
            if sa.len() != sb.len() {
                out.push(format!("{name}: {} layers vs {}", sa.len(), sb.len()));
                continue;
            }
            for (i, (x, y)) in sa.iter().zip(&sb).enumerate() {
                if x != y || a.specs()[i] != b.specs()[i] {
                    out.push(format!("{name} layer {i}: {:?} {:?} vs {:?} {:?}", x.0, x.1, y.0, y.1));
                }
            }
        }
        out
    }

    /// Normalized `(t, mu)` columns to normalized POD coordinates, without the encoder.
    pub fn predict_normalized(&self, params: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
        let x = Tensor4::from_vec([inputs.cols(), 1, 1, inputs.rows()], inputs.as_slice().to_vec())?;
        let latent = self.dfnn.forward(&params.dfnn, &x)?;
        let images = self.decoder.forward(&params.decoder, &latent)?;
        unstack(&images, self.n_pod, self.channels)
    }
}

/// Places each column's channel blocks into a `sqrt(N) x sqrt(N) x d` image,
/// row-major within a channel.
pub fn stack(coords: &Matrix, n_pod: usize, channels: usize) -> Result<Tensor4> {
    let side = image_side(n_pod)?;
    if coords.rows() != n_pod * channels {
        return Err(Error::shape(format!("{} rows, expected N d = {}", coords.rows(), n_pod * channels)));
    }
    let mut data = vec![0.0; coords.rows() * coords.cols()];
    for j in 0..coords.cols() {
        let col = coords.col(j);
        let out = &mut data[j * col.len()..(j + 1) * col.len()];
        for k in 0..channels {
            for (r, &v) in col[k * n_pod..(k + 1) * n_pod].iter().enumerate() {
                out[r * channels + k] = v;
            }
        }
    }
    Tensor4::from_vec([coords.cols(), side, side, channels], data)
}

/// Inverse of [`stack`].
pub fn unstack(images: &Tensor4, n_pod: usize, channels: usize) -> Result<Matrix> {
    let side = image_side(n_pod)?;
    let [n, h, w, c] = images.shape();
    if [h, w, c] != [side, side, channels] {
        return Err(Error::shape(format!("image shape {:?} for N = {n_pod}, d = {channels}", [h, w, c])));
    }
    let len = n_pod * channels;
    let mut out = Matrix::zeros(len, n);
    for j in 0..n {
        let sample = images.sample(j);
        let col = out.col_mut(j);
        for k in 0..channels {
            for r in 0..n_pod {
                col[k * n_pod + r] = sample[r * channels + k];
            }
        }
    }
    Ok(out)
}

/// Min-max scaling to `[0, 1]`: per row of the parameter matrix, per channel block
/// of the POD coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub param_min: Vec<f64>,
    pub param_max: Vec<f64>,
    pub coord_min: Vec<f64>,
    pub coord_max: Vec<f64>,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn unscale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + x * (hi - lo)
    } else {
        lo
    }
}

impl NormalizationStats {
    /// Statistics of the training columns only.
    pub fn from_training(params: &Matrix, coords: &Matrix, channels: usize) -> Result<Self> {
        if params.cols() == 0 || params.cols() != coords.cols() {
            return Err(Error::invalid("normalization needs matching, non-empty training columns"));
        }
        if channels == 0 || coords.rows() % channels != 0 {
            return Err(Error::shape(format!("{} coordinate rows for {channels} channels", coords.rows())));
        }
        let n = coords.rows() / channels;
        let (mut param_min, mut param_max) = (Vec::new(), Vec::new());
        for i in 0..params.rows() {
            let (lo, hi) = min_max((0..params.cols()).map(|j| params[(i, j)]));
            if hi <= lo {
                log::warn!("parameter feature {i} is constant on the training split; it is mapped to 0");
            }
            param_min.push(lo);
            param_max.push(hi);
        }
        let (mut coord_min, mut coord_max) = (Vec::new(), Vec::new());
        for k in 0..channels {
            let block = coords.row_block(k * n, (k + 1) * n);
            let (lo, hi) = min_max(block.as_slice().iter().copied());
            if hi <= lo {
                log::warn!("POD coordinates of channel {k} are constant on the training split; mapped to 0");
            }
            coord_min.push(lo);
            coord_max.push(hi);
        }
        Ok(Self { param_min, param_max, coord_min, coord_max })
    }

    fn map_params(&self, m: &Matrix, f: fn(f64, f64, f64) -> f64) -> Result<Matrix> {
        if m.rows() != self.param_min.len() {
            return Err(Error::shape(format!("{} parameter rows, stats have {}", m.rows(), self.param_min.len())));
        }
        Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| f(m[(i, j)], self.param_min[i], self.param_max[i])))
    }

    fn map_coords(&self, c: &Matrix, f: fn(f64, f64, f64) -> f64) -> Result<Matrix> {
        let d = self.coord_min.len();
        if c.rows() % d != 0 {
            return Err(Error::shape(format!("{} coordinate rows for {d} channels", c.rows())));
        }
        let n = c.rows() / d;
        Ok(Matrix::from_fn(c.rows(), c.cols(), |i, j| f(c[(i, j)], self.coord_min[i / n], self.coord_max[i / n])))
    }

    pub fn normalize_params(&self, m: &Matrix) -> Result<Matrix> {
        self.map_params(m, scale)
    }

    pub fn denormalize_params(&self, m: &Matrix) -> Result<Matrix> {
        self.map_params(m, unscale)
    }

    pub fn normalize_coords(&self, c: &Matrix) -> Result<Matrix> {
        self.map_coords(c, scale)
    }

    pub fn denormalize_coords(&self, c: &Matrix) -> Result<Matrix> {
        self.map_coords(c, unscale)
    }
}

/// Loss value and gradients for one batch.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grads: ModelParams,
}

/// Normalized inputs and targets of a set of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(t, mu)` features, shape `(b, 1, 1, n_mu + 1)`
    pub inputs: Tensor4,
    /// POD coordinates as images
    pub targets: Tensor4,
}

impl Batch {
    pub fn new(model: &PodDlRom, inputs: &Matrix, coords: &Matrix) -> Result<Self> {
        if inputs.cols() != coords.cols() {
            return Err(Error::shape("inputs and targets differ in sample count"));
        }
        Ok(Self {
            inputs: Tensor4::from_vec([inputs.cols(), 1, 1, inputs.rows()], inputs.as_slice().to_vec())?,
            targets: stack(coords, model.n_pod, model.channels)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Self {
        let pick = |t: &Tensor4| {
            let l = t.sample_len();
            let mut data = Vec::with_capacity(idx.len() * l);
            for &i in idx {
                data.extend_from_slice(t.sample(i));
            }
            let [_, h, w, c] = t.shape();
            Tensor4::from_vec([idx.len(), h, w, c], data).expect("consistent sample length")
        };
        Self { inputs: pick(&self.inputs), targets: pick(&self.targets) }
    }
}

/// `J = mean_b [ w/2 |target - decoder(dfnn(x))|^2 + (1 - w)/2 |encoder(target) - dfnn(x)|^2 ]`.
pub fn loss(model: &PodDlRom, params: &ModelParams, batch: &Batch, omega_h: f64) -> Result<f64> {
    let b = batch.len() as f64;
    let u_n = model.dfnn.forward(&params.dfnn, &batch.inputs)?;
    let recon = model.decoder.forward(&params.decoder, &u_n)?;
    let rec: f64 = recon.as_slice().iter().zip(batch.targets.as_slice()).map(|(a, t)| (a - t) * (a - t)).sum();
    let mut total = 0.5 * omega_h * rec;
    if omega_h < 1.0 {
        let enc = model.encoder.forward(&params.encoder, &batch.targets)?;
        let lat: f64 = enc.as_slice().iter().zip(u_n.as_slice()).map(|(a, t)| (a - t) * (a - t)).sum();
        total += 0.5 * (1.0 - omega_h) * lat;
    }
    Ok(total / b)
}

pub fn loss_and_grad(model: &PodDlRom, params: &ModelParams, batch: &Batch, omega_h: f64) -> Result<LossEval> {
    let b = batch.len() as f64;
    let (u_n, c_df) = model.dfnn.forward_cached(&params.dfnn, &batch.inputs)?;
    let (recon, c_dec) = model.decoder.forward_cached(&params.decoder, &u_n)?;
    let (enc, c_enc) = model.encoder.forward_cached(&params.encoder, &batch.targets)?;

    let mut g_rec = Tensor4::zeros(recon.shape());
    let mut rec = 0.0;
    for ((g, a), t) in g_rec.as_mut_slice().iter_mut().zip(recon.as_slice()).zip(batch.targets.as_slice()) {
        rec += (a - t) * (a - t);
        *g = omega_h * (a - t) / b;
    }
    let mut g_enc = Tensor4::zeros(enc.shape());
    let mut lat = 0.0;
    for ((g, a), t) in g_enc.as_mut_slice().iter_mut().zip(enc.as_slice()).zip(u_n.as_slice()) {
        lat += (a - t) * (a - t);
        *g = (1.0 - omega_h) * (a - t) / b;
    }
    let loss = (0.5 * omega_h * rec + 0.5 * (1.0 - omega_h) * lat) / b;

    let (mut g_un, g_decoder) = model.decoder.backward(&params.decoder, &c_dec, &g_rec)?;
    for (g, e) in g_un.as_mut_slice().iter_mut().zip(g_enc.as_slice()) {
        *g -= e;
    }
    let (_, g_dfnn) = model.dfnn.backward(&params.dfnn, &c_df, &g_un)?;
    let (_, g_encoder) = model.encoder.backward(&params.encoder, &c_enc, &g_enc)?;
    Ok(LossEval { loss, grads: ModelParams { encoder: g_encoder, dfnn: g_dfnn, decoder: g_decoder } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// fraction of samples held out for validation
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// epochs without validation improvement tolerated before stopping
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_omega")]
    pub omega_h: f64,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub init_seed: u64,
    /// stop as soon as the validation loss reaches this value
    #[serde(default)]
    pub target_loss: Option<f64>,
}

fn default_alpha() -> f64 {
    0.2
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    40
}
fn default_epochs() -> usize {
    10_000
}
fn default_patience() -> usize {
    500
}
fn default_omega() -> f64 {
    0.5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            omega_h: default_omega(),
            shuffle_seed: 0,
            init_seed: 0,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("split fraction alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.omega_h) {
            return Err(Error::invalid(format!("omega_h = {} must lie in [0, 1]", self.omega_h)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }

    /// `(n_train, n_val)` for `n` samples.
    pub fn split(&self, n: usize) -> Result<(usize, usize)> {
        let n_val = ((self.alpha * n as f64).round() as usize).max(1);
        if n_val >= n {
            return Err(Error::invalid(format!("{n} samples leave an empty training split")));
        }
        let n_train = n - n_val;
        if self.batch_size > n_train {
            return Err(Error::invalid(format!(
                "batch size {} exceeds the {n_train} training samples",
                self.batch_size
            )));
        }
        Ok((n_train, n_val))
    }
}

/// Settings of the rSVD that produced the basis a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisProvenance {
    pub rsvd: RsvdConfig,
    pub n_channels: usize,
}

/// A trained model with everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PodDlRom,
    /// best-validation parameters
    pub params: ModelParams,
    pub stats: NormalizationStats,
    /// optimizer states after the last epoch: encoder, dfnn, decoder
    pub adam: [AdamState; 3],
    pub train_config: TrainConfig,
    pub basis: BasisProvenance,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// validation loss of the initial parameters
    pub initial_val_loss: f64,
    /// per-epoch `(train, validation)` loss
    pub history: Vec<(f64, f64)>,
}

impl Checkpoint {
    /// First epoch whose validation loss is at most `target` (0 for the initial state).
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        if self.initial_val_loss <= target {
            return Some(0);
        }
        self.history.iter().position(|&(_, v)| v <= target).map(|e| e + 1)
    }

    /// Predicted POD coordinates for raw `(t, mu)` columns.
    pub fn predict_coords(&self, params: &Matrix) -> Result<Matrix> {
        if params.rows() != self.model.n_mu + 1 {
            return Err(Error::shape(format!(
                "parameter matrix has {} rows, model expects {}",
                params.rows(),
                self.model.n_mu + 1
            )));
        }
        let x = self.stats.normalize_params(params)?;
        let y = self.model.predict_normalized(&self.params, &x)?;
        self.stats.denormalize_coords(&y)
    }

    /// Full-order approximation `V_N S̃_N` for raw `(t, mu)` columns.
    pub fn infer(&self, basis: &PodBasis, params: &ParameterMatrix) -> Result<Matrix> {
        if basis.rank() != self.model.n_pod || basis.n_channels() != self.model.channels {
            return Err(Error::ArchitectureMismatch(format!(
                "basis has N = {}, d = {}; model expects N = {}, d = {}",
                basis.rank(),
                basis.n_channels(),
                self.model.n_pod,
                self.model.channels
            )));
        }
        basis.lift(&self.predict_coords(params.matrix())?)
    }
}

/// Initial parameters of a training run.
pub enum Init<'a> {
    Cold,
    /// continue from a checkpoint with the same architecture; optimizer state and
    /// normalization are reset for the new data
    Warm(&'a Checkpoint),
}

/// Shuffled sample order used for the train/validation split.
pub fn split_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, Stream::Shuffle, 0));
    perm
}

pub fn train(
    data: &Dataset,
    basis: &PodBasis,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    init: Init<'_>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = PodDlRom::new(arch, basis.rank(), basis.n_channels(), data.params.n_params())?;
    let mut params = match init {
        Init::Cold => model.init_params(cfg.init_seed),
        Init::Warm(ckpt) => {
            let diff = model.shape_differences(&ckpt.model);
            if !diff.is_empty() || model.arch != ckpt.model.arch {
                let mut msg = diff.join("; ");
                if msg.is_empty() {
                    msg = format!("{:?} vs {:?}", model.arch, ckpt.model.arch);
                }
                return Err(Error::ArchitectureMismatch(msg));
            }
            ckpt.params.clone()
        }
    };

    let n = data.n_samples();
    let (n_train, _) = cfg.split(n)?;
    let perm = split_permutation(n, cfg.shuffle_seed);
    let coords = basis.project(&data.snapshots)?;
    let coords = coords.select_columns(&perm);
    let inputs = data.params.matrix().select_columns(&perm);
    let (c_tr, c_val) = (coords.col_block(0, n_train), coords.col_block(n_train, n));
    let (m_tr, m_val) = (inputs.col_block(0, n_train), inputs.col_block(n_train, n));

    let stats = NormalizationStats::from_training(&m_tr, &c_tr, model.channels)?;
    let train_set = Batch::new(&model, &stats.normalize_params(&m_tr)?, &stats.normalize_coords(&c_tr)?)?;
    let val_set = Batch::new(&model, &stats.normalize_params(&m_val)?, &stats.normalize_coords(&c_val)?)?;

    let lr = cfg.learning_rate;
    let mut adam = [
        AdamState::new(params.encoder.len(), lr),
        AdamState::new(params.dfnn.len(), lr),
        AdamState::new(params.decoder.len(), lr),
    ];

    let initial_val_loss = loss(&model, &params, &val_set, cfg.omega_h)?;
    if !initial_val_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial_val_loss, history: Vec::new() });
    }
    let mut best = (initial_val_loss, params.clone(), 0usize);
    let mut history = Vec::new();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=cfg.max_epochs {
        if cfg.target_loss.is_some_and(|t| best.0 <= t) {
            break;
        }
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.shuffle_seed, Stream::Shuffle, epoch as u64));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.select(chunk);
            let eval = loss_and_grad(&model, &params, &batch, cfg.omega_h)?;
            if !eval.loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: eval.loss, history });
            }
            epoch_loss += eval.loss * chunk.len() as f64;
            adam[0].step(&mut params.encoder, &eval.grads.encoder)?;
            adam[1].step(&mut params.dfnn, &eval.grads.dfnn)?;
            adam[2].step(&mut params.decoder, &eval.grads.decoder)?;
        }
        let val = loss(&model, &params, &val_set, cfg.omega_h)?;
        history.push((epoch_loss / n_train as f64, val));
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, loss: val, history });
        }
        log::debug!("epoch {epoch}: train {:.3e}, validation {val:.3e}", epoch_loss / n_train as f64);
        if val < best.0 {
            best = (val, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }

    let (best_val_loss, best_params, best_epoch) = best;
    Ok(Checkpoint {
        model,
        params: best_params,
        stats,
        adam,
        train_config: cfg.clone(),
        basis: BasisProvenance { rsvd: *basis.config(), n_channels: basis.n_channels() },
        epochs_run: history.len(),
        best_epoch,
        best_val_loss,
        initial_val_loss,
        history,
    })
}
