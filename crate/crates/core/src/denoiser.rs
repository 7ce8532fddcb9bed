//! Small trainable denoising score model and its training loop.
//!
//! One instance per training noise level (nearest-level lookup at sampling
//! time): a learnable per-position diagonal gain plus a two-layer 3x3
//! convolutional refinement over the (re, im) channels. The diagonal part
//! alone can represent the optimal linear shrinkage at each level, so the
//! model trains to a useful score in minutes on a CPU. Trained with the
//! sigma^2-weighted denoising score matching objective and Adam.

use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::freq::OperatorTag;
use crate::grid::ComplexGrid;
use crate::io::{read_json_blob, write_json_blob};
use crate::rng::substream;
use crate::score::{NoiseSchedule, ScoreModel};

const KERNEL: usize = 3;
const PAD: usize = 1;
pub const MAX_TRAIN_LEVELS: usize = 10;

/// sigma^2-weighted DSM objective: mean over the batch of
/// ||sigma * model(x + sigma z, sigma) + z||^2, summed over all real
/// components. A zero model scores the real dimension d = 2 H W.
pub fn dsm_loss(
    model: &dyn ScoreModel,
    batch: &[ComplexGrid],
    sigma: f64,
    noise: &[ComplexGrid],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidInput("dsm_loss needs a nonempty batch".into()));
    }
    if batch.len() != noise.len() {
        return Err(CoreError::InvalidInput(format!(
            "batch has {} items but {} noise draws",
            batch.len(),
            noise.len()
        )));
    }
    let mut total = 0.0;
    for (x, z) in batch.iter().zip(noise) {
        if x.shape() != z.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: x.shape(),
                got: z.shape(),
            });
        }
        let noisy = x.axpy(sigma, z);
        let score = model.evaluate(&noisy, sigma);
        let residual = score.scale(sigma).add(z);
        total += residual.norm_sqr();
    }
    Ok(total / batch.len() as f64)
}

fn to_channels(k: &ComplexGrid) -> Array3<f64> {
    let (h, w) = k.shape();
    Array3::from_shape_fn((2, h, w), |(c, i, j)| {
        let v = k.get(i, j);
        if c == 0 {
            v.re
        } else {
            v.im
        }
    })
}

fn from_channels(f: &Array3<f64>) -> ComplexGrid {
    let (_, h, w) = f.dim();
    ComplexGrid::from_fn(h, w, |i, j| Complex64::new(f[(0, i, j)], f[(1, i, j)]))
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.1 * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.1
    }
}

/// 3x3 zero-padded convolution, channels-first.
fn conv3x3(
    input: &Array3<f64>,
    weight: &[f64], // (out_c, in_c, 3, 3) flattened
    bias: &[f64],
    out_c: usize,
    out: &mut Array3<f64>,
) {
    let (in_c, h, w) = input.dim();
    let x = input.as_slice().expect("contiguous activations");
    let y = out.as_slice_mut().expect("contiguous activations");
    for oc in 0..out_c {
        let base_o = oc * h * w;
        y[base_o..base_o + h * w].fill(bias[oc]);
        for ic in 0..in_c {
            let base_i = ic * h * w;
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    let wv = weight[((oc * in_c + ic) * KERNEL + dy) * KERNEL + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    // out[i][j] += wv * in[i+dy-1][j+dx-1]
                    let (i_lo, i_hi) = row_range(h, dy);
                    for i in i_lo..i_hi {
                        let ii = i + dy - PAD;
                        let (j_lo, j_hi) = row_range(w, dx);
                        let src = base_i + ii * w;
                        let dst = base_o + i * w;
                        for j in j_lo..j_hi {
                            y[dst + j] += wv * x[src + j + dx - PAD];
                        }
                    }
                }
            }
        }
    }
}

/// Valid output rows for a kernel offset under zero padding.
fn row_range(n: usize, d: usize) -> (usize, usize) {
    // need 0 <= i + d - PAD < n
    let lo = PAD.saturating_sub(d);
    let hi = (n + PAD - d).min(n);
    (lo, hi)
}

/// Accumulate dL/dweight for a 3x3 convolution.
fn conv3x3_grad_weight(
    input: &Array3<f64>,
    grad_out: &Array3<f64>,
    out_c: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let (in_c, h, w) = input.dim();
    let x = input.as_slice().expect("contiguous");
    let g = grad_out.as_slice().expect("contiguous");
    for oc in 0..out_c {
        let base_o = oc * h * w;
        grad_b[oc] += g[base_o..base_o + h * w].iter().sum::<f64>();
        for ic in 0..in_c {
            let base_i = ic * h * w;
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    let mut acc = 0.0;
                    let (i_lo, i_hi) = row_range(h, dy);
                    for i in i_lo..i_hi {
                        let ii = i + dy - PAD;
                        let (j_lo, j_hi) = row_range(w, dx);
                        let src = base_i + ii * w;
                        let dst = base_o + i * w;
                        for j in j_lo..j_hi {
                            acc += g[dst + j] * x[src + j + dx - PAD];
                        }
                    }
                    grad_w[((oc * in_c + ic) * KERNEL + dy) * KERNEL + dx] += acc;
                }
            }
        }
    }
}

/// dL/dinput of a 3x3 convolution (transpose pass).
fn conv3x3_grad_input(
    grad_out: &Array3<f64>,
    weight: &[f64],
    in_c: usize,
    grad_in: &mut Array3<f64>,
) {
    let (out_c, h, w) = grad_out.dim();
    let g = grad_out.as_slice().expect("contiguous");
    let gi = grad_in.as_slice_mut().expect("contiguous");
    gi.fill(0.0);
    for oc in 0..out_c {
        let base_o = oc * h * w;
        for ic in 0..in_c {
            let base_i = ic * h * w;
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    let wv = weight[((oc * in_c + ic) * KERNEL + dy) * KERNEL + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (i_lo, i_hi) = row_range(h, dy);
                    for i in i_lo..i_hi {
                        let ii = i + dy - PAD;
                        let (j_lo, j_hi) = row_range(w, dx);
                        let src = base_i + ii * w;
                        let dst = base_o + i * w;
                        for j in j_lo..j_hi {
                            gi[src + j + dx - PAD] += wv * g[dst + j];
                        }
                    }
                }
            }
        }
    }
}

/// Parameter layout of one per-level instance, flattened for Adam and
/// checkpointing: diag gain a (2*h*w), conv1 w/b (c*2*9, c), conv2 w/b
/// (2*c*9, 2).
#[derive(Debug, Clone, PartialEq)]
struct LevelNet {
    h: usize,
    w: usize,
    c: usize,
    params: Vec<f64>,
}

struct Offsets {
    a: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl LevelNet {
    fn offsets(h: usize, w: usize, c: usize) -> Offsets {
        let a = 0;
        let w1 = a + 2 * h * w;
        let b1 = w1 + c * 2 * KERNEL * KERNEL;
        let w2 = b1 + c;
        let b2 = w2 + 2 * c * KERNEL * KERNEL;
        let total = b2 + 2;
        Offsets {
            a,
            w1,
            b1,
            w2,
            b2,
            total,
        }
    }

    fn init(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> Self {
        let off = Self::offsets(h, w, c);
        let mut params = vec![0.0; off.total];
        // Diagonal gain and biases start at zero; conv weights small normal.
        let std1 = 0.1 / ((2 * KERNEL * KERNEL) as f64).sqrt();
        for p in params[off.w1..off.b1].iter_mut() {
            *p = std1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let std2 = 0.1 / ((c * KERNEL * KERNEL) as f64).sqrt();
        for p in params[off.w2..off.b2].iter_mut() {
            *p = std2 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        Self { h, w, c, params }
    }

    fn forward(&self, y: &Array3<f64>) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
        let off = Self::offsets(self.h, self.w, self.c);
        let (h, w, c) = (self.h, self.w, self.c);
        let mut u = Array3::zeros((c, h, w));
        conv3x3(
            y,
            &self.params[off.w1..off.b1],
            &self.params[off.b1..off.w2],
            c,
            &mut u,
        );
        let hid = u.mapv(leaky);
        let mut f = Array3::zeros((2, h, w));
        conv3x3(
            &hid,
            &self.params[off.w2..off.b2],
            &self.params[off.b2..off.total],
            2,
            &mut f,
        );
        // Diagonal residual path.
        {
            let a = &self.params[off.a..off.w1];
            let ys = y.as_slice().expect("contiguous");
            let fs = f.as_slice_mut().expect("contiguous");
            for idx in 0..a.len() {
                fs[idx] += a[idx] * ys[idx];
            }
        }
        (u, hid, f)
    }

    /// Accumulate parameter gradients for dL/df = g.
    fn backward(
        &self,
        y: &Array3<f64>,
        u: &Array3<f64>,
        hid: &Array3<f64>,
        g: &Array3<f64>,
        grad: &mut [f64],
    ) {
        let off = Self::offsets(self.h, self.w, self.c);
        // Diagonal gain.
        {
            let ys = y.as_slice().unwrap();
            let gs = g.as_slice().unwrap();
            let ga = &mut grad[off.a..off.w1];
            for idx in 0..ga.len() {
                ga[idx] += gs[idx] * ys[idx];
            }
        }
        // conv2 parameters and input gradient.
        {
            let (gw2, rest) = grad[off.w2..].split_at_mut(off.b2 - off.w2);
            conv3x3_grad_weight(hid, g, 2, gw2, &mut rest[..2]);
        }
        let mut gh = Array3::zeros(hid.dim());
        conv3x3_grad_input(g, &self.params[off.w2..off.b2], self.c, &mut gh);
        // Through the activation.
        let mut gu = gh;
        {
            let us = u.as_slice().unwrap();
            let gus = gu.as_slice_mut().unwrap();
            for idx in 0..gus.len() {
                gus[idx] *= leaky_grad(us[idx]);
            }
        }
        // conv1 parameters.
        {
            let (gw1, rest) = grad[off.w1..].split_at_mut(off.b1 - off.w1);
            conv3x3_grad_weight(y, &gu, self.c, gw1, &mut rest[..self.c]);
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, beta1: f64, beta2: f64) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + 1e-8);
        }
    }
}

/// Compact schedule description stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub levels: usize,
}

impl From<&NoiseSchedule> for ScheduleSpec {
    fn from(s: &NoiseSchedule) -> Self {
        Self {
            sigma_max: s.sigma_max(),
            sigma_min: s.sigma_min(),
            levels: s.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    kind: String,
    height: usize,
    width: usize,
    channels: usize,
    level_sigmas: Vec<f64>,
    schedule: ScheduleSpec,
    operator: OperatorTag,
    seed: u64,
    data_scale: f64,
}

/// Noise-conditional trainable score model: one diag+conv denoiser per
/// training level, evaluated through nearest-level lookup in log-sigma.
pub struct TrainableScore {
    height: usize,
    width: usize,
    channels: usize,
    level_sigmas: Vec<f64>,
    nets: Vec<LevelNet>,
    adam: Vec<AdamState>,
    operator: OperatorTag,
    seed: u64,
    /// Inputs are expected normalized to this max magnitude.
    data_scale: f64,
}

impl TrainableScore {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        schedule: &NoiseSchedule,
        operator: OperatorTag,
        seed: u64,
    ) -> Result<Self> {
        if schedule.len() > MAX_TRAIN_LEVELS {
            return Err(CoreError::InvalidInput(format!(
                "per-level instances support at most {MAX_TRAIN_LEVELS} training levels, got {}",
                schedule.len()
            )));
        }
        if channels == 0 {
            return Err(CoreError::InvalidInput("channels must be positive".into()));
        }
        let mut nets = Vec::with_capacity(schedule.len());
        let mut adam = Vec::with_capacity(schedule.len());
        for level in 0..schedule.len() {
            let mut rng = substream(seed, &format!("model-init/level{level}"));
            let net = LevelNet::init(height, width, channels, &mut rng);
            adam.push(AdamState::new(net.params.len()));
            nets.push(net);
        }
        Ok(Self {
            height,
            width,
            channels,
            level_sigmas: schedule.sigmas().to_vec(),
            nets,
            adam,
            operator,
            seed,
            data_scale: 1.0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn level_sigmas(&self) -> &[f64] {
        &self.level_sigmas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data_scale(&self) -> f64 {
        self.data_scale
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(|n| n.params.len()).sum()
    }

    fn nearest_level(&self, sigma: f64) -> usize {
        let ls = sigma.max(1e-300).ln();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.level_sigmas.iter().enumerate() {
            let d = (s.ln() - ls).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Whether two parameter sets are identical bit for bit.
    pub fn params_equal(&self, other: &Self) -> bool {
        self.nets == other.nets
    }

    pub fn save_checkpoint(&self, path: &std::path::Path, schedule: &ScheduleSpec) -> Result<()> {
        let header = CheckpointHeader {
            version: 1,
            kind: "diag_conv_denoiser".into(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            level_sigmas: self.level_sigmas.clone(),
            schedule: schedule.clone(),
            operator: self.operator.clone(),
            seed: self.seed,
            data_scale: self.data_scale,
        };
        let mut blob = Vec::new();
        for net in &self.nets {
            for p in &net.params {
                blob.extend_from_slice(&(*p as f32).to_le_bytes());
            }
        }
        write_json_blob(path, &header, &blob)
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<(Self, ScheduleSpec)> {
        let (header_bytes, blob) = read_json_blob(path)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| CoreError::Malformed {
                path: path.display().to_string(),
                detail: format!("bad checkpoint header: {e}"),
            })?;
        if header.kind != "diag_conv_denoiser" || header.version != 1 {
            return Err(CoreError::Malformed {
                path: path.display().to_string(),
                detail: format!("unsupported checkpoint kind/version {}/{}", header.kind, header.version),
            });
        }
        let off = LevelNet::offsets(header.height, header.width, header.channels);
        let expected = 4 * off.total * header.level_sigmas.len();
        if blob.len() != expected {
            return Err(CoreError::Malformed {
                path: path.display().to_string(),
                detail: format!("parameter blob is {} bytes, expected {expected}", blob.len()),
            });
        }
        let mut nets = Vec::with_capacity(header.level_sigmas.len());
        let mut adam = Vec::with_capacity(header.level_sigmas.len());
        let mut values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        for _ in 0..header.level_sigmas.len() {
            let params: Vec<f64> = values.by_ref().take(off.total).collect();
            adam.push(AdamState::new(params.len()));
            nets.push(LevelNet {
                h: header.height,
                w: header.width,
                c: header.channels,
                params,
            });
        }
        Ok((
            Self {
                height: header.height,
                width: header.width,
                channels: header.channels,
                level_sigmas: header.level_sigmas,
                nets,
                adam,
                operator: header.operator,
                seed: header.seed,
                data_scale: header.data_scale,
            },
            header.schedule,
        ))
    }
}

impl ScoreModel for TrainableScore {
    fn evaluate(&self, k: &ComplexGrid, sigma: f64) -> ComplexGrid {
        assert_eq!(
            k.shape(),
            (self.height, self.width),
            "trainable score evaluated on a grid of the wrong shape"
        );
        let level = self.nearest_level(sigma);
        let y = to_channels(k);
        let (_, _, f) = self.nets[level].forward(&y);
        from_channels(&f).scale(1.0 / self.level_sigmas[level])
    }

    fn operator_tag(&self) -> Option<&OperatorTag> {
        Some(&self.operator)
    }

    fn expected_shape(&self) -> Option<(usize, usize)> {
        Some((self.height, self.width))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 8,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            val_fraction: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    pub epoch_train_loss: Vec<f64>,
}

/// Normalize a grid to unit max magnitude (zero grids pass through).
fn unit_max(k: &ComplexGrid) -> ComplexGrid {
    let m = k.max_abs();
    if m > 0.0 {
        k.scale(1.0 / m)
    } else {
        k.clone()
    }
}

fn validation_loss(
    model: &TrainableScore,
    val: &[Array3<f64>],
    val_noise: &[Vec<Array3<f64>>],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (item, noises) in val.iter().zip(val_noise) {
        for (level, z) in noises.iter().enumerate() {
            let sigma = model.level_sigmas[level];
            let noisy = item + &z.mapv(|v| v * sigma);
            let (_, _, f) = model.nets[level].forward(&noisy);
            let r = &f + z;
            total += r.iter().map(|v| v * v).sum::<f64>();
            count += 1;
        }
    }
    total / count as f64
}

/// Train the per-level denoisers with denoising score matching. The dataset
/// holds operator-transformed k-space grids; each grid is normalized to
/// unit max magnitude before use. Deterministic given the config seed.
pub fn train(
    model: &mut TrainableScore,
    dataset: &[ComplexGrid],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(CoreError::InvalidInput("training dataset is empty".into()));
    }
    for g in dataset {
        if g.shape() != model.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: model.shape(),
                got: g.shape(),
            });
        }
    }
    let n_levels = model.level_sigmas.len();
    let data: Vec<Array3<f64>> = dataset.iter().map(|g| to_channels(&unit_max(g))).collect();

    // Deterministic split.
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut split_rng = substream(cfg.seed, "train/split");
    use rand::seq::SliceRandom;
    order.shuffle(&mut split_rng);
    let val_count = ((data.len() as f64 * cfg.val_fraction).round() as usize)
        .clamp(1, data.len());
    let (val_idx, train_idx) = order.split_at(val_count);
    let train_idx: Vec<usize> = if train_idx.is_empty() {
        val_idx.to_vec()
    } else {
        train_idx.to_vec()
    };
    let val: Vec<Array3<f64>> = val_idx.iter().map(|&i| data[i].clone()).collect();

    // Fixed validation noise per (item, level).
    let mut val_rng = substream(cfg.seed, "train/val-noise");
    let (h, w) = model.shape();
    let val_noise: Vec<Vec<Array3<f64>>> = (0..val.len())
        .map(|_| {
            (0..n_levels)
                .map(|_| {
                    Array3::from_shape_simple_fn((2, h, w), || {
                        val_rng.sample(rand_distr::StandardNormal)
                    })
                })
                .collect()
        })
        .collect();

    let initial_val_loss = validation_loss(model, &val, &val_noise);

    let mut level_rng = substream(cfg.seed, "train/levels");
    let mut noise_rng = substream(cfg.seed, "train/noise");
    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
    let off = LevelNet::offsets(h, w, model.channels);
    let mut grad = vec![0.0; off.total];

    for epoch in 0..cfg.epochs {
        let mut idx = train_idx.clone();
        let mut shuffle_rng = substream(cfg.seed, &format!("train/shuffle/{epoch}"));
        idx.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in idx.chunks(cfg.batch_size.max(1)) {
            let level = level_rng.random_range(0..n_levels);
            let sigma = model.level_sigmas[level];
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &item in batch {
                let z = Array3::from_shape_simple_fn((2, h, w), || {
                    noise_rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                let noisy = &data[item] + &z.mapv(|v| v * sigma);
                let (u, hid, f) = model.nets[level].forward(&noisy);
                let residual = &f + &z;
                batch_loss += residual.iter().map(|v| v * v).sum::<f64>();
                let g = residual.mapv(|v| 2.0 * v);
                model.nets[level].backward(&noisy, &u, &hid, &g, &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(CoreError::TrainingDiverged {
                    epoch,
                    detail: format!("non-finite batch loss at level {level}"),
                });
            }
            for g in grad.iter_mut() {
                *g *= scale;
            }
            model.adam[level].step(
                &mut model.nets[level].params,
                &grad,
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
            );
            epoch_loss += batch_loss;
            batches += 1;
        }
        epoch_train_loss.push(epoch_loss / batches.max(1) as f64);
    }

    let final_val_loss = validation_loss(model, &val, &val_noise);
    Ok(TrainReport {
        initial_val_loss,
        final_val_loss,
        epoch_train_loss,
    })
}
