//! Surrogate objectness detector: two strided 3x3 convolutions with ReLU,
//! global average pooling, a linear head and a sigmoid. Forward and backward
//! passes are written out by hand and run in f64.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::AdamState;
use crate::par::Exec;

const C_IN: usize = 3;
const C1: usize = 8;
const C2: usize = 16;
const K: usize = 3;

const W1: usize = 0;
const B1: usize = W1 + C1 * C_IN * K * K;
const W2: usize = B1 + C1;
const B2: usize = W2 + C2 * C1 * K * K;
const WH: usize = B2 + C2;
const BH: usize = WH + C2;

/// Total trainable parameters: conv1 (224) + conv2 (1168) + head (17).
pub const N_PARAMS: usize = BH + 1;


const MAGIC: [u8; 4] = *b"CFDN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNet {
    input_size: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    ObjectPresent,
    BackgroundOnly,
}

impl Label {
    fn target(self) -> f64 {
        match self {
            Label::ObjectPresent => 1.0,
            Label::BackgroundOnly => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Image,
    pub label: Label,
}

/// Intermediate activations kept for the backward pass. Feature maps are CHW.
struct Trace {
    x: Vec<f64>,
    hw0: (usize, usize),
    z1: Vec<f64>,
    a1: Vec<f64>,
    hw1: (usize, usize),
    z2: Vec<f64>,
    hw2: (usize, usize),
    pooled: [f64; C2],
    score: f64,
}

fn out_dim(n: usize) -> usize {
    (n - 1) / 2 + 1
}

/// 3x3, stride 2, zero padding 1.
fn conv_forward(
    x: &[f64],
    c_in: usize,
    (h, w): (usize, usize),
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
) -> (Vec<f64>, (usize, usize)) {
    let (ho, wo) = (out_dim(h), out_dim(w));
    let mut out = vec![0.0; c_out * ho * wo];
    for o in 0..c_out {
        let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
        plane.fill(bias[o]);
        for c in 0..c_in {
            let xin = &x[c * h * w..(c + 1) * h * w];
            let wk = &weights[(o * c_in + c) * K * K..(o * c_in + c + 1) * K * K];
            for oy in 0..ho {
                for ky in 0..K {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                    let orow = &mut plane[oy * wo..(oy + 1) * wo];
                    for kx in 0..K {
                        let wv = wk[ky * K + kx];
                        for (ox, acc) in orow.iter_mut().enumerate() {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && (ix as usize) < w {
                                *acc += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, (ho, wo))
}

/// Backward of [`conv_forward`]. Accumulates into `dw`/`db` when given and
/// returns the input gradient when `want_dx`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    c_in: usize,
    (h, w): (usize, usize),
    weights: &[f64],
    c_out: usize,
    dout: &[f64],
    mut dparams: Option<(&mut [f64], &mut [f64])>,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (ho, wo) = (out_dim(h), out_dim(w));
    let mut dx = if want_dx { vec![0.0; c_in * h * w] } else { Vec::new() };
    for o in 0..c_out {
        let g = &dout[o * ho * wo..(o + 1) * ho * wo];
        if let Some((_, db)) = dparams.as_mut() {
            db[o] += g.iter().sum::<f64>();
        }
        for c in 0..c_in {
            let base = (o * c_in + c) * K * K;
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..K {
                for kx in 0..K {
                    let wv = weights[base + ky * K + kx];
                    let mut dwv = 0.0;
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..wo {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let gv = g[oy * wo + ox];
                            dwv += gv * xin[iy * w + ix as usize];
                            if want_dx {
                                dx[c * h * w + iy * w + ix as usize] += gv * wv;
                            }
                        }
                    }
                    if let Some((dw, _)) = dparams.as_mut() {
                        dw[base + ky * K + kx] += dwv;
                    }
                }
            }
        }
    }
    want_dx.then_some(dx)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_detector(seed: u64, input_size: usize) -> DetectorNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; N_PARAMS];
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for p in &mut params[range] {
            *p = rng.gen_range(-a..a);
        }
    };
    fill(W1..B1, C_IN * K * K, C1 * K * K);
    fill(W2..B2, C1 * K * K, C2 * K * K);
    fill(WH..BH, C2, 1);
    DetectorNet { input_size, params }
}

impl DetectorNet {
    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let n = self.input_size;
        if image.dims() != (n, n, 3) {
            return Err(Error::shape(
                format!("({n}, {n}, 3)"),
                format!("{:?}", image.dims()),
            ));
        }
        Ok(())
    }

    fn forward(&self, image: &Image) -> Result<Trace> {
        self.check_input(image)?;
        let (h, w) = (image.height, image.width);
        let mut x = vec![0.0; C_IN * h * w];
        for p in 0..h * w {
            for c in 0..C_IN {
                x[c * h * w + p] = image.data[p * C_IN + c];
            }
        }
        // each channel enters centered on its own image mean
        for plane in x.chunks_exact_mut(h * w) {
            let mean = plane.iter().sum::<f64>() / (h * w) as f64;
            plane.iter_mut().for_each(|v| *v -= mean);
        }
        let p = &self.params;
        let (z1, hw1) = conv_forward(&x, C_IN, (h, w), &p[W1..B1], &p[B1..W2], C1);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let (z2, hw2) = conv_forward(&a1, C1, hw1, &p[W2..B2], &p[B2..WH], C2);
        let a2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
        let n2 = hw2.0 * hw2.1;
        let mut pooled = [0.0; C2];
        for (c, v) in pooled.iter_mut().enumerate() {
            *v = a2[c * n2..(c + 1) * n2].iter().sum::<f64>() / n2 as f64;
        }
        let logit = p[BH] + pooled.iter().zip(&p[WH..BH]).map(|(a, b)| a * b).sum::<f64>();
        Ok(Trace {
            x,
            hw0: (h, w),
            z1,
            a1,
            hw1,
            z2,
            hw2,
            pooled,
            score: sigmoid(logit),
        })
    }

    /// Backpropagates `dlogit` through the network. Fills `dparams` if given;
    /// returns the HWC input gradient if `want_input`.
    fn backward(
        &self,
        t: &Trace,
        dlogit: f64,
        mut dparams: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Image> {
        let p = &self.params;
        let n2 = t.hw2.0 * t.hw2.1;
        if let Some(dp) = dparams.as_deref_mut() {
            dp[BH] += dlogit;
            for c in 0..C2 {
                dp[WH + c] += dlogit * t.pooled[c];
            }
        }
        let mut dz2 = vec![0.0; C2 * n2];
        for c in 0..C2 {
            let g = dlogit * p[WH + c] / n2 as f64;
            for i in c * n2..(c + 1) * n2 {
                if t.z2[i] > 0.0 {
                    dz2[i] = g;
                }
            }
        }
        let (dp1, dp2) = match dparams {
            Some(dp) => {
                let (lo, hi) = dp.split_at_mut(W2);
                (Some(lo), Some(hi))
            }
            None => (None, None),
        };
        let da1 = conv_backward(
            &t.a1,
            C1,
            t.hw1,
            &p[W2..B2],
            C2,
            &dz2,
            dp2.map(|d| {
                let (dw, rest) = d.split_at_mut(B2 - W2);
                (dw, &mut rest[..C2])
            }),
            true,
        )
        .expect("requested");
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&t.z1)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let dx = conv_backward(
            &t.x,
            C_IN,
            t.hw0,
            &p[W1..B1],
            C1,
            &dz1,
            dp1.map(|d| {
                let (dw, rest) = d.split_at_mut(B1 - W1);
                (dw, &mut rest[..C1])
            }),
            want_input,
        )?;
        let (h, w) = t.hw0;
        let mut dx = dx;
        // adjoint of the centering: remove each channel's mean gradient
        for plane in dx.chunks_exact_mut(h * w) {
            let mean = plane.iter().sum::<f64>() / (h * w) as f64;
            plane.iter_mut().for_each(|v| *v -= mean);
        }
        let mut img = Image::zeros(h, w, 3);
        for pix in 0..h * w {
            for c in 0..C_IN {
                img.data[pix * C_IN + c] = dx[c * h * w + pix];
            }
        }
        Some(img)
    }

    /// Objectness score in (0, 1).
    pub fn objectness(&self, image: &Image) -> Result<f64> {
        Ok(self.forward(image)?.score)
    }

    /// Score and its exact gradient with respect to every input pixel.
    pub fn objectness_and_grad(&self, image: &Image) -> Result<(f64, Image)> {
        let t = self.forward(image)?;
        let dlogit = t.score * (1.0 - t.score);
        let g = self.backward(&t, dlogit, None, true).expect("input gradient requested");
        Ok((t.score, g))
    }

    pub fn objectness_grad(&self, image: &Image) -> Result<Image> {
        Ok(self.objectness_and_grad(image)?.1)
    }

    /// Gradient of the objectness score with respect to all parameters.
    pub fn objectness_param_grad(&self, image: &Image) -> Result<Vec<f64>> {
        let t = self.forward(image)?;
        let mut g = vec![0.0; N_PARAMS];
        self.backward(&t, t.score * (1.0 - t.score), Some(&mut g), false);
        Ok(g)
    }

    /// Binary cross-entropy of one labeled image and its parameter gradient.
    /// `smoothing` pulls the targets to `smoothing / 2` and `1 - smoothing / 2`.
    pub fn bce_and_param_grad(&self, sample: &LabeledImage, smoothing: f64) -> Result<(f64, Vec<f64>)> {
        let t = self.forward(&sample.image)?;
        let y = sample.label.target() * (1.0 - smoothing) + 0.5 * smoothing;
        let s = t.score.clamp(1e-12, 1.0 - 1e-12);
        let loss = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
        let mut g = vec![0.0; N_PARAMS];
        self.backward(&t, t.score - y, Some(&mut g), false);
        Ok((loss, g))
    }

    pub fn detect(&self, image: &Image, threshold: f64) -> Result<bool> {
        Ok(self.objectness(image)? >= threshold)
    }

    /// Box-filter factor that maps `image` onto the input size.
    pub fn input_factor(&self, image: &Image) -> Result<usize> {
        let n = self.input_size;
        if image.height != image.width || image.height % n != 0 || image.height == 0 {
            return Err(Error::shape(
                format!("square multiple of {n}"),
                format!("{}x{}", image.height, image.width),
            ));
        }
        Ok(image.height / n)
    }

    /// Objectness of a full-resolution image, downsampled to the input size first.
    pub fn score(&self, image: &Image) -> Result<f64> {
        let f = self.input_factor(image)?;
        self.objectness(&image.downsample(f)?)
    }

    /// [`DetectorNet::score`] and its gradient at full resolution.
    pub fn score_and_grad(&self, image: &Image) -> Result<(f64, Image)> {
        let f = self.input_factor(image)?;
        let (s, g) = self.objectness_and_grad(&image.downsample(f)?)?;
        Ok((s, g.downsample_adjoint(f)))
    }

    /// Flat little-endian f64 weights behind a 16-byte header
    /// (magic, format version, input size, parameter count).
    pub fn write_weights<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.input_size as u32).to_le_bytes())?;
        out.write_all(&(N_PARAMS as u32).to_le_bytes())?;
        for v in &self.params {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_weights<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        if header[..4] != MAGIC {
            return Err(Error::invalid("not a detector weight file"));
        }
        if word(4) != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported weight format version {}", word(4))));
        }
        if word(12) as usize != N_PARAMS {
            return Err(Error::invalid(format!("weight file has {} parameters", word(12))));
        }
        let mut bytes = vec![0u8; N_PARAMS * 8];
        input.read_exact(&mut bytes)?;
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            input_size: word(8) as usize,
            params,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Label smoothing for the cross-entropy targets. Keeps the trained
    /// logits bounded so the objectness gradient does not vanish under attack.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch_size: 8,
            label_smoothing: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainReport {
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub n_samples: usize,
}

/// Fraction of images whose thresholded score agrees with the label.
pub fn accuracy(net: &DetectorNet, data: &[LabeledImage], exec: Exec) -> Result<f64> {
    let hits = exec
        .map(data, |s| {
            net.detect(&s.image, 0.5)
                .map(|d| d == (s.label == Label::ObjectPresent))
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len().max(1) as f64)
}

/// Minimizes mean binary cross-entropy with Adam over shuffled minibatches.
pub fn train_detector(
    net: &DetectorNet,
    data: &[LabeledImage],
    cfg: &DetectorTrainConfig,
    exec: Exec,
) -> Result<(DetectorNet, DetectorTrainReport)> {
    let positives = data.iter().filter(|s| s.label == Label::ObjectPresent).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::invalid("detector training data must contain both labels"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.label_smoothing) {
        return Err(Error::invalid("label smoothing must lie in [0, 1)"));
    }
    let mut net = net.clone();
    let mut adam = AdamState::new(N_PARAMS);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = exec.map(batch, |&i| net.bce_and_param_grad(&data[i], cfg.label_smoothing));
            let mut grad = vec![0.0; N_PARAMS];
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, g) = r?;
                total += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v * scale;
                }
            }
            adam.step(&mut net.params, &grad, cfg.lr)?;
        }
        epoch_loss.push(total / data.len() as f64);
    }
    let train_accuracy = accuracy(&net, data, exec)?;
    Ok((
        net,
        DetectorTrainReport {
            epoch_loss,
            train_accuracy,
            n_samples: data.len(),
        },
    ))
}
