//! Image preprocessing and a small logistic-regression reference classifier.

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::Sample;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const RESIZE: u32 = 256;
pub const CROP: u32 = 224;
pub const FEATURE_SIDE: usize = 32;
pub const FEATURES: usize = FEATURE_SIDE * FEATURE_SIDE;
/// Feature weights plus the bias.
pub const WEIGHTS: usize = FEATURES + 1;

const POOL: usize = CROP as usize / FEATURE_SIDE;
const MAGIC: &[u8; 4] = b"XWBM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub resize_to: u32,
    pub crop: u32,
    pub mirror_prob: f64,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            resize_to: RESIZE,
            crop: CROP,
            mirror_prob: 0.5,
        }
    }
}

/// Interleaved RGB with float channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_rgb(img: &RgbImage) -> Self {
        Tensor {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::BadImage(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::BadImage("empty image".into()));
    }
    Ok(img.to_rgb8())
}

/// Bilinear resize with half-pixel-centered sampling and clamped edges.
pub fn resize_bilinear(src: &Tensor, width: usize, height: usize) -> Tensor {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(width, src.width);
    let ys = axis(height, src.height);
    let mut data = Vec::with_capacity(width * height * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (a, b) = (src.pixel(x0, y0), src.pixel(x1, y0));
            let (c, d) = (src.pixel(x0, y1), src.pixel(x1, y1));
            for ch in 0..3 {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bot = c[ch] + (d[ch] - c[ch]) * fx;
                data.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor { width, height, data }
}

pub fn crop(src: &Tensor, x: usize, y: usize, size: usize, mirror: bool) -> Tensor {
    let mut data = Vec::with_capacity(size * size * 3);
    for row in 0..size {
        for col in 0..size {
            let sx = if mirror { x + size - 1 - col } else { x + col };
            data.extend_from_slice(&src.pixel(sx, y + row));
        }
    }
    Tensor {
        width: size,
        height: size,
        data,
    }
}

/// Crop offset and mirror flag drawn for the training path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub x: usize,
    pub y: usize,
    pub mirror: bool,
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize_to {
            return Err(Error::InvalidConfig(format!("crop {} does not fit in {}", self.crop, self.resize_to)));
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return Err(Error::InvalidConfig(format!("mirror probability {} outside [0, 1]", self.mirror_prob)));
        }
        Ok(())
    }

    pub fn draw(&self, seed: u64) -> Augmentation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = (self.resize_to - self.crop) as usize;
        Augmentation {
            x: rng.random_range(0..=span),
            y: rng.random_range(0..=span),
            mirror: rng.random_bool(self.mirror_prob),
        }
    }

    fn resized(&self, img: &RgbImage) -> Tensor {
        let side = self.resize_to as usize;
        resize_bilinear(&Tensor::from_rgb(img), side, side)
    }

    pub fn train(&self, img: &RgbImage, seed: u64) -> Tensor {
        let a = self.draw(seed);
        crop(&self.resized(img), a.x, a.y, self.crop as usize, a.mirror)
    }

    pub fn infer(&self, img: &RgbImage) -> Tensor {
        let off = ((self.resize_to - self.crop) / 2) as usize;
        crop(&self.resized(img), off, off, self.crop as usize, false)
    }
}

pub fn preprocess_train(bytes: &[u8], seed: u64) -> Result<Tensor> {
    Ok(PreprocessSpec::default().train(&decode(bytes)?, seed))
}

pub fn preprocess_infer(bytes: &[u8]) -> Result<Tensor> {
    Ok(PreprocessSpec::default().infer(&decode(bytes)?))
}

/// 32x32 box-averaged luma of a 224x224 crop, each row centered on its mean.
///
/// Sky and asphalt are uniform across a row, so a plain scene maps to
/// (nearly) zero and only localized marks such as paint remain.
pub fn features(t: &Tensor) -> Result<Vec<f64>> {
    if t.width != CROP as usize || t.height != CROP as usize {
        return Err(Error::BadImage(format!("expected a {CROP}x{CROP} tensor, got {}x{}", t.width, t.height)));
    }
    let mut f = vec![0.0f64; FEATURES];
    for y in 0..t.height {
        for x in 0..t.width {
            let [r, g, b] = t.pixel(x, y);
            let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            f[(y / POOL) * FEATURE_SIDE + x / POOL] += luma;
        }
    }
    let area = (POOL * POOL) as f64;
    for row in f.chunks_mut(FEATURE_SIDE) {
        let mean = row.iter().sum::<f64>() / (FEATURE_SIDE as f64 * area);
        for v in row {
            *v = FEATURE_GAIN * (*v / area - mean);
        }
    }
    Ok(f)
}

/// Brings full paint contrast to about 2 while keeping plain gradient
/// descent at the default learning rate stable.
const FEATURE_GAIN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            learning_rate: 0.1,
            l2: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    /// `FEATURES` weights followed by the bias.
    pub weights: Vec<f64>,
    pub config: TrainConfig,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn score(w: &[f64], x: &[f64]) -> f64 {
    w[..FEATURES].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[FEATURES]
}

/// Mean logistic loss plus `l2 / 2 * |w|^2` over the non-bias weights, and
/// its gradient.
pub fn objective(w: &[f64], xs: &[Vec<f64>], ys: &[bool], l2: f64) -> (f64, Vec<f64>) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; WEIGHTS];
    for (x, &y) in xs.iter().zip(ys) {
        let z = score(w, x);
        let t = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - t * z;
        let r = (sigmoid(z) - t) / n;
        for (g, xi) in grad[..FEATURES].iter_mut().zip(x) {
            *g += r * xi;
        }
        grad[FEATURES] += r;
    }
    loss /= n;
    for (g, wi) in grad[..FEATURES].iter_mut().zip(w) {
        loss += 0.5 * l2 * wi * wi;
        *g += l2 * wi;
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    pub positives: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Full-batch gradient descent from zero weights.
pub fn fit(xs: &[Vec<f64>], ys: &[bool], config: &TrainConfig) -> Result<(BaselineModel, TrainReport)> {
    let positives = ys.iter().filter(|&&y| y).count();
    if positives == 0 || positives == ys.len() {
        return Err(Error::DegenerateTrainingSet {
            positives,
            negatives: ys.len() - positives,
        });
    }
    let mut w = vec![0.0; WEIGHTS];
    let (initial_loss, _) = objective(&w, xs, ys, config.l2);
    for _ in 0..config.steps {
        let (_, g) = objective(&w, xs, ys, config.l2);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= config.learning_rate * gi;
        }
    }
    let (final_loss, _) = objective(&w, xs, ys, config.l2);
    let correct = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| (score(&w, x) > 0.0) == y)
        .count();
    let model = BaselineModel {
        weights: w,
        config: *config,
    };
    Ok((
        model,
        TrainReport {
            samples: ys.len(),
            positives,
            initial_loss,
            final_loss,
            train_accuracy: correct as f64 / ys.len() as f64,
        },
    ))
}

fn load(root: &Path, s: &Sample) -> Result<Vec<u8>> {
    let path = root.join(&s.image_ref);
    std::fs::read(&path).map_err(|e| Error::BadImage(format!("{}: {e}", path.display())))
}

/// Trains on `samples`, reading images relative to `image_root`. Each sample
/// gets one augmented view seeded from the training seed and its id.
pub fn train_baseline(samples: &[Sample], image_root: &Path, config: &TrainConfig) -> Result<(BaselineModel, TrainReport)> {
    let spec = PreprocessSpec::default();
    let xs: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let img = decode(&load(image_root, s)?)?;
            features(&spec.train(&img, derive_seed(config.seed, &format!("augment/{}", s.sample_id))))
        })
        .collect::<Result<_>>()?;
    let ys: Vec<bool> = samples.iter().map(|s| s.label.value.is_positive()).collect();
    fit(&xs, &ys, config)
}

impl BaselineModel {
    pub fn zero() -> Self {
        BaselineModel {
            weights: vec![0.0; WEIGHTS],
            config: TrainConfig::default(),
        }
    }

    /// `(prob_positive, prob_negative)` for a feature vector.
    pub fn probabilities(&self, x: &[f64]) -> (f64, f64) {
        let z = score(&self.weights, x);
        (sigmoid(z), sigmoid(-z))
    }

    pub fn predict(&self, image: &[u8]) -> Result<(f64, f64)> {
        Ok(self.probabilities(&features(&preprocess_infer(image)?)?))
    }

    pub fn predict_samples(&self, samples: &[Sample], image_root: &Path) -> Result<Vec<f64>> {
        samples
            .par_iter()
            .map(|s| Ok(self.predict(&load(image_root, s)?)?.0))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&self.config.steps.to_le_bytes());
        out.extend_from_slice(&self.config.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.config.l2.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::BadModel(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated model file"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("not a baseline model file"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(version as u64));
        }
        let mut u64_at = || -> Result<u64> { Ok(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"))) };
        let count = u64_at()?;
        if count != WEIGHTS as u64 {
            return Err(bad(&format!("expected {WEIGHTS} weights, found {count}")));
        }
        let seed = u64_at()?;
        let steps = u64_at()?;
        let learning_rate = f64::from_bits(u64_at()?);
        let l2 = f64::from_bits(u64_at()?);
        let weights = (0..WEIGHTS).map(|_| u64_at().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes after weights"));
        }
        Ok(BaselineModel {
            weights,
            config: TrainConfig {
                steps,
                learning_rate,
                l2,
                seed,
            },
        })
    }
}
