//! Desk-scale pedestrian detector: HOG features, a linear classifier
//! trained by SGD on the hinge loss with hard-negative mining, and a
//! sliding-window pyramid scan with greedy non-maximum suppression.
//!
//! Block normalization only looks at cells inside the block, so a whole
//! image's blocks are computed once per pyramid level and every window
//! descriptor is a gather over that grid. The single-patch path
//! (`hog_descriptor`) runs the identical pipeline, so training crops and
//! detection windows see the same feature space.

use crate::bbox::{BoxF, PixelBox};
use crate::imgio::{GrayImage, RgbImage};
use crate::rasterlab::AnnotationRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Normalization guard; also the zero-block cutoff.
pub const HOG_EPS: f64 = 1e-6;

/// Fraction of the training window the pedestrian's height occupies; the
/// rest is context.
const WINDOW_FILL: f64 = 0.8;

const MODEL_MAGIC: &[u8; 5] = b"SSPD1";

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("patch is {got_w}x{got_h} but the descriptor window is {want_w}x{want_h}")]
    SizeMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("image {width}x{height} is smaller than the {min_w}x{min_h} scan window")]
    ImageTooSmall {
        width: u32,
        height: u32,
        min_w: u32,
        min_h: u32,
    },
    #[error("training needs at least {min} positives and {min} negatives, got {positives}/{negatives}")]
    InsufficientData {
        positives: usize,
        negatives: usize,
        min: usize,
    },
    #[error("bad descriptor geometry: {0}")]
    BadParams(String),
    #[error("model file does not start with the SSPD1 magic")]
    BadModelMagic,
    #[error("model file ends early")]
    TruncatedModel,
    #[error("model declares {got} weights but its geometry needs {expected}")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("frame {index} failed to load: {reason}")]
    FrameLoad { index: usize, reason: String },
}

/// Geometry of the HOG descriptor. All lengths in pixels except
/// `block_cells`/`block_stride_cells`, which count cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogParams {
    pub window_width: u32,
    pub window_height: u32,
    pub cell_size: u32,
    pub block_cells: u32,
    pub block_stride_cells: u32,
    pub orientation_bins: u32,
    pub l2_hys_clip: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            window_width: 32,
            window_height: 64,
            cell_size: 8,
            block_cells: 2,
            block_stride_cells: 1,
            orientation_bins: 9,
            l2_hys_clip: 0.2,
        }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::BadParams(m));
        if self.cell_size == 0 || self.orientation_bins == 0 || self.block_cells == 0 {
            return bad("cell size, bins, and block cells must be positive".into());
        }
        if self.block_stride_cells != 1 {
            return bad(format!(
                "only a 1-cell block stride is supported, got {}",
                self.block_stride_cells
            ));
        }
        if self.window_width % self.cell_size != 0 || self.window_height % self.cell_size != 0 {
            return bad(format!(
                "window {}x{} is not a multiple of the {} px cell",
                self.window_width, self.window_height, self.cell_size
            ));
        }
        if self.window_cells_x() < self.block_cells as usize
            || self.window_cells_y() < self.block_cells as usize
        {
            return bad("window holds fewer cells than one block".into());
        }
        if !(self.l2_hys_clip > 0.0) {
            return bad("clip threshold must be positive".into());
        }
        Ok(())
    }

    pub fn window_cells_x(&self) -> usize {
        (self.window_width / self.cell_size) as usize
    }

    pub fn window_cells_y(&self) -> usize {
        (self.window_height / self.cell_size) as usize
    }

    /// Blocks per window along x.
    pub fn window_blocks_x(&self) -> usize {
        self.window_cells_x() - self.block_cells as usize + 1
    }

    pub fn window_blocks_y(&self) -> usize {
        self.window_cells_y() - self.block_cells as usize + 1
    }

    pub fn block_len(&self) -> usize {
        (self.block_cells * self.block_cells * self.orientation_bins) as usize
    }

    pub fn descriptor_len(&self) -> usize {
        self.window_blocks_x() * self.window_blocks_y() * self.block_len()
    }
}

/// All normalized blocks of one image, at every cell position.
pub struct HogGrid {
    pub cells_x: usize,
    pub cells_y: usize,
    blocks_x: usize,
    block_len: usize,
    blocks: Vec<f64>,
    params: HogParams,
}

impl HogGrid {
    pub fn build(gray: &GrayImage, params: &HogParams) -> Result<Self, DetectError> {
        params.validate()?;
        let cell = params.cell_size as usize;
        let bins = params.orientation_bins as usize;
        let (w, h) = (gray.width as usize, gray.height as usize);
        let cells_x = w / cell;
        let cells_y = h / cell;
        let bc = params.block_cells as usize;
        if cells_x < bc || cells_y < bc {
            return Err(DetectError::ImageTooSmall {
                width: gray.width,
                height: gray.height,
                min_w: (bc * cell) as u32,
                min_h: (bc * cell) as u32,
            });
        }

        // Per-cell orientation histograms. Gradients are centered
        // differences with clamped indices; votes split bilinearly between
        // the two nearest unsigned-orientation bin centers.
        let mut cells = vec![0.0f64; cells_x * cells_y * bins];
        let data = gray.data();
        let bin_width = PI / bins as f64;
        for y in 0..cells_y * cell {
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            for x in 0..cells_x * cell {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let gx = data[y * w + xp] - data[y * w + xm];
                let gy = data[yp * w + x] - data[ym * w + x];
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let mut angle = gy.atan2(gx);
                if angle < 0.0 {
                    angle += PI;
                }
                if angle >= PI {
                    angle = 0.0;
                }
                let t = angle / bin_width - 0.5;
                let f = t.floor();
                let frac = t - f;
                let b0 = (f as i64).rem_euclid(bins as i64) as usize;
                let b1 = (b0 + 1) % bins;
                let base = ((y / cell) * cells_x + x / cell) * bins;
                cells[base + b0] += mag * (1.0 - frac);
                cells[base + b1] += mag * frac;
            }
        }

        let blocks_x = cells_x - bc + 1;
        let blocks_y = cells_y - bc + 1;
        let block_len = params.block_len();
        let mut blocks = vec![0.0f64; blocks_x * blocks_y * block_len];
        for by in 0..blocks_y {
            for bx in 0..blocks_x {
                let out = &mut blocks
                    [(by * blocks_x + bx) * block_len..(by * blocks_x + bx + 1) * block_len];
                let mut k = 0;
                for cy in by..by + bc {
                    for cx in bx..bx + bc {
                        let base = (cy * cells_x + cx) * bins;
                        out[k..k + bins].copy_from_slice(&cells[base..base + bins]);
                        k += bins;
                    }
                }
                l2_hys(out, params.l2_hys_clip);
            }
        }
        Ok(Self {
            cells_x,
            cells_y,
            blocks_x,
            block_len,
            blocks,
            params: *params,
        })
    }

    /// Descriptor of the window whose top-left cell is (cell_x, cell_y):
    /// its blocks concatenated row-major.
    pub fn descriptor_at(&self, cell_x: usize, cell_y: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.descriptor_len());
        for by in cell_y..cell_y + self.params.window_blocks_y() {
            for bx in cell_x..cell_x + self.params.window_blocks_x() {
                let s = (by * self.blocks_x + bx) * self.block_len;
                out.extend_from_slice(&self.blocks[s..s + self.block_len]);
            }
        }
        out
    }

    /// `weights . descriptor + bias` without materializing the descriptor.
    pub fn score_at(&self, weights: &[f64], bias: f64, cell_x: usize, cell_y: usize) -> f64 {
        let mut acc = bias;
        let mut wi = 0;
        for by in cell_y..cell_y + self.params.window_blocks_y() {
            for bx in cell_x..cell_x + self.params.window_blocks_x() {
                let s = (by * self.blocks_x + bx) * self.block_len;
                for j in 0..self.block_len {
                    acc += weights[wi + j] * self.blocks[s + j];
                }
                wi += self.block_len;
            }
        }
        acc
    }
}

/// L2 norm with guard, clip, renormalize ("L2-hys").
fn l2_hys(v: &mut [f64], clip: f64) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + HOG_EPS * HOG_EPS).sqrt();
    for x in v.iter_mut() {
        *x = (*x / norm).min(clip);
    }
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + HOG_EPS * HOG_EPS).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Descriptor of a patch exactly one window in size.
pub fn hog_descriptor(patch: &GrayImage, params: &HogParams) -> Result<Vec<f64>, DetectError> {
    if patch.width != params.window_width || patch.height != params.window_height {
        return Err(DetectError::SizeMismatch {
            want_w: params.window_width,
            want_h: params.window_height,
            got_w: patch.width,
            got_h: patch.height,
        });
    }
    Ok(HogGrid::build(patch, params)?.descriptor_at(0, 0))
}

/// Linear scorer over HOG descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub params: HogParams,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn score(&self, descriptor: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(descriptor)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    /// Little-endian binary layout: `SSPD1`, six u32 geometry fields, the
    /// f64 clip, a u64 weight count, the weights, the bias.
    pub fn save(&self, path: &Path) -> Result<(), DetectError> {
        let p = &self.params;
        let mut buf = Vec::with_capacity(5 + 6 * 4 + 8 + 8 + self.weights.len() * 8 + 8);
        buf.extend_from_slice(MODEL_MAGIC);
        for v in [
            p.window_width,
            p.window_height,
            p.cell_size,
            p.block_cells,
            p.block_stride_cells,
            p.orientation_bins,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&p.l2_hys_clip.to_le_bytes());
        buf.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        buf.extend_from_slice(&self.bias.to_le_bytes());
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetectError> {
        let bytes = fs::read(path)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], DetectError> {
            let s = bytes.get(pos..pos + n).ok_or(DetectError::TruncatedModel)?;
            pos += n;
            Ok(s)
        };
        if take(5)? != MODEL_MAGIC {
            return Err(DetectError::BadModelMagic);
        }
        let mut u32s = [0u32; 6];
        for v in &mut u32s {
            *v = u32::from_le_bytes(take(4)?.try_into().unwrap());
        }
        let clip = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let params = HogParams {
            window_width: u32s[0],
            window_height: u32s[1],
            cell_size: u32s[2],
            block_cells: u32s[3],
            block_stride_cells: u32s[4],
            orientation_bins: u32s[5],
            l2_hys_clip: clip,
        };
        params.validate()?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != params.descriptor_len() {
            return Err(DetectError::WeightCountMismatch {
                expected: params.descriptor_len(),
                got: count,
            });
        }
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            weights.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let bias = f64::from_le_bytes(take(8)?.try_into().unwrap());
        Ok(Self {
            params,
            weights,
            bias,
        })
    }
}

/// A labeled feature vector; `label` is +1 or -1.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Vec<f64>,
    pub label: f64,
}

/// Regularized hinge objective:
/// `lambda/2 ||w||^2 + mean(max(0, 1 - y (w.x + b)))`.
pub fn hinge_objective(
    weights: &[f64],
    bias: f64,
    l2_lambda: f64,
    samples: &[TrainSample],
) -> f64 {
    let reg = 0.5 * l2_lambda * weights.iter().map(|w| w * w).sum::<f64>();
    if samples.is_empty() {
        return reg;
    }
    let loss: f64 = samples
        .iter()
        .map(|s| {
            let margin = s.label
                * (s.features
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| x * w)
                    .sum::<f64>()
                    + bias);
            (1.0 - margin).max(0.0)
        })
        .sum();
    reg + loss / samples.len() as f64
}

/// Subgradient of `hinge_objective` in (weights, bias). At the hinge kink
/// the zero branch is chosen.
pub fn hinge_gradient(
    weights: &[f64],
    bias: f64,
    l2_lambda: f64,
    samples: &[TrainSample],
) -> (Vec<f64>, f64) {
    let mut gw: Vec<f64> = weights.iter().map(|w| l2_lambda * w).collect();
    let mut gb = 0.0;
    if samples.is_empty() {
        return (gw, gb);
    }
    let inv_n = 1.0 / samples.len() as f64;
    for s in samples {
        let margin = s.label
            * (s.features
                .iter()
                .zip(weights)
                .map(|(x, w)| x * w)
                .sum::<f64>()
                + bias);
        if margin < 1.0 {
            for (g, x) in gw.iter_mut().zip(&s.features) {
                *g -= inv_n * s.label * x;
            }
            gb -= inv_n * s.label;
        }
    }
    (gw, gb)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    /// Retrain passes that fold the detector's own false positives back
    /// in as negatives.
    pub hard_negative_rounds: u32,
    pub negatives_per_frame: u32,
    pub hard_negatives_per_frame: u32,
    /// Ground-truth boxes shorter than this feed neither positives nor
    /// negative exclusion zones larger than themselves.
    pub min_positive_height_px: u32,
    /// Score floor when mining false positives.
    pub mining_score_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            l2_lambda: 1e-4,
            seed: 0,
            hard_negative_rounds: 1,
            negatives_per_frame: 10,
            hard_negatives_per_frame: 10,
            min_positive_height_px: 24,
            mining_score_threshold: -0.5,
        }
    }
}

/// Training-time access to frames; implementations may read from memory
/// or disk.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<(RgbImage, Vec<AnnotationRecord>), DetectError>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for Vec<(RgbImage, Vec<AnnotationRecord>)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn load(&self, index: usize) -> Result<(RgbImage, Vec<AnnotationRecord>), DetectError> {
        self.get(index)
            .cloned()
            .ok_or_else(|| DetectError::FrameLoad {
                index,
                reason: "index out of range".into(),
            })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub positives: usize,
    pub negatives: usize,
    pub hard_negatives: usize,
    /// Full-objective value after every epoch, one inner vec per
    /// training round.
    pub objective_history: Vec<Vec<f64>>,
}

const MIN_SAMPLES_PER_CLASS: usize = 8;

/// Crop the window-shaped context region in which `b` occupies
/// `WINDOW_FILL` of the window, and compute its descriptor. Positives and
/// mined hard negatives share this path, so a mined detection reproduces
/// the window the scanner actually scored (detections report the fill
/// envelope; re-expanding a window-aspect box by the fill recovers the
/// window).
fn context_descriptor(
    gray: &GrayImage,
    b: &BoxF,
    params: &HogParams,
) -> Result<Vec<f64>, DetectError> {
    let aspect = f64::from(params.window_width) / f64::from(params.window_height);
    let scale = (b.height() / (WINDOW_FILL * f64::from(params.window_height)))
        .max(b.width() / (WINDOW_FILL * f64::from(params.window_width)));
    let crop_w = f64::from(params.window_height) * scale * aspect;
    let crop_h = f64::from(params.window_height) * scale;
    let (cx, cy) = b.center();
    let x0 = (cx - crop_w * 0.5).round() as i64;
    let y0 = (cy - crop_h * 0.5).round() as i64;
    let crop = gray.crop_replicated(
        x0,
        y0,
        (crop_w.round() as u32).max(1),
        (crop_h.round() as u32).max(1),
    );
    hog_descriptor(
        &crop.resize(params.window_width, params.window_height),
        params,
    )
}

fn positive_descriptor(
    gray: &GrayImage,
    bbox: &PixelBox,
    params: &HogParams,
) -> Result<Vec<f64>, DetectError> {
    context_descriptor(gray, &bbox.to_boxf(), params)
}

/// Descriptor of an arbitrary window-aspect region, given by continuous
/// corners.
fn region_descriptor(
    gray: &GrayImage,
    b: &BoxF,
    params: &HogParams,
) -> Result<Vec<f64>, DetectError> {
    let crop = gray.crop_replicated(
        b.x1.round() as i64,
        b.y1.round() as i64,
        b.width().round().max(1.0) as u32,
        b.height().round().max(1.0) as u32,
    );
    hog_descriptor(
        &crop.resize(params.window_width, params.window_height),
        params,
    )
}

fn max_iou_with(b: &BoxF, gts: &[BoxF]) -> f64 {
    gts.iter().map(|g| b.iou(g)).fold(0.0, f64::max)
}

/// Sample pedestrian-free windows at window aspect and varied heights.
fn sample_negatives(
    gray: &GrayImage,
    gt: &[BoxF],
    params: &HogParams,
    count: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, DetectError> {
    let aspect = f64::from(params.window_width) / f64::from(params.window_height);
    let min_h = f64::from(params.window_height);
    let max_h = f64::from(gray.height).min(min_h * 4.0);
    let mut out = Vec::new();
    let mut attempts = 0u32;
    while out.len() < count as usize && attempts < count * 30 {
        attempts += 1;
        let h = rng.gen_range(min_h..=max_h.max(min_h));
        let w = h * aspect;
        if w > f64::from(gray.width) {
            continue;
        }
        let x = rng.gen_range(0.0..=(f64::from(gray.width) - w));
        let y = rng.gen_range(0.0..=(f64::from(gray.height) - h));
        let b = BoxF::new(x, y, x + w, y + h);
        if max_iou_with(&b, gt) >= 0.1 {
            continue;
        }
        out.push(region_descriptor(gray, &b, params)?);
    }
    Ok(out)
}

fn sgd_train(
    samples: &[TrainSample],
    dim: usize,
    cfg: &TrainConfig,
) -> (Vec<f64>, f64, Vec<f64>) {
    let mut weights = vec![0.0f64; dim];
    let mut bias = 0.0f64;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + f64::from(epoch));
        order.shuffle(&mut rng);
        for &i in &order {
            let s = &samples[i];
            let margin = s.label * (s.features.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() + bias);
            let decay = 1.0 - lr * cfg.l2_lambda;
            for w in weights.iter_mut() {
                *w *= decay;
            }
            if margin < 1.0 {
                for (w, x) in weights.iter_mut().zip(&s.features) {
                    *w += lr * s.label * x;
                }
                bias += lr * s.label;
            }
        }
        history.push(hinge_objective(&weights, bias, cfg.l2_lambda, samples));
    }
    (weights, bias, history)
}

/// Train a detector end to end: extract positives and random negatives
/// from every frame, fit by SGD, then run the requested hard-negative
/// rounds (mine the trained detector's false positives, refit from
/// scratch under the same seed).
pub fn train_detector<S: FrameSource>(
    source: &S,
    params: &HogParams,
    detect_params: &DetectParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, DetectError> {
    params.validate()?;
    let per_frame: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..source.len())
        .into_par_iter()
        .map(|i| -> Result<_, DetectError> {
            let (image, annotations) = source.load(i)?;
            let gray = image.to_gray();
            let mut pos = Vec::new();
            let gt_boxes: Vec<BoxF> = annotations.iter().map(|a| a.full_bbox.to_boxf()).collect();
            for ann in &annotations {
                let usable = ann.visibility >= crate::dataset::DIFFICULT_VISIBILITY
                    && ann.full_bbox.height() >= cfg.min_positive_height_px as i32
                    && ann.full_bbox.width() >= 2;
                if usable {
                    pos.push(positive_descriptor(&gray, &ann.full_bbox, params)?);
                }
            }
            // Per-frame stream keyed by (seed, index) so rayon's schedule
            // cannot change what gets sampled.
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let neg = sample_negatives(&gray, &gt_boxes, params, cfg.negatives_per_frame, &mut rng)?;
            Ok((pos, neg))
        })
        .collect::<Result<_, _>>()?;

    let mut samples = Vec::new();
    let mut n_pos = 0usize;
    let mut n_neg = 0usize;
    for (pos, neg) in per_frame {
        for f in pos {
            samples.push(TrainSample { features: f, label: 1.0 });
            n_pos += 1;
        }
        for f in neg {
            samples.push(TrainSample { features: f, label: -1.0 });
            n_neg += 1;
        }
    }
    if n_pos < MIN_SAMPLES_PER_CLASS || n_neg < MIN_SAMPLES_PER_CLASS {
        return Err(DetectError::InsufficientData {
            positives: n_pos,
            negatives: n_neg,
            min: MIN_SAMPLES_PER_CLASS,
        });
    }

    let dim = params.descriptor_len();
    let (mut weights, mut bias, hist) = sgd_train(&samples, dim, cfg);
    let mut objective_history = vec![hist];
    let mut n_hard = 0usize;

    for _ in 0..cfg.hard_negative_rounds {
        let model = LinearModel {
            params: *params,
            weights: weights.clone(),
            bias,
        };
        let mining = DetectParams {
            score_threshold: cfg.mining_score_threshold,
            ..*detect_params
        };
        let mined: Vec<Vec<Vec<f64>>> = (0..source.len())
            .into_par_iter()
            .map(|i| -> Result<_, DetectError> {
                let (image, annotations) = source.load(i)?;
                let gray = image.to_gray();
                let gt_boxes: Vec<BoxF> =
                    annotations.iter().map(|a| a.full_bbox.to_boxf()).collect();
                let dets = detect_pedestrians(&gray, &model, &mining)?;
                let mut hard = Vec::new();
                for d in dets {
                    if hard.len() >= cfg.hard_negatives_per_frame as usize {
                        break;
                    }
                    if max_iou_with(&d.bbox, &gt_boxes) < 0.3 {
                        hard.push(context_descriptor(&gray, &d.bbox, params)?);
                    }
                }
                Ok(hard)
            })
            .collect::<Result<_, _>>()?;
        let mut added = 0usize;
        for per_frame in mined {
            for f in per_frame {
                samples.push(TrainSample { features: f, label: -1.0 });
                added += 1;
            }
        }
        if added == 0 {
            break;
        }
        n_hard += added;
        let (w, b, hist) = sgd_train(&samples, dim, cfg);
        weights = w;
        bias = b;
        objective_history.push(hist);
    }

    Ok(TrainOutcome {
        model: LinearModel {
            params: *params,
            weights,
            bias,
        },
        positives: n_pos,
        negatives: n_neg,
        hard_negatives: n_hard,
        objective_history,
    })
}

/// Scan-time knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub pyramid_scale: f64,
    pub stride_px: u32,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            score_threshold: 0.0,
            nms_iou: 0.5,
            pyramid_scale: 1.2,
            stride_px: 8,
        }
    }
}

/// A scored hit in original-image continuous pixel coordinates. The box
/// is the person envelope: the scoring window shrunk by `WINDOW_FILL`
/// about its center, matching where training crops place the subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoxF,
    pub score: f64,
}

/// Slide the model's window over a downscaling pyramid, score every
/// position, map hits back to original coordinates, and suppress
/// overlaps. Detections come back sorted by descending score.
pub fn detect_pedestrians(
    gray: &GrayImage,
    model: &LinearModel,
    opts: &DetectParams,
) -> Result<Vec<Detection>, DetectError> {
    let p = &model.params;
    if gray.width < p.window_width || gray.height < p.window_height {
        return Err(DetectError::ImageTooSmall {
            width: gray.width,
            height: gray.height,
            min_w: p.window_width,
            min_h: p.window_height,
        });
    }
    if opts.stride_px == 0 || opts.stride_px % p.cell_size != 0 {
        return Err(DetectError::BadParams(format!(
            "stride {} px must be a positive multiple of the {} px cell",
            opts.stride_px, p.cell_size
        )));
    }
    if !(opts.pyramid_scale > 1.0) {
        return Err(DetectError::BadParams(format!(
            "pyramid scale must exceed 1, got {}",
            opts.pyramid_scale
        )));
    }
    let stride_cells = (opts.stride_px / p.cell_size) as usize;
    let mut detections = Vec::new();
    let mut level = 0i32;
    loop {
        let s = opts.pyramid_scale.powi(level);
        let lw = (f64::from(gray.width) / s).round() as u32;
        let lh = (f64::from(gray.height) / s).round() as u32;
        if lw < p.window_width || lh < p.window_height {
            break;
        }
        let scaled;
        let img = if level == 0 {
            gray
        } else {
            scaled = gray.resize(lw, lh);
            &scaled
        };
        let grid = HogGrid::build(img, p)?;
        // Map through the realized per-axis ratio, not the nominal scale,
        // so rounding of level sizes cannot skew boxes.
        let sx = f64::from(gray.width) / f64::from(lw);
        let sy = f64::from(gray.height) / f64::from(lh);
        let max_cx = grid.cells_x - p.window_cells_x();
        let max_cy = grid.cells_y - p.window_cells_y();
        let cell = p.cell_size as f64;
        // Report the fill envelope, not the raw window: training scales
        // the person to WINDOW_FILL of the window, so the margin is
        // context, not subject.
        let inset_x = f64::from(p.window_width) * (1.0 - WINDOW_FILL) * 0.5;
        let inset_y = f64::from(p.window_height) * (1.0 - WINDOW_FILL) * 0.5;
        for cy in (0..=max_cy).step_by(stride_cells) {
            for cx in (0..=max_cx).step_by(stride_cells) {
                let score = grid.score_at(&model.weights, model.bias, cx, cy);
                if score >= opts.score_threshold {
                    let x = cx as f64 * cell;
                    let y = cy as f64 * cell;
                    detections.push(Detection {
                        bbox: BoxF::new(
                            (x + inset_x) * sx,
                            (y + inset_y) * sy,
                            (x + f64::from(p.window_width) - inset_x) * sx,
                            (y + f64::from(p.window_height) - inset_y) * sy,
                        ),
                        score,
                    });
                }
            }
        }
        level += 1;
    }
    Ok(nms(detections, opts.nms_iou))
}

/// Greedy non-maximum suppression: walk detections by descending score
/// (ties keep input order) and drop any box overlapping a kept one at
/// IoU >= `iou_threshold`.
pub fn nms(mut detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    detections.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn noise_gray(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w as usize * h as usize)
            .map(|_| f64::from(rng.next_u32() % 256))
            .collect();
        GrayImage::from_vec(w, h, data)
    }

    #[test]
    fn default_descriptor_length_is_756() {
        let p = HogParams::default();
        p.validate().unwrap();
        assert_eq!(p.descriptor_len(), 756);
        assert_eq!((p.window_blocks_x(), p.window_blocks_y()), (3, 7));
    }

    #[test]
    fn zero_patch_descriptor_is_all_zeros() {
        let p = HogParams::default();
        let patch = GrayImage::new(32, 64, 0.0);
        let d = hog_descriptor(&patch, &p).unwrap();
        assert_eq!(d.len(), 756);
        assert!(d.iter().all(|v| *v == 0.0), "flat input must give a zero, NaN-free descriptor");
    }

    #[test]
    fn block_norms_stay_bounded() {
        let p = HogParams::default();
        let d = hog_descriptor(&noise_gray(32, 64, 9), &p).unwrap();
        for block in d.chunks(36) {
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-6, "block norm {norm} exceeds 1");
            assert!(block.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn vertical_ramp_votes_one_bin() {
        let p = HogParams::default();
        // brightness grows with y: gradient points straight down, angle
        // pi/2, dead center of bin 4 of 9
        let data = (0..64u32)
            .flat_map(|y| (0..32).map(move |_| f64::from(y) * 2.0))
            .collect();
        let d = hog_descriptor(&GrayImage::from_vec(32, 64, data), &p).unwrap();
        for (i, v) in d.iter().enumerate() {
            if i % 9 == 4 {
                assert!(*v > 0.0, "bin 4 must carry the ramp at index {i}");
            } else {
                assert_eq!(*v, 0.0, "stray vote in bin {} at index {i}", i % 9);
            }
        }
    }

    #[test]
    fn horizontal_ramp_splits_between_wrapped_bins() {
        let p = HogParams::default();
        // angle 0 sits exactly between the centers of bins 8 and 0
        let data = (0..64u32)
            .flat_map(|_| (0..32u32).map(|x| f64::from(x) * 2.0))
            .collect();
        let d = hog_descriptor(&GrayImage::from_vec(32, 64, data), &p).unwrap();
        for chunk in d.chunks(9) {
            assert!((chunk[0] - chunk[8]).abs() < 1e-12);
            for v in &chunk[1..8] {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn descriptor_is_translation_consistent_by_one_cell() {
        let p = HogParams::default();
        let img = noise_gray(64, 96, 17);
        let grid = HogGrid::build(&img, &p).unwrap();
        let d1 = grid.descriptor_at(2, 1);
        // shift the viewport one cell right: interior gradients are
        // untouched, so the window at (1,1) must match bit for bit
        let shifted = img.crop_replicated(8, 0, 56, 96);
        let grid2 = HogGrid::build(&shifted, &p).unwrap();
        let d2 = grid2.descriptor_at(1, 1);
        assert_eq!(d1, d2);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 6;
        let samples: Vec<TrainSample> = (0..24)
            .map(|i| TrainSample {
                features: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                label: if i % 2 == 0 { 1.0 } else { -1.0 },
            })
            .collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = 0.3;
        let lambda = 0.05;
        let (gw, gb) = hinge_gradient(&w, b, lambda, &samples);
        let h = 1e-6;
        for k in 0..dim {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let num = (hinge_objective(&wp, b, lambda, &samples)
                - hinge_objective(&wm, b, lambda, &samples))
                / (2.0 * h);
            assert!(
                (num - gw[k]).abs() <= 1e-5 * (1.0 + num.abs()),
                "dw[{k}]: analytic {} vs numeric {num}",
                gw[k]
            );
        }
        let num_b = (hinge_objective(&w, b + h, lambda, &samples)
            - hinge_objective(&w, b - h, lambda, &samples))
            / (2.0 * h);
        assert!((num_b - gb).abs() <= 1e-5 * (1.0 + num_b.abs()));
    }

    #[test]
    fn sgd_separates_blobs_with_non_increasing_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 10;
        let mut samples = Vec::new();
        for i in 0..200 {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            let center = label * 1.5;
            samples.push(TrainSample {
                features: (0..dim).map(|_| center + rng.gen_range(-0.5..0.5)).collect(),
                label,
            });
        }
        let cfg = TrainConfig {
            epochs: 25,
            learning_rate: 0.1,
            l2_lambda: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let (w, b, history) = sgd_train(&samples, dim, &cfg);
        for pair in history.windows(2) {
            assert!(
                pair[1] <= pair[0] * 1.01,
                "objective rose beyond slack: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        let correct = samples
            .iter()
            .filter(|s| {
                let score: f64 =
                    s.features.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() + b;
                (score > 0.0) == (s.label > 0.0)
            })
            .count();
        assert_eq!(correct, samples.len(), "separable blobs must classify cleanly");
    }

    #[test]
    fn model_file_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = HogParams::default();
        let model = LinearModel {
            params,
            weights: (0..params.descriptor_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: -0.12345,
        };
        model.save(&path).unwrap();
        let back = LinearModel::load(&path).unwrap();
        assert_eq!(model, back);

        fs::write(&path, b"NOPE!junk").unwrap();
        assert!(matches!(LinearModel::load(&path), Err(DetectError::BadModelMagic)));

        let mut truncated = Vec::new();
        truncated.extend_from_slice(b"SSPD1");
        truncated.extend_from_slice(&32u32.to_le_bytes());
        fs::write(&path, truncated).unwrap();
        assert!(matches!(LinearModel::load(&path), Err(DetectError::TruncatedModel)));
    }

    #[test]
    fn nms_keeps_best_and_drops_overlaps() {
        let d = |x: f64, score: f64| Detection {
            bbox: BoxF::new(x, 0.0, x + 10.0, 20.0),
            score,
        };
        let out = nms(vec![d(0.0, 0.5), d(1.0, 0.9), d(30.0, 0.2)], 0.5);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[1].score, 0.2);

        // equal scores: input order decides, result stays sorted
        let out = nms(vec![d(0.0, 0.5), d(0.5, 0.5)], 0.3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.x1, 0.0);
    }

    #[test]
    fn detect_rejects_small_images_and_bad_strides() {
        let model = LinearModel {
            params: HogParams::default(),
            weights: vec![0.0; 756],
            bias: 0.0,
        };
        let tiny = GrayImage::new(20, 20, 0.0);
        assert!(matches!(
            detect_pedestrians(&tiny, &model, &DetectParams::default()),
            Err(DetectError::ImageTooSmall { .. })
        ));
        let img = GrayImage::new(64, 96, 0.0);
        let bad = DetectParams {
            stride_px: 5,
            ..DetectParams::default()
        };
        assert!(matches!(
            detect_pedestrians(&img, &model, &bad),
            Err(DetectError::BadParams(_))
        ));
    }

    #[test]
    fn insufficient_data_without_annotations() {
        let frames: Vec<(RgbImage, Vec<AnnotationRecord>)> =
            vec![(RgbImage::new(64, 96, [10, 10, 10]), vec![])];
        let err = train_detector(
            &frames,
            &HogParams::default(),
            &DetectParams::default(),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DetectError::InsufficientData { .. }));
    }

    /// Plants bright vertical bars on dim noise, trains, and checks the
    /// detector localizes a held-out bar.
    #[test]
    fn trained_detector_finds_planted_bars() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let make_frame = |rng: &mut ChaCha8Rng| -> (RgbImage, Vec<AnnotationRecord>) {
            let mut img = RgbImage::new(128, 128, [0, 0, 0]);
            for px in img.pixels_mut() {
                let v = (rng.next_u32() % 40) as u8;
                *px = [v, v, v];
            }
            let x = rng.gen_range(8..96) as i32;
            let y = rng.gen_range(8..60) as i32;
            let (w, h) = (24, 56);
            for yy in y..y + h {
                for xx in x..x + w {
                    img.set(xx as u32, yy as u32, [230, 230, 230]);
                }
            }
            let b = PixelBox::new(x, y, x + w - 1, y + h - 1);
            (
                img,
                vec![AnnotationRecord {
                    instance_id: 1,
                    full_bbox: b,
                    visible_bbox: Some(b),
                    visibility: 1.0,
                    truncated: false,
                }],
            )
        };
        let frames: Vec<_> = (0..12).map(|_| make_frame(&mut rng)).collect();
        let cfg = TrainConfig {
            epochs: 15,
            negatives_per_frame: 8,
            hard_negative_rounds: 1,
            hard_negatives_per_frame: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        let outcome = train_detector(&frames, &HogParams::default(), &DetectParams::default(), &cfg)
            .unwrap();
        assert_eq!(outcome.positives, 12);

        let (test_img, test_gt) = make_frame(&mut rng);
        let dets = detect_pedestrians(
            &test_img.to_gray(),
            &outcome.model,
            &DetectParams::default(),
        )
        .unwrap();
        assert!(!dets.is_empty(), "detector must fire on a planted bar");
        let gt = test_gt[0].full_bbox.to_boxf();
        let best = dets
            .iter()
            .map(|d| d.bbox.iou(&gt))
            .fold(0.0, f64::max);
        assert!(best > 0.25, "best IoU with the planted bar was {best}");
    }
}
