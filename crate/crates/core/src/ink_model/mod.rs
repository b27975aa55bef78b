//! Per-pixel ink classification from surface-volume patches, trained under
//! leave-one-region-out cross-validation.

mod mlp;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::labeling::LabelImage;
use crate::raster::{Image2, Mask, Rect};
use crate::unwrap::SurfaceVolume;

pub use mlp::{bce_from_logit, grad_check, grad_check_with, sigmoid, Gradients, ModelParams, Momentum, LEAKY_SLOPE};

#[derive(Debug, Error)]
pub enum InkError {
    #[error("need at least 2 regions, got {0}")]
    TooFewRegions(usize),
    #[error("duplicate region id {0:?}")]
    DuplicateRegion(String),
    #[error("region {id:?} rect {rect:?} exceeds surface {dims:?}")]
    RegionOutOfBounds { id: String, rect: Rect, dims: (usize, usize) },
    #[error("regions {0:?} and {1:?} overlap")]
    RegionsOverlap(String, String),
    #[error("region {0:?} refers to missing surface {1}")]
    NoSurface(String, usize),
    #[error("region {0:?} has no usable pixels")]
    EmptyRegion(String),
    #[error("label image {labels:?} does not match surface volume {sv:?}")]
    DimMismatch { labels: (usize, usize), sv: (usize, usize) },
    #[error("patch depth {patch} exceeds surface volume depth {depth}")]
    PatchTooDeep { patch: usize, depth: usize },
    #[error("patch has {got} values, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("patch contains a non-finite value")]
    NonFinite,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training set has no {0} samples; balanced batches are impossible")]
    MissingClass(&'static str),
    #[error("training diverged at batch {batch} (loss {loss})")]
    Diverged { batch: usize, loss: f64, trace: Vec<TracePoint> },
    #[error("{count} training patch centers fall inside holdout region {holdout:?}")]
    Leakage { holdout: String, count: usize },
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InkError>;

/// A surface volume with its aligned labels.
#[derive(Debug, Clone)]
pub struct Surface {
    pub sv: SurfaceVolume,
    pub labels: LabelImage,
}

impl Surface {
    pub fn new(sv: SurfaceVolume, labels: LabelImage) -> Result<Self> {
        if sv.dims() != labels.dims() {
            return Err(InkError::DimMismatch {
                labels: labels.dims(),
                sv: sv.dims(),
            });
        }
        Ok(Self { sv, labels })
    }
}

/// A rectangle of one surface used as a cross-validation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub id: String,
    /// Index into the surface list.
    pub surface: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// Indices into the region list.
    pub train: Vec<usize>,
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub k: usize,
}

/// Leave-one-out folds: fold `i` holds out region `i`.
pub fn make_folds(regions: &[Region]) -> Result<FoldPlan> {
    if regions.len() < 2 {
        return Err(InkError::TooFewRegions(regions.len()));
    }
    let mut seen = BTreeSet::new();
    for r in regions {
        if !seen.insert(r.id.as_str()) {
            return Err(InkError::DuplicateRegion(r.id.clone()));
        }
    }
    let n = regions.len();
    let folds = (0..n)
        .map(|h| Fold {
            train: (0..n).filter(|&i| i != h).collect(),
            holdout: h,
        })
        .collect();
    Ok(FoldPlan { folds, k: n })
}

/// Checks that every rect fits its surface and same-surface rects are
/// disjoint.
pub fn validate_regions(surfaces: &[Surface], regions: &[Region]) -> Result<()> {
    for r in regions {
        let s = surfaces
            .get(r.surface)
            .ok_or_else(|| InkError::NoSurface(r.id.clone(), r.surface))?;
        let (w, h) = s.sv.dims();
        if r.rect.is_empty() || !r.rect.fits_within(w, h) {
            return Err(InkError::RegionOutOfBounds {
                id: r.id.clone(),
                rect: r.rect,
                dims: (w, h),
            });
        }
    }
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if a.surface == b.surface && a.rect.intersects(&b.rect) {
                return Err(InkError::RegionsOverlap(a.id.clone(), b.id.clone()));
            }
        }
    }
    Ok(())
}

/// Patch dimensions `(w, h, d)`: raster x, raster y, depth channels.
pub type PatchShape = (usize, usize, usize);

/// Copies the patch centered on pixel `(x, y)` and the central channel.
/// Samples outside the raster or invalid are 0. Returns false when the
/// central sample itself is invalid; `out` is then left untouched.
pub fn extract_patch(sv: &SurfaceVolume, x: usize, y: usize, shape: PatchShape, normalize: bool, out: &mut [f64]) -> bool {
    let c = sv.center();
    if !sv.is_valid(x, y, c) {
        return false;
    }
    let (w, h, d) = shape;
    let (x0, y0, k0) = (x as isize - (w / 2) as isize, y as isize - (h / 2) as isize, c as isize - (d / 2) as isize);
    let mut idx = 0;
    for k in 0..d {
        let kk = k0 + k as isize;
        for j in 0..h {
            let yy = y0 + j as isize;
            for i in 0..w {
                let xx = x0 + i as isize;
                out[idx] = if xx >= 0
                    && yy >= 0
                    && kk >= 0
                    && (xx as usize) < sv.width
                    && (yy as usize) < sv.height
                    && (kk as usize) < sv.depth
                {
                    let n = sv.index(xx as usize, yy as usize, kk as usize);
                    if sv.valid[n] {
                        sv.data[n]
                    } else {
                        0.0
                    }
                } else {
                    0.0
                };
                idx += 1;
            }
        }
    }
    if normalize {
        normalize_patch(&mut out[..w * h * d]);
    }
    true
}

/// Zero mean, unit variance; constant patches become all zeros.
pub fn normalize_patch(p: &mut [f64]) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 1e-12 {
        p.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    } else {
        p.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A labeled patch center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub surface: usize,
    pub x: usize,
    pub y: usize,
    pub label: u8,
}

/// Patch centers on a `stride` lattice anchored at the region's corner,
/// skipping unlabeled pixels and invalid central samples. Row-major order.
pub fn region_samples(surface_index: usize, surface: &Surface, region: &Region, shape: PatchShape, stride: usize) -> Result<Vec<SampleRef>> {
    if shape.2 > surface.sv.depth {
        return Err(InkError::PatchTooDeep {
            patch: shape.2,
            depth: surface.sv.depth,
        });
    }
    if stride == 0 {
        return Err(InkError::BadConfig("stride must be >= 1".into()));
    }
    let (w, h) = surface.sv.dims();
    let r = region.rect;
    if !r.fits_within(w, h) {
        return Err(InkError::RegionOutOfBounds {
            id: region.id.clone(),
            rect: r,
            dims: (w, h),
        });
    }
    let c = surface.sv.center();
    let mut out = Vec::new();
    for y in (r.y0..r.y1).step_by(stride) {
        for x in (r.x0..r.x1).step_by(stride) {
            if !*surface.labels.region.get(x, y) || !surface.sv.is_valid(x, y, c) {
                continue;
            }
            out.push(SampleRef {
                surface: surface_index,
                x,
                y,
                label: *surface.labels.ink.get(x, y) as u8,
            });
        }
    }
    if out.is_empty() {
        return Err(InkError::EmptyRegion(region.id.clone()));
    }
    Ok(out)
}

/// Materialized `(patch, label)` pairs for one region in a seeded shuffled
/// order.
pub fn extract_training_set(
    surface: &Surface,
    region: &Region,
    shape: PatchShape,
    stride: usize,
    seed: u64,
    normalize: bool,
) -> Result<Vec<(Vec<f64>, u8)>> {
    let mut refs = region_samples(region.surface, surface, region, shape, stride)?;
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let len = shape.0 * shape.1 * shape.2;
    Ok(refs
        .into_iter()
        .map(|s| {
            let mut p = vec![0.0; len];
            extract_patch(&surface.sv, s.x, s.y, shape, normalize, &mut p);
            (p, s.label)
        })
        .collect())
}

/// Number of samples whose center lies in the holdout rect of the same
/// surface.
pub fn count_leaks(samples: &[SampleRef], holdout: &Region) -> usize {
    samples
        .iter()
        .filter(|s| s.surface == holdout.surface && holdout.rect.contains(s.x, s.y))
        .count()
}

/// Probability of ink for one patch.
pub fn forward(params: &ModelParams, patch: &[f64]) -> Result<f64> {
    if patch.len() != params.input_len() {
        return Err(InkError::ShapeMismatch {
            expected: params.input_len(),
            got: patch.len(),
        });
    }
    if patch.iter().any(|v| !v.is_finite()) {
        return Err(InkError::NonFinite);
    }
    let x = ArrayView2::from_shape((1, patch.len()), patch).expect("contiguous patch");
    Ok(params.predict_batch(x)[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_batches: usize,
    pub seed: u64,
    pub balance: bool,
    pub eval_every: usize,
    pub momentum: f64,
    /// L2 penalty on weights (not biases), added to the gradient.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 32,
            total_batches: 10_000,
            seed: 1,
            balance: true,
            eval_every: 200,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(InkError::BadConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 || self.total_batches == 0 || self.eval_every == 0 {
            return bad("batch_size, total_batches and eval_every must be positive");
        }
        if self.balance && self.batch_size % 2 != 0 {
            return bad("batch_size must be even when balance is on");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

/// Architecture and input handling.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub patch: PatchShape,
    pub hidden: Vec<usize>,
    pub normalize: bool,
    /// Lattice spacing of training patch centers.
    pub stride: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            patch: (9, 9, 17),
            hidden: vec![64, 32],
            normalize: true,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub batch: usize,
    /// Mean training loss over the batches since the previous point.
    pub loss: f64,
    pub holdout_loss: Option<f64>,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TracePoint>,
    /// Training samples available (before batching).
    pub samples: usize,
    pub positives: usize,
    /// Every batch's ink-label count, when tracking is requested.
    pub batch_positives: Vec<usize>,
}

/// Draws from one class: a reshuffled permutation (without replacement)
/// or uniform draws (with replacement).
struct ClassSampler {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    with_replacement: bool,
}

impl ClassSampler {
    fn new(items: Vec<usize>, with_replacement: bool) -> Self {
        Self {
            order: Vec::new(),
            pos: 0,
            items,
            with_replacement,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.with_replacement {
            return self.items[rng.random_range(0..self.items.len())];
        }
        if self.pos == self.order.len() {
            self.order = self.items.clone();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn fill_batch(
    surfaces: &[Surface],
    samples: &[SampleRef],
    picks: &[usize],
    shape: PatchShape,
    normalize: bool,
    x: &mut Array2<f64>,
    y: &mut Vec<f64>,
) {
    y.clear();
    for (row, &i) in picks.iter().enumerate() {
        let s = samples[i];
        let mut r = x.row_mut(row);
        let slice = r.as_slice_mut().expect("row-major batch");
        extract_patch(&surfaces[s.surface].sv, s.x, s.y, shape, normalize, slice);
        y.push(s.label as f64);
    }
}

/// Trains one model on `train` regions; `holdout` (if any) is excluded from
/// training, checked for leakage, and scored in the loss trace.
pub fn train(
    surfaces: &[Surface],
    regions: &[Region],
    train: &[usize],
    holdout: Option<usize>,
    config: &TrainConfig,
    spec: &ModelSpec,
    track_batches: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    validate_regions(surfaces, regions)?;
    let mut samples = Vec::new();
    for &ri in train {
        let r = &regions[ri];
        samples.extend(region_samples(r.surface, &surfaces[r.surface], r, spec.patch, spec.stride)?);
    }
    if let Some(h) = holdout {
        let leaks = count_leaks(&samples, &regions[h]);
        if leaks > 0 {
            return Err(InkError::Leakage {
                holdout: regions[h].id.clone(),
                count: leaks,
            });
        }
    }
    let pos: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    let neg: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(spec.patch, &spec.hidden, spec.normalize, rng.random());
    let mut opt = Momentum::new(&params, config.momentum);

    let (mut pos_s, mut neg_s, mut all_s);
    if config.balance {
        if pos.is_empty() {
            return Err(InkError::MissingClass("ink"));
        }
        if neg.is_empty() {
            return Err(InkError::MissingClass("non-ink"));
        }
        let pos_minor = pos.len() < neg.len();
        pos_s = Some(ClassSampler::new(pos.clone(), pos_minor));
        neg_s = Some(ClassSampler::new(neg.clone(), !pos_minor));
        all_s = None;
    } else {
        pos_s = None;
        neg_s = None;
        all_s = Some(ClassSampler::new((0..samples.len()).collect(), false));
    }

    // Fixed holdout subsample for the trace.
    let holdout_eval = match holdout {
        Some(h) => {
            let r = &regions[h];
            let mut hs = region_samples(r.surface, &surfaces[r.surface], r, spec.patch, spec.stride)?;
            hs.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x401d));
            hs.truncate(512);
            Some(hs)
        }
        None => None,
    };

    let n_in = params.input_len();
    let bs = config.batch_size;
    let mut x = Array2::<f64>::zeros((bs, n_in));
    let mut y = Vec::with_capacity(bs);
    let mut picks = Vec::with_capacity(bs);
    let mut trace = Vec::new();
    let mut batch_positives = Vec::new();
    let mut running = 0.0;
    let mut running_n = 0usize;
    for batch in 1..=config.total_batches {
        picks.clear();
        if let (Some(ps), Some(ns)) = (pos_s.as_mut(), neg_s.as_mut()) {
            for _ in 0..bs / 2 {
                picks.push(ps.next(&mut rng));
            }
            for _ in 0..bs / 2 {
                picks.push(ns.next(&mut rng));
            }
        } else if let Some(a) = all_s.as_mut() {
            for _ in 0..bs {
                picks.push(a.next(&mut rng));
            }
        }
        fill_batch(surfaces, &samples, &picks, spec.patch, spec.normalize, &mut x, &mut y);
        if track_batches {
            batch_positives.push(y.iter().filter(|&&v| v == 1.0).count());
        }
        let (mut grads, loss) = params.backward(x.view(), &y);
        if config.weight_decay > 0.0 {
            for (g, w) in grads.iter_mut().zip(&params.weights) {
                g.0.scaled_add(config.weight_decay, w);
            }
        }
        if !loss.is_finite() {
            return Err(InkError::Diverged { batch, loss, trace });
        }
        opt.step(&mut params, &grads, config.learning_rate);
        running += loss;
        running_n += 1;
        if batch % config.eval_every == 0 || batch == config.total_batches {
            let (hl, ha) = match &holdout_eval {
                Some(hs) if !hs.is_empty() => {
                    let (l, a) = score_samples(&params, surfaces, hs, spec);
                    (Some(l), Some(a))
                }
                _ => (None, None),
            };
            trace.push(TracePoint {
                batch,
                loss: running / running_n as f64,
                holdout_loss: hl,
                holdout_accuracy: ha,
            });
            log::debug!("batch {batch}: loss {:.4}", running / running_n as f64);
            running = 0.0;
            running_n = 0;
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        samples: samples.len(),
        positives: pos.len(),
        batch_positives,
    })
}

/// Mean BCE and accuracy at 0.5 over the given samples.
fn score_samples(params: &ModelParams, surfaces: &[Surface], samples: &[SampleRef], spec: &ModelSpec) -> (f64, f64) {
    let n_in = params.input_len();
    let mut x = Array2::<f64>::zeros((samples.len(), n_in));
    let mut y = Vec::new();
    let idx: Vec<usize> = (0..samples.len()).collect();
    fill_batch(surfaces, samples, &idx, spec.patch, spec.normalize, &mut x, &mut y);
    let z = params.logits(x.view());
    let loss = z.iter().zip(&y).map(|(&z, &y)| bce_from_logit(z, y)).sum::<f64>() / y.len() as f64;
    let correct = z.iter().zip(&y).filter(|(&z, &y)| (z > 0.0) == (y > 0.5)).count();
    (loss, correct as f64 / y.len() as f64)
}

/// Per-pixel ink probability with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionImage {
    pub prob: Image2<f64>,
    pub mask: Mask,
}

impl PredictionImage {
    pub fn dims(&self) -> (usize, usize) {
        self.prob.dims()
    }

    /// `prob.tif` (16-bit) and `mask.png`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.prob.save_tiff16(&dir.join("prob.tif"))?;
        self.mask.save_png(&dir.join("mask.png"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            prob: Image2::load_tiff16(&dir.join("prob.tif"))?,
            mask: Mask::load_png(&dir.join("mask.png"))?,
        })
    }
}

/// Predicts ink inside `rect`.
///
/// The model runs at pixels on a `stride` lattice anchored at the rect's
/// corner; remaining pixels are bilinearly interpolated from the four
/// surrounding lattice values, or evaluated directly when any of those is
/// missing. Pixels with an invalid central sample get 0 and a cleared mask.
pub fn predict_image(params: &ModelParams, sv: &SurfaceVolume, rect: Rect, stride: usize) -> Result<PredictionImage> {
    params.validate()?;
    let shape = params.input_shape;
    if shape.2 > sv.depth {
        return Err(InkError::PatchTooDeep {
            patch: shape.2,
            depth: sv.depth,
        });
    }
    let (w, h) = sv.dims();
    if rect.is_empty() || !rect.fits_within(w, h) {
        return Err(InkError::RegionOutOfBounds {
            id: "prediction".into(),
            rect,
            dims: (w, h),
        });
    }
    if stride == 0 {
        return Err(InkError::BadConfig("stride must be >= 1".into()));
    }
    let n_in = params.input_len();
    let c = sv.center();
    let eval_row = |y: usize, xs: &[usize]| -> Vec<Option<f64>> {
        let mut x = Array2::<f64>::zeros((xs.len(), n_in));
        let mut ok = vec![false; xs.len()];
        for (i, &px) in xs.iter().enumerate() {
            let mut r = x.row_mut(i);
            ok[i] = extract_patch(sv, px, y, shape, params.normalize, r.as_slice_mut().unwrap());
        }
        let p = params.predict_batch(x.view());
        ok.iter().zip(p.iter()).map(|(&ok, &p)| ok.then_some(p)).collect()
    };

    // Lattice values.
    let lx: Vec<usize> = (rect.x0..rect.x1).step_by(stride).collect();
    let ly: Vec<usize> = (rect.y0..rect.y1).step_by(stride).collect();
    let lattice: Vec<Vec<Option<f64>>> = ly.par_iter().map(|&y| eval_row(y, &lx)).collect();

    let rows: Vec<Vec<Option<f64>>> = (rect.y0..rect.y1)
        .into_par_iter()
        .map(|y| {
            let jy = (y - rect.y0) / stride;
            let fy = ((y - rect.y0) % stride) as f64 / stride as f64;
            let mut row = vec![None; rect.width()];
            let mut direct = Vec::new();
            for x in rect.x0..rect.x1 {
                if !sv.is_valid(x, y, c) {
                    continue;
                }
                let jx = (x - rect.x0) / stride;
                let fx = ((x - rect.x0) % stride) as f64 / stride as f64;
                let get = |a: usize, b: usize| lattice.get(b).and_then(|r| r.get(a)).copied().flatten();
                let v = if fx == 0.0 && fy == 0.0 {
                    get(jx, jy)
                } else {
                    let ax = if fx > 0.0 { jx + 1 } else { jx };
                    let by = if fy > 0.0 { jy + 1 } else { jy };
                    match (get(jx, jy), get(ax, jy), get(jx, by), get(ax, by)) {
                        (Some(a), Some(b), Some(cc), Some(d)) => {
                            let top = a + (b - a) * fx;
                            let bot = cc + (d - cc) * fx;
                            Some(top + (bot - top) * fy)
                        }
                        _ => None,
                    }
                };
                match v {
                    Some(p) => row[x - rect.x0] = Some(p),
                    None => direct.push(x),
                }
            }
            if !direct.is_empty() {
                for (x, p) in direct.iter().zip(eval_row(y, &direct)) {
                    row[x - rect.x0] = p;
                }
            }
            row
        })
        .collect();

    let mut prob = Image2::filled(w, h, 0.0);
    let mut mask = Mask::filled(w, h, false);
    for (dy, row) in rows.into_iter().enumerate() {
        for (dx, v) in row.into_iter().enumerate() {
            if let Some(p) = v {
                prob.set(rect.x0 + dx, rect.y0 + dy, p);
                mask.set(rect.x0 + dx, rect.y0 + dy, true);
            }
        }
    }
    Ok(PredictionImage { prob, mask })
}

/// Writes the model in the flat binary format.
pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    params.write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut f = BufReader::new(fs::File::open(path)?);
    ModelParams::read_from(&mut f)
}

/// `batch,loss,holdout_loss,holdout_accuracy` rows; absent values are empty.
pub fn trace_csv(trace: &[TracePoint]) -> String {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut s = String::from("batch,loss,holdout_loss,holdout_accuracy\n");
    for t in trace {
        s.push_str(&format!(
            "{},{:.6},{},{}\n",
            t.batch,
            t.loss,
            opt(t.holdout_loss),
            opt(t.holdout_accuracy)
        ));
    }
    s
}
