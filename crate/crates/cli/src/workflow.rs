//! In-memory pipeline steps shared by the stage runner and the tests.

use rayon::prelude::*;
use thiserror::Error;
use unroll_core::evaluation::{compile_cross_validation, EvalError, FoldEval, PixelMetrics, PositiveClass};
use unroll_core::ink_model::{self, InkError, ModelParams, ModelSpec, PredictionImage, Region, Surface, TracePoint, TrainConfig};
use unroll_core::labeling::{binarize, estimate_affine, warp_photo, LabelError, LabelImage, Landmark, ThresholdMethod};
use unroll_core::phantom::{Geometry, SurfacePhoto};
use unroll_core::segmentation::{self, TraceError, TraceParams};
use unroll_core::unwrap::{UnwrapError, UvLocator};
use unroll_core::{AffineTransform2D, FlattenedMesh, Image2, Mask, Rect, SurfaceMesh, SurfaceVolume, VoxelGrid};

/// Seeds along layer `layer`'s centerline on slice `z`, every `every`
/// chart units, trimmed by `margin` at both ends.
pub fn truth_seeds(geometry: &Geometry, layer: usize, z: usize, every: f64, margin: f64) -> Vec<[f64; 2]> {
    let (uw, _) = geometry.uv_dims();
    let end = uw as f64 - 1.0 - margin;
    let mut out = Vec::new();
    let mut u = margin;
    while u < end {
        let p = geometry.surface_point(layer, u, z as f64);
        out.push([p[0], p[1]]);
        u += every;
    }
    let p = geometry.surface_point(layer, end, z as f64);
    out.push([p[0], p[1]]);
    out
}

/// Where and how densely to seed and trace a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSetup {
    pub layer: usize,
    /// Inclusive slice range.
    pub z_range: (usize, usize),
    pub spacing: f64,
    pub margin: f64,
    pub seed_every: f64,
    pub params: TraceParams,
}

/// Traces a layer from ground-truth seeds placed on its first slice.
pub fn trace_layer(grid: &VoxelGrid, geometry: &Geometry, setup: &TraceSetup) -> Result<SurfaceMesh, TraceError> {
    let seeds = truth_seeds(geometry, setup.layer, setup.z_range.0, setup.seed_every, setup.margin);
    segmentation::trace_surface(grid, &seeds, setup.spacing, setup.z_range, &setup.params)
}

/// Photo-to-raster landmark pairs at a `n x n` lattice of mesh vertices:
/// each vertex's layer-0 chart position is pushed through the photo's known
/// transform and paired with its raster position.
pub fn truth_landmarks(geometry: &Geometry, photo_transform: &AffineTransform2D, fmesh: &FlattenedMesh, px_per_voxel: f64, n: usize) -> Vec<Landmark> {
    let m = &fmesh.base;
    let uv = m.uv.as_ref().expect("flattened mesh has uv");
    let n = n.max(2);
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let r = ((m.rows - 1) as f64 * (0.1 + 0.8 * i as f64 / (n - 1) as f64)).round() as usize;
            let c = ((m.cols - 1) as f64 * (0.1 + 0.8 * j as f64 / (n - 1) as f64)).round() as usize;
            let v = r * m.cols + c;
            let chart = geometry.uv_of_point(0, m.vertices[v]);
            let photo_pt = photo_transform.apply(chart);
            out.push((photo_pt, [uv[v][0] * px_per_voxel, uv[v][1] * px_per_voxel]));
        }
    }
    out
}

/// Aligns the photo into the raster and thresholds it; the label region is
/// further restricted to pixels with a valid central sample.
pub fn label_surface(
    photo: &SurfacePhoto,
    landmarks: &[Landmark],
    sv: &SurfaceVolume,
    method: ThresholdMethod,
) -> Result<LabelImage, LabelError> {
    let t = estimate_affine(landmarks)?;
    let (aligned, covered) = warp_photo(&photo.image, &t, sv.dims())?;
    let center = sv.center_mask();
    let region = Mask::from_fn(sv.width, sv.height, |x, y| *covered.get(x, y) && *center.get(x, y));
    let mut labels = binarize(&aligned, &region, method)?;
    labels.transform = Some(t);
    Ok(labels)
}

/// Ground-truth ink resampled into the raster of a flattened layer.
pub fn truth_mask_in_raster(
    geometry: &Geometry,
    layer: usize,
    ink: &Mask,
    fmesh: &FlattenedMesh,
    dims: (usize, usize),
    px_per_voxel: f64,
) -> Result<Mask, UnwrapError> {
    let loc = UvLocator::new(&fmesh.base)?;
    Ok(Mask::from_fn(dims.0, dims.1, |x, y| {
        let Some(p) = loc.point_at([x as f64 / px_per_voxel, y as f64 / px_per_voxel]) else {
            return false;
        };
        let c = geometry.uv_of_point(layer, p);
        let (u, v) = (c[0].round(), c[1].round());
        u >= 0.0 && v >= 0.0 && (u as usize) < ink.width() && (v as usize) < ink.height() && *ink.get(u as usize, v as usize)
    }))
}

/// Bounding box of the set pixels of `mask`.
pub fn mask_bounds(mask: &Mask) -> Option<Rect> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if *mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x1 > x0).then(|| Rect::new(x0, y0, x1, y1))
}

/// Splits the labeled extent into a `cols x rows` grid of regions named
/// `r<row>c<col>`.
pub fn grid_regions(labels: &LabelImage, surface: usize, cols: usize, rows: usize) -> Option<Vec<Region>> {
    let b = mask_bounds(&labels.region)?;
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let x0 = b.x0 + b.width() * c / cols;
            let x1 = b.x0 + b.width() * (c + 1) / cols;
            let y0 = b.y0 + b.height() * r / rows;
            let y1 = b.y0 + b.height() * (r + 1) / rows;
            out.push(Region {
                id: format!("r{r}c{c}"),
                surface,
                rect: Rect::new(x0, y0, x1, y1),
            });
        }
    }
    Some(out)
}

/// One trained leave-one-region-out fold.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub holdout: usize,
    pub train: Vec<usize>,
    pub params: ModelParams,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub holdout: usize,
    pub params: ModelParams,
    pub prediction: PredictionImage,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub metrics: PixelMetrics,
}

#[derive(Debug, Error)]
pub enum CvError {
    #[error(transparent)]
    Ink(#[from] InkError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Derives the seed of fold `i` from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Trains one model per held-out region. Folds run in parallel; each is
/// deterministic on its own seed.
pub fn train_folds(surfaces: &[Surface], regions: &[Region], config: &TrainConfig, spec: &ModelSpec) -> Result<Vec<TrainedFold>, InkError> {
    let plan = ink_model::make_folds(regions)?;
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let cfg = TrainConfig {
                seed: fold_seed(config.seed, i),
                ..config.clone()
            };
            let out = ink_model::train(surfaces, regions, &fold.train, Some(fold.holdout), &cfg, spec, false)?;
            Ok(TrainedFold {
                holdout: fold.holdout,
                train: fold.train.clone(),
                params: out.params,
                trace: out.trace,
            })
        })
        .collect()
}

/// Training patch centers of a fold that fall inside its holdout, recounted
/// from the region lattices.
pub fn fold_leaks(surfaces: &[Surface], regions: &[Region], train: &[usize], holdout: usize, spec: &ModelSpec) -> Result<usize, InkError> {
    let mut leaks = 0;
    for &t in train {
        let r = &regions[t];
        let samples = ink_model::region_samples(r.surface, &surfaces[r.surface], r, spec.patch, spec.stride)?;
        leaks += ink_model::count_leaks(&samples, &regions[holdout]);
    }
    Ok(leaks)
}

/// Predicts every fold's holdout region with its model.
pub fn predict_holdouts(
    surfaces: &[Surface],
    regions: &[Region],
    models: &[(usize, &ModelParams)],
    stride: usize,
) -> Result<Vec<PredictionImage>, InkError> {
    models
        .iter()
        .map(|&(h, params)| {
            let r = &regions[h];
            ink_model::predict_image(params, &surfaces[r.surface].sv, r.rect, stride)
        })
        .collect()
}

/// Pastes each holdout prediction into one full-raster image.
pub fn combine_predictions(dims: (usize, usize), parts: &[(Rect, &PredictionImage)]) -> PredictionImage {
    let mut prob = Image2::filled(dims.0, dims.1, 0.0);
    let mut mask = Mask::filled(dims.0, dims.1, false);
    for (rect, p) in parts {
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                prob.set(x, y, *p.prob.get(x, y));
                mask.set(x, y, *p.mask.get(x, y));
            }
        }
    }
    PredictionImage { prob, mask }
}

/// Leave-one-region-out training and prediction; metrics pooled over all
/// holdouts at `threshold`.
pub fn cross_validate(
    surfaces: &[Surface],
    regions: &[Region],
    config: &TrainConfig,
    spec: &ModelSpec,
    predict_stride: usize,
    threshold: f64,
    class: PositiveClass,
) -> Result<CvOutcome, CvError> {
    let trained = train_folds(surfaces, regions, config, spec)?;
    let models: Vec<(usize, &ModelParams)> = trained.iter().map(|f| (f.holdout, &f.params)).collect();
    let preds = predict_holdouts(surfaces, regions, &models, predict_stride)?;
    let folds: Vec<FoldOutcome> = trained
        .into_iter()
        .zip(preds)
        .map(|(f, prediction)| FoldOutcome {
            holdout: f.holdout,
            params: f.params,
            prediction,
            trace: f.trace,
        })
        .collect();
    let metrics = pooled_metrics(surfaces, regions, folds.iter().map(|f| (f.holdout, &f.prediction)), threshold, class)?;
    Ok(CvOutcome { folds, metrics })
}

/// Pooled metrics over holdout predictions.
pub fn pooled_metrics<'a>(
    surfaces: &'a [Surface],
    regions: &[Region],
    preds: impl Iterator<Item = (usize, &'a PredictionImage)>,
    threshold: f64,
    class: PositiveClass,
) -> Result<PixelMetrics, EvalError> {
    let evals: Vec<FoldEval<'_>> = preds
        .map(|(h, pred)| {
            let r = &regions[h];
            FoldEval {
                surface: r.surface,
                rect: r.rect,
                pred,
                label: &surfaces[r.surface].labels,
            }
        })
        .collect();
    compile_cross_validation(&evals, threshold, class)
}
