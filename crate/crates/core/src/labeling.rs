//! Aligning a surface photograph into the flattened raster and thresholding it
//! into binary ink labels. Dark pixels are ink.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::raster::{Image2, Mask};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("affine transform is singular (|det| = {0:.3e})")]
    Singular(f64),
    #[error("need at least 3 landmark pairs, got {0}")]
    TooFewLandmarks(usize),
    #[error("landmarks are collinear or coincident")]
    CollinearLandmarks,
    #[error("region mask is empty")]
    EmptyRegion,
    #[error("region mask {region:?} does not match image {image:?}")]
    DimMismatch {
        image: (usize, usize),
        region: (usize, usize),
    },
    #[error("image has no variance inside the region; Otsu is undefined, use a fixed threshold")]
    NoVariance,
    #[error("landmark file line {line}: {msg}")]
    Landmarks { line: usize, msg: String },
    #[error("label metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabelError>;

/// Row-major 2x3 affine map `p -> A p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform2D {
    m: [[f64; 3]; 2],
}

impl AffineTransform2D {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { m };
        let det = t.det();
        if !(det.abs() > 1e-9) {
            return Err(LabelError::Singular(det.abs()));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
        }
    }

    /// Rotation by `angle` (radians) and uniform `scale` about `center`,
    /// followed by a translation.
    pub fn similarity(center: [f64; 2], angle: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let a = [[scale * c, -scale * s], [scale * s, scale * c]];
        let tx = center[0] + shift[0] - (a[0][0] * center[0] + a[0][1] * center[1]);
        let ty = center[1] + shift[1] - (a[1][0] * center[0] + a[1][1] * center[1]);
        Self {
            m: [[a[0][0], a[0][1], tx], [a[1][0], a[1][1], ty]],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.m
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.m[0][2],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.m[1][2],
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if !(det.abs() > 1e-9) {
            return Err(LabelError::Singular(det.abs()));
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Ok(Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// Six numbers, row-major, whitespace separated.
    pub fn to_text(&self) -> String {
        let m = self.m;
        format!(
            "{:.17e} {:.17e} {:.17e}\n{:.17e} {:.17e} {:.17e}\n",
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let v: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| LabelError::Meta(format!("transform: {e}")))?;
        if v.len() != 6 {
            return Err(LabelError::Meta(format!(
                "transform needs 6 numbers, got {}",
                v.len()
            )));
        }
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]]])
    }
}

/// A `(photo point, uv point)` correspondence.
pub type Landmark = ([f64; 2], [f64; 2]);

/// Least-squares affine map from photo to UV coordinates.
///
/// Minimizes `sum |A p_photo - p_uv|^2`; exact for three non-collinear pairs.
pub fn estimate_affine(pairs: &[Landmark]) -> Result<AffineTransform2D> {
    if pairs.len() < 3 {
        return Err(LabelError::TooFewLandmarks(pairs.len()));
    }
    let n = pairs.len() as f64;
    let cx = pairs.iter().map(|(p, _)| p[0]).sum::<f64>() / n;
    let cy = pairs.iter().map(|(p, _)| p[1]).sum::<f64>() / n;

    // Centered normal equations: columns (x - cx, y - cy, 1).
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb_u = Vector3::<f64>::zeros();
    let mut atb_v = Vector3::<f64>::zeros();
    for (p, q) in pairs {
        let row = Vector3::new(p[0] - cx, p[1] - cy, 1.0);
        ata += row * row.transpose();
        atb_u += row * q[0];
        atb_v += row * q[1];
    }
    let sxx = ata[(0, 0)];
    let syy = ata[(1, 1)];
    let sxy = ata[(0, 1)];
    let spread = sxx + syy;
    if spread <= 0.0 || (sxx * syy - sxy * sxy) <= 1e-12 * spread * spread {
        return Err(LabelError::CollinearLandmarks);
    }
    let chol = ata.cholesky().ok_or(LabelError::CollinearLandmarks)?;
    let ru = chol.solve(&atb_u);
    let rv = chol.solve(&atb_v);
    // Undo the centering: u = a (x - cx) + b (y - cy) + c.
    let m = [
        [ru[0], ru[1], ru[2] - ru[0] * cx - ru[1] * cy],
        [rv[0], rv[1], rv[2] - rv[0] * cx - rv[1] * cy],
    ];
    AffineTransform2D::new(m)
}

/// Resamples `photo` into a `(W, H)` raster through `photo_to_uv`.
///
/// Each output pixel is inverse-mapped into the photo and bilinearly sampled.
/// Pixels that land outside the photo are 0 and excluded from the returned
/// region mask.
pub fn warp_photo(
    photo: &Image2<f64>,
    photo_to_uv: &AffineTransform2D,
    dims: (usize, usize),
) -> Result<(Image2<f64>, Mask)> {
    let inv = photo_to_uv.inverse()?;
    let (w, h) = dims;
    let mut out = Image2::filled(w, h, 0.0);
    let mut region = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let p = inv.apply([x as f64, y as f64]);
            if let Some(v) = photo.sample_bilinear(p[0], p[1]) {
                out.set(x, y, v);
                region.set(x, y, true);
            }
        }
    }
    Ok((out, region))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f64),
}

/// Binary ink labels in the flattened raster.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub ink: Mask,
    /// Extent that carries a label at all; `ink` is always a subset.
    pub region: Mask,
    pub threshold: f64,
    pub transform: Option<AffineTransform2D>,
}

impl LabelImage {
    pub fn dims(&self) -> (usize, usize) {
        self.ink.dims()
    }

    /// Writes `ink.png`, `region.png` and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.ink.save_png(&dir.join("ink.png"))?;
        self.region.save_png(&dir.join("region.png"))?;
        let mut meta = BTreeMap::new();
        meta.insert("threshold".to_string(), serde_json::json!(self.threshold));
        if let Some(t) = &self.transform {
            meta.insert("transform".to_string(), serde_json::json!(t.matrix()));
        }
        let text = serde_json::to_string_pretty(&meta).map_err(|e| LabelError::Meta(e.to_string()))?;
        fs::write(dir.join("meta.json"), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ink = Mask::load_png(&dir.join("ink.png"))?;
        let region = Mask::load_png(&dir.join("region.png"))?;
        let text = fs::read_to_string(dir.join("meta.json"))?;
        let meta: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| LabelError::Meta(e.to_string()))?;
        let threshold = meta["threshold"]
            .as_f64()
            .ok_or_else(|| LabelError::Meta("missing threshold".into()))?;
        let transform = match meta.get("transform") {
            Some(v) => {
                let m: [[f64; 3]; 2] =
                    serde_json::from_value(v.clone()).map_err(|e| LabelError::Meta(e.to_string()))?;
                Some(AffineTransform2D::new(m)?)
            }
            None => None,
        };
        Ok(Self {
            ink,
            region,
            threshold,
            transform,
        })
    }
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]` of `values`.
///
/// Returns the upper edge of the last bin assigned to the dark class.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() {
        return Err(LabelError::EmptyRegion);
    }
    if !(hi > lo) {
        return Err(LabelError::NoVariance);
    }
    const BINS: usize = 256;
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0usize);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Ok(lo + (best_k + 1) as f64 * width)
}

/// Thresholds `aligned` inside `region`: pixels strictly below the threshold
/// are ink.
pub fn binarize(aligned: &Image2<f64>, region: &Mask, method: ThresholdMethod) -> Result<LabelImage> {
    if aligned.dims() != region.dims() {
        return Err(LabelError::DimMismatch {
            image: aligned.dims(),
            region: region.dims(),
        });
    }
    let values: Vec<f64> = aligned
        .data()
        .iter()
        .zip(region.data())
        .filter(|(_, &r)| r)
        .map(|(&v, _)| v)
        .collect();
    if values.is_empty() {
        return Err(LabelError::EmptyRegion);
    }
    let threshold = match method {
        ThresholdMethod::Otsu => otsu_threshold(&values)?,
        ThresholdMethod::Fixed(t) => t,
    };
    let ink = Image2::from_fn(aligned.width(), aligned.height(), |x, y| {
        *region.get(x, y) && *aligned.get(x, y) < threshold
    });
    Ok(LabelImage {
        ink,
        region: region.clone(),
        threshold,
        transform: None,
    })
}

/// Parses `px py u v` rows; `#` starts a comment.
pub fn parse_landmarks(text: &str) -> Result<Vec<Landmark>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| LabelError::Landmarks {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if v.len() != 4 {
            return Err(LabelError::Landmarks {
                line: i + 1,
                msg: format!("expected 4 numbers, got {}", v.len()),
            });
        }
        out.push(([v[0], v[1]], [v[2], v[3]]));
    }
    Ok(out)
}

pub fn format_landmarks(pairs: &[Landmark]) -> String {
    let mut s = String::from("# px py u v\n");
    for (p, q) in pairs {
        s.push_str(&format!("{:.9} {:.9} {:.9} {:.9}\n", p[0], p[1], q[0], q[1]));
    }
    s
}
