//! Flattening a traced surface, resampling the volume about it into a
//! surface volume, and depth-reduced texture and composite images.

mod lscm;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::ink_model::PredictionImage;
use crate::mesh::{add, norm, scale, SurfaceMesh, Vec3};
use crate::raster::{Image2, Mask};
use crate::volume::{self, IntensityWindow, VolumeError, VoxelGrid};

pub use lscm::{boundary_vertices, edge_geodesic, flatten_mesh};

#[derive(Debug, Error)]
pub enum UnwrapError {
    #[error("singular flattening system (degenerate mesh)")]
    Singular,
    #[error("mesh has no usable boundary")]
    NotDisk,
    #[error("conjugate gradients did not converge (relative residual {0:.3e})")]
    NoConvergence(f64),
    #[error("{0} triangles are flipped after flattening")]
    Flipped(usize),
    #[error("mesh has no UV coordinates")]
    MissingUv,
    #[error("invalid sampling parameters: {0}")]
    BadParams(String),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("surface volume metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UnwrapError>;

/// A mesh with conformal UVs and per-triangle distortion.
#[derive(Debug, Clone)]
pub struct FlattenedMesh {
    pub base: SurfaceMesh,
    /// Voxels per UV unit; multiply by the voxel size for micrometers.
    pub uv_scale: f64,
    /// UV area over 3D area, per triangle.
    pub area_ratio: Vec<f64>,
    /// Largest corner-angle change per triangle, radians.
    pub angle_deviation: Vec<f64>,
}

impl FlattenedMesh {
    /// Wraps a mesh that already carries UVs; distortion is left empty.
    pub fn from_uv_mesh(mesh: SurfaceMesh) -> Result<Self> {
        if mesh.uv.is_none() {
            return Err(UnwrapError::MissingUv);
        }
        Ok(Self {
            base: mesh,
            uv_scale: 1.0,
            area_ratio: Vec::new(),
            angle_deviation: Vec::new(),
        })
    }

    pub fn max_area_deviation(&self) -> f64 {
        self.area_ratio.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_angle_deviation(&self) -> f64 {
        self.angle_deviation.iter().cloned().fold(0.0, f64::max)
    }
}

/// Point location in UV space through a uniform bucket grid.
pub struct UvLocator<'a> {
    mesh: &'a SurfaceMesh,
    uv: &'a [[f64; 2]],
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

const BARY_EPS: f64 = 1e-9;

impl<'a> UvLocator<'a> {
    pub fn new(mesh: &'a SurfaceMesh) -> Result<Self> {
        let uv = mesh.uv.as_deref().ok_or(UnwrapError::MissingUv)?;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in uv {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let area = (hi[0] - lo[0]).max(1e-9) * (hi[1] - lo[1]).max(1e-9);
        let cell = (area / mesh.faces.len().max(1) as f64).sqrt().max(1e-9) * 2.0;
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let t = f.map(|i| uv[i]);
            let bx0 = ((t.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - lo[0]) / cell).floor() as usize;
            let bx1 = ((t.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) - lo[0]) / cell).floor() as usize;
            let by0 = ((t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - lo[1]) / cell).floor() as usize;
            let by1 = ((t.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) - lo[1]) / cell).floor() as usize;
            for by in by0..=by1.min(ny - 1) {
                for bx in bx0..=bx1.min(nx - 1) {
                    buckets[by * nx + bx].push(fi);
                }
            }
        }
        Ok(Self {
            mesh,
            uv,
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        })
    }

    /// Lowest-index face containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let bx = ((p[0] - self.origin[0]) / self.cell).floor();
        let by = ((p[1] - self.origin[1]) / self.cell).floor();
        if bx < 0.0 || by < 0.0 || bx as usize >= self.nx || by as usize >= self.ny {
            return None;
        }
        for &fi in &self.buckets[by as usize * self.nx + bx as usize] {
            let f = self.mesh.faces[fi];
            let [a, b, c] = f.map(|i| self.uv[i]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            if det.abs() < 1e-300 {
                continue;
            }
            let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -BARY_EPS && l1 >= -BARY_EPS && l2 >= -BARY_EPS {
                return Some((fi, [l0, l1, l2]));
            }
        }
        None
    }

    /// 3D point at UV coordinate `p`, if it lies on the mesh.
    pub fn point_at(&self, p: [f64; 2]) -> Option<Vec3> {
        let (fi, l) = self.locate(p)?;
        let f = self.mesh.faces[fi];
        let v = f.map(|i| self.mesh.vertices[i]);
        Some(add(add(scale(v[0], l[0]), scale(v[1], l[1])), scale(v[2], l[2])))
    }
}

/// Flattened stack of `depth` channels sampled along the surface normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceVolume {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    /// Voxels between consecutive channels.
    pub step: f64,
    /// Raster pixels per UV unit.
    pub px_per_voxel: f64,
    pub uv_scale: f64,
    /// Index `(k * height + y) * width + x`.
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl SurfaceVolume {
    #[inline]
    pub fn index(&self, x: usize, y: usize, k: usize) -> usize {
        (k * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[self.index(x, y, k)]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, k: usize) -> bool {
        self.valid[self.index(x, y, k)]
    }

    pub fn center(&self) -> usize {
        self.depth / 2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Pixels whose central sample is valid.
    pub fn center_mask(&self) -> Mask {
        let c = self.center();
        Mask::from_fn(self.width, self.height, |x, y| self.is_valid(x, y, c))
    }

    pub fn channel(&self, k: usize) -> Image2<f64> {
        Image2::from_fn(self.width, self.height, |x, y| self.get(x, y, k))
    }

    /// Writes `depth` 16-bit TIFFs quantized over the valid-sample range,
    /// `valid.png` (channels stacked vertically) and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (lo, hi) = self
            .data
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
        let window = IntensityWindow::new(lo, hi)?;
        let data = self.data.iter().map(|&v| window.quantize_value(v)).collect();
        let mut grid = VoxelGrid::new((self.width, self.height, self.depth), 1.0, data)?;
        grid.meta.insert("step".into(), self.step.to_string());
        grid.meta.insert("depth".into(), self.depth.to_string());
        grid.meta.insert("px_per_voxel".into(), self.px_per_voxel.to_string());
        grid.meta.insert("uv_scale".into(), self.uv_scale.to_string());
        grid.meta.insert("window_lo".into(), format!("{lo:e}"));
        grid.meta.insert("window_hi".into(), format!("{hi:e}"));
        volume::save_slice_stack(&grid, dir)?;
        let valid = Mask::from_vec(self.width, self.height * self.depth, self.valid.clone());
        valid.save_png(&dir.join("valid.png"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let grid = volume::load_slice_stack(dir)?;
        let get = |k: &str| -> Result<f64> {
            grid.meta
                .get(k)
                .ok_or_else(|| UnwrapError::Meta(format!("missing {k}")))?
                .parse::<f64>()
                .map_err(|e| UnwrapError::Meta(format!("{k}: {e}")))
        };
        let window = IntensityWindow::new(get("window_lo")?, get("window_hi")?)?;
        let (w, h, d) = grid.dims();
        let valid = Mask::load_png(&dir.join("valid.png"))?;
        if valid.dims() != (w, h * d) {
            return Err(UnwrapError::Meta("valid.png does not match the stack".into()));
        }
        Ok(Self {
            width: w,
            height: h,
            depth: d,
            step: get("step")?,
            px_per_voxel: get("px_per_voxel")?,
            uv_scale: get("uv_scale")?,
            data: grid.data().iter().map(|&q| window.dequantize_value(q)).collect(),
            valid: valid.into_vec(),
        })
    }
}

/// Resamples `grid` about the flattened mesh.
///
/// Raster pixel `(x, y)` sits at UV `(x, y) / px_per_voxel`. Its 3D position
/// and normal are barycentric blends of the covering triangle's vertices and
/// area-weighted vertex normals; channel `k` samples at offset
/// `(k - depth / 2) * step` along the normal. Uncovered or out-of-volume
/// samples are 0 and invalid.
pub fn sample_surface_volume(
    grid: &VoxelGrid,
    fmesh: &FlattenedMesh,
    depth: usize,
    step: f64,
    px_per_voxel: f64,
) -> Result<SurfaceVolume> {
    if depth % 2 == 0 {
        return Err(UnwrapError::BadParams(format!("depth must be odd, got {depth}")));
    }
    if !(step > 0.0) || !(px_per_voxel > 0.0) {
        return Err(UnwrapError::BadParams("step and px_per_voxel must be > 0".into()));
    }
    let mesh = &fmesh.base;
    let uv = mesh.uv.as_ref().ok_or(UnwrapError::MissingUv)?;
    let locator = UvLocator::new(mesh)?;
    let normals = mesh.vertex_normals();
    let max_u = uv.iter().map(|p| p[0]).fold(0.0, f64::max);
    let max_v = uv.iter().map(|p| p[1]).fold(0.0, f64::max);
    let width = (max_u * px_per_voxel).floor() as usize + 1;
    let height = (max_v * px_per_voxel).floor() as usize + 1;
    let half = (depth / 2) as f64;
    let plane = width * height;
    let mut data = vec![0.0; plane * depth];
    let mut valid = vec![false; plane * depth];

    let rows: Vec<Vec<(f64, bool)>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![(0.0, false); width * depth];
            for x in 0..width {
                let p = [x as f64 / px_per_voxel, y as f64 / px_per_voxel];
                let Some((fi, l)) = locator.locate(p) else {
                    continue;
                };
                let f = mesh.faces[fi];
                let mut pos = [0.0; 3];
                let mut nrm = [0.0; 3];
                for j in 0..3 {
                    pos = add(pos, scale(mesh.vertices[f[j]], l[j]));
                    nrm = add(nrm, scale(normals[f[j]], l[j]));
                }
                let ln = norm(nrm);
                if ln > 0.0 {
                    nrm = scale(nrm, 1.0 / ln);
                }
                for k in 0..depth {
                    let off = (k as f64 - half) * step;
                    if let Some(v) = grid.sample(add(pos, scale(nrm, off))) {
                        row[k * width + x] = (v, true);
                    }
                }
            }
            row
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for k in 0..depth {
            for x in 0..width {
                let (v, ok) = row[k * width + x];
                let i = (k * height + y) * width + x;
                data[i] = v;
                valid[i] = ok;
            }
        }
    }
    Ok(SurfaceVolume {
        width,
        height,
        depth,
        step,
        px_per_voxel,
        uv_scale: fmesh.uv_scale,
        data,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Max,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Max => "max",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(Reduction::Max),
            "mean" => Ok(Reduction::Mean),
            _ => Err(format!("expected max|mean, got {s:?}")),
        }
    }
}

/// Depth-reduced surface volume normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    pub image: Image2<f64>,
    /// Pixels with at least one valid sample in the reduced band.
    pub valid: Mask,
    pub reduction: Reduction,
    pub half_width: usize,
    /// Global range mapped onto `[0, 1]`.
    pub window: (f64, f64),
}

impl TextureImage {
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("reduction".into(), self.reduction.to_string());
        m.insert("half_width".into(), self.half_width.to_string());
        m.insert("window_lo".into(), format!("{:e}", self.window.0));
        m.insert("window_hi".into(), format!("{:e}", self.window.1));
        m
    }
}

/// Reduces channels within `half_width` of the center over valid samples.
pub fn texture_image(sv: &SurfaceVolume, reduction: Reduction, half_width: usize) -> Result<TextureImage> {
    let c = sv.center();
    if half_width > c {
        return Err(UnwrapError::BadParams(format!(
            "half_width {half_width} exceeds depth / 2 = {c}"
        )));
    }
    let (w, h) = sv.dims();
    let mut raw = Image2::filled(w, h, 0.0);
    let mut valid = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let vals = (c - half_width..=c + half_width)
                .filter(|&k| sv.is_valid(x, y, k))
                .map(|k| sv.get(x, y, k));
            let (n, acc) = match reduction {
                Reduction::Max => vals.fold((0usize, f64::NEG_INFINITY), |(n, m), v| (n + 1, m.max(v))),
                Reduction::Mean => vals.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v)),
            };
            if n > 0 {
                let v = if reduction == Reduction::Mean { acc / n as f64 } else { acc };
                raw.set(x, y, v);
                valid.set(x, y, true);
            }
        }
    }
    let (lo, hi) = raw
        .data()
        .iter()
        .zip(valid.data())
        .filter(|(_, &ok)| ok)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let image = if lo.is_finite() && hi > lo {
        Image2::from_fn(w, h, |x, y| {
            if *valid.get(x, y) {
                (raw.get(x, y) - lo) / (hi - lo)
            } else {
                0.0
            }
        })
    } else {
        Image2::filled(w, h, 0.0)
    };
    Ok(TextureImage {
        image,
        valid,
        reduction,
        half_width,
        window: if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) },
    })
}

/// `clamp(texture - prediction, 0, 1)`: detected ink renders black.
pub fn composite(texture: &TextureImage, pred: &PredictionImage) -> Result<Image2<f64>> {
    if texture.image.dims() != pred.prob.dims() {
        return Err(UnwrapError::DimMismatch(texture.image.dims(), pred.prob.dims()));
    }
    let data = texture
        .image
        .data()
        .iter()
        .zip(pred.prob.data())
        .map(|(t, p)| (t - p).clamp(0.0, 1.0))
        .collect();
    let (w, h) = texture.image.dims();
    Ok(Image2::from_vec(w, h, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_mesh(rows: usize, cols: usize, z: f64) -> SurfaceMesh {
        let v = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [c as f64 * 1.5 + 2.0, r as f64 * 1.5 + 2.0, z]))
            .collect();
        SurfaceMesh::from_grid(v, rows, cols).unwrap()
    }

    #[test]
    fn plane_flattens_isometrically() {
        let f = flatten_mesh(&plane_mesh(6, 9, 3.0)).unwrap();
        assert!(f.max_area_deviation() < 1e-6, "{}", f.max_area_deviation());
        assert!(f.max_angle_deviation() < 1e-6);
        let uv = f.base.uv.as_ref().unwrap();
        // First row along +u from the origin.
        assert!(uv[0][0].abs() < 1e-9 && uv[0][1].abs() < 1e-9);
        assert!((uv[8][0] - 12.0).abs() < 1e-6 && uv[8][1].abs() < 1e-6);
    }

    #[test]
    fn ramp_channels() {
        // Intensity equals z; a flat mesh at z = 10 with normals along z.
        let grid = VoxelGrid::new(
            (20, 20, 21),
            1.0,
            (0..20 * 20 * 21).map(|i| (i / 400) as u16).collect(),
        )
        .unwrap();
        let f = flatten_mesh(&plane_mesh(5, 5, 10.0)).unwrap();
        let sv = sample_surface_volume(&grid, &f, 3, 2.0, 1.0).unwrap();
        let n = f.base.vertex_normals()[0][2].signum();
        for y in 1..sv.height - 1 {
            for x in 1..sv.width - 1 {
                let got: Vec<f64> = (0..3).map(|k| sv.get(x, y, k)).collect();
                let want = [10.0 - 2.0 * n, 10.0, 10.0 + 2.0 * n];
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 1e-9, "{got:?}");
                }
            }
        }
    }

    #[test]
    fn texture_reductions() {
        let sv = SurfaceVolume {
            width: 2,
            height: 1,
            depth: 3,
            step: 2.0,
            px_per_voxel: 1.0,
            uv_scale: 1.0,
            data: vec![8.0, 0.0, 10.0, 0.0, 12.0, 0.0],
            valid: vec![true, false, true, true, true, false],
        };
        let t = texture_image(&sv, Reduction::Max, 1).unwrap();
        assert_eq!(t.window, (0.0, 12.0));
        assert_eq!(t.image.data(), &[1.0, 0.0]);
        let c = texture_image(&sv, Reduction::Mean, 0).unwrap();
        assert_eq!(c.window, (0.0, 10.0));
        assert!(texture_image(&sv, Reduction::Max, 2).is_err());
        let flat = SurfaceVolume {
            data: vec![5.0; 6],
            valid: vec![true; 6],
            ..sv
        };
        let t = texture_image(&flat, Reduction::Mean, 1).unwrap();
        assert!(t.image.data().iter().all(|&v| v == 0.0));
    }
}
