//! Volumetric CT data: 16-bit voxel grids, slice-stack IO, intensity-window
//! quantization, slab merging and interpolated sampling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use thiserror::Error;

/// Name of the provenance sidecar written next to every slice stack.
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid dimensions {0:?}: every axis must be >= 1")]
    BadDims((usize, usize, usize)),
    #[error("data length {got} does not match dims product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("voxel size must be finite and > 0, got {0}")]
    BadVoxelSize(f64),
    #[error("missing {0} in slice directory")]
    MissingMeta(PathBuf),
    #[error("meta file: {0}")]
    Meta(String),
    #[error("anisotropic voxels are not supported: {0}")]
    Anisotropic(String),
    #[error("no slices found in {0}")]
    NoSlices(PathBuf),
    #[error("gap in slice index sequence: expected {expected:04}, found {found:04}")]
    SliceGap { expected: usize, found: usize },
    #[error("slice {index:04} is {got:?}, expected {expected:?}")]
    InconsistentSlice {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("slice {index:04} is not 16-bit grayscale ({kind})")]
    NotSixteenBit { index: usize, kind: String },
    #[error("degenerate intensity window [{lo}, {hi}]: require lo < hi")]
    DegenerateWindow { lo: f64, hi: f64 },
    #[error("no slabs to merge")]
    NoSlabs,
    #[error("slab {index}: x/y dimensions {got:?} differ from {expected:?}")]
    SlabDims {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("slab {index}: voxel size {got} differs from {expected}")]
    SlabVoxelSize { index: usize, expected: f64, got: f64 },
    #[error("slabs are not sorted by z offset (slab {0})")]
    SlabOrder(usize),
    #[error("slices {start}..{end} are not covered by any slab")]
    SlabGap { start: usize, end: usize },
    #[error("slab {0} lies entirely inside the preceding slabs")]
    SlabContained(usize),
    #[error("point ({x:.3}, {y:.3}, {z:.3}) is outside the grid")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("basis is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// A 3D grid of 16-bit intensities with isotropic voxels.
///
/// Data is stored z-major: index = `x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: (usize, usize, usize),
    voxel_size: f64,
    data: Vec<u16>,
    pub meta: BTreeMap<String, String>,
}

impl VoxelGrid {
    pub fn new(dims: (usize, usize, usize), voxel_size: f64, data: Vec<u16>) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(VolumeError::BadDims(dims));
        }
        let expected = dims.0 * dims.1 * dims.2;
        if data.len() != expected {
            return Err(VolumeError::DataLength {
                expected,
                got: data.len(),
            });
        }
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(VolumeError::BadVoxelSize(voxel_size));
        }
        Ok(Self {
            dims,
            voxel_size,
            data,
            meta: BTreeMap::new(),
        })
    }

    pub fn filled(dims: (usize, usize, usize), voxel_size: f64, value: u16) -> Result<Self> {
        Self::new(dims, voxel_size, vec![value; dims.0 * dims.1 * dims.2])
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Micrometers per voxel edge.
    #[inline]
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    #[inline]
    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.data[self.index(x, y, z)]
    }

    /// One z-slice as a row-major `nx * ny` slice.
    pub fn slice(&self, z: usize) -> &[u16] {
        let n = self.dims.0 * self.dims.1;
        &self.data[z * n..(z + 1) * n]
    }

    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (nx, ny, nz) = self.dims;
        p.iter().all(|c| *c >= 0.0)
            && p[0] <= (nx - 1) as f64
            && p[1] <= (ny - 1) as f64
            && p[2] <= (nz - 1) as f64
    }

    /// Trilinear interpolation at a continuous voxel coordinate.
    ///
    /// Points outside `[0, dim - 1]` on any axis return
    /// [`VolumeError::OutOfBounds`]; lattice points return the stored value
    /// exactly.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> Result<f64> {
        if !self.contains(p) {
            return Err(VolumeError::OutOfBounds {
                x: p[0],
                y: p[1],
                z: p[2],
            });
        }
        Ok(self.sample_unchecked(p))
    }

    /// Like [`sample_trilinear`](Self::sample_trilinear) but returns `None`
    /// out of bounds.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> Option<f64> {
        if self.contains(p) {
            Some(self.sample_unchecked(p))
        } else {
            None
        }
    }

    #[inline]
    fn sample_unchecked(&self, p: [f64; 3]) -> f64 {
        let (nx, ny, nz) = self.dims;
        let split = |c: f64, n: usize| -> (usize, usize, f64) {
            let i0 = (c.floor() as usize).min(n.saturating_sub(2));
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, c - i0 as f64)
        };
        let (x0, x1, fx) = split(p[0], nx);
        let (y0, y1, fy) = split(p[1], ny);
        let (z0, z1, fz) = split(p[2], nz);
        let v = |x, y, z| self.get(x, y, z) as f64;
        let c00 = v(x0, y0, z0) + (v(x1, y0, z0) - v(x0, y0, z0)) * fx;
        let c10 = v(x0, y1, z0) + (v(x1, y1, z0) - v(x0, y1, z0)) * fx;
        let c01 = v(x0, y0, z1) + (v(x1, y0, z1) - v(x0, y0, z1)) * fx;
        let c11 = v(x0, y1, z1) + (v(x1, y1, z1) - v(x0, y1, z1)) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }
}

/// A dense 3D grid of floats, used as quantization input.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    pub dims: (usize, usize, usize),
    pub data: Vec<f32>,
}

impl FloatGrid {
    pub fn new(dims: (usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(VolumeError::BadDims(dims));
        }
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(VolumeError::DataLength {
                expected: dims.0 * dims.1 * dims.2,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    /// Reads `volume.f32` (raw little-endian) from `dir`, taking dims from the
    /// `dims` entry ("nx ny nz") of the directory's `meta.json`.
    pub fn read_raw(dir: &Path) -> Result<Self> {
        let meta = read_meta(dir)?;
        let dims_line = meta
            .get("dims")
            .ok_or_else(|| VolumeError::Meta("missing key `dims`".into()))?;
        let parts: Vec<usize> = dims_line
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| VolumeError::Meta(format!("bad dims `{dims_line}`: {e}")))?;
        if parts.len() != 3 {
            return Err(VolumeError::Meta(format!("bad dims `{dims_line}`")));
        }
        let bytes = fs::read(dir.join("volume.f32"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new((parts[0], parts[1], parts[2]), data)
    }

    pub fn write_raw(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join("volume.f32"), bytes)?;
        let mut meta = BTreeMap::new();
        meta.insert(
            "dims".to_string(),
            format!("{} {} {}", self.dims.0, self.dims.1, self.dims.2),
        );
        write_meta(dir, &meta, None)
    }
}

/// Intensity range mapped onto the full 16-bit output range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityWindow {
    lo: f64,
    hi: f64,
}

impl IntensityWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(VolumeError::DegenerateWindow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Maps one value: clamp, rescale to `[0, 65535]`, round half to even.
    #[inline]
    pub fn quantize_value(&self, v: f64) -> u16 {
        let t = (v.clamp(self.lo, self.hi) - self.lo) / (self.hi - self.lo);
        (t * 65535.0).round_ties_even() as u16
    }

    #[inline]
    pub fn dequantize_value(&self, q: u16) -> f64 {
        self.lo + (q as f64 / 65535.0) * (self.hi - self.lo)
    }
}

/// Quantizes a float grid into 16 bits through `window`.
pub fn quantize(grid: &FloatGrid, window: IntensityWindow, voxel_size: f64) -> Result<VoxelGrid> {
    let data = grid
        .data
        .iter()
        .map(|&v| window.quantize_value(v as f64))
        .collect();
    let mut out = VoxelGrid::new(grid.dims, voxel_size, data)?;
    out.meta.insert(
        "window".to_string(),
        format!("{} {}", window.lo, window.hi),
    );
    Ok(out)
}

/// An independently reconstructed vertical section of a volume.
#[derive(Debug, Clone)]
pub struct Slab {
    pub grid: VoxelGrid,
    /// Index of the slab's first slice in the merged frame.
    pub z_offset: usize,
}

/// Merges slabs sorted by `z_offset` into a single volume.
///
/// Where consecutive slabs overlap, each overlap slice is a linear cross-fade
/// in which the upper slab's weight ramps `1/(n+1), ..., n/(n+1)` across the
/// `n` overlapping slices. Non-overlapping slices pass through unchanged.
pub fn merge_slabs(slabs: &[Slab]) -> Result<VoxelGrid> {
    let first = slabs.first().ok_or(VolumeError::NoSlabs)?;
    let (nx, ny, _) = first.grid.dims();
    let voxel_size = first.grid.voxel_size();
    for (i, s) in slabs.iter().enumerate() {
        let (sx, sy, _) = s.grid.dims();
        if (sx, sy) != (nx, ny) {
            return Err(VolumeError::SlabDims {
                index: i,
                expected: (nx, ny),
                got: (sx, sy),
            });
        }
        if s.grid.voxel_size() != voxel_size {
            return Err(VolumeError::SlabVoxelSize {
                index: i,
                expected: voxel_size,
                got: s.grid.voxel_size(),
            });
        }
        if i > 0 && s.z_offset < slabs[i - 1].z_offset {
            return Err(VolumeError::SlabOrder(i));
        }
    }
    if first.z_offset > 0 {
        return Err(VolumeError::SlabGap {
            start: 0,
            end: first.z_offset,
        });
    }
    if slabs.len() == 1 {
        return Ok(first.grid.clone());
    }

    let plane = nx * ny;
    let mut merged: Vec<u16> = first.grid.data().to_vec();
    let mut end = first.grid.dims().2;
    for (i, slab) in slabs.iter().enumerate().skip(1) {
        let start = slab.z_offset;
        let slab_end = start + slab.grid.dims().2;
        if start > end {
            return Err(VolumeError::SlabGap { start: end, end: start });
        }
        if slab_end <= end {
            return Err(VolumeError::SlabContained(i));
        }
        let overlap = end - start;
        for k in 0..overlap {
            let w = (k + 1) as f64 / (overlap + 1) as f64;
            let dst = &mut merged[(start + k) * plane..(start + k + 1) * plane];
            let src = slab.grid.slice(k);
            for (d, &s) in dst.iter_mut().zip(src) {
                let v = (1.0 - w) * (*d as f64) + w * (s as f64);
                *d = v.round_ties_even().clamp(0.0, 65535.0) as u16;
            }
        }
        merged.extend_from_slice(&slab.grid.data()[overlap * plane..]);
        end = slab_end;
    }
    let mut out = VoxelGrid::new((nx, ny, end), voxel_size, merged)?;
    out.meta = first.grid.meta.clone();
    Ok(out)
}

/// A 3D float patch resampled in an oriented frame, with per-sample validity.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPatch {
    pub shape: (usize, usize, usize),
    /// Index = `i + w * (j + h * k)`.
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl OrientedPatch {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.shape.0 * (j + self.shape.1 * k)]
    }
}

/// Samples a `(w, h, d)` patch at `center` along the columns of `basis`.
///
/// Sample `(i, j, k)` sits at `center + basis * ((i - w/2) s, (j - h/2) s,
/// (k - d/2) s)` with integer halving. Out-of-bounds samples are 0 and
/// flagged invalid.
pub fn extract_oriented_patch(
    grid: &VoxelGrid,
    center: [f64; 3],
    basis: [[f64; 3]; 3],
    shape: (usize, usize, usize),
    spacing: f64,
) -> Result<OrientedPatch> {
    // basis[c] is the c-th column (frame axis).
    let mut dev: f64 = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            let dot: f64 = (0..3).map(|r| basis[a][r] * basis[b][r]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            dev = dev.max((dot - target).abs());
        }
    }
    if !(dev <= 1e-6) {
        return Err(VolumeError::NotOrthonormal(dev));
    }
    let (w, h, d) = shape;
    let mut data = Vec::with_capacity(w * h * d);
    let mut valid = Vec::with_capacity(w * h * d);
    for k in 0..d {
        let ok = (k as f64 - (d / 2) as f64) * spacing;
        for j in 0..h {
            let oj = (j as f64 - (h / 2) as f64) * spacing;
            for i in 0..w {
                let oi = (i as f64 - (w / 2) as f64) * spacing;
                let p = [
                    center[0] + basis[0][0] * oi + basis[1][0] * oj + basis[2][0] * ok,
                    center[1] + basis[0][1] * oi + basis[1][1] * oj + basis[2][1] * ok,
                    center[2] + basis[0][2] * oi + basis[1][2] * oj + basis[2][2] * ok,
                ];
                match grid.sample(p) {
                    Some(v) => {
                        data.push(v);
                        valid.push(true);
                    }
                    None => {
                        data.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
    }
    Ok(OrientedPatch { shape, data, valid })
}

fn slice_name(index: usize) -> String {
    format!("{index:04}.tif")
}

/// Reads a flat JSON object of scalar values into strings.
pub fn read_meta(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(META_FILE);
    if !path.is_file() {
        return Err(VolumeError::MissingMeta(path));
    }
    let text = fs::read_to_string(&path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| VolumeError::Meta(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| VolumeError::Meta("expected a flat JSON object".into()))?;
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        let s = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            other => {
                return Err(VolumeError::Meta(format!(
                    "key `{k}` has non-scalar value {other}"
                )))
            }
        };
        out.insert(k.clone(), s);
    }
    Ok(out)
}

/// Writes `meta` as a flat JSON object; `voxel_size_um` is emitted as a number.
pub fn write_meta(dir: &Path, meta: &BTreeMap<String, String>, voxel_size: Option<f64>) -> Result<()> {
    let mut obj = serde_json::Map::new();
    for (k, v) in meta {
        obj.insert(k.clone(), serde_json::Value::String(v.clone()));
    }
    if let Some(vs) = voxel_size {
        obj.insert("voxel_size_um".into(), serde_json::json!(vs));
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(obj))
        .map_err(|e| VolumeError::Meta(e.to_string()))?;
    fs::write(dir.join(META_FILE), text + "\n")?;
    Ok(())
}

/// Writes `grid` as `NNNN.tif` 16-bit slices plus `meta.json`.
pub fn save_slice_stack(grid: &VoxelGrid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (nx, ny, nz) = grid.dims();
    for z in 0..nz {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(nx as u32, ny as u32, grid.slice(z).to_vec())
                .expect("slice buffer matches dims");
        img.save(dir.join(slice_name(z)))?;
    }
    let mut meta = grid.meta.clone();
    meta.remove("voxel_size_um");
    write_meta(dir, &meta, Some(grid.voxel_size()))
}

/// Loads a directory of zero-padded `NNNN.tif` 16-bit slices and `meta.json`.
pub fn load_slice_stack(dir: &Path) -> Result<VoxelGrid> {
    let mut meta = read_meta(dir)?;
    let vs_text = meta
        .remove("voxel_size_um")
        .ok_or_else(|| VolumeError::Meta("missing required key `voxel_size_um`".into()))?;
    let voxel_size: f64 = vs_text
        .parse()
        .map_err(|_| VolumeError::Meta(format!("voxel_size_um `{vs_text}` is not a number")))?;
    let axis_sizes: Vec<&String> = ["voxel_size_x_um", "voxel_size_y_um", "voxel_size_z_um"]
        .iter()
        .filter_map(|k| meta.get(*k))
        .collect();
    if axis_sizes
        .iter()
        .any(|s| s.parse::<f64>().ok() != Some(voxel_size))
    {
        return Err(VolumeError::Anisotropic(format!(
            "per-axis sizes {axis_sizes:?} differ from {voxel_size}"
        )));
    }

    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_tif = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"));
        if !is_tif {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let idx: usize = stem.parse().expect("digits");
        indexed.push((idx, path));
    }
    if indexed.is_empty() {
        return Err(VolumeError::NoSlices(dir.to_path_buf()));
    }
    indexed.sort();
    for (expected, (found, _)) in indexed.iter().enumerate() {
        if *found != expected {
            return Err(VolumeError::SliceGap {
                expected,
                found: *found,
            });
        }
    }

    let mut dims_xy = None;
    let mut data = Vec::new();
    for (index, path) in &indexed {
        let img = image::open(path)?;
        let buf = match img {
            DynamicImage::ImageLuma16(buf) => buf,
            other => {
                return Err(VolumeError::NotSixteenBit {
                    index: *index,
                    kind: format!("{:?}", other.color()),
                })
            }
        };
        let got = (buf.width() as usize, buf.height() as usize);
        match dims_xy {
            None => dims_xy = Some(got),
            Some(expected) if expected != got => {
                return Err(VolumeError::InconsistentSlice {
                    index: *index,
                    expected,
                    got,
                })
            }
            _ => {}
        }
        data.extend_from_slice(buf.as_raw());
    }
    let (nx, ny) = dims_xy.expect("at least one slice");
    let mut grid = VoxelGrid::new((nx, ny, indexed.len()), voxel_size, data)?;
    grid.meta = meta;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_grid(dims: (usize, usize, usize)) -> VoxelGrid {
        let data = (0..dims.0 * dims.1 * dims.2).map(|i| (i * 7 % 65536) as u16).collect();
        VoxelGrid::new(dims, 4.0, data).unwrap()
    }

    #[test]
    fn quantize_endpoints_and_clamp() {
        let w = IntensityWindow::new(-2.0, 3.0).unwrap();
        assert_eq!(w.quantize_value(-2.0), 0);
        assert_eq!(w.quantize_value(3.0), 65535);
        assert_eq!(w.quantize_value(-7.0), 0);
        assert_eq!(w.quantize_value(30.0), 65535);
    }

    #[test]
    fn quantize_rounds_half_to_even() {
        // 0.25 * 65535 = 16383.75 -> 16384
        let w = IntensityWindow::new(0.0, 1.0).unwrap();
        assert_eq!(w.quantize_value(0.25), 16384);
        // 0.5 * 65535 = 32767.5 -> even neighbour 32768
        assert_eq!(w.quantize_value(0.5), 32768);
        // 1.5 / 65535 * 65535 = 1.5 -> 2, 2.5 -> 2
        let w2 = IntensityWindow::new(0.0, 65535.0).unwrap();
        assert_eq!(w2.quantize_value(1.5), 2);
        assert_eq!(w2.quantize_value(2.5), 2);
    }

    #[test]
    fn degenerate_window_rejected() {
        assert!(matches!(
            IntensityWindow::new(1.0, 1.0),
            Err(VolumeError::DegenerateWindow { .. })
        ));
        assert!(IntensityWindow::new(2.0, 1.0).is_err());
    }

    #[test]
    fn quantize_grid_records_window() {
        let g = FloatGrid::new((2, 1, 1), vec![0.0, 1.0]).unwrap();
        let q = quantize(&g, IntensityWindow::new(0.0, 1.0).unwrap(), 4.0).unwrap();
        assert_eq!(q.data(), &[0, 65535]);
        assert_eq!(q.meta.get("window").map(String::as_str), Some("0 1"));
    }

    proptest! {
        #[test]
        fn quantize_is_monotone(lo in -1e3f64..1e3, span in 1e-3f64..1e4, a in -2e4f64..2e4, b in -2e4f64..2e4) {
            let w = IntensityWindow::new(lo, lo + span).unwrap();
            let (v1, v2) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(w.quantize_value(v1) <= w.quantize_value(v2));
        }

        #[test]
        fn quantize_round_trip_within_one_step(lo in -1e3f64..1e3, span in 1e-3f64..1e4, t in 0.0f64..=1.0) {
            let w = IntensityWindow::new(lo, lo + span).unwrap();
            let v = lo + t * span;
            let back = w.dequantize_value(w.quantize_value(v));
            prop_assert!((back - v).abs() <= span / 65535.0 + 1e-9 * span.max(1.0));
        }
    }

    #[test]
    fn merge_single_slab_is_identity() {
        let g = ramp_grid((3, 2, 4));
        let merged = merge_slabs(&[Slab { grid: g.clone(), z_offset: 0 }]).unwrap();
        assert_eq!(merged, g);
    }

    #[test]
    fn merge_cross_fade_ramp() {
        // Upper slab weight is 1/3 then 2/3 over a 2-slice overlap.
        let a = VoxelGrid::filled((2, 2, 4), 4.0, 0).unwrap();
        let b = VoxelGrid::filled((2, 2, 4), 4.0, 600).unwrap();
        let merged = merge_slabs(&[
            Slab { grid: a, z_offset: 0 },
            Slab { grid: b, z_offset: 2 },
        ])
        .unwrap();
        assert_eq!(merged.dims(), (2, 2, 6));
        let per_slice: Vec<u16> = (0..6).map(|z| merged.get(1, 1, z)).collect();
        assert_eq!(per_slice, vec![0, 0, 200, 400, 600, 600]);
    }

    #[test]
    fn merge_agreeing_overlap_is_exact() {
        let a = VoxelGrid::filled((3, 3, 5), 2.5, 1234).unwrap();
        let b = VoxelGrid::filled((3, 3, 5), 2.5, 1234).unwrap();
        let merged = merge_slabs(&[
            Slab { grid: a, z_offset: 0 },
            Slab { grid: b, z_offset: 3 },
        ])
        .unwrap();
        assert_eq!(merged.dims().2, 8);
        assert!(merged.data().iter().all(|&v| v == 1234));
    }

    #[test]
    fn merge_errors() {
        let a = VoxelGrid::filled((2, 2, 2), 4.0, 0).unwrap();
        let gap = merge_slabs(&[
            Slab { grid: a.clone(), z_offset: 0 },
            Slab { grid: a.clone(), z_offset: 5 },
        ]);
        match gap {
            Err(VolumeError::SlabGap { start, end }) => assert_eq!((start, end), (2, 5)),
            other => panic!("expected gap, got {other:?}"),
        }
        let wide = VoxelGrid::filled((3, 2, 2), 4.0, 0).unwrap();
        assert!(matches!(
            merge_slabs(&[Slab { grid: a.clone(), z_offset: 0 }, Slab { grid: wide, z_offset: 2 }]),
            Err(VolumeError::SlabDims { index: 1, .. })
        ));
        let other_size = VoxelGrid::filled((2, 2, 2), 5.0, 0).unwrap();
        assert!(matches!(
            merge_slabs(&[Slab { grid: a, z_offset: 0 }, Slab { grid: other_size, z_offset: 1 }]),
            Err(VolumeError::SlabVoxelSize { .. })
        ));
    }

    #[test]
    fn trilinear_exact_at_every_lattice_point() {
        let g = ramp_grid((4, 3, 5));
        for z in 0..5 {
            for y in 0..3 {
                for x in 0..4 {
                    let v = g.sample_trilinear([x as f64, y as f64, z as f64]).unwrap();
                    assert_eq!(v, g.get(x, y, z) as f64);
                }
            }
        }
    }

    #[test]
    fn trilinear_midpoint_and_bounds() {
        let mut data = vec![0u16; 2];
        data[1] = 100;
        let g = VoxelGrid::new((2, 1, 1), 1.0, data).unwrap();
        assert_eq!(g.sample_trilinear([0.5, 0.0, 0.0]).unwrap(), 50.0);
        assert!(matches!(
            g.sample_trilinear([1.5, 0.0, 0.0]),
            Err(VolumeError::OutOfBounds { .. })
        ));
        assert!(g.sample_trilinear([0.0, -0.01, 0.0]).is_err());
    }

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn oriented_patch_constant_field() {
        let g = VoxelGrid::filled((8, 8, 8), 1.0, 42).unwrap();
        let p = extract_oriented_patch(&g, [4.0, 4.0, 4.0], IDENTITY, (3, 3, 3), 1.0).unwrap();
        assert!(p.data.iter().all(|&v| v == 42.0));
        assert!(p.valid.iter().all(|&v| v));
    }

    #[test]
    fn oriented_patch_axis_aligned_subarray() {
        let g = ramp_grid((10, 9, 8));
        let p = extract_oriented_patch(&g, [5.0, 4.0, 3.0], IDENTITY, (5, 3, 3), 1.0).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..5 {
                    assert_eq!(p.get(i, j, k), g.get(3 + i, 3 + j, 2 + k) as f64);
                }
            }
        }
    }

    #[test]
    fn oriented_patch_rotated_about_z() {
        // Columns: patch i-axis -> +y, patch j-axis -> -x, k-axis -> +z.
        let g = ramp_grid((10, 10, 6));
        let basis = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let (cx, cy, cz) = (5usize, 5usize, 3usize);
        let rotated = extract_oriented_patch(&g, [5.0, 5.0, 3.0], basis, (5, 5, 3), 1.0).unwrap();
        let direct = extract_oriented_patch(&g, [5.0, 5.0, 3.0], IDENTITY, (5, 5, 3), 1.0).unwrap();
        for k in 0..3 {
            for j in 0..5 {
                for i in 0..5 {
                    // position = (cx - (j-2), cy + (i-2), cz + (k-1))
                    let x = cx + 2 - j;
                    let y = cy + i - 2;
                    let z = cz + k - 1;
                    assert_eq!(rotated.get(i, j, k), g.get(x, y, z) as f64);
                    // the same sample in the axis-aligned patch
                    assert_eq!(rotated.get(i, j, k), direct.get(4 - j, i, k));
                }
            }
        }
    }

    #[test]
    fn oriented_patch_flags_out_of_bounds() {
        let g = VoxelGrid::filled((4, 4, 4), 1.0, 9).unwrap();
        let p = extract_oriented_patch(&g, [0.0, 0.0, 0.0], IDENTITY, (3, 3, 3), 1.0).unwrap();
        assert!(!p.valid[0]);
        assert_eq!(p.data[0], 0.0);
        assert!(p.valid[1 + 3 * (1 + 3)]);
    }

    #[test]
    fn oriented_patch_rejects_skewed_basis() {
        let g = VoxelGrid::filled((4, 4, 4), 1.0, 9).unwrap();
        let skew = [[1.0, 0.0, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            extract_oriented_patch(&g, [2.0, 2.0, 2.0], skew, (3, 3, 3), 1.0),
            Err(VolumeError::NotOrthonormal(_))
        ));
    }
}
