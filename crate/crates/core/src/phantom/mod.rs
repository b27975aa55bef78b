//! Procedural scroll and fragment phantoms with exact geometry and ink ground
//! truth.

mod glyphs;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::labeling::AffineTransform2D;
use crate::mesh::{MeshError, SurfaceMesh, Vec3};
use crate::raster::{gaussian_blur, Image2, Mask};
use crate::volume::{IntensityWindow, VolumeError, VoxelGrid};

pub use glyphs::{is_supported, render_glyph_mask, GLYPH_H, GLYPH_W};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("glyph cell {0:?} is smaller than 5x7")]
    CellTooSmall((usize, usize)),
    #[error("character {0:?} is not in the glyph table")]
    UnsupportedChar(char),
    #[error("invalid phantom spec: {0}")]
    Invalid(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(
        "sheets would self-intersect: 2 x warp amplitude ({warp2:.1} um) must be below the layer gap ({gap:.1} um)"
    )]
    SelfIntersecting { warp2: f64, gap: f64 },
    #[error("spiral pitch {pitch} um is below sheet thickness {thickness} um; wraps would interpenetrate")]
    PitchTooSmall { pitch: f64, thickness: f64 },
    #[error("ink text {text:?} ({w}x{h} px) does not fit the {uw}x{uh} surface")]
    TextTooLarge {
        text: String,
        w: usize,
        h: usize,
        uw: usize,
        uh: usize,
    },
    #[error("wrong generator: spec kind is {0}")]
    WrongKind(PhantomKind),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Scroll,
    Fragment,
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::Scroll => "scroll",
            PhantomKind::Fragment => "fragment",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scroll" => Ok(PhantomKind::Scroll),
            "fragment" => Ok(PhantomKind::Fragment),
            _ => Err(format!("expected scroll|fragment, got {s:?}")),
        }
    }
}

/// How ink perturbs the surface voxels it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InkMode {
    /// Adds `ink_strength` to the intensity.
    Intensity,
    /// Flattens the fiber texture; mean intensity is unchanged.
    Morphology,
}

impl fmt::Display for InkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InkMode::Intensity => "intensity",
            InkMode::Morphology => "morphology",
        })
    }
}

impl FromStr for InkMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "intensity" => Ok(InkMode::Intensity),
            "morphology" => Ok(InkMode::Morphology),
            _ => Err(format!("expected intensity|morphology, got {s:?}")),
        }
    }
}

/// Fraction of the fiber amplitude left inside morphology-mode ink.
pub const MORPHOLOGY_FIBER_RESIDUAL: f64 = 0.02;

/// Air margin (voxels) around the sheets.
const MARGIN: f64 = 12.0;

/// Generator parameters. Lengths are micrometers unless marked as voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub wraps: usize,
    pub spiral_pitch: f64,
    /// Radius of the innermost wrap's centerline.
    pub inner_radius: f64,
    pub sheet_thickness: f64,
    /// Depth of the ink layer below the inked face.
    pub ink_depth: f64,
    pub fiber_period: f64,
    pub fiber_amplitude: f64,
    pub base_intensity: f64,
    pub ink_text: String,
    /// Glyph cell in surface pixels (one pixel per voxel).
    pub glyph_cell: (usize, usize),
    pub ink_mode: InkMode,
    pub ink_strength: f64,
    pub noise_sigma: f64,
    pub layer_count: usize,
    /// Air gap between consecutive fragment sheets.
    pub layer_gap: f64,
    pub warp_amplitude: f64,
    /// Fragment extent along x, voxels.
    pub width: usize,
    /// Extent along z (slices), voxels.
    pub length: usize,
    pub voxel_size: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// The default morphology-mode fragment.
    fn default() -> Self {
        Self {
            kind: PhantomKind::Fragment,
            wraps: 5,
            spiral_pitch: 100.0,
            inner_radius: 80.0,
            sheet_thickness: 60.0,
            ink_depth: 8.0,
            fiber_period: 28.0,
            fiber_amplitude: 0.12,
            base_intensity: 0.55,
            ink_text: "LX".to_string(),
            glyph_cell: (40, 56),
            ink_mode: InkMode::Morphology,
            ink_strength: 0.1,
            noise_sigma: 0.025,
            layer_count: 2,
            layer_gap: 80.0,
            warp_amplitude: 16.0,
            width: 256,
            length: 256,
            voxel_size: 4.0,
            seed: 1,
        }
    }
}

impl PhantomSpec {
    pub fn default_scroll() -> Self {
        Self {
            kind: PhantomKind::Scroll,
            ink_text: "SCROLL".to_string(),
            glyph_cell: (20, 28),
            length: 64,
            ..Self::default()
        }
    }

    /// Sets one field from its config key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        match key {
            "kind" => self.kind = value.parse()?,
            "wraps" => self.wraps = num(value)?,
            "spiral_pitch" => self.spiral_pitch = num(value)?,
            "inner_radius" => self.inner_radius = num(value)?,
            "sheet_thickness" => self.sheet_thickness = num(value)?,
            "ink_depth" => self.ink_depth = num(value)?,
            "fiber_period" => self.fiber_period = num(value)?,
            "fiber_amplitude" => self.fiber_amplitude = num(value)?,
            "base_intensity" => self.base_intensity = num(value)?,
            "ink_text" => self.ink_text = value.to_string(),
            "glyph_cell" => {
                let parts: Vec<&str> = value.split(['x', ',']).map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(format!("expected WxH, got {value:?}"));
                }
                self.glyph_cell = (num(parts[0])?, num(parts[1])?);
            }
            "ink_mode" => self.ink_mode = value.parse()?,
            "ink_strength" => self.ink_strength = num(value)?,
            "noise_sigma" => self.noise_sigma = num(value)?,
            "layer_count" => self.layer_count = num(value)?,
            "layer_gap" => self.layer_gap = num(value)?,
            "warp_amplitude" => self.warp_amplitude = num(value)?,
            "width" => self.width = num(value)?,
            "length" => self.length = num(value)?,
            "voxel_size" => self.voxel_size = num(value)?,
            "seed" => self.seed = num(value)?,
            _ => return Err(format!("unknown phantom key {key:?}")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over [`PhantomSpec::default`] (or the scroll
    /// defaults when `kind = scroll` appears). `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PhantomError::Config {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut spec = if pairs.iter().any(|(_, k, v)| k == "kind" && v == "scroll") {
            Self::default_scroll()
        } else {
            Self::default()
        };
        for (line, k, v) in pairs {
            spec.set(&k, &v).map_err(|msg| PhantomError::Config { line, msg })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// All fields as sorted `key = value` lines.
    pub fn to_config_string(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("kind", self.kind.to_string());
        m.insert("wraps", self.wraps.to_string());
        m.insert("spiral_pitch", self.spiral_pitch.to_string());
        m.insert("inner_radius", self.inner_radius.to_string());
        m.insert("sheet_thickness", self.sheet_thickness.to_string());
        m.insert("ink_depth", self.ink_depth.to_string());
        m.insert("fiber_period", self.fiber_period.to_string());
        m.insert("fiber_amplitude", self.fiber_amplitude.to_string());
        m.insert("base_intensity", self.base_intensity.to_string());
        m.insert("ink_text", self.ink_text.clone());
        m.insert("glyph_cell", format!("{}x{}", self.glyph_cell.0, self.glyph_cell.1));
        m.insert("ink_mode", self.ink_mode.to_string());
        m.insert("ink_strength", self.ink_strength.to_string());
        m.insert("noise_sigma", self.noise_sigma.to_string());
        m.insert("layer_count", self.layer_count.to_string());
        m.insert("layer_gap", self.layer_gap.to_string());
        m.insert("warp_amplitude", self.warp_amplitude.to_string());
        m.insert("width", self.width.to_string());
        m.insert("length", self.length.to_string());
        m.insert("voxel_size", self.voxel_size.to_string());
        m.insert("seed", self.seed.to_string());
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PhantomError::Invalid(m.to_string()));
        let positive = [
            ("spiral_pitch", self.spiral_pitch),
            ("inner_radius", self.inner_radius),
            ("sheet_thickness", self.sheet_thickness),
            ("ink_depth", self.ink_depth),
            ("fiber_period", self.fiber_period),
            ("base_intensity", self.base_intensity),
            ("layer_gap", self.layer_gap),
            ("voxel_size", self.voxel_size),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhantomError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("fiber_amplitude", self.fiber_amplitude),
            ("ink_strength", self.ink_strength),
            ("noise_sigma", self.noise_sigma),
            ("warp_amplitude", self.warp_amplitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PhantomError::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.ink_depth > self.sheet_thickness {
            return bad("ink_depth exceeds sheet_thickness");
        }
        if self.width < 2 || self.length < 2 {
            return bad("width and length must be >= 2 voxels");
        }
        match self.kind {
            PhantomKind::Scroll if self.wraps < 1 => bad("wraps must be >= 1"),
            PhantomKind::Fragment if self.layer_count < 1 => bad("layer_count must be >= 1"),
            _ => Ok(()),
        }
    }

    fn vox(&self, um: f64) -> f64 {
        um / self.voxel_size
    }

    /// Deterministic sheet geometry for this spec.
    pub fn geometry(&self) -> Result<Geometry> {
        self.validate()?;
        let thickness = self.vox(self.sheet_thickness);
        let ink_depth = self.vox(self.ink_depth);
        match self.kind {
            PhantomKind::Fragment => {
                if self.layer_count > 1 && 2.0 * self.warp_amplitude >= self.layer_gap {
                    return Err(PhantomError::SelfIntersecting {
                        warp2: 2.0 * self.warp_amplitude,
                        gap: self.layer_gap,
                    });
                }
                let amp = self.vox(self.warp_amplitude);
                let pitch = thickness + self.vox(self.layer_gap);
                let n = self.layer_count;
                let ny = (2.0 * MARGIN + 2.0 * amp + thickness + (n - 1) as f64 * pitch).ceil() as usize;
                let top = ny as f64 - 1.0 - MARGIN - amp - thickness / 2.0;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0005_eed0_f9e0);
                let layers = (0..n)
                    .map(|l| Sheet {
                        center_y: top - l as f64 * pitch,
                        amplitude: amp,
                        phase_x: rng.random::<f64>() * std::f64::consts::TAU,
                        phase_z: rng.random::<f64>() * std::f64::consts::TAU,
                    })
                    .collect();
                Ok(Geometry::Fragment(FragmentGeometry {
                    dims: (self.width, ny, self.length),
                    thickness,
                    ink_depth,
                    layers,
                }))
            }
            PhantomKind::Scroll => {
                if self.spiral_pitch < self.sheet_thickness {
                    return Err(PhantomError::PitchTooSmall {
                        pitch: self.spiral_pitch,
                        thickness: self.sheet_thickness,
                    });
                }
                let b = self.vox(self.spiral_pitch) / std::f64::consts::TAU;
                let r0 = self.vox(self.inner_radius);
                if r0 <= thickness / 2.0 {
                    return Err(PhantomError::Invalid(
                        "inner_radius must exceed half the sheet thickness".into(),
                    ));
                }
                let theta_max = std::f64::consts::TAU * self.wraps as f64;
                let outer = r0 + b * theta_max + thickness / 2.0;
                let n = (2.0 * (outer + MARGIN)).ceil() as usize;
                let c = (n as f64 - 1.0) / 2.0;
                Ok(Geometry::Scroll(ScrollGeometry {
                    dims: (n, n, self.length),
                    center: [c, c],
                    r0,
                    b,
                    theta_max,
                    thickness,
                    ink_depth,
                }))
            }
        }
    }
}

/// One warped fragment sheet; its centerline height is
/// `center_y + amplitude * sin(2 pi x / nx + phase_x) * cos(2 pi z / nz + phase_z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sheet {
    pub center_y: f64,
    pub amplitude: f64,
    pub phase_x: f64,
    pub phase_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentGeometry {
    pub dims: (usize, usize, usize),
    /// Voxels.
    pub thickness: f64,
    pub ink_depth: f64,
    /// Layer 0 is the topmost (largest y).
    pub layers: Vec<Sheet>,
}

impl FragmentGeometry {
    pub fn center_y(&self, layer: usize, x: f64, z: f64) -> f64 {
        let s = &self.layers[layer];
        let (nx, _, nz) = self.dims;
        let tau = std::f64::consts::TAU;
        s.center_y + s.amplitude * (tau * x / nx as f64 + s.phase_x).sin() * (tau * z / nz as f64 + s.phase_z).cos()
    }
}

/// Archimedean spiral `r = r0 + b theta` about `center` in every z-slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScrollGeometry {
    pub dims: (usize, usize, usize),
    pub center: [f64; 2],
    pub r0: f64,
    pub b: f64,
    pub theta_max: f64,
    pub thickness: f64,
    pub ink_depth: f64,
}

impl ScrollGeometry {
    fn f(&self, r: f64) -> f64 {
        let b = self.b;
        let q = (r * r + b * b).sqrt();
        (r * q + b * b * (r + q).ln()) / (2.0 * b)
    }

    /// Centerline arc length from `theta = 0`.
    pub fn arc_length(&self, theta: f64) -> f64 {
        self.f(self.r0 + self.b * theta) - self.f(self.r0)
    }

    /// Inverse of [`arc_length`](Self::arc_length) by Newton iteration.
    pub fn theta_at(&self, s: f64) -> f64 {
        let mut theta = s / self.r0.max(1e-9);
        for _ in 0..50 {
            let r = self.r0 + self.b * theta;
            let step = (self.arc_length(theta) - s) / (r * r + self.b * self.b).sqrt();
            theta -= step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        theta
    }

    pub fn total_arc_length(&self) -> f64 {
        self.arc_length(self.theta_max)
    }

    pub fn centerline(&self, theta: f64, z: f64) -> Vec3 {
        let r = self.r0 + self.b * theta;
        [
            self.center[0] + r * theta.cos(),
            self.center[1] + r * theta.sin(),
            z,
        ]
    }

    /// Wrap angle nearest to a cross-section point and the signed radial
    /// offset from that wrap's centerline (positive outward).
    pub fn nearest_wrap(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let r = (dx * dx + dy * dy).sqrt();
        let phi = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
        let mut best = (phi, f64::INFINITY);
        let mut k = 0.0;
        loop {
            let theta = phi + std::f64::consts::TAU * k;
            if theta > self.theta_max {
                break;
            }
            let d = r - (self.r0 + self.b * theta);
            if d.abs() < best.1.abs() {
                best = (theta, d);
            }
            k += 1.0;
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Fragment(FragmentGeometry),
    Scroll(ScrollGeometry),
}

impl Geometry {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            Geometry::Fragment(g) => g.dims,
            Geometry::Scroll(g) => g.dims,
        }
    }

    pub fn layer_count(&self) -> usize {
        match self {
            Geometry::Fragment(g) => g.layers.len(),
            Geometry::Scroll(_) => 1,
        }
    }

    /// Extent of a layer's UV chart in pixels; one pixel per voxel of
    /// centerline length.
    pub fn uv_dims(&self) -> (usize, usize) {
        match self {
            Geometry::Fragment(g) => (g.dims.0, g.dims.2),
            Geometry::Scroll(g) => (g.total_arc_length().floor() as usize + 1, g.dims.2),
        }
    }

    /// Sheet centerline point at chart coordinates `(u, v)`.
    pub fn surface_point(&self, layer: usize, u: f64, v: f64) -> Vec3 {
        match self {
            Geometry::Fragment(g) => [u, g.center_y(layer, u, v), v],
            Geometry::Scroll(g) => g.centerline(g.theta_at(u), v),
        }
    }

    /// Chart coordinates of the centerline point nearest to `p`.
    pub fn uv_of_point(&self, _layer: usize, p: Vec3) -> [f64; 2] {
        match self {
            Geometry::Fragment(_) => [p[0], p[2]],
            Geometry::Scroll(g) => {
                let (theta, _) = g.nearest_wrap(p[0], p[1]);
                [g.arc_length(theta), p[2]]
            }
        }
    }

    /// Outward unit normal of the inked face at chart coordinates.
    pub fn ink_normal(&self, layer: usize, u: f64, v: f64) -> Vec3 {
        match self {
            Geometry::Fragment(g) => {
                let h = 1e-4;
                let dx = (g.center_y(layer, u + h, v) - g.center_y(layer, u - h, v)) / (2.0 * h);
                let dz = (g.center_y(layer, u, v + h) - g.center_y(layer, u, v - h)) / (2.0 * h);
                let n = [-dx, 1.0, -dz];
                let l = crate::mesh::norm(n);
                [n[0] / l, n[1] / l, n[2] / l]
            }
            Geometry::Scroll(g) => {
                let theta = g.theta_at(u);
                // Ink sits on the inner face.
                [-theta.cos(), -theta.sin(), 0.0]
            }
        }
    }

    /// Samples the analytic chart at integer `(u, v)` into a grid mesh with
    /// UVs equal to the chart coordinates.
    pub fn true_mesh(&self, layer: usize) -> Result<SurfaceMesh> {
        let (uw, uh) = self.uv_dims();
        let mut vertices = Vec::with_capacity(uw * uh);
        let mut uv = Vec::with_capacity(uw * uh);
        for v in 0..uh {
            for u in 0..uw {
                vertices.push(self.surface_point(layer, u as f64, v as f64));
                uv.push([u as f64, v as f64]);
            }
        }
        let mut mesh = SurfaceMesh::from_grid(vertices, uh, uw)?;
        mesh.uv = Some(uv);
        Ok(mesh)
    }
}

/// Per-layer ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTruth {
    pub true_mesh: SurfaceMesh,
    /// Ink in the layer's UV chart; `(u, v)` pixel indices.
    pub ink_mask: Mask,
}

/// Voxel class emitted alongside the volume.
pub const LABEL_NONE: u8 = 0;
/// Inked-face shell without ink.
pub const LABEL_SURFACE: u8 = 1;
pub const LABEL_INK: u8 = 2;

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub layers: Vec<LayerTruth>,
    pub spec: PhantomSpec,
    pub geometry: Geometry,
    /// One of the `LABEL_*` values per voxel, same indexing as the volume.
    pub voxel_labels: Vec<u8>,
}

impl GroundTruth {
    pub fn voxel_label(&self, x: usize, y: usize, z: usize) -> u8 {
        let (nx, ny, _) = self.geometry.dims();
        self.voxel_labels[x + nx * (y + ny * z)]
    }

    pub fn surface_point(&self, layer: usize, u: f64, v: f64) -> Vec3 {
        self.geometry.surface_point(layer, u, v)
    }

    pub fn uv_of_point(&self, layer: usize, p: Vec3) -> [f64; 2] {
        self.geometry.uv_of_point(layer, p)
    }
}

/// Synthetic infrared photograph of the top layer; dark is ink.
#[derive(Debug, Clone)]
pub struct SurfacePhoto {
    pub image: Image2<f64>,
    /// Maps layer-0 UV pixel coordinates to photo pixel coordinates.
    pub applied_transform: AffineTransform2D,
}

/// Renders `text` centered in a `uv_dims` raster.
pub fn layout_ink_mask(text: &str, cell: (usize, usize), uv_dims: (usize, usize)) -> Result<Mask> {
    let (uw, uh) = uv_dims;
    let mut out = Mask::filled(uw, uh, false);
    let glyphs = render_glyph_mask(text, cell)?;
    let (gw, gh) = glyphs.dims();
    if gw == 0 || gh == 0 || glyphs.count() == 0 {
        return Ok(out);
    }
    if gw > uw || gh > uh {
        return Err(PhantomError::TextTooLarge {
            text: text.to_string(),
            w: gw,
            h: gh,
            uw,
            uh,
        });
    }
    let ox = (uw - gw) / 2;
    let oy = (uh - gh) / 2;
    for y in 0..gh {
        for x in 0..gw {
            if *glyphs.get(x, y) {
                out.set(ox + x, oy + y, true);
            }
        }
    }
    Ok(out)
}

fn fiber(spec: &PhantomSpec, u: f64, v: f64, phase: [f64; 2]) -> f64 {
    let w = std::f64::consts::TAU / (spec.fiber_period / spec.voxel_size);
    0.5 * (w * u + phase[0]).sin() + 0.5 * (w * v + phase[1]).sin()
}

/// Per-voxel sheet membership: fractional coverage, chart coordinates, depth
/// below the inked face (voxels) and layer.
struct Hit {
    coverage: f64,
    u: f64,
    v: f64,
    depth: f64,
    layer: usize,
}

fn locate(geometry: &Geometry, x: f64, y: f64, z: f64) -> Option<Hit> {
    match geometry {
        Geometry::Fragment(g) => {
            let half = g.thickness / 2.0;
            for layer in 0..g.layers.len() {
                let d = y - g.center_y(layer, x, z);
                let coverage = (half + 0.5 - d.abs()).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    return Some(Hit {
                        coverage,
                        u: x,
                        v: z,
                        depth: half - d,
                        layer,
                    });
                }
            }
            None
        }
        Geometry::Scroll(g) => {
            let half = g.thickness / 2.0;
            let (theta, d) = g.nearest_wrap(x, y);
            let coverage = (half + 0.5 - d.abs()).clamp(0.0, 1.0);
            (coverage > 0.0).then(|| Hit {
                coverage,
                u: g.arc_length(theta),
                v: z,
                depth: half + d,
                layer: 0,
            })
        }
    }
}

fn generate_volume(
    spec: &PhantomSpec,
    geometry: &Geometry,
    masks: &[Mask],
) -> Result<(VoxelGrid, Vec<u8>)> {
    let (nx, ny, nz) = geometry.dims();
    let ink_depth = match geometry {
        Geometry::Fragment(g) => g.ink_depth,
        Geometry::Scroll(g) => g.ink_depth,
    };
    let window = IntensityWindow::new(0.0, 1.0)?;
    let mut geo_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x000f_1be7);
    let phase = [
        geo_rng.random::<f64>() * std::f64::consts::TAU,
        geo_rng.random::<f64>() * std::f64::consts::TAU,
    ];
    let slice_len = nx * ny;
    let mut data = vec![0u16; slice_len * nz];
    let mut labels = vec![LABEL_NONE; slice_len * nz];
    data.par_chunks_mut(slice_len)
        .zip(labels.par_chunks_mut(slice_len))
        .enumerate()
        .for_each(|(z, (slice, lab))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(z as u64);
            for y in 0..ny {
                for x in 0..nx {
                    let noise: f64 = rng.sample(StandardNormal);
                    let mut value = 0.0;
                    if let Some(hit) = locate(geometry, x as f64, y as f64, z as f64) {
                        let mut amp = spec.fiber_amplitude;
                        let mut add = 0.0;
                        if hit.depth <= ink_depth && hit.layer < masks.len() {
                            let mask = &masks[hit.layer];
                            let (mu, mv) = (hit.u.round(), hit.v.round());
                            let inked = mu >= 0.0
                                && mv >= 0.0
                                && (mu as usize) < mask.width()
                                && (mv as usize) < mask.height()
                                && *mask.get(mu as usize, mv as usize);
                            if inked {
                                lab[x + nx * y] = LABEL_INK;
                                match spec.ink_mode {
                                    InkMode::Intensity => add = spec.ink_strength,
                                    InkMode::Morphology => amp *= MORPHOLOGY_FIBER_RESIDUAL,
                                }
                            } else {
                                lab[x + nx * y] = LABEL_SURFACE;
                            }
                        }
                        let tissue = spec.base_intensity + amp * fiber(spec, hit.u, hit.v, phase) + add;
                        value = hit.coverage * tissue;
                    }
                    value += spec.noise_sigma * noise;
                    slice[x + nx * y] = window.quantize_value(value);
                }
            }
        });
    let mut grid = VoxelGrid::new((nx, ny, nz), spec.voxel_size, data)?;
    grid.meta.insert("source".into(), format!("phantom:{}", spec.kind));
    grid.meta.insert("seed".into(), spec.seed.to_string());
    grid.meta.insert("window".into(), "0 1".into());
    Ok((grid, labels))
}

fn ink_masks(spec: &PhantomSpec, geometry: &Geometry) -> Result<Vec<Mask>> {
    let uv = geometry.uv_dims();
    let mask = layout_ink_mask(&spec.ink_text, spec.glyph_cell, uv)?;
    Ok((0..geometry.layer_count())
        .map(|l| if l < 2 { mask.clone() } else { Mask::filled(uv.0, uv.1, false) })
        .collect())
}

fn build_truth(spec: &PhantomSpec, geometry: Geometry, masks: Vec<Mask>, labels: Vec<u8>) -> Result<GroundTruth> {
    let layers = masks
        .into_iter()
        .enumerate()
        .map(|(l, ink_mask)| {
            Ok(LayerTruth {
                true_mesh: geometry.true_mesh(l)?,
                ink_mask,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GroundTruth {
        layers,
        spec: spec.clone(),
        geometry,
        voxel_labels: labels,
    })
}

/// Ink contrast image of a mask: 1 on blank papyrus, 0.25 under solid ink.
pub fn ink_contrast(mask: &Mask) -> Image2<f64> {
    let m = mask.map(|&b| if b { 1.0 } else { 0.0 });
    gaussian_blur(&m, 1.0).map(|v| 1.0 - 0.75 * v)
}

/// Warps the layer-0 contrast image by a seeded small similarity transform.
pub fn make_photo(spec: &PhantomSpec, mask: &Mask) -> SurfacePhoto {
    let contrast = ink_contrast(mask);
    let (w, h) = contrast.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x0009_4070);
    let angle = (rng.random::<f64>() * 2.0 - 1.0) * 5f64.to_radians();
    let scale = 1.0 + (rng.random::<f64>() * 2.0 - 1.0) * 0.03;
    let shift = [
        (rng.random::<f64>() * 2.0 - 1.0) * 10.0,
        (rng.random::<f64>() * 2.0 - 1.0) * 10.0,
    ];
    let center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let t = AffineTransform2D::similarity(center, angle, scale, shift);
    let inv = t.inverse().expect("similarity with scale near 1 is invertible");
    let image = Image2::from_fn(w, h, |x, y| {
        let p = inv.apply([x as f64, y as f64]);
        contrast.sample_bilinear(p[0], p[1]).unwrap_or(1.0)
    });
    SurfacePhoto {
        image,
        applied_transform: t,
    }
}

/// Stacked, gently warped papyrus sheets with ink on the top face of layers
/// 0 and 1.
pub fn generate_fragment(spec: &PhantomSpec) -> Result<(VoxelGrid, GroundTruth, SurfacePhoto)> {
    if spec.kind != PhantomKind::Fragment {
        return Err(PhantomError::WrongKind(spec.kind));
    }
    let geometry = spec.geometry()?;
    let masks = ink_masks(spec, &geometry)?;
    let (grid, labels) = generate_volume(spec, &geometry, &masks)?;
    let photo = make_photo(spec, &masks[0]);
    let truth = build_truth(spec, geometry, masks, labels)?;
    Ok((grid, truth, photo))
}

/// A rolled sheet following an Archimedean spiral, ink on the inner face.
pub fn generate_scroll(spec: &PhantomSpec) -> Result<(VoxelGrid, GroundTruth)> {
    if spec.kind != PhantomKind::Scroll {
        return Err(PhantomError::WrongKind(spec.kind));
    }
    let geometry = spec.geometry()?;
    let masks = ink_masks(spec, &geometry)?;
    let (grid, labels) = generate_volume(spec, &geometry, &masks)?;
    let truth = build_truth(spec, geometry, masks, labels)?;
    Ok((grid, truth))
}

/// Writes `spec.txt`, `layer_<i>/{mesh.obj,ink.png}` and, when given, the
/// photo (`photo.tif`) and its transform (`transform.txt`).
pub fn save_ground_truth(truth: &GroundTruth, photo: Option<&SurfacePhoto>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("spec.txt"), truth.spec.to_config_string())?;
    for (i, layer) in truth.layers.iter().enumerate() {
        let ldir = dir.join(format!("layer_{i}"));
        fs::create_dir_all(&ldir)?;
        layer.true_mesh.save_obj(&ldir.join("mesh.obj"))?;
        layer.ink_mask.save_png(&ldir.join("ink.png"))?;
    }
    if let Some(p) = photo {
        p.image.save_tiff16(&dir.join("photo.tif"))?;
        fs::write(dir.join("transform.txt"), p.applied_transform.to_text())?;
    }
    Ok(())
}
