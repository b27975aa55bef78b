//! Surface tracing: a chain of particles follows a bright sheet from slice to
//! slice under an intensity plus smoothness energy.

use thiserror::Error;

use crate::mesh::{MeshError, SurfaceMesh};
use crate::raster::{gaussian_blur, Image2};
use crate::volume::VoxelGrid;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("seed {index} at ({x:.2}, {y:.2}) is outside slice {z}")]
    SeedOutOfBounds { index: usize, x: f64, y: f64, z: usize },
    #[error("slice {0} is outside the volume")]
    SliceOutOfRange(usize),
    #[error("surface lost at slice {z}: particle {particle} best intensity {intensity:.3} below floor")]
    LostSurface { z: usize, particle: usize, intensity: f64 },
    #[error("chain left slice {z} at particle {particle}")]
    OutOfBounds { z: usize, particle: usize },
    #[error("invalid trace parameters: {0}")]
    BadParams(String),
    #[error("tracing aborted after {rows_completed} completed rows: {source}")]
    Aborted {
        rows_completed: usize,
        #[source]
        source: Box<TraceError>,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type Result<T> = std::result::Result<T, TraceError>;

/// Ordered particles on one z-slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleChain {
    pub z: usize,
    pub points: Vec<[f64; 2]>,
    /// Target distance between neighbours, voxels.
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceParams {
    pub step_dz: usize,
    pub search_radius: usize,
    pub alpha_stiffness: f64,
    pub beta_spacing: f64,
    pub relax_iters: usize,
    /// Floor on the normalized intensity of a particle's best candidate.
    pub min_intensity: f64,
    /// Gaussian pre-blur of each slice, voxels. Moves the intensity maximum of
    /// a thick sheet to its center line.
    pub smooth_sigma: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            step_dz: 1,
            search_radius: 3,
            alpha_stiffness: 0.3,
            beta_spacing: 0.1,
            relax_iters: 3,
            min_intensity: 0.15,
            smooth_sigma: 3.0,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TraceError::BadParams(m.to_string()));
        if self.step_dz < 1 {
            return bad("step_dz must be >= 1");
        }
        if self.search_radius < 1 {
            return bad("search_radius must be >= 1");
        }
        if !(self.alpha_stiffness >= 0.0 && self.beta_spacing >= 0.0) {
            return bad("weights must be >= 0");
        }
        if !(self.smooth_sigma >= 0.0) || !self.min_intensity.is_finite() {
            return bad("smooth_sigma must be >= 0 and min_intensity finite");
        }
        Ok(())
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn polyline_length(points: &[[f64; 2]]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Resamples a polyline to `count` points evenly spaced in arc length.
/// Endpoints are kept exactly.
pub fn resample_to_count(points: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    assert!(count >= 2 && points.len() >= 2);
    let cum: Vec<f64> = std::iter::once(0.0)
        .chain(points.windows(2).scan(0.0, |acc, w| {
            *acc += dist(w[0], w[1]);
            Some(*acc)
        }))
        .collect();
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(count);
    out.push(points[0]);
    let mut seg = 0;
    for k in 1..count - 1 {
        let s = total * k as f64 / (count - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out.push(*points.last().unwrap());
    out
}

/// Resamples to the point count whose spacing is closest to `spacing`
/// (at least 3 points).
pub fn resample_uniform(points: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let segments = ((polyline_length(points) / spacing).round() as usize).max(2);
    resample_to_count(points, segments + 1)
}

fn slice_bounds(grid: &VoxelGrid) -> (f64, f64) {
    let (nx, ny, _) = grid.dims();
    ((nx - 1) as f64, (ny - 1) as f64)
}

#[inline]
fn in_slice(p: [f64; 2], bounds: (f64, f64)) -> bool {
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= bounds.0 && p[1] <= bounds.1
}

/// Piecewise-linear chain through `seeds`, resampled to uniform spacing.
pub fn seed_chain(grid: &VoxelGrid, z: usize, seeds: &[[f64; 2]], spacing: f64) -> Result<ParticleChain> {
    if seeds.len() < 2 {
        return Err(TraceError::TooFewSeeds(seeds.len()));
    }
    if z >= grid.dims().2 {
        return Err(TraceError::SliceOutOfRange(z));
    }
    if !(spacing > 0.0) {
        return Err(TraceError::BadParams("spacing must be > 0".into()));
    }
    let bounds = slice_bounds(grid);
    for (i, s) in seeds.iter().enumerate() {
        if !in_slice(*s, bounds) {
            return Err(TraceError::SeedOutOfBounds {
                index: i,
                x: s[0],
                y: s[1],
                z,
            });
        }
    }
    Ok(ParticleChain {
        z,
        points: resample_uniform(seeds, spacing),
        spacing,
    })
}

/// A blurred slice rescaled so its maximum is 1.
pub struct SliceField {
    img: Image2<f64>,
}

impl SliceField {
    pub fn new(grid: &VoxelGrid, z: usize, sigma: f64) -> Self {
        let (nx, ny, _) = grid.dims();
        let raw = Image2::from_vec(nx, ny, grid.slice(z).iter().map(|&v| v as f64).collect());
        let mut img = gaussian_blur(&raw, sigma);
        let max = img.data().iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            img.data_mut().iter_mut().for_each(|v| *v /= max);
        }
        Self { img }
    }

    /// Normalized intensity; 0 outside the slice.
    #[inline]
    pub fn value(&self, p: [f64; 2]) -> f64 {
        self.img.sample_bilinear(p[0], p[1]).unwrap_or(0.0)
    }
}

/// Total chain energy on one slice.
pub fn chain_energy(field: &SliceField, points: &[[f64; 2]], spacing: f64, params: &TraceParams) -> f64 {
    let n = points.len();
    let data: f64 = points.iter().map(|&p| -field.value(p)).sum();
    let bend: f64 = (1..n.saturating_sub(1)).map(|i| bend_term(points, i)).sum();
    let stretch: f64 = (0..n.saturating_sub(1))
        .map(|i| (dist(points[i], points[i + 1]) - spacing).powi(2))
        .sum();
    data + params.alpha_stiffness * bend + params.beta_spacing * stretch
}

#[inline]
fn bend_term(p: &[[f64; 2]], i: usize) -> f64 {
    let dx = p[i - 1][0] - 2.0 * p[i][0] + p[i + 1][0];
    let dy = p[i - 1][1] - 2.0 * p[i][1] + p[i + 1][1];
    dx * dx + dy * dy
}

/// Energy terms that involve particle `i`.
fn local_energy(field: &SliceField, p: &[[f64; 2]], i: usize, spacing: f64, params: &TraceParams) -> f64 {
    let n = p.len();
    let mut bend = 0.0;
    for j in i.saturating_sub(1)..=(i + 1).min(n - 1) {
        if j >= 1 && j + 1 < n {
            bend += bend_term(p, j);
        }
    }
    let mut stretch = 0.0;
    if i > 0 {
        stretch += (dist(p[i - 1], p[i]) - spacing).powi(2);
    }
    if i + 1 < n {
        stretch += (dist(p[i], p[i + 1]) - spacing).powi(2);
    }
    -field.value(p[i]) + params.alpha_stiffness * bend + params.beta_spacing * stretch
}

/// Unit normals of a polyline from central-difference tangents.
fn chain_normals(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i.saturating_sub(1)];
            let b = points[(i + 1).min(n - 1)];
            let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
            let l = (tx * tx + ty * ty).sqrt();
            if l > 0.0 {
                [-ty / l, tx / l]
            } else {
                [0.0, 1.0]
            }
        })
        .collect()
}

fn window_offsets(r: usize) -> Vec<[f64; 2]> {
    let r = r as isize;
    let mut v: Vec<[f64; 2]> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| [dx as f64, dy as f64]))
        .collect();
    // Closest offsets first, so ties resolve toward the projected position.
    v.sort_by(|a, b| (a[0] * a[0] + a[1] * a[1]).total_cmp(&(b[0] * b[0] + b[1] * b[1])));
    v
}

/// Moves each particle to the sheet on `field`, starting from `projected`.
fn settle(
    field: &SliceField,
    projected: &[[f64; 2]],
    spacing: f64,
    params: &TraceParams,
    z: usize,
    bounds: (f64, f64),
) -> Result<Vec<[f64; 2]>> {
    let offsets = window_offsets(params.search_radius);
    let candidates = |c: [f64; 2]| {
        offsets
            .iter()
            .map(move |o| [c[0] + o[0], c[1] + o[1]])
            .filter(move |q| in_slice(*q, bounds))
    };

    // (1) Greedy: brightest candidate per particle.
    let mut pts = Vec::with_capacity(projected.len());
    for (i, &c) in projected.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, c);
        for q in candidates(c) {
            let v = field.value(q);
            if v > best.0 {
                best = (v, q);
            }
        }
        if best.0 < params.min_intensity {
            return Err(TraceError::LostSurface {
                z,
                particle: i,
                intensity: best.0.max(0.0),
            });
        }
        pts.push(best.1);
    }

    // (2) Coordinate descent on the full energy over the same windows.
    for _ in 0..params.relax_iters {
        let before = if cfg!(debug_assertions) {
            chain_energy(field, &pts, spacing, params)
        } else {
            0.0
        };
        for i in 0..pts.len() {
            let mut best_e = local_energy(field, &pts, i, spacing, params);
            let mut best_p = pts[i];
            for q in candidates(projected[i]) {
                pts[i] = q;
                let e = local_energy(field, &pts, i, spacing, params);
                if e < best_e {
                    best_e = e;
                    best_p = q;
                }
            }
            pts[i] = best_p;
        }
        if cfg!(debug_assertions) {
            let after = chain_energy(field, &pts, spacing, params);
            debug_assert!(after <= before + 1e-9, "relaxation raised energy {before} -> {after}");
        }
    }

    // (3) Tangential motion is unobservable on a sheet of uniform texture, so
    // only the displacement along the chain normal is kept; then refine the
    // normal offset to sub-voxel precision with parabolic fits.
    let normals = chain_normals(projected);
    let limit = params.search_radius as f64;
    for i in 0..pts.len() {
        let n = normals[i];
        let c = projected[i];
        let mut t = (pts[i][0] - c[0]) * n[0] + (pts[i][1] - c[1]) * n[1];
        let at = |t: f64| field.value([c[0] + t * n[0], c[1] + t * n[1]]);
        for _ in 0..4 {
            let (a, b, d) = (at(t - 1.0), at(t), at(t + 1.0));
            let curv = a - 2.0 * b + d;
            if curv >= 0.0 {
                break;
            }
            let shift = (0.5 * (a - d) / curv).clamp(-1.0, 1.0);
            t = (t + shift).clamp(-limit, limit);
            if shift.abs() < 1e-3 {
                break;
            }
        }
        pts[i] = [c[0] + t * n[0], c[1] + t * n[1]];
    }

    // (4) Uniform resampling.
    let out = resample_uniform(&pts, spacing);
    if let Some(i) = out.iter().position(|p| !in_slice(*p, bounds)) {
        return Err(TraceError::OutOfBounds { z, particle: i });
    }
    Ok(out)
}

/// Re-fits a chain to the sheet on its own slice.
pub fn settle_chain(grid: &VoxelGrid, chain: &ParticleChain, params: &TraceParams) -> Result<ParticleChain> {
    params.validate()?;
    let field = SliceField::new(grid, chain.z, params.smooth_sigma);
    let points = settle(&field, &chain.points, chain.spacing, params, chain.z, slice_bounds(grid))?;
    Ok(ParticleChain { points, ..chain.clone() })
}

/// Advances a chain by `step_dz` slices.
pub fn propagate_chain(grid: &VoxelGrid, chain: &ParticleChain, params: &TraceParams) -> Result<ParticleChain> {
    params.validate()?;
    let z = chain.z + params.step_dz;
    if z >= grid.dims().2 {
        return Err(TraceError::SliceOutOfRange(z));
    }
    let bounds = slice_bounds(grid);
    if let Some(i) = chain.points.iter().position(|p| !in_slice(*p, bounds)) {
        return Err(TraceError::OutOfBounds { z, particle: i });
    }
    let field = SliceField::new(grid, z, params.smooth_sigma);
    let points = settle(&field, &chain.points, chain.spacing, params, z, bounds)?;
    Ok(ParticleChain {
        z,
        points,
        spacing: chain.spacing,
    })
}

/// Traces the chains for slices `z0, z0 + step, ... <= z1`.
///
/// The seed chain is first settled onto the sheet of slice `z0`.
pub fn trace_chains(
    grid: &VoxelGrid,
    seeds: &[[f64; 2]],
    spacing: f64,
    z_range: (usize, usize),
    params: &TraceParams,
) -> Result<Vec<ParticleChain>> {
    params.validate()?;
    let (z0, z1) = z_range;
    if z1 <= z0 {
        return Err(TraceError::BadParams(format!("empty z range {z0}..{z1}")));
    }
    if z1 >= grid.dims().2 {
        return Err(TraceError::SliceOutOfRange(z1));
    }
    let abort = |rows: usize, e: TraceError| TraceError::Aborted {
        rows_completed: rows,
        source: Box::new(e),
    };
    let seed = seed_chain(grid, z0, seeds, spacing)?;
    let first = settle_chain(grid, &seed, params).map_err(|e| abort(0, e))?;
    let mut chains = vec![first];
    let mut z = z0 + params.step_dz;
    while z <= z1 {
        let next = propagate_chain(grid, chains.last().unwrap(), params).map_err(|e| abort(chains.len(), e))?;
        log::debug!("traced slice {z}: {} particles", next.points.len());
        chains.push(next);
        z += params.step_dz;
    }
    Ok(chains)
}

/// Strip-triangulates chains after resampling all to the largest point count.
pub fn chains_to_mesh(chains: &[ParticleChain]) -> Result<SurfaceMesh> {
    let cols = chains.iter().map(|c| c.points.len()).max().unwrap_or(0);
    let mut vertices = Vec::with_capacity(cols * chains.len());
    for c in chains {
        let pts = if c.points.len() == cols {
            c.points.clone()
        } else {
            resample_to_count(&c.points, cols)
        };
        vertices.extend(pts.iter().map(|p| [p[0], p[1], c.z as f64]));
    }
    Ok(SurfaceMesh::from_grid(vertices, chains.len(), cols)?)
}

/// Traces a sheet from seeds on slice `z_range.0` and returns its mesh.
pub fn trace_surface(
    grid: &VoxelGrid,
    seeds: &[[f64; 2]],
    spacing: f64,
    z_range: (usize, usize),
    params: &TraceParams,
) -> Result<SurfaceMesh> {
    let chains = trace_chains(grid, seeds, spacing, z_range, params)?;
    chains_to_mesh(&chains)
}
