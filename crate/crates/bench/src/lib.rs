//! Shared inputs for the benchmarks.

use unroll_core::ink_model::{ModelSpec, Surface};
use unroll_core::phantom::PhantomSpec;
use unroll_core::{LabelImage, Mask, SurfaceMesh, SurfaceVolume};

/// A small fragment phantom that still has two glyphs.
pub fn small_fragment() -> PhantomSpec {
    PhantomSpec {
        width: 96,
        length: 48,
        ink_text: "HI".into(),
        glyph_cell: (20, 28),
        ..PhantomSpec::default()
    }
}

/// `rows x cols` grid on a quarter cylinder of radius 60.
pub fn quarter_cylinder(rows: usize, cols: usize) -> SurfaceMesh {
    let v = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| {
            let t = std::f64::consts::FRAC_PI_2 * j as f64 / (cols - 1) as f64;
            [60.0 * t.cos(), 60.0 * t.sin(), i as f64 * 0.5]
        })
        .collect();
    SurfaceMesh::from_grid(v, rows, cols).expect("valid grid")
}

/// Deterministic textured surface volume with a striped label image.
pub fn striped_surface(w: usize, h: usize, depth: usize) -> Surface {
    let data = (0..w * h * depth)
        .map(|i| ((i * 7919) % 1000) as f64 / 1000.0)
        .collect();
    let sv = SurfaceVolume {
        width: w,
        height: h,
        depth,
        step: 1.0,
        px_per_voxel: 1.0,
        uv_scale: 1.0,
        data,
        valid: vec![true; w * h * depth],
    };
    let labels = LabelImage {
        ink: Mask::from_fn(w, h, |x, _| (x / 6) % 2 == 0),
        region: Mask::filled(w, h, true),
        threshold: 0.5,
        transform: None,
    };
    Surface::new(sv, labels).expect("matching dims")
}

/// A reduced architecture for quick training benchmarks.
pub fn small_model() -> ModelSpec {
    ModelSpec {
        patch: (5, 5, 9),
        hidden: vec![16],
        ..ModelSpec::default()
    }
}
