use unroll_core::mesh::{norm, sub, SurfaceMesh};
use unroll_core::phantom::{generate_fragment, generate_scroll, Geometry, PhantomSpec};
use unroll_core::segmentation::{propagate_chain, seed_chain, trace_surface, TraceError, TraceParams};
use unroll_core::unwrap::{flatten_mesh, UnwrapError, UvLocator};
use unroll_core::VoxelGrid;

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|d| d * d).sum::<f64>() / v.len() as f64).sqrt()
}

/// Gaussian ridge of width `sigma` centered on `y = y0 + slope * z`.
fn ridge_grid(dims: (usize, usize, usize), y0: f64, slope: f64) -> VoxelGrid {
    let (nx, ny, nz) = dims;
    let mut data = vec![0u16; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            let d = y as f64 - (y0 + slope * z as f64);
            let v = (60000.0 * (-d * d / 8.0).exp()) as u16;
            for x in 0..nx {
                data[x + nx * (y + ny * z)] = v;
            }
        }
    }
    VoxelGrid::new(dims, 1.0, data).unwrap()
}

#[test]
fn chain_stays_on_flat_ridge() {
    let grid = ridge_grid((48, 40, 24), 20.0, 0.0);
    let mut chain = seed_chain(&grid, 0, &[[4.0, 20.0], [43.0, 20.0]], 2.0).unwrap();
    let params = TraceParams::default();
    for _ in 0..20 {
        chain = propagate_chain(&grid, &chain, &params).unwrap();
        for p in &chain.points {
            assert!((p[1] - 20.0).abs() <= 0.5, "y = {}", p[1]);
        }
    }
}

#[test]
fn chain_follows_tilted_ridge() {
    let grid = ridge_grid((48, 64, 24), 12.0, 0.5);
    let mut chain = seed_chain(&grid, 0, &[[4.0, 12.0], [43.0, 12.0]], 2.0).unwrap();
    let params = TraceParams::default();
    for _ in 0..20 {
        let prev: f64 = chain.points.iter().map(|p| p[1]).sum::<f64>() / chain.points.len() as f64;
        chain = propagate_chain(&grid, &chain, &params).unwrap();
        let now: f64 = chain.points.iter().map(|p| p[1]).sum::<f64>() / chain.points.len() as f64;
        assert!((now - prev - 0.5).abs() <= 0.2, "advance {}", now - prev);
    }
}

#[test]
fn zero_volume_loses_surface() {
    let grid = VoxelGrid::filled((16, 16, 4), 1.0, 0).unwrap();
    let chain = seed_chain(&grid, 0, &[[2.0, 8.0], [13.0, 8.0]], 1.0).unwrap();
    let err = propagate_chain(&grid, &chain, &TraceParams::default()).unwrap_err();
    assert!(matches!(err, TraceError::LostSurface { .. }), "{err}");
}

#[test]
fn minimal_strip_has_two_rows() {
    let grid = ridge_grid((32, 40, 8), 20.0, 0.0);
    let m = trace_surface(&grid, &[[4.0, 20.0], [27.0, 20.0]], 2.0, (2, 3), &TraceParams::default()).unwrap();
    assert_eq!(m.rows, 2);
    assert_eq!(m.euler_characteristic(), 1);
}

fn flat_fragment() -> PhantomSpec {
    PhantomSpec {
        warp_amplitude: 0.0,
        layer_count: 1,
        ink_text: String::new(),
        width: 96,
        length: 48,
        ..PhantomSpec::default()
    }
}

#[test]
fn traced_plane_within_tolerance() {
    let spec = flat_fragment();
    let (grid, truth, _) = generate_fragment(&spec).unwrap();
    let y0 = truth.surface_point(0, 0.0, 0.0)[1];
    let nz = grid.dims().2;
    let mesh = trace_surface(&grid, &[[10.0, y0], [85.0, y0]], 2.0, (0, nz - 1), &TraceParams::default()).unwrap();
    let d: Vec<f64> = mesh.vertices.iter().map(|v| v[1] - y0).collect();
    let e = rms(&d);
    println!("plane RMS {e:.4}");
    assert!(e < 0.75, "plane RMS {e}");
}

fn single_wrap_scroll() -> PhantomSpec {
    let mut s = PhantomSpec::default_scroll();
    s.wraps = 1;
    s.ink_text = String::new();
    s.length = 32;
    s
}

/// Seeds along the spiral centerline between two angles.
fn spiral_seeds(g: &Geometry, t0: f64, t1: f64, n: usize) -> Vec<[f64; 2]> {
    let Geometry::Scroll(s) = g else { panic!("scroll expected") };
    (0..n)
        .map(|i| {
            let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
            let p = s.centerline(t, 0.0);
            [p[0], p[1]]
        })
        .collect()
}

#[test]
fn traced_spiral_within_tolerance() {
    let spec = single_wrap_scroll();
    let (grid, truth) = generate_scroll(&spec).unwrap();
    let seeds = spiral_seeds(&truth.geometry, 0.6, 5.6, 40);
    let nz = grid.dims().2;
    let mesh = trace_surface(&grid, &seeds, 2.0, (0, nz - 1), &TraceParams::default()).unwrap();
    let Geometry::Scroll(s) = &truth.geometry else { unreachable!() };
    let d: Vec<f64> = mesh.vertices.iter().map(|v| s.nearest_wrap(v[0], v[1]).1).collect();
    let e = rms(&d);
    println!("spiral RMS {e:.4}");
    assert!(e < 1.0, "spiral RMS {e}");
}

fn grid_mesh(rows: usize, cols: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> SurfaceMesh {
    let v = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
    SurfaceMesh::from_grid(v, rows, cols).unwrap()
}

#[test]
fn plane_area_ratio_exact() {
    let m = grid_mesh(30, 40, |r, c| [c as f64 * 0.7 + (r as f64 * 0.13).sin(), r as f64 * 0.9, 5.0]);
    let f = flatten_mesh(&m).unwrap();
    assert!(f.max_area_deviation() < 1e-6, "{}", f.max_area_deviation());
}

fn quarter_cylinder(rows: usize, cols: usize) -> SurfaceMesh {
    let r = 60.0;
    grid_mesh(rows, cols, |i, j| {
        let t = std::f64::consts::FRAC_PI_2 * j as f64 / (cols - 1) as f64;
        [r * t.cos(), r * t.sin(), i as f64 * 0.5]
    })
}

#[test]
fn quarter_cylinder_nearly_isometric() {
    let f = flatten_mesh(&quarter_cylinder(40, 60)).unwrap();
    assert!(f.max_area_deviation() < 1e-3, "{}", f.max_area_deviation());
}

#[test]
fn large_cylinder_strip_nearly_isometric() {
    let f = flatten_mesh(&quarter_cylinder(200, 200)).unwrap();
    assert!(f.max_area_deviation() < 1e-3, "{}", f.max_area_deviation());
}

#[test]
fn spherical_cap_reports_distortion() {
    let m = grid_mesh(21, 21, |i, j| {
        let (x, y) = (i as f64 - 10.0, j as f64 - 10.0);
        [x, y, (400.0 - x * x - y * y).sqrt()]
    });
    let f = flatten_mesh(&m).unwrap();
    assert!(f.max_area_deviation() > 1e-3);
    assert!(f.max_angle_deviation() > 0.0);
}

#[test]
fn degenerate_mesh_rejected() {
    let m = SurfaceMesh {
        vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        faces: vec![[0, 1, 2]],
        uv: None,
        rows: 1,
        cols: 3,
    };
    assert!(flatten_mesh(&m).is_err());
}

#[test]
fn uv_round_trip_on_traced_fragment() {
    let spec = PhantomSpec {
        width: 96,
        length: 40,
        ink_text: "IX".into(),
        glyph_cell: (20, 28),
        ..PhantomSpec::default()
    };
    let (grid, truth, _) = generate_fragment(&spec).unwrap();
    let seeds: Vec<[f64; 2]> = (8..=88)
        .step_by(8)
        .map(|x| {
            let p = truth.surface_point(0, x as f64, 0.0);
            [p[0], p[1]]
        })
        .collect();
    let mesh = trace_surface(&grid, &seeds, 2.0, (0, 39), &TraceParams::default()).unwrap();
    let f = flatten_mesh(&mesh).unwrap();
    let ppv = 1.0;
    let loc = UvLocator::new(&f.base).unwrap();
    let uv = f.base.uv.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for (v, t) in f.base.vertices.iter().zip(uv) {
        // Snap to the raster pixel and map back.
        let px = [(t[0] * ppv).round() / ppv, (t[1] * ppv).round() / ppv];
        let Some(p) = loc.point_at(px).or_else(|| loc.point_at(*t)) else {
            panic!("vertex uv {t:?} not located");
        };
        worst = worst.max(norm(sub(p, *v)) * ppv);
    }
    assert!(worst < 1.5, "round trip {worst}");
    assert!(matches!(flatten_mesh(&SurfaceMesh { faces: vec![], ..mesh }), Err(UnwrapError::Singular)));
}
