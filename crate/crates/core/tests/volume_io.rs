use std::fs;

use proptest::prelude::*;
use unroll_core::volume::{load_slice_stack, merge_slabs, quantize, save_slice_stack, FloatGrid, VolumeError};
use unroll_core::{IntensityWindow, Slab, VoxelGrid};

fn pattern_grid(dims: (usize, usize, usize)) -> VoxelGrid {
    let n = dims.0 * dims.1 * dims.2;
    let data = (0..n).map(|i| (i as u64 * 2654435761 % 65536) as u16).collect();
    VoxelGrid::new(dims, 4.0, data).unwrap()
}

#[test]
fn slice_stack_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = pattern_grid((7, 5, 4));
    g.meta.insert("energy".into(), "54keV".into());
    save_slice_stack(&g, dir.path()).unwrap();
    let back = load_slice_stack(dir.path()).unwrap();
    assert_eq!(back.dims(), g.dims());
    assert_eq!(back.voxel_size(), g.voxel_size());
    assert_eq!(back.data(), g.data());
    assert_eq!(back.meta.get("energy").map(String::as_str), Some("54keV"));

    let dir2 = tempfile::tempdir().unwrap();
    save_slice_stack(&back, dir2.path()).unwrap();
    assert_eq!(load_slice_stack(dir2.path()).unwrap().data(), g.data());
}

#[test]
fn missing_slice_is_a_gap() {
    let dir = tempfile::tempdir().unwrap();
    save_slice_stack(&pattern_grid((4, 4, 4)), dir.path()).unwrap();
    fs::remove_file(dir.path().join("0002.tif")).unwrap();
    let err = load_slice_stack(dir.path()).unwrap_err();
    assert!(err.to_string().contains("gap in slice index sequence"), "{err}");
}

#[test]
fn anisotropic_meta_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = pattern_grid((4, 4, 2));
    g.meta.insert("voxel_size_z_um".into(), "8".into());
    save_slice_stack(&g, dir.path()).unwrap();
    assert!(matches!(load_slice_stack(dir.path()), Err(VolumeError::Anisotropic(_))));
}

#[test]
fn quantize_documented_values() {
    let w = IntensityWindow::new(0.0, 1.0).unwrap();
    assert_eq!(w.quantize_value(0.0), 0);
    assert_eq!(w.quantize_value(1.0), 65535);
    assert_eq!(w.quantize_value(-5.0), 0);
    assert_eq!(w.quantize_value(0.25), 16384);
    let fg = FloatGrid::new((2, 1, 1), vec![0.25, 7.0]).unwrap();
    assert_eq!(quantize(&fg, w, 2.0).unwrap().data(), &[16384, 65535]);
}

fn constant_slab(nz: usize, value: u16, z_offset: usize) -> Slab {
    Slab {
        grid: VoxelGrid::filled((3, 2, nz), 4.0, value).unwrap(),
        z_offset,
    }
}

#[test]
fn merge_ramp_example() {
    let m = merge_slabs(&[constant_slab(4, 0, 0), constant_slab(4, 600, 2)]).unwrap();
    assert_eq!(m.dims(), (3, 2, 6));
    let z: Vec<u16> = (0..6).map(|k| m.get(1, 1, k)).collect();
    assert_eq!(z, vec![0, 0, 200, 400, 600, 600]);
}

#[test]
fn merge_reports_uncovered_range() {
    let err = merge_slabs(&[constant_slab(2, 0, 0), constant_slab(2, 0, 5)]).unwrap_err();
    let text = err.to_string();
    assert!(text.contains('2') && text.contains('5'), "{text}");
}

proptest! {
    #[test]
    fn quantize_monotone(lo in -100.0f64..100.0, span in 1e-3f64..500.0, a in -700.0f64..700.0, b in -700.0f64..700.0) {
        let w = IntensityWindow::new(lo, lo + span).unwrap();
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(w.quantize_value(a) <= w.quantize_value(b));
    }

    #[test]
    fn dequantize_within_one_step(lo in -10.0f64..10.0, span in 1e-2f64..100.0, t in 0.0f64..=1.0) {
        let hi = lo + span;
        let w = IntensityWindow::new(lo, hi).unwrap();
        let v = lo + t * span;
        let back = w.dequantize_value(w.quantize_value(v));
        prop_assert!((back - v).abs() <= span / 65535.0 + 1e-12);
    }

    #[test]
    fn trilinear_reproduces_lattice(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5, seed in 0u64..1000) {
        let n = nx * ny * nz;
        let data: Vec<u16> = (0..n as u64).map(|i| ((i + seed) * 40503 % 65536) as u16).collect();
        let g = VoxelGrid::new((nx, ny, nz), 1.0, data).unwrap();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let v = g.sample_trilinear([x as f64, y as f64, z as f64]).unwrap();
                    prop_assert_eq!(v, g.get(x, y, z) as f64);
                }
            }
        }
    }

    #[test]
    fn merge_of_agreeing_slabs_is_constant(value in any::<u16>(), n1 in 2usize..6, n2 in 2usize..6, overlap in 0usize..2) {
        let off = n1 - overlap.min(n1 - 1);
        let m = merge_slabs(&[constant_slab(n1, value, 0), constant_slab(n2, value, off)]).unwrap();
        prop_assert_eq!(m.dims().2, off + n2);
        prop_assert!(m.data().iter().all(|&v| v == value));
    }
}
