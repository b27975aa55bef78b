use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unroll_core::labeling::warp_photo;
use unroll_core::phantom::{
    generate_fragment, generate_scroll, ink_contrast, Geometry, InkMode, PhantomSpec, LABEL_INK, LABEL_SURFACE,
};
use unroll_core::IntensityWindow;

fn small_fragment() -> PhantomSpec {
    PhantomSpec {
        width: 96,
        length: 48,
        ink_text: "HI".into(),
        glyph_cell: (20, 28),
        ..PhantomSpec::default()
    }
}

fn small_scroll(wraps: usize) -> PhantomSpec {
    PhantomSpec {
        wraps,
        length: 30,
        ..PhantomSpec::default_scroll()
    }
}

#[test]
fn fragment_is_deterministic() {
    let (a, ta, pa) = generate_fragment(&small_fragment()).unwrap();
    let (b, tb, pb) = generate_fragment(&small_fragment()).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(ta.voxel_labels, tb.voxel_labels);
    assert_eq!(pa.image, pb.image);
    let other = PhantomSpec {
        seed: 2,
        ..small_fragment()
    };
    assert_ne!(generate_fragment(&other).unwrap().0.data(), a.data());
}

#[test]
fn scroll_is_deterministic() {
    let (a, _) = generate_scroll(&small_scroll(3)).unwrap();
    let (b, _) = generate_scroll(&small_scroll(3)).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn empty_text_means_no_ink() {
    let spec = PhantomSpec {
        ink_text: String::new(),
        ..small_fragment()
    };
    let (_, truth, _) = generate_fragment(&spec).unwrap();
    assert!(truth.layers.iter().all(|l| l.ink_mask.count() == 0));
    assert!(!truth.voxel_labels.contains(&LABEL_INK));
    assert!(truth.voxel_labels.contains(&LABEL_SURFACE));
}

#[test]
fn ink_mask_matches_voxel_labels() {
    let (_, truth, _) = generate_fragment(&small_fragment()).unwrap();
    let Geometry::Fragment(g) = &truth.geometry else { unreachable!() };
    let half = g.thickness / 2.0;
    let (nx, ny, nz) = g.dims;
    for layer in 0..2 {
        let mask = &truth.layers[layer].ink_mask;
        assert!(mask.count() > 0);
        for v in 0..nz {
            for u in 0..nx {
                // One voxel below the inked face.
                let y = (g.center_y(layer, u as f64, v as f64) + half - 1.0).round() as usize;
                let inked = truth.voxel_label(u, y, v) == LABEL_INK;
                assert_eq!(inked, *mask.get(u, v), "layer {layer} at ({u}, {v})");
            }
        }
    }
    // Every ink voxel maps back to an inked chart pixel.
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if truth.voxel_label(x, y, z) == LABEL_INK {
                    assert!(*truth.layers[0].ink_mask.get(x, z));
                }
            }
        }
    }
}

#[test]
fn morphology_ink_is_intensity_neutral() {
    let spec = PhantomSpec::default();
    assert_eq!(spec.ink_mode, InkMode::Morphology);
    let (grid, truth, _) = generate_fragment(&spec).unwrap();
    let w = IntensityWindow::new(0.0, 1.0).unwrap();
    let (mut ink, mut blank) = ((0.0, 0usize), (0.0, 0usize));
    for (&q, &l) in grid.data().iter().zip(&truth.voxel_labels) {
        let v = w.dequantize_value(q);
        match l {
            LABEL_INK => ink = (ink.0 + v, ink.1 + 1),
            LABEL_SURFACE => blank = (blank.0 + v, blank.1 + 1),
            _ => {}
        }
    }
    let diff = (ink.0 / ink.1 as f64 - blank.0 / blank.1 as f64).abs();
    println!("ink {} blank {} diff {diff:.5}", ink.1, blank.1);
    assert!(diff < 0.1 * spec.noise_sigma, "mean difference {diff}");
}

#[test]
fn intensity_ink_is_brighter() {
    let spec = PhantomSpec {
        ink_mode: InkMode::Intensity,
        ..small_fragment()
    };
    let (grid, truth, _) = generate_fragment(&spec).unwrap();
    let mean = |label: u8| {
        let v: Vec<f64> = grid
            .data()
            .iter()
            .zip(&truth.voxel_labels)
            .filter(|(_, &l)| l == label)
            .map(|(&q, _)| q as f64 / 65535.0)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    // Partial-volume voxels at the face dilute the full strength.
    let gap = mean(LABEL_INK) - mean(LABEL_SURFACE);
    assert!(gap > 0.5 * spec.ink_strength && gap < 1.05 * spec.ink_strength, "gap {gap}");
}

#[test]
fn single_wrap_without_texture_is_constant() {
    let spec = PhantomSpec {
        ink_text: String::new(),
        noise_sigma: 0.0,
        fiber_amplitude: 0.0,
        ..small_scroll(1)
    };
    let (grid, truth) = generate_scroll(&spec).unwrap();
    let Geometry::Scroll(g) = &truth.geometry else { unreachable!() };
    let expected = IntensityWindow::new(0.0, 1.0).unwrap().quantize_value(spec.base_intensity);
    let (nx, ny, nz) = grid.dims();
    let mut seen = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (_, d) = g.nearest_wrap(x as f64, y as f64);
                if d.abs() < g.thickness / 2.0 - 0.5 {
                    assert_eq!(grid.get(x, y, z), expected);
                    seen += 1;
                }
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn radial_rays_cross_each_wrap_once() {
    let spec = PhantomSpec {
        noise_sigma: 0.0,
        ..small_scroll(3)
    };
    let (grid, truth) = generate_scroll(&spec).unwrap();
    let Geometry::Scroll(g) = &truth.geometry else { unreachable!() };
    let (nx, ny, _) = grid.dims();
    let level = IntensityWindow::new(0.0, 1.0).unwrap().quantize_value(spec.base_intensity / 2.0);
    // Both spiral ends lie on the ray at angle 0; stay half a sheet clear.
    let seam = (g.thickness / 2.0 + 1.0) / g.r0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let phi = rng.random_range(seam..std::f64::consts::TAU - seam);
        let (dx, dy) = (phi.cos(), phi.sin());
        let (mut inside, mut crossings) = (false, 0);
        let mut r = 0.0;
        loop {
            let (x, y) = (g.center[0] + r * dx, g.center[1] + r * dy);
            let (xi, yi) = (x.round(), y.round());
            if xi < 0.0 || yi < 0.0 || xi as usize >= nx || yi as usize >= ny {
                break;
            }
            let on = grid.get(xi as usize, yi as usize, 3) > level;
            if on && !inside {
                crossings += 1;
            }
            inside = on;
            r += 0.25;
        }
        assert_eq!(crossings, 3, "ray at {phi:.3} rad");
    }
}

#[test]
fn photo_inverse_recovers_contrast() {
    for seed in 1..=4 {
        let spec = PhantomSpec {
            seed,
            ..small_fragment()
        };
        let (_, truth, photo) = generate_fragment(&spec).unwrap();
        let expected = ink_contrast(&truth.layers[0].ink_mask);
        let back = photo.applied_transform.inverse().unwrap();
        let (img, covered) = warp_photo(&photo.image, &back, expected.dims()).unwrap();
        let (w, h) = expected.dims();
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 12..h - 12 {
            for x in 12..w - 12 {
                if *covered.get(x, y) {
                    sum += (img.get(x, y) - expected.get(x, y)).abs();
                    n += 1;
                }
            }
        }
        let mad = sum / n as f64;
        assert!(mad < 0.02, "seed {seed}: mean abs diff {mad}");
    }
}
