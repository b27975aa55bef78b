use proptest::prelude::*;
use unroll_core::evaluation::dice_masks;
use unroll_core::labeling::{binarize, estimate_affine, warp_photo, Landmark, ThresholdMethod};
use unroll_core::phantom::{generate_fragment, PhantomSpec};
use unroll_core::AffineTransform2D;

/// Aligns the phantom photo back onto the layer-0 chart from exact
/// landmarks and scores the thresholded labels against the true ink.
fn chart_label_dice(spec: &PhantomSpec) -> f64 {
    let (_, truth, photo) = generate_fragment(spec).unwrap();
    let mask = &truth.layers[0].ink_mask;
    let (w, h) = mask.dims();
    let pts = [
        [10.0, 10.0],
        [w as f64 - 10.0, 12.0],
        [15.0, h as f64 - 8.0],
        [w as f64 - 20.0, h as f64 - 15.0],
        [w as f64 / 2.0, h as f64 / 2.0],
    ];
    let pairs: Vec<Landmark> = pts.iter().map(|&p| (photo.applied_transform.apply(p), p)).collect();
    let t = estimate_affine(&pairs).unwrap();
    let (aligned, covered) = warp_photo(&photo.image, &t, (w, h)).unwrap();
    let labels = binarize(&aligned, &covered, ThresholdMethod::Otsu).unwrap();
    let pick = |m: &unroll_core::Mask| -> Vec<bool> {
        m.data().iter().zip(covered.data()).filter(|(_, &c)| c).map(|(&v, _)| v).collect()
    };
    dice_masks(&pick(&labels.ink), &pick(mask)).unwrap()
}

#[test]
fn aligned_labels_recover_true_ink() {
    for seed in 1..=3 {
        let spec = PhantomSpec {
            seed,
            ..PhantomSpec::default()
        };
        let d = chart_label_dice(&spec);
        println!("seed {seed}: label dice {d:.4}");
        assert!(d >= 0.95, "seed {seed}: dice {d}");
    }
}

#[test]
fn aligned_labels_recover_multi_glyph_text() {
    let spec = PhantomSpec {
        ink_text: "PAX".into(),
        length: 128,
        ..PhantomSpec::default()
    };
    let d = chart_label_dice(&spec);
    assert!(d >= 0.95, "dice {d}");
}

fn affine() -> impl Strategy<Value = AffineTransform2D> {
    (-0.3f64..0.3, 0.8f64..1.25, 0.8f64..1.25, -0.2f64..0.2, -20.0f64..20.0, -20.0f64..20.0).prop_map(|(a, sx, sy, k, tx, ty)| {
        let (c, s) = (a.cos(), a.sin());
        AffineTransform2D::new([[sx * c, -sy * s + k, tx], [sx * s, sy * c, ty]]).unwrap()
    })
}

proptest! {
    #[test]
    fn exact_landmarks_recover_any_affine(t in affine(), n in 3usize..9) {
        let pts: Vec<[f64; 2]> = (0..n).map(|i| {
            let a = i as f64 * 2.399;
            [50.0 + 40.0 * a.cos() + i as f64, 60.0 + 35.0 * a.sin()]
        }).collect();
        let pairs: Vec<Landmark> = pts.iter().map(|&p| (p, t.apply(p))).collect();
        let got = estimate_affine(&pairs).unwrap();
        for (r, e) in got.matrix().iter().flatten().zip(t.matrix().iter().flatten()) {
            prop_assert!((r - e).abs() < 1e-9, "{:?} vs {:?}", got, t);
        }
    }

    #[test]
    fn labels_stay_inside_region(vals in proptest::collection::vec(0.0f64..1.0, 64), keep in proptest::collection::vec(any::<bool>(), 64), thr in 0.0f64..1.0) {
        let img = unroll_core::Image2::from_vec(8, 8, vals);
        let region = unroll_core::Mask::from_vec(8, 8, keep);
        if region.count() == 0 {
            return Ok(());
        }
        let l = binarize(&img, &region, ThresholdMethod::Fixed(thr)).unwrap();
        for (i, r) in l.ink.data().iter().zip(l.region.data()) {
            prop_assert!(!i || *r);
        }
    }
}
