//! Acceptance criteria 1-9, one pass/fail line each, plus the golden run.
//!
//! Lines go straight to the process stderr so they show up in a normal
//! `cargo test` log.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use unroll_cli::manifest::{hash_file, hash_tree, MANIFEST_FILE};
use unroll_cli::{run_config, Command, PipelineConfig, RunSummary};
use unroll_core::evaluation::{char_metrics, parse_transcription, pixel_metrics};
use unroll_core::ink_model::grad_check;
use unroll_core::mesh::{norm, sub};
use unroll_core::phantom::{generate_fragment, generate_scroll, Geometry, PhantomSpec};
use unroll_core::segmentation::{trace_surface, TraceParams};
use unroll_core::unwrap::{flatten_mesh, UvLocator};
use unroll_core::volume::{merge_slabs, quantize, FloatGrid};
use unroll_core::{Image2, IntensityWindow, LabelImage, Mask, ModelParams, PredictionImage, Slab, SurfaceMesh, VoxelGrid};

// Tolerances.
const FRAG3_RECALL: f64 = 0.47;
const FRAG3_RECALL_TOL: f64 = 0.005;
const FRAG3_MAX_SECONDS: f64 = 1.0;
const ORACLE_MAX_DICE: f64 = 0.15;
const CV_MIN_DICE: f64 = 0.60;
const CV_MAX_FPR: f64 = 0.10;
const DEFAULT_MAX_SECONDS: f64 = 600.0;
const INTENSITY_MIN_DICE: f64 = 0.90;
const INTENSITY_MAX_BATCHES: usize = 20_000;
const INTENSITY_MAX_SECONDS: f64 = 300.0;
const PLANE_AREA_TOL: f64 = 1e-6;
const CYLINDER_AREA_TOL: f64 = 1e-3;
const UV_ROUND_TRIP_PX: f64 = 1.5;
const PLANE_RMS: f64 = 0.75;
const SPIRAL_RMS: f64 = 1.0;
const GEOMETRY_MAX_SECONDS: f64 = 60.0;
const GRAD_TOL: f64 = 1e-4;
const BCE_TOL: f64 = 1e-9;
const LABEL_MIN_DICE: f64 = 0.95;

const FRAGMENT3_GT: &str = "\
# layer a
].ηN[
](o)μανδ[
].νουκ.[
# layer b
](o)ν[
](ε)(c).[
";

const FRAGMENT3_OURS: &str = "\
# layer a
].ηN[
].....[
].νουκ.[
# layer b
]..[
].(c).[
";

fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

struct Timed {
    summary: RunSummary,
    seconds: f64,
}

fn fresh_run(name: &str, text: &str, threads: Option<usize>) -> Timed {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if root.exists() {
        fs::remove_dir_all(&root).unwrap();
    }
    let cfg = PipelineConfig::parse(text, Path::new(".")).unwrap();
    let t = Instant::now();
    let summary = run_config(Command::Pipeline, cfg, Some(&root), threads).unwrap();
    Timed {
        summary,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn default_run() -> &'static Timed {
    static RUN: OnceLock<Timed> = OnceLock::new();
    RUN.get_or_init(|| fresh_run("default", "seed = 1\n", None))
}

const INTENSITY_CONFIG: &str = "\
seed = 1
phantom.ink_mode = intensity
phantom.ink_text = PAX|LVX
train.total_batches = 20000
";

const SMALL_CONFIG: &str = "\
seed = 3
phantom.width = 96
phantom.length = 48
phantom.ink_text = HI
phantom.glyph_cell = 20,28
model.patch = 5,5,9
model.hidden = 16
train.total_batches = 300
";

fn metric(s: &RunSummary, stage: &str, key: &str) -> f64 {
    s.manifest.stage(stage).unwrap().metrics.get(key).copied().unwrap_or(f64::NAN)
}

struct Tally(Vec<(u32, bool)>);

impl Tally {
    fn record(&mut self, n: u32, pass: bool, detail: String) {
        say(&format!("criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" }));
        self.0.push((n, pass));
    }
}

fn criterion2() -> (bool, String) {
    let t = Instant::now();
    let gt = parse_transcription(FRAGMENT3_GT).unwrap();
    let ours = parse_transcription(FRAGMENT3_OURS).unwrap();
    let m = char_metrics(&gt, &ours, true).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = m.gt_chars == 15 && (m.recall - FRAG3_RECALL).abs() <= FRAG3_RECALL_TOL && m.fpr == 0.0 && secs < FRAG3_MAX_SECONDS;
    (
        pass,
        format!("gt_chars {} recall {:.4} fpr {:.2} in {secs:.4} s", m.gt_chars, m.recall, m.fpr),
    )
}

fn criterion3() -> (bool, String) {
    let r = default_run();
    let (oracle, dice, fpr) = (
        metric(&r.summary, "eval", "oracle_dice"),
        metric(&r.summary, "eval", "dice"),
        metric(&r.summary, "eval", "fpr"),
    );
    let pass = oracle <= ORACLE_MAX_DICE && dice >= CV_MIN_DICE && fpr <= CV_MAX_FPR && r.seconds <= DEFAULT_MAX_SECONDS;
    (
        pass,
        format!("oracle dice {oracle:.4}, cv dice {dice:.4}, fpr {fpr:.4}, {:.1} s", r.seconds),
    )
}

fn criterion4() -> (bool, String, Timed) {
    let cfg = PipelineConfig::parse(INTENSITY_CONFIG, Path::new(".")).unwrap();
    assert!(cfg.phantom.ink_strength >= 3.0 * cfg.phantom.noise_sigma);
    assert!(cfg.train.total_batches <= INTENSITY_MAX_BATCHES);
    let r = fresh_run("intensity", INTENSITY_CONFIG, None);
    let dice = metric(&r.summary, "eval", "dice");
    let pass = dice >= INTENSITY_MIN_DICE && r.seconds <= INTENSITY_MAX_SECONDS;
    let detail = format!("cv dice {dice:.4} after {} batches, {:.1} s", cfg.train.total_batches, r.seconds);
    (pass, detail, r)
}

fn read_regions(run_dir: &Path) -> Vec<(String, [usize; 4])> {
    fs::read_to_string(run_dir.join("train/regions.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let t: Vec<&str> = l.split_whitespace().collect();
            let n: Vec<usize> = t[2..].iter().map(|v| v.parse().unwrap()).collect();
            (t[0].to_string(), [n[0], n[1], n[2], n[3]])
        })
        .collect()
}

/// Enumerates every lattice point of every training rect (a superset of
/// the actual patch centers) and counts those inside the holdout rect.
fn leak_recount(run: &RunSummary, stride: usize) -> (usize, usize) {
    let regions = read_regions(&run.run_dir);
    let mut leaks = 0;
    for (h, (_, hr)) in regions.iter().enumerate() {
        for (i, (_, r)) in regions.iter().enumerate() {
            if i == h {
                continue;
            }
            for y in (r[1]..r[3]).step_by(stride) {
                for x in (r[0]..r[2]).step_by(stride) {
                    if x >= hr[0] && x < hr[2] && y >= hr[1] && y < hr[3] {
                        leaks += 1;
                    }
                }
            }
        }
    }
    (regions.len(), leaks)
}

fn criterion5(intensity: &Timed) -> (bool, String) {
    let mut folds = 0;
    let mut leaks = 0;
    let mut recorded = 0.0;
    for run in [&default_run().summary, &intensity.summary] {
        let cfg = PipelineConfig::parse(&run.manifest.config, Path::new(".")).unwrap();
        let (f, l) = leak_recount(run, cfg.model.stride);
        folds += f;
        leaks += l;
        recorded += metric(run, "train", "leaks");
    }
    (
        leaks == 0 && recorded == 0.0 && folds > 0,
        format!("{leaks} leaked centers over {folds} folds (runner reported {recorded})"),
    )
}

fn grid_mesh(rows: usize, cols: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> SurfaceMesh {
    let v = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
    SurfaceMesh::from_grid(v, rows, cols).unwrap()
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), d| (s + d * d, n + 1));
    (s / n as f64).sqrt()
}

fn criterion6() -> (bool, String) {
    let t = Instant::now();
    let plane = grid_mesh(30, 40, |r, c| [c as f64 * 0.7 + (r as f64 * 0.13).sin(), r as f64 * 0.9, 5.0]);
    let plane_dev = flatten_mesh(&plane).unwrap().max_area_deviation();
    let cyl = grid_mesh(40, 60, |i, j| {
        let a = std::f64::consts::FRAC_PI_2 * j as f64 / 59.0;
        [60.0 * a.cos(), 60.0 * a.sin(), i as f64 * 0.5]
    });
    let cyl_dev = flatten_mesh(&cyl).unwrap().max_area_deviation();

    // Flat sheet: trace, then measure the offset from the true plane.
    let flat = PhantomSpec {
        warp_amplitude: 0.0,
        layer_count: 1,
        ink_text: String::new(),
        width: 96,
        length: 48,
        ..PhantomSpec::default()
    };
    let (grid, truth, _) = generate_fragment(&flat).unwrap();
    let y0 = truth.surface_point(0, 0.0, 0.0)[1];
    let nz = grid.dims().2;
    let mesh = trace_surface(&grid, &[[10.0, y0], [85.0, y0]], 2.0, (0, nz - 1), &TraceParams::default()).unwrap();
    let plane_rms = rms(mesh.vertices.iter().map(|v| v[1] - y0));

    let mut scroll = PhantomSpec::default_scroll();
    scroll.wraps = 1;
    scroll.ink_text = String::new();
    scroll.length = 32;
    let (grid, truth) = generate_scroll(&scroll).unwrap();
    let Geometry::Scroll(s) = &truth.geometry else { unreachable!() };
    let seeds: Vec<[f64; 2]> = (0..40)
        .map(|i| {
            let p = s.centerline(0.6 + 5.0 * i as f64 / 39.0, 0.0);
            [p[0], p[1]]
        })
        .collect();
    let mesh = trace_surface(&grid, &seeds, 2.0, (0, grid.dims().2 - 1), &TraceParams::default()).unwrap();
    let spiral_rms = rms(mesh.vertices.iter().map(|v| s.nearest_wrap(v[0], v[1]).1));

    // Raster round trip on the default run's flattened mesh.
    let run = &default_run().summary;
    let ppv = PipelineConfig::parse(&run.manifest.config, Path::new(".")).unwrap().sample.px_per_voxel;
    let fm = SurfaceMesh::load_obj(&run.run_dir.join("flatten/mesh.obj")).unwrap();
    let loc = UvLocator::new(&fm).unwrap();
    let mut worst: f64 = 0.0;
    for (v, uv) in fm.vertices.iter().zip(fm.uv.as_ref().unwrap()) {
        let px = [(uv[0] * ppv).round() / ppv, (uv[1] * ppv).round() / ppv];
        let p = loc.point_at(px).or_else(|| loc.point_at(*uv)).unwrap();
        worst = worst.max(norm(sub(p, *v)) * ppv);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = plane_dev < PLANE_AREA_TOL
        && cyl_dev < CYLINDER_AREA_TOL
        && worst < UV_ROUND_TRIP_PX
        && plane_rms < PLANE_RMS
        && spiral_rms < SPIRAL_RMS
        && secs < GEOMETRY_MAX_SECONDS;
    (
        pass,
        format!(
            "plane area dev {plane_dev:.2e}, cylinder {cyl_dev:.2e}, uv round trip {worst:.3} px, \
             plane rms {plane_rms:.3}, spiral rms {spiral_rms:.3}, {secs:.1} s"
        ),
    )
}

fn criterion7() -> (bool, String) {
    use rand::{Rng, SeedableRng};
    let spec = unroll_core::ink_model::ModelSpec::default();
    let params = ModelParams::init(spec.patch, &spec.hidden, spec.normalize, 5);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let n = spec.patch.0 * spec.patch.1 * spec.patch.2;
    let grad = [0.0, 1.0]
        .iter()
        .map(|&y| {
            let patch: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            grad_check(&params, &patch, y)
        })
        .fold(0.0, f64::max);

    let (w, h) = (5, 4);
    let label = LabelImage {
        ink: Mask::from_fn(w, h, |x, y| (x + 2 * y) % 3 == 0),
        region: Mask::filled(w, h, true),
        threshold: 0.5,
        transform: None,
    };
    let pred = PredictionImage {
        prob: Image2::filled(w, h, 0.5),
        mask: Mask::filled(w, h, true),
    };
    let bce = pixel_metrics(&pred, &label, 0.5).unwrap().bce;
    let bce_err = (bce - std::f64::consts::LN_2).abs();

    let win = IntensityWindow::new(-2.0, 6.0).unwrap();
    let fg = FloatGrid::new((4, 1, 1), vec![-2.0, 6.0, -50.0, 50.0]).unwrap();
    let q = quantize(&fg, win, 1.0).unwrap();
    let quant_ok = q.data() == [0, 65535, 0, 65535] && win.dequantize_value(0) == -2.0 && win.dequantize_value(65535) == 6.0;

    let slab = |v: u16, z| Slab {
        grid: VoxelGrid::filled((2, 2, 4), 1.0, v).unwrap(),
        z_offset: z,
    };
    let merged = merge_slabs(&[slab(0, 0), slab(600, 2)]).unwrap();
    let ramp: Vec<u16> = (0..6).map(|z| merged.get(0, 0, z)).collect();
    let ramp_ok = ramp == [0, 0, 200, 400, 600, 600];

    (
        grad < GRAD_TOL && bce_err <= BCE_TOL && quant_ok && ramp_ok,
        format!("grad rel err {grad:.2e}, |bce - ln 2| {bce_err:.1e}, quantize ok {quant_ok}, ramp {ramp:?}"),
    )
}

fn artifact_hashes(run: &RunSummary) -> BTreeMap<String, String> {
    let mut all = hash_tree(&run.run_dir, &run.run_dir).unwrap();
    all.remove(MANIFEST_FILE);
    all
}

fn criterion8() -> (bool, String) {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let a = fresh_run("det_1a", SMALL_CONFIG, Some(1));
    let b = fresh_run("det_1b", SMALL_CONFIG, Some(1));
    let c = fresh_run(&format!("det_{threads}"), SMALL_CONFIG, Some(threads));
    let (ha, hb, hc) = (artifact_hashes(&a.summary), artifact_hashes(&b.summary), artifact_hashes(&c.summary));
    let outs = |r: &RunSummary| r.manifest.stages.iter().map(|s| s.outputs.clone()).collect::<Vec<_>>();
    let pass = ha == hb && ha == hc && outs(&a.summary) == outs(&c.summary) && !ha.is_empty();
    (
        pass,
        format!("{} artifacts; 1 thread x2 identical {}, 1 vs {threads} threads identical {}", ha.len(), ha == hb, ha == hc),
    )
}

fn criterion9() -> (bool, String) {
    let d = metric(&default_run().summary, "label", "label_dice");
    (d >= LABEL_MIN_DICE, format!("label dice {d:.4} against ground-truth ink"))
}

#[test]
fn acceptance_criteria() {
    let mut tally = Tally(Vec::new());
    say("criterion 1: NOT REPRODUCIBLE | absolute metrics on real scanned fragments need the original CT data and scale; not attempted at desk scale");
    let (p, d) = criterion2();
    tally.record(2, p, d);
    let (p, d) = criterion3();
    tally.record(3, p, d);
    let (p, d, intensity) = criterion4();
    tally.record(4, p, d);
    let (p, d) = criterion5(&intensity);
    tally.record(5, p, d);
    let (p, d) = criterion6();
    tally.record(6, p, d);
    let (p, d) = criterion7();
    tally.record(7, p, d);
    let (p, d) = criterion8();
    tally.record(8, p, d);
    let (p, d) = criterion9();
    tally.record(9, p, d);
    let failed: Vec<u32> = tally.0.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The default run's metrics table and image hashes are frozen.
#[test]
fn golden_default_run() {
    let run = &default_run().summary;
    let metrics = fs::read_to_string(run.run_dir.join("eval/metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(fixture("default_metrics.csv")).unwrap());
    let expected: BTreeMap<String, String> = fs::read_to_string(fixture("default_hashes.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(' ').map(|(h, p)| (p.to_string(), h.to_string())))
        .collect();
    assert!(!expected.is_empty());
    for (path, hash) in &expected {
        assert_eq!(&hash_file(&run.run_dir.join(path)).unwrap(), hash, "{path}");
    }
    assert!(run.run_dir.join(MANIFEST_FILE).exists());
    let listed: Vec<&String> = run.manifest.stages.iter().flat_map(|s| s.outputs.keys()).collect();
    for path in expected.keys() {
        assert!(listed.contains(&path), "{path} missing from the manifest");
    }
}
