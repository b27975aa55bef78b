//! Pipeline stages. Each stage reads its upstream stages' directories and
//! writes only into its own.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context};
use log::info;
use unroll_core::evaluation::{
    char_metrics, compile_cross_validation, dice_masks, parse_transcription, threshold_oracle, trace_stats, CharMetrics, FoldEval,
    PixelMetrics,
};
use unroll_core::ink_model::{load_model, save_model, trace_csv, ModelParams, Surface};
use unroll_core::labeling::{format_landmarks, parse_landmarks, Landmark};
use unroll_core::phantom::{self, PhantomKind, SurfacePhoto};
use unroll_core::unwrap::{self, flatten_mesh, sample_surface_volume};
use unroll_core::volume::{load_slice_stack, save_slice_stack};
use unroll_core::{
    AffineTransform2D, FlattenedMesh, Image2, LabelImage, Mask, PredictionImage, Rect, Region, SurfaceMesh, SurfaceVolume,
};

use crate::config::PipelineConfig;
use crate::manifest::{self, Manifest, StageRecord};
use crate::workflow::{self, TraceSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Phantom,
    Segment,
    Flatten,
    Sample,
    Label,
    Train,
    Predict,
    Composite,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Phantom,
        Stage::Segment,
        Stage::Flatten,
        Stage::Sample,
        Stage::Label,
        Stage::Train,
        Stage::Predict,
        Stage::Composite,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Segment => "segment",
            Stage::Flatten => "flatten",
            Stage::Sample => "sample",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Composite => "composite",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Phantom => &[],
            Segment => &[Phantom],
            Flatten => &[Segment],
            Sample => &[Phantom, Flatten],
            Label => &[Phantom, Flatten, Sample],
            Train => &[Sample, Label],
            Predict => &[Sample, Label, Train],
            Composite => &[Sample, Predict],
            Eval => &[Phantom, Flatten, Sample, Label, Train, Predict],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn order() -> Vec<&'static str> {
    Stage::ALL.iter().map(|s| s.name()).collect()
}

type Metrics = BTreeMap<String, f64>;

/// Executes stages inside one run directory and keeps its manifest current.
pub struct Runner {
    pub cfg: PipelineConfig,
    pub run_dir: PathBuf,
    pub manifest: Manifest,
}

impl Runner {
    /// Opens (or creates) the run directory and writes the canonical config.
    pub fn open(cfg: PipelineConfig, run_dir: PathBuf) -> anyhow::Result<Self> {
        fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        let canonical = cfg.canonical();
        let hash = cfg.hash();
        let mut manifest = match Manifest::load(&run_dir) {
            Some(m) if m.config_hash == hash => m,
            _ => Manifest::new(&hash, &canonical),
        };
        manifest.version = env!("CARGO_PKG_VERSION").into();
        let cfg_path = run_dir.join(manifest::CONFIG_FILE);
        fs::write(&cfg_path, &canonical)?;
        manifest
            .files
            .insert(manifest::CONFIG_FILE.into(), manifest::hash_bytes(canonical.as_bytes()));
        manifest.save(&run_dir)?;
        Ok(Self { cfg, run_dir, manifest })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir.join(stage.name())
    }

    /// Files outside the run directory that `stage` reads.
    fn external_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let mut v = Vec::new();
        match stage {
            Stage::Label => v.extend(self.cfg.label.landmarks.clone()),
            Stage::Eval => {
                v.extend(self.cfg.eval.transcription_truth.clone());
                v.extend(self.cfg.eval.transcription_pred.clone());
            }
            _ => {}
        }
        v
    }

    /// Runs `stage` unless its recorded fingerprint and outputs are current.
    pub fn run(&mut self, stage: Stage) -> anyhow::Result<&StageRecord> {
        let mut inputs = BTreeMap::new();
        for up in stage.upstream() {
            let rec = self
                .manifest
                .stage(up.name())
                .ok_or_else(|| anyhow!("upstream stage `{up}` has not been run"))?;
            ensure!(
                !rec.outputs.is_empty() && manifest::outputs_intact(&self.run_dir, &rec.outputs),
                "outputs of upstream stage `{up}` are missing or modified; rerun it"
            );
            inputs.extend(rec.outputs.clone());
        }
        for p in self.external_inputs(stage) {
            let h = manifest::hash_file(&p).with_context(|| format!("reading {}", p.display()))?;
            inputs.insert(p.display().to_string(), h);
        }
        let fp = manifest::fingerprint(stage.name(), &self.manifest.config_hash, &inputs);
        if let Some(prev) = self.manifest.stage(stage.name()) {
            if prev.fingerprint == fp && !prev.outputs.is_empty() && manifest::outputs_intact(&self.run_dir, &prev.outputs) {
                info!("{stage}: up to date");
                let rec = StageRecord {
                    skipped: true,
                    seconds: 0.0,
                    ..prev.clone()
                };
                self.manifest.put(rec, &order());
                self.manifest.save(&self.run_dir)?;
                return Ok(self.manifest.stage(stage.name()).expect("just inserted"));
            }
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        info!("{stage}: running");
        let t = Instant::now();
        let metrics = self.execute(stage, &dir)?;
        let seconds = t.elapsed().as_secs_f64();
        info!("{stage}: done in {seconds:.2} s");
        let outputs = manifest::hash_tree(&self.run_dir, &dir)?;
        self.manifest.put(
            StageRecord {
                name: stage.name().into(),
                fingerprint: fp,
                skipped: false,
                seconds,
                inputs,
                outputs,
                metrics,
            },
            &order(),
        );
        self.manifest.save(&self.run_dir)?;
        Ok(self.manifest.stage(stage.name()).expect("just inserted"))
    }

    fn execute(&self, stage: Stage, dir: &Path) -> anyhow::Result<Metrics> {
        let cfg = &self.cfg;
        let root = &self.run_dir;
        match stage {
            Stage::Phantom => run_phantom(cfg, dir),
            Stage::Segment => run_segment(cfg, root, dir),
            Stage::Flatten => run_flatten(root, dir),
            Stage::Sample => run_sample(cfg, root, dir),
            Stage::Label => run_label(cfg, root, dir),
            Stage::Train => run_train(cfg, root, dir),
            Stage::Predict => run_predict(cfg, root, dir),
            Stage::Composite => run_composite(cfg, root, dir),
            Stage::Eval => run_eval(cfg, root, dir),
        }
    }
}

fn volume_dir(root: &Path) -> PathBuf {
    root.join("phantom/volume")
}

fn truth_dir(root: &Path) -> PathBuf {
    root.join("phantom/ground_truth")
}

fn load_flat(root: &Path) -> anyhow::Result<FlattenedMesh> {
    let mesh = SurfaceMesh::load_obj(&root.join("flatten/mesh.obj"))?;
    Ok(FlattenedMesh::from_uv_mesh(mesh)?)
}

fn load_sv(root: &Path) -> anyhow::Result<SurfaceVolume> {
    Ok(SurfaceVolume::load(&root.join("sample/surface_volume"))?)
}

fn load_labels(root: &Path) -> anyhow::Result<LabelImage> {
    Ok(LabelImage::load(&root.join("label/labels"))?)
}

fn load_surface(root: &Path) -> anyhow::Result<Surface> {
    Ok(Surface::new(load_sv(root)?, load_labels(root)?)?)
}

fn run_phantom(cfg: &PipelineConfig, dir: &Path) -> anyhow::Result<Metrics> {
    let spec = &cfg.phantom;
    let (grid, truth, photo) = match spec.kind {
        PhantomKind::Fragment => phantom::generate_fragment(spec)?,
        PhantomKind::Scroll => {
            let (grid, truth) = phantom::generate_scroll(spec)?;
            let photo = phantom::make_photo(spec, &truth.layers[0].ink_mask);
            (grid, truth, photo)
        }
    };
    save_slice_stack(&grid, &dir.join("volume"))?;
    phantom::save_ground_truth(&truth, Some(&photo), &dir.join("ground_truth"))?;
    let (nx, ny, nz) = grid.dims();
    Ok(BTreeMap::from([
        ("nx".into(), nx as f64),
        ("ny".into(), ny as f64),
        ("nz".into(), nz as f64),
        ("ink_pixels".into(), truth.layers[0].ink_mask.count() as f64),
    ]))
}

fn run_segment(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let grid = load_slice_stack(&volume_dir(root))?;
    let geometry = cfg.phantom.geometry()?;
    let nz = grid.dims().2;
    let z_end = cfg.trace_z_end.unwrap_or(nz - 1);
    ensure!(z_end < nz, "trace.z_end {z_end} is outside the volume ({nz} slices)");
    let setup = TraceSetup {
        layer: 0,
        z_range: (cfg.trace_z_start, z_end),
        spacing: cfg.trace_spacing,
        margin: cfg.trace_margin,
        seed_every: cfg.trace_seed_every,
        params: cfg.trace.clone(),
    };
    let mesh = workflow::trace_layer(&grid, &geometry, &setup)?;
    mesh.save_obj(&dir.join("mesh.obj"))?;
    // Offset of each vertex from the true centerline at its chart position.
    let sq: f64 = mesh
        .vertices
        .iter()
        .map(|&p| {
            let uv = geometry.uv_of_point(0, p);
            let q = geometry.surface_point(0, uv[0], uv[1]);
            (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(BTreeMap::from([
        ("rows".into(), mesh.rows as f64),
        ("cols".into(), mesh.cols as f64),
        ("rms_to_centerline".into(), (sq / mesh.vertices.len() as f64).sqrt()),
    ]))
}

fn run_flatten(root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let mesh = SurfaceMesh::load_obj(&root.join("segment/mesh.obj"))?;
    let flat = flatten_mesh(&mesh)?;
    flat.base.save_obj(&dir.join("mesh.obj"))?;
    let mut csv = String::from("face,area_ratio,angle_deviation\n");
    for (i, (a, d)) in flat.area_ratio.iter().zip(&flat.angle_deviation).enumerate() {
        csv.push_str(&format!("{i},{a:.9},{d:.9}\n"));
    }
    fs::write(dir.join("distortion.csv"), csv)?;
    Ok(BTreeMap::from([
        ("max_area_deviation".into(), flat.max_area_deviation()),
        ("max_angle_deviation".into(), flat.max_angle_deviation()),
        ("uv_scale".into(), flat.uv_scale),
    ]))
}

fn run_sample(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let grid = load_slice_stack(&volume_dir(root))?;
    let flat = load_flat(root)?;
    let s = &cfg.sample;
    let sv = sample_surface_volume(&grid, &flat, s.depth, s.step, s.px_per_voxel)?;
    sv.save(&dir.join("surface_volume"))?;
    let tex = unwrap::texture_image(&sv, cfg.texture_reduction, cfg.texture_half_width)?;
    tex.image.save_png(&dir.join("texture.png"))?;
    let valid = sv.center_mask().count() as f64 / (sv.width * sv.height) as f64;
    Ok(BTreeMap::from([
        ("width".into(), sv.width as f64),
        ("height".into(), sv.height as f64),
        ("depth".into(), sv.depth as f64),
        ("valid_fraction".into(), valid),
    ]))
}

fn load_photo(root: &Path) -> anyhow::Result<SurfacePhoto> {
    let t = truth_dir(root);
    Ok(SurfacePhoto {
        image: Image2::load_tiff16(&t.join("photo.tif"))?,
        applied_transform: AffineTransform2D::from_text(&fs::read_to_string(t.join("transform.txt"))?)?,
    })
}

/// Dice of the aligned labels against the true layer-0 ink inside the
/// labeled region.
fn label_fidelity(cfg: &PipelineConfig, root: &Path, flat: &FlattenedMesh, labels: &LabelImage) -> anyhow::Result<Option<f64>> {
    let geometry = cfg.phantom.geometry()?;
    let ink = Mask::load_png(&truth_dir(root).join("layer_0/ink.png"))?;
    let truth = workflow::truth_mask_in_raster(&geometry, 0, &ink, flat, labels.dims(), cfg.sample.px_per_voxel)?;
    let pick = |m: &Mask| -> Vec<bool> {
        m.data().iter().zip(labels.region.data()).filter(|(_, &r)| r).map(|(&v, _)| v).collect()
    };
    Ok(dice_masks(&pick(&labels.ink), &pick(&truth)))
}

fn run_label(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let photo = load_photo(root)?;
    let flat = load_flat(root)?;
    let sv = load_sv(root)?;
    let landmarks: Vec<Landmark> = match &cfg.label.landmarks {
        Some(p) => parse_landmarks(&fs::read_to_string(p)?)?,
        None => {
            let geometry = cfg.phantom.geometry()?;
            workflow::truth_landmarks(&geometry, &photo.applied_transform, &flat, cfg.sample.px_per_voxel, cfg.label.landmark_grid)
        }
    };
    fs::write(dir.join("landmarks.txt"), format_landmarks(&landmarks))?;
    let labels = workflow::label_surface(&photo, &landmarks, &sv, cfg.label.method)?;
    labels.save(&dir.join("labels"))?;
    let mut m = BTreeMap::from([
        ("landmarks".into(), landmarks.len() as f64),
        ("threshold".into(), labels.threshold),
        ("ink_pixels".into(), labels.ink.count() as f64),
        ("region_pixels".into(), labels.region.count() as f64),
    ]);
    if let Some(d) = label_fidelity(cfg, root, &flat, &labels)? {
        m.insert("label_dice".into(), d);
    }
    Ok(m)
}

fn regions_text(regions: &[Region]) -> String {
    let mut s = String::from("# id surface x0 y0 x1 y1\n");
    for r in regions {
        s.push_str(&format!("{} {} {} {} {} {}\n", r.id, r.surface, r.rect.x0, r.rect.y0, r.rect.x1, r.rect.y1));
    }
    s
}

fn parse_regions(text: &str) -> anyhow::Result<Vec<Region>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        ensure!(t.len() == 6, "bad region line `{line}`");
        let n: Vec<usize> = t[1..].iter().map(|v| v.parse()).collect::<Result<_, _>>()?;
        out.push(Region {
            id: t[0].to_string(),
            surface: n[0],
            rect: Rect::new(n[1], n[2], n[3], n[4]),
        });
    }
    Ok(out)
}

fn load_regions(root: &Path) -> anyhow::Result<Vec<Region>> {
    parse_regions(&fs::read_to_string(root.join("train/regions.txt"))?)
}

fn run_train(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let surfaces = [load_surface(root)?];
    let regions = workflow::grid_regions(&surfaces[0].labels, 0, cfg.region_cols, cfg.region_rows)
        .ok_or_else(|| anyhow!("the label image has no labeled pixels"))?;
    fs::write(dir.join("regions.txt"), regions_text(&regions))?;
    let folds = workflow::train_folds(&surfaces, &regions, &cfg.train, &cfg.model)?;
    let mut leaks = 0;
    let mut last_loss = 0.0;
    for f in &folds {
        let n = workflow::fold_leaks(&surfaces, &regions, &f.train, f.holdout, &cfg.model)?;
        if n > 0 {
            bail!("{n} training patch centers fall inside holdout `{}`", regions[f.holdout].id);
        }
        leaks += n;
        let fdir = dir.join(&regions[f.holdout].id);
        fs::create_dir_all(&fdir)?;
        save_model(&f.params, &fdir.join("model.bin"))?;
        fs::write(fdir.join("trace.csv"), trace_csv(&f.trace))?;
        last_loss += f.trace.last().map_or(0.0, |t| t.loss);
    }
    Ok(BTreeMap::from([
        ("folds".into(), folds.len() as f64),
        ("leaks".into(), leaks as f64),
        ("mean_final_loss".into(), last_loss / folds.len().max(1) as f64),
    ]))
}

fn load_models(root: &Path, regions: &[Region]) -> anyhow::Result<Vec<ModelParams>> {
    regions
        .iter()
        .map(|r| Ok(load_model(&root.join("train").join(&r.id).join("model.bin"))?))
        .collect()
}

fn run_predict(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let surfaces = [load_surface(root)?];
    let regions = load_regions(root)?;
    let models = load_models(root, &regions)?;
    let pairs: Vec<(usize, &ModelParams)> = models.iter().enumerate().collect();
    let preds = workflow::predict_holdouts(&surfaces, &regions, &pairs, cfg.predict_stride)?;
    for (r, p) in regions.iter().zip(&preds) {
        p.save(&dir.join(&r.id))?;
    }
    let parts: Vec<(Rect, &PredictionImage)> = regions.iter().map(|r| r.rect).zip(&preds).collect();
    let combined = workflow::combine_predictions(surfaces[0].sv.dims(), &parts);
    combined.save(&dir.join("combined"))?;
    combined.prob.save_png(&dir.join("prediction.png"))?;
    let ink = combined.prob.data().iter().filter(|&&p| p >= cfg.eval.threshold).count();
    Ok(BTreeMap::from([
        ("folds".into(), preds.len() as f64),
        ("predicted_pixels".into(), combined.mask.count() as f64),
        ("ink_pixels".into(), ink as f64),
    ]))
}

fn run_composite(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let sv = load_sv(root)?;
    let tex = unwrap::texture_image(&sv, cfg.texture_reduction, cfg.texture_half_width)?;
    let pred = PredictionImage::load(&root.join("predict/combined"))?;
    let img = unwrap::composite(&tex, &pred)?;
    img.save_png(&dir.join("composite.png"))?;
    let mean = img.data().iter().sum::<f64>() / img.data().len().max(1) as f64;
    Ok(BTreeMap::from([("mean_intensity".into(), mean)]))
}

fn parse_trace(text: &str) -> Vec<(usize, f64)> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f.first()?.parse().ok()?, f.get(2)?.parse().ok()?))
        })
        .collect()
}

fn put_pixel(m: &mut Metrics, prefix: &str, p: &PixelMetrics) {
    m.insert(format!("{prefix}bce"), p.bce);
    for (k, v) in [("dice", p.dice), ("recall", p.recall), ("fpr", p.fpr)] {
        if let Some(v) = v {
            m.insert(format!("{prefix}{k}"), v);
        }
    }
}

fn run_eval(cfg: &PipelineConfig, root: &Path, dir: &Path) -> anyhow::Result<Metrics> {
    let e = &cfg.eval;
    let surfaces = [load_surface(root)?];
    let regions = load_regions(root)?;
    let preds: Vec<PredictionImage> = regions
        .iter()
        .map(|r| Ok(PredictionImage::load(&root.join("predict").join(&r.id))?))
        .collect::<anyhow::Result<_>>()?;
    let pooled = workflow::pooled_metrics(&surfaces, &regions, preds.iter().enumerate(), e.threshold, e.positive_class)?;
    let mut m = Metrics::new();
    put_pixel(&mut m, "", &pooled);
    fs::write(
        dir.join("metrics.csv"),
        format!("scope,{}\npooled,{}\n", PixelMetrics::CSV_HEADER, pooled.csv_row()),
    )?;

    let mut folds = format!("region,{},holdout_loss_mean,holdout_loss_std\n", PixelMetrics::CSV_HEADER);
    let mut report = format!("config {}\n\npooled over {} folds\n{pooled}\n", cfg.hash(), regions.len());
    for (r, p) in regions.iter().zip(&preds) {
        let fm = compile_cross_validation(
            &[FoldEval {
                surface: r.surface,
                rect: r.rect,
                pred: p,
                label: &surfaces[r.surface].labels,
            }],
            e.threshold,
            e.positive_class,
        )?;
        let trace = parse_trace(&fs::read_to_string(root.join("train").join(&r.id).join("trace.csv"))?);
        let (mean, std) = trace_stats(&trace).map_or((String::new(), String::new()), |(a, b)| (format!("{a:.6}"), format!("{b:.6}")));
        folds.push_str(&format!("{},{},{mean},{std}\n", r.id, fm.csv_row()));
    }
    fs::write(dir.join("folds.csv"), folds)?;

    let triples: Vec<(&SurfaceVolume, &LabelImage, Rect)> = regions
        .iter()
        .map(|r| (&surfaces[r.surface].sv, &surfaces[r.surface].labels, r.rect))
        .collect();
    let oracle = threshold_oracle(&triples, e.oracle_steps)?;
    fs::write(
        dir.join("oracle.csv"),
        format!(
            "channel,above,threshold,dice\n{},{},{:.6},{:.6}\n",
            oracle.channel, oracle.above, oracle.threshold, oracle.dice
        ),
    )?;
    m.insert("oracle_dice".into(), oracle.dice);
    report.push_str(&format!(
        "\nthreshold oracle: channel {} {} {:.4}, dice {:.4}\n",
        oracle.channel,
        if oracle.above { ">=" } else { "<" },
        oracle.threshold,
        oracle.dice
    ));

    let flat = load_flat(root)?;
    let fidelity = label_fidelity(cfg, root, &flat, &surfaces[0].labels)?;
    fs::write(
        dir.join("label_fidelity.csv"),
        format!("dice\n{}\n", fidelity.map(|d| format!("{d:.6}")).unwrap_or_default()),
    )?;
    if let Some(d) = fidelity {
        m.insert("label_dice".into(), d);
        report.push_str(&format!("label fidelity dice {d:.4}\n"));
    }

    if let (Some(gt), Some(pr)) = (&e.transcription_truth, &e.transcription_pred) {
        let gt = parse_transcription(&fs::read_to_string(gt)?)?;
        let pr = parse_transcription(&fs::read_to_string(pr)?)?;
        let c = char_metrics(&gt, &pr, e.strict)?;
        fs::write(dir.join("char_metrics.csv"), format!("{}\n{}\n", CharMetrics::CSV_HEADER, c.csv_row()))?;
        m.insert("char_recall".into(), c.recall);
        m.insert("char_fpr".into(), c.fpr);
        report.push_str(&format!("{c}\n"));
    }
    fs::write(dir.join("report.txt"), report)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_round_trip() {
        let r = vec![
            Region {
                id: "r0c0".into(),
                surface: 0,
                rect: Rect::new(1, 2, 30, 40),
            },
            Region {
                id: "r0c1".into(),
                surface: 0,
                rect: Rect::new(30, 2, 60, 40),
            },
        ];
        assert_eq!(parse_regions(&regions_text(&r)).unwrap(), r);
    }

    #[test]
    fn trace_rows_with_holdout_loss() {
        let t = "batch,loss,holdout_loss,holdout_accuracy\n100,0.5,0.6,0.7\n200,0.4,,\n";
        assert_eq!(parse_trace(t), vec![(100, 0.6)]);
    }

    #[test]
    fn upstream_precedes_stage() {
        for s in Stage::ALL {
            for u in s.upstream() {
                assert!(u < &s);
            }
        }
    }
}
