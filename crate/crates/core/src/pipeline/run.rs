use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Stage2Geometry};
use super::layout::{object_dir, read_json, write_json, RenderedDataset, RenderedObject};
use super::metrics::{color_histogram, histogram_emd, psnr};
use super::synthesis::{transfer, Synthesizer};
use crate::camera::{canonical_five_poses, Camera, FivePoseSet, PoseTag};
use crate::correspondence::{
    evaluate_stage2, train_stage2, CorrespondenceModel, Stage2Dataset, Stage2Fit, Stage2Object,
};
use crate::error::{Error, Result};
use crate::field::{train_stage1, RenderSettings, RenderedView, Stage1Model};
use crate::image::Image;
use crate::synthetic::{make_dataset, DatasetConfig, SyntheticDataset};
use crate::texture::{
    apply_edit, extract_texture_gt, extract_texture_views, load_texture, merge, save_texture,
    CanonicalTexture, EditLayer,
};

/// Fixed file names under one output directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

macro_rules! paths {
    ($($name:ident => $file:expr),* $(,)?) => {
        $(pub fn $name(&self) -> PathBuf { self.root.join($file) })*
    };
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    paths! {
        config => "config.json",
        dataset => "dataset",
        stage1 => "stage1.json",
        rendered => "rendered",
        stage2 => "stage2.json",
        textures => "textures",
        images => "images",
        metrics => "metrics.json",
        report => "metrics.md",
        timings => "timings.json",
    }

    /// `kind` is `gt`, `views` or `o`.
    pub fn texture(&self, object: usize, kind: &str) -> PathBuf {
        self.textures()
            .join(format!("object_{object:04}_{kind}.tglt"))
    }

    pub fn ensure(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }
}

/// Persist a synthetic dataset. The dataset is a pure function of its
/// config, so `dataset.json` alone is enough to load it back; the training
/// images and oracle views are written for inspection and external use.
pub fn save_dataset(data: &SyntheticDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("dataset.json"), &data.config)?;
    let train = dir.join("train");
    for (i, o) in data.objects.iter().enumerate() {
        let d = object_dir(&train, i);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        o.train_view.view.rgb.save_png(&d.join("rgb.png"))?;
        write_json(&d.join("camera.json"), &o.train_camera)?;
        write_json(&d.join("scene.json"), &o.scene)?;
    }
    let oracle = RenderedDataset {
        objects: data
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| RenderedObject {
                index: i,
                latent: Vec::new(),
                views: o
                    .eval_views
                    .iter()
                    .map(|(t, v)| (*t, v.view.clone()))
                    .collect(),
            })
            .collect(),
    };
    oracle.save(&dir.join("oracle"))
}

pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let config: DatasetConfig = read_json(&dir.join("dataset.json"))?;
    config.validate()?;
    make_dataset(&config)
}

/// Five canonical poses at the dataset's camera radius.
pub fn five_poses(config: &DatasetConfig, resolution: usize) -> Result<FivePoseSet> {
    canonical_five_poses(config.radius, (resolution, resolution), config.fov_deg)
}

/// Five `render_view` calls per object.
pub fn render_dataset(
    model: &Stage1Model,
    objects: &[usize],
    poses: &FivePoseSet,
    settings: &RenderSettings,
) -> Result<RenderedDataset> {
    let mut out = Vec::with_capacity(objects.len());
    for &i in objects {
        let latent = model.latents.row(i)?.to_vec();
        let views = poses
            .iter()
            .map(|(t, c)| Ok((t, model.render_view(i, c, settings)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(RenderedObject {
            index: i,
            latent,
            views,
        });
    }
    Ok(RenderedDataset { objects: out })
}

/// Oracle renders at the five poses paired with Stage-1 latents.
pub fn oracle_dataset(data: &SyntheticDataset, model: &Stage1Model) -> Result<RenderedDataset> {
    let objects = data
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            Ok(RenderedObject {
                index: i,
                latent: model.latents.row(i)?.to_vec(),
                views: o
                    .eval_views
                    .iter()
                    .map(|(t, v)| {
                        let mut view = v.view.clone();
                        view.latent_index = Some(i);
                        (*t, view)
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedDataset { objects })
}

pub fn stage2_dataset(rendered: &RenderedDataset) -> Result<Stage2Dataset> {
    Stage2Dataset::new(
        rendered
            .objects
            .iter()
            .map(|o| Stage2Object {
                latent: o.latent.clone(),
                views: o.views.iter().map(|(_, v)| v.clone()).collect(),
            })
            .collect(),
    )
}

/// Textures of one object: the training pixels, the rendered views, and
/// their merge.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTextures {
    pub gt: CanonicalTexture,
    pub views: CanonicalTexture,
    pub merged: CanonicalTexture,
}

pub fn extract_object_textures(
    config: &PipelineConfig,
    stage1: &Stage1Model,
    stage2: &CorrespondenceModel,
    object: usize,
    train_image: &Image,
    train_camera: &Camera,
    views: &[RenderedView],
) -> Result<ObjectTextures> {
    let map = stage2.object_map(stage1.latents.row(object)?)?;
    let train_view = stage1.render_view(object, train_camera, &config.render)?;
    let configure = |t| configure_texture(config, t);
    let gt = configure(extract_texture_gt(train_image, &train_view, &map)?);
    let views = configure(extract_texture_views(views, &map)?);
    let merged = configure(merge(&gt, Some(&views))?);
    Ok(ObjectTextures { gt, views, merged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMetric {
    pub pose: PoseTag,
    pub psnr_db: f64,
    pub psnr_db_unmasked: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub index: usize,
    /// Stage-1 render against its training image.
    pub stage1_train_psnr_db: f64,
    pub stage1_train_psnr_db_unmasked: f64,
    /// Synthesis with the training-pixel texture at the training pose.
    pub round_trip_psnr_db: f64,
    pub round_trip_psnr_db_unmasked: f64,
    /// Synthesis with the merged texture against oracle views.
    pub heldout: Vec<PoseMetric>,
    pub texture_entries_gt: usize,
    pub texture_entries_views: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean_stage1_train_psnr_db: f64,
    pub mean_round_trip_psnr_db: f64,
    pub mean_heldout_psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMetrics {
    pub source: usize,
    pub target: usize,
    /// Color-histogram distance of the transferred render to each texture.
    pub emd_to_source: f64,
    pub emd_to_target: f64,
}

/// Deterministic summary of one run; wall-clock times are kept separately
/// in [`Timings`] so this file is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub note: String,
    pub objects: Vec<ObjectMetrics>,
    pub aggregate: AggregateMetrics,
    pub stage2_fit: Stage2Fit,
    pub lipschitz_bound: f64,
    pub transfer: TransferMetrics,
    /// Absent when metrics are recomputed from saved models.
    pub stage1_final_loss: Option<f64>,
    pub stage2_final_loss: Option<f64>,
}

pub const METRICS_NOTE: &str =
    "PSNR in dB with peak 1; masked values use the opacity > 0.5 foreground; LPIPS is not computed";

/// Wall-clock seconds per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: BTreeMap<String, f64>,
}

impl Timings {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.seconds
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        Ok(out)
    }
}

fn foreground_mask(view: &RenderedView) -> Vec<bool> {
    (0..view.opacity.pixel_count())
        .map(|i| view.opacity.at(i)[0] > crate::field::FOREGROUND_THRESHOLD)
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn texture_colors(t: &CanonicalTexture) -> Vec<[f64; 3]> {
    t.entries().iter().map(|e| e.rgb).collect()
}

fn image_colors(img: &Image, mask: &[bool]) -> Vec<[f64; 3]> {
    (0..img.pixel_count())
        .filter(|&i| mask[i])
        .map(|i| {
            let p = img.at(i);
            [p[0], p[1], p[2]]
        })
        .collect()
}

/// Trained models and textures of a finished run.
pub struct RunArtifacts {
    pub data: SyntheticDataset,
    pub stage1: Stage1Model,
    pub rendered: RenderedDataset,
    pub stage2: CorrespondenceModel,
    pub textures: Vec<ObjectTextures>,
}

pub fn train_stage1_on(
    config: &PipelineConfig,
    data: &SyntheticDataset,
) -> Result<(Stage1Model, f64)> {
    let (model, report) = train_stage1(&data.training_views(), &config.stage1, None)?;
    Ok((model, report.losses.last().copied().unwrap_or(f64::NAN)))
}

pub fn rendered_for_stage1(
    config: &PipelineConfig,
    model: &Stage1Model,
) -> Result<RenderedDataset> {
    let poses = five_poses(&config.dataset, config.dataset.resolution)?;
    let ids: Vec<usize> = (0..model.latents.len()).collect();
    render_dataset(model, &ids, &poses, &config.render)
}

pub fn train_stage2_on(
    config: &PipelineConfig,
    data: &SyntheticDataset,
    stage1: &Stage1Model,
    rendered: &RenderedDataset,
) -> Result<(CorrespondenceModel, f64)> {
    let source = match config.stage2_geometry {
        Stage2Geometry::Rendered => stage2_dataset(rendered)?,
        Stage2Geometry::Oracle => stage2_dataset(&oracle_dataset(data, stage1)?)?,
    };
    let (model, report) = train_stage2(&source, &config.stage2)?;
    Ok((model, report.losses.last().copied().unwrap_or(f64::NAN)))
}

pub fn extract_all_textures(
    config: &PipelineConfig,
    data: &SyntheticDataset,
    stage1: &Stage1Model,
    stage2: &CorrespondenceModel,
    rendered: &RenderedDataset,
) -> Result<Vec<ObjectTextures>> {
    data.objects
        .iter()
        .zip(&rendered.objects)
        .enumerate()
        .map(|(i, (o, r))| {
            let views: Vec<RenderedView> = r.views.iter().map(|(_, v)| v.clone()).collect();
            extract_object_textures(
                config,
                stage1,
                stage2,
                i,
                &o.train_view.view.rgb,
                &o.train_camera,
                &views,
            )
        })
        .collect()
}

/// Evaluate every object and write the evaluation images under
/// `images/`.
pub fn evaluate(
    config: &PipelineConfig,
    art: &RunArtifacts,
    ws: &Workspace,
) -> Result<(Vec<ObjectMetrics>, TransferMetrics)> {
    let s = &config.render;
    let mut objects = Vec::new();
    for (i, o) in art.data.objects.iter().enumerate() {
        let dir = object_dir(&ws.images(), i);
        ws.ensure(&dir)?;
        let field = art.stage1.instance_for(i)?;
        let map = art.stage2.object_map(art.stage1.latents.row(i)?)?;
        let train_render = art.stage1.render_view(i, &o.train_camera, s)?;
        let gt_mask = foreground_mask(&o.train_view.view);
        let image = &o.train_view.view.rgb;
        train_render.rgb.save_png(&dir.join("stage1_train.png"))?;

        let tex = &art.textures[i];
        let syn = |texture| Synthesizer {
            field: &field,
            map: &map,
            texture,
            settings: *s,
        };
        let round = syn(&tex.gt).tile_render(
            &o.train_camera,
            config.synthesis.tiles.min(o.train_camera.height),
            None,
        )?;
        round.save_png(&dir.join("round_trip.png"))?;
        let rt_mask = foreground_mask(&train_render);

        let mut heldout = Vec::new();
        for (tag, ov) in &o.eval_views {
            let img = syn(&tex.merged).synthesize_view(&ov.view.camera)?;
            img.save_png(&dir.join(format!("synth_{}.png", tag.name())))?;
            let mask = foreground_mask(&ov.view);
            heldout.push(PoseMetric {
                pose: *tag,
                psnr_db: psnr(&img, &ov.view.rgb, Some(&mask))?,
                psnr_db_unmasked: psnr(&img, &ov.view.rgb, None)?,
            });
        }
        objects.push(ObjectMetrics {
            index: i,
            stage1_train_psnr_db: psnr(&train_render.rgb, image, Some(&gt_mask))?,
            stage1_train_psnr_db_unmasked: psnr(&train_render.rgb, image, None)?,
            round_trip_psnr_db: psnr(&round, image, Some(&rt_mask))?,
            round_trip_psnr_db_unmasked: psnr(&round, image, None)?,
            heldout,
            texture_entries_gt: tex.gt.len(),
            texture_entries_views: tex.views.len(),
        });
    }

    let (a, b) = (config.eval.transfer_source, config.eval.transfer_target);
    let front = five_poses(&config.dataset, config.dataset.resolution)?
        .get(PoseTag::Front)
        .clone();
    let target_field = art.stage1.instance_for(b)?;
    let target_map = art.stage2.object_map(art.stage1.latents.row(b)?)?;
    let moved = transfer(
        &art.textures[a].merged,
        &target_field,
        &target_map,
        &front,
        s,
    )?;
    moved.save_png(&ws.images().join("transfer.png"))?;
    let target_view = art.stage1.render_view(b, &front, s)?;
    let bins = config.eval.histogram_bins;
    let h = color_histogram(&image_colors(&moved, &foreground_mask(&target_view)), bins);
    let transfer_metrics = TransferMetrics {
        source: a,
        target: b,
        emd_to_source: histogram_emd(
            &h,
            &color_histogram(&texture_colors(&art.textures[a].merged), bins),
        )?,
        emd_to_target: histogram_emd(
            &h,
            &color_histogram(&texture_colors(&art.textures[b].merged), bins),
        )?,
    };

    let edited = edit_square(
        &art.textures[a].merged,
        config.eval.edit_square,
        config.eval.edit_color,
    )?;
    let field = art.stage1.instance_for(a)?;
    let map = art.stage2.object_map(art.stage1.latents.row(a)?)?;
    let syn = Synthesizer {
        field: &field,
        map: &map,
        texture: &edited,
        settings: *s,
    };
    syn.synthesize_view(&front)?
        .save_png(&ws.images().join("edit.png"))?;
    let hr = config.synthesis.highres;
    let big = five_poses(&config.dataset, hr)?.get(PoseTag::Front).clone();
    let syn = Synthesizer {
        texture: &art.textures[a].merged,
        ..syn
    };
    syn.tile_render(
        &big,
        config.synthesis.tiles,
        config.synthesis.memory_cap_bytes,
    )?
    .save_png(&ws.images().join("highres.png"))?;
    Ok((objects, transfer_metrics))
}

/// Paint a centered square of `color` covering `side` of each edit axis.
pub fn edit_square(
    texture: &CanonicalTexture,
    side: f64,
    color: [f64; 3],
) -> Result<CanonicalTexture> {
    const EDIT_RES: usize = 64;
    let mut layer = EditLayer::blank(EDIT_RES, EDIT_RES, texture.frame());
    let half = 0.5 * side * EDIT_RES as f64;
    let c = 0.5 * EDIT_RES as f64;
    for y in 0..EDIT_RES {
        for x in 0..EDIT_RES {
            if (x as f64 + 0.5 - c).abs() <= half && (y as f64 + 0.5 - c).abs() <= half {
                layer
                    .image
                    .pixel_mut(x, y)
                    .copy_from_slice(&[color[0], color[1], color[2], 1.0]);
            }
        }
    }
    apply_edit(texture, &layer)
}

fn report_markdown(m: &Metrics) -> String {
    let mut s = String::from("# Metrics\n\n");
    s.push_str(&format!("{}.\n\n", m.note));
    s.push_str("| object | stage-1 train | round trip | held-out mean |\n|---|---|---|---|\n");
    for o in &m.objects {
        let h = mean(o.heldout.iter().map(|p| p.psnr_db));
        s.push_str(&format!(
            "| {} | {:.2} | {:.2} | {:.2} |\n",
            o.index, o.stage1_train_psnr_db, o.round_trip_psnr_db, h
        ));
    }
    s.push_str(&format!(
        "\nMean stage-1 train PSNR {:.2} dB, round trip {:.2} dB, held-out {:.2} dB.\n",
        m.aggregate.mean_stage1_train_psnr_db,
        m.aggregate.mean_round_trip_psnr_db,
        m.aggregate.mean_heldout_psnr_db
    ));
    s.push_str(&format!(
        "Stage-2 fit: point MSE {:.3e}, normal MSE {:.3e}, color {:.2} dB. Lipschitz bound {:.4}.\n",
        m.stage2_fit.point_mse, m.stage2_fit.normal_mse, m.stage2_fit.rgb_psnr, m.lipschitz_bound
    ));
    s.push_str(&format!(
        "Transfer {} -> {}: EMD to source {:.4}, to target {:.4}.\n",
        m.transfer.source, m.transfer.target, m.transfer.emd_to_source, m.transfer.emd_to_target
    ));
    s
}

/// Dataset, both training stages, texture extraction, synthesis, editing,
/// transfer and metrics, with every artifact written under `root`.
pub fn run_end_to_end(config: &PipelineConfig, root: &Path) -> Result<(Metrics, Timings)> {
    let mut config = config.clone();
    config.resolve_seeds();
    config.validate()?;
    let ws = Workspace::new(root);
    ws.ensure(root)?;
    config.save(&ws.config())?;
    let mut timings = Timings::default();

    let data = timings.time("make_dataset", || {
        let d = make_dataset(&config.dataset)?;
        save_dataset(&d, &ws.dataset())?;
        Ok(d)
    })?;
    let (stage1, stage1_loss) = timings.time("train_stage1", || {
        let out = train_stage1_on(&config, &data)?;
        out.0.save(&ws.stage1())?;
        Ok(out)
    })?;
    let rendered = timings.time("render_dataset", || {
        let r = rendered_for_stage1(&config, &stage1)?;
        r.save(&ws.rendered())?;
        Ok(r)
    })?;
    let (stage2, stage2_loss) = timings.time("train_stage2", || {
        let out = train_stage2_on(&config, &data, &stage1, &rendered)?;
        out.0.save(&ws.stage2())?;
        Ok(out)
    })?;
    let textures = timings.time("extract_textures", || {
        let t = extract_all_textures(&config, &data, &stage1, &stage2, &rendered)?;
        ws.ensure(&ws.textures())?;
        for (i, tex) in t.iter().enumerate() {
            save_texture(&tex.gt, &ws.texture(i, "gt"))?;
            save_texture(&tex.views, &ws.texture(i, "views"))?;
            save_texture(&tex.merged, &ws.texture(i, "o"))?;
        }
        Ok(t)
    })?;
    let art = RunArtifacts {
        data,
        stage1,
        rendered,
        stage2,
        textures,
    };
    let metrics = timings.time("evaluate", || {
        write_metrics(&config, &art, &ws, (Some(stage1_loss), Some(stage2_loss)))
    })?;
    write_json(&ws.timings(), &timings)?;
    Ok((metrics, timings))
}

/// Evaluate, then write `metrics.json` and `metrics.md`.
pub fn write_metrics(
    config: &PipelineConfig,
    art: &RunArtifacts,
    ws: &Workspace,
    (stage1_final_loss, stage2_final_loss): (Option<f64>, Option<f64>),
) -> Result<Metrics> {
    let (objects, transfer) = evaluate(config, art, ws)?;
    let metrics = Metrics {
        note: METRICS_NOTE.into(),
        aggregate: AggregateMetrics {
            mean_stage1_train_psnr_db: mean(objects.iter().map(|o| o.stage1_train_psnr_db)),
            mean_round_trip_psnr_db: mean(objects.iter().map(|o| o.round_trip_psnr_db)),
            mean_heldout_psnr_db: mean(
                objects
                    .iter()
                    .flat_map(|o| o.heldout.iter().map(|p| p.psnr_db)),
            ),
        },
        objects,
        stage2_fit: evaluate_stage2(&art.stage2, &stage2_dataset(&art.rendered)?)?,
        lipschitz_bound: art.stage2.lipschitz_bound(),
        transfer,
        stage1_final_loss,
        stage2_final_loss,
    };
    write_json(&ws.metrics(), &metrics)?;
    fs::write(ws.report(), report_markdown(&metrics)).map_err(|e| Error::io(ws.report(), e))?;
    Ok(metrics)
}

/// Reload everything a finished (or partially rerun) workspace holds.
pub fn load_artifacts(config: &PipelineConfig, ws: &Workspace) -> Result<RunArtifacts> {
    let data = load_dataset(&ws.dataset())?;
    let stage1 = Stage1Model::load(&ws.stage1(), config.stage1.field)?;
    let rendered = RenderedDataset::load(&ws.rendered())?;
    let stage2 = CorrespondenceModel::load(&ws.stage2(), config.stage2.network)?;
    let textures = (0..data.len())
        .map(|i| {
            let load =
                |kind| load_texture(&ws.texture(i, kind)).map(|t| configure_texture(config, t));
            Ok(ObjectTextures {
                gt: load("gt")?,
                views: load("views")?,
                merged: load("o")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunArtifacts {
        data,
        stage1,
        rendered,
        stage2,
        textures,
    })
}

/// Apply the configured neighbor count and edit rule.
pub fn configure_texture(config: &PipelineConfig, mut t: CanonicalTexture) -> CanonicalTexture {
    t.k = config.texture.k;
    t.rule = config.texture.edit_rule;
    t
}
