use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use teglo::camera::Camera;
use teglo::correspondence::{train_stage2, CorrespondenceModel, Stage2Mode};
use teglo::error::{Error, Result};
use teglo::field::{invert_image, Stage1Model, TrainingView};
use teglo::image::Image;
use teglo::pipeline::{
    configure_texture, extract_all_textures, load_artifacts, load_dataset, read_json,
    rendered_for_stage1, run_end_to_end, save_dataset, stage2_dataset, train_stage1_on, transfer,
    write_json, write_metrics, PipelineConfig, RenderedDataset, Synthesizer, Workspace,
};
use teglo::synthetic::make_dataset;
use teglo::texture::{apply_edit, load_texture, save_texture, EditLayer};

/// Canonical texture mapping for latent-conditioned radiance fields.
///
/// Every command works inside one output directory (`--out`) holding the
/// config, dataset, checkpoints, textures, images and metrics.
#[derive(Parser)]
#[command(name = "teglo", version)]
struct Cli {
    /// TOML or JSON pipeline config; defaults to `<out>/config.json`, then
    /// built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "teglo_out")]
    out: PathBuf,
    /// Tiles for synthesis.
    #[arg(long, global = true)]
    tiles: Option<usize>,
    /// Stage-2 training terms: `full` or `coord-only`.
    #[arg(long, global = true)]
    mode: Option<Stage2Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write the resolved config.
    MakeDataset {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        res: Option<usize>,
        /// Use the small smoke configuration as the base.
        #[arg(long)]
        smoke: bool,
    },
    /// Fit the tri-plane auto-decoder to the training images.
    TrainStage1,
    /// Render five views per object with the Stage-1 model.
    RenderDataset,
    /// Train the correspondence networks on a rendered dataset.
    TrainStage2 {
        /// Rendered dataset directory; defaults to `<out>/rendered`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Extract training-pixel, view and merged textures for every object.
    ExtractTexture,
    /// Render one object from an orbit camera using a texture.
    Synthesize {
        #[arg(long, default_value_t = 0)]
        object: usize,
        /// Texture file; defaults to the object's merged texture.
        #[arg(long)]
        texture: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0)]
        elevation: f64,
        /// Image side; defaults to the dataset resolution.
        #[arg(long)]
        res: Option<usize>,
        #[arg(long, default_value = "synth.png")]
        image: PathBuf,
    },
    /// Lay an RGBA edit image over a texture's canonical frame.
    Edit {
        #[arg(long)]
        texture: PathBuf,
        #[arg(long)]
        edit_png: PathBuf,
        #[arg(long, default_value = "edited.tglt")]
        output: PathBuf,
    },
    /// Render a texture onto another object's geometry.
    Transfer {
        #[arg(long)]
        texture: PathBuf,
        #[arg(long)]
        target_object: usize,
        #[arg(long, default_value_t = 0.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0)]
        elevation: f64,
        #[arg(long, default_value = "transfer.png")]
        image: PathBuf,
    },
    /// Fit a latent to a single posed image with all weights frozen.
    Invert {
        #[arg(long)]
        image: PathBuf,
        /// Camera JSON as written in the dataset directory.
        #[arg(long)]
        camera: PathBuf,
    },
    /// Recompute metrics from the saved models and textures.
    Eval,
    /// Run every stage and write metrics.
    RunAll,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let ws_config = Workspace::new(&cli.out).config();
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if ws_config.exists() => PipelineConfig::load(&ws_config)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = Some(s);
    }
    config.resolve_seeds();
    if let Some(t) = cli.tiles {
        config.synthesis.tiles = t;
    }
    if let Some(m) = cli.mode {
        config.stage2.mode = m;
    }
    config.validate()?;
    Ok(config)
}

fn orbit(config: &PipelineConfig, azimuth: f64, elevation: f64, res: usize) -> Result<Camera> {
    Camera::orbit(
        azimuth,
        elevation,
        config.dataset.radius,
        (res, res),
        config.dataset.fov_deg,
    )
}

fn stage1(config: &PipelineConfig, ws: &Workspace) -> Result<Stage1Model> {
    Stage1Model::load(&ws.stage1(), config.stage1.field)
}

fn stage2(config: &PipelineConfig, ws: &Workspace) -> Result<CorrespondenceModel> {
    CorrespondenceModel::load(&ws.stage2(), config.stage2.network)
}

fn render_with(
    config: &PipelineConfig,
    ws: &Workspace,
    object: usize,
    texture: &Path,
    camera: &Camera,
    tiles: usize,
) -> Result<Image> {
    let s1 = stage1(config, ws)?;
    let s2 = stage2(config, ws)?;
    let tex = configure_texture(config, load_texture(texture)?);
    let field = s1.instance_for(object)?;
    let map = s2.object_map(s1.latents.row(object)?)?;
    Synthesizer {
        field: &field,
        map: &map,
        texture: &tex,
        settings: config.render,
    }
    .tile_render(camera, tiles, config.synthesis.memory_cap_bytes)
}

fn run(cli: Cli) -> Result<()> {
    let ws = Workspace::new(&cli.out);
    let mut config = resolve_config(&cli)?;
    match cli.command {
        Command::MakeDataset { n, res, smoke } => {
            if smoke {
                let seed = config.seed;
                config = PipelineConfig::smoke();
                config.seed = seed;
                config.resolve_seeds();
            }
            if let Some(n) = n {
                config.dataset.n_objects = n;
            }
            if let Some(r) = res {
                config.dataset.resolution = r;
            }
            config.validate()?;
            ws.ensure(&ws.root)?;
            config.save(&ws.config())?;
            let data = make_dataset(&config.dataset)?;
            save_dataset(&data, &ws.dataset())?;
            println!(
                "{} objects at {}² in {}",
                data.len(),
                config.dataset.resolution,
                ws.dataset().display()
            );
        }
        Command::TrainStage1 => {
            let data = load_dataset(&ws.dataset())?;
            let (model, loss) =
                train_stage1_on(&config, &data).map_err(|e| e.in_stage("train_stage1"))?;
            model.save(&ws.stage1())?;
            println!("stage 1 trained, final loss {loss:.6}");
        }
        Command::RenderDataset => {
            let model = stage1(&config, &ws)?;
            let rendered =
                rendered_for_stage1(&config, &model).map_err(|e| e.in_stage("render_dataset"))?;
            rendered.save(&ws.rendered())?;
            println!(
                "{} objects rendered to {}",
                rendered.objects.len(),
                ws.rendered().display()
            );
        }
        Command::TrainStage2 { dataset } => {
            let dir = dataset.unwrap_or_else(|| ws.rendered());
            let data = stage2_dataset(&RenderedDataset::load(&dir)?)?;
            let (model, report) =
                train_stage2(&data, &config.stage2).map_err(|e| e.in_stage("train_stage2"))?;
            model.save(&ws.stage2())?;
            println!(
                "stage 2 ({:?}) trained, final loss {:.6}",
                config.stage2.mode,
                report.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::ExtractTexture => {
            let data = load_dataset(&ws.dataset())?;
            let s1 = stage1(&config, &ws)?;
            let s2 = stage2(&config, &ws)?;
            let rendered = RenderedDataset::load(&ws.rendered())?;
            let textures = extract_all_textures(&config, &data, &s1, &s2, &rendered)
                .map_err(|e| e.in_stage("extract_textures"))?;
            ws.ensure(&ws.textures())?;
            for (i, t) in textures.iter().enumerate() {
                save_texture(&t.gt, &ws.texture(i, "gt"))?;
                save_texture(&t.views, &ws.texture(i, "views"))?;
                save_texture(&t.merged, &ws.texture(i, "o"))?;
            }
            println!(
                "{} textures written to {}",
                textures.len(),
                ws.textures().display()
            );
        }
        Command::Synthesize {
            object,
            texture,
            azimuth,
            elevation,
            res,
            image,
        } => {
            let texture = texture.unwrap_or_else(|| ws.texture(object, "o"));
            let cam = orbit(
                &config,
                azimuth,
                elevation,
                res.unwrap_or(config.dataset.resolution),
            )?;
            render_with(
                &config,
                &ws,
                object,
                &texture,
                &cam,
                config.synthesis.tiles.min(cam.height),
            )?
            .save_png(&image)?;
            println!("wrote {}", image.display());
        }
        Command::Edit {
            texture,
            edit_png,
            output,
        } => {
            let tex = configure_texture(&config, load_texture(&texture)?);
            let layer = EditLayer {
                image: Image::load_png(&edit_png, 4)?,
                frame: tex.frame(),
            };
            let edited = apply_edit(&tex, &layer)?;
            save_texture(&edited, &output)?;
            println!(
                "{} edit entries added, wrote {}",
                edited.len() - tex.len(),
                output.display()
            );
        }
        Command::Transfer {
            texture,
            target_object,
            azimuth,
            elevation,
            image,
        } => {
            let s1 = stage1(&config, &ws)?;
            let s2 = stage2(&config, &ws)?;
            let tex = configure_texture(&config, load_texture(&texture)?);
            let field = s1.instance_for(target_object)?;
            let map = s2.object_map(s1.latents.row(target_object)?)?;
            let cam = orbit(&config, azimuth, elevation, config.dataset.resolution)?;
            transfer(&tex, &field, &map, &cam, &config.render)?.save_png(&image)?;
            println!("wrote {}", image.display());
        }
        Command::Invert { image, camera } => {
            let s1 = stage1(&config, &ws)?;
            let camera: Camera = read_json(&camera)?;
            let target = TrainingView {
                image: Image::load_png(&image, 3)?,
                camera: camera.clone(),
            };
            let inv = invert_image(&s1, &target, &config.stage1, &config.inversion)
                .map_err(|e| e.in_stage("invert"))?;
            if let Some(reason) = &inv.diverged {
                return Err(Error::Diverged {
                    stage: "invert",
                    step: inv.losses.len(),
                    reason: reason.clone(),
                });
            }
            let dir = ws.root.join("inversion");
            ws.ensure(&dir)?;
            write_json(&dir.join("latent.json"), &inv.latent)?;
            teglo::field::render_view(&s1.instance(&inv.latent)?, &camera, &config.render)?
                .rgb
                .save_png(&dir.join("render.png"))?;
            println!("best loss {:.6}, wrote {}", inv.best_loss, dir.display());
        }
        Command::Eval => {
            let art = load_artifacts(&config, &ws)?;
            let m = write_metrics(&config, &art, &ws, (None, None))
                .map_err(|e| e.in_stage("evaluate"))?;
            print_summary(&m);
        }
        Command::RunAll => {
            let (m, _) = run_end_to_end(&config, &ws.root)?;
            print_summary(&m);
        }
    }
    Ok(())
}

fn print_summary(m: &teglo::pipeline::Metrics) {
    let a = &m.aggregate;
    println!("stage-1 train PSNR {:.2} dB", a.mean_stage1_train_psnr_db);
    println!("round-trip PSNR    {:.2} dB", a.mean_round_trip_psnr_db);
    println!("held-out PSNR      {:.2} dB", a.mean_heldout_psnr_db);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
