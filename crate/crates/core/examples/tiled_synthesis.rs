//! Texture transport through an analytic uv map: extract a texture from one
//! view, synthesize other views from it, and check that tiled rendering
//! reproduces the monolithic frame bit for bit.
//!
//! `cargo run --release --example tiled_synthesis [out_dir]`

use std::path::PathBuf;

use teglo::camera::Camera;
use teglo::field::RenderSettings;
use teglo::pipeline::{psnr, Synthesizer};
use teglo::synthetic::{direction_angles, make_dataset, oracle_render, DatasetConfig};
use teglo::texture::{extract_texture_gt, CanonicalMap};
use teglo::Vec3;

/// Spherical angles about a center; a valid uv map for star-shaped objects.
struct Angles(Vec3);

impl CanonicalMap for Angles {
    fn canonical(&self, points: &[Vec3]) -> teglo::Result<Vec<[f64; 2]>> {
        Ok(points
            .iter()
            .map(|p| {
                let (theta, phi) = direction_angles(&(p - self.0).normalize());
                [theta, phi]
            })
            .collect())
    }
}

fn main() -> teglo::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("teglo_tiled"), PathBuf::from);
    std::fs::create_dir_all(&out).expect("create output directory");
    let config = DatasetConfig {
        n_objects: 1,
        ..DatasetConfig::default()
    };
    let scene = &make_dataset(&config)?.objects[0].scene;
    let map = Angles(scene.components[0].center());
    let settings = RenderSettings::new(96, 0.0, 6.0);

    let source = oracle_render(
        scene,
        &Camera::orbit(0.0, 0.0, config.radius, (128, 128), config.fov_deg)?,
    )?
    .view;
    let texture = extract_texture_gt(&source.rgb, &source, &map)?;
    println!("texture holds {} entries", texture.len());
    let synth = Synthesizer {
        field: scene,
        map: &map,
        texture: &texture,
        settings,
    };

    for azimuth in [0.0, 30.0, 60.0] {
        let camera = Camera::orbit(azimuth, 10.0, config.radius, (128, 128), config.fov_deg)?;
        let truth = oracle_render(scene, &camera)?.view;
        let image = synth.synthesize_view(&camera)?;
        let fg: Vec<bool> = (0..camera.pixel_count())
            .map(|p| truth.opacity.at(p)[0] > 0.5)
            .collect();
        println!(
            "azimuth {azimuth:>4}: foreground PSNR {:.2} dB",
            psnr(&image, &truth.rgb, Some(&fg))?
        );
        image.save_png(&out.join(format!("azimuth_{azimuth:.0}.png")))?;
    }

    let camera = Camera::orbit(45.0, 20.0, config.radius, (256, 256), config.fov_deg)?;
    let mono = synth.tile_render(&camera, 1, None)?;
    let tiled = synth.tile_render(&camera, 4, None)?;
    let same = mono
        .data
        .iter()
        .zip(&tiled.data)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "4 tiles vs monolithic at 256²: {}",
        if same { "bit-identical" } else { "different" }
    );
    tiled.save_png(&out.join("tiled_256.png"))?;
    println!("images in {}", out.display());
    Ok(())
}
