//! Generate the procedural dataset, render the five canonical poses of one
//! object analytically and volume-render the same scene treated as a
//! density field.
//!
//! `cargo run --release --example oracle_views [out_dir]`

use std::path::PathBuf;

use teglo::camera::canonical_five_poses;
use teglo::field::{render_view, RenderSettings};
use teglo::synthetic::{make_dataset, oracle_render, DatasetConfig};

fn main() -> teglo::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("teglo_oracle_views"),
        PathBuf::from,
    );
    std::fs::create_dir_all(&out).expect("create output directory");
    let config = DatasetConfig {
        n_objects: 4,
        ..DatasetConfig::default()
    };
    let data = make_dataset(&config)?;
    let object = &data.objects[1];
    let settings = RenderSettings::new(256, 0.0, 6.0);

    for (tag, camera) in canonical_five_poses(config.radius, (96, 96), config.fov_deg)?.iter() {
        let oracle = oracle_render(&object.scene, camera)?.view;
        let volume = render_view(&object.scene, camera, &settings)?;
        let (mut n, mut err) = (0usize, 0.0f64);
        for p in 0..camera.pixel_count() {
            if oracle.opacity.at(p)[0] > 0.5 && volume.opacity.at(p)[0] > 0.5 {
                n += 1;
                err = err.max((oracle.depth.at(p)[0] - volume.depth.at(p)[0]).abs());
            }
        }
        println!("{tag:?}: {n} surface pixels, max depth gap {err:.4}");
        oracle
            .rgb
            .save_png(&out.join(format!("{tag:?}_oracle.png").to_lowercase()))?;
        volume
            .rgb
            .save_png(&out.join(format!("{tag:?}_volume.png").to_lowercase()))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
