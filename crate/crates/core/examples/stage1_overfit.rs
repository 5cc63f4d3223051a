//! Auto-decode a handful of objects into one tri-plane field and report the
//! per-object training PSNR.
//!
//! `cargo run --release --example stage1_overfit [steps]`

use std::time::Instant;

use teglo::field::FOREGROUND_THRESHOLD;
use teglo::pipeline::{psnr, train_stage1_on, PipelineConfig};
use teglo::synthetic::make_dataset;

fn main() -> teglo::Result<()> {
    let mut config = PipelineConfig::smoke().with_seed(2);
    config.stage1.steps = 1500;
    if let Some(steps) = std::env::args().nth(1) {
        config.stage1.steps = steps.parse().expect("steps must be an integer");
    }
    let data = make_dataset(&config.dataset)?;
    let t = Instant::now();
    let (model, loss) = train_stage1_on(&config, &data)?;
    println!(
        "{} objects, {} steps in {:.1} s, final loss {loss:.4}",
        data.len(),
        config.stage1.steps,
        t.elapsed().as_secs_f64()
    );
    for (i, o) in data.objects.iter().enumerate() {
        let view = model.render_view(i, &o.train_camera, &config.stage1.render)?;
        let gt = &o.train_view.view;
        let fg: Vec<bool> = (0..gt.opacity.pixel_count())
            .map(|p| gt.opacity.at(p)[0] > FOREGROUND_THRESHOLD)
            .collect();
        println!(
            "object {i}: PSNR {:.2} dB full frame, {:.2} dB foreground",
            psnr(&view.rgb, &gt.rgb, None)?,
            psnr(&view.rgb, &gt.rgb, Some(&fg))?
        );
    }
    Ok(())
}
