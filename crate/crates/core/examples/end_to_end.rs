//! Full pipeline on the smoke configuration.
//!
//! `cargo run --release --example end_to_end [out_dir]`

use std::path::PathBuf;

use teglo::pipeline::{run_end_to_end, PipelineConfig};

fn main() -> teglo::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("teglo_end_to_end"),
        PathBuf::from,
    );
    let config = PipelineConfig::smoke().with_seed(7);
    let (metrics, timings) = run_end_to_end(&config, &out)?;
    for (stage, s) in &timings.seconds {
        println!("{stage:>18}: {s:7.1} s");
    }
    let a = &metrics.aggregate;
    println!("stage-1 train PSNR  {:.2} dB", a.mean_stage1_train_psnr_db);
    println!("round trip PSNR     {:.2} dB", a.mean_round_trip_psnr_db);
    println!("held-out PSNR       {:.2} dB", a.mean_heldout_psnr_db);
    println!(
        "transfer EMD        {:.4} to source, {:.4} to target",
        metrics.transfer.emd_to_source, metrics.transfer.emd_to_target
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
