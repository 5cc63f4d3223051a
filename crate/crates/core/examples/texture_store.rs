//! Canonical texture store: K-d tree lookups against an exhaustive scan and
//! natural-neighbor interpolation filling deleted entries.
//!
//! `cargo run --release --example texture_store`

use rand::seq::SliceRandom;
use rand::Rng;

use teglo::texture::{linear_scan, CanonicalTexture, KdTree, Source, TextureEntry};

fn pattern(uv: [f64; 2]) -> [f64; 3] {
    let s = (6.0 * uv[0]).sin() * (4.0 * uv[1]).cos();
    [0.5 + 0.4 * s, 0.5 + 0.4 * uv[0], 0.5 - 0.4 * uv[1]]
}

fn main() -> teglo::Result<()> {
    let mut rng = teglo::rng_for(3, 0);
    let points: Vec<[f64; 2]> = (0..20_000)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();

    let tree = KdTree::build(points.clone());
    let mut agree = 0;
    for _ in 0..500 {
        let q = [rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1)];
        agree += (tree.nearest(q, 8) == linear_scan(&points, q, 8)) as usize;
    }
    println!("K-d tree matches the linear scan on {agree}/500 queries");

    let mut entries: Vec<TextureEntry> = points
        .iter()
        .map(|&uv| TextureEntry {
            uv,
            rgb: pattern(uv),
            source: Source::GtPixel,
        })
        .collect();
    entries.shuffle(&mut rng);
    for keep in [1.0, 0.7, 0.3, 0.1] {
        let texture =
            CanonicalTexture::build(entries[..(keep * entries.len() as f64) as usize].to_vec())?;
        let mut sq = 0.0;
        let probes = 2000;
        for _ in 0..probes {
            let uv = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
            let (c, t) = (texture.color(uv), pattern(uv));
            sq += (0..3).map(|i| (c[i] - t[i]).powi(2)).sum::<f64>() / 3.0;
        }
        let psnr = -10.0 * (sq / probes as f64).log10();
        println!(
            "{:>5.0}% of entries kept: interpolated PSNR {psnr:.2} dB",
            100.0 * keep
        );
    }
    Ok(())
}
