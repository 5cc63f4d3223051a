//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so it can share expensive fixtures
//! (the trained Stage-1 field and both Stage-2 models) across criteria and
//! report every criterion even when an early one fails.

mod common;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use common::oracle::{agreement, camera_rays, sphere, Slab};
use teglo::camera::{canonical_five_poses, Camera};
use teglo::correspondence::{train_stage2, CorrespondenceModel, Stage2Mode};
use teglo::field::{RenderSettings, Stage1Model};
use teglo::image::Image;
use teglo::pipeline::{
    color_histogram, correspondence_alignment, histogram_emd, oracle_dataset, psnr, run_end_to_end,
    stage2_dataset, train_stage1_on, transfer, PipelineConfig, Synthesizer,
};
use teglo::synthetic::{make_dataset, oracle_render, SyntheticDataset, DEFAULT_BETA};
use teglo::texture::{
    extract_texture_gt, nni_weights, synthesize_from_view, CanonicalTexture, KdTree, Source,
    TextureEntry,
};
use teglo::Vec3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Report {
    failures: usize,
}

impl Report {
    /// Run `f`, fold the wall-clock limit into the verdict and print one line.
    fn check(
        &mut self,
        id: u32,
        name: &str,
        limit: Duration,
        f: impl FnOnce() -> teglo::Result<Outcome>,
    ) {
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && t.elapsed() <= limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            self.failures += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{secs:.1} s, limit {:.0} s]",
            if pass { "PASS" } else { "FAIL" },
            limit.as_secs_f64()
        );
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn mask_of(view: &teglo::field::RenderedView) -> Vec<bool> {
    (0..view.opacity.pixel_count())
        .map(|i| view.opacity.at(i)[0] > teglo::field::FOREGROUND_THRESHOLD)
        .collect()
}

fn bit_identical(a: &Image, b: &Image) -> bool {
    a.dims() == b.dims()
        && a.data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

struct Fixture {
    config: PipelineConfig,
    data: SyntheticDataset,
    stage1: Option<Stage1Model>,
    full: Option<CorrespondenceModel>,
}

impl Fixture {
    fn stage1(&self) -> &Stage1Model {
        self.stage1.as_ref().expect("stage-1 fixture")
    }

    fn full(&self) -> &CorrespondenceModel {
        self.full.as_ref().expect("stage-2 fixture")
    }
}

fn c2_stage1(fx: &mut Fixture) -> teglo::Result<Outcome> {
    let (model, _) = train_stage1_on(&fx.config, &fx.data)?;
    let (mut masked, mut full) = (0.0, 0.0);
    for (i, o) in fx.data.objects.iter().enumerate() {
        let r = model.render_view(i, &o.train_camera, &fx.config.stage1.render)?;
        let gt = &o.train_view.view;
        masked += psnr(&r.rgb, &gt.rgb, Some(&mask_of(gt)))?;
        full += psnr(&r.rgb, &gt.rgb, None)?;
    }
    let n = fx.data.len() as f64;
    let (masked, full) = (masked / n, full / n);
    fx.stage1 = Some(model);
    Ok(outcome(
        masked >= 28.0 && full >= 28.0,
        format!(
            "{} objects at {}², {} steps: mean train PSNR {masked:.2} dB foreground, {full:.2} dB full frame (≥ 28)",
            fx.data.len(),
            fx.config.dataset.resolution,
            fx.config.stage1.steps
        ),
    ))
}

fn c8_alignment(fx: &mut Fixture) -> teglo::Result<Outcome> {
    let stage1 = fx.stage1.as_ref().expect("stage-1 fixture");
    let source = stage2_dataset(&oracle_dataset(&fx.data, stage1)?)?;
    let poses = canonical_five_poses(
        fx.config.dataset.radius,
        (128, 128),
        fx.config.dataset.fov_deg,
    )?;
    let views: Vec<Vec<_>> = fx
        .data
        .objects
        .iter()
        .map(|o| {
            poses
                .iter()
                .map(|(tag, cam)| Ok((tag, oracle_render(&o.scene, cam)?)))
                .collect::<teglo::Result<Vec<_>>>()
        })
        .collect::<teglo::Result<_>>()?;
    let mut parts = Vec::new();
    let mut pass = true;
    for mode in [Stage2Mode::Full, Stage2Mode::CoordOnly] {
        let mut cfg = fx.config.stage2.clone();
        cfg.mode = mode;
        let (model, _) = train_stage2(&source, &cfg)?;
        let (mut within, mut samples, mut worst) = (0, 0, 1.0f64);
        let mut medians = Vec::new();
        for (i, v) in views.iter().enumerate() {
            let map = model.object_map(stage1.latents.row(i)?)?;
            let r = correspondence_alignment(&map, v, 50, 0.02, &mut teglo::rng_for(8, i as u64))?;
            within += r.within;
            samples += r.samples;
            worst = worst.min(r.fraction);
            medians.push(r.median_relative_error);
        }
        let frac = within as f64 / samples.max(1) as f64;
        medians.sort_by(f64::total_cmp);
        pass &= samples > 0 && frac >= 0.9;
        parts.push(format!(
            "{mode:?} {:.1}% of {samples} within 2% of the uv diagonal (worst object {:.1}%, median error {:.2}%)",
            100.0 * frac,
            100.0 * worst,
            100.0 * medians[medians.len() / 2]
        ));
        if mode == Stage2Mode::Full {
            fx.full = Some(model);
        }
    }
    Ok(outcome(pass, parts.join("; ")))
}

fn c1_round_trip(fx: &Fixture) -> teglo::Result<Outcome> {
    let (stage1, map_model) = (fx.stage1(), fx.full());
    let mut worst = f64::INFINITY;
    for (i, o) in fx.data.objects.iter().enumerate() {
        let cam = o.train_camera.rescaled(128, 128)?;
        let gt = oracle_render(&o.scene, &cam)?.view;
        let geometry = stage1.render_view(i, &cam, &fx.config.render)?;
        let map = map_model.object_map(stage1.latents.row(i)?)?;
        let texture = extract_texture_gt(&gt.rgb, &geometry, &map)?;
        let field = stage1.instance_for(i)?;
        let synth = Synthesizer {
            field: &field,
            map: &map,
            texture: &texture,
            settings: fx.config.render,
        };
        let image = synth.synthesize_view(&cam)?;
        worst = worst.min(psnr(&image, &gt.rgb, Some(&mask_of(&geometry)))?);
    }
    Ok(outcome(
        worst >= 50.0,
        format!(
            "t_GT round trip at 128² on {} objects: worst foreground PSNR {worst:.2} dB (≥ 50)",
            fx.data.len()
        ),
    ))
}

fn c3_gradients() -> teglo::Result<Outcome> {
    let mut worst: Option<(&str, f64)> = None;
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, store, f, filter) in common::gradient_cases() {
        let r = common::run_gradient_case(&store, &f, filter, 0);
        pass &= r.checked >= common::FD_SAMPLES && r.max_rel_err <= common::FD_TOLERANCE;
        parts.push(format!("{name} {}", r.checked));
        if worst.is_none_or(|w| r.max_rel_err > w.1) {
            worst = Some((name, r.max_rel_err));
        }
    }
    let (wn, we) = worst.unwrap();
    Ok(outcome(
        pass,
        format!(
            "entries checked: {}; worst relative error {we:.2e} ({wn}, ≤ 1e-4)",
            parts.join(", ")
        ),
    ))
}

fn c4_volume_rendering() -> teglo::Result<Outcome> {
    let settings = RenderSettings::new(256, 0.0, 6.0);
    let scene = sphere(DEFAULT_BETA);
    let slab = Slab {
        normal: Vec3::new(0.3, 0.2, -1.0).normalize(),
        offset: 0.1,
        half: 0.3,
        beta: DEFAULT_BETA,
    };
    let (mut worst_d, mut worst_n) = (1.0f64, 1.0f64);
    let mut fold = |x: common::oracle::Agreement| {
        worst_d = worst_d.min(x.depth);
        worst_n = worst_n.min(x.normal);
    };
    for (az, el) in [(0.0, 0.0), (40.0, 20.0), (-70.0, -10.0)] {
        let cam = Camera::orbit(az, el, 2.7, (48, 48), 30.0)?;
        fold(agreement(
            &scene,
            &camera_rays(&cam, &settings),
            |r| scene.intersect(r).map(|h| (h.t, h.normal)),
            &settings,
        ));
    }
    // the slab faces -z, so it is only viewed from the front
    let cam = Camera::orbit(10.0, 5.0, 2.7, (48, 48), 30.0)?;
    fold(agreement(
        &slab,
        &camera_rays(&cam, &settings),
        |r| slab.entry(r),
        &settings,
    ));
    Ok(outcome(
        worst_d >= 0.99 && worst_n >= 0.95,
        format!(
            "sphere and slab at 256 samples: depth within 2Δt for {:.2}% (≥ 99%), normals within 2° for {:.2}% (≥ 95%)",
            100.0 * worst_d,
            100.0 * worst_n
        ),
    ))
}

fn random_entries(rng: &mut impl Rng, n: usize) -> Vec<TextureEntry> {
    (0..n)
        .map(|_| TextureEntry {
            uv: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            rgb: [rng.gen(), rng.gen(), rng.gen()],
            source: Source::GtPixel,
        })
        .collect()
}

fn c5_nni() -> teglo::Result<Outcome> {
    let mut rng = teglo::rng_for(5, 0);
    let cases = 100_000;
    let (mut bad_weights, mut bad_hits, mut bad_range, mut hits) = (0, 0, 0, 0);
    for _ in 0..cases {
        let n = rng.gen_range(1..16);
        let mut texture = CanonicalTexture::build(random_entries(&mut rng, n))?;
        texture.k = rng.gen_range(1..8);
        if rng.gen_bool(0.25) {
            hits += 1;
            let e = texture.entries()[rng.gen_range(0..n)];
            if texture.color(e.uv) != e.rgb {
                bad_hits += 1;
            }
            continue;
        }
        let q = [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)];
        let neighbors = texture.knn(q, texture.k);
        let d: Vec<f64> = neighbors.iter().map(|n| n.1).collect();
        let w = nni_weights(&d);
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            bad_weights += 1;
        }
        let c = texture.color(q);
        for ch in 0..3 {
            let lo = neighbors
                .iter()
                .map(|n| n.0.rgb[ch])
                .fold(f64::INFINITY, f64::min);
            let hi = neighbors
                .iter()
                .map(|n| n.0.rgb[ch])
                .fold(f64::NEG_INFINITY, f64::max);
            if !(lo <= c[ch] && c[ch] <= hi) {
                bad_range += 1;
            }
        }
    }
    Ok(outcome(
        bad_weights + bad_hits + bad_range == 0,
        format!(
            "{cases} cases ({hits} exact hits): {bad_weights} bad weight sets, {bad_hits} inexact hits, {bad_range} out-of-range channels"
        ),
    ))
}

fn brute_force(points: &[[f64; 2]], q: [f64; 2], k: usize) -> Vec<usize> {
    let d2 = |i: usize| (points[i][0] - q[0]).powi(2) + (points[i][1] - q[1]).powi(2);
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn c6_kdtree() -> teglo::Result<Outcome> {
    let mut rng = teglo::rng_for(6, 0);
    let cases = 10_000;
    let mut mismatches = 0;
    for case in 0..cases {
        let n = rng.gen_range(1..400);
        // every other case on a coarse lattice, where ties are common
        let lattice = case % 2 == 0;
        let point = |rng: &mut teglo::SeededRng| {
            if lattice {
                [
                    rng.gen_range(0..10) as f64 * 0.1,
                    rng.gen_range(0..10) as f64 * 0.1,
                ]
            } else {
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            }
        };
        let points: Vec<[f64; 2]> = (0..n).map(|_| point(&mut rng)).collect();
        let q = point(&mut rng);
        let k = rng.gen_range(1..24);
        let tree = KdTree::build(points.clone());
        let got: Vec<usize> = tree.nearest(q, k).into_iter().map(|(i, _)| i).collect();
        if got != brute_force(&points, q, k) {
            mismatches += 1;
        }
    }
    Ok(outcome(
        mismatches == 0,
        format!("{cases} build/query cases: {mismatches} differ from the exhaustive scan"),
    ))
}

fn c7_holes(fx: &Fixture) -> teglo::Result<Outcome> {
    let (stage1, map_model) = (fx.stage1(), fx.full());
    let speckle = |out: &[f64], gt: &[f64]| {
        out.iter().any(|v| !v.is_finite())
            || (out.iter().all(|&v| v < 0.02) && gt.iter().any(|&v| v > 0.1))
    };
    let (mut worst, mut speckles) = (f64::INFINITY, 0usize);
    let mut stage1_worst = f64::INFINITY;
    for (i, o) in fx.data.objects.iter().enumerate() {
        let cam = o.train_camera.rescaled(128, 128)?;
        let gt = oracle_render(&o.scene, &cam)?.view;
        let map = map_model.object_map(stage1.latents.row(i)?)?;
        let drop_30 = |t: CanonicalTexture| {
            let mut e = t.into_entries();
            e.shuffle(&mut teglo::rng_for(7, i as u64));
            e.truncate(e.len() * 7 / 10);
            CanonicalTexture::build(e)
        };

        let holed = drop_30(extract_texture_gt(&gt.rgb, &gt, &map)?)?;
        let image = synthesize_from_view(&holed, &gt, &map)?;
        let mask = mask_of(&gt);
        worst = worst.min(psnr(&image, &gt.rgb, Some(&mask))?);
        speckles += (0..mask.len())
            .filter(|&p| mask[p] && speckle(image.at(p), gt.rgb.at(p)))
            .count();

        let geometry = stage1.render_view(i, &cam, &fx.config.render)?;
        let holed = drop_30(extract_texture_gt(&gt.rgb, &geometry, &map)?)?;
        let field = stage1.instance_for(i)?;
        let synth = Synthesizer {
            field: &field,
            map: &map,
            texture: &holed,
            settings: fx.config.render,
        };
        let image = synth.synthesize_view(&cam)?;
        stage1_worst = stage1_worst.min(psnr(&image, &gt.rgb, Some(&mask_of(&geometry)))?);
    }
    Ok(outcome(
        worst >= 30.0 && speckles == 0,
        format!(
            "30% of t_GT deleted, 128², oracle surface points: worst PSNR {worst:.2} dB (≥ 30), {speckles} NaN/black foreground pixels; \
             on Stage-1 geometry (not gated) worst {stage1_worst:.2} dB"
        ),
    ))
}

fn c9_lipschitz(fx: &Fixture) -> teglo::Result<Outcome> {
    let (stage1, model) = (fx.stage1(), fx.full());
    let bound = model.lipschitz_bound();
    let mut rng = teglo::rng_for(9, 0);
    let (mut violations, mut max_ratio) = (0, 0.0f64);
    let point = |rng: &mut teglo::SeededRng| {
        Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    };
    for _ in 0..1000 {
        let obj = rng.gen_range(0..fx.data.len());
        let (code, _) = model.latent_map(stage1.latents.row(obj)?)?;
        let (x, y) = (point(&mut rng), point(&mut rng));
        // half the pairs are close, where a loose bound is hardest to meet
        let y = if rng.gen_bool(0.5) {
            x + (y - x) * 1e-3
        } else {
            y
        };
        let uv = model.correspond(&[x, y], &code)?;
        let du = (uv[0][0] - uv[1][0]).abs().max((uv[0][1] - uv[1][1]).abs());
        let dx = (x - y).abs().max();
        if du > bound * dx {
            violations += 1;
        }
        max_ratio = max_ratio.max(du / (bound * dx));
    }
    Ok(outcome(
        violations == 0,
        format!("1000 pairs against Π softplus(c) = {bound:.4e}: {violations} violations, largest ratio {max_ratio:.3e}"),
    ))
}

fn c10_tiling(fx: &Fixture) -> teglo::Result<Outcome> {
    let (stage1, map_model) = (fx.stage1(), fx.full());
    let o = &fx.data.objects[0];
    let geometry = stage1.render_view(0, &o.train_camera, &fx.config.render)?;
    let map = map_model.object_map(stage1.latents.row(0)?)?;
    let texture = extract_texture_gt(&o.train_view.view.rgb, &geometry, &map)?;
    let field = stage1.instance_for(0)?;
    let synth = Synthesizer {
        field: &field,
        map: &map,
        texture: &texture,
        settings: fx.config.render,
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for res in [256, 1024] {
        let cam = o.train_camera.rescaled(res, res)?;
        let mono = synth.tile_render(&cam, 1, None)?;
        let tiled = synth.tile_render(&cam, 4, None)?;
        let same = bit_identical(&mono, &tiled);
        pass &= same;
        parts.push(format!(
            "{res}²: {}",
            if same { "bit-identical" } else { "differs" }
        ));
    }
    Ok(outcome(
        pass,
        format!("4 tiles vs monolithic, {}", parts.join(", ")),
    ))
}

fn c11_transfer(fx: &Fixture) -> teglo::Result<Outcome> {
    let (stage1, map_model) = (fx.stage1(), fx.full());
    // objects 0 and 4 are both spheres, so geometry does not confound color
    let (a, b) = (0, 4);
    let texture = |i: usize| -> teglo::Result<CanonicalTexture> {
        let o = &fx.data.objects[i];
        let geometry = stage1.render_view(i, &o.train_camera, &fx.config.render)?;
        extract_texture_gt(
            &o.train_view.view.rgb,
            &geometry,
            &map_model.object_map(stage1.latents.row(i)?)?,
        )
    };
    let (ta, tb) = (texture(a)?, texture(b)?);
    let cam = Camera::orbit(
        0.0,
        0.0,
        fx.config.dataset.radius,
        (64, 64),
        fx.config.dataset.fov_deg,
    )?;

    let (field_a, map_a) = (
        stage1.instance_for(a)?,
        map_model.object_map(stage1.latents.row(a)?)?,
    );
    let own = Synthesizer {
        field: &field_a,
        map: &map_a,
        texture: &ta,
        settings: fx.config.render,
    }
    .synthesize_view(&cam)?;
    let identity = bit_identical(
        &transfer(&ta, &field_a, &map_a, &cam, &fx.config.render)?,
        &own,
    );

    let (field_b, map_b) = (
        stage1.instance_for(b)?,
        map_model.object_map(stage1.latents.row(b)?)?,
    );
    let moved = transfer(&ta, &field_b, &map_b, &cam, &fx.config.render)?;
    let fg = mask_of(&stage1.render_view(b, &cam, &fx.config.render)?);
    let colors: Vec<[f64; 3]> = (0..fg.len())
        .filter(|&p| fg[p])
        .map(|p| [moved.at(p)[0], moved.at(p)[1], moved.at(p)[2]])
        .collect();
    let bins = fx.config.eval.histogram_bins;
    let hist = |c: &[[f64; 3]]| color_histogram(c, bins);
    let of = |t: &CanonicalTexture| t.entries().iter().map(|e| e.rgb).collect::<Vec<_>>();
    let out = hist(&colors);
    let to_a = histogram_emd(&out, &hist(&of(&ta)))?;
    let to_b = histogram_emd(&out, &hist(&of(&tb)))?;
    Ok(outcome(
        identity && to_a < to_b,
        format!(
            "identity transfer {}; texture {a} on geometry {b}: EMD {to_a:.4} to the source texture vs {to_b:.4} to the target's",
            if identity { "bit-identical" } else { "differs" }
        ),
    ))
}

fn c12_determinism() -> teglo::Result<Outcome> {
    let (x, y) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = PipelineConfig::smoke().with_seed(12);
    run_end_to_end(&config, x.path())?;
    run_end_to_end(&config, y.path())?;
    let (sx, sy) = (common::snapshot(x.path()), common::snapshot(y.path()));
    let images = sx.iter().filter(|f| f.0.ends_with(".png")).count();
    let same_names = sx.iter().map(|f| &f.0).eq(sy.iter().map(|f| &f.0));
    let differing: Vec<&str> = sx
        .iter()
        .zip(&sy)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let has_metrics = sx.iter().any(|f| f.0 == "metrics.json");
    Ok(outcome(
        same_names && differing.is_empty() && has_metrics && images > 0,
        format!(
            "two seeded smoke runs: {} files compared ({images} PNG, metrics.json), {} differ",
            sx.len(),
            if differing.is_empty() {
                "none".to_string()
            } else {
                differing.join(", ")
            }
        ),
    ))
}

fn main() {
    let started = Instant::now();
    let config = PipelineConfig::default().with_seed(0);
    let data = make_dataset(&config.dataset).expect("dataset");
    let mut fx = Fixture {
        config,
        data,
        stage1: None,
        full: None,
    };
    let mut report = Report { failures: 0 };

    report.check(3, "gradient suite", minutes(5), c3_gradients);
    report.check(
        4,
        "volume-rendering oracle",
        minutes(3),
        c4_volume_rendering,
    );
    report.check(5, "NNI properties", minutes(1), c5_nni);
    report.check(6, "K-d tree correctness", minutes(2), c6_kdtree);
    report.check(2, "Stage-1 overfit", minutes(45), || c2_stage1(&mut fx));
    if fx.stage1.is_some() {
        report.check(8, "correspondence alignment", minutes(60), || {
            c8_alignment(&mut fx)
        });
    }
    if fx.full.is_some() {
        report.check(1, "pixel-transport round trip", minutes(2), || {
            c1_round_trip(&fx)
        });
        report.check(7, "hole robustness", minutes(2), || c7_holes(&fx));
        report.check(9, "Lipschitz property", minutes(1), || c9_lipschitz(&fx));
        report.check(10, "tiled rendering", minutes(5), || c10_tiling(&fx));
        report.check(11, "identity texture transfer", minutes(3), || {
            c11_transfer(&fx)
        });
    } else {
        for (id, name) in [
            (1, "pixel-transport round trip"),
            (7, "hole robustness"),
            (9, "Lipschitz property"),
            (10, "tiled rendering"),
            (11, "identity texture transfer"),
        ] {
            report.failures += 1;
            println!("FAIL {id:>2} {name}: no trained models to evaluate");
        }
    }
    report.check(12, "determinism", minutes(10), c12_determinism);

    println!(
        "acceptance: {} of 12 criteria failed ({:.0} s total)",
        report.failures,
        started.elapsed().as_secs_f64()
    );
    if report.failures > 0 {
        std::process::exit(1);
    }
}
