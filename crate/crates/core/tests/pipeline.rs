mod common;

use std::process::Command;

use common::{snapshot, tiny_config};
use teglo::pipeline::{run_end_to_end, RenderedDataset, Workspace};

#[test]
fn run_all_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(3);
    let (metrics, timings) = run_end_to_end(&config, dir.path()).unwrap();
    let ws = Workspace::new(dir.path());
    for p in [
        ws.config(),
        ws.stage1(),
        ws.stage2(),
        ws.metrics(),
        ws.report(),
        ws.timings(),
    ] {
        assert!(p.is_file(), "missing {}", p.display());
    }
    for stage in [
        "make_dataset",
        "train_stage1",
        "render_dataset",
        "train_stage2",
        "extract_textures",
        "evaluate",
    ] {
        assert!(timings.seconds.contains_key(stage), "no timing for {stage}");
    }
    assert_eq!(metrics.objects.len(), 2);

    let rendered = RenderedDataset::load(&ws.rendered()).unwrap();
    assert_eq!(rendered.objects.len(), 2);
    for (i, obj) in rendered.objects.iter().enumerate() {
        let root = ws.rendered().join(format!("object_{i:04}"));
        assert!(root.join("latent.f32").is_file());
        let views: Vec<_> = std::fs::read_dir(&root)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        assert_eq!(views.len(), 5);
        assert_eq!(obj.views.len(), 5);
        assert_eq!(obj.latent.len(), config.stage1.field.latent_dim);
        for v in &views {
            for f in [
                "rgb.png",
                "depth.f32",
                "normals.f32",
                "points.f32",
                "opacity.f32",
                "camera.json",
            ] {
                assert!(
                    v.path().join(f).is_file(),
                    "missing {f} in {}",
                    v.path().display()
                );
            }
        }
        for kind in ["gt", "views", "o"] {
            assert!(ws.texture(i, kind).is_file());
        }
    }
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_end_to_end(&tiny_config(11), a.path()).unwrap();
    run_end_to_end(&tiny_config(11), b.path()).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(
        sa.iter().map(|f| &f.0).collect::<Vec<_>>(),
        sb.iter().map(|f| &f.0).collect::<Vec<_>>()
    );
    for (fa, fb) in sa.iter().zip(&sb) {
        assert!(fa.1 == fb.1, "{} differs between runs", fa.0);
    }
}

#[test]
fn different_seeds_give_different_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_end_to_end(&tiny_config(1), a.path()).unwrap();
    run_end_to_end(&tiny_config(2), b.path()).unwrap();
    let ws = |d: &tempfile::TempDir| std::fs::read(Workspace::new(d.path()).metrics()).unwrap();
    assert_ne!(ws(&a), ws(&b));
}

fn teglo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teglo"))
}

#[test]
fn cli_exit_codes_distinguish_config_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[dataset]\nbogus = 1\n").unwrap();
    let out = dir.path().join("out");
    let status = teglo()
        .args([
            "--config",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "make-dataset",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("error"));

    let status = teglo()
        .args([
            "--out",
            out.to_str().unwrap(),
            "synthesize",
            "--texture",
            "missing.tglt",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn cli_stages_chain_through_the_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    tiny_config(5).save(&cfg).unwrap();
    let out = dir.path().join("ws");
    let run = |args: &[&str]| {
        let mut full = vec![
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        full.extend_from_slice(args);
        let o = teglo().args(&full).output().unwrap();
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    };
    run(&["make-dataset"]);
    run(&["train-stage1"]);
    run(&["render-dataset"]);
    run(&["train-stage2"]);
    run(&["extract-texture"]);
    run(&["eval"]);
    let ws = Workspace::new(&out);
    assert!(ws.metrics().is_file());
    assert!(ws.images().join("transfer.png").is_file());
}
