mod common;

use common::oracle::{agreement, camera_rays, sphere, Slab};
use teglo::camera::Camera;
use teglo::field::{render_rays, render_view, RenderSettings};
use teglo::synthetic::SyntheticScene;
use teglo::Vec3;

#[test]
fn sphere_depth_and_normals_match_closed_form() {
    let settings = RenderSettings::new(256, 0.0, 6.0);
    let scene = sphere(teglo::synthetic::DEFAULT_BETA);
    for (az, el) in [(0.0, 0.0), (40.0, 20.0), (-70.0, -10.0)] {
        let cam = Camera::orbit(az, el, 2.7, (40, 40), 30.0).unwrap();
        let rays = camera_rays(&cam, &settings);
        let a = agreement(
            &scene,
            &rays,
            |r| scene.intersect(r).map(|h| (h.t, h.normal)),
            &settings,
        );
        assert!(a.foreground > 300);
        assert!(a.depth >= 0.99, "depth agreement {}", a.depth);
        assert!(a.normal >= 0.95, "normal agreement {}", a.normal);
    }
}

#[test]
fn slab_depth_and_normals_match_closed_form() {
    let settings = RenderSettings::new(256, 0.0, 6.0);
    let slab = Slab {
        normal: Vec3::new(0.3, 0.2, -1.0).normalize(),
        offset: 0.1,
        half: 0.3,
        beta: teglo::synthetic::DEFAULT_BETA,
    };
    let cam = Camera::orbit(10.0, 5.0, 2.7, (40, 40), 30.0).unwrap();
    let rays = camera_rays(&cam, &settings);
    let a = agreement(&slab, &rays, |r| slab.entry(r), &settings);
    assert!(a.foreground > 1000);
    assert!(a.depth >= 0.99, "depth agreement {}", a.depth);
    assert!(a.normal >= 0.95, "normal agreement {}", a.normal);
}

#[test]
fn low_density_scale_biases_depth_past_the_tolerance() {
    // at β = 200 the expected termination sits well behind the surface
    let settings = RenderSettings::new(256, 0.0, 6.0);
    let scene = sphere(200.0);
    let cam = Camera::orbit(0.0, 0.0, 2.7, (24, 24), 30.0).unwrap();
    let rays = camera_rays(&cam, &settings);
    let a = agreement(
        &scene,
        &rays,
        |r| scene.intersect(r).map(|h| (h.t, h.normal)),
        &settings,
    );
    assert!(a.depth < 0.5, "depth agreement {}", a.depth);
}

#[test]
fn empty_field_renders_transparent_black_at_far() {
    let settings = RenderSettings::new(32, 0.5, 6.0);
    let scene = SyntheticScene {
        beta: 0.0,
        ..sphere(1.0)
    };
    let cam = Camera::orbit(0.0, 0.0, 2.7, (8, 8), 30.0).unwrap();
    let rays = camera_rays(&cam, &settings);
    for r in render_rays(&scene, &rays, &settings, true).unwrap() {
        assert_eq!(r.rgb, [0.0; 3]);
        assert_eq!(r.opacity, 0.0);
        assert!(r.normal.is_none());
    }
}

#[test]
fn rendered_points_sit_on_the_surface() {
    let settings = RenderSettings::new(256, 0.0, 6.0);
    let scene = sphere(teglo::synthetic::DEFAULT_BETA);
    let cam = Camera::orbit(20.0, 10.0, 2.7, (32, 32), 30.0).unwrap();
    let view = render_view(&scene, &cam, &settings).unwrap();
    let fg = view.foreground();
    assert!(!fg.is_empty());
    let c = Vec3::new(0.05, -0.05, 0.1);
    let mut close = 0;
    for &i in &fg {
        let p = view.point(i);
        if ((p - c).norm() - 0.6).abs() < 0.03 {
            close += 1;
        }
        let ((u, v), z) = cam.project(&p).unwrap();
        assert!((z - view.depth.at(i)[0]).abs() < 1e-9);
        assert!(
            ((u - 0.5) - (i % 32) as f64).abs() < 1e-6
                && ((v - 0.5) - (i / 32) as f64).abs() < 1e-6
        );
    }
    assert!(close as f64 >= 0.95 * fg.len() as f64);
}

#[test]
fn quadrature_converges_with_more_samples() {
    let scene = sphere(50.0);
    let cam = Camera::orbit(0.0, 0.0, 2.7, (1, 1), 30.0).unwrap();
    let err = |n: usize| {
        let settings = RenderSettings::new(n, 0.0, 6.0);
        let ray = camera_rays(&cam, &settings)[0];
        let r = teglo::field::render_ray(&scene, &ray, &settings).unwrap();
        let fine = RenderSettings::new(1 << 16, 0.0, 6.0);
        let reference = teglo::field::render_ray(&scene, &ray, &fine).unwrap();
        (r.opacity - reference.opacity).abs() + (r.depth - reference.depth).abs()
    };
    let errs: Vec<f64> = [8, 64, 512].iter().map(|&n| err(n)).collect();
    assert!(errs[2] < errs[0] / 10.0, "{errs:?}");
}
