use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::PoseTag;
use crate::error::Result;
use crate::synthetic::OracleView;
use crate::texture::CanonicalMap;
use crate::Vec3;

/// How well one canonical map agrees with itself across views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub samples: usize,
    pub within: usize,
    /// Share of samples whose uv gap is within tolerance.
    pub fraction: f64,
    /// Tolerance as a fraction of the uv bounding-box diagonal.
    pub relative_tolerance: f64,
    pub median_relative_error: f64,
}

/// Pairs `(point in view a, point in view b)` that the oracle says lie on
/// the same physical surface point.
///
/// A foreground pixel of view `a` is projected into view `b`; the pixel it
/// lands in must be foreground on the same scene component, and its oracle
/// point must lie within two pixel footprints of the original point, which
/// rejects occluded and grazing matches.
pub fn oracle_matches<R: Rng>(
    views: &[(PoseTag, OracleView)],
    per_pair: usize,
    rng: &mut R,
) -> Vec<(Vec3, Vec3)> {
    let mut out = Vec::new();
    for (a, (_, va)) in views.iter().enumerate() {
        let mut fg = va.view.foreground();
        fg.shuffle(rng);
        for (b, (_, vb)) in views.iter().enumerate() {
            if a == b {
                continue;
            }
            let cam = &vb.view.camera;
            let mut found = 0;
            for &i in &fg {
                if found == per_pair {
                    break;
                }
                let Some(id_a) = va.ids[i] else { continue };
                let p = va.view.point(i);
                let Ok(((u, v), depth)) = cam.project(&p) else {
                    continue;
                };
                if !(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64) {
                    continue;
                }
                let j = v as usize * cam.width + u as usize;
                let Some(id_b) = vb.ids[j] else { continue };
                let q = vb.view.point(j);
                let footprint = depth / cam.fx;
                if id_b.component == id_a.component && (q - p).norm() <= 2.0 * footprint {
                    out.push((p, q));
                    found += 1;
                }
            }
        }
    }
    out
}

/// Fraction of oracle matches whose canonical coordinates differ by at
/// most `relative_tolerance` of the diagonal of the uv bounding box of all
/// foreground points.
pub fn correspondence_alignment<R: Rng>(
    map: &dyn CanonicalMap,
    views: &[(PoseTag, OracleView)],
    per_pair: usize,
    relative_tolerance: f64,
    rng: &mut R,
) -> Result<AlignmentReport> {
    let all: Vec<Vec3> = views
        .iter()
        .flat_map(|(_, v)| v.view.foreground().into_iter().map(|i| v.view.point(i)))
        .collect();
    let uv_all = map.canonical(&all)?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for uv in &uv_all {
        for k in 0..2 {
            lo[k] = lo[k].min(uv[k]);
            hi[k] = hi[k].max(uv[k]);
        }
    }
    let diagonal = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    let matches = oracle_matches(views, per_pair, rng);
    let (ps, qs): (Vec<Vec3>, Vec<Vec3>) = matches.into_iter().unzip();
    let (up, uq) = (map.canonical(&ps)?, map.canonical(&qs)?);
    let mut errors: Vec<f64> = up
        .iter()
        .zip(&uq)
        .map(|(a, b)| {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() / diagonal.max(f64::MIN_POSITIVE)
        })
        .collect();
    let within = errors.iter().filter(|&&e| e <= relative_tolerance).count();
    errors.sort_by(f64::total_cmp);
    let samples = errors.len();
    Ok(AlignmentReport {
        samples,
        within,
        fraction: if samples == 0 {
            0.0
        } else {
            within as f64 / samples as f64
        },
        relative_tolerance,
        median_relative_error: errors.get(samples / 2).copied().unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::canonical_five_poses;
    use crate::synthetic::{
        direction_angles, oracle_render, Pattern, Shape, SyntheticScene, TextureFn,
    };

    struct Angles;

    impl CanonicalMap for Angles {
        fn canonical(&self, points: &[Vec3]) -> Result<Vec<[f64; 2]>> {
            Ok(points
                .iter()
                .map(|p| {
                    let (t, f) = direction_angles(&p.normalize());
                    [t, f.sin()]
                })
                .collect())
        }
    }

    struct Scrambled;

    impl CanonicalMap for Scrambled {
        fn canonical(&self, points: &[Vec3]) -> Result<Vec<[f64; 2]>> {
            Ok(points
                .iter()
                .map(|p| [(40.0 * p.x).sin(), (40.0 * p.y).cos()])
                .collect())
        }
    }

    fn views() -> Vec<(PoseTag, OracleView)> {
        let scene = SyntheticScene::new(
            vec![Shape::Sphere {
                center: [0.0; 3],
                radius: 0.7,
            }],
            TextureFn {
                pattern: Pattern::Gradient,
                color_a: [0.0; 3],
                color_b: [1.0; 3],
                sharpness: 1.0,
            },
        );
        canonical_five_poses(2.7, (48, 48), 30.0)
            .unwrap()
            .iter()
            .map(|(t, c)| (t, oracle_render(&scene, c).unwrap()))
            .collect()
    }

    #[test]
    fn matches_are_close_in_space() {
        let v = views();
        let m = oracle_matches(&v, 50, &mut crate::rng_for(0, 0));
        assert!(m.len() >= 500, "{} matches", m.len());
        assert!(m.iter().all(|(p, q)| (p - q).norm() < 0.1));
    }

    #[test]
    fn a_smooth_view_independent_map_is_aligned() {
        let r = correspondence_alignment(&Angles, &views(), 50, 0.02, &mut crate::rng_for(0, 0))
            .unwrap();
        assert!(r.fraction >= 0.9, "{r:?}");
    }

    #[test]
    fn a_high_frequency_map_is_not() {
        let r = correspondence_alignment(&Scrambled, &views(), 50, 0.02, &mut crate::rng_for(0, 0))
            .unwrap();
        assert!(r.fraction < 0.5, "{r:?}");
    }
}
