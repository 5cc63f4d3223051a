use proptest::prelude::*;

use teglo::texture::{nni_color, nni_weights, CanonicalTexture, KdTree, Source, TextureEntry};

/// Exhaustive k-NN ordered by (squared distance, index), written
/// independently of the library's own reference scan.
fn brute_force(points: &[[f64; 2]], q: [f64; 2], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let d2 = |i: usize| (points[i][0] - q[0]).powi(2) + (points[i][1] - q[1]).powi(2);
    idx.sort_by(|&a, &b| d2(a).partial_cmp(&d2(b)).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Coordinates on a coarse lattice so duplicates and distance ties are
/// common.
fn lattice_point() -> impl Strategy<Value = [f64; 2]> {
    (0i32..12, 0i32..12).prop_map(|(x, y)| [x as f64 * 0.25, y as f64 * 0.25])
}

fn free_point() -> impl Strategy<Value = [f64; 2]> {
    (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y)| [x, y])
}

proptest! {
    #[test]
    fn kdtree_matches_brute_force_on_lattices(
        points in prop::collection::vec(lattice_point(), 1..200),
        q in lattice_point(),
        k in 1usize..16,
    ) {
        let tree = KdTree::build(points.clone());
        let got: Vec<usize> = tree.nearest(q, k).into_iter().map(|(i, _)| i).collect();
        prop_assert_eq!(got, brute_force(&points, q, k));
    }

    #[test]
    fn kdtree_matches_brute_force_on_free_points(
        points in prop::collection::vec(free_point(), 1..300),
        q in free_point(),
        k in 1usize..10,
    ) {
        let tree = KdTree::build(points.clone());
        let got = tree.nearest(q, k);
        let want = brute_force(&points, q, k);
        prop_assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), want.clone());
        for ((_, d), i) in got.iter().zip(&want) {
            let p = points[*i];
            prop_assert_eq!(*d, ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
    }

    #[test]
    fn nni_weights_are_a_partition_of_unity(d in prop::collection::vec(1e-9f64..10.0, 1..12)) {
        let w = nni_weights(&d);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // closer neighbors never get less weight
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] < d[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn nni_color_stays_within_neighbor_range(
        n in prop::collection::vec(((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1e-6f64..2.0), 1..8),
    ) {
        let neighbors: Vec<([f64; 3], f64)> = n.iter().map(|&((r, g, b), d)| ([r, g, b], d)).collect();
        let c = nni_color(&neighbors);
        for ch in 0..3 {
            let lo = neighbors.iter().map(|x| x.0[ch]).fold(f64::INFINITY, f64::min);
            let hi = neighbors.iter().map(|x| x.0[ch]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= c[ch] && c[ch] <= hi);
        }
    }

    #[test]
    fn texture_lookup_at_a_stored_uv_returns_its_color(
        entries in prop::collection::vec((free_point(), (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)), 1..100),
        pick in any::<prop::sample::Index>(),
    ) {
        let entries: Vec<TextureEntry> = entries
            .into_iter()
            .map(|(uv, (r, g, b))| TextureEntry { uv, rgb: [r, g, b], source: Source::GtPixel })
            .collect();
        let tex = CanonicalTexture::build(entries.clone()).unwrap();
        let e = entries[pick.index(entries.len())];
        // duplicates resolve to the lowest index with that uv
        let first = entries.iter().find(|x| x.uv == e.uv).unwrap();
        prop_assert_eq!(tex.color(e.uv), first.rgb);
    }
}
