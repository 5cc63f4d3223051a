/// Distances below this count as an exact hit on a stored entry.
pub const EXACT_HIT: f64 = 1e-12;

/// Neighbors used per query unless configured otherwise.
pub const DEFAULT_K: usize = 3;

/// Inverse-distance weights `(1/dᵢ) / Σⱼ (1/dⱼ)`.
///
/// An exact hit (smallest distance below [`EXACT_HIT`]) puts all weight on
/// the first such neighbor.
pub fn nni_weights(distances: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; distances.len()];
    if let Some(hit) = distances.iter().position(|&d| d < EXACT_HIT) {
        w[hit] = 1.0;
        return w;
    }
    let total: f64 = distances.iter().map(|d| 1.0 / d).sum();
    for (wi, d) in w.iter_mut().zip(distances) {
        *wi = (1.0 / d) / total;
    }
    w
}

/// Weighted color of `(rgb, distance)` neighbors. Exact hits return the
/// stored color unchanged; otherwise the result is clamped to the
/// per-channel range of the neighbors to absorb rounding.
pub fn nni_color(neighbors: &[([f64; 3], f64)]) -> [f64; 3] {
    let dists: Vec<f64> = neighbors.iter().map(|n| n.1).collect();
    if let Some(hit) = dists.iter().position(|&d| d < EXACT_HIT) {
        return neighbors[hit].0;
    }
    let w = nni_weights(&dists);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((rgb, _), wi) in neighbors.iter().zip(&w) {
            out[c] += wi * rgb[c];
            lo = lo.min(rgb[c]);
            hi = hi.max(rgb[c]);
        }
        out[c] = out[c].clamp(lo, hi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_for_distances_one_and_two() {
        let w = nni_weights(&[1.0, 2.0]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equidistant_neighbors_share_weight() {
        for w in nni_weights(&[0.3, 0.3, 0.3]) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_hit_returns_stored_color() {
        let c = [0.123456789, 0.5, 0.987654321];
        assert_eq!(nni_color(&[([0.0; 3], 0.1), (c, 0.0), ([1.0; 3], 0.2)]), c);
    }
}
