use rand::seq::SliceRandom;
use rand::Rng;

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Check `samples` randomly chosen entries of the parameters whose names
/// pass `include` (all of them when there are fewer). `f` returns the loss and, when asked, one gradient per
/// parameter of the store it is given.
pub fn check_gradients<R: Rng>(
    store: &ParamStore,
    samples: usize,
    step: f64,
    floor: f64,
    rng: &mut R,
    include: &dyn Fn(&str) -> bool,
    f: impl Fn(&ParamStore, bool) -> Result<(f64, Option<Vec<Matrix>>)>,
) -> Result<GradCheck> {
    let (_, grads) = f(store, true)?;
    let grads =
        grads.ok_or_else(|| Error::Contract("gradient closure returned no gradients".into()))?;
    if grads.len() != store.len() {
        return Err(Error::shape(
            "check_gradients",
            format!("{} gradients for {} parameters", grads.len(), store.len()),
        ));
    }
    let ids: Vec<_> = store.ids().collect();
    let mut slots: Vec<(usize, usize)> = store
        .values()
        .iter()
        .enumerate()
        .filter(|(p, _)| include(store.name(ids[*p])))
        .flat_map(|(p, m)| (0..m.len()).map(move |i| (p, i)))
        .collect();
    slots.shuffle(rng);
    slots.truncate(samples);
    let mut work = store.clone();
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (p, i) in slots {
        let orig = work.values()[p].data()[i];
        work.values_mut()[p].data_mut()[i] = orig + step;
        let (plus, _) = f(&work, false)?;
        work.values_mut()[p].data_mut()[i] = orig - step;
        let (minus, _) = f(&work, false)?;
        work.values_mut()[p].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads[p].data()[i];
        let err = relative_error(analytic, numeric, floor);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((store.name(ids[p]).to_string(), i, analytic, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn quadratic_passes_and_a_wrong_gradient_fails() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap())
            .unwrap();
        let good = |s: &ParamStore, _: bool| {
            let mut tape = Tape::new();
            let v = tape.param(s, w);
            let sq = tape.square(v);
            let l = tape.sum(sq);
            let g = tape.backward(l)?.dense(s);
            Ok((tape.value(l).item(), Some(g)))
        };
        let r = check_gradients(
            &store,
            10,
            1e-6,
            1e-6,
            &mut crate::rng_for(0, 0),
            &|_| true,
            good,
        )
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8);
        let bad = |s: &ParamStore, _: bool| {
            let (l, g) = good(s, true)?;
            Ok((
                l,
                g.map(|mut g| {
                    g[0].data_mut()[1] *= 1.01;
                    g
                }),
            ))
        };
        let r = check_gradients(
            &store,
            10,
            1e-6,
            1e-6,
            &mut crate::rng_for(0, 0),
            &|_| true,
            bad,
        )
        .unwrap();
        assert!(r.max_rel_err > 5e-3);
        assert_eq!(r.worst.unwrap().1, 1);
    }
}
