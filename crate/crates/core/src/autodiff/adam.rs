use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators mirroring a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
}

fn check_finite(grads: &[Matrix]) -> Result<()> {
    if grads.iter().all(Matrix::is_finite) {
        Ok(())
    } else {
        Err(Error::Diverged {
            stage: "adam",
            step: 0,
            reason: "non-finite gradient".into(),
        })
    }
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .values()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect()
        };
        AdamState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update over every parameter. A non-finite
    /// gradient rejects the whole step and leaves params and state untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} gradients for {} params", grads.len(), store.len()),
            ));
        }
        for (g, p) in grads.iter().zip(store.values()) {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient {:?} for param {:?}", g.shape(), p.shape()),
                ));
            }
        }
        check_finite(grads)?;
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = store.values_mut()[i].data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam over the rows of one embedding matrix where only rows that received
/// a gradient are touched; each row keeps its own step count so untouched
/// rows stay bit-identical.
#[derive(Clone, Debug, PartialEq)]
pub struct RowAdam {
    pub config: AdamConfig,
    pub first: Matrix,
    pub second: Matrix,
    pub steps: Vec<u64>,
}

impl RowAdam {
    pub fn new(table: &Matrix, config: AdamConfig) -> Self {
        RowAdam {
            config,
            first: Matrix::zeros(table.rows(), table.cols()),
            second: Matrix::zeros(table.rows(), table.cols()),
            steps: vec![0; table.rows()],
        }
    }

    pub fn step_row(
        &mut self,
        table: &mut Matrix,
        row: usize,
        grad: &[f64],
        lr: f64,
    ) -> Result<()> {
        if grad.len() != table.cols() || row >= table.rows() {
            return Err(Error::shape(
                "row_adam",
                format!(
                    "row {row} gradient of {} for {:?}",
                    grad.len(),
                    table.shape()
                ),
            ));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                stage: "adam",
                step: self.steps[row] as usize,
                reason: "non-finite latent gradient".into(),
            });
        }
        self.steps[row] += 1;
        let t = self.steps[row] as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let m = self.first.row_mut(row);
        let v = self.second.row_mut(row);
        let p = table.row_mut(row);
        for j in 0..grad.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
            p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Exponential decay from `start` to `end` over `total` steps.
pub fn exponential_lr(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let frac = (step as f64 / (total - 1) as f64).clamp(0.0, 1.0);
    start * (end / start).powf(frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Matrix::row_vector(values.to_vec())).unwrap();
        s
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut store = store_with(&[1.0, -2.0]);
        let mut state = AdamState::new(&store, AdamConfig::default());
        state.step(&mut store, &[Matrix::zeros(1, 2)], 0.1).unwrap();
        assert_eq!(store.values()[0].data(), &[1.0, -2.0]);

        state.first[0] = Matrix::row_vector(vec![0.5, 0.5]);
        state.second[0] = Matrix::row_vector(vec![0.25, 0.25]);
        let mut frozen = store.clone();
        let mut s2 = state.clone();
        s2.config.beta1 = 0.9;
        s2.step(&mut frozen, &[Matrix::zeros(1, 2)], 0.0).unwrap();
        assert!((s2.first[0].data()[0] - 0.45).abs() < 1e-15);
        assert!((s2.second[0].data()[0] - 0.25 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = store_with(&[0.0, 0.0, 0.0]);
        let mut state = AdamState::new(&store, AdamConfig::default());
        let g = Matrix::row_vector(vec![3.0, -0.2, 1e-3]);
        state.step(&mut store, &[g], 0.01).unwrap();
        // t = 1: m̂ = g, v̂ = g², Δ = -lr·g/(|g| + eps)
        for (p, g) in store.values()[0].data().iter().zip([3.0_f64, -0.2, 1e-3]) {
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
    }

    #[test]
    fn nan_gradient_rejects_step() {
        let mut store = store_with(&[1.0]);
        let mut state = AdamState::new(&store, AdamConfig::default());
        let err = state
            .step(&mut store, &[Matrix::row_vector(vec![f64::NAN])], 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert_eq!(state.step, 0);
        assert_eq!(store.values()[0].data(), &[1.0]);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let target = [1.5, -0.5, 2.0];
        let mut store = store_with(&[0.0, 0.0, 0.0]);
        let mut state = AdamState::new(&store, AdamConfig::default());
        let loss = |p: &[f64]| -> f64 { p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum() };
        let mut history = Vec::new();
        for _ in 0..200 {
            let p = store.values()[0].data().to_vec();
            history.push(loss(&p));
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            state
                .step(&mut store, &[Matrix::row_vector(g)], 0.02)
                .unwrap();
        }
        // monotone after a short warmup
        assert!(history[10..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(history[199] < 1e-2 * history[0]);
    }

    #[test]
    fn row_adam_isolates_rows() {
        let mut table = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let mut adam = RowAdam::new(&table, AdamConfig::default());
        adam.step_row(&mut table, 0, &[1.0, 1.0], 0.1).unwrap();
        adam.step_row(&mut table, 0, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(table.row(1), &[3.0, 4.0]);
        assert!(table.row(0)[0] < 1.0);
    }

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(exponential_lr(5e-4, 1e-4, 0, 100), 5e-4);
        assert!((exponential_lr(5e-4, 1e-4, 99, 100) - 1e-4).abs() < 1e-18);
    }
}
