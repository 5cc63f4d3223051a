use rand::Rng;

use super::matrix::{check_linear, linear_kernel, Matrix};
use super::params::{ParamId, ParamStore};
use super::tape::{lipschitz_weight_kernel, softplus_scalar, Activation, Tape, Var};
use crate::error::{Error, Result};

/// Glorot/Xavier uniform init: `U(-√(6/(in+out)), √(6/(in+out)))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_raw(rows, cols, data)
}

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.insert(
            format!("{name}.weight"),
            glorot_uniform(out_dim, in_dim, rng),
        )?;
        let bias = store.insert(format!("{name}.bias"), Matrix::zeros(1, out_dim))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let (w, b) = (store.get(self.weight), store.get(self.bias));
        check_linear(x, w, Some(b))?;
        Ok(linear_kernel(x, w, Some(b)))
    }
}

/// Linear layer whose rows are rescaled to bound the layer's ∞-norm
/// Lipschitz constant by `softplus(c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzLinear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

fn inverse_softplus(y: f64) -> f64 {
    // softplus(x) = y  =>  x = ln(e^y - 1)
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl LipschitzLinear {
    /// Initialize `c` so the bound equals the largest initial row sum, which
    /// leaves the freshly initialized layer unclipped.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = glorot_uniform(out_dim, in_dim, rng);
        let max_row = (0..out_dim)
            .map(|r| w.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max);
        let c0 = inverse_softplus(max_row.max(1e-3));
        let weight = store.insert(format!("{name}.weight"), w)?;
        let bias = store.insert(format!("{name}.bias"), Matrix::zeros(1, out_dim))?;
        let c = store.insert(format!("{name}.lipschitz_c"), Matrix::scalar(c0))?;
        Ok(LipschitzLinear {
            weight,
            bias,
            c,
            in_dim,
            out_dim,
        })
    }

    /// `softplus(c)`.
    pub fn bound(&self, store: &ParamStore) -> f64 {
        softplus_scalar(store.get(self.c).item())
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let c = tape.param(store, self.c);
        let b = tape.param(store, self.bias);
        let wn = tape.lipschitz_weight(w, c)?;
        tape.linear(x, wn, Some(b))
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let c = store.get(self.c).item();
        if !c.is_finite() {
            return Err(Error::Parameter(format!("non-finite Lipschitz bound {c}")));
        }
        let w = lipschitz_weight_kernel(store.get(self.weight), c);
        let b = store.get(self.bias);
        check_linear(x, &w, Some(b))?;
        Ok(linear_kernel(x, &w, Some(b)))
    }
}

/// `Π softplus(c_l)` over the given layers, recorded on the tape.
pub fn lipschitz_penalty<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    layers: &[LipschitzLinear],
) -> Result<Var> {
    let (first, rest) = layers
        .split_first()
        .ok_or_else(|| Error::Contract("lipschitz_penalty needs at least one layer".into()))?;
    let c = tape.param(store, first.c);
    let mut acc = tape.activate(c, Activation::Softplus);
    for layer in rest {
        let c = tape.param(store, layer.c);
        let sp = tape.activate(c, Activation::Softplus);
        acc = tape.mul(acc, sp)?;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layer {
    Plain(Linear),
    Lipschitz(LipschitzLinear),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Plain(l) => l.in_dim,
            Layer::Lipschitz(l) => l.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Plain(l) => l.out_dim,
            Layer::Lipschitz(l) => l.out_dim,
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        match self {
            Layer::Plain(l) => l.forward(tape, store, x),
            Layer::Lipschitz(l) => l.forward(tape, store, x),
        }
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Plain(l) => l.eval(store, x),
            Layer::Lipschitz(l) => l.eval(store, x),
        }
    }
}

/// Stack of layers with one activation after each.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; `hidden` follows every layer but the
    /// last, which gets `output`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        lipschitz: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "{name}: an MLP needs at least two dims"
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut activations = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let layer_name = format!("{name}.{i}");
            let layer = if lipschitz {
                Layer::Lipschitz(LipschitzLinear::new(
                    store,
                    &layer_name,
                    pair[0],
                    pair[1],
                    rng,
                )?)
            } else {
                Layer::Plain(Linear::new(store, &layer_name, pair[0], pair[1], rng)?)
            };
            layers.push(layer);
            activations.push(if i + 2 == dims.len() { output } else { hidden });
        }
        Ok(Mlp {
            layers,
            activations,
        })
    }

    /// Validates that consecutive layer widths chain.
    pub fn from_layers(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || layers.len() != activations.len() {
            return Err(Error::Contract("one activation per layer required".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "mlp",
                    format!("layer widths {} -> {}", pair[0].out_dim(), pair[1].in_dim()),
                ));
            }
        }
        Ok(Mlp {
            layers,
            activations,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            let z = layer.forward(tape, store, h)?;
            h = tape.activate(z, act);
        }
        Ok(h)
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            h = layer.eval(store, &h)?;
            if act != Activation::None {
                h = h.map(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    pub fn lipschitz_layers(&self) -> Vec<LipschitzLinear> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Lipschitz(l) => Some(*l),
                Layer::Plain(_) => None,
            })
            .collect()
    }

    /// Product of per-layer bounds, the stack's ∞-norm Lipschitz constant
    /// for 1-Lipschitz activations.
    pub fn lipschitz_bound(&self, store: &ParamStore) -> f64 {
        self.lipschitz_layers()
            .iter()
            .map(|l| l.bound(store))
            .product()
    }
}
