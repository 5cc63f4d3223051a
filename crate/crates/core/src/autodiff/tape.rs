//! Reverse-mode tape over dense matrix ops.
//!
//! Every op appends one node whose inputs are earlier nodes, so the node
//! list is topologically ordered by construction and `backward` is a single
//! reverse sweep. Leaves borrow their values; nothing is copied until an op
//! produces a new matrix.

use std::borrow::Cow;
use std::sync::Arc;

use super::matrix::{check_linear, gemm, linear_kernel, GemmArgs, Matrix};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities usable between layers.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
    Sine,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Act(Activation),
    Abs,
    Square,
}

/// Per-ray sample layout for [`Tape::composite`].
#[derive(Clone, Debug)]
pub struct CompositeLayout {
    pub n_rays: usize,
    pub n_samples: usize,
    /// Sample depths along each ray, `n_rays * n_samples`.
    pub t: Vec<f64>,
    /// Quadrature widths, same layout as `t`.
    pub delta: Vec<f64>,
    /// Depth reported when a ray accumulates no opacity.
    pub far: Vec<f64>,
}

/// Opacity below which a ray's depth falls back to its far bound.
pub const DEPTH_OPACITY_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub(crate) struct TriplaneMeta {
    pub res: usize,
    pub channels: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        row: Var,
    },
    Scale {
        a: Var,
        s: f64,
    },
    Map {
        a: Var,
        f: Unary,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        a: Var,
        start: usize,
        len: usize,
    },
    Broadcast {
        a: Var,
    },
    Gather {
        a: Var,
        idx: Arc<Vec<usize>>,
    },
    Reshape {
        a: Var,
    },
    LipschitzWeight {
        w: Var,
        c: Var,
    },
    GroupSum {
        a: Var,
        width: usize,
    },
    Triplane {
        planes: Var,
        points: Var,
        meta: TriplaneMeta,
    },
    Composite {
        sigma: Var,
        rgb: Var,
        layout: Arc<CompositeLayout>,
    },
    Im2Col {
        x: Var,
        h: usize,
        w: usize,
    },
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Matrix>,
    requires_grad: bool,
}

/// Computation tape. Values are computed eagerly as ops are recorded.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient w.r.t. a parameter leaf, summed over every use on the tape.
    pub fn param(&self, id: ParamId) -> Option<Matrix> {
        let mut total: Option<Matrix> = None;
        for &(pid, node) in &self.params {
            if pid == id {
                if let Some(g) = &self.nodes[node] {
                    match &mut total {
                        Some(t) => t.add_assign(g),
                        None => total = Some(g.clone()),
                    }
                }
            }
        }
        total
    }

    /// Gradient for every parameter of `store`; untouched ones are zero.
    pub fn dense(&self, store: &ParamStore) -> Vec<Matrix> {
        store
            .ids()
            .map(|id| {
                self.param(id).unwrap_or_else(|| {
                    let (r, c) = store.get(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }

    /// Gradient w.r.t. any tracked node.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    softplus(x)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Sine => x.sin(),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Sine => x.cos(),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Act(a) => a.apply(x),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Act(a) => a.derivative(x, y),
            Unary::Abs => x.signum() * (x != 0.0) as u8 as f64,
            Unary::Square => 2.0 * x,
        }
    }
}

/// Rescale each weight row so its absolute sum is at most `softplus(c)`.
pub(crate) fn lipschitz_weight_kernel(w: &Matrix, c: f64) -> Matrix {
    let bound = softplus(c);
    let mut out = w.clone();
    for r in 0..w.rows() {
        let row = out.row_mut(r);
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > bound {
            let scale = bound / s;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    out
}

pub(crate) fn triplane_kernel(
    planes: &[f64],
    points: &Matrix,
    meta: &TriplaneMeta,
) -> (Matrix, Vec<bool>) {
    let k = meta.channels;
    let mut out = Matrix::zeros(points.rows(), k);
    let mut inside = vec![false; points.rows()];
    for (n, flag) in inside.iter_mut().enumerate() {
        let p = points.row(n);
        if !in_domain(p) {
            continue;
        }
        *flag = true;
        let feat = out.row_mut(n);
        for plane in 0..3 {
            let taps = bilinear_taps(plane, p, meta.res);
            for tap in &taps.corners {
                let base = tap.offset * k;
                let w = tap.weight;
                for (f, &v) in feat.iter_mut().zip(&planes[base..base + k]) {
                    *f += w * v;
                }
            }
        }
    }
    (out, inside)
}

pub(crate) fn in_domain(p: &[f64]) -> bool {
    p.iter().all(|c| (-1.0..=1.0).contains(c))
}

pub(crate) struct Tap {
    /// Texel index (without the channel stride).
    pub offset: usize,
    pub weight: f64,
}

pub(crate) struct Taps {
    pub corners: [Tap; 4],
    /// Partial derivatives of the four weights w.r.t. the plane's two
    /// in-plane coordinates, `[corner][axis]`.
    pub dweight: [[f64; 2]; 4],
    /// Which point coordinates feed (first, second) plane axes.
    pub axes: (usize, usize),
}

/// Coordinates (first, second) of each plane: XY, XZ, YZ.
pub(crate) const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn grid_coord(x: f64, res: usize) -> (usize, f64, f64) {
    // Texel centers sit at (i + 0.5) / res * 2 - 1.
    let scale = res as f64 / 2.0;
    let g = (x + 1.0) * scale - 0.5;
    let max = (res - 1) as f64;
    let (g, dg) = if g <= 0.0 {
        (0.0, 0.0)
    } else if g >= max {
        (max, 0.0)
    } else {
        (g, scale)
    };
    if res == 1 {
        return (0, 0.0, 0.0);
    }
    let i0 = (g.floor() as usize).min(res - 2);
    (i0, g - i0 as f64, dg)
}

pub(crate) fn bilinear_taps(plane: usize, p: &[f64], res: usize) -> Taps {
    let axes = PLANE_AXES[plane];
    let (i0, fx, dgx) = grid_coord(p[axes.0], res);
    let (j0, fy, dgy) = grid_coord(p[axes.1], res);
    let i1 = (i0 + 1).min(res - 1);
    let j1 = (j0 + 1).min(res - 1);
    let at = |i: usize, j: usize| (plane * res + j) * res + i;
    Taps {
        corners: [
            Tap {
                offset: at(i0, j0),
                weight: (1.0 - fx) * (1.0 - fy),
            },
            Tap {
                offset: at(i1, j0),
                weight: fx * (1.0 - fy),
            },
            Tap {
                offset: at(i0, j1),
                weight: (1.0 - fx) * fy,
            },
            Tap {
                offset: at(i1, j1),
                weight: fx * fy,
            },
        ],
        dweight: [
            [-(1.0 - fy) * dgx, -(1.0 - fx) * dgy],
            [(1.0 - fy) * dgx, -fx * dgy],
            [-fy * dgx, (1.0 - fx) * dgy],
            [fy * dgx, fx * dgy],
        ],
        axes,
    }
}

/// Alpha-composite per-ray samples into `[r, g, b, opacity, depth]` rows.
pub(crate) fn composite_kernel(sigma: &[f64], rgb: &Matrix, layout: &CompositeLayout) -> Matrix {
    let s = layout.n_samples;
    let mut out = Matrix::zeros(layout.n_rays, 5);
    for r in 0..layout.n_rays {
        let mut trans = 1.0;
        let mut acc = [0.0; 5];
        for i in r * s..(r + 1) * s {
            let decay = (-sigma[i] * layout.delta[i]).exp();
            let w = trans * (1.0 - decay);
            let c = rgb.row(i);
            acc[0] += w * c[0];
            acc[1] += w * c[1];
            acc[2] += w * c[2];
            acc[3] += w;
            acc[4] += w * layout.t[i];
            trans *= decay;
        }
        acc[4] = if acc[3] > DEPTH_OPACITY_FLOOR {
            acc[4] / acc[3]
        } else {
            layout.far[r]
        };
        out.row_mut(r).copy_from_slice(&acc);
    }
    out
}

fn im2col_kernel(x: &Matrix, h: usize, w: usize) -> Matrix {
    let c = x.cols();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Matrix::zeros(ho * wo, 9 * c);
    for oy in 0..ho {
        for ox in 0..wo {
            let row = out.row_mut(oy * wo + ox);
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    let ix = (2 * ox + kx) as isize - 1;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    let src = x.row(iy as usize * w + ix as usize);
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(src);
                }
            }
        }
    }
    out
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Untracked input.
    pub fn constant(&mut self, m: impl Into<Cow<'a, Matrix>>) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: m.into(),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is reported through [`Gradients::wrt`].
    pub fn input(&mut self, m: impl Into<Cow<'a, Matrix>>) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: m.into(),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Tracked parameter borrowed from `store`.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Cow::Borrowed(store.get(id)),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter value supplied by the caller but attributed to `id`.
    pub fn param_value(&mut self, id: ParamId, value: impl Into<Cow<'a, Matrix>>) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: value.into(),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x·Wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = b.map(|b| self.value(b));
        check_linear(xv, wv, bv)?;
        let y = linear_kernel(xv, wv, bv);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Op::Linear { x, w, b }, y, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul { a, b }, y, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let m = Matrix::from_raw(av.rows(), av.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(op, m, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(Op::Add { a, b }, a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(Op::Sub { a, b }, a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(Op::Mul { a, b }, a, b, |x, y| x * y))
    }

    /// Add a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.shape() != (1, av.cols()) {
            return Err(Error::shape(
                "add_row",
                format!("{:?} onto {:?}", rv.shape(), av.shape()),
            ));
        }
        let mut m = av.clone();
        for r in 0..m.rows() {
            for (x, y) in m.row_mut(r).iter_mut().zip(rv.data()) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow { a, row }, m, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(Op::Scale { a, s }, m, rg)
    }

    fn map(&mut self, a: Var, f: Unary) -> Var {
        let m = self.value(a).map(|x| f.apply(x));
        let rg = self.rg(a);
        self.push(Op::Map { a, f }, m, rg)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::None {
            return a;
        }
        self.map(a, Unary::Act(act))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Unary::Square)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Op::Sum { a }, Matrix::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Op::Mean { a }, Matrix::scalar(s), rg)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "concat",
                format!("{:?} beside {:?}", av.shape(), bv.shape()),
            ));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let m = Matrix::from_raw(av.rows(), cols, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Concat { a, b }, m, rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{} of {} columns", start + len, av.cols()),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let m = Matrix::from_raw(av.rows(), len, data);
        let rg = self.rg(a);
        Ok(self.push(Op::Slice { a, start, len }, m, rg))
    }

    /// Repeat a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(Error::shape("broadcast_rows", format!("{:?}", av.shape())));
        }
        let mut data = Vec::with_capacity(n * av.cols());
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        let m = Matrix::from_raw(n, av.cols(), data);
        let rg = self.rg(a);
        Ok(self.push(Op::Broadcast { a }, m, rg))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {}", av.rows()),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * av.cols());
        for &i in &idx {
            data.extend_from_slice(av.row(i));
        }
        let m = Matrix::from_raw(idx.len(), av.cols(), data);
        let rg = self.rg(a);
        Ok(self.push(
            Op::Gather {
                a,
                idx: Arc::new(idx),
            },
            m,
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!("{:?} into {rows}x{cols}", av.shape()),
            ));
        }
        let m = Matrix::from_raw(rows, cols, av.data().to_vec());
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape { a }, m, rg))
    }

    /// Row-normalized weight: each row scaled by `min(1, softplus(c) / Σ|row|)`.
    pub fn lipschitz_weight(&mut self, w: Var, c: Var) -> Result<Var> {
        let cv = self.value(c);
        if cv.shape() != (1, 1) {
            return Err(Error::shape("lipschitz_weight", "c must be 1x1"));
        }
        let c_val = cv.item();
        if !c_val.is_finite() {
            return Err(Error::Parameter(format!(
                "non-finite Lipschitz bound {c_val}"
            )));
        }
        let m = lipschitz_weight_kernel(self.value(w), c_val);
        let rg = self.rg(w) || self.rg(c);
        Ok(self.push(Op::LipschitzWeight { w, c }, m, rg))
    }

    /// Sum `n×(g·width)` blocks of width `width` into `n×width`.
    pub fn group_sum(&mut self, a: Var, width: usize) -> Result<Var> {
        let av = self.value(a);
        if width == 0 || av.cols() % width != 0 {
            return Err(Error::shape(
                "group_sum",
                format!("{} columns into groups of {width}", av.cols()),
            ));
        }
        let mut m = Matrix::zeros(av.rows(), width);
        for r in 0..av.rows() {
            let src = av.row(r);
            let dst = m.row_mut(r);
            for chunk in src.chunks_exact(width) {
                for (d, s) in dst.iter_mut().zip(chunk) {
                    *d += s;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Op::GroupSum { a, width }, m, rg))
    }

    /// Bilinear tri-plane lookup summed over the three planes.
    ///
    /// `planes` holds `3·res·res·channels` values (plane, row, column,
    /// channel order); `points` is `n×3`. Points outside `[-1, 1]³` get a
    /// zero feature; the returned flags mark which were inside.
    pub fn triplane(
        &mut self,
        planes: Var,
        points: Var,
        res: usize,
        channels: usize,
    ) -> Result<(Var, Vec<bool>)> {
        let (pv, xv) = (self.value(planes), self.value(points));
        if res == 0 || pv.len() != 3 * res * res * channels {
            return Err(Error::shape(
                "triplane",
                format!(
                    "{} plane values for res {res}, {channels} channels",
                    pv.len()
                ),
            ));
        }
        if xv.cols() != 3 {
            return Err(Error::shape("triplane", format!("points {:?}", xv.shape())));
        }
        let meta = TriplaneMeta { res, channels };
        let (m, inside) = triplane_kernel(pv.data(), xv, &meta);
        let rg = self.rg(planes) || self.rg(points);
        let var = self.push(
            Op::Triplane {
                planes,
                points,
                meta,
            },
            m,
            rg,
        );
        Ok((var, inside))
    }

    /// Volume-rendering quadrature. `sigma` is `(rays·samples)×1`, `rgb` is
    /// `(rays·samples)×3`; output rows are `[r, g, b, opacity, depth]`.
    pub fn composite(&mut self, sigma: Var, rgb: Var, layout: Arc<CompositeLayout>) -> Result<Var> {
        let total = layout.n_rays * layout.n_samples;
        let (sv, cv) = (self.value(sigma), self.value(rgb));
        if sv.shape() != (total, 1)
            || cv.shape() != (total, 3)
            || layout.t.len() != total
            || layout.delta.len() != total
            || layout.far.len() != layout.n_rays
        {
            return Err(Error::shape(
                "composite",
                format!(
                    "sigma {:?}, rgb {:?} for {} rays x {} samples",
                    sv.shape(),
                    cv.shape(),
                    layout.n_rays,
                    layout.n_samples
                ),
            ));
        }
        let m = composite_kernel(sv.data(), cv, &layout);
        let rg = self.rg(sigma) || self.rg(rgb);
        Ok(self.push(Op::Composite { sigma, rgb, layout }, m, rg))
    }

    /// Patch extraction for a 3×3, stride-2, pad-1 convolution over an
    /// `h×w` image stored one pixel per row.
    pub fn im2col(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != h * w || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "im2col",
                format!("{:?} as a {h}x{w} image", xv.shape()),
            ));
        }
        let m = im2col_kernel(xv, h, w);
        let rg = self.rg(x);
        Ok(self.push(Op::Im2Col { x, h, w }, m, rg))
    }

    /// Gradients of a scalar node w.r.t. every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let v = self.value(loss);
        if v.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                v.shape()
            )));
        }
        Ok(self.backward_with_seed(loss, Matrix::scalar(1.0)))
    }

    /// Backpropagate an arbitrary upstream gradient from `node`.
    pub fn backward_with_seed(&self, node: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(node).shape(), "seed shape");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[node.0] = Some(seed);
        for i in (0..=node.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * inp];
                    gemm(
                        GemmArgs {
                            m: n,
                            k: out,
                            n: inp,
                            a: g.data(),
                            a_strides: (out, 1),
                            b: wv.data(),
                            b_strides: (inp, 1),
                            beta: 0.0,
                        },
                        &mut dx,
                        (inp, 1),
                    );
                    self.accumulate(grads, *x, Matrix::from_raw(n, inp, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; out * inp];
                    gemm(
                        GemmArgs {
                            m: out,
                            k: n,
                            n: inp,
                            a: g.data(),
                            a_strides: (1, out),
                            b: xv.data(),
                            b_strides: (inp, 1),
                            beta: 0.0,
                        },
                        &mut dw,
                        (inp, 1),
                    );
                    self.accumulate(grads, *w, Matrix::from_raw(out, inp, dw));
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        self.accumulate(grads, *b, column_sums(g));
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        GemmArgs {
                            m,
                            k: n,
                            n: k,
                            a: g.data(),
                            a_strides: (n, 1),
                            b: bv.data(),
                            b_strides: (1, n),
                            beta: 0.0,
                        },
                        &mut da,
                        (k, 1),
                    );
                    self.accumulate(grads, *a, Matrix::from_raw(m, k, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        GemmArgs {
                            m: k,
                            k: m,
                            n,
                            a: av.data(),
                            a_strides: (1, k),
                            b: g.data(),
                            b_strides: (n, 1),
                            beta: 0.0,
                        },
                        &mut db,
                        (n, 1),
                    );
                    self.accumulate(grads, *b, Matrix::from_raw(k, n, db));
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Matrix::from_raw(g.rows(), g.cols(), d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Matrix::from_raw(g.rows(), g.cols(), d));
                }
            }
            Op::AddRow { a, row } => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    self.accumulate(grads, *row, column_sums(g));
                }
            }
            Op::Scale { a, s } => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Map { a, f } => {
                let (xv, yv) = (self.value(*a), &self.nodes[i].value);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(yv.data()))
                    .map(|(gv, (&x, &y))| gv * f.derivative(x, y))
                    .collect();
                self.accumulate(grads, *a, Matrix::from_raw(g.rows(), g.cols(), d));
            }
            Op::Sum { a } => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean { a } => {
                let (r, c) = self.value(*a).shape();
                let scale = g.item() / (r * c).max(1) as f64;
                self.accumulate(grads, *a, Matrix::filled(r, c, scale));
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                if self.rg(*a) {
                    let d = (0..g.rows())
                        .flat_map(|r| g.row(r)[..ca].to_vec())
                        .collect();
                    self.accumulate(grads, *a, Matrix::from_raw(g.rows(), ca, d));
                }
                if self.rg(*b) {
                    let d = (0..g.rows())
                        .flat_map(|r| g.row(r)[ca..].to_vec())
                        .collect();
                    self.accumulate(grads, *b, Matrix::from_raw(g.rows(), cb, d));
                }
            }
            Op::Slice { a, start, len } => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d.row_mut(row)[*start..start + len].copy_from_slice(g.row(row));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Broadcast { a } => {
                self.accumulate(grads, *a, column_sums(g));
            }
            Op::Gather { a, idx } => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for (out_row, &src) in idx.iter().enumerate() {
                    for (x, y) in d.row_mut(src).iter_mut().zip(g.row(out_row)) {
                        *x += y;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reshape { a } => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::from_raw(r, c, g.data().to_vec()));
            }
            Op::LipschitzWeight { w, c } => {
                let wv = self.value(*w);
                let cv = self.value(*c).item();
                let bound = softplus(cv);
                let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                let mut dc = 0.0;
                for r in 0..wv.rows() {
                    let row = wv.row(r);
                    let grow = g.row(r);
                    let s: f64 = row.iter().map(|v| v.abs()).sum();
                    let drow = dw.row_mut(r);
                    if s > bound {
                        let dot: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((d, &gv), &wv) in drow.iter_mut().zip(grow).zip(row) {
                            *d = gv * bound / s - bound / (s * s) * wv.signum() * dot;
                        }
                        dc += dot / s * sigmoid(cv);
                    } else {
                        drow.copy_from_slice(grow);
                    }
                }
                self.accumulate(grads, *w, dw);
                if self.rg(*c) {
                    self.accumulate(grads, *c, Matrix::scalar(dc));
                }
            }
            Op::GroupSum { a, width } => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    let src = g.row(row);
                    for chunk in d.row_mut(row).chunks_exact_mut(*width) {
                        chunk.copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Triplane {
                planes,
                points,
                meta,
            } => {
                let (pv, xv) = (self.value(*planes), self.value(*points));
                let k = meta.channels;
                let want_planes = self.rg(*planes);
                let want_points = self.rg(*points);
                let mut dplanes = want_planes.then(|| vec![0.0; pv.len()]);
                let mut dpoints = want_points.then(|| Matrix::zeros(xv.rows(), 3));
                for n in 0..xv.rows() {
                    let p = xv.row(n);
                    if !in_domain(p) {
                        continue;
                    }
                    let gn = g.row(n);
                    for plane in 0..3 {
                        let taps = bilinear_taps(plane, p, meta.res);
                        for (corner, tap) in taps.corners.iter().enumerate() {
                            let base = tap.offset * k;
                            if let Some(dp) = dplanes.as_mut() {
                                for (d, gv) in dp[base..base + k].iter_mut().zip(gn) {
                                    *d += tap.weight * gv;
                                }
                            }
                            if let Some(dx) = dpoints.as_mut() {
                                let dot: f64 = pv.data()[base..base + k]
                                    .iter()
                                    .zip(gn)
                                    .map(|(a, b)| a * b)
                                    .sum();
                                let row = dx.row_mut(n);
                                row[taps.axes.0] += taps.dweight[corner][0] * dot;
                                row[taps.axes.1] += taps.dweight[corner][1] * dot;
                            }
                        }
                    }
                }
                if let Some(dp) = dplanes {
                    self.accumulate(grads, *planes, Matrix::from_raw(pv.rows(), pv.cols(), dp));
                }
                if let Some(dx) = dpoints {
                    self.accumulate(grads, *points, dx);
                }
            }
            Op::Composite { sigma, rgb, layout } => {
                let (sv, cv) = (self.value(*sigma), self.value(*rgb));
                let out = &self.nodes[i].value;
                let s = layout.n_samples;
                let mut dsigma = Matrix::zeros(sv.rows(), 1);
                let mut drgb = Matrix::zeros(cv.rows(), 3);
                let mut weights = vec![0.0; s];
                let mut trans_after = vec![0.0; s];
                let mut gw = vec![0.0; s];
                for r in 0..layout.n_rays {
                    let base = r * s;
                    let mut trans = 1.0;
                    for j in 0..s {
                        let decay = (-sv.data()[base + j] * layout.delta[base + j]).exp();
                        weights[j] = trans * (1.0 - decay);
                        trans *= decay;
                        trans_after[j] = trans;
                    }
                    let go = g.row(r);
                    let opacity = out.get(r, 3);
                    let depth = out.get(r, 4);
                    let depth_active = opacity > DEPTH_OPACITY_FLOOR;
                    for j in 0..s {
                        let c = cv.row(base + j);
                        let mut v = go[0] * c[0] + go[1] * c[1] + go[2] * c[2] + go[3];
                        if depth_active {
                            v += go[4] * (layout.t[base + j] - depth) / opacity;
                        }
                        gw[j] = v;
                        let dc = drgb.row_mut(base + j);
                        dc[0] = weights[j] * go[0];
                        dc[1] = weights[j] * go[1];
                        dc[2] = weights[j] * go[2];
                    }
                    let mut suffix = 0.0;
                    for j in (0..s).rev() {
                        let delta = layout.delta[base + j];
                        dsigma.data_mut()[base + j] = delta * (gw[j] * trans_after[j] - suffix);
                        suffix += gw[j] * weights[j];
                    }
                }
                self.accumulate(grads, *sigma, dsigma);
                self.accumulate(grads, *rgb, drgb);
            }
            Op::Im2Col { x, h, w } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = Matrix::zeros(xv.rows(), c);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let grow = g.row(oy * wo + ox);
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (2 * oy + ky) as isize - 1;
                                let ix = (2 * ox + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= *h as isize || ix >= *w as isize {
                                    continue;
                                }
                                let src = (ky * 3 + kx) * c;
                                let dst = dx.row_mut(iy as usize * w + ix as usize);
                                for (d, s) in dst.iter_mut().zip(&grow[src..src + c]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Matrix::row_vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Matrix::scalar(3.0);
        let mut tape = Tape::new();
        let v = tape.input(&x);
        let y = tape.mul(v, v).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(v).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Matrix::filled(2, 2, 1.5)).unwrap();
        let c = Matrix::scalar(4.0);
        let mut tape = Tape::new();
        let _w = tape.param(&store, id);
        let k = tape.constant(&c);
        let loss = tape.scale(k, 2.0);
        let grads = tape.backward(loss).unwrap();
        let dense = grads.dense(&store);
        assert!(dense[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Matrix::zeros(2, 1);
        let mut tape = Tape::new();
        let v = tape.input(&x);
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_surface() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(3, 2);
        let mut tape = Tape::new();
        let va = tape.constant(&a);
        let vb = tape.constant(&b);
        assert!(tape.add(va, vb).is_err());
        assert!(tape.linear(va, vb, None).is_err());
        assert!(tape.concat(va, vb).is_err());
    }

    #[test]
    fn lipschitz_rejects_non_finite_bound() {
        let w = Matrix::zeros(2, 2);
        let c = Matrix::scalar(f64::INFINITY);
        let mut tape = Tape::new();
        let vw = tape.constant(&w);
        let vc = tape.constant(&c);
        assert!(matches!(
            tape.lipschitz_weight(vw, vc),
            Err(Error::Parameter(_))
        ));
    }
}
