//! Tape-based reverse-mode differentiation over [`Mat`] values.

use super::tensor::{matmul, matmul_nt, matmul_tn, Mat};
use crate::scalar::Real;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Gelu(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BroadcastRows(Var, usize),
    ShiftRows(Var, isize),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    Mse(Var, Mat<f64>),
}

impl Op {
    fn for_each_parent(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Gelu(a)
            | Op::SliceCols(a, ..)
            | Op::SliceRows(a, ..)
            | Op::BroadcastRows(a, _)
            | Op::ShiftRows(a, _)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows(a)
            | Op::Mse(a, _) => f(*a),
            Op::ConcatCols(ps) | Op::ConcatRows(ps) => ps.iter().copied().for_each(f),
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: Mat<T>,
    /// Per-row inverse standard deviations for layer norm.
    aux: Vec<f64>,
}

/// One forward pass recorded as a tape. Parameter values are copied onto the
/// tape so a single entry can be perturbed and the affected suffix replayed.
pub struct Graph<T> {
    param_vars: Vec<Option<Var>>,
    params: Vec<Option<Mat<T>>>,
    nodes: Vec<Node<T>>,
    /// `(node, element)` pairs overwritten since the last replay.
    stale: Vec<(usize, usize)>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-form GELU and its derivative.
fn gelu<T: Real>(x: T) -> (T, T) {
    let x = x.as_f64();
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
    (T::lit(0.5 * x * (1.0 + t)), T::lit(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Real> Graph<T> {
    /// A tape over the given parameter set; parameters are copied on first use.
    pub fn new(params: &[Mat<T>]) -> Self {
        Self { param_vars: vec![None; params.len()], params: params.iter().cloned().map(Some).collect(), nodes: Vec::new(), stale: Vec::new() }
    }

    fn push(&mut self, op: Op) -> Var {
        let (value, aux) = self.compute(&op);
        self.nodes.push(Node { op, value, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Mat<T>) -> Var {
        self.nodes.push(Node { op: Op::Constant, value: m, aux: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let value = self.params[index].take().expect("parameter moved onto the tape once");
        self.nodes.push(Node { op: Op::Param(index), value, aux: Vec::new() });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    /// Overwrites one scalar of a recorded parameter. Call [`Graph::replay`]
    /// before reading values again.
    pub fn set_param_scalar(&mut self, index: usize, elem: usize, value: T) {
        let v = self.param_vars[index].expect("parameter not on the tape");
        self.nodes[v.0].value.data[elem] = value;
        self.stale.push((v.0, elem));
    }

    /// Recomputes every node downstream of parameters changed since the last replay.
    pub fn replay(&mut self) {
        let Some(&(first, _)) = self.stale.iter().min() else { return };
        let mut dirty = vec![false; self.nodes.len()];
        for &(i, _) in &self.stale {
            dirty[i] = true;
        }
        let stale = std::mem::take(&mut self.stale);
        for id in first + 1..self.nodes.len() {
            let mut d = false;
            self.nodes[id].op.for_each_parent(|p| d |= dirty[p.0]);
            if !d {
                continue;
            }
            dirty[id] = true;
            if let Op::MatMul(a, b) = self.nodes[id].op {
                if !dirty[a.0] && matches!(self.nodes[b.0].op, Op::Param(_)) {
                    // only the columns holding a changed weight move
                    let mut out = std::mem::replace(&mut self.nodes[id].value, Mat::zeros(0, 0));
                    let (x, w) = (self.value(a), self.value(b));
                    for &(_, elem) in stale.iter().filter(|(n, _)| *n == b.0) {
                        let j = elem % w.cols;
                        for r in 0..x.rows {
                            let row = &x.data[r * x.cols..(r + 1) * x.cols];
                            out.data[r * out.cols + j] = row.iter().enumerate().fold(T::zero(), |s, (k, &v)| s + v * w.data[k * w.cols + j]);
                        }
                    }
                    self.nodes[id].value = out;
                    continue;
                }
            }
            let (value, aux) = self.compute(&self.nodes[id].op);
            self.nodes[id].value = value;
            self.nodes[id].aux = aux;
        }
    }

    fn compute(&self, op: &Op) -> (Mat<T>, Vec<f64>) {
        let v = |x: &Var| self.value(*x);
        let value = match op {
            Op::Constant | Op::Param(_) => unreachable!("leaves are not computed"),
            Op::MatMul(a, b) => matmul(v(a), v(b)),
            Op::MatMulNt(a, b) => matmul_nt(v(a), v(b)),
            Op::Add(a, b) => v(a).zip_map(v(b), |x, y| x + y),
            Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y),
            Op::AddRow(a, row) => {
                let r = v(row);
                assert_eq!((1, v(a).cols), r.shape(), "add_row shape");
                let mut out = v(a).clone();
                for chunk in out.data.chunks_exact_mut(r.cols.max(1)) {
                    chunk.iter_mut().zip(&r.data).for_each(|(o, &b)| *o += b);
                }
                out
            }
            Op::MulRow(a, row) => {
                let r = v(row);
                assert_eq!((1, v(a).cols), r.shape(), "mul_row shape");
                let mut out = v(a).clone();
                for chunk in out.data.chunks_exact_mut(r.cols.max(1)) {
                    chunk.iter_mut().zip(&r.data).for_each(|(o, &g)| *o *= g);
                }
                out
            }
            Op::Scale(a, s) => {
                let k = T::lit(*s);
                v(a).map(|x| x * k)
            }
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Tanh(a) => v(a).map(|x| x.tanh()),
            Op::Relu(a) => v(a).map(|x| x.max(T::zero())),
            Op::Softplus(a) => v(a).map(softplus),
            Op::Gelu(a) => v(a).map(|x| gelu(x).0),
            Op::SliceCols(a, start, len) => {
                let src = v(a);
                assert!(start + len <= src.cols, "slice_cols out of range");
                let mut out = Mat::zeros(src.rows, *len);
                for r in 0..src.rows {
                    out.row_mut(r).copy_from_slice(&src.row(r)[*start..start + len]);
                }
                out
            }
            Op::SliceRows(a, start, len) => {
                let src = v(a);
                assert!(start + len <= src.rows, "slice_rows out of range");
                Mat { rows: *len, cols: src.cols, data: src.data[start * src.cols..(start + len) * src.cols].to_vec() }
            }
            Op::ConcatCols(parts) => {
                let rows = v(&parts[0]).rows;
                let cols: usize = parts.iter().map(|p| v(p).cols).sum();
                let mut out = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let mut c0 = 0;
                    for p in parts {
                        let m = v(p);
                        assert_eq!(m.rows, rows, "concat_cols row mismatch");
                        out.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row(r));
                        c0 += m.cols;
                    }
                }
                out
            }
            Op::ConcatRows(parts) => {
                let cols = v(&parts[0]).cols;
                let mut data = Vec::new();
                for p in parts {
                    let m = v(p);
                    assert_eq!(m.cols, cols, "concat_rows column mismatch");
                    data.extend_from_slice(&m.data);
                }
                Mat { rows: data.len() / cols.max(1), cols, data }
            }
            Op::BroadcastRows(a, n) => {
                let src = v(a);
                assert_eq!(src.rows, 1, "broadcast_rows expects a single row");
                let mut data = Vec::with_capacity(n * src.cols);
                for _ in 0..*n {
                    data.extend_from_slice(&src.data);
                }
                Mat { rows: *n, cols: src.cols, data }
            }
            Op::ShiftRows(a, k) => {
                let src = v(a);
                let mut out = Mat::zeros(src.rows, src.cols);
                for t in 0..src.rows {
                    let s = t as isize - k;
                    if s >= 0 && (s as usize) < src.rows {
                        out.row_mut(t).copy_from_slice(src.row(s as usize));
                    }
                }
                out
            }
            Op::SoftmaxRows(a) => {
                let mut out = v(a).clone();
                for r in 0..out.rows {
                    let row = out.row_mut(r);
                    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                    let mut sum = 0.0f64;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += x.as_f64();
                    }
                    let inv = T::lit(1.0 / sum);
                    row.iter_mut().for_each(|x| *x *= inv);
                }
                out
            }
            Op::LayerNormRows(a) => {
                let mut out = v(a).clone();
                let n = out.cols as f64;
                let mut inv_std = Vec::with_capacity(out.rows);
                for r in 0..out.rows {
                    let row = out.row_mut(r);
                    let mean = row.iter().map(|x| x.as_f64()).sum::<f64>() / n;
                    let var = row.iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / n;
                    let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    row.iter_mut().for_each(|x| *x = T::lit((x.as_f64() - mean) * s));
                    inv_std.push(s);
                }
                return (out, inv_std);
            }
            Op::Mse(pred, target) => {
                let p = v(pred);
                assert_eq!(p.shape(), target.shape(), "mse shape");
                let sum: f64 = p.data.iter().zip(&target.data).map(|(&a, &b)| (a.as_f64() - b).powi(2)).sum();
                Mat::filled(1, 1, T::lit(sum / p.rows.max(1) as f64))
            }
        };
        (value, Vec::new())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.push(Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.push(Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.push(Op::Softplus(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.push(Op::Gelu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.push(Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.push(Op::SliceRows(a, start, len))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    /// Replicates a `1 × cols` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        self.push(Op::BroadcastRows(a, n))
    }

    /// `out[t] = a[t - k]`, zero outside the valid range.
    pub fn shift_rows(&mut self, a: Var, k: isize) -> Var {
        self.push(Op::ShiftRows(a, k))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.push(Op::SoftmaxRows(a))
    }

    /// Per-row standardization, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        self.push(Op::LayerNormRows(a))
    }

    /// `(1/rows) · Σ ‖pred_t − target_t‖²` as a `1 × 1` node, summed in f64.
    pub fn mse(&mut self, pred: Var, target: &Mat<T>) -> Var {
        self.push(Op::Mse(pred, target.cast::<f64>()))
    }

    /// Reverse sweep from a scalar node. Returns one gradient per parameter
    /// (`None` for parameters the loss does not depend on).
    pub fn backward(&self, loss: Var) -> Vec<Option<Mat<T>>> {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Mat<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::filled(1, 1, T::one()));
        let mut out = vec![None; self.params.len()];
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let y = &self.nodes[id].value;
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Param(i) => out[*i] = Some(g),
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = matmul(&g, self.value(*b));
                    let db = matmul_tn(&g, self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.col_sums());
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let mut da = g.clone();
                    for chunk in da.data.chunks_exact_mut(r.cols) {
                        chunk.iter_mut().zip(&r.data).for_each(|(o, &s)| *o *= s);
                    }
                    let dr = g.zip_map(self.value(*a), |x, y| x * y).col_sums();
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *row, dr);
                }
                Op::Scale(a, s) => {
                    let k = T::lit(*s);
                    acc(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |d, s| d * s * (T::one() - s))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |d, t| d * (T::one() - t * t))),
                Op::Relu(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |d, x| if x > T::zero() { d } else { T::zero() })),
                Op::Softplus(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |d, x| d * sigmoid(x))),
                Op::Gelu(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |d, x| d * gelu(x).1)),
                Op::SliceCols(a, start, _) => {
                    let (rows, cols) = self.shape(*a);
                    let mut da = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SliceRows(a, start, _) => {
                    let (rows, cols) = self.shape(*a);
                    let mut da = Mat::zeros(rows, cols);
                    da.data[start * cols..(start + g.rows) * cols].copy_from_slice(&g.data);
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut dp = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        acc(&mut grads, p, dp);
                        c0 += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let h = self.value(p).rows;
                        let dp = Mat { rows: h, cols: g.cols, data: g.data[r0 * g.cols..(r0 + h) * g.cols].to_vec() };
                        acc(&mut grads, p, dp);
                        r0 += h;
                    }
                }
                Op::BroadcastRows(a, _) => acc(&mut grads, *a, g.col_sums()),
                Op::ShiftRows(a, k) => {
                    let mut da = Mat::zeros(g.rows, g.cols);
                    for t in 0..g.rows {
                        let s = t as isize - k;
                        if s >= 0 && (s as usize) < g.rows {
                            da.row_mut(s as usize).copy_from_slice(g.row(t));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let mut da = g.clone();
                    for r in 0..g.rows {
                        let yr = y.row(r);
                        let dot: f64 = g.row(r).iter().zip(yr).map(|(d, s)| (*d * *s).as_f64()).sum();
                        let dot = T::lit(dot);
                        da.row_mut(r).iter_mut().zip(yr).for_each(|(d, &s)| *d = s * (*d - dot));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNormRows(a) => {
                    let inv_std = &self.nodes[id].aux;
                    let n = g.cols as f64;
                    let mut da = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mean_g = gr.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(d, v)| d.as_f64() * v.as_f64()).sum::<f64>() / n;
                        for ((o, d), v) in da.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = T::lit(inv_std[r] * (d.as_f64() - mean_g - v.as_f64() * mean_gy));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Mse(pred, target) => {
                    let p = self.value(*pred);
                    let k = 2.0 * g.data[0].as_f64() / p.rows.max(1) as f64;
                    let data = p.data.iter().zip(&target.data).map(|(&a, &b)| T::lit(k * (a.as_f64() - b))).collect();
                    acc(&mut grads, *pred, Mat { rows: p.rows, cols: p.cols, data });
                }
            }
        }
        out
    }
}

fn acc<T: Real>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
