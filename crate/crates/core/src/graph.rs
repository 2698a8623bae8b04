//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Parameters enter the tape by reference ([`Graph::param`]) so building a
//! per-sample graph never copies the embedding table. Row lookups
//! ([`Graph::gather`]) scatter their gradient into sparse rows of
//! [`Grads`].

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::params::{Grads, ModelParams, Param};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Array2<f64>),
    Param(usize),
}

enum Op {
    Leaf,
    Gather {
        slot: usize,
        rows: Vec<Option<usize>>,
    },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MaskRows(Var, Vec<bool>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var, Vec<bool>),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    RepeatRows(Var),
    Row(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Array2<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropyFirst(Var, Array2<f64>),
    NegLogSigmoid(Var),
    Sum(Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: parameter gradients plus gradients of
/// every constant leaf.
pub struct Backward {
    pub params: Grads,
    nodes: Vec<Option<Array2<f64>>>,
}

impl Backward {
    /// Gradient with respect to any node, zero-shaped if none flowed.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].as_ref()
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(128),
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a.view(),
            Value::Param(slot) => self.params.slot(*slot).view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, p: Param) -> Var {
        self.nodes.push(Node {
            value: Value::Param(p.slot()),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Stacks rows of a parameter table; `None` yields a zero row.
    /// Indices must be in range.
    pub fn gather(&mut self, p: Param, rows: Vec<Option<usize>>) -> Var {
        let table = self.params.get(p);
        let mut out = Array2::zeros((rows.len(), table.ncols()));
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                out.row_mut(i).assign(&table.row(*r));
            }
        }
        self.push(out, Op::Gather { slot: p.slot(), rows })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) - &self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) * &self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = &self.value(a) * &self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// Zeroes rows where `mask` is false.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let mut v = self.value(a).to_owned();
        for (mut r, &m) in v.rows_mut().into_iter().zip(mask) {
            if !m {
                r.fill(0.0);
            }
        }
        self.push(v, Op::MaskRows(a, mask.to_vec()))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row-wise softmax over the columns where `cols` is true; excluded
    /// columns get zero probability. A row with no admissible column is all
    /// zeros.
    pub fn softmax_rows(&mut self, a: Var, cols: &[bool]) -> Var {
        let x = self.value(a);
        assert_eq!(x.ncols(), cols.len(), "softmax mask width");
        let mut out = Array2::zeros(x.dim());
        for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
            let max = xr
                .iter()
                .zip(cols)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for ((o, &v), &m) in or.iter_mut().zip(xr.iter()).zip(cols) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            or /= total;
        }
        self.push(out, Op::Softmax(a, cols.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Broadcasts a `1×n` row to `rows×n`.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), 1);
        let v = x.broadcast((rows, x.ncols())).expect("row broadcast").to_owned();
        self.push(v, Op::RepeatRows(a))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a).row(i).to_owned().insert_axis(Axis(0));
        self.push(v, Op::Row(a, i))
    }

    /// Row-wise layer normalization with `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut normed = Array2::zeros(xv.dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (xr, mut nr) in xv.rows().into_iter().zip(normed.rows_mut()) {
            let mean = xr.sum() / n;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            Zip::from(&mut nr).and(&xr).for_each(|o, &v| *o = (v - mean) * r);
            inv_std.push(r);
        }
        let out = &(&normed * &self.value(gain)) + &self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// `−log softmax(row)[0]` for a `1×n` logit row.
    pub fn cross_entropy_first(&mut self, logits: Var) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), 1);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs = x.mapv(|v| (v - max).exp());
        let total = probs.sum();
        let loss = total.ln() + max - x[[0, 0]];
        let probs = probs / total;
        self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropyFirst(logits, probs))
    }

    /// Elementwise `−log σ(x)`, computed stably.
    pub fn neg_log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| softplus(-x));
        self.push(v, Op::NegLogSigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), v), Op::Sum(a))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        assert_eq!(x.dim(), (1, 1), "scalar node");
        x[[0, 0]]
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, out: Var) -> Backward {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones(self.shape(out)));
        let mut params = Grads::new(self.params.len());

        for idx in (0..=out.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = match &node.value {
                Value::Owned(a) => a.view(),
                Value::Param(slot) => self.params.slot(*slot).view(),
            };
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(slot) = node.value {
                        params.add_dense(slot, &dy);
                    }
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Gather { slot, rows } => {
                    debug_assert_eq!(*slot, Param::ItemEmbeddings.slot(), "sparse rows only for embeddings");
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            params.add_row(*r, dy.row(i));
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = dy.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&dy);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.dot(&self.value(*b));
                    let db = dy.t().dot(&self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&dy);
                    accumulate(&mut grads, *a, dy);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let da = &dy * &self.value(*b);
                    let db = &dy * &self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulRow(a, row) => {
                    let da = &dy * &self.value(*row);
                    let drow = (&dy * &self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, drow);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, dy * *c),
                Op::MaskRows(a, mask) => {
                    let mut da = dy;
                    for (mut r, &m) in da.rows_mut().into_iter().zip(mask) {
                        if !m {
                            r.fill(0.0);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let mut da = dy;
                    Zip::from(&mut da).and(&self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let mut da = dy;
                    Zip::from(&mut da).and(&y).for_each(|d, &t| *d *= 1.0 - t * t);
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let mut da = dy;
                    Zip::from(&mut da).and(&y).for_each(|d, &s| *d *= s * (1.0 - s));
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax(a, cols) => {
                    let mut da = Array2::zeros(dy.dim());
                    for ((yr, dr), mut out) in y.rows().into_iter().zip(dy.rows()).zip(da.rows_mut()) {
                        let inner = yr.dot(&dr);
                        for (j, &m) in cols.iter().enumerate() {
                            if m {
                                out[j] = yr[j] * (dr[j] - inner);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, dy.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        accumulate(&mut grads, p, dy.slice(ndarray::s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::RepeatRows(a) => accumulate(&mut grads, *a, dy.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::Row(a, i) => {
                    let mut da = Array2::zeros(self.shape(*a));
                    da.row_mut(*i).assign(&dy.row(0));
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let dgain = (&dy * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dnormed = &dy * &gv;
                    let n = normed.ncols() as f64;
                    let mut dx = Array2::zeros(dy.dim());
                    for (((dn, xh), mut out), &r) in dnormed
                        .rows()
                        .into_iter()
                        .zip(normed.rows())
                        .zip(dx.rows_mut())
                        .zip(inv_std)
                    {
                        let mean_dn = dn.sum() / n;
                        let mean_dn_xh = dn.dot(&xh) / n;
                        Zip::from(&mut out)
                            .and(&dn)
                            .and(&xh)
                            .for_each(|o, &d, &h| *o = r * (d - mean_dn - h * mean_dn_xh));
                    }
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                    accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropyFirst(a, probs) => {
                    let mut da = probs * dy[[0, 0]];
                    da[[0, 0]] -= dy[[0, 0]];
                    accumulate(&mut grads, *a, da);
                }
                Op::NegLogSigmoid(a) => {
                    let mut da = dy;
                    Zip::from(&mut da)
                        .and(&self.value(*a))
                        .for_each(|d, &x| *d *= sigmoid(x) - 1.0);
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let da = Array2::from_elem(self.shape(*a), dy[[0, 0]]);
                    accumulate(&mut grads, *a, da);
                }
            }
        }
        Backward { params, nodes: grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
