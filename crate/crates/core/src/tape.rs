//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Each recorded node
//! keeps its forward value; [`Tape::backward`] walks the nodes in reverse and
//! accumulates the adjoint of a scalar output into every node that depends
//! on a gradient-requiring leaf.

use ndarray::{concatenate, s, Array2, Axis};

pub type Mat = Array2<f64>;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `b` is `1×n` (row broadcast), `m×1` (column broadcast) or `1×1`.
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Mat),
    Transpose(Var),
    Rows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Relu(Var),
    Diag(Var),
    Sum(Var),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every recorded node with respect to the output passed to
/// [`Tape::backward`]. Nodes outside the gradient path have none.
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.0[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.value(a).dim();
        let bd = self.value(b).dim();
        assert!(
            bd == (1, n) || bd == (m, 1) || bd == (1, 1),
            "cannot broadcast {bd:?} onto {:?}",
            (m, n)
        );
        let value = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::AddBroadcast(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let ng = self.ng(&[a]);
        self.push(value, Op::AddScalar(a), ng)
    }

    /// Elementwise product with a constant matrix of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        assert_eq!(self.value(a).dim(), c.dim());
        let value = self.value(a) * &c;
        let ng = self.ng(&[a]);
        self.push(value, Op::MulConst(a, c), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::Rows(a, start, len), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts agree");
        let ng = self.ng(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts agree");
        let ng = self.ng(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row /= total;
        }
        let ng = self.ng(&[a]);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise layer normalization with learnable `1×n` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= inv;
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let ng = self.ng(&[a]);
        self.push(value, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), av.ncols());
        let value = Array2::from_shape_fn((av.nrows(), 1), |(i, _)| av[[i, i]]);
        let ng = self.ng(&[a]);
        self.push(value, Op::Diag(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::Sum(a), ng)
    }

    /// Adjoints of the `1×1` node `out` with respect to every node on the
    /// gradient path.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let mut acc = |v: Var, delta: Mat| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -&g);
                }
                Op::AddBroadcast(a, b) => {
                    let bd = self.value(*b).dim();
                    let db = match bd {
                        (1, 1) => Array2::from_elem((1, 1), g.sum()),
                        (1, _) => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
                        _ => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
                    };
                    acc(*a, g.clone());
                    acc(*b, db);
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::MulConst(a, c) => acc(*a, &g * c),
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::Rows(a, start, len) => {
                    let mut full = Array2::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    acc(*a, full);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let r = self.value(*p).nrows();
                        acc(*p, g.slice(s![offset..offset + r, ..]).to_owned());
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).ncols();
                        acc(*p, g.slice(s![.., offset..offset + c]).to_owned());
                        offset += c;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = &g * y;
                    for (mut row, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.scaled_add(-dot, &yrow);
                    }
                    acc(*a, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    if self.nodes[x.0].needs_grad {
                        let dxhat = &g * self.value(*gamma);
                        let n = xhat.ncols() as f64;
                        let mut dx = Array2::zeros(xhat.raw_dim());
                        for i in 0..xhat.nrows() {
                            let dh = dxhat.row(i);
                            let h = xhat.row(i);
                            let sum_d = dh.sum();
                            let sum_dh = dh.dot(&h);
                            let mut out = dx.row_mut(i);
                            for j in 0..out.len() {
                                out[j] = inv_std[i] / n * (n * dh[j] - sum_d - h[j] * sum_dh);
                            }
                        }
                        acc(*x, dx);
                    }
                }
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(*a, &g * &d);
                }
                Op::Sigmoid(a) => {
                    let d = node.value.mapv(|y| y * (1.0 - y));
                    acc(*a, &g * &d);
                }
                Op::Relu(a) => {
                    let d = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(*a, &g * &d);
                }
                Op::Diag(a) => {
                    let n = g.nrows();
                    let mut full = Array2::zeros((n, n));
                    for i in 0..n {
                        full[[i, i]] = g[[i, 0]];
                    }
                    acc(*a, full);
                }
                Op::Sum(a) => {
                    acc(*a, Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]));
                }
            }
        }
        Grads(grads)
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of d(out)/d(leaf) for a graph built by `f`.
    fn check<F>(inputs: Vec<Mat>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Array2::zeros(input.raw_dim()));
            for idx in 0..input.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, m)| {
                            let mut m = m.clone();
                            if j == k {
                                m.as_slice_mut().unwrap()[idx] += delta;
                            }
                            t.param(m)
                        })
                        .collect();
                    let o = f(&mut t, &vs);
                    t.scalar(o)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                assert!(
                    (a - numeric).abs() < 1e-6 * (1.0 + numeric.abs()),
                    "input {k}[{idx}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_and_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let row = random(&mut rng, 1, 2);
        let col = random(&mut rng, 3, 1);
        check(vec![a, b, row, col], |t, v| {
            let p = t.matmul(v[0], v[1]);
            let p = t.add_broadcast(p, v[2]);
            let p = t.add_broadcast(p, v[3]);
            let p = t.gelu(p);
            t.sum(p)
        });
    }

    #[test]
    fn softmax_layer_norm_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 3, 5);
        let gamma = random(&mut rng, 1, 5);
        let beta = random(&mut rng, 1, 5);
        let w = random(&mut rng, 3, 5);
        check(vec![x, gamma, beta], move |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]);
            let y = t.softmax_rows(y);
            let y = t.mul_const(y, w.clone());
            t.sum(y)
        });
    }

    #[test]
    fn slicing_concat_transpose_diag() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 4, 2);
        check(vec![a, b], |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let top = t.rows(c, 0, 2);
            let bottom = t.rows(c, 2, 2);
            let stacked = t.concat_rows(&[bottom, top]);
            let tr = t.transpose(stacked);
            let sq = t.matmul(stacked, tr);
            let sig = t.sigmoid(sq);
            let d = t.diag(sig);
            let neg = t.scale(sig, -1.0);
            let hinge = t.add_broadcast(neg, d);
            let hinge = t.add_scalar(hinge, 0.1);
            let hinge = t.relu(hinge);
            let s = t.sum(hinge);
            let extra = t.sum(stacked);
            let total = t.sub(s, extra);
            t.add(total, s)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0]]);
        let b = t.param(array![[3.0], [4.0]]);
        let p = t.matmul(a, b);
        let grads = t.backward(p);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &array![[1.0], [2.0]]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let x = t.constant(random(&mut rng, 4, 6) * 30.0);
        let y = t.softmax_rows(x);
        for row in t.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
