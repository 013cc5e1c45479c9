//! Reverse-mode autodiff on a growing tape.
//!
//! Backward passes are themselves built out of tape operations, so gradients
//! are ordinary tape variables and can be differentiated again. That is what
//! makes gradient-penalty terms (norm of an input gradient inside a training
//! loss) trainable without any special casing.
//!
//! Index maps passed to gather/scatter ops may contain `usize::MAX` as a
//! sentinel meaning "out of bounds, read/write zero".

use crate::tensor::Tensor;
use std::sync::Arc;

/// Handle to a value on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const SENTINEL: usize = usize::MAX;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    AddScalar(Var, f64),
    MulScalar(Var, f64),
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    SumAll(Var),
    BroadcastScalar(Var),
    Gather { src: Var, idx: Arc<Vec<usize>> },
    ScatterAdd { src: Var, idx: Arc<Vec<usize>> },
    GatherRows { src: Var, idx: Arc<Vec<usize>> },
    ScatterAddRows { src: Var, idx: Arc<Vec<usize>> },
    Reshape(Var),
    Concat(Vec<Var>),
    StopGrad(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape. Nodes only ever reference earlier nodes, so ascending
/// index order is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_stable(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn matmul_values(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    assert_eq!(a.shape().len(), 2, "matmul lhs must be rank 2");
    assert_eq!(b.shape().len(), 2, "matmul rhs must be rank 2");
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, kb, "matmul inner dims: {:?} x {:?} (ta={ta}, tb={tb})", a.shape(), b.shape());
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(vec![m, n], out)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// New differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] for values never listed in a `wrt` set.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn binary(&mut self, a: Var, b: Var, op: fn(f64, f64) -> f64, tag: fn(Var, Var) -> Op) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| op(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data);
        self.push(value, tag(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect());
        self.push(value, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_stable, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus_stable, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { alpha * x }, Op::LeakyRelu(a, alpha))
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.max(c), Op::ClampMin(a, c))
    }

    pub fn clamp_max(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.min(c), Op::ClampMax(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::MulScalar(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = matmul_values(&self.nodes[a.0].value, ta, &self.nodes[b.0].value, tb);
        self.push(value, Op::Matmul { a, b, ta, tb })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Fill `shape` with the single element of `a`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let v = self.nodes[a.0].value.item();
        self.push(Tensor::full(shape, v), Op::BroadcastScalar(a))
    }

    /// Flat gather: `out[i] = src[idx[i]]`, `SENTINEL` reads zero.
    pub fn gather(&mut self, src: Var, idx: Arc<Vec<usize>>, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), idx.len());
        let s = self.nodes[src.0].value.data();
        let data = idx.iter().map(|&i| if i == SENTINEL { 0.0 } else { s[i] }).collect();
        self.push(Tensor::new(shape, data), Op::Gather { src, idx })
    }

    /// Flat scatter-add: `out[idx[i]] += src[i]`, `SENTINEL` writes nowhere.
    pub fn scatter_add(
        &mut self,
        src: Var,
        idx: Arc<Vec<usize>>,
        shape: impl Into<Vec<usize>>,
    ) -> Var {
        let shape = shape.into();
        let s = &self.nodes[src.0].value;
        assert_eq!(s.len(), idx.len());
        let mut data = vec![0.0; shape.iter().product()];
        for (v, &i) in s.data().iter().zip(idx.iter()) {
            if i != SENTINEL {
                data[i] += v;
            }
        }
        self.push(Tensor::new(shape, data), Op::ScatterAdd { src, idx })
    }

    /// Row gather on a rank-2 tensor: `out[i, :] = src[idx[i], :]`.
    pub fn gather_rows(&mut self, src: Var, idx: Arc<Vec<usize>>) -> Var {
        let s = &self.nodes[src.0].value;
        assert_eq!(s.shape().len(), 2, "gather_rows needs rank 2");
        let w = s.shape()[1];
        let mut data = vec![0.0; idx.len() * w];
        for (o, &r) in idx.iter().enumerate() {
            if r != SENTINEL {
                data[o * w..(o + 1) * w].copy_from_slice(&s.data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::new(vec![idx.len(), w], data), Op::GatherRows { src, idx })
    }

    /// Row scatter-add: `out[idx[i], :] += src[i, :]`.
    pub fn scatter_add_rows(&mut self, src: Var, idx: Arc<Vec<usize>>, out_rows: usize) -> Var {
        let s = &self.nodes[src.0].value;
        assert_eq!(s.shape().len(), 2, "scatter_add_rows needs rank 2");
        let w = s.shape()[1];
        assert_eq!(s.shape()[0], idx.len());
        let mut data = vec![0.0; out_rows * w];
        for (i, &r) in idx.iter().enumerate() {
            if r != SENTINEL {
                let src_row = &s.data()[i * w..(i + 1) * w];
                let dst = &mut data[r * w..(r + 1) * w];
                for (d, v) in dst.iter_mut().zip(src_row) {
                    *d += v;
                }
            }
        }
        self.push(Tensor::new(vec![out_rows, w], data), Op::ScatterAddRows { src, idx })
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let value = self.nodes[a.0].value.clone().reshaped(shape);
        self.push(value, Op::Reshape(a))
    }

    /// Flat concatenation; callers reshape afterwards.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        let mut data = Vec::with_capacity(total);
        for p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        self.push(Tensor::new(vec![total], data), Op::Concat(parts.to_vec()))
    }

    /// Identity with a severed gradient path.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::StopGrad(a))
    }

    fn for_each_parent(op: &Op, mut f: impl FnMut(Var)) {
        match op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Matmul { a, b, .. } => {
                f(*a);
                f(*b);
            }
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::LeakyRelu(a, _)
            | Op::ClampMin(a, _)
            | Op::ClampMax(a, _)
            | Op::AddScalar(a, _)
            | Op::MulScalar(a, _)
            | Op::SumAll(a)
            | Op::BroadcastScalar(a)
            | Op::Reshape(a) => f(*a),
            Op::Gather { src, .. }
            | Op::ScatterAdd { src, .. }
            | Op::GatherRows { src, .. }
            | Op::ScatterAddRows { src, .. } => f(*src),
            Op::Concat(parts) => parts.iter().copied().for_each(f),
        }
    }

    /// Gradient of scalar `root` with respect to each var in `wrt`.
    ///
    /// Gradients come back as new tape vars, so they can feed further taped
    /// computation (and be differentiated again). Vars that do not influence
    /// `root` get a zero gradient of matching shape.
    pub fn backward(&mut self, root: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");

        // A node matters iff some wrt var occurs in its ancestry.
        let mut needs = vec![false; root.0 + 1];
        for w in wrt {
            assert!(w.0 <= root.0, "wrt var created after root");
            needs[w.0] = true;
        }
        for i in 0..=root.0 {
            if !needs[i] {
                let mut hit = false;
                Self::for_each_parent(&self.nodes[i].op, |p| hit |= needs[p.0]);
                needs[i] = hit;
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; root.0 + 1];
        let one = self.constant(Tensor::full(self.nodes[root.0].value.shape().to_vec(), 1.0));
        grads[root.0] = Some(one);

        for i in (0..=root.0).rev() {
            let g = match grads[i] {
                Some(g) if needs[i] => g,
                _ => continue,
            };
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            let mut accum = |tape: &mut Tape, grads: &mut Vec<Option<Var>>, p: Var, contrib: Var| {
                if !needs[p.0] {
                    return;
                }
                grads[p.0] = Some(match grads[p.0] {
                    Some(prev) => tape.add(prev, contrib),
                    None => contrib,
                });
            };
            match op {
                Op::Leaf | Op::StopGrad(_) => {}
                Op::Add(a, b) => {
                    accum(self, &mut grads, a, g);
                    accum(self, &mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accum(self, &mut grads, a, g);
                    let nb = self.neg(g);
                    accum(self, &mut grads, b, nb);
                }
                Op::Mul(a, b) => {
                    if needs[a.0] {
                        let da = self.mul(g, b);
                        accum(self, &mut grads, a, da);
                    }
                    if needs[b.0] {
                        let db = self.mul(g, a);
                        accum(self, &mut grads, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if needs[a.0] {
                        let da = self.div(g, b);
                        accum(self, &mut grads, a, da);
                    }
                    if needs[b.0] {
                        let t = self.mul(g, out);
                        let t = self.div(t, b);
                        let db = self.neg(t);
                        accum(self, &mut grads, b, db);
                    }
                }
                Op::Neg(a) => {
                    let da = self.neg(g);
                    accum(self, &mut grads, a, da);
                }
                Op::Exp(a) => {
                    let da = self.mul(g, out);
                    accum(self, &mut grads, a, da);
                }
                Op::Ln(a) => {
                    let da = self.div(g, a);
                    accum(self, &mut grads, a, da);
                }
                Op::Sqrt(a) => {
                    let t = self.div(g, out);
                    let da = self.mul_scalar(t, 0.5);
                    accum(self, &mut grads, a, da);
                }
                Op::Sigmoid(a) => {
                    // g * y * (1 - y)
                    let neg_y = self.neg(out);
                    let one_minus = self.add_scalar(neg_y, 1.0);
                    let t = self.mul(out, one_minus);
                    let da = self.mul(g, t);
                    accum(self, &mut grads, a, da);
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid(a);
                    let da = self.mul(g, s);
                    accum(self, &mut grads, a, da);
                }
                Op::LeakyRelu(a, alpha) => {
                    let src = &self.nodes[a.0].value;
                    let mask = Tensor::new(
                        src.shape().to_vec(),
                        src.data().iter().map(|&x| if x > 0.0 { 1.0 } else { alpha }).collect(),
                    );
                    let m = self.constant(mask);
                    let da = self.mul(g, m);
                    accum(self, &mut grads, a, da);
                }
                Op::ClampMin(a, c) => {
                    let src = &self.nodes[a.0].value;
                    let mask = Tensor::new(
                        src.shape().to_vec(),
                        src.data().iter().map(|&x| if x > c { 1.0 } else { 0.0 }).collect(),
                    );
                    let m = self.constant(mask);
                    let da = self.mul(g, m);
                    accum(self, &mut grads, a, da);
                }
                Op::ClampMax(a, c) => {
                    let src = &self.nodes[a.0].value;
                    let mask = Tensor::new(
                        src.shape().to_vec(),
                        src.data().iter().map(|&x| if x < c { 1.0 } else { 0.0 }).collect(),
                    );
                    let m = self.constant(mask);
                    let da = self.mul(g, m);
                    accum(self, &mut grads, a, da);
                }
                Op::AddScalar(a, _) => accum(self, &mut grads, a, g),
                Op::MulScalar(a, c) => {
                    let da = self.mul_scalar(g, c);
                    accum(self, &mut grads, a, da);
                }
                Op::Matmul { a, b, ta, tb } => {
                    if needs[a.0] {
                        let da = if !ta {
                            self.matmul_t(g, false, b, !tb)
                        } else {
                            self.matmul_t(b, tb, g, true)
                        };
                        accum(self, &mut grads, a, da);
                    }
                    if needs[b.0] {
                        let db = if !tb {
                            self.matmul_t(a, !ta, g, false)
                        } else {
                            self.matmul_t(g, true, a, ta)
                        };
                        accum(self, &mut grads, b, db);
                    }
                }
                Op::SumAll(a) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let da = self.broadcast_scalar(g, shape);
                    accum(self, &mut grads, a, da);
                }
                Op::BroadcastScalar(a) => {
                    let s = self.sum_all(g);
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let da = self.reshape(s, shape);
                    accum(self, &mut grads, a, da);
                }
                Op::Gather { src, idx } => {
                    let shape = self.nodes[src.0].value.shape().to_vec();
                    let flat_len = self.nodes[src.0].value.len();
                    let gf = self.reshape(g, vec![self.nodes[g.0].value.len()]);
                    let s = self.scatter_add(gf, idx, vec![flat_len]);
                    let da = self.reshape(s, shape);
                    accum(self, &mut grads, src, da);
                }
                Op::ScatterAdd { src, idx } => {
                    let shape = self.nodes[src.0].value.shape().to_vec();
                    let flat_len = self.nodes[g.0].value.len();
                    let gf = self.reshape(g, vec![flat_len]);
                    let t = self.gather(gf, idx, vec![self.nodes[src.0].value.len()]);
                    let da = self.reshape(t, shape);
                    accum(self, &mut grads, src, da);
                }
                Op::GatherRows { src, idx } => {
                    let rows = self.nodes[src.0].value.shape()[0];
                    let da = self.scatter_add_rows(g, idx, rows);
                    accum(self, &mut grads, src, da);
                }
                Op::ScatterAddRows { src, idx } => {
                    let da = self.gather_rows(g, idx);
                    accum(self, &mut grads, src, da);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let da = self.reshape(g, shape);
                    accum(self, &mut grads, a, da);
                }
                Op::Concat(parts) => {
                    let g_len = self.nodes[g.0].value.len();
                    let gf = self.reshape(g, vec![g_len]);
                    let mut offset = 0usize;
                    for p in parts {
                        let shape = self.nodes[p.0].value.shape().to_vec();
                        let len = self.nodes[p.0].value.len();
                        if needs[p.0] {
                            let idx = Arc::new((offset..offset + len).collect::<Vec<_>>());
                            let t = self.gather(gf, idx, vec![len]);
                            let da = self.reshape(t, shape);
                            accum(self, &mut grads, p, da);
                        }
                        offset += len;
                    }
                }
            }
        }

        wrt.iter()
            .map(|w| match grads[w.0] {
                Some(g) => g,
                None => {
                    let shape = self.nodes[w.0].value.shape().to_vec();
                    self.constant(Tensor::zeros(shape))
                }
            })
            .collect()
    }

    // ---- composite helpers ----

    pub fn ones(&mut self, shape: impl Into<Vec<usize>>) -> Var {
        self.constant(Tensor::full(shape, 1.0))
    }

    /// Row sums of a rank-2 tensor, shape (m, 1).
    pub fn row_sum(&mut self, x: Var) -> Var {
        let n = self.value(x).shape()[1];
        let ones = self.ones(vec![n, 1]);
        self.matmul(x, ones)
    }

    /// Column sums of a rank-2 tensor, shape (1, n).
    pub fn col_sum(&mut self, x: Var) -> Var {
        let m = self.value(x).shape()[0];
        let ones = self.ones(vec![1, m]);
        self.matmul(ones, x)
    }

    /// Tile an (m, 1) column vector to (m, n).
    pub fn repeat_cols(&mut self, v: Var, n: usize) -> Var {
        let ones = self.ones(vec![1, n]);
        self.matmul(v, ones)
    }

    /// Tile a (1, n) row vector to (m, n).
    pub fn repeat_rows(&mut self, v: Var, m: usize) -> Var {
        let ones = self.ones(vec![m, 1]);
        self.matmul(ones, v)
    }

    /// `x (m, n) + bias (1, n)` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let m = self.value(x).shape()[0];
        let b = self.repeat_rows(bias, m);
        self.add(x, b)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let t = self.mul(a, b);
        self.sum_all(t)
    }

    /// Row-wise softmax with the usual constant-shift stabilization. The
    /// shift is taken from forward values, which leaves both the value and
    /// the gradient exact.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape().len(), 2);
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut shift = vec![0.0; m * n];
        for i in 0..m {
            let row = &t.data()[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shift[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = mx);
        }
        let shift = self.constant(Tensor::new(vec![m, n], shift));
        let xs = self.sub(x, shift);
        let e = self.exp(xs);
        let s = self.row_sum(e);
        let s = self.repeat_cols(s, n);
        self.div(e, s)
    }

    /// L2-normalize each row; norms are clamped below at `eps`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let n = self.value(x).shape()[1];
        let sq = self.mul(x, x);
        let ss = self.row_sum(sq);
        let norm = self.sqrt(ss);
        let norm = self.clamp_min(norm, eps);
        let norm = self.repeat_cols(norm, n);
        self.div(x, norm)
    }

    /// Mean of squared elements.
    pub fn mean_sq(&mut self, x: Var) -> Var {
        let sq = self.mul(x, x);
        self.mean_all(sq)
    }

    /// Select a contiguous column range of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let shape = self.value(x).shape().to_vec();
        let (m, n) = (shape[0], shape[1]);
        assert!(start <= end && end <= n);
        let w = end - start;
        let idx: Vec<usize> = (0..m).flat_map(|i| (start..end).map(move |j| i * n + j)).collect();
        self.gather(x, Arc::new(idx), vec![m, w])
    }
}
