//! Finite-difference verification of every tape primitive and the
//! composite helpers built on top of them.

use facegen_grad::check::grad_check;
use facegen_grad::tape::{Tape, Var};
use facegen_grad::{Tensor, SENTINEL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(build: impl Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) {
    grad_check(build, inputs, 1e-5, 1e-8).assert_below(1e-6);
}

#[test]
fn elementwise_binaries() {
    let a = Tensor::randn(vec![3, 4], &mut rng(1));
    let mut b = Tensor::randn(vec![3, 4], &mut rng(2));
    // keep divisors away from zero
    b.data_mut().iter_mut().for_each(|v| *v = v.signum() * (v.abs() + 0.5));
    check(
        |t, v| {
            let s = t.add(v[0], v[1]);
            let s = t.mul(s, v[0]);
            let s = t.sub(s, v[1]);
            let s = t.div(s, v[1]);
            t.sum_all(s)
        },
        &[a, b],
    );
}

#[test]
fn unary_chain() {
    let mut x = Tensor::randn(vec![8], &mut rng(3));
    x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.3);
    check(
        |t, v| {
            let e = t.exp(v[0]);
            let l = t.ln(e);
            let q = t.sqrt(l);
            let s = t.sigmoid(q);
            let p = t.softplus(s);
            let n = t.neg(p);
            let r = t.leaky_relu(n, 0.2);
            let c = t.clamp_min(r, -0.35);
            let c = t.clamp_max(c, -0.05);
            let c = t.add_scalar(c, 2.0);
            let c = t.mul_scalar(c, 1.7);
            t.mean_all(c)
        },
        &[x],
    );
}

#[test]
fn matmul_all_transpose_combinations() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { vec![4, 3] } else { vec![3, 4] };
        let b_shape = if tb { vec![5, 4] } else { vec![4, 5] };
        let a = Tensor::randn(a_shape, &mut rng(10));
        let b = Tensor::randn(b_shape, &mut rng(11));
        check(
            move |t, v| {
                let m = t.matmul_t(v[0], ta, v[1], tb);
                let sq = t.mul(m, m);
                t.sum_all(sq)
            },
            &[a, b],
        );
    }
}

#[test]
fn gather_scatter_rows_and_flat() {
    let x = Tensor::randn(vec![5, 3], &mut rng(20));
    let idx = Arc::new(vec![4usize, 0, 0, SENTINEL, 2]);
    let flat_idx = Arc::new(vec![1usize, 1, 14, SENTINEL]);
    check(
        move |t, v| {
            let g = t.gather_rows(v[0], idx.clone());
            let s = t.scatter_add_rows(g, Arc::new(vec![0, 1, 2, 3, 0]), 4);
            let f = t.reshape(s, vec![12]);
            let picked = t.gather(f, Arc::new(vec![0usize, 3, 5, 11]), vec![4]);
            let back = t.scatter_add(picked, flat_idx.clone(), vec![15]);
            let sq = t.mul(back, back);
            t.sum_all(sq)
        },
        &[x],
    );
}

#[test]
fn concat_broadcast_slice() {
    let a = Tensor::randn(vec![2, 2], &mut rng(30));
    let b = Tensor::randn(vec![3], &mut rng(31));
    check(
        |t, v| {
            let c = t.concat(&[v[0], v[1]]);
            let c = t.reshape(c, vec![1, 7]);
            let tiled = t.repeat_rows(c, 4);
            let cols = t.slice_cols(tiled, 2, 6);
            let s = t.mean_all(cols);
            let big = t.broadcast_scalar(s, vec![3, 3]);
            let sq = t.mul(big, big);
            t.sum_all(sq)
        },
        &[a, b],
    );
}

#[test]
fn softmax_and_normalize() {
    let x = Tensor::randn(vec![3, 5], &mut rng(40));
    let w = Tensor::randn(vec![3, 5], &mut rng(41));
    check(
        |t, v| {
            let s = t.softmax_rows(v[0]);
            let n = t.l2_normalize_rows(v[1], 1e-12);
            let p = t.mul(s, n);
            t.sum_all(p)
        },
        &[x, w],
    );
}

#[test]
fn second_order_matches_fd_of_first_order()
{
    // H(x) of f = sum(sigmoid(x)^2): compare taped second derivative
    // against finite differences of the taped first derivative.
    let x = Tensor::randn(vec![6], &mut rng(50));

    let first = |xs: &Tensor| -> Tensor {
        let mut t = Tape::new();
        let v = t.leaf(xs.clone());
        let s = t.sigmoid(v);
        let sq = t.mul(s, s);
        let f = t.sum_all(sq);
        let g = t.backward(f, &[v])[0];
        t.value(g).clone()
    };

    // analytic second derivative diag via double backward
    let mut t = Tape::new();
    let v = t.leaf(x.clone());
    let s = t.sigmoid(v);
    let sq = t.mul(s, s);
    let f = t.sum_all(sq);
    let g = t.backward(f, &[v])[0];
    let gs = t.sum_all(g);
    let h = t.backward(gs, &[v])[0];
    let analytic = t.value(h).clone();

    let eps = 1e-5;
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[j] += eps;
        let mut xm = x.clone();
        xm.data_mut()[j] -= eps;
        let fd: f64 = (0..x.len())
            .map(|k| (first(&xp).data()[k] - first(&xm).data()[k]) / (2.0 * eps))
            .sum();
        let an = analytic.data()[j];
        assert!((an - fd).abs() < 1e-6, "entry {j}: {an} vs {fd}");
    }
}
