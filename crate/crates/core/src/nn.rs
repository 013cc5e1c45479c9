//! Parameter collections and the small layer vocabulary (linear, strided
//! conv taps, modulated conv) the networks are assembled from.
//!
//! Activations use a pixel-major (H*W, C) layout throughout, so a
//! convolution is a sum over kernel taps of `gather_rows(x) @ W_tap`.

use facegen_grad::{Tape, Tensor, Var, SENTINEL};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::Arc;

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: HashMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            self.values.insert(name.clone(), value).is_none(),
            "duplicate parameter {name}"
        );
        self.names.push(name);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.values
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.names.iter().map(|n| self.values[n].len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| (n.as_str(), &self.values[n]))
    }

    /// Insert every parameter on the tape (in insertion order) and record
    /// the handles.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let mut vars = Vec::with_capacity(self.names.len());
        let mut map = HashMap::with_capacity(self.names.len());
        for n in &self.names {
            let v = tape.leaf(self.values[n].clone());
            vars.push((n.clone(), v));
            map.insert(n.clone(), v);
        }
        Binding { vars, map }
    }

    /// Content hash over names, shapes and raw little-endian values.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for n in &self.names {
            let t = &self.values[n];
            h.update(n.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        crate::config::hex_of(&h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.names.iter().all(|n| self.values[n].all_finite())
    }
}

/// Tape handles for one bound [`ParamSet`].
pub struct Binding {
    vars: Vec<(String, Var)>,
    map: HashMap<String, Var>,
}

impl Binding {
    /// Assemble a binding from externally created vars (used by tests that
    /// need selected parameters to be gradient-checked leaves).
    pub fn from_pairs(pairs: Vec<(String, Var)>) -> Self {
        let map = pairs.iter().cloned().collect();
        Self { vars: pairs, map }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn ordered_vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| *v).collect()
    }

    pub fn ordered_names(&self) -> Vec<String> {
        self.vars.iter().map(|(n, _)| n.clone()).collect()
    }
}

fn randn_scaled(shape: Vec<usize>, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::randn(shape, rng);
    t.data_mut().iter_mut().for_each(|v| *v *= scale);
    t
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        ps.insert(&w, randn_scaled(vec![in_dim, out_dim], 1.0 / (in_dim as f64).sqrt(), rng));
        ps.insert(&b, Tensor::zeros(vec![1, out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        let y = tape.matmul(x, bind.var(&self.w));
        tape.add_bias(y, bind.var(&self.b))
    }
}

/// Index map for one kernel tap: output pixel -> input pixel (or SENTINEL
/// for zero padding).
pub fn conv_tap_indices(res: usize, k: usize, stride: usize) -> Vec<Arc<Vec<usize>>> {
    let pad = k / 2;
    let out_res = res.div_ceil(stride);
    let mut taps = Vec::with_capacity(k * k);
    for dy in 0..k {
        for dx in 0..k {
            let mut idx = Vec::with_capacity(out_res * out_res);
            for oy in 0..out_res {
                for ox in 0..out_res {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    let ix = (ox * stride + dx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= res as isize || ix >= res as isize {
                        idx.push(SENTINEL);
                    } else {
                        idx.push(iy as usize * res + ix as usize);
                    }
                }
            }
            taps.push(Arc::new(idx));
        }
    }
    taps
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub prefix: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let scale = 1.0 / ((c_in * k * k) as f64).sqrt();
        for j in 0..k * k {
            ps.insert(format!("{prefix}.w{j}"), randn_scaled(vec![c_in, c_out], scale, rng));
        }
        ps.insert(format!("{prefix}.b"), Tensor::zeros(vec![1, c_out]));
        Self { prefix: prefix.into(), c_in, c_out, k, stride }
    }

    pub fn out_res(&self, res: usize) -> usize {
        res.div_ceil(self.stride)
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var, res: usize) -> Var {
        let taps = conv_tap_indices(res, self.k, self.stride);
        let mut acc: Option<Var> = None;
        for (j, idx) in taps.iter().enumerate() {
            let shifted = tape.gather_rows(x, idx.clone());
            let w = bind.var(&format!("{}.w{j}", self.prefix));
            let term = tape.matmul(shifted, w);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        let y = acc.expect("k*k >= 1");
        tape.add_bias(y, bind.var(&format!("{}.b", self.prefix)))
    }

    /// Style-modulated convolution: input channels are scaled by `style`
    /// (shape (1, c_in)) before the kernel, and each output channel is
    /// rescaled so the modulated kernel has unit norm.
    pub fn forward_modulated(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        x: Var,
        res: usize,
        style: Var,
    ) -> Var {
        let p = tape.value(x).shape()[0];
        assert_eq!(p, res * res);
        let style_rows = tape.repeat_rows(style, p);
        let xs = tape.mul(x, style_rows);

        let taps = conv_tap_indices(res, self.k, self.stride);
        let style_col = tape.reshape(style, vec![self.c_in, 1]);
        let style_mat = tape.repeat_cols(style_col, self.c_out);

        let mut acc: Option<Var> = None;
        let mut norm_acc: Option<Var> = None;
        for (j, idx) in taps.iter().enumerate() {
            let shifted = tape.gather_rows(xs, idx.clone());
            let w = bind.var(&format!("{}.w{j}", self.prefix));
            let term = tape.matmul(shifted, w);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
            let ws = tape.mul(w, style_mat);
            let sq = tape.mul(ws, ws);
            let cs = tape.col_sum(sq);
            norm_acc = Some(match norm_acc {
                Some(a) => tape.add(a, cs),
                None => cs,
            });
        }
        let y = acc.unwrap();
        let norm = norm_acc.unwrap();
        let norm = tape.add_scalar(norm, 1e-8);
        let denom = tape.sqrt(norm);
        let ones = tape.ones(vec![1, self.c_out]);
        let demod = tape.div(ones, denom);
        let out_p = self.out_res(res).pow(2);
        let demod_rows = tape.repeat_rows(demod, out_p);
        let y = tape.mul(y, demod_rows);
        tape.add_bias(y, bind.var(&format!("{}.b", self.prefix)))
    }
}

/// Mean over pixels: (P, C) -> (1, C).
pub fn global_mean_pool(tape: &mut Tape, x: Var) -> Var {
    let p = tape.value(x).shape()[0];
    let s = tape.col_sum(x);
    tape.mul_scalar(s, 1.0 / p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use facegen_grad::check::grad_check;
    use rand::SeedableRng;

    #[test]
    fn conv_identity_kernel_passes_through() {
        // 1x1 kernel with identity weights only recopies channels.
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::init(&mut ps, "c", 2, 2, 1, 1, &mut rng);
        *ps.get_mut("c.w0") = Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]);
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let x = tape.constant(Tensor::randn(vec![9, 2], &mut rng));
        let y = conv.forward(&mut tape, &bind, x, 3);
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn strided_conv_shapes() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::init(&mut ps, "c", 3, 5, 3, 2, &mut rng);
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let x = tape.constant(Tensor::randn(vec![16 * 16, 3], &mut rng));
        let y = conv.forward(&mut tape, &bind, x, 16);
        assert_eq!(tape.value(y).shape(), &[64, 5]);
    }

    #[test]
    fn conv_gradients_match_fd() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::init(&mut ps, "c", 2, 3, 3, 1, &mut rng);
        let x = Tensor::randn(vec![16, 2], &mut rng);
        let w0 = ps.get("c.w0").clone();
        let ps2 = ps.clone();
        let conv2 = conv.clone();
        grad_check(
            move |tape, vars| {
                // vars[0] = image, vars[1] = first tap weight; the rest of
                // the parameters ride along as constants.
                let mut pairs = Vec::new();
                for (n, t) in ps2.iter() {
                    if n != "c.w0" {
                        let v = tape.constant(t.clone());
                        pairs.push((n.to_string(), v));
                    }
                }
                pairs.push(("c.w0".into(), vars[1]));
                let bind = Binding::from_pairs(pairs);
                let y = conv2.forward(tape, &bind, vars[0], 4);
                let sq = tape.mul(y, y);
                tape.sum_all(sq)
            },
            &[x, w0],
            1e-5,
            1e-8,
        )
        .assert_below(1e-6);
    }

    #[test]
    fn modulated_conv_grad_and_unit_style_norm() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::init(&mut ps, "m", 3, 4, 3, 1, &mut rng);
        let x = Tensor::randn(vec![16, 3], &mut rng);
        let style = Tensor::randn(vec![1, 3], &mut rng);
        let ps2 = ps.clone();
        let conv2 = conv.clone();
        grad_check(
            move |tape, vars| {
                let bind = ps2.bind(tape);
                let y = conv2.forward_modulated(tape, &bind, vars[0], 4, vars[1]);
                let sq = tape.mul(y, y);
                tape.sum_all(sq)
            },
            &[x, style],
            1e-5,
            1e-8,
        )
        .assert_below(1e-6);
    }
}
