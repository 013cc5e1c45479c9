//! Small shared helpers: the image container, deterministic RNG
//! derivation, and tape utilities that do not belong to the engine.

use facegen_grad::{Tape, Tensor, Var};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// An RGB image stored as an (H*W, 3) row-major matrix in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub res: usize,
    pub pixels: Tensor,
}

impl Image {
    pub fn new(res: usize, pixels: Tensor) -> crate::Result<Self> {
        if pixels.shape() != [res * res, 3] {
            return Err(crate::Error::InvalidImage(format!(
                "expected ({}, 3) pixels, got {:?}",
                res * res,
                pixels.shape()
            )));
        }
        Ok(Self { res, pixels })
    }

    pub fn filled(res: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(res * res * 3);
        for _ in 0..res * res {
            data.extend_from_slice(&color);
        }
        Self { res, pixels: Tensor::new(vec![res * res, 3], data) }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.res + x) * 3;
        let d = self.pixels.data();
        [d[i], d[i + 1], d[i + 2]]
    }
}

/// FNV-1a: a fixed, platform-independent string hash. The std hasher keys
/// are unspecified across releases, which would break toy-encoder
/// determinism guarantees.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive an independent RNG stream from a master seed and a label/index
/// pair. Streams are stable across runs and independent of call order.
pub fn derive_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(label.as_bytes());
    key.extend_from_slice(&index.to_le_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a(&key))
}

/// Column-concatenate rank-2 vars that share a row count.
pub fn concat_cols(tape: &mut Tape, parts: &[Var]) -> Var {
    assert!(!parts.is_empty());
    let rows = tape.value(parts[0]).shape()[0];
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            let s = tape.value(*p).shape();
            assert_eq!(s[0], rows, "concat_cols row mismatch");
            s[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let flat = tape.concat(parts);
    // Map (row, concatenated col) back into the flat layout of the parts.
    let mut idx = Vec::with_capacity(rows * total);
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0usize, |acc, w| {
            let o = *acc;
            *acc += rows * w;
            Some(o)
        })
        .collect();
    for r in 0..rows {
        for (p, w) in widths.iter().enumerate() {
            for c in 0..*w {
                idx.push(offsets[p] + r * w + c);
            }
        }
    }
    tape.gather(flat, Arc::new(idx), vec![rows, total])
}

/// Indices implementing nearest-neighbor upsampling of an (res^2, C)
/// pixel-major image to (out_res^2, C).
pub fn nearest_upsample_idx(res: usize, out_res: usize) -> Arc<Vec<usize>> {
    let mut idx = Vec::with_capacity(out_res * out_res);
    for y in 0..out_res {
        for x in 0..out_res {
            let sy = y * res / out_res;
            let sx = x * res / out_res;
            idx.push(sy * res + sx);
        }
    }
    Arc::new(idx)
}

/// Mean over all elements of a slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a == b {
        // cos(x, x) is 1 by definition; dividing dot by norm^2 would lose
        // the last ulp through the square roots.
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_cols_layout() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]));
        let b = tape.constant(Tensor::new(vec![2, 1], vec![9., 8.]));
        let c = concat_cols(&mut tape, &[a, b]);
        assert_eq!(tape.value(c).shape(), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[1., 2., 9., 3., 4., 8.]);
    }

    #[test]
    fn rng_streams_are_stable() {
        use rand::Rng;
        let mut a = derive_rng(7, "batch", 3);
        let mut b = derive_rng(7, "batch", 3);
        let mut c = derive_rng(7, "batch", 4);
        let (x, y, z): (f64, f64, f64) = (a.gen(), b.gen(), c.gen());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn nearest_idx_doubles() {
        let idx = nearest_upsample_idx(2, 4);
        assert_eq!(&idx[0..4], &[0, 0, 1, 1]);
        assert_eq!(&idx[12..16], &[2, 2, 3, 3]);
    }
}
