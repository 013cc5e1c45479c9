//! Tri-plane field representation: three axis-aligned feature planes over
//! the cube [-1, 1]^3, a bilinear point query, a small density/feature
//! decoder, and iso-surface mesh extraction.

use crate::nn::{Binding, Linear, ParamSet};
use crate::{Error, Result};
use facegen_grad::{Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::Arc;

/// Which coordinate pair each plane stores, in order: XY, XZ, YZ.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Owned tri-plane values. Each plane is an (R*R, C) matrix, pixel-major
/// over (second axis * R + first axis).
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlane {
    pub channels: usize,
    pub resolution: usize,
    pub planes: [Tensor; 3],
}

impl TriPlane {
    pub fn new(channels: usize, resolution: usize, planes: [Tensor; 3]) -> Result<Self> {
        for p in &planes {
            if p.shape() != [resolution * resolution, channels] {
                return Err(Error::InvalidArgument(format!(
                    "plane shape {:?}, expected ({}, {})",
                    p.shape(),
                    resolution * resolution,
                    channels
                )));
            }
            if !p.all_finite() {
                return Err(Error::Numerical("non-finite tri-plane values".into()));
            }
        }
        Ok(Self { channels, resolution, planes })
    }

    pub fn zeros(channels: usize, resolution: usize) -> Self {
        let t = || Tensor::zeros(vec![resolution * resolution, channels]);
        Self { channels, resolution, planes: [t(), t(), t()] }
    }

    pub fn bind(&self, tape: &mut Tape) -> [Var; 3] {
        [
            tape.constant(self.planes[0].clone()),
            tape.constant(self.planes[1].clone()),
            tape.constant(self.planes[2].clone()),
        ]
    }
}

/// Query the tri-plane at `xyz` (a (P, 3) var of cube coordinates): the
/// three plane projections are bilinearly interpolated and summed.
/// Out-of-bounds coordinates clamp to the boundary. Differentiable in both
/// the plane values and the coordinates.
pub fn sample_triplane(
    tape: &mut Tape,
    planes: &[Var; 3],
    xyz: Var,
    resolution: usize,
    channels: usize,
) -> Result<Var> {
    let pts = tape.value(xyz);
    if !pts.all_finite() {
        return Err(Error::Numerical("non-finite query coordinates".into()));
    }
    let p = pts.shape()[0];
    assert_eq!(pts.shape()[1], 3);
    let r = resolution;
    let half = (r - 1) as f64 / 2.0;

    let clamped = tape.clamp_min(xyz, -1.0);
    let clamped = tape.clamp_max(clamped, 1.0);

    let mut acc: Option<Var> = None;
    for (plane_i, (au, av)) in PLANE_AXES.iter().enumerate() {
        let u = tape.slice_cols(clamped, *au, *au + 1);
        let v = tape.slice_cols(clamped, *av, *av + 1);
        // Map [-1, 1] to grid coordinates [0, R-1].
        let su = tape.mul_scalar(u, half);
        let gu = tape.add_scalar(su, half);
        let sv = tape.mul_scalar(v, half);
        let gv = tape.add_scalar(sv, half);

        // Cell indices come from forward values; the fractional offsets
        // stay on the tape so gradients flow into the coordinates.
        let gu_vals: Vec<f64> = tape.value(gu).data().to_vec();
        let gv_vals: Vec<f64> = tape.value(gv).data().to_vec();
        let iu: Vec<usize> = gu_vals.iter().map(|g| cell_index(*g, r)).collect();
        let iv: Vec<usize> = gv_vals.iter().map(|g| cell_index(*g, r)).collect();

        let iu_t = tape.constant(Tensor::new(vec![p, 1], iu.iter().map(|i| *i as f64).collect()));
        let iv_t = tape.constant(Tensor::new(vec![p, 1], iv.iter().map(|i| *i as f64).collect()));
        let fu = tape.sub(gu, iu_t);
        let fv = tape.sub(gv, iv_t);
        let one_minus_fu = one_minus(tape, fu);
        let one_minus_fv = one_minus(tape, fv);

        let corner = |du: usize, dv: usize| -> Arc<Vec<usize>> {
            Arc::new(
                iu.iter()
                    .zip(&iv)
                    .map(|(cu, cv)| (cv + dv) * r + (cu + du))
                    .collect::<Vec<_>>(),
            )
        };

        for (du, dv, wu, wv) in [
            (0, 0, one_minus_fu, one_minus_fv),
            (1, 0, fu, one_minus_fv),
            (0, 1, one_minus_fu, fv),
            (1, 1, fu, fv),
        ] {
            let vals = tape.gather_rows(planes[plane_i], corner(du, dv));
            let w = tape.mul(wu, wv);
            let w = tape.repeat_cols(w, channels);
            let term = tape.mul(w, vals);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
    }
    Ok(acc.unwrap())
}

fn one_minus(tape: &mut Tape, v: Var) -> Var {
    let n = tape.neg(v);
    tape.add_scalar(n, 1.0)
}

fn cell_index(g: f64, r: usize) -> usize {
    (g.floor() as isize).clamp(0, r as isize - 2) as usize
}

/// Small fully-connected decoder mapping a queried plane feature to a
/// nonnegative density (softplus) and an unconstrained feature vector.
#[derive(Clone, Debug)]
pub struct PointDecoder {
    pub in_channels: usize,
    pub hidden: usize,
    pub feature_channels: usize,
    l1: Linear,
    l2: Linear,
}

impl PointDecoder {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        in_channels: usize,
        hidden: usize,
        feature_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let l1 = Linear::init(ps, &format!("{prefix}.l1"), in_channels, hidden, rng);
        let l2 = Linear::init(ps, &format!("{prefix}.l2"), hidden, 1 + feature_channels, rng);
        Self { in_channels, hidden, feature_channels, l1, l2 }
    }

    /// (P, C) features -> ((P, 1) density, (P, F) feature).
    pub fn decode(&self, tape: &mut Tape, bind: &Binding, feats: Var) -> (Var, Var) {
        let h = self.l1.forward(tape, bind, feats);
        let h = tape.leaky_relu(h, 0.2);
        let out = self.l2.forward(tape, bind, h);
        let raw_density = tape.slice_cols(out, 0, 1);
        let density = tape.softplus(raw_density);
        let feature = tape.slice_cols(out, 1, 1 + self.feature_channels);
        (density, feature)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// V - E + F over unique undirected edges.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &self.faces {
            s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        s
    }
}

/// Density evaluator abstraction so tests can inject analytic fields in
/// place of the decoder.
pub trait DensityField {
    /// Densities for a batch of points given as (P, 3) rows.
    fn density(&self, points: &[[f64; 3]]) -> Vec<f64>;
}

/// The learned field: tri-plane queries through the decoder.
pub struct DecodedField<'a> {
    pub triplane: &'a TriPlane,
    pub decoder: &'a PointDecoder,
    pub params: &'a ParamSet,
}

impl DensityField for DecodedField<'_> {
    fn density(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(16384) {
            let mut tape = Tape::new();
            let planes = self.triplane.bind(&mut tape);
            let bind = self.params.bind(&mut tape);
            let flat: Vec<f64> = chunk.iter().flat_map(|p| p.iter().copied()).collect();
            let xyz = tape.constant(Tensor::new(vec![chunk.len(), 3], flat));
            let feats = sample_triplane(
                &mut tape,
                &planes,
                xyz,
                self.triplane.resolution,
                self.triplane.channels,
            )
            .expect("finite grid coordinates");
            let (density, _) = self.decoder.decode(&mut tape, &bind, feats);
            out.extend_from_slice(tape.value(density).data());
        }
        out
    }
}

/// Extract the iso-surface of a density field with marching tetrahedra on
/// a uniform grid over [-1, 1]^3 (six-tetrahedra Freudenthal split, which
/// keeps shared faces consistent so the mesh is watertight wherever the
/// surface does not leave the grid).
pub fn extract_mesh(field: &dyn DensityField, grid_res: usize, iso: f64) -> Result<TriangleMesh> {
    if grid_res < 2 {
        return Err(Error::InvalidArgument("grid_res must be at least 2".into()));
    }
    let n = grid_res;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    let mut points = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                points.push([coord(x), coord(y), coord(z)]);
            }
        }
    }
    let values = field.density(&points);
    let vid = |x: usize, y: usize, z: usize| z * n * n + y * n + x;

    // Freudenthal split: six tetrahedra around the main diagonal of each
    // cell, expressed with local cube corner ids (bit 0 = x, 1 = y, 2 = z).
    const TETS: [[usize; 4]; 6] = [
        [0, 1, 3, 7],
        [0, 3, 2, 7],
        [0, 2, 6, 7],
        [0, 6, 4, 7],
        [0, 4, 5, 7],
        [0, 5, 1, 7],
    ];

    let mut mesh = TriangleMesh::default();
    let mut edge_cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edge_vertex = |mesh: &mut TriangleMesh,
                           cache: &mut HashMap<(usize, usize), usize>,
                           a: usize,
                           b: usize|
     -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = cache.get(&key) {
            return v;
        }
        let (da, db) = (values[a], values[b]);
        let t = if (db - da).abs() < 1e-300 { 0.5 } else { (iso - da) / (db - da) };
        let t = t.clamp(0.0, 1.0);
        let pa = points[a];
        let pb = points[b];
        let v = [
            pa[0] + t * (pb[0] - pa[0]),
            pa[1] + t * (pb[1] - pa[1]),
            pa[2] + t * (pb[2] - pa[2]),
        ];
        mesh.vertices.push(v);
        cache.insert(key, mesh.vertices.len() - 1);
        mesh.vertices.len() - 1
    };

    for z in 0..n - 1 {
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let corner = |c: usize| {
                    vid(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1))
                };
                for tet in TETS {
                    let ids = [corner(tet[0]), corner(tet[1]), corner(tet[2]), corner(tet[3])];
                    let inside: Vec<usize> =
                        (0..4).filter(|&i| values[ids[i]] > iso).collect();
                    match inside.len() {
                        0 | 4 => {}
                        1 => {
                            let a = inside[0];
                            let outs: Vec<usize> = (0..4).filter(|i| !inside.contains(i)).collect();
                            let p0 = edge_vertex(&mut mesh, &mut edge_cache, ids[a], ids[outs[0]]);
                            let p1 = edge_vertex(&mut mesh, &mut edge_cache, ids[a], ids[outs[1]]);
                            let p2 = edge_vertex(&mut mesh, &mut edge_cache, ids[a], ids[outs[2]]);
                            mesh.faces.push([p0, p1, p2]);
                        }
                        3 => {
                            let out = (0..4).find(|i| !inside.contains(i)).unwrap();
                            let p0 = edge_vertex(&mut mesh, &mut edge_cache, ids[out], ids[inside[0]]);
                            let p1 = edge_vertex(&mut mesh, &mut edge_cache, ids[out], ids[inside[1]]);
                            let p2 = edge_vertex(&mut mesh, &mut edge_cache, ids[out], ids[inside[2]]);
                            mesh.faces.push([p0, p1, p2]);
                        }
                        2 => {
                            let (a, b) = (inside[0], inside[1]);
                            let outs: Vec<usize> = (0..4).filter(|i| !inside.contains(i)).collect();
                            let (c, d) = (outs[0], outs[1]);
                            let ac = edge_vertex(&mut mesh, &mut edge_cache, ids[a], ids[c]);
                            let ad = edge_vertex(&mut mesh, &mut edge_cache, ids[a], ids[d]);
                            let bc = edge_vertex(&mut mesh, &mut edge_cache, ids[b], ids[c]);
                            let bd = edge_vertex(&mut mesh, &mut edge_cache, ids[b], ids[d]);
                            mesh.faces.push([ac, ad, bd]);
                            mesh.faces.push([ac, bd, bc]);
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
    Ok(mesh)
}
