//! Multi-stem attention fusion.
//!
//! For each pair (mixture, stem) with stem in {vocal, accompaniment} one
//! similarity matrix `S = Q_mix K_stemᵀ / √d` is computed. The mixture attends
//! to the stem through `softmax(S)`, the stem attends to the mixture through
//! `softmax(Sᵀ)`, and the attended values are added back residually:
//!
//! ```text
//! out_mix = x_mix + (attn_mix←voc + attn_mix←acc)
//! out_voc = x_voc + attn_voc←mix
//! out_acc = x_acc + attn_acc←mix
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::{Graph, ParamId, ParamStore, Var};

#[derive(Debug)]
pub struct Msaf {
    pub query_mix: ParamId,
    pub key_voc: ParamId,
    pub key_acc: ParamId,
    pub value_mix: ParamId,
    pub value_voc: ParamId,
    pub value_acc: ParamId,
    pub heads: usize,
    similarity_calls: AtomicU64,
}

impl Clone for Msaf {
    fn clone(&self) -> Self {
        Self {
            similarity_calls: AtomicU64::new(self.similarity_count()),
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MsafOutput {
    pub out_mix: Var,
    pub out_voc: Var,
    pub out_acc: Var,
}

/// Attention in both directions derived from one similarity matrix.
#[derive(Clone, Copy, Debug)]
pub struct BidirectionalAttention {
    /// Rows of `S` attend over `v_fwd`.
    pub forward: Var,
    /// Rows of `Sᵀ` attend over `v_bwd`.
    pub backward: Var,
}

impl Msaf {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "msaf dim {dim} is not divisible by {heads} heads"
            )));
        }
        let mut proj = |p: &str| store.add_weight(format!("{name}.{p}"), dim, dim, rng);
        Ok(Self {
            query_mix: proj("q_mix"),
            key_voc: proj("k_voc"),
            key_acc: proj("k_acc"),
            value_mix: proj("v_mix"),
            value_voc: proj("v_voc"),
            value_acc: proj("v_acc"),
            heads,
            similarity_calls: AtomicU64::new(0),
        })
    }

    /// Number of similarity matrices computed since construction.
    pub fn similarity_count(&self) -> u64 {
        self.similarity_calls.load(Ordering::Relaxed)
    }

    pub fn reset_similarity_count(&self) {
        self.similarity_calls.store(0, Ordering::Relaxed);
    }

    pub fn zero_values(&self, store: &mut ParamStore) {
        for id in [self.value_mix, self.value_voc, self.value_acc] {
            store.value_mut(id).fill(0.0);
        }
    }

    fn project(&self, g: &mut Graph, store: &ParamStore, x: Var, w: ParamId) -> Result<Var> {
        let w = g.param(store, w);
        g.matmul(x, w)
    }

    /// Per-head similarity matrices `Q_h K_hᵀ / √d_h` for projected queries and keys.
    pub fn similarity(&self, g: &mut Graph, query: Var, key: Var) -> Result<Vec<Var>> {
        let (tq, d) = g.shape(query);
        let (tk, dk) = g.shape(key);
        if d != dk || tq != tk {
            return Err(Error::Shape {
                op: "similarity",
                lhs: (tq, d),
                rhs: (tk, dk),
            });
        }
        self.similarity_calls.fetch_add(1, Ordering::Relaxed);
        let head_dim = d / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (q, k) = if self.heads == 1 {
                (query, key)
            } else {
                (
                    g.slice_cols(query, h * head_dim, head_dim)?,
                    g.slice_cols(key, h * head_dim, head_dim)?,
                )
            };
            let kt = g.transpose(k);
            let s = g.matmul(q, kt)?;
            out.push(g.scale(s, scale));
        }
        Ok(out)
    }

    /// `softmax(S)·v_fwd` and `softmax(Sᵀ)·v_bwd`, per head, heads concatenated.
    pub fn bidirectional_attend(
        &self,
        g: &mut Graph,
        similarity: &[Var],
        v_fwd: Var,
        v_bwd: Var,
    ) -> Result<BidirectionalAttention> {
        let head_dim = g.shape(v_fwd).1 / similarity.len();
        let mut fwd = Vec::with_capacity(similarity.len());
        let mut bwd = Vec::with_capacity(similarity.len());
        for (h, &s) in similarity.iter().enumerate() {
            let (vf, vb) = if similarity.len() == 1 {
                (v_fwd, v_bwd)
            } else {
                (
                    g.slice_cols(v_fwd, h * head_dim, head_dim)?,
                    g.slice_cols(v_bwd, h * head_dim, head_dim)?,
                )
            };
            let (f, b) = bidirectional_attend(g, s, vf, vb)?;
            fwd.push(f);
            bwd.push(b);
        }
        let join = |g: &mut Graph, parts: Vec<Var>| -> Result<Var> {
            if parts.len() == 1 {
                Ok(parts[0])
            } else {
                g.concat_cols(&parts)
            }
        };
        Ok(BidirectionalAttention {
            forward: join(g, fwd)?,
            backward: join(g, bwd)?,
        })
    }

    pub fn fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x_mix: Var,
        x_voc: Var,
        x_acc: Var,
    ) -> Result<MsafOutput> {
        for (other, name) in [(x_voc, "fuse(voc)"), (x_acc, "fuse(acc)")] {
            if g.shape(other) != g.shape(x_mix) {
                return Err(Error::Shape {
                    op: name,
                    lhs: g.shape(x_mix),
                    rhs: g.shape(other),
                });
            }
        }
        let q_mix = self.project(g, store, x_mix, self.query_mix)?;
        let k_voc = self.project(g, store, x_voc, self.key_voc)?;
        let k_acc = self.project(g, store, x_acc, self.key_acc)?;
        let v_mix = self.project(g, store, x_mix, self.value_mix)?;
        let v_voc = self.project(g, store, x_voc, self.value_voc)?;
        let v_acc = self.project(g, store, x_acc, self.value_acc)?;

        let s_mv = self.similarity(g, q_mix, k_voc)?;
        let voc = self.bidirectional_attend(g, &s_mv, v_voc, v_mix)?;
        let s_ma = self.similarity(g, q_mix, k_acc)?;
        let acc = self.bidirectional_attend(g, &s_ma, v_acc, v_mix)?;

        let mixed = g.add(voc.forward, acc.forward)?;
        Ok(MsafOutput {
            out_mix: g.add(x_mix, mixed)?,
            out_voc: g.add(x_voc, voc.backward)?,
            out_acc: g.add(x_acc, acc.backward)?,
        })
    }
}

/// Single-head attention in both directions from one `T x T` similarity node.
/// The reverse direction uses the transpose of the same node.
pub fn bidirectional_attend(g: &mut Graph, s: Var, v_fwd: Var, v_bwd: Var) -> Result<(Var, Var)> {
    let (r, c) = g.shape(s);
    if r != c {
        return Err(Error::Shape {
            op: "bidirectional_attend",
            lhs: (r, c),
            rhs: g.shape(v_fwd),
        });
    }
    let p = g.softmax_rows(s);
    let fwd = g.matmul(p, v_fwd)?;
    let st = g.transpose(s);
    let pt = g.softmax_rows(st);
    let bwd = g.matmul(pt, v_bwd)?;
    Ok((fwd, bwd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::gradcheck::check_gradients;
    use crate::numkernel::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(dim: usize, seed: u64) -> (ParamStore, Msaf, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let msaf = Msaf::new(&mut store, "msaf", dim, 1, &mut rng).unwrap();
        (store, msaf, rng)
    }

    #[test]
    fn identity_projection_similarity() {
        let (mut store, msaf, _) = setup(2, 0);
        for id in [msaf.query_mix, msaf.key_voc] {
            *store.value_mut(id) = Matrix::identity(2);
        }
        let mut g = Graph::new();
        let x = g.constant(Matrix::identity(2));
        let q = msaf.project(&mut g, &store, x, msaf.query_mix).unwrap();
        let k = msaf.project(&mut g, &store, x, msaf.key_voc).unwrap();
        let s = msaf.similarity(&mut g, q, k).unwrap()[0];
        let r = 1.0 / 2f64.sqrt();
        assert_eq!(g.value(s), &Matrix::from_rows(&[&[r, 0.0], &[0.0, r]]));
    }

    #[test]
    fn zero_stem_gives_zero_similarity() {
        let (store, msaf, mut rng) = setup(3, 1);
        let mut g = Graph::new();
        let xm = g.constant(random_matrix(&mut rng, 4, 3));
        let xs = g.constant(Matrix::zeros(4, 3));
        let q = msaf.project(&mut g, &store, xm, msaf.query_mix).unwrap();
        let k = msaf.project(&mut g, &store, xs, msaf.key_voc).unwrap();
        let s = msaf.similarity(&mut g, q, k).unwrap()[0];
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_similarity_averages_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let vf = random_matrix(&mut rng, 3, 2);
        let vb = random_matrix(&mut rng, 3, 2);
        let s = g.constant(Matrix::zeros(3, 3));
        let (vfv, vbv) = (g.constant(vf.clone()), g.constant(vb.clone()));
        let (f, b) = bidirectional_attend(&mut g, s, vfv, vbv).unwrap();
        let (mf, mb) = (vf.mean_rows(), vb.mean_rows());
        for r in 0..3 {
            for c in 0..2 {
                assert!((g.value(f).get(r, c) - mf.get(0, c)).abs() < 1e-15);
                assert!((g.value(b).get(r, c) - mb.get(0, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hard_attention_limit_selects_row() {
        let mut g = Graph::new();
        let v = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let mut sm = Matrix::zeros(3, 3);
        sm.set(0, 2, 1e4);
        let s = g.constant(sm);
        let vv = g.constant(v);
        let (f, _) = bidirectional_attend(&mut g, s, vv, vv).unwrap();
        assert!((g.value(f).get(0, 0) - 5.0).abs() < 1e-12);
        assert!((g.value(f).get(0, 1) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn two_frame_closed_form() {
        let mut g = Graph::new();
        let s = g.constant(Matrix::from_rows(&[&[0.0, 3f64.ln()], &[0.0, 0.0]]));
        let v = Matrix::from_rows(&[&[1.0, -2.0], &[4.0, 8.0]]);
        let vv = g.constant(v.clone());
        let (f, _) = bidirectional_attend(&mut g, s, vv, vv).unwrap();
        for c in 0..2 {
            let want = 0.25 * v.get(0, c) + 0.75 * v.get(1, c);
            assert!((g.value(f).get(0, c) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_values_make_fuse_the_identity() {
        let (mut store, msaf, mut rng) = setup(4, 3);
        msaf.zero_values(&mut store);
        let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 5, 4)).collect();
        let mut g = Graph::new();
        let v: Vec<Var> = xs.iter().map(|m| g.constant(m.clone())).collect();
        let out = msaf.fuse(&mut g, &store, v[0], v[1], v[2]).unwrap();
        assert_eq!(g.value(out.out_mix), &xs[0]);
        assert_eq!(g.value(out.out_voc), &xs[1]);
        assert_eq!(g.value(out.out_acc), &xs[2]);
    }

    #[test]
    fn two_similarities_per_fuse() {
        let (store, msaf, mut rng) = setup(4, 4);
        let mut g = Graph::new();
        let v: Vec<Var> = (0..3).map(|_| g.constant(random_matrix(&mut rng, 3, 4))).collect();
        msaf.fuse(&mut g, &store, v[0], v[1], v[2]).unwrap();
        assert_eq!(msaf.similarity_count(), 2);
        msaf.fuse(&mut g, &store, v[0], v[1], v[2]).unwrap();
        assert_eq!(msaf.similarity_count(), 4);
    }

    #[test]
    fn fuse_gradients_match_finite_differences() {
        let (mut store, msaf, mut rng) = setup(4, 5);
        let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 5, 4)).collect();
        let report = check_gradients(&mut store, |g, s| {
            let v: Vec<Var> = xs.iter().map(|m| g.constant(m.clone())).collect();
            let out = msaf.fuse(g, s, v[0], v[1], v[2])?;
            let a = g.sum(out.out_mix);
            let b = g.sum(out.out_voc);
            let c = g.sum(out.out_acc);
            let t = g.add(a, b)?;
            let t = g.scale(t, 0.5);
            g.add(t, c)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn swapping_stems_swaps_outputs() {
        let (store, msaf, mut rng) = setup(4, 6);
        let swapped = Msaf {
            key_voc: msaf.key_acc,
            key_acc: msaf.key_voc,
            value_voc: msaf.value_acc,
            value_acc: msaf.value_voc,
            ..msaf.clone()
        };
        let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 4, 4)).collect();
        let mut g = Graph::new();
        let v: Vec<Var> = xs.iter().map(|m| g.constant(m.clone())).collect();
        let a = msaf.fuse(&mut g, &store, v[0], v[1], v[2]).unwrap();
        let b = swapped.fuse(&mut g, &store, v[0], v[2], v[1]).unwrap();
        assert_eq!(g.value(a.out_mix), g.value(b.out_mix));
        assert_eq!(g.value(a.out_voc), g.value(b.out_acc));
        assert_eq!(g.value(a.out_acc), g.value(b.out_voc));
    }

    #[test]
    fn multi_head_extension_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let msaf = Msaf::new(&mut store, "m", 4, 2, &mut rng).unwrap();
        let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 3, 4)).collect();
        let report = check_gradients(&mut store, |g, s| {
            let v: Vec<Var> = xs.iter().map(|m| g.constant(m.clone())).collect();
            let out = msaf.fuse(g, s, v[0], v[1], v[2])?;
            Ok(g.sum(out.out_mix))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4);
        assert!(Msaf::new(&mut store, "bad", 5, 2, &mut rng).is_err());
    }

    #[test]
    fn mismatched_stems_rejected() {
        let (store, msaf, _) = setup(4, 8);
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(3, 4));
        let b = g.constant(Matrix::zeros(2, 4));
        assert!(matches!(msaf.fuse(&mut g, &store, a, b, a), Err(Error::Shape { .. })));
    }
}
