//! Per-stem encoder: attention-weighted fusion of the layer stack followed by
//! a stack of pre-norm Transformer blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerNorm, Linear, Mlp};
use crate::numkernel::{Graph, Matrix, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_mult: usize,
    /// Number of feature layers per stem before fusion.
    pub layers: usize,
    pub fusion_reduction: usize,
    pub positional_encoding: bool,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            heads: 4,
            blocks: 3,
            ffn_mult: 4,
            layers: 2,
            fusion_reduction: 2,
            positional_encoding: false,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.layers == 0 || self.ffn_mult == 0 {
            return Err(Error::Config(
                "encoder dim, heads, layers and ffn_mult must be positive".into(),
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.fusion_reduction == 0 {
            return Err(Error::Config("fusion_reduction must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Training-time randomness for dropout; `None` means inference.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

/// Channel attention over the layer axis.
///
/// Each layer is pooled over all frames and channels to an average and a max
/// descriptor. The two `1 x L` descriptor rows pass through a shared bottleneck
/// MLP (`L -> max(1, L / r) -> L`, ReLU), the outputs are summed, and a softmax
/// over layers gives the fusion weights.
#[derive(Clone, Debug)]
pub struct LayerFusion {
    pub mlp: Mlp,
    pub layers: usize,
}

impl LayerFusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layers: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = (layers / reduction).max(1);
        Self {
            mlp: Mlp::new(store, name, (layers, hidden, layers), Activation::Relu, rng),
            layers,
        }
    }

    /// Fusion weights as a `1 x L` row.
    pub fn weights(&self, g: &mut Graph, store: &ParamStore, stack: &[Var]) -> Result<Var> {
        if stack.len() != self.layers {
            return Err(Error::InvalidInput(format!(
                "expected {} feature layers, got {}",
                self.layers,
                stack.len()
            )));
        }
        let means: Vec<Var> = stack.iter().map(|&x| g.mean(x)).collect();
        let maxes: Vec<Var> = stack.iter().map(|&x| g.max_all(x)).collect();
        let avg = g.concat_cols(&means)?;
        let max = g.concat_cols(&maxes)?;
        let a = self.mlp.forward(g, store, avg)?;
        let m = self.mlp.forward(g, store, max)?;
        let logits = g.add(a, m)?;
        Ok(g.softmax_rows(logits))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stack: &[Var]) -> Result<Var> {
        let w = self.weights(g, store, stack)?;
        let mut acc: Option<Var> = None;
        for (l, &x) in stack.iter().enumerate() {
            let wl = g.select(w, 0, l);
            let term = g.scale_by(x, wl)?;
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        acc.ok_or(Error::Empty("layer stack"))
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let dim = g.shape(x).1;
        let head_dim = dim / self.heads;
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim)?;
            let kh = g.slice_cols(k, h * head_dim, head_dim)?;
            let vh = g.slice_cols(v, h * head_dim, head_dim)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.output.forward(g, store, merged)
    }
}

/// Pre-norm block: `x + attn(ln1(x))`, then `+ ffn(ln2(.))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attention: SelfAttention,
    pub norm2: LayerNorm,
    pub ffn: Mlp,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.dim;
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attention: SelfAttention::new(store, &format!("{name}.attn"), d, cfg.heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ffn: Mlp::new(
                store,
                &format!("{name}.ffn"),
                (d, cfg.ffn_mult * d, d),
                Activation::Gelu,
                rng,
            ),
            dropout: cfg.dropout,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let h = self.norm1.forward(g, store, x)?;
        let a = self.attention.forward(g, store, h)?;
        let a = self.maybe_dropout(g, a, rng.as_deref_mut())?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h)?;
        let f = self.maybe_dropout(g, f, rng)?;
        g.add(x, f)
    }

    fn maybe_dropout(&self, g: &mut Graph, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(rng) if self.dropout > 0.0 => {
                let (r, c) = g.shape(x);
                let keep = 1.0 - self.dropout;
                let mask: Vec<f64> = (0..r * c)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = g.constant(Matrix::from_vec(r, c, mask)?);
                g.mul(x, mask)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub fusion: LayerFusion,
    pub blocks: Vec<EncoderBlock>,
    pub positional_encoding: bool,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let fusion = LayerFusion::new(
            store,
            &format!("{name}.fusion"),
            cfg.layers,
            cfg.fusion_reduction,
            rng,
        );
        let blocks = (0..cfg.blocks)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), cfg, rng))
            .collect();
        Ok(Self {
            fusion,
            blocks,
            positional_encoding: cfg.positional_encoding,
        })
    }

    /// Runs the Transformer blocks over a fused `T x d` sequence.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let mut h = x;
        if self.positional_encoding {
            let (t, d) = g.shape(x);
            let pe = g.constant(sinusoidal_positions(t, d));
            h = g.add(h, pe)?;
        }
        for block in &self.blocks {
            h = block.forward(g, store, h, rng.as_deref_mut())?;
        }
        Ok(h)
    }

    /// Layer fusion followed by [`EncoderStack::encode`].
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stack: &[Var],
        rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let fused = self.fusion.forward(g, store, stack)?;
        self.encode(g, store, fused, rng)
    }
}

pub fn sinusoidal_positions(frames: usize, dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(frames, dim);
    for t in 0..frames {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = t as f64 / rate;
            pe.set(t, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::gradcheck::check_gradients;
    use rand::SeedableRng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_layer_fusion_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let fusion = LayerFusion::new(&mut store, "f", 1, 2, &mut rng);
        let x = random_matrix(&mut rng, 5, 4);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = fusion.forward(&mut g, &store, &[xv]).unwrap();
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn identical_layers_fuse_to_that_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let fusion = LayerFusion::new(&mut store, "f", 3, 1, &mut rng);
        let x = random_matrix(&mut rng, 4, 3);
        let mut g = Graph::new();
        let stack: Vec<Var> = (0..3).map(|_| g.constant(x.clone())).collect();
        let out = fusion.forward(&mut g, &store, &stack).unwrap();
        for (a, b) in g.value(out).data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_logits_give_elementwise_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let fusion = LayerFusion::new(&mut store, "f", 2, 2, &mut rng);
        fusion.mlp.output.zero(&mut store);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 3, 4);
        let mut g = Graph::new();
        let stack = [g.constant(a.clone()), g.constant(b.clone())];
        let out = fusion.forward(&mut g, &store, &stack).unwrap();
        let mean = a.zip_map(&b, |x, y| 0.5 * (x + y));
        for (x, y) in g.value(out).data().iter().zip(mean.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_output_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let fusion = LayerFusion::new(&mut store, "f", 4, 2, &mut rng);
        let layers: Vec<Matrix> = (0..4).map(|_| random_matrix(&mut rng, 3, 5)).collect();
        let mut g = Graph::new();
        let stack: Vec<Var> = layers.iter().map(|m| g.constant(m.clone())).collect();
        let w = fusion.weights(&mut g, &store, &stack).unwrap();
        let s: f64 = g.value(w).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.value(w).data().iter().all(|&v| v >= 0.0));
        let out = fusion.forward(&mut g, &store, &stack).unwrap();
        for k in 0..15 {
            let lo = layers.iter().map(|m| m.data()[k]).fold(f64::INFINITY, f64::min);
            let hi = layers.iter().map(|m| m.data()[k]).fold(f64::NEG_INFINITY, f64::max);
            let v = g.value(out).data()[k];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let cfg = EncoderConfig {
            dim: 6,
            heads: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(matches!(
            EncoderStack::new(&mut store, "e", &cfg, &mut rng),
            Err(Error::Config(_))
        ));
    }

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            dim: 8,
            heads: 2,
            blocks: 2,
            ffn_mult: 2,
            layers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn encode_is_frame_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let enc = EncoderStack::new(&mut store, "e", &small_cfg(), &mut rng).unwrap();
        let x = random_matrix(&mut rng, 5, 8);
        let perm = [3, 0, 4, 1, 2];
        let mut px = Matrix::zeros(5, 8);
        for (i, &p) in perm.iter().enumerate() {
            px.row_mut(i).copy_from_slice(x.row(p));
        }
        let mut g = Graph::new();
        let xv = g.constant(x);
        let pv = g.constant(px);
        let y = enc.encode(&mut g, &store, xv, None).unwrap();
        let py = enc.encode(&mut g, &store, pv, None).unwrap();
        assert_eq!(g.shape(y), (5, 8));
        for (i, &p) in perm.iter().enumerate() {
            for (a, b) in g.value(py).row(i).iter().zip(g.value(y).row(p)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let enc = EncoderStack::new(&mut store, "e", &small_cfg(), &mut rng).unwrap();
        let layers: Vec<Matrix> = (0..2).map(|_| random_matrix(&mut rng, 4, 8)).collect();
        let readout = random_matrix(&mut rng, 4, 8);
        let report = check_gradients(&mut store, |g, s| {
            let stack: Vec<Var> = layers.iter().map(|m| g.constant(m.clone())).collect();
            let y = enc.forward(g, s, &stack, None)?;
            let r = g.constant(readout.clone());
            let p = g.mul(y, r)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    /// Plain-loop reference for one block with a zeroed attention output projection.
    fn reference_block_without_attention(
        x: &Matrix,
        store: &ParamStore,
        block: &EncoderBlock,
    ) -> Matrix {
        let (t, d) = x.shape();
        let gain = store.value(block.norm2.gain);
        let bias = store.value(block.norm2.bias);
        let w1 = store.value(block.ffn.hidden.weight);
        let b1 = store.value(block.ffn.hidden.bias);
        let w2 = store.value(block.ffn.output.weight);
        let b2 = store.value(block.ffn.output.bias);
        let hid = w1.cols();
        let mut out = x.clone();
        for r in 0..t {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let ln: Vec<f64> = (0..d)
                .map(|c| (row[c] - mean) / (var + 1e-5).sqrt() * gain.get(0, c) + bias.get(0, c))
                .collect();
            let h: Vec<f64> = (0..hid)
                .map(|j| {
                    let z = (0..d).map(|c| ln[c] * w1.get(c, j)).sum::<f64>() + b1.get(0, j);
                    0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh())
                })
                .collect();
            for c in 0..d {
                let f = (0..hid).map(|j| h[j] * w2.get(j, c)).sum::<f64>() + b2.get(0, c);
                out.set(r, c, row[c] + f);
            }
        }
        out
    }

    #[test]
    fn zeroed_attention_projection_matches_reference_trace() {
        let cfg = EncoderConfig {
            dim: 4,
            heads: 2,
            blocks: 1,
            ffn_mult: 2,
            layers: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let enc = EncoderStack::new(&mut store, "e", &cfg, &mut rng).unwrap();
        enc.blocks[0].attention.output.zero(&mut store);
        store.value_mut(enc.blocks[0].ffn.hidden.bias).data_mut()[1] = 0.3;
        let x = Matrix::from_rows(&[&[0.5, -1.0, 2.0, 0.0], &[1.5, 0.25, -0.5, -2.0]]);
        let expected = reference_block_without_attention(&x, &store, &enc.blocks[0]);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = enc.encode(&mut g, &store, xv, None).unwrap();
        for (a, b) in g.value(y).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn positional_encoding_breaks_equivariance() {
        let cfg = EncoderConfig {
            positional_encoding: true,
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let enc = EncoderStack::new(&mut store, "e", &cfg, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 3, 8);
        let mut swapped = x.clone();
        swapped.row_mut(0).copy_from_slice(x.row(1));
        swapped.row_mut(1).copy_from_slice(x.row(0));
        let mut g = Graph::new();
        let (a, b) = (g.constant(x), g.constant(swapped));
        let ya = enc.encode(&mut g, &store, a, None).unwrap();
        let yb = enc.encode(&mut g, &store, b, None).unwrap();
        assert_ne!(g.value(ya).row(0), g.value(yb).row(1));
    }
}
