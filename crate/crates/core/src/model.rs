//! Full scorer: per-stem encoders, multi-stem fusion, pooling and one head set
//! per aesthetic dimension.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{DropoutRng, EncoderConfig, EncoderStack};
use crate::error::{Error, Result};
use crate::featio::{Stem, StemBundle};
use crate::higia::{squared_error, DirectHead, GranularitySpec, HigiaHeads, HigiaOutput, HigiaTrace};
use crate::msaf::Msaf;
use crate::numkernel::{Graph, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Temporal mean of each fused stream.
    #[default]
    Mean,
    /// Temporal mean and max of each fused stream.
    MeanMax,
}

impl Pooling {
    fn width(self, dim: usize) -> usize {
        match self {
            Pooling::Mean => 3 * dim,
            Pooling::MeanMax => 6 * dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub msaf: bool,
    pub msaf_heads: usize,
    pub higia: bool,
    /// One encoder stack for all three stems instead of one each.
    pub share_encoders: bool,
    pub pooling: Pooling,
    pub head_hidden: usize,
    pub bins: GranularitySpec,
    pub dimensions: Vec<String>,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            msaf: true,
            msaf_heads: 1,
            higia: true,
            share_encoders: false,
            pooling: Pooling::Mean,
            head_hidden: 32,
            bins: GranularitySpec::SONGEVAL,
            dimensions: (0..5).map(crate::featio::dimension_name).collect(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.dimensions.is_empty() {
            return Err(Error::Config("model needs at least one dimension".into()));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        if self.msaf && (self.msaf_heads == 0 || !self.encoder.dim.is_multiple_of(self.msaf_heads)) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} msaf heads",
                self.encoder.dim, self.msaf_heads
            )));
        }
        Ok(())
    }

    pub fn pooled_dim(&self) -> usize {
        self.pooling.width(self.encoder.dim)
    }
}

#[derive(Clone, Debug)]
pub enum DimensionHead {
    Higia(HigiaHeads),
    Direct(DirectHead),
}

/// Parameter-free structure of the network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub encoders: Vec<EncoderStack>,
    pub msaf: Option<Msaf>,
    pub heads: Vec<DimensionHead>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub net: Network,
}

/// Output of one dimension for one segment.
#[derive(Clone, Debug)]
pub enum DimensionOutput {
    Higia(HigiaOutput),
    Direct { score_var: Var, score: f64 },
}

impl DimensionOutput {
    pub fn score_var(&self) -> Var {
        match self {
            DimensionOutput::Higia(h) => h.score_var,
            DimensionOutput::Direct { score_var, .. } => *score_var,
        }
    }

    /// `(L, U, α)`; the direct head reports the whole range with `α = ŷ`.
    pub fn interval(&self) -> (f64, f64, f64) {
        match self {
            DimensionOutput::Higia(h) => (h.interval.lower, h.interval.upper, h.alpha),
            DimensionOutput::Direct { score, .. } => (0.0, 1.0, *score),
        }
    }

    pub fn score(&self) -> f64 {
        match self {
            DimensionOutput::Higia(h) => h.score,
            DimensionOutput::Direct { score, .. } => *score,
        }
    }

    pub fn trace(&self) -> Option<HigiaTrace> {
        match self {
            DimensionOutput::Higia(h) => Some(h.trace()),
            DimensionOutput::Direct { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentOutput {
    pub pooled: Var,
    pub dims: Vec<DimensionOutput>,
}

/// Scalar loss nodes summed over dimensions.
#[derive(Clone, Copy, Debug)]
pub struct SegmentLoss {
    pub total: Var,
    pub classification: Option<Var>,
    pub regression: Var,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let n_encoders = if config.share_encoders { 1 } else { 3 };
        let encoders = (0..n_encoders)
            .map(|i| {
                let name = if config.share_encoders {
                    "encoder".to_string()
                } else {
                    format!("encoder.{}", Stem::ALL[i].name())
                };
                EncoderStack::new(&mut store, &name, &config.encoder, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let msaf = if config.msaf {
            Some(Msaf::new(&mut store, "msaf", config.encoder.dim, config.msaf_heads, &mut rng)?)
        } else {
            None
        };
        let pooled = config.pooled_dim();
        let heads = config
            .dimensions
            .iter()
            .map(|dim_name| {
                let name = format!("head.{dim_name}");
                if config.higia {
                    DimensionHead::Higia(HigiaHeads::new(
                        &mut store,
                        &name,
                        pooled,
                        config.head_hidden,
                        &config.bins,
                        &mut rng,
                    ))
                } else {
                    DimensionHead::Direct(DirectHead::new(
                        &mut store,
                        &name,
                        pooled,
                        config.head_hidden,
                        &mut rng,
                    ))
                }
            })
            .collect();
        Ok(Self {
            config,
            store,
            net: Network {
                encoders,
                msaf,
                heads,
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn dimensions(&self) -> &[String] {
        &self.config.dimensions
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bundle: &StemBundle,
        rng: DropoutRng<'_>,
    ) -> Result<SegmentOutput> {
        self.net.forward(g, &self.store, &self.config, bundle, rng)
    }
}

impl Network {
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        config: &ModelConfig,
        bundle: &StemBundle,
        mut rng: DropoutRng<'_>,
    ) -> Result<SegmentOutput> {
        let mut streams = [None; 3];
        for stem in Stem::ALL {
            let layers = bundle.stem(stem);
            if layers.len() != config.encoder.layers {
                return Err(Error::Config(format!(
                    "{} stem has {} layers, model expects {}",
                    stem,
                    layers.len(),
                    config.encoder.layers
                )));
            }
            let vars: Vec<Var> = layers.iter().map(|m| g.constant(m.clone())).collect();
            let encoder = &self.encoders[stem.index().min(self.encoders.len() - 1)];
            streams[stem.index()] = Some(encoder.forward(g, store, &vars, rng.as_deref_mut())?);
        }
        let [mix, voc, acc] = streams.map(|s| s.expect("all stems encoded"));
        let (mix, voc, acc) = match &self.msaf {
            Some(msaf) => {
                let out = msaf.fuse(g, store, mix, voc, acc)?;
                (out.out_mix, out.out_voc, out.out_acc)
            }
            None => (mix, voc, acc),
        };
        let mut parts = Vec::with_capacity(6);
        for x in [mix, voc, acc] {
            parts.push(g.mean_rows(x));
            if config.pooling == Pooling::MeanMax {
                parts.push(g.max_rows(x));
            }
        }
        let pooled = g.concat_cols(&parts)?;
        let dims = self
            .heads
            .iter()
            .map(|head| match head {
                DimensionHead::Higia(h) => {
                    Ok(DimensionOutput::Higia(h.forward(g, store, pooled, &config.bins)?))
                }
                DimensionHead::Direct(h) => {
                    let score_var = h.forward(g, store, pooled)?;
                    Ok(DimensionOutput::Direct {
                        score_var,
                        score: g.value(score_var).item(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentOutput { pooled, dims })
    }
}

impl SegmentOutput {
    /// Multi-task loss summed over dimensions against normalized targets.
    pub fn loss(
        &self,
        g: &mut Graph,
        spec: &GranularitySpec,
        targets: &[f64],
        regression_weight: f64,
    ) -> Result<SegmentLoss> {
        if targets.len() != self.dims.len() {
            return Err(Error::LengthMismatch(self.dims.len(), targets.len()));
        }
        let mut total = None;
        let mut classification = None;
        let mut regression = None;
        let accumulate = |g: &mut Graph, acc: &mut Option<Var>, v: Var| -> Result<()> {
            *acc = Some(match *acc {
                None => v,
                Some(a) => g.add(a, v)?,
            });
            Ok(())
        };
        for (out, &y) in self.dims.iter().zip(targets) {
            match out {
                DimensionOutput::Higia(h) => {
                    let terms = h.loss(g, spec, y, regression_weight)?;
                    accumulate(g, &mut total, terms.total)?;
                    accumulate(g, &mut classification, terms.classification)?;
                    accumulate(g, &mut regression, terms.regression)?;
                }
                DimensionOutput::Direct { score_var, .. } => {
                    let se = squared_error(g, *score_var, y)?;
                    let weighted = g.scale(se, regression_weight);
                    accumulate(g, &mut total, weighted)?;
                    accumulate(g, &mut regression, se)?;
                }
            }
        }
        Ok(SegmentLoss {
            total: total.ok_or(Error::Empty("model has no dimensions"))?,
            classification,
            regression: regression.expect("set together with total"),
        })
    }
}
