use rand::Rng;
use serde::{Deserialize, Serialize};

use super::interval::{consensus_interval, interpolate, ConsensusInterval, GranularitySpec, IntervalTrace};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::numkernel::{Graph, Matrix, ParamStore, Var};

/// Three granularity classifiers and the within-interval regressor for one
/// aesthetic dimension.
#[derive(Clone, Debug)]
pub struct HigiaHeads {
    pub classifiers: [Mlp; 3],
    pub regressor: Mlp,
    pub input_dim: usize,
}

impl HigiaHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        spec: &GranularitySpec,
        rng: &mut R,
    ) -> Self {
        let classifiers = std::array::from_fn(|g| {
            Mlp::new(
                store,
                &format!("{name}.cls{g}"),
                (input_dim, hidden, spec.count(g)),
                Activation::Gelu,
                rng,
            )
        });
        let regressor = Mlp::new(
            store,
            &format!("{name}.reg"),
            (input_dim + 2, hidden, 1),
            Activation::Gelu,
            rng,
        );
        Self {
            classifiers,
            regressor,
            input_dim,
        }
    }

    fn check_input(&self, g: &Graph, pooled: Var) -> Result<()> {
        if g.shape(pooled) != (1, self.input_dim) {
            return Err(Error::Shape {
                op: "higia heads",
                lhs: g.shape(pooled),
                rhs: (1, self.input_dim),
            });
        }
        Ok(())
    }

    /// Logit rows `z^(g)` for the three granularities.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<[Var; 3]> {
        self.check_input(g, pooled)?;
        let mut out = [pooled; 3];
        for (slot, head) in out.iter_mut().zip(&self.classifiers) {
            *slot = head.forward(g, store, pooled)?;
        }
        Ok(out)
    }

    /// Posterior distributions `softmax(z^(g))`.
    pub fn classify(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pooled: Var,
    ) -> Result<[Vec<f64>; 3]> {
        let logits = self.logits(g, store, pooled)?;
        Ok(logits.map(|z| crate::numkernel::softmax(g.value(z).data())))
    }

    /// Interpolation coefficient `α = sigmoid(reg([pooled, L, U]))`.
    pub fn alpha(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pooled: Var,
        interval: &ConsensusInterval,
    ) -> Result<Var> {
        self.check_input(g, pooled)?;
        let bounds = g.constant(Matrix::row_vector(&[interval.lower, interval.upper]));
        let input = g.concat_cols(&[pooled, bounds])?;
        let logit = self.regressor.forward(g, store, input)?;
        Ok(g.sigmoid(logit))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pooled: Var,
        spec: &GranularitySpec,
    ) -> Result<HigiaOutput> {
        let logits = self.logits(g, store, pooled)?;
        let probs = logits.map(|z| crate::numkernel::softmax(g.value(z).data()));
        let (interval, trace) = consensus_interval(&probs, spec)?;
        let alpha_var = self.alpha(g, store, pooled, &interval)?;
        let alpha = g.value(alpha_var).item();
        // α(U - L) + L: same value as the interpolation, differentiable in α
        let score_var = g.affine(alpha_var, interval.upper - interval.lower, interval.lower);
        Ok(HigiaOutput {
            logits,
            probs,
            interval,
            trace,
            alpha_var,
            alpha,
            score_var,
            score: interpolate(&interval, alpha),
        })
    }
}

#[derive(Clone, Debug)]
pub struct HigiaOutput {
    pub logits: [Var; 3],
    pub probs: [Vec<f64>; 3],
    pub interval: ConsensusInterval,
    pub trace: IntervalTrace,
    pub alpha_var: Var,
    pub alpha: f64,
    pub score_var: Var,
    pub score: f64,
}

impl HigiaOutput {
    /// `Σ_g CE(z^(g), bin_g(target)) + λ (ŷ - target)²`.
    pub fn loss(
        &self,
        g: &mut Graph,
        spec: &GranularitySpec,
        target: f64,
        regression_weight: f64,
    ) -> Result<LossTerms> {
        let mut classification: Option<Var> = None;
        for (gi, &z) in self.logits.iter().enumerate() {
            let ce = g.cross_entropy(z, spec.target_bin(gi, target))?;
            classification = Some(match classification {
                None => ce,
                Some(c) => g.add(c, ce)?,
            });
        }
        let classification = classification.expect("three granularities");
        let regression = squared_error(g, self.score_var, target)?;
        let weighted = g.scale(regression, regression_weight);
        let total = g.add(classification, weighted)?;
        Ok(LossTerms {
            total,
            classification,
            regression,
        })
    }

    pub fn trace(&self) -> HigiaTrace {
        HigiaTrace {
            probs: self.probs.clone(),
            candidates: self.trace.candidates.clone(),
            overlap: self.trace.overlap.clone(),
            isolated: self.trace.isolated.clone(),
            lower: self.interval.lower,
            upper: self.interval.upper,
            branch: self.interval.branch,
            alpha: self.alpha,
            score: self.score,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub classification: Var,
    pub regression: Var,
}

pub(crate) fn squared_error(g: &mut Graph, prediction: Var, target: f64) -> Result<Var> {
    let t = g.constant(Matrix::scalar(target));
    let diff = g.sub(prediction, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum(sq))
}

/// Per-segment inspection record for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HigiaTrace {
    pub probs: [Vec<f64>; 3],
    pub candidates: Vec<super::CandidateBin>,
    pub overlap: Vec<super::CandidateBin>,
    pub isolated: Vec<super::CandidateBin>,
    pub lower: f64,
    pub upper: f64,
    pub branch: super::Branch,
    pub alpha: f64,
    pub score: f64,
}

/// Direct score regressor used when interval aggregation is disabled.
#[derive(Clone, Debug)]
pub struct DirectHead {
    pub mlp: Mlp,
    pub input_dim: usize,
}

impl DirectHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            mlp: Mlp::new(store, name, (input_dim, hidden, 1), Activation::Gelu, rng),
            input_dim,
        }
    }

    /// `sigmoid(mlp(pooled))` as a 1x1 node.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<Var> {
        let z = self.mlp.forward(g, store, pooled)?;
        Ok(g.sigmoid(z))
    }
}
