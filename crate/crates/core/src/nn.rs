//! Small parameterised building blocks shared by the model modules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numkernel::{Graph, Matrix, ParamId, ParamStore, Var, LAYER_NORM_EPS};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_weight(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, fan_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).fill(0.0);
        store.value_mut(self.bias).fill(0.0);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Matrix::filled(1, dim, 1.0)),
            bias: store.add_zeros(format!("{name}.bias"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// Two linear layers with an activation in between.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let (input, hidden, output) = dims;
        Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), input, hidden, rng),
            output: Linear::new(store, &format!("{name}.fc2"), hidden, output, rng),
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = match self.activation {
            Activation::Gelu => g.gelu(h),
            Activation::Relu => g.relu(h),
        };
        self.output.forward(g, store, h)
    }
}
