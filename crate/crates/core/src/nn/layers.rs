use crate::autodiff::{Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::init::orthogonal;

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
pub const LN_EPS: f64 = 1e-5;

/// Affine map `x·W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = orthogonal(inputs, outputs, gain, rng);
        let weight = store.insert(format!("{name}.weight"), Tensor::from_f64(&[inputs, outputs], &w)?)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Linear {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    /// `x` is `[rows, inputs]`.
    pub fn forward<'p, T: Float>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, width: usize) -> Result<Self> {
        let gain = store.insert(format!("{name}.gain"), Tensor::from_f64(&[width], &vec![1.0; width])?)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[width]))?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward<'p, T: Float>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Plain relu MLP: `Linear → relu` for every hidden width, then a final
/// `Linear` to `outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), width, h, RELU_GAIN, rng)?);
            width = h;
        }
        layers.push(Linear::new(store, &format!("{name}.{}", hidden.len()), width, outputs, 1.0, rng)?);
        Ok(Mlp { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn forward<'p, T: Float>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let width = *tape.shape(x).last().unwrap_or(&0);
        if tape.shape(x).len() != 2 || width != self.inputs() {
            return Err(Error::dim(format!(
                "MLP expects [rows, {}], got {:?}",
                self.inputs(),
                tape.shape(x)
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
