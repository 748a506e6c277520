//! Small multilayer perceptron mapping a bottleneck vector to Hb (g/dL).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Affine layer with weights stored `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// Affine + ReLU stack; the last layer is linear with a single output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    layers: Vec<DenseLayer>,
}

impl MlpHead {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, FeatureError> {
        let Some(last) = layers.last() else {
            return Err(FeatureError::InvalidHead("no layers".into()));
        };
        if last.outputs != 1 {
            return Err(FeatureError::InvalidHead(format!("final layer has {} outputs", last.outputs)));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(FeatureError::InvalidHead(format!("layer {i} parameter count")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(FeatureError::InvalidHead(format!("layer {i} has non-finite parameters")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(FeatureError::InvalidHead(format!(
                    "layer {i} takes {} inputs, previous layer gives {}",
                    l.inputs,
                    layers[i - 1].outputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Zero weights; `final_bias` on the output unit. `sizes` lists layer widths
    /// including the input and the final 1.
    pub fn constant(sizes: &[usize], final_bias: f64) -> Result<Self, FeatureError> {
        let mut layers = Self::shaped(sizes, |_| 0.0)?;
        if let Some(l) = layers.last_mut() {
            l.bias[0] = final_bias;
        }
        Self::new(layers)
    }

    pub fn random(sizes: &[usize], seed: u64) -> Result<Self, FeatureError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Self::shaped(sizes, |fan_in| {
            let a = (3.0 / fan_in as f64).sqrt();
            rng.random_range(-a..=a)
        })?;
        Self::new(layers)
    }

    fn shaped(sizes: &[usize], mut init: impl FnMut(usize) -> f64) -> Result<Vec<DenseLayer>, FeatureError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(FeatureError::InvalidHead(format!("layer sizes {sizes:?}")));
        }
        Ok(sizes
            .windows(2)
            .map(|w| DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights: (0..w[0] * w[1]).map(|_| init(w[0])).collect(),
                bias: vec![0.0; w[1]],
            })
            .collect())
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64, FeatureError> {
        if input.len() != self.input_len() {
            return Err(FeatureError::LengthMismatch { got: input.len(), want: self.input_len() });
        }
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(&x);
            if i < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(x[0])
    }
}

pub fn regress_bottleneck(vector: &[f64], head: &MlpHead) -> Result<f64, FeatureError> {
    head.predict(vector)
}
