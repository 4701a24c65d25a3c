//! The pose regressor `m_ω`: a dense tanh network from the frame encoding
//! to a pose offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};

/// Scale applied to the Glorot range of the output layer, so that initial
/// offsets are tiny.
pub const OUTPUT_INIT_SCALE: f64 = 1e-3;

/// Weights `ω` stored as `[W₀, b₀, W₁, b₁, …]`, `Wᵢ` being `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRegressor {
    params: Vec<Tensor>,
}

impl PoseRegressor {
    /// `layers` dense layers (the last one linear) of width `hidden`.
    pub fn new(input: usize, hidden: usize, layers: usize, output: usize, seed: u64) -> Self {
        assert!(layers >= 1 && input > 0 && hidden > 0 && output > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * layers);
        for i in 0..layers {
            let fan_in = if i == 0 { input } else { hidden };
            let fan_out = if i + 1 == layers { output } else { hidden };
            let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if i + 1 == layers {
                limit *= OUTPUT_INIT_SCALE;
            }
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            params.push(Tensor::from_shape(&[fan_in, fan_out], w));
            params.push(Tensor::zeros(&[fan_out]));
        }
        PoseRegressor { params }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn output_dim(&self) -> usize {
        self.params.last().expect("at least one layer").len()
    }

    /// Registers the weights on `tape`, in the order of [`Self::params`].
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// `inputs` is `F×in`; returns `F×out`.
    pub fn forward<'t>(weights: &[Var<'t>], inputs: Var<'t>) -> Var<'t> {
        let layers = weights.len() / 2;
        let mut x = inputs;
        for i in 0..layers {
            x = x.matmul(weights[2 * i]).add_row(weights[2 * i + 1]);
            if i + 1 < layers {
                x = x.tanh();
            }
        }
        x
    }

    /// Plain evaluation for a single input.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let w: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(Tensor::from_shape(&[1, input.len()], input.to_vec()));
        Self::forward(&w, x).value().data().to_vec()
    }
}
