use serde::{Deserialize, Serialize};

/// Per-pixel feature distance of the rendering loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// `1 −` mean cosine similarity.
    #[default]
    Cosine,
    /// Mean squared difference, for RGB-like features.
    Mse,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Cosine => "cosine",
            LossMode::Mse => "mse",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(LossMode::Cosine),
            "mse" => Ok(LossMode::Mse),
            other => Err(format!("unknown loss mode {other:?} (expected cosine or mse)")),
        }
    }
}

/// Hyperparameters of the motion fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub w_render: f64,
    pub w_depth: f64,
    pub w_smooth: f64,
    pub w_fidelity: f64,
    /// Only used by Jacobian-field models.
    pub w_jacobian: f64,
    /// Scale on the regressor output.
    pub alpha: f64,
    /// Frequency-encoding order `k`; the encoding has `2k + 1` entries.
    pub encoding_order: usize,
    /// Number of dense layers, including the output layer.
    pub layers: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Adam denominator offset.
    pub adam_eps: f64,
    pub iterations: usize,
    /// Iteration at which every frame is active.
    pub warmup_end: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
}

pub const DEFAULT_W_RENDER: f64 = 5.0;
pub const DEFAULT_W_DEPTH: f64 = 0.01;
pub const DEFAULT_W_SMOOTH: f64 = 0.1;
pub const DEFAULT_W_FIDELITY: f64 = 0.01;
pub const DEFAULT_W_JACOBIAN: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Above the round-off level of the normalized loss gradients, so that
/// directions the objective does not see are not pushed at full step size.
pub const DEFAULT_ADAM_EPS: f64 = 1e-6;

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            w_render: DEFAULT_W_RENDER,
            w_depth: DEFAULT_W_DEPTH,
            w_smooth: DEFAULT_W_SMOOTH,
            w_fidelity: DEFAULT_W_FIDELITY,
            w_jacobian: DEFAULT_W_JACOBIAN,
            alpha: DEFAULT_ALPHA,
            encoding_order: 6,
            layers: 6,
            hidden: 256,
            learning_rate: 5e-4,
            adam_eps: DEFAULT_ADAM_EPS,
            iterations: 1000,
            warmup_end: 500,
            loss_mode: LossMode::Cosine,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        let weights = [
            ("w_render", self.w_render),
            ("w_depth", self.w_depth),
            ("w_smooth", self.w_smooth),
            ("w_fidelity", self.w_fidelity),
            ("w_jacobian", self.w_jacobian),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("{name} must be a finite non-negative number, got {w}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.encoding_order == 0 {
            return Err("encoding_order must be at least 1".into());
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err("the regressor needs at least one layer and a non-zero width".into());
        }
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if self.warmup_end > self.iterations {
            return Err(format!("warmup_end ({}) exceeds iterations ({})", self.warmup_end, self.iterations));
        }
        Ok(())
    }

    /// Frames included in the loss at `iteration`:
    /// `round(1 + (L−1)·min(i/warmup_end, 1))`, halves rounded up.
    pub fn active_frames(&self, iteration: usize, frames: usize) -> usize {
        active_frames(iteration, self.warmup_end, frames)
    }
}

/// See [`FitConfig::active_frames`]; computed in integers so the rounding
/// is exact.
pub fn active_frames(iteration: usize, warmup_end: usize, frames: usize) -> usize {
    if frames <= 1 || warmup_end == 0 || iteration >= warmup_end {
        return frames.max(1);
    }
    let num = (frames - 1) as u128 * iteration as u128;
    let den = warmup_end as u128;
    1 + ((2 * num + den) / (2 * den)) as usize
}

/// `(l, sin(2⁰πl), cos(2⁰πl), …, sin(2^{k−1}πl), cos(2^{k−1}πl))`.
pub fn frequency_encode(l: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * k + 1);
    out.push(l);
    for j in 0..k {
        let (s, c) = ((2f64.powi(j as i32)) * std::f64::consts::PI * l).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// Regressor input for frame `l` of `frames`: the encoding of `l/(L−1)`.
pub fn frame_encoding(l: usize, frames: usize, k: usize) -> Vec<f64> {
    let t = if frames > 1 { l as f64 / (frames - 1) as f64 } else { 0.0 };
    frequency_encode(t, k)
}
