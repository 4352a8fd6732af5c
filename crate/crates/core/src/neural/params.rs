use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::Tensor;
use crate::rng::{self, Domain};

/// Architecture of the walk classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Output widths of the three per-point layers; the last one is d₃.
    pub mlp_widths: [usize; 3],
    pub hidden: usize,
    pub classes: usize,
    /// Append the pre-normalization bounding-box diagonal to the walk
    /// representation before the classifier.
    pub use_bbox: bool,
    /// Learn γ/β in the instance-norm layers; when off they stay at 1/0.
    pub norm_affine: bool,
}

impl ModelConfig {
    /// Full-size architecture: (128, 256, 512) point MLP, 512-wide GRUs.
    pub fn full(classes: usize) -> Self {
        ModelConfig {
            mlp_widths: [128, 256, 512],
            hidden: 512,
            classes,
            use_bbox: false,
            norm_affine: true,
        }
    }

    /// Desk-scale architecture: (32, 64, 128) point MLP, 64-wide GRUs.
    pub fn desk(classes: usize) -> Self {
        ModelConfig {
            mlp_widths: [32, 64, 128],
            hidden: 64,
            ..Self::full(classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp_widths.contains(&0) || self.hidden == 0 || self.classes == 0 {
            return Err(Error::InvalidParam(format!(
                "model widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn embed_width(&self) -> usize {
        self.mlp_widths[2]
    }

    /// Width of the per-position GRU input: embedding plus raw coordinates.
    pub fn feature_width(&self) -> usize {
        self.mlp_widths[2] + 3
    }

    pub fn head_inputs(&self) -> usize {
        self.hidden + usize::from(self.use_bbox)
    }

    pub fn parameter_count(&self) -> usize {
        let mut inputs = 3;
        let mut total = 0;
        for &w in &self.mlp_widths {
            total += w * inputs + 3 * w;
            inputs = w;
        }
        let h = self.hidden;
        let mut inputs = self.feature_width();
        for _ in 0..3 {
            total += 3 * h * inputs + 3 * h * h + 3 * h;
            inputs = h;
        }
        total + self.classes * self.head_inputs() + self.classes
    }
}

/// Shared-weight per-point layer: affine map followed by instance norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLayer {
    /// out × in
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// One GRU layer. Gate blocks are stacked in the order update (z),
/// reset (r), candidate (n) along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// 3h × in
    pub w_input: Tensor,
    /// 3h × h
    pub w_hidden: Tensor,
    /// 3h
    pub bias: Tensor,
}

impl GruLayer {
    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// C × (h [+1])
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All learnable weights. Also used as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub point: [PointLayer; 3],
    pub gru: [GruLayer; 3],
    pub head: Head,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [d1, d2, d3] = config.mlp_widths;
        let point_layer = |out: usize, inp: usize| PointLayer {
            weight: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
            gamma: Tensor::zeros(&[out]),
            beta: Tensor::zeros(&[out]),
        };
        let h = config.hidden;
        let gru_layer = |inp: usize| GruLayer {
            w_input: Tensor::zeros(&[3 * h, inp]),
            w_hidden: Tensor::zeros(&[3 * h, h]),
            bias: Tensor::zeros(&[3 * h]),
        };
        Ok(ModelParams {
            config: config.clone(),
            point: [point_layer(d1, 3), point_layer(d2, d1), point_layer(d3, d2)],
            gru: [gru_layer(config.feature_width()), gru_layer(h), gru_layer(h)],
            head: Head {
                weight: Tensor::zeros(&[config.classes, config.head_inputs()]),
                bias: Tensor::zeros(&[config.classes]),
            },
        })
    }

    /// Glorot-uniform weight matrices, zero biases, γ = 1, β = 0.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let mut glorot = |t: &mut Tensor| {
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for layer in &mut params.point {
            glorot(&mut layer.weight);
            layer.gamma.fill(1.0);
        }
        for layer in &mut params.gru {
            glorot(&mut layer.w_input);
            glorot(&mut layer.w_hidden);
        }
        glorot(&mut params.head.weight);
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Every tensor in the fixed serialization order: point layers 1..3
    /// (weight, bias, γ, β), GRU layers 1..3 (input weights, hidden weights,
    /// bias), classifier (weight, bias).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(20);
        for l in &self.point {
            out.extend([&l.weight, &l.bias, &l.gamma, &l.beta]);
        }
        for g in &self.gru {
            out.extend([&g.w_input, &g.w_hidden, &g.bias]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(20);
        for l in &mut self.point {
            out.extend([&mut l.weight, &mut l.bias, &mut l.gamma, &mut l.beta]);
        }
        for g in &mut self.gru {
            out.extend([&mut g.w_input, &mut g.w_hidden, &mut g.bias]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    /// Tensor names aligned with [`ModelParams::tensors`].
    pub fn tensor_names() -> Vec<String> {
        let mut out = Vec::with_capacity(20);
        for i in 1..=3 {
            for p in ["weight", "bias", "gamma", "beta"] {
                out.push(format!("point{i}.{p}"));
            }
        }
        for i in 1..=3 {
            for p in ["w_input", "w_hidden", "bias"] {
                out.push(format!("gru{i}.{p}"));
            }
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    /// Whether tensor `i` (in serialization order) is updated by training.
    pub fn is_trainable(&self, i: usize) -> bool {
        // γ, β sit at offsets 2 and 3 of each point layer
        self.config.norm_affine || i >= 12 || i % 4 < 2
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
