use plc_autodiff::{Graph, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::{PlcError, Result};

/// Checkpoint/parameter layout version.
pub const PARAMS_VERSION: u32 = 1;

/// Channels of the image-plus-segmentation feature map sampled per patch.
pub const FEATURE_CHANNELS: usize = 4;

/// Shape hyperparameters of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Side of the square sampling grid laid around each lane point.
    pub patch_size: usize,
    /// Output widths of backbone stages 1..=4.
    pub stage_widths: [usize; 4],
    pub mlp_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 6,
            stage_widths: [16, 24, 40, 80],
            mlp_width: 64,
        }
    }
}

impl ModelConfig {
    pub fn with_patch_size(patch_size: usize) -> Self {
        Self {
            patch_size,
            ..Self::default()
        }
    }

    /// Length K of a flattened patch descriptor.
    pub fn patch_features(&self) -> usize {
        self.patch_size * self.patch_size * FEATURE_CHANNELS
    }

    /// Channels entering the segmentation head (stages 2..=4 stacked).
    pub fn seg_head_inputs(&self) -> usize {
        self.stage_widths[1..].iter().sum()
    }
}

/// One convolution's weight and per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// A convolution whose parameters live on a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
}

/// The network's layers, generic over how a layer is held (tensors on the
/// host, or handles on a graph).
#[derive(Debug, Clone, PartialEq)]
pub struct Layers<L> {
    /// Per stage: a stride-2 3×3 conv, then a stride-1 3×3 conv.
    pub backbone: [[L; 2]; 4],
    /// 1×1 conv from the stacked stage 2..=4 features to one logit channel.
    pub seg_head: L,
    /// k=3 1D conv from the two pooled descriptors to one weight channel.
    pub attention: L,
    /// Five 1D 1×1 convs, K → 64 → 64 → 64 → 64 → 2.
    pub mlp: [L; 5],
}

impl<L> Layers<L> {
    /// Layers paired with their canonical names, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &L)> {
        let mut out = Vec::with_capacity(15);
        for (s, stage) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{s}.down"), &stage[0]));
            out.push((format!("backbone.{s}.refine"), &stage[1]));
        }
        out.push(("seg_head".to_string(), &self.seg_head));
        out.push(("attention".to_string(), &self.attention));
        for (i, layer) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{i}"), layer));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut L)> {
        let mut out = Vec::with_capacity(15);
        for (s, stage) in self.backbone.iter_mut().enumerate() {
            let [down, refine] = stage;
            out.push((format!("backbone.{s}.down"), down));
            out.push((format!("backbone.{s}.refine"), refine));
        }
        out.push(("seg_head".to_string(), &mut self.seg_head));
        out.push(("attention".to_string(), &mut self.attention));
        for (i, layer) in self.mlp.iter_mut().enumerate() {
            out.push((format!("mlp.{i}"), layer));
        }
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&L) -> U) -> Layers<U> {
        Layers {
            backbone: std::array::from_fn(|s| std::array::from_fn(|i| f(&self.backbone[s][i]))),
            seg_head: f(&self.seg_head),
            attention: f(&self.attention),
            mlp: std::array::from_fn(|i| f(&self.mlp[i])),
        }
    }
}

/// Trainable state of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub version: u32,
    pub layers: Layers<ConvLayer<T>>,
}

/// Expected `(weight shape, bias len)` of every layer for a config.
pub fn layer_shapes(config: &ModelConfig) -> Layers<(Vec<usize>, usize)> {
    let w = config.stage_widths;
    let h = config.mlp_width;
    let k = config.patch_features();
    let stage = |c_in: usize, c_out: usize| {
        [
            (vec![c_out, c_in, 3, 3], c_out),
            (vec![c_out, c_out, 3, 3], c_out),
        ]
    };
    Layers {
        backbone: [stage(3, w[0]), stage(w[0], w[1]), stage(w[1], w[2]), stage(w[2], w[3])],
        seg_head: (vec![1, config.seg_head_inputs(), 1, 1], 1),
        attention: (vec![1, 2, 3], 1),
        mlp: [
            (vec![h, k, 1], h),
            (vec![h, h, 1], h),
            (vec![h, h, 1], h),
            (vec![h, h, 1], h),
            (vec![2, h, 1], 2),
        ],
    }
}

impl ModelParams<f32> {
    /// Uniform weights with variance 2/fan_in, zero biases, and an all-zero
    /// final MLP layer so an untrained model leaves lanes where they are.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let shapes = layer_shapes(config);
        let mut layers = shapes.map(|(wshape, blen)| {
            let fan_in: usize = wshape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let numel: usize = wshape.iter().product();
            let data = (0..numel)
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            ConvLayer {
                weight: Tensor::new(wshape.clone(), data).expect("shape matches data"),
                bias: Tensor::zeros(vec![*blen]),
            }
        });
        let last = &mut layers.mlp[4];
        last.weight = Tensor::zeros(last.weight.shape().to_vec());
        Self {
            version: PARAMS_VERSION,
            layers,
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            version: self.version,
            layers: self.layers.map(|l| ConvLayer {
                weight: l.weight.cast(),
                bias: l.bias.cast(),
            }),
        }
    }

    /// Recovers the shape config from tensor shapes, checking every layer
    /// against it.
    pub fn infer_config(&self) -> Result<ModelConfig> {
        let widths = std::array::from_fn(|s| self.layers.backbone[s][0].weight.shape()[0]);
        let k = self.layers.mlp[0].weight.shape().get(1).copied().unwrap_or(0);
        let patch_size = (((k / FEATURE_CHANNELS) as f64).sqrt()).round() as usize;
        let config = ModelConfig {
            patch_size,
            stage_widths: widths,
            mlp_width: self.layers.mlp[0].weight.shape()[0],
        };
        self.validate(&config)?;
        Ok(config)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.version != PARAMS_VERSION {
            return Err(PlcError::invalid(format!(
                "parameter version {} (expected {PARAMS_VERSION})",
                self.version
            )));
        }
        let expected = layer_shapes(config);
        for ((name, layer), (_, (wshape, blen))) in self.layers.named().into_iter().zip(expected.named()) {
            if layer.weight.shape() != &wshape[..] || layer.bias.shape() != [*blen] {
                return Err(PlcError::invalid(format!(
                    "{name}: weight {:?} / bias {:?}, expected {wshape:?} / [{blen}]",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
        }
        Ok(())
    }

    /// `(name, tensor)` for every weight and bias, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .named()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .named_mut()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &mut l.weight),
                    (format!("{name}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    /// Records every parameter as a gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Layers<BoundLayer> {
        self.layers.map(|l| BoundLayer {
            weight: g.param(l.weight.clone()),
            bias: g.param(l.bias.clone()),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Gradient-tracked leaves of a bound model in `named_tensors` order.
pub fn bound_vars(layers: &Layers<BoundLayer>) -> Vec<Var> {
    layers
        .named()
        .into_iter()
        .flat_map(|(_, l)| [l.weight, l.bias])
        .collect()
}
