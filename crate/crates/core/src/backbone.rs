//! VGG-style convolutional feature extractor capped with global average and
//! global max pooling heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Padding};
use crate::init;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL_SIZE: usize = 3;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Side of the square input image.
    pub input_size: usize,
    /// Output channels of every stage; the last entry is the feature width.
    pub stage_channels: Vec<usize>,
    /// Number of conv+ReLU layers in each stage.
    pub convs_per_stage: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            stage_channels: vec![16, 32, 64],
            convs_per_stage: vec![2, 2, 2],
        }
    }
}

impl BackboneConfig {
    /// The convolutional part of VGG16 up to its last pooling layer.
    pub fn vgg16() -> Self {
        Self {
            input_size: 224,
            stage_channels: vec![64, 128, 256, 512, 512],
            convs_per_stage: vec![2, 2, 3, 3, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage_channels.is_empty() {
            return bad("backbone needs at least one stage".into());
        }
        if self.stage_channels.len() != self.convs_per_stage.len() {
            return bad(format!(
                "stage_channels has {} entries but convs_per_stage has {}",
                self.stage_channels.len(),
                self.convs_per_stage.len()
            ));
        }
        if self
            .stage_channels
            .iter()
            .chain(&self.convs_per_stage)
            .any(|&c| c == 0)
        {
            return bad("channel and conv counts must be ≥ 1".into());
        }
        let factor = 1usize
            .checked_shl(self.stage_channels.len() as u32)
            .unwrap_or(usize::MAX);
        if self.input_size == 0 || self.input_size % factor != 0 {
            return bad(format!(
                "input size {} is not divisible by 2^{} = {factor}",
                self.input_size,
                self.stage_channels.len()
            ));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self
            .stage_channels
            .last()
            .expect("validated config has stages")
    }

    /// Shape `[h, w, C]` of the last pooled feature map.
    pub fn output_shape(&self) -> [usize; 3] {
        let side = self.input_size >> self.stage_channels.len();
        [side, side, self.feature_channels()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `3×3×Cin×Cout`
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T> {
    pub config: BackboneConfig,
    /// Convolutions in forward order; stage boundaries follow
    /// `config.convs_per_stage`.
    pub layers: Vec<ConvLayer<T>>,
}

#[derive(Clone, Debug)]
pub struct BackboneNodes {
    pub layers: Vec<(NodeId, NodeId)>,
    convs_per_stage: Vec<usize>,
    input_size: usize,
}

impl<T: Scalar> Backbone<T> {
    /// He-uniform kernels and zero biases drawn from `seed`.
    pub fn build(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = INPUT_CHANNELS;
        for (&cout, &n) in config.stage_channels.iter().zip(&config.convs_per_stage) {
            for _ in 0..n {
                let shape = [KERNEL_SIZE, KERNEL_SIZE, cin, cout];
                layers.push(ConvLayer {
                    kernel: init::he_uniform(&shape, KERNEL_SIZE * KERNEL_SIZE * cin, &mut rng),
                    bias: Tensor::zeros(&[cout]),
                });
                cin = cout;
            }
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn zeros(config: &BackboneConfig) -> Result<Self> {
        let mut b = Self::build(config, 0)?;
        for layer in &mut b.layers {
            layer.kernel.data_mut().fill(T::zero());
        }
        Ok(b)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BackboneNodes {
        BackboneNodes {
            layers: self
                .layers
                .iter()
                .map(|l| (g.parameter(l.kernel.clone()), g.parameter(l.bias.clone())))
                .collect(),
            convs_per_stage: self.config.convs_per_stage.clone(),
            input_size: self.config.input_size,
        }
    }

    /// Pooled features of one `H×W×3` image, outside any training graph.
    pub fn extract_features(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let x = g.constant(image.clone());
        let (gap, gmax) = nodes.forward(&mut g, x)?;
        Ok((g.value(gap).clone(), g.value(gmax).clone()))
    }
}

impl BackboneNodes {
    /// Returns `(global average, global max)` of the last feature map.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, image: NodeId) -> Result<(NodeId, NodeId)> {
        let shape = g.value(image).shape().to_vec();
        let want = [
            self.input_size,
            self.input_size,
            g.value(self.layers[0].0).shape()[2],
        ];
        if shape != want {
            return Err(Error::Shape(format!(
                "backbone input must have shape {want:?}, got {shape:?}"
            )));
        }
        let mut x = image;
        let mut layers = self.layers.iter();
        for &n in &self.convs_per_stage {
            for &(kernel, bias) in layers.by_ref().take(n) {
                let y = g.conv2d(x, kernel, bias, Padding::Same)?;
                x = g.relu(y);
            }
            x = g.max_pool2d(x)?;
        }
        Ok((g.global_avg_pool(x)?, g.global_max_pool(x)?))
    }
}
