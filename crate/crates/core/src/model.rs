//! The two-stream recognizer: per-frame fusion of pooled features into a
//! class distribution, and a clip-level LSTM over those distributions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, BackboneNodes};
use crate::data::{derive_seed, VideoClip};
use crate::error::{Error, Result};
use crate::flow::{preprocess_clip, FlowParams};
use crate::graph::{Graph, NodeId};
use crate::layers::{lstm_final_hidden, Dense, DenseNodes, LstmNodes, LstmParams};
use crate::loss::{total_loss, LossBreakdown, PROBABILITY_FLOOR};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the four pooled vectors of a frame are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// A 4-step LSTM over (avg frame, max frame, avg flow, max flow).
    #[default]
    Lstm,
    /// Element-wise sum followed by a linear projection to the hidden width.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub hidden_units: usize,
    pub num_categories: usize,
    pub time_step: usize,
    pub fusion: Fusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            hidden_units: 200,
            num_categories: 6,
            time_step: 7,
            fusion: Fusion::Lstm,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be ≥ 1".into()));
        }
        if self.num_categories < 2 {
            return Err(Error::Config("num_categories must be ≥ 2".into()));
        }
        if self.time_step == 0 {
            return Err(Error::Config("time_step must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FusionParams<T> {
    Lstm(LstmParams<T>),
    Sum(Dense<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReharModel<T> {
    pub config: ModelConfig,
    pub backbone_frame: Backbone<T>,
    pub backbone_flow: Backbone<T>,
    pub fusion: FusionParams<T>,
    pub fc1: Dense<T>,
    pub lstm2: LstmParams<T>,
    pub fc2: Dense<T>,
}

/// One retained frame and its flow image, both `H×W×3` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTensors<T> {
    pub frame: Tensor<T>,
    pub flow: Tensor<T>,
}

/// A clip reduced to exactly the tensors the model consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedClip<T> {
    pub id: String,
    pub label: usize,
    pub pairs: Vec<PairTensors<T>>,
}

impl<T: Scalar> PreparedClip<T> {
    /// Subsamples to `time_step + 1` frames at the backbone's input size and
    /// renders the flow images.
    pub fn from_clip(clip: &VideoClip, config: &ModelConfig, flow: &FlowParams) -> Result<Self> {
        let size = config.backbone.input_size;
        let pairs = preprocess_clip(clip, config.time_step + 1, (size, size), flow)?
            .into_iter()
            .map(|p| PairTensors {
                frame: p.frame.to_tensor(),
                flow: p.flow.to_tensor(),
            })
            .collect();
        Ok(Self {
            id: clip.id.clone(),
            label: clip.label,
            pairs,
        })
    }

    /// [`PreparedClip::from_clip`] over many clips, in input order. With
    /// `threads > 1` the clips are processed concurrently.
    pub fn from_clips(
        clips: &[VideoClip],
        config: &ModelConfig,
        flow: &FlowParams,
        threads: usize,
    ) -> Result<Vec<Self>> {
        let run = |c: &VideoClip| Self::from_clip(c, config, flow);
        if threads <= 1 {
            return clips.iter().map(run).collect();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| clips.par_iter().map(run).collect())
    }
}

impl<T: Scalar> ReharModel<T> {
    /// Fresh parameters: He-uniform backbones, Glorot/orthogonal LSTMs,
    /// Glorot dense layers. Every group draws from its own derived seed.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = |part: u64| ChaCha8Rng::seed_from_u64(derive_seed(seed, &[part]));
        let c_feat = config.backbone.feature_channels();
        let (hidden, classes) = (config.hidden_units, config.num_categories);
        let fusion = match config.fusion {
            Fusion::Lstm => FusionParams::Lstm(LstmParams::init(c_feat, hidden, &mut rng(2))),
            Fusion::Sum => FusionParams::Sum(Dense::glorot(c_feat, hidden, &mut rng(2))),
        };
        Ok(Self {
            config: config.clone(),
            backbone_frame: Backbone::build(&config.backbone, derive_seed(seed, &[0]))?,
            backbone_flow: Backbone::build(&config.backbone, derive_seed(seed, &[1]))?,
            fusion,
            fc1: Dense::glorot(hidden, classes, &mut rng(3)),
            lstm2: LstmParams::init(classes, hidden, &mut rng(4)),
            fc2: Dense::glorot(hidden, classes, &mut rng(5)),
        })
    }

    /// Every parameter set to zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for (_, p) in m.parameters_mut() {
            p.data_mut().fill(T::zero());
        }
        Ok(m)
    }

    /// Named parameters in canonical order: frame backbone, flow backbone,
    /// fusion, FC1, LSTM2, FC2.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, b) in [
            ("backbone_frame", &self.backbone_frame),
            ("backbone_flow", &self.backbone_flow),
        ] {
            for (i, l) in b.layers.iter().enumerate() {
                out.push((format!("{name}.conv{i}.kernel"), &l.kernel));
                out.push((format!("{name}.conv{i}.bias"), &l.bias));
            }
        }
        match &self.fusion {
            FusionParams::Lstm(p) => push_lstm(&mut out, "lstm1", p),
            FusionParams::Sum(d) => push_dense(&mut out, "sum_projection", d),
        }
        push_dense(&mut out, "fc1", &self.fc1);
        push_lstm(&mut out, "lstm2", &self.lstm2);
        push_dense(&mut out, "fc2", &self.fc2);
        out
    }

    /// Same order and names as [`parameters`](Self::parameters).
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (name, b) in [
            ("backbone_frame", &mut self.backbone_frame),
            ("backbone_flow", &mut self.backbone_flow),
        ] {
            for (i, l) in b.layers.iter_mut().enumerate() {
                out.push((format!("{name}.conv{i}.kernel"), &mut l.kernel));
                out.push((format!("{name}.conv{i}.bias"), &mut l.bias));
            }
        }
        match &mut self.fusion {
            FusionParams::Lstm(p) => push_lstm_mut(&mut out, "lstm1", p),
            FusionParams::Sum(d) => push_dense_mut(&mut out, "sum_projection", d),
        }
        push_dense_mut(&mut out, "fc1", &mut self.fc1);
        push_lstm_mut(&mut out, "lstm2", &mut self.lstm2);
        push_dense_mut(&mut out, "fc2", &mut self.fc2);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> ModelNodes {
        ModelNodes {
            frame: self.backbone_frame.bind(g),
            flow: self.backbone_flow.bind(g),
            fusion: match &self.fusion {
                FusionParams::Lstm(p) => FusionNodes::Lstm(p.bind(g)),
                FusionParams::Sum(d) => FusionNodes::Sum(d.bind(g)),
            },
            fc1: self.fc1.bind(g),
            lstm2: self.lstm2.bind(g),
            fc2: self.fc2.bind(g),
            num_categories: self.config.num_categories,
            time_step: self.config.time_step,
        }
    }

    /// Forward pass without targets.
    pub fn predict(&self, pairs: &[PairTensors<T>]) -> Result<ClipPrediction<T>> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let inputs = bind_pairs(&mut g, pairs, false);
        let out = nodes.forward(&mut g, &inputs, None, T::zero())?;
        Ok(ClipPrediction {
            reprs: out.reprs.iter().map(|&r| g.value(r).clone()).collect(),
            probs: g.value(out.final_probs).clone(),
        })
    }

    /// Loss components and the gradient of the total with respect to every
    /// parameter, in canonical order.
    pub fn loss_and_gradients(
        &self,
        pairs: &[PairTensors<T>],
        label: usize,
        lambda_weight: T,
    ) -> Result<ClipGradients<T>> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let inputs = bind_pairs(&mut g, pairs, false);
        let out = nodes.forward(&mut g, &inputs, Some(label), lambda_weight)?;
        let losses = out.loss.expect("targets were supplied");
        let breakdown = losses.breakdown(&g, lambda_weight)?;
        let grads = g.backward(losses.total)?;
        let gradients = nodes
            .parameter_ids()
            .into_iter()
            .zip(self.parameters())
            .map(|(id, (_, p))| grads.get_or_zeros(id, p.shape()))
            .collect();
        Ok(ClipGradients {
            breakdown,
            probs: g.value(out.final_probs).clone(),
            gradients,
        })
    }
}

fn push_dense<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, d: &'a Dense<T>) {
    out.push((format!("{name}.weight"), &d.weight));
    out.push((format!("{name}.bias"), &d.bias));
}

fn push_lstm<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, p: &'a LstmParams<T>) {
    out.push((format!("{name}.input_kernel"), &p.input_kernel));
    out.push((format!("{name}.recurrent_kernel"), &p.recurrent_kernel));
    out.push((format!("{name}.bias"), &p.bias));
}

fn push_dense_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    name: &str,
    d: &'a mut Dense<T>,
) {
    out.push((format!("{name}.weight"), &mut d.weight));
    out.push((format!("{name}.bias"), &mut d.bias));
}

fn push_lstm_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    name: &str,
    p: &'a mut LstmParams<T>,
) {
    out.push((format!("{name}.input_kernel"), &mut p.input_kernel));
    out.push((format!("{name}.recurrent_kernel"), &mut p.recurrent_kernel));
    out.push((format!("{name}.bias"), &mut p.bias));
}

/// Parameter group of a canonical parameter name (`fc1.weight` → `fc1`).
pub fn parameter_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Adds every pair's tensors to `g`, as parameters when `track` is set so
/// the backward pass reaches the input pixels.
pub fn bind_pairs<T: Scalar>(
    g: &mut Graph<T>,
    pairs: &[PairTensors<T>],
    track: bool,
) -> Vec<(NodeId, NodeId)> {
    pairs
        .iter()
        .map(|p| {
            if track {
                (g.parameter(p.frame.clone()), g.parameter(p.flow.clone()))
            } else {
                (g.constant(p.frame.clone()), g.constant(p.flow.clone()))
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ClipPrediction<T> {
    /// Per-frame class distributions.
    pub reprs: Vec<Tensor<T>>,
    pub probs: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ClipGradients<T> {
    pub breakdown: LossBreakdown<T>,
    pub probs: Tensor<T>,
    pub gradients: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub enum FusionNodes {
    Lstm(LstmNodes),
    Sum(DenseNodes),
}

/// Graph handles of every model parameter.
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub frame: BackboneNodes,
    pub flow: BackboneNodes,
    pub fusion: FusionNodes,
    pub fc1: DenseNodes,
    pub lstm2: LstmNodes,
    pub fc2: DenseNodes,
    pub num_categories: usize,
    pub time_step: usize,
}

#[derive(Clone, Debug)]
pub struct ClipLossNodes {
    pub frame_losses: Vec<NodeId>,
    pub final_loss: NodeId,
    pub total: NodeId,
}

impl ClipLossNodes {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>, lambda_weight: T) -> Result<LossBreakdown<T>> {
        let frame: Vec<T> = self
            .frame_losses
            .iter()
            .map(|&l| g.value(l).data()[0])
            .collect();
        total_loss(&frame, g.value(self.final_loss).data()[0], lambda_weight)
    }
}

#[derive(Clone, Debug)]
pub struct ClipForward {
    pub reprs: Vec<NodeId>,
    pub final_logits: NodeId,
    pub final_probs: NodeId,
    pub loss: Option<ClipLossNodes>,
}

impl ModelNodes {
    /// Parameter nodes in canonical order.
    pub fn parameter_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        for b in [&self.frame, &self.flow] {
            for &(k, bias) in &b.layers {
                ids.extend([k, bias]);
            }
        }
        match &self.fusion {
            FusionNodes::Lstm(p) => ids.extend([p.input_kernel, p.recurrent_kernel, p.bias]),
            FusionNodes::Sum(d) => ids.extend([d.weight, d.bias]),
        }
        ids.extend([self.fc1.weight, self.fc1.bias]);
        ids.extend([
            self.lstm2.input_kernel,
            self.lstm2.recurrent_kernel,
            self.lstm2.bias,
        ]);
        ids.extend([self.fc2.weight, self.fc2.bias]);
        ids
    }

    /// Mutable handles in canonical order, for substituting a parameter node.
    pub fn parameter_ids_mut(&mut self) -> Vec<&mut NodeId> {
        let mut ids: Vec<&mut NodeId> = Vec::new();
        for b in [&mut self.frame, &mut self.flow] {
            for (k, bias) in b.layers.iter_mut() {
                ids.push(k);
                ids.push(bias);
            }
        }
        match &mut self.fusion {
            FusionNodes::Lstm(p) => {
                ids.extend([&mut p.input_kernel, &mut p.recurrent_kernel, &mut p.bias])
            }
            FusionNodes::Sum(d) => ids.extend([&mut d.weight, &mut d.bias]),
        }
        ids.extend([&mut self.fc1.weight, &mut self.fc1.bias]);
        ids.extend([
            &mut self.lstm2.input_kernel,
            &mut self.lstm2.recurrent_kernel,
            &mut self.lstm2.bias,
        ]);
        ids.extend([&mut self.fc2.weight, &mut self.fc2.bias]);
        ids
    }

    /// Pre-softmax FC1 output for the pooled vectors
    /// `[avg frame, max frame, avg flow, max flow]`.
    pub fn frame_logits<T: Scalar>(&self, g: &mut Graph<T>, pooled: [NodeId; 4]) -> Result<NodeId> {
        let hidden = match &self.fusion {
            FusionNodes::Lstm(p) => {
                let width = g.value(p.input_kernel).shape()[0];
                for &v in &pooled {
                    if g.value(v).shape() != [width] {
                        return Err(Error::Shape(format!(
                            "pooled vector has shape {:?}, LSTM1 expects [{width}]",
                            g.value(v).shape()
                        )));
                    }
                }
                lstm_final_hidden(g, &pooled, p)?
            }
            FusionNodes::Sum(d) => {
                let mut s = pooled[0];
                for &v in &pooled[1..] {
                    s = g.add(s, v)?;
                }
                d.forward(g, s)?
            }
        };
        self.fc1.forward(g, hidden)
    }

    /// Per-frame class distribution.
    pub fn frame_representation<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pooled: [NodeId; 4],
    ) -> Result<NodeId> {
        let logits = self.frame_logits(g, pooled)?;
        g.softmax(logits)
    }

    /// Pre-softmax FC2 output over a sequence of frame representations.
    pub fn activity_logits<T: Scalar>(&self, g: &mut Graph<T>, reprs: &[NodeId]) -> Result<NodeId> {
        if reprs.len() != self.time_step {
            return Err(Error::Shape(format!(
                "activity LSTM expects {} frame representations, got {}",
                self.time_step,
                reprs.len()
            )));
        }
        let h = lstm_final_hidden(g, reprs, &self.lstm2)?;
        self.fc2.forward(g, h)
    }

    pub fn recognize_activity<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        reprs: &[NodeId],
    ) -> Result<NodeId> {
        let logits = self.activity_logits(g, reprs)?;
        g.softmax(logits)
    }

    /// Full clip forward pass over `(frame, flow image)` input nodes. With a
    /// label, also records the frame losses, the clip loss and
    /// `Σ frame losses + λ·clip loss` on the same graph.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        inputs: &[(NodeId, NodeId)],
        label: Option<usize>,
        lambda_weight: T,
    ) -> Result<ClipForward> {
        if inputs.len() != self.time_step {
            return Err(Error::Shape(format!(
                "model expects {} (frame, flow) pairs, got {}",
                self.time_step,
                inputs.len()
            )));
        }
        if let Some(l) = label {
            if l >= self.num_categories {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for {} categories",
                    self.num_categories
                )));
            }
        }
        let mut reprs = Vec::with_capacity(inputs.len());
        for &(frame, flow) in inputs {
            let (gap_f, gmax_f) = self.frame.forward(g, frame)?;
            let (gap_o, gmax_o) = self.flow.forward(g, flow)?;
            reprs.push(self.frame_representation(g, [gap_f, gmax_f, gap_o, gmax_o])?);
        }
        let final_logits = self.activity_logits(g, &reprs)?;
        let final_probs = g.softmax(final_logits)?;

        let loss = match label {
            None => None,
            Some(label) => {
                let floor = T::from_f64_lossy(PROBABILITY_FLOOR);
                let frame_losses = reprs
                    .iter()
                    .map(|&r| g.cross_entropy(r, label, floor))
                    .collect::<Result<Vec<_>>>()?;
                let final_loss = g.cross_entropy(final_probs, label, floor)?;
                let mut sum = frame_losses[0];
                for &l in &frame_losses[1..] {
                    sum = g.add(sum, l)?;
                }
                let weighted = g.scale(final_loss, lambda_weight);
                let total = g.add(sum, weighted)?;
                Some(ClipLossNodes {
                    frame_losses,
                    final_loss,
                    total,
                })
            }
        };
        Ok(ClipForward {
            reprs,
            final_logits,
            final_probs,
            loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny_config(fusion: Fusion) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                input_size: 8,
                stage_channels: vec![3, 4],
                convs_per_stage: vec![1, 1],
            },
            hidden_units: 5,
            num_categories: 3,
            time_step: 2,
            fusion,
        }
    }

    fn random_pairs(n: usize, size: usize, rng: &mut impl Rng) -> Vec<PairTensors<f64>> {
        (0..n)
            .map(|_| PairTensors {
                frame: Tensor::from_fn(&[size, size, 3], |_| rng.random()),
                flow: Tensor::from_fn(&[size, size, 3], |_| rng.random()),
            })
            .collect()
    }

    #[test]
    fn canonical_order_is_consistent() {
        for fusion in [Fusion::Lstm, Fusion::Sum] {
            let m = ReharModel::<f64>::new(&tiny_config(fusion), 1).unwrap();
            let mut g = Graph::new();
            let nodes = m.bind(&mut g);
            let ids = nodes.parameter_ids();
            let params = m.parameters();
            assert_eq!(ids.len(), params.len());
            for (id, (name, t)) in ids.iter().zip(&params) {
                assert_eq!(g.value(*id), *t, "{name}");
            }
            let mut m2 = m.clone();
            let names: Vec<String> = m2.parameters_mut().into_iter().map(|(n, _)| n).collect();
            assert_eq!(
                names,
                params.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn zero_model_gives_uniform_outputs_and_known_loss() {
        let cfg = ModelConfig {
            num_categories: 4,
            ..tiny_config(Fusion::Lstm)
        };
        let m = ReharModel::<f64>::zeros(&cfg).unwrap();
        let pairs = random_pairs(2, 8, &mut ChaCha8Rng::seed_from_u64(0));
        let out = m.loss_and_gradients(&pairs, 1, 2.0).unwrap();
        assert!(out.probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let want = 2.0 * 4f64.ln() + 2.0 * 4f64.ln();
        assert!((out.breakdown.total - want).abs() < 1e-12);
    }

    #[test]
    fn breakdown_total_matches_graph_total_bitwise() {
        let m = ReharModel::<f64>::new(&tiny_config(Fusion::Lstm), 3).unwrap();
        let pairs = random_pairs(2, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let mut g = Graph::new();
        let nodes = m.bind(&mut g);
        let inputs = bind_pairs(&mut g, &pairs, false);
        let out = nodes.forward(&mut g, &inputs, Some(2), 2.0).unwrap();
        let loss = out.loss.unwrap();
        let b = loss.breakdown(&g, 2.0).unwrap();
        assert_eq!(b.total.to_bits(), g.value(loss.total).data()[0].to_bits());
    }

    #[test]
    fn wrong_lengths_rejected() {
        let m = ReharModel::<f64>::new(&tiny_config(Fusion::Lstm), 3).unwrap();
        let pairs = random_pairs(3, 8, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.predict(&pairs).is_err());
        let pairs = random_pairs(2, 8, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.loss_and_gradients(&pairs, 3, 2.0).is_err());
        let wrong_size = random_pairs(2, 16, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(m.predict(&wrong_size), Err(Error::Shape(_))));
    }

    #[test]
    fn every_group_receives_gradient() {
        let m = ReharModel::<f64>::new(&tiny_config(Fusion::Lstm), 5).unwrap();
        let pairs = random_pairs(2, 8, &mut ChaCha8Rng::seed_from_u64(2));
        let out = m.loss_and_gradients(&pairs, 0, 2.0).unwrap();
        let mut groups = std::collections::BTreeMap::<String, bool>::new();
        for ((name, _), grad) in m.parameters().iter().zip(&out.gradients) {
            let nonzero = grad.data().iter().any(|&v| v != 0.0);
            *groups.entry(parameter_group(name).to_string()).or_default() |= nonzero;
        }
        assert_eq!(groups.len(), 6);
        assert!(groups.values().all(|&v| v), "{groups:?}");
    }
}
