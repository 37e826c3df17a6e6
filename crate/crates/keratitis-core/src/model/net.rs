//! Network architecture: trunk, head preamble and task heads, with exact
//! hand-written backpropagation.
//!
//! Parameters live in one flat `f64` vector described by a [`ParamLayout`];
//! trunk entries come first so freezing is a contiguous range. The image
//! trunk is two stride-2 convolutions; the feature trunk is one linear layer
//! with ReLU. Both feed the head preamble: 3x3 average pooling (image mode
//! only), batch normalization, dropout, then the variant's fully connected
//! head(s) under a sigmoid or softmax.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::InfectionTask;
use crate::error::{Error, Result};
use crate::model::loss::{
    clinical_grad_logits, clinical_loss, cross_entropy, cross_entropy_grad_logits, weighted_bce,
    weighted_bce_grad_logits, LossSpec,
};
use crate::rng::Rng;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Momentum of the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Channels of the first image convolution.
const CONV1_CHANNELS: usize = 8;

/// Head variant of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// One binary infection head.
    SingleTask(InfectionTask),
    /// Three parallel single-neuron infection heads.
    MultitaskV1,
    /// One three-neuron infection head.
    MultitaskV2,
    /// Binary sex head.
    SexHead,
    /// Four-class age head under a softmax.
    AgeHead,
}

impl Variant {
    pub fn output_width(self) -> usize {
        match self {
            Variant::SingleTask(_) | Variant::SexHead => 1,
            Variant::MultitaskV1 | Variant::MultitaskV2 => 3,
            Variant::AgeHead => 4,
        }
    }

    pub fn uses_softmax(self) -> bool {
        matches!(self, Variant::AgeHead)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleTask(InfectionTask::Bacteria) => "ST-bacteria",
            Variant::SingleTask(InfectionTask::Fungi) => "ST-fungi",
            Variant::SingleTask(InfectionTask::Amoeba) => "ST-amoeba",
            Variant::MultitaskV1 => "Mv1",
            Variant::MultitaskV2 => "Mv2",
            Variant::SexHead => "sex",
            Variant::AgeHead => "age",
        }
    }
}

/// Feature extractor selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrunkKind {
    /// Linear layer (with ReLU) over a feature-vector payload.
    Linear { in_dim: usize },
    /// Two stride-2 convolutions over an image payload.
    TinyConv { image_size: usize },
}

/// Full architectural configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub trunk: TrunkKind,
    /// Trunk output width (linear units or conv channels).
    pub hidden: usize,
    pub dropout_p: f64,
    pub use_batchnorm: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant, trunk: TrunkKind, hidden: usize) -> Self {
        ModelConfig {
            variant,
            trunk,
            hidden,
            dropout_p: 0.3,
            use_batchnorm: true,
        }
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Names, shapes and offsets of all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
    /// End of the trunk range; freezing holds `params[..trunk_len]` fixed.
    pub trunk_len: usize,
}

impl ParamLayout {
    fn push(&mut self, name: &'static str, shape: &[usize]) {
        let len = shape.iter().product();
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            offset: self.total,
            len,
        });
        self.total += len;
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Slice of `params` belonging to a named tensor.
    pub fn view<'a>(&self, params: &'a [f64], name: &str) -> Option<&'a [f64]> {
        self.entry(name).map(|e| &params[e.offset..e.offset + e.len])
    }

    pub fn view_mut<'a>(&self, params: &'a mut [f64], name: &str) -> Option<&'a mut [f64]> {
        self.entry(name)
            .map(|e| &mut params[e.offset..e.offset + e.len])
    }
}

/// Running batch-norm statistics (model state, not optimized parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormState {
    pub fn new(features: usize) -> Self {
        NormState {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Fold one batch's statistics into the running values.
    pub fn update(&mut self, batch_mean: &[f64], batch_var_unbiased: Option<&[f64]>) {
        for (r, &b) in self.mean.iter_mut().zip(batch_mean.iter()) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        if let Some(var) = batch_var_unbiased {
            for (r, &b) in self.var.iter_mut().zip(var.iter()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }
}

/// Inverted-dropout mask: entries are `0` or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<f64>,
}

impl DropoutMask {
    pub fn sample(rng: &mut Rng, n: usize, features: usize, p: f64) -> Self {
        let scale = 1.0 / (1.0 - p);
        let keep = (0..n * features)
            .map(|_| if rng.next_f64() < p { 0.0 } else { scale })
            .collect();
        DropoutMask { keep }
    }

    pub fn ones(n: usize, features: usize) -> Self {
        DropoutMask {
            keep: vec![1.0; n * features],
        }
    }
}

/// Batch inputs, shaped for the matching trunk.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Features {
        n: usize,
        dim: usize,
        /// Row-major `[n, dim]`.
        data: Vec<f64>,
    },
    Images {
        n: usize,
        size: usize,
        /// Planar `[n, 3, size, size]`.
        planar: Vec<f64>,
    },
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Features { n, .. } | Inputs::Images { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Supervision targets, matching the head variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Infections(Vec<[f64; 3]>),
    Binary(Vec<f64>),
    Age(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Infections(v) => v.len(),
            Targets::Binary(v) => v.len(),
            Targets::Age(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A batch ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Inputs,
    pub targets: Targets,
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    WeightedBce,
    Clinical,
    CrossEntropy,
}

/// A loss selection bound to its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLoss {
    pub kind: LossKind,
    pub spec: LossSpec,
}

impl TrainLoss {
    pub fn weighted_bce(class_weights: Vec<f64>) -> Self {
        let tasks = class_weights.len();
        TrainLoss {
            kind: LossKind::WeightedBce,
            spec: LossSpec {
                class_weights,
                hospital_weights: vec![1.0 / tasks as f64; tasks],
                mix: (0.8, 0.2),
            },
        }
    }

    pub fn clinical(spec: LossSpec) -> Self {
        TrainLoss {
            kind: LossKind::Clinical,
            spec,
        }
    }

    pub fn cross_entropy(class_weights: Vec<f64>) -> Self {
        let classes = class_weights.len();
        TrainLoss {
            kind: LossKind::CrossEntropy,
            spec: LossSpec {
                class_weights,
                hospital_weights: vec![1.0 / classes as f64; classes],
                mix: (0.8, 0.2),
            },
        }
    }

    fn flat_binary_targets(targets: &Targets) -> Result<Vec<f64>> {
        match targets {
            Targets::Infections(rows) => Ok(rows.iter().flatten().copied().collect()),
            Targets::Binary(v) => Ok(v.clone()),
            Targets::Age(_) => Err(Error::Argument(
                "binary loss cannot consume age targets".into(),
            )),
        }
    }

    /// Loss value over a batch of probabilities.
    pub fn compute(&self, probs: &[f64], targets: &Targets) -> Result<f64> {
        match self.kind {
            LossKind::WeightedBce => {
                let labels = Self::flat_binary_targets(targets)?;
                let tasks = self.spec.class_weights.len();
                weighted_bce(probs, &labels, tasks, &self.spec.class_weights)
            }
            LossKind::Clinical => {
                let labels = Self::flat_binary_targets(targets)?;
                let tasks = self.spec.class_weights.len();
                clinical_loss(probs, &labels, tasks, &self.spec)
            }
            LossKind::CrossEntropy => match targets {
                Targets::Age(labels) => cross_entropy(
                    probs,
                    labels,
                    self.spec.class_weights.len(),
                    &self.spec.class_weights,
                ),
                _ => Err(Error::Argument(
                    "cross-entropy requires age targets".into(),
                )),
            },
        }
    }

    pub(crate) fn grad_logits(&self, probs: &[f64], targets: &Targets) -> Result<Vec<f64>> {
        let mut dlogits = vec![0.0; probs.len()];
        match self.kind {
            LossKind::WeightedBce => {
                let labels = Self::flat_binary_targets(targets)?;
                let tasks = self.spec.class_weights.len();
                weighted_bce_grad_logits(probs, &labels, tasks, &self.spec.class_weights, &mut dlogits);
            }
            LossKind::Clinical => {
                let labels = Self::flat_binary_targets(targets)?;
                let tasks = self.spec.class_weights.len();
                clinical_grad_logits(probs, &labels, tasks, &self.spec, &mut dlogits);
            }
            LossKind::CrossEntropy => match targets {
                Targets::Age(labels) => cross_entropy_grad_logits(
                    probs,
                    labels,
                    self.spec.class_weights.len(),
                    &self.spec.class_weights,
                    &mut dlogits,
                ),
                _ => return Err(Error::Argument("cross-entropy requires age targets".into())),
            },
        }
        Ok(dlogits)
    }
}

/// Forward/backward mode.
#[derive(Debug, Clone, Copy)]
pub enum RunMode<'a> {
    /// Inference: running batch-norm statistics, no dropout.
    Eval,
    /// Training: batch statistics; dropout applied when a mask is given.
    Train { dropout: Option<&'a DropoutMask> },
}

struct BnCache {
    inv_std: Vec<f64>,
    xhat: Vec<f64>,
    train_mode: bool,
}

struct ConvCache {
    a1_pre: Vec<f64>,
    a1: Vec<f64>,
    s1: usize,
    a2_pre: Vec<f64>,
    s2: usize,
}

enum InputCache {
    Features(Vec<f64>),
    Images { planar: Vec<f64>, size: usize, conv: ConvCache },
}

struct Cache {
    n: usize,
    input: InputCache,
    trunk_pre: Vec<f64>,
    bn: Option<BnCache>,
    dropout: Option<Vec<f64>>,
    head_in: Vec<f64>,
}

/// Result of one forward pass.
pub struct ForwardPass {
    /// Activated head outputs, row-major `[n, out_width]`.
    pub probs: Vec<f64>,
    pub out_width: usize,
    /// Batch statistics when batch norm ran in training mode:
    /// `(mean, biased var, unbiased var when n > 1)`.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)>,
    cache: Cache,
}

/// Output size of a 3x3 stride-2 pad-1 convolution or pooling window.
#[inline]
fn half_size(s: usize) -> usize {
    (s - 1) / 2 + 1
}

/// The reference model: a sized architecture ready to run on a flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    feature_len: usize,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model> {
        if config.hidden == 0 {
            return Err(Error::Argument("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            return Err(Error::Argument(format!(
                "dropout_p must be in [0,1), got {}",
                config.dropout_p
            )));
        }
        let mut layout = ParamLayout {
            entries: Vec::new(),
            total: 0,
            trunk_len: 0,
        };
        let feature_len = match config.trunk {
            TrunkKind::Linear { in_dim } => {
                if in_dim == 0 {
                    return Err(Error::Argument("in_dim must be positive".into()));
                }
                layout.push("trunk.w", &[config.hidden, in_dim]);
                layout.push("trunk.b", &[config.hidden]);
                config.hidden
            }
            TrunkKind::TinyConv { image_size } => {
                if image_size < 4 {
                    return Err(Error::Argument(format!(
                        "image_size must be at least 4, got {image_size}"
                    )));
                }
                layout.push("conv1.w", &[CONV1_CHANNELS, 3, 3, 3]);
                layout.push("conv1.b", &[CONV1_CHANNELS]);
                layout.push("conv2.w", &[config.hidden, CONV1_CHANNELS, 3, 3]);
                layout.push("conv2.b", &[config.hidden]);
                let s1 = half_size(image_size);
                let s2 = half_size(s1);
                let pooled = half_size(s2);
                config.hidden * pooled * pooled
            }
        };
        layout.trunk_len = layout.total;
        if config.use_batchnorm {
            layout.push("norm.gamma", &[feature_len]);
            layout.push("norm.beta", &[feature_len]);
        }
        match config.variant {
            Variant::MultitaskV1 => {
                layout.push("head_bacteria.w", &[1, feature_len]);
                layout.push("head_bacteria.b", &[1]);
                layout.push("head_fungi.w", &[1, feature_len]);
                layout.push("head_fungi.b", &[1]);
                layout.push("head_amoeba.w", &[1, feature_len]);
                layout.push("head_amoeba.b", &[1]);
            }
            v => {
                let out = v.output_width();
                layout.push("head.w", &[out, feature_len]);
                layout.push("head.b", &[out]);
            }
        }
        Ok(Model {
            config,
            layout,
            feature_len,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_len(&self) -> usize {
        self.layout.total
    }

    /// End of the frozen (trunk) parameter range.
    pub fn trunk_len(&self) -> usize {
        self.layout.trunk_len
    }

    /// Width of the feature vector entering the head.
    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn out_width(&self) -> usize {
        self.config.variant.output_width()
    }

    /// Uniform fan-in initialization; batch-norm gain 1, shift 0.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = Rng::with_stream(seed, &[crate::rng::stream::INIT]);
        let mut params = vec![0.0; self.layout.total];
        for entry in &self.layout.entries {
            let slice = &mut params[entry.offset..entry.offset + entry.len];
            match entry.name {
                "norm.gamma" => slice.fill(1.0),
                "norm.beta" => slice.fill(0.0),
                name => {
                    let fan_in = if name.ends_with(".b") {
                        // biases share the fan-in of their weight tensor
                        match self.config.trunk {
                            TrunkKind::Linear { in_dim } if name == "trunk.b" => in_dim,
                            TrunkKind::TinyConv { .. } if name == "conv1.b" => 3 * 9,
                            TrunkKind::TinyConv { .. } if name == "conv2.b" => CONV1_CHANNELS * 9,
                            _ => self.feature_len,
                        }
                    } else if entry.shape.len() == 4 {
                        entry.shape[1] * entry.shape[2] * entry.shape[3]
                    } else {
                        entry.shape[1]
                    };
                    let bound = 1.0 / libm::sqrt(fan_in as f64);
                    for v in slice.iter_mut() {
                        *v = rng.uniform(-bound, bound);
                    }
                }
            }
        }
        params
    }

    pub fn init_norm(&self) -> NormState {
        NormState::new(self.feature_len)
    }

    fn check_inputs(&self, inputs: &Inputs) -> Result<()> {
        match (&self.config.trunk, inputs) {
            (TrunkKind::Linear { in_dim }, Inputs::Features { n, dim, data }) => {
                if dim != in_dim || data.len() != n * dim {
                    return Err(Error::ShapeMismatch(format!(
                        "expected [{n}, {in_dim}] features, got dim {dim} len {}",
                        data.len()
                    )));
                }
                Ok(())
            }
            (TrunkKind::TinyConv { image_size }, Inputs::Images { n, size, planar }) => {
                if size != image_size || planar.len() != n * 3 * size * size {
                    return Err(Error::ShapeMismatch(format!(
                        "expected [{n}, 3, {image_size}, {image_size}] images, got size {size} len {}",
                        planar.len()
                    )));
                }
                Ok(())
            }
            (TrunkKind::Linear { .. }, Inputs::Images { .. }) => Err(Error::UnsupportedMode(
                "linear trunk requires feature payloads".into(),
            )),
            (TrunkKind::TinyConv { .. }, Inputs::Features { .. }) => Err(Error::UnsupportedMode(
                "convolutional trunk requires image payloads".into(),
            )),
        }
    }

    /// Run the network. Training mode uses batch statistics for batch norm
    /// and applies the provided dropout mask; inference uses running
    /// statistics and no dropout.
    pub fn forward(
        &self,
        params: &[f64],
        norm: &NormState,
        inputs: &Inputs,
        mode: RunMode<'_>,
    ) -> Result<ForwardPass> {
        if params.len() != self.layout.total {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector length {} != layout total {}",
                params.len(),
                self.layout.total
            )));
        }
        self.check_inputs(inputs)?;
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Argument("empty batch".into()));
        }

        // trunk
        let (input_cache, trunk_pre, feat) = match inputs {
            Inputs::Features { n, dim, data } => {
                let w = self.layout.view(params, "trunk.w").unwrap();
                let b = self.layout.view(params, "trunk.b").unwrap();
                let h = self.config.hidden;
                let mut pre = vec![0.0; n * h];
                for i in 0..*n {
                    for j in 0..h {
                        let mut acc = b[j];
                        let wr = &w[j * dim..(j + 1) * dim];
                        let xr = &data[i * dim..(i + 1) * dim];
                        for (wv, xv) in wr.iter().zip(xr.iter()) {
                            acc += wv * xv;
                        }
                        pre[i * h + j] = acc;
                    }
                }
                let feat: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
                (InputCache::Features(data.clone()), pre, feat)
            }
            Inputs::Images { n, size, planar } => {
                let s0 = *size;
                let s1 = half_size(s0);
                let s2 = half_size(s1);
                let a1_pre = conv2d_forward(
                    planar,
                    *n,
                    3,
                    s0,
                    self.layout.view(params, "conv1.w").unwrap(),
                    self.layout.view(params, "conv1.b").unwrap(),
                    CONV1_CHANNELS,
                );
                let a1: Vec<f64> = a1_pre.iter().map(|&v| v.max(0.0)).collect();
                let a2_pre = conv2d_forward(
                    &a1,
                    *n,
                    CONV1_CHANNELS,
                    s1,
                    self.layout.view(params, "conv2.w").unwrap(),
                    self.layout.view(params, "conv2.b").unwrap(),
                    self.config.hidden,
                );
                let a2: Vec<f64> = a2_pre.iter().map(|&v| v.max(0.0)).collect();
                let pooled = avgpool_forward(&a2, *n, self.config.hidden, s2);
                let cache = ConvCache {
                    a1_pre,
                    a1,
                    s1,
                    a2_pre,
                    s2,
                };
                (
                    InputCache::Images {
                        planar: planar.clone(),
                        size: s0,
                        conv: cache,
                    },
                    Vec::new(),
                    pooled,
                )
            }
        };

        // batch norm
        let f = self.feature_len;
        let train_mode = matches!(mode, RunMode::Train { .. });
        let (bn_cache, bn_out, batch_stats) = if self.config.use_batchnorm {
            let gamma = self.layout.view(params, "norm.gamma").unwrap();
            let beta = self.layout.view(params, "norm.beta").unwrap();
            let mut out = vec![0.0; feat.len()];
            let mut xhat = vec![0.0; feat.len()];
            let mut inv_std = vec![0.0; f];
            let stats;
            if train_mode {
                let mut mean = vec![0.0; f];
                let mut var = vec![0.0; f];
                for i in 0..n {
                    for j in 0..f {
                        mean[j] += feat[i * f + j];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= n as f64;
                }
                for i in 0..n {
                    for j in 0..f {
                        let d = feat[i * f + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= n as f64;
                }
                for j in 0..f {
                    inv_std[j] = 1.0 / libm::sqrt(var[j] + BN_EPS);
                }
                for i in 0..n {
                    for j in 0..f {
                        let xh = (feat[i * f + j] - mean[j]) * inv_std[j];
                        xhat[i * f + j] = xh;
                        out[i * f + j] = gamma[j] * xh + beta[j];
                    }
                }
                let unbiased = if n > 1 {
                    Some(var.iter().map(|&v| v * n as f64 / (n as f64 - 1.0)).collect())
                } else {
                    None
                };
                stats = Some((mean, var, unbiased));
            } else {
                for j in 0..f {
                    inv_std[j] = 1.0 / libm::sqrt(norm.var[j] + BN_EPS);
                }
                for i in 0..n {
                    for j in 0..f {
                        let xh = (feat[i * f + j] - norm.mean[j]) * inv_std[j];
                        xhat[i * f + j] = xh;
                        out[i * f + j] = gamma[j] * xh + beta[j];
                    }
                }
                stats = None;
            }
            (
                Some(BnCache {
                    inv_std,
                    xhat,
                    train_mode,
                }),
                out,
                stats,
            )
        } else {
            (None, feat.clone(), None)
        };

        // dropout
        let (dropout_cache, head_in) = match mode {
            RunMode::Train {
                dropout: Some(mask),
            } => {
                if mask.keep.len() != bn_out.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "dropout mask length {} != features {}",
                        mask.keep.len(),
                        bn_out.len()
                    )));
                }
                let dropped: Vec<f64> = bn_out
                    .iter()
                    .zip(mask.keep.iter())
                    .map(|(&v, &m)| v * m)
                    .collect();
                (Some(mask.keep.clone()), dropped)
            }
            _ => (None, bn_out),
        };

        // head(s)
        let out_w = self.out_width();
        let mut logits = vec![0.0; n * out_w];
        match self.config.variant {
            Variant::MultitaskV1 => {
                for (t, head) in ["head_bacteria", "head_fungi", "head_amoeba"]
                    .iter()
                    .enumerate()
                {
                    let w = self
                        .layout
                        .view(params, &format!("{head}.w"))
                        .unwrap();
                    let b = self
                        .layout
                        .view(params, &format!("{head}.b"))
                        .unwrap();
                    for i in 0..n {
                        let mut acc = b[0];
                        let xr = &head_in[i * f..(i + 1) * f];
                        for (wv, xv) in w.iter().zip(xr.iter()) {
                            acc += wv * xv;
                        }
                        logits[i * out_w + t] = acc;
                    }
                }
            }
            _ => {
                let w = self.layout.view(params, "head.w").unwrap();
                let b = self.layout.view(params, "head.b").unwrap();
                for i in 0..n {
                    for o in 0..out_w {
                        let mut acc = b[o];
                        let wr = &w[o * f..(o + 1) * f];
                        let xr = &head_in[i * f..(i + 1) * f];
                        for (wv, xv) in wr.iter().zip(xr.iter()) {
                            acc += wv * xv;
                        }
                        logits[i * out_w + o] = acc;
                    }
                }
            }
        }

        // activation
        let probs = if self.config.variant.uses_softmax() {
            let mut p = vec![0.0; logits.len()];
            for i in 0..n {
                let row = &logits[i * out_w..(i + 1) * out_w];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for (o, &z) in row.iter().enumerate() {
                    let e = libm::exp(z - max);
                    p[i * out_w + o] = e;
                    denom += e;
                }
                for o in 0..out_w {
                    p[i * out_w + o] /= denom;
                }
            }
            p
        } else {
            logits.iter().map(|&z| 1.0 / (1.0 + libm::exp(-z))).collect()
        };

        Ok(ForwardPass {
            probs,
            out_width: out_w,
            batch_stats,
            cache: Cache {
                n,
                input: input_cache,
                trunk_pre,
                bn: bn_cache,
                dropout: dropout_cache,
                head_in,
            },
        })
    }

    /// Backpropagate `dlogits` through the network, returning parameter
    /// gradients and, when requested, the gradient with respect to the input.
    fn backward(
        &self,
        params: &[f64],
        cache: &Cache,
        dlogits: &[f64],
        want_input_grad: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let n = cache.n;
        let f = self.feature_len;
        let out_w = self.out_width();
        let mut grads = vec![0.0; self.layout.total];
        let mut dhead_in = vec![0.0; n * f];

        // heads
        match self.config.variant {
            Variant::MultitaskV1 => {
                for (t, head) in ["head_bacteria", "head_fungi", "head_amoeba"]
                    .iter()
                    .enumerate()
                {
                    let w_entry = self.layout.entry(&format!("{head}.w")).unwrap().clone();
                    let b_entry = self.layout.entry(&format!("{head}.b")).unwrap().clone();
                    let w = &params[w_entry.offset..w_entry.offset + w_entry.len];
                    for i in 0..n {
                        let dz = dlogits[i * out_w + t];
                        grads[b_entry.offset] += dz;
                        let xr = &cache.head_in[i * f..(i + 1) * f];
                        let dwr = &mut grads[w_entry.offset..w_entry.offset + w_entry.len];
                        for j in 0..f {
                            dwr[j] += dz * xr[j];
                        }
                        let dxr = &mut dhead_in[i * f..(i + 1) * f];
                        for j in 0..f {
                            dxr[j] += dz * w[j];
                        }
                    }
                }
            }
            _ => {
                let w_entry = self.layout.entry("head.w").unwrap().clone();
                let b_entry = self.layout.entry("head.b").unwrap().clone();
                let w = &params[w_entry.offset..w_entry.offset + w_entry.len];
                for i in 0..n {
                    for o in 0..out_w {
                        let dz = dlogits[i * out_w + o];
                        grads[b_entry.offset + o] += dz;
                        let xr = &cache.head_in[i * f..(i + 1) * f];
                        for j in 0..f {
                            grads[w_entry.offset + o * f + j] += dz * xr[j];
                        }
                        let wr = &w[o * f..(o + 1) * f];
                        let dxr = &mut dhead_in[i * f..(i + 1) * f];
                        for j in 0..f {
                            dxr[j] += dz * wr[j];
                        }
                    }
                }
            }
        }

        // dropout
        let mut dbn_out = dhead_in;
        if let Some(mask) = &cache.dropout {
            for (d, &m) in dbn_out.iter_mut().zip(mask.iter()) {
                *d *= m;
            }
        }

        // batch norm
        let mut dfeat = if let Some(bn) = &cache.bn {
            let gamma_entry = self.layout.entry("norm.gamma").unwrap().clone();
            let beta_entry = self.layout.entry("norm.beta").unwrap().clone();
            let gamma = &params[gamma_entry.offset..gamma_entry.offset + gamma_entry.len];
            for i in 0..n {
                for j in 0..f {
                    let dy = dbn_out[i * f + j];
                    grads[gamma_entry.offset + j] += dy * bn.xhat[i * f + j];
                    grads[beta_entry.offset + j] += dy;
                }
            }
            let mut dx = vec![0.0; n * f];
            if bn.train_mode {
                // coupled gradient through the batch statistics
                let m = n as f64;
                for j in 0..f {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in 0..n {
                        let dxhat = dbn_out[i * f + j] * gamma[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * bn.xhat[i * f + j];
                    }
                    for i in 0..n {
                        let dxhat = dbn_out[i * f + j] * gamma[j];
                        dx[i * f + j] = bn.inv_std[j]
                            * (dxhat - sum_dxhat / m - bn.xhat[i * f + j] * sum_dxhat_xhat / m);
                    }
                }
            } else {
                for i in 0..n {
                    for j in 0..f {
                        dx[i * f + j] = dbn_out[i * f + j] * gamma[j] * bn.inv_std[j];
                    }
                }
            }
            dx
        } else {
            dbn_out
        };

        // trunk
        let input_grad = match &cache.input {
            InputCache::Features(x) => {
                // relu
                for (d, &pre) in dfeat.iter_mut().zip(cache.trunk_pre.iter()) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
                let w_entry = self.layout.entry("trunk.w").unwrap().clone();
                let b_entry = self.layout.entry("trunk.b").unwrap().clone();
                let dim = w_entry.shape[1];
                let h = self.config.hidden;
                let w = &params[w_entry.offset..w_entry.offset + w_entry.len];
                let mut dx = if want_input_grad {
                    Some(vec![0.0; n * dim])
                } else {
                    None
                };
                for i in 0..n {
                    for j in 0..h {
                        let dz = dfeat[i * h + j];
                        if dz == 0.0 {
                            continue;
                        }
                        grads[b_entry.offset + j] += dz;
                        let xr = &x[i * dim..(i + 1) * dim];
                        for d in 0..dim {
                            grads[w_entry.offset + j * dim + d] += dz * xr[d];
                        }
                        if let Some(dxv) = dx.as_mut() {
                            let wr = &w[j * dim..(j + 1) * dim];
                            for d in 0..dim {
                                dxv[i * dim + d] += dz * wr[d];
                            }
                        }
                    }
                }
                dx
            }
            InputCache::Images { planar, size, conv } => {
                // unpool
                let mut da2 = avgpool_backward(&dfeat, n, self.config.hidden, conv.s2);
                // relu of conv2
                for (d, &pre) in da2.iter_mut().zip(conv.a2_pre.iter()) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
                let w2 = self.layout.entry("conv2.w").unwrap().clone();
                let b2 = self.layout.entry("conv2.b").unwrap().clone();
                let mut da1 = vec![0.0; conv.a1.len()];
                conv2d_backward(
                    &conv.a1,
                    n,
                    CONV1_CHANNELS,
                    conv.s1,
                    &params[w2.offset..w2.offset + w2.len],
                    self.config.hidden,
                    &da2,
                    &mut grads,
                    w2.offset,
                    b2.offset,
                    Some(&mut da1),
                );
                for (d, &pre) in da1.iter_mut().zip(conv.a1_pre.iter()) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
                let w1 = self.layout.entry("conv1.w").unwrap().clone();
                let b1 = self.layout.entry("conv1.b").unwrap().clone();
                let mut dinput = if want_input_grad {
                    Some(vec![0.0; n * 3 * size * size])
                } else {
                    None
                };
                conv2d_backward(
                    planar,
                    n,
                    3,
                    *size,
                    &params[w1.offset..w1.offset + w1.len],
                    CONV1_CHANNELS,
                    &da1,
                    &mut grads,
                    w1.offset,
                    b1.offset,
                    dinput.as_deref_mut(),
                );
                dinput
            }
        };

        (grads, input_grad)
    }

    /// Loss value under the given mode.
    pub fn loss(
        &self,
        params: &[f64],
        norm: &NormState,
        batch: &Batch,
        loss: &TrainLoss,
        mode: RunMode<'_>,
    ) -> Result<f64> {
        let pass = self.forward(params, norm, &batch.inputs, mode)?;
        loss.compute(&pass.probs, &batch.targets)
    }

    /// Loss and its exact gradient with respect to all parameters.
    ///
    /// With `frozen_trunk`, trunk entries of the gradient are exactly zero.
    /// The same dropout mask must be supplied to reproduce the loss the
    /// gradient belongs to.
    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        norm: &NormState,
        batch: &Batch,
        loss: &TrainLoss,
        dropout: Option<&DropoutMask>,
        frozen_trunk: bool,
    ) -> Result<(f64, Vec<f64>)> {
        let (value, grads, _) =
            self.loss_gradient_stats(params, norm, batch, loss, dropout, frozen_trunk)?;
        Ok((value, grads))
    }

    /// [`Model::loss_and_gradient`] plus the training-mode batch-norm
    /// statistics, for running-state updates inside the training loop.
    #[allow(clippy::type_complexity)]
    pub(crate) fn loss_gradient_stats(
        &self,
        params: &[f64],
        norm: &NormState,
        batch: &Batch,
        loss: &TrainLoss,
        dropout: Option<&DropoutMask>,
        frozen_trunk: bool,
    ) -> Result<(f64, Vec<f64>, Option<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)>)> {
        let pass = self.forward(params, norm, &batch.inputs, RunMode::Train { dropout })?;
        let value = loss.compute(&pass.probs, &batch.targets)?;
        let dlogits = loss.grad_logits(&pass.probs, &batch.targets)?;
        let (mut grads, _) = self.backward(params, &pass.cache, &dlogits, false);
        if frozen_trunk {
            grads[..self.layout.trunk_len].fill(0.0);
        }
        Ok((value, grads, pass.batch_stats))
    }

    /// Gradient of one activated output with respect to the input image or
    /// feature vector, in inference mode.
    pub(crate) fn output_input_gradient(
        &self,
        params: &[f64],
        norm: &NormState,
        inputs: &Inputs,
        output_index: usize,
    ) -> Result<Vec<f64>> {
        let pass = self.forward(params, norm, inputs, RunMode::Eval)?;
        let out_w = self.out_width();
        if output_index >= out_w {
            return Err(Error::Argument(format!(
                "output index {output_index} out of range {out_w}"
            )));
        }
        let n = inputs.len();
        let mut dlogits = vec![0.0; n * out_w];
        if self.config.variant.uses_softmax() {
            // d p_k / d z_o = p_k (delta - p_o)
            for i in 0..n {
                let pk = pass.probs[i * out_w + output_index];
                for o in 0..out_w {
                    let po = pass.probs[i * out_w + o];
                    let delta = if o == output_index { 1.0 } else { 0.0 };
                    dlogits[i * out_w + o] = pk * (delta - po);
                }
            }
        } else {
            for i in 0..n {
                let p = pass.probs[i * out_w + output_index];
                dlogits[i * out_w + output_index] = p * (1.0 - p);
            }
        }
        let (_, input_grad) = self.backward(params, &pass.cache, &dlogits, true);
        input_grad.ok_or_else(|| Error::Argument("input gradient unavailable".into()))
    }
}

/// 3x3 stride-2 pad-1 convolution.
fn conv2d_forward(
    x: &[f64],
    n: usize,
    cin: usize,
    s: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
) -> Vec<f64> {
    let so = half_size(s);
    let mut out = vec![0.0; n * cout * so * so];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..so {
                for ox in 0..so {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            let iy = (oy * 2 + ky) as i64 - 1;
                            if iy < 0 || iy >= s as i64 {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * 2 + kx) as i64 - 1;
                                if ix < 0 || ix >= s as i64 {
                                    continue;
                                }
                                acc += w[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * x[((i * cin + ci) * s + iy as usize) * s + ix as usize];
                            }
                        }
                    }
                    out[((i * cout + co) * so + oy) * so + ox] = acc;
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv2d_forward`]: accumulates weight and bias gradients
/// into `grads` at the given offsets, and optionally the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &[f64],
    n: usize,
    cin: usize,
    s: usize,
    w: &[f64],
    cout: usize,
    dout: &[f64],
    grads: &mut [f64],
    w_offset: usize,
    b_offset: usize,
    mut dx: Option<&mut [f64]>,
) {
    let so = half_size(s);
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..so {
                for ox in 0..so {
                    let dz = dout[((i * cout + co) * so + oy) * so + ox];
                    if dz == 0.0 {
                        continue;
                    }
                    grads[b_offset + co] += dz;
                    for ci in 0..cin {
                        for ky in 0..3 {
                            let iy = (oy * 2 + ky) as i64 - 1;
                            if iy < 0 || iy >= s as i64 {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * 2 + kx) as i64 - 1;
                                if ix < 0 || ix >= s as i64 {
                                    continue;
                                }
                                let xi = ((i * cin + ci) * s + iy as usize) * s + ix as usize;
                                let wi = ((co * cin + ci) * 3 + ky) * 3 + kx;
                                grads[w_offset + wi] += dz * x[xi];
                                if let Some(dxv) = dx.as_deref_mut() {
                                    dxv[xi] += dz * w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 stride-2 pad-1 average pooling with a fixed divisor of 9.
fn avgpool_forward(x: &[f64], n: usize, c: usize, s: usize) -> Vec<f64> {
    let so = half_size(s);
    let mut out = vec![0.0; n * c * so * so];
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..so {
                for ox in 0..so {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as i64 - 1;
                        if iy < 0 || iy >= s as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as i64 - 1;
                            if ix < 0 || ix >= s as i64 {
                                continue;
                            }
                            acc += x[((i * c + ch) * s + iy as usize) * s + ix as usize];
                        }
                    }
                    out[((i * c + ch) * so + oy) * so + ox] = acc / 9.0;
                }
            }
        }
    }
    out
}

fn avgpool_backward(dout: &[f64], n: usize, c: usize, s: usize) -> Vec<f64> {
    let so = half_size(s);
    let mut dx = vec![0.0; n * c * s * s];
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..so {
                for ox in 0..so {
                    let dz = dout[((i * c + ch) * so + oy) * so + ox] / 9.0;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as i64 - 1;
                        if iy < 0 || iy >= s as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as i64 - 1;
                            if ix < 0 || ix >= s as i64 {
                                continue;
                            }
                            dx[((i * c + ch) * s + iy as usize) * s + ix as usize] += dz;
                        }
                    }
                }
            }
        }
    }
    dx
}
