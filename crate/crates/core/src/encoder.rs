//! The four-block convolutional encoder and its classifier-augmented variant.
//!
//! Each block is `conv3x3 (pad 1) -> batchnorm -> relu -> maxpool 2x2`.
//! Parameters are stored in a [`ParamSet`] under `block{i}.*`; augmentation
//! adds `extra{j}.*` conv blocks and a `head.*` linear layer in the head group.

use protoadapt_tensor::{init, ops, BoundParams, Element, NdArray, ParamSet, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub num_blocks: usize,
    pub input_hw: (usize, usize),
}

impl EncoderConfig {
    pub fn new(in_channels: usize, input_hw: (usize, usize)) -> Self {
        EncoderConfig {
            in_channels,
            hidden_channels: 64,
            num_blocks: 4,
            input_hw,
        }
    }

    pub fn omniglot() -> Self {
        Self::new(1, (28, 28))
    }

    pub fn cifar() -> Self {
        Self::new(3, (32, 32))
    }

    pub fn miniimagenet() -> Self {
        Self::new(3, (84, 84))
    }

    pub fn with_hidden_channels(mut self, hidden: usize) -> Self {
        self.hidden_channels = hidden;
        self
    }

    pub fn with_num_blocks(mut self, blocks: usize) -> Self {
        self.num_blocks = blocks;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden_channels == 0 || self.num_blocks == 0 {
            return Err(Error::Config(format!(
                "channels and block count must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Spatial size of the final feature map.
    pub fn output_hw(&self) -> Result<(usize, usize)> {
        self.validate()?;
        pooled_hw(self.input_hw, self.num_blocks).ok_or_else(|| {
            Error::Config(format!(
                "input {}x{} is too small for {} pooling blocks",
                self.input_hw.0, self.input_hw.1, self.num_blocks
            ))
        })
    }

    pub fn embedding_dim(&self) -> Result<usize> {
        let (h, w) = self.output_hw()?;
        Ok(self.hidden_channels * h * w)
    }
}

/// Spatial size after `blocks` padded-conv + 2x2-pool blocks, if every pool is valid.
fn pooled_hw((mut h, mut w): (usize, usize), blocks: usize) -> Option<(usize, usize)> {
    for _ in 0..blocks {
        if h < 2 || w < 2 {
            return None;
        }
        h /= 2;
        w /= 2;
    }
    Some((h, w))
}

/// Extra conv blocks and linear head appended to the encoder for adaptation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationSpec {
    pub extra_conv_channels: Vec<usize>,
    pub head_classes: usize,
}

impl AugmentationSpec {
    pub fn linear_head(head_classes: usize) -> Self {
        AugmentationSpec {
            extra_conv_channels: Vec::new(),
            head_classes,
        }
    }

    /// Flattened feature size entering the head.
    pub fn head_input_dim(&self, config: &EncoderConfig) -> Result<usize> {
        let base_hw = config.output_hw()?;
        let Some(&last) = self.extra_conv_channels.last() else {
            return config.embedding_dim();
        };
        let (h, w) = pooled_hw(base_hw, self.extra_conv_channels.len()).ok_or_else(|| {
            Error::Config(format!(
                "feature map {}x{} cannot take {} extra pooling blocks",
                base_hw.0,
                base_hw.1,
                self.extra_conv_channels.len()
            ))
        })?;
        Ok(last * h * w)
    }

    /// Spatial size of the map entering the head.
    pub fn head_input_hw(&self, config: &EncoderConfig) -> Result<(usize, usize)> {
        let base = config.output_hw()?;
        pooled_hw(base, self.extra_conv_channels.len())
            .ok_or_else(|| Error::Config("extra blocks exceed the feature map".into()))
    }
}

fn block_names(prefix: &str) -> [String; 4] {
    [
        format!("{prefix}.conv.weight"),
        format!("{prefix}.conv.bias"),
        format!("{prefix}.bn.gamma"),
        format!("{prefix}.bn.beta"),
    ]
}

fn init_block<R: rand::Rng>(cin: usize, cout: usize, rng: &mut R) -> [NdArray<f32>; 4] {
    [
        init::uniform_fan_in(&[cout, cin, 3, 3], cin * 9, rng),
        NdArray::zeros(&[cout]),
        NdArray::full(&[cout], 1.0),
        NdArray::zeros(&[cout]),
    ]
}

/// Freshly initialized encoder parameters; deterministic in `seed`.
pub fn build_encoder(config: &EncoderConfig, seed: u64) -> Result<ParamSet> {
    config.output_hw()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for i in 0..config.num_blocks {
        let cin = if i == 0 { config.in_channels } else { config.hidden_channels };
        let arrays = init_block(cin, config.hidden_channels, &mut rng);
        for (name, value) in block_names(&format!("block{i}")).into_iter().zip(arrays) {
            params.insert(name, value);
        }
    }
    Ok(params)
}

/// Checks that `params` holds exactly the base blocks `config` describes
/// (plus, optionally, retained extra blocks).
pub fn validate_params(config: &EncoderConfig, params: &ParamSet) -> Result<()> {
    let expected = build_shapes(config);
    for (name, shape) in &expected {
        match params.get(name) {
            Some(v) if v.shape() == shape.as_slice() => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, encoder config expects {shape:?}",
                    v.shape()
                )))
            }
            None => return Err(Error::Config(format!("parameter `{name}` is missing"))),
        }
    }
    Ok(())
}

/// Names and shapes of the base encoder parameters in declaration order.
pub fn build_shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for i in 0..config.num_blocks {
        let cin = if i == 0 { config.in_channels } else { config.hidden_channels };
        let c = config.hidden_channels;
        let shapes = [vec![c, cin, 3, 3], vec![c], vec![c], vec![c]];
        out.extend(block_names(&format!("block{i}")).into_iter().zip(shapes));
    }
    out
}

fn conv_block<T: Element>(bound: &BoundParams<T>, prefix: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    let [w, b, g, beta] = block_names(prefix);
    let y = ops::conv2d(x, bound.get(&w)?, bound.get(&b)?, 1, 1)?;
    let eps = T::from_f64_lossy(ops::BATCHNORM_EPS);
    let y = ops::batchnorm2d(&y, bound.get(&g)?, bound.get(&beta)?, eps)?;
    Ok(ops::maxpool2x2(&y.relu())?)
}

fn check_images(config: &EncoderConfig, shape: &[usize]) -> Result<()> {
    let expected = [config.in_channels, config.input_hw.0, config.input_hw.1];
    if shape.len() != 4 || shape[1..] != expected {
        return Err(TensorError::Dimension {
            op: "embed",
            detail: format!("images {shape:?} do not match encoder input [B,{},{},{}]", expected[0], expected[1], expected[2]),
        }
        .into());
    }
    Ok(())
}

fn count_extra_blocks<T: Element>(bound: &BoundParams<T>) -> usize {
    (0..).take_while(|j| bound.contains(&format!("extra{j}.conv.weight"))).count()
}

/// Differentiable feature map `[B, C, h, w]` after the base blocks and any
/// `extra{j}` blocks present in `bound`.
pub fn features<T: Element>(config: &EncoderConfig, bound: &BoundParams<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    check_images(config, images.shape())?;
    let mut x = images.clone();
    for i in 0..config.num_blocks {
        x = conv_block(bound, &format!("block{i}"), &x)?;
    }
    for j in 0..count_extra_blocks(bound) {
        x = conv_block(bound, &format!("extra{j}"), &x)?;
    }
    Ok(x)
}

/// Differentiable flattened embedding `[B, D]`.
pub fn embed_tensor<T: Element>(config: &EncoderConfig, bound: &BoundParams<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(features(config, bound, images)?.flatten()?)
}

/// Logits of the augmented encoder-classifier.
pub fn classify_tensor<T: Element>(config: &EncoderConfig, bound: &BoundParams<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    let flat = embed_tensor(config, bound, images)?;
    Ok(ops::linear(&flat, bound.get("head.weight")?, bound.get("head.bias")?)?)
}

/// Embeds a batch without recording gradients. An empty batch yields `[0, D]`.
pub fn embed(config: &EncoderConfig, params: &ParamSet, images: &NdArray<f32>) -> Result<NdArray<f32>> {
    check_images(config, images.shape())?;
    validate_params(config, params)?;
    let bound = params.bind(false);
    if images.shape()[0] == 0 {
        let dim = embedding_dim_of(config, params)?;
        return Ok(NdArray::zeros(&[0, dim]));
    }
    Ok(embed_tensor(config, &bound, &Tensor::constant(images.clone()))?.value().clone())
}

/// Embedding width for `params`, accounting for retained extra blocks.
pub fn embedding_dim_of(config: &EncoderConfig, params: &ParamSet) -> Result<usize> {
    let extra: Vec<usize> = (0..)
        .map_while(|j| params.get(&format!("extra{j}.conv.weight")).map(|w| w.shape()[0]))
        .collect();
    if extra.is_empty() {
        return config.embedding_dim();
    }
    let spec = AugmentationSpec {
        extra_conv_channels: extra,
        head_classes: 1,
    };
    spec.head_input_dim(config)
}

/// Copies the encoder and appends freshly initialized extra blocks and a
/// linear head, all seeded from `seed`.
pub fn augment(config: &EncoderConfig, params: &ParamSet, spec: &AugmentationSpec, seed: u64) -> Result<ParamSet> {
    if params.is_augmented() {
        return Err(Error::Contract("encoder is already augmented".into()));
    }
    validate_params(config, params)?;
    if spec.head_classes == 0 || spec.extra_conv_channels.contains(&0) {
        return Err(Error::Config(format!("augmentation spec has a zero width: {spec:?}")));
    }
    let head_in = spec.head_input_dim(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.base_only();
    let mut cin = config.hidden_channels;
    for (j, &cout) in spec.extra_conv_channels.iter().enumerate() {
        let arrays = init_block(cin, cout, &mut rng);
        for (name, value) in block_names(&format!("extra{j}")).into_iter().zip(arrays) {
            out.insert_head(name, value);
        }
        cin = cout;
    }
    out.insert_head("head.weight", init::uniform_fan_in(&[spec.head_classes, head_in], head_in, &mut rng));
    out.insert_head("head.bias", NdArray::zeros(&[spec.head_classes]));
    Ok(out)
}

/// Removes the classifier head. Extra conv blocks go with it unless
/// `keep_extra_blocks`, in which case they join the base group and take part
/// in subsequent embedding.
pub fn detach_head(params: &ParamSet, keep_extra_blocks: bool) -> Result<ParamSet> {
    let mut out = params.detach_head().map_err(|e| Error::Contract(e.to_string()))?;
    if keep_extra_blocks {
        for (name, p, group) in params.iter() {
            if group == protoadapt_tensor::Group::Head && name.starts_with("extra") {
                out.insert(name, p.value.clone());
            }
        }
    }
    Ok(out)
}
