//! Finite-difference cases for the full encoder pipelines: encoder + linear
//! head + cross-entropy, and encoder + prototypes + query NLL.
//!
//! Inputs are drawn so that no ReLU input and no max-pool runner-up sits
//! within [`KINK_MARGIN`] of a decision boundary; otherwise a probe step could
//! cross a kink and the central difference would be meaningless.

use protoadapt_tensor::gradcheck::{check_case, GradCase, GradCheckReport};
use protoadapt_tensor::{ops, BoundParams, NdArray, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{self, AugmentationSpec, EncoderConfig};
use crate::error::{Error, Result};
use crate::protonet;
use crate::seed::derive_seed;

/// Five probe steps. With O(1) conv weights a probe moves a normalized
/// activation by about one step.
pub const KINK_MARGIN: f64 = 0.005;
const GRADCHECK_STREAM: u64 = 0x6772_6164;
const MAX_ATTEMPTS: u64 = 20_000;

/// Two blocks of width 4 on 4x4 inputs: a 4 -> 2 -> 1 feature map, D = 4.
/// Kept this small so kink-free draws are common.
pub fn composite_config() -> EncoderConfig {
    EncoderConfig::new(1, (4, 4)).with_hidden_channels(4).with_num_blocks(2)
}

/// Smallest distance of any ReLU input from 0, or of any positive pooled
/// maximum from its window's runner-up, over all blocks.
fn kink_distance(config: &EncoderConfig, bound: &BoundParams<f64>, images: &Tensor<f64>) -> Result<f64> {
    let mut x = images.clone();
    let mut closest = f64::INFINITY;
    let eps = ops::BATCHNORM_EPS;
    let mut prefixes: Vec<String> = (0..config.num_blocks).map(|i| format!("block{i}")).collect();
    prefixes.extend((0..).map(|j| format!("extra{j}")).take_while(|p| bound.contains(&format!("{p}.conv.weight"))));
    for p in prefixes {
        let y = ops::conv2d(&x, bound.get(&format!("{p}.conv.weight"))?, bound.get(&format!("{p}.conv.bias"))?, 1, 1)?;
        let y = ops::batchnorm2d(&y, bound.get(&format!("{p}.bn.gamma"))?, bound.get(&format!("{p}.bn.beta"))?, eps)?;
        closest = y.data().iter().fold(closest, |m, v| m.min(v.abs()));
        let r = y.relu();
        let s = r.shape().to_vec();
        let (h, w) = (s[2], s[3]);
        for plane in r.data().chunks(h * w) {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let mut win = [
                        plane[2 * oy * w + 2 * ox],
                        plane[2 * oy * w + 2 * ox + 1],
                        plane[(2 * oy + 1) * w + 2 * ox],
                        plane[(2 * oy + 1) * w + 2 * ox + 1],
                    ];
                    win.sort_by(|a, b| b.total_cmp(a));
                    if win[0] > 0.0 {
                        closest = closest.min(win[0] - win[1]);
                    }
                }
            }
        }
        x = ops::maxpool2x2(&r)?;
    }
    Ok(closest)
}

/// Batchnorm makes the loss invariant to the scale of the preceding conv
/// weights, and its k-th derivative scales as `|w|^-k`. Fan-in-scale weights
/// leave enough curvature for O(h^2) truncation to exceed the tolerance, so
/// conv weights are drawn at unit scale instead.
fn randomized(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for (name, p) in params.iter_mut() {
        if name.ends_with(".conv.weight") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        } else if name.ends_with(".bn.gamma") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if name.ends_with(".bn.beta") || name.ends_with(".conv.bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
}

fn images(rng: &mut ChaCha8Rng, n: usize, config: &EncoderConfig) -> NdArray<f64> {
    let shape = [n, config.in_channels, config.input_hw.0, config.input_hw.1];
    let len = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..len).map(|_| rng.random::<f64>()).collect()).expect("shape matches")
}

fn bind(names: &[String], tensors: &[Tensor<f64>]) -> BoundParams<f64> {
    BoundParams::from_tensors(names.iter().cloned().zip(tensors.iter().cloned()))
}

/// Draws parameters and batches until every batch keeps [`KINK_MARGIN`].
fn draw(
    config: &EncoderConfig,
    seed: u64,
    head: Option<&AugmentationSpec>,
    batches: &[usize],
) -> Result<(ParamSet<f64>, Vec<NdArray<f64>>)> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = derive_seed(seed, GRADCHECK_STREAM, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let base = encoder::build_encoder(config, s)?;
        let p32 = match head {
            Some(spec) => encoder::augment(config, &base, spec, s ^ 1)?,
            None => base,
        };
        let mut params = p32.cast::<f64>();
        randomized(&mut params, &mut rng);
        let xs: Vec<_> = batches.iter().map(|&n| images(&mut rng, n, config)).collect();
        let bound = params.bind(false);
        let mut ok = true;
        for x in &xs {
            ok &= kink_distance(config, &bound, &Tensor::constant(x.clone()))? > KINK_MARGIN;
        }
        if ok {
            return Ok((params, xs));
        }
    }
    Err(Error::Contract(format!("no kink-free draw in {MAX_ATTEMPTS} attempts")))
}

fn head_case(config: EncoderConfig, seed: u64) -> Result<GradCase> {
    let way = 3;
    let spec = AugmentationSpec::linear_head(way);
    let (params, xs) = draw(&config, seed, Some(&spec), &[2 * way])?;
    let labels: Vec<usize> = (0..2 * way).map(|i| i % way).collect();
    let names: Vec<String> = params.names().into_iter().map(String::from).collect();
    let inputs = names.iter().map(|n| params.get(n).expect("named").clone()).collect();
    let support = Tensor::constant(xs[0].clone());
    Ok(GradCase::new("encoder+head+cross_entropy", inputs, move |t| {
        let bound = bind(&names, t);
        let logits = encoder::classify_tensor(&config, &bound, &support).map_err(to_tensor_error)?;
        ops::cross_entropy(&logits, &labels)
    }))
}

fn prototype_case(config: EncoderConfig, seed: u64, fused: bool) -> Result<GradCase> {
    let way = 3;
    let (params, xs) = draw(&config, seed, None, &[2 * way, 2 * way])?;
    let support_labels: Vec<usize> = (0..2 * way).map(|i| i % way).collect();
    let query_labels: Vec<usize> = (0..2 * way).map(|i| (i * 2 + 1) % way).collect();
    let names: Vec<String> = params.names().into_iter().map(String::from).collect();
    let inputs = names.iter().map(|n| params.get(n).expect("named").clone()).collect();
    let (support, query) = (Tensor::constant(xs[0].clone()), Tensor::constant(xs[1].clone()));
    let name = if fused {
        "encoder+prototypes+nll"
    } else {
        "encoder+prototypes+softmax+nll"
    };
    Ok(GradCase::new(name, inputs, move |t| {
        let bound = bind(&names, t);
        let run = || -> Result<Tensor<f64>> {
            let s = encoder::embed_tensor(&config, &bound, &support)?;
            let q = encoder::embed_tensor(&config, &bound, &query)?;
            let protos = protonet::compute_prototypes(&s, &support_labels, way)?;
            if fused {
                Ok(protonet::episode_loss(&q, &query_labels, &protos)?.0)
            } else {
                let probs = ops::softmax(&protonet::distance_logits(&q, &protos)?)?;
                Ok(ops::nll_from_probabilities(&probs, &query_labels)?)
            }
        };
        run().map_err(to_tensor_error)
    }))
}

fn to_tensor_error(e: Error) -> protoadapt_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => protoadapt_tensor::TensorError::Contract(other.to_string()),
    }
}

/// The composite cases on [`composite_config`].
pub fn composite_cases(seed: u64) -> Result<Vec<GradCase>> {
    let config = composite_config();
    Ok(vec![
        head_case(config, seed)?,
        prototype_case(config, seed, true)?,
        prototype_case(config, seed, false)?,
    ])
}

/// Every op case followed by the composite cases.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut cases = protoadapt_tensor::gradcheck::op_cases(seed);
    cases.extend(composite_cases(seed)?);
    cases.iter().map(|c| Ok(check_case(c)?)).collect()
}
