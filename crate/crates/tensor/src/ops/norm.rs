use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;

/// Per-channel batch normalization using the statistics of the current batch
/// (biased variance over B, H and W), followed by the affine `gamma`/`beta`.
pub fn batchnorm2d<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    if xs.len() != 4 {
        return Err(TensorError::dim("batchnorm2d", format!("input must be [B,C,H,W], got {xs:?}")));
    }
    let (batch, channels, plane) = (xs[0], xs[1], xs[2] * xs[3]);
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(TensorError::dim(
            "batchnorm2d",
            format!(
                "gamma {:?} and beta {:?} must be [{channels}] to match channel axis (1)",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let count = batch * plane;
    if count == 0 {
        return Err(TensorError::dim("batchnorm2d", "B*H*W must be at least 1"));
    }
    let m = T::from_usize(count).expect("count fits in float");
    let x = input.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); channels];
    for c in 0..channels {
        let lanes = || (0..batch).map(move |b| (b * channels + c) * plane..(b * channels + c + 1) * plane);
        let sum = lanes().fold(T::zero(), |a, r| x[r].iter().fold(a, |a, &v| a + v));
        let mean = sum / m;
        let sq = lanes().fold(T::zero(), |a, r| x[r].iter().fold(a, |a, &v| a + (v - mean) * (v - mean)));
        let istd = T::one() / (sq / m + eps).sqrt();
        inv_std[c] = istd;
        for r in lanes() {
            for ((n, o), &v) in normalized[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x[r]) {
                *n = (v - mean) * istd;
                *o = *n * gd[c] + bd[c];
            }
        }
    }
    let value = NdArray::new(xs.to_vec(), out)?;
    let gamma_c = gamma.clone();
    Ok(Tensor::from_op(
        "batchnorm2d",
        value,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let gd = gamma_c.data();
            let mut dgamma = vec![T::zero(); channels];
            let mut dbeta = vec![T::zero(); channels];
            let mut dx = vec![T::zero(); g.len()];
            for c in 0..channels {
                let lanes = || (0..batch).map(move |b| (b * channels + c) * plane..(b * channels + c + 1) * plane);
                // sum(dy), sum(dy * xhat) over the channel
                let (mut s1, mut s2) = (T::zero(), T::zero());
                for r in lanes() {
                    for (&gi, &ni) in g[r.clone()].iter().zip(&normalized[r]) {
                        s1 = s1 + gi;
                        s2 = s2 + gi * ni;
                    }
                }
                dbeta[c] = s1;
                dgamma[c] = s2;
                let scale = gd[c] * inv_std[c] / m;
                for r in lanes() {
                    for ((d, &gi), &ni) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&normalized[r]) {
                        *d = scale * (m * gi - s1 - ni * s2);
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    ))
}
