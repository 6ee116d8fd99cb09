//! Central finite-difference checks of analytic gradients, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::NdArray;
use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOLERANCE: f64 = 1e-3;
/// Denominator floor so that gradients that are zero on both sides compare as equal.
pub const REL_FLOOR: f64 = 1e-4;

pub type LossFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// A scalar function of several arrays whose gradient should be checked.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<NdArray<f64>>,
    pub loss: LossFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<NdArray<f64>>,
        loss: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            inputs,
            loss: Box::new(loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate(case: &GradCase, inputs: &[NdArray<f64>]) -> Result<f64> {
    let leaves: Vec<_> = inputs.iter().cloned().map(Tensor::constant).collect();
    Ok((case.loss)(&leaves)?.item())
}

/// Compares backward-pass gradients of every input element with central
/// differences of step [`FD_STEP`].
pub fn check_case(case: &GradCase) -> Result<GradCheckReport> {
    let leaves: Vec<_> = case.inputs.iter().cloned().map(Tensor::parameter).collect();
    let loss = (case.loss)(&leaves)?;
    loss.backward()?;
    let mut report = GradCheckReport {
        name: case.name.clone(),
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = case.inputs.clone();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf
            .grad()
            .map(NdArray::into_data)
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = evaluate(case, &probe)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = evaluate(case, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

pub fn random_array<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> NdArray<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    NdArray::new(shape.to_vec(), data).expect("shape matches")
}

/// Values bounded away from zero, so ReLU kinks sit far outside the probe step.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> NdArray<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { mag } else { -mag }
        })
        .collect();
    NdArray::new(shape.to_vec(), data).expect("shape matches")
}

/// Distinct values spaced well beyond the probe step, so pooling windows never tie.
fn spaced_permutation<R: Rng>(rng: &mut R, shape: &[usize]) -> NdArray<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    data.shuffle(rng);
    NdArray::new(shape.to_vec(), data).expect("shape matches")
}

/// Weighted sum `sum(out * w)` with fixed pseudo-random weights, so every
/// output element contributes a distinct gradient.
pub fn weighted_sum(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_array(&mut rng, out.shape(), 1.0);
    out.mul(&Tensor::constant(w)).map(|t| t.sum())
}

/// One case per differentiable op on small randomized shapes.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let labels = vec![2usize, 0, 1];

    cases.push(GradCase::new(
        "conv2d",
        vec![
            random_array(&mut rng, &[2, 3, 5, 4], 1.0),
            random_array(&mut rng, &[4, 3, 3, 3], 0.5),
            random_array(&mut rng, &[4], 0.5),
        ],
        |t| weighted_sum(&ops::conv2d(&t[0], &t[1], &t[2], 1, 1)?, 11),
    ));
    cases.push(GradCase::new(
        "conv2d_stride2_nopad",
        vec![
            random_array(&mut rng, &[1, 2, 7, 6], 1.0),
            random_array(&mut rng, &[3, 2, 3, 3], 0.5),
            random_array(&mut rng, &[3], 0.5),
        ],
        |t| weighted_sum(&ops::conv2d(&t[0], &t[1], &t[2], 2, 0)?, 12),
    ));
    cases.push(GradCase::new(
        "batchnorm2d",
        vec![
            random_array(&mut rng, &[3, 2, 2, 3], 1.0),
            random_array(&mut rng, &[2], 1.0),
            random_array(&mut rng, &[2], 1.0),
        ],
        |t| weighted_sum(&ops::batchnorm2d(&t[0], &t[1], &t[2], ops::BATCHNORM_EPS)?, 13),
    ));
    cases.push(GradCase::new("relu", vec![away_from_zero(&mut rng, &[2, 7])], |t| {
        weighted_sum(&t[0].relu(), 14)
    }));
    cases.push(GradCase::new("maxpool2x2", vec![spaced_permutation(&mut rng, &[2, 2, 5, 4])], |t| {
        weighted_sum(&ops::maxpool2x2(&t[0])?, 15)
    }));
    cases.push(GradCase::new(
        "linear",
        vec![
            random_array(&mut rng, &[3, 5], 1.0),
            random_array(&mut rng, &[4, 5], 1.0),
            random_array(&mut rng, &[4], 1.0),
        ],
        |t| weighted_sum(&ops::linear(&t[0], &t[1], &t[2])?, 16),
    ));
    cases.push(GradCase::new("flatten", vec![random_array(&mut rng, &[2, 3, 2, 2], 1.0)], |t| {
        weighted_sum(&t[0].flatten()?, 17)
    }));
    cases.push(GradCase::new("softmax", vec![random_array(&mut rng, &[3, 4], 2.0)], |t| {
        weighted_sum(&ops::softmax(&t[0])?, 18)
    }));
    let l = labels.clone();
    cases.push(GradCase::new("cross_entropy", vec![random_array(&mut rng, &[3, 4], 2.0)], move |t| {
        ops::cross_entropy(&t[0], &l)
    }));
    let l = labels.clone();
    cases.push(GradCase::new("nll", vec![random_array(&mut rng, &[3, 4], 2.0)], move |t| {
        ops::nll_from_probabilities(&ops::softmax(&t[0])?, &l)
    }));
    let l = vec![1usize, 0, 1, 2, 0, 2];
    cases.push(GradCase::new("class_mean", vec![random_array(&mut rng, &[6, 3], 1.0)], move |t| {
        weighted_sum(&ops::class_mean(&t[0], &l, 3)?, 19)
    }));
    cases.push(GradCase::new(
        "neg_sq_dist",
        vec![random_array(&mut rng, &[4, 3], 1.0), random_array(&mut rng, &[3, 3], 1.0)],
        |t| weighted_sum(&ops::neg_sq_dist(&t[0], &t[1])?, 20),
    ));
    cases.push(GradCase::new(
        "elementwise",
        vec![random_array(&mut rng, &[5], 1.0), random_array(&mut rng, &[5], 1.0)],
        |t| t[0].mul(&t[1])?.sub(&t[0].scale(0.5))?.add(&t[1])?.mean(),
    ));
    cases
}
