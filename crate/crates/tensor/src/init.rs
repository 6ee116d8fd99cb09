use rand::Rng;

use crate::array::NdArray;
use crate::element::Element;

/// Samples `U(-b, b)` with `b = sqrt(1 / fan_in)`.
pub fn uniform_fan_in<T: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> NdArray<T> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    NdArray::new(shape.to_vec(), data).expect("numel matches shape")
}
