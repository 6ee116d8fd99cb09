use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped;
/// ties resolve to the first element of the window in row-major order.
pub fn maxpool2x2<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = input.shape();
    if xs.len() != 4 {
        return Err(TensorError::dim("maxpool2x2", format!("input must be [B,C,H,W], got {xs:?}")));
    }
    let (h, w) = (xs[2], xs[3]);
    if h < 2 || w < 2 {
        return Err(TensorError::dim(
            "maxpool2x2",
            format!("spatial axes (2, 3) are {h}x{w}; both must be at least 2"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let planes = xs[0] * xs[1];
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let window = [top, top + 1, top + w, top + w + 1];
                let mut best = window[0];
                for &i in &window[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let value = NdArray::new(vec![xs[0], xs[1], oh, ow], out)?;
    let numel = input.numel();
    Ok(Tensor::from_op(
        "maxpool2x2",
        value,
        vec![input.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); numel];
            for (&src, &gv) in argmax.iter().zip(g) {
                dx[src] = dx[src] + gv;
            }
            vec![Some(dx)]
        }),
    ))
}
