use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `input [B,D] x weight[K,D]^T + bias [K]`.
pub fn linear<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 {
        return Err(TensorError::dim(
            "linear",
            format!("expected input [B,D] and weight [K,D], got {xs:?} and {ws:?}"),
        ));
    }
    let (batch, dim, classes) = (xs[0], xs[1], ws[0]);
    if ws[1] != dim {
        return Err(TensorError::dim(
            "linear",
            format!("input feature axis (1) is {dim} but weight axis (1) is {}", ws[1]),
        ));
    }
    if bias.shape() != [classes] {
        return Err(TensorError::dim(
            "linear",
            format!("bias {:?} must be [{classes}]", bias.shape()),
        ));
    }
    let mut out = vec![T::zero(); batch * classes];
    T::gemm(false, true, batch, dim, classes, T::one(), input.data(), weight.data(), T::zero(), &mut out);
    for row in out.chunks_mut(classes.max(1)) {
        row.iter_mut().zip(bias.data()).for_each(|(v, &b)| *v = *v + b);
    }
    let value = NdArray::new(vec![batch, classes], out)?;
    let (x, w) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        "linear",
        value,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); batch * dim];
            T::gemm(false, false, batch, classes, dim, T::one(), g, w.data(), T::zero(), &mut dx);
            let mut dw = vec![T::zero(); classes * dim];
            T::gemm(true, false, classes, batch, dim, T::one(), g, x.data(), T::zero(), &mut dw);
            let mut db = vec![T::zero(); classes];
            for row in g.chunks(classes.max(1)) {
                db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
            }
            vec![Some(dx), Some(dw), Some(db)]
        }),
    ))
}
