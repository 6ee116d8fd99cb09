//! Class centroids and squared-distance logits.

use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Per-class mean of the rows of `embeddings [M,D]`, giving `[K,D]`.
pub fn class_mean<T: Element>(embeddings: &Tensor<T>, labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let (rows, dim) = match embeddings.shape() {
        &[m, d] => (m, d),
        s => return Err(TensorError::dim("class_mean", format!("expected [M,D], got {s:?}"))),
    };
    if labels.len() != rows {
        return Err(TensorError::dim("class_mean", format!("{} labels for {rows} rows", labels.len())));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(TensorError::Label { label: l, classes });
        }
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(TensorError::Contract(format!("class {empty} has no embeddings")));
    }
    let x = embeddings.data();
    let mut out = vec![T::zero(); classes * dim];
    for (row, &l) in x.chunks(dim.max(1)).zip(labels) {
        out[l * dim..(l + 1) * dim].iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
    }
    let inv: Vec<T> = counts.iter().map(|&c| T::one() / T::from_usize(c).expect("count")).collect();
    for (k, chunk) in out.chunks_mut(dim.max(1)).enumerate().take(classes) {
        chunk.iter_mut().for_each(|v| *v = *v * inv[k]);
    }
    let value = NdArray::new(vec![classes, dim], out)?;
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "class_mean",
        value,
        vec![embeddings.clone()],
        Box::new(move |g| {
            let mut dx = Vec::with_capacity(rows * dim);
            for &l in &labels {
                dx.extend(g[l * dim..(l + 1) * dim].iter().map(|&v| v * inv[l]));
            }
            vec![Some(dx)]
        }),
    ))
}

/// Negative squared Euclidean distance between every query row and every
/// prototype row: `out[q,k] = -||x_q - r_k||^2`.
pub fn neg_sq_dist<T: Element>(queries: &Tensor<T>, prototypes: &Tensor<T>) -> Result<Tensor<T>> {
    let (nq, dq, nk, dk) = match (queries.shape(), prototypes.shape()) {
        (&[nq, dq], &[nk, dk]) => (nq, dq, nk, dk),
        (a, b) => {
            return Err(TensorError::dim("neg_sq_dist", format!("expected [Q,D] and [K,D], got {a:?} and {b:?}")))
        }
    };
    if dq != dk {
        return Err(TensorError::dim(
            "neg_sq_dist",
            format!("query feature axis (1) is {dq} but prototype axis (1) is {dk}"),
        ));
    }
    let dim = dq;
    let (x, r) = (queries.data(), prototypes.data());
    let mut out = Vec::with_capacity(nq * nk);
    for q in 0..nq {
        let xq = &x[q * dim..(q + 1) * dim];
        for k in 0..nk {
            let rk = &r[k * dim..(k + 1) * dim];
            let d = xq.iter().zip(rk).fold(T::zero(), |a, (&u, &v)| a + (u - v) * (u - v));
            out.push(-d);
        }
    }
    let value = NdArray::new(vec![nq, nk], out)?;
    let (qc, pc) = (queries.clone(), prototypes.clone());
    Ok(Tensor::from_op(
        "neg_sq_dist",
        value,
        vec![queries.clone(), prototypes.clone()],
        Box::new(move |g| {
            let (x, r) = (qc.data(), pc.data());
            let two = T::one() + T::one();
            let mut dx = vec![T::zero(); nq * dim];
            let mut dr = vec![T::zero(); nk * dim];
            for q in 0..nq {
                for k in 0..nk {
                    let w = g[q * nk + k] * two;
                    if w == T::zero() {
                        continue;
                    }
                    for j in 0..dim {
                        let diff = x[q * dim + j] - r[k * dim + j];
                        dx[q * dim + j] = dx[q * dim + j] - w * diff;
                        dr[k * dim + j] = dr[k * dim + j] + w * diff;
                    }
                }
            }
            vec![Some(dx), Some(dr)]
        }),
    ))
}
