use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn rows_of<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        &[b, k] if k >= 1 => Ok((b, k)),
        s => Err(TensorError::dim(op, format!("expected [B,K] with K >= 1, got {s:?}"))),
    }
}

fn check_labels(labels: &[usize], batch: usize, classes: usize, op: &'static str) -> Result<()> {
    if labels.len() != batch {
        return Err(TensorError::dim(op, format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::Label { label, classes });
    }
    Ok(())
}

/// Numerically stable row softmax of a `[B,K]` array.
pub fn softmax_rows<T: Element>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    out
}

/// Row-wise softmax over `[B,K]` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, classes) = rows_of("softmax", logits)?;
    if !logits.value().all_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let probs = softmax_rows(logits.data(), classes);
    let value = NdArray::new(vec![batch, classes], probs.clone())?;
    Ok(Tensor::from_op(
        "softmax",
        value,
        vec![logits.clone()],
        Box::new(move |g| {
            let mut dx = Vec::with_capacity(g.len());
            for (gr, pr) in g.chunks(classes).zip(probs.chunks(classes)) {
                let dot = gr.iter().zip(pr).fold(T::zero(), |a, (&g, &p)| a + g * p);
                dx.extend(gr.iter().zip(pr).map(|(&g, &p)| p * (g - dot)));
            }
            vec![Some(dx)]
        }),
    ))
}

/// Mean cross-entropy of integer labels under the softmax of `logits [B,K]`.
/// Softmax and log-likelihood are fused so the gradient is `(p - onehot) / B`.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (batch, classes) = rows_of("cross_entropy", logits)?;
    check_labels(labels, batch, classes, "cross_entropy")?;
    if batch == 0 {
        return Err(TensorError::Contract("cross_entropy over an empty batch".into()));
    }
    if !logits.value().all_finite() {
        return Err(TensorError::NonFinite { op: "cross_entropy" });
    }
    let x = logits.data();
    let mut total = T::zero();
    for (row, &label) in x.chunks(classes).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        total = total + (lse - row[label]);
    }
    let n = T::from_usize(batch).expect("batch fits in float");
    let loss = total / n;
    let probs = softmax_rows(x, classes);
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "cross_entropy",
        NdArray::scalar(loss),
        vec![logits.clone()],
        Box::new(move |g| {
            let scale = g[0] / n;
            let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (row, &label) in dx.chunks_mut(classes).zip(&labels) {
                row[label] = row[label] - scale;
            }
            vec![Some(dx)]
        }),
    ))
}

/// Mean negative log-likelihood when the input already holds probabilities.
pub fn nll_from_probabilities<T: Element>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (batch, classes) = rows_of("nll", probs)?;
    check_labels(labels, batch, classes, "nll")?;
    if batch == 0 {
        return Err(TensorError::Contract("nll over an empty batch".into()));
    }
    let p = probs.data();
    let n = T::from_usize(batch).expect("batch fits in float");
    let total = labels
        .iter()
        .enumerate()
        .fold(T::zero(), |a, (i, &l)| a - p[i * classes + l].ln());
    let loss = total / n;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "nll" });
    }
    let (probs_c, labels) = (probs.clone(), labels.to_vec());
    Ok(Tensor::from_op(
        "nll",
        NdArray::scalar(loss),
        vec![probs.clone()],
        Box::new(move |g| {
            let p = probs_c.data();
            let mut dx = vec![T::zero(); p.len()];
            for (i, &l) in labels.iter().enumerate() {
                let idx = i * classes + l;
                dx[idx] = -g[0] / (n * p[idx]);
            }
            vec![Some(dx)]
        }),
    ))
}

/// Index of the largest entry in each row; the lowest index wins ties.
pub fn argmax_rows<T: Element>(values: &[T], classes: usize) -> Vec<usize> {
    values
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
