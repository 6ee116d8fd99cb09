use crate::array::NdArray;
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(
            op,
            format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        let value = NdArray::new(self.shape().to_vec(), data)?;
        Ok(Tensor::from_op(
            "add",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        let value = NdArray::new(self.shape().to_vec(), data)?;
        Ok(Tensor::from_op(
            "sub",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let value = NdArray::new(self.shape().to_vec(), data)?;
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "mul",
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect();
                let gb = g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        let value = self.value().map(|v| v * factor);
        Tensor::from_op(
            "scale",
            value,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * factor).collect())]),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let n = self.numel();
        Tensor::from_op(
            "sum",
            NdArray::scalar(total),
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        if self.numel() == 0 {
            return Err(TensorError::Contract("mean of an empty tensor".into()));
        }
        let n = T::from_usize(self.numel()).expect("count fits in float");
        Ok(self.sum().scale(T::one() / n))
    }

    pub fn relu(&self) -> Tensor<T> {
        let value = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        let input = self.clone();
        Tensor::from_op(
            "relu",
            value,
            vec![self.clone()],
            Box::new(move |g| {
                let gi = g
                    .iter()
                    .zip(input.data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(gi)]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let value = self.value().clone().reshape(shape.to_vec())?;
        Ok(Tensor::from_op(
            "reshape",
            value,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Collapses every axis after the first: `[B, ...] -> [B, D]`.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(TensorError::dim("flatten", "rank-0 input"));
        }
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[shape[0], rest])
    }
}
