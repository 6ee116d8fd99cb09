use crate::element::Element;
use crate::error::{Result, TensorError};

/// Dense row-major array. Plain value type: cloning copies the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> NdArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::dim(
                "NdArray::new",
                format!("shape {shape:?} holds {numel} elements but buffer has {}", data.len()),
            ));
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        NdArray {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of the leading axis.
    pub fn row(&self, i: usize) -> &[T] {
        let width = self.row_len();
        &self.data[i * width..(i + 1) * width]
    }

    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Gathers rows of the leading axis into a new array.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let width = self.row_len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        NdArray { shape, data }
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(items: &[&NdArray<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(TensorError::Contract("stack of zero arrays".into()));
        };
        let mut data = Vec::with_capacity(items.len() * first.len());
        for item in items {
            if item.shape != first.shape {
                return Err(TensorError::dim(
                    "stack",
                    format!("{:?} vs {:?}", item.shape, first.shape),
                ));
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(NdArray { shape, data })
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> NdArray<U> {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> NdArray<U> {
        self.map(|v| U::from_f64_lossy(v.to_f64_lossy()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and contents (distinguishes -0.0 and NaN payloads).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_f64_lossy().to_bits() == b.to_f64_lossy().to_bits())
    }
}
