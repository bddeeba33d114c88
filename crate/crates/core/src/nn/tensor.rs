use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Real;
use crate::error::{Error, Result};

/// Row-major dense tensor. Activations are NHWC, convolution kernels are
/// `k×k×Cin×Cout`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor::full(dims, T::ZERO)
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        Tensor { dims: dims.to_vec(), values: vec![v; dims.iter().product()] }
    }

    pub fn from_vec(dims: &[usize], values: Vec<T>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if dims.contains(&0) || values.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?}",
                values.len()
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), values })
    }

    pub fn scalar(v: T) -> Self {
        Tensor { dims: vec![1], values: vec![v] }
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// `(n, h, w, c)` of a rank-4 tensor.
    pub fn nhwc(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.dims.as_slice() {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::ShapeMismatch(format!("expected NHWC, got {:?}", self.dims))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { dims: self.dims.clone(), values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.values.len() {
            return Err(Error::ShapeMismatch(format!("cannot reshape {:?} to {dims:?}", self.dims)));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sample `i` of a batch, keeping a leading unit dimension.
    pub fn sample(&self, i: usize) -> Tensor<T> {
        let per = self.values.len() / self.dims[0];
        let mut dims = self.dims.clone();
        dims[0] = 1;
        Tensor { dims, values: self.values[i * per..(i + 1) * per].to_vec() }
    }

    /// Stack equally shaped tensors along a new leading batch axis
    /// (replacing a leading unit axis when present).
    pub fn stack(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::ShapeMismatch("empty stack".into()))?;
        let inner: &[usize] = if first.dims[0] == 1 && first.dims.len() > 1 { &first.dims[1..] } else { &first.dims };
        let mut values = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.dims != first.dims {
                return Err(Error::ShapeMismatch(format!("stack {:?} with {:?}", first.dims, p.dims)));
            }
            values.extend_from_slice(&p.values);
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(inner);
        Tensor::from_vec(&dims, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn stack_and_sample_are_inverse() {
        let a = Tensor::<f64>::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = a.map(|v| -v);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2, 1]);
        assert_eq!(s.sample(1), b);
    }
}
