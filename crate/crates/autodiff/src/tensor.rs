use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;

/// Dense row-major N-dimensional array.
///
/// Every extent is positive and `shape.iter().product() == data.len()`.
/// Constructors reject NaN and infinities. The `grad` slot is only written
/// by [`Tape::backward`](crate::Tape::backward) and always matches `shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(AutodiffError::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(AutodiffError::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| AutodiffError::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

pub(crate) fn first_non_finite<T: Scalar>(data: &[T]) -> Option<usize> {
    data.iter().position(|x| !x.is_finite())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(AutodiffError::InvalidShape {
                shape,
                reason: format!("expects {n} elements, got {}", data.len()),
            });
        }
        if let Some(index) = first_non_finite(&data) {
            return Err(AutodiffError::NonFinite { op: "Tensor::new", index });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    /// Skips the finiteness scan; for kernel outputs that the tape checks itself.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, requires_grad: false, grad: None }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    /// Marks the tensor as a gradient-tracked leaf.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for owners of a tensor (optimizers, initializers).
    /// Tensors held by a tape are never handed out mutably.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub(crate) fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<T>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != self.numel() {
            return Err(AutodiffError::InvalidShape {
                shape,
                reason: format!("cannot reshape {} elements", self.numel()),
            });
        }
        Ok(Self::from_parts(shape, self.data.clone()))
    }

    /// Converts the element type, dropping any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        first_non_finite(&self.data).is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_must_match_len() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f32>::zeros(vec![2, 0]).is_err());
        assert!(Tensor::<f32>::zeros(Vec::new()).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let err = Tensor::<f64>::new(vec![3], vec![1.0, f64::NAN, 0.0]).unwrap_err();
        assert_eq!(err, AutodiffError::NonFinite { op: "Tensor::new", index: 1 });
        assert!(Tensor::<f32>::new(vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn cast_round_trip_keeps_values() {
        let t = Tensor::<f32>::new(vec![2], vec![0.25, -3.5]).unwrap();
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
    }
}
