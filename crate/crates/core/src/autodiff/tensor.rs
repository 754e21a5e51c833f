use super::TensorError;

/// Dense n-dimensional array of f64 in row-major order, optionally carrying
/// a gradient of identical shape.
///
/// Invariants enforced at construction: the shape has no zero extents, the
/// data length equals the shape product, and every stored value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                actual: data.len(),
                shape,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFiniteInput { op: "tensor" });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Construction path for op outputs: shape arithmetic is already done,
    /// but the finite-value invariant still gets checked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
    ) -> Result<Self, TensorError> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self, TensorError> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::new(Vec::new(), vec![value])
    }

    /// Rank-1 tensor over the given values.
    pub fn from_vec(data: Vec<f64>) -> Result<Self, TensorError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the values, used by the optimizer when applying
    /// parameter updates. The finite invariant is re-checked by the next
    /// operation that consumes the tensor.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Option<f64> {
        if self.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Accumulate into the gradient slot, allocating zeros on first use.
    pub(crate) fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]).unwrap_err(),
            TensorError::ZeroExtent { .. }
        ));
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(Tensor::from_vec(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_has_one_element_and_empty_shape() {
        let t = Tensor::scalar(4.5).unwrap();
        assert!(t.is_scalar());
        assert_eq!(t.shape(), &[] as &[usize]);
        assert_eq!(t.item(), Some(4.5));
    }

    #[test]
    fn grad_accumulates_and_resets() {
        let mut t = Tensor::from_vec(vec![1.0, 2.0]).unwrap().with_grad();
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[1.0, -0.5]);
        assert_eq!(t.grad().unwrap(), &[1.5, 0.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }
}
