use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};

impl<T: Scalar> Tape<T> {
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let v = self.value(x);
        let out = v.data().iter().map(|&a| a * factor).collect();
        self.push("scale", v.shape().to_vec(), out, Op::Scale { x, factor }, tracked)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let tracked = self.checked(&[a, b])?;
        self.same_shape("add", a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, Op::Add { a, b }, tracked)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let tracked = self.checked(&[a, b])?;
        self.same_shape("mul", a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul { a, b }, tracked)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum { x }, tracked)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tracked = self.checked(&[x])?;
        let data = self.value(x).reshape(shape.to_vec())?.into_data();
        self.push("reshape", shape.to_vec(), data, Op::Reshape { x }, tracked)
    }
}
