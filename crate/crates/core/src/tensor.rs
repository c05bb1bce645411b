//! Dense row-major n-dimensional arrays.
//!
//! A [`Tensor`] is a plain value: a shape and a flat buffer. Every operation
//! returns a new tensor and leaves its inputs untouched. Reductions always
//! accumulate left to right along the reduced axis so results are
//! bit-reproducible across runs and platforms.

use std::fmt;

use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Mismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension error in {op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Max,
    Mean,
}

#[inline]
pub fn sigmoid(x: Real) -> Real {
    // Split on sign so exp never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: Real) -> Real {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(TensorError::Shape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(TensorError::Shape {
            shape: shape.to_vec(),
            reason: "all dimensions must be >= 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(TensorError::Shape {
                shape,
                reason: format!("holds {} elements but data has {}", n, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: Real) -> Self {
        let n = check_shape(shape).expect("tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<Real>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> Real {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn fill(&mut self, value: Real) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let n = check_shape(new_shape)?;
        if n != self.data.len() {
            return Err(TensorError::Mismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: new_shape.to_vec(),
            });
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn flatten(&self) -> Self {
        Self {
            shape: vec![self.data.len()],
            data: self.data.clone(),
        }
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Self> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(TensorError::Mismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (r, k, c) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b = &rhs.data[p * c..(p + 1) * c];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Self::new(vec![r, c], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(TensorError::Shape {
                shape: self.shape.clone(),
                reason: "transpose needs rank 2".into(),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn map(&self, op: Unary) -> Self {
        let f: fn(Real) -> Real = match op {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => Real::tanh,
            Unary::Relu => relu,
        };
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, op: Binary, rhs: &Tensor) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(TensorError::Mismatch {
                op: "elementwise",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| match op {
                Binary::Add => a + b,
                Binary::Sub => a - b,
                Binary::Mul => a * b,
            })
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Self> {
        self.zip(Binary::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Self> {
        self.zip(Binary::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Self> {
        self.zip(Binary::Mul, rhs)
    }

    pub fn scale(&self, factor: Real) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Adds a vector along the last axis. This is the only broadcast supported.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Self> {
        let last = *self.shape.last().expect("rank >= 1");
        if bias.rank() != 1 || bias.shape[0] != last {
            return Err(TensorError::Mismatch {
                op: "add_bias",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(last) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Reduces one axis. The axis is removed from the shape; reducing the only
    /// axis of a vector yields a length-1 vector.
    pub fn reduce(&self, op: Reduce, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "reduce",
                axis,
                shape: self.shape.clone(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| self.data[(o * n + k) * inner + i];
                let mut acc = at(0);
                for k in 1..n {
                    acc = match op {
                        Reduce::Max => {
                            let v = at(k);
                            if v > acc {
                                v
                            } else {
                                acc
                            }
                        }
                        Reduce::Sum | Reduce::Mean => acc + at(k),
                    };
                }
                if op == Reduce::Mean {
                    acc /= n as Real;
                }
                out.push(acc);
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Self::new(shape, out)
    }

    pub fn sum(&self) -> Real {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_identity() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn unary_ops() {
        assert_eq!(sigmoid(0.0), 0.5);
        let r = Tensor::from_vec(vec![-1.0, 2.0]).map(Unary::Relu);
        assert_eq!(r.data(), &[0.0, 2.0]);
        let t = Tensor::from_vec(vec![0.5]).map(Unary::Tanh);
        assert!((t.data()[0] - 0.462_117_157_260_009_8).abs() < 1e-15);
    }

    #[test]
    fn binary_requires_identical_shapes() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(a.add(&b), Err(TensorError::Mismatch { .. })));
        let c = Tensor::from_vec(vec![1.0, 2.0]);
        let d = Tensor::from_vec(vec![3.0, 5.0]);
        assert_eq!(c.mul(&d).unwrap().data(), &[3.0, 10.0]);
        assert_eq!(d.sub(&c).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn bias_add_over_last_axis() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![10.0, 20.0]);
        assert_eq!(m.add_bias(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        assert!(m.add_bias(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn reductions() {
        let v = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(v.reduce(Reduce::Sum, 0).unwrap().data(), &[6.0]);
        assert_eq!(v.reduce(Reduce::Mean, 0).unwrap().data(), &[2.0]);
        let m = Tensor::matrix(2, 2, vec![1.0, 5.0, 4.0, 2.0]).unwrap();
        let mx = m.reduce(Reduce::Max, 0).unwrap();
        assert_eq!(mx.shape(), &[2]);
        assert_eq!(mx.data(), &[4.0, 5.0]);
        assert_eq!(m.reduce(Reduce::Sum, 1).unwrap().data(), &[6.0, 6.0]);
        assert!(matches!(
            m.reduce(Reduce::Sum, 2),
            Err(TensorError::Axis { .. })
        ));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn reshape_cases() {
        let t = Tensor::from_vec((0..2400).map(|v| v as Real).collect());
        let r = t.reshape(&[100, 24]).unwrap();
        assert_eq!(r.shape(), &[100, 24]);
        assert_eq!(r.at2(1, 0), 24.0);
        let s = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.reshape(&[2, 3]).unwrap().flatten(), s);
        assert!(s.reshape(&[4, 2]).is_err());
    }

    fn matrix_strategy(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-1.0f64..1.0, r * c)
            .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn reshape_round_trip(data in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let t = Tensor::new(vec![3, 4], data).unwrap();
            let back = t.reshape(&[2, 6]).unwrap().reshape(&[3, 4]).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn sigmoid_symmetry(x in -40.0f64..40.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn matmul_associative(
            (a, b, c) in (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8).prop_flat_map(|(p, q, r, s)| {
                (matrix_strategy(p, q), matrix_strategy(q, r), matrix_strategy(r, s))
            })
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) <= 1e-10);
        }

        #[test]
        fn ops_do_not_mutate_inputs(data in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let t = Tensor::new(vec![2, 3], data).unwrap();
            let before = t.clone();
            let _ = t.map(Unary::Tanh);
            let _ = t.add(&t);
            let _ = t.reduce(Reduce::Max, 1);
            let _ = t.matmul(&t.transpose().unwrap());
            prop_assert_eq!(t, before);
        }
    }
}
