use std::sync::Arc;

use rand::{Rng, RngExt};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::NodeId;

/// Dense N-dimensional array in row-major order (last axis fastest).
///
/// The shape and data are immutable after construction; cloning is cheap
/// because the buffer is shared. A tensor produced by a [`crate::Tape`]
/// operation additionally carries the id of the tape node that computed it.
#[derive(Clone)]
pub struct Tensor<P: Real> {
    shape: Arc<[usize]>,
    data: Arc<Vec<P>>,
    node: Option<NodeId>,
}

impl<P: Real> Tensor<P> {
    pub fn from_vec(shape: &[usize], data: Vec<P>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent {
                shape: shape.to_vec(),
            });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.into(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![P::ZERO; n]).expect("zeros: consistent by construction")
    }

    pub fn full(shape: &[usize], value: P) -> Self {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; n]).expect("full: consistent by construction")
    }

    pub fn scalar(value: P) -> Self {
        Tensor {
            shape: Arc::from([] as [usize; 0]),
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> P) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor::from_vec(shape, data).expect("from_fn: consistent by construction")
    }

    /// Uniform draws from `[lo, hi)`; the element order is the flat buffer order.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Tensor::from_fn(shape, |_| P::from_f64(lo + (hi - lo) * rng.random::<f64>()))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(&self, node: NodeId) -> Self {
        Tensor {
            shape: Arc::clone(&self.shape),
            data: Arc::clone(&self.data),
            node: Some(node),
        }
    }

    /// Same buffer, no tape association.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: Arc::clone(&self.shape),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Same buffer under a new shape with an equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent {
                shape: shape.to_vec(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: self.numel(),
            });
        }
        Ok(Tensor {
            shape: shape.into(),
            data: Arc::clone(&self.data),
            node: None,
        })
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> Result<P> {
        if !self.is_scalar() {
            return Err(TensorError::LossNotScalar {
                shape: self.shape.to_vec(),
            });
        }
        Ok(self.data[0])
    }

    pub fn cast<Q: Real>(&self) -> Tensor<Q> {
        let data = self.data.iter().map(|&v| Q::from_f64(v.to_f64())).collect();
        Tensor::from_vec(&self.shape, data).expect("cast preserves shape")
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bit-level equality of shape and data, the test for determinism claims.
    pub fn bitwise_eq(&self, other: &Tensor<P>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }
}

impl<P: Real> std::fmt::Debug for Tensor<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape())?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.data())
        } else {
            write!(f, " [{} elements]", self.numel())
        }
    }
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Largest absolute elementwise difference, in f64.
pub fn max_abs_diff<P: Real>(a: &Tensor<P>, b: &Tensor<P>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff: shape mismatch");
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max)
}

/// Largest relative elementwise difference: |a-b| / max(|a|, |b|, floor).
pub fn max_rel_diff<P: Real>(a: &Tensor<P>, b: &Tensor<P>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_diff: shape mismatch");
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| {
            let (x, y) = (x.to_f64(), y.to_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
