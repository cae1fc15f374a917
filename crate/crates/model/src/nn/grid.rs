use micseg_core::{Real, Tensor};

use crate::error::{ModelError, Result};

/// Token lattice: a `[D, H, W, C]` tensor where each lattice site holds a
/// C-channel feature vector (channel-last, x fastest after channels).
#[derive(Clone, Debug)]
pub struct TokenGrid<P: Real> {
    tensor: Tensor<P>,
}

impl<P: Real> TokenGrid<P> {
    pub fn new(tensor: Tensor<P>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(ModelError::GeometryMismatch(format!(
                "token grid needs rank 4, got shape {:?}",
                tensor.shape()
            )));
        }
        Ok(TokenGrid { tensor })
    }

    pub fn tensor(&self) -> &Tensor<P> {
        &self.tensor
    }

    pub fn extents(&self) -> (usize, usize, usize) {
        let s = self.tensor.shape();
        (s[0], s[1], s[2])
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn tokens(&self) -> usize {
        let (d, h, w) = self.extents();
        d * h * w
    }

    pub fn same_geometry(&self, other: &TokenGrid<P>) -> bool {
        self.tensor.shape() == other.tensor.shape()
    }
}
