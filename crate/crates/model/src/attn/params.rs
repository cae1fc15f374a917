use micseg_core::{Real, Tensor};

use crate::error::{ModelError, Result};

/// Which stream supplies the value rows in cross-attention. The governing
/// equation reads values from stream b; `A` exposes the alternative reading
/// for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueSource {
    B,
    A,
}

impl ValueSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "b" => Ok(ValueSource::B),
            "a" => Ok(ValueSource::A),
            other => Err(ModelError::Config(format!(
                "value_source must be 'a' or 'b', got '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueSource::B => "b",
            ValueSource::A => "a",
        }
    }
}

/// Projection weights and the learned relative-position bias for one windowed
/// attention operator. Channels C = heads × head_dim; the bias table has one
/// row per intra-window displacement, (2w−1)³ in total.
#[derive(Debug)]
pub struct AttentionParams<P: Real> {
    pub wq: Tensor<P>,
    pub wk: Tensor<P>,
    pub wv: Tensor<P>,
    pub out_weight: Tensor<P>,
    pub out_bias: Tensor<P>,
    pub bias_table: Tensor<P>,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
}

impl<P: Real> AttentionParams<P> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        wq: Tensor<P>,
        wk: Tensor<P>,
        wv: Tensor<P>,
        out_weight: Tensor<P>,
        out_bias: Tensor<P>,
        bias_table: Tensor<P>,
        heads: usize,
        head_dim: usize,
        window: usize,
    ) -> Result<Self> {
        let c = heads * head_dim;
        for (name, t) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("out", &out_weight)] {
            if t.shape() != [c, c] {
                return Err(ModelError::Config(format!(
                    "{name} projection must be [{c},{c}], got {:?}",
                    t.shape()
                )));
            }
        }
        if out_bias.shape() != [c] {
            return Err(ModelError::Config(format!(
                "output bias must be [{c}], got {:?}",
                out_bias.shape()
            )));
        }
        let table_rows = (2 * window - 1).pow(3);
        if bias_table.shape() != [table_rows, heads] {
            return Err(ModelError::Config(format!(
                "bias table must be [{table_rows},{heads}], got {:?}",
                bias_table.shape()
            )));
        }
        Ok(Self {
            wq,
            wk,
            wv,
            out_weight,
            out_bias,
            bias_table,
            heads,
            head_dim,
            window,
        })
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Bias-table row for every (query, key) pair in a window, query-major.
/// Displacement along each axis lies in [−(w−1), w−1] and is biased by w−1.
pub fn relative_bias_indices(window: usize) -> Vec<usize> {
    let span = 2 * window - 1;
    let t = window.pow(3);
    let coord = |flat: usize| {
        let lx = flat % window;
        let ly = (flat / window) % window;
        let lz = flat / (window * window);
        [lz, ly, lx]
    };
    let mut idx = Vec::with_capacity(t * t);
    for q in 0..t {
        let qc = coord(q);
        for k in 0..t {
            let kc = coord(k);
            let dz = qc[0] + window - 1 - kc[0];
            let dy = qc[1] + window - 1 - kc[1];
            let dx = qc[2] + window - 1 - kc[2];
            idx.push((dz * span + dy) * span + dx);
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_indices_cover_center_on_diagonal() {
        let w = 3usize;
        let span = 2 * w - 1;
        let center = ((w - 1) * span + (w - 1)) * span + (w - 1);
        let idx = relative_bias_indices(w);
        let t = w.pow(3);
        for q in 0..t {
            assert_eq!(idx[q * t + q], center);
        }
        assert!(idx.iter().all(|&i| i < span.pow(3)));
    }

    #[test]
    fn bias_indices_distinguish_axis_neighbors() {
        let w = 2usize;
        let idx = relative_bias_indices(w);
        // Query 0 vs keys displaced along x (flat 1), y (flat 2), z (flat 4)
        // must hit three different table rows.
        let rows = [idx[1], idx[2], idx[4]];
        assert_ne!(rows[0], rows[1]);
        assert_ne!(rows[1], rows[2]);
        assert_ne!(rows[0], rows[2]);
    }

    #[test]
    fn params_validation_catches_bad_table() {
        let c = 4usize;
        let err = AttentionParams::<f64>::new(
            Tensor::zeros(&[c, c]),
            Tensor::zeros(&[c, c]),
            Tensor::zeros(&[c, c]),
            Tensor::zeros(&[c, c]),
            Tensor::zeros(&[c]),
            Tensor::zeros(&[7, 2]),
            2,
            2,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Config(_)));
    }

    #[test]
    fn value_source_parses() {
        assert_eq!(ValueSource::parse("b").unwrap(), ValueSource::B);
        assert_eq!(ValueSource::parse("a").unwrap(), ValueSource::A);
        assert!(ValueSource::parse("q").is_err());
    }
}
