use std::sync::Arc;

use super::layers::{check_param_shapes, Parameterized};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Width of each conditioning embedding.
pub const COND_WIDTH: usize = 16;
/// Row holding the null embedding ∅.
pub const NULL_INDEX: usize = 0;
pub const REAL_STYLE: usize = 1;
pub const FAKE_STYLE: usize = 2;

const ROWS: usize = 3;

/// Learned `3 × 16` conditioning table: ∅, real-style, fake-style.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    table: Arc<Tensor>,
}

impl EmbeddingTable {
    pub fn init(rng: &mut Rng) -> Self {
        let data = rng::normals(rng, ROWS * COND_WIDTH)
            .into_iter()
            .map(|v| 0.5 * v)
            .collect();
        Self {
            table: Arc::new(Tensor::from_parts(vec![ROWS, COND_WIDTH], data)),
        }
    }

    pub fn table(&self) -> &Arc<Tensor> {
        &self.table
    }

    /// The embedding row for `index` as a `[16]` tensor.
    pub fn embed(&self, index: usize) -> Result<Tensor> {
        if index >= ROWS {
            return Err(Error::Invalid(format!(
                "embedding index {index} outside 0..{ROWS}"
            )));
        }
        Ok(Tensor::vector(
            self.table.data()[index * COND_WIDTH..(index + 1) * COND_WIDTH].to_vec(),
        ))
    }

    pub fn null(&self) -> Tensor {
        self.embed(NULL_INDEX).expect("null row exists")
    }

    /// Conditioning row matched to a class label (0 → real, 1 → fake).
    pub fn for_label(&self, label: usize) -> Result<Tensor> {
        self.embed(label + 1)
    }
}

impl Parameterized for EmbeddingTable {
    fn params(&self) -> Vec<(String, Arc<Tensor>)> {
        vec![("embedding.table".into(), self.table.clone())]
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        check_param_shapes(&self.params(), &params)?;
        self.table = Arc::new(params.into_iter().next().unwrap());
        Ok(())
    }
}
