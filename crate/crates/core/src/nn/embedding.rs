use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ParamStore;
use crate::{Error, Result, Scalar};

/// Per-field embedding tables.
///
/// Every field owns a `(vocab + 1) x dim` table; the extra last row absorbs
/// ids outside the vocabulary. A row of the input batch holds one id per
/// field and the lookup output concatenates the field embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams<T> {
    pub tables: Vec<Array2<T>>,
}

impl<T: Scalar> EmbeddingParams<T> {
    pub fn new<R: Rng + ?Sized>(vocab_sizes: &[usize], dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.05).expect("finite std");
        let tables = vocab_sizes
            .iter()
            .map(|&v| Array2::from_shape_simple_fn((v + 1, dim), || T::lit(normal.sample(rng))))
            .collect();
        EmbeddingParams { tables }
    }

    pub fn num_fields(&self) -> usize {
        self.tables.len()
    }

    pub fn dim(&self) -> usize {
        self.tables.first().map_or(0, |t| t.ncols())
    }

    pub fn output_dim(&self) -> usize {
        self.num_fields() * self.dim()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.nrows() - 1).collect()
    }

    fn row_of(&self, field: usize, id: u32) -> usize {
        let oov = self.tables[field].nrows() - 1;
        (id as usize).min(oov)
    }

    fn check_ids(&self, ids: ArrayView2<u32>) -> Result<()> {
        if ids.ncols() != self.num_fields() {
            return Err(Error::shape(format!(
                "batch has {} feature fields, embedding has {}",
                ids.ncols(),
                self.num_fields()
            )));
        }
        Ok(())
    }

    /// Look up and concatenate one embedding per field.
    pub fn forward(&self, ids: ArrayView2<u32>) -> Result<Array2<T>> {
        self.check_ids(ids)?;
        let d = self.dim();
        let mut out = Array2::zeros((ids.nrows(), self.output_dim()));
        for (r, row) in ids.rows().into_iter().enumerate() {
            for (f, &id) in row.iter().enumerate() {
                let src = self.tables[f].row(self.row_of(f, id));
                out.slice_mut(s![r, f * d..(f + 1) * d]).assign(&src);
            }
        }
        Ok(out)
    }

    /// Scatter-add `dout` back into table rows.
    pub fn backward(&self, ids: ArrayView2<u32>, dout: ArrayView2<T>) -> Result<Self> {
        self.check_ids(ids)?;
        let d = self.dim();
        let mut grads = self.zeros_like();
        for (r, row) in ids.rows().into_iter().enumerate() {
            for (f, &id) in row.iter().enumerate() {
                let target = self.row_of(f, id);
                let mut dst = grads.tables[f].row_mut(target);
                dst += &dout.slice(s![r, f * d..(f + 1) * d]);
            }
        }
        Ok(grads)
    }
}

impl<T: Scalar> ParamStore<T> for EmbeddingParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.tables
            .iter()
            .map(|t| t.as_slice().expect("standard layout"))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.tables
            .iter_mut()
            .map(|t| t.as_slice_mut().expect("standard layout"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_concatenates_fields_and_routes_oov() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = EmbeddingParams::<f64>::new(&[3, 2], 2, &mut rng);
        let out = emb.forward(array![[1u32, 99]].view()).unwrap();
        assert_eq!(out.row(0).to_vec()[..2], emb.tables[0].row(1).to_vec()[..]);
        assert_eq!(out.row(0).to_vec()[2..], emb.tables[1].row(2).to_vec()[..]);
    }

    #[test]
    fn backward_accumulates_repeated_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = EmbeddingParams::<f64>::new(&[4], 1, &mut rng);
        let g = emb
            .backward(array![[2u32], [2]].view(), array![[1.5], [0.5]].view())
            .unwrap();
        assert_eq!(g.tables[0][[2, 0]], 2.0);
        assert_eq!(g.tables[0].sum(), 2.0);
    }
}
