//! Paired image/text batches for the B×B contrastive objective.

use super::DatasetError;
use crate::numcore::Matrix;
use crate::rng;

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// `B` paired inputs; row `i` of the images matches sequence `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub image_inputs: Matrix,
    pub token_ids: Vec<Vec<usize>>,
    pub match_targets: Vec<usize>,
}

impl Batch {
    pub fn new(image_inputs: Matrix, token_ids: Vec<Vec<usize>>) -> Result<Self, DatasetError> {
        let b = image_inputs.rows();
        if b < 2 {
            return Err(DatasetError::BatchTooSmall(b));
        }
        if token_ids.len() != b {
            return Err(DatasetError::PairCountMismatch {
                images: b,
                texts: token_ids.len(),
            });
        }
        Ok(Self {
            image_inputs,
            token_ids,
            match_targets: (0..b).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.match_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.match_targets.is_empty()
    }
}

/// Image features and tokenized captions for a set of samples, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    pub images: Matrix,
    pub tokens: Vec<Vec<usize>>,
}

impl PairedSet {
    pub fn new(images: Matrix, tokens: Vec<Vec<usize>>) -> Result<Self, DatasetError> {
        if images.rows() != tokens.len() {
            return Err(DatasetError::PairCountMismatch {
                images: images.rows(),
                texts: tokens.len(),
            });
        }
        Ok(Self { images, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch, DatasetError> {
        Batch::new(
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.tokens[i].clone()).collect(),
        )
    }

    /// All batches of one epoch, reshuffled per `(seed, epoch)`.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>, DatasetError> {
        batch_indices(self.len(), batch_size, seed, epoch)?
            .iter()
            .map(|ix| self.batch(ix))
            .collect()
    }

    /// Consecutive batches in stored order, for evaluation.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Vec<Batch>, DatasetError> {
        chunk((0..self.len()).collect(), batch_size)?
            .iter()
            .map(|ix| self.batch(ix))
            .collect()
    }
}

/// Shuffles `0..n` with the stream derived from `(seed, epoch)` and cuts it
/// into `batch_size` chunks. A trailing chunk of one is dropped; a trailing
/// chunk of two or more is kept.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>, DatasetError> {
    if batch_size < 2 {
        return Err(DatasetError::BatchTooSmall(batch_size));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut rng::seeded(rng::derive_seed(seed, epoch)));
    chunk(order, batch_size)
}

fn chunk(order: Vec<usize>, batch_size: usize) -> Result<Vec<Vec<usize>>, DatasetError> {
    if batch_size < 2 {
        return Err(DatasetError::BatchTooSmall(batch_size));
    }
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}
