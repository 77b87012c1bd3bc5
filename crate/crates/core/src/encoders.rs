//! Image and text encoders.
//!
//! The image encoder is either a one-hidden-layer ReLU MLP or a frozen
//! identity passthrough for precomputed backbone features. The text encoder
//! mean-pools rows of a token embedding table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PAD_ID;
use crate::numcore::{Matrix, NumError, ParamId, Tape, Var};
use crate::rng::{self, Rng};

pub const IMAGE_W1: ParamId = ParamId(0);
pub const IMAGE_B1: ParamId = ParamId(1);
pub const IMAGE_W2: ParamId = ParamId(2);
pub const IMAGE_B2: ParamId = ParamId(3);
pub const TEXT_EMBED: ParamId = ParamId(4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Trainable.
    Toy,
    /// Fixed; never touched by the optimizer.
    Frozen,
}

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("input has {found} features, encoder expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("sequence {0} has no non-padding tokens")]
    EmptySequence(usize),
    #[error("sequence {row}: token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { row: usize, id: usize, vocab: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageEncoderParams {
    Toy(Mlp),
    /// Identity over `dim` features.
    Frozen { dim: usize },
}

impl ImageEncoderParams {
    /// MLP with weights drawn from Normal(0, 1/sqrt(fan_in)) and zero biases.
    pub fn toy(d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self::Toy(Mlp {
            w1: rng::normal_matrix(rng, d_in, hidden, 1.0 / (d_in as f64).sqrt()),
            b1: Matrix::zeros(1, hidden),
            w2: rng::normal_matrix(rng, hidden, d_out, 1.0 / (hidden as f64).sqrt()),
            b2: Matrix::zeros(1, d_out),
        })
    }

    pub fn frozen(dim: usize) -> Self {
        Self::Frozen { dim }
    }

    pub fn mode(&self) -> EncoderMode {
        match self {
            Self::Toy(_) => EncoderMode::Toy,
            Self::Frozen { .. } => EncoderMode::Frozen,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Toy(m) => m.w1.rows(),
            Self::Frozen { dim } => *dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Toy(m) => m.w2.cols(),
            Self::Frozen { dim } => *dim,
        }
    }

    /// Trainable tensors with their ids; empty when frozen.
    pub fn params(&self) -> Vec<(ParamId, &Matrix)> {
        match self {
            Self::Toy(m) => vec![
                (IMAGE_W1, &m.w1),
                (IMAGE_B1, &m.b1),
                (IMAGE_W2, &m.w2),
                (IMAGE_B2, &m.b2),
            ],
            Self::Frozen { .. } => Vec::new(),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        match self {
            Self::Toy(m) => match id {
                IMAGE_W1 => Some(&mut m.w1),
                IMAGE_B1 => Some(&mut m.b1),
                IMAGE_W2 => Some(&mut m.w2),
                IMAGE_B2 => Some(&mut m.b2),
                _ => None,
            },
            Self::Frozen { .. } => None,
        }
    }

    /// Records the forward pass of `inputs` (B × d_in) on `tape`.
    pub fn forward(&self, tape: &mut Tape, inputs: Var) -> Result<Var, EncoderError> {
        let found = tape.value(inputs).cols();
        if found != self.input_dim() {
            return Err(EncoderError::DimMismatch {
                expected: self.input_dim(),
                found,
            });
        }
        match self {
            Self::Frozen { .. } => Ok(inputs),
            Self::Toy(m) => {
                let w1 = tape.param(IMAGE_W1, m.w1.clone());
                let b1 = tape.param(IMAGE_B1, m.b1.clone());
                let w2 = tape.param(IMAGE_W2, m.w2.clone());
                let b2 = tape.param(IMAGE_B2, m.b2.clone());
                let h = tape.matmul(inputs, w1)?;
                let h = tape.add_row_vector(h, b1)?;
                let h = tape.relu(h);
                let out = tape.matmul(h, w2)?;
                Ok(tape.add_row_vector(out, b2)?)
            }
        }
    }
}

/// `ReLU(x·W1 + b1)·W2 + b2` for the toy encoder, `x` when frozen.
pub fn encode_image(params: &ImageEncoderParams, inputs: &Matrix) -> Result<Matrix, EncoderError> {
    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let out = params.forward(&mut tape, x)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    pub mode: EncoderMode,
    /// vocab × d_t; row 0 is padding and never pooled.
    pub table: Matrix,
}

impl TextEncoderParams {
    /// Table entries drawn from Normal(0, 1/sqrt(d_t)).
    pub fn new(vocab_size: usize, dim: usize, mode: EncoderMode, rng: &mut Rng) -> Self {
        Self {
            mode,
            table: rng::normal_matrix(rng, vocab_size, dim, 1.0 / (dim as f64).sqrt()),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.table.cols()
    }

    pub fn params(&self) -> Vec<(ParamId, &Matrix)> {
        match self.mode {
            EncoderMode::Toy => vec![(TEXT_EMBED, &self.table)],
            EncoderMode::Frozen => Vec::new(),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        (self.mode == EncoderMode::Toy && id == TEXT_EMBED).then_some(&mut self.table)
    }

    /// Records mean pooling of each sequence's non-padding tokens.
    pub fn forward(&self, tape: &mut Tape, sequences: &[Vec<usize>]) -> Result<Var, EncoderError> {
        let pooled = self.pooling_ids(sequences)?;
        let table = match self.mode {
            EncoderMode::Toy => tape.param(TEXT_EMBED, self.table.clone()),
            EncoderMode::Frozen => tape.constant(self.table.clone()),
        };
        Ok(tape.mean_pool(table, pooled)?)
    }

    fn pooling_ids(&self, sequences: &[Vec<usize>]) -> Result<Vec<Vec<usize>>, EncoderError> {
        sequences
            .iter()
            .enumerate()
            .map(|(row, seq)| {
                if let Some(&id) = seq.iter().find(|&&id| id >= self.vocab_size()) {
                    return Err(EncoderError::TokenOutOfRange {
                        row,
                        id,
                        vocab: self.vocab_size(),
                    });
                }
                let ids: Vec<usize> = seq.iter().copied().filter(|&id| id != PAD_ID).collect();
                if ids.is_empty() {
                    return Err(EncoderError::EmptySequence(row));
                }
                Ok(ids)
            })
            .collect()
    }
}

/// Mean of embedding rows over each sequence's non-padding tokens.
pub fn encode_text(params: &TextEncoderParams, sequences: &[Vec<usize>]) -> Result<Matrix, EncoderError> {
    let mut tape = Tape::new();
    let out = params.forward(&mut tape, sequences)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use crate::rng::{normal_matrix, seeded};

    #[test]
    fn frozen_is_identity() {
        let p = ImageEncoderParams::frozen(3);
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        assert_eq!(encode_image(&p, &x).unwrap(), x);
        assert!(p.params().is_empty());
        assert_eq!(
            encode_image(&p, &Matrix::zeros(1, 4)),
            Err(EncoderError::DimMismatch { expected: 3, found: 4 })
        );
    }

    #[test]
    fn zero_weights_give_zero_rows() {
        let p = ImageEncoderParams::Toy(Mlp {
            w1: Matrix::zeros(4, 3),
            b1: Matrix::zeros(1, 3),
            w2: Matrix::zeros(3, 2),
            b2: Matrix::zeros(1, 2),
        });
        let x = normal_matrix(&mut seeded(1), 5, 4, 1.0);
        assert_eq!(encode_image(&p, &x).unwrap(), Matrix::zeros(5, 2));
    }

    #[test]
    fn relu_positive_homogeneity() {
        let mut rng = seeded(4);
        let ImageEncoderParams::Toy(m) = ImageEncoderParams::toy(6, 5, 3, &mut rng) else {
            unreachable!()
        };
        let x = normal_matrix(&mut rng, 4, 6, 1.0).map(f64::abs);
        let c: f64 = 2.5;
        let scaled = ImageEncoderParams::Toy(Mlp {
            w1: m.w1.scale(c),
            b1: m.b1.clone(),
            w2: m.w2.scale(c),
            b2: m.b2.clone(),
        });
        let base = encode_image(&ImageEncoderParams::Toy(m), &x).unwrap();
        let out = encode_image(&scaled, &x).unwrap();
        assert!(out.max_abs_diff(&base.scale(c * c)) < 1e-12);
    }

    #[test]
    fn mean_pooling() {
        let p = TextEncoderParams {
            mode: EncoderMode::Toy,
            table: Matrix::from_rows(&[[9.0, 9.0], [1.0, 2.0], [3.0, 4.0], [5.0, -6.0]]),
        };
        let out = encode_text(&p, &[vec![2], vec![2, 3], vec![3, 0, 2]]).unwrap();
        assert_eq!(out, Matrix::from_rows(&[[3.0, 4.0], [4.0, -1.0], [4.0, -1.0]]));
        assert_eq!(encode_text(&p, &[vec![1], vec![0, 0]]), Err(EncoderError::EmptySequence(1)));
        assert_eq!(encode_text(&p, &[vec![]]), Err(EncoderError::EmptySequence(0)));
        assert_eq!(
            encode_text(&p, &[vec![4]]),
            Err(EncoderError::TokenOutOfRange { row: 0, id: 4, vocab: 4 })
        );
    }

    #[test]
    fn pooling_ignores_token_order() {
        let p = TextEncoderParams::new(20, 6, EncoderMode::Toy, &mut seeded(2));
        let a = encode_text(&p, &[vec![3, 7, 11, 7, 19]]).unwrap();
        let b = encode_text(&p, &[vec![7, 19, 7, 3, 11]]).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    /// Loss = <R, encoder output> for a fixed random R.
    fn image_loss(ps: &[Matrix], x: &Matrix, r: &Matrix) -> Result<(f64, Vec<Matrix>), NumError> {
        let p = ImageEncoderParams::Toy(Mlp {
            w1: ps[0].clone(),
            b1: ps[1].clone(),
            w2: ps[2].clone(),
            b2: ps[3].clone(),
        });
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = p.forward(&mut tape, xv).map_err(|e| match e {
            EncoderError::Num(n) => n,
            other => panic!("{other}"),
        })?;
        let rt = tape.constant(r.transpose());
        let prod = tape.matmul(out, rt)?;
        let ones = tape.constant(Matrix::filled(r.rows(), 1, 1.0));
        let col = tape.matmul(prod, ones)?;
        let loss = tape.mean_rows(col);
        let grads = tape.backward(loss)?;
        let g = [IMAGE_W1, IMAGE_B1, IMAGE_W2, IMAGE_B2]
            .iter()
            .map(|id| grads.get(*id).unwrap().clone())
            .collect();
        Ok((tape.value(loss).item(), g))
    }

    #[test]
    fn image_encoder_gradients() {
        for seed in 0..5 {
            let mut rng = seeded(seed);
            let ImageEncoderParams::Toy(m) = ImageEncoderParams::toy(5, 7, 3, &mut rng) else {
                unreachable!()
            };
            let b1 = normal_matrix(&mut rng, 1, 7, 0.1);
            let b2 = normal_matrix(&mut rng, 1, 3, 0.1);
            let x = normal_matrix(&mut rng, 4, 5, 1.0);
            let r = normal_matrix(&mut rng, 4, 3, 1.0);
            let err = grad_check(|ps| image_loss(ps, &x, &r), &[m.w1, b1, m.w2, b2], 1e-5).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn text_encoder_gradients() {
        let mut rng = seeded(8);
        let table = normal_matrix(&mut rng, 10, 4, 1.0);
        let r = normal_matrix(&mut rng, 4, 4, 1.0);
        let seqs = vec![vec![2, 3], vec![9, 9, 1], vec![4], vec![5, 0, 6]];
        let f = |ps: &[Matrix]| {
            let p = TextEncoderParams {
                mode: EncoderMode::Toy,
                table: ps[0].clone(),
            };
            let mut tape = Tape::new();
            let out = p.forward(&mut tape, &seqs).unwrap();
            let rt = tape.constant(r.transpose());
            let prod = tape.matmul(out, rt)?;
            let ones = tape.constant(Matrix::filled(4, 1, 1.0));
            let col = tape.matmul(prod, ones)?;
            let loss = tape.mean_rows(col);
            let grads = tape.backward(loss)?;
            Ok((tape.value(loss).item(), vec![grads.get(TEXT_EMBED).unwrap().clone()]))
        };
        assert!(grad_check(f, &[table], 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn frozen_text_has_no_params() {
        let mut p = TextEncoderParams::new(5, 3, EncoderMode::Frozen, &mut seeded(0));
        assert!(p.params().is_empty());
        assert!(p.param_mut(TEXT_EMBED).is_none());
    }
}
