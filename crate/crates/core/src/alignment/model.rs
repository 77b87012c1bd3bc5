//! The trainable state: encoders, projection heads and log-temperature.

use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::dataset::{Batch, Vocab};
use crate::encoders::{EncoderMode, ImageEncoderParams, TextEncoderParams};
use crate::numcore::{self, Matrix, ParamId, Tape, Var};
use crate::rng::{self, Rng};

pub const PROJ_IMAGE: ParamId = ParamId(5);
pub const PROJ_TEXT: ParamId = ParamId(6);
pub const LOG_SCALE: ParamId = ParamId(7);

/// Initial log-temperature.
pub const INITIAL_TAU: f64 = 1.0;
pub const MIN_LOGIT_SCALE: f64 = 1e-3;
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// Bounds on `tau` such that `exp(tau)` stays inside
/// `[MIN_LOGIT_SCALE, MAX_LOGIT_SCALE]` after rounding.
pub fn tau_bounds() -> (f64, f64) {
    let mut lo = MIN_LOGIT_SCALE.ln();
    while lo.exp() < MIN_LOGIT_SCALE {
        lo = lo.next_up();
    }
    let mut hi = MAX_LOGIT_SCALE.ln();
    while hi.exp() > MAX_LOGIT_SCALE {
        hi = hi.next_down();
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub d_v: usize,
    pub d_t: usize,
    /// Joint embedding width.
    pub n: usize,
    pub image_mode: EncoderMode,
    pub text_mode: EncoderMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 3072,
            hidden: 256,
            d_v: 768,
            d_t: 512,
            n: 512,
            image_mode: EncoderMode::Toy,
            text_mode: EncoderMode::Toy,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        let bad = |msg: String| Err(AlignError::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("joint dimension n must be at least 2, got {}", self.n));
        }
        for (name, v) in [("d_in", self.d_in), ("d_v", self.d_v), ("d_t", self.d_t)] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        match self.image_mode {
            EncoderMode::Toy if self.hidden == 0 => bad("hidden must be positive".into()),
            EncoderMode::Frozen if self.d_in != self.d_v => bad(format!(
                "frozen image encoder needs d_in == d_v, got {} and {}",
                self.d_in, self.d_v
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    /// Class names known at training time, sorted.
    pub classes: Vec<String>,
    pub image_encoder: ImageEncoderParams,
    pub text_encoder: TextEncoderParams,
    /// d_v × n
    pub proj_image: Matrix,
    /// d_t × n
    pub proj_text: Matrix,
    /// 1×1 log-temperature; the logit scale is `exp(tau)`.
    pub log_scale: Matrix,
}

impl AlignmentModel {
    /// Random initialization; weights ~ Normal(0, 1/sqrt(fan_in)).
    pub fn new(
        config: ModelConfig,
        vocab: Vocab,
        classes: Vec<String>,
        rng: &mut Rng,
    ) -> Result<Self, AlignError> {
        config.validate()?;
        let image_encoder = match config.image_mode {
            EncoderMode::Toy => ImageEncoderParams::toy(config.d_in, config.hidden, config.d_v, rng),
            EncoderMode::Frozen => ImageEncoderParams::frozen(config.d_in),
        };
        let text_encoder = TextEncoderParams::new(vocab.len(), config.d_t, config.text_mode, rng);
        let proj_image = rng::normal_matrix(rng, config.d_v, config.n, 1.0 / (config.d_v as f64).sqrt());
        let proj_text = rng::normal_matrix(rng, config.d_t, config.n, 1.0 / (config.d_t as f64).sqrt());
        Ok(Self {
            config,
            vocab,
            classes,
            image_encoder,
            text_encoder,
            proj_image,
            proj_text,
            log_scale: Matrix::scalar(INITIAL_TAU),
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_scale.item()
    }

    pub fn logit_scale(&self) -> f64 {
        self.tau().exp()
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.log_scale = Matrix::scalar(tau);
    }

    pub fn clamp_tau(&mut self) {
        let (lo, hi) = tau_bounds();
        let t = self.tau().clamp(lo, hi);
        self.set_tau(t);
    }

    /// Every trainable tensor, in a fixed order.
    pub fn trainable(&self) -> Vec<(ParamId, &Matrix)> {
        let mut out = self.image_encoder.params();
        out.extend(self.text_encoder.params());
        out.push((PROJ_IMAGE, &self.proj_image));
        out.push((PROJ_TEXT, &self.proj_text));
        out.push((LOG_SCALE, &self.log_scale));
        out
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        match id {
            PROJ_IMAGE => Some(&mut self.proj_image),
            PROJ_TEXT => Some(&mut self.proj_text),
            LOG_SCALE => Some(&mut self.log_scale),
            other => self
                .image_encoder
                .param_mut(other)
                .or_else(|| self.text_encoder.param_mut(other)),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.trainable().iter().all(|(_, m)| m.is_finite()) && self.text_encoder.table.is_finite()
    }

    /// Records `normalize(encode_image(x) · Wv)` on `tape`.
    pub fn image_embedding_on(&self, tape: &mut Tape, inputs: &Matrix) -> Result<Var, AlignError> {
        let x = tape.constant(inputs.clone());
        let f = self.image_encoder.forward(tape, x)?;
        let w = tape.param(PROJ_IMAGE, self.proj_image.clone());
        let projected = tape.matmul(f, w)?;
        Ok(tape.l2_normalize_rows(projected)?)
    }

    /// Records `normalize(encode_text(ids) · Wt)` on `tape`.
    pub fn text_embedding_on(&self, tape: &mut Tape, sequences: &[Vec<usize>]) -> Result<Var, AlignError> {
        let f = self.text_encoder.forward(tape, sequences)?;
        let w = tape.param(PROJ_TEXT, self.proj_text.clone());
        let projected = tape.matmul(f, w)?;
        Ok(tape.l2_normalize_rows(projected)?)
    }

    /// Symmetric contrastive loss of `batch`, recorded on `tape`.
    pub fn loss_on(&self, tape: &mut Tape, batch: &Batch) -> Result<Var, AlignError> {
        let fv = self.image_embedding_on(tape, &batch.image_inputs)?;
        let ft = self.text_embedding_on(tape, &batch.token_ids)?;
        let ft_t = tape.transpose(ft);
        let cos = tape.matmul(fv, ft_t)?;
        let tau = tape.param(LOG_SCALE, self.log_scale.clone());
        let logits = tape.scale_by_exp(cos, tau)?;
        let by_image = tape.cross_entropy_rows(logits, batch.match_targets.clone())?;
        let logits_t = tape.transpose(logits);
        let by_text = tape.cross_entropy_rows(logits_t, batch.match_targets.clone())?;
        let total = tape.add(by_image, by_text)?;
        Ok(tape.scale(total, 0.5))
    }

    /// Unit-norm joint embeddings of image inputs (rows × n).
    pub fn embed_images(&self, inputs: &Matrix) -> Result<Matrix, AlignError> {
        let mut tape = Tape::new();
        let v = self.image_embedding_on(&mut tape, inputs)?;
        Ok(tape.value(v).clone())
    }

    /// Unit-norm joint embeddings of token sequences (rows × n).
    pub fn embed_texts(&self, sequences: &[Vec<usize>]) -> Result<Matrix, AlignError> {
        let mut tape = Tape::new();
        let v = self.text_embedding_on(&mut tape, sequences)?;
        Ok(tape.value(v).clone())
    }

    pub fn embed_captions<S: AsRef<str>>(&self, captions: &[S]) -> Result<Matrix, AlignError> {
        let seqs: Vec<Vec<usize>> = captions
            .iter()
            .map(|c| crate::dataset::tokenize(c.as_ref(), &self.vocab))
            .collect();
        self.embed_texts(&seqs)
    }
}

/// `(normalize(E_v(x)·Wv), normalize(E_t(ids)·Wt))` for a batch.
pub fn joint_embed(model: &AlignmentModel, batch: &Batch) -> Result<(Matrix, Matrix), AlignError> {
    Ok((
        model.embed_images(&batch.image_inputs)?,
        model.embed_texts(&batch.token_ids)?,
    ))
}

/// `exp(tau) · Fv · Ftᵀ`.
pub fn similarity_logits(fv: &Matrix, ft: &Matrix, tau: f64) -> Result<Matrix, AlignError> {
    Ok(fv.matmul_t(ft)?.scale(tau.exp()))
}

/// Mean of row-wise and column-wise cross-entropy with diagonal targets.
pub fn symmetric_loss(logits: &Matrix) -> Result<f64, AlignError> {
    let b = logits.rows();
    if b != logits.cols() || b < 2 {
        return Err(AlignError::InvalidConfig(format!(
            "symmetric loss needs a square matrix with B >= 2, got {:?}",
            logits.shape()
        )));
    }
    let targets: Vec<usize> = (0..b).collect();
    let rows = numcore::cross_entropy_rows(logits, &targets)?;
    let cols = numcore::cross_entropy_rows(&logits.transpose(), &targets)?;
    Ok(0.5 * (rows + cols))
}
