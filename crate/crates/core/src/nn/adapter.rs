//! `ConditionalSequenceModel` adapter for the encoder-decoder.
//!
//! In glimpse mode the conditional for step `i` re-assembles the encoder
//! input at the enclosing glimpse boundary: the source, then every target
//! token strictly before the glimpse's first decoder-input token, then EOS.
//! The decoder then consumes only the in-glimpse prefix. With glimpse mode
//! off the encoder holds `source ++ EOS` and the decoder consumes the whole
//! prefix.

use crate::glimpse::assemble_encoder_input;
use crate::model::ConditionalSequenceModel;
use crate::nn::seq2seq::{MemoryOrigin, Seq2Seq};
use crate::nn::{AttentionMode, ParamSet};
use crate::vocab::{TokenSequence, Vocabulary};
use crate::{Error, Result};

#[derive(Debug)]
pub struct NeuralSeq2Seq {
    model: Seq2Seq,
    params: ParamSet,
    vocab: Vocabulary,
    /// Segment length the model was trained with; `None` for vanilla
    /// full-prefix conditioning.
    glimpse_k: Option<usize>,
}

impl NeuralSeq2Seq {
    pub fn new(
        model: Seq2Seq,
        params: ParamSet,
        vocab: Vocabulary,
        glimpse_k: Option<usize>,
    ) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary size {} does not match model vocab size {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        if glimpse_k == Some(0) {
            return Err(Error::InvalidModel("glimpse length must be >= 1".into()));
        }
        model.validate_params(&params)?;
        Ok(Self {
            model,
            params,
            vocab,
            glimpse_k,
        })
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn glimpse_k(&self) -> Option<usize> {
        self.glimpse_k
    }

    /// (encoder tokens, in-segment decoder tokens) for predicting position
    /// `i = prefix.len()`.
    fn split_prefix(&self, source: &TokenSequence, prefix: &TokenSequence) -> (TokenSequence, Vec<u32>) {
        let i = prefix.len();
        let start = match self.glimpse_k {
            Some(k) => ((i - 1) / k) * k,
            None => 0,
        };
        let committed = if start == 0 {
            &[][..]
        } else {
            &prefix.ids()[1..start]
        };
        let encoder_input = assemble_encoder_input(source, committed, &self.vocab);
        (encoder_input, prefix.ids()[start..i].to_vec())
    }

    /// Teacher-forced walk over `steps`, returning the distribution after
    /// the last step. When `collect` is set, also returns the probability
    /// assigned to each following token in `outputs`.
    fn run_decoder(
        &self,
        encoder_input: &TokenSequence,
        steps: &[u32],
        outputs: Option<&[u32]>,
    ) -> Result<(Vec<f64>, f64)> {
        let (mut memory, enc_final) = self.model.encode(&self.params, encoder_input)?;
        let mut state = self.model.initial_decoder_state(&enc_final);
        let target_attention = self.model.config().attention == AttentionMode::SourceAndTarget;
        let mut log_sum = 0.0;
        let mut dist = Vec::new();
        for (t, &tok) in steps.iter().enumerate() {
            let (probs, next) = self.model.decode_step(&self.params, &state, tok, &memory)?;
            if let Some(outs) = outputs {
                log_sum += crate::model::log_prob_entry(&probs, outs[t])?;
            }
            if target_attention {
                memory.push(next.top_h().to_vec(), MemoryOrigin::Target(next.step));
            }
            state = next;
            dist = probs;
        }
        Ok((dist, log_sum))
    }
}

impl ConditionalSequenceModel for NeuralSeq2Seq {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_distribution(
        &self,
        source: &TokenSequence,
        prefix: &TokenSequence,
    ) -> Result<Vec<f64>> {
        source.validate_ids(&self.vocab)?;
        prefix.validate_prefix(&self.vocab)?;
        let (encoder_input, steps) = self.split_prefix(source, prefix);
        let (dist, _) = self.run_decoder(&encoder_input, &steps, None)?;
        Ok(dist)
    }

    fn sequence_log_prob(&self, source: &TokenSequence, target: &TokenSequence) -> Result<f64> {
        source.validate_ids(&self.vocab)?;
        crate::model::validate_complete_target(&self.vocab, target)?;
        let n = target.len() - 1;
        let k = self.glimpse_k.unwrap_or(n.max(1));
        let mut log_sum = 0.0;
        let mut j = 0;
        while j * k < n {
            let start = j * k;
            let len = k.min(n - start);
            let committed = if start == 0 {
                &[][..]
            } else {
                &target.ids()[1..start]
            };
            let encoder_input = assemble_encoder_input(source, committed, &self.vocab);
            let steps = &target.ids()[start..start + len];
            let outputs = &target.ids()[start + 1..start + 1 + len];
            let (_, lp) = self.run_decoder(&encoder_input, steps, Some(outputs))?;
            log_sum += lp;
            if log_sum == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            j += 1;
        }
        Ok(log_sum)
    }
}
