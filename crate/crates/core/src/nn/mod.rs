//! A small trainable encoder-decoder with additive attention, written with
//! explicit forward and backward passes so gradients can be verified with
//! finite differences.

mod adapter;
mod attention;
mod cell;
mod checkpoint;
mod linalg;
mod optim;
mod params;
mod seq2seq;

pub use adapter::NeuralSeq2Seq;
pub use attention::{attention_backward, attention_forward, AttentionCache, AttentionWeights};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use optim::{adam_step, sgd_step, AdamParams, AdamState};
pub use params::{init_params, param_shapes, ParamSet, Tensor};
pub use seq2seq::{AttentionMemory, DecoderState, MemoryOrigin, Seq2Seq};

/// Which positions the decoder may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Encoder annotations only.
    SourceOnly,
    /// Encoder annotations plus the decoder's own earlier hidden states.
    SourceAndTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub attention: AttentionMode,
    /// Connect the encoder's final hidden state to the decoder's initial
    /// state, giving glimpses access to everything before them.
    pub carry_encoder_state: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            num_layers: 1,
            attention: AttentionMode::SourceOnly,
            carry_encoder_state: true,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.vocab_size < 1
            || self.embed_dim < 1
            || self.hidden_dim < 1
            || self.num_layers < 1
        {
            return Err(crate::Error::InvalidModel(
                "all model dimensions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
