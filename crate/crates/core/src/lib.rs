//! Small-scale toolkit for conversation response generation: trainable
//! encoder-decoder models with additive attention, glimpse-segmented training
//! data, stochastic segment-by-segment reranked decoding, and retrieval-style
//! evaluation. An exactly enumerable oracle model backs the test suite so
//! search and scoring code can be verified by brute force.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod evalkit;
pub mod fixtures;
pub mod glimpse;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod vocab;

pub use error::Error;
pub use model::ConditionalSequenceModel;
pub use vocab::{TokenId, TokenSequence, Vocabulary};

pub type Result<T> = std::result::Result<T, Error>;
