//! The conditional sequence-model contract shared by the oracle and the
//! neural models.

use crate::vocab::{TokenSequence, Vocabulary};
use crate::{Error, Result};

/// Mass below this is treated as zero when validating distributions.
pub const DIST_SUM_TOL: f64 = 1e-6;

/// A deterministic next-token distribution `P(y_i | y[0:i-1]; x)`.
///
/// Implementations must be immutable after construction; concurrent read-only
/// queries from multiple threads are safe (`Sync`). All randomness belongs to
/// callers: the interface exposes distributions, never samples.
pub trait ConditionalSequenceModel: Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Distribution over the next token given a source and an SOS-prefixed,
    /// unfinished target prefix. Entries are nonnegative and sum to 1 within
    /// `DIST_SUM_TOL`.
    fn next_token_distribution(
        &self,
        source: &TokenSequence,
        prefix: &TokenSequence,
    ) -> Result<Vec<f64>>;

    /// Natural-log probability of a complete target under the product rule.
    /// Returns `f64::NEG_INFINITY` if any factor is exactly zero.
    fn sequence_log_prob(&self, source: &TokenSequence, target: &TokenSequence) -> Result<f64> {
        validate_complete_target(self.vocabulary(), target)?;
        let mut logp = 0.0;
        for i in 1..target.len() {
            let prefix = target.slice(0..i);
            let dist = self.next_token_distribution(source, &prefix)?;
            logp += log_prob_entry(&dist, target.ids()[i])?;
        }
        Ok(logp)
    }

    /// Exact marginal log-probability `log P(y)` for models that carry an
    /// enumerable prompt prior. `None` means callers must estimate it from a
    /// prompt pool.
    fn marginal_log_prob(&self, _target: &TokenSequence) -> Option<f64> {
        None
    }
}

/// Log of one distribution entry with zero mapped to `NEG_INFINITY`.
pub fn log_prob_entry(dist: &[f64], id: crate::vocab::TokenId) -> Result<f64> {
    let p = *dist.get(id as usize).ok_or_else(|| {
        Error::DimensionMismatch(format!(
            "token id {id} out of range for distribution of size {}",
            dist.len()
        ))
    })?;
    Ok(if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
}

pub fn validate_complete_target(vocab: &Vocabulary, target: &TokenSequence) -> Result<()> {
    target.validate_ids(vocab)?;
    if target.first() != Some(vocab.sos_id()) {
        return Err(Error::MalformedInput(
            "target must begin with the start-of-sequence token".into(),
        ));
    }
    if target.len() < 2 || target.last() != Some(vocab.eos_id()) {
        return Err(Error::MalformedInput(
            "target must end with the end-of-sequence token".into(),
        ));
    }
    // EOS may appear only as the final symbol.
    if target.ids()[..target.len() - 1]
        .iter()
        .skip(1)
        .any(|&id| id == vocab.eos_id())
    {
        return Err(Error::MalformedInput(
            "target contains an interior end-of-sequence token".into(),
        ));
    }
    Ok(())
}

/// Checks nonnegativity and unit mass of a distribution.
pub fn validate_distribution(dist: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &p in dist {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::DegenerateDistribution(format!(
                "entry {p} is negative or non-finite"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > DIST_SUM_TOL {
        return Err(Error::DegenerateDistribution(format!(
            "mass sums to {sum}, expected 1"
        )));
    }
    Ok(())
}
