//! A synthetic conditional sequence model with exactly computable
//! probabilities.
//!
//! The oracle is a class-conditioned first-order chain: a deterministic
//! function maps the source to a small class, and each `(class, previous
//! token)` state carries a categorical distribution over next tokens. Every
//! probability, marginal, and optimum is enumerable, which lets the decoders
//! and rerankers be checked against brute force.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{log_prob_entry, validate_complete_target, ConditionalSequenceModel};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};
use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Class-conditioned chain model over a fixed vocabulary with an explicit
/// prior over its prompt support.
#[derive(Debug, Clone)]
pub struct OracleModel {
    vocab: Vocabulary,
    classes: usize,
    /// `transitions[class][prev_token]` is a categorical over next tokens.
    /// The EOS row is absorbing and never consulted.
    transitions: Vec<Vec<Vec<f64>>>,
    prompt_support: Vec<(TokenSequence, f64)>,
}

impl OracleModel {
    pub fn new(
        vocab: Vocabulary,
        classes: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        prompt_support: Vec<(TokenSequence, f64)>,
    ) -> Result<Self> {
        let model = Self {
            vocab,
            classes,
            transitions,
            prompt_support,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let v = self.vocab.len();
        if self.classes == 0 {
            return Err(Error::InvalidModel("classes must be >= 1".into()));
        }
        if self.transitions.len() != self.classes {
            return Err(Error::InvalidModel(format!(
                "expected {} class tables, found {}",
                self.classes,
                self.transitions.len()
            )));
        }
        for (c, table) in self.transitions.iter().enumerate() {
            if table.len() != v {
                return Err(Error::InvalidModel(format!(
                    "class {c}: expected {v} rows, found {}",
                    table.len()
                )));
            }
            for (t, row) in table.iter().enumerate() {
                if t as TokenId == self.vocab.eos_id() {
                    continue; // absorbing; contents ignored
                }
                if row.len() != v {
                    return Err(Error::InvalidModel(format!(
                        "class {c} token {t}: row length {} != vocab size {v}",
                        row.len()
                    )));
                }
                let mut sum = 0.0;
                for &p in row {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidModel(format!(
                            "class {c} token {t}: probability {p} out of range"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "class {c} token {t}: row sums to {sum}"
                    )));
                }
            }
            self.check_eos_reachable(c)?;
        }

        if self.prompt_support.is_empty() {
            return Err(Error::InvalidModel("prompt support is empty".into()));
        }
        let mut prior_sum = 0.0;
        for (prompt, prior) in &self.prompt_support {
            prompt.validate_ids(&self.vocab)?;
            if prompt.is_empty() {
                return Err(Error::InvalidModel("empty prompt in support".into()));
            }
            if prompt
                .ids()
                .iter()
                .any(|&id| id == self.vocab.sos_id() || id == self.vocab.eos_id())
            {
                return Err(Error::InvalidModel(
                    "prompts must not contain sentinel tokens".into(),
                ));
            }
            if !(0.0..=1.0).contains(prior) {
                return Err(Error::InvalidModel(format!("prior {prior} out of range")));
            }
            prior_sum += prior;
        }
        if (prior_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "prompt priors sum to {prior_sum}"
            )));
        }
        Ok(())
    }

    /// EOS must be reachable (via nonzero transitions) from every token state
    /// of every class, which guarantees a finite expected length.
    fn check_eos_reachable(&self, class: usize) -> Result<()> {
        let v = self.vocab.len();
        let eos = self.vocab.eos_id() as usize;
        // Backward closure from EOS.
        let mut reaches = vec![false; v];
        reaches[eos] = true;
        loop {
            let mut changed = false;
            for t in 0..v {
                if reaches[t] || t == eos {
                    continue;
                }
                let row = &self.transitions[class][t];
                if row.iter().enumerate().any(|(n, &p)| p > 0.0 && reaches[n]) {
                    reaches[t] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for (t, ok) in reaches.iter().enumerate() {
            if !ok {
                return Err(Error::InvalidModel(format!(
                    "class {class}: end-of-sequence unreachable from token {t}"
                )));
            }
        }
        Ok(())
    }

    /// Deterministic source class: sum of token ids modulo the class count.
    pub fn source_class(&self, source: &TokenSequence) -> usize {
        let sum: u64 = source.ids().iter().map(|&id| u64::from(id)).sum();
        (sum % self.classes as u64) as usize
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn prompt_support(&self) -> &[(TokenSequence, f64)] {
        &self.prompt_support
    }

    pub fn transition_row(&self, class: usize, prev: TokenId) -> &[f64] {
        &self.transitions[class][prev as usize]
    }

    /// Exact marginal probability of a complete target under the prompt
    /// prior: `sum over support of prior(x) * P(target | x)`. Enumeration,
    /// no sampling.
    pub fn marginal(&self, target: &TokenSequence) -> Result<f64> {
        validate_complete_target(&self.vocab, target)?;
        let mut total = 0.0;
        for (prompt, prior) in &self.prompt_support {
            total += prior * self.sequence_log_prob(prompt, target)?.exp();
        }
        Ok(total)
    }

    /// Draws a complete sequence stepwise; a forced EOS caps generation at
    /// `max_len` predicted symbols.
    pub fn sample(
        &self,
        source: &TokenSequence,
        rng: &mut impl Rng,
        max_len: usize,
    ) -> TokenSequence {
        assert!(max_len >= 2, "max_len must be >= 2");
        let class = self.source_class(source);
        let mut seq = TokenSequence::start(&self.vocab);
        let eos = self.vocab.eos_id();
        for step in 1..=max_len {
            if step == max_len {
                seq.push(eos);
                break;
            }
            let row = self.transition_row(class, seq.last().unwrap());
            let dist = WeightedIndex::new(row).expect("validated row");
            let next = dist.sample(rng) as TokenId;
            seq.push(next);
            if next == eos {
                break;
            }
        }
        seq
    }

    /// Draws a prompt from the support prior.
    pub fn sample_prompt(&self, rng: &mut impl Rng) -> &TokenSequence {
        let dist = WeightedIndex::new(self.prompt_support.iter().map(|(_, p)| *p))
            .expect("validated prior");
        &self.prompt_support[dist.sample(rng)].0
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: OracleFile = serde_json::from_str(text)?;
        file.into_model()
    }
}

impl ConditionalSequenceModel for OracleModel {
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
        let class = self.source_class(source);
        Ok(self.transition_row(class, prefix.last().unwrap()).to_vec())
    }

    fn sequence_log_prob(&self, source: &TokenSequence, target: &TokenSequence) -> Result<f64> {
        source.validate_ids(&self.vocab)?;
        validate_complete_target(&self.vocab, target)?;
        let class = self.source_class(source);
        let mut logp = 0.0;
        for i in 1..target.len() {
            let row = self.transition_row(class, target.ids()[i - 1]);
            logp += log_prob_entry(row, target.ids()[i])?;
        }
        Ok(logp)
    }

    fn marginal_log_prob(&self, target: &TokenSequence) -> Option<f64> {
        self.marginal(target).ok().map(|p| {
            if p > 0.0 {
                p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
    }
}

/// On-disk oracle definition.
///
/// `transitions` maps class index (as a decimal string, JSON keys being
/// strings) to a map from previous-token string to a probability list over
/// the vocabulary in `vocab` order.
#[derive(Debug, Serialize, Deserialize)]
pub struct OracleFile {
    pub vocab: Vec<String>,
    pub classes: usize,
    pub transitions: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub prompts: Vec<PromptEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PromptEntry {
    pub tokens: Vec<String>,
    pub prior: f64,
}

impl OracleFile {
    /// Serializes a model back into the on-disk schema.
    pub fn from_model(model: &OracleModel) -> Self {
        let vocab = model.vocabulary();
        let mut transitions = BTreeMap::new();
        for class in 0..model.classes() {
            let mut rows = BTreeMap::new();
            for t in 0..vocab.len() as TokenId {
                if t == vocab.eos_id() {
                    continue;
                }
                rows.insert(
                    vocab.token(t).expect("valid id").to_string(),
                    model.transition_row(class, t).to_vec(),
                );
            }
            transitions.insert(class.to_string(), rows);
        }
        let prompts = model
            .prompt_support()
            .iter()
            .map(|(seq, prior)| PromptEntry {
                tokens: seq
                    .ids()
                    .iter()
                    .map(|&id| vocab.token(id).expect("valid id").to_string())
                    .collect(),
                prior: *prior,
            })
            .collect();
        Self {
            vocab: vocab.tokens().to_vec(),
            classes: model.classes(),
            transitions,
            prompts,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn into_model(self) -> Result<OracleModel> {
        let vocab = Vocabulary::new(self.vocab)?;
        let v = vocab.len();
        let eos = vocab.eos_id() as usize;
        let mut transitions = vec![vec![Vec::new(); v]; self.classes];
        for (class_key, rows) in &self.transitions {
            let class: usize = class_key
                .parse()
                .map_err(|_| Error::InvalidModel(format!("bad class key {class_key:?}")))?;
            if class >= self.classes {
                return Err(Error::InvalidModel(format!(
                    "class key {class} out of range (classes = {})",
                    self.classes
                )));
            }
            for (token, row) in rows {
                let id = vocab.lookup(token).ok_or_else(|| {
                    Error::InvalidModel(format!("transition row for unknown token {token:?}"))
                })? as usize;
                transitions[class][id] = row.clone();
            }
        }
        // Every non-EOS state needs a row; fill the ignored EOS rows with
        // zeros so shapes line up.
        for (c, table) in transitions.iter_mut().enumerate() {
            for (t, row) in table.iter_mut().enumerate() {
                if row.is_empty() {
                    if t == eos {
                        *row = vec![0.0; v];
                    } else {
                        return Err(Error::InvalidModel(format!(
                            "class {c}: missing transition row for token {:?}",
                            vocab.token(t as TokenId).unwrap_or("?")
                        )));
                    }
                }
            }
        }
        let mut prompt_support = Vec::with_capacity(self.prompts.len());
        for entry in &self.prompts {
            let mut ids = Vec::with_capacity(entry.tokens.len());
            for tok in &entry.tokens {
                let id = vocab.lookup(tok).ok_or_else(|| {
                    Error::InvalidModel(format!("prompt token {tok:?} not in vocabulary"))
                })?;
                ids.push(id);
            }
            prompt_support.push((TokenSequence::new(ids), entry.prior));
        }
        OracleModel::new(vocab, self.classes, transitions, prompt_support)
    }
}

/// Brute-force enumeration utilities. These deliberately share no code with
/// the decoders they are used to verify.
pub mod exhaustive {
    use super::*;

    /// Every complete target with at most `max_predicted` predicted symbols
    /// (interior tokens range over the whole vocabulary except EOS).
    pub fn all_complete_sequences(vocab: &Vocabulary, max_predicted: usize) -> Vec<TokenSequence> {
        let mut out = Vec::new();
        let sos = vocab.sos_id();
        let eos = vocab.eos_id();
        let interior: Vec<TokenId> = (0..vocab.len() as TokenId).filter(|&t| t != eos).collect();
        let mut stack: Vec<Vec<TokenId>> = vec![vec![sos]];
        while let Some(prefix) = stack.pop() {
            let predicted = prefix.len(); // prefix plus EOS
            if predicted <= max_predicted {
                let mut done = prefix.clone();
                done.push(eos);
                out.push(TokenSequence::new(done));
            }
            if prefix.len() < max_predicted {
                for &t in &interior {
                    let mut next = prefix.clone();
                    next.push(t);
                    stack.push(next);
                }
            }
        }
        out.sort();
        out
    }

    /// Exact argmax of `P(y | x)` over all complete targets of bounded
    /// length. Ties break toward the lexicographically smaller sequence.
    pub fn best_sequence(
        model: &dyn ConditionalSequenceModel,
        source: &TokenSequence,
        max_predicted: usize,
    ) -> Result<(TokenSequence, f64)> {
        let mut best: Option<(TokenSequence, f64)> = None;
        for seq in all_complete_sequences(model.vocabulary(), max_predicted) {
            let logp = model.sequence_log_prob(source, &seq)?;
            let better = match &best {
                None => true,
                Some((b_seq, b_logp)) => logp > *b_logp || (logp == *b_logp && seq < *b_seq),
            };
            if better {
                best = Some((seq, logp));
            }
        }
        best.ok_or_else(|| Error::InsufficientData("no complete sequences".into()))
    }

    /// Total probability mass over all complete targets of bounded length.
    pub fn total_mass(
        model: &dyn ConditionalSequenceModel,
        source: &TokenSequence,
        max_predicted: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for seq in all_complete_sequences(model.vocabulary(), max_predicted) {
            total += model.sequence_log_prob(source, &seq)?.exp();
        }
        Ok(total)
    }

    /// The oracle's true mean per-token conditional entropy (nats), computed
    /// by propagating the exact state distribution of the chain under the
    /// prompt prior: `E[sum of -ln P(y_i | state_i)] / E[length]`.
    pub fn entropy_rate(oracle: &OracleModel) -> f64 {
        let v = oracle.vocabulary().len();
        let eos = oracle.vocabulary().eos_id() as usize;
        let sos = oracle.vocabulary().sos_id() as usize;
        // Live-state weights per (class, previous token).
        let mut weight = vec![vec![0.0f64; v]; oracle.classes()];
        for (prompt, prior) in oracle.prompt_support() {
            weight[oracle.source_class(prompt)][sos] += prior;
        }
        let mut entropy_sum = 0.0;
        let mut token_sum = 0.0;
        for _ in 0..100_000 {
            let live: f64 = weight.iter().flatten().sum();
            if live < 1e-15 {
                break;
            }
            let mut next = vec![vec![0.0f64; v]; oracle.classes()];
            for (c, per_token) in weight.iter().enumerate() {
                for (t, &w) in per_token.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    token_sum += w;
                    let row = oracle.transition_row(c, t as TokenId);
                    for (n, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            entropy_sum += w * p * (-p.ln());
                            if n != eos {
                                next[c][n] += w * p;
                            }
                        }
                    }
                }
            }
            weight = next;
        }
        entropy_sum / token_sum
    }
}
