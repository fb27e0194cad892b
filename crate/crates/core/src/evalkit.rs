//! Automatic evaluation: retrieval accuracy under three scoring schemes,
//! plus length and diversity statistics.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize_text;
use crate::decode::{draw_phi, PromptPool};
use crate::model::ConditionalSequenceModel;
use crate::vocab::TokenSequence;
use crate::{par, rng, Error, Result};

/// One retrieval trial: rank the true response among distractors drawn from
/// other pairs.
#[derive(Debug, Clone)]
pub struct RetrievalTrial {
    pub prompt: TokenSequence,
    pub true_response: TokenSequence,
    pub distractors: Vec<TokenSequence>,
}

/// How candidates are scored when the model acts as a retriever.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringScheme {
    /// log P(y|x)
    NoNorm,
    /// log P(y|x) - log P(y)
    MarginalNorm,
    /// log P(y|x) - log sum over a Q-prompt sample of P(y|x')
    PromptNorm { q: usize },
}

impl ScoringScheme {
    pub fn name(&self) -> &'static str {
        match self {
            ScoringScheme::NoNorm => "no_norm",
            ScoringScheme::MarginalNorm => "marginal_norm",
            ScoringScheme::PromptNorm { .. } => "prompt_norm",
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Marginal log-probability: exact when the model can enumerate its prompt
/// prior, otherwise the mean of `P(y|x')` over the whole pool.
fn marginal_log_prob(
    model: &dyn ConditionalSequenceModel,
    candidate: &TokenSequence,
    pool: &PromptPool,
) -> Result<f64> {
    if let Some(m) = model.marginal_log_prob(candidate) {
        return Ok(m);
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut terms = Vec::with_capacity(pool.len());
    for prompt in pool.prompts() {
        terms.push(model.sequence_log_prob(prompt, candidate)?);
    }
    Ok(log_sum_exp(&terms) - (pool.len() as f64).ln())
}

/// Scores one complete candidate against a fixed normalization prompt set.
fn score_with_phi(
    scheme: ScoringScheme,
    model: &dyn ConditionalSequenceModel,
    prompt: &TokenSequence,
    candidate: &TokenSequence,
    pool: &PromptPool,
    phi: &[usize],
) -> Result<f64> {
    let conditional = model.sequence_log_prob(prompt, candidate)?;
    match scheme {
        ScoringScheme::NoNorm => Ok(conditional),
        ScoringScheme::MarginalNorm => {
            let m = marginal_log_prob(model, candidate, pool)?;
            Ok(conditional - m)
        }
        ScoringScheme::PromptNorm { .. } => {
            let mut terms = Vec::with_capacity(phi.len());
            for &i in phi {
                terms.push(model.sequence_log_prob(&pool.prompts()[i], candidate)?);
            }
            let denom = log_sum_exp(&terms);
            if conditional == f64::NEG_INFINITY {
                // guarded 0/0: an impossible candidate scores minimally
                return Ok(f64::NEG_INFINITY);
            }
            Ok(conditional - denom)
        }
    }
}

/// Whole-sequence candidate score under a scheme. Prompt-normalized scoring
/// draws its Q-prompt sample from `rng`.
pub fn score_candidate(
    scheme: ScoringScheme,
    model: &dyn ConditionalSequenceModel,
    prompt: &TokenSequence,
    candidate: &TokenSequence,
    pool: &PromptPool,
    rng: &mut impl Rng,
) -> Result<f64> {
    let phi = match scheme {
        ScoringScheme::PromptNorm { q } => draw_phi(pool, q, Some(prompt), rng)?,
        _ => Vec::new(),
    };
    score_with_phi(scheme, model, prompt, candidate, pool, &phi)
}

/// Evaluation report for one retrieval run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: String,
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub accuracy: f64,
    pub ci95: f64,
}

/// Builds the trial for one index from its deterministic substream.
fn build_trial(
    dataset: &[(TokenSequence, TokenSequence)],
    n: usize,
    rng: &mut impl Rng,
) -> Result<RetrievalTrial> {
    let pair_idx = rng.gen_range(0..dataset.len());
    let (prompt, true_response) = dataset[pair_idx].clone();
    let mut order: Vec<usize> = (0..dataset.len()).filter(|&i| i != pair_idx).collect();
    // Fisher-Yates, then take the first acceptable candidates
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut distractors = Vec::with_capacity(n - 1);
    for idx in order {
        if distractors.len() == n - 1 {
            break;
        }
        if dataset[idx].1 != true_response {
            distractors.push(dataset[idx].1.clone());
        }
    }
    if distractors.len() < n - 1 {
        return Err(Error::InsufficientData(format!(
            "could not draw {} distinct distractors",
            n - 1
        )));
    }
    Ok(RetrievalTrial {
        prompt,
        true_response,
        distractors,
    })
}

/// N-choose-K retrieval accuracy with a custom scorer. Ties count against
/// the true response, so reported accuracy is a lower bound. Trials run in
/// parallel on deterministic per-trial substreams.
pub fn n_choose_k_with_scorer<F>(
    dataset: &[(TokenSequence, TokenSequence)],
    n: usize,
    k: usize,
    trials: usize,
    seed: u64,
    scorer: F,
) -> Result<f64>
where
    F: Fn(&TokenSequence, &TokenSequence, &mut rand_chacha::ChaCha8Rng) -> Result<f64>
        + Sync
        + Send,
{
    if n < 2 || k >= n {
        return Err(Error::MalformedInput("need N >= 2 and K < N".into()));
    }
    if dataset.len() < n {
        return Err(Error::InsufficientData(format!(
            "dataset has {} pairs, need at least {n}",
            dataset.len()
        )));
    }
    let results = par::map_range(trials, |i| -> Result<bool> {
        let mut trial_rng = rng::substream(seed, "trial", i as u64);
        let trial = build_trial(dataset, n, &mut trial_rng)?;
        let true_score = scorer(&trial.prompt, &trial.true_response, &mut trial_rng)?;
        let mut beaten_or_tied = 0usize;
        for distractor in &trial.distractors {
            let s = scorer(&trial.prompt, distractor, &mut trial_rng)?;
            if s >= true_score {
                beaten_or_tied += 1;
            }
        }
        Ok(beaten_or_tied < k)
    });
    let mut hits = 0usize;
    for r in results {
        if r? {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

/// N-choose-K accuracy under a scoring scheme. For prompt normalization the
/// Q-prompt sample is drawn once per trial and shared by all candidates of
/// that trial.
#[allow(clippy::too_many_arguments)]
pub fn n_choose_k(
    model: &dyn ConditionalSequenceModel,
    dataset: &[(TokenSequence, TokenSequence)],
    n: usize,
    k: usize,
    scheme: ScoringScheme,
    pool: &PromptPool,
    trials: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n < 2 || k >= n {
        return Err(Error::MalformedInput("need N >= 2 and K < N".into()));
    }
    if dataset.len() < n {
        return Err(Error::InsufficientData(format!(
            "dataset has {} pairs, need at least {n}",
            dataset.len()
        )));
    }
    let results = par::map_range(trials, |i| -> Result<bool> {
        let mut trial_rng = rng::substream(seed, "trial", i as u64);
        let trial = build_trial(dataset, n, &mut trial_rng)?;
        let phi = match scheme {
            ScoringScheme::PromptNorm { q } => {
                draw_phi(pool, q, Some(&trial.prompt), &mut trial_rng)?
            }
            _ => Vec::new(),
        };
        let true_score = score_with_phi(
            scheme,
            model,
            &trial.prompt,
            &trial.true_response,
            pool,
            &phi,
        )?;
        let mut beaten_or_tied = 0usize;
        for distractor in &trial.distractors {
            let s = score_with_phi(scheme, model, &trial.prompt, distractor, pool, &phi)?;
            if s >= true_score {
                beaten_or_tied += 1;
            }
        }
        Ok(beaten_or_tied < k)
    });
    let mut hits = 0usize;
    for r in results {
        if r? {
            hits += 1;
        }
    }
    let accuracy = hits as f64 / trials as f64;
    let ci95 = 1.96 * (accuracy * (1.0 - accuracy) / trials as f64).sqrt();
    Ok(EvalReport {
        scheme: scheme.name().to_string(),
        n,
        k,
        trials,
        accuracy,
        ci95,
    })
}

/// One row of the length report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LengthRow {
    pub threshold: usize,
    pub count: usize,
    pub fraction: f64,
}

/// Counts responses strictly longer (in characters) than each threshold.
pub fn length_stats(responses: &[String], thresholds: &[usize]) -> Vec<LengthRow> {
    thresholds
        .iter()
        .map(|&threshold| {
            let count = responses
                .iter()
                .filter(|r| r.chars().count() > threshold)
                .count();
            LengthRow {
                threshold,
                count,
                fraction: if responses.is_empty() {
                    0.0
                } else {
                    count as f64 / responses.len() as f64
                },
            }
        })
        .collect()
}

/// Distinct token n-grams over total token n-grams across the response set.
pub fn distinct_ngram_ratio(responses: &[String], n: usize) -> f64 {
    assert!(n >= 1);
    let mut distinct: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for response in responses {
        let toks = tokenize_text(response);
        if toks.len() < n {
            continue;
        }
        for window in toks.windows(n) {
            distinct.insert(window.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        distinct.len() as f64 / total as f64
    }
}
