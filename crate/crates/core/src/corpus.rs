//! Data preparation: reply-tree extraction into prompt-response pairs,
//! whitespace tokenization, vocabulary building, and synthetic corpus
//! generation from the oracle.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::OracleModel;
use crate::vocab::{TokenSequence, Vocabulary};
use crate::{par, Error, Result};

/// One message in a reply tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreadMessage {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub text: String,
}

/// A prompt-response pair (raw text).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Pair {
    pub prompt: String,
    pub response: String,
}

/// Counters for rows dropped during extraction.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ExtractStats {
    /// Messages whose parent_id does not resolve within the file.
    pub dangling_parents: usize,
    /// Duplicate ids (later occurrences dropped).
    pub duplicate_ids: usize,
    /// Pairs skipped because one side normalizes to nothing.
    pub empty_sides: usize,
}

/// Emits one pair per (parent, child) edge, prompt = parent text, response =
/// child text, ordered depth-first by id from each root.
pub fn extract_pairs(messages: &[ThreadMessage]) -> (Vec<Pair>, ExtractStats) {
    let mut stats = ExtractStats::default();
    let mut by_id: BTreeMap<&str, &ThreadMessage> = BTreeMap::new();
    for msg in messages {
        if by_id.insert(msg.id.as_str(), msg).is_some() {
            stats.duplicate_ids += 1;
        }
    }
    let mut children: BTreeMap<&str, Vec<&ThreadMessage>> = BTreeMap::new();
    let mut roots: Vec<&ThreadMessage> = Vec::new();
    for msg in by_id.values() {
        match &msg.parent_id {
            None => roots.push(msg),
            Some(pid) => {
                if by_id.contains_key(pid.as_str()) {
                    children.entry(pid.as_str()).or_default().push(msg);
                } else {
                    stats.dangling_parents += 1;
                }
            }
        }
    }
    // DFS from each root; children visited in id order. Each (parent, child)
    // edge becomes a pair at the moment the child is reached.
    let mut pairs = Vec::new();
    let mut stack: Vec<(Option<&ThreadMessage>, &ThreadMessage)> =
        roots.into_iter().rev().map(|r| (None, r)).collect();
    while let Some((parent, node)) = stack.pop() {
        if let Some(parent) = parent {
            if tokenize_text(&parent.text).is_empty() || tokenize_text(&node.text).is_empty() {
                stats.empty_sides += 1;
            } else {
                pairs.push(Pair {
                    prompt: parent.text.clone(),
                    response: node.text.clone(),
                });
            }
        }
        if let Some(kids) = children.get(node.id.as_str()) {
            for kid in kids.iter().rev() {
                stack.push((Some(node), kid));
            }
        }
    }
    (pairs, stats)
}

/// Normalizing tokenizer: lowercase, split on whitespace, punctuation
/// separated as single-character tokens.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ch.is_ascii_punctuation() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_string());
        } else {
            for lower in ch.to_lowercase() {
                word.push(lower);
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Maps text onto vocabulary ids; unknown tokens become `unk`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    TokenSequence::new(
        tokenize_text(text)
            .iter()
            .map(|t| vocab.lookup_or_unk(t))
            .collect(),
    )
}

/// Inverse of `tokenize` up to the declared normalization (lowercase, single
/// spaces, punctuation as standalone tokens). Sentinels are dropped.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in seq.ids() {
        if id == vocab.sos_id() || id == vocab.eos_id() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(vocab.token(id).unwrap_or("<bad>"));
    }
    out
}

/// Keeps the most frequent tokens (ties by lexicographic order); sentinels
/// always occupy indices 0, 1, 2.
pub fn build_vocab(pairs: &[Pair], max_size: usize) -> Result<Vocabulary> {
    if max_size < 4 {
        return Err(Error::MalformedInput(
            "vocabulary size must be at least 4".into(),
        ));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for pair in pairs {
        for tok in tokenize_text(&pair.prompt)
            .into_iter()
            .chain(tokenize_text(&pair.response))
        {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let content = ranked.into_iter().take(max_size - 3).map(|(tok, _)| tok);
    Vocabulary::with_content(content)
}

/// A pair in token form.
#[derive(Debug, Clone)]
pub struct TokenPair {
    pub prompt: TokenSequence,
    /// Complete target: SOS ... EOS.
    pub response: TokenSequence,
}

/// Draws prompts from the oracle prior and responses from its chain,
/// emitting both text and token forms.
pub fn synth_corpus(
    oracle: &OracleModel,
    n_pairs: usize,
    rng: &mut impl Rng,
    max_len: usize,
) -> (Vec<Pair>, Vec<TokenPair>) {
    let vocab = crate::model::ConditionalSequenceModel::vocabulary(oracle);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut tokens = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let prompt = oracle.sample_prompt(rng).clone();
        let response = oracle.sample(&prompt, rng, max_len);
        pairs.push(Pair {
            prompt: detokenize(&prompt, vocab),
            response: detokenize(&response, vocab),
        });
        tokens.push(TokenPair { prompt, response });
    }
    (pairs, tokens)
}

/// Tokenizes a text corpus into (prompt, SOS..EOS response) pairs.
pub fn tokenize_pairs(pairs: &[Pair], vocab: &Vocabulary) -> Vec<TokenPair> {
    par::map_indexed(pairs, |_, pair| {
        let prompt = tokenize(&pair.prompt, vocab);
        let mut response = TokenSequence::start(vocab);
        response.extend_from(&tokenize(&pair.response, vocab));
        response.push(vocab.eos_id());
        TokenPair { prompt, response }
    })
}

/// Reads JSON-lines `{"id","parent_id","text"}`; malformed rows are counted
/// and skipped.
pub fn read_thread_file(path: impl AsRef<Path>) -> Result<(Vec<ThreadMessage>, usize)> {
    let file = std::fs::File::open(path)?;
    read_thread_lines(file)
}

pub fn read_thread_lines(r: impl Read) -> Result<(Vec<ThreadMessage>, usize)> {
    let reader = BufReader::new(r);
    let mut messages = Vec::new();
    let mut malformed = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ThreadMessage>(&line) {
            Ok(msg) => messages.push(msg),
            Err(_) => malformed += 1,
        }
    }
    Ok((messages, malformed))
}

/// Pair corpus JSON-lines: `{"prompt","response"}` per line.
pub fn write_pairs(pairs: &[Pair], mut w: impl Write) -> Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_pairs(r: impl Read) -> Result<Vec<Pair>> {
    let reader = BufReader::new(r);
    let mut pairs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str::<Pair>(&line)?);
    }
    Ok(pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    read_pairs(std::fs::File::open(path)?)
}

pub fn save_pairs(pairs: &[Pair], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_pairs(pairs, std::io::BufWriter::new(file))
}
