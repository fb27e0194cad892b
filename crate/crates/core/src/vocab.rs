//! Vocabulary and token-sequence types shared by every model and decoder.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use crate::{Error, Result};

pub type TokenId = u32;

/// Reserved sentinel strings. `build_vocab` places them at indices 0, 1, 2.
pub const SOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// An ordered set of distinct token strings with start/end/unknown sentinels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    sos_id: TokenId,
    eos_id: TokenId,
    unk_id: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. The three sentinel
    /// strings must appear in the list; their positions become the sentinel
    /// ids. All token strings must be distinct.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidModel(format!("duplicate token {tok:?}")));
            }
        }
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidModel(format!("vocabulary lacks sentinel {name:?}")))
        };
        let sos_id = find(SOS_TOKEN)?;
        let eos_id = find(EOS_TOKEN)?;
        let unk_id = find(UNK_TOKEN)?;
        Ok(Self {
            tokens,
            index,
            sos_id,
            eos_id,
            unk_id,
        })
    }

    /// Sentinels followed by the given content tokens, in order.
    pub fn with_content(content: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens = vec![
            SOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        tokens.extend(content);
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sos_id(&self) -> TokenId {
        self.sos_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id for an in-vocabulary string; `None` if unknown.
    pub fn lookup(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id for a string, falling back to the unknown sentinel.
    pub fn lookup_or_unk(&self, token: &str) -> TokenId {
        self.lookup(token).unwrap_or(self.unk_id)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Plain-text format: one token per line, line number = id.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut tokens = Vec::new();
        for line in reader.lines() {
            tokens.push(line?);
        }
        // A trailing newline produces one empty final entry; drop it.
        if tokens.last().is_some_and(String::is_empty) {
            tokens.pop();
        }
        Self::new(tokens)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// A sequence of vocabulary token ids.
///
/// A "complete" target begins with SOS and ends with EOS. Source sequences
/// carry neither sentinel internally; EOS placement on the encoder side is
/// the assembler's job.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self { ids }
    }

    pub fn empty() -> Self {
        Self { ids: Vec::new() }
    }

    /// `[SOS]`, the starting prefix of every target.
    pub fn start(vocab: &Vocabulary) -> Self {
        Self {
            ids: vec![vocab.sos_id()],
        }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.ids.push(id);
    }

    pub fn extend_from(&mut self, other: &TokenSequence) {
        self.ids.extend_from_slice(&other.ids);
    }

    pub fn first(&self) -> Option<TokenId> {
        self.ids.first().copied()
    }

    pub fn last(&self) -> Option<TokenId> {
        self.ids.last().copied()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> TokenSequence {
        TokenSequence::new(self.ids[range].to_vec())
    }

    /// All ids are valid indices into `vocab`.
    pub fn validate_ids(&self, vocab: &Vocabulary) -> Result<()> {
        for &id in &self.ids {
            if !vocab.contains_id(id) {
                return Err(Error::DimensionMismatch(format!(
                    "token id {id} out of range for vocabulary of size {}",
                    vocab.len()
                )));
            }
        }
        Ok(())
    }

    /// SOS-prefixed and EOS-terminated, with at least one predicted symbol.
    pub fn is_complete(&self, vocab: &Vocabulary) -> bool {
        self.ids.len() >= 2
            && self.ids[0] == vocab.sos_id()
            && *self.ids.last().unwrap() == vocab.eos_id()
    }

    /// Number of predicted symbols in a complete target (everything after
    /// SOS, including the final EOS).
    pub fn predicted_len(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }

    /// Checks the prefix contract shared by all conditional models: starts
    /// with SOS, valid ids, and not already complete.
    pub fn validate_prefix(&self, vocab: &Vocabulary) -> Result<()> {
        self.validate_ids(vocab)?;
        if self.first() != Some(vocab.sos_id()) {
            return Err(Error::MalformedInput(
                "prefix must begin with the start-of-sequence token".into(),
            ));
        }
        if self.len() >= 2 && self.last() == Some(vocab.eos_id()) {
            return Err(Error::CompletedSequence);
        }
        Ok(())
    }

    /// Renders ids as token strings joined by spaces.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (i, &id) in self.ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(vocab.token(id).unwrap_or("<bad>"));
        }
        out
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self::new(ids)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.ids)
    }
}
