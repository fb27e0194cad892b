//! Run configuration: a flat key=value schema loadable from a file, with
//! command-line overrides applied on top. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    // inputs
    pub vocab: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub prompt_pool: Option<PathBuf>,
    pub responses: Option<PathBuf>,

    // model
    pub variant: String, // vanilla | target_attention | glimpse
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub carry_encoder_state: bool,
    pub glimpse_k: usize,

    // decoding
    pub beams: usize,
    pub samples_per_beam: usize,
    pub segment_len: usize,
    pub q_prompts: usize,
    pub alpha: f64,
    pub max_segments: usize,
    pub backoff_threshold: usize,
    pub max_len: usize,
    pub strategy: String, // beam | beam_lennorm | segment | backoff

    // training
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: String, // adam | sgd
    pub ppl_every: usize,
    pub ppl_pairs: usize,
    pub checkpoint_every: usize,
    pub resume: bool,

    // corpus preparation
    pub n_pairs: usize,
    pub max_vocab: usize,
    pub synth_max_len: usize,

    // evaluation
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub scheme: String, // no_norm | marginal_norm | prompt_norm
    pub thresholds: Vec<usize>,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vocab: None,
            pairs: None,
            checkpoint: None,
            oracle: None,
            prompt_pool: None,
            responses: None,
            variant: "glimpse".into(),
            embed_dim: 32,
            hidden_dim: 64,
            num_layers: 1,
            carry_encoder_state: true,
            glimpse_k: 10,
            beams: 2,
            samples_per_beam: 10,
            segment_len: 10,
            q_prompts: 15,
            alpha: 0.8,
            max_segments: 8,
            backoff_threshold: 40,
            max_len: 80,
            strategy: "segment".into(),
            steps: 500,
            batch_size: 8,
            lr: 3e-3,
            optimizer: "adam".into(),
            ppl_every: 0,
            ppl_pairs: 64,
            checkpoint_every: 0,
            resume: false,
            n_pairs: 1000,
            max_vocab: 1000,
            synth_max_len: 40,
            n: 10,
            k: 1,
            trials: 1000,
            scheme: "no_norm".into(),
            thresholds: vec![40, 100],
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Loads the optional config file, then applies `key=value` overrides
    /// in order.
    pub fn from_sources(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!("{}:{}: expected key=value", path.display(), lineno + 1)
                })?;
                entries.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| anyhow!("override {ov:?}: expected key=value"))?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut cfg = RunConfig::default();
        for (key, value) in &entries {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| anyhow!("key {key}: cannot parse {value:?}"))
        }
        match key {
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "pairs" => self.pairs = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "oracle" => self.oracle = Some(PathBuf::from(value)),
            "prompt_pool" => self.prompt_pool = Some(PathBuf::from(value)),
            "responses" => self.responses = Some(PathBuf::from(value)),
            "variant" => self.variant = value.to_string(),
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "carry_encoder_state" => self.carry_encoder_state = parse(key, value)?,
            "glimpse_k" => self.glimpse_k = parse(key, value)?,
            "beams" => self.beams = parse(key, value)?,
            "samples_per_beam" => self.samples_per_beam = parse(key, value)?,
            "segment_len" => self.segment_len = parse(key, value)?,
            "q_prompts" => self.q_prompts = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "max_segments" => self.max_segments = parse(key, value)?,
            "backoff_threshold" => self.backoff_threshold = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "strategy" => self.strategy = value.to_string(),
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "optimizer" => self.optimizer = value.to_string(),
            "ppl_every" => self.ppl_every = parse(key, value)?,
            "ppl_pairs" => self.ppl_pairs = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "resume" => self.resume = parse(key, value)?,
            "n_pairs" => self.n_pairs = parse(key, value)?,
            "max_vocab" => self.max_vocab = parse(key, value)?,
            "synth_max_len" => self.synth_max_len = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "scheme" => self.scheme = value.to_string(),
            "thresholds" => {
                self.thresholds = value
                    .split(',')
                    .map(|t| parse::<usize>(key, t.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "seed" => self.seed = parse(key, value)?,
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        match self.variant.as_str() {
            "vanilla" | "target_attention" | "glimpse" => {}
            other => bail!("variant must be vanilla, target_attention, or glimpse (got {other:?})"),
        }
        match self.strategy.as_str() {
            "beam" | "beam_lennorm" | "segment" | "backoff" => {}
            other => bail!(
                "strategy must be beam, beam_lennorm, segment, or backoff (got {other:?})"
            ),
        }
        match self.optimizer.as_str() {
            "adam" | "sgd" => {}
            other => bail!("optimizer must be adam or sgd (got {other:?})"),
        }
        match self.scheme.as_str() {
            "no_norm" | "marginal_norm" | "prompt_norm" => {}
            other => bail!(
                "scheme must be no_norm, marginal_norm, or prompt_norm (got {other:?})"
            ),
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha must lie in [0, 1]");
        }
        if self.embed_dim < 1 || self.hidden_dim < 1 || self.num_layers < 1 || self.glimpse_k < 1
        {
            bail!("model dimensions must be >= 1");
        }
        Ok(())
    }

    pub fn decode_params(&self) -> convoseq::decode::DecodeParams {
        convoseq::decode::DecodeParams {
            b: self.beams,
            d: self.samples_per_beam,
            h: self.segment_len,
            q: self.q_prompts,
            alpha: self.alpha,
            max_segments: self.max_segments,
            backoff_threshold_chars: self.backoff_threshold,
            seed: self.seed,
        }
    }

    pub fn train_variant(&self) -> convoseq::glimpse::TrainVariant {
        match self.variant.as_str() {
            "vanilla" => convoseq::glimpse::TrainVariant::Vanilla,
            "target_attention" => convoseq::glimpse::TrainVariant::TargetAttention,
            _ => convoseq::glimpse::TrainVariant::Glimpse,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> convoseq::nn::ModelConfig {
        convoseq::nn::ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            attention: self.train_variant().attention(),
            carry_encoder_state: self.carry_encoder_state,
        }
    }
}
