//! Subcommand implementations. Every command is reproducible given
//! (config, seed) and writes only into the chosen output directory.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use convoseq::corpus;
use convoseq::decode::{self, DecodeParams, PromptPool, Provenance};
use convoseq::evalkit::{self, ScoringScheme};
use convoseq::glimpse::{self, GlimpseConfig, TrainState};
use convoseq::model::ConditionalSequenceModel;
use convoseq::nn::{self, NeuralSeq2Seq, ParamSet, Seq2Seq, Tensor};
use convoseq::oracle::OracleModel;
use convoseq::vocab::{TokenSequence, Vocabulary};
use convoseq::{rng, Error as CoreError};

use crate::config::RunConfig;

/// An error carrying the process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CmdError {
    fn new(code: i32, error: anyhow::Error) -> Self {
        Self { code, error }
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

pub type CmdResult<T> = std::result::Result<T, CmdError>;

fn malformed(error: anyhow::Error) -> CmdError {
    CmdError::new(2, error)
}

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

/// The model cmd_decode/cmd_eval/cmd_chat operate on.
pub enum LoadedModel {
    Oracle(OracleModel),
    Neural(NeuralSeq2Seq),
}

impl LoadedModel {
    pub fn as_dyn(&self) -> &dyn ConditionalSequenceModel {
        match self {
            LoadedModel::Oracle(m) => m,
            LoadedModel::Neural(m) => m,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.as_dyn().vocabulary()
    }
}

/// Loads the neural checkpoint when configured, otherwise the oracle.
/// A checkpoint whose embedding does not match the vocabulary is exit 4.
pub fn load_model(cfg: &RunConfig) -> CmdResult<LoadedModel> {
    if let Some(ckpt_path) = &cfg.checkpoint {
        let vocab_path = cfg
            .vocab
            .as_ref()
            .ok_or_else(|| anyhow!("checkpoint decoding requires a `vocab` path"))?;
        let vocab = Vocabulary::load(vocab_path)
            .with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
        let params = nn::load_checkpoint(ckpt_path)
            .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
        let rows = params
            .get("embedding")
            .map(|t| t.dims()[0])
            .map_err(|e| anyhow!(e))?;
        if rows != vocab.len() {
            return Err(CmdError::new(
                4,
                anyhow!(
                    "checkpoint vocabulary size {rows} does not match vocab file ({})",
                    vocab.len()
                ),
            ));
        }
        let model = Seq2Seq::new(cfg.model_config(vocab.len())).map_err(|e| anyhow!(e))?;
        let glimpse_k = cfg
            .train_variant()
            .glimpse_k(GlimpseConfig { k: cfg.glimpse_k });
        let adapter =
            NeuralSeq2Seq::new(model, params, vocab, glimpse_k).map_err(|e| anyhow!(e))?;
        Ok(LoadedModel::Neural(adapter))
    } else if let Some(oracle_path) = &cfg.oracle {
        let oracle = OracleModel::load(oracle_path)
            .with_context(|| format!("loading oracle {}", oracle_path.display()))?;
        Ok(LoadedModel::Oracle(oracle))
    } else {
        Err(anyhow!("config must set either `checkpoint` or `oracle`").into())
    }
}

fn load_pool(cfg: &RunConfig, vocab: &Vocabulary) -> Result<PromptPool> {
    let path = cfg
        .prompt_pool
        .as_ref()
        .ok_or_else(|| anyhow!("this command requires a `prompt_pool` path"))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading prompt pool {}", path.display()))?;
    PromptPool::from_text(&text, vocab).map_err(|e| anyhow!(e))
}

// ---------------------------------------------------------------------------
// prep

pub fn cmd_prep(
    cfg: &RunConfig,
    threads: Option<&Path>,
    oracle: Option<&Path>,
    out: &Path,
) -> CmdResult<()> {
    ensure_out(out)?;
    let (pairs, vocab) = match (threads, oracle) {
        (Some(path), None) => {
            let (messages, skipped) =
                corpus::read_thread_file(path).map_err(|e| malformed(anyhow!(e)))?;
            if messages.is_empty() {
                return Err(malformed(anyhow!(
                    "no valid messages in {}",
                    path.display()
                )));
            }
            let (pairs, stats) = corpus::extract_pairs(&messages);
            if pairs.is_empty() {
                return Err(malformed(anyhow!("no (parent, child) pairs extracted")));
            }
            println!(
                "extracted {} pairs ({} malformed rows, {} dangling parents, {} empty sides)",
                pairs.len(),
                skipped,
                stats.dangling_parents,
                stats.empty_sides
            );
            let vocab = corpus::build_vocab(&pairs, cfg.max_vocab)
                .map_err(|e| malformed(anyhow!(e)))?;
            (pairs, vocab)
        }
        (None, Some(path)) => {
            let oracle = OracleModel::load(path).map_err(|e| malformed(anyhow!(e)))?;
            let mut sample_rng = rng::stream(cfg.seed, "synth");
            let (pairs, _) =
                corpus::synth_corpus(&oracle, cfg.n_pairs, &mut sample_rng, cfg.synth_max_len);
            println!("sampled {} synthetic pairs from the oracle", pairs.len());
            let vocab = oracle.vocabulary().clone();
            (pairs, vocab)
        }
        _ => {
            return Err(malformed(anyhow!(
                "prep needs exactly one of --threads or --oracle"
            )))
        }
    };

    corpus::save_pairs(&pairs, out.join("pairs.jsonl")).map_err(|e| anyhow!(e))?;
    vocab.save(out.join("vocab.txt")).map_err(|e| anyhow!(e))?;

    // distinct prompts, sorted, as the default normalization pool
    let mut prompts: Vec<&str> = pairs.iter().map(|p| p.prompt.as_str()).collect();
    prompts.sort_unstable();
    prompts.dedup();
    let mut pool_file = std::fs::File::create(out.join("prompt_pool.txt"))
        .context("creating prompt_pool.txt")?;
    for prompt in &prompts {
        writeln!(pool_file, "{prompt}").context("writing prompt_pool.txt")?;
    }
    println!(
        "wrote pairs.jsonl, vocab.txt ({} tokens), prompt_pool.txt ({} prompts)",
        vocab.len(),
        prompts.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn optimizer_state_to_params(state: &TrainState) -> ParamSet {
    let mut out = ParamSet::new();
    if let Some(adam) = &state.adam {
        for (name, t) in adam.m.iter() {
            out.insert(format!("m.{name}"), t.clone());
        }
        for (name, t) in adam.v.iter() {
            out.insert(format!("v.{name}"), t.clone());
        }
        out.insert(
            "t",
            Tensor::from_data(&[1], vec![adam.t as f64]).expect("scalar"),
        );
    }
    out.insert(
        "step",
        Tensor::from_data(&[1], vec![state.step as f64]).expect("scalar"),
    );
    out
}

fn optimizer_state_from_params(stored: &ParamSet, params: &ParamSet) -> Result<(Option<nn::AdamState>, usize)> {
    let step = stored.get("step").map_err(|e| anyhow!(e))?.data()[0] as usize;
    if stored.names().any(|n| n.starts_with("m.")) {
        let mut adam = nn::AdamState::new(params);
        for (name, t) in adam.m.iter_mut() {
            *t = stored.get(&format!("m.{name}")).map_err(|e| anyhow!(e))?.clone();
        }
        for (name, t) in adam.v.iter_mut() {
            *t = stored.get(&format!("v.{name}")).map_err(|e| anyhow!(e))?.clone();
        }
        adam.t = stored.get("t").map_err(|e| anyhow!(e))?.data()[0] as u64;
        Ok((Some(adam), step))
    } else {
        Ok((None, step))
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CmdResult<()> {
    ensure_out(out)?;
    let pairs_path = cfg
        .pairs
        .as_ref()
        .ok_or_else(|| anyhow!("training requires a `pairs` path"))?;
    let vocab_path = cfg
        .vocab
        .as_ref()
        .ok_or_else(|| anyhow!("training requires a `vocab` path"))?;
    let raw_pairs = corpus::load_pairs(pairs_path)
        .with_context(|| format!("loading pairs {}", pairs_path.display()))?;
    let vocab = Vocabulary::load(vocab_path)
        .with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    let token_pairs: Vec<(TokenSequence, TokenSequence)> =
        corpus::tokenize_pairs(&raw_pairs, &vocab)
            .into_iter()
            .map(|tp| (tp.prompt, tp.response))
            .collect();

    let model = Seq2Seq::new(cfg.model_config(vocab.len())).map_err(|e| anyhow!(e))?;
    let variant = cfg.train_variant();
    let glimpse_cfg = GlimpseConfig { k: cfg.glimpse_k };
    let ckpt_path = out.join("checkpoint.glmp");
    let opt_path = out.join("optstate.glmp");

    let mut state = if cfg.resume {
        let params = nn::load_checkpoint(&ckpt_path)
            .with_context(|| format!("resuming from {}", ckpt_path.display()))?;
        let stored = nn::load_checkpoint(&opt_path)
            .with_context(|| format!("resuming optimizer state {}", opt_path.display()))?;
        let (adam, step) = optimizer_state_from_params(&stored, &params)?;
        TrainState { params, adam, step }
    } else {
        TrainState::fresh(model.init_params(cfg.seed))
    };

    let optimizer = match cfg.optimizer.as_str() {
        "sgd" => glimpse::OptimizerKind::Sgd { lr: cfg.lr },
        _ => glimpse::OptimizerKind::Adam { lr: cfg.lr },
    };
    let mut rows = Vec::new();
    let chunk = if cfg.checkpoint_every == 0 {
        cfg.steps.max(1)
    } else {
        cfg.checkpoint_every
    };
    while state.step < cfg.steps {
        let target = (state.step + chunk).min(cfg.steps);
        let opts = glimpse::TrainOptions {
            steps: target,
            batch_size: cfg.batch_size,
            optimizer,
            seed: cfg.seed,
            ppl_every: cfg.ppl_every,
            ppl_pairs: cfg.ppl_pairs,
        };
        state = glimpse::train(
            &model,
            variant,
            glimpse_cfg,
            &token_pairs,
            &vocab,
            &opts,
            state,
            |row| rows.push(*row),
        )
        .map_err(|e| match e {
            CoreError::NonFinite(_) => CmdError::new(3, anyhow!(e)),
            other => CmdError::from(anyhow!(other)),
        })?;
        nn::save_checkpoint(&state.params, &ckpt_path).map_err(|e| anyhow!(e))?;
        nn::save_checkpoint(&optimizer_state_to_params(&state), &opt_path)
            .map_err(|e| anyhow!(e))?;
    }
    if cfg.steps == 0 {
        nn::save_checkpoint(&state.params, &ckpt_path).map_err(|e| anyhow!(e))?;
        nn::save_checkpoint(&optimizer_state_to_params(&state), &opt_path)
            .map_err(|e| anyhow!(e))?;
    }

    let log_file = std::fs::File::create(out.join("train_log.csv"))
        .context("creating train_log.csv")?;
    glimpse::write_train_log(&rows, std::io::BufWriter::new(log_file))
        .map_err(|e| anyhow!(e))?;

    let final_ppl = glimpse::eval_perplexity(
        &model,
        variant,
        glimpse_cfg,
        &state.params,
        &vocab,
        &token_pairs[..token_pairs.len().min(cfg.ppl_pairs.max(1))],
    )
    .map_err(|e| anyhow!(e))?;
    println!(
        "trained {} steps ({}); final perplexity {:.4}",
        state.step, cfg.variant, final_ppl
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// decode

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct ResponseRecord {
    pub prompt: String,
    pub response: String,
    pub strategy: String,
    pub provenance: String,
    pub chars: usize,
    pub tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_chars: Option<usize>,
}

/// One decode call under a strategy. Returns the record plus any trace
/// rounds.
#[allow(clippy::too_many_arguments)]
pub fn decode_one(
    model: &dyn ConditionalSequenceModel,
    pool: Option<&PromptPool>,
    strategy: &str,
    prompt_text: &str,
    source: &TokenSequence,
    params: &DecodeParams,
    max_len: usize,
    rng: &mut rng::ChaCha8Rng,
) -> Result<(ResponseRecord, Vec<decode::SegmentRound>)> {
    let vocab = model.vocabulary();
    let need_pool =
        || pool.ok_or_else(|| anyhow!("strategy {strategy:?} requires a prompt pool"));
    let (tokens, provenance, trace, baseline_chars) = match strategy {
        "beam" => {
            let ranked = decode::beam_search(model, source, params.b, max_len, None)
                .map_err(|e| anyhow!(e))?;
            (ranked[0].0.clone(), "beam".to_string(), Vec::new(), None)
        }
        "beam_lennorm" => {
            let ranked =
                decode::beam_search(model, source, params.b, max_len, Some(params.alpha))
                    .map_err(|e| anyhow!(e))?;
            (
                ranked[0].0.clone(),
                "beam_lennorm".to_string(),
                Vec::new(),
                None,
            )
        }
        "segment" => {
            let (tokens, trace) =
                decode::segment_decode(model, source, need_pool()?, params, rng)
                    .map_err(|e| anyhow!(e))?;
            (tokens, "segment_model".to_string(), trace, None)
        }
        "backoff" => {
            // baseline strictly without length normalization
            let ranked = decode::beam_search(model, source, params.b, max_len, None)
                .map_err(|e| anyhow!(e))?;
            let baseline_text = corpus::detokenize(&ranked[0].0, vocab);
            let (ours_tokens, trace) =
                decode::segment_decode(model, source, need_pool()?, params, rng)
                    .map_err(|e| anyhow!(e))?;
            let ours_text = corpus::detokenize(&ours_tokens, vocab);
            let (_, prov) = decode::backoff_respond(
                &baseline_text,
                &ours_text,
                params.backoff_threshold_chars,
            );
            let tokens = match prov {
                Provenance::Baseline => ranked[0].0.clone(),
                Provenance::SegmentModel => ours_tokens,
            };
            (
                tokens,
                prov.to_string(),
                trace,
                Some(baseline_text.chars().count()),
            )
        }
        other => bail!("unknown strategy {other:?}"),
    };
    let response = corpus::detokenize(&tokens, vocab);
    let record = ResponseRecord {
        prompt: prompt_text.to_string(),
        response: response.clone(),
        strategy: strategy.to_string(),
        provenance,
        chars: response.chars().count(),
        tokens: tokens
            .ids()
            .iter()
            .filter(|&&t| t != vocab.sos_id() && t != vocab.eos_id())
            .count(),
        baseline_chars,
    };
    Ok((record, trace))
}

pub fn cmd_decode(cfg: &RunConfig, prompts_path: &Path, out: &Path) -> CmdResult<()> {
    ensure_out(out)?;
    let model = load_model(cfg)?;
    let vocab = model.vocab();
    let text = std::fs::read_to_string(prompts_path)
        .with_context(|| format!("reading prompts {}", prompts_path.display()))?;
    let prompts: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let needs_pool = matches!(cfg.strategy.as_str(), "segment" | "backoff");
    let pool = if needs_pool {
        Some(load_pool(cfg, vocab)?)
    } else {
        None
    };
    let params = cfg.decode_params();

    let mut responses = std::io::BufWriter::new(
        std::fs::File::create(out.join("responses.jsonl")).context("creating responses.jsonl")?,
    );
    let mut trace_file = std::io::BufWriter::new(
        std::fs::File::create(out.join("trace.jsonl")).context("creating trace.jsonl")?,
    );
    let mut total_chars = 0usize;
    for (i, prompt_text) in prompts.iter().enumerate() {
        let source = corpus::tokenize(prompt_text, vocab);
        let mut prompt_rng = rng::substream(cfg.seed, "decode", i as u64);
        let (record, trace) = decode_one(
            model.as_dyn(),
            pool.as_ref(),
            &cfg.strategy,
            prompt_text,
            &source,
            &params,
            cfg.max_len,
            &mut prompt_rng,
        )?;
        total_chars += record.chars;
        serde_json::to_writer(&mut responses, &record).context("writing response record")?;
        writeln!(responses).context("writing response record")?;
        for round in trace {
            let mut value = serde_json::to_value(&round).context("encoding trace")?;
            value
                .as_object_mut()
                .expect("trace rounds are objects")
                .insert("prompt_index".into(), json!(i));
            serde_json::to_writer(&mut trace_file, &value).context("writing trace")?;
            writeln!(trace_file).context("writing trace")?;
        }
    }
    responses.flush().context("flushing responses.jsonl")?;
    trace_file.flush().context("flushing trace.jsonl")?;
    println!(
        "decoded {} prompts with strategy {} (mean {:.1} chars)",
        prompts.len(),
        cfg.strategy,
        if prompts.is_empty() {
            0.0
        } else {
            total_chars as f64 / prompts.len() as f64
        }
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

pub fn cmd_eval(cfg: &RunConfig, mode: &str, out: &Path) -> CmdResult<()> {
    ensure_out(out)?;
    match mode {
        "nchoosek" => {
            let model = load_model(cfg)?;
            let vocab = model.vocab().clone();
            let dataset = load_token_pairs(cfg, &vocab)?;
            let pool = match &cfg.prompt_pool {
                Some(_) => load_pool(cfg, &vocab)?,
                None => pool_from_dataset(&dataset)?,
            };
            let scheme = match cfg.scheme.as_str() {
                "marginal_norm" => ScoringScheme::MarginalNorm,
                "prompt_norm" => ScoringScheme::PromptNorm { q: cfg.q_prompts },
                _ => ScoringScheme::NoNorm,
            };
            let report = evalkit::n_choose_k(
                model.as_dyn(),
                &dataset,
                cfg.n,
                cfg.k,
                scheme,
                &pool,
                cfg.trials,
                cfg.seed,
            )
            .map_err(|e| match e {
                CoreError::InsufficientData(_) => CmdError::new(5, anyhow!(e)),
                other => CmdError::from(anyhow!(other)),
            })?;
            let file =
                std::fs::File::create(out.join("report.json")).context("creating report.json")?;
            serde_json::to_writer_pretty(file, &report).context("writing report.json")?;
            println!(
                "scheme={} N={} K={} trials={} accuracy={:.4} ci95={:.4}",
                report.scheme, report.n, report.k, report.trials, report.accuracy, report.ci95
            );
        }
        "ppl" => {
            let model = load_model(cfg)?;
            let vocab = model.vocab().clone();
            let dataset = load_token_pairs(cfg, &vocab)?;
            let ppl = glimpse::perplexity(model.as_dyn(), &dataset).map_err(|e| match e {
                CoreError::InsufficientData(_) => CmdError::new(5, anyhow!(e)),
                other => CmdError::from(anyhow!(other)),
            })?;
            let tokens: usize = dataset.iter().map(|(_, t)| t.predicted_len()).sum();
            let report = json!({"pairs": dataset.len(), "tokens": tokens, "ppl": ppl});
            let file =
                std::fs::File::create(out.join("ppl.json")).context("creating ppl.json")?;
            serde_json::to_writer_pretty(file, &report).context("writing ppl.json")?;
            println!("pairs={} tokens={} ppl={:.4}", dataset.len(), tokens, ppl);
        }
        "lengths" => {
            let responses_path = cfg
                .responses
                .as_ref()
                .ok_or_else(|| anyhow!("lengths mode requires a `responses` path"))?;
            let file = std::fs::File::open(responses_path)
                .with_context(|| format!("reading {}", responses_path.display()))?;
            let mut texts = Vec::new();
            for line in std::io::BufReader::new(file).lines() {
                let line = line.context("reading responses")?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ResponseRecord =
                    serde_json::from_str(&line).context("parsing response record")?;
                texts.push(record.response);
            }
            if texts.is_empty() {
                return Err(CmdError::new(5, anyhow!("no responses to analyze")));
            }
            let rows = evalkit::length_stats(&texts, &cfg.thresholds);
            let mut csv = std::io::BufWriter::new(
                std::fs::File::create(out.join("lengths.csv")).context("creating lengths.csv")?,
            );
            writeln!(csv, "threshold,count,fraction").context("writing lengths.csv")?;
            for row in &rows {
                writeln!(csv, "{},{},{}", row.threshold, row.count, row.fraction)
                    .context("writing lengths.csv")?;
                println!(
                    "chars > {:>4}: {:>5} responses ({:.3})",
                    row.threshold, row.count, row.fraction
                );
            }
            csv.flush().context("flushing lengths.csv")?;
        }
        other => return Err(anyhow!("unknown eval mode {other:?}").into()),
    }
    Ok(())
}

fn load_token_pairs(
    cfg: &RunConfig,
    vocab: &Vocabulary,
) -> Result<Vec<(TokenSequence, TokenSequence)>> {
    let pairs_path = cfg
        .pairs
        .as_ref()
        .ok_or_else(|| anyhow!("evaluation requires a `pairs` path"))?;
    let raw = corpus::load_pairs(pairs_path)
        .with_context(|| format!("loading pairs {}", pairs_path.display()))?;
    Ok(corpus::tokenize_pairs(&raw, vocab)
        .into_iter()
        .map(|tp| (tp.prompt, tp.response))
        .collect())
}

fn pool_from_dataset(dataset: &[(TokenSequence, TokenSequence)]) -> Result<PromptPool> {
    let mut prompts: Vec<TokenSequence> = dataset.iter().map(|(p, _)| p.clone()).collect();
    prompts.sort();
    prompts.dedup();
    PromptPool::new(prompts).map_err(|e| anyhow!(e))
}

// ---------------------------------------------------------------------------
// chat

pub fn cmd_chat(cfg: &RunConfig) -> CmdResult<()> {
    let model = load_model(cfg)?;
    let vocab = model.vocab().clone();
    let needs_pool = matches!(cfg.strategy.as_str(), "segment" | "backoff");
    let pool = if needs_pool {
        Some(load_pool(cfg, &vocab)?)
    } else {
        None
    };
    let params = cfg.decode_params();
    let mut show_trace = false;

    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    println!(
        "single-turn chat ({} strategy); /trace on|off toggles the segment trace; ctrl-d exits",
        cfg.strategy
    );
    loop {
        print!("> ");
        std::io::stdout().flush().ok();
        let line = match lines.next() {
            Some(Ok(line)) => line,
            Some(Err(e)) => return Err(anyhow!(e).into()),
            None => {
                println!();
                break;
            }
        };
        let line = line.trim().to_string();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("/trace") {
            show_trace = matches!(rest.trim(), "on");
            println!("trace {}", if show_trace { "on" } else { "off" });
            continue;
        }
        // every turn is independent; the reply depends only on (seed, input)
        let mut turn_rng = rng::stream(cfg.seed, &format!("chat:{line}"));
        let source = corpus::tokenize(&line, &vocab);
        match decode_one(
            model.as_dyn(),
            pool.as_ref(),
            &cfg.strategy,
            &line,
            &source,
            &params,
            cfg.max_len,
            &mut turn_rng,
        ) {
            Ok((record, trace)) => {
                println!("{}", record.response);
                if show_trace {
                    for round in &trace {
                        println!(
                            "  round {}: chose {} of {} candidates (phi {:?})",
                            round.round,
                            round.chosen_index,
                            round.candidates.len(),
                            round.phi_indices
                        );
                        for (ci, cand) in round.candidates.iter().enumerate() {
                            println!(
                                "    [{}{}] S={:.4} logp={:.3} {:?}",
                                ci,
                                if ci == round.chosen_index { "*" } else { "" },
                                cand.s,
                                cand.logp,
                                cand.text
                            );
                        }
                    }
                }
            }
            Err(e) => eprintln!("decode failed: {e:#}"),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

