//! The glimpse data transformation and the training/perplexity loop built
//! on it.
//!
//! A target is split into non-overlapping K-step decoder segments; all
//! target tokens before a segment move onto the encoder, after the source.
//! With K at least the target length the transform degenerates to the
//! vanilla seq2seq training pair.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::ConditionalSequenceModel;
use crate::vocab::{TokenId, TokenSequence, Vocabulary};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlimpseConfig {
    /// Glimpse length in decoder steps.
    pub k: usize,
}

impl Default for GlimpseConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

/// One fixed-length training triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlimpseExample {
    /// source ++ committed target prefix ++ EOS
    pub encoder_input: TokenSequence,
    pub decoder_input: TokenSequence,
    /// Same length as `decoder_input`, shifted one position in the target.
    pub decoder_output: TokenSequence,
}

/// Encoder-side assembly shared by training and decoding: the source, then
/// the committed target tokens (no SOS), then a single EOS at the very end.
pub fn assemble_encoder_input(
    source: &TokenSequence,
    committed: &[TokenId],
    vocab: &Vocabulary,
) -> TokenSequence {
    let mut ids = Vec::with_capacity(source.len() + committed.len() + 1);
    ids.extend_from_slice(source.ids());
    ids.extend_from_slice(committed);
    ids.push(vocab.eos_id());
    TokenSequence::new(ids)
}

/// Splits a complete target into glimpse examples. Example `j` covers
/// decoder steps `jK+1 ..= jK+K`: its decoder input starts at target token
/// `jK` and everything strictly before that token (except SOS) goes onto
/// the encoder.
pub fn split_into_glimpses(
    source: &TokenSequence,
    target: &TokenSequence,
    cfg: GlimpseConfig,
    vocab: &Vocabulary,
) -> Result<Vec<GlimpseExample>> {
    assert!(cfg.k >= 1, "glimpse length must be >= 1");
    if source.is_empty() {
        return Err(Error::MalformedInput("source must be non-empty".into()));
    }
    crate::model::validate_complete_target(vocab, target)?;
    let n = target.len() - 1; // predicted symbols
    let k = cfg.k;
    let count = n.div_ceil(k);
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let start = j * k;
        let len = k.min(n - start);
        let committed = if start == 0 {
            &[][..]
        } else {
            &target.ids()[1..start]
        };
        out.push(GlimpseExample {
            encoder_input: assemble_encoder_input(source, committed, vocab),
            decoder_input: target.slice(start..start + len),
            decoder_output: target.slice(start + 1..start + 1 + len),
        });
    }
    Ok(out)
}

/// The vanilla (non-glimpse) training pair: encoder = source ++ EOS, decoder
/// spans the whole target. Identical to a single glimpse with K >= N.
pub fn vanilla_example(
    source: &TokenSequence,
    target: &TokenSequence,
    vocab: &Vocabulary,
) -> Result<GlimpseExample> {
    if source.is_empty() {
        return Err(Error::MalformedInput("source must be non-empty".into()));
    }
    crate::model::validate_complete_target(vocab, target)?;
    Ok(GlimpseExample {
        encoder_input: assemble_encoder_input(source, &[], vocab),
        decoder_input: target.slice(0..target.len() - 1),
        decoder_output: target.slice(1..target.len()),
    })
}

/// One epoch of glimpse examples: every glimpse of every pair exactly once,
/// in a seeded shuffle.
pub fn make_training_stream(
    pairs: &[(TokenSequence, TokenSequence)],
    cfg: GlimpseConfig,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<Vec<GlimpseExample>> {
    let mut stream = Vec::new();
    for (source, target) in pairs {
        stream.extend(split_into_glimpses(source, target, cfg, vocab)?);
    }
    stream.shuffle(rng);
    Ok(stream)
}

/// One epoch of vanilla examples under the same seeded shuffle.
pub fn make_vanilla_stream(
    pairs: &[(TokenSequence, TokenSequence)],
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<Vec<GlimpseExample>> {
    let mut stream = Vec::new();
    for (source, target) in pairs {
        stream.push(vanilla_example(source, target, vocab)?);
    }
    stream.shuffle(rng);
    Ok(stream)
}

/// Full-sequence perplexity: `exp(-sum log P / sum predicted tokens)`,
/// never glimpse-split, so model variants are comparable. Returns positive
/// infinity if any token has probability zero.
pub fn perplexity(
    model: &dyn ConditionalSequenceModel,
    pairs: &[(TokenSequence, TokenSequence)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to evaluate".into()));
    }
    let per_pair = par::map_indexed(pairs, |_, (source, target)| {
        model
            .sequence_log_prob(source, target)
            .map(|lp| (lp, target.predicted_len() as f64))
    });
    let mut log_sum = 0.0;
    let mut tokens = 0.0;
    for r in per_pair {
        let (lp, n) = r?;
        log_sum += lp;
        tokens += n;
    }
    if log_sum == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok((-log_sum / tokens).exp())
}

/// Which training configuration a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainVariant {
    /// Source-only attention on vanilla pairs.
    Vanilla,
    /// Source-and-target attention on vanilla pairs.
    TargetAttention,
    /// Source-only attention on glimpse-split data.
    Glimpse,
}

impl TrainVariant {
    pub fn attention(&self) -> crate::nn::AttentionMode {
        match self {
            TrainVariant::TargetAttention => crate::nn::AttentionMode::SourceAndTarget,
            _ => crate::nn::AttentionMode::SourceOnly,
        }
    }

    /// The glimpse length the conditional model should re-chunk with.
    pub fn glimpse_k(&self, cfg: GlimpseConfig) -> Option<usize> {
        match self {
            TrainVariant::Glimpse => Some(cfg.k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Evaluate full-sequence perplexity every this many steps (0: final
    /// step only).
    pub ppl_every: usize,
    /// Cap on pairs used for in-training perplexity rows.
    pub ppl_pairs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            optimizer: OptimizerKind::Adam { lr: 3e-3 },
            seed: 0,
            ppl_every: 0,
            ppl_pairs: 64,
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
/// Parameters and moments stay on the f32 grid, so a checkpoint round trip
/// is lossless and a resumed run reproduces the uninterrupted trajectory.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: crate::nn::ParamSet,
    pub adam: Option<crate::nn::AdamState>,
    pub step: usize,
}

impl TrainState {
    pub fn fresh(params: crate::nn::ParamSet) -> Self {
        Self {
            params,
            adam: None,
            step: 0,
        }
    }
}

/// One `train_log.csv` row.
#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    /// Full-sequence perplexity when evaluated this step.
    pub ppl: Option<f64>,
}

/// Writes rows under the `step,loss,ppl` header.
pub fn write_train_log(rows: &[TrainLogRow], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "step,loss,ppl")?;
    for row in rows {
        match row.ppl {
            Some(p) => writeln!(w, "{},{},{}", row.step, row.loss, p)?,
            None => writeln!(w, "{},{},", row.step, row.loss)?,
        }
    }
    Ok(())
}

/// Epoch stream for a variant: glimpse-split or vanilla, seeded shuffle.
pub fn epoch_stream(
    variant: TrainVariant,
    pairs: &[(TokenSequence, TokenSequence)],
    cfg: GlimpseConfig,
    vocab: &Vocabulary,
    seed: u64,
    epoch: u64,
) -> Result<Vec<GlimpseExample>> {
    let mut rng = crate::rng::substream(seed, "shuffle", epoch);
    match variant {
        TrainVariant::Glimpse => make_training_stream(pairs, cfg, vocab, &mut rng),
        _ => make_vanilla_stream(pairs, vocab, &mut rng),
    }
}

/// Runs (or continues) a training loop. The data order is derived entirely
/// from `(seed, epoch)` and the step counter, so resuming from a saved
/// state follows the same trajectory as an uninterrupted run.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &crate::nn::Seq2Seq,
    variant: TrainVariant,
    glimpse_cfg: GlimpseConfig,
    pairs: &[(TokenSequence, TokenSequence)],
    vocab: &Vocabulary,
    opts: &TrainOptions,
    mut state: TrainState,
    mut on_row: impl FnMut(&TrainLogRow),
) -> Result<TrainState> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    let stream_len: usize = match variant {
        TrainVariant::Glimpse => pairs
            .iter()
            .map(|(_, t)| (t.len() - 1).div_ceil(glimpse_cfg.k))
            .sum(),
        _ => pairs.len(),
    };
    let batches_per_epoch = stream_len.div_ceil(opts.batch_size).max(1);
    let hp = crate::nn::AdamParams::default();

    let mut cached_epoch = u64::MAX;
    let mut stream: Vec<GlimpseExample> = Vec::new();
    while state.step < opts.steps {
        let step = state.step;
        let epoch = (step / batches_per_epoch) as u64;
        if epoch != cached_epoch {
            stream = epoch_stream(variant, pairs, glimpse_cfg, vocab, opts.seed, epoch)?;
            cached_epoch = epoch;
        }
        let b = step % batches_per_epoch;
        let lo = b * opts.batch_size;
        let hi = (lo + opts.batch_size).min(stream.len());
        let batch = &stream[lo..hi];

        let (loss, grads) = model.loss_and_gradients(&state.params, batch)?;
        state.params = match opts.optimizer {
            OptimizerKind::Sgd { lr } => crate::nn::sgd_step(&state.params, &grads, lr)?,
            OptimizerKind::Adam { lr } => {
                if state.adam.is_none() {
                    state.adam = Some(crate::nn::AdamState::new(&state.params));
                }
                let adam = state.adam.as_mut().unwrap();
                let hp = crate::nn::AdamParams { lr, ..hp };
                crate::nn::adam_step(&state.params, &grads, adam, &hp)?
            }
        };
        // keep everything on the f32 grid so checkpoints are lossless
        state.params.quantize_f32();
        if let Some(adam) = state.adam.as_mut() {
            adam.m.quantize_f32();
            adam.v.quantize_f32();
        }
        state.step += 1;

        let is_final = state.step == opts.steps;
        let eval_now = is_final || (opts.ppl_every > 0 && state.step % opts.ppl_every == 0);
        let ppl = if eval_now {
            let subset = &pairs[..pairs.len().min(opts.ppl_pairs.max(1))];
            Some(eval_perplexity(model, variant, glimpse_cfg, &state.params, vocab, subset)?)
        } else {
            None
        };
        on_row(&TrainLogRow {
            step: state.step,
            loss,
            ppl,
        });
    }
    Ok(state)
}

/// Full-sequence perplexity of the current parameters under the variant's
/// conditional convention.
pub fn eval_perplexity(
    model: &crate::nn::Seq2Seq,
    variant: TrainVariant,
    glimpse_cfg: GlimpseConfig,
    params: &crate::nn::ParamSet,
    vocab: &Vocabulary,
    pairs: &[(TokenSequence, TokenSequence)],
) -> Result<f64> {
    let adapter = crate::nn::NeuralSeq2Seq::new(
        crate::nn::Seq2Seq::new(*model.config())?,
        params.clone(),
        vocab.clone(),
        variant.glimpse_k(glimpse_cfg),
    )?;
    perplexity(&adapter, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rng;

    fn vocab_n(n_content: usize) -> Vocabulary {
        Vocabulary::with_content((0..n_content).map(|i| format!("w{i}"))).unwrap()
    }

    /// Target y0..y10 over ids where y0 = SOS, y10 = EOS and y1..y9 are
    /// distinct content ids 10..19 for easy reading.
    fn worked_example_target() -> TokenSequence {
        let mut ids = vec![0u32];
        ids.extend(10..19); // y1..y9
        ids.push(1); // y10 = EOS
        TokenSequence::new(ids)
    }

    #[test]
    fn worked_example_k3_matches_quoted_indices() {
        let vocab = vocab_n(20);
        let source = TokenSequence::new(vec![5, 6]);
        let target = worked_example_target();
        let y = target.ids().to_vec();
        let ex = split_into_glimpses(&source, &target, GlimpseConfig { k: 3 }, &vocab).unwrap();

        assert_eq!(ex.len(), 4); // ceil(10 / 3)

        // First example: decoder input y0,y1,y2; output y1,y2,y3.
        assert_eq!(ex[0].decoder_input.ids(), &y[0..3]);
        assert_eq!(ex[0].decoder_output.ids(), &y[1..4]);
        assert_eq!(ex[0].encoder_input.ids(), &[5, 6, 1]);

        // Second: input y3,y4,y5; output y4,y5,y6; prefix y1,y2 on encoder.
        assert_eq!(ex[1].decoder_input.ids(), &y[3..6]);
        assert_eq!(ex[1].decoder_output.ids(), &y[4..7]);
        assert_eq!(ex[1].encoder_input.ids(), &[5, 6, y[1], y[2], 1]);

        assert_eq!(ex[2].decoder_input.ids(), &y[6..9]);
        assert_eq!(ex[2].decoder_output.ids(), &y[7..10]);

        // Last example's output is y10 = EOS alone.
        assert_eq!(ex[3].decoder_input.ids(), &y[9..10]);
        assert_eq!(ex[3].decoder_output.ids(), &[1]);
    }

    #[test]
    fn eos_only_in_final_output() {
        let vocab = vocab_n(20);
        let source = TokenSequence::new(vec![5]);
        let target = worked_example_target();
        for k in [1usize, 3, 4, 10, 50] {
            let ex = split_into_glimpses(&source, &target, GlimpseConfig { k }, &vocab).unwrap();
            for (j, e) in ex.iter().enumerate() {
                let has_eos = e.decoder_output.ids().contains(&1);
                if j + 1 == ex.len() {
                    assert_eq!(e.decoder_output.last(), Some(1));
                } else {
                    assert!(!has_eos, "k={k} example {j} leaks EOS");
                }
                assert!(!e.decoder_input.ids().contains(&1));
                assert_eq!(e.decoder_input.len(), e.decoder_output.len());
                assert!(e.decoder_input.len() <= k);
            }
        }
    }

    #[test]
    fn k_at_least_n_degenerates_to_vanilla_pair() {
        let vocab = vocab_n(20);
        let source = TokenSequence::new(vec![5, 7]);
        let target = worked_example_target();
        let ex = split_into_glimpses(&source, &target, GlimpseConfig { k: 10 }, &vocab).unwrap();
        assert_eq!(ex.len(), 1);
        let vanilla = vanilla_example(&source, &target, &vocab).unwrap();
        assert_eq!(ex[0], vanilla);
        assert_eq!(vanilla.encoder_input.ids(), &[5, 7, 1]);
    }

    #[test]
    fn reconstruction_property_over_random_cases() {
        let vocab = vocab_n(40);
        let mut rng = rng::stream(3, "glimpse");
        for _ in 0..1000 {
            let n = rng.gen_range(2..=40usize);
            let k = *[1usize, 3, 10, rng.gen_range(1..=41)]
                .get(rng.gen_range(0..4usize))
                .unwrap();
            let mut ids = vec![0u32];
            for _ in 0..n - 1 {
                ids.push(rng.gen_range(3..43u32));
            }
            ids.push(1);
            let target = TokenSequence::new(ids);
            let source = TokenSequence::new(vec![rng.gen_range(3..43u32)]);
            let ex =
                split_into_glimpses(&source, &target, GlimpseConfig { k }, &vocab).unwrap();

            assert_eq!(ex.len(), n.div_ceil(k));

            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            for e in &ex {
                inputs.extend_from_slice(e.decoder_input.ids());
                outputs.extend_from_slice(e.decoder_output.ids());
                // encoder carries exactly one EOS, at the very end
                assert_eq!(e.encoder_input.last(), Some(1));
                assert_eq!(
                    e.encoder_input.ids().iter().filter(|&&t| t == 1).count(),
                    1
                );
                // SOS never copied into the encoder
                assert!(!e.encoder_input.ids().contains(&0));
            }
            assert_eq!(inputs, target.ids()[0..n]);
            assert_eq!(outputs, target.ids()[1..]);
        }
    }

    #[test]
    fn empty_target_rejected() {
        let vocab = vocab_n(5);
        let source = TokenSequence::new(vec![3]);
        // SOS+EOS only: one predicted symbol, fine. SOS alone: malformed.
        let bare = TokenSequence::new(vec![0]);
        assert!(
            split_into_glimpses(&source, &bare, GlimpseConfig { k: 3 }, &vocab).is_err()
        );
        let minimal = TokenSequence::new(vec![0, 1]);
        let ex =
            split_into_glimpses(&source, &minimal, GlimpseConfig { k: 3 }, &vocab).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].decoder_input.ids(), &[0]);
        assert_eq!(ex[0].decoder_output.ids(), &[1]);
    }

    fn random_pairs(
        n_pairs: usize,
        len_range: std::ops::Range<usize>,
        rng: &mut impl Rng,
    ) -> Vec<(TokenSequence, TokenSequence)> {
        (0..n_pairs)
            .map(|_| {
                let n = rng.gen_range(len_range.clone());
                let mut ids = vec![0u32];
                for _ in 0..n {
                    ids.push(rng.gen_range(3..20u32));
                }
                ids.push(1);
                (
                    TokenSequence::new(vec![rng.gen_range(3..20u32)]),
                    TokenSequence::new(ids),
                )
            })
            .collect()
    }

    #[test]
    fn stream_counts() {
        let vocab = vocab_n(20);
        let mut rng = rng::stream(4, "stream");
        // 2 pairs with N=10 each, K=10 -> 2 examples/epoch
        let pairs: Vec<_> = (0..2)
            .map(|_| {
                let mut ids = vec![0u32];
                ids.extend(std::iter::repeat(5).take(9));
                ids.push(1);
                (TokenSequence::new(vec![4]), TokenSequence::new(ids))
            })
            .collect();
        let stream =
            make_training_stream(&pairs, GlimpseConfig { k: 10 }, &vocab, &mut rng).unwrap();
        assert_eq!(stream.len(), 2);

        // 1 pair with N=38, K=10 -> 4 examples/epoch
        let mut ids = vec![0u32];
        ids.extend(std::iter::repeat(6).take(37));
        ids.push(1);
        let pairs = vec![(TokenSequence::new(vec![4]), TokenSequence::new(ids))];
        let stream =
            make_training_stream(&pairs, GlimpseConfig { k: 10 }, &vocab, &mut rng).unwrap();
        assert_eq!(stream.len(), 4);
    }

    #[test]
    fn stream_multiset_equals_pairwise_split() {
        let vocab = vocab_n(20);
        let mut rng = rng::stream(5, "stream2");
        let pairs = random_pairs(20, 1..30, &mut rng);
        let cfg = GlimpseConfig { k: 7 };
        let mut shuffled =
            make_training_stream(&pairs, cfg, &vocab, &mut rng::stream(6, "shuffle")).unwrap();
        let mut direct: Vec<GlimpseExample> = pairs
            .iter()
            .flat_map(|(s, t)| split_into_glimpses(s, t, cfg, &vocab).unwrap())
            .collect();
        let key = |e: &GlimpseExample| {
            (
                e.encoder_input.ids().to_vec(),
                e.decoder_input.ids().to_vec(),
                e.decoder_output.ids().to_vec(),
            )
        };
        shuffled.sort_by_key(key);
        direct.sort_by_key(key);
        assert_eq!(shuffled, direct);
    }

    #[test]
    fn big_k_stream_is_bit_identical_to_vanilla_stream() {
        let vocab = vocab_n(20);
        let mut rng = rng::stream(7, "stream3");
        let pairs = random_pairs(15, 1..12, &mut rng);
        let k = 50; // >= max N
        let a = make_training_stream(
            &pairs,
            GlimpseConfig { k },
            &vocab,
            &mut rng::stream(8, "shuffle"),
        )
        .unwrap();
        let b =
            make_vanilla_stream(&pairs, &vocab, &mut rng::stream(8, "shuffle")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let oracle = fixtures::uniform_oracle(47); // |V| = 50
        let v = ConditionalSequenceModel::vocabulary(&oracle).len() as f64;
        let mut rng = rng::stream(9, "ppl");
        let pairs: Vec<_> = (0..20)
            .map(|_| {
                let n = rng.gen_range(1..10usize);
                let mut ids = vec![0u32];
                for _ in 0..n {
                    ids.push(rng.gen_range(3..50u32));
                }
                ids.push(1);
                (TokenSequence::new(vec![3]), TokenSequence::new(ids))
            })
            .collect();
        let ppl = perplexity(&oracle, &pairs).unwrap();
        assert!((ppl - v).abs() < 1e-9, "ppl {ppl} vs |V| {v}");
    }

    #[test]
    fn deterministic_correct_model_perplexity_is_one() {
        let oracle = fixtures::deterministic_chain();
        let pairs = vec![(
            TokenSequence::new(vec![3]),
            TokenSequence::new(vec![0, 3, 4, 1]),
        )];
        let ppl = perplexity(&oracle, &pairs).unwrap();
        assert!((ppl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_pair_gives_infinite_perplexity() {
        let oracle = fixtures::deterministic_chain();
        let pairs = vec![(
            TokenSequence::new(vec![3]),
            TokenSequence::new(vec![0, 4, 1]),
        )];
        assert_eq!(perplexity(&oracle, &pairs).unwrap(), f64::INFINITY);
    }

    #[test]
    fn perplexity_is_order_invariant() {
        let oracle = fixtures::two_class_chain(0.4);
        let mut rng = rng::stream(10, "pplord");
        let mut pairs = Vec::new();
        for _ in 0..30 {
            let prompt = oracle.sample_prompt(&mut rng).clone();
            let resp = oracle.sample(&prompt, &mut rng, 20);
            pairs.push((prompt, resp));
        }
        let a = perplexity(&oracle, &pairs).unwrap();
        pairs.reverse();
        let b = perplexity(&oracle, &pairs).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn tiny_model(vocab: &Vocabulary) -> crate::nn::Seq2Seq {
        crate::nn::Seq2Seq::new(crate::nn::ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            hidden_dim: 12,
            num_layers: 1,
            attention: crate::nn::AttentionMode::SourceOnly,
            carry_encoder_state: true,
        })
        .unwrap()
    }

    #[test]
    fn training_decreases_smoothed_loss() {
        let oracle = fixtures::two_class_chain(0.3);
        let vocab = ConditionalSequenceModel::vocabulary(&oracle).clone();
        let mut r = rng::stream(21, "traindata");
        let pairs: Vec<_> = (0..32)
            .map(|_| {
                let p = oracle.sample_prompt(&mut r).clone();
                let t = oracle.sample(&p, &mut r, 12);
                (p, t)
            })
            .collect();
        let model = tiny_model(&vocab);
        let opts = TrainOptions {
            steps: 500,
            batch_size: 8,
            optimizer: OptimizerKind::Adam { lr: 3e-3 },
            seed: 22,
            ppl_every: 0,
            ppl_pairs: 8,
        };
        let mut rows = Vec::new();
        let state = TrainState::fresh(model.init_params(23));
        let done = train(
            &model,
            TrainVariant::Glimpse,
            GlimpseConfig { k: 4 },
            &pairs,
            &vocab,
            &opts,
            state,
            |row| rows.push(*row),
        )
        .unwrap();
        assert_eq!(done.step, 500);
        assert_eq!(rows.len(), 500);
        let window = |end: usize| -> f64 {
            rows[end - 10..end].iter().map(|r| r.loss).sum::<f64>() / 10.0
        };
        assert!(
            window(50) > window(500),
            "smoothed loss did not decrease: {} -> {}",
            window(50),
            window(500)
        );
        // final row carries a perplexity
        assert!(rows.last().unwrap().ppl.is_some());
    }

    #[test]
    fn resume_reproduces_uninterrupted_trajectory() {
        let oracle = fixtures::two_class_chain(0.3);
        let vocab = ConditionalSequenceModel::vocabulary(&oracle).clone();
        let mut r = rng::stream(24, "resumedata");
        let pairs: Vec<_> = (0..8)
            .map(|_| {
                let p = oracle.sample_prompt(&mut r).clone();
                let t = oracle.sample(&p, &mut r, 8);
                (p, t)
            })
            .collect();
        let model = tiny_model(&vocab);
        let mk_opts = |steps: usize| TrainOptions {
            steps,
            batch_size: 4,
            optimizer: OptimizerKind::Adam { lr: 1e-2 },
            seed: 25,
            ppl_every: 0,
            ppl_pairs: 4,
        };
        let cfg = GlimpseConfig { k: 3 };

        let mut full_rows = Vec::new();
        let full = train(
            &model,
            TrainVariant::Glimpse,
            cfg,
            &pairs,
            &vocab,
            &mk_opts(30),
            TrainState::fresh(model.init_params(26)),
            |row| full_rows.push(*row),
        )
        .unwrap();

        // first half, then persist parameters and moments through the f32
        // checkpoint format, then continue
        let mut half_rows = Vec::new();
        let half = train(
            &model,
            TrainVariant::Glimpse,
            cfg,
            &pairs,
            &vocab,
            &mk_opts(15),
            TrainState::fresh(model.init_params(26)),
            |row| half_rows.push(*row),
        )
        .unwrap();
        let mut buf = Vec::new();
        crate::nn::write_checkpoint(&half.params, &mut buf).unwrap();
        let reloaded = crate::nn::read_checkpoint(&buf[..]).unwrap();
        assert!(reloaded.bitwise_eq(&half.params));
        let adam = half.adam.clone().unwrap();
        let resumed_state = TrainState {
            params: reloaded,
            adam: Some(adam),
            step: half.step,
        };
        let resumed = train(
            &model,
            TrainVariant::Glimpse,
            cfg,
            &pairs,
            &vocab,
            &mk_opts(30),
            resumed_state,
            |row| half_rows.push(*row),
        )
        .unwrap();

        assert!(full.params.bitwise_eq(&resumed.params));
        assert_eq!(full_rows.len(), half_rows.len());
        for (a, b) in full_rows.iter().zip(&half_rows) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
    }

    #[test]
    fn zero_steps_leaves_params_at_initialization() {
        let oracle = fixtures::two_class_chain(0.3);
        let vocab = ConditionalSequenceModel::vocabulary(&oracle).clone();
        let pairs = vec![(
            TokenSequence::new(vec![3]),
            TokenSequence::new(vec![0, 3, 1]),
        )];
        let model = tiny_model(&vocab);
        let init = model.init_params(1);
        let opts = TrainOptions {
            steps: 0,
            ..TrainOptions::default()
        };
        let out = train(
            &model,
            TrainVariant::Vanilla,
            GlimpseConfig::default(),
            &pairs,
            &vocab,
            &opts,
            TrainState::fresh(init.clone()),
            |_| {},
        )
        .unwrap();
        assert!(out.params.bitwise_eq(&init));
    }

    #[test]
    fn train_log_format() {
        let rows = vec![
            TrainLogRow {
                step: 1,
                loss: 2.5,
                ppl: None,
            },
            TrainLogRow {
                step: 2,
                loss: 2.25,
                ppl: Some(9.5),
            },
        ];
        let mut buf = Vec::new();
        write_train_log(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,loss,ppl\n1,2.5,\n2,2.25,9.5\n");
    }

    #[test]
    fn sampled_perplexity_approaches_entropy_rate() {
        let oracle = fixtures::two_class_chain(0.35);
        let h = crate::oracle::exhaustive::entropy_rate(&oracle);
        let mut rng = rng::stream(11, "pplent");
        let mut pairs = Vec::new();
        for _ in 0..10_000 {
            let prompt = oracle.sample_prompt(&mut rng).clone();
            let resp = oracle.sample(&prompt, &mut rng, 60);
            pairs.push((prompt, resp));
        }
        let ppl = perplexity(&oracle, &pairs).unwrap();
        let bound = h.exp();
        assert!(
            (ppl - bound).abs() / bound < 0.02,
            "ppl {ppl} vs exp(H) {bound}"
        );
    }
}
