//! Encoder-decoder forward and backward passes.
//!
//! The decoder consumes the previous token's embedding concatenated with an
//! additive-attention context over the memory; logits come from the top
//! hidden state. In source-and-target mode the decoder's own earlier top
//! states are appended to the memory as extra rows, and gradients flow back
//! through those rows during training.

use crate::glimpse::GlimpseExample;
use crate::nn::attention::{
    attention_backward, attention_forward, AttentionCache, AttentionGrads, AttentionWeights,
};
use crate::nn::cell::{lstm_backward, lstm_forward, lstm_step, LstmCache, LstmGrads, LstmState};
use crate::nn::linalg::{matvec_acc, matvec_t_acc, outer_acc, softmax};
use crate::nn::params::{param_shapes, ParamSet, Tensor};
use crate::nn::{AttentionMode, ModelConfig};
use crate::vocab::{TokenId, TokenSequence};
use crate::{par, Error, Result};

/// Where a memory row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryOrigin {
    /// Encoder annotation for input position `i` (0-based).
    Source(usize),
    /// Decoder hidden state after step `i` (1-based).
    Target(usize),
}

/// Attention memory: one annotation row per position.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    rows: Vec<Vec<f64>>,
    origins: Vec<MemoryOrigin>,
}

impl AttentionMemory {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn origins(&self) -> &[MemoryOrigin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<f64>, origin: MemoryOrigin) {
        self.rows.push(row);
        self.origins.push(origin);
    }
}

impl Default for AttentionMemory {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-layer recurrent state plus the decoder step index.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
    pub step: usize,
}

impl DecoderState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            layers: (0..cfg.num_layers)
                .map(|_| LstmState::zeros(cfg.hidden_dim))
                .collect(),
            step: 0,
        }
    }

    /// Top-layer hidden vector: the attention query and logit input.
    pub fn top_h(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").h
    }
}

struct LayerWeights<'a> {
    w_ih: &'a Tensor,
    w_hh: &'a Tensor,
    bias: &'a Tensor,
}

fn layer_weights<'a>(params: &'a ParamSet, side: &str, l: usize) -> Result<LayerWeights<'a>> {
    Ok(LayerWeights {
        w_ih: params.get(&format!("{side}.l{l}.w_ih"))?,
        w_hh: params.get(&format!("{side}.l{l}.w_hh"))?,
        bias: params.get(&format!("{side}.l{l}.bias"))?,
    })
}

/// The encoder-decoder model: configuration plus the pure math. Parameters
/// are passed explicitly so frozen inference can share a `ParamSet` across
/// threads while training owns its own copy.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    cfg: ModelConfig,
}

impl Seq2Seq {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        crate::nn::params::init_params(&self.cfg, seed)
    }

    /// Checks a parameter set carries exactly the tensors this
    /// configuration expects.
    pub fn validate_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = param_shapes(&self.cfg);
        if params.len() != shapes.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, dims) in &shapes {
            let t = params.get(name)?;
            if t.dims() != &dims[..] {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {name:?}: expected {:?}, found {:?}",
                    dims,
                    t.dims()
                )));
            }
        }
        params.validate_finite()
    }

    fn check_token(&self, id: TokenId) -> Result<()> {
        if (id as usize) >= self.cfg.vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "token id {id} out of range for vocab size {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Runs the encoder, producing one annotation row per input position and
    /// the final recurrent state (the decoder init when carrying).
    pub fn encode(
        &self,
        params: &ParamSet,
        input: &TokenSequence,
    ) -> Result<(AttentionMemory, DecoderState)> {
        if input.is_empty() {
            return Err(Error::DimensionMismatch("encoder input is empty".into()));
        }
        let embedding = params.get("embedding")?;
        let mut layers: Vec<LayerWeights> = Vec::with_capacity(self.cfg.num_layers);
        for l in 0..self.cfg.num_layers {
            layers.push(layer_weights(params, "enc", l)?);
        }
        let mut states: Vec<LstmState> = (0..self.cfg.num_layers)
            .map(|_| LstmState::zeros(self.cfg.hidden_dim))
            .collect();
        let mut memory = AttentionMemory::new();
        for (pos, &tok) in input.ids().iter().enumerate() {
            self.check_token(tok)?;
            let mut x = embedding.row(tok as usize).to_vec();
            for (l, w) in layers.iter().enumerate() {
                let next = lstm_step(w.w_ih, w.w_hh, w.bias, &x, &states[l]);
                x = next.h.clone();
                states[l] = next;
            }
            memory.push(x, MemoryOrigin::Source(pos));
        }
        Ok((
            memory,
            DecoderState {
                layers: states,
                step: 0,
            },
        ))
    }

    /// Decoder initial state per the carry setting.
    pub fn initial_decoder_state(&self, encoder_final: &DecoderState) -> DecoderState {
        if self.cfg.carry_encoder_state {
            DecoderState {
                layers: encoder_final.layers.clone(),
                step: 0,
            }
        } else {
            DecoderState::zeros(&self.cfg)
        }
    }

    /// Attention context for a decoder state over a memory. Returns the
    /// context vector and the softmax weights.
    pub fn attention(
        &self,
        params: &ParamSet,
        state: &DecoderState,
        memory: &AttentionMemory,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = AttentionWeights {
            w_query: params.get("att.w_query")?,
            w_memory: params.get("att.w_memory")?,
            v: params.get("att.v")?,
        };
        let (ctx, cache) = attention_forward(&w, state.top_h(), memory.rows())?;
        Ok((ctx, cache.weights))
    }

    /// One inference step: next-token probabilities and the advanced state.
    /// In source-and-target mode the caller is responsible for having
    /// appended annotation rows for earlier decoder steps to `memory`.
    pub fn decode_step(
        &self,
        params: &ParamSet,
        state: &DecoderState,
        prev_token: TokenId,
        memory: &AttentionMemory,
    ) -> Result<(Vec<f64>, DecoderState)> {
        self.check_token(prev_token)?;
        let embedding = params.get("embedding")?;
        let (ctx, _) = self.attention(params, state, memory)?;
        let mut x = Vec::with_capacity(self.cfg.embed_dim + self.cfg.hidden_dim);
        x.extend_from_slice(embedding.row(prev_token as usize));
        x.extend_from_slice(&ctx);
        let mut new_layers = Vec::with_capacity(self.cfg.num_layers);
        for l in 0..self.cfg.num_layers {
            let w = layer_weights(params, "dec", l)?;
            let next = lstm_step(w.w_ih, w.w_hh, w.bias, &x, &state.layers[l]);
            x = next.h.clone();
            new_layers.push(next);
        }
        let out_w = params.get("out.w")?;
        let out_b = params.get("out.b")?;
        let top = &new_layers.last().unwrap().h;
        let mut logits = out_b.data().to_vec();
        matvec_acc(
            out_w.data(),
            self.cfg.vocab_size,
            self.cfg.hidden_dim,
            top,
            &mut logits,
        );
        let probs = softmax(&logits);
        Ok((
            probs,
            DecoderState {
                layers: new_layers,
                step: state.step + 1,
            },
        ))
    }

    /// Mean cross-entropy per output token over the batch, plus gradients
    /// shaped like the parameters. Examples are evaluated in parallel and
    /// reduced in batch order, so results are reproducible for a fixed
    /// batch regardless of thread count.
    pub fn loss_and_gradients(
        &self,
        params: &ParamSet,
        batch: &[GlimpseExample],
    ) -> Result<(f64, ParamSet)> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        for ex in batch {
            if ex.decoder_input.len() != ex.decoder_output.len() {
                return Err(Error::DimensionMismatch(
                    "decoder input/output lengths differ".into(),
                ));
            }
            if ex.decoder_input.is_empty() {
                return Err(Error::DimensionMismatch("empty decoder segment".into()));
            }
            if ex.encoder_input.is_empty() {
                return Err(Error::DimensionMismatch("empty encoder input".into()));
            }
        }
        let per_example = par::map_indexed(batch, |_, ex| self.example_loss_and_grads(params, ex));
        let mut grads = params.zeros_like();
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for result in per_example {
            let (l, t, g) = result?;
            loss_sum += l;
            tokens += t;
            grads.accumulate(&g, 1.0)?;
        }
        let scale = 1.0 / tokens as f64;
        let loss = loss_sum * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss = {loss}")));
        }
        let zero = grads.zeros_like();
        let mut scaled = zero;
        scaled.accumulate(&grads, scale)?;
        scaled.validate_finite()?;
        Ok((loss, scaled))
    }

    /// Forward + backward for one example. Returns the summed (unscaled)
    /// token loss, the token count, and unscaled gradients.
    fn example_loss_and_grads(
        &self,
        params: &ParamSet,
        ex: &GlimpseExample,
    ) -> Result<(f64, usize, ParamSet)> {
        let cfg = &self.cfg;
        let hidden = cfg.hidden_dim;
        let embed = cfg.embed_dim;
        let n_layers = cfg.num_layers;
        let t_enc = ex.encoder_input.len();
        let t_dec = ex.decoder_input.len();

        let embedding = params.get("embedding")?;
        let mut enc_w = Vec::with_capacity(n_layers);
        let mut dec_w = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            enc_w.push(layer_weights(params, "enc", l)?);
            dec_w.push(layer_weights(params, "dec", l)?);
        }
        let att_w = AttentionWeights {
            w_query: params.get("att.w_query")?,
            w_memory: params.get("att.w_memory")?,
            v: params.get("att.v")?,
        };
        let out_w = params.get("out.w")?;
        let out_b = params.get("out.b")?;

        // ---- encoder forward ----
        let mut enc_caches: Vec<Vec<LstmCache>> = Vec::with_capacity(t_enc);
        let mut enc_states: Vec<LstmState> =
            (0..n_layers).map(|_| LstmState::zeros(hidden)).collect();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(t_enc + t_dec);
        for &tok in ex.encoder_input.ids() {
            self.check_token(tok)?;
            let mut x = embedding.row(tok as usize).to_vec();
            let mut step_caches = Vec::with_capacity(n_layers);
            for (l, w) in enc_w.iter().enumerate() {
                let (next, cache) = lstm_forward(w.w_ih, w.w_hh, w.bias, &x, &enc_states[l]);
                x = next.h.clone();
                step_caches.push(cache);
                enc_states[l] = next;
            }
            enc_caches.push(step_caches);
            rows.push(x);
        }

        // ---- decoder forward ----
        // dec_states[t] is the state after step t; index 0 is the init.
        let init = if cfg.carry_encoder_state {
            enc_states.clone()
        } else {
            (0..n_layers).map(|_| LstmState::zeros(hidden)).collect()
        };
        let mut dec_states: Vec<Vec<LstmState>> = vec![init];
        let mut att_caches: Vec<AttentionCache> = Vec::with_capacity(t_dec);
        let mut mem_lens: Vec<usize> = Vec::with_capacity(t_dec);
        let mut dec_caches: Vec<Vec<LstmCache>> = Vec::with_capacity(t_dec);
        let mut probs_all: Vec<Vec<f64>> = Vec::with_capacity(t_dec);
        let mut loss_sum = 0.0;

        for t in 1..=t_dec {
            let prev_tok = ex.decoder_input.ids()[t - 1];
            self.check_token(prev_tok)?;
            let query = &dec_states[t - 1].last().unwrap().h;
            let mem_len = rows.len();
            let (ctx, att_cache) = attention_forward(&att_w, query, &rows)?;
            let mut x = Vec::with_capacity(embed + hidden);
            x.extend_from_slice(embedding.row(prev_tok as usize));
            x.extend_from_slice(&ctx);
            let mut step_caches = Vec::with_capacity(n_layers);
            let mut new_states = Vec::with_capacity(n_layers);
            for (l, w) in dec_w.iter().enumerate() {
                let (next, cache) =
                    lstm_forward(w.w_ih, w.w_hh, w.bias, &x, &dec_states[t - 1][l]);
                x = next.h.clone();
                step_caches.push(cache);
                new_states.push(next);
            }
            let top = &new_states.last().unwrap().h;
            let mut logits = out_b.data().to_vec();
            matvec_acc(out_w.data(), cfg.vocab_size, hidden, top, &mut logits);
            let probs = softmax(&logits);
            let target = ex.decoder_output.ids()[t - 1];
            self.check_token(target)?;
            let p = probs[target as usize];
            loss_sum += if p > 0.0 { -p.ln() } else { f64::INFINITY };

            if cfg.attention == AttentionMode::SourceAndTarget {
                rows.push(top.clone());
            }
            dec_states.push(new_states);
            att_caches.push(att_cache);
            mem_lens.push(mem_len);
            dec_caches.push(step_caches);
            probs_all.push(probs);
        }

        // ---- backward ----
        let mut grads = params.zeros_like();
        let mut d_dec_h = vec![vec![vec![0.0; hidden]; n_layers]; t_dec + 1];
        let mut d_dec_c = vec![vec![vec![0.0; hidden]; n_layers]; t_dec + 1];
        let mut d_enc_rows = vec![vec![0.0; hidden]; t_enc];

        for t in (1..=t_dec).rev() {
            // cross-entropy + output projection
            let target = ex.decoder_output.ids()[t - 1] as usize;
            let mut dlogits = probs_all[t - 1].clone();
            dlogits[target] -= 1.0;
            let top = &dec_states[t].last().unwrap().h;
            outer_acc(
                grads.get_mut("out.w")?.data_mut(),
                cfg.vocab_size,
                hidden,
                &dlogits,
                top,
            );
            for (b, d) in grads.get_mut("out.b")?.data_mut().iter_mut().zip(&dlogits) {
                *b += d;
            }
            matvec_t_acc(
                out_w.data(),
                cfg.vocab_size,
                hidden,
                &dlogits,
                &mut d_dec_h[t][n_layers - 1],
            );

            // LSTM stack, top layer down
            let mut dx_above: Option<Vec<f64>> = None;
            for l in (0..n_layers).rev() {
                let mut dh = std::mem::take(&mut d_dec_h[t][l]);
                if let Some(dxa) = dx_above.take() {
                    for (a, b) in dh.iter_mut().zip(&dxa) {
                        *a += b;
                    }
                }
                let dc = std::mem::take(&mut d_dec_c[t][l]);
                let in_dim = dec_caches[t - 1][l].x.len();
                let mut dx = vec![0.0; in_dim];
                let (gw_ih, gw_hh, gb) = (
                    format!("dec.l{l}.w_ih"),
                    format!("dec.l{l}.w_hh"),
                    format!("dec.l{l}.bias"),
                );
                // swap the gradient tensors out so the borrow checker allows
                // three mutable targets at once
                {
                    let mut g_ih = std::mem::replace(
                        grads.get_mut(&gw_ih)?,
                        Tensor::zeros(&[0]),
                    );
                    let mut g_hh =
                        std::mem::replace(grads.get_mut(&gw_hh)?, Tensor::zeros(&[0]));
                    let mut g_b = std::mem::replace(grads.get_mut(&gb)?, Tensor::zeros(&[0]));
                    let (mut dh_prev, mut dc_prev) = (
                        std::mem::take(&mut d_dec_h[t - 1][l]),
                        std::mem::take(&mut d_dec_c[t - 1][l]),
                    );
                    lstm_backward(
                        dec_w[l].w_ih,
                        dec_w[l].w_hh,
                        &dec_caches[t - 1][l],
                        &dh,
                        &dc,
                        LstmGrads {
                            w_ih: &mut g_ih,
                            w_hh: &mut g_hh,
                            bias: &mut g_b,
                        },
                        &mut dx,
                        &mut dh_prev,
                        &mut dc_prev,
                    );
                    *grads.get_mut(&gw_ih)? = g_ih;
                    *grads.get_mut(&gw_hh)? = g_hh;
                    *grads.get_mut(&gb)? = g_b;
                    d_dec_h[t - 1][l] = dh_prev;
                    d_dec_c[t - 1][l] = dc_prev;
                }
                dx_above = Some(dx);
            }

            // split layer-0 input gradient into embedding and context parts
            let dx0 = dx_above.expect("at least one layer");
            let prev_tok = ex.decoder_input.ids()[t - 1] as usize;
            {
                let emb_grad = grads.get_mut("embedding")?;
                for (a, b) in emb_grad.row_mut(prev_tok).iter_mut().zip(&dx0[..embed]) {
                    *a += b;
                }
            }
            let d_ctx = &dx0[embed..];

            // attention backward
            let mem_len = mem_lens[t - 1];
            let mut d_rows_local = vec![vec![0.0; hidden]; mem_len];
            let mut d_query = vec![0.0; hidden];
            {
                let mut g_wq =
                    std::mem::replace(grads.get_mut("att.w_query")?, Tensor::zeros(&[0]));
                let mut g_wm =
                    std::mem::replace(grads.get_mut("att.w_memory")?, Tensor::zeros(&[0]));
                let mut g_v = std::mem::replace(grads.get_mut("att.v")?, Tensor::zeros(&[0]));
                attention_backward(
                    &att_w,
                    &att_caches[t - 1],
                    &rows[..mem_len],
                    d_ctx,
                    AttentionGrads {
                        w_query: &mut g_wq,
                        w_memory: &mut g_wm,
                        v: &mut g_v,
                    },
                    &mut d_query,
                    &mut d_rows_local,
                );
                *grads.get_mut("att.w_query")? = g_wq;
                *grads.get_mut("att.w_memory")? = g_wm;
                *grads.get_mut("att.v")? = g_v;
            }
            for (a, b) in d_dec_h[t - 1][n_layers - 1].iter_mut().zip(&d_query) {
                *a += b;
            }
            for (j, d_row) in d_rows_local.into_iter().enumerate() {
                if j < t_enc {
                    for (a, b) in d_enc_rows[j].iter_mut().zip(&d_row) {
                        *a += b;
                    }
                } else {
                    // target row j corresponds to decoder step j - t_enc + 1
                    let s = j - t_enc + 1;
                    for (a, b) in d_dec_h[s][n_layers - 1].iter_mut().zip(&d_row) {
                        *a += b;
                    }
                }
            }
        }

        // ---- encoder backward ----
        // Gradient flowing into the state after encoder position p, per layer.
        let mut d_h: Vec<Vec<f64>> = (0..n_layers).map(|_| vec![0.0; hidden]).collect();
        let mut d_c: Vec<Vec<f64>> = (0..n_layers).map(|_| vec![0.0; hidden]).collect();
        if cfg.carry_encoder_state {
            for l in 0..n_layers {
                d_h[l].copy_from_slice(&d_dec_h[0][l]);
                d_c[l].copy_from_slice(&d_dec_c[0][l]);
            }
        }
        for p in (0..t_enc).rev() {
            for (a, b) in d_h[n_layers - 1].iter_mut().zip(&d_enc_rows[p]) {
                *a += b;
            }
            let mut dx_above: Option<Vec<f64>> = None;
            let mut d_h_prev: Vec<Vec<f64>> = (0..n_layers).map(|_| vec![0.0; hidden]).collect();
            let mut d_c_prev: Vec<Vec<f64>> = (0..n_layers).map(|_| vec![0.0; hidden]).collect();
            for l in (0..n_layers).rev() {
                let mut dh = std::mem::take(&mut d_h[l]);
                if let Some(dxa) = dx_above.take() {
                    for (a, b) in dh.iter_mut().zip(&dxa) {
                        *a += b;
                    }
                }
                let dc = std::mem::take(&mut d_c[l]);
                let in_dim = enc_caches[p][l].x.len();
                let mut dx = vec![0.0; in_dim];
                let (gw_ih, gw_hh, gb) = (
                    format!("enc.l{l}.w_ih"),
                    format!("enc.l{l}.w_hh"),
                    format!("enc.l{l}.bias"),
                );
                {
                    let mut g_ih =
                        std::mem::replace(grads.get_mut(&gw_ih)?, Tensor::zeros(&[0]));
                    let mut g_hh =
                        std::mem::replace(grads.get_mut(&gw_hh)?, Tensor::zeros(&[0]));
                    let mut g_b = std::mem::replace(grads.get_mut(&gb)?, Tensor::zeros(&[0]));
                    lstm_backward(
                        enc_w[l].w_ih,
                        enc_w[l].w_hh,
                        &enc_caches[p][l],
                        &dh,
                        &dc,
                        LstmGrads {
                            w_ih: &mut g_ih,
                            w_hh: &mut g_hh,
                            bias: &mut g_b,
                        },
                        &mut dx,
                        &mut d_h_prev[l],
                        &mut d_c_prev[l],
                    );
                    *grads.get_mut(&gw_ih)? = g_ih;
                    *grads.get_mut(&gw_hh)? = g_hh;
                    *grads.get_mut(&gb)? = g_b;
                }
                dx_above = Some(dx);
            }
            let dx0 = dx_above.expect("at least one layer");
            let tok = ex.encoder_input.ids()[p] as usize;
            let emb_grad = grads.get_mut("embedding")?;
            for (a, b) in emb_grad.row_mut(tok).iter_mut().zip(&dx0[..embed]) {
                *a += b;
            }
            d_h = d_h_prev;
            d_c = d_c_prev;
        }

        Ok((loss_sum, t_dec, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn small_cfg(vocab: usize, attention: AttentionMode, layers: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            embed_dim: 4,
            hidden_dim: 5,
            num_layers: layers,
            attention,
            carry_encoder_state: true,
        }
    }

    fn example(enc: Vec<u32>, dec_in: Vec<u32>, dec_out: Vec<u32>) -> GlimpseExample {
        GlimpseExample {
            encoder_input: TokenSequence::new(enc),
            decoder_input: TokenSequence::new(dec_in),
            decoder_output: TokenSequence::new(dec_out),
        }
    }

    fn random_batch(cfg: &ModelConfig, n: usize, rng: &mut impl Rng) -> Vec<GlimpseExample> {
        let v = cfg.vocab_size as u32;
        (0..n)
            .map(|_| {
                let enc_len = rng.gen_range(1..6usize);
                let dec_len = rng.gen_range(1..6usize);
                let enc = (0..enc_len).map(|_| rng.gen_range(2..v)).collect();
                let dec_in: Vec<u32> = std::iter::once(0)
                    .chain((0..dec_len - 1).map(|_| rng.gen_range(2..v)))
                    .collect();
                let mut dec_out: Vec<u32> =
                    (0..dec_len - 1).map(|_| rng.gen_range(2..v)).collect();
                dec_out.push(1);
                example(enc, dec_in, dec_out)
            })
            .collect()
    }

    #[test]
    fn encode_row_counts_and_finiteness() {
        let cfg = small_cfg(9, AttentionMode::SourceOnly, 1);
        let model = Seq2Seq::new(cfg).unwrap();
        let params = model.init_params(3);

        let (memory, _) = model
            .encode(&params, &TokenSequence::new(vec![4]))
            .unwrap();
        assert_eq!(memory.len(), 1);

        let (memory, state) = model
            .encode(&params, &TokenSequence::new(vec![4, 5, 6, 7, 8]))
            .unwrap();
        assert_eq!(memory.len(), 5);
        assert!(memory
            .rows()
            .iter()
            .all(|r| r.iter().all(|v| v.is_finite())));
        assert!(state.layers[0].h.iter().all(|v| v.is_finite()));

        assert!(model.encode(&params, &TokenSequence::empty()).is_err());
    }

    #[test]
    fn zeroed_params_collapse_annotations() {
        let cfg = small_cfg(9, AttentionMode::SourceOnly, 1);
        let model = Seq2Seq::new(cfg).unwrap();
        let params = model.init_params(3).zeros_like();
        let (memory, _) = model
            .encode(&params, &TokenSequence::new(vec![2, 5, 8]))
            .unwrap();
        let first = &memory.rows()[0];
        for row in memory.rows() {
            assert_eq!(row, first);
        }
    }

    #[test]
    fn decode_step_distribution_normalized_and_uniform_for_zero_logits() {
        let cfg = small_cfg(9, AttentionMode::SourceOnly, 1);
        let model = Seq2Seq::new(cfg).unwrap();
        let mut params = model.init_params(5);
        let (memory, enc_final) = model
            .encode(&params, &TokenSequence::new(vec![2, 3]))
            .unwrap();
        let state = model.initial_decoder_state(&enc_final);
        let (probs, next) = model.decode_step(&params, &state, 0, &memory).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(next.step, 1);

        // zero output projection -> exactly uniform
        for name in ["out.w", "out.b"] {
            for v in params.get_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let (probs, _) = model.decode_step(&params, &state, 0, &memory).unwrap();
        let uniform = 1.0 / 9.0;
        assert!(probs.iter().all(|&p| p == uniform));
    }

    #[test]
    fn duplicated_example_leaves_mean_loss_unchanged() {
        let cfg = small_cfg(10, AttentionMode::SourceOnly, 1);
        let model = Seq2Seq::new(cfg).unwrap();
        let params = model.init_params(7);
        let ex = example(vec![3, 4], vec![0, 5, 6], vec![5, 6, 1]);
        let (l1, _) = model.loss_and_gradients(&params, &[ex.clone()]).unwrap();
        let (l2, _) = model
            .loss_and_gradients(&params, &[ex.clone(), ex])
            .unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn near_deterministic_model_has_near_zero_loss_and_gradients() {
        // Output bias pinned hard at token 5: the model already assigns
        // probability ~1 to every output token.
        let cfg = small_cfg(8, AttentionMode::SourceOnly, 1);
        let model = Seq2Seq::new(cfg).unwrap();
        let mut params = model.init_params(9);
        {
            let b = params.get_mut("out.b").unwrap();
            for (i, v) in b.data_mut().iter_mut().enumerate() {
                *v = if i == 5 { 60.0 } else { -60.0 };
            }
            for v in params.get_mut("out.w").unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let ex = example(vec![3], vec![0, 5, 5], vec![5, 5, 5]);
        let (loss, grads) = model.loss_and_gradients(&params, &[ex]).unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
        for (_, t) in grads.iter() {
            for v in t.data() {
                assert!(v.abs() < 1e-8);
            }
        }
    }

    /// Central finite differences over a handful of coordinates for every
    /// attention mode and depth; the full 200x5 sweep runs in the
    /// acceptance suite.
    #[test]
    fn gradients_match_finite_differences() {
        for (mode, layers) in [
            (AttentionMode::SourceOnly, 1),
            (AttentionMode::SourceAndTarget, 1),
            (AttentionMode::SourceOnly, 2),
            (AttentionMode::SourceAndTarget, 2),
        ] {
            let cfg = small_cfg(10, mode, layers);
            let model = Seq2Seq::new(cfg).unwrap();
            let params = model.init_params(13);
            let mut rng = rng::stream(14, "seqfd");
            let batch = random_batch(&cfg, 3, &mut rng);
            let (_, grads) = model.loss_and_gradients(&params, &batch).unwrap();

            let eps = 1e-4;
            let n = params.flat_len();
            for _ in 0..40 {
                let idx = rng.gen_range(0..n);
                let base = params.get_flat(idx);
                let mut p = params.clone();
                p.set_flat(idx, base + eps);
                let (lp, _) = model.loss_and_gradients(&p, &batch).unwrap();
                p.set_flat(idx, base - eps);
                let (lm, _) = model.loss_and_gradients(&p, &batch).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                let a = grads.get_flat(idx);
                let rel = (fd - a).abs() / f64::max(a.abs().max(fd.abs()), 1e-7);
                assert!(
                    rel <= 1e-4,
                    "mode {mode:?} layers {layers} coord {idx}: analytic {a} vs fd {fd} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let cfg = small_cfg(8, AttentionMode::SourceOnly, 1);
        let model = Seq2Seq::new(cfg).unwrap();
        let params = model.init_params(1);
        let bad = example(vec![3], vec![0, 5], vec![5]);
        assert!(matches!(
            model.loss_and_gradients(&params, &[bad]),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
