//! LSTM cell with explicit backward pass.
//!
//! Gate layout in the stacked pre-activation vector: input, forget, cell
//! candidate, output — chunks of `hidden` each.

use crate::nn::linalg::{matvec_acc, matvec_t_acc, outer_acc};
use crate::nn::params::Tensor;

#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One step: returns the new state and the cache for backward.
pub fn lstm_forward(
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    x: &[f64],
    prev: &LstmState,
) -> (LstmState, LstmCache) {
    let hidden = prev.h.len();
    let in_dim = x.len();
    let mut pre = bias.data().to_vec();
    matvec_acc(w_ih.data(), 4 * hidden, in_dim, x, &mut pre);
    matvec_acc(w_hh.data(), 4 * hidden, hidden, &prev.h, &mut pre);

    let mut i = vec![0.0; hidden];
    let mut f = vec![0.0; hidden];
    let mut g = vec![0.0; hidden];
    let mut o = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for k in 0..hidden {
        i[k] = sigmoid(pre[k]);
        f[k] = sigmoid(pre[hidden + k]);
        g[k] = pre[2 * hidden + k].tanh();
        o[k] = sigmoid(pre[3 * hidden + k]);
        c[k] = f[k] * prev.c[k] + i[k] * g[k];
        h[k] = o[k] * c[k].tanh();
    }
    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        g,
        o,
        c: c.clone(),
    };
    (LstmState { h, c }, cache)
}

/// Gradient containers for one layer's weights.
pub struct LstmGrads<'a> {
    pub w_ih: &'a mut Tensor,
    pub w_hh: &'a mut Tensor,
    pub bias: &'a mut Tensor,
}

/// Backward through one step. `dh`/`dc` are gradients arriving at this
/// step's outputs; gradients w.r.t. the inputs are accumulated into `dx`,
/// `dh_prev`, `dc_prev`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    w_ih: &Tensor,
    w_hh: &Tensor,
    cache: &LstmCache,
    dh: &[f64],
    dc_in: &[f64],
    grads: LstmGrads<'_>,
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let hidden = dh.len();
    let in_dim = cache.x.len();
    let mut da = vec![0.0; 4 * hidden];
    for k in 0..hidden {
        let tanh_c = cache.c[k].tanh();
        let do_ = dh[k] * tanh_c;
        let dc = dc_in[k] + dh[k] * cache.o[k] * (1.0 - tanh_c * tanh_c);
        let di = dc * cache.g[k];
        let df = dc * cache.c_prev[k];
        let dg = dc * cache.i[k];
        dc_prev[k] += dc * cache.f[k];
        da[k] = di * cache.i[k] * (1.0 - cache.i[k]);
        da[hidden + k] = df * cache.f[k] * (1.0 - cache.f[k]);
        da[2 * hidden + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
        da[3 * hidden + k] = do_ * cache.o[k] * (1.0 - cache.o[k]);
    }
    outer_acc(grads.w_ih.data_mut(), 4 * hidden, in_dim, &da, &cache.x);
    outer_acc(grads.w_hh.data_mut(), 4 * hidden, hidden, &da, &cache.h_prev);
    for (b, d) in grads.bias.data_mut().iter_mut().zip(&da) {
        *b += d;
    }
    matvec_t_acc(w_ih.data(), 4 * hidden, in_dim, &da, dx);
    matvec_t_acc(w_hh.data(), 4 * hidden, hidden, &da, dh_prev);
}

/// Forward without retaining a cache (inference path).
pub fn lstm_step(
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    x: &[f64],
    prev: &LstmState,
) -> LstmState {
    lstm_forward(w_ih, w_hh, bias, x, prev).0
}
