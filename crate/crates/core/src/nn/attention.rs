//! Additive (concat) attention: score_j = v . tanh(Wq q + Wm m_j), weights
//! softmax over scores, context = weighted sum of memory rows.

use crate::nn::linalg::{axpy, dot, matvec, matvec_acc, matvec_t_acc, outer_acc, softmax};
use crate::nn::params::Tensor;
use crate::{Error, Result};

pub struct AttentionWeights<'a> {
    pub w_query: &'a Tensor,
    pub w_memory: &'a Tensor,
    pub v: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub query: Vec<f64>,
    /// tanh(Wq q + Wm m_j) per row.
    pub u: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Returns (context, cache). `rows` must be non-empty.
pub fn attention_forward(
    w: &AttentionWeights<'_>,
    query: &[f64],
    rows: &[Vec<f64>],
) -> Result<(Vec<f64>, AttentionCache)> {
    if rows.is_empty() {
        return Err(Error::DimensionMismatch("attention memory is empty".into()));
    }
    let att_dim = w.v.len();
    let hidden = query.len();
    let mut wq_q = vec![0.0; att_dim];
    matvec(w.w_query.data(), att_dim, hidden, query, &mut wq_q);

    let mut scores = Vec::with_capacity(rows.len());
    let mut u_all = Vec::with_capacity(rows.len());
    for row in rows {
        let mut u = wq_q.clone();
        matvec_acc(w.w_memory.data(), att_dim, hidden, row, &mut u);
        for x in &mut u {
            *x = x.tanh();
        }
        scores.push(dot(w.v.data(), &u));
        u_all.push(u);
    }
    let weights = softmax(&scores);
    let mut context = vec![0.0; hidden];
    for (wt, row) in weights.iter().zip(rows) {
        axpy(&mut context, *wt, row);
    }
    Ok((
        context,
        AttentionCache {
            query: query.to_vec(),
            u: u_all,
            weights,
        },
    ))
}

pub struct AttentionGrads<'a> {
    pub w_query: &'a mut Tensor,
    pub w_memory: &'a mut Tensor,
    pub v: &'a mut Tensor,
}

/// Backward: accumulates weight gradients and per-input gradients.
/// `d_rows[j]` receives the gradient w.r.t. memory row j.
pub fn attention_backward(
    w: &AttentionWeights<'_>,
    cache: &AttentionCache,
    rows: &[Vec<f64>],
    d_context: &[f64],
    grads: AttentionGrads<'_>,
    d_query: &mut [f64],
    d_rows: &mut [Vec<f64>],
) {
    let att_dim = w.v.len();
    let hidden = d_context.len();
    let n = rows.len();

    // context = sum w_j m_j
    let mut d_weights = vec![0.0; n];
    for j in 0..n {
        d_weights[j] = dot(d_context, &rows[j]);
        axpy(&mut d_rows[j], cache.weights[j], d_context);
    }

    // softmax backward
    let inner: f64 = cache
        .weights
        .iter()
        .zip(&d_weights)
        .map(|(w, d)| w * d)
        .sum();
    let d_scores: Vec<f64> = cache
        .weights
        .iter()
        .zip(&d_weights)
        .map(|(w, d)| w * (d - inner))
        .collect();

    // score_j = v . u_j ; u_j = tanh(Wq q + Wm m_j)
    for j in 0..n {
        let ds = d_scores[j];
        if ds == 0.0 {
            continue;
        }
        let u = &cache.u[j];
        axpy(grads.v.data_mut(), ds, u);
        let da: Vec<f64> = w
            .v
            .data()
            .iter()
            .zip(u)
            .map(|(vk, uk)| ds * vk * (1.0 - uk * uk))
            .collect();
        outer_acc(grads.w_query.data_mut(), att_dim, hidden, &da, &cache.query);
        outer_acc(grads.w_memory.data_mut(), att_dim, hidden, &da, &rows[j]);
        matvec_t_acc(w.w_query.data(), att_dim, hidden, &da, d_query);
        matvec_t_acc(w.w_memory.data(), att_dim, hidden, &da, &mut d_rows[j]);
    }
}
