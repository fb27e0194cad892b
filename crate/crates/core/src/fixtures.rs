//! Ready-made oracle fixtures.
//!
//! The unit, integration, and bench suites all verify search and scoring
//! code against small oracles with hand-checkable tables; building them in
//! one place keeps the expected values consistent.

use rand::Rng;

use crate::oracle::OracleModel;
use crate::vocab::{TokenSequence, Vocabulary};

fn normalized(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    for p in &mut row {
        *p /= s;
    }
    row
}

fn one_hot(v: usize, t: usize) -> Vec<f64> {
    let mut row = vec![0.0; v];
    row[t] = 1.0;
    row
}

/// Two classes over `{a, b}` with per-row EOS mass `eos_mass`. Class 0
/// favors alternating a/b starting at `a`; class 1 starts at `b`. Rows are
/// smoothed so both classes give every continuation positive probability,
/// keeping likelihood ratios finite.
pub fn two_class_chain(eos_mass: f64) -> OracleModel {
    let vocab = Vocabulary::with_content(["a".into(), "b".into()]).unwrap();
    let v = vocab.len(); // 0=<s> 1=</s> 2=<unk> 3=a 4=b
    let mk_row = |favored: usize| {
        let mut row = vec![0.0; v];
        let rest = 1.0 - eos_mass;
        row[1] = eos_mass;
        row[2] = rest * 0.15;
        row[3] = rest * 0.25;
        row[4] = rest * 0.25;
        row[favored] += rest * 0.35;
        normalized(row)
    };
    let class0 = vec![
        mk_row(3),
        vec![0.0; v],
        mk_row(3),
        mk_row(4),
        mk_row(3),
    ];
    let class1 = vec![
        mk_row(4),
        vec![0.0; v],
        mk_row(4),
        mk_row(3),
        mk_row(4),
    ];
    let prompts = vec![
        (TokenSequence::new(vec![3, 3]), 0.5), // (3+3) % 2 = class 0
        (TokenSequence::new(vec![3, 4]), 0.5), // (3+4) % 2 = class 1
    ];
    OracleModel::new(vocab, 2, vec![class0, class1], prompts).unwrap()
}

/// Three classes over eight content words with smoothed rows and a low EOS
/// rate, so responses are long and rarely collide. Each class favors a
/// different successor pattern while keeping full support, which makes
/// likelihood ratios informative without saturating.
pub fn three_class_chain() -> OracleModel {
    let vocab = Vocabulary::with_content((0..8).map(|i| format!("w{i}"))).unwrap();
    let v = vocab.len(); // 11: content ids 3..=10
    let eos_mass = 0.12;
    let mut tables = Vec::new();
    for class in 0..3usize {
        let mut table = Vec::with_capacity(v);
        for prev in 0..v {
            if prev == 1 {
                table.push(vec![0.0; v]);
                continue;
            }
            let rest = 1.0 - eos_mass;
            let mut row = vec![0.0; v];
            row[1] = eos_mass;
            row[2] = rest * 0.04;
            for t in 3..v {
                row[t] = rest * 0.96 / 8.0 * 0.4;
            }
            // class-dependent favored successor gets the remaining bulk
            let favored = 3 + (prev * 2 + class * 3) % 8;
            row[favored] += rest * 0.96 * 0.6;
            table.push(normalized(row));
        }
        tables.push(table);
    }
    // prompt token ids pick the class directly: sum mod 3
    let prompts = vec![
        (TokenSequence::new(vec![3]), 0.34), // 3 % 3 = 0
        (TokenSequence::new(vec![4]), 0.33), // 1
        (TokenSequence::new(vec![5]), 0.33), // 2
    ];
    OracleModel::new(vocab, 3, tables, prompts).unwrap()
}

/// Single deterministic path `<s> -> a -> b -> </s>`, one prompt `a`.
pub fn deterministic_chain() -> OracleModel {
    let vocab = Vocabulary::with_content(["a".into(), "b".into()]).unwrap();
    let v = vocab.len();
    let table = vec![
        one_hot(v, 3),
        vec![0.0; v],
        one_hot(v, 1),
        one_hot(v, 4),
        one_hot(v, 1),
    ];
    let prompts = vec![(TokenSequence::new(vec![3]), 1.0)];
    OracleModel::new(vocab, 1, vec![table], prompts).unwrap()
}

/// Uniform rows over a vocabulary with `content_words` extra words; every
/// next-token distribution is exactly `1/|V|`.
pub fn uniform_oracle(content_words: usize) -> OracleModel {
    let vocab =
        Vocabulary::with_content((0..content_words).map(|i| format!("w{i}"))).unwrap();
    let v = vocab.len();
    let table = vec![vec![1.0 / v as f64; v]; v];
    let prompts = vec![(TokenSequence::new(vec![3]), 1.0)];
    OracleModel::new(vocab, 1, vec![table], prompts).unwrap()
}

/// Random dense tables: every row gets strictly positive mass everywhere,
/// with EOS mass at least `min_eos`. Prompt priors are random too.
pub fn random_oracle(
    rng: &mut impl Rng,
    content_words: usize,
    classes: usize,
    min_eos: f64,
) -> OracleModel {
    let vocab =
        Vocabulary::with_content((0..content_words).map(|i| format!("w{i}"))).unwrap();
    let v = vocab.len();
    let mut tables = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut table = Vec::with_capacity(v);
        for _ in 0..v {
            let mut row: Vec<f64> = (0..v).map(|_| rng.gen_range(0.05..1.0)).collect();
            row[1] = row[1].max(v as f64 * min_eos); // pre-normalization floor
            let mut row = normalized(row);
            if row[1] < min_eos {
                // rebalance so EOS keeps its floor exactly
                let scale = (1.0 - min_eos) / (1.0 - row[1]);
                for (i, p) in row.iter_mut().enumerate() {
                    if i != 1 {
                        *p *= scale;
                    }
                }
                row[1] = min_eos;
                row = normalized(row);
            }
            table.push(row);
        }
        tables.push(table);
    }
    let n_prompts = rng.gen_range(2..5usize);
    let mut weights: Vec<f64> = (0..n_prompts).map(|_| rng.gen_range(0.2..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    // make priors sum to exactly 1.0
    let tail: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - tail;
    let prompts = (0..n_prompts)
        .map(|i| {
            let len = rng.gen_range(1..4usize);
            let ids = (0..len)
                .map(|_| rng.gen_range(3..v as u32))
                .collect::<Vec<_>>();
            (TokenSequence::new(ids), weights[i])
        })
        .collect();
    OracleModel::new(vocab, classes, tables, prompts).unwrap()
}

/// Random one-hot tables: every conditional row puts all mass on one token.
/// EOS is wired to stay reachable by forcing a countdown token chain.
pub fn random_deterministic_oracle(
    rng: &mut impl Rng,
    content_words: usize,
    classes: usize,
) -> OracleModel {
    assert!(content_words >= 2);
    let vocab =
        Vocabulary::with_content((0..content_words).map(|i| format!("w{i}"))).unwrap();
    let v = vocab.len();
    let mut tables = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut table = Vec::with_capacity(v);
        for t in 0..v {
            if t == 1 {
                table.push(vec![0.0; v]);
                continue;
            }
            // Token t may only point at EOS or a strictly higher token id,
            // so every deterministic walk terminates.
            let hi = (t + 1).max(3);
            let target = if hi >= v || rng.gen_bool(0.35) {
                1
            } else {
                rng.gen_range(hi..v)
            };
            table.push(one_hot(v, target));
        }
        tables.push(table);
    }
    let n_prompts = 3usize;
    let prompts = (0..n_prompts)
        .map(|i| {
            let len = rng.gen_range(1..4usize);
            let ids = (0..len)
                .map(|_| rng.gen_range(3..v as u32))
                .collect::<Vec<_>>();
            let prior = if i == 0 {
                1.0 - 2.0 * (1.0 / 3.0f64)
            } else {
                1.0 / 3.0
            };
            (TokenSequence::new(ids), prior.max(0.0))
        })
        .collect();
    OracleModel::new(vocab, classes, tables, prompts).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn fixtures_validate() {
        two_class_chain(0.3);
        two_class_chain(0.93);
        deterministic_chain();
        uniform_oracle(10);
        let mut r = rng::stream(1, "fixtures");
        for i in 0..20 {
            random_oracle(&mut r, 2 + i % 3, 1 + i % 4, 0.05);
            random_deterministic_oracle(&mut r, 2 + i % 3, 1 + i % 4);
        }
    }
}
