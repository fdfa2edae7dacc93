#![allow(dead_code)]

use csc_core::charkb::{build_confusion_index, CharRecord, SimilarityPolicy, Vocab};
use csc_core::corpus::synthetic_char_table;
use csc_core::encoder::{EncoderHyper, Encoding};
use csc_core::heads::{self, HeadUpstream};
use csc_core::linalg::Mat;
use csc_core::model::ModelState;
use csc_core::model::Prediction;
use csc_core::searchmask::build_search_matrix;
use csc_core::train::{
    label_indices, sentence_objective, EncodedPair, FrozenDecisions, GateMode, TrainConfig,
};
use csc_core::{ConfusionIndex, EncoderParams};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor for the relative error. Below it the comparison is
/// absolute (1e-9), a few ulps of a loss near 30 divided by `2 * FD_STEP`.
pub const FD_FLOOR: f64 = 1e-5;

pub struct World {
    pub records: Vec<CharRecord>,
    pub vocab: Vocab,
    pub index: ConfusionIndex,
}

pub fn world(n_chars: usize, seed: u64) -> World {
    let records = synthetic_char_table(n_chars, seed);
    let vocab = Vocab::from_records(&records).unwrap();
    let index = build_confusion_index(&vocab, &records, &SimilarityPolicy::default()).unwrap();
    World {
        records,
        vocab,
        index,
    }
}

/// A gold sentence of uniform characters with each position corrupted from
/// the gold character's confusion sets with probability `rate`.
pub fn random_example(rng: &mut impl Rng, w: &World, len: usize, rate: f64) -> EncodedPair {
    let chars: Vec<usize> = w.vocab.char_indices().collect();
    let g: Vec<usize> = (0..len).map(|_| *chars.choose(rng).unwrap()).collect();
    let x: Vec<usize> = g
        .iter()
        .map(|&t| {
            if !rng.gen_bool(rate) {
                return t;
            }
            let set = if rng.gen_bool(0.5) {
                w.index.pc(t)
            } else {
                w.index.vc(t)
            };
            let others: Vec<usize> = set.iter().copied().filter(|&c| c != t).collect();
            others.choose(rng).copied().unwrap_or(t)
        })
        .collect();
    EncodedPair {
        labels: label_indices(&x, &g, &w.index),
        x,
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Worst relative error per parameter block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: &'static str,
    pub entries: usize,
    pub max_rel: f64,
}

pub fn worst(reports: &[BlockReport]) -> f64 {
    reports.iter().map(|r| r.max_rel).fold(0.0, f64::max)
}

fn randomize(model: &mut ModelState, rng: &mut impl Rng, scale: f64) {
    for (_, block) in model.param_blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_config(rng: &mut impl Rng) -> TrainConfig {
    TrainConfig {
        alpha: rng.gen_range(0.5..2.0),
        beta: rng.gen_range(0.5..2.0),
        gamma: rng.gen_range(0.5..2.0),
        gate: if rng.gen_bool(0.5) {
            GateMode::Predicted
        } else {
            GateMode::Gold
        },
        ..TrainConfig::default()
    }
}

/// Random decisions, so every mask branch and both gate values occur.
pub fn random_decisions(
    rng: &mut impl Rng,
    x: &[usize],
    index: &ConfusionIndex,
) -> FrozenDecisions {
    let y_d: Vec<u8> = x.iter().map(|_| rng.gen_range(0..2)).collect();
    let y_r: Vec<u8> = x.iter().map(|_| rng.gen_range(0..2)).collect();
    FrozenDecisions {
        gate: x.iter().map(|_| rng.gen_range(0..2)).collect(),
        mask: build_search_matrix(x, &y_d, &y_r, index).unwrap(),
    }
}

/// Checks the joint objective's gradient against central differences for
/// every trainable entry, with decisions frozen.
pub fn check_objective(rng: &mut impl Rng, w: &World, trainable: bool) -> Vec<BlockReport> {
    let hyper = EncoderHyper {
        d_e: rng.gen_range(2..5),
        hidden: rng.gen_range(2..6),
        window: rng.gen_range(0..3),
        max_len: 16,
    };
    let mut model = if trainable {
        ModelState::new_toy(&w.vocab, &w.index, hyper, rng.gen())
    } else {
        ModelState::new_fixed(
            &w.vocab,
            &w.index,
            hyper.d_e,
            hyper.window,
            hyper.max_len,
            rng.gen(),
        )
    };
    randomize(&mut model, rng, 0.8);
    let len = rng.gen_range(1..7);
    let ex = random_example(rng, w, len, 0.4);
    let config = random_config(rng);
    let frozen = random_decisions(rng, &ex.x, &w.index);

    let mut grads = csc_core::train::Grads::zeros_like(&model);
    sentence_objective(
        &model,
        &ex,
        &w.index,
        &config,
        Some(&frozen),
        Some(&mut grads),
    )
    .unwrap();
    let analytic: Vec<(&'static str, Vec<f64>)> = grads
        .blocks()
        .into_iter()
        .map(|(n, b)| (n, b.to_vec()))
        .collect();

    let loss = |m: &ModelState| {
        sentence_objective(m, &ex, &w.index, &config, Some(&frozen), None)
            .unwrap()
            .total
    };
    let mut reports = Vec::new();
    for (bi, (name, a)) in analytic.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            let orig = model.param_blocks()[bi].1[j];
            model.param_blocks_mut()[bi].1[j] = orig + FD_STEP;
            let up = loss(&model);
            model.param_blocks_mut()[bi].1[j] = orig - FD_STEP;
            let down = loss(&model);
            model.param_blocks_mut()[bi].1[j] = orig;
            max_rel = max_rel.max(rel_err(aj, (up - down) / (2.0 * FD_STEP)));
        }
        reports.push(BlockReport {
            name,
            entries: a.len(),
            max_rel,
        });
    }
    reports
}

/// A random linear functional of the head probabilities, checked for the
/// parameter gradients and the gradient with respect to `H`. `which` selects
/// the heads receiving upstream gradient (detection, reasoning, searching).
pub fn check_heads(rng: &mut impl Rng, which: [bool; 3]) -> Vec<BlockReport> {
    let hidden = rng.gen_range(2..6);
    let vocab = rng.gen_range(4..12);
    let t = rng.gen_range(1..6);
    let mut params = heads::HeadParams::random(hidden, vocab, rng);
    for (_, b) in params.blocks_mut() {
        for v in b.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut h = Mat::zeros(t, hidden);
    h.data
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut h = Encoding { h };
    let mut rand_mat = |cols: usize, on: bool| {
        on.then(|| {
            let mut m = Mat::zeros(t, cols);
            m.data
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-1.0..1.0));
            m
        })
    };
    let upstream = HeadUpstream {
        p_d: rand_mat(2, which[0]),
        p_r: rand_mat(2, which[1]),
        p_s: rand_mat(vocab, which[2]),
    };
    let f = |h: &Encoding, p: &heads::HeadParams| {
        let out = heads::forward(h, p).unwrap();
        let mut s = 0.0;
        for (u, m) in [
            (&upstream.p_d, &out.p_d),
            (&upstream.p_r, &out.p_r),
            (&upstream.p_s, &out.p_s.0),
        ] {
            if let Some(u) = u {
                s += u.data.iter().zip(&m.data).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        s
    };
    let (grads, dh) = heads::heads_backward(&h, &params, &upstream).unwrap();
    let mut reports = Vec::new();
    for (bi, (name, a)) in grads.blocks().into_iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            let orig = params.blocks()[bi].1[j];
            params.blocks_mut()[bi].1[j] = orig + FD_STEP;
            let up = f(&h, &params);
            params.blocks_mut()[bi].1[j] = orig - FD_STEP;
            let down = f(&h, &params);
            params.blocks_mut()[bi].1[j] = orig;
            max_rel = max_rel.max(rel_err(aj, (up - down) / (2.0 * FD_STEP)));
        }
        reports.push(BlockReport {
            name,
            entries: a.len(),
            max_rel,
        });
    }
    let mut max_rel: f64 = 0.0;
    for j in 0..h.h.data.len() {
        let orig = h.h.data[j];
        h.h.data[j] = orig + FD_STEP;
        let up = f(&h, &params);
        h.h.data[j] = orig - FD_STEP;
        let down = f(&h, &params);
        h.h.data[j] = orig;
        max_rel = max_rel.max(rel_err(dh.h.data[j], (up - down) / (2.0 * FD_STEP)));
    }
    reports.push(BlockReport {
        name: "H",
        entries: h.h.data.len(),
        max_rel,
    });
    reports
}

/// `Σ U ⊙ H` for a random `U`, checked against the toy encoder's backward pass.
pub fn check_encoder(rng: &mut impl Rng, vocab: usize) -> Vec<BlockReport> {
    let hyper = EncoderHyper {
        d_e: rng.gen_range(1..5),
        hidden: rng.gen_range(1..6),
        window: rng.gen_range(0..3),
        max_len: 16,
    };
    let mut enc = csc_core::ToyEncoder::random(vocab, hyper, rng);
    for (_, b) in enc.blocks_mut() {
        for v in b.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let t = rng.gen_range(1..8);
    let x: Vec<usize> = (0..t).map(|_| rng.gen_range(0..vocab)).collect();
    let mut u = Mat::zeros(t, hyper.hidden);
    u.data
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let upstream = Encoding { h: u };
    let f = |e: &csc_core::ToyEncoder| {
        use csc_core::Encoder;
        let h = e.encode(&x).unwrap();
        h.h.data
            .iter()
            .zip(&upstream.h.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let grads = enc.encode_backward(&x, &upstream).unwrap();
    let mut reports = Vec::new();
    for (bi, (name, a)) in grads.blocks().into_iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            let orig = enc.blocks()[bi].1[j];
            enc.blocks_mut()[bi].1[j] = orig + FD_STEP;
            let up = f(&enc);
            enc.blocks_mut()[bi].1[j] = orig - FD_STEP;
            let down = f(&enc);
            enc.blocks_mut()[bi].1[j] = orig;
            max_rel = max_rel.max(rel_err(aj, (up - down) / (2.0 * FD_STEP)));
        }
        reports.push(BlockReport {
            name,
            entries: a.len(),
            max_rel,
        });
    }
    reports
}

pub fn is_toy(m: &ModelState) -> bool {
    matches!(m.encoder, EncoderParams::Toy(_))
}

pub const MINI_REPORT: &str = include_str!("../golden/mini_report.json");

#[derive(Deserialize)]
struct Sentence {
    src: String,
    tgt: String,
    y_d: Vec<u8>,
    y_r: Vec<u8>,
    output: String,
}

#[derive(Deserialize)]
struct Fixture {
    chars: String,
    pc: Vec<String>,
    vc: Vec<String>,
    sentences: Vec<Sentence>,
}

pub struct Mini {
    pub index: ConfusionIndex,
    pub gold: Vec<EncodedPair>,
    pub preds: Vec<Prediction>,
}

fn sets(vocab: &Vocab, groups: &[String]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); vocab.len()];
    for g in groups {
        let members: Vec<char> = g.chars().collect();
        let ids = vocab.encode(&members).unwrap();
        for &i in &ids {
            out[i] = ids.clone();
        }
    }
    out
}

/// The six-sentence hand-enumerated corpus with its predictions.
pub fn mini_corpus() -> Mini {
    let f: Fixture = serde_json::from_str(include_str!("../golden/mini.json")).unwrap();
    let vocab = Vocab::from_chars(f.chars.chars()).unwrap();
    let index = ConfusionIndex::from_sets(sets(&vocab, &f.pc), sets(&vocab, &f.vc)).unwrap();
    let enc = |s: &str| vocab.encode(&s.chars().collect::<Vec<_>>()).unwrap();
    let mut gold = Vec::new();
    let mut preds = Vec::new();
    for s in &f.sentences {
        let x = enc(&s.src);
        gold.push(EncodedPair {
            labels: label_indices(&x, &enc(&s.tgt), &index),
            x,
        });
        preds.push(Prediction {
            y_d: s.y_d.clone(),
            y_r: s.y_r.clone(),
            output: enc(&s.output),
        });
    }
    Mini { index, gold, preds }
}

/// Literal three-branch search row over a dense vocabulary.
pub fn dense_row(x: usize, y_d: u8, y_r: u8, index: &ConfusionIndex) -> Vec<f64> {
    (0..index.vocab_size())
        .map(|j| match (y_d, y_r) {
            (1, 1) => f64::from(u8::from(index.pc(x).contains(&j))),
            (1, 0) => f64::from(u8::from(index.vc(x).contains(&j))),
            _ => 1.0,
        })
        .collect()
}
