//! Label derivation, the three subtask losses, the joint objective and a
//! seeded mini-batch trainer.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charkb::{ConfusionIndex, Vocab};
use crate::encoder::{Encoder, EncoderParams, ToyEncoderGrads, DEFAULT_MAX_LEN};
use crate::error::{CscError, Result};
use crate::heads::{self, HeadGrads, HeadUpstream};
use crate::linalg::{argmax, Mat};
use crate::model::ModelState;
use crate::searchmask::{apply_mask, build_search_matrix, ProbMatrix, SearchMatrix, PROB_FLOOR};

/// Aligned source and gold sentences of equal length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: Vec<char>,
    pub tgt: Vec<char>,
}

impl SentencePair {
    pub fn new(src: Vec<char>, tgt: Vec<char>) -> Result<Self> {
        Self::with_max_len(src, tgt, DEFAULT_MAX_LEN)
    }

    pub fn with_max_len(src: Vec<char>, tgt: Vec<char>, max_len: usize) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(CscError::shape(format!(
                "source has {} characters, target has {}",
                src.len(),
                tgt.len()
            )));
        }
        if src.is_empty() {
            return Err(CscError::shape("empty sentence"));
        }
        if src.len() > max_len {
            return Err(CscError::Length {
                len: src.len(),
                max: max_len,
            });
        }
        Ok(SentencePair { src, tgt })
    }

    pub fn from_strs(src: &str, tgt: &str) -> Result<Self> {
        Self::new(src.chars().collect(), tgt.chars().collect())
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Per-position training labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    /// 1 where source and gold differ.
    pub g_d: Vec<u8>,
    /// 1 = phonological, 0 = morphological; 0 where `g_d = 0`.
    pub g_r: Vec<u8>,
    /// Gold vocabulary indices.
    pub g: Vec<usize>,
    /// Error positions whose gold lies in neither confusion set of the source.
    pub uncoverable: Vec<usize>,
}

/// Labels from index sequences. A gold character in the phonological set
/// wins even when it is also in the visual set; uncoverable positions get
/// `g_r = 1` and are listed.
pub fn label_indices(x: &[usize], g: &[usize], index: &ConfusionIndex) -> LabelSet {
    let mut g_d = Vec::with_capacity(x.len());
    let mut g_r = Vec::with_capacity(x.len());
    let mut uncoverable = Vec::new();
    for (i, (&s, &t)) in x.iter().zip(g).enumerate() {
        if s == t {
            g_d.push(0);
            g_r.push(0);
            continue;
        }
        g_d.push(1);
        if index.in_pc(s, t) {
            g_r.push(1);
        } else if index.in_vc(s, t) {
            g_r.push(0);
        } else {
            g_r.push(1);
            uncoverable.push(i);
        }
    }
    LabelSet {
        g_d,
        g_r,
        g: g.to_vec(),
        uncoverable,
    }
}

/// Labels that tolerate uncoverable positions (they are flagged instead).
pub fn derive_labels_lenient(
    pair: &SentencePair,
    vocab: &Vocab,
    index: &ConfusionIndex,
) -> Result<LabelSet> {
    let x = vocab.encode(&pair.src)?;
    let g = vocab.encode(&pair.tgt)?;
    Ok(label_indices(&x, &g, index))
}

/// Labels for a pair; fails when any error position is uncoverable.
pub fn derive_labels(
    pair: &SentencePair,
    vocab: &Vocab,
    index: &ConfusionIndex,
) -> Result<LabelSet> {
    let labels = derive_labels_lenient(pair, vocab, index)?;
    if !labels.uncoverable.is_empty() {
        return Err(CscError::Uncoverable {
            positions: labels.uncoverable,
        });
    }
    Ok(labels)
}

/// Source indices with their labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub x: Vec<usize>,
    pub labels: LabelSet,
}

pub fn encode_corpus(
    corpus: &[SentencePair],
    vocab: &Vocab,
    index: &ConfusionIndex,
) -> Result<Vec<EncodedPair>> {
    corpus
        .iter()
        .map(|p| {
            Ok(EncodedPair {
                x: vocab.encode(&p.src)?,
                labels: derive_labels_lenient(p, vocab, index)?,
            })
        })
        .collect()
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CscError::shape(format!("{what}: {a} rows vs {b} labels")));
    }
    Ok(())
}

/// `−Σ_i log p_d[i][g_d[i]]`, probabilities floored at 1e−12.
pub fn loss_detection(p_d: &Mat, g_d: &[u8]) -> Result<f64> {
    check_len("detection", p_d.rows, g_d.len())?;
    Ok(g_d
        .iter()
        .enumerate()
        .map(|(i, &g)| -p_d.get(i, g as usize).max(PROB_FLOOR).ln())
        .sum())
}

/// `−Σ_i gate[i] · log p_r[i][g_r[i]]`.
pub fn loss_reasoning(p_r: &Mat, g_r: &[u8], gate: &[u8]) -> Result<f64> {
    check_len("reasoning", p_r.rows, g_r.len())?;
    check_len("reasoning gate", p_r.rows, gate.len())?;
    Ok(g_r
        .iter()
        .zip(gate)
        .enumerate()
        .filter(|(_, (_, &on))| on == 1)
        .map(|(i, (&g, _))| -p_r.get(i, g as usize).max(PROB_FLOOR).ln())
        .sum())
}

/// `−Σ_i log max(p[i][g[i]], 1e−12)` over the masked, renormalized distribution.
pub fn loss_searching(p_masked: &ProbMatrix, g: &[usize]) -> Result<f64> {
    check_len("searching", p_masked.rows(), g.len())?;
    Ok(g.iter()
        .enumerate()
        .map(|(i, &gi)| -p_masked.row(i)[gi].max(PROB_FLOOR).ln())
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// `α·L_d + β·L_r + γ·L_s`
pub fn total_loss(l_d: f64, l_r: f64, l_s: f64, w: &LossWeights) -> f64 {
    w.alpha * l_d + w.beta * l_r + w.gamma * l_s
}

/// Which decisions gate the reasoning loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// The model's own detection decisions.
    Predicted,
    /// Gold detection labels.
    Gold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub gate: GateMode,
    /// When false the search matrix is all ones during training as well.
    pub masking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            gate: GateMode::Predicted,
            masking: true,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma]
            .iter()
            .any(|w| w.is_nan() || *w < 0.0)
        {
            return Err(CscError::Config("loss weights must be nonnegative".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(CscError::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CscError::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(CscError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Gradients laid out like [`ModelState::param_blocks_mut`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub encoder: Option<ToyEncoderGrads>,
    pub heads: HeadGrads,
}

impl Grads {
    pub fn zeros_like(model: &ModelState) -> Self {
        Grads {
            encoder: model.encoder.as_toy().map(ToyEncoderGrads::zeros_like),
            heads: HeadGrads::zeros_like(&model.heads),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.blocks());
        }
        out.extend(self.heads.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.extend(e.blocks_mut());
        }
        out.extend(self.heads.blocks_mut());
        out
    }

    fn fill_zero(&mut self) {
        for (_, b) in self.blocks_mut() {
            b.fill(0.0);
        }
    }
}

impl ModelState {
    /// Trainable parameter blocks: the toy encoder's (if any), then the heads'.
    pub fn param_blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = Vec::new();
        if let Some(e) = self.encoder.as_toy_mut() {
            out.extend(e.blocks_mut());
        }
        out.extend(self.heads.blocks_mut());
        out
    }

    pub fn param_blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::new();
        if let Some(e) = self.encoder.as_toy() {
            out.extend(e.blocks());
        }
        out.extend(self.heads.blocks());
        out
    }
}

/// Decisions held constant while differentiating.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenDecisions {
    pub gate: Vec<u8>,
    pub mask: SearchMatrix,
}

/// Losses and bookkeeping for one sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SentenceLoss {
    pub l_d: f64,
    pub l_r: f64,
    pub l_s: f64,
    pub total: f64,
    pub positions: usize,
    pub detect_correct: usize,
    pub reason_correct: usize,
    pub reason_total: usize,
    pub search_correct: usize,
    /// Positions whose gold character was masked out.
    pub gold_masked: usize,
}

/// The decisions that gate `L_r` and shape the mask at the current parameters.
pub fn current_decisions(
    model: &ModelState,
    ex: &EncodedPair,
    index: &ConfusionIndex,
    gate: GateMode,
) -> Result<FrozenDecisions> {
    let out = model.forward(&ex.x)?;
    Ok(FrozenDecisions {
        gate: match gate {
            GateMode::Predicted => out.y_d.clone(),
            GateMode::Gold => ex.labels.g_d.clone(),
        },
        mask: build_search_matrix(&ex.x, &out.y_d, &out.y_r, index)?,
    })
}

/// Joint objective for one sentence, optionally accumulating its gradient.
/// Decisions come from `frozen` when given, otherwise from the current model.
pub fn sentence_objective(
    model: &ModelState,
    ex: &EncodedPair,
    index: &ConfusionIndex,
    config: &TrainConfig,
    frozen: Option<&FrozenDecisions>,
    grads: Option<&mut Grads>,
) -> Result<SentenceLoss> {
    let x = &ex.x;
    let labels = &ex.labels;
    let t = x.len();
    let h = model.encoder.encode(x)?;
    let out = heads::forward(&h, &model.heads)?;
    let owned;
    let (gate, mask) = match frozen {
        Some(f) => (&f.gate, &f.mask),
        None => {
            owned = FrozenDecisions {
                gate: match config.gate {
                    GateMode::Predicted => out.y_d.clone(),
                    GateMode::Gold => labels.g_d.clone(),
                },
                mask: if config.masking {
                    build_search_matrix(x, &out.y_d, &out.y_r, index)?
                } else {
                    SearchMatrix::all_ones(t, out.p_s.cols())
                },
            };
            (&owned.gate, &owned.mask)
        }
    };
    let masked = apply_mask(&out.p_s, mask, true)?;
    let w = config.weights();
    let l_d = loss_detection(&out.p_d, &labels.g_d)?;
    let l_r = loss_reasoning(&out.p_r, &labels.g_r, gate)?;
    let l_s = loss_searching(&masked, &labels.g)?;
    let total = total_loss(l_d, l_r, l_s, &w);

    let mut stats = SentenceLoss {
        l_d,
        l_r,
        l_s,
        total,
        positions: t,
        ..Default::default()
    };
    for i in 0..t {
        stats.detect_correct += usize::from(out.y_d[i] == labels.g_d[i]);
        if labels.g_d[i] == 1 {
            stats.reason_total += 1;
            stats.reason_correct += usize::from(out.y_r[i] == labels.g_r[i]);
        }
        stats.search_correct += usize::from(argmax(masked.row(i)) == labels.g[i]);
        stats.gold_masked += usize::from(!mask.rows[i].get(labels.g[i]));
    }

    let Some(grads) = grads else {
        return Ok(stats);
    };

    let mut up_d = Mat::zeros(t, 2);
    let mut up_r = Mat::zeros(t, 2);
    let vocab = out.p_s.cols();
    let mut up_s = Mat::zeros(t, vocab);
    #[allow(clippy::needless_range_loop)]
    for i in 0..t {
        let gd = labels.g_d[i] as usize;
        let pd = out.p_d.get(i, gd);
        if pd >= PROB_FLOOR {
            up_d.row_mut(i)[gd] = -w.alpha / pd;
        }
        if gate[i] == 1 {
            let gr = labels.g_r[i] as usize;
            let pr = out.p_r.get(i, gr);
            if pr >= PROB_FLOOR {
                up_r.row_mut(i)[gr] = -w.beta / pr;
            }
        }
        // L = −log(p_g c_g / S), S = Σ_k p_k c_k.
        let g = labels.g[i];
        if masked.row(i)[g] >= PROB_FLOOR {
            let ps = out.p_s.row(i);
            let row_mask = &mask.rows[i];
            let sum: f64 = if row_mask.is_all_ones() {
                ps.iter().sum()
            } else {
                ps.iter()
                    .enumerate()
                    .filter(|(k, _)| row_mask.get(*k))
                    .map(|(_, p)| p)
                    .sum()
            };
            let up = up_s.row_mut(i);
            if sum >= PROB_FLOOR {
                let inv = w.gamma / sum;
                for (k, u) in up.iter_mut().enumerate() {
                    if row_mask.get(k) {
                        *u = inv;
                    }
                }
            }
            up[g] -= w.gamma / ps[g];
        }
    }
    let upstream = HeadUpstream {
        p_d: Some(up_d),
        p_r: Some(up_r),
        p_s: Some(up_s),
    };
    let dh = heads::accumulate_heads_backward(&h, &model.heads, &out, &upstream, &mut grads.heads)?;
    if let (EncoderParams::Toy(enc), Some(g)) = (&model.encoder, grads.encoder.as_mut()) {
        enc.accumulate_backward(x, &h, &dh, g)?;
    }
    Ok(stats)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Per-sentence means.
    pub l_d: f64,
    pub l_r: f64,
    pub l_s: f64,
    pub l: f64,
    pub detection_accuracy: f64,
    pub reasoning_accuracy: f64,
    pub searching_accuracy: f64,
    pub gold_masked: usize,
    pub uncoverable: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Trains `model` on `corpus` with mini-batch gradient descent (optional
/// momentum). The search matrix in each step comes from the current
/// decisions and is not differentiated.
pub fn fit(
    corpus: &[SentencePair],
    model: ModelState,
    vocab: &Vocab,
    index: &ConfusionIndex,
    config: &TrainConfig,
) -> Result<(ModelState, Vec<EpochLog>)> {
    model.check_compat(vocab, index)?;
    let data = encode_corpus(corpus, vocab, index)?;
    fit_encoded(&data, model, index, config)
}

pub fn fit_encoded(
    data: &[EncodedPair],
    mut model: ModelState,
    index: &ConfusionIndex,
    config: &TrainConfig,
) -> Result<(ModelState, Vec<EpochLog>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(CscError::Config("empty training corpus".into()));
    }
    let uncoverable: usize = data.iter().map(|e| e.labels.uncoverable.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Grads::zeros_like(&model);
    let mut velocity: Vec<Vec<f64>> = grads
        .blocks()
        .iter()
        .map(|(_, b)| vec![0.0; b.len()])
        .collect();
    let mut logs = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let epoch = model.epochs + 1;
        order.shuffle(&mut rng);
        let mut acc = SentenceLoss::default();
        for batch in order.chunks(config.batch_size) {
            grads.fill_zero();
            for &k in batch {
                let s =
                    sentence_objective(&model, &data[k], index, config, None, Some(&mut grads))?;
                if !s.total.is_finite() {
                    return Err(CscError::Divergence {
                        epoch,
                        message: format!("non-finite loss on sentence {k}"),
                    });
                }
                acc.l_d += s.l_d;
                acc.l_r += s.l_r;
                acc.l_s += s.l_s;
                acc.total += s.total;
                acc.positions += s.positions;
                acc.detect_correct += s.detect_correct;
                acc.reason_correct += s.reason_correct;
                acc.reason_total += s.reason_total;
                acc.search_correct += s.search_correct;
                acc.gold_masked += s.gold_masked;
            }
            let scale = 1.0 / batch.len() as f64;
            for ((_, param), ((_, grad), vel)) in model
                .param_blocks_mut()
                .into_iter()
                .zip(grads.blocks().into_iter().zip(velocity.iter_mut()))
            {
                for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = config.momentum * *v + g * scale;
                    *p -= config.learning_rate * *v;
                }
            }
            if model
                .param_blocks()
                .iter()
                .any(|(_, b)| b.iter().any(|v| !v.is_finite()))
            {
                return Err(CscError::Divergence {
                    epoch,
                    message: "non-finite parameters after update".into(),
                });
            }
        }
        let n = data.len() as f64;
        logs.push(EpochLog {
            epoch,
            l_d: acc.l_d / n,
            l_r: acc.l_r / n,
            l_s: acc.l_s / n,
            l: acc.total / n,
            detection_accuracy: ratio(acc.detect_correct, acc.positions),
            reasoning_accuracy: ratio(acc.reason_correct, acc.reason_total),
            searching_accuracy: ratio(acc.search_correct, acc.positions),
            gold_masked: acc.gold_masked,
            uncoverable,
        });
        model.epochs = epoch;
    }
    Ok((model, logs))
}

/// Writes one JSON record per epoch.
pub fn write_log(path: impl AsRef<Path>, logs: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for l in logs {
        serde_json::to_writer(&mut out, l)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| CscError::io(path, e))
}
