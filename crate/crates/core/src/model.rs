//! Model state, checkpoints and the native (single-encoder) decoding pipeline.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charkb::{ConfusionIndex, Vocab};
use crate::encoder::{Encoder, EncoderHyper, EncoderParams, FixedFeatureEncoder, ToyEncoder};
use crate::error::{CscError, Result};
use crate::heads::{self, HeadParams, SubtaskOutput};
use crate::linalg::argmax;
use crate::searchmask::{apply_mask, build_search_matrix, ProbMatrix, SearchMatrix};
use crate::train::{EncodedPair, LabelSet};

/// Encoder and head parameters plus the provenance needed to reject a
/// checkpoint paired with the wrong vocabulary or confusion index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub vocab_hash: String,
    pub confusion_hash: String,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
    pub seed: u64,
    pub epochs: usize,
}

impl ModelState {
    /// Toy encoder and heads initialized from `uniform(-0.05, 0.05)`.
    pub fn new_toy(vocab: &Vocab, index: &ConfusionIndex, hyper: EncoderHyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ToyEncoder::random(vocab.len(), hyper, &mut rng);
        let heads = HeadParams::random(hyper.hidden, vocab.len(), &mut rng);
        ModelState {
            vocab_hash: vocab.hash(),
            confusion_hash: index.hash(),
            encoder: EncoderParams::Toy(encoder),
            heads,
            seed,
            epochs: 0,
        }
    }

    /// Fixed random-feature encoder with trainable heads.
    pub fn new_fixed(
        vocab: &Vocab,
        index: &ConfusionIndex,
        d_e: usize,
        window: usize,
        max_len: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = FixedFeatureEncoder::random(vocab.len(), d_e, window, max_len, &mut rng);
        let heads = HeadParams::random(encoder.hidden(), vocab.len(), &mut rng);
        ModelState {
            vocab_hash: vocab.hash(),
            confusion_hash: index.hash(),
            encoder: EncoderParams::Fixed(encoder),
            heads,
            seed,
            epochs: 0,
        }
    }

    /// A model that never flags and always copies its input: one-hot window
    /// features, a detection bias toward "correct" and a search head that
    /// reads back the centre character.
    pub fn identity(vocab: &Vocab, index: &ConfusionIndex, window: usize, max_len: usize) -> Self {
        let v = vocab.len();
        let encoder = FixedFeatureEncoder::one_hot(v, window, max_len);
        let mut heads = HeadParams::zeros(encoder.hidden(), v);
        heads.b_d = vec![10.0, 0.0];
        heads.b_r = vec![10.0, 0.0];
        let centre = window * v;
        for j in 0..v {
            heads.w_s.row_mut(j)[centre + j] = 20.0;
        }
        ModelState {
            vocab_hash: vocab.hash(),
            confusion_hash: index.hash(),
            encoder: EncoderParams::Fixed(encoder),
            heads,
            seed: 0,
            epochs: 0,
        }
    }

    pub fn check_compat(&self, vocab: &Vocab, index: &ConfusionIndex) -> Result<()> {
        let vh = vocab.hash();
        if vh != self.vocab_hash {
            return Err(CscError::HashMismatch {
                what: "vocab",
                expected: vh,
                found: self.vocab_hash.clone(),
            });
        }
        let ch = index.hash();
        if ch != self.confusion_hash {
            return Err(CscError::HashMismatch {
                what: "confusion-index",
                expected: ch,
                found: self.confusion_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[usize]) -> Result<SubtaskOutput> {
        let h = self.encoder.encode(x)?;
        heads::forward(&h, &self.heads)
    }

    /// Native pipeline: one encoding feeds all three heads.
    pub fn predict(
        &self,
        x: &[usize],
        index: &ConfusionIndex,
        opts: &DecodeOptions<'_>,
    ) -> Result<(Prediction, SubtaskOutput)> {
        let out = self.forward(x)?;
        let pred = decode(x, &out.y_d, &out.y_r, &out.p_s, index, opts)?;
        Ok((pred, out))
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_json_with(None)
    }

    fn to_json_with(&self, provenance: Option<serde_json::Value>) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hyper: CheckpointHyper::of(self),
            provenance,
            state: self.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(CscError::Format(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let state = ckpt.state;
        if CheckpointHyper::of(&state) != ckpt.hyper {
            return Err(CscError::shape(
                "checkpoint hyperparameters disagree with parameter shapes",
            ));
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| CscError::io(path, e))
    }

    /// Like [`ModelState::save`] but records the configuration that produced
    /// the checkpoint. Loading ignores it.
    pub fn save_with_provenance(
        &self,
        path: impl AsRef<Path>,
        provenance: serde_json::Value,
    ) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_with(Some(provenance))?).map_err(|e| CscError::io(path, e))
    }

    /// Loads a checkpoint and verifies both hashes.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocab, index: &ConfusionIndex) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CscError::io(path, e))?;
        let state = Self::from_json(&text)?;
        state.check_compat(vocab, index)?;
        Ok(state)
    }
}

const CHECKPOINT_FORMAT: &str = "csc-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHyper {
    vocab: usize,
    hidden: usize,
    max_len: usize,
    encoder: String,
}

impl CheckpointHyper {
    fn of(m: &ModelState) -> Self {
        CheckpointHyper {
            vocab: m.heads.vocab_size(),
            hidden: m.heads.hidden(),
            max_len: m.encoder.max_len(),
            encoder: match &m.encoder {
                EncoderParams::Toy(_) => "toy".into(),
                EncoderParams::Fixed(_) => "fixed".into(),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    hyper: CheckpointHyper,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    state: ModelState,
}

/// Inference switches: gold-label substitution and mask ablation.
#[derive(Clone, Copy, Debug)]
pub struct DecodeOptions<'a> {
    /// When false the search matrix is all ones.
    pub masking: bool,
    /// Replaces predicted `y_d` when building the search matrix.
    pub oracle_d: Option<&'a [u8]>,
    /// Replaces predicted `y_r` when building the search matrix.
    pub oracle_r: Option<&'a [u8]>,
}

impl Default for DecodeOptions<'_> {
    fn default() -> Self {
        DecodeOptions {
            masking: true,
            oracle_d: None,
            oracle_r: None,
        }
    }
}

/// Decisions actually used to build the search matrix and the corrected
/// sentence, all as vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub y_d: Vec<u8>,
    pub y_r: Vec<u8>,
    pub output: Vec<usize>,
}

/// Which decisions build the search matrix when decoding a labelled corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// The model's own detection and reasoning decisions.
    #[default]
    Predicted,
    /// Gold detection labels, predicted reasoning.
    GoldDetection,
    /// Gold detection and reasoning labels.
    GoldDetectionReasoning,
}

impl OracleMode {
    pub fn options<'a>(self, labels: &'a LabelSet, masking: bool) -> DecodeOptions<'a> {
        DecodeOptions {
            masking,
            oracle_d: (self != OracleMode::Predicted).then_some(&labels.g_d[..]),
            oracle_r: (self == OracleMode::GoldDetectionReasoning).then_some(&labels.g_r[..]),
        }
    }
}

impl ModelState {
    /// Native predictions for every sentence of a labelled corpus.
    pub fn predict_corpus(
        &self,
        data: &[EncodedPair],
        index: &ConfusionIndex,
        oracle: OracleMode,
        masking: bool,
    ) -> Result<Vec<Prediction>> {
        data.iter()
            .map(|ex| {
                Ok(self
                    .predict(&ex.x, index, &oracle.options(&ex.labels, masking))?
                    .0)
            })
            .collect()
    }
}

/// Builds `C` from (possibly oracle-substituted) decisions, masks `P^s` and
/// takes the per-position argmax. A special symbol winning the argmax keeps
/// the source character.
pub fn decode(
    x: &[usize],
    y_d: &[u8],
    y_r: &[u8],
    p_s: &ProbMatrix,
    index: &ConfusionIndex,
    opts: &DecodeOptions<'_>,
) -> Result<Prediction> {
    let y_d = opts.oracle_d.unwrap_or(y_d);
    let y_r = opts.oracle_r.unwrap_or(y_r);
    let c = if opts.masking {
        build_search_matrix(x, y_d, y_r, index)?
    } else {
        if y_d.len() != x.len() || y_r.len() != x.len() {
            return Err(CscError::shape(
                "decision length differs from sentence length",
            ));
        }
        SearchMatrix::all_ones(x.len(), p_s.cols())
    };
    let p = apply_mask(p_s, &c, false)?;
    let output = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let best = argmax(p.row(i));
            if best <= crate::charkb::UNK {
                xi
            } else {
                best
            }
        })
        .collect();
    Ok(Prediction {
        y_d: y_d.to_vec(),
        y_r: y_r.to_vec(),
        output,
    })
}
