//! Transfer of a trained detection-and-reasoning (D-R) module onto another
//! model's correction distribution, with no retraining.
//!
//! The D-R module encodes the sentence with its own encoder `E`, decides
//! error positions and types, and builds the search matrix `C`; the
//! correction model encodes with `E′` and produces `P′`. The output is the
//! argmax of `P′ ⊙ C`.

use serde::{Deserialize, Serialize};

use crate::charkb::{ConfusionIndex, Vocab};
use crate::encoder::{Encoder, EncoderParams};
use crate::error::{CscError, Result};
use crate::heads::{decide, linear_softmax, SubtaskOutput};
use crate::linalg::Mat;
use crate::model::{decode, DecodeOptions, ModelState, OracleMode, Prediction};
use crate::searchmask::{build_search_matrix, ProbMatrix, SearchMatrix};
use crate::train::EncodedPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrModule {
    pub vocab_hash: String,
    pub confusion_hash: String,
    pub encoder: EncoderParams,
    pub w_d: Mat,
    pub b_d: Vec<f64>,
    pub w_r: Mat,
    pub b_r: Vec<f64>,
}

impl DrModule {
    pub fn from_model(m: &ModelState) -> Self {
        DrModule {
            vocab_hash: m.vocab_hash.clone(),
            confusion_hash: m.confusion_hash.clone(),
            encoder: m.encoder.clone(),
            w_d: m.heads.w_d.clone(),
            b_d: m.heads.b_d.clone(),
            w_r: m.heads.w_r.clone(),
            b_r: m.heads.b_r.clone(),
        }
    }

    /// Checks the module was trained against this vocabulary and index.
    pub fn check_compat(&self, vocab: &Vocab, index: &ConfusionIndex) -> Result<()> {
        if self.vocab_hash != vocab.hash() {
            return Err(CscError::HashMismatch {
                what: "vocab",
                expected: vocab.hash(),
                found: self.vocab_hash.clone(),
            });
        }
        if self.confusion_hash != index.hash() {
            return Err(CscError::HashMismatch {
                what: "confusion-index",
                expected: index.hash(),
                found: self.confusion_hash.clone(),
            });
        }
        Ok(())
    }

    fn probs(&self, x: &[usize]) -> Result<(Mat, Mat)> {
        let h = self.encoder.encode(x)?;
        if h.hidden() != self.w_d.cols || h.hidden() != self.w_r.cols {
            return Err(CscError::shape(
                "D-R heads do not match their encoder width",
            ));
        }
        Ok((
            linear_softmax(&h, &self.w_d, &self.b_d),
            linear_softmax(&h, &self.w_r, &self.b_r),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionModel {
    pub vocab_hash: String,
    pub encoder: EncoderParams,
    pub w_s: Mat,
    pub b_s: Vec<f64>,
}

impl CorrectionModel {
    pub fn from_model(m: &ModelState) -> Self {
        CorrectionModel {
            vocab_hash: m.vocab_hash.clone(),
            encoder: m.encoder.clone(),
            w_s: m.heads.w_s.clone(),
            b_s: m.heads.b_s.clone(),
        }
    }

    /// `P′ = OutputLayer(E′(X))`
    pub fn correction_probs(&self, x: &[usize]) -> Result<ProbMatrix> {
        let h = self.encoder.encode(x)?;
        if h.hidden() != self.w_s.cols {
            return Err(CscError::shape(
                "output layer does not match its encoder width",
            ));
        }
        Ok(ProbMatrix(linear_softmax(&h, &self.w_s, &self.b_s)))
    }
}

/// Detection and reasoning decisions plus the resulting search matrix.
pub fn dr_infer(
    x: &[usize],
    dr: &DrModule,
    index: &ConfusionIndex,
) -> Result<(Vec<u8>, Vec<u8>, SearchMatrix)> {
    let (p_d, p_r) = dr.probs(x)?;
    let y_d = decide(&p_d);
    let y_r = decide(&p_r);
    let c = build_search_matrix(x, &y_d, &y_r, index)?;
    Ok((y_d, y_r, c))
}

/// Runs the D-R module and the correction model side by side and decodes
/// `P′ ⊙ C`. Oracle labels in `opts` replace the module's decisions.
pub fn combined_predict(
    x: &[usize],
    dr: &DrModule,
    model: &CorrectionModel,
    index: &ConfusionIndex,
    opts: &DecodeOptions<'_>,
) -> Result<(Prediction, SubtaskOutput)> {
    if dr.vocab_hash != model.vocab_hash {
        return Err(CscError::HashMismatch {
            what: "vocab",
            expected: dr.vocab_hash.clone(),
            found: model.vocab_hash.clone(),
        });
    }
    for (name, oracle) in [("oracle_d", opts.oracle_d), ("oracle_r", opts.oracle_r)] {
        if oracle.is_some_and(|o| o.len() != x.len()) {
            return Err(CscError::shape(format!(
                "{name} length differs from sentence"
            )));
        }
    }
    let (p_d, p_r) = dr.probs(x)?;
    let y_d = decide(&p_d);
    let y_r = decide(&p_r);
    let p_s = model.correction_probs(x)?;
    let pred = decode(x, &y_d, &y_r, &p_s, index, opts)?;
    Ok((
        pred,
        SubtaskOutput {
            p_d,
            y_d,
            p_r,
            y_r,
            p_s,
        },
    ))
}

/// [`combined_predict`] over a labelled corpus.
pub fn transfer_corpus(
    data: &[EncodedPair],
    dr: &DrModule,
    model: &CorrectionModel,
    index: &ConfusionIndex,
    oracle: OracleMode,
    masking: bool,
) -> Result<Vec<Prediction>> {
    data.iter()
        .map(|ex| {
            Ok(combined_predict(
                &ex.x,
                dr,
                model,
                index,
                &oracle.options(&ex.labels, masking),
            )?
            .0)
        })
        .collect()
}
