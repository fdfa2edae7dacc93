//! Detection, reasoning and searching heads: linear maps over encoding rows
//! followed by a softmax, with exact backward passes.
//!
//! Label conventions: detection 1 = wrong character, reasoning
//! 1 = phonological error and 0 = morphological error. Argmax ties pick 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoding;
use crate::error::{CscError, Result};
use crate::linalg::{argmax, softmax_backward, softmax_into, Mat};
use crate::searchmask::ProbMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `2 × hidden`
    pub w_d: Mat,
    pub b_d: Vec<f64>,
    /// `2 × hidden`
    pub w_r: Mat,
    pub b_r: Vec<f64>,
    /// `vocab × hidden`
    pub w_s: Mat,
    pub b_s: Vec<f64>,
}

pub const HEAD_BLOCKS: [&str; 6] = ["W_D", "b_D", "W_R", "b_R", "W_S", "b_S"];

impl HeadParams {
    pub fn zeros(hidden: usize, vocab: usize) -> Self {
        HeadParams {
            w_d: Mat::zeros(2, hidden),
            b_d: vec![0.0; 2],
            w_r: Mat::zeros(2, hidden),
            b_r: vec![0.0; 2],
            w_s: Mat::zeros(vocab, hidden),
            b_s: vec![0.0; vocab],
        }
    }

    pub fn random(hidden: usize, vocab: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hidden, vocab);
        for (_, block) in p.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_d.cols
    }

    pub fn vocab_size(&self) -> usize {
        self.w_s.rows
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("W_D", &self.w_d.data),
            ("b_D", &self.b_d),
            ("W_R", &self.w_r.data),
            ("b_R", &self.b_r),
            ("W_S", &self.w_s.data),
            ("b_S", &self.b_s),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            ("W_D", &mut self.w_d.data),
            ("b_D", &mut self.b_d),
            ("W_R", &mut self.w_r.data),
            ("b_R", &mut self.b_r),
            ("W_S", &mut self.w_s.data),
            ("b_S", &mut self.b_s),
        ]
    }

    fn check_hidden(&self, h: &Encoding) -> Result<()> {
        if h.hidden() != self.hidden() {
            return Err(CscError::shape(format!(
                "encoding width {} for heads of width {}",
                h.hidden(),
                self.hidden()
            )));
        }
        Ok(())
    }
}

/// Outputs of all three subtasks for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtaskOutput {
    pub p_d: Mat,
    pub y_d: Vec<u8>,
    pub p_r: Mat,
    pub y_r: Vec<u8>,
    pub p_s: ProbMatrix,
}

/// `softmax(W·h_i + b)` for every row.
pub fn linear_softmax(h: &Encoding, w: &Mat, b: &[f64]) -> Mat {
    let t = h.len();
    let mut p = Mat::zeros(t, w.rows);
    let mut logits = vec![0.0; w.rows];
    for i in 0..t {
        w.affine(h.h.row(i), b, &mut logits);
        softmax_into(&logits, p.row_mut(i));
    }
    p
}

/// Binary decisions from two-column probability rows (ties pick 0).
pub fn decide(p: &Mat) -> Vec<u8> {
    p.iter_rows().map(|r| argmax(r) as u8).collect()
}

/// Per-position probability that the character is wrong, and the decision.
pub fn detect(h: &Encoding, params: &HeadParams) -> Result<(Mat, Vec<u8>)> {
    params.check_hidden(h)?;
    let p = linear_softmax(h, &params.w_d, &params.b_d);
    let y = decide(&p);
    Ok((p, y))
}

/// Per-position phonological-vs-morphological probabilities and decision.
pub fn reason(h: &Encoding, params: &HeadParams) -> Result<(Mat, Vec<u8>)> {
    params.check_hidden(h)?;
    let p = linear_softmax(h, &params.w_r, &params.b_r);
    let y = decide(&p);
    Ok((p, y))
}

/// Full-vocabulary correction distribution per position.
pub fn search_probs(h: &Encoding, params: &HeadParams) -> Result<ProbMatrix> {
    params.check_hidden(h)?;
    Ok(ProbMatrix(linear_softmax(h, &params.w_s, &params.b_s)))
}

pub fn forward(h: &Encoding, params: &HeadParams) -> Result<SubtaskOutput> {
    let (p_d, y_d) = detect(h, params)?;
    let (p_r, y_r) = reason(h, params)?;
    let p_s = search_probs(h, params)?;
    Ok(SubtaskOutput {
        p_d,
        y_d,
        p_r,
        y_r,
        p_s,
    })
}

/// Loss gradients with respect to each head's output probabilities.
/// A missing block is treated as zero.
#[derive(Clone, Debug, Default)]
pub struct HeadUpstream {
    pub p_d: Option<Mat>,
    pub p_r: Option<Mat>,
    pub p_s: Option<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub w_d: Mat,
    pub b_d: Vec<f64>,
    pub w_r: Mat,
    pub b_r: Vec<f64>,
    pub w_s: Mat,
    pub b_s: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros_like(p: &HeadParams) -> Self {
        let z = HeadParams::zeros(p.hidden(), p.vocab_size());
        HeadGrads {
            w_d: z.w_d,
            b_d: z.b_d,
            w_r: z.w_r,
            b_r: z.b_r,
            w_s: z.w_s,
            b_s: z.b_s,
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("W_D", &self.w_d.data),
            ("b_D", &self.b_d),
            ("W_R", &self.w_r.data),
            ("b_R", &self.b_r),
            ("W_S", &self.w_s.data),
            ("b_S", &self.b_s),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            ("W_D", &mut self.w_d.data),
            ("b_D", &mut self.b_d),
            ("W_R", &mut self.w_r.data),
            ("b_R", &mut self.b_r),
            ("W_S", &mut self.w_s.data),
            ("b_S", &mut self.b_s),
        ]
    }
}

/// Backward pass through all heads. Returns parameter gradients and the
/// gradient with respect to `H`, which sums the three heads' contributions.
pub fn heads_backward(
    h: &Encoding,
    params: &HeadParams,
    upstream: &HeadUpstream,
) -> Result<(HeadGrads, Encoding)> {
    let out = forward(h, params)?;
    let mut grads = HeadGrads::zeros_like(params);
    let dh = accumulate_heads_backward(h, params, &out, upstream, &mut grads)?;
    Ok((grads, dh))
}

/// Adds one sentence's head gradients to `grads` given its forward output.
pub fn accumulate_heads_backward(
    h: &Encoding,
    params: &HeadParams,
    out: &SubtaskOutput,
    upstream: &HeadUpstream,
    grads: &mut HeadGrads,
) -> Result<Encoding> {
    params.check_hidden(h)?;
    let t = h.len();
    let mut dh = Mat::zeros(t, h.hidden());
    // (upstream, probabilities, weights, weight grad, bias grad)
    #[allow(clippy::type_complexity)]
    let blocks: [(Option<&Mat>, &Mat, &Mat, &mut Mat, &mut Vec<f64>); 3] = [
        (
            upstream.p_d.as_ref(),
            &out.p_d,
            &params.w_d,
            &mut grads.w_d,
            &mut grads.b_d,
        ),
        (
            upstream.p_r.as_ref(),
            &out.p_r,
            &params.w_r,
            &mut grads.w_r,
            &mut grads.b_r,
        ),
        (
            upstream.p_s.as_ref(),
            &out.p_s.0,
            &params.w_s,
            &mut grads.w_s,
            &mut grads.b_s,
        ),
    ];
    for (up, p, w, gw, gb) in blocks {
        let Some(up) = up else { continue };
        if up.shape() != p.shape() {
            return Err(CscError::shape(format!(
                "upstream {:?} for probabilities {:?}",
                up.shape(),
                p.shape()
            )));
        }
        let mut dz = vec![0.0; p.cols];
        for i in 0..t {
            softmax_backward(p.row(i), up.row(i), &mut dz);
            gw.add_outer(&dz, h.h.row(i));
            for (b, d) in gb.iter_mut().zip(&dz) {
                *b += d;
            }
            w.add_transpose_mul(&dz, dh.row_mut(i));
        }
    }
    Ok(Encoding { h: dh })
}
