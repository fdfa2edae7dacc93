//! Sentence encoders mapping vocabulary indices to a `T × hidden` encoding.
//!
//! [`ToyEncoder`] is trainable: `h_i = tanh(W_h · [e(x_{i-w}); …; e(x_{i+w})] + b_h)`
//! with zero vectors outside the sentence. [`FixedFeatureEncoder`] emits the
//! concatenated window embeddings directly and is never trained.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CscError, Result};
use crate::linalg::Mat;

/// `H`: one row per input position.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub h: Mat,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.h.rows
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows == 0
    }

    pub fn hidden(&self) -> usize {
        self.h.cols
    }
}

pub trait Encoder {
    fn vocab_size(&self) -> usize;
    fn hidden(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, x: &[usize]) -> Result<Encoding>;
}

pub const DEFAULT_MAX_LEN: usize = 192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderHyper {
    pub d_e: usize,
    pub hidden: usize,
    pub window: usize,
    pub max_len: usize,
}

impl Default for EncoderHyper {
    fn default() -> Self {
        EncoderHyper {
            d_e: 32,
            hidden: 64,
            window: 2,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl EncoderHyper {
    pub fn input_width(&self) -> usize {
        (2 * self.window + 1) * self.d_e
    }
}

fn check_input(x: &[usize], vocab: usize, max_len: usize) -> Result<()> {
    if x.len() > max_len {
        return Err(CscError::Length {
            len: x.len(),
            max: max_len,
        });
    }
    if let Some(&bad) = x.iter().find(|&&i| i >= vocab) {
        return Err(CscError::Vocab(format!(
            "index {bad} out of range for vocab {vocab}"
        )));
    }
    Ok(())
}

/// Writes the concatenated window embeddings for position `i` into `out`.
fn window_input(emb: &Mat, x: &[usize], i: usize, window: usize, out: &mut [f64]) {
    let d = emb.cols;
    for (slot, chunk) in out.chunks_exact_mut(d).enumerate() {
        let pos = i as isize + slot as isize - window as isize;
        if pos < 0 || pos as usize >= x.len() {
            chunk.fill(0.0);
        } else {
            chunk.copy_from_slice(emb.row(x[pos as usize]));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub hyper: EncoderHyper,
    /// `vocab × d_e`
    pub embeddings: Mat,
    /// `hidden × (2w+1)·d_e`
    pub w_h: Mat,
    pub b_h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoderGrads {
    pub embeddings: Mat,
    pub w_h: Mat,
    pub b_h: Vec<f64>,
}

impl ToyEncoderGrads {
    pub fn zeros_like(p: &ToyEncoder) -> Self {
        ToyEncoderGrads {
            embeddings: Mat::zeros(p.embeddings.rows, p.embeddings.cols),
            w_h: Mat::zeros(p.w_h.rows, p.w_h.cols),
            b_h: vec![0.0; p.b_h.len()],
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("embeddings", &self.embeddings.data),
            ("W_h", &self.w_h.data),
            ("b_h", &self.b_h),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 3] {
        [
            ("embeddings", &mut self.embeddings.data),
            ("W_h", &mut self.w_h.data),
            ("b_h", &mut self.b_h),
        ]
    }
}

impl ToyEncoder {
    pub fn zeros(vocab: usize, hyper: EncoderHyper) -> Self {
        ToyEncoder {
            hyper,
            embeddings: Mat::zeros(vocab, hyper.d_e),
            w_h: Mat::zeros(hyper.hidden, hyper.input_width()),
            b_h: vec![0.0; hyper.hidden],
        }
    }

    /// Entries drawn from `uniform(-0.05, 0.05)`.
    pub fn random(vocab: usize, hyper: EncoderHyper, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(vocab, hyper);
        for (_, block) in p.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
        p
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("embeddings", &self.embeddings.data),
            ("W_h", &self.w_h.data),
            ("b_h", &self.b_h),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 3] {
        [
            ("embeddings", &mut self.embeddings.data),
            ("W_h", &mut self.w_h.data),
            ("b_h", &mut self.b_h),
        ]
    }

    /// Gradients of `Σ upstream ⊙ H` with respect to every parameter.
    pub fn encode_backward(&self, x: &[usize], upstream: &Encoding) -> Result<ToyEncoderGrads> {
        let enc = self.encode(x)?;
        let mut grads = ToyEncoderGrads::zeros_like(self);
        self.accumulate_backward(x, &enc, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient contribution of one sentence to `grads`, reusing the
    /// forward encoding `enc`.
    pub fn accumulate_backward(
        &self,
        x: &[usize],
        enc: &Encoding,
        upstream: &Encoding,
        grads: &mut ToyEncoderGrads,
    ) -> Result<()> {
        let hidden = self.hyper.hidden;
        if upstream.h.shape() != (x.len(), hidden) || enc.h.shape() != (x.len(), hidden) {
            return Err(CscError::shape(format!(
                "upstream gradient {:?} for a {}x{hidden} encoding",
                upstream.h.shape(),
                x.len()
            )));
        }
        let width = self.hyper.input_width();
        let d = self.hyper.d_e;
        let w = self.hyper.window;
        let mut u = vec![0.0; width];
        let mut da = vec![0.0; hidden];
        let mut du = vec![0.0; width];
        for i in 0..x.len() {
            let h = enc.h.row(i);
            let g = upstream.h.row(i);
            let mut any = false;
            for ((a, &hj), &gj) in da.iter_mut().zip(h).zip(g) {
                *a = gj * (1.0 - hj * hj);
                any |= *a != 0.0;
            }
            if !any {
                continue;
            }
            window_input(&self.embeddings, x, i, w, &mut u);
            grads.w_h.add_outer(&da, &u);
            for (b, a) in grads.b_h.iter_mut().zip(&da) {
                *b += a;
            }
            du.fill(0.0);
            self.w_h.add_transpose_mul(&da, &mut du);
            for (slot, chunk) in du.chunks_exact(d).enumerate() {
                let pos = i as isize + slot as isize - w as isize;
                if pos >= 0 && (pos as usize) < x.len() {
                    let row = grads.embeddings.row_mut(x[pos as usize]);
                    for (r, c) in row.iter_mut().zip(chunk) {
                        *r += c;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Encoder for ToyEncoder {
    fn vocab_size(&self) -> usize {
        self.embeddings.rows
    }

    fn hidden(&self) -> usize {
        self.hyper.hidden
    }

    fn max_len(&self) -> usize {
        self.hyper.max_len
    }

    fn encode(&self, x: &[usize]) -> Result<Encoding> {
        check_input(x, self.vocab_size(), self.max_len())?;
        let mut h = Mat::zeros(x.len(), self.hyper.hidden);
        let mut u = vec![0.0; self.hyper.input_width()];
        for i in 0..x.len() {
            window_input(&self.embeddings, x, i, self.hyper.window, &mut u);
            let row = h.row_mut(i);
            self.w_h.affine(&u, &self.b_h, row);
            for v in row.iter_mut() {
                *v = v.tanh();
            }
        }
        Ok(Encoding { h })
    }
}

/// Non-trainable encoder: `h_i` is the concatenation of the window's
/// embeddings, so `hidden = (2w+1)·d_e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedFeatureEncoder {
    pub window: usize,
    pub max_len: usize,
    pub embeddings: Mat,
}

impl FixedFeatureEncoder {
    /// Embeddings drawn from `uniform(-1, 1)`.
    pub fn random(
        vocab: usize,
        d_e: usize,
        window: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let data = (0..vocab * d_e).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FixedFeatureEncoder {
            window,
            max_len,
            embeddings: Mat {
                rows: vocab,
                cols: d_e,
                data,
            },
        }
    }

    /// One-hot embeddings: slot `k` of `h_i` is the indicator of `x_{i-w+k}`.
    pub fn one_hot(vocab: usize, window: usize, max_len: usize) -> Self {
        let mut embeddings = Mat::zeros(vocab, vocab);
        for i in 0..vocab {
            embeddings.row_mut(i)[i] = 1.0;
        }
        FixedFeatureEncoder {
            window,
            max_len,
            embeddings,
        }
    }
}

impl Encoder for FixedFeatureEncoder {
    fn vocab_size(&self) -> usize {
        self.embeddings.rows
    }

    fn hidden(&self) -> usize {
        (2 * self.window + 1) * self.embeddings.cols
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn encode(&self, x: &[usize]) -> Result<Encoding> {
        check_input(x, self.vocab_size(), self.max_len)?;
        let mut h = Mat::zeros(x.len(), self.hidden());
        for i in 0..x.len() {
            window_input(&self.embeddings, x, i, self.window, h.row_mut(i));
        }
        Ok(Encoding { h })
    }
}

/// The encoder a model carries in its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderParams {
    Toy(ToyEncoder),
    Fixed(FixedFeatureEncoder),
}

impl EncoderParams {
    pub fn as_toy(&self) -> Option<&ToyEncoder> {
        match self {
            EncoderParams::Toy(t) => Some(t),
            EncoderParams::Fixed(_) => None,
        }
    }

    pub fn as_toy_mut(&mut self) -> Option<&mut ToyEncoder> {
        match self {
            EncoderParams::Toy(t) => Some(t),
            EncoderParams::Fixed(_) => None,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.as_toy().is_some()
    }
}

impl Encoder for EncoderParams {
    fn vocab_size(&self) -> usize {
        match self {
            EncoderParams::Toy(e) => e.vocab_size(),
            EncoderParams::Fixed(e) => e.vocab_size(),
        }
    }

    fn hidden(&self) -> usize {
        match self {
            EncoderParams::Toy(e) => e.hidden(),
            EncoderParams::Fixed(e) => e.hidden(),
        }
    }

    fn max_len(&self) -> usize {
        match self {
            EncoderParams::Toy(e) => e.max_len(),
            EncoderParams::Fixed(e) => e.max_len(),
        }
    }

    fn encode(&self, x: &[usize]) -> Result<Encoding> {
        match self {
            EncoderParams::Toy(e) => e.encode(x),
            EncoderParams::Fixed(e) => e.encode(x),
        }
    }
}
