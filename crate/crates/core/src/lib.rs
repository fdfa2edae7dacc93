//! Chinese spelling check decomposed into detection, reasoning and
//! searching.
//!
//! A shared encoder feeds three heads: detection decides whether each
//! character is wrong, reasoning decides whether a wrong character is a
//! phonological or a morphological error, and searching predicts the
//! correction over the whole vocabulary. The first two decisions select a
//! phonological or visual confusion set per position; the correction
//! distribution is masked to that set before decoding. The detection and
//! reasoning part can be lifted off one model and applied to another
//! ([`plugplay`]).

pub mod charkb;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalsuite;
pub mod heads;
pub mod linalg;
pub mod model;
pub mod plugplay;
pub mod searchmask;
pub mod train;

pub use charkb::{
    build_confusion_index, load_char_table, pinyin_similar, stroke_similar, CharRecord,
    ConfusionIndex, ConfusionKind, PinyinMode, SimilarityPolicy, Symbol, Vocab,
};
pub use corpus::{load_parallel, synthesize, CorpusSpec, TargetModel};
pub use encoder::{
    Encoder, EncoderHyper, EncoderParams, Encoding, FixedFeatureEncoder, ToyEncoder,
};
pub use error::{CscError, Result};
pub use evalsuite::{
    audit, evaluate, sentence_metrics, subtask_metrics, AuditCounts, EvalReport, Level, Prf,
};
pub use heads::{HeadParams, SubtaskOutput};
pub use model::{DecodeOptions, ModelState, OracleMode, Prediction};
pub use plugplay::{combined_predict, dr_infer, transfer_corpus, CorrectionModel, DrModule};
pub use searchmask::{
    apply_mask, build_search_matrix, mask_vector, MaskVector, ProbMatrix, SearchMatrix,
};
pub use train::{derive_labels, fit, GateMode, LabelSet, SentencePair, TrainConfig};
