//! Shared fixtures for the criterion benches.

use csc_core::charkb::{build_confusion_index, ConfusionIndex, SimilarityPolicy, Vocab};
use csc_core::corpus::{synthesize, synthetic_char_table, CorpusSpec, TargetModel};
use csc_core::train::{encode_corpus, EncodedPair};

pub struct Fixture {
    pub vocab: Vocab,
    pub index: ConfusionIndex,
    pub data: Vec<EncodedPair>,
}

/// A synthetic vocabulary of `n_chars` characters and a small chain corpus.
pub fn fixture(n_chars: usize, sentences: usize) -> Fixture {
    let table = synthetic_char_table(n_chars, 11);
    let vocab = Vocab::from_records(&table).expect("unique characters");
    let index =
        build_confusion_index(&vocab, &table, &SimilarityPolicy::default()).expect("covered");
    let spec = CorpusSpec {
        sentences,
        targets: TargetModel::Chain {
            branching: 2,
            language_seed: 3,
        },
        ..Default::default()
    };
    let pairs = synthesize(&spec, &vocab, &index).expect("valid spec").pairs;
    let data = encode_corpus(&pairs, &vocab, &index).expect("in vocabulary");
    Fixture { vocab, index, data }
}
