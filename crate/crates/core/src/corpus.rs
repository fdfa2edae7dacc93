//! Parallel-corpus IO and a confusion-set driven error generator.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charkb::{CharRecord, ConfusionIndex, ConfusionKind, Vocab};
use crate::encoder::DEFAULT_MAX_LEN;
use crate::error::{CscError, Result};
use crate::train::SentencePair;

pub fn parse_parallel(text: &str) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CscError::Parse {
            line: n + 1,
            message,
        };
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| err("expected src<TAB>tgt".into()))?;
        let pair = SentencePair::new(src.chars().collect(), tgt.chars().collect())
            .map_err(|e| err(e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

/// Reads `src<TAB>tgt` lines. Blank lines are skipped; an empty file gives
/// an empty corpus.
pub fn load_parallel(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CscError::io(path, e))?;
    parse_parallel(&text)
}

pub fn format_parallel(pairs: &[SentencePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.extend(&p.src);
        out.push('\t');
        out.extend(&p.tgt);
        out.push('\n');
    }
    out
}

pub fn write_parallel(path: impl AsRef<Path>, pairs: &[SentencePair]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_parallel(pairs)).map_err(|e| CscError::io(path, e))
}

/// How gold sentences are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetModel {
    /// Every character independent and uniform over the vocabulary.
    Uniform,
    /// A fixed "language": `branching` random permutations of the character
    /// set drawn from `language_seed`; each next character applies one of
    /// them, chosen uniformly, to the previous one. Each position's marginal
    /// stays uniform, but context now predicts the character.
    Chain {
        branching: usize,
        language_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub error_rate: f64,
    /// Probability that a corruption draws from the phonological set.
    pub phonological_ratio: f64,
    pub seed: u64,
    pub targets: TargetModel,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            sentences: 200,
            min_len: 8,
            max_len: 16,
            error_rate: 0.15,
            phonological_ratio: 0.83,
            seed: 0,
            targets: TargetModel::Uniform,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_rate)
            || !(0.0..=1.0).contains(&self.phonological_ratio)
        {
            return Err(CscError::Config("rates must lie in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > DEFAULT_MAX_LEN {
            return Err(CscError::Config(format!(
                "length range {}..={} outside 1..={DEFAULT_MAX_LEN}",
                self.min_len, self.max_len
            )));
        }
        if let TargetModel::Chain { branching: 0, .. } = self.targets {
            return Err(CscError::Config("chain branching must be positive".into()));
        }
        Ok(())
    }
}

/// Counts from one generator run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthStats {
    pub positions: usize,
    pub phonological: usize,
    pub visual: usize,
    /// Positions selected for corruption whose target has no confusable
    /// character in either set.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesized {
    pub pairs: Vec<SentencePair>,
    pub stats: SynthStats,
}

fn chain_permutations(
    chars: &[usize],
    branching: usize,
    language_seed: u64,
    vocab: usize,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(language_seed);
    (0..branching)
        .map(|_| {
            let mut shuffled = chars.to_vec();
            shuffled.shuffle(&mut rng);
            let mut perm = vec![0; vocab];
            for (&from, &to) in chars.iter().zip(&shuffled) {
                perm[from] = to;
            }
            perm
        })
        .collect()
}

/// Generates aligned pairs. Each position is corrupted with probability
/// `error_rate`; the wrong character comes from the phonological side with
/// probability `phonological_ratio`, else the visual side. Candidates are
/// the characters whose confusion set contains the target, so the gold is
/// always recoverable from the source's set. If the chosen side has no
/// candidate the other side is used; if neither has one the position is
/// left clean and counted as skipped.
pub fn synthesize(spec: &CorpusSpec, vocab: &Vocab, index: &ConfusionIndex) -> Result<Synthesized> {
    spec.validate()?;
    if index.vocab_size() != vocab.len() {
        return Err(CscError::Vocab(
            "confusion index does not cover the vocabulary".into(),
        ));
    }
    let chars: Vec<usize> = vocab.char_indices().collect();
    if chars.is_empty() {
        return Err(CscError::Vocab("vocabulary has no characters".into()));
    }
    let reverse = index.transpose();
    let candidates = |kind: ConfusionKind, t: usize| -> Vec<usize> {
        reverse
            .set(kind, t)
            .iter()
            .copied()
            .filter(|&s| s != t)
            .collect()
    };
    let perms = match spec.targets {
        TargetModel::Uniform => Vec::new(),
        TargetModel::Chain {
            branching,
            language_seed,
        } => chain_permutations(&chars, branching, language_seed, vocab.len()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut stats = SynthStats::default();
    let mut pairs = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut tgt = Vec::with_capacity(len);
        for i in 0..len {
            let next = if i == 0 || perms.is_empty() {
                chars[rng.gen_range(0..chars.len())]
            } else {
                let k = rng.gen_range(0..perms.len());
                perms[k][tgt[i - 1]]
            };
            tgt.push(next);
        }
        let mut src = tgt.clone();
        for (s, &t) in src.iter_mut().zip(&tgt) {
            stats.positions += 1;
            if !rng.gen_bool(spec.error_rate) {
                continue;
            }
            let first = if rng.gen_bool(spec.phonological_ratio) {
                ConfusionKind::Phonological
            } else {
                ConfusionKind::Visual
            };
            let second = match first {
                ConfusionKind::Phonological => ConfusionKind::Visual,
                ConfusionKind::Visual => ConfusionKind::Phonological,
            };
            let (kind, pool) = match candidates(first, t) {
                p if !p.is_empty() => (first, p),
                _ => match candidates(second, t) {
                    p if !p.is_empty() => (second, p),
                    _ => {
                        stats.skipped += 1;
                        continue;
                    }
                },
            };
            *s = pool[rng.gen_range(0..pool.len())];
            match kind {
                ConfusionKind::Phonological => stats.phonological += 1,
                ConfusionKind::Visual => stats.visual += 1,
            }
        }
        let to_chars = |v: &[usize]| -> Vec<char> {
            v.iter()
                .map(|&i| vocab.char_at(i).expect("char index"))
                .collect()
        };
        pairs.push(SentencePair {
            src: to_chars(&src),
            tgt: to_chars(&tgt),
        });
    }
    Ok(Synthesized { pairs, stats })
}

/// Sidecar record written next to a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub spec: CorpusSpec,
    pub stats: SynthStats,
    pub vocab_hash: String,
    pub confusion_hash: String,
}

pub fn sidecar_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.as_os_str().to_owned();
    name.push(".spec.json");
    PathBuf::from(name)
}

/// Writes the corpus and its `.spec.json` sidecar.
pub fn write_synthesized(
    path: impl AsRef<Path>,
    out: &Synthesized,
    record: &SynthRecord,
) -> Result<()> {
    let path = path.as_ref();
    write_parallel(path, &out.pairs)?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(record)?).map_err(|e| CscError::io(&side, e))
}

const ONSETS: [&str; 21] = [
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r",
    "z", "c", "s",
];
const RIMES: [&str; 12] = [
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong",
];

/// A synthetic character table of `n` characters (starting at U+4E00) in
/// which characters come in sound-alike groups of about three (same syllable,
/// random tone) and, independently, look-alike groups of about three (stroke
/// sequences of length 8 differing from a shared base in one position).
pub fn synthetic_char_table(n: usize, seed: u64) -> Vec<CharRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| RIMES.iter().map(move |r| format!("{o}{r}")))
        .collect();
    syllables.shuffle(&mut rng);

    let groups = |n: usize| -> Vec<usize> {
        // Group id per slot, sizes of three with a short tail folded in.
        let full = (n / 3).max(1);
        (0..n).map(|i| (i / 3).min(full - 1)).collect()
    };
    let sound = groups(n);
    let mut look_slots: Vec<usize> = (0..n).collect();
    look_slots.shuffle(&mut rng);
    let look_group = groups(n);
    let mut look = vec![0; n];
    for (slot, &c) in look_slots.iter().enumerate() {
        look[c] = look_group[slot];
    }

    let n_look = look_group.last().map_or(0, |g| g + 1);
    let bases: Vec<Vec<u8>> = (0..n_look)
        .map(|_| (0..8).map(|_| rng.gen_range(1..=5)).collect())
        .collect();
    let mut member_no = vec![0usize; n_look];

    (0..n)
        .map(|c| {
            let tone = rng.gen_range(1..=4);
            let pinyin = format!("{}{tone}", syllables[sound[c] % syllables.len()]);
            let g = look[c];
            let mut strokes = bases[g].clone();
            let pos = member_no[g] % strokes.len();
            member_no[g] += 1;
            strokes[pos] = strokes[pos] % 5 + 1;
            CharRecord {
                ch: char::from_u32(0x4E00 + c as u32).expect("CJK code point"),
                pinyin,
                strokes,
            }
        })
        .collect()
}
