//! Character knowledge: pinyin and stroke records, the model vocabulary,
//! similarity predicates and the phonological/visual confusion index.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CscError, Result};

/// One row of the character table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharRecord {
    pub ch: char,
    /// Lowercase romanization with a trailing tone digit, e.g. `shi4`.
    pub pinyin: String,
    /// Stroke-type codes: 1 横, 2 竖, 3 撇, 4 点/捺, 5 折.
    pub strokes: Vec<u8>,
}

impl CharRecord {
    pub fn new(ch: char, pinyin: &str, strokes: &[u8]) -> Result<Self> {
        validate_pinyin(pinyin).map_err(|message| CscError::Parse { line: 0, message })?;
        validate_strokes(strokes).map_err(|message| CscError::Parse { line: 0, message })?;
        Ok(CharRecord {
            ch,
            pinyin: pinyin.to_string(),
            strokes: strokes.to_vec(),
        })
    }

    /// Pinyin with the tone digit removed.
    pub fn toneless(&self) -> &str {
        &self.pinyin[..self.pinyin.len() - 1]
    }

    pub fn tone(&self) -> u8 {
        self.pinyin.as_bytes()[self.pinyin.len() - 1] - b'0'
    }
}

fn validate_pinyin(p: &str) -> std::result::Result<(), String> {
    let bytes = p.as_bytes();
    let ok = bytes.len() >= 2
        && matches!(bytes[bytes.len() - 1], b'1'..=b'5')
        && bytes[..bytes.len() - 1].iter().all(u8::is_ascii_lowercase);
    if ok {
        Ok(())
    } else {
        Err(format!(
            "malformed pinyin {p:?}, expected letters a-z followed by a tone 1-5"
        ))
    }
}

fn validate_strokes(s: &[u8]) -> std::result::Result<(), String> {
    if s.is_empty() {
        return Err("empty stroke sequence".into());
    }
    if let Some(bad) = s.iter().find(|c| !(1..=5).contains(*c)) {
        return Err(format!("stroke code {bad} outside 1-5"));
    }
    Ok(())
}

/// Parses a character table from text. See [`load_char_table`].
pub fn parse_char_table(text: &str) -> Result<Vec<CharRecord>> {
    let mut out = Vec::new();
    let mut seen: HashMap<char, usize> = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| CscError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let mut chars = fields[0].chars();
        let ch = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(parse_err(format!(
                    "{:?} is not a single character",
                    fields[0]
                )))
            }
        };
        let pinyin = fields[1].trim();
        validate_pinyin(pinyin).map_err(parse_err)?;
        let strokes = fields[2]
            .trim()
            .chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as u8)
                    .ok_or_else(|| format!("stroke code {c:?} is not a digit"))
            })
            .collect::<std::result::Result<Vec<u8>, String>>()
            .map_err(parse_err)?;
        validate_strokes(&strokes).map_err(parse_err)?;
        if let Some(&first_line) = seen.get(&ch) {
            return Err(CscError::Duplicate {
                ch,
                line: line_no,
                first_line,
            });
        }
        seen.insert(ch, line_no);
        out.push(CharRecord {
            ch,
            pinyin: pinyin.to_string(),
            strokes,
        });
    }
    Ok(out)
}

/// Loads a `char<TAB>pinyin<TAB>stroke-digits` table; `#` lines are comments.
pub fn load_char_table(path: impl AsRef<Path>) -> Result<Vec<CharRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CscError::io(path, e))?;
    parse_char_table(&text)
}

pub fn format_char_table(records: &[CharRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push(r.ch);
        out.push('\t');
        out.push_str(&r.pinyin);
        out.push('\t');
        out.extend(r.strokes.iter().map(|&s| char::from(b'0' + s)));
        out.push('\n');
    }
    out
}

/// A vocabulary entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    Pad,
    Unk,
    Char(char),
}

impl Symbol {
    pub fn is_special(self) -> bool {
        !matches!(self, Symbol::Char(_))
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Pad => f.write_str("[PAD]"),
            Symbol::Unk => f.write_str("[UNK]"),
            Symbol::Char(c) => write!(f, "{c}"),
        }
    }
}

impl std::str::FromStr for Symbol {
    type Err = CscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "[PAD]" => Ok(Symbol::Pad),
            "[UNK]" => Ok(Symbol::Unk),
            _ => {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(Symbol::Char(c)),
                    _ => Err(CscError::Vocab(format!("bad vocabulary symbol {s:?}"))),
                }
            }
        }
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const N_SPECIALS: usize = 2;

/// Index space shared by every model and confusion index. Indices 0 and 1
/// are the padding and unknown specials; characters follow in table order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<Symbol>,
    index_of: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut symbols = vec![Symbol::Pad, Symbol::Unk];
        let mut index_of = HashMap::new();
        for c in chars {
            if index_of.insert(c, symbols.len()).is_some() {
                return Err(CscError::Vocab(format!("duplicate character '{c}'")));
            }
            symbols.push(Symbol::Char(c));
        }
        Ok(Vocab { symbols, index_of })
    }

    pub fn from_records(records: &[CharRecord]) -> Result<Self> {
        Self::from_chars(records.iter().map(|r| r.ch))
    }

    fn from_symbols(symbols: Vec<Symbol>) -> Result<Self> {
        if symbols.get(..N_SPECIALS) != Some(&[Symbol::Pad, Symbol::Unk][..]) {
            return Err(CscError::Vocab(
                "vocabulary must start with [PAD], [UNK]".into(),
            ));
        }
        Self::from_chars(
            symbols[N_SPECIALS..]
                .iter()
                .map(|s| match s {
                    Symbol::Char(c) => Ok(*c),
                    other => Err(CscError::Vocab(format!(
                        "special {other} outside reserved slots"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, i: usize) -> Symbol {
        self.symbols[i]
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn is_special(&self, i: usize) -> bool {
        i < N_SPECIALS
    }

    /// Character indices, specials excluded.
    pub fn char_indices(&self) -> std::ops::Range<usize> {
        N_SPECIALS..self.symbols.len()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index_of.get(&c).copied()
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        match self.symbols.get(i) {
            Some(Symbol::Char(c)) => Some(*c),
            _ => None,
        }
    }

    /// Maps every character to its index; unknown characters are an error.
    pub fn encode(&self, text: &[char]) -> Result<Vec<usize>> {
        text.iter()
            .map(|&c| {
                self.index_of(c)
                    .ok_or_else(|| CscError::Vocab(format!("character '{c}' not in vocabulary")))
            })
            .collect()
    }

    /// Like [`Vocab::encode`] but maps unknown characters to `[UNK]`.
    pub fn encode_lossy(&self, text: &[char]) -> Vec<usize> {
        text.iter()
            .map(|&c| self.index_of(c).unwrap_or(UNK))
            .collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.symbols {
            h.update(s.to_string().as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.symbols.iter().map(Symbol::to_string))
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        let symbols = raw
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Symbol>>>()
            .map_err(serde::de::Error::custom)?;
        Vocab::from_symbols(symbols).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PinyinMode {
    /// Equal once tones are stripped: `shou1 ~ shou4`.
    ToneInsensitiveExact,
    /// Levenshtein distance between toneless syllables at most `pinyin_k`.
    EditDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPolicy {
    pub pinyin_mode: PinyinMode,
    pub pinyin_k: usize,
    /// Normalized stroke edit-distance threshold in `[0, 1]`.
    pub stroke_tau: f64,
}

impl Default for SimilarityPolicy {
    fn default() -> Self {
        SimilarityPolicy {
            pinyin_mode: PinyinMode::ToneInsensitiveExact,
            pinyin_k: 1,
            stroke_tau: 0.25,
        }
    }
}

impl SimilarityPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.stroke_tau) {
            return Err(CscError::Config(format!(
                "stroke threshold {} outside [0, 1]",
                self.stroke_tau
            )));
        }
        Ok(())
    }
}

pub fn pinyin_similar(a: &CharRecord, b: &CharRecord, policy: &SimilarityPolicy) -> bool {
    match policy.pinyin_mode {
        PinyinMode::ToneInsensitiveExact => a.toneless() == b.toneless(),
        PinyinMode::EditDistance => {
            strsim::levenshtein(a.toneless(), b.toneless()) <= policy.pinyin_k
        }
    }
}

/// Levenshtein distance between stroke sequences divided by the longer length.
pub fn stroke_distance(a: &[u8], b: &[u8]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    strsim::generic_levenshtein(&a.to_vec(), &b.to_vec()) as f64 / longest as f64
}

pub fn stroke_similar(a: &CharRecord, b: &CharRecord, policy: &SimilarityPolicy) -> bool {
    stroke_distance(&a.strokes, &b.strokes) <= policy.stroke_tau
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfusionKind {
    Phonological,
    Visual,
}

/// Per vocabulary index, the sorted phonological (`pc`) and visual (`vc`)
/// confusion sets. Every index belongs to both of its own sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionIndex {
    pc: Vec<Vec<usize>>,
    vc: Vec<Vec<usize>>,
}

impl ConfusionIndex {
    /// Builds an index from raw adjacency lists, sorting, deduplicating and
    /// adding self-membership.
    pub fn from_sets(mut pc: Vec<Vec<usize>>, mut vc: Vec<Vec<usize>>) -> Result<Self> {
        let n = pc.len();
        if vc.len() != n {
            return Err(CscError::shape(format!(
                "pc has {n} rows, vc has {}",
                vc.len()
            )));
        }
        for sets in [&mut pc, &mut vc] {
            for (i, set) in sets.iter_mut().enumerate() {
                set.push(i);
                set.sort_unstable();
                set.dedup();
                if let Some(&bad) = set.last().filter(|&&j| j >= n) {
                    return Err(CscError::Vocab(format!(
                        "member {bad} out of range for vocab {n}"
                    )));
                }
            }
        }
        Ok(ConfusionIndex { pc, vc })
    }

    pub fn vocab_size(&self) -> usize {
        self.pc.len()
    }

    pub fn pc(&self, i: usize) -> &[usize] {
        &self.pc[i]
    }

    pub fn vc(&self, i: usize) -> &[usize] {
        &self.vc[i]
    }

    pub fn set(&self, kind: ConfusionKind, i: usize) -> &[usize] {
        match kind {
            ConfusionKind::Phonological => self.pc(i),
            ConfusionKind::Visual => self.vc(i),
        }
    }

    pub fn in_pc(&self, i: usize, j: usize) -> bool {
        self.pc[i].binary_search(&j).is_ok()
    }

    pub fn in_vc(&self, i: usize, j: usize) -> bool {
        self.vc[i].binary_search(&j).is_ok()
    }

    /// True when the set holds nothing but `i` itself.
    pub fn is_trivial(&self, kind: ConfusionKind, i: usize) -> bool {
        self.set(kind, i).len() <= 1
    }

    /// Transposed index: `j ∈ out.pc(i)` iff `i ∈ self.pc(j)`.
    pub fn transpose(&self) -> ConfusionIndex {
        let n = self.vocab_size();
        let mut pc = vec![Vec::new(); n];
        let mut vc = vec![Vec::new(); n];
        for i in 0..n {
            for &j in &self.pc[i] {
                pc[j].push(i);
            }
            for &j in &self.vc[i] {
                vc[j].push(i);
            }
        }
        // Pushed in increasing i, so already sorted.
        ConfusionIndex { pc, vc }
    }

    pub fn is_symmetric(&self) -> bool {
        self == &self.transpose()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for sets in [&self.pc, &self.vc] {
            for set in sets.iter() {
                for &j in set {
                    h.update((j as u64).to_le_bytes());
                }
                h.update(u64::MAX.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Unions `char<TAB>candidates` pairs into one side of the index.
    /// Returns the merged index and the number of pairs skipped because a
    /// character is not in the vocabulary.
    pub fn merge_external_str(
        &self,
        vocab: &Vocab,
        text: &str,
        kind: ConfusionKind,
    ) -> Result<(ConfusionIndex, usize)> {
        check_vocab_size(vocab, self)?;
        let mut merged = self.clone();
        let mut skipped = 0;
        let mut additions: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vocab.len()];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, candidates) = line
                .split_once(|c: char| c == '\t' || c.is_whitespace())
                .ok_or_else(|| CscError::Parse {
                    line: n + 1,
                    message: "expected char<TAB>candidates".into(),
                })?;
            let mut kc = key.chars();
            let key = match (kc.next(), kc.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(CscError::Parse {
                        line: n + 1,
                        message: format!("{key:?} is not a single character"),
                    })
                }
            };
            let candidates = candidates.chars().filter(|c| !c.is_whitespace());
            let Some(ki) = vocab.index_of(key) else {
                skipped += candidates.count();
                continue;
            };
            for c in candidates {
                match vocab.index_of(c) {
                    Some(ci) => {
                        additions[ki].insert(ci);
                    }
                    None => skipped += 1,
                }
            }
        }
        let sets = match kind {
            ConfusionKind::Phonological => &mut merged.pc,
            ConfusionKind::Visual => &mut merged.vc,
        };
        for (set, add) in sets.iter_mut().zip(additions) {
            if add.is_empty() {
                continue;
            }
            set.extend(add);
            set.sort_unstable();
            set.dedup();
        }
        Ok((merged, skipped))
    }

    pub fn merge_external_sets(
        &self,
        vocab: &Vocab,
        path: impl AsRef<Path>,
        kind: ConfusionKind,
    ) -> Result<(ConfusionIndex, usize)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CscError::io(path, e))?;
        self.merge_external_str(vocab, &text, kind)
    }
}

fn check_vocab_size(vocab: &Vocab, index: &ConfusionIndex) -> Result<()> {
    if vocab.len() != index.vocab_size() {
        return Err(CscError::Vocab(format!(
            "confusion index covers {} entries, vocabulary has {}",
            index.vocab_size(),
            vocab.len()
        )));
    }
    Ok(())
}

/// `pc[i] = {j : pinyin_similar(i, j)} ∪ {i}`, `vc[i]` likewise with strokes.
/// Specials get singleton self-sets.
pub fn build_confusion_index(
    vocab: &Vocab,
    table: &[CharRecord],
    policy: &SimilarityPolicy,
) -> Result<ConfusionIndex> {
    policy.validate()?;
    let by_char: HashMap<char, &CharRecord> = table.iter().map(|r| (r.ch, r)).collect();
    let mut missing = Vec::new();
    let records: Vec<Option<&CharRecord>> = vocab
        .symbols()
        .iter()
        .map(|s| match s {
            Symbol::Char(c) => {
                let r = by_char.get(c).copied();
                if r.is_none() {
                    missing.push(*c);
                }
                r
            }
            _ => None,
        })
        .collect();
    if !missing.is_empty() {
        return Err(CscError::Coverage(missing));
    }

    let n = vocab.len();
    let mut pc: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut vc: Vec<Vec<usize>> = vec![Vec::new(); n];
    let chars: Vec<(usize, &CharRecord)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();

    match policy.pinyin_mode {
        PinyinMode::ToneInsensitiveExact => {
            let mut buckets: HashMap<&str, Vec<usize>> = HashMap::new();
            for &(i, r) in &chars {
                buckets.entry(r.toneless()).or_default().push(i);
            }
            for &(i, r) in &chars {
                pc[i] = buckets[r.toneless()].clone();
            }
        }
        PinyinMode::EditDistance => {
            for (a, &(i, ri)) in chars.iter().enumerate() {
                for &(j, rj) in &chars[a + 1..] {
                    if pinyin_similar(ri, rj, policy) {
                        pc[i].push(j);
                        pc[j].push(i);
                    }
                }
            }
        }
    }
    for (a, &(i, ri)) in chars.iter().enumerate() {
        for &(j, rj) in &chars[a + 1..] {
            if stroke_similar(ri, rj, policy) {
                vc[i].push(j);
                vc[j].push(i);
            }
        }
    }
    ConfusionIndex::from_sets(pc, vc)
}

const CONFUSION_FORMAT: &str = "csc-confusion";
const CONFUSION_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ConfusionFile {
    format: String,
    version: u32,
    vocab_hash: String,
    index_hash: String,
    vocab: Vocab,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<SimilarityPolicy>,
    pc: Vec<Vec<usize>>,
    vc: Vec<Vec<usize>>,
}

/// Serializes the index together with the vocabulary it indexes.
pub fn confusion_to_json(
    vocab: &Vocab,
    index: &ConfusionIndex,
    policy: Option<&SimilarityPolicy>,
) -> Result<String> {
    check_vocab_size(vocab, index)?;
    let file = ConfusionFile {
        format: CONFUSION_FORMAT.into(),
        version: CONFUSION_VERSION,
        vocab_hash: vocab.hash(),
        index_hash: index.hash(),
        vocab: vocab.clone(),
        policy: policy.copied(),
        pc: index.pc.clone(),
        vc: index.vc.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn confusion_from_json(text: &str) -> Result<(Vocab, ConfusionIndex)> {
    let file: ConfusionFile = serde_json::from_str(text)?;
    if file.format != CONFUSION_FORMAT || file.version != CONFUSION_VERSION {
        return Err(CscError::Format(format!(
            "expected {CONFUSION_FORMAT} v{CONFUSION_VERSION}, found {} v{}",
            file.format, file.version
        )));
    }
    let found = file.vocab.hash();
    if found != file.vocab_hash {
        return Err(CscError::HashMismatch {
            what: "vocab",
            expected: file.vocab_hash,
            found,
        });
    }
    let index = ConfusionIndex::from_sets(file.pc, file.vc)?;
    check_vocab_size(&file.vocab, &index)?;
    Ok((file.vocab, index))
}

pub fn save_confusion(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    index: &ConfusionIndex,
    policy: Option<&SimilarityPolicy>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, confusion_to_json(vocab, index, policy)?).map_err(|e| CscError::io(path, e))
}

pub fn load_confusion(path: impl AsRef<Path>) -> Result<(Vocab, ConfusionIndex)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CscError::io(path, e))?;
    confusion_from_json(&text)
}

/// Loads an index and checks it was built over `vocab`.
pub fn load_confusion_for(path: impl AsRef<Path>, vocab: &Vocab) -> Result<ConfusionIndex> {
    let (stored, index) = load_confusion(path)?;
    if stored.hash() != vocab.hash() {
        return Err(CscError::HashMismatch {
            what: "vocab",
            expected: vocab.hash(),
            found: stored.hash(),
        });
    }
    Ok(index)
}
