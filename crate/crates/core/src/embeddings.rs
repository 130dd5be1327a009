//! Token normalization, word look-up tables and character vocabularies.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const UNK: &str = "UNK";
pub const NUM: &str = "NUM";
pub const UNK_ROW: usize = 0;
pub const NUM_ROW: usize = 1;

fn is_number(s: &str) -> bool {
    s.chars().any(|c| c.is_ascii_digit())
        && s.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-' | '%'))
}

/// Lower-cases a token and replaces purely numeric tokens with `NUM`.
///
/// `NUM` itself is a fixed point so that normalization is idempotent.
pub fn normalize_token(surface: &str) -> String {
    if surface == NUM || is_number(surface) {
        NUM.to_string()
    } else {
        surface.to_lowercase()
    }
}

/// Word vectors for a restricted vocabulary, with `UNK` and `NUM` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    vectors: Tensor<T>,
}

fn uniform_bound(dim: usize) -> f64 {
    (3.0 / dim as f64).sqrt()
}

fn random_row<T: Scalar, R: Rng>(rng: &mut R, dim: usize) -> Vec<T> {
    let b = uniform_bound(dim);
    (0..dim).map(|_| T::of(rng.gen_range(-b..=b))).collect()
}

impl<T: Scalar> EmbeddingTable<T> {
    fn from_rows(dim: usize, words: Vec<String>, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        let vocab = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let vectors = Tensor::from_vec(vec![words.len(), dim], data)?;
        Ok(EmbeddingTable {
            dim,
            words,
            vocab,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Tensor<T> {
        &self.vectors
    }

    pub fn into_vectors(self) -> Tensor<T> {
        self.vectors
    }

    /// Row of an already-normalized word, falling back to `UNK`.
    pub fn index(&self, normalized: &str) -> usize {
        self.vocab.get(normalized).copied().unwrap_or(UNK_ROW)
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.vocab.contains_key(normalized)
    }

    pub fn vector(&self, normalized: &str) -> &[T] {
        self.vectors.row_slice(self.index(normalized))
    }

    /// Writes the table as a versioned little-endian blob.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.words.len() as u64).to_le_bytes())?;
        for (i, word) in self.words.iter().enumerate() {
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
            for &v in self.vectors.row_slice(i) {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Corrupt("embedding cache too short".into()))?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Corrupt("not an embedding cache (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != TABLE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: TABLE_VERSION,
            });
        }
        let dim = read_u64(&mut r)? as usize;
        let rows = read_u64(&mut r)? as usize;
        let mut words = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let n = read_u32(&mut r)? as usize;
            let mut b = vec![0u8; n];
            r.read_exact(&mut b)
                .map_err(|_| Error::Corrupt("truncated embedding cache".into()))?;
            words.push(String::from_utf8(b).map_err(|_| Error::Corrupt("word is not UTF-8".into()))?);
            for _ in 0..dim {
                data.push(T::of(f64::from_le_bytes(read_array(&mut r)?)));
            }
        }
        Self::from_rows(dim, words, data)
    }
}

const TABLE_MAGIC: &[u8; 8] = b"DNEREMB\0";
const TABLE_VERSION: u32 = 1;

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::Corrupt("truncated embedding cache".into()))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Loads word2vec text vectors, keeping only words whose normalized form
/// is in `restrict_to`.
///
/// The first vector seen for a normalized form wins. `UNK` and `NUM` rows
/// come from the file when present and are otherwise drawn like
/// [`random_table`] entries using `seed`.
pub fn load_word2vec_text<T: Scalar, R: BufRead>(
    reader: R,
    restrict_to: &BTreeSet<String>,
    expected_dim: Option<usize>,
    seed: u64,
) -> Result<EmbeddingTable<T>> {
    let mut dim = expected_dim;
    let mut special: [Option<Vec<T>>; 2] = [None, None];
    let mut words = Vec::new();
    let mut seen = BTreeSet::new();
    let mut data: Vec<T> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if lineno == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                match dim {
                    Some(e) if e != d => {
                        return Err(Error::parse(
                            lineno,
                            format!("header dimension {d} does not match configured {e}"),
                        ))
                    }
                    _ => dim = Some(d),
                }
                continue;
            }
        }
        let d = *dim.get_or_insert(rest.len());
        if rest.len() != d {
            return Err(Error::parse(
                lineno,
                format!("vector for {word:?} has {} values, expected {d}", rest.len()),
            ));
        }
        let slot = match word {
            UNK => Some(UNK_ROW),
            NUM => Some(NUM_ROW),
            _ => None,
        };
        let key = normalize_token(word);
        let wanted = slot.is_some() || (restrict_to.contains(&key) && !seen.contains(&key));
        if !wanted {
            continue;
        }
        let values = rest
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::parse(lineno, format!("bad number {s:?}")))
            })
            .collect::<Result<Vec<T>>>()?;
        match slot {
            Some(k) => {
                if special[k].is_none() {
                    special[k] = Some(values);
                }
            }
            None if key == NUM => special[NUM_ROW] = special[NUM_ROW].take().or(Some(values)),
            None => {
                seen.insert(key.clone());
                words.push(key);
                data.extend(values);
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Invalid("empty embedding file and no configured dimension".into()))?;
    if dim == 0 {
        return Err(Error::Invalid("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::with_capacity((words.len() + 2) * dim);
    for s in special {
        let row = s.unwrap_or_else(|| random_row(&mut rng, dim));
        all.extend(row);
    }
    all.extend(data);
    let mut names = vec![UNK.to_string(), NUM.to_string()];
    names.extend(words);
    EmbeddingTable::from_rows(dim, names, all)
}

/// Randomly initialized table over `vocab` (plus `UNK`, `NUM`), entries
/// uniform in `±√(3/dim)`.
pub fn random_table<T: Scalar>(vocab: &BTreeSet<String>, dim: usize, seed: u64) -> Result<EmbeddingTable<T>> {
    if dim == 0 {
        return Err(Error::Invalid("embedding dimension must be positive".into()));
    }
    let mut names = vec![UNK.to_string(), NUM.to_string()];
    names.extend(vocab.iter().filter(|w| *w != UNK && *w != NUM).cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..names.len())
        .flat_map(|_| random_row::<T, _>(&mut rng, dim))
        .collect();
    EmbeddingTable::from_rows(dim, names, data)
}

/// Character inventory of raw token surfaces; index 0 is padding and 1 is
/// the unknown character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;
const CHAR_SPECIALS: usize = 2;

impl CharVocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + CHAR_SPECIALS)).collect();
        CharVocab { chars, index }
    }

    /// Total rows including the two specials.
    pub fn size(&self) -> usize {
        self.chars.len() + CHAR_SPECIALS
    }

    /// Number of distinct real characters.
    pub fn distinct(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.index(c)).collect()
    }
}

pub fn build_char_vocab(corpus: &[Sentence]) -> CharVocab {
    CharVocab::from_chars(
        corpus
            .iter()
            .flat_map(|s| s.tokens.iter())
            .flat_map(|t| t.surface.chars()),
    )
}

/// Normalized vocabulary of a set of sentences.
pub fn corpus_vocab(corpus: &[Sentence]) -> BTreeSet<String> {
    corpus
        .iter()
        .flat_map(|s| s.tokens.iter())
        .map(|t| normalize_token(&t.surface))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Token};

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_token("Cancer"), "cancer");
        assert_eq!(normalize_token("1234"), "NUM");
        assert_eq!(normalize_token("p53"), "p53");
        assert_eq!(normalize_token("NUM"), "NUM");
        assert_eq!(normalize_token("-"), "-");
    }

    #[test]
    fn restricted_load() {
        let file = "3 4\ncancer 1 2 3 4\ntumor 0.5 0 0 1\nother 9 9 9 9\n";
        let t: EmbeddingTable<f64> =
            load_word2vec_text(file.as_bytes(), &set(&["cancer", "tumor", "absent"]), Some(4), 1).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.dim(), 4);
        assert_eq!(t.vector("cancer"), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.index("absent"), UNK_ROW);
        assert!(!t.contains("other"));

        let t: EmbeddingTable<f64> = load_word2vec_text(file.as_bytes(), &BTreeSet::new(), None, 1).unwrap();
        assert_eq!(t.words(), &["UNK", "NUM"]);
    }

    #[test]
    fn load_errors() {
        let bad = "cancer 1 2 3\ntumor 1 2\n";
        let err = load_word2vec_text::<f64, _>(bad.as_bytes(), &set(&["cancer"]), None, 0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load_word2vec_text::<f64, _>("2 3\n".as_bytes(), &BTreeSet::new(), Some(4), 0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = load_word2vec_text::<f64, _>("a 1 2 3\n".as_bytes(), &BTreeSet::new(), Some(4), 0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn file_supplies_unk() {
        let file = "UNK 1 1\nx 2 2\n";
        let t: EmbeddingTable<f64> = load_word2vec_text(file.as_bytes(), &set(&["x"]), None, 3).unwrap();
        assert_eq!(t.vectors().row_slice(UNK_ROW), &[1.0, 1.0]);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn random_tables_are_seeded_and_bounded() {
        let v = set(&["a", "b", "c"]);
        let a: EmbeddingTable<f64> = random_table(&v, 200, 7).unwrap();
        let b: EmbeddingTable<f64> = random_table(&v, 200, 7).unwrap();
        let c: EmbeddingTable<f64> = random_table(&v, 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.vectors(), c.vectors());
        let bound = (3.0f64 / 200.0).sqrt();
        assert!(a.vectors().data().iter().all(|x| x.abs() <= bound));
        assert!(random_table::<f64>(&v, 0, 1).is_err());
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let v = set(&["a", "b"]);
        let t: EmbeddingTable<f64> = random_table(&v, 5, 1).unwrap();
        let mut buf = Vec::new();
        t.save(&mut buf).unwrap();
        assert_eq!(EmbeddingTable::<f64>::load(buf.as_slice()).unwrap(), t);
        assert!(matches!(
            EmbeddingTable::<f64>::load(&buf[..buf.len() - 3]),
            Err(Error::Corrupt(_))
        ));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(
            EmbeddingTable::<f64>::load(bad.as_slice()),
            Err(Error::Version { found: 9, .. })
        ));
    }

    fn sentence(words: &[&str]) -> Sentence {
        Sentence {
            doc_id: "d".into(),
            index: 0,
            tokens: words
                .iter()
                .map(|w| Token {
                    surface: w.to_string(),
                    start: 0,
                    end: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn char_vocab_sizes() {
        let v = build_char_vocab(&[sentence(&["ab", "ba"])]);
        assert_eq!(v.size(), 2 + 2);
        assert_eq!(build_char_vocab(&[]).size(), 2);
        assert_eq!(v.index('z'), CHAR_UNK);
        assert_ne!(v.index('A'), v.index('a'));
    }
}
