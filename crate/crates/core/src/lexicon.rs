//! Disease gazetteer built from a MEDIC-style TSV and the per-token
//! dictionary features derived from it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use crate::corpus::tokenize;
use crate::embeddings::normalize_token;
use crate::error::{Error, Result};

/// Longest name, in tokens, considered for multi-word matching.
pub const MAX_NGRAM: usize = 8;

/// Dictionary membership bits for one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct DictFeatureVector {
    /// The token alone is a disease name or synonym.
    pub solo: bool,
    /// The token lies inside a multi-word name or synonym occurring in the
    /// sentence.
    pub multiword_part: bool,
    pub abbreviation: bool,
    /// The token occurs in some synonym.
    pub synonym: bool,
}

impl DictFeatureVector {
    pub const WIDTH: usize = 4;

    pub fn bits(&self) -> [bool; 4] {
        [self.solo, self.multiword_part, self.abbreviation, self.synonym]
    }

    pub fn as_f64(&self) -> [f64; 4] {
        self.bits().map(|b| if b { 1.0 } else { 0.0 })
    }
}

/// Normalized disease vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeSet<String>,
    synonym_index: BTreeMap<String, String>,
    abbreviations: BTreeSet<String>,
    // derived
    multiword_token_index: BTreeSet<String>,
    synonym_tokens: BTreeSet<String>,
    phrases: BTreeSet<String>,
}

/// Tokenizes and normalizes a dictionary string, joining tokens by a space.
pub fn normalize_name(name: &str) -> String {
    tokenize(name, 0)
        .iter()
        .map(|t| normalize_token(&t.surface))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Single token, 2–6 characters, letters all upper-case.
fn looks_like_abbreviation(raw: &str) -> bool {
    let raw = raw.trim();
    let n = raw.chars().count();
    (2..=6).contains(&n)
        && tokenize(raw, 0).len() == 1
        && raw.chars().any(|c| c.is_alphabetic())
        && raw.chars().all(|c| c.is_alphanumeric() && !c.is_lowercase())
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a disease name with its synonyms (raw strings).
    pub fn insert<S: AsRef<str>>(&mut self, name: &str, synonyms: &[S]) {
        let canonical = normalize_name(name);
        if canonical.is_empty() {
            return;
        }
        if looks_like_abbreviation(name) {
            self.abbreviations.insert(canonical.clone());
        }
        self.entries.insert(canonical.clone());
        for s in synonyms {
            let raw = s.as_ref();
            let norm = normalize_name(raw);
            if norm.is_empty() {
                continue;
            }
            if looks_like_abbreviation(raw) {
                self.abbreviations.insert(norm.clone());
            }
            self.synonym_index.entry(norm).or_insert_with(|| canonical.clone());
        }
        self.rebuild();
    }

    /// Rebuilds a lexicon from its normalized parts.
    pub fn from_parts(
        entries: BTreeSet<String>,
        synonym_index: BTreeMap<String, String>,
        abbreviations: BTreeSet<String>,
    ) -> Self {
        let mut lex = Lexicon {
            entries,
            synonym_index,
            abbreviations,
            ..Lexicon::default()
        };
        lex.rebuild();
        lex
    }

    fn rebuild(&mut self) {
        self.multiword_token_index.clear();
        self.synonym_tokens.clear();
        self.phrases.clear();
        for name in self.entries.iter().chain(self.synonym_index.keys()) {
            let toks: Vec<&str> = name.split(' ').collect();
            if toks.len() >= 2 {
                self.multiword_token_index.extend(toks.iter().map(|t| t.to_string()));
                if toks.len() <= MAX_NGRAM {
                    self.phrases.insert(name.clone());
                }
            }
        }
        for syn in self.synonym_index.keys() {
            self.synonym_tokens.extend(syn.split(' ').map(str::to_string));
        }
    }

    pub fn entries(&self) -> &BTreeSet<String> {
        &self.entries
    }

    pub fn synonym_index(&self) -> &BTreeMap<String, String> {
        &self.synonym_index
    }

    pub fn abbreviations(&self) -> &BTreeSet<String> {
        &self.abbreviations
    }

    pub fn multiword_token_index(&self) -> &BTreeSet<String> {
        &self.multiword_token_index
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Whether a normalized name is a disease name or synonym.
    pub fn contains_name(&self, normalized: &str) -> bool {
        self.entries.contains(normalized) || self.synonym_index.contains_key(normalized)
    }

    /// Features for a sentence of normalized tokens.
    pub fn token_features<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<DictFeatureVector> {
        let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        let mut out: Vec<DictFeatureVector> = toks
            .iter()
            .map(|t| DictFeatureVector {
                solo: self.contains_name(t),
                multiword_part: false,
                abbreviation: self.abbreviations.contains(*t),
                synonym: self.synonym_tokens.contains(*t),
            })
            .collect();
        for start in 0..toks.len() {
            if !self.multiword_token_index.contains(toks[start]) {
                continue;
            }
            let max_end = (start + MAX_NGRAM).min(toks.len());
            for end in start + 2..=max_end {
                if !self.multiword_token_index.contains(toks[end - 1]) {
                    break;
                }
                if self.phrases.contains(&toks[start..end].join(" ")) {
                    for f in &mut out[start..end] {
                        f.multiword_part = true;
                    }
                }
            }
        }
        out
    }
}

const NAME_COL: &str = "DiseaseName";
const ID_COL: &str = "DiseaseID";
const SYN_COL: &str = "Synonyms";

/// Loads a MEDIC TSV.
///
/// The header is the first non-comment line, or a comment line such as
/// `# DiseaseName<TAB>DiseaseID<TAB>…` as in the CTD distribution. Other
/// lines starting with `#` are ignored. Synonyms are `|`-separated.
pub fn load_medic<R: BufRead>(reader: R) -> Result<Lexicon> {
    let mut lex = Lexicon::new();
    let mut columns: Option<(usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let comment = line.starts_with('#');
        if columns.is_none() {
            let header = line.trim_start_matches('#').trim_start();
            let fields: Vec<&str> = header.split('\t').map(str::trim).collect();
            let is_header = fields.contains(&NAME_COL) || (!comment && fields.len() > 1);
            if comment && !is_header {
                continue;
            }
            let find = |name: &str| {
                fields
                    .iter()
                    .position(|f| *f == name)
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))
            };
            let name = find(NAME_COL)?;
            find(ID_COL)?;
            let syn = find(SYN_COL)?;
            columns = Some((name, syn));
            continue;
        }
        if comment {
            continue;
        }
        let (name_col, syn_col) = columns.expect("header parsed");
        let fields: Vec<&str> = line.split('\t').collect();
        let name = fields.get(name_col).copied().unwrap_or("").trim();
        if name.is_empty() {
            return Err(Error::parse(lineno, "row without a disease name"));
        }
        let synonyms: Vec<&str> = fields
            .get(syn_col)
            .map(|s| s.split('|').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        lex.insert(name, &synonyms);
    }
    Ok(lex)
}
