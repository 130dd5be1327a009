//! PubTator corpora: parsing, tokenization, sentence splitting, projection
//! of character-offset mentions onto token tags, and corpus statistics.
//!
//! A PubTator document is a block of lines
//!
//! ```text
//! 10021369|t|Title text
//! 10021369|a|Abstract text
//! 10021369<TAB>start<TAB>end<TAB>surface<TAB>type<TAB>concept
//! ```
//!
//! separated from the next block by a blank line. Offsets count characters
//! of `title + " " + abstract`, end exclusive.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::tagging::{encode_spans, Scheme, Span, TagSequence};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub entity_type: String,
    pub concept_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    /// Sorted by start offset.
    pub mentions: Vec<Mention>,
}

impl Document {
    /// `title + " " + abstract`, the string mention offsets index into.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }

    pub fn title_chars(&self) -> usize {
        self.title.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn start(&self) -> usize {
        self.tokens.first().map_or(0, |t| t.start)
    }

    pub fn end(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.end)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    RejectedMention,
    SurfaceMismatch,
    MidTokenBoundary,
    CrossesSentence,
    OverlapDropped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub doc_id: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    fn new(doc_id: &str, kind: DiagnosticKind, message: String) -> Self {
        warn!("{doc_id}: {message}");
        Diagnostic {
            doc_id: doc_id.to_string(),
            kind,
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}: {}", self.doc_id, self.kind, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub documents: Vec<Document>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Characters `[start, end)` of `text`.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

struct RawMention {
    line: usize,
    start: usize,
    end: usize,
    surface: String,
    entity_type: String,
    concept_id: Option<String>,
}

#[derive(Default)]
struct Block {
    doc: Document,
    raw: Vec<RawMention>,
    has_title: bool,
}

fn finish_block(block: Block, out: &mut ParsedCorpus) {
    let Block { mut doc, raw, .. } = block;
    let chars: Vec<char> = doc.text().chars().collect();
    for m in raw {
        if m.start >= m.end || m.end > chars.len() {
            out.diagnostics.push(Diagnostic::new(
                &doc.id,
                DiagnosticKind::RejectedMention,
                format!(
                    "line {}: offsets {}..{} outside text of length {}",
                    m.line,
                    m.start,
                    m.end,
                    chars.len()
                ),
            ));
            continue;
        }
        let slice: String = chars[m.start..m.end].iter().collect();
        if slice != m.surface {
            out.diagnostics.push(Diagnostic::new(
                &doc.id,
                DiagnosticKind::SurfaceMismatch,
                format!(
                    "line {}: surface {:?} differs from text {:?}; keeping text",
                    m.line, m.surface, slice
                ),
            ));
        }
        doc.mentions.push(Mention {
            start: m.start,
            end: m.end,
            surface: slice,
            entity_type: m.entity_type,
            concept_id: m.concept_id,
        });
    }
    doc.mentions.sort_by_key(|m| (m.start, m.end));
    out.documents.push(doc);
}

fn header_line(line: &str) -> Option<(&str, &str, &str)> {
    let mut parts = line.splitn(3, '|');
    let id = parts.next()?;
    let kind = parts.next()?;
    let text = parts.next()?;
    if id.is_empty() || id.contains('\t') || !(kind == "t" || kind == "a") {
        return None;
    }
    Some((id, kind, text))
}

/// Parses a PubTator stream. Malformed lines are fatal; mentions whose
/// offsets fall outside the text are dropped and reported.
pub fn parse_pubtator<R: BufRead>(reader: R) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    let mut block: Option<Block> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                finish_block(b, &mut out);
            }
            continue;
        }
        if let Some((id, kind, text)) = header_line(line) {
            if kind == "t" {
                if let Some(b) = block.take() {
                    finish_block(b, &mut out);
                }
                let mut b = Block::default();
                b.doc.id = id.to_string();
                b.doc.title = text.to_string();
                b.has_title = true;
                block = Some(b);
            } else {
                let b = block.get_or_insert_with(|| {
                    let mut b = Block::default();
                    b.doc.id = id.to_string();
                    b
                });
                if b.doc.id != id {
                    return Err(Error::parse(
                        lineno,
                        format!("abstract for {id} inside document {}", b.doc.id),
                    ));
                }
                b.doc.abstract_text = text.to_string();
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() == 4 && fields[1] == "CID" {
            // relation line (BC5CDR); not an entity annotation
            continue;
        }
        if !(5..=7).contains(&fields.len()) {
            return Err(Error::parse(
                lineno,
                format!("expected 6 tab-separated annotation fields, found {}", fields.len()),
            ));
        }
        let Some(b) = block.as_mut() else {
            return Err(Error::parse(lineno, "annotation before any title line"));
        };
        if fields[0] != b.doc.id {
            return Err(Error::parse(
                lineno,
                format!("annotation for {} inside document {}", fields[0], b.doc.id),
            ));
        }
        let offset = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(lineno, format!("non-numeric {what} offset {s:?}")))
        };
        let start = offset(fields[1], "start")?;
        let end = offset(fields[2], "end")?;
        let concept_id = fields.get(5).map(|s| s.to_string()).filter(|s| !s.is_empty());
        b.raw.push(RawMention {
            line: lineno,
            start,
            end,
            surface: fields[3].to_string(),
            entity_type: fields[4].to_string(),
            concept_id,
        });
    }
    if let Some(b) = block.take() {
        finish_block(b, &mut out);
    }
    Ok(out)
}

pub fn parse_pubtator_str(input: &str) -> Result<ParsedCorpus> {
    parse_pubtator(input.as_bytes())
}

/// Writes documents in PubTator layout, blank line after each block.
pub fn write_pubtator<W: Write>(docs: &[Document], mut w: W) -> Result<()> {
    for d in docs {
        writeln!(w, "{}|t|{}", d.id, d.title)?;
        writeln!(w, "{}|a|{}", d.id, d.abstract_text)?;
        for m in &d.mentions {
            write!(w, "{}\t{}\t{}\t{}\t{}", d.id, m.start, m.end, m.surface, m.entity_type)?;
            if let Some(c) = &m.concept_id {
                write!(w, "\t{c}")?;
            }
            writeln!(w)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn to_pubtator_string(docs: &[Document]) -> String {
    let mut buf = Vec::new();
    write_pubtator(docs, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("documents are UTF-8")
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Splits `text` into tokens with character offsets (plus `base`).
///
/// Whitespace separates chunks; leading and trailing punctuation characters
/// of a chunk become single-character tokens, and hyphens and slashes
/// inside a chunk split it, each separator becoming its own token.
pub fn tokenize(text: &str, base: usize) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut push = |s: usize, e: usize| {
        tokens.push(Token {
            surface: chars[s..e].iter().collect(),
            start: base + s,
            end: base + e,
        })
    };
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut lead = start;
        while lead < end && is_punct(chars[lead]) {
            push(lead, lead + 1);
            lead += 1;
        }
        let mut trail = end;
        while trail > lead && is_punct(chars[trail - 1]) {
            trail -= 1;
        }
        let mut seg = lead;
        for k in lead..trail {
            if chars[k] == '-' || chars[k] == '/' {
                if seg < k {
                    push(seg, k);
                }
                push(k, k + 1);
                seg = k + 1;
            }
        }
        if seg < trail {
            push(seg, trail);
        }
        for k in trail..end {
            push(k, k + 1);
        }
    }
    tokens
}

/// Lower-cased words that take a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "co", "dr", "e.g", "eq", "etc", "fig", "figs", "i.e", "inc", "jr", "ltd", "mr", "mrs",
    "ms", "no", "nos", "pp", "prof", "ref", "refs", "resp", "sr", "st", "viz", "vol", "vs",
];

fn is_terminal(tok: &Token) -> bool {
    matches!(tok.surface.as_str(), "." | "!" | "?")
}

/// Splits a document into sentences.
///
/// The title always ends a sentence. Inside a region, a sentence ends at
/// `.`, `!` or `?` followed by whitespace and a token starting with an
/// upper-case letter or digit, unless the period closes an abbreviation.
/// No boundary is placed inside a gold mention.
pub fn split_sentences(doc: &Document) -> Vec<Sentence> {
    let text = doc.text();
    let tokens = tokenize(&text, 0);
    let title_end = doc.title_chars();
    let crosses_mention = |a: &Token, b: &Token| doc.mentions.iter().any(|m| m.start < a.end && m.end > b.start);
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for k in 0..tokens.len() {
        current.push(tokens[k].clone());
        let Some(next) = tokens.get(k + 1) else { break };
        let tok = &tokens[k];
        let at_title_end = tok.end <= title_end && next.start > title_end;
        let terminal = is_terminal(tok)
            && next.start > tok.end
            && next
                .surface
                .chars()
                .next()
                .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
            && !(k > 0
                && tokens[k - 1].end == tok.start
                && tok.surface == "."
                && ABBREVIATIONS.contains(&tokens[k - 1].surface.to_lowercase().as_str()));
        if (at_title_end || terminal) && !crosses_mention(tok, next) {
            sentences.push(Sentence {
                doc_id: doc.id.clone(),
                index: sentences.len(),
                tokens: std::mem::take(&mut current),
            });
        }
    }
    if !current.is_empty() {
        sentences.push(Sentence {
            doc_id: doc.id.clone(),
            index: sentences.len(),
            tokens: current,
        });
    }
    sentences
}

/// Gold tags for one sentence, with the spans behind them.
#[derive(Debug, Clone)]
pub struct Projection {
    pub tags: TagSequence,
    pub spans: Vec<Span>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Projects character-offset mentions onto the tokens of `sentence`.
///
/// Mentions whose boundaries fall inside a token are widened to whole
/// tokens; of overlapping mentions only the longest is kept. Both cases
/// are reported as diagnostics.
pub fn project_mentions(sentence: &Sentence, mentions: &[Mention], scheme: Scheme) -> Projection {
    let (s_start, s_end) = (sentence.start(), sentence.end());
    let mut diagnostics = Vec::new();
    let mut candidates: Vec<Span> = Vec::new();
    for m in mentions {
        if m.end <= s_start || m.start >= s_end {
            continue;
        }
        let covered: Vec<usize> = sentence
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < m.end && t.end > m.start)
            .map(|(i, _)| i)
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            continue;
        };
        let toks = &sentence.tokens;
        if m.start < s_start || m.end > s_end {
            diagnostics.push(Diagnostic::new(
                &sentence.doc_id,
                DiagnosticKind::CrossesSentence,
                format!(
                    "mention {:?} at {}..{} crosses sentence {}",
                    m.surface, m.start, m.end, sentence.index
                ),
            ));
        } else if toks[first].start != m.start || toks[last].end != m.end {
            diagnostics.push(Diagnostic::new(
                &sentence.doc_id,
                DiagnosticKind::MidTokenBoundary,
                format!(
                    "mention {:?} at {}..{} widened to tokens {}..{}",
                    m.surface, m.start, m.end, toks[first].start, toks[last].end
                ),
            ));
        }
        candidates.push(Span::new(first, last, m.entity_type.as_str()));
    }
    candidates.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut kept: Vec<Span> = Vec::new();
    for c in candidates {
        if let Some(k) = kept.iter().find(|k| k.overlaps(&c)) {
            diagnostics.push(Diagnostic::new(
                &sentence.doc_id,
                DiagnosticKind::OverlapDropped,
                format!("span {c} dropped in favour of {k}"),
            ));
        } else {
            kept.push(c);
        }
    }
    kept.sort();
    let tags = encode_spans(sentence.len(), &kept, scheme).expect("kept spans never overlap");
    Projection {
        tags,
        spans: kept,
        diagnostics,
    }
}

/// Corpus counts in the layout of a dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub n_abstracts: usize,
    pub n_sentences: usize,
    pub n_mentions: usize,
    /// Distinct mention surfaces, compared case-insensitively.
    pub n_unique_mentions: usize,
}

impl CorpusStats {
    pub fn to_tsv(&self) -> String {
        format!(
            "abstracts\tsentences\tmentions\tunique_mentions\n{}\t{}\t{}\t{}\n",
            self.n_abstracts, self.n_sentences, self.n_mentions, self.n_unique_mentions
        )
    }
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let mut unique = HashSet::new();
    let mut stats = CorpusStats {
        n_abstracts: docs.len(),
        ..CorpusStats::default()
    };
    for d in docs {
        stats.n_sentences += split_sentences(d).len();
        stats.n_mentions += d.mentions.len();
        unique.extend(d.mentions.iter().map(|m| m.surface.to_lowercase()));
    }
    stats.n_unique_mentions = unique.len();
    stats
}
