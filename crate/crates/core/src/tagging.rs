//! Segment representation schemes (IOB2 and IOBES): encoding entity spans
//! as per-token tags, decoding them back, converting between schemes and
//! repairing structurally invalid sequences.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Scheme {
    #[default]
    Iob2,
    Iobes,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Iob2 => "IOB2",
            Scheme::Iobes => "IOBES",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iob2" | "bio" => Ok(Scheme::Iob2),
            "iobes" | "bioes" => Ok(Scheme::Iobes),
            other => Err(Error::Invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

/// One token label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
    End(String),
    Single(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) | Tag::End(t) | Tag::Single(t) => Some(t),
        }
    }

    /// Parses a symbol such as `B-Disease`, rejecting prefixes that are not
    /// part of `scheme`.
    pub fn parse(symbol: &str, scheme: Scheme) -> Result<Tag> {
        let unknown = || Error::UnknownTag {
            tag: symbol.to_string(),
            scheme: scheme.to_string(),
        };
        if symbol == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, ty) = symbol.split_once('-').ok_or_else(unknown)?;
        if ty.is_empty() {
            return Err(unknown());
        }
        let ty = ty.to_string();
        match (prefix, scheme) {
            ("B", _) => Ok(Tag::Begin(ty)),
            ("I", _) => Ok(Tag::Inside(ty)),
            ("E", Scheme::Iobes) => Ok(Tag::End(ty)),
            ("S", Scheme::Iobes) => Ok(Tag::Single(ty)),
            _ => Err(unknown()),
        }
    }

    fn opens_or_continues(&self, ty: &str) -> bool {
        matches!(self, Tag::Begin(t) | Tag::Inside(t) if t == ty)
    }

    fn continues(&self, ty: &str) -> bool {
        matches!(self, Tag::Inside(t) | Tag::End(t) if t == ty)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
            Tag::End(t) => write!(f, "E-{t}"),
            Tag::Single(t) => write!(f, "S-{t}"),
        }
    }
}

/// Token-level entity span; `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl Span {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        Span {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={} {}", self.start, self.end, self.entity_type)
    }
}

/// A structurally valid tag sequence under one scheme.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagSequence {
    tags: Vec<Tag>,
    scheme: Scheme,
}

impl TagSequence {
    /// Validates `tags` under `scheme`.
    pub fn new(tags: Vec<Tag>, scheme: Scheme) -> Result<Self> {
        if let Some(i) = first_violation(&tags, scheme) {
            return Err(Error::Invalid(format!(
                "tag {} at position {i} is not valid under {scheme}",
                tags[i]
            )));
        }
        Ok(TagSequence { tags, scheme })
    }

    /// Parses and validates tag symbols.
    pub fn parse<S: AsRef<str>>(symbols: &[S], scheme: Scheme) -> Result<Self> {
        let tags = symbols
            .iter()
            .map(|s| Tag::parse(s.as_ref(), scheme))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tags, scheme)
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn symbols(&self) -> Vec<String> {
        self.tags.iter().map(Tag::to_string).collect()
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbols().join(" "))
    }
}

/// Index of the first tag that breaks the scheme's transition rules.
fn first_violation(tags: &[Tag], scheme: Scheme) -> Option<usize> {
    for (i, tag) in tags.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(&tags[i - 1]) };
        let next = tags.get(i + 1);
        let ok = match (tag, scheme) {
            (Tag::End(_) | Tag::Single(_), Scheme::Iob2) => false,
            (Tag::Outside, _) => true,
            (Tag::Begin(_), Scheme::Iob2) | (Tag::Single(_), Scheme::Iobes) => true,
            (Tag::Inside(ty), Scheme::Iob2) => prev.is_some_and(|p| p.opens_or_continues(ty)),
            (Tag::Begin(ty), Scheme::Iobes) => next.is_some_and(|n| n.continues(ty)),
            (Tag::Inside(ty), Scheme::Iobes) => {
                prev.is_some_and(|p| p.opens_or_continues(ty)) && next.is_some_and(|n| n.continues(ty))
            }
            (Tag::End(ty), Scheme::Iobes) => prev.is_some_and(|p| p.opens_or_continues(ty)),
        };
        if !ok {
            return Some(i);
        }
    }
    None
}

pub fn is_valid(tags: &[Tag], scheme: Scheme) -> bool {
    first_violation(tags, scheme).is_none()
}

/// Encodes non-overlapping spans over `n_tokens` tokens.
pub fn encode_spans(n_tokens: usize, spans: &[Span], scheme: Scheme) -> Result<TagSequence> {
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort();
    for s in &sorted {
        if s.start > s.end || s.end >= n_tokens {
            return Err(Error::Invalid(format!("span {s} outside 0..{n_tokens}")));
        }
    }
    for w in sorted.windows(2) {
        if w[0].overlaps(w[1]) {
            return Err(Error::OverlappingSpans {
                first: w[0].to_string(),
                second: w[1].to_string(),
            });
        }
    }
    let mut tags = vec![Tag::Outside; n_tokens];
    for s in sorted {
        let ty = &s.entity_type;
        match scheme {
            Scheme::Iob2 => {
                tags[s.start] = Tag::Begin(ty.clone());
                for t in &mut tags[s.start + 1..=s.end] {
                    *t = Tag::Inside(ty.clone());
                }
            }
            Scheme::Iobes if s.start == s.end => tags[s.start] = Tag::Single(ty.clone()),
            Scheme::Iobes => {
                tags[s.start] = Tag::Begin(ty.clone());
                for t in &mut tags[s.start + 1..s.end] {
                    *t = Tag::Inside(ty.clone());
                }
                tags[s.end] = Tag::End(ty.clone());
            }
        }
    }
    Ok(TagSequence { tags, scheme })
}

/// Maximal spans of a valid sequence, in token order.
pub fn decode_tags(seq: &TagSequence) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in seq.tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((s, ty)) = open.take() {
                    spans.push(Span::new(s, i - 1, ty));
                }
            }
            Tag::Begin(ty) | Tag::Single(ty) => {
                if let Some((s, prev)) = open.take() {
                    spans.push(Span::new(s, i - 1, prev));
                }
                if matches!(tag, Tag::Single(_)) {
                    spans.push(Span::new(i, i, ty.as_str()));
                } else {
                    open = Some((i, ty));
                }
            }
            Tag::Inside(ty) => {
                if !matches!(open, Some((_, t)) if t == ty) {
                    if let Some((s, prev)) = open.take() {
                        spans.push(Span::new(s, i - 1, prev));
                    }
                    open = Some((i, ty));
                }
            }
            Tag::End(ty) => {
                let start = match open.take() {
                    Some((s, t)) if t == ty => s,
                    Some((s, prev)) => {
                        spans.push(Span::new(s, i - 1, prev));
                        i
                    }
                    None => i,
                };
                spans.push(Span::new(start, i, ty.as_str()));
            }
        }
    }
    if let Some((s, ty)) = open {
        spans.push(Span::new(s, seq.tags.len() - 1, ty));
    }
    spans
}

/// Re-encodes `seq` under `target`; the span set is unchanged.
pub fn convert(seq: &TagSequence, target: Scheme) -> TagSequence {
    if seq.scheme == target {
        return seq.clone();
    }
    encode_spans(seq.len(), &decode_tags(seq), target).expect("decoded spans never overlap")
}

/// Turns arbitrary tag symbols into a valid sequence with minimal local
/// edits:
///
/// * an `I-`/`E-` that does not continue a `B-`/`I-` of its type becomes `B-`;
/// * under IOBES, a `B-` not followed by `I-`/`E-` of its type becomes `S-`,
///   and an `I-` that is not continued becomes `E-`.
///
/// Valid input is returned unchanged. Symbols outside the scheme's
/// inventory are an error.
pub fn repair<S: AsRef<str>>(raw: &[S], scheme: Scheme) -> Result<TagSequence> {
    let parsed = raw
        .iter()
        .map(|s| Tag::parse(s.as_ref(), scheme))
        .collect::<Result<Vec<_>>>()?;
    Ok(repair_tags(parsed, scheme))
}

/// [`repair`] over already-parsed tags.
pub fn repair_tags(mut tags: Vec<Tag>, scheme: Scheme) -> TagSequence {
    for i in 0..tags.len() {
        let orphan = match &tags[i] {
            Tag::Inside(ty) | Tag::End(ty) => i == 0 || !tags[i - 1].opens_or_continues(ty),
            _ => false,
        };
        if orphan {
            let ty = tags[i].entity_type().unwrap_or_default().to_string();
            tags[i] = Tag::Begin(ty);
        }
    }
    if scheme == Scheme::Iobes {
        for i in 0..tags.len() {
            let continued = |ty: &str| tags.get(i + 1).is_some_and(|n| n.continues(ty));
            let replacement = match &tags[i] {
                Tag::Begin(ty) if !continued(ty) => Some(Tag::Single(ty.clone())),
                Tag::Inside(ty) if !continued(ty) => Some(Tag::End(ty.clone())),
                _ => None,
            };
            if let Some(r) = replacement {
                tags[i] = r;
            }
        }
    }
    debug_assert!(is_valid(&tags, scheme));
    TagSequence { tags, scheme }
}

/// Ordered tag set used by a model: `O` first, then each entity type's
/// tags in scheme order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagInventory {
    scheme: Scheme,
    tags: Vec<Tag>,
}

impl TagInventory {
    pub fn new<S: AsRef<str>>(scheme: Scheme, entity_types: &[S]) -> Self {
        let mut tags = vec![Tag::Outside];
        for ty in entity_types {
            let ty = ty.as_ref().to_string();
            tags.push(Tag::Begin(ty.clone()));
            tags.push(Tag::Inside(ty.clone()));
            if scheme == Scheme::Iobes {
                tags.push(Tag::End(ty.clone()));
                tags.push(Tag::Single(ty));
            }
        }
        TagInventory { scheme, tags }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn index_of(&self, tag: &Tag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn tag(&self, index: usize) -> &Tag {
        &self.tags[index]
    }

    pub fn entity_types(&self) -> Vec<String> {
        self.tags
            .iter()
            .filter_map(|t| match t {
                Tag::Begin(ty) => Some(ty.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn indices(&self, seq: &TagSequence) -> Result<Vec<usize>> {
        seq.tags()
            .iter()
            .map(|t| {
                self.index_of(t).ok_or_else(|| Error::UnknownTag {
                    tag: t.to_string(),
                    scheme: self.scheme.to_string(),
                })
            })
            .collect()
    }

    /// Maps raw model output back to tags and repairs the sequence.
    pub fn decode(&self, indices: &[usize]) -> TagSequence {
        repair_tags(indices.iter().map(|&i| self.tags[i].clone()).collect(), self.scheme)
    }

    /// Whether `from → to` can occur in a valid sequence.
    pub fn transition_allowed(&self, from: &Tag, to: &Tag) -> bool {
        match self.scheme {
            Scheme::Iob2 => match to {
                Tag::Inside(ty) => matches!(from, Tag::Begin(t) | Tag::Inside(t) if t == ty),
                _ => true,
            },
            Scheme::Iobes => {
                let closes = |t: &Tag| matches!(t, Tag::Outside | Tag::End(_) | Tag::Single(_));
                let opens_next = |t: &Tag| matches!(t, Tag::Outside | Tag::Begin(_) | Tag::Single(_));
                match from {
                    Tag::Begin(ty) | Tag::Inside(ty) => to.continues(ty),
                    _ => closes(from) && opens_next(to),
                }
            }
        }
    }

    /// Whether a sequence may start with `tag`.
    pub fn start_allowed(&self, tag: &Tag) -> bool {
        !matches!(tag, Tag::Inside(_) | Tag::End(_))
    }

    /// Whether a sequence may end with `tag`.
    pub fn stop_allowed(&self, tag: &Tag) -> bool {
        self.scheme == Scheme::Iob2 || !matches!(tag, Tag::Begin(_) | Tag::Inside(_))
    }
}
