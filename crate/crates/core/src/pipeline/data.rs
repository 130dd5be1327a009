use crate::corpus::{project_mentions, split_sentences, Diagnostic, Document, Sentence};
use crate::tagging::{Scheme, Span, TagSequence};

/// The single entity type the models label.
pub const ENTITY_TYPE: &str = "Disease";

/// Mention types dropped before training and scoring.
pub const EXCLUDED_TYPES: &[&str] = &["Chemical"];

/// Copy of `doc` with excluded mention types removed and every remaining
/// mention relabelled [`ENTITY_TYPE`].
pub fn disease_only(doc: &Document) -> Document {
    let mut out = doc.clone();
    out.mentions
        .retain(|m| !EXCLUDED_TYPES.contains(&m.entity_type.as_str()));
    for m in &mut out.mentions {
        m.entity_type = ENTITY_TYPE.to_string();
    }
    out
}

/// A sentence with its gold labels.
#[derive(Debug, Clone)]
pub struct Example {
    pub sentence: Sentence,
    pub spans: Vec<Span>,
    pub tags: TagSequence,
}

/// Splits documents into labelled sentences.
pub fn examples(docs: &[Document], scheme: Scheme) -> (Vec<Example>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for doc in docs {
        let doc = disease_only(doc);
        for sentence in split_sentences(&doc) {
            if sentence.is_empty() {
                continue;
            }
            let p = project_mentions(&sentence, &doc.mentions, scheme);
            diagnostics.extend(p.diagnostics);
            out.push(Example {
                sentence,
                spans: p.spans,
                tags: p.tags,
            });
        }
    }
    (out, diagnostics)
}

/// All sentences of `docs`, unlabelled.
pub fn sentences(docs: &[Document]) -> Vec<Sentence> {
    docs.iter()
        .flat_map(split_sentences)
        .filter(|s| !s.is_empty())
        .collect()
}
