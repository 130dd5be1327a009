#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use dner::corpus::{parse_pubtator, Document};
use dner::embeddings::{corpus_vocab, load_word2vec_text};
use dner::lexicon::{load_medic, Lexicon};
use dner::pipeline::{sentences, ModelConfig};
use dner::EmbeddingTable;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn toy_docs() -> Vec<Document> {
    let f = File::open(fixture("toy_corpus.txt")).unwrap();
    parse_pubtator(BufReader::new(f)).unwrap().documents
}

pub fn toy_lexicon() -> Lexicon {
    load_medic(BufReader::new(File::open(fixture("toy_medic.tsv")).unwrap())).unwrap()
}

pub fn toy_vectors(docs: &[Document]) -> EmbeddingTable {
    let vocab = corpus_vocab(&sentences(docs));
    let f = File::open(fixture("toy_vectors.txt")).unwrap();
    load_word2vec_text(BufReader::new(f), &vocab, Some(16), 3).unwrap()
}

/// Small dimensions that still exercise every component.
pub fn toy_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.apply_str(
        "epochs=200\ndropout=0.5\nbatch_size=2\nlearning_rate=0.01\nlearning_decay=1.0\n\
         char_dim=8\nchar_lstm_units=8\nword_dim=16\nword_lstm_units=16\nseed=11\n",
    )
    .unwrap();
    c
}
