use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};
use crate::corpus::{char_slice, split_sentences, Document, Mention, Sentence};
use crate::crf::CrfLayer;
use crate::crf::{local_decode, local_loss, ScoreMatrix};
use crate::embeddings::{CharVocab, EmbeddingTable, UNK_ROW};
use crate::encoder::{featurize, Encoder, EncoderDims, SentenceFeatures};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::tagging::{decode_tags, Span, TagInventory};

use super::config::ModelConfig;
use super::data::ENTITY_TYPE;

/// Normalized word list in embedding-row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordVocab {
    pub fn new(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        WordVocab { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Row of a normalized word, `UNK` when absent.
    pub fn index(&self, normalized: &str) -> usize {
        self.index.get(normalized).copied().unwrap_or(UNK_ROW)
    }
}

/// Everything needed to tag text: configuration, look-up tables,
/// lexicon and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub inventory: TagInventory,
    pub words: WordVocab,
    pub chars: CharVocab,
    pub lexicon: Lexicon,
    pub store: ParamStore<f64>,
    pub encoder: Encoder,
    pub crf: CrfLayer,
}

/// `(T+2)²` legality mask over the inventory plus `START` and `STOP`.
pub fn transition_mask(inv: &TagInventory) -> Vec<bool> {
    let k = inv.len();
    let n = k + 2;
    let (start, stop) = (k, k + 1);
    let mut allowed = vec![false; n * n];
    for (j, to) in inv.tags().iter().enumerate() {
        allowed[start * n + j] = inv.start_allowed(to);
        allowed[j * n + stop] = inv.stop_allowed(to);
        for (i, from) in inv.tags().iter().enumerate() {
            allowed[i * n + j] = inv.transition_allowed(from, to);
        }
    }
    allowed
}

impl Model {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, table: EmbeddingTable<f64>, chars: CharVocab, lexicon: Lexicon) -> Result<Self> {
        config.validate()?;
        let inventory = TagInventory::new(config.scheme, &[ENTITY_TYPE]);
        let words = WordVocab::new(table.words().to_vec());
        let dims = EncoderDims {
            char_dim: config.char_dim,
            char_hidden: config.char_lstm_units,
            word_dim: config.word_dim,
            word_hidden: config.word_lstm_units,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(
            &mut store,
            table.into_vectors(),
            chars.size(),
            dims,
            config.flags.char_embeddings,
            &mut rng,
        )?;
        let crf = CrfLayer::new(&mut store, encoder.output_dim(), inventory.len(), &mut rng);
        Self::assemble(config, inventory, words, chars, lexicon, store, encoder, crf)
    }

    /// Rebinds a model around an existing parameter store.
    pub fn from_parts(
        config: ModelConfig,
        words: WordVocab,
        chars: CharVocab,
        lexicon: Lexicon,
        store: ParamStore<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let inventory = TagInventory::new(config.scheme, &[ENTITY_TYPE]);
        let encoder = Encoder::bind(&store)?;
        let crf = CrfLayer::bind(&store)?;
        Self::assemble(config, inventory, words, chars, lexicon, store, encoder, crf)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: ModelConfig,
        inventory: TagInventory,
        words: WordVocab,
        chars: CharVocab,
        lexicon: Lexicon,
        store: ParamStore<f64>,
        encoder: Encoder,
        mut crf: CrfLayer,
    ) -> Result<Self> {
        if crf.n_tags != inventory.len() || crf.input_dim != encoder.output_dim() {
            return Err(Error::Corrupt("projection does not match tag inventory".into()));
        }
        if store.get(encoder.word_table).rows() != words.len() {
            return Err(Error::Corrupt("word table does not match vocabulary".into()));
        }
        if let Some((table, _)) = &encoder.chars {
            if store.get(*table).rows() != chars.size() {
                return Err(Error::Corrupt("character table does not match vocabulary".into()));
            }
        }
        if encoder.uses_chars() != config.flags.char_embeddings {
            return Err(Error::Corrupt("character model presence does not match config".into()));
        }
        if config.hard_mask {
            crf.allowed = Some(transition_mask(&inventory));
        }
        Ok(Model {
            config,
            inventory,
            words,
            chars,
            lexicon,
            store,
            encoder,
            crf,
        })
    }

    pub fn features<S: AsRef<str>>(&self, surfaces: &[S]) -> SentenceFeatures {
        featurize(
            surfaces,
            |w| self.words.index(w),
            &self.chars,
            &self.lexicon,
            self.config.flags.dictionary,
        )
    }

    /// Emission scores `m × T`, with dropout in training mode.
    pub fn emissions<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, f64>,
        feats: &SentenceFeatures,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let rate = self.config.dropout;
        let ctx = self.encoder.contextual(g, feats, rate, training, rng)?;
        let ctx = g.dropout(ctx, rate, training, rng)?;
        self.crf.project(g, ctx)
    }

    /// Training loss for one sentence: CRF negative log-likelihood, or
    /// mean token cross-entropy when decoding locally.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, f64>,
        feats: &SentenceFeatures,
        gold: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let e = self.emissions(g, feats, training, rng)?;
        if self.config.flags.global_decoding {
            self.crf.nll(g, e, gold)
        } else {
            local_loss(g, e, gold)
        }
    }

    /// Raw tag indices for one sentence in inference mode.
    pub fn decode(&self, feats: &SentenceFeatures) -> Result<Vec<usize>> {
        let mut g = Graph::with_params(&self.store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = self.emissions(&mut g, feats, false, &mut rng)?;
        let scores: &Tensor<f64> = g.value(e);
        if self.config.flags.global_decoding {
            self.crf.decode(&self.store, scores)
        } else {
            Ok(local_decode(&ScoreMatrix::from_tensor(scores)?))
        }
    }

    /// Predicted token spans for a sentence, after repair.
    pub fn predict_spans(&self, sentence: &Sentence) -> Result<Vec<Span>> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let feats = self.features(&sentence.surfaces());
        let raw = self.decode(&feats)?;
        Ok(decode_tags(&self.inventory.decode(&raw)))
    }

    /// Copy of `doc` whose mentions are the model's predictions.
    pub fn annotate(&self, doc: &Document) -> Result<Document> {
        let text = doc.text();
        let mut mentions = Vec::new();
        for sentence in split_sentences(doc) {
            for span in self.predict_spans(&sentence)? {
                let start = sentence.tokens[span.start].start;
                let end = sentence.tokens[span.end].end;
                mentions.push(Mention {
                    start,
                    end,
                    surface: char_slice(&text, start, end),
                    entity_type: span.entity_type.clone(),
                    concept_id: None,
                });
            }
        }
        Ok(Document {
            id: doc.id.clone(),
            title: doc.title.clone(),
            abstract_text: doc.abstract_text.clone(),
            mentions,
        })
    }
}
