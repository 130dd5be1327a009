use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{clip_global_norm, Adam, AdamConfig, GradBuffer, Graph};
use crate::corpus::Document;
use crate::embeddings::{build_char_vocab, corpus_vocab, random_table, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluate::{score_entities, EvalReport};
use crate::lexicon::Lexicon;
use crate::tagging::{Scheme, Span};

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::data::{examples, Example};
use super::model::Model;

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean per-sentence training loss.
    pub loss: f64,
    pub learning_rate: f64,
    /// Largest pre-clipping gradient norm seen in the epoch.
    pub max_grad_norm: f64,
    pub dev: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best development F1.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochSummary>,
}

/// Strict span-level scores of `model` on labelled sentences.
pub fn evaluate_model(model: &Model, data: &[Example]) -> Result<EvalReport> {
    let gold: Vec<_> = data.iter().map(|e| e.spans.clone()).collect();
    let pred = data
        .iter()
        .map(|e| model.predict_spans(&e.sentence))
        .collect::<Result<Vec<_>>>()?;
    score_entities(&gold, &pred)
}

/// Scores predicted documents against gold ones, matched by id. A gold
/// document without a prediction counts as predicting nothing; predictions
/// for unknown ids are ignored.
pub fn score_documents(gold: &[Document], pred: &[Document]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Document> = pred.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut aligned = Vec::with_capacity(gold.len());
    for g in gold {
        let p = match by_id.get(g.id.as_str()) {
            Some(p) if p.title != g.title || p.abstract_text != g.abstract_text => {
                return Err(Error::Invalid(format!(
                    "document {}: predicted text differs from gold",
                    g.id
                )));
            }
            Some(p) => (*p).clone(),
            None => Document {
                mentions: Vec::new(),
                ..g.clone()
            },
        };
        aligned.push(p);
    }
    // spans are scheme independent
    let spans =
        |docs: &[Document]| -> Vec<Vec<Span>> { examples(docs, Scheme::Iob2).0.into_iter().map(|e| e.spans).collect() };
    score_entities(&spans(gold), &spans(&aligned))
}

/// Groups sentence indices into batches of similar length. Order within
/// equal lengths and the order of batches are shuffled.
fn batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    out.shuffle(rng);
    out
}

/// Builds a model and trains it.
///
/// With `flags.pretrained` set, `pretrained` supplies the word table;
/// otherwise a random table over the training vocabulary is used. Words
/// missing from the table map to `UNK`. When `dev_docs` is empty the
/// training documents double as the selection set.
pub fn train(
    config: &ModelConfig,
    train_docs: &[Document],
    dev_docs: &[Document],
    pretrained: Option<EmbeddingTable<f64>>,
    lexicon: Lexicon,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_set, _) = examples(train_docs, config.scheme);
    if train_set.is_empty() {
        return Err(Error::Invalid("training corpus has no sentences".into()));
    }
    let dev_set = if dev_docs.is_empty() {
        train_set.clone()
    } else {
        examples(dev_docs, config.scheme).0
    };
    let train_sentences: Vec<_> = train_set.iter().map(|e| e.sentence.clone()).collect();
    let table = if config.flags.pretrained {
        pretrained.ok_or_else(|| Error::Config("pre-trained embeddings enabled but none supplied".into()))?
    } else {
        random_table(&corpus_vocab(&train_sentences), config.word_dim, config.seed)?
    };
    let chars = build_char_vocab(&train_sentences);
    let model = Model::new(config.clone(), table, chars, lexicon)?;
    train_model(model, &train_set, &dev_set)
}

/// Trains an already initialized model.
pub fn train_model(mut model: Model, train_set: &[Example], dev_set: &[Example]) -> Result<TrainOutcome> {
    let config = model.config.clone();
    let feats: Vec<_> = train_set
        .iter()
        .map(|e| model.features(&e.sentence.surfaces()))
        .collect();
    let gold = train_set
        .iter()
        .map(|e| model.inventory.indices(&e.tags))
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = feats.iter().map(|f| f.len()).collect();

    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            decay: config.learning_decay,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut grads = GradBuffer::zeros_like(&model.store);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 0..config.epochs {
        let mut total_loss = 0.0;
        let mut max_norm: f64 = 0.0;
        for (b, batch) in batches(&lengths, config.batch_size, &mut rng).iter().enumerate() {
            grads.zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut g = Graph::with_params(&model.store);
                let diverged = |e: Error| Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("sentence {i}: {e}"),
                };
                let loss = model
                    .loss(&mut g, &feats[i], &gold[i], true, &mut rng)
                    .map_err(diverged)?;
                batch_loss += g.value(loss).item();
                g.backward_into(loss, &mut grads).map_err(diverged)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm)
            } else {
                grads.global_norm()
            };
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss {batch_loss}, gradient norm {norm}"),
                });
            }
            debug!("epoch {epoch} batch {b}: loss {batch_loss:.6} grad norm {norm:.4}");
            max_norm = max_norm.max(norm);
            total_loss += batch_loss;
            adam.step(&mut model.store, &grads, epoch);
        }
        let dev = evaluate_model(&model, dev_set)?;
        let summary = EpochSummary {
            epoch,
            loss: total_loss / train_set.len() as f64,
            learning_rate: adam.learning_rate_at(epoch),
            max_grad_norm: max_norm,
            dev,
        };
        info!(
            "epoch {epoch}: loss {:.6} lr {:.3e} dev F1 {:.4}",
            summary.loss, summary.learning_rate, dev.f1
        );
        history.push(summary);
        if best.as_ref().is_none_or(|c| dev.f1 > c.dev_f1) {
            best = Some(Checkpoint {
                model: model.clone(),
                epoch,
                dev_f1: dev.f1,
            });
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        history,
    })
}
