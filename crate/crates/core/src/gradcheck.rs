//! Central finite-difference checks of analytic gradients.
//!
//! Each suite builds a small model, computes parameter gradients by
//! back-propagation, then perturbs every parameter entry by `±eps` and
//! compares against `(L(θ+eps) − L(θ−eps)) / 2eps`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradBuffer, Graph, ParamStore, Tensor};
use crate::crf::{nll_loss, CrfLayer};
use crate::embeddings::CharVocab;
use crate::encoder::{featurize, Encoder, EncoderDims, SentenceFeatures};
use crate::error::Result;
use crate::lexicon::Lexicon;

/// Step used by the bundled suites.
pub const EPSILON: f64 = 1e-5;

/// Denominator floor of [`relative_error`], so entries whose true
/// gradient is zero are judged by absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Worst agreement over the entries of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub params: Vec<ParamCheck>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "suite={} entries={} max_rel_error={:.3e}",
            self.suite,
            self.entries(),
            self.max_rel_error()
        )?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<28} entries={:<5} max_rel_error={:.3e} max_abs_error={:.3e}",
                p.name, p.entries, p.max_rel_error, p.max_abs_error
            )?;
        }
        Ok(())
    }
}

/// Compares analytic and numeric gradients for every entry of every
/// parameter in `store`. `loss(store, want_grad)` returns the loss and,
/// when asked, its parameter gradients; it must be deterministic.
pub fn check_store<F>(store: &mut ParamStore<f64>, eps: f64, loss: F) -> Result<Vec<ParamCheck>>
where
    F: Fn(&ParamStore<f64>, bool) -> Result<(f64, Option<GradBuffer<f64>>)>,
{
    let analytic = loss(store, true)?.1.expect("gradients requested");
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            entries: store.get(id).len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + eps;
            let plus = loss(store, false)?.0;
            store.get_mut(id).data_mut()[k] = orig - eps;
            let minus = loss(store, false)?.0;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
        }
        out.push(check);
    }
    Ok(out)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("sized")
}

/// CRF negative log-likelihood with respect to emissions and transitions.
pub fn crf_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k) = (3, 4);
    let mut store = ParamStore::new();
    let e = store.add("emissions", random_tensor(&mut rng, m, k, 1.0));
    let t = store.add("transitions", random_tensor(&mut rng, k + 2, k + 2, 1.0));
    let gold: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
    let params = check_store(&mut store, EPSILON, |s, want| {
        let mut g = Graph::with_params(s);
        let (en, tn) = (g.param(e), g.param(t));
        let loss = nll_loss(&mut g, en, tn, &gold, None)?;
        let grads = if want { g.backward(loss)?.into_params() } else { None };
        Ok((g.value(loss).item(), grads))
    })?;
    Ok(SuiteReport { suite: "crf", params })
}

struct Tiny {
    store: ParamStore<f64>,
    encoder: Encoder,
    crf: CrfLayer,
    feats: SentenceFeatures,
    gold: Vec<usize>,
}

/// Three-token sentence, four tags, every component enabled.
fn tiny(seed: u64) -> Result<Tiny> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["colorectal", "cancer", "crc", "the", "of"];
    let mut lexicon = Lexicon::new();
    lexicon.insert("Colorectal Cancer", &["CRC"]);
    let chars = CharVocab::from_chars("Colrectancr CRC".chars());
    let sentence = ["Colorectal", "cancer", "CRC"];
    let feats = featurize(
        &sentence,
        |w| 2 + words.iter().position(|x| *x == w).unwrap_or(0),
        &chars,
        &lexicon,
        true,
    );
    let dims = EncoderDims {
        char_dim: 3,
        char_hidden: 2,
        word_dim: 4,
        word_hidden: 3,
    };
    let mut store = ParamStore::new();
    let table = random_tensor(&mut rng, words.len() + 2, dims.word_dim, 0.5);
    let encoder = Encoder::new(&mut store, table, chars.size(), dims, true, &mut rng)?;
    let n_tags = 4;
    let crf = CrfLayer::new(&mut store, encoder.output_dim(), n_tags, &mut rng);
    let n = n_tags + 2;
    store.set(crf.transitions, random_tensor(&mut rng, n, n, 0.5))?;
    let gold = (0..sentence.len()).map(|_| rng.gen_range(0..n_tags)).collect();
    Ok(Tiny {
        store,
        encoder,
        crf,
        feats,
        gold,
    })
}

/// Full encoder and CRF loss, including dropout with a fixed mask, with
/// respect to every parameter: both BiLSTMs, the character and word
/// tables, the projection and the transitions.
pub fn model_suite(seed: u64) -> Result<SuiteReport> {
    let Tiny {
        mut store,
        encoder,
        crf,
        feats,
        gold,
    } = tiny(seed)?;
    let params = check_store(&mut store, EPSILON, |s, want| {
        let mut g = Graph::with_params(s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let ctx = encoder.contextual(&mut g, &feats, 0.5, true, &mut rng)?;
        let ctx = g.dropout(ctx, 0.5, true, &mut rng)?;
        let e = crf.project(&mut g, ctx)?;
        let loss = crf.nll(&mut g, e, &gold)?;
        let grads = if want { g.backward(loss)?.into_params() } else { None };
        Ok((g.value(loss).item(), grads))
    })?;
    Ok(SuiteReport { suite: "model", params })
}

/// Per-token softmax cross-entropy used when decoding locally.
pub fn local_suite(seed: u64) -> Result<SuiteReport> {
    let Tiny {
        mut store,
        encoder,
        crf,
        feats,
        gold,
    } = tiny(seed)?;
    let params = check_store(&mut store, EPSILON, |s, want| {
        let mut g = Graph::with_params(s);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = encoder.contextual(&mut g, &feats, 0.0, false, &mut rng)?;
        let e = crf.project(&mut g, ctx)?;
        let loss = crate::crf::local_loss(&mut g, e, &gold)?;
        let grads = if want { g.backward(loss)?.into_params() } else { None };
        Ok((g.value(loss).item(), grads))
    })?;
    Ok(SuiteReport { suite: "local", params })
}

/// Sum of the contextual representation of a three-token sentence.
pub fn encoder_suite(seed: u64) -> Result<SuiteReport> {
    let Tiny {
        mut store,
        encoder,
        feats,
        ..
    } = tiny(seed)?;
    let params = check_store(&mut store, EPSILON, |s, want| {
        let mut g = Graph::with_params(s);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = encoder.contextual(&mut g, &feats, 0.0, false, &mut rng)?;
        let loss = g.sum(ctx)?;
        let grads = if want { g.backward(loss)?.into_params() } else { None };
        Ok((g.value(loss).item(), grads))
    })?;
    // the CRF parameters are not part of this loss
    let params = params.into_iter().filter(|p| !p.name.starts_with("crf.")).collect();
    Ok(SuiteReport {
        suite: "encoder",
        params,
    })
}

/// Every suite.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        crf_suite(seed)?,
        encoder_suite(seed)?,
        model_suite(seed)?,
        local_suite(seed)?,
    ])
}
