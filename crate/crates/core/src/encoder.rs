//! Token representations and the bidirectional LSTM encoders.
//!
//! Each token is represented by the concatenation of a character-level
//! BiLSTM summary of its raw surface, its word embedding, and four
//! dictionary bits. A word-level BiLSTM over those vectors yields the
//! contextual representation fed to the CRF.
//!
//! LSTM gates are laid out `[i | f | g | o]` along the columns of the
//! `4H`-wide weight matrices, where `g` is the cell candidate.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::embeddings::{normalize_token, CharVocab};
use crate::error::{Error, Result};
use crate::lexicon::{DictFeatureVector, Lexicon};
use crate::scalar::Scalar;

/// Weights of one LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input_dim × 4H`.
    pub w_input: ParamId,
    /// `H × 4H`.
    pub w_hidden: ParamId,
    /// `1 × 4H`.
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let b = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-b..=b))).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("sized")
}

impl LstmParams {
    /// Registers `{prefix}.w_input`, `{prefix}.w_hidden` and `{prefix}.bias`.
    /// Weights are uniform in `±√(6/(fan_in+fan_out))`; the forget-gate
    /// bias starts at 1.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_input = store.add(format!("{prefix}.w_input"), uniform(input_dim, 4 * hidden, rng));
        let w_hidden = store.add(format!("{prefix}.w_hidden"), uniform(hidden, 4 * hidden, rng));
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        for j in hidden..2 * hidden {
            b.set(0, j, T::one());
        }
        let bias = store.add(format!("{prefix}.bias"), b);
        LstmParams {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let w_input = find(store, &format!("{prefix}.w_input"))?;
        let w_hidden = find(store, &format!("{prefix}.w_hidden"))?;
        let bias = find(store, &format!("{prefix}.bias"))?;
        let (input_dim, hidden) = (store.get(w_input).rows(), store.get(w_hidden).rows());
        if store.get(w_input).cols() != 4 * hidden
            || store.get(w_hidden).cols() != 4 * hidden
            || store.get(bias).shape() != [1, 4 * hidden]
        {
            return Err(Error::Corrupt(format!("inconsistent gate shapes under {prefix}")));
        }
        Ok(LstmParams {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }
}

fn find<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::Corrupt(format!("missing parameter {name}")))
}

/// Forward and backward LSTM with equal hidden sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiLstmParams {
            forward: LstmParams::new(store, &format!("{prefix}.fwd"), input_dim, hidden, rng),
            backward: LstmParams::new(store, &format!("{prefix}.bwd"), input_dim, hidden, rng),
        }
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let forward = LstmParams::bind(store, &format!("{prefix}.fwd"))?;
        let backward = LstmParams::bind(store, &format!("{prefix}.bwd"))?;
        if forward.hidden != backward.hidden || forward.input_dim != backward.input_dim {
            return Err(Error::Corrupt(format!("direction sizes differ under {prefix}")));
        }
        Ok(BiLstmParams { forward, backward })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }
}

/// Gate nonlinearities and state update from the pre-activation `z`.
fn gates<T: Scalar>(
    g: &mut Graph<'_, T>,
    hidden: usize,
    z: NodeId,
    c_prev: Option<NodeId>,
) -> Result<(NodeId, NodeId)> {
    let zi = g.slice_cols(z, 0, hidden)?;
    let zf = g.slice_cols(z, hidden, hidden)?;
    let zg = g.slice_cols(z, 2 * hidden, hidden)?;
    let zo = g.slice_cols(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi)?;
    let cand = g.tanh(zg)?;
    let o = g.sigmoid(zo)?;
    let written = g.mul(i, cand)?;
    let c = match c_prev {
        Some(c_prev) => {
            let f = g.sigmoid(zf)?;
            let kept = g.mul(f, c_prev)?;
            g.add(kept, written)?
        }
        None => written,
    };
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on `1 × input_dim` input with `1 × H` states.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    p: &LstmParams,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let wx = g.param(p.w_input);
    let wh = g.param(p.w_hidden);
    let b = g.param(p.bias);
    let xw = g.matmul(x_t, wx)?;
    let hw = g.matmul(h_prev, wh)?;
    let z = g.add(xw, hw)?;
    let z = g.add_row(z, b)?;
    gates(g, p.hidden, z, Some(c_prev))
}

/// Runs one direction over the rows of `xs` from zero initial states and
/// returns the hidden state at each position, in position order.
fn run_direction<T: Scalar>(g: &mut Graph<'_, T>, p: &LstmParams, xs: NodeId, reverse: bool) -> Result<Vec<NodeId>> {
    let m = g.value(xs).rows();
    let wx = g.param(p.w_input);
    let wh = g.param(p.w_hidden);
    let b = g.param(p.bias);
    let xw = g.matmul(xs, wx)?;
    let pre = g.add_row(xw, b)?;
    let order: Vec<usize> = if reverse {
        (0..m).rev().collect()
    } else {
        (0..m).collect()
    };
    let mut hs = vec![None; m];
    let mut state: Option<(NodeId, NodeId)> = None;
    for t in order {
        let zx = g.row(pre, t)?;
        let (h, c) = match state {
            None => gates(g, p.hidden, zx, None)?,
            Some((h_prev, c_prev)) => {
                let hw = g.matmul(h_prev, wh)?;
                let z = g.add(zx, hw)?;
                gates(g, p.hidden, z, Some(c_prev))?
            }
        };
        hs[t] = Some(h);
        state = Some((h, c));
    }
    Ok(hs.into_iter().map(|h| h.expect("every position visited")).collect())
}

fn non_empty<T: Scalar>(g: &Graph<'_, T>, xs: NodeId, what: &str) -> Result<()> {
    if g.value(xs).rows() == 0 || g.value(xs).is_empty() {
        return Err(Error::Invalid(format!("{what} over an empty sequence")));
    }
    Ok(())
}

/// BiLSTM over the rows of `xs`: row `t` of the `m × 2H` result is
/// `[forward_h_t | backward_h_t]`.
pub fn bilstm<T: Scalar>(g: &mut Graph<'_, T>, p: &BiLstmParams, xs: NodeId) -> Result<NodeId> {
    non_empty(g, xs, "bilstm")?;
    let fwd = run_direction(g, &p.forward, xs, false)?;
    let bwd = run_direction(g, &p.backward, xs, true)?;
    let f = g.concat_rows(&fwd)?;
    let b = g.concat_rows(&bwd)?;
    g.concat_cols(&[f, b])
}

/// `[final forward h | final backward h]` of a BiLSTM over the rows of `xs`.
pub fn final_states<T: Scalar>(g: &mut Graph<'_, T>, p: &BiLstmParams, xs: NodeId) -> Result<NodeId> {
    non_empty(g, xs, "final_states")?;
    let fwd = run_direction(g, &p.forward, xs, false)?;
    let bwd = run_direction(g, &p.backward, xs, true)?;
    let last = *fwd.last().expect("non-empty");
    g.concat_cols(&[last, bwd[0]])
}

/// Layer sizes. Hidden sizes count units per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub word_hidden: usize,
}

/// Indices and dictionary bits for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceFeatures {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub dict: Vec<DictFeatureVector>,
}

impl SentenceFeatures {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Maps raw token surfaces to look-up indices. With `use_dict` false the
/// dictionary bits are all zero.
pub fn featurize<S: AsRef<str>>(
    surfaces: &[S],
    word_index: impl Fn(&str) -> usize,
    chars: &CharVocab,
    lexicon: &Lexicon,
    use_dict: bool,
) -> SentenceFeatures {
    let normalized: Vec<String> = surfaces.iter().map(|s| normalize_token(s.as_ref())).collect();
    let dict = if use_dict {
        lexicon.token_features(&normalized)
    } else {
        vec![DictFeatureVector::default(); normalized.len()]
    };
    SentenceFeatures {
        words: normalized.iter().map(|w| word_index(w)).collect(),
        chars: surfaces.iter().map(|s| chars.encode(s.as_ref())).collect(),
        dict,
    }
}

/// Character table, char BiLSTM, word table and word BiLSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub word_table: ParamId,
    /// Absent when the character model is disabled.
    pub chars: Option<(ParamId, BiLstmParams)>,
    pub word_lstm: BiLstmParams,
    pub dims: EncoderDims,
}

impl Encoder {
    /// Registers all encoder parameters. `word_vectors` seeds the word
    /// table and fixes `word_dim`; `n_chars` is the character vocabulary
    /// size including specials.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        word_vectors: Tensor<T>,
        n_chars: usize,
        dims: EncoderDims,
        use_chars: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if word_vectors.cols() != dims.word_dim {
            return Err(Error::Config(format!(
                "word vectors have dimension {}, configured {}",
                word_vectors.cols(),
                dims.word_dim
            )));
        }
        let word_table = store.add("embed.word", word_vectors);
        let chars = if use_chars {
            let b = (3.0 / dims.char_dim as f64).sqrt();
            let data = (0..n_chars * dims.char_dim)
                .map(|_| T::of(rng.gen_range(-b..=b)))
                .collect();
            let table = store.add("embed.char", Tensor::from_vec(vec![n_chars, dims.char_dim], data)?);
            let lstm = BiLstmParams::new(store, "char_lstm", dims.char_dim, dims.char_hidden, rng);
            Some((table, lstm))
        } else {
            None
        };
        let mut dims = dims;
        if !use_chars {
            dims.char_dim = 0;
            dims.char_hidden = 0;
        }
        let char_part = 2 * dims.char_hidden;
        let token_dim = char_part + dims.word_dim + DictFeatureVector::WIDTH;
        let word_lstm = BiLstmParams::new(store, "word_lstm", token_dim, dims.word_hidden, rng);
        Ok(Encoder {
            word_table,
            chars,
            word_lstm,
            dims,
        })
    }

    /// Looks up parameters registered by [`Encoder::new`].
    pub fn bind<T: Scalar>(store: &ParamStore<T>) -> Result<Self> {
        let word_table = find(store, "embed.word")?;
        let chars = match store.find("embed.char") {
            Some(table) => Some((table, BiLstmParams::bind(store, "char_lstm")?)),
            None => None,
        };
        let word_lstm = BiLstmParams::bind(store, "word_lstm")?;
        let dims = EncoderDims {
            char_dim: chars.as_ref().map_or(0, |(t, _)| store.get(*t).cols()),
            char_hidden: chars.as_ref().map_or(0, |(_, l)| l.hidden()),
            word_dim: store.get(word_table).cols(),
            word_hidden: word_lstm.hidden(),
        };
        let enc = Encoder {
            word_table,
            chars,
            word_lstm,
            dims,
        };
        if enc.word_lstm.forward.input_dim != enc.token_dim() {
            return Err(Error::Corrupt(
                "word LSTM input width does not match token width".into(),
            ));
        }
        Ok(enc)
    }

    pub fn uses_chars(&self) -> bool {
        self.chars.is_some()
    }

    /// Width of the combined token representation.
    pub fn token_dim(&self) -> usize {
        let char_part = if self.uses_chars() {
            2 * self.dims.char_hidden
        } else {
            0
        };
        char_part + self.dims.word_dim + DictFeatureVector::WIDTH
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dims.word_hidden
    }

    /// `1 × 2·char_hidden` summary of one word's character indices.
    pub fn char_representation<T: Scalar>(&self, g: &mut Graph<'_, T>, chars: &[usize]) -> Result<NodeId> {
        let (table, lstm) = self
            .chars
            .as_ref()
            .ok_or_else(|| Error::Invalid("character model disabled".into()))?;
        if chars.is_empty() {
            return Err(Error::Invalid("character representation of an empty word".into()));
        }
        let t = g.param(*table);
        let xs = g.gather(t, chars)?;
        final_states(g, lstm, xs)
    }

    /// Combined token representations, `m × token_dim`.
    pub fn token_reps<T: Scalar>(&self, g: &mut Graph<'_, T>, feats: &SentenceFeatures) -> Result<NodeId> {
        if feats.is_empty() {
            return Err(Error::Invalid("empty sentence".into()));
        }
        let mut parts = Vec::with_capacity(3);
        if self.uses_chars() {
            let reps = feats
                .chars
                .iter()
                .map(|c| self.char_representation(g, c))
                .collect::<Result<Vec<_>>>()?;
            parts.push(g.concat_rows(&reps)?);
        }
        let wt = g.param(self.word_table);
        parts.push(g.gather(wt, &feats.words)?);
        let bits: Vec<f64> = feats.dict.iter().flat_map(|d| d.as_f64()).collect();
        parts.push(g.constant(Tensor::from_f64(feats.len(), DictFeatureVector::WIDTH, &bits)?));
        g.concat_cols(&parts)
    }

    /// Contextual representation, `m × 2·word_hidden`, with dropout on the
    /// token representations in training mode.
    pub fn contextual<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        feats: &SentenceFeatures,
        dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let reps = self.token_reps(g, feats)?;
        let reps = g.dropout(reps, dropout, training, rng)?;
        bilstm(g, &self.word_lstm, reps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Straight-line recurrence over plain vectors.
    fn reference_step(
        store: &ParamStore<f64>,
        p: &LstmParams,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (wx, wh, b) = (store.get(p.w_input), store.get(p.w_hidden), store.get(p.bias));
        let n = p.hidden;
        let z: Vec<f64> = (0..4 * n)
            .map(|j| {
                let mut acc = b.get(0, j);
                for (k, xv) in x.iter().enumerate() {
                    acc += xv * wx.get(k, j);
                }
                for (k, hv) in h.iter().enumerate() {
                    acc += hv * wh.get(k, j);
                }
                acc
            })
            .collect();
        let mut h_new = vec![0.0; n];
        let mut c_new = vec![0.0; n];
        for u in 0..n {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[n + u]);
            let cand = z[2 * n + u].tanh();
            let o = sigmoid(z[3 * n + u]);
            c_new[u] = f * c[u] + i * cand;
            h_new[u] = o * c_new[u].tanh();
        }
        (h_new, c_new)
    }

    fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng);
        for id in [p.w_input, p.w_hidden, p.bias] {
            store.get_mut(id).fill(0.0);
        }
        let mut g = Graph::with_params(&store);
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let c0 = g.constant(Tensor::zeros(&[1, 2]));
        let (h, _) = lstm_step(&mut g, &p, x, h0, c0).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_the_cell() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng);
        let b = store.get_mut(p.bias);
        for u in 0..2 {
            b.set(0, u, -50.0);
            b.set(0, 2 + u, 50.0);
        }
        let mut g = Graph::with_params(&store);
        let x = g.constant(Tensor::row(vec![0.3, -0.2, 0.1]));
        let h0 = g.constant(Tensor::row(vec![0.1, 0.4]));
        let c0 = g.constant(Tensor::row(vec![0.7, -1.3]));
        let (_, c) = lstm_step(&mut g, &p, x, h0, c0).unwrap();
        for (a, b) in g.value(c).data().iter().zip([0.7_f64, -1.3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_matches_straight_line_oracle() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmParams::new(&mut store, "l", 4, 3, &mut rng);
        let x = random_rows(&mut rng, 1, 4);
        let h0 = random_rows(&mut rng, 1, 3);
        let c0 = random_rows(&mut rng, 1, 3);
        let (rh, rc) = reference_step(&store, &p, x.data(), h0.data(), c0.data());
        let mut g = Graph::with_params(&store);
        let (xn, hn, cn) = (g.constant(x), g.constant(h0), g.constant(c0));
        let (h, c) = lstm_step(&mut g, &p, xn, hn, cn).unwrap();
        for (a, b) in g
            .value(h)
            .data()
            .iter()
            .zip(&rh)
            .chain(g.value(c).data().iter().zip(&rc))
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bilstm_matches_oracle_over_a_sequence() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BiLstmParams::new(&mut store, "b", 3, 2, &mut rng);
        let xs = random_rows(&mut rng, 4, 3);
        let run = |lp: &LstmParams, order: Vec<usize>| {
            let mut out = vec![vec![]; 4];
            let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
            for t in order {
                (h, c) = reference_step(&store, lp, xs.row_slice(t), &h, &c);
                out[t] = h.clone();
            }
            out
        };
        let fwd = run(&p.forward, (0..4).collect());
        let bwd = run(&p.backward, (0..4).rev().collect());
        let mut g = Graph::with_params(&store);
        let xn = g.constant(xs.clone());
        let out = bilstm(&mut g, &p, xn).unwrap();
        let v = g.value(out);
        assert_eq!(v.shape(), &[4, 4]);
        for t in 0..4 {
            let expect: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
            for (a, b) in v.row_slice(t).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn palindrome_mirrors_halves() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = BiLstmParams::new(&mut store, "b", 2, 3, &mut rng);
        for (f, b) in [
            (p.forward.w_input, p.backward.w_input),
            (p.forward.w_hidden, p.backward.w_hidden),
            (p.forward.bias, p.backward.bias),
        ] {
            let t = store.get(f).clone();
            store.set(b, t).unwrap();
        }
        let a = [0.5, -0.1];
        let b = [0.2, 0.9];
        let xs = Tensor::from_f64(3, 2, &[a[0], a[1], b[0], b[1], a[0], a[1]]).unwrap();
        let mut g = Graph::with_params(&store);
        let xn = g.constant(xs);
        let out = bilstm(&mut g, &p, xn).unwrap();
        let v = g.value(out);
        for t in 0..3 {
            let mirror = 2 - t;
            assert_eq!(&v.row_slice(t)[..3], &v.row_slice(mirror)[3..]);
        }
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = BiLstmParams::new(&mut store, "b", 2, 3, &mut rng);
        let mut g = Graph::with_params(&store);
        let xn = g.constant(Tensor::zeros(&[0, 2]));
        assert!(bilstm(&mut g, &p, xn).is_err());
    }

    fn toy_encoder(word_hidden: usize, use_chars: bool) -> (ParamStore<f64>, Encoder, CharVocab) {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let chars = CharVocab::from_chars("ASas colrectancr".chars());
        let dims = EncoderDims {
            char_dim: 5,
            char_hidden: 4,
            word_dim: 6,
            word_hidden,
        };
        let words = random_rows(&mut rng, 10, 6);
        let enc = Encoder::new(&mut store, words, chars.size(), dims, use_chars, &mut rng).unwrap();
        (store, enc, chars)
    }

    #[test]
    fn raw_case_reaches_the_char_model() {
        let (store, enc, chars) = toy_encoder(3, true);
        let mut g = Graph::with_params(&store);
        let upper = enc.char_representation(&mut g, &chars.encode("AS")).unwrap();
        let lower = enc.char_representation(&mut g, &chars.encode("as")).unwrap();
        let again = enc.char_representation(&mut g, &chars.encode("AS")).unwrap();
        assert_eq!(g.value(upper).shape(), &[1, 8]);
        assert_ne!(g.value(upper).data(), g.value(lower).data());
        assert_eq!(g.value(upper).data(), g.value(again).data());
    }

    fn feats(n: usize, chars: &CharVocab, lexicon: &Lexicon, use_dict: bool) -> SentenceFeatures {
        let words: Vec<String> = (0..n)
            .map(|i| ["colorectal", "cancer", "as", "AS"][i % 4].to_string())
            .collect();
        featurize(&words, |w| w.len() % 10, chars, lexicon, use_dict)
    }

    #[test]
    fn full_size_word_encoder_shape() {
        let (store, enc, chars) = toy_encoder(300, true);
        let f = feats(9, &chars, &Lexicon::new(), true);
        let mut g = Graph::with_params(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = enc.contextual(&mut g, &f, 0.5, false, &mut rng).unwrap();
        assert_eq!(g.value(out).shape(), &[9, 600]);
    }

    #[test]
    fn dictionary_ablation_zeroes_bits_only() {
        let (store, enc, chars) = toy_encoder(3, true);
        let mut lex = Lexicon::new();
        lex.insert("Colorectal Cancer", &["CRC"]);
        let on = feats(4, &chars, &lex, true);
        let off = feats(4, &chars, &lex, false);
        assert!(on.dict[0].multiword_part);
        assert!(off.dict.iter().all(|d| *d == DictFeatureVector::default()));
        let mut g = Graph::with_params(&store);
        let a = enc.token_reps(&mut g, &on).unwrap();
        let b = enc.token_reps(&mut g, &off).unwrap();
        assert_eq!(g.value(a).shape(), g.value(b).shape());
        assert_eq!(g.value(a).cols(), enc.token_dim());
    }

    #[test]
    fn inference_is_deterministic() {
        let (store, enc, chars) = toy_encoder(3, true);
        let f = feats(5, &chars, &Lexicon::new(), true);
        let mut g = Graph::with_params(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = enc.contextual(&mut g, &f, 0.5, false, &mut rng).unwrap();
        let b = enc.contextual(&mut g, &f, 0.5, false, &mut rng).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn right_context_flows_backwards() {
        let (store, enc, chars) = toy_encoder(3, true);
        let mut f = feats(5, &chars, &Lexicon::new(), true);
        let mut g = Graph::with_params(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = enc.contextual(&mut g, &f, 0.0, false, &mut rng).unwrap();
        f.words[3] = (f.words[3] + 1) % 10;
        let after = enc.contextual(&mut g, &f, 0.0, false, &mut rng).unwrap();
        for t in 0..3 {
            assert_ne!(g.value(before).row_slice(t), g.value(after).row_slice(t));
        }
        // the forward half at the last position saw the changed token too,
        // so only check positions strictly left of it
        assert_ne!(g.value(before).row_slice(3), g.value(after).row_slice(3));
    }

    #[test]
    fn shapes_for_all_lengths() {
        for use_chars in [true, false] {
            let (store, enc, chars) = toy_encoder(2, use_chars);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for n in 1..=50 {
                let f = feats(n, &chars, &Lexicon::new(), true);
                let mut g = Graph::with_params(&store);
                let out = enc.contextual(&mut g, &f, 0.5, true, &mut rng).unwrap();
                assert_eq!(g.value(out).shape(), &[n, 4]);
            }
        }
    }

    #[test]
    fn bind_recovers_layout() {
        let (store, enc, _) = toy_encoder(3, true);
        assert_eq!(Encoder::bind(&store).unwrap(), enc);
        let (store, enc, _) = toy_encoder(3, false);
        assert_eq!(Encoder::bind(&store).unwrap(), enc);
        assert_eq!(enc.token_dim(), 10);
    }
}
