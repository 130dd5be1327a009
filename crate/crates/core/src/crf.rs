//! Linear-chain CRF over emission scores.
//!
//! Paths are scored with explicit virtual `START` and `STOP` states:
//!
//! ```text
//! score(y) = Tr[START, y_1] + Σ_t s[t, y_t] + Σ_t Tr[y_t, y_{t+1}] + Tr[y_m, STOP]
//! ```
//!
//! The pure functions here ([`global_score`], [`log_partition`],
//! [`viterbi_decode`], [`local_decode`], [`marginals`]) work on any
//! [`Scalar`]. [`CrfLayer`] wires emission projection and the negative
//! log-likelihood into an autodiff [`Graph`].

use rand::Rng;

use crate::autodiff::{CustomOp, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Emission scores, one row per position and one column per tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T> {
    positions: usize,
    tags: usize,
    data: Vec<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    pub fn new(positions: usize, tags: usize, data: Vec<T>) -> Result<Self> {
        if positions == 0 || tags == 0 {
            return Err(Error::Invalid(format!(
                "score matrix needs at least one position and tag, got {positions}×{tags}"
            )));
        }
        if data.len() != positions * tags {
            return Err(Error::Shape {
                op: "ScoreMatrix::new",
                left: vec![positions, tags],
                right: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "ScoreMatrix::new" });
        }
        Ok(ScoreMatrix { positions, tags, data })
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        Self::new(t.rows(), t.cols(), t.data().to_vec())
    }

    pub fn zeros(positions: usize, tags: usize) -> Self {
        Self::new(positions, tags, vec![T::zero(); positions * tags]).expect("non-empty")
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn tags(&self) -> usize {
        self.tags
    }

    pub fn get(&self, position: usize, tag: usize) -> T {
        self.data[position * self.tags + tag]
    }

    pub fn set(&mut self, position: usize, tag: usize, v: T) {
        self.data[position * self.tags + tag] = v;
    }

    fn column(&self, position: usize) -> &[T] {
        &self.data[position * self.tags..(position + 1) * self.tags]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Transition scores over the tag inventory plus `START` (index `tags`)
/// and `STOP` (index `tags + 1`).
///
/// Transitions into `START`, out of `STOP`, and any pair disabled by a
/// mask score `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    tags: usize,
    data: Vec<T>,
    allowed: Option<Vec<bool>>,
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn new(tags: usize, data: Vec<T>) -> Result<Self> {
        let n = tags + 2;
        if data.len() != n * n {
            return Err(Error::Shape {
                op: "TransitionMatrix::new",
                left: vec![n, n],
                right: vec![data.len()],
            });
        }
        Ok(TransitionMatrix {
            tags,
            data,
            allowed: None,
        })
    }

    pub fn zeros(tags: usize) -> Self {
        Self::new(tags, vec![T::zero(); (tags + 2) * (tags + 2)]).expect("square")
    }

    pub fn from_tensor(tags: usize, t: &Tensor<T>) -> Result<Self> {
        Self::new(tags, t.data().to_vec())
    }

    /// Disables every transition whose entry in `allowed` is false.
    pub fn with_mask(mut self, allowed: Option<Vec<bool>>) -> Self {
        self.allowed = allowed;
        self
    }

    pub fn tags(&self) -> usize {
        self.tags
    }

    pub fn start(&self) -> usize {
        self.tags
    }

    pub fn stop(&self) -> usize {
        self.tags + 1
    }

    fn flat(&self, from: usize, to: usize) -> usize {
        from * (self.tags + 2) + to
    }

    pub fn is_open(&self, from: usize, to: usize) -> bool {
        to != self.start() && from != self.stop() && self.allowed.as_ref().is_none_or(|a| a[self.flat(from, to)])
    }

    pub fn get(&self, from: usize, to: usize) -> T {
        if self.is_open(from, to) {
            self.data[self.flat(from, to)]
        } else {
            T::neg_infinity()
        }
    }

    pub fn set(&mut self, from: usize, to: usize, v: T) {
        let i = self.flat(from, to);
        self.data[i] = v;
    }

    pub fn raw(&self) -> &[T] {
        &self.data
    }
}

fn check_dims<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>) -> Result<()> {
    if s.tags() != tr.tags() {
        return Err(Error::Shape {
            op: "crf",
            left: vec![s.positions(), s.tags()],
            right: vec![tr.tags() + 2, tr.tags() + 2],
        });
    }
    Ok(())
}

/// Score of one tag path, boundary transitions included.
pub fn global_score<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>, path: &[usize]) -> Result<T> {
    check_dims(s, tr)?;
    if path.len() != s.positions() {
        return Err(Error::Invalid(format!(
            "path of length {} for {} positions",
            path.len(),
            s.positions()
        )));
    }
    if let Some(&bad) = path.iter().find(|&&y| y >= s.tags()) {
        return Err(Error::Invalid(format!("tag index {bad} out of range")));
    }
    let mut total = tr.get(tr.start(), path[0]);
    for (t, &y) in path.iter().enumerate() {
        total += s.get(t, y);
        let next = path.get(t + 1).copied().unwrap_or(tr.stop());
        total += tr.get(y, next);
    }
    Ok(total)
}

fn lse<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let v: Vec<T> = values.collect();
    crate::autodiff::logsumexp_slice(&v)
}

fn forward<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>) -> Vec<Vec<T>> {
    let k = s.tags();
    let mut alpha = Vec::with_capacity(s.positions());
    alpha.push((0..k).map(|j| tr.get(tr.start(), j) + s.get(0, j)).collect::<Vec<T>>());
    for t in 1..s.positions() {
        let prev = &alpha[t - 1];
        let row = (0..k)
            .map(|j| lse((0..k).map(|i| prev[i] + tr.get(i, j))) + s.get(t, j))
            .collect();
        alpha.push(row);
    }
    alpha
}

fn backward<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>) -> Vec<Vec<T>> {
    let k = s.tags();
    let m = s.positions();
    let mut beta = vec![Vec::new(); m];
    beta[m - 1] = (0..k).map(|i| tr.get(i, tr.stop())).collect();
    for t in (0..m - 1).rev() {
        let next = &beta[t + 1];
        beta[t] = (0..k)
            .map(|i| lse((0..k).map(|j| tr.get(i, j) + s.get(t + 1, j) + next[j])))
            .collect();
    }
    beta
}

/// `log Σ_y exp(score(y))` by the forward algorithm.
pub fn log_partition<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>) -> Result<T> {
    check_dims(s, tr)?;
    let alpha = forward(s, tr);
    let last = alpha.last().expect("at least one position");
    Ok(lse((0..s.tags()).map(|j| last[j] + tr.get(j, tr.stop()))))
}

/// Posterior marginals.
#[derive(Debug, Clone)]
pub struct Marginals<T> {
    /// `P(y_t = j)`, shaped like the score matrix.
    pub unary: Tensor<T>,
    /// Expected number of uses of each transition, `(T+2) × (T+2)`.
    pub transitions: Tensor<T>,
    pub log_z: T,
}

pub fn marginals<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>) -> Result<Marginals<T>> {
    check_dims(s, tr)?;
    let (m, k) = (s.positions(), s.tags());
    let alpha = forward(s, tr);
    let beta = backward(s, tr);
    let log_z = lse((0..k).map(|j| alpha[m - 1][j] + tr.get(j, tr.stop())));
    if !log_z.is_finite() {
        return Err(Error::NonFinite { op: "crf marginals" });
    }
    let prob = |x: T| {
        if x == T::neg_infinity() {
            T::zero()
        } else {
            (x - log_z).exp()
        }
    };
    let mut unary = Tensor::zeros(&[m, k]);
    for t in 0..m {
        for j in 0..k {
            unary.set(t, j, prob(alpha[t][j] + beta[t][j]));
        }
    }
    let n = k + 2;
    let mut pair = Tensor::zeros(&[n, n]);
    for j in 0..k {
        pair.set(tr.start(), j, unary.get(0, j));
        pair.set(j, tr.stop(), unary.get(m - 1, j));
    }
    for t in 0..m - 1 {
        for i in 0..k {
            for j in 0..k {
                let p = prob(alpha[t][i] + tr.get(i, j) + s.get(t + 1, j) + beta[t + 1][j]);
                let cur = pair.get(i, j);
                pair.set(i, j, cur + p);
            }
        }
    }
    Ok(Marginals {
        unary,
        transitions: pair,
        log_z,
    })
}

/// Highest-scoring path and its score. Ties go to the lowest tag index at
/// every backtracking step.
pub fn viterbi_decode<T: Scalar>(s: &ScoreMatrix<T>, tr: &TransitionMatrix<T>) -> Result<(Vec<usize>, T)> {
    check_dims(s, tr)?;
    let (m, k) = (s.positions(), s.tags());
    let mut delta: Vec<T> = (0..k).map(|j| tr.get(tr.start(), j) + s.get(0, j)).collect();
    let mut back = vec![vec![0usize; k]; m];
    for t in 1..m {
        let mut next = vec![T::zero(); k];
        for j in 0..k {
            let mut best = 0;
            let mut best_v = delta[0] + tr.get(0, j);
            for i in 1..k {
                let v = delta[i] + tr.get(i, j);
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            back[t][j] = best;
            next[j] = best_v + s.get(t, j);
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_v = delta[0] + tr.get(0, tr.stop());
    for j in 1..k {
        let v = delta[j] + tr.get(j, tr.stop());
        if v > best_v {
            last = j;
            best_v = v;
        }
    }
    let mut path = vec![last; m];
    for t in (1..m).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best_v))
}

/// Per-position argmax of the emission scores, ignoring transitions.
pub fn local_decode<T: Scalar>(s: &ScoreMatrix<T>) -> Vec<usize> {
    (0..s.positions())
        .map(|t| {
            let col = s.column(t);
            let mut best = 0;
            for (j, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

struct LogPartitionOp {
    tags: usize,
    allowed: Option<Vec<bool>>,
}

impl LogPartitionOp {
    fn matrices<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<(ScoreMatrix<T>, TransitionMatrix<T>)> {
        let s = ScoreMatrix::from_tensor(inputs[0])?;
        let tr = TransitionMatrix::from_tensor(self.tags, inputs[1])?.with_mask(self.allowed.clone());
        Ok((s, tr))
    }
}

impl<T: Scalar> CustomOp<T> for LogPartitionOp {
    fn name(&self) -> &'static str {
        "crf_log_partition"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (s, tr) = self.matrices(inputs)?;
        Ok(Tensor::scalar(log_partition(&s, &tr)?))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let (s, tr) = self.matrices(inputs).expect("validated in forward");
        let m = marginals(&s, &tr).expect("finite in forward");
        let gs = g.item();
        vec![m.unary.map(|p| p * gs), m.transitions.map(|p| p * gs)]
    }
}

/// `log Z` of emissions `[m × T]` and transitions `[(T+2) × (T+2)]` as a
/// graph node.
pub fn log_partition_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    emissions: NodeId,
    transitions: NodeId,
    allowed: Option<Vec<bool>>,
) -> Result<NodeId> {
    let tags = g.value(emissions).cols();
    g.custom(&[emissions, transitions], Box::new(LogPartitionOp { tags, allowed }))
}

/// `score(gold)` as a graph node.
pub fn path_score_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    emissions: NodeId,
    transitions: NodeId,
    gold: &[usize],
) -> Result<NodeId> {
    let (m, k) = (g.value(emissions).rows(), g.value(emissions).cols());
    if gold.len() != m {
        return Err(Error::Invalid(format!(
            "gold path of length {} for {m} positions",
            gold.len()
        )));
    }
    let (start, stop) = (k, k + 1);
    let emit: Vec<(usize, usize)> = gold.iter().copied().enumerate().collect();
    let mut trans = vec![(start, gold[0])];
    trans.extend(gold.windows(2).map(|w| (w[0], w[1])));
    trans.push((gold[m - 1], stop));
    let e = g.select_sum(emissions, &emit)?;
    let t = g.select_sum(transitions, &trans)?;
    g.add(e, t)
}

/// Negative log-likelihood `log Z − score(gold)`.
pub fn nll_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    emissions: NodeId,
    transitions: NodeId,
    gold: &[usize],
    allowed: Option<Vec<bool>>,
) -> Result<NodeId> {
    let log_z = log_partition_node(g, emissions, transitions, allowed)?;
    let score = path_score_node(g, emissions, transitions, gold)?;
    g.sub(log_z, score)
}

/// Mean per-position softmax cross-entropy of the emissions; the
/// training objective when decoding with local scores.
pub fn local_loss<T: Scalar>(g: &mut Graph<'_, T>, emissions: NodeId, gold: &[usize]) -> Result<NodeId> {
    let m = g.value(emissions).rows();
    if gold.len() != m {
        return Err(Error::Invalid(format!(
            "gold path of length {} for {m} positions",
            gold.len()
        )));
    }
    let mut norms = Vec::with_capacity(m);
    for t in 0..m {
        let row = g.row(emissions, t)?;
        norms.push(g.logsumexp(row)?);
    }
    let stacked = g.concat_rows(&norms)?;
    let total_norm = g.sum(stacked)?;
    let emit: Vec<(usize, usize)> = gold.iter().copied().enumerate().collect();
    let gold_sum = g.select_sum(emissions, &emit)?;
    let diff = g.sub(total_norm, gold_sum)?;
    g.scale(diff, T::one() / T::of(m as f64))
}

/// Emission projection and transition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub transitions: ParamId,
    pub n_tags: usize,
    pub input_dim: usize,
    /// Hard transition mask over `(T+2)²` entries; `None` leaves every
    /// transition learnable.
    pub allowed: Option<Vec<bool>>,
}

impl CrfLayer {
    /// Registers parameters: projection uniform in `±√(6/(in+T))`, bias and
    /// transitions zero.
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, input_dim: usize, n_tags: usize, rng: &mut R) -> Self {
        let b = (6.0 / (input_dim + n_tags) as f64).sqrt();
        let w = (0..input_dim * n_tags).map(|_| T::of(rng.gen_range(-b..=b))).collect();
        let weight = store.add(
            "crf.projection.weight",
            Tensor::from_vec(vec![input_dim, n_tags], w).expect("sized"),
        );
        let bias = store.add("crf.projection.bias", Tensor::zeros(&[1, n_tags]));
        let n = n_tags + 2;
        let transitions = store.add("crf.transitions", Tensor::zeros(&[n, n]));
        CrfLayer {
            weight,
            bias,
            transitions,
            n_tags,
            input_dim,
            allowed: None,
        }
    }

    /// Looks up parameters registered by [`CrfLayer::new`].
    pub fn bind<T: Scalar>(store: &ParamStore<T>) -> Result<Self> {
        let find = |n: &str| {
            store
                .find(n)
                .ok_or_else(|| Error::Corrupt(format!("missing parameter {n}")))
        };
        let weight = find("crf.projection.weight")?;
        let w = store.get(weight);
        Ok(CrfLayer {
            weight,
            bias: find("crf.projection.bias")?,
            transitions: find("crf.transitions")?,
            n_tags: w.cols(),
            input_dim: w.rows(),
            allowed: None,
        })
    }

    /// Emission scores `[m × T]` from contextual vectors `[m × input_dim]`.
    pub fn project<T: Scalar>(&self, g: &mut Graph<'_, T>, contextual: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(contextual, w)?;
        g.add_row(xw, b)
    }

    pub fn nll<T: Scalar>(&self, g: &mut Graph<'_, T>, emissions: NodeId, gold: &[usize]) -> Result<NodeId> {
        let tr = g.param(self.transitions);
        nll_loss(g, emissions, tr, gold, self.allowed.clone())
    }

    pub fn transition_matrix<T: Scalar>(&self, store: &ParamStore<T>) -> TransitionMatrix<T> {
        TransitionMatrix::from_tensor(self.n_tags, store.get(self.transitions))
            .expect("registered with the right shape")
            .with_mask(self.allowed.clone())
    }

    /// Viterbi path over emissions computed elsewhere.
    pub fn decode<T: Scalar>(&self, store: &ParamStore<T>, emissions: &Tensor<T>) -> Result<Vec<usize>> {
        let s = ScoreMatrix::from_tensor(emissions)?;
        Ok(viterbi_decode(&s, &self.transition_matrix(store))?.0)
    }
}
