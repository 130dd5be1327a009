//! One line per acceptance criterion; exits non-zero if any fails.
//!
//! Criterion 7 needs the NCBI disease training split; point `DNER_NCBI_TRAIN`
//! at the PubTator file to enable it.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dner::corpus::{corpus_stats, parse_pubtator};
use dner::crf::{global_score, log_partition, viterbi_decode};
use dner::embeddings::{normalize_token, random_table, UNK_ROW};
use dner::evaluate::score_entities;
use dner::fixture::CrfFixture;
use dner::gradcheck;
use dner::pipeline::{evaluate_model, examples, sentences, train};
use dner::tagging::{convert, decode_tags, encode_spans, is_valid, repair_tags, Scheme, Span, Tag};
use dner::{ScoreMatrix, TransitionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = Result<Outcome, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))
}

fn worked_example() -> Check {
    let start = Instant::now();
    let text = std::fs::read_to_string(common::fixture("worked_example.txt")).map_err(|e| e.to_string())?;
    let fx = CrfFixture::parse(&text).map_err(|e| e.to_string())?;
    let score = |names: [&str; 4]| {
        let path: Vec<usize> = names
            .iter()
            .map(|n| fx.tags.iter().position(|t| t == n).unwrap())
            .collect();
        (global_score(&fx.scores, &fx.transitions, &path).unwrap(), path)
    };
    let (a, best) = score(["O", "B-Disease", "I-Disease", "O"]);
    let (b, _) = score(["O", "B-Disease", "B-Disease", "O"]);
    ensure(a == 36.0 && b == 34.0, || format!("scores {a} and {b}"))?;
    let (path, s) = viterbi_decode(&fx.scores, &fx.transitions).map_err(|e| e.to_string())?;
    ensure(path == best && s == 36.0, || format!("viterbi picked {path:?} ({s})"))?;
    within(start, Duration::from_secs(1))?;
    Ok(Outcome::Pass(format!(
        "36 / 34, viterbi selects the 36 path in {:.2?}",
        start.elapsed()
    )))
}

/// Every path with its score, by enumeration.
fn enumerate(s: &ScoreMatrix, tr: &TransitionMatrix) -> Vec<(Vec<usize>, f64)> {
    let (k, m) = (s.tags(), s.positions());
    (0..k.pow(m as u32))
        .map(|code| {
            let path: Vec<usize> = (0..m).map(|p| code / k.pow(p as u32) % k).collect();
            let mut v = tr.get(tr.start(), path[0]) + tr.get(path[m - 1], tr.stop());
            for (p, &y) in path.iter().enumerate() {
                v += s.get(p, y);
                if p > 0 {
                    v += tr.get(path[p - 1], y);
                }
            }
            (path, v)
        })
        .collect()
}

fn crf_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let k = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=5);
        let s = ScoreMatrix::new(m, k, (0..m * k).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let n = k + 2;
        let tr = TransitionMatrix::new(k, (0..n * n).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let all = enumerate(&s, &tr);
        let top = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let lz = top + all.iter().map(|p| (p.1 - top).exp()).sum::<f64>().ln();
        let best = &all.iter().find(|p| p.1 == top).unwrap().0;
        let err = (log_partition(&s, &tr).unwrap() - lz).abs();
        worst = worst.max(err);
        ensure(err < 1e-9, || format!("instance {i}: log Z off by {err:e}"))?;
        let (path, _) = viterbi_decode(&s, &tr).unwrap();
        ensure(&path == best, || {
            format!("instance {i}: viterbi {path:?}, enumeration {best:?}")
        })?;
    }
    within(start, Duration::from_secs(10))?;
    Ok(Outcome::Pass(format!("200 instances, max |log Z error| {worst:.1e}")))
}

fn gradients() -> Check {
    let start = Instant::now();
    let reports = gradcheck::run_all(7).map_err(|e| e.to_string())?;
    let model = reports.iter().find(|r| r.suite == "model").ok_or("no model suite")?;
    for prefix in [
        "embed.word",
        "embed.char",
        "char_lstm.fwd",
        "char_lstm.bwd",
        "word_lstm.fwd",
        "word_lstm.bwd",
        "crf.projection",
        "crf.transitions",
    ] {
        ensure(model.params.iter().any(|p| p.name.starts_with(prefix)), || {
            format!("{prefix} not checked")
        })?;
    }
    let crf = reports.iter().find(|r| r.suite == "crf").ok_or("no crf suite")?;
    ensure(crf.params.iter().any(|p| p.name == "emissions"), || {
        "emissions not checked".into()
    })?;
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(start, Duration::from_secs(30))?;
    let entries: usize = reports.iter().map(|r| r.entries()).sum();
    Ok(Outcome::Pass(format!(
        "{entries} entries, max relative error {worst:.1e}"
    )))
}

fn random_spans(rng: &mut ChaCha8Rng) -> (usize, Vec<Span>) {
    let n = rng.gen_range(1..25);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.3) {
            let end = (i + rng.gen_range(0..3)).min(n - 1);
            spans.push(Span::new(
                i,
                end,
                if rng.gen_bool(0.5) { "Disease" } else { "Chemical" },
            ));
            i = end + 1;
        } else {
            i += 1;
        }
    }
    (n, spans)
}

fn segment_representation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for scheme in [Scheme::Iob2, Scheme::Iobes] {
        let other = if scheme == Scheme::Iob2 {
            Scheme::Iobes
        } else {
            Scheme::Iob2
        };
        for case in 0..1000 {
            let (n, spans) = random_spans(&mut rng);
            let seq = encode_spans(n, &spans, scheme).map_err(|e| e.to_string())?;
            ensure(decode_tags(&seq) == spans, || {
                format!("{scheme} case {case}: round trip lost spans")
            })?;
            let conv = convert(&seq, other);
            ensure(decode_tags(&conv) == spans && is_valid(conv.tags(), other), || {
                format!("{scheme} case {case}: conversion changed spans")
            })?;
        }
    }
    let x = || "Disease".to_string();
    let mut sequences = 0;
    for scheme in [Scheme::Iob2, Scheme::Iobes] {
        let mut alphabet = vec![Tag::Outside, Tag::Begin(x()), Tag::Inside(x())];
        if scheme == Scheme::Iobes {
            alphabet.extend([Tag::End(x()), Tag::Single(x())]);
        }
        let k = alphabet.len();
        for n in 1..=4u32 {
            for code in 0..k.pow(n) {
                let seq: Vec<Tag> = (0..n).map(|p| alphabet[code / k.pow(p) % k].clone()).collect();
                let once = repair_tags(seq.clone(), scheme);
                let twice = repair_tags(once.tags().to_vec(), scheme);
                ensure(is_valid(once.tags(), scheme) && once == twice, || {
                    format!("{scheme}: repair of {seq:?}")
                })?;
                sequences += 1;
            }
        }
    }
    Ok(Outcome::Pass(format!(
        "2 x 1000 round trips, {sequences} sequences repaired"
    )))
}

fn overfit() -> Check {
    let start = Instant::now();
    let docs = common::toy_docs();
    let config = common::toy_config();
    ensure(
        config.flags == dner::pipeline::AblationFlags::ALL && config.epochs <= 200,
        || "toy config must keep every flag on".into(),
    )?;
    // random vectors over the training vocabulary
    let vocab = dner::embeddings::corpus_vocab(&sentences(&docs));
    let table = random_table(&vocab, config.word_dim, config.seed).map_err(|e| e.to_string())?;
    let out = train(&config, &docs, &[], Some(table), common::toy_lexicon()).map_err(|e| e.to_string())?;
    let model = &out.checkpoint.model;
    let (train_set, _) = examples(&docs, config.scheme);
    let f1 = evaluate_model(model, &train_set).map_err(|e| e.to_string())?.f1;
    ensure(f1 == 1.0, || format!("training F1 {f1} after {} epochs", config.epochs))?;
    within(start, Duration::from_secs(300))?;
    let first = out
        .history
        .iter()
        .find(|h| h.dev.f1 == 1.0)
        .map(|h| h.epoch + 1)
        .unwrap_or(0);
    Ok(Outcome::Pass(format!(
        "{} sentences, F1 1.0 first at epoch {first}, {} epochs in {:.1?}",
        train_set.len(),
        config.epochs,
        start.elapsed()
    )))
}

fn evaluator() -> Check {
    let d = |s, e| Span::new(s, e, "Disease");
    let gold = vec![vec![d(0, 1), d(4, 4)], vec![d(2, 3)]];
    let pred = vec![vec![d(0, 1), d(6, 7)], vec![d(2, 3), d(5, 5)]];
    let r = score_entities(&gold, &pred).map_err(|e| e.to_string())?;
    ensure(r.precision == 0.5 && r.recall == 2.0 / 3.0 && r.f1 == 4.0 / 7.0, || {
        format!("{r:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..200 {
        let n = rng.gen_range(2..15);
        let mut g = Vec::new();
        let mut p = Vec::new();
        for _ in 0..n {
            g.push(random_spans(&mut rng).1);
            p.push(random_spans(&mut rng).1);
        }
        let cut = rng.gen_range(1..n);
        let whole = score_entities(&g, &p).unwrap();
        let left = score_entities(&g[..cut], &p[..cut]).unwrap();
        let right = score_entities(&g[cut..], &p[cut..]).unwrap();
        ensure(left.merge(&right) == whole, || {
            format!("trial {trial}: split at {cut} disagrees")
        })?;
    }
    Ok(Outcome::Pass(
        "P 0.5, R 2/3, F1 4/7; 200 random splits micro-average".into(),
    ))
}

fn corpus_statistics() -> Check {
    let Some(path) = std::env::var_os("DNER_NCBI_TRAIN") else {
        return Ok(Outcome::Skip("DNER_NCBI_TRAIN not set".into()));
    };
    let file = File::open(&path).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let docs = parse_pubtator(BufReader::new(file))
        .map_err(|e| e.to_string())?
        .documents;
    let s = corpus_stats(&docs);
    ensure(s.n_abstracts == 593, || format!("{} abstracts", s.n_abstracts))?;
    ensure(s.n_mentions == 5145, || format!("{} mentions", s.n_mentions))?;
    ensure(s.n_unique_mentions == 1710, || {
        format!("{} unique mentions", s.n_unique_mentions)
    })?;
    let dev = (s.n_sentences as f64 - 5661.0).abs() / 5661.0;
    ensure(dev <= 0.02, || {
        format!("{} sentences ({:.1}% off)", s.n_sentences, dev * 100.0)
    })?;
    Ok(Outcome::Pass(format!("593 / 5145 / 1710, {} sentences", s.n_sentences)))
}

fn determinism() -> Check {
    let docs = common::toy_docs();
    let mut config = common::toy_config();
    config.epochs = 10;
    let run = || {
        train(
            &config,
            &docs,
            &[],
            Some(common::toy_vectors(&docs)),
            common::toy_lexicon(),
        )
        .map(|o| o.checkpoint.to_bytes())
        .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "checkpoints differ".into())?;
    Ok(Outcome::Pass(format!(
        "{} identical bytes after {} epochs",
        a.len(),
        config.epochs
    )))
}

const NORMALIZE: [(&str, &str); 50] = [
    ("Colon", "colon"),
    ("CARCINOMA", "carcinoma"),
    ("carcinoma", "carcinoma"),
    ("AS", "as"),
    ("as", "as"),
    ("BRCA1", "brca1"),
    ("IL-6", "il-6"),
    ("Type", "type"),
    ("NIDDM", "niddm"),
    ("McArdle", "mcardle"),
    ("DNA", "dna"),
    ("p53", "p53"),
    ("HbA1c", "hba1c"),
    ("X-linked", "x-linked"),
    ("Alzheimer", "alzheimer"),
    ("'s", "'s"),
    ("(", "("),
    (".", "."),
    (",", ","),
    ("-", "-"),
    ("%", "%"),
    ("--", "--"),
    ("Ärzte", "ärzte"),
    ("ΑΒΓ", "αβγ"),
    ("10-fold", "10-fold"),
    ("3rd", "3rd"),
    ("G6PD", "g6pd"),
    ("0", "NUM"),
    ("7", "NUM"),
    ("42", "NUM"),
    ("1995", "NUM"),
    ("3.5", "NUM"),
    ("0.001", "NUM"),
    ("1,000", "NUM"),
    ("12,345.6", "NUM"),
    ("-2", "NUM"),
    ("50%", "NUM"),
    ("2-3", "NUM"),
    ("1.2.3", "NUM"),
    ("100%", "NUM"),
    ("NUM", "NUM"),
    ("num", "num"),
    ("Num", "num"),
    ("UNK", "unk"),
    ("unk", "unk"),
    ("Unknown", "unknown"),
    ("mg/kg", "mg/kg"),
    ("5q31", "5q31"),
    ("CoA", "coa"),
    ("A", "a"),
];

fn normalization() -> Check {
    for (raw, want) in NORMALIZE {
        let got = normalize_token(raw);
        ensure(got == want, || format!("{raw:?} -> {got:?}, expected {want:?}"))?;
        ensure(normalize_token(&got) == got, || format!("{raw:?} not idempotent"))?;
    }
    let distinct: BTreeSet<&str> = NORMALIZE.iter().map(|c| c.0).collect();
    ensure(distinct.len() == NORMALIZE.len(), || "duplicate cases".into())?;
    // unseen words fall back to the UNK row
    let vocab: BTreeSet<String> = ["colon", "carcinoma"].map(String::from).into();
    let table = random_table::<f64>(&vocab, 4, 0).map_err(|e| e.to_string())?;
    ensure(table.index(&normalize_token("Colon")) != UNK_ROW, || {
        "known word mapped to UNK".into()
    })?;
    ensure(table.index(&normalize_token("Polyp")) == UNK_ROW, || {
        "unseen word not mapped to UNK".into()
    })?;
    Ok(Outcome::Pass(format!("{} cases", NORMALIZE.len())))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("worked CRF example", worked_example),
        ("CRF oracle equivalence", crf_oracle),
        ("gradient suite", gradients),
        ("segment representation properties", segment_representation),
        ("toy overfit", overfit),
        ("evaluator", evaluator),
        ("corpus statistics", corpus_statistics),
        ("determinism", determinism),
        ("token normalization", normalization),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(Outcome::Pass(detail)) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Ok(Outcome::Skip(why)) => println!("criterion {}: SKIP {name} ({why})", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL {name} ({why})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
