//! Plain-text CRF fixtures: a tag inventory, emission and transition
//! scores, and candidate paths to score.
//!
//! ```text
//! tags O B-Disease I-Disease
//! tokens In colon carcinoma cells
//! emission O 3 0 0 8              # one row per tag, one column per token
//! transition START 4 0 0 0        # columns: each tag, then STOP
//! transition O 0 2 0 1            # one row per tag
//! path O B-Disease I-Disease O
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::fmt;

use crate::crf::{global_score, local_decode, viterbi_decode, ScoreMatrix, TransitionMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfFixture {
    pub tags: Vec<String>,
    pub tokens: Vec<String>,
    pub scores: ScoreMatrix<f64>,
    pub transitions: TransitionMatrix<f64>,
    pub paths: Vec<Vec<usize>>,
}

/// Scores of the listed paths and the two decoders' choices.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureReport {
    pub path_scores: Vec<f64>,
    pub viterbi: Vec<usize>,
    pub viterbi_score: f64,
    pub local: Vec<usize>,
    tags: Vec<String>,
}

impl FixtureReport {
    pub fn tag_names(&self, path: &[usize]) -> Vec<&str> {
        path.iter().map(|&i| self.tags[i].as_str()).collect()
    }
}

fn number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for FixtureReport {
    /// `36 34 selected=(O,B-Disease,I-Disease,O)`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.path_scores {
            write!(f, "{} ", number(*s))?;
        }
        write!(f, "selected=({})", self.tag_names(&self.viterbi).join(","))
    }
}

fn numbers(fields: &[&str], lineno: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("bad score {f:?}")))
        })
        .collect()
}

impl CrfFixture {
    pub fn parse(input: &str) -> Result<Self> {
        let mut tags: Option<Vec<String>> = None;
        let mut tokens: Option<Vec<String>> = None;
        let mut emissions: Vec<(String, Vec<f64>, usize)> = Vec::new();
        let mut transitions: Vec<(String, Vec<f64>, usize)> = Vec::new();
        let mut paths: Vec<(Vec<String>, usize)> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let rest: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
            match fields[0] {
                "tags" => tags = Some(rest),
                "tokens" => tokens = Some(rest),
                "emission" | "transition" if fields.len() < 3 => {
                    return Err(Error::parse(lineno, "score row needs a label and values"));
                }
                "emission" => emissions.push((fields[1].to_string(), numbers(&fields[2..], lineno)?, lineno)),
                "transition" => transitions.push((fields[1].to_string(), numbers(&fields[2..], lineno)?, lineno)),
                "path" => paths.push((rest, lineno)),
                other => return Err(Error::parse(lineno, format!("unknown directive {other:?}"))),
            }
        }
        let tags = tags.ok_or_else(|| Error::Invalid("fixture has no tags line".into()))?;
        let tokens = tokens.ok_or_else(|| Error::Invalid("fixture has no tokens line".into()))?;
        let (k, m) = (tags.len(), tokens.len());
        let tag_index = |name: &str, lineno: usize| {
            tags.iter()
                .position(|t| t == name)
                .ok_or_else(|| Error::parse(lineno, format!("unknown tag {name:?}")))
        };

        let mut scores = ScoreMatrix::zeros(m, k);
        let mut seen = vec![false; k];
        for (name, row, lineno) in &emissions {
            let j = tag_index(name, *lineno)?;
            if row.len() != m {
                return Err(Error::parse(
                    *lineno,
                    format!("expected {m} emission scores, got {}", row.len()),
                ));
            }
            seen[j] = true;
            for (t, &v) in row.iter().enumerate() {
                scores.set(t, j, v);
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("no emission row for tag {}", tags[j])));
        }

        let mut tr = TransitionMatrix::zeros(k);
        for (name, row, lineno) in &transitions {
            let from = if name == "START" {
                tr.start()
            } else {
                tag_index(name, *lineno)?
            };
            if row.len() != k + 1 {
                return Err(Error::parse(
                    *lineno,
                    format!("expected {} transition scores, got {}", k + 1, row.len()),
                ));
            }
            for (c, &v) in row.iter().enumerate() {
                let to = if c == k { tr.stop() } else { c };
                tr.set(from, to, v);
            }
        }

        let paths = paths
            .iter()
            .map(|(names, lineno)| {
                if names.len() != m {
                    return Err(Error::parse(
                        *lineno,
                        format!("path of length {} for {m} tokens", names.len()),
                    ));
                }
                names.iter().map(|n| tag_index(n, *lineno)).collect()
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(CrfFixture {
            tags,
            tokens,
            scores,
            transitions: tr,
            paths,
        })
    }

    pub fn run(&self) -> Result<FixtureReport> {
        let path_scores = self
            .paths
            .iter()
            .map(|p| global_score(&self.scores, &self.transitions, p))
            .collect::<Result<Vec<_>>>()?;
        let (viterbi, viterbi_score) = viterbi_decode(&self.scores, &self.transitions)?;
        Ok(FixtureReport {
            path_scores,
            viterbi,
            viterbi_score,
            local: local_decode(&self.scores),
            tags: self.tags.clone(),
        })
    }
}
