//! Binary checkpoint container.
//!
//! ```text
//! magic "DNERCKPT" | version u32 | payload length u64 | payload | SHA-256(payload)
//! ```
//!
//! Integers are little-endian; floats are stored as their IEEE-754 bits,
//! so a round trip is bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, Tensor};
use crate::embeddings::CharVocab;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

use super::config::ModelConfig;
use super::model::{Model, WordVocab};

pub const MAGIC: &[u8; 8] = b"DNERCKPT";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

/// A trained model with the epoch it was taken from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub dev_f1: f64,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn strs<'a>(&mut self, items: impl ExactSizeIterator<Item = &'a String>) {
        self.u64(items.len() as u64);
        for s in items {
            self.str(s);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("payload ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("implausible length {v}")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }

    fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.len()?;
        (0..n).map(|_| self.str()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = Writer::default();
        w.str(&m.config.to_string());
        w.strs(m.words.words().iter());
        w.u64(m.chars.chars().len() as u64);
        for &c in m.chars.chars() {
            w.u64(c as u64);
        }
        w.strs(m.lexicon.entries().iter());
        w.u64(m.lexicon.synonym_index().len() as u64);
        for (k, v) in m.lexicon.synonym_index() {
            w.str(k);
            w.str(v);
        }
        w.strs(m.lexicon.abbreviations().iter());
        w.u64(m.store.len() as u64);
        for (_, name, t) in m.store.iter() {
            w.str(name);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            for &v in t.data() {
                w.f64(v);
            }
        }
        w.u64(self.epoch as u64);
        w.f64(self.dev_f1);

        let payload = w.0;
        let mut out = Vec::with_capacity(HEADER + payload.len() + DIGEST);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < HEADER {
            return Err(Error::Corrupt("checksum error: header truncated".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let declared = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let body = &bytes[HEADER..];
        if (body.len() as u64) != declared.saturating_add(DIGEST as u64) {
            return Err(Error::Corrupt(format!(
                "checksum error: expected {} payload and digest bytes, found {}",
                declared.saturating_add(DIGEST as u64),
                body.len()
            )));
        }
        let (payload, digest) = body.split_at(body.len() - DIGEST);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::Corrupt("checksum error: payload digest mismatch".into()));
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let config = ModelConfig::parse(&r.str()?)?;
        let words = WordVocab::new(r.strs()?);
        let n_chars = r.len()?;
        let chars = (0..n_chars)
            .map(|_| {
                let v = r.u64()?;
                u32::try_from(v)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| Error::Corrupt(format!("invalid character code {v}")))
            })
            .collect::<Result<Vec<char>>>()?;
        let entries: BTreeSet<String> = r.strs()?.into_iter().collect();
        let n_syn = r.len()?;
        let synonyms = (0..n_syn)
            .map(|_| Ok((r.str()?, r.str()?)))
            .collect::<Result<BTreeMap<String, String>>>()?;
        let abbreviations: BTreeSet<String> = r.strs()?.into_iter().collect();
        let n_params = r.len()?;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name = r.str()?;
            let rows = r.len()?;
            let cols = r.len()?;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= payload.len() / 8)
                .ok_or_else(|| Error::Corrupt(format!("implausible shape for {name}")))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            store.add(name, Tensor::from_vec(vec![rows, cols], data)?);
        }
        let epoch = r.len()?;
        let dev_f1 = r.f64()?;
        if r.pos != payload.len() {
            return Err(Error::Corrupt("trailing bytes after payload".into()));
        }
        let lexicon = Lexicon::from_parts(entries, synonyms, abbreviations);
        let model = Model::from_parts(config, words, CharVocab::from_chars(chars), lexicon, store)?;
        Ok(Checkpoint { model, epoch, dev_f1 })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
