use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tagging::Scheme;

/// The four switchable components. `true` means the component is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AblationFlags {
    /// V1: dictionary bits.
    pub dictionary: bool,
    /// V2: pre-trained word embeddings instead of random ones.
    pub pretrained: bool,
    /// V3: CRF training and Viterbi decoding instead of per-token softmax.
    pub global_decoding: bool,
    /// V4: character-level representation.
    pub char_embeddings: bool,
}

impl AblationFlags {
    pub const ALL: AblationFlags = AblationFlags {
        dictionary: true,
        pretrained: true,
        global_decoding: true,
        char_embeddings: true,
    };

    pub fn as_array(&self) -> [bool; 4] {
        [
            self.dictionary,
            self.pretrained,
            self.global_decoding,
            self.char_embeddings,
        ]
    }

    pub fn from_array(v: [bool; 4]) -> Self {
        AblationFlags {
            dictionary: v[0],
            pretrained: v[1],
            global_decoding: v[2],
            char_embeddings: v[3],
        }
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::ALL
    }
}

/// Hyper-parameters and switches of one model. Hidden sizes count units
/// per LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub epochs: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub learning_decay: f64,
    pub char_lstm_units: usize,
    pub word_lstm_units: usize,
    pub char_dim: usize,
    pub word_dim: usize,
    pub scheme: Scheme,
    pub flags: AblationFlags,
    pub seed: u64,
    /// Global gradient-norm clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    /// Forbid scheme-illegal transitions outright.
    pub hard_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            epochs: 15,
            dropout: 0.5,
            batch_size: 20,
            learning_rate: 0.001,
            learning_decay: 0.9,
            char_lstm_units: 100,
            word_lstm_units: 300,
            char_dim: 100,
            word_dim: 200,
            scheme: Scheme::Iobes,
            flags: AblationFlags::ALL,
            seed: 1,
            clip_norm: 5.0,
            hard_mask: false,
        }
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "dropout",
    "batch_size",
    "optimizer",
    "learning_rate",
    "learning_decay",
    "char_lstm_units",
    "word_lstm_units",
    "char_dim",
    "word_dim",
    "scheme",
    "v1_dictionary",
    "v2_pretrained",
    "v3_global_decoding",
    "v4_char_embeddings",
    "seed",
    "clip_norm",
    "hard_mask",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}"))),
    }
}

impl ModelConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "optimizer" => {
                if !value.eq_ignore_ascii_case("adam") {
                    return Err(Error::Config(format!("unsupported optimizer {value:?}")));
                }
            }
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "learning_decay" => self.learning_decay = parse_value(key, value)?,
            "char_lstm_units" => self.char_lstm_units = parse_value(key, value)?,
            "word_lstm_units" => self.word_lstm_units = parse_value(key, value)?,
            "char_dim" => self.char_dim = parse_value(key, value)?,
            "word_dim" => self.word_dim = parse_value(key, value)?,
            "scheme" => self.scheme = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "v1_dictionary" => self.flags.dictionary = parse_bool(key, value)?,
            "v2_pretrained" => self.flags.pretrained = parse_bool(key, value)?,
            "v3_global_decoding" => self.flags.global_decoding = parse_bool(key, value)?,
            "v4_char_embeddings" => self.flags.char_embeddings = parse_bool(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "hard_mask" => self.hard_mask = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        c.apply_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("char_lstm_units", self.char_lstm_units),
            ("word_lstm_units", self.word_lstm_units),
            ("char_dim", self.char_dim),
            ("word_dim", self.word_dim),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.learning_decay > 0.0 && self.learning_decay <= 1.0) {
            return Err(Error::Config("learning_decay must be in (0, 1]".into()));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "epochs" => self.epochs.to_string(),
            "dropout" => self.dropout.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "optimizer" => "adam".into(),
            "learning_rate" => self.learning_rate.to_string(),
            "learning_decay" => self.learning_decay.to_string(),
            "char_lstm_units" => self.char_lstm_units.to_string(),
            "word_lstm_units" => self.word_lstm_units.to_string(),
            "char_dim" => self.char_dim.to_string(),
            "word_dim" => self.word_dim.to_string(),
            "scheme" => self.scheme.to_string(),
            "v1_dictionary" => self.flags.dictionary.to_string(),
            "v2_pretrained" => self.flags.pretrained.to_string(),
            "v3_global_decoding" => self.flags.global_decoding.to_string(),
            "v4_char_embeddings" => self.flags.char_embeddings.to_string(),
            "seed" => self.seed.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "hard_mask" => self.hard_mask.to_string(),
            _ => unreachable!("listed in KEYS"),
        }
    }
}

impl fmt::Display for ModelConfig {
    /// One `key=value` line per setting; parses back to an equal config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in KEYS {
            writeln!(f, "{k}={}", self.value_of(k))?;
        }
        Ok(())
    }
}
