use std::fmt::Write as _;

use crate::error::{MatError, Result};
use crate::layers::DropMode;

/// Architecture of a multi-branch encoder-decoder.
///
/// The usual shorthand is `N_a/d/d_h`: branches per attention layer, model
/// width and FFN hidden width.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `N_a`, attention branches per layer.
    pub branches: usize,
    /// `M`, heads per branch.
    pub heads: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    /// `N_f`, FFN branches per layer.
    pub ffn_branches: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// `ρ`, drop-branch rate used while training.
    pub drop_rate: f64,
    pub drop_mode: DropMode,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub share_embeddings: bool,
    pub output_projection: bool,
    pub pre_norm: bool,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            branches: 1,
            heads: 2,
            d_model: 32,
            d_hidden: 64,
            ffn_branches: 1,
            enc_layers: 2,
            dec_layers: 2,
            drop_rate: 0.0,
            drop_mode: DropMode::Branch,
            vocab_src: 16,
            vocab_tgt: 16,
            share_embeddings: true,
            output_projection: false,
            pre_norm: false,
            max_len: 64,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "n_a",
    "heads",
    "d",
    "d_h",
    "n_f",
    "n_enc",
    "n_dec",
    "rho",
    "drop_mode",
    "vocab_src",
    "vocab_tgt",
    "share_embeddings",
    "output_projection",
    "pre_norm",
    "max_len",
];

pub(crate) fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| MatError::config(format!("bad value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let counts = [
            ("n_a", self.branches),
            ("heads", self.heads),
            ("d", self.d_model),
            ("d_h", self.d_hidden),
            ("n_f", self.ffn_branches),
            ("n_enc", self.enc_layers),
            ("n_dec", self.dec_layers),
            ("vocab_src", self.vocab_src),
            ("vocab_tgt", self.vocab_tgt),
            ("max_len", self.max_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                errors.push(format!("{name} must be at least 1"));
            }
        }
        if self.heads > 0 && !self.d_model.is_multiple_of(self.heads) {
            errors.push(format!(
                "d = {} is not divisible by heads = {} ({} % {} != 0)",
                self.d_model,
                self.heads,
                self.d_model,
                self.heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            errors.push(format!("d = {} must be even for positional encoding", self.d_model));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            errors.push(format!("rho = {} must lie in [0, 1)", self.drop_rate));
        }
        if self.share_embeddings && self.vocab_src != self.vocab_tgt {
            errors.push(format!(
                "share_embeddings needs vocab_src == vocab_tgt ({} vs {})",
                self.vocab_src, self.vocab_tgt
            ));
        }
        if self.branches > 127 || self.heads > 126 || self.ffn_branches > 127 {
            errors.push("at most 127 branches and 126 heads per layer".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(MatError::Config(errors))
        }
    }

    /// Number of stochastic sublayers (attention and FFN) in the model.
    pub fn num_sublayers(&self) -> usize {
        2 * self.enc_layers + 3 * self.dec_layers
    }

    /// Attention layers: encoder self, decoder self and decoder cross.
    pub fn num_attention_layers(&self) -> usize {
        self.enc_layers + 2 * self.dec_layers
    }

    pub fn shared_embeddings(&self) -> bool {
        self.share_embeddings && self.vocab_src == self.vocab_tgt
    }

    /// Sets one field from its `key = value` spelling. Returns `Ok(false)` if
    /// the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_a" => self.branches = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "d" => self.d_model = parse_value(key, value)?,
            "d_h" => self.d_hidden = parse_value(key, value)?,
            "n_f" => self.ffn_branches = parse_value(key, value)?,
            "n_enc" => self.enc_layers = parse_value(key, value)?,
            "n_dec" => self.dec_layers = parse_value(key, value)?,
            "rho" => self.drop_rate = parse_value(key, value)?,
            "drop_mode" => self.drop_mode = value.trim().parse()?,
            "vocab_src" => self.vocab_src = parse_value(key, value)?,
            "vocab_tgt" => self.vocab_tgt = parse_value(key, value)?,
            "share_embeddings" => self.share_embeddings = parse_value(key, value)?,
            "output_projection" => self.output_projection = parse_value(key, value)?,
            "pre_norm" => self.pre_norm = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_a", self.branches.to_string()),
            ("heads", self.heads.to_string()),
            ("d", self.d_model.to_string()),
            ("d_h", self.d_hidden.to_string()),
            ("n_f", self.ffn_branches.to_string()),
            ("n_enc", self.enc_layers.to_string()),
            ("n_dec", self.dec_layers.to_string()),
            ("rho", self.drop_rate.to_string()),
            ("drop_mode", self.drop_mode.as_str().to_string()),
            ("vocab_src", self.vocab_src.to_string()),
            ("vocab_tgt", self.vocab_tgt.to_string()),
            ("share_embeddings", self.share_embeddings.to_string()),
            ("output_projection", self.output_projection.to_string()),
            ("pre_norm", self.pre_norm.to_string()),
            ("max_len", self.max_len.to_string()),
        ]
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Shorthand such as `2/256/2048`.
    pub fn tuple(&self) -> String {
        format!("{}/{}/{}", self.branches, self.d_model, self.d_hidden)
    }
}
