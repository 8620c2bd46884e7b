//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{TaskSpec, TASK_KEYS};
use crate::error::{MatError, Result};
use crate::model::{ModelConfig, MODEL_KEYS};
use crate::training::{TrainConfig, TRAIN_KEYS};

pub const PATH_KEYS: &[&str] = &["out", "base", "data"];

/// Everything a command needs: model, optimizer, task and paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: TaskSpec,
    pub out: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

/// Splits config text into `(line, key, value)` triples. Blank lines and `#`
/// comments are skipped.
pub fn parse_lines(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| MatError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? || self.train.set(key, value)? || self.task.set(key, value)? {
            return Ok(());
        }
        let path = Some(PathBuf::from(value));
        match key {
            "out" => self.out = path,
            "base" => self.base = path,
            "data" => self.data = path,
            _ => return Err(MatError::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given to `--set`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| MatError::config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Parses `text` on top of the defaults, then `overrides`, then the seed
    /// override (from `MAT_SEED`), and validates the result.
    pub fn from_text(text: &str, path: &Path, overrides: &[String], seed: Option<&str>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut unknown = Vec::new();
        for (line, k, v) in parse_lines(text, path)? {
            match cfg.set(&k, &v) {
                Err(MatError::Config(msgs)) if msgs.iter().any(|m| m.starts_with("unknown key")) => {
                    unknown.push(format!("{}:{line}: unknown key `{k}`", path.display()))
                }
                other => other?,
            }
        }
        if !unknown.is_empty() {
            return Err(MatError::Config(unknown));
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(s) = seed {
            cfg.set("seed", s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<&str>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| MatError::io(p, e))?;
                Self::from_text(&text, p, overrides, seed)
            }
            None => Self::from_text("", Path::new("<defaults>"), overrides, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        for r in [
            self.model.validate(),
            self.train.validate(),
            self.task.validate(Some(self.model.max_len)),
        ] {
            if let Err(MatError::Config(e)) = r {
                errors.extend(e);
            } else {
                r?;
            }
        }
        if self.task.vocab > self.model.vocab_src || self.task.vocab > self.model.vocab_tgt {
            errors.push(format!(
                "task_vocab = {} exceeds the model vocabulary ({} / {})",
                self.task.vocab, self.model.vocab_src, self.model.vocab_tgt
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(MatError::Config(errors))
        }
    }

    /// Every setting, one `key = value` per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pairs = self
            .model
            .to_pairs()
            .into_iter()
            .chain(self.train.to_pairs())
            .chain(self.task.to_pairs());
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (k, v) in [("out", &self.out), ("base", &self.base), ("data", &self.data)] {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        s
    }
}

/// All recognised keys.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    MODEL_KEYS
        .iter()
        .chain(TRAIN_KEYS)
        .chain(TASK_KEYS)
        .chain(PATH_KEYS)
        .copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# toy\nn_a = 2   # branches\nrho=0.1\n\nmax_steps = 10\n";
        let cfg = RunConfig::from_text(text, Path::new("x.cfg"), &["rho=0.2".into()], Some("9")).unwrap();
        assert_eq!(cfg.model.branches, 2);
        assert_eq!(cfg.model.drop_rate, 0.2);
        assert_eq!(cfg.train.max_steps, 10);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn unknown_key_is_reported() {
        let err = RunConfig::from_text("roh = 0.2\n", Path::new("x.cfg"), &[], None).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
        let err = RunConfig::from_text("", Path::new("x.cfg"), &["roh=0.2".into()], None).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn dump_reparses_to_the_same_config() {
        let cfg = RunConfig::from_text("n_a = 3\ntask = copy\nout = runs/a\n", Path::new("x"), &[], None).unwrap();
        let back = RunConfig::from_text(&cfg.to_text(), Path::new("y"), &[], None).unwrap();
        assert_eq!(back, cfg);
        let keys: Vec<_> = parse_lines(&cfg.to_text(), Path::new("y")).unwrap().into_iter().map(|t| t.1).collect();
        assert!(keys.iter().all(|k| known_keys().any(|n| n == k)));
    }
}
