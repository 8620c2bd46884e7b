//! Task data files: one example per line, `src_ids<TAB>tgt_ids`, ids
//! space-separated decimal.

use std::fmt::Write as _;
use std::path::Path;

use super::Example;
use crate::error::{MatError, Result};

fn join(ids: &[usize]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{id}");
    }
    s
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in examples {
        let _ = writeln!(out, "{}\t{}", join(&e.src), join(&e.tgt));
    }
    std::fs::write(path, out).map_err(|e| MatError::io(path, e))
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MatError::io(path, e))?;
    let parse_err = |line: usize, message: String| MatError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected `src<TAB>tgt`".into()))?;
        let ids = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(i + 1, format!("bad token id `{t}`"))))
                .collect()
        };
        out.push(Example {
            src: ids(src)?,
            tgt: ids(tgt)?,
        });
    }
    Ok(out)
}
