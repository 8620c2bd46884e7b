//! The `mat` commands as library functions. The binary only parses flags and
//! forwards here, so every artifact a command writes can be reproduced by
//! calling these functions directly.

mod config;

pub use config::{known_keys, parse_lines, RunConfig, PATH_KEYS};

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{evaluate, generate_task, read_examples, write_examples, BOS_ID, FIRST_CONTENT_ID};
use crate::error::MatError;
use crate::gradcheck::{check_all_ops, CheckDims, GradChecker};
use crate::model::{
    load_checkpoint, param_breakdown, proximal_init_branches, save_checkpoint, ForwardOptions, Model,
};
use crate::tape::OpKind;
use crate::training::{train_loop, MetricsRow, TrainObserver};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Gradient checks pass below this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Proximal initialization passes its self-test below this relative logit
/// difference.
pub const PROXIMAL_TOLERANCE: f64 = 1e-5;
pub const PROXIMAL_SELF_TEST_INPUTS: usize = 20;

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<MatError> for Failure {
    fn from(e: MatError) -> Self {
        let code = match e {
            MatError::Config(_) | MatError::Parse { .. } | MatError::Init { .. } | MatError::Input { .. } => {
                EXIT_USAGE
            }
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

pub type CmdResult = Result<u8, Failure>;

/// Holds `.lock` in a run directory for as long as it lives.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    Failure::usage(format!("{} is locked by another run ({})", dir.display(), path.display()))
                }
                _ => Failure::usage(format!("cannot write to {}: {e}", dir.display())),
            })?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes `metrics.csv` and periodic checkpoints into a run directory.
pub struct RunWriter {
    dir: PathBuf,
    metrics: File,
}

impl RunWriter {
    pub fn create(dir: &Path) -> crate::Result<Self> {
        let path = dir.join("metrics.csv");
        let mut metrics = File::create(&path).map_err(|e| MatError::io(&path, e))?;
        writeln!(metrics, "{}", MetricsRow::CSV_HEADER).map_err(|e| MatError::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
        })
    }
}

impl TrainObserver for RunWriter {
    fn on_log(&mut self, row: &MetricsRow) -> crate::Result<()> {
        writeln!(self.metrics, "{}", row.csv())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| MatError::io(self.dir.join("metrics.csv"), e))
    }

    fn on_checkpoint(&mut self, step: u64, model: &Model<f32>) -> crate::Result<()> {
        save_checkpoint(model, step, self.dir.join(format!("step-{step:06}.ckpt")))
    }
}

/// `train`: generates the task, trains, and writes `effective-config.txt`,
/// `metrics.csv`, `valid.tsv`, `test.tsv`, periodic `step-N.ckpt` and
/// `final.ckpt` into the run directory.
pub fn cmd_train(cfg: &RunConfig, log: &mut impl Write) -> CmdResult {
    let dir = cfg
        .out
        .as_deref()
        .ok_or_else(|| Failure::usage("train needs a run directory (--out DIR or `out = DIR`)"))?;
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
    let _lock = RunLock::acquire(dir)?;
    fs::write(dir.join("effective-config.txt"), cfg.to_text())?;

    let splits = generate_task(&cfg.task)?;
    write_examples(dir.join("valid.tsv"), &splits.valid)?;
    write_examples(dir.join("test.tsv"), &splits.test)?;
    let mut model = Model::<f32>::build(&cfg.model, cfg.train.seed)?;
    writeln!(
        log,
        "training {} ({} parameters) for {} steps on {} {} examples",
        cfg.model.tuple(),
        model.num_params(),
        cfg.train.max_steps,
        splits.train.len(),
        cfg.task.kind
    )?;
    let mut writer = RunWriter::create(dir)?;
    let rows = train_loop(&mut model, &splits.train, &cfg.train, &mut writer)?;
    save_checkpoint(&model, cfg.train.max_steps, dir.join("final.ckpt"))?;
    if let Some(last) = rows.last() {
        writeln!(log, "final step {}: loss {:.4}, token_acc {:.4}", last.step, last.loss, last.token_acc)?;
    }
    if !splits.valid.is_empty() {
        let report = evaluate(&model, &splits.valid, 0.0)?;
        writeln!(log, "valid token_acc {:.4}, exact_acc {:.4}", report.token_acc, report.exact_acc)?;
    }
    writeln!(log, "wrote {}", dir.join("final.ckpt").display())?;
    Ok(EXIT_OK)
}

/// `eval`: teacher-forced loss and accuracy plus greedy BLEU on a data file.
/// Drop-branch is always off.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out: &mut impl Write) -> CmdResult {
    for (what, p) in [("checkpoint", checkpoint), ("data file", data)] {
        if !p.is_file() {
            return Err(Failure::usage(format!("{what} {} not found", p.display())));
        }
    }
    let ck = load_checkpoint(checkpoint)?;
    let mut model: Model<f32> = ck.to_model()?;
    let mode = model.config().drop_mode;
    model.set_drop(0.0, mode)?;
    let examples = read_examples(data)?;
    let report = evaluate(&model, &examples, 0.0)?;
    write!(out, "{}", report.to_kv())?;
    Ok(EXIT_OK)
}

/// Random source/target pairs valid for `cfg`, for forward-equivalence checks.
pub fn random_inputs(cfg: &crate::model::ModelConfig, count: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo_src = if cfg.vocab_src > FIRST_CONTENT_ID { FIRST_CONTENT_ID } else { 0 };
    let lo_tgt = if cfg.vocab_tgt > FIRST_CONTENT_ID { FIRST_CONTENT_ID } else { 0 };
    let max = cfg.max_len.min(16);
    (0..count)
        .map(|_| {
            let ls = rng.random_range(1..=max);
            let lt = rng.random_range(1..=max);
            let src = (0..ls).map(|_| rng.random_range(lo_src..cfg.vocab_src)).collect();
            let mut tgt: Vec<usize> = (0..lt).map(|_| rng.random_range(lo_tgt..cfg.vocab_tgt)).collect();
            tgt[0] = BOS_ID.min(cfg.vocab_tgt - 1);
            (src, tgt)
        })
        .collect()
}

/// Largest `|a − b|∞ / max(1, |b|∞)` over `inputs`, with both models in
/// inference mode.
pub fn max_relative_logit_diff(a: &Model<f32>, b: &Model<f32>, inputs: &[(Vec<usize>, Vec<usize>)]) -> crate::Result<f64> {
    let opts = ForwardOptions::eval();
    let mut worst = 0.0f64;
    for (src, tgt) in inputs {
        let la = a.forward(src, tgt, &opts)?;
        let lb = b.forward(src, tgt, &opts)?;
        let rel = la.max_abs_diff(&lb) as f64 / (lb.max_abs() as f64).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// `proximal-init`: duplicates the attention branches of an `N_a = 1`
/// checkpoint, writes the result and prints a forward-equivalence self-test.
pub fn cmd_proximal_init(base: &Path, branches: usize, out_path: &Path, out: &mut impl Write) -> CmdResult {
    if !base.is_file() {
        return Err(Failure::usage(format!("base checkpoint {} not found", base.display())));
    }
    let ck = load_checkpoint(base)?;
    let model: Model<f32> = proximal_init_branches(&ck, branches)?;
    save_checkpoint(&model, ck.step, out_path)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", out_path.display())))?;
    let base_model: Model<f32> = ck.to_model()?;
    let inputs = random_inputs(&ck.config, PROXIMAL_SELF_TEST_INPUTS, 0);
    let diff = max_relative_logit_diff(&model, &base_model, &inputs)?;
    let pass = diff < PROXIMAL_TOLERANCE;
    writeln!(out, "wrote {} (N_a={branches})", out_path.display())?;
    writeln!(
        out,
        "self-test: max relative logit diff over {} inputs = {diff:e} ({})",
        inputs.len(),
        if pass { "PASS" } else { "FAIL" }
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_RUNTIME })
}

/// Grad-check problem sizes taken from a run config: `d`, `heads`, `n_a` and
/// `rho` (a zero `rho` is replaced by 0.25 so the drop paths are exercised).
pub fn check_dims(cfg: &RunConfig) -> CheckDims {
    CheckDims {
        d: cfg.model.d_model,
        heads: cfg.model.heads,
        branches: cfg.model.branches.max(2),
        drop_rate: if cfg.model.drop_rate > 0.0 { cfg.model.drop_rate } else { 0.25 },
        ..CheckDims::default()
    }
}

/// `grad-check`: five random points per layer op; exit 0 iff every op's
/// worst relative error is below [`GRAD_TOLERANCE`].
pub fn cmd_grad_check(dims: &CheckDims, seed: u64, fault: Option<OpKind>, out: &mut impl Write) -> CmdResult {
    let mut checker = GradChecker::new(1e-6);
    checker.fault = fault;
    let rows = check_all_ops(dims, 5, seed, &checker)?;
    writeln!(out, "{:<18} {:>14} {:>8}  status", "op", "max_rel_error", "coords")?;
    let mut ok = true;
    for r in &rows {
        let pass = r.passed(GRAD_TOLERANCE);
        ok &= pass;
        writeln!(
            out,
            "{:<18} {:>14.3e} {:>8}  {}",
            r.op.name(),
            r.max_rel_error,
            r.coordinates,
            if pass { "ok" } else { "FAIL" }
        )?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
}

/// `params`: per-component parameter counts and their total.
pub fn cmd_params(cfg: &RunConfig, out: &mut impl Write) -> CmdResult {
    let b = param_breakdown(&cfg.model);
    writeln!(out, "config {} M={} blocks {}+{}", cfg.model.tuple(), cfg.model.heads, cfg.model.enc_layers, cfg.model.dec_layers)?;
    for (name, n) in &b.entries {
        writeln!(out, "{name:<20} {n:>12}")?;
    }
    writeln!(out, "{:<20} {:>12}", "total", b.total())?;
    Ok(EXIT_OK)
}
