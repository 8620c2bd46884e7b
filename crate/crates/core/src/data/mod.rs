//! Toy sequence tasks, batching, decoding and evaluation metrics.

mod bleu;
mod cache;

pub use bleu::{bleu4, modified_precision, BleuStats};
pub use cache::{read_examples, write_examples};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MatError, Result};
use crate::model::{ForwardOptions, Model};
use crate::tape::Tape;
use crate::tensor::{argmax, Scalar, Tensor};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
/// Smallest id a task may put in a sequence.
pub const FIRST_CONTENT_ID: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TaskKind {
    Copy,
    #[default]
    Reverse,
    SortDigits,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::SortDigits => "sort_digits",
        }
    }

    pub fn target(self, src: &[usize]) -> Vec<usize> {
        let mut t = src.to_vec();
        match self {
            TaskKind::Copy => {}
            TaskKind::Reverse => t.reverse(),
            TaskKind::SortDigits => t.sort_unstable(),
        }
        t
    }
}

impl FromStr for TaskKind {
    type Err = MatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "sort_digits" => Ok(TaskKind::SortDigits),
            _ => Err(MatError::config(format!(
                "unknown task `{s}` (expected copy, reverse or sort_digits)"
            ))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Reverse,
            vocab: 16,
            min_len: 4,
            max_len: 12,
            train: 20_000,
            valid: 500,
            test: 500,
            seed: 1,
        }
    }
}

pub const TASK_KEYS: &[&str] = &[
    "task",
    "task_vocab",
    "min_len",
    "max_seq_len",
    "train_size",
    "valid_size",
    "test_size",
    "data_seed",
];

impl TaskSpec {
    /// Checks the task settings on their own and, if given, against a model's
    /// `max_len` (sequences need two extra slots for `bos`/`eos`).
    pub fn validate(&self, model_max_len: Option<usize>) -> Result<()> {
        let mut errors = Vec::new();
        if self.vocab <= FIRST_CONTENT_ID {
            errors.push(format!(
                "task_vocab = {} leaves no content tokens (ids 0-3 are reserved)",
                self.vocab
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            errors.push(format!(
                "length range [{}, {}] is empty or starts at 0",
                self.min_len, self.max_len
            ));
        }
        if let Some(m) = model_max_len {
            if self.max_len + 2 > m {
                errors.push(format!(
                    "max_seq_len = {} exceeds model max_len - 2 = {}",
                    self.max_len,
                    m.saturating_sub(2)
                ));
            }
        }
        if errors.is_empty() {
            let total = self.train + self.valid + self.test;
            let possible = self.distinct_sequences();
            // Rejection sampling stays cheap while at most half the space is used.
            if (total as f64) > possible / 2.0 {
                errors.push(format!(
                    "{total} distinct samples requested but only {possible:.0} sequences exist"
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(MatError::Config(errors))
        }
    }

    fn distinct_sequences(&self) -> f64 {
        let k = (self.vocab - FIRST_CONTENT_ID) as f64;
        (self.min_len..=self.max_len).map(|l| k.powi(l as i32)).sum()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        use crate::model::parse_value;
        match key {
            "task" => self.kind = value.trim().parse()?,
            "task_vocab" => self.vocab = parse_value(key, value)?,
            "min_len" => self.min_len = parse_value(key, value)?,
            "max_seq_len" => self.max_len = parse_value(key, value)?,
            "train_size" => self.train = parse_value(key, value)?,
            "valid_size" => self.valid = parse_value(key, value)?,
            "test_size" => self.test = parse_value(key, value)?,
            "data_seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("task", self.kind.to_string()),
            ("task_vocab", self.vocab.to_string()),
            ("min_len", self.min_len.to_string()),
            ("max_seq_len", self.max_len.to_string()),
            ("train_size", self.train.to_string()),
            ("valid_size", self.valid.to_string()),
            ("test_size", self.test.to_string()),
            ("data_seed", self.seed.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

impl Example {
    /// Decoder input: `bos` followed by the target.
    pub fn tgt_in(&self) -> Vec<usize> {
        std::iter::once(BOS_ID).chain(self.tgt.iter().copied()).collect()
    }

    /// Decoder output: the target followed by `eos`.
    pub fn tgt_out(&self) -> Vec<usize> {
        self.tgt.iter().copied().chain(std::iter::once(EOS_ID)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Samples distinct source sequences (no sequence appears in two splits)
/// and derives targets from the task kind. Deterministic in `spec.seed`.
pub fn generate_task(spec: &TaskSpec) -> Result<Splits> {
    spec.validate(None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut draw = |n: usize| -> Vec<Example> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let src: Vec<usize> = (0..len)
                .map(|_| rng.random_range(FIRST_CONTENT_ID..spec.vocab))
                .collect();
            if seen.insert(src.clone()) {
                out.push(Example {
                    tgt: spec.kind.target(&src),
                    src,
                });
            }
        }
        out
    };
    Ok(Splits {
        train: draw(spec.train),
        valid: draw(spec.valid),
        test: draw(spec.test),
    })
}

/// A padded batch. Row `i` of each matrix belongs to example `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub tgt_in: Vec<Vec<usize>>,
    pub tgt_out: Vec<Vec<usize>>,
    pub src_len: Vec<usize>,
    pub tgt_len: Vec<usize>,
}

fn pad_to(mut v: Vec<usize>, len: usize) -> Vec<usize> {
    v.resize(len, PAD_ID);
    v
}

impl Batch {
    pub fn new(examples: &[&Example]) -> Self {
        let src_max = examples.iter().map(|e| e.src.len()).max().unwrap_or(0);
        let tgt_max = examples.iter().map(|e| e.tgt.len() + 1).max().unwrap_or(0);
        Self {
            src: examples.iter().map(|e| pad_to(e.src.clone(), src_max)).collect(),
            tgt_in: examples.iter().map(|e| pad_to(e.tgt_in(), tgt_max)).collect(),
            tgt_out: examples.iter().map(|e| pad_to(e.tgt_out(), tgt_max)).collect(),
            src_len: examples.iter().map(|e| e.src.len()).collect(),
            tgt_len: examples.iter().map(|e| e.tgt.len() + 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Unpadded `(src, tgt_in, tgt_out)` of example `i`.
    pub fn example(&self, i: usize) -> (&[usize], &[usize], &[usize]) {
        (
            &self.src[i][..self.src_len[i]],
            &self.tgt_in[i][..self.tgt_len[i]],
            &self.tgt_out[i][..self.tgt_len[i]],
        )
    }

    /// Non-pad target tokens.
    pub fn num_tokens(&self) -> usize {
        self.tgt_len.iter().sum()
    }

    /// Padded target positions as `None`, row-major over the batch.
    pub fn target_mask(&self) -> Vec<Option<usize>> {
        self.tgt_out
            .iter()
            .flatten()
            .map(|&t| (t != PAD_ID).then_some(t))
            .collect()
    }
}

/// Shuffles `examples` with a generator derived from `(seed, epoch)` and packs
/// them into batches of at most `batch_tokens` target tokens (a single longer
/// example still gets its own batch).
pub fn make_batches(examples: &[Example], batch_tokens: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    let mut cur: Vec<&Example> = Vec::new();
    let mut tokens = 0;
    for i in order {
        let e = &examples[i];
        let n = e.tgt.len() + 1;
        if !cur.is_empty() && tokens + n > batch_tokens {
            batches.push(Batch::new(&cur));
            cur.clear();
            tokens = 0;
        }
        cur.push(e);
        tokens += n;
    }
    if !cur.is_empty() {
        batches.push(Batch::new(&cur));
    }
    batches
}

/// Greedy decoding: argmax loop from `bos` until `eos` or `max_len` tokens.
pub fn greedy_decode<T: Scalar>(model: &Model<T>, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
    model.greedy_decode(src, max_len)
}

/// Fraction of non-pad positions whose argmax equals the target.
pub fn token_accuracy<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(MatError::Shape {
            op: "token_accuracy",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let (hits, total) = accuracy_counts(logits, targets);
    if total == 0 {
        return Err(MatError::contract("token_accuracy needs at least one non-pad position"));
    }
    Ok(hits as f64 / total as f64)
}

pub(crate) fn accuracy_counts<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            total += 1;
            if argmax(logits.row(r)) == *t {
                hits += 1;
            }
        }
    }
    (hits, total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub token_acc: f64,
    pub exact_acc: f64,
    pub loss: f64,
    pub samples: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "bleu,token_acc,exact_acc,loss,samples";

    pub fn to_kv(&self) -> String {
        format!(
            "bleu={}\ntoken_acc={}\nexact_acc={}\nloss={}\nsamples={}\n",
            self.bleu, self.token_acc, self.exact_acc, self.loss, self.samples
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.bleu, self.token_acc, self.exact_acc, self.loss, self.samples
        )
    }
}

/// Teacher-forced loss and token accuracy plus greedy-decoding BLEU and
/// exact-match rate. Always runs in inference mode.
pub fn evaluate<T: Scalar>(model: &Model<T>, examples: &[Example], label_smoothing: f64) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(MatError::contract("evaluation needs at least one example"));
    }
    let opts = ForwardOptions::eval();
    let (mut hits, mut total, mut exact) = (0usize, 0usize, 0usize);
    let mut loss_sum = 0.0;
    let mut candidates = Vec::with_capacity(examples.len());
    for ex in examples {
        let tgt_out = ex.tgt_out();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let logits = model.forward_on(&mut tape, &p, &ex.src, &ex.tgt_in(), &opts)?;
        let targets: Vec<Option<usize>> = tgt_out.iter().map(|&t| Some(t)).collect();
        let loss = tape.smoothed_nll(logits, &targets, label_smoothing)?;
        loss_sum += tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN) * targets.len() as f64;
        let (h, n) = accuracy_counts(tape.value(logits), &targets);
        hits += h;
        total += n;
        let out = model.greedy_decode(&ex.src, ex.tgt.len() + 1)?;
        if out == ex.tgt {
            exact += 1;
        }
        candidates.push(out);
    }
    let references: Vec<Vec<usize>> = examples.iter().map(|e| e.tgt.clone()).collect();
    Ok(EvalReport {
        bleu: bleu4(&candidates, &references)?,
        token_acc: hits as f64 / total as f64,
        exact_acc: exact as f64 / examples.len() as f64,
        loss: loss_sum / total as f64,
        samples: examples.len(),
    })
}
