//! The multi-branch encoder-decoder: parameters, forward pass, parameter
//! accounting, checkpoints and proximal initialization.

mod checkpoint;
mod config;
mod count;
mod params;
mod proximal;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, MODEL_KEYS};
pub(crate) use config::parse_value;
pub use count::{param_breakdown, param_count, ParamBreakdown};
pub use params::{DecoderBlock, EncoderBlock, ModelParams};
pub use proximal::{proximal_init, proximal_init_branches};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{MatError, Result};
use crate::layers::{
    draw_branch_masks, drop_head_delta, multi_branch_delta, multi_branch_ffn_delta,
    sinusoidal_positions, AttnMask, BranchParams, BranchSet, DropMode, FfnParams, HeadParams,
    NormParams,
};
use crate::rng::{Fixed, RngStream, UniformSource};
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, sc, Scalar, Tensor};
use crate::training::LayerDraws;

/// Where drop-branch uniforms come from during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskPlan {
    /// Position-addressed draws for `(seed, step, sublayer, branch, head)`.
    Scheduled { seed: u64, step: u64 },
    /// Every draw returns this value; `Fixed(0.0)` drops everything when
    /// `ρ > 0`.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub train: bool,
    pub masks: MaskPlan,
    /// Standard (elementwise) dropout on embeddings and sublayer outputs.
    pub dropout: f64,
    /// Index of the example within its batch; keys the dropout stream.
    pub example: u64,
}

impl ForwardOptions {
    /// Inference: no drop masks, no dropout.
    pub fn eval() -> Self {
        Self {
            train: false,
            masks: MaskPlan::Fixed(1.0),
            dropout: 0.0,
            example: 0,
        }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        Self {
            train: true,
            masks: MaskPlan::Scheduled { seed, step },
            dropout: 0.0,
            example: 0,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn with_example(mut self, example: u64) -> Self {
        self.example = example;
        self
    }

    fn source(&self, layer: usize) -> MaskSource {
        match self.masks {
            MaskPlan::Scheduled { seed, step } => MaskSource::Layer(LayerDraws { seed, step, layer }),
            MaskPlan::Fixed(u) => MaskSource::Fixed(Fixed(u)),
        }
    }
}

enum MaskSource {
    Layer(LayerDraws),
    Fixed(Fixed),
}

impl UniformSource for MaskSource {
    fn draw(&mut self, branch: usize, head: Option<usize>) -> f64 {
        match self {
            MaskSource::Layer(l) => l.draw(branch, head),
            MaskSource::Fixed(f) => f.draw(branch, head),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    cfg: ModelConfig,
    params: ModelParams<Tensor<T>>,
}

enum Init {
    Normal,
    Xavier,
    Ones,
    Zeros,
}

fn init_kind(name: &str) -> Init {
    if name == "embed" || name == "tgt_embed" {
        Init::Normal
    } else if name.ends_with(".gain") {
        Init::Ones
    } else if name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
        Init::Zeros
    } else {
        Init::Xavier
    }
}

/// Zero-filled parameters with the shapes `cfg` implies.
pub(crate) fn skeleton<T: Scalar>(cfg: &ModelConfig) -> ModelParams<Tensor<T>> {
    let d = cfg.d_model;
    let dk = d / cfg.heads;
    let attn = || -> Vec<BranchParams<Tensor<T>>> {
        (0..cfg.branches)
            .map(|_| BranchParams {
                heads: (0..cfg.heads)
                    .map(|_| HeadParams {
                        w_q: Tensor::zeros([d, dk]),
                        w_k: Tensor::zeros([d, dk]),
                        w_v: Tensor::zeros([d, dk]),
                    })
                    .collect(),
                w_o: cfg.output_projection.then(|| Tensor::zeros([d, d])),
            })
            .collect()
    };
    let ffn = || -> Vec<FfnParams<Tensor<T>>> {
        (0..cfg.ffn_branches)
            .map(|_| FfnParams {
                w1: Tensor::zeros([d, cfg.d_hidden]),
                b1: Tensor::zeros([cfg.d_hidden]),
                w2: Tensor::zeros([cfg.d_hidden, d]),
                b2: Tensor::zeros([d]),
            })
            .collect()
    };
    let norm = || NormParams {
        gain: Tensor::zeros([d]),
        bias: Tensor::zeros([d]),
    };
    ModelParams {
        embed: Tensor::zeros([cfg.vocab_src, d]),
        tgt_embed: (!cfg.shared_embeddings()).then(|| Tensor::zeros([cfg.vocab_tgt, d])),
        encoder: (0..cfg.enc_layers)
            .map(|_| EncoderBlock {
                self_attn: attn(),
                attn_norm: norm(),
                ffn: ffn(),
                ffn_norm: norm(),
            })
            .collect(),
        decoder: (0..cfg.dec_layers)
            .map(|_| DecoderBlock {
                self_attn: attn(),
                self_norm: norm(),
                cross_attn: attn(),
                cross_norm: norm(),
                ffn: ffn(),
                ffn_norm: norm(),
            })
            .collect(),
        enc_norm: cfg.pre_norm.then(norm),
        dec_norm: cfg.pre_norm.then(norm),
    }
}

/// Sublayer indices used to address drop masks.
fn enc_sublayer(block: usize, slot: usize) -> usize {
    2 * block + slot
}

fn dec_sublayer(cfg: &ModelConfig, block: usize, slot: usize) -> usize {
    2 * cfg.enc_layers + 3 * block + slot
}

fn dropout_seed(opts: &ForwardOptions) -> (u64, u64) {
    match opts.masks {
        MaskPlan::Scheduled { seed, step } => (seed ^ 0x5851_f42d_4c95_7f2d, step),
        MaskPlan::Fixed(_) => (0x5851_f42d_4c95_7f2d, 0),
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model. Projections are Xavier-uniform,
    /// biases zero, norm gains one and embeddings `N(0, d^-1/2)`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = skeleton::<T>(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (cfg.d_model as f64).powf(-0.5)).expect("positive std");
        params.visit_mut(&mut |name, t| {
            let shape = t.shape().to_vec();
            match init_kind(&name) {
                Init::Normal => t
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = sc(normal.sample(&mut rng))),
                Init::Xavier => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    t.data_mut()
                        .iter_mut()
                        .for_each(|x| *x = sc(rng.random_range(-limit..limit)));
                }
                Init::Ones => t.data_mut().iter_mut().for_each(|x| *x = T::one()),
                Init::Zeros => {}
            }
        });
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    /// Wraps existing parameters; shapes must match what `cfg` implies.
    pub fn from_params(cfg: ModelConfig, params: ModelParams<Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let expected = skeleton::<T>(&cfg);
        let mut want = Vec::new();
        expected.visit(&mut |n, t| want.push((n, t.shape().to_vec())));
        let mut have = Vec::new();
        params.visit(&mut |n, t| have.push((n, t.shape().to_vec())));
        if want != have {
            return Err(MatError::contract(
                "parameter tree does not match the configuration",
            ));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Changes settings that do not affect parameter shapes (drop rate and
    /// mode).
    pub fn set_drop(&mut self, rate: f64, mode: DropMode) -> Result<()> {
        let mut cfg = self.cfg.clone();
        cfg.drop_rate = rate;
        cfg.drop_mode = mode;
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn params(&self) -> &ModelParams<Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<Tensor<T>> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.flat().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.map(&mut |t| t.cast::<U>()),
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> ModelParams<Var> {
        self.params.map(&mut |t| tape.leaf(t.clone(), requires_grad))
    }

    fn check_tokens(&self, ids: &[usize], vocab: usize, what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(MatError::Input {
                position: 0,
                message: format!("empty {what} sequence"),
            });
        }
        if ids.len() > self.cfg.max_len {
            return Err(MatError::Input {
                position: self.cfg.max_len,
                message: format!(
                    "{what} length {} exceeds max_len {}",
                    ids.len(),
                    self.cfg.max_len
                ),
            });
        }
        if let Some(pos) = ids.iter().position(|&t| t >= vocab) {
            return Err(MatError::Input {
                position: pos,
                message: format!("{what} token {} outside vocabulary of {vocab}", ids[pos]),
            });
        }
        Ok(())
    }

    fn embed(
        &self,
        tape: &mut Tape<T>,
        table: Var,
        ids: &[usize],
        opts: &ForwardOptions,
        dropout_slot: usize,
    ) -> Result<Var> {
        let d = self.cfg.d_model;
        let x = tape.gather_rows(table, ids)?;
        let x = tape.scale(x, sc((d as f64).sqrt()))?;
        let pe = tape.constant(sinusoidal_positions(ids.len(), d)?);
        let x = tape.add(x, pe)?;
        self.dropout(tape, x, opts, dropout_slot)
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, opts: &ForwardOptions, slot: usize) -> Result<Var> {
        if !opts.train || opts.dropout <= 0.0 {
            return Ok(x);
        }
        let (seed, step) = dropout_seed(opts);
        let keep = 1.0 / (1.0 - opts.dropout);
        let mut stream = RngStream::new(
            seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ((slot as u64) << 40) | ((opts.example & 0xf_ffff) << 20),
        );
        let shape = tape.shape(x).to_vec();
        let mask = Tensor::from_fn(shape, |_| {
            if stream.next_uniform() >= opts.dropout {
                sc(keep)
            } else {
                T::zero()
            }
        });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }

    /// Residual sublayer: `out = x + delta`, normalized after (post-norm) or
    /// with the delta computed from a normalized input (pre-norm).
    #[allow(clippy::too_many_arguments)]
    fn attention_sublayer(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        memory: Option<Var>,
        branches: &[BranchParams<Var>],
        norm: &NormParams<Var>,
        mask: Option<&AttnMask>,
        layer: usize,
        opts: &ForwardOptions,
    ) -> Result<Var> {
        let q = if self.cfg.pre_norm {
            tape.layer_norm(x, norm.gain, norm.bias)?
        } else {
            x
        };
        let kv = memory.unwrap_or(q);
        let set = BranchSet::new(branches, self.cfg.drop_rate, self.cfg.drop_mode, opts.train)?;
        let masks = draw_branch_masks(&set, &mut opts.source(layer));
        let delta = match self.cfg.drop_mode {
            DropMode::Branch => multi_branch_delta(tape, q, kv, kv, &set, mask, &masks)?,
            DropMode::Head => drop_head_delta(tape, q, kv, kv, &set, mask, &masks)?,
        };
        let delta = self.dropout(tape, delta, opts, layer)?;
        if self.cfg.pre_norm {
            tape.add(x, delta)
        } else {
            let y = tape.add(x, delta)?;
            tape.layer_norm(y, norm.gain, norm.bias)
        }
    }

    fn ffn_sublayer(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        ffn: &[FfnParams<Var>],
        norm: &NormParams<Var>,
        layer: usize,
        opts: &ForwardOptions,
    ) -> Result<Var> {
        let h = if self.cfg.pre_norm {
            tape.layer_norm(x, norm.gain, norm.bias)?
        } else {
            x
        };
        let mut src = opts.source(layer);
        let delta = multi_branch_ffn_delta(tape, h, ffn, self.cfg.drop_rate, &mut src, opts.train)?;
        let delta = self.dropout(tape, delta, opts, layer)?;
        let y = tape.add(x, delta)?;
        if self.cfg.pre_norm {
            Ok(y)
        } else {
            tape.layer_norm(y, norm.gain, norm.bias)
        }
    }

    /// Encoder stack output (`len(src) × d`).
    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        p: &ModelParams<Var>,
        src: &[usize],
        opts: &ForwardOptions,
    ) -> Result<Var> {
        self.check_tokens(src, self.cfg.vocab_src, "source")?;
        let mut x = self.embed(tape, p.embed, src, opts, self.cfg.num_sublayers())?;
        for (b, block) in p.encoder.iter().enumerate() {
            x = self.attention_sublayer(
                tape,
                x,
                None,
                &block.self_attn,
                &block.attn_norm,
                None,
                enc_sublayer(b, 0),
                opts,
            )?;
            x = self.ffn_sublayer(tape, x, &block.ffn, &block.ffn_norm, enc_sublayer(b, 1), opts)?;
        }
        if let Some(n) = &p.enc_norm {
            x = tape.layer_norm(x, n.gain, n.bias)?;
        }
        Ok(x)
    }

    /// Next-token logits (`len(tgt_in) × vocab_tgt`) under teacher forcing.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        p: &ModelParams<Var>,
        memory: Var,
        tgt_in: &[usize],
        opts: &ForwardOptions,
    ) -> Result<Var> {
        self.check_tokens(tgt_in, self.cfg.vocab_tgt, "target")?;
        let table = *p.tgt_embedding();
        let mut y = self.embed(tape, table, tgt_in, opts, self.cfg.num_sublayers() + 1)?;
        let causal = AttnMask::causal(tgt_in.len());
        for (b, block) in p.decoder.iter().enumerate() {
            y = self.attention_sublayer(
                tape,
                y,
                None,
                &block.self_attn,
                &block.self_norm,
                Some(&causal),
                dec_sublayer(&self.cfg, b, 0),
                opts,
            )?;
            y = self.attention_sublayer(
                tape,
                y,
                Some(memory),
                &block.cross_attn,
                &block.cross_norm,
                None,
                dec_sublayer(&self.cfg, b, 1),
                opts,
            )?;
            y = self.ffn_sublayer(
                tape,
                y,
                &block.ffn,
                &block.ffn_norm,
                dec_sublayer(&self.cfg, b, 2),
                opts,
            )?;
        }
        if let Some(n) = &p.dec_norm {
            y = tape.layer_norm(y, n.gain, n.bias)?;
        }
        let out = tape.transpose(table)?;
        tape.matmul(y, out)
    }

    /// Encoder and decoder on an existing tape.
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        p: &ModelParams<Var>,
        src: &[usize],
        tgt_in: &[usize],
        opts: &ForwardOptions,
    ) -> Result<Var> {
        let memory = self.encode(tape, p, src, opts)?;
        self.decode(tape, p, memory, tgt_in, opts)
    }

    /// Logits for `tgt_in` given `src`, on a private tape.
    pub fn forward(&self, src: &[usize], tgt_in: &[usize], opts: &ForwardOptions) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let logits = self.forward_on(&mut tape, &p, src, tgt_in, opts)?;
        Ok(tape.value(logits).clone())
    }

    /// Greedy decoding from `bos` until `eos` or `max_len` generated tokens.
    ///
    /// Padding and `bos` are never emitted; ties go to the lowest id. The
    /// returned sequence excludes `bos` and the final `eos`.
    pub fn greedy_decode(&self, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let opts = ForwardOptions::eval();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let memory = self.encode(&mut tape, &p, src, &opts)?;
        let max_len = max_len.min(self.cfg.max_len);
        let mut prefix = vec![BOS_ID];
        let mut out = Vec::new();
        while out.len() < max_len {
            let mark = tape.len();
            let logits = self.decode(&mut tape, &p, memory, &prefix, &opts)?;
            let last = tape.value(logits).row(prefix.len() - 1).to_vec();
            tape.truncate(mark);
            let mut masked = last;
            masked[PAD_ID] = T::neg_infinity();
            masked[BOS_ID] = T::neg_infinity();
            let next = argmax(&masked);
            if next == EOS_ID {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }
}
