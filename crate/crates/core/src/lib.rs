//! Multi-branch attentive Transformer.
//!
//! Attention layers average `N_a` independent multi-head branches; training
//! regularizes them with drop-branch (randomly zeroing whole branches, or
//! single heads, with rate `ρ` and rescaling survivors by `1/(1-ρ)`), and a
//! trained single-branch model can warm-start a multi-branch one by
//! duplicating its attention weights (proximal initialization).
//!
//! Everything runs on a small reverse-mode autodiff engine ([`tape`]) that is
//! generic over `f32` (training) and `f64` (gradient checks).
//!
//! ```text
//! tensor, tape, rng, gradcheck   numeric core
//! layers                         attention / FFN families and drop masks
//! model                          encoder-decoder, checkpoints, proximal init
//! training                       Adam, inverse-sqrt schedule, loss, train loop
//! data                           toy tasks, batching, decoding, BLEU
//! cli                            config files and the `mat` commands
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, MatError, Result};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
