//! Warm-starting a multi-branch model from a trained single-branch one.

use super::{Checkpoint, Model, ModelConfig, ModelParams};
use crate::error::{MatError, Result};
use crate::layers::BranchParams;
use crate::tensor::{Scalar, Tensor};

fn check<V: PartialEq + ToString>(field: &'static str, base: V, target: V) -> Result<()> {
    if base == target {
        Ok(())
    } else {
        Err(MatError::Init {
            field,
            base: base.to_string(),
            target: target.to_string(),
        })
    }
}

fn replicate<T: Scalar>(base: &[BranchParams<Tensor<T>>], n: usize) -> Vec<BranchParams<Tensor<T>>> {
    (0..n).map(|_| base[0].clone()).collect()
}

/// Builds a `target`-shaped model whose every attention layer holds
/// `target.branches` verbatim copies of the base branch. FFN, norms and
/// embeddings are copied once. Drop settings come from `target`.
pub fn proximal_init<T: Scalar>(base: &Checkpoint, target: &ModelConfig) -> Result<Model<T>> {
    let b = &base.config;
    if b.branches != 1 {
        return Err(MatError::config(format!(
            "base must have N_a=1 (found N_a={})",
            b.branches
        )));
    }
    target.validate()?;
    check("d", b.d_model, target.d_model)?;
    check("d_h", b.d_hidden, target.d_hidden)?;
    check("M", b.heads, target.heads)?;
    check("N_f", b.ffn_branches, target.ffn_branches)?;
    check("vocab_src", b.vocab_src, target.vocab_src)?;
    check("vocab_tgt", b.vocab_tgt, target.vocab_tgt)?;
    check("share_embeddings", b.shared_embeddings(), target.shared_embeddings())?;
    check("n_enc", b.enc_layers, target.enc_layers)?;
    check("n_dec", b.dec_layers, target.dec_layers)?;
    check("output_projection", b.output_projection, target.output_projection)?;
    check("pre_norm", b.pre_norm, target.pre_norm)?;
    check("max_len", b.max_len, target.max_len)?;

    let base_model: Model<T> = base.to_model()?;
    let p = base_model.params();
    let n = target.branches;
    let params = ModelParams {
        embed: p.embed.clone(),
        tgt_embed: p.tgt_embed.clone(),
        encoder: p
            .encoder
            .iter()
            .map(|blk| {
                let mut blk = blk.clone();
                blk.self_attn = replicate(&blk.self_attn, n);
                blk
            })
            .collect(),
        decoder: p
            .decoder
            .iter()
            .map(|blk| {
                let mut blk = blk.clone();
                blk.self_attn = replicate(&blk.self_attn, n);
                blk.cross_attn = replicate(&blk.cross_attn, n);
                blk
            })
            .collect(),
        enc_norm: p.enc_norm.clone(),
        dec_norm: p.dec_norm.clone(),
    };
    Model::from_params(target.clone(), params)
}

/// [`proximal_init`] with the target equal to the base except for `N_a`.
pub fn proximal_init_branches<T: Scalar>(base: &Checkpoint, branches: usize) -> Result<Model<T>> {
    let target = ModelConfig {
        branches,
        ..base.config.clone()
    };
    proximal_init(base, &target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ForwardOptions;

    fn base() -> Checkpoint {
        let cfg = ModelConfig {
            d_model: 8,
            d_hidden: 16,
            enc_layers: 1,
            dec_layers: 2,
            ..ModelConfig::default()
        };
        Checkpoint::from_model(&Model::<f32>::build(&cfg, 11).unwrap(), 500)
    }

    #[test]
    fn single_branch_target_is_identical() {
        let ck = base();
        let m: Model<f32> = proximal_init_branches(&ck, 1).unwrap();
        assert_eq!(Checkpoint::from_model(&m, 500), ck);
    }

    #[test]
    fn three_branches_match_base_logits() {
        let ck = base();
        let b: Model<f32> = ck.to_model().unwrap();
        let m: Model<f32> = proximal_init_branches(&ck, 3).unwrap();
        let opts = ForwardOptions::eval();
        let src = [4, 9, 6, 5, 7];
        let tgt = [1, 7, 5];
        let lb = b.forward(&src, &tgt, &opts).unwrap();
        let lm = m.forward(&src, &tgt, &opts).unwrap();
        let rel = lm.max_abs_diff(&lb) / lb.max_abs().max(1.0);
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn mismatches_name_the_field() {
        let ck = base();
        let target = ModelConfig {
            branches: 2,
            d_model: 16,
            ..ck.config.clone()
        };
        match proximal_init::<f32>(&ck, &target) {
            Err(MatError::Init { field, .. }) => assert_eq!(field, "d"),
            other => panic!("{other:?}"),
        }
        let two: Model<f32> = proximal_init_branches(&ck, 2).unwrap();
        let err = proximal_init_branches::<f32>(&Checkpoint::from_model(&two, 0), 3).unwrap_err();
        assert!(err.to_string().contains("base must have N_a=1"));
    }
}
