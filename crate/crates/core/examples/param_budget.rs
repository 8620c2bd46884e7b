//! Parameter counts per component as branches are added, and the matching
//! single-branch width budget.
//!
//! cargo run --example param_budget

use mat::model::{param_breakdown, param_count, ModelConfig};

fn main() -> mat::Result<()> {
    let base = ModelConfig {
        heads: 8,
        d_model: 256,
        d_hidden: 2048,
        enc_layers: 6,
        dec_layers: 6,
        vocab_src: 32000,
        vocab_tgt: 32000,
        share_embeddings: true,
        ..ModelConfig::default()
    };
    for na in 1..=4 {
        let cfg = ModelConfig { branches: na, ..base.clone() };
        cfg.validate()?;
        println!("N_a={na}: {} total", param_count(&cfg));
        if na == 2 {
            for (name, n) in param_breakdown(&cfg).entries {
                println!("    {name:<18} {n:>10}");
            }
        }
    }
    Ok(())
}
