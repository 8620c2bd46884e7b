use super::ModelConfig;

/// Parameter totals per component, in display order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub entries: Vec<(&'static str, usize)>,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, n)| n).sum()
    }
}

fn attention(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let per_branch = 3 * d * d + if cfg.output_projection { d * d } else { 0 };
    cfg.branches * per_branch
}

fn ffn(cfg: &ModelConfig) -> usize {
    let (d, h) = (cfg.d_model, cfg.d_hidden);
    cfg.ffn_branches * (d * h + h + h * d + d)
}

pub fn param_breakdown(cfg: &ModelConfig) -> ParamBreakdown {
    let d = cfg.d_model;
    let norm = 2 * d;
    let embeddings = if cfg.shared_embeddings() {
        cfg.vocab_src * d
    } else {
        (cfg.vocab_src + cfg.vocab_tgt) * d
    };
    let (enc, dec) = (cfg.enc_layers, cfg.dec_layers);
    let final_norms = if cfg.pre_norm { 2 * norm } else { 0 };
    ParamBreakdown {
        entries: vec![
            ("embeddings", embeddings),
            ("encoder.self_attn", enc * attention(cfg)),
            ("encoder.ffn", enc * ffn(cfg)),
            ("encoder.norms", enc * 2 * norm),
            ("decoder.self_attn", dec * attention(cfg)),
            ("decoder.cross_attn", dec * attention(cfg)),
            ("decoder.ffn", dec * ffn(cfg)),
            ("decoder.norms", dec * 3 * norm),
            ("final_norms", final_norms),
        ],
    }
}

/// Exact number of trainable scalars a model built from `cfg` holds.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_breakdown(cfg).total()
}
