use crate::layers::{BranchParams, FfnParams, NormParams};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock<P> {
    pub self_attn: Vec<BranchParams<P>>,
    pub attn_norm: NormParams<P>,
    pub ffn: Vec<FfnParams<P>>,
    pub ffn_norm: NormParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock<P> {
    pub self_attn: Vec<BranchParams<P>>,
    pub self_norm: NormParams<P>,
    pub cross_attn: Vec<BranchParams<P>>,
    pub cross_norm: NormParams<P>,
    pub ffn: Vec<FfnParams<P>>,
    pub ffn_norm: NormParams<P>,
}

/// Every trainable tensor of a model.
///
/// `embed` is the source embedding (and the target/output embedding when
/// shared). Output logits always use the target embedding transposed.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub embed: P,
    pub tgt_embed: Option<P>,
    pub encoder: Vec<EncoderBlock<P>>,
    pub decoder: Vec<DecoderBlock<P>>,
    /// Final norms, present only with pre-norm blocks.
    pub enc_norm: Option<NormParams<P>>,
    pub dec_norm: Option<NormParams<P>>,
}

fn map_branches<P, Q>(b: &[BranchParams<P>], f: &mut impl FnMut(&P) -> Q) -> Vec<BranchParams<Q>> {
    b.iter().map(|x| x.map(f)).collect()
}

fn map_ffns<P, Q>(b: &[FfnParams<P>], f: &mut impl FnMut(&P) -> Q) -> Vec<FfnParams<Q>> {
    b.iter().map(|x| x.map(f)).collect()
}

impl<P> ModelParams<P> {
    pub fn tgt_embedding(&self) -> &P {
        self.tgt_embed.as_ref().unwrap_or(&self.embed)
    }

    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            embed: f(&self.embed),
            tgt_embed: self.tgt_embed.as_ref().map(&mut *f),
            encoder: self
                .encoder
                .iter()
                .map(|b| EncoderBlock {
                    self_attn: map_branches(&b.self_attn, f),
                    attn_norm: b.attn_norm.map(f),
                    ffn: map_ffns(&b.ffn, f),
                    ffn_norm: b.ffn_norm.map(f),
                })
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|b| DecoderBlock {
                    self_attn: map_branches(&b.self_attn, f),
                    self_norm: b.self_norm.map(f),
                    cross_attn: map_branches(&b.cross_attn, f),
                    cross_norm: b.cross_norm.map(f),
                    ffn: map_ffns(&b.ffn, f),
                    ffn_norm: b.ffn_norm.map(f),
                })
                .collect(),
            enc_norm: self.enc_norm.as_ref().map(|n| n.map(f)),
            dec_norm: self.dec_norm.as_ref().map(|n| n.map(f)),
        }
    }

    /// Walks every parameter in canonical order with its dotted name.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        f("embed".into(), &self.embed);
        if let Some(t) = &self.tgt_embed {
            f("tgt_embed".into(), t);
        }
        for (l, b) in self.encoder.iter().enumerate() {
            let p = format!("enc.{l}");
            for (i, br) in b.self_attn.iter().enumerate() {
                br.visit(&format!("{p}.self_attn.branch.{i}"), f);
            }
            b.attn_norm.visit(&format!("{p}.attn_norm"), f);
            for (i, w) in b.ffn.iter().enumerate() {
                w.visit(&format!("{p}.ffn.{i}"), f);
            }
            b.ffn_norm.visit(&format!("{p}.ffn_norm"), f);
        }
        for (l, b) in self.decoder.iter().enumerate() {
            let p = format!("dec.{l}");
            for (i, br) in b.self_attn.iter().enumerate() {
                br.visit(&format!("{p}.self_attn.branch.{i}"), f);
            }
            b.self_norm.visit(&format!("{p}.self_norm"), f);
            for (i, br) in b.cross_attn.iter().enumerate() {
                br.visit(&format!("{p}.cross_attn.branch.{i}"), f);
            }
            b.cross_norm.visit(&format!("{p}.cross_norm"), f);
            for (i, w) in b.ffn.iter().enumerate() {
                w.visit(&format!("{p}.ffn.{i}"), f);
            }
            b.ffn_norm.visit(&format!("{p}.ffn_norm"), f);
        }
        if let Some(n) = &self.enc_norm {
            n.visit("enc_norm", f);
        }
        if let Some(n) = &self.dec_norm {
            n.visit("dec_norm", f);
        }
    }

    /// Mutable counterpart of [`ModelParams::visit`], same order and names.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        f("embed".into(), &mut self.embed);
        if let Some(t) = &mut self.tgt_embed {
            f("tgt_embed".into(), t);
        }
        for (l, b) in self.encoder.iter_mut().enumerate() {
            let p = format!("enc.{l}");
            for (i, br) in b.self_attn.iter_mut().enumerate() {
                br.visit_mut(&format!("{p}.self_attn.branch.{i}"), f);
            }
            b.attn_norm.visit_mut(&format!("{p}.attn_norm"), f);
            for (i, w) in b.ffn.iter_mut().enumerate() {
                w.visit_mut(&format!("{p}.ffn.{i}"), f);
            }
            b.ffn_norm.visit_mut(&format!("{p}.ffn_norm"), f);
        }
        for (l, b) in self.decoder.iter_mut().enumerate() {
            let p = format!("dec.{l}");
            for (i, br) in b.self_attn.iter_mut().enumerate() {
                br.visit_mut(&format!("{p}.self_attn.branch.{i}"), f);
            }
            b.self_norm.visit_mut(&format!("{p}.self_norm"), f);
            for (i, br) in b.cross_attn.iter_mut().enumerate() {
                br.visit_mut(&format!("{p}.cross_attn.branch.{i}"), f);
            }
            b.cross_norm.visit_mut(&format!("{p}.cross_norm"), f);
            for (i, w) in b.ffn.iter_mut().enumerate() {
                w.visit_mut(&format!("{p}.ffn.{i}"), f);
            }
            b.ffn_norm.visit_mut(&format!("{p}.ffn_norm"), f);
        }
        if let Some(n) = &mut self.enc_norm {
            n.visit_mut("enc_norm", f);
        }
        if let Some(n) = &mut self.dec_norm {
            n.visit_mut("dec_norm", f);
        }
    }

    /// Parameters in canonical order, without names.
    pub fn flat(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.visit(&mut |_, p| out.push(p));
        out
    }
}
