use rand::RngCore;

use super::config::{ModelConfig, Structure};
use super::family::{Family, Network, Slot, SlotMut};
use super::layers::{visit_linear, visit_linear_mut, Attention, Dense, DepthwiseConv, FeedForward, LayerNorm, Visit, VisitMut};
use super::ModuleSelector;
use crate::error::Result;
use crate::numcore::{param_path, record_linear, Activation, LinearLayer, Matrix, Tape, Var};

/// Pointwise input projection, then Macaron blocks
/// (`½ FFN_M -> MHSA -> depthwise conv -> ½ FFN -> LN`), mean pooling and a
/// linear classifier.
pub struct ConformerFamily;

impl Family for ConformerFamily {
    fn name(&self) -> &'static str {
        "Conformer"
    }

    fn selectors(&self) -> &'static [ModuleSelector] {
        use ModuleSelector::*;
        &[QKV, Project, FFN1, FFN2, FfnM1, FfnM2, CLS]
    }

    fn original(&self) -> Structure {
        Structure::new(4, 80, 320)
    }

    fn lightweight(&self) -> Structure {
        Structure::new(1, 16, 2)
    }

    fn default_activation(&self) -> Activation {
        Activation::Swish
    }

    fn build(&self, config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Box<dyn Network>> {
        config.validate()?;
        let d = config.d_model;
        let input = LinearLayer::init_uniform(config.input_dim, d, rng);
        let blocks = (0..config.n_layer)
            .map(|_| ConformerBlock::init(config, rng))
            .collect();
        let cls = Dense::init(d, config.n_classes, rng);
        Ok(Box::new(ConformerNet { input, blocks, cls }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerBlock {
    pub ln_ffn_m: LayerNorm,
    pub ffn_m: FeedForward,
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_conv: LayerNorm,
    pub conv: DepthwiseConv,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub ln_out: LayerNorm,
}

impl ConformerBlock {
    fn init(config: &ModelConfig, rng: &mut dyn RngCore) -> Self {
        let d = config.d_model;
        Self {
            ln_ffn_m: LayerNorm::new(d),
            ffn_m: FeedForward::init(d, config.d_ffn, config.activation, rng),
            ln_attn: LayerNorm::new(d),
            attn: Attention::init(d, config.n_heads, None, rng),
            ln_conv: LayerNorm::new(d),
            conv: DepthwiseConv::init(d, config.conv_kernel, rng),
            ln_ffn: LayerNorm::new(d),
            ffn: FeedForward::init(d, config.d_ffn, config.activation, rng),
            ln_out: LayerNorm::new(d),
        }
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let p = |leaf: &str| param_path(prefix, leaf);

        let h = self.ln_ffn_m.record(tape, &p("ln_ffn_m"), x)?;
        let h = self.ffn_m.record(tape, &p("ffn_m"), h)?;
        let h = tape.scale(h, 0.5);
        let x = tape.add(x, h)?;

        let h = self.ln_attn.record(tape, &p("ln_attn"), x)?;
        let h = self.attn.record(tape, &p("attn"), h)?;
        let x = tape.add(x, h)?;

        let h = self.ln_conv.record(tape, &p("ln_conv"), x)?;
        let h = self.conv.record(tape, &p("conv"), h)?;
        let h = tape.activate(h, Activation::Swish);
        let x = tape.add(x, h)?;

        let h = self.ln_ffn.record(tape, &p("ln_ffn"), x)?;
        let h = self.ffn.record(tape, &p("ffn"), h)?;
        let h = tape.scale(h, 0.5);
        let x = tape.add(x, h)?;

        self.ln_out.record(tape, &p("ln_out"), x)
    }

    fn flops(&self, frames: usize) -> u64 {
        self.ffn_m.flops(frames) + self.attn.flops(frames) + self.conv.flops(frames) + self.ffn.flops(frames)
    }

    fn visit(&self, prefix: &str, f: Visit<'_>) {
        let p = |leaf: &str| param_path(prefix, leaf);
        self.ln_ffn_m.visit(&p("ln_ffn_m"), f);
        self.ffn_m.visit(&p("ffn_m"), f);
        self.ln_attn.visit(&p("ln_attn"), f);
        self.attn.visit(&p("attn"), f);
        self.ln_conv.visit(&p("ln_conv"), f);
        self.conv.visit(&p("conv"), f);
        self.ln_ffn.visit(&p("ln_ffn"), f);
        self.ffn.visit(&p("ffn"), f);
        self.ln_out.visit(&p("ln_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_>) {
        let p = |leaf: &str| param_path(prefix, leaf);
        self.ln_ffn_m.visit_mut(&p("ln_ffn_m"), f);
        self.ffn_m.visit_mut(&p("ffn_m"), f);
        self.ln_attn.visit_mut(&p("ln_attn"), f);
        self.attn.visit_mut(&p("attn"), f);
        self.ln_conv.visit_mut(&p("ln_conv"), f);
        self.conv.visit_mut(&p("conv"), f);
        self.ln_ffn.visit_mut(&p("ln_ffn"), f);
        self.ffn.visit_mut(&p("ffn"), f);
        self.ln_out.visit_mut(&p("ln_out"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerNet {
    /// Front-end projection from input features to `d_model`; not a
    /// selectable slot.
    pub input: LinearLayer,
    pub blocks: Vec<ConformerBlock>,
    pub cls: Dense,
}

impl Network for ConformerNet {
    fn record<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let mut h = record_linear(&self.input, tape, "front.input", x)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.record(tape, &format!("blocks.{i}"), h)?;
        }
        let pooled = tape.mean_cols(h);
        self.cls.record(tape, "cls", pooled)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_linear(&self.input, "front.input", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.cls.visit("cls", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_linear_mut(&mut self.input, "front.input", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        self.cls.visit_mut("cls", f);
    }

    fn slots(&self) -> Vec<Slot<'_>> {
        use ModuleSelector::*;
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            for (leaf, selector, dense) in [
                ("ffn_m.fc1", FfnM1, &b.ffn_m.fc1),
                ("ffn_m.fc2", FfnM2, &b.ffn_m.fc2),
                ("attn.q", QKV, &b.attn.q),
                ("attn.k", QKV, &b.attn.k),
                ("attn.v", QKV, &b.attn.v),
                ("attn.o", Project, &b.attn.o),
                ("ffn.fc1", FFN1, &b.ffn.fc1),
                ("ffn.fc2", FFN2, &b.ffn.fc2),
            ] {
                out.push(Slot {
                    path: param_path(&p, leaf),
                    selector,
                    dense,
                });
            }
        }
        out.push(Slot {
            path: "cls".into(),
            selector: CLS,
            dense: &self.cls,
        });
        out
    }

    fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        use ModuleSelector::*;
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            for (leaf, selector, dense) in [
                ("ffn_m.fc1", FfnM1, &mut b.ffn_m.fc1),
                ("ffn_m.fc2", FfnM2, &mut b.ffn_m.fc2),
                ("attn.q", QKV, &mut b.attn.q),
                ("attn.k", QKV, &mut b.attn.k),
                ("attn.v", QKV, &mut b.attn.v),
                ("attn.o", Project, &mut b.attn.o),
                ("ffn.fc1", FFN1, &mut b.ffn.fc1),
                ("ffn.fc2", FFN2, &mut b.ffn.fc2),
            ] {
                out.push(SlotMut {
                    path: param_path(&p, leaf),
                    selector,
                    dense,
                });
            }
        }
        out.push(SlotMut {
            path: "cls".into(),
            selector: CLS,
            dense: &mut self.cls,
        });
        out
    }

    fn flops(&self, frames: usize) -> u64 {
        self.input.flops(frames)
            + self.blocks.iter().map(|b| b.flops(frames)).sum::<u64>()
            + self.cls.flops(1)
    }

    fn clone_box(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }
}
