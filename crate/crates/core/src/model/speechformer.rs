use rand::RngCore;

use super::config::{ModelConfig, Structure};
use super::family::{Family, Network, Slot, SlotMut};
use super::layers::{visit_linear, visit_linear_mut, Dense, EncoderBlock};
use super::{encoder_slots, encoder_slots_mut, ModuleSelector};
use crate::error::Result;
use crate::numcore::{record_linear, Activation, LinearLayer, Matrix, Tape, Var};

/// Single frame-level stage: a linear map from input features down to
/// `d_model`, encoder blocks with local windowed attention, mean pooling and
/// a linear classifier.
pub struct SpeechFormerFamily;

impl Family for SpeechFormerFamily {
    fn name(&self) -> &'static str {
        "SpeechFormer"
    }

    fn selectors(&self) -> &'static [ModuleSelector] {
        use ModuleSelector::*;
        &[QKV, Project, FFN1, FFN2, CLS]
    }

    fn original(&self) -> Structure {
        Structure::new(8, 80, 64)
    }

    fn lightweight(&self) -> Structure {
        Structure::new(1, 16, 4)
    }

    fn default_activation(&self) -> Activation {
        Activation::ReLU
    }

    fn default_lr(&self, structure: Structure) -> f64 {
        if structure == self.lightweight() {
            5e-4
        } else {
            1e-3
        }
    }

    fn build(&self, config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Box<dyn Network>> {
        config.validate()?;
        let d = config.d_model;
        let radius = Some(config.attention_window / 2);
        let input = LinearLayer::init_uniform(config.input_dim, d, rng);
        let blocks = (0..config.n_layer)
            .map(|_| EncoderBlock::init(d, config.d_ffn, config.n_heads, config.activation, radius, rng))
            .collect();
        let cls = Dense::init(d, config.n_classes, rng);
        Ok(Box::new(SpeechFormerNet { input, blocks, cls }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeechFormerNet {
    /// Input mapping to `d_model`; part of the front end, not a selectable
    /// slot.
    pub input: LinearLayer,
    pub blocks: Vec<EncoderBlock>,
    pub cls: Dense,
}

impl Network for SpeechFormerNet {
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
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            encoder_slots(b, &format!("blocks.{i}"), &mut out);
        }
        out.push(Slot {
            path: "cls".into(),
            selector: ModuleSelector::CLS,
            dense: &self.cls,
        });
        out
    }

    fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            encoder_slots_mut(b, &format!("blocks.{i}"), &mut out);
        }
        out.push(SlotMut {
            path: "cls".into(),
            selector: ModuleSelector::CLS,
            dense: &mut self.cls,
        });
        out
    }

    // Attention is computed densely and masked, so it is counted as T^2.
    fn flops(&self, frames: usize) -> u64 {
        self.input.flops(frames)
            + self.blocks.iter().map(|b| b.flops(frames)).sum::<u64>()
            + self.cls.flops(1)
    }

    fn clone_box(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }
}
