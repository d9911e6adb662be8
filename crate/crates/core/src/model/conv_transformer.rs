use rand::RngCore;

use super::config::{ModelConfig, Structure};
use super::family::{Family, Network, Slot, SlotMut};
use super::layers::{Conv1d, Dense, EncoderBlock};
use super::{encoder_slots, encoder_slots_mut, ModuleSelector};
use crate::error::Result;
use crate::numcore::{Activation, Matrix, Tape, Var};

const FRONT_KERNEL: usize = 3;
const FRONT_STRIDE: usize = 2;

/// Two strided convolutions (kernel 3, stride 2, ReLU) in front of a stack of
/// post-norm encoder blocks, mean pooling and a linear classifier.
pub struct ConvTransformerFamily;

impl Family for ConvTransformerFamily {
    fn name(&self) -> &'static str {
        "ConvTransformer"
    }

    fn selectors(&self) -> &'static [ModuleSelector] {
        use ModuleSelector::*;
        &[QKV, Project, FFN1, FFN2, CLS]
    }

    fn original(&self) -> Structure {
        Structure::new(8, 80, 320)
    }

    fn lightweight(&self) -> Structure {
        Structure::new(1, 16, 4)
    }

    fn default_activation(&self) -> Activation {
        Activation::ReLU
    }

    fn build(&self, config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Box<dyn Network>> {
        config.validate()?;
        let d = config.d_model;
        let conv1 = Conv1d::init(config.input_dim, d, FRONT_KERNEL, FRONT_STRIDE, rng);
        let conv2 = Conv1d::init(d, d, FRONT_KERNEL, FRONT_STRIDE, rng);
        let blocks = (0..config.n_layer)
            .map(|_| EncoderBlock::init(d, config.d_ffn, config.n_heads, config.activation, None, rng))
            .collect();
        let cls = Dense::init(d, config.n_classes, rng);
        Ok(Box::new(ConvTransformerNet {
            conv1,
            conv2,
            blocks,
            cls,
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvTransformerNet {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub blocks: Vec<EncoderBlock>,
    pub cls: Dense,
}

impl Network for ConvTransformerNet {
    fn record<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let h = self.conv1.record(tape, "front.conv1", x)?;
        let h = tape.activate(h, Activation::ReLU);
        let h = self.conv2.record(tape, "front.conv2", h)?;
        let mut h = tape.activate(h, Activation::ReLU);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.record(tape, &format!("blocks.{i}"), h)?;
        }
        let pooled = tape.mean_cols(h);
        self.cls.record(tape, "cls", pooled)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.conv1.visit("front.conv1", f);
        self.conv2.visit("front.conv2", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.cls.visit("cls", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.conv1.visit_mut("front.conv1", f);
        self.conv2.visit_mut("front.conv2", f);
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

    fn flops(&self, frames: usize) -> u64 {
        let t1 = self.conv1.out_frames(frames);
        let t2 = self.conv2.out_frames(t1);
        self.conv1.flops(frames)
            + self.conv2.flops(t1)
            + self.blocks.iter().map(|b| b.flops(t2)).sum::<u64>()
            + self.cls.flops(1)
    }

    fn clone_box(&self) -> Box<dyn Network> {
        Box::new(self.clone())
    }
}
