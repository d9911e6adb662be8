//! Desk-scale Transformer families with every dense sub-module addressable by
//! [`ModuleSelector`].

mod config;
pub mod conformer;
pub mod conv_transformer;
mod family;
pub mod layers;
mod selector;
pub mod speechformer;

pub use config::{ModelConfig, Structure, DEFAULT_ATTENTION_WINDOW, DEFAULT_CONV_KERNEL, DEFAULT_HEADS, DEFAULT_INPUT_DIM};
pub use family::{registry, Family, FamilyRegistry, Network, Slot, SlotMut};
pub use layers::{ffn_forward, Attention, Dense, FeedForward};
pub use selector::ModuleSelector;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{param_path, Matrix, Parameterized, Tape, Var};
use crate::reparam::{apply_hrf_plan, HrfPlan};
use layers::EncoderBlock;

// Seed offset so chain initialization never reuses the base model's stream.
const PLAN_SEED_SALT: u64 = 0x4852_465F_5345_4544;

/// A built model: configuration, optional re-parameterization plan (present
/// while dense slots are expanded), and the family's network.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    plan: Option<HrfPlan>,
    net: Box<dyn Network>,
}

/// Config plus optional plan: everything needed to instantiate a model for a
/// given seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    #[serde(default)]
    pub plan: Option<HrfPlan>,
}

impl ModelSpec {
    pub fn new(config: ModelConfig, plan: Option<HrfPlan>) -> Self {
        Self { config, plan }
    }

    pub fn instantiate(&self, seed: u64) -> Result<Model> {
        let base = Model::build(&self.config, seed)?;
        match &self.plan {
            Some(plan) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PLAN_SEED_SALT);
                apply_hrf_plan(&base, plan, &mut rng)
            }
            None => Ok(base),
        }
    }
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = registry().get(&config.family)?.build(config, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            plan: None,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> Option<&HrfPlan> {
        self.plan.as_ref()
    }

    pub(crate) fn set_plan(&mut self, plan: Option<HrfPlan>) {
        self.plan = plan;
    }

    pub fn family(&self) -> &'static dyn Family {
        registry()
            .get(&self.config.family)
            .expect("a built model's family is registered")
    }

    pub fn network(&self) -> &dyn Network {
        self.net.as_ref()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.config.clone(), self.plan.clone())
    }

    pub fn is_expanded(&self) -> bool {
        self.net.slots().iter().any(|s| s.dense.is_expanded())
    }

    pub fn slots(&self) -> Vec<Slot<'_>> {
        self.net.slots()
    }

    pub(crate) fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        self.net.slots_mut()
    }

    /// Records the forward pass of one utterance; returns the logit column.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, features: Var) -> Result<Var> {
        let (rows, frames) = tape.value(features).shape();
        if frames == 0 {
            return Err(Error::invalid("forward needs at least one frame"));
        }
        if rows != self.config.input_dim {
            return Err(Error::shape(
                "Model::forward",
                format!("expected {} feature rows, got {rows}", self.config.input_dim),
            ));
        }
        self.net.record(tape, features)
    }

    /// Logits for one `input_dim x T` utterance.
    pub fn forward(&self, features: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.input(features);
        let logits = self.record(&mut tape, x)?;
        Ok(tape.value(logits).as_slice().to_vec())
    }

    /// Logits for a batch, recorded on one tape; each item is independent.
    pub fn forward_batch(&self, batch: &[Matrix]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut outs = Vec::with_capacity(batch.len());
        for item in batch {
            let x = tape.input(item);
            outs.push(self.record(&mut tape, x)?);
        }
        Ok(outs
            .into_iter()
            .map(|v| tape.value(v).as_slice().to_vec())
            .collect())
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.param_total()
    }

    /// Multiply-add FLOPs for one utterance of `frames` frames: `2 d_in d_out T`
    /// per dense layer, `4 T^2 d_model` per attention (scores plus context),
    /// `2 x MACs` per convolution. Norms, activations and softmax are not
    /// counted.
    pub fn estimate_flops(&self, frames: usize) -> u64 {
        self.net.flops(frames)
    }

    /// `(name, shape)` of every parameter in visiting order.
    pub fn layer_signature(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, m| out.push((name.to_string(), m.shape())));
        out
    }
}

impl Parameterized for Model {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.net.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.net.visit_params_mut(f)
    }
}

pub(crate) fn encoder_slots<'a>(b: &'a EncoderBlock, prefix: &str, out: &mut Vec<Slot<'a>>) {
    use ModuleSelector::*;
    for (leaf, selector, dense) in [
        ("attn.q", QKV, &b.attn.q),
        ("attn.k", QKV, &b.attn.k),
        ("attn.v", QKV, &b.attn.v),
        ("attn.o", Project, &b.attn.o),
        ("ffn.fc1", FFN1, &b.ffn.fc1),
        ("ffn.fc2", FFN2, &b.ffn.fc2),
    ] {
        out.push(Slot {
            path: param_path(prefix, leaf),
            selector,
            dense,
        });
    }
}

pub(crate) fn encoder_slots_mut<'a>(b: &'a mut EncoderBlock, prefix: &str, out: &mut Vec<SlotMut<'a>>) {
    use ModuleSelector::*;
    for (leaf, selector, dense) in [
        ("attn.q", QKV, &mut b.attn.q),
        ("attn.k", QKV, &mut b.attn.k),
        ("attn.v", QKV, &mut b.attn.v),
        ("attn.o", Project, &mut b.attn.o),
        ("ffn.fc1", FFN1, &mut b.ffn.fc1),
        ("ffn.fc2", FFN2, &mut b.ffn.fc2),
    ] {
        out.push(SlotMut {
            path: param_path(prefix, leaf),
            selector,
            dense,
        });
    }
}
