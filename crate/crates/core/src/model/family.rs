//! Model families behind a common trait, registered by name.
//!
//! A [`Family`] knows its preset structures, its default activation, which
//! [`ModuleSelector`]s apply to it, and how to build a [`Network`]. The
//! process-wide [`registry`] holds the three built-in families; configuration
//! files and the CLI select one by its name.

use std::fmt;
use std::sync::OnceLock;

use rand::RngCore;

use super::config::{ModelConfig, Structure};
use super::layers::Dense;
use super::ModuleSelector;
use crate::error::{Error, Result};
use crate::numcore::{Activation, Matrix, Tape, Var};

/// A dense slot together with its parameter path and selector group.
pub struct Slot<'a> {
    pub path: String,
    pub selector: ModuleSelector,
    pub dense: &'a Dense,
}

pub struct SlotMut<'a> {
    pub path: String,
    pub selector: ModuleSelector,
    pub dense: &'a mut Dense,
}

/// A built architecture: parameters plus a differentiable forward pass from
/// `input_dim x T` features to an `n_classes x 1` logit column.
pub trait Network: Send + Sync + fmt::Debug {
    fn record<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var>;

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    /// Every selectable dense slot, in a fixed order.
    fn slots(&self) -> Vec<Slot<'_>>;

    fn slots_mut(&mut self) -> Vec<SlotMut<'_>>;

    /// Multiply-add count for one utterance of `frames` input frames.
    fn flops(&self, frames: usize) -> u64;

    fn clone_box(&self) -> Box<dyn Network>;
}

impl Clone for Box<dyn Network> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub trait Family: Send + Sync {
    /// Canonical registry key.
    fn name(&self) -> &'static str;

    /// Concrete selector groups this family exposes (never `ALL`).
    fn selectors(&self) -> &'static [ModuleSelector];

    fn original(&self) -> Structure;

    fn lightweight(&self) -> Structure;

    fn default_activation(&self) -> Activation;

    /// Initial learning rate for a model of the given structure.
    fn default_lr(&self, structure: Structure) -> f64 {
        let _ = structure;
        1e-3
    }

    fn build(&self, config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Box<dyn Network>>;

    /// Resolves a selector set against this family, expanding `ALL`.
    fn resolve(&self, selectors: &[ModuleSelector]) -> Result<Vec<ModuleSelector>> {
        let mut out = Vec::new();
        for &s in selectors {
            if s == ModuleSelector::ALL {
                out.extend_from_slice(self.selectors());
            } else if self.selectors().contains(&s) {
                out.push(s);
            } else {
                return Err(Error::invalid(format!(
                    "selector {s} is not valid for {}",
                    self.name()
                )));
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

#[derive(Default)]
pub struct FamilyRegistry {
    entries: Vec<Box<dyn Family>>,
}

impl FamilyRegistry {
    pub fn with_builtin() -> Self {
        let mut r = Self::default();
        r.register(Box::new(super::conv_transformer::ConvTransformerFamily))
            .and_then(|_| r.register(Box::new(super::conformer::ConformerFamily)))
            .and_then(|_| r.register(Box::new(super::speechformer::SpeechFormerFamily)))
            .expect("built-in family names are distinct");
        r
    }

    pub fn register(&mut self, family: Box<dyn Family>) -> Result<()> {
        if self.entries.iter().any(|f| key(f.name()) == key(family.name())) {
            return Err(Error::invalid(format!(
                "family {} is already registered",
                family.name()
            )));
        }
        self.entries.push(family);
        Ok(())
    }

    /// Lookup ignoring case, `_` and `-`.
    pub fn get(&self, name: &str) -> Result<&dyn Family> {
        let k = key(name);
        self.entries
            .iter()
            .find(|f| key(f.name()) == k)
            .map(|f| f.as_ref())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model family {name:?} (known: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|f| f.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Family> {
        self.entries.iter().map(|f| f.as_ref())
    }
}

fn key(name: &str) -> String {
    name.to_ascii_lowercase().replace(['_', '-', ' '], "")
}

pub fn registry() -> &'static FamilyRegistry {
    static REGISTRY: OnceLock<FamilyRegistry> = OnceLock::new();
    REGISTRY.get_or_init(FamilyRegistry::with_builtin)
}
