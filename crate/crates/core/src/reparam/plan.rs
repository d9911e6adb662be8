use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{expand_linear, merge_chain, MergeReport};
use crate::error::{Error, Result};
use crate::model::{Dense, Model, ModuleSelector};
use crate::numcore::Matrix;

/// Which dense groups to expand, the expansion ratio, and the number of
/// inserted layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrfPlan {
    pub selectors: BTreeSet<ModuleSelector>,
    pub ratio: usize,
    pub depth: usize,
}

impl HrfPlan {
    pub fn new(selectors: impl IntoIterator<Item = ModuleSelector>, ratio: usize, depth: usize) -> Self {
        Self {
            selectors: selectors.into_iter().collect(),
            ratio,
            depth,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.selectors.is_empty()
    }

    /// Selectors joined with `+`, e.g. `FFN1+FFN2`.
    pub fn label(&self) -> String {
        self.selectors
            .iter()
            .map(|s| s.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Replaces every dense slot named by `plan` with a freshly initialized
/// chain of the same outer shape. Other parameters are copied unchanged.
///
/// Fails if the model is already expanded or a selector does not apply to
/// the model's family. An empty selector set returns the model unchanged.
pub fn apply_hrf_plan<R: Rng + ?Sized>(model: &Model, plan: &HrfPlan, rng: &mut R) -> Result<Model> {
    if model.plan().is_some() || model.is_expanded() {
        return Err(Error::invalid("model is already expanded"));
    }
    let family = model.family();
    let selectors: Vec<ModuleSelector> = plan.selectors.iter().copied().collect();
    let resolved = family.resolve(&selectors)?;
    if resolved.is_empty() {
        return Ok(model.clone());
    }

    let mut out = model.clone();
    for slot in out.slots_mut() {
        if resolved.contains(&slot.selector) {
            let (m, n) = (slot.dense.d_in(), slot.dense.d_out());
            *slot.dense = Dense::Chain(expand_linear(m, n, plan.ratio, plan.depth, rng)?);
        }
    }
    out.set_plan(Some(plan.clone()));
    Ok(out)
}

/// Collapses every chain back to a single dense layer. Non-chain parameters
/// are copied verbatim; a model with no chains is returned unchanged.
pub fn dehrf_model(model: &Model) -> Model {
    let mut out = model.clone();
    for slot in out.slots_mut() {
        if let Dense::Chain(chain) = &*slot.dense {
            let merged = merge_chain(chain).expect("chain invariants guarantee a well-shaped merge");
            *slot.dense = Dense::Linear(merged);
        }
    }
    out.set_plan(None);
    out
}

/// [`dehrf_model`] plus a logit comparison on `probes` seeded standard-normal
/// utterances of `frames` frames each.
pub fn dehrf_with_report(model: &Model, probes: usize, frames: usize, seed: u64) -> Result<(Model, MergeReport)> {
    let merged = dehrf_model(model);
    let max_diff = max_logit_diff(model, &merged, probes, frames, seed)?;
    let report = MergeReport {
        merged_param_count: merged.param_count(),
        expanded_param_count: model.param_count(),
        max_abs_output_diff: max_diff,
        probes,
    };
    Ok((merged, report))
}

/// Largest absolute logit difference between two models over seeded random
/// probes.
pub fn max_logit_diff(a: &Model, b: &Model, probes: usize, frames: usize, seed: u64) -> Result<f64> {
    let dim = a.config().input_dim;
    if b.config().input_dim != dim || b.config().n_classes != a.config().n_classes {
        return Err(Error::shape(
            "max_logit_diff",
            format!(
                "models map {}->{} and {}->{}",
                dim,
                a.config().n_classes,
                b.config().input_dim,
                b.config().n_classes
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_diff = 0.0f64;
    for _ in 0..probes {
        let x = Matrix::random_normal(dim, frames, &mut rng);
        let la = a.forward(&x)?;
        let lb = b.forward(&x)?;
        for (u, v) in la.iter().zip(&lb) {
            max_diff = max_diff.max((u - v).abs());
        }
    }
    Ok(max_diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numcore::Parameterized;
    use ModuleSelector::*;

    fn light(family: &str) -> Model {
        Model::build(&ModelConfig::lightweight(family, 4).unwrap(), 21).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn ffn2_plan_expands_one_slot_per_block() {
        let m = light("ConvTransformer");
        let e = apply_hrf_plan(&m, &HrfPlan::new([FFN2], 8, 1), &mut rng()).unwrap();
        let expanded: Vec<_> = e.slots().into_iter().filter(|s| s.dense.is_expanded()).collect();
        assert_eq!(expanded.len(), m.config().n_layer);
        assert_eq!(expanded[0].path, "blocks.0.ffn.fc2");
        assert_eq!((expanded[0].dense.d_in(), expanded[0].dense.d_out()), (4, 16));
        assert!(e.param_count() > m.param_count());
        assert!(e.estimate_flops(40) > m.estimate_flops(40));
    }

    #[test]
    fn all_on_conformer_expands_every_group() {
        let m = light("Conformer");
        let e = apply_hrf_plan(&m, &HrfPlan::new([ALL], 8, 1), &mut rng()).unwrap();
        assert!(e.slots().iter().all(|s| s.dense.is_expanded()));
        let groups: BTreeSet<_> = e.slots().iter().map(|s| s.selector).collect();
        assert_eq!(groups, [QKV, Project, FFN1, FFN2, FfnM1, FfnM2, CLS].into_iter().collect());
    }

    #[test]
    fn empty_plan_is_a_no_op() {
        let m = light("SpeechFormer");
        let e = apply_hrf_plan(&m, &HrfPlan::new([], 8, 1), &mut rng()).unwrap();
        assert_eq!(e.param_count(), m.param_count());
        assert!(e.plan().is_none());
        assert_eq!(e.layer_signature(), m.layer_signature());
    }

    #[test]
    fn macaron_selector_rejected_outside_conformer() {
        let m = light("ConvTransformer");
        assert!(apply_hrf_plan(&m, &HrfPlan::new([FfnM1], 8, 1), &mut rng()).is_err());
    }

    #[test]
    fn double_expansion_rejected() {
        let m = light("ConvTransformer");
        let e = apply_hrf_plan(&m, &HrfPlan::new([FFN1], 4, 1), &mut rng()).unwrap();
        assert!(apply_hrf_plan(&e, &HrfPlan::new([FFN2], 4, 1), &mut rng()).is_err());
    }

    #[test]
    fn dehrf_restores_shape_and_agrees_on_logits() {
        let m = light("ConvTransformer");
        let e = apply_hrf_plan(&m, &HrfPlan::new([FFN2], 8, 1), &mut rng()).unwrap();
        let (merged, report) = dehrf_with_report(&e, 50, 24, 1).unwrap();
        assert_eq!(merged.layer_signature(), m.layer_signature());
        assert_eq!(merged.param_count(), m.param_count());
        assert_eq!(report.merged_param_count, m.param_count());
        assert!(report.max_abs_output_diff <= 1e-9, "{report:?}");
        assert_eq!(merged.estimate_flops(40), m.estimate_flops(40));
    }

    #[test]
    fn dehrf_is_idempotent_and_preserves_untouched_params() {
        let m = light("Conformer");
        let e = apply_hrf_plan(&m, &HrfPlan::new([FfnM1, CLS], 2, 3), &mut rng()).unwrap();
        let once = dehrf_model(&e);
        let twice = dehrf_model(&once);
        let collect = |m: &Model| {
            let mut v = Vec::new();
            m.visit_params(&mut |n, x| v.push((n.to_string(), x.clone())));
            v
        };
        assert_eq!(collect(&once), collect(&twice));
        let before: std::collections::BTreeMap<_, _> = collect(&m).into_iter().collect();
        for (name, value) in collect(&once) {
            if !name.contains("ffn_m.fc1") && !name.starts_with("cls") {
                assert_eq!(before[&name], value, "{name} changed");
            }
        }
    }
}
