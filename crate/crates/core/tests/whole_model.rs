//! Expanded vs merged models across families and selector groups.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reparam_core::model::{registry, Model, ModelConfig, ModuleSelector};
use reparam_core::numcore::{finite_diff_check, Matrix, Tape};
use reparam_core::reparam::{apply_hrf_plan, dehrf_model, max_logit_diff, HrfPlan};

const FAMILIES: [&str; 3] = ["ConvTransformer", "Conformer", "SpeechFormer"];

fn selector_groups(family: &str) -> Vec<ModuleSelector> {
    let mut groups = registry().get(family).unwrap().selectors().to_vec();
    groups.push(ModuleSelector::ALL);
    groups
}

#[test]
fn merge_restores_params_and_flops_for_every_selector_and_ratio() {
    for family in FAMILIES {
        let base = Model::build(&ModelConfig::lightweight(family, 4).unwrap(), 11).unwrap();
        for selector in selector_groups(family) {
            for ratio in [2, 4, 8] {
                for depth in [1, 3] {
                    let mut rng = ChaCha8Rng::seed_from_u64(ratio as u64);
                    let plan = HrfPlan::new([selector], ratio, depth);
                    let expanded = apply_hrf_plan(&base, &plan, &mut rng).unwrap();
                    assert!(expanded.param_count() > base.param_count(), "{family} {selector}");
                    let merged = dehrf_model(&expanded);
                    assert_eq!(merged.param_count(), base.param_count(), "{family} {selector} r{ratio}");
                    assert_eq!(merged.estimate_flops(50), base.estimate_flops(50));
                    assert_eq!(merged.layer_signature(), base.layer_signature());
                }
            }
        }
    }
}

#[test]
fn merged_logits_agree_with_expanded() {
    for family in FAMILIES {
        let base = Model::build(&ModelConfig::lightweight(family, 4).unwrap(), 2).unwrap();
        for selector in selector_groups(family) {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let expanded = apply_hrf_plan(&base, &HrfPlan::new([selector], 8, 2), &mut rng).unwrap();
            let merged = dehrf_model(&expanded);
            let diff = max_logit_diff(&expanded, &merged, 40, 16, 77).unwrap();
            assert!(diff <= 1e-9, "{family} {selector}: {diff:e}");
        }
    }
}

#[test]
fn expanded_model_passes_gradient_check() {
    let base = Model::build(&ModelConfig::lightweight("ConvTransformer", 3).unwrap(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut expanded = apply_hrf_plan(&base, &HrfPlan::new([ModuleSelector::FFN2], 2, 1), &mut rng).unwrap();
    let x = Matrix::random_normal(78, 12, &mut rng);
    let report = finite_diff_check(
        &mut expanded,
        |m: &Model, tape: &mut Tape<'_>| {
            let xv = tape.constant(x.clone());
            let logits = m.record(tape, xv)?;
            tape.cross_entropy(logits, 1)
        },
        1e-4,
    )
    .unwrap();
    assert!(report.pass, "{report:?}");
}
