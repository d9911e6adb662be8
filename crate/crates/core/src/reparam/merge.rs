use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HrfChain;
use crate::error::{Error, Result};
use crate::numcore::{LinearLayer, Matrix};

/// Default number of random probe columns used to certify a merge.
pub const DEFAULT_PROBES: usize = 100;
/// Seed for probe inputs.
pub const PROBE_SEED: u64 = 0x5EED_0D0E;

/// Evidence that a merge preserved the function it replaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub merged_param_count: usize,
    pub expanded_param_count: usize,
    pub max_abs_output_diff: f64,
    pub probes: usize,
}

/// Collapses `outer ∘ inner` into one layer: `W = W2 W1`, `b = W2 b1 + b2`.
pub fn merge_pair(outer: &LinearLayer, inner: &LinearLayer) -> Result<LinearLayer> {
    if outer.d_in() != inner.d_out() {
        return Err(Error::shape(
            "merge_pair",
            format!(
                "outer expects {} inputs but inner emits {}",
                outer.d_in(),
                inner.d_out()
            ),
        ));
    }
    let weight = outer.weight().matmul(inner.weight())?;
    let bias = outer
        .weight()
        .matmul(&Matrix::column(inner.bias()))?
        .add(&Matrix::column(outer.bias()))?;
    LinearLayer::new(weight, bias.into_vec())
}

/// Left fold of [`merge_pair`] over layers applied first to last.
pub fn merge_layers(layers: &[LinearLayer]) -> Result<LinearLayer> {
    let (first, rest) = layers
        .split_first()
        .ok_or_else(|| Error::invalid("cannot merge an empty chain"))?;
    rest.iter()
        .try_fold(first.clone(), |acc, next| merge_pair(next, &acc))
}

/// Collapses a whole chain back to one `m -> n` layer.
pub fn merge_chain(chain: &HrfChain) -> Result<LinearLayer> {
    merge_layers(chain.layers())
}

/// Merges `chain` and measures the output gap on `probes` standard-normal
/// input columns drawn from `seed`.
pub fn merge_chain_with_report(
    chain: &HrfChain,
    probes: usize,
    seed: u64,
) -> Result<(LinearLayer, MergeReport)> {
    let merged = merge_chain(chain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::random_normal(chain.d_in(), probes, &mut rng);
    let diff = if probes == 0 {
        0.0
    } else {
        merged.forward(&x)?.max_abs_diff(&chain.forward(&x)?)?
    };
    let report = MergeReport {
        merged_param_count: merged.param_count(),
        expanded_param_count: chain.param_count(),
        max_abs_output_diff: diff,
        probes,
    };
    Ok((merged, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reparam::expand_linear;

    #[test]
    fn identity_outer_layer_returns_inner() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inner = LinearLayer::init_uniform(3, 4, &mut rng);
        let merged = merge_pair(&LinearLayer::identity(4), &inner).unwrap();
        assert_eq!(merged, inner);
    }

    #[test]
    fn hand_computed_pair() {
        let inner = LinearLayer::new(
            Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(),
            vec![1.0, 0.0],
        )
        .unwrap();
        let outer = LinearLayer::new(
            Matrix::from_rows(&[[0.0, 1.0], [1.0, 1.0]]).unwrap(),
            vec![0.0, 1.0],
        )
        .unwrap();
        let m = merge_pair(&outer, &inner).unwrap();
        assert_eq!(m.weight().as_slice(), &[3.0, 4.0, 4.0, 6.0]);
        assert_eq!(m.bias(), &[0.0, 2.0]);
    }

    #[test]
    fn random_pair_matches_two_step_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inner = LinearLayer::init_uniform(8, 16, &mut rng);
        let outer = LinearLayer::init_uniform(16, 8, &mut rng);
        let merged = merge_pair(&outer, &inner).unwrap();
        let x = Matrix::random_normal(8, 100, &mut rng);
        let two_step = outer.forward(&inner.forward(&x).unwrap()).unwrap();
        assert!(merged.forward(&x).unwrap().max_abs_diff(&two_step).unwrap() <= 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let r = merge_pair(&LinearLayer::zeros(3, 2), &LinearLayer::zeros(2, 4));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn empty_chain_is_rejected() {
        assert!(merge_layers(&[]).is_err());
    }

    #[test]
    fn depth_one_chain_equals_pair_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = expand_linear(6, 3, 4, 1, &mut rng).unwrap();
        let via_pair = merge_pair(&c.layers()[1], &c.layers()[0]).unwrap();
        assert_eq!(merge_chain(&c).unwrap(), via_pair);
    }

    #[test]
    fn depth_three_chain_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = expand_linear(12, 7, 8, 3, &mut rng).unwrap();
        let (merged, report) = merge_chain_with_report(&c, 100, 9).unwrap();
        assert_eq!((merged.d_in(), merged.d_out()), (12, 7));
        assert_eq!(report.merged_param_count, 12 * 7 + 7);
        assert!(report.max_abs_output_diff <= 1e-10, "{report:?}");
    }

    #[test]
    fn identity_chain_merges_to_identity() {
        let layers = vec![LinearLayer::identity(3); 3];
        let c = HrfChain::from_layers(layers, 1).unwrap();
        assert_eq!(merge_chain(&c).unwrap(), LinearLayer::identity(3));
    }

    #[test]
    fn report_serializes_with_expected_fields() {
        let r = MergeReport {
            merged_param_count: 10,
            expanded_param_count: 20,
            max_abs_output_diff: 0.0,
            probes: 100,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["merged_param_count", "expanded_param_count", "max_abs_output_diff", "probes"] {
            assert!(v.get(key).is_some());
        }
    }
}
