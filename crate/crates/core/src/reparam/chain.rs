use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{param_path, record_linear, LinearLayer, Matrix, Tape, Var};

/// Largest number of inserted layers supported.
pub const MAX_DEPTH: usize = 3;

/// Expansion ratios used in the ablation grid.
pub const STANDARD_RATIOS: [usize; 3] = [2, 4, 8];

/// An activation-free cascade of dense layers standing in for one `m -> n`
/// layer during training.
///
/// `depth` counts inserted layers, so a chain holds `depth + 1` linears. Every
/// hidden width is `ratio * n`. There is no slot for a non-linearity between
/// members: the cascade is affine by construction, which is what makes
/// [`merge_chain`](super::merge_chain) exact.
#[derive(Clone, Debug, PartialEq)]
pub struct HrfChain {
    layers: Vec<LinearLayer>,
    ratio: usize,
    depth: usize,
    origin: (usize, usize),
}

impl HrfChain {
    /// Wraps explicit layers, checking the chain invariants.
    pub fn from_layers(layers: Vec<LinearLayer>, ratio: usize) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid(format!(
                "an HRF chain needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        let depth = layers.len() - 1;
        check_depth(depth)?;
        check_ratio(ratio)?;
        let m = layers[0].d_in();
        let n = layers[layers.len() - 1].d_out();
        let hidden = ratio * n;
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::shape(
                    "HrfChain",
                    format!(
                        "layer {k} emits {} but layer {} expects {}",
                        pair[0].d_out(),
                        k + 1,
                        pair[1].d_in()
                    ),
                ));
            }
            if pair[0].d_out() != hidden {
                return Err(Error::shape(
                    "HrfChain",
                    format!("hidden width {} != ratio * n = {hidden}", pair[0].d_out()),
                ));
            }
        }
        Ok(Self {
            layers,
            ratio,
            depth,
            origin: (m, n),
        })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `(d_in, d_out)` of the layer this chain replaces.
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn d_in(&self) -> usize {
        self.origin.0
    }

    pub fn d_out(&self) -> usize {
        self.origin.1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LinearLayer::param_count).sum()
    }

    pub fn flops(&self, frames: usize) -> u64 {
        self.layers.iter().map(|l| l.flops(frames)).sum()
    }

    /// Sequential evaluation, first layer to last, with no activation.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub(crate) fn record<'a>(&'a self, tape: &mut Tape<'a>, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = record_linear(layer, tape, &chain_member_path(prefix, k), h)?;
        }
        Ok(h)
    }
}

pub(crate) fn chain_member_path(prefix: &str, k: usize) -> String {
    param_path(prefix, &format!("hrf.{k}"))
}

fn check_depth(depth: usize) -> Result<()> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::invalid(format!(
            "HRF depth must be in 1..={MAX_DEPTH}, got {depth}"
        )));
    }
    Ok(())
}

fn check_ratio(ratio: usize) -> Result<()> {
    if ratio < 1 {
        return Err(Error::invalid("HRF ratio must be >= 1"));
    }
    Ok(())
}

/// Expands an `m -> n` dense layer into `depth + 1` freshly initialized
/// linears: `m -> r n`, then `depth - 1` layers `r n -> r n`, then `r n -> n`.
///
/// Each member is initialized uniform in `±1/sqrt(fan_in)`.
pub fn expand_linear<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    ratio: usize,
    depth: usize,
    rng: &mut R,
) -> Result<HrfChain> {
    if m == 0 || n == 0 {
        return Err(Error::invalid(format!("cannot expand a {m}->{n} layer")));
    }
    check_depth(depth)?;
    check_ratio(ratio)?;
    if !STANDARD_RATIOS.contains(&ratio) {
        warn!("HRF ratio {ratio} is outside the standard set {STANDARD_RATIOS:?}");
    }
    let hidden = ratio * n;
    let mut layers = Vec::with_capacity(depth + 1);
    layers.push(LinearLayer::init_uniform(m, hidden, rng));
    for _ in 1..depth {
        layers.push(LinearLayer::init_uniform(hidden, hidden, rng));
    }
    layers.push(LinearLayer::init_uniform(hidden, n, rng));
    HrfChain::from_layers(layers, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shapes(c: &HrfChain) -> Vec<(usize, usize)> {
        c.layers().iter().map(|l| (l.d_in(), l.d_out())).collect()
    }

    #[test]
    fn single_inserted_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = expand_linear(4, 2, 8, 1, &mut rng).unwrap();
        assert_eq!(shapes(&c), vec![(4, 16), (16, 2)]);
        assert_eq!(c.origin(), (4, 2));
    }

    #[test]
    fn two_inserted_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = expand_linear(3, 3, 2, 2, &mut rng).unwrap();
        assert_eq!(shapes(&c), vec![(3, 6), (6, 6), (6, 3)]);
    }

    #[test]
    fn three_inserted_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = expand_linear(5, 2, 4, 3, &mut rng).unwrap();
        assert_eq!(shapes(&c), vec![(5, 8), (8, 8), (8, 8), (8, 2)]);
    }

    #[test]
    fn expanded_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = expand_linear(16, 4, 8, 1, &mut rng).unwrap();
        assert_eq!(c.param_count(), 16 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(c.param_count(), 676);
        assert_eq!(LinearLayer::zeros(16, 4).param_count(), 68);
    }

    #[test]
    fn rejects_bad_depth_and_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(expand_linear(4, 2, 8, 0, &mut rng).is_err());
        assert!(expand_linear(4, 2, 8, 4, &mut rng).is_err());
        assert!(expand_linear(4, 2, 0, 1, &mut rng).is_err());
        // non-standard ratio only warns
        assert!(expand_linear(4, 2, 3, 1, &mut rng).is_ok());
    }

    #[test]
    fn from_layers_checks_widths() {
        let bad = vec![LinearLayer::zeros(4, 5), LinearLayer::zeros(6, 2)];
        assert!(HrfChain::from_layers(bad, 2).is_err());
        let wrong_hidden = vec![LinearLayer::zeros(4, 6), LinearLayer::zeros(6, 2)];
        assert!(HrfChain::from_layers(wrong_hidden, 2).is_err());
        assert!(HrfChain::from_layers(vec![LinearLayer::zeros(4, 2)], 2).is_err());
    }
}
