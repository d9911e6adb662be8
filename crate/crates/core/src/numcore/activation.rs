use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::Error;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Pointwise non-linearities used inside feed-forward networks.
///
/// GELU is the tanh approximation; Swish is `x * sigmoid(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    GELU,
    SquaredReLU,
    Swish,
    Identity,
}

impl Activation {
    /// The four activations compared in the activation ablation.
    pub const ABLATION: [Activation; 4] = [
        Activation::ReLU,
        Activation::GELU,
        Activation::Swish,
        Activation::SquaredReLU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "ReLU",
            Activation::GELU => "GELU",
            Activation::SquaredReLU => "SquaredReLU",
            Activation::Swish => "Swish",
            Activation::Identity => "Identity",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::GELU => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::SquaredReLU => {
                let r = x.max(0.0);
                r * r
            }
            Activation::Swish => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`. ReLU-type kinks use the right-continuous convention
    /// (derivative 0 at exactly 0).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::GELU => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = inner.tanh();
                let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            }
            Activation::SquaredReLU => 2.0 * x.max(0.0),
            Activation::Swish => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise application; output shape equals input shape.
pub fn activate(activation: Activation, x: &Matrix) -> Matrix {
    x.map(|v| activation.apply(v))
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "relu" => Ok(Activation::ReLU),
            "gelu" => Ok(Activation::GELU),
            "squaredrelu" | "relu2" => Ok(Activation::SquaredReLU),
            "swish" | "silu" => Ok(Activation::Swish),
            "identity" | "none" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn named_values() {
        assert_eq!(Activation::SquaredReLU.apply(-2.0), 0.0);
        assert_eq!(Activation::SquaredReLU.apply(3.0), 9.0);
        assert_eq!(Activation::Swish.apply(0.0), 0.0);
        assert_eq!(Activation::GELU.apply(0.0), 0.0);
        assert_eq!(Activation::ReLU.apply(-0.5), 0.0);
    }

    #[test]
    fn parse_round_trip() {
        for a in Activation::ABLATION.iter().chain([Activation::Identity].iter()) {
            assert_eq!(a.name().parse::<Activation>().unwrap(), *a);
        }
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for a in Activation::ABLATION {
            for &x in &[-2.3, -0.7, 0.4, 1.9] {
                let fd = (a.apply(x + h) - a.apply(x - h)) / (2.0 * h);
                assert!((fd - a.derivative(x)).abs() < 1e-7, "{a} at {x}");
            }
        }
    }

    proptest! {
        #[test]
        fn activation_laws(x in -50.0f64..50.0) {
            prop_assert_eq!(Activation::Identity.apply(x), x);
            prop_assert!(Activation::ReLU.apply(x) >= 0.0);
            let r = Activation::ReLU.apply(x);
            prop_assert_eq!(Activation::SquaredReLU.apply(x), r * r);
            for a in Activation::ABLATION {
                prop_assert!(a.apply(x).is_finite());
            }
        }

        #[test]
        fn activate_preserves_shape(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Matrix::random_normal(rows, cols, &mut rng);
            for a in Activation::ABLATION {
                let y = activate(a, &x);
                prop_assert_eq!(y.shape(), x.shape());
                prop_assert!(y.is_finite());
            }
        }
    }
}
