//! Dense numeric kernel: matrices, affine layers, activations and
//! reverse-mode gradients.

mod activation;
mod gradcheck;
mod linear;
mod matrix;
mod tape;

pub use activation::{activate, Activation};
pub use gradcheck::{finite_diff_check, finite_diff_compare, GradCheckReport, FD_EPSILON};
pub use linear::{linear_forward, LinearLayer};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};


use crate::error::Result;

/// Anything that owns named trainable matrices.
///
/// `visit_params` and `visit_params_mut` must yield the same names in the same
/// order; the names are the keys used by [`Gradients`], the optimizer state,
/// and checkpoint manifests.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn param_total(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, m| n += m.len());
        n
    }
}

impl Parameterized for LinearLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("weight", self.weight());
        f("bias", self.bias_matrix());
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("weight", self.weight_mut());
        f("bias", self.bias_matrix_mut());
    }
}

/// Joins a parameter path prefix and a leaf name with a dot.
pub fn param_path(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Records `W x + b` on `tape`, registering the weight and bias as
/// parameters `{prefix}.weight` and `{prefix}.bias`.
pub fn record_linear<'a>(
    layer: &'a LinearLayer,
    tape: &mut Tape<'a>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = tape.param(param_path(prefix, "weight"), layer.weight());
    let b = tape.param(param_path(prefix, "bias"), layer.bias_matrix());
    let y = tape.matmul(w, x)?;
    tape.add_bias(y, b)
}
