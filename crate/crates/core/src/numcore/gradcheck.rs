use serde::Serialize;

use super::tape::{Gradients, Tape, Var};
use super::{Matrix, Parameterized};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;

/// Denominator floor for the relative error, so gradients that are zero up to
/// rounding do not produce spurious huge ratios.
const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub checked: usize,
    pub pass: bool,
    /// Set when a perturbed loss was non-finite; names the parameter entry.
    pub failure: Option<String>,
}

/// Compares the tape gradient of `loss_fn` against central finite differences
/// for every scalar parameter of `model`.
///
/// `loss_fn` is re-run after every perturbation, so inputs it needs are
/// placed on the tape with [`Tape::constant`] rather than borrowed.
pub fn finite_diff_check<M, F>(model: &mut M, loss_fn: F, tolerance: f64) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = loss_fn(model, &mut tape)?;
        tape.backward(loss)?
    };
    finite_diff_compare(model, loss_fn, &analytic, tolerance)
}

/// The comparison half of [`finite_diff_check`], taking the analytic
/// gradients as an argument.
pub fn finite_diff_compare<M, F>(
    model: &mut M,
    loss_fn: F,
    analytic: &Gradients,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    if !(tolerance > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tolerance}")));
    }
    let mut layout: Vec<(String, usize)> = Vec::new();
    model.visit_params(&mut |name, m| layout.push((name.to_string(), m.len())));

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        checked: 0,
        pass: true,
        failure: None,
    };

    for (name, len) in &layout {
        let grad = analytic.get(name);
        for idx in 0..*len {
            let original = read_entry(model, name, idx);
            write_entry(model, name, idx, original + FD_EPSILON);
            let plus = eval_loss(model, &loss_fn);
            write_entry(model, name, idx, original - FD_EPSILON);
            let minus = eval_loss(model, &loss_fn);
            write_entry(model, name, idx, original);
            let (plus, minus) = (plus?, minus?);

            if !plus.is_finite() || !minus.is_finite() {
                report.pass = false;
                report.failure = Some(format!("{name}[{idx}]: non-finite loss"));
                return Ok(report);
            }
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            let exact = grad.map_or(0.0, |g| g.as_slice()[idx]);
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst_param = Some(format!("{name}[{idx}]"));
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}

fn eval_loss<M, F>(model: &M, loss_fn: &F) -> Result<f64>
where
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(model, &mut tape)?;
    Ok(tape.value(loss).get(0, 0))
}

fn read_entry<M: Parameterized>(model: &M, name: &str, idx: usize) -> f64 {
    let mut out = f64::NAN;
    model.visit_params(&mut |n, m: &Matrix| {
        if n == name {
            out = m.as_slice()[idx];
        }
    });
    out
}

fn write_entry<M: Parameterized>(model: &mut M, name: &str, idx: usize, value: f64) {
    model.visit_params_mut(&mut |n, m: &mut Matrix| {
        if n == name {
            m.as_mut_slice()[idx] = value;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Activation, LinearLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss_of<'a>(layer: &'a LinearLayer, x: &Matrix, tape: &mut Tape<'a>) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let y = crate::numcore::record_linear(layer, tape, "", xv)?;
        let y = tape.activate(y, Activation::GELU);
        let pooled = tape.mean_cols(y);
        tape.cross_entropy(pooled, 1)
    }

    #[test]
    fn single_linear_layer_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = LinearLayer::init_uniform(6, 3, &mut rng);
        let x = Matrix::random_normal(6, 4, &mut rng);
        let report = finite_diff_check(&mut layer, |l, t| loss_of(l, &x, t), 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.checked, 21);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = LinearLayer::init_uniform(6, 3, &mut rng);
        let x = Matrix::random_normal(6, 4, &mut rng);
        let mut grads = {
            let mut tape = Tape::new();
            let loss = loss_of(&layer, &x, &mut tape).unwrap();
            tape.backward(loss).unwrap()
        };
        grads.get_mut("weight").unwrap().as_mut_slice()[5] += 0.1;
        let report = finite_diff_compare(&mut layer, |l, t| loss_of(l, &x, t), &grads, 1e-4).unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst_param.as_deref(), Some("weight[5]"));
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        let mut layer = LinearLayer::zeros(1, 1);
        let x = Matrix::zeros(1, 1);
        let r = finite_diff_check(&mut layer, |l, t| loss_of(l, &x, t), 0.0);
        assert!(r.is_err());
    }
}
