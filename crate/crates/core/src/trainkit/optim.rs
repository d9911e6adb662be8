use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::{Gradients, Matrix, Parameterized};

/// AdamW with decoupled weight decay, applied before the moment update.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter of `model`. Parameters without a
    /// gradient entry are treated as having a zero gradient.
    ///
    /// The whole step is rejected, leaving `model` untouched, if any gradient
    /// is non-finite or mis-shaped.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M, grads: &Gradients, lr: f64) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let mut bad_shape = None;
        model.visit_params(&mut |name, p| {
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() && bad_shape.is_none() {
                    bad_shape = Some(format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape()));
                }
            }
        });
        if let Some(detail) = bad_shape {
            return Err(Error::shape("AdamW::step", detail));
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |name, p| {
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())));
            let g = grads.get(name).map(Matrix::as_slice);
            let (p, m, v) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                p[i] -= lr * wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        });
        Ok(())
    }
}
