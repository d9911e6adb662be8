/// Halves (by default) the learning rate when the monitored loss stops
/// improving.
///
/// The first observed loss only sets the reference. A later loss counts as an
/// improvement when it is below `best - min_delta`; after `patience`
/// consecutive non-improving observations the multiplier is scaled by
/// `factor` and the counter restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    best: Option<f64>,
    stale: usize,
    multiplier: f64,
}

impl Plateau {
    pub fn new(patience: usize, factor: f64, min_delta: f64) -> Self {
        Self {
            patience,
            factor,
            min_delta,
            best: None,
            stale: 0,
            multiplier: 1.0,
        }
    }

    /// Records one epoch's loss and returns the updated multiplier.
    pub fn observe(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(best) if loss < best - self.min_delta => {
                self.best = Some(loss);
                self.stale = 0;
            }
            Some(_) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.multiplier *= self.factor;
                    self.stale = 0;
                }
            }
            None => self.best = Some(loss),
        }
        self.multiplier
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }
}

/// Multiplier after replaying `history` through a fresh [`Plateau`].
pub fn plateau_schedule(history: &[f64], patience: usize, factor: f64, min_delta: f64) -> f64 {
    let mut p = Plateau::new(patience, factor, min_delta);
    for &loss in history {
        p.observe(loss);
    }
    p.multiplier()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decreasing_losses_keep_the_rate() {
        let h: Vec<f64> = (0..50).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert_eq!(plateau_schedule(&h, 5, 0.5, 1e-4), 1.0);
    }

    #[test]
    fn flat_losses_halve_every_patience_epochs() {
        let mut p = Plateau::new(5, 0.5, 1e-4);
        let trace: Vec<f64> = (0..=11).map(|_| p.observe(1.0)).collect();
        // index = epoch; epoch 0 sets the reference
        assert_eq!(&trace[..5], &[1.0; 5]);
        assert_eq!(&trace[5..10], &[0.5; 5]);
        assert_eq!(&trace[10..], &[0.25; 2]);
        assert_eq!(1e-3 * 0.5, 5e-4);
    }

    #[test]
    fn improvements_smaller_than_min_delta_do_not_count() {
        let h: Vec<f64> = (0..6).map(|i| 1.0 - i as f64 * 1e-5).collect();
        assert_eq!(plateau_schedule(&h, 5, 0.5, 1e-4), 0.5);
    }

    proptest! {
        #[test]
        fn multiplier_is_a_power_of_factor(h in prop::collection::vec(0.0f64..2.0, 0..60), patience in 1usize..8) {
            let m = plateau_schedule(&h, patience, 0.5, 1e-4);
            let k = (-m.log2()).round();
            prop_assert_eq!(m, 0.5f64.powi(k as i32));
            prop_assert!(k as usize <= h.len().saturating_sub(1) / patience);
        }
    }
}
