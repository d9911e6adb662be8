use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Splits};
use super::metrics::{ConfusionMatrix, Metrics};
use super::optim::AdamW;
use super::schedule::Plateau;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelSpec};
use crate::numcore::{Gradients, Tape};

// Keeps the shuffling stream apart from the initialization stream.
const SHUFFLE_SALT: u64 = 0x5348_5546_464C_4531;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_delta: f64,
    /// Run seeds on separate threads. Each run stays sequential, so results
    /// do not depend on this flag.
    pub parallel_seeds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 1e-6,
            epochs: 120,
            batch_size: 32,
            seeds: vec![1, 2, 3, 4, 5],
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_delta: 1e-4,
            parallel_seeds: true,
        }
    }
}

impl TrainConfig {
    /// Defaults with the family's learning rate for this structure.
    pub fn for_model(config: &ModelConfig) -> Result<Self> {
        let family = crate::model::registry().get(&config.family)?;
        Ok(Self {
            lr0: family.default_lr(config.structure()),
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::invalid(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid(format!(
                "plateau_factor must be in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::invalid("weight_decay and min_delta must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be > 0"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub status: RunStatus,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Lowest-validation-loss parameters seen during the run.
    pub model: Model,
    pub test_confusion: ConfusionMatrix,
    pub test: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub best_epoch: usize,
    #[serde(flatten)]
    pub test: Metrics,
}

/// Per-seed test metrics and their mean over completed runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub rows: Vec<SeedRow>,
    pub mean: Option<Metrics>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub runs: Vec<SeedRun>,
}

impl TrainOutcome {
    pub fn summary(&self) -> TrainSummary {
        let rows = self
            .runs
            .iter()
            .map(|r| SeedRow {
                seed: r.seed,
                status: r.status.clone(),
                best_epoch: r.best_epoch,
                test: r.test,
            })
            .collect();
        let done: Vec<Metrics> = self
            .runs
            .iter()
            .filter(|r| r.status == RunStatus::Completed)
            .map(|r| r.test)
            .collect();
        TrainSummary {
            rows,
            mean: Metrics::mean(&done),
        }
    }

    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.status != RunStatus::Completed)
    }

    /// The completed run with the lowest best validation loss.
    pub fn best_run(&self) -> Option<&SeedRun> {
        self.runs
            .iter()
            .filter(|r| r.status == RunStatus::Completed)
            .min_by(|a, b| {
                let va = a.log[a.best_epoch].val_loss;
                let vb = b.log[b.best_epoch].val_loss;
                va.total_cmp(&vb)
            })
    }
}

/// Mean cross-entropy and confusion matrix of `model` over `data`.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, ConfusionMatrix)> {
    let mut cm = ConfusionMatrix::new(data.n_classes);
    let mut loss = 0.0;
    for ex in &data.examples {
        let mut tape = Tape::new();
        let x = tape.input(&ex.features);
        let logits = model.record(&mut tape, x)?;
        let l = tape.cross_entropy(logits, ex.label)?;
        loss += tape.value(l).get(0, 0);
        cm.record(ex.label, argmax(tape.value(logits).as_slice()));
    }
    Ok((loss / data.len().max(1) as f64, cm))
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains one model per seed on `data.train`, keeping the parameters with
/// the lowest validation loss (epoch 0 is the untrained model) and scoring
/// them on `data.test`.
pub fn train(spec: &ModelSpec, data: &Splits, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    spec.config.validate()?;
    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        if split.is_empty() {
            return Err(Error::invalid(format!("{name} split is empty")));
        }
        if split.feature_dim() != Some(spec.config.input_dim) || split.n_classes != spec.config.n_classes {
            return Err(Error::invalid(format!(
                "{name} split has {:?} feature rows and {} classes; model expects {} and {}",
                split.feature_dim(),
                split.n_classes,
                spec.config.input_dim,
                spec.config.n_classes
            )));
        }
    }
    let runs: Result<Vec<SeedRun>> = if config.parallel_seeds {
        config
            .seeds
            .par_iter()
            .map(|&s| train_seed(spec, data, config, s))
            .collect()
    } else {
        config.seeds.iter().map(|&s| train_seed(spec, data, config, s)).collect()
    };
    Ok(TrainOutcome { runs: runs? })
}

/// One independent run. Bitwise reproducible for fixed inputs.
pub fn train_seed(spec: &ModelSpec, data: &Splits, config: &TrainConfig, seed: u64) -> Result<SeedRun> {
    let mut model = spec.instantiate(seed)?;
    let mut opt = AdamW::new(config.weight_decay);
    let mut plateau = Plateau::new(config.plateau_patience, config.plateau_factor, config.min_delta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);

    let (train_loss, _) = evaluate(&model, &data.train)?;
    let (val_loss, val_cm) = evaluate(&model, &data.val)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        lr: config.lr0,
        train_loss,
        val_loss,
        metrics: val_cm.metrics()?,
    }];
    let mut lr = config.lr0 * plateau.observe(val_loss);
    let mut best = (0usize, val_loss, model.clone());
    let mut status = RunStatus::Completed;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let step = run_epoch(&mut model, &data.train, &order, config.batch_size, &mut opt, lr).and_then(|train_loss| {
            let (val_loss, val_cm) = evaluate(&model, &data.val)?;
            if !val_loss.is_finite() {
                return Err(Error::NonFinite("validation loss".into()));
            }
            Ok((train_loss, val_loss, val_cm))
        });
        match step {
            Ok((train_loss, val_loss, val_cm)) => {
                log.push(EpochRecord {
                    epoch,
                    lr,
                    train_loss,
                    val_loss,
                    metrics: val_cm.metrics()?,
                });
                log::debug!("seed {seed} epoch {epoch}: lr {lr:.3e} train {train_loss:.4} val {val_loss:.4}");
                if val_loss < best.1 {
                    best = (epoch, val_loss, model.clone());
                }
                lr = config.lr0 * plateau.observe(val_loss);
            }
            Err(e @ Error::NonFinite(_)) => {
                log::warn!("seed {seed} diverged at epoch {epoch}: {e}");
                status = RunStatus::Diverged {
                    epoch,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let (best_epoch, _, model) = best;
    let (_, test_confusion) = evaluate(&model, &data.test)?;
    Ok(SeedRun {
        seed,
        status,
        best_epoch,
        log,
        test: test_confusion.metrics()?,
        model,
        test_confusion,
    })
}

fn run_epoch(
    model: &mut Model,
    train: &Dataset,
    order: &[usize],
    batch_size: usize,
    opt: &mut AdamW,
    lr: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in order.chunks(batch_size) {
        let mut grads = Gradients::default();
        for &i in batch {
            let ex = &train.examples[i];
            let mut tape = Tape::new();
            let x = tape.input(&ex.features);
            let logits = model.record(&mut tape, x)?;
            let loss = tape.cross_entropy(logits, ex.label)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss on example {i}")));
            }
            total += value;
            grads.accumulate(tape.backward(loss)?);
        }
        grads.scale(1.0 / batch.len() as f64);
        opt.step(model, &grads, lr)?;
    }
    Ok(total / order.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainkit::{synth_dataset, SyntheticTask};

    fn small() -> (ModelSpec, Splits) {
        let task = SyntheticTask::new(4, 10).unwrap().with_frames(12);
        let data = synth_dataset(&task, 0).unwrap();
        let config = ModelConfig::lightweight("ConvTransformer", 4).unwrap();
        (ModelSpec::new(config, None), data)
    }

    #[test]
    fn zero_epochs_only_evaluates() {
        let (spec, data) = small();
        let cfg = TrainConfig {
            epochs: 0,
            seeds: vec![3],
            ..TrainConfig::default()
        };
        let out = train(&spec, &data, &cfg).unwrap();
        let run = &out.runs[0];
        assert_eq!(run.log.len(), 1);
        assert_eq!(run.best_epoch, 0);
        assert_eq!(run.model.forward(&data.test.examples[0].features).unwrap(),
            spec.instantiate(3).unwrap().forward(&data.test.examples[0].features).unwrap());
    }

    #[test]
    fn five_seeds_five_rows_and_a_mean() {
        let (spec, data) = small();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let summary = train(&spec, &data, &cfg).unwrap().summary();
        assert_eq!(summary.rows.len(), 5);
        assert!(summary.mean.is_some());
        let json = serde_json::to_value(&summary.rows[0]).unwrap();
        for key in ["seed", "status", "best_epoch", "WA", "UA", "WF1", "MF1"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn runs_are_reproducible_and_thread_independent() {
        let (spec, data) = small();
        let cfg = TrainConfig {
            epochs: 2,
            seeds: vec![1, 2],
            ..TrainConfig::default()
        };
        let a = train(&spec, &data, &cfg).unwrap();
        let b = train(&spec, &data, &TrainConfig { parallel_seeds: false, ..cfg }).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.log, y.log);
            assert_eq!(x.model.layer_signature(), y.model.layer_signature());
            assert_eq!(x.test_confusion, y.test_confusion);
        }
    }

    #[test]
    fn log_records_have_the_expected_keys() {
        let (spec, data) = small();
        let cfg = TrainConfig {
            epochs: 1,
            seeds: vec![1],
            ..TrainConfig::default()
        };
        let out = train(&spec, &data, &cfg).unwrap();
        let v = serde_json::to_value(&out.runs[0].log[1]).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["MF1", "UA", "WA", "WF1", "epoch", "lr", "train_loss", "val_loss"]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let (spec, data) = small();
        for bad in [
            TrainConfig { lr0: 0.0, ..TrainConfig::default() },
            TrainConfig { plateau_factor: 1.0, ..TrainConfig::default() },
            TrainConfig { seeds: vec![], ..TrainConfig::default() },
        ] {
            assert!(train(&spec, &data, &bad).is_err());
        }
    }

    #[test]
    fn huge_learning_rate_is_reported_as_divergence() {
        let (spec, data) = small();
        let cfg = TrainConfig {
            lr0: 1e200,
            epochs: 3,
            seeds: vec![1],
            ..TrainConfig::default()
        };
        let out = train(&spec, &data, &cfg).unwrap();
        assert!(out.any_diverged(), "{:?}", out.runs[0].status);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
    }
}
