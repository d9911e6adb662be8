//! Ablation grids. Each axis turns a base run spec into labelled grid
//! points; every point is trained, merged per seed and scored on the test
//! split.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use reparam_core::model::{registry, ModelConfig, ModelSpec, ModuleSelector};
use reparam_core::numcore::Activation;
use reparam_core::reparam::{dehrf_model, HrfPlan};
use reparam_core::trainkit::{evaluate, metrics, train, Metrics, RunStatus, Splits, TrainConfig};

use crate::error::{CliError, Result};
use crate::runspec::{validate_plan, RunSpec};

pub const THREADS_ENV: &str = "REPARAM_THREADS";
pub const RATIOS: [usize; 4] = [0, 2, 4, 8];
pub const DEPTHS: [usize; 3] = [1, 2, 3];

/// One configuration on an axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub value: String,
    pub model: ModelConfig,
    pub plan: Option<HrfPlan>,
}

pub trait SweepAxis: Send + Sync {
    fn name(&self) -> &'static str;

    fn points(&self, base: &RunSpec) -> Result<Vec<GridPoint>>;
}

/// The plan a sweep varies when the spec has none: FFN2 at ratio 8, one
/// inserted layer.
pub fn default_plan() -> HrfPlan {
    HrfPlan::new([ModuleSelector::FFN2], 8, 1)
}

fn base_plan(base: &RunSpec) -> HrfPlan {
    base.hrf.clone().unwrap_or_else(default_plan)
}

struct RatioAxis;

impl SweepAxis for RatioAxis {
    fn name(&self) -> &'static str {
        "ratio"
    }

    /// Ratio 0 is the plain model.
    fn points(&self, base: &RunSpec) -> Result<Vec<GridPoint>> {
        let plan = base_plan(base);
        Ok(RATIOS
            .iter()
            .map(|&r| GridPoint {
                value: r.to_string(),
                model: base.model.clone(),
                plan: (r > 0).then(|| HrfPlan { ratio: r, ..plan.clone() }),
            })
            .collect())
    }
}

struct DepthAxis;

impl SweepAxis for DepthAxis {
    fn name(&self) -> &'static str {
        "depth"
    }

    fn points(&self, base: &RunSpec) -> Result<Vec<GridPoint>> {
        let plan = base_plan(base);
        Ok(DEPTHS
            .iter()
            .map(|&d| GridPoint {
                value: d.to_string(),
                model: base.model.clone(),
                plan: Some(HrfPlan { depth: d, ..plan.clone() }),
            })
            .collect())
    }
}

struct ActivationAxis;

impl SweepAxis for ActivationAxis {
    fn name(&self) -> &'static str {
        "activation"
    }

    /// Keeps the spec's plan, which may be empty.
    fn points(&self, base: &RunSpec) -> Result<Vec<GridPoint>> {
        Ok(Activation::ABLATION
            .iter()
            .map(|&a| GridPoint {
                value: format!("{a:?}"),
                model: ModelConfig {
                    activation: a,
                    ..base.model.clone()
                },
                plan: base.hrf.clone(),
            })
            .collect())
    }
}

struct SelectorAxis;

impl SweepAxis for SelectorAxis {
    fn name(&self) -> &'static str {
        "selector"
    }

    /// Each of the family's selectors alone, then FFN1+FFN2, then ALL.
    fn points(&self, base: &RunSpec) -> Result<Vec<GridPoint>> {
        let plan = base_plan(base);
        let family = registry().get(&base.model.family)?;
        let mut sets: Vec<Vec<ModuleSelector>> = family.selectors().iter().map(|&s| vec![s]).collect();
        sets.push(vec![ModuleSelector::FFN1, ModuleSelector::FFN2]);
        sets.push(vec![ModuleSelector::ALL]);
        Ok(sets
            .into_iter()
            .map(|set| {
                let p = HrfPlan::new(set, plan.ratio, plan.depth);
                GridPoint {
                    value: p.label(),
                    model: base.model.clone(),
                    plan: Some(p),
                }
            })
            .collect())
    }
}

static AXES: [&dyn SweepAxis; 4] = [&RatioAxis, &DepthAxis, &ActivationAxis, &SelectorAxis];

pub fn axes() -> &'static [&'static dyn SweepAxis] {
    &AXES
}

pub fn axis(name: &str) -> Result<&'static dyn SweepAxis> {
    axes()
        .iter()
        .copied()
        .find(|a| a.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            let known: Vec<&str> = axes().iter().map(|a| a.name()).collect();
            CliError::usage(format!("unknown axis {name:?}; expected one of {}", known.join(", ")))
        })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    #[serde(flatten)]
    pub metrics: Option<Metrics>,
    pub train_params: usize,
    pub merged_params: usize,
    pub diverged_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub csv: PathBuf,
}

impl SweepReport {
    pub fn any_diverged(&self) -> bool {
        self.rows.iter().any(|r| !r.diverged_seeds.is_empty())
    }
}

pub const CSV_HEADER: &str = "axis,value,WA,UA,WF1,MF1,train_params,merged_params";

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let m = r.metrics.map(|m| [m.wa, m.ua, m.wf1, m.mf1]).unwrap_or([f64::NAN; 4]);
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.axis, r.value, m[0], m[1], m[2], m[3], r.train_params, r.merged_params
        );
    }
    out
}

/// Worker count from `REPARAM_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Trains every seed of one grid point, merges each seed's best model and
/// averages the merged models' test metrics over completed seeds.
pub fn run_point(axis: &str, point: &GridPoint, data: &Splits, train_cfg: &TrainConfig) -> Result<SweepRow> {
    let spec = ModelSpec::new(point.model.clone(), point.plan.clone());
    let cfg = TrainConfig {
        parallel_seeds: false,
        ..train_cfg.clone()
    };
    let outcome = train(&spec, data, &cfg)?;
    let mut scores = Vec::new();
    let mut diverged = Vec::new();
    for run in &outcome.runs {
        if run.status != RunStatus::Completed {
            diverged.push(run.seed);
            continue;
        }
        let merged = dehrf_model(&run.model);
        let (_, cm) = evaluate(&merged, &data.test)?;
        scores.push(metrics(&cm)?);
    }
    let expanded = spec.instantiate(0)?;
    Ok(SweepRow {
        axis: axis.to_string(),
        value: point.value.clone(),
        metrics: Metrics::mean(&scores),
        train_params: expanded.param_count(),
        merged_params: dehrf_model(&expanded).param_count(),
        diverged_seeds: diverged,
    })
}

/// Runs every grid point of `axis_name` and writes `sweep_{axis}.csv` to
/// `out`. Points run on a thread pool capped by `REPARAM_THREADS`.
pub fn cmd_sweep(base: &RunSpec, axis_name: &str, out: &Path) -> Result<SweepReport> {
    let axis = axis(axis_name)?;
    let points = axis.points(base)?;
    for p in &points {
        p.model.validate().map_err(|e| CliError::usage(format!("{}={}: {e}", axis.name(), p.value)))?;
        if let Some(plan) = &p.plan {
            validate_plan(&p.model, plan)?;
        }
    }
    let data = base.data.load()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    let rows: Result<Vec<SweepRow>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                log::info!("{}={}: training", axis.name(), p.value);
                run_point(axis.name(), p, &data, &base.train)
            })
            .collect()
    });
    let rows = rows?;

    fs::create_dir_all(out)?;
    let csv = out.join(format!("sweep_{}.csv", axis.name()));
    fs::write(&csv, to_csv(&rows))?;
    Ok(SweepReport { rows, csv })
}
