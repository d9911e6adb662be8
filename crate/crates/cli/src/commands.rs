use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use reparam_core::audiofeat::{read_wav, segment, write_feature_csv, zscore_rows, DEFAULT_SAMPLE_RATE};
use reparam_core::checkpoint::{load_model, save_model, Container};
use reparam_core::model::Model;
use reparam_core::reparam::{dehrf_model, dehrf_with_report, max_logit_diff, MergeReport, PROBE_SEED};
use reparam_core::trainkit::{train, wav_files, Metrics, RunStatus, SeedRow, DEFAULT_FRAMES};

use crate::error::{CliError, Result, EXIT_NUMERIC, EXIT_OK};
use crate::runspec::RunSpec;

pub const CHECKPOINT_FILE: &str = "checkpoint.rptf";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOG_DIR: &str = "logs";
pub const INDEX_FILE: &str = "index.csv";
/// Frames per random probe utterance in merge and verify.
pub const PROBE_FRAMES: usize = DEFAULT_FRAMES;
/// Reloaded checkpoints hold 32-bit values, so the default comparison
/// tolerance is loose enough to absorb storage rounding.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Written to `summary.json` and printed by `train`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub family: String,
    pub plan: Option<String>,
    pub rows: Vec<SeedRow>,
    pub mean: Option<Metrics>,
    pub best_seed: Option<u64>,
    pub train_params: usize,
    pub merged_params: usize,
}

impl TrainReport {
    pub fn diverged(&self) -> Vec<&SeedRow> {
        self.rows.iter().filter(|r| r.status != RunStatus::Completed).collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.diverged().is_empty() {
            EXIT_OK
        } else {
            EXIT_NUMERIC
        }
    }
}

/// Trains every seed and writes `checkpoint.rptf` (best seed, expanded if
/// the spec has a plan), `logs/seed-{s}.jsonl` and `summary.json` under
/// `out`.
pub fn cmd_train(spec: &RunSpec, out: &Path) -> Result<TrainReport> {
    let data = spec.data.load()?;
    let model_spec = spec.model_spec();
    let outcome = train(&model_spec, &data, &spec.train)?;

    fs::create_dir_all(out.join(LOG_DIR))?;
    for run in &outcome.runs {
        let mut f = fs::File::create(out.join(LOG_DIR).join(format!("seed-{}.jsonl", run.seed)))?;
        for rec in &run.log {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n")?;
        }
    }

    let best = outcome.best_run();
    let fresh;
    let reference: &Model = match best {
        Some(run) => {
            save_model(&run.model, out.join(CHECKPOINT_FILE))?;
            &run.model
        }
        None => {
            fresh = model_spec.instantiate(0)?;
            &fresh
        }
    };
    let summary = outcome.summary();
    let report = TrainReport {
        family: spec.model.family.clone(),
        plan: spec.hrf.as_ref().map(|p| p.label()),
        rows: summary.rows,
        mean: summary.mean,
        best_seed: best.map(|r| r.seed),
        train_params: reference.param_count(),
        merged_params: dehrf_model(reference).param_count(),
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&report)?)?;
    for row in report.diverged() {
        if let RunStatus::Diverged { epoch, reason } = &row.status {
            log::error!("seed {} diverged at epoch {epoch}: {reason}", row.seed);
        }
    }
    Ok(report)
}

/// Merges every chain of the checkpoint at `input` and saves the result to
/// `output`. The report compares the two models in memory, before the
/// merged weights are rounded to 32 bits on save.
pub fn cmd_merge(input: &Path, output: &Path, probes: usize) -> Result<MergeReport> {
    let model = load_model(input)?;
    let (merged, report) = dehrf_with_report(&model, probes, PROBE_FRAMES, PROBE_SEED)?;
    if !report.max_abs_output_diff.is_finite() {
        return Err(CliError::Numeric(format!(
            "merged logits differ by {}",
            report.max_abs_output_diff
        )));
    }
    save_model(&merged, output)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub probes: usize,
    pub pass: bool,
}

impl VerifyReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_NUMERIC
        }
    }
}

pub fn cmd_verify(a: &Path, b: &Path, probes: usize, tolerance: f64) -> Result<VerifyReport> {
    if !(tolerance >= 0.0) {
        return Err(CliError::usage(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let ma = load_model(a)?;
    let mb = load_model(b)?;
    let (ca, cb) = (ma.config(), mb.config());
    if ca.input_dim != cb.input_dim || ca.n_classes != cb.n_classes {
        return Err(CliError::usage(format!(
            "models map {}->{} and {}->{}",
            ca.input_dim, ca.n_classes, cb.input_dim, cb.n_classes
        )));
    }
    let max_abs_diff = max_logit_diff(&ma, &mb, probes, PROBE_FRAMES, PROBE_SEED)?;
    Ok(VerifyReport {
        max_abs_diff,
        tolerance,
        probes,
        pass: max_abs_diff <= tolerance,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum FeatureFormat {
    #[default]
    Csv,
    Rptf,
}

impl FeatureFormat {
    fn extension(self) -> &'static str {
        match self {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Rptf => "rptf",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeaturesReport {
    pub written: usize,
    pub skipped: Vec<String>,
    pub index: PathBuf,
}

/// Extracts fixed-length features for every WAV under `wav_dir`. Files at
/// the top level get label 0; each sub-directory is a class, numbered in
/// sorted order, and its files go to a sub-directory of `out_dir` with the
/// same name. `index.csv` lists `path,label` relative to `out_dir`, so it
/// works directly as a feature manifest.
pub fn cmd_features(
    wav_dir: &Path,
    out_dir: &Path,
    seconds: f64,
    format: FeatureFormat,
    zscore: bool,
) -> Result<FeaturesReport> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(CliError::usage(format!("seconds must be > 0, got {seconds}")));
    }
    if !wav_dir.is_dir() {
        return Err(CliError::usage(format!("{} is not a directory", wav_dir.display())));
    }
    let mut groups: Vec<(Option<String>, Vec<PathBuf>)> = vec![(None, wav_files(wav_dir)?)];
    let mut classes: Vec<PathBuf> = fs::read_dir(wav_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    for dir in classes {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        groups.push((Some(name), wav_files(&dir)?));
    }
    let total: usize = groups.iter().map(|(_, f)| f.len()).sum();
    if total == 0 {
        return Err(CliError::usage(format!("no .wav files in {}", wav_dir.display())));
    }

    fs::create_dir_all(out_dir)?;
    let mut index = String::from("path,label\n");
    let mut written = 0;
    let mut skipped = Vec::new();
    let mut label = 0;
    for (class, files) in &groups {
        if files.is_empty() {
            continue;
        }
        let sub = class.as_deref().unwrap_or("");
        if !sub.is_empty() {
            fs::create_dir_all(out_dir.join(sub))?;
        }
        for path in files {
            match extract_one(path, seconds, zscore) {
                Ok((feat, pad_frames)) => {
                    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                    let rel = Path::new(sub).join(format!("{stem}.{}", format.extension()));
                    let dest = out_dir.join(&rel);
                    match format {
                        FeatureFormat::Csv => write_feature_csv(fs::File::create(&dest)?, &feat)?,
                        FeatureFormat::Rptf => {
                            let mut c = Container::new(json!({
                                "kind": "features",
                                "seconds": seconds,
                                "pad_frames": pad_frames,
                                "zscore": zscore,
                            }));
                            c.push("features", feat);
                            c.save(&dest)?;
                        }
                    }
                    index.push_str(&format!("{},{label}\n", rel.to_string_lossy().replace('\\', "/")));
                    written += 1;
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push(path.display().to_string());
                }
            }
        }
        label += 1;
    }
    if written == 0 {
        return Err(CliError::usage(format!("all {total} files in {} failed", wav_dir.display())));
    }
    let index_path = out_dir.join(INDEX_FILE);
    fs::write(&index_path, index)?;
    Ok(FeaturesReport {
        written,
        skipped,
        index: index_path,
    })
}

fn extract_one(path: &Path, seconds: f64, zscore: bool) -> reparam_core::Result<(reparam_core::numcore::Matrix, usize)> {
    let clip = read_wav(path, DEFAULT_SAMPLE_RATE)?;
    let seg = segment(&clip, seconds)?;
    let feat = if zscore { zscore_rows(&seg.frames) } else { seg.frames };
    Ok((feat, seg.pad_frames))
}

