use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audiofeat::{read_feature_csv, read_wav, segment, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// One utterance: `feature_dim x T` frames and a class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Matrix,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, n_classes: usize) -> Result<Self> {
        if let Some(e) = examples.iter().find(|e| e.label >= n_classes) {
            return Err(Error::invalid(format!("label {} outside {n_classes} classes", e.label)));
        }
        if let Some(first) = examples.first() {
            let rows = first.features.rows();
            if examples.iter().any(|e| e.features.rows() != rows) {
                return Err(Error::invalid("examples disagree on feature dimension"));
            }
        }
        Ok(Self { examples, n_classes })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.rows())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for e in &self.examples {
            h[e.label] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub const SPLIT_FRACTIONS: (f64, f64) = (0.70, 0.15);

/// Per-class shuffle, then 70 / 15 / 15 (rounded, test takes the remainder).
pub fn stratified_split(data: Dataset, seed: u64) -> Splits {
    let n = data.n_classes;
    let mut by_class: Vec<Vec<Example>> = vec![Vec::new(); n];
    for e in data.examples {
        by_class[e.label].push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut class in by_class {
        class.shuffle(&mut rng);
        let len = class.len();
        let n_train = ((len as f64) * SPLIT_FRACTIONS.0).round() as usize;
        let n_val = (((len as f64) * SPLIT_FRACTIONS.1).round() as usize).min(len - n_train);
        let rest = class.split_off(n_train);
        let (v, t) = rest.split_at(n_val);
        train.extend(class);
        val.extend_from_slice(v);
        test.extend_from_slice(t);
    }
    let ds = |examples| Dataset { examples, n_classes: n };
    Splits {
        train: ds(train),
        val: ds(val),
        test: ds(test),
    }
}

/// Reads a manifest whose lines are `path,label`; each path names a feature
/// CSV (one frame per line) relative to the manifest's directory. A first
/// line whose label does not parse is taken as a header.
pub fn load_feature_manifest(manifest: impl AsRef<Path>, n_classes: usize) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (path, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::invalid(format!("{}:{}: expected `path,label`", manifest.display(), i + 1)))?;
        let label = match label.trim().parse::<usize>() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::invalid(format!("{}:{}: {e}", manifest.display(), i + 1))),
        };
        let features = read_feature_csv(base.join(path.trim()))?;
        examples.push(Example { features, label });
    }
    Dataset::new(examples, n_classes)
}

/// WAV directory layout: one sub-directory per class, classes numbered in
/// sorted name order. Each clip is cut or zero-padded to `seconds`.
pub fn load_wav_tree(root: impl AsRef<Path>, seconds: f64) -> Result<(Dataset, Vec<String>)> {
    let root = root.as_ref();
    let mut classes: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::invalid(format!("{}: no class sub-directories", root.display())));
    }
    let mut examples = Vec::new();
    let mut names = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for path in wav_files(dir)? {
            let clip = read_wav(&path, DEFAULT_SAMPLE_RATE)?;
            let seg = segment(&clip, seconds)?;
            examples.push(Example {
                features: seg.frames,
                label,
            });
        }
    }
    Ok((Dataset::new(examples, classes.len())?, names))
}

/// `*.wav` files directly inside `dir`, sorted by path.
pub fn wav_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}
