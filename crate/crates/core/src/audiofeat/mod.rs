//! Speech front end: 26 log Mel filterbank energies with first and second
//! temporal derivatives, giving 78 rows per 10 ms frame.
//!
//! Frozen conventions: 25 ms Hamming window, 10 ms hop, 512-point FFT
//! magnitude, Mel scale `2595 log10(1 + f / 700)` over `[0, sr / 2]`, natural
//! log floored at `1e-10`, derivative window `K = 2` with edge replication.
//! No normalization is applied unless [`zscore_rows`] is called explicitly.

mod filterbank;
mod io;

pub use filterbank::{
    hz_to_mel, lmfb, mel_to_hz, Framing, MelFilterbank, DEFAULT_FILTERS, DEFAULT_HOP_MS, DEFAULT_WIN_MS, LOG_FLOOR,
    MIN_FFT_SIZE,
};
pub use io::{read_feature_csv, read_wav, save_feature_csv, write_feature_csv, write_wav};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// `3 x DEFAULT_FILTERS`.
pub const FEATURE_DIM: usize = 78;
pub const DELTA_WINDOW: usize = 2;
/// Segment lengths in seconds used for the emotion and depression corpora.
pub const SEGMENT_SECONDS: [f64; 3] = [5.0, 4.0, 10.0];

#[derive(Clone, Debug, PartialEq)]
pub struct WaveClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A fixed-length utterance's features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSegment {
    /// `78 x T`.
    pub frames: Matrix,
    pub seconds: f64,
    /// Trailing frames that lie entirely inside the zero fill.
    pub pad_frames: usize,
}

/// Stacks `[f; Δf; ΔΔf]` where
/// `Δf_t = Σ_{k=1..2} k (f_{t+k} - f_{t-k}) / (2 Σ k²)` and out-of-range
/// frames are replaced by the nearest edge frame.
pub fn deltas(feat: &Matrix) -> Result<Matrix> {
    const MIN_FRAMES: usize = 2 * DELTA_WINDOW + 1;
    if feat.cols() < MIN_FRAMES {
        return Err(Error::invalid(format!(
            "derivatives need at least {MIN_FRAMES} frames, got {}",
            feat.cols()
        )));
    }
    let d1 = delta(feat);
    let d2 = delta(&d1);
    let (n, t) = feat.shape();
    let mut data = Vec::with_capacity(3 * n * t);
    for m in [feat, &d1, &d2] {
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_vec(3 * n, t, data)
}

fn delta(feat: &Matrix) -> Matrix {
    let (n, t) = feat.shape();
    let k = DELTA_WINDOW as isize;
    let denom = 2.0 * (1..=k).map(|i| (i * i) as f64).sum::<f64>();
    let last = t as isize - 1;
    let mut out = Matrix::zeros(n, t);
    for r in 0..n {
        let row = feat.row(r);
        for c in 0..t as isize {
            let at = |j: isize| row[j.clamp(0, last) as usize];
            let num: f64 = (1..=k).map(|i| i as f64 * (at(c + i) - at(c - i))).sum();
            out.set(r, c as usize, num / denom);
        }
    }
    out
}

/// 78-row features with the default filterbank geometry.
pub fn features(clip: &WaveClip) -> Result<Matrix> {
    deltas(&lmfb(clip, DEFAULT_FILTERS, DEFAULT_WIN_MS, DEFAULT_HOP_MS)?)
}

/// Truncates or zero-pads the clip to `seconds` before extracting features.
pub fn segment(clip: &WaveClip, seconds: f64) -> Result<FeatureSegment> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::invalid(format!("segment length must be positive, got {seconds}")));
    }
    let target = (seconds * clip.sample_rate as f64).round() as usize;
    let kept = clip.samples.len().min(target);
    let mut samples = clip.samples[..kept].to_vec();
    samples.resize(target, 0.0);
    let fitted = WaveClip::new(samples, clip.sample_rate)?;
    let frames = features(&fitted)?;

    let framing = Framing::new(clip.sample_rate, DEFAULT_WIN_MS, DEFAULT_HOP_MS)?;
    let t = frames.cols();
    let pad_frames = if kept < target {
        t - t.min(kept.div_ceil(framing.hop))
    } else {
        0
    };
    Ok(FeatureSegment {
        frames,
        seconds,
        pad_frames,
    })
}

/// Per-row zero mean, unit variance; constant rows become zero.
pub fn zscore_rows(feat: &Matrix) -> Matrix {
    let (n, t) = feat.shape();
    let mut out = Matrix::zeros(n, t);
    for r in 0..n {
        let row = feat.row(r);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let sd = var.sqrt();
        for (c, v) in row.iter().enumerate() {
            out.set(r, c, if sd > 0.0 { (v - mean) / sd } else { 0.0 });
        }
    }
    out
}
