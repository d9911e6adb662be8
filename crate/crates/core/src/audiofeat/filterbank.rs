use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::WaveClip;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const DEFAULT_FILTERS: usize = 26;
pub const DEFAULT_WIN_MS: f64 = 25.0;
pub const DEFAULT_HOP_MS: f64 = 10.0;
/// Smallest FFT length; longer windows round up to the next power of two.
pub const MIN_FFT_SIZE: usize = 512;
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Frame geometry in samples for a given rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Framing {
    pub win: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Framing {
    pub fn new(sample_rate: u32, win_ms: f64, hop_ms: f64) -> Result<Self> {
        let win = (sample_rate as f64 * win_ms / 1000.0).round() as usize;
        let hop = (sample_rate as f64 * hop_ms / 1000.0).round() as usize;
        if win == 0 || hop == 0 {
            return Err(Error::invalid(format!(
                "window {win_ms} ms / hop {hop_ms} ms is empty at {sample_rate} Hz"
            )));
        }
        Ok(Self {
            win,
            hop,
            fft_size: win.next_power_of_two().max(MIN_FFT_SIZE),
        })
    }

    /// `floor((len - win) / hop) + 1`, or `None` when the signal is shorter
    /// than one window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.win).then(|| (len - self.win) / self.hop + 1)
    }
}

/// Triangular filters with peak 1, edges equally spaced on the Mel scale over
/// `[0, sample_rate / 2]`, evaluated at each FFT bin's exact frequency.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_filters + 2` edge frequencies in Hz; filter `k` peaks at `edges[k + 1]`.
    edges: Vec<f64>,
    /// `n_filters x (fft_size / 2 + 1)`.
    weights: Matrix,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, sample_rate: u32, fft_size: usize) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::invalid("filterbank needs at least one filter"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
            .collect();
        let bins = fft_size / 2 + 1;
        let mut weights = Matrix::zeros(n_filters, bins);
        for k in 0..n_filters {
            let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            for b in 0..bins {
                let f = b as f64 * sample_rate as f64 / fft_size as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights.set(k, b, w);
            }
        }
        Ok(Self { edges, weights })
    }

    pub fn n_filters(&self) -> usize {
        self.weights.rows()
    }

    pub fn centers(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Log Mel filterbank energies, `n_filters x T`.
///
/// Each frame is Hamming-windowed, zero-padded to the FFT length, reduced to
/// its magnitude spectrum, projected on the filterbank and passed through
/// `ln(max(e, 1e-10))`.
pub fn lmfb(clip: &WaveClip, n_filters: usize, win_ms: f64, hop_ms: f64) -> Result<Matrix> {
    let framing = Framing::new(clip.sample_rate, win_ms, hop_ms)?;
    let frames = framing.frame_count(clip.samples.len()).ok_or_else(|| {
        Error::invalid(format!(
            "clip of {} samples is shorter than one {}-sample window",
            clip.samples.len(),
            framing.win
        ))
    })?;
    let bank = MelFilterbank::new(n_filters, clip.sample_rate, framing.fft_size)?;
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(framing.fft_size);
    let window = hamming(framing.win);
    let bins = framing.fft_size / 2 + 1;

    let mut out = Matrix::zeros(n_filters, frames);
    let mut buf = vec![Complex::new(0.0, 0.0); framing.fft_size];
    let mut mag = vec![0.0; bins];
    for t in 0..frames {
        let start = t * framing.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let re = if i < framing.win {
                clip.samples[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(re, 0.0);
        }
        fft.process(&mut buf);
        for (m, c) in mag.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        for k in 0..n_filters {
            let energy: f64 = bank.weights.row(k).iter().zip(&mag).map(|(w, m)| w * m).sum();
            out.set(k, t, energy.max(LOG_FLOOR).ln());
        }
    }
    Ok(out)
}
