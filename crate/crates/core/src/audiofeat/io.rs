use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::WaveClip;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

const I16_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono WAV file, scaling samples to `[-1, 1)`.
///
/// Files at any rate other than `expected_rate` are rejected; there is no
/// resampling.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<WaveClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::invalid(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s), {}-bit {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::invalid(format!(
            "{}: sample rate {} Hz, expected {expected_rate} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / I16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    WaveClip::new(samples, spec.sample_rate)
}

/// Writes a clip as 16-bit PCM mono, clamping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &WaveClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        let v = (s * I16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

/// One frame per line, each a comma-separated column of `features`.
pub fn write_feature_csv<W: Write>(out: W, features: &Matrix) -> Result<()> {
    let mut out = BufWriter::new(out);
    for t in 0..features.cols() {
        let line = features
            .col_vec(t)
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_feature_csv(path: impl AsRef<Path>, features: &Matrix) -> Result<()> {
    write_feature_csv(File::create(path)?, features)
}

/// Inverse of [`write_feature_csv`]: one frame per non-empty line.
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let Some(first) = columns.first() {
            if first.len() != frame.len() {
                return Err(Error::invalid(format!(
                    "{}:{}: {} values, previous lines have {}",
                    path.display(),
                    i + 1,
                    frame.len(),
                    first.len()
                )));
            }
        }
        columns.push(frame);
    }
    if columns.is_empty() {
        return Err(Error::invalid(format!("{}: no frames", path.display())));
    }
    Ok(Matrix::from_rows(&columns)?.transpose())
}
