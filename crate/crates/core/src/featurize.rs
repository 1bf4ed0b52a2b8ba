//! Raw signal to fixed-length binned feature conversion.
//!
//! Audio becomes a power mel spectrogram (Hann window, no padding, HTK mel
//! scale) summarised by a 10x10 spectro-temporal histogram. Joint effort and
//! end-effector force are averaged over 10 equal temporal bins per channel.

use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{read_feature_csv, Modality, FREQUENCY_BINS, TEMPORAL_BINS};
use crate::error::{Error, Result};

pub const FFT_WINDOW: usize = 1024;
pub const HOP_LENGTH: usize = 512;
pub const MEL_BANDS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    AudioWave,
    JointEffort,
    EndpointForce,
}

impl SignalKind {
    pub fn modality(self) -> Modality {
        match self {
            SignalKind::AudioWave => Modality::Audio,
            SignalKind::JointEffort => Modality::Effort,
            SignalKind::EndpointForce => Modality::Force,
        }
    }
}

/// A recorded signal, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub kind: SignalKind,
    /// Hz; required for audio.
    pub sample_rate: Option<f64>,
    pub channels: Vec<Vec<f64>>,
}

impl RawSignal {
    pub fn audio(samples: Vec<f64>, sample_rate: f64) -> Self {
        RawSignal {
            kind: SignalKind::AudioWave,
            sample_rate: Some(sample_rate),
            channels: vec![samples],
        }
    }

    pub fn time_series(kind: SignalKind, channels: Vec<Vec<f64>>) -> Self {
        RawSignal {
            kind,
            sample_rate: None,
            channels,
        }
    }

    pub fn samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        if self.channels.is_empty() || self.samples() == 0 {
            return Err(Error::EmptyInput("signal has no samples"));
        }
        let n = self.samples();
        if let Some(bad) = self.channels.iter().find(|c| c.len() != n) {
            return Err(Error::dims("signal channel length", n, bad.len()));
        }
        if self.kind == SignalKind::AudioWave {
            match self.sample_rate {
                Some(sr) if sr > 0.0 => {}
                _ => return Err(Error::InvalidConfig("audio needs a positive sample rate".into())),
            }
            if self.channels.len() != 1 {
                return Err(Error::AudioFormat(format!("expected mono, got {} channels", self.channels.len())));
            }
        }
        Ok(())
    }
}

/// A binned feature vector with its row-major grid layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedFeature {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// Splits `len` items into `bins` contiguous ranges whose sizes differ by
/// at most one; earlier bins take the remainder.
pub fn bin_ranges(len: usize, bins: usize) -> Vec<Range<usize>> {
    let base = len / bins;
    let extra = len % bins;
    let mut start = 0;
    (0..bins)
        .map(|b| {
            let size = base + usize::from(b < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist, each
/// peaking at 1.0 on its center frequency. Rows are bands, columns are the
/// `n_fft / 2 + 1` non-negative FFT bins.
pub fn mel_filter_bank(sample_rate: f64, n_fft: usize, bands: usize) -> DMatrix<f64> {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    DMatrix::from_fn(bands, bins, |m, k| {
        let f = k as f64 * sample_rate / n_fft as f64;
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let rising = (f - lo) / (center - lo);
        let falling = (hi - f) / (hi - center);
        rising.min(falling).max(0.0)
    })
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude-squared STFT, `[fft_window/2 + 1, frames]`, without padding.
pub fn power_spectrogram(samples: &[f64], fft_window: usize, hop: usize) -> Result<DMatrix<f64>> {
    if fft_window == 0 || hop == 0 {
        return Err(Error::InvalidConfig("FFT window and hop must be positive".into()));
    }
    if samples.len() < fft_window {
        return Err(Error::SignalTooShort {
            samples: samples.len(),
            window: fft_window,
        });
    }
    let frames = 1 + (samples.len() - fft_window) / hop;
    let bins = fft_window / 2 + 1;
    let window = hann_window(fft_window);
    let fft = FftPlanner::new().plan_fft_forward(fft_window);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_window];
    let mut out = DMatrix::zeros(bins, frames);
    for t in 0..frames {
        let frame = &samples[t * hop..t * hop + fft_window];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out[(k, t)] = buf[k].norm_sqr();
        }
    }
    Ok(out)
}

/// Power mel spectrogram, `[bands, frames]`.
pub fn mel_spectrogram(signal: &RawSignal, fft_window: usize, hop: usize, bands: usize) -> Result<DMatrix<f64>> {
    if signal.kind != SignalKind::AudioWave {
        return Err(Error::InvalidConfig("mel spectrogram needs an audio signal".into()));
    }
    signal.check()?;
    if bands == 0 {
        return Err(Error::InvalidConfig("mel band count must be positive".into()));
    }
    let sr = signal.sample_rate.unwrap_or_default();
    let power = power_spectrogram(&signal.channels[0], fft_window, hop)?;
    Ok(mel_filter_bank(sr, fft_window, bands) * power)
}

/// Averages a `[bands, frames]` matrix over a `rows x cols` grid of
/// near-equal rectangles, flattened row-major.
pub fn spectro_temporal_histogram(spec: &DMatrix<f64>, rows: usize, cols: usize) -> Result<BinnedFeature> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin per axis".into()));
    }
    if spec.nrows() < rows {
        return Err(Error::TooFewBands {
            bands: spec.nrows(),
            bins: rows,
        });
    }
    if spec.ncols() < cols {
        return Err(Error::TooFewFrames {
            frames: spec.ncols(),
            bins: cols,
        });
    }
    let row_bins = bin_ranges(spec.nrows(), rows);
    let col_bins = bin_ranges(spec.ncols(), cols);
    let mut values = Vec::with_capacity(rows * cols);
    for rb in &row_bins {
        for cb in &col_bins {
            let block = spec.view((rb.start, cb.start), (rb.len(), cb.len()));
            values.push(block.sum() / (rb.len() * cb.len()) as f64);
        }
    }
    Ok(BinnedFeature { values, rows, cols })
}

/// Per-channel means over `bins` near-equal time intervals, channels
/// concatenated in order.
pub fn temporal_bin(signal: &RawSignal, bins: usize) -> Result<BinnedFeature> {
    signal.check()?;
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be positive".into()));
    }
    let n = signal.samples();
    if n < bins {
        return Err(Error::TooFewSamples { samples: n, bins });
    }
    let ranges = bin_ranges(n, bins);
    let values = signal
        .channels
        .iter()
        .flat_map(|ch| ranges.iter().map(move |r| ch[r.clone()].iter().sum::<f64>() / r.len() as f64))
        .collect();
    Ok(BinnedFeature {
        values,
        rows: signal.channels.len(),
        cols: bins,
    })
}

/// Full featurization with the standard parameters: 100-d audio, 30-d
/// force, joints x 10 effort.
pub fn featurize(signal: &RawSignal) -> Result<BinnedFeature> {
    match signal.kind {
        SignalKind::AudioWave => {
            let spec = mel_spectrogram(signal, FFT_WINDOW, HOP_LENGTH, MEL_BANDS)?;
            spectro_temporal_histogram(&spec, FREQUENCY_BINS, TEMPORAL_BINS)
        }
        SignalKind::JointEffort | SignalKind::EndpointForce => temporal_bin(signal, TEMPORAL_BINS),
    }
}

/// Reads a mono WAV file (16-bit PCM scaled to [-1, 1), or 32-bit float).
pub fn read_wav(path: &Path) -> Result<RawSignal> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::AudioFormat(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::AudioFormat(format!("{}: expected mono, got {} channels", path.display(), spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => return Err(Error::AudioFormat(format!("{}: {fmt:?} {bits}-bit", path.display()))),
    }
    .map_err(|e| Error::AudioFormat(format!("{}: {e}", path.display())))?;
    Ok(RawSignal::audio(samples, f64::from(spec.sample_rate)))
}

/// Reads a time-series CSV: one row per timestep, one column per channel.
pub fn read_time_series(path: &Path, kind: SignalKind) -> Result<RawSignal> {
    let rows = read_feature_csv(path)?;
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(Error::EmptyInput("time series has no samples"));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::dims(format!("{} row width", path.display()), width, bad.len()));
    }
    let channels = (0..width).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    Ok(RawSignal::time_series(kind, channels))
}
