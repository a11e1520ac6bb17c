//! Hann framing, log mel filterbank energies, and frame stacking.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::ConfigError;
use crate::frontend::wav::PcmAudio;

pub const SAMPLE_RATE: u32 = 16_000;
/// 32 ms at 16 kHz.
pub const WINDOW: usize = 512;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const NUM_MELS: usize = 128;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const STACK: usize = 4;
pub const SUBSAMPLE: usize = 3;
pub const FEATURE_DIM: usize = STACK * NUM_MELS;
pub const LOG_FLOOR: f64 = 1e-12;

/// 128 natural-log mel energies of one 10 ms frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LfbeFrame(pub Vec<f32>);

/// Four stacked [`LfbeFrame`]s: one 30 ms model input frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame(pub Vec<f32>);

impl FeatureFrame {
    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

impl AsRef<[f32]> for FeatureFrame {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies of the triangular filters: `NUM_MELS + 2` points evenly
/// spaced on the mel scale from 125 Hz to 7500 Hz. Filter `m` rises from
/// edge `m`, peaks at edge `m + 1` and falls to edge `m + 2`.
pub fn mel_edges_hz() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
    (0..NUM_MELS + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (NUM_MELS + 1) as f64)).collect()
}

pub fn mel_centers_hz() -> Vec<f64> {
    mel_edges_hz()[1..=NUM_MELS].to_vec()
}

/// Periodic Hann window of length [`WINDOW`].
pub fn hann_window() -> Vec<f32> {
    (0..WINDOW)
        .map(|n| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos()) as f32)
        .collect()
}

/// Mel weights, `NUM_MELS × (FFT_SIZE/2 + 1)` row-major.
pub fn mel_filterbank() -> Vec<Vec<f32>> {
    let edges = mel_edges_hz();
    let bins = FFT_SIZE / 2 + 1;
    (0..NUM_MELS)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
                    let w = if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    };
                    w as f32
                })
                .collect()
        })
        .collect()
}

/// Frame count for a signal of `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < WINDOW {
        0
    } else {
        (len - WINDOW) / HOP + 1
    }
}

/// Stacked-frame count for `t` LFBE frames.
pub fn stacked_count(t: usize) -> usize {
    if t < STACK {
        0
    } else {
        (t - STACK) / SUBSAMPLE + 1
    }
}

/// Number of LFBE frames that yields exactly `n` stacked frames.
pub fn lfbe_frames_for(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        SUBSAMPLE * (n - 1) + STACK
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrontendOptions {
    /// Scale each input so its peak magnitude is 1 before framing. Stands in
    /// for gain control; off by default.
    pub peak_normalize: bool,
}

/// Precomputed window, filterbank and FFT plan.
#[derive(Clone)]
pub struct Frontend {
    window: Vec<f32>,
    filters: Vec<Vec<f32>>,
    fft: Arc<dyn Fft<f32>>,
    pub options: FrontendOptions,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("options", &self.options).finish_non_exhaustive()
    }
}

impl Default for Frontend {
    fn default() -> Self {
        Self::new(FrontendOptions::default())
    }
}

impl Frontend {
    pub fn new(options: FrontendOptions) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self { window: hann_window(), filters: mel_filterbank(), fft, options }
    }

    /// Hann-windowed 512-sample frames at a 160-sample hop.
    pub fn frame_signal(&self, audio: &PcmAudio) -> Vec<Vec<f32>> {
        let scale = if self.options.peak_normalize {
            let peak = audio.samples.iter().fold(0f32, |m, s| m.max(s.abs()));
            if peak > 0.0 {
                1.0 / peak
            } else {
                1.0
            }
        } else {
            1.0
        };
        (0..frame_count(audio.samples.len()))
            .map(|i| {
                audio.samples[i * HOP..i * HOP + WINDOW]
                    .iter()
                    .zip(&self.window)
                    .map(|(&s, &w)| s * scale * w)
                    .collect()
            })
            .collect()
    }

    /// Power spectrum, bins `0..=256`.
    pub fn power_spectrum(&self, frame: &[f32]) -> Vec<f32> {
        assert_eq!(frame.len(), FFT_SIZE, "frame length");
        let mut buf: Vec<Complex<f32>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        buf[..=FFT_SIZE / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn lfbe(&self, frame: &[f32]) -> LfbeFrame {
        let power = self.power_spectrum(frame);
        LfbeFrame(
            self.filters
                .iter()
                .map(|w| {
                    let e: f32 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                    (e as f64).max(LOG_FLOOR).ln() as f32
                })
                .collect(),
        )
    }

    /// Full pipeline: PCM → stacked 512-dim features at 30 ms.
    pub fn features(&self, audio: &PcmAudio) -> Result<Vec<FeatureFrame>, ConfigError> {
        if audio.sample_rate != SAMPLE_RATE {
            return Err(ConfigError::new(format!(
                "frontend expects {SAMPLE_RATE} Hz audio, got {} Hz",
                audio.sample_rate
            )));
        }
        let lfbe: Vec<LfbeFrame> = self.frame_signal(audio).iter().map(|f| self.lfbe(f)).collect();
        Ok(stack_subsample(&lfbe))
    }
}

/// `out[k] = concat(in[3k], in[3k+1], in[3k+2], in[3k+3])`.
pub fn stack_subsample(frames: &[LfbeFrame]) -> Vec<FeatureFrame> {
    (0..stacked_count(frames.len()))
        .map(|k| {
            let start = k * SUBSAMPLE;
            FeatureFrame(frames[start..start + STACK].iter().flat_map(|f| f.0.iter().copied()).collect())
        })
        .collect()
}
