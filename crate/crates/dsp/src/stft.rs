use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{DspError, Result};

/// Framing and analysis parameters.
///
/// The defaults give 50 ms frames with a 12.5 ms hop at 16 kHz (800/200
/// samples), a 1024-point FFT and 80 mel bands between 0 and 8 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::from_millis(16_000, 50.0, 12.5).expect("default config is valid")
    }
}

impl StftConfig {
    /// Frame and hop given in milliseconds; FFT size is the next power of two.
    pub fn from_millis(sample_rate: u32, frame_ms: f64, hop_ms: f64) -> Result<Self> {
        let frame_length = (sample_rate as f64 * frame_ms / 1000.0).round() as usize;
        let hop_length = (sample_rate as f64 * hop_ms / 1000.0).round() as usize;
        let cfg = Self {
            sample_rate,
            frame_length,
            hop_length,
            fft_size: frame_length.next_power_of_two(),
            n_mels: 80,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.hop_length == 0 {
            return Err(DspError::Config("frame and hop must be positive".into()));
        }
        if self.hop_length > self.frame_length {
            return Err(DspError::Config(format!(
                "hop {} exceeds frame {}",
                self.hop_length, self.frame_length
            )));
        }
        if self.fft_size < self.frame_length {
            return Err(DspError::Config(format!(
                "fft size {} below frame {}",
                self.fft_size, self.frame_length
            )));
        }
        if self.n_mels == 0 || !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(DspError::Config("need n_mels > 0 and 0 <= fmin < fmax".into()));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 {
            return Err(DspError::Config("fmax above Nyquist".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `1 + floor((len − frame) / hop)`, or 0 when shorter than a frame.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_length {
            0
        } else {
            1 + (len - self.frame_length) / self.hop_length
        }
    }

    /// Number of samples spanned by `n_frames` frames.
    pub fn signal_length(&self, n_frames: usize) -> usize {
        if n_frames == 0 {
            0
        } else {
            (n_frames - 1) * self.hop_length + self.frame_length
        }
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided complex STFT, `frames[t][k]` for `k < fft_size/2 + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Vec<Vec<Complex64>>,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

pub(crate) struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl FftPair {
    pub(crate) fn new(cfg: &StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            window: hann_window(cfg.frame_length),
        }
    }

    pub(crate) fn analyze(&self, samples: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
        let n = cfg.n_frames(samples.len());
        if n == 0 {
            return Err(DspError::TooShort {
                len: samples.len(),
                frame: cfg.frame_length,
            });
        }
        let bins = cfg.n_bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        let mut frames = Vec::with_capacity(n);
        for t in 0..n {
            let start = t * cfg.hop_length;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < cfg.frame_length {
                    Complex64::new(samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.forward.process(&mut buf);
            frames.push(buf[..bins].to_vec());
        }
        Ok(ComplexSpectrogram { frames })
    }

    /// Least-squares overlap-add inverse: `Σ w·frame / Σ w²`.
    pub(crate) fn synthesize(&self, spec: &ComplexSpectrogram, cfg: &StftConfig) -> Vec<f64> {
        let len = cfg.signal_length(spec.n_frames());
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let n = cfg.fft_size;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (t, frame) in spec.frames.iter().enumerate() {
            // Rebuild the Hermitian full spectrum.
            for k in 0..n {
                buf[k] = if k < frame.len() {
                    frame[k]
                } else {
                    frame[n - k].conj()
                };
            }
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = t * cfg.hop_length;
            for i in 0..cfg.frame_length {
                let w = self.window[i];
                out[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-11 {
                *o /= w;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

/// Hann-windowed STFT without centering; frames start at multiples of the hop.
pub fn stft(samples: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    FftPair::new(cfg).analyze(samples, cfg)
}

/// Inverse of [`stft`] by windowed least-squares overlap-add.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(FftPair::new(cfg).synthesize(spec, cfg))
}

/// `|X|` per frame and bin.
pub fn magnitude(spec: &ComplexSpectrogram) -> Vec<Vec<f64>> {
    spec.frames.iter().map(|f| f.iter().map(|c| c.norm()).collect()).collect()
}
