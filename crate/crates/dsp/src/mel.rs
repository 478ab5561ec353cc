use nalgebra::DMatrix;

use crate::stft::{magnitude, FftPair};
use crate::{Result, StftConfig};

/// Lower clamp applied to linear mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centres uniformly spaced on the mel scale and unit
/// peak height.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `[n_mels][n_bins]`
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
    /// Pseudo-inverse `[n_bins][n_mels]`, for mapping mel energies back to
    /// linear magnitudes.
    pinv: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &StftConfig) -> Self {
        let n_bins = cfg.n_bins();
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let weights: Vec<Vec<f64>> = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - left) / (center - left);
                        let down = (right - f) / (right - center);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let fb = DMatrix::from_fn(cfg.n_mels, n_bins, |m, k| weights[m][k]);
        let pinv_m = fb.pseudo_inverse(1e-12).expect("SVD of a finite matrix");
        let pinv = (0..n_bins)
            .map(|k| (0..cfg.n_mels).map(|m| pinv_m[(k, m)]).collect())
            .collect();
        Self {
            weights,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
            pinv,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// `fb · magnitude` for one frame.
    pub fn apply(&self, mag: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(mag).map(|(w, m)| w * m).sum())
            .collect()
    }

    /// Least-squares linear magnitude for one frame of mel energies, clipped at 0.
    pub fn invert(&self, mel: &[f64]) -> Vec<f64> {
        self.pinv
            .iter()
            .map(|row| row.iter().zip(mel).map(|(p, m)| p * m).sum::<f64>().max(0.0))
            .collect()
    }
}

/// Log-compressed mel energies, `[n_frames][n_mels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Vec<Vec<f64>>,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().flatten().all(|v| v.is_finite())
    }
}

/// `log(max(fb · |STFT|, LOG_FLOOR))` per frame.
pub fn mel_spectrogram(samples: &[f64], cfg: &StftConfig, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    cfg.validate()?;
    let spec = FftPair::new(cfg).analyze(samples, cfg)?;
    let frames = magnitude(&spec)
        .iter()
        .map(|mag| fb.apply(mag).into_iter().map(|e| e.max(LOG_FLOOR).ln()).collect())
        .collect();
    Ok(MelSpectrogram { frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 440.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        // 1000 Hz is ~1000 mel on this scale
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.1);
    }

    #[test]
    fn filterbank_shape_and_rows() {
        let cfg = StftConfig::default();
        let fb = MelFilterbank::new(&cfg);
        assert_eq!(fb.n_mels(), 80);
        assert_eq!(fb.n_bins(), 513);
        let mut last_peak = None;
        for m in 0..80 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0), "row {m} empty");
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if let Some(p) = last_peak {
                assert!(peak > p, "row {m} peak {peak} not above {p}");
            }
            last_peak = Some(peak);
        }
    }
}
