use std::f64::consts::TAU;

use rustfft::num_complex::Complex64;

use crate::stft::{magnitude, ComplexSpectrogram, FftPair};
use crate::{LOG_FLOOR, MelFilterbank, MelSpectrogram, Result, StftConfig, Waveform};

/// Per-iteration spectral convergence, `‖|STFT(x)| − S‖ / ‖S‖`, where entry
/// `i` is measured after iteration `i + 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GriffinLimTrace {
    pub errors: Vec<f64>,
}

/// `‖|X| − S‖₂ / ‖S‖₂`; returns the absolute error when `S` is all zero.
pub fn spectral_convergence(estimate: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, t) in estimate.iter().zip(target) {
        for (a, b) in e.iter().zip(t) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Phase-vocoder style starting phase. Each frame's magnitude peaks get a
/// refined frequency by parabolic interpolation of log magnitude, their phase is
/// advanced from the previous frame at that frequency, and every bin is locked
/// to its nearest peak.
fn initial_phase(target: &[Vec<f64>], cfg: &StftConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_bins();
    let bin_omega = |k: f64| TAU * k / cfg.fft_size as f64;
    let centre = cfg.frame_length as f64 / 2.0;
    let hop = cfg.hop_length as f64;
    let mut prev_psi = vec![0.0; n_bins];
    let mut prev_omega: Vec<f64> = (0..n_bins).map(|k| bin_omega(k as f64)).collect();
    let mut phases = Vec::with_capacity(target.len());
    for (t, mag) in target.iter().enumerate() {
        let top = mag.iter().fold(0.0f64, |a, &v| a.max(v));
        let mut psi = vec![0.0; n_bins];
        let mut omega: Vec<f64> = (0..n_bins).map(|k| bin_omega(k as f64)).collect();
        let mut phase = vec![0.0; n_bins];
        if top > 0.0 {
            let peaks: Vec<usize> = (0..n_bins)
                .filter(|&k| {
                    mag[k] >= top * 1e-4
                        && (k == 0 || mag[k] > mag[k - 1])
                        && (k + 1 == n_bins || mag[k] >= mag[k + 1])
                })
                .collect();
            let tracked: Vec<(f64, f64)> = peaks
                .iter()
                .map(|&p| {
                    let mut offset = 0.0;
                    if p > 0 && p + 1 < n_bins && mag[p - 1] > 0.0 && mag[p + 1] > 0.0 {
                        let (l, c, r) = (mag[p - 1].ln(), mag[p].ln(), mag[p + 1].ln());
                        let curvature = l - 2.0 * c + r;
                        if curvature < 0.0 {
                            offset = 0.5 * (l - r) / curvature;
                        }
                    }
                    let w = bin_omega(p as f64 + offset);
                    let s = if t == 0 { 0.0 } else { prev_psi[p] + hop * 0.5 * (prev_omega[p] + w) };
                    (s, w)
                })
                .collect();
            let mut owner = 0;
            for k in 0..n_bins {
                while owner + 1 < peaks.len() && peaks[owner + 1].abs_diff(k) < peaks[owner].abs_diff(k) {
                    owner += 1;
                }
                let (s, w) = tracked[owner];
                psi[k] = s;
                omega[k] = w;
                phase[k] = s - (bin_omega(k as f64) - w) * centre;
            }
        }
        prev_psi = psi;
        prev_omega = omega;
        phases.push(phase);
    }
    phases
}

/// Griffin-Lim on a linear magnitude spectrogram `[n_frames][n_bins]`.
///
/// Returns the unnormalized waveform and the consistency error after each
/// iteration. The error is non-increasing.
pub fn griffin_lim_magnitude(
    target: &[Vec<f64>],
    cfg: &StftConfig,
    iterations: usize,
) -> Result<(Vec<f64>, GriffinLimTrace)> {
    cfg.validate()?;
    let iterations = iterations.max(1);
    let fft = FftPair::new(cfg);
    let mut spec = ComplexSpectrogram {
        frames: target
            .iter()
            .zip(initial_phase(target, cfg))
            .map(|(row, phase)| row.iter().zip(phase).map(|(&m, p)| Complex64::from_polar(m, p)).collect())
            .collect(),
    };
    let mut trace = GriffinLimTrace::default();
    let mut wave = fft.synthesize(&spec, cfg);
    let mut analysed = fft.analyze(&wave, cfg)?;
    for _ in 0..iterations {
        for (frame, (row, target_row)) in spec.frames.iter_mut().zip(analysed.frames.iter().zip(target)) {
            for ((c, a), &m) in frame.iter_mut().zip(row).zip(target_row) {
                let n = a.norm();
                *c = if n > 0.0 { a * (m / n) } else { Complex64::new(m, 0.0) };
            }
        }
        wave = fft.synthesize(&spec, cfg);
        analysed = fft.analyze(&wave, cfg)?;
        trace.errors.push(spectral_convergence(&magnitude(&analysed), target));
    }
    Ok((wave, trace))
}

/// Mel spectrogram to waveform: de-log, pseudo-inverse the filterbank (negative
/// values clipped), then Griffin-Lim. Energies at the log floor are treated as
/// silence. Output is scaled down if its peak exceeds 1.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &StftConfig, fb: &MelFilterbank, iterations: usize) -> Result<Waveform> {
    let target: Vec<Vec<f64>> = mel
        .frames
        .iter()
        .map(|f| fb.invert(&f.iter().map(|&v| delog(v)).collect::<Vec<_>>()))
        .collect();
    let (mut samples, _) = griffin_lim_magnitude(&target, cfg, iterations)?;
    let peak = samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 1.0 {
        for s in &mut samples {
            *s /= peak;
        }
    }
    Ok(Waveform {
        samples,
        sample_rate: cfg.sample_rate,
    })
}

/// Linear mel energy for a log value; anything at or below the floor is zero.
pub fn delog(v: f64) -> f64 {
    if v <= LOG_FLOOR.ln() + 1e-9 {
        0.0
    } else {
        v.exp()
    }
}
