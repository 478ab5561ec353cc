use std::f64::consts::PI;

use duplex_dsp::*;

fn tone(cfg: &StftConfig, freq: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / cfg.sample_rate as f64).sin())
        .collect()
}

#[test]
fn sinusoid_reconstruction_is_consistent_after_60_iterations() {
    let cfg = StftConfig::default();
    let target = magnitude(&stft(&tone(&cfg, 440.0, 8000), &cfg).unwrap());
    let (_, trace) = griffin_lim_magnitude(&target, &cfg, 60).unwrap();
    let last = *trace.errors.last().unwrap();
    assert!(last < 1e-2, "relative error {last}");
}

#[test]
fn error_non_increasing_across_iteration_counts() {
    let cfg = StftConfig::default();
    let wave: Vec<f64> = tone(&cfg, 440.0, 6000)
        .iter()
        .zip(tone(&cfg, 1210.0, 6000))
        .enumerate()
        .map(|(i, (a, b))| a + b * (i as f64 / 6000.0))
        .collect();
    let target = magnitude(&stft(&wave, &cfg).unwrap());
    let mut previous = f64::INFINITY;
    for iters in [1, 10, 30, 60] {
        let (out, trace) = griffin_lim_magnitude(&target, &cfg, iters).unwrap();
        assert_eq!(trace.errors.len(), iters);
        let err = spectral_convergence(&magnitude(&stft(&out, &cfg).unwrap()), &target);
        assert!((err - trace.errors[iters - 1]).abs() < 1e-12);
        assert!(err <= previous + 1e-10, "{iters} iterations: {err} > {previous}");
        previous = err;
    }
}

#[test]
fn per_iteration_error_is_monotone() {
    let cfg = StftConfig::default();
    let fb = MelFilterbank::new(&cfg);
    let mel = mel_spectrogram(&tone(&cfg, 300.0, 5000), &cfg, &fb).unwrap();
    let target: Vec<Vec<f64>> = mel
        .frames
        .iter()
        .map(|f| fb.invert(&f.iter().map(|&v| delog(v)).collect::<Vec<_>>()))
        .collect();
    let (_, trace) = griffin_lim_magnitude(&target, &cfg, 40).unwrap();
    for w in trace.errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-10, "{} then {}", w[0], w[1]);
    }
}

#[test]
fn floor_mel_gives_near_silence() {
    let cfg = StftConfig::default();
    let fb = MelFilterbank::new(&cfg);
    let mel = MelSpectrogram { frames: vec![vec![LOG_FLOOR.ln(); 80]; 20] };
    let target: Vec<Vec<f64>> = mel
        .frames
        .iter()
        .map(|f| fb.invert(&f.iter().map(|&v| delog(v)).collect::<Vec<_>>()))
        .collect();
    let (raw, _) = griffin_lim_magnitude(&target, &cfg, 10).unwrap();
    let peak = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(peak < 1e-3, "peak {peak}");
    let wave = griffin_lim(&mel, &cfg, &fb, 10).unwrap();
    assert!(wave.peak() < 1e-3);
}

#[test]
fn griffin_lim_output_is_bounded_and_sized() {
    let cfg = StftConfig::default();
    let fb = MelFilterbank::new(&cfg);
    let wave: Vec<f64> = tone(&cfg, 220.0, 6000).iter().map(|v| v * 1.9).collect();
    let mel = mel_spectrogram(&wave, &cfg, &fb).unwrap();
    let out = griffin_lim(&mel, &cfg, &fb, 5).unwrap();
    assert_eq!(out.len(), cfg.signal_length(mel.n_frames()));
    assert!(out.peak() <= 1.0);
    assert_eq!(out.sample_rate, cfg.sample_rate);
}
