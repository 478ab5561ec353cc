use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};
use rubato::{FftFixedIn, Resampler};

use crate::{DspError, Result};

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a 16-bit signed PCM mono WAV file. Anything else is rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedWav(format!(
            "expected 16-bit integer PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.channels != 1 {
        return Err(DspError::UnsupportedWav(format!("expected mono, found {} channels", spec.channels)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes 16-bit signed PCM mono. Samples are clamped to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Band-limited resampling. The output has `round(len · to / from)` samples
/// and is aligned with the input (the resampler delay is removed).
pub fn resample(wave: &Waveform, to: u32) -> Result<Waveform> {
    let from = wave.sample_rate;
    if from == to || wave.is_empty() {
        return Ok(Waveform::new(wave.samples.clone(), to));
    }
    let err = |e: &dyn std::fmt::Display| DspError::Resample(e.to_string());
    let mut r = FftFixedIn::<f64>::new(from as usize, to as usize, 1024, 2, 1).map_err(|e| err(&e))?;
    let delay = r.output_delay();
    let expected = (wave.len() as f64 * to as f64 / from as f64).round() as usize;
    let mut out = Vec::with_capacity(expected + delay);
    let mut pos = 0;
    while pos + r.input_frames_next() <= wave.len() {
        let n = r.input_frames_next();
        let chunk = r.process(&[&wave.samples[pos..pos + n]], None).map_err(|e| err(&e))?;
        out.extend_from_slice(&chunk[0]);
        pos += n;
    }
    let chunk = r
        .process_partial(Some(&[&wave.samples[pos..]]), None)
        .map_err(|e| err(&e))?;
    out.extend_from_slice(&chunk[0]);
    while out.len() < delay + expected {
        let chunk = r.process_partial::<&[f64]>(None, None).map_err(|e| err(&e))?;
        out.extend_from_slice(&chunk[0]);
    }
    Ok(Waveform::new(out[delay..delay + expected].to_vec(), to))
}
