use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("waveform has {len} samples, fewer than one frame of {frame}")]
    TooShort { len: usize, frame: usize },
    #[error("invalid STFT configuration: {0}")]
    Config(String),
    #[error("unsupported WAV encoding: {0} (expected 16-bit signed PCM mono)")]
    UnsupportedWav(String),
    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
    #[error("resampling failed: {0}")]
    Resample(String),
}
