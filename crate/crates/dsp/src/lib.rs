//! Speech front and back end: framing, STFT, mel filterbank, log-mel features,
//! Griffin-Lim phase reconstruction and 16-bit PCM WAV I/O.

mod error;
mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use error::DspError;
pub use griffin_lim::{delog, griffin_lim, griffin_lim_magnitude, spectral_convergence, GriffinLimTrace};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpectrogram, LOG_FLOOR};
pub use stft::{hann_window, istft, magnitude, stft, ComplexSpectrogram, StftConfig};
pub use wav::{read_wav, resample, write_wav, Waveform};

pub use rustfft::num_complex::Complex64;

pub type Result<T> = std::result::Result<T, DspError>;
