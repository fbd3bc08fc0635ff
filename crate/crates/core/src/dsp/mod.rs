//! Spectral front end and back end.

mod griffin_lim;
mod mel;
mod resample;
mod stft;

pub use griffin_lim::{griffin_lim, griffin_lim_traced, mel_to_power, GriffinLimTrace};
pub use mel::{
    dct_ii_ortho, hz_to_mel, log_mel, log_mel_from_power, magnitude_spectrogram, mel_band_centers,
    mel_filterbank, mel_to_hz, mfcc, mfcc_from_log_mel, power_spectrogram, rms_envelope,
    MagnitudeSpectrogram, MelConfig, MelSpectrogram, VolumeEnvelope,
};
pub use resample::{resample, resample_shift};
pub use stft::{istft, stft, Complex, SpectralConfig, Window};

pub(crate) use stft::reflect_index;
