//! Signal path: WAV I/O, STFT analysis/synthesis, log-mel features,
//! pseudo-inverse mel inversion, and Griffin-Lim phase reconstruction.
//!
//! Everything here computes in f64; features are narrowed to f32 only at the
//! archive boundary.

mod feats;
mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use feats::{
    apply_normalization, compute_norm_stats, extract_logmel, read_feature_file,
    read_norm_stats_file, undo_normalization, write_feature_file, write_norm_stats_file,
    NormStats,
};
pub use griffin_lim::{griffin_lim, griffin_lim_with_trace, GriffinLimConfig, GriffinLimResult};
pub use mel::{logmel, mel_filterbank, mel_to_linear, MelConfig, MelSpectrogram};
pub use stft::{istft, magnitude, stft, ComplexSpectrogram, MagnitudeSpectrogram, StftConfig};
pub use wav::{read_wav, write_wav, Waveform};
