//! Feature extraction pipeline helpers: waveform -> log-mel, per-dimension
//! normalization statistics, and feature archive I/O.

use crate::dsp::mel::{logmel, MelConfig, MelSpectrogram};
use crate::dsp::stft::{magnitude, stft, MagnitudeSpectrogram, StftConfig};
use crate::dsp::wav::Waveform;
use crate::error::{Error, Result};
use crate::nn::{read_container, write_container, ArrayData, Container};
use std::path::Path;

/// Full analysis pipeline: STFT -> magnitude -> mel filterbank -> log.
pub fn extract_logmel(
    wave: &Waveform,
    stft_cfg: &StftConfig,
    mel_cfg: &MelConfig,
) -> Result<MelSpectrogram> {
    if mel_cfg.sample_rate != wave.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "mel config expects {} Hz but waveform is {} Hz",
            mel_cfg.sample_rate, wave.sample_rate
        )));
    }
    if mel_cfg.fft_size != stft_cfg.fft_size {
        return Err(Error::InvalidArgument(format!(
            "mel config fft_size {} != stft fft_size {}",
            mel_cfg.fft_size, stft_cfg.fft_size
        )));
    }
    let spec = stft(&wave.samples, stft_cfg)?;
    logmel(&magnitude(&spec), mel_cfg, stft_cfg.hop_length)
}

/// Per-dimension mean and standard deviation over a corpus of features.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Pools all frames of all utterances and computes per-dimension mean and
/// population standard deviation. Dimensions with (near) zero variance get a
/// standard deviation of 1 so normalization leaves them centered but finite.
pub fn compute_norm_stats<'a>(
    mels: impl IntoIterator<Item = &'a MelSpectrogram>,
) -> Result<NormStats> {
    let mut n_mels = 0usize;
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    let mut sumsq: Vec<f64> = Vec::new();
    for mel in mels {
        if n_mels == 0 {
            n_mels = mel.n_mels;
            sum = vec![0.0; n_mels];
            sumsq = vec![0.0; n_mels];
        } else if mel.n_mels != n_mels {
            return Err(Error::shape(
                "norm_stats",
                format!("mixed mel sizes {} and {}", n_mels, mel.n_mels),
            ));
        }
        for t in 0..mel.frames {
            for m in 0..n_mels {
                let v = mel.at(t, m);
                sum[m] += v;
                sumsq[m] += v * v;
            }
        }
        count += mel.frames;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no frames to compute stats from".into()));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            let var = (sq / n - mu * mu).max(0.0);
            let sd = var.sqrt();
            if sd < 1e-8 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

pub fn apply_normalization(mel: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram> {
    if stats.mean.len() != mel.n_mels || stats.std.len() != mel.n_mels {
        return Err(Error::shape(
            "normalize",
            format!("stats of size {} for {} mels", stats.mean.len(), mel.n_mels),
        ));
    }
    let mut data = mel.data.clone();
    for t in 0..mel.frames {
        for m in 0..mel.n_mels {
            data[t * mel.n_mels + m] = (data[t * mel.n_mels + m] - stats.mean[m]) / stats.std[m];
        }
    }
    MelSpectrogram::new(mel.frames, mel.n_mels, data, mel.hop_length, mel.sample_rate)
}

pub fn undo_normalization(mel: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram> {
    if stats.mean.len() != mel.n_mels || stats.std.len() != mel.n_mels {
        return Err(Error::shape(
            "denormalize",
            format!("stats of size {} for {} mels", stats.mean.len(), mel.n_mels),
        ));
    }
    let mut data = mel.data.clone();
    for t in 0..mel.frames {
        for m in 0..mel.n_mels {
            data[t * mel.n_mels + m] = data[t * mel.n_mels + m] * stats.std[m] + stats.mean[m];
        }
    }
    MelSpectrogram::new(mel.frames, mel.n_mels, data, mel.hop_length, mel.sample_rate)
}

/// Writes an utterance feature archive: array `mel` of shape
/// `[frames, n_mels]`, plus optional `linear` of shape `[frames, bins]`.
pub fn write_feature_file(
    path: impl AsRef<Path>,
    mel: &MelSpectrogram,
    linear: Option<&MagnitudeSpectrogram>,
) -> Result<()> {
    let mut arrays = vec![ArrayData {
        name: "mel".into(),
        shape: vec![mel.frames, mel.n_mels],
        data: mel.data.iter().map(|&v| v as f32).collect(),
    }];
    if let Some(lin) = linear {
        if lin.frames != mel.frames {
            return Err(Error::shape(
                "feature_file",
                format!("linear has {} frames, mel has {}", lin.frames, mel.frames),
            ));
        }
        arrays.push(ArrayData {
            name: "linear".into(),
            shape: vec![lin.frames, lin.bins],
            data: lin.data.iter().map(|&v| v as f32).collect(),
        });
    }
    write_container(path.as_ref(), &Container { arrays, config: None })
}

/// Reads a feature archive written by [`write_feature_file`]. Frame timing
/// metadata is not stored in the archive, so the caller supplies it.
pub fn read_feature_file(
    path: impl AsRef<Path>,
    hop_length: usize,
    sample_rate: u32,
) -> Result<(MelSpectrogram, Option<MagnitudeSpectrogram>)> {
    let path = path.as_ref();
    let container = read_container(path)?;
    let mel_arr = container.array("mel").map_err(|_| Error::Format {
        path: path.to_path_buf(),
        detail: "missing array 'mel'".into(),
    })?;
    if mel_arr.shape.len() != 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("array 'mel' has rank {}", mel_arr.shape.len()),
        });
    }
    let mel = MelSpectrogram::new(
        mel_arr.shape[0],
        mel_arr.shape[1],
        mel_arr.data.iter().map(|&v| v as f64).collect(),
        hop_length,
        sample_rate,
    )?;
    let linear = match container.arrays.iter().find(|a| a.name == "linear") {
        Some(arr) => {
            if arr.shape.len() != 2 || arr.shape[0] != mel.frames {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    detail: "array 'linear' shape inconsistent with 'mel'".into(),
                });
            }
            Some(MagnitudeSpectrogram::new(
                arr.shape[0],
                arr.shape[1],
                arr.data.iter().map(|&v| v as f64).collect(),
            )?)
        }
        None => None,
    };
    Ok((mel, linear))
}

/// Writes normalization statistics: arrays `mean` and `std`, each `[n_mels]`.
pub fn write_norm_stats_file(path: impl AsRef<Path>, stats: &NormStats) -> Result<()> {
    let arrays = vec![
        ArrayData {
            name: "mean".into(),
            shape: vec![stats.mean.len()],
            data: stats.mean.iter().map(|&v| v as f32).collect(),
        },
        ArrayData {
            name: "std".into(),
            shape: vec![stats.std.len()],
            data: stats.std.iter().map(|&v| v as f32).collect(),
        },
    ];
    write_container(path.as_ref(), &Container { arrays, config: None })
}

pub fn read_norm_stats_file(path: impl AsRef<Path>) -> Result<NormStats> {
    let path = path.as_ref();
    let container = read_container(path)?;
    let get = |name: &str| -> Result<Vec<f64>> {
        container
            .array(name)
            .map(|a| a.data.iter().map(|&v| v as f64).collect())
            .map_err(|_| Error::Format {
                path: path.to_path_buf(),
                detail: format!("missing array '{name}'"),
            })
    };
    let mean = get("mean")?;
    let std = get("std")?;
    if mean.len() != std.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "mean and std lengths differ".into(),
        });
    }
    Ok(NormStats { mean, std })
}
