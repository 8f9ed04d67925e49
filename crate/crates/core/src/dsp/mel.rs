//! HTK-style mel filterbank, log-mel features, and pseudo-inverse recovery
//! of linear magnitudes.

use crate::dsp::stft::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mel feature parameters. `fft_size` and `sample_rate` must match the STFT
/// that produced the magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Magnitudes are clamped to this floor before the natural log.
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

fn default_log_floor() -> f64 {
    1e-10
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be positive".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= fmin < fmax <= nyquist, got fmin={} fmax={} nyquist={}",
                self.fmin, self.fmax, nyquist
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidArgument("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Log-mel spectrogram, row-major `[frame * n_mels + m]`, with the frame
/// timing metadata needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub n_mels: usize,
    pub data: Vec<f64>,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(
        frames: usize,
        n_mels: usize,
        data: Vec<f64>,
        hop_length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if data.len() != frames * n_mels {
            return Err(Error::shape(
                "mel",
                format!("{} values for {}x{}", data.len(), frames, n_mels),
            ));
        }
        Ok(Self { frames, n_mels, data, hop_length, sample_rate })
    }

    pub fn at(&self, t: usize, m: usize) -> f64 {
        self.data[t * self.n_mels + m]
    }
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x bins`, peak 1 per triangle.
/// Band edges are spaced uniformly on the HTK mel scale between fmin and fmax.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    // n_mels + 2 edge points, converted back to Hz
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> =
        (0..bins).map(|k| k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64).collect();

    let mut bank = vec![vec![0.0f64; bins]; cfg.n_mels];
    for (m, row) in bank.iter_mut().enumerate() {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz[k];
            let up = if mid > lo { (f - lo) / (mid - lo) } else { 0.0 };
            let down = if hi > mid { (hi - f) / (hi - mid) } else { 0.0 };
            *w = up.min(down).max(0.0);
        }
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mel filter {m} covers no FFT bin; fewer mels or a larger fft_size needed"
            )));
        }
    }
    Ok(bank)
}

/// Applies the filterbank to linear magnitudes and takes the natural log with
/// a floor: `log(max(B @ mag, floor))`.
pub fn logmel(
    mag: &MagnitudeSpectrogram,
    cfg: &MelConfig,
    hop_length: usize,
) -> Result<MelSpectrogram> {
    let bank = mel_filterbank(cfg)?;
    if mag.bins != cfg.fft_size / 2 + 1 {
        return Err(Error::shape(
            "logmel",
            format!("{} bins but fft_size {} implies {}", mag.bins, cfg.fft_size, cfg.fft_size / 2 + 1),
        ));
    }
    let mut data = vec![0.0f64; mag.frames * cfg.n_mels];
    for t in 0..mag.frames {
        let row = &mag.data[t * mag.bins..(t + 1) * mag.bins];
        for (m, filt) in bank.iter().enumerate() {
            let e: f64 = filt.iter().zip(row).map(|(w, x)| w * x).sum();
            data[t * cfg.n_mels + m] = e.max(cfg.log_floor).ln();
        }
    }
    MelSpectrogram::new(mag.frames, cfg.n_mels, data, hop_length, cfg.sample_rate)
}

/// Inverts a Gram matrix (n x n, symmetric positive definite in the intended
/// use) by Gauss-Jordan elimination with partial pivoting.
fn invert(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        if aug[pivot][col].abs() < 1e-12 {
            return Err(Error::Numerical("singular mel Gram matrix".into()));
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for i in 0..n {
            if i != col {
                let factor = aug[i][col];
                if factor != 0.0 {
                    for j in 0..2 * n {
                        aug[i][j] -= factor * aug[col][j];
                    }
                }
            }
        }
    }
    Ok(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// Recovers linear magnitudes from a log-mel spectrogram via the Moore-Penrose
/// pseudo-inverse of the filterbank, clamping negatives to zero:
/// `max(exp(mel) @ pinv(B)^T, 0)` with `pinv(B) = B^T (B B^T)^-1`.
pub fn mel_to_linear(mel: &MelSpectrogram, cfg: &MelConfig) -> Result<MagnitudeSpectrogram> {
    if mel.n_mels != cfg.n_mels {
        return Err(Error::shape(
            "mel_to_linear",
            format!("{} mel bands but config has {}", mel.n_mels, cfg.n_mels),
        ));
    }
    let bank = mel_filterbank(cfg)?;
    let bins = cfg.fft_size / 2 + 1;
    let n = cfg.n_mels;

    // Gram matrix G = B B^T (n x n)
    let mut gram = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = bank[i].iter().zip(&bank[j]).map(|(a, b)| a * b).sum();
            gram[i][j] = dot;
            gram[j][i] = dot;
        }
    }
    let ginv = invert(&gram)?;
    // P = G^-1 B (n x bins); then mag = exp(mel) @ P, clamped at zero
    let mut proj = vec![vec![0.0f64; bins]; n];
    for i in 0..n {
        for j in 0..n {
            let g = ginv[i][j];
            if g != 0.0 {
                for k in 0..bins {
                    proj[i][k] += g * bank[j][k];
                }
            }
        }
    }

    let mut out = vec![0.0f64; mel.frames * bins];
    for t in 0..mel.frames {
        let row = &mut out[t * bins..(t + 1) * bins];
        for m in 0..n {
            let e = mel.at(t, m).exp();
            if e != 0.0 {
                for (k, slot) in row.iter_mut().enumerate() {
                    *slot += e * proj[m][k];
                }
            }
        }
        for slot in row.iter_mut() {
            if *slot < 0.0 {
                *slot = 0.0;
            }
        }
    }
    MagnitudeSpectrogram::new(mel.frames, bins, out)
}
