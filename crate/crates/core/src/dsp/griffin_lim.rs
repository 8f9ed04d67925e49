//! Phase reconstruction from magnitude spectrograms: Griffin-Lim with the
//! momentum acceleration, tracking per-iteration consistency error.

use crate::dsp::stft::{istft, magnitude, stft, ComplexSpectrogram, MagnitudeSpectrogram, StftConfig};
use crate::dsp::wav::Waveform;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GriffinLimConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Exponent applied to the magnitudes before reconstruction (1.0 = as-is).
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_iterations() -> usize {
    64
}

fn default_momentum() -> f64 {
    0.99
}

fn default_power() -> f64 {
    1.0
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            momentum: default_momentum(),
            power: default_power(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GriffinLimResult {
    pub wave: Waveform,
    /// Consistency error after each iteration:
    /// `|| |stft(istft(c))| - M ||_F / ||M||_F`.
    pub consistency: Vec<f64>,
}

/// Replace the magnitudes of `d` with `target`, keeping the phase of `d`.
/// Bins where `d` vanishes fall back to zero phase.
fn project_magnitude(d: &ComplexSpectrogram, target: &MagnitudeSpectrogram) -> ComplexSpectrogram {
    let mut out = ComplexSpectrogram::zeros(d.frames, d.bins);
    for i in 0..d.re.len() {
        let m = target.data[i];
        let norm = (d.re[i] * d.re[i] + d.im[i] * d.im[i]).sqrt();
        if norm > 0.0 {
            out.re[i] = m * d.re[i] / norm;
            out.im[i] = m * d.im[i] / norm;
        } else {
            out.re[i] = m;
            out.im[i] = 0.0;
        }
    }
    out
}

fn frobenius(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Deterministic starting phases. Uninformed starts (zero or random phase)
/// routinely strand the iteration in a poor basin on strongly tonal input, so
/// seed from the magnitudes instead: estimate each frame's dominant frequency
/// from its spectral peak (log-parabolic interpolation), integrate into a
/// per-sample phase track, synthesize that tone at a few trial offsets, and
/// keep the offset whose phases agree best with `mag` after one consistency
/// projection. Broadband content just degrades to an arbitrary-but-fixed
/// start; the iteration proper does the rest.
fn seed_phases(mag: &MagnitudeSpectrogram, stft_cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let frames = mag.frames;
    let bins = mag.bins;
    let hop = stft_cfg.hop_length;

    // dominant digital frequency per frame, radians per sample
    let mut omega = vec![0.0f64; frames];
    for t in 0..frames {
        let row = &mag.data[t * bins..(t + 1) * bins];
        let mut k = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[k] {
                k = i;
            }
        }
        if row[k] <= 0.0 {
            omega[t] = if t > 0 { omega[t - 1] } else { 0.0 };
            continue;
        }
        let mut delta = 0.0;
        if k > 0 && k + 1 < bins && row[k - 1] > 0.0 && row[k + 1] > 0.0 {
            let (a, b, c) = (row[k - 1].ln(), row[k].ln(), row[k + 1].ln());
            let den = a - 2.0 * b + c;
            if den.abs() > 1e-12 {
                delta = (0.5 * (a - c) / den).clamp(-0.5, 0.5);
            }
        }
        omega[t] = 2.0 * std::f64::consts::PI * (k as f64 + delta) / stft_cfg.fft_size as f64;
    }

    // frames overlapping the signal edges see the analysis padding, which
    // biases their peaks; borrow the nearest interior estimate instead
    let edge = stft_cfg.fft_size.div_ceil(hop);
    if frames > 2 * edge {
        for t in 0..edge {
            omega[t] = omega[edge];
        }
        for t in frames - edge..frames {
            omega[t] = omega[frames - edge - 1];
        }
    }

    let out_len = (frames - 1) * hop;
    let mut track = vec![0.0f64; out_len];
    let mut acc = 0.0;
    for (s, slot) in track.iter_mut().enumerate() {
        *slot = acc;
        let t = ((s + hop / 2) / hop).min(frames - 1);
        acc += omega[t];
    }

    let tau = 2.0 * std::f64::consts::PI;
    let mut best: Option<(f64, ComplexSpectrogram)> = None;
    for m in 0..16 {
        let offset = tau * m as f64 / 16.0;
        let tone: Vec<f64> = track.iter().map(|p| (p + offset).sin()).collect();
        let cand = project_magnitude(&stft(&tone, stft_cfg)?, mag);
        let r = magnitude(&stft(&istft(&cand, stft_cfg)?, stft_cfg)?);
        let score: f64 = r
            .data
            .iter()
            .zip(&mag.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, cand));
        }
    }
    Ok(best.expect("at least one seed candidate").1)
}

/// Griffin-Lim with momentum: alternate the consistency projection (istft
/// then stft) with magnitude replacement, extrapolating between consecutive
/// projections by `momentum`. The output is peak-normalized to 0.95.
pub fn griffin_lim_with_trace(
    mag: &MagnitudeSpectrogram,
    stft_cfg: &StftConfig,
    gl_cfg: &GriffinLimConfig,
    sample_rate: u32,
) -> Result<GriffinLimResult> {
    stft_cfg.validate()?;
    if mag.bins != stft_cfg.bins() {
        return Err(Error::shape(
            "griffin_lim",
            format!("{} bins but config implies {}", mag.bins, stft_cfg.bins()),
        ));
    }
    if mag.frames < 2 {
        return Err(Error::InvalidArgument(
            "griffin_lim needs at least two frames".into(),
        ));
    }
    if mag.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "magnitudes must be finite and nonnegative".into(),
        ));
    }
    if !(0.0..1.0).contains(&gl_cfg.momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum must be in [0, 1), got {}",
            gl_cfg.momentum
        )));
    }
    if !gl_cfg.power.is_finite() || gl_cfg.power <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "power must be positive and finite, got {}",
            gl_cfg.power
        )));
    }

    let work = if gl_cfg.power == 1.0 {
        mag.clone()
    } else {
        let data = mag.data.iter().map(|v| v.powf(gl_cfg.power)).collect();
        MagnitudeSpectrogram::new(mag.frames, mag.bins, data)?
    };

    let out_len = (work.frames - 1) * stft_cfg.hop_length;
    let mag_norm = frobenius(&work.data);
    if mag_norm == 0.0 {
        // nothing to reconstruct: silence of the expected length
        return Ok(GriffinLimResult {
            wave: Waveform::new(vec![0.0; out_len], sample_rate)?,
            consistency: vec![0.0; gl_cfg.iterations],
        });
    }

    let mut c = seed_phases(&work, stft_cfg)?;
    let mut consistency = Vec::with_capacity(gl_cfg.iterations);
    let mut t_prev: Option<ComplexSpectrogram> = None;
    for _ in 0..gl_cfg.iterations {
        let y = istft(&c, stft_cfg)?;
        let t = stft(&y, stft_cfg)?;
        debug_assert_eq!(t.frames, work.frames);

        let t_mag = magnitude(&t);
        let err: f64 = t_mag
            .data
            .iter()
            .zip(&work.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / mag_norm;
        consistency.push(err);

        let d = match &t_prev {
            Some(prev) => {
                let mut d = ComplexSpectrogram::zeros(t.frames, t.bins);
                for i in 0..t.re.len() {
                    d.re[i] = t.re[i] + gl_cfg.momentum * (t.re[i] - prev.re[i]);
                    d.im[i] = t.im[i] + gl_cfg.momentum * (t.im[i] - prev.im[i]);
                }
                d
            }
            None => t.clone(),
        };
        c = project_magnitude(&d, &work);
        t_prev = Some(t);
    }

    let mut samples = istft(&c, stft_cfg)?;
    let peak = samples.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.95 / peak;
        for v in samples.iter_mut() {
            *v *= scale;
        }
    }
    Ok(GriffinLimResult { wave: Waveform::new(samples, sample_rate)?, consistency })
}

/// Same as [`griffin_lim_with_trace`] but discards the trace.
pub fn griffin_lim(
    mag: &MagnitudeSpectrogram,
    stft_cfg: &StftConfig,
    gl_cfg: &GriffinLimConfig,
    sample_rate: u32,
) -> Result<Waveform> {
    Ok(griffin_lim_with_trace(mag, stft_cfg, gl_cfg, sample_rate)?.wave)
}
