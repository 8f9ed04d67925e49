//! Centered STFT analysis and weighted overlap-add synthesis.

use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

/// Short-time Fourier transform parameters. The window is a periodic Hann
/// window of `win_length` samples, zero-padded to `fft_size` when shorter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 1024, win_length: 1024, hop_length: 256 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 {
            return Err(Error::InvalidArgument("hop_length must be positive".into()));
        }
        if !(self.hop_length <= self.win_length && self.win_length <= self.fft_size) {
            return Err(Error::InvalidArgument(format!(
                "need hop <= win <= fft, got hop={} win={} fft={}",
                self.hop_length, self.win_length, self.fft_size
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "fft_size must be even, got {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// One-sided bin count, fft_size/2 + 1.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames for a signal of `len` samples: 1 + ceil(len / hop).
    pub fn num_frames(&self, len: usize) -> usize {
        1 + len.div_ceil(self.hop_length)
    }

    /// Periodic Hann window of win_length samples.
    pub(crate) fn window(&self) -> Vec<f64> {
        let n = self.win_length as f64;
        (0..self.win_length)
            .map(|j| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / n).cos()))
            .collect()
    }
}

/// One-sided complex spectrogram, row-major `[frame * bins + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { frames, bins, re: vec![0.0; frames * bins], im: vec![0.0; frames * bins] }
    }
}

/// One-sided magnitude spectrogram, row-major `[frame * bins + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::shape(
                "magnitude",
                format!("{} values for {}x{}", data.len(), frames, bins),
            ));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.bins + k]
    }
}

/// Edge-excluding mirror index, valid for any signed offset.
fn reflect(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered STFT with reflect padding. Frame `t` is centered on sample
/// `t * hop`; the frame count is `1 + ceil(len / hop)`.
pub fn stft(samples: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if samples.len() < cfg.hop_length {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is shorter than one hop ({})",
            samples.len(),
            cfg.hop_length
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("stft input".into()));
    }

    let frames = cfg.num_frames(samples.len());
    let bins = cfg.bins();
    let fft = cfg.fft_size;
    let window = cfg.window();
    let off = (fft - cfg.win_length) / 2;
    let half = (fft / 2) as isize;

    let mut planner = FftPlanner::<f64>::new();
    let plan = planner.plan_fft_forward(fft);
    let mut spec = ComplexSpectrogram::zeros(frames, bins);
    let mut buf = vec![Complex::new(0.0, 0.0); fft];

    for t in 0..frames {
        let center = (t * cfg.hop_length) as isize;
        for (b, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(0.0, 0.0);
            if b >= off && b < off + cfg.win_length {
                let src = reflect(center - half + b as isize, samples.len());
                *slot = Complex::new(samples[src] * window[b - off], 0.0);
            }
        }
        plan.process(&mut buf);
        for k in 0..bins {
            spec.re[t * bins + k] = buf[k].re;
            spec.im[t * bins + k] = buf[k].im;
        }
    }
    Ok(spec)
}

/// Element-wise magnitude of a complex spectrogram.
pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    let data = spec.re.iter().zip(&spec.im).map(|(r, i)| (r * r + i * i).sqrt()).collect();
    MagnitudeSpectrogram { frames: spec.frames, bins: spec.bins, data }
}

/// Inverse STFT by windowed overlap-add, normalized by the summed squared
/// window. Output length is `(frames - 1) * hop`.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if spec.bins != cfg.bins() {
        return Err(Error::shape(
            "istft",
            format!("{} bins but config implies {}", spec.bins, cfg.bins()),
        ));
    }
    if spec.frames == 0 {
        return Err(Error::InvalidArgument("istft needs at least one frame".into()));
    }

    let fft = cfg.fft_size;
    let bins = spec.bins;
    let window = cfg.window();
    let off = (fft - cfg.win_length) / 2;
    let half = fft / 2;

    let mut planner = FftPlanner::<f64>::new();
    let plan = planner.plan_fft_inverse(fft);
    let mut buf = vec![Complex::new(0.0, 0.0); fft];

    // Accumulate in padded coordinates: padded index = sample index + half.
    let padded_len = (spec.frames - 1) * cfg.hop_length + fft;
    let mut acc = vec![0.0f64; padded_len];
    let mut den = vec![0.0f64; padded_len];

    for t in 0..spec.frames {
        for k in 0..bins {
            buf[k] = Complex::new(spec.re[t * bins + k], spec.im[t * bins + k]);
        }
        // rebuild negative frequencies by conjugate symmetry
        for k in bins..fft {
            buf[k] = buf[fft - k].conj();
        }
        plan.process(&mut buf);
        let base = t * cfg.hop_length;
        for (j, &w) in window.iter().enumerate() {
            // rustfft's inverse is unnormalized; divide by fft here
            let v = buf[off + j].re / fft as f64;
            acc[base + off + j] += w * v;
            den[base + off + j] += w * w;
        }
    }

    let out_len = (spec.frames - 1) * cfg.hop_length;
    let mut out = vec![0.0f64; out_len];
    for (i, slot) in out.iter_mut().enumerate() {
        let p = i + half;
        if den[p] > 1e-8 {
            *slot = acc[p] / den[p];
        }
    }
    Ok(out)
}
