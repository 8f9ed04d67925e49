//! Real-time-factor measurement: wall-clock generation time over generated
//! audio time, behind a clock abstraction so tests can use fake time.

use serde::Serialize;

use crate::error::{Error, Result};

/// Monotone seconds source. `now` takes `&mut self` so mock clocks can
/// advance an internal cursor.
pub trait Clock {
    fn now(&mut self) -> f64;
}

/// Wall clock anchored at construction.
pub struct SystemClock {
    start: std::time::Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            start: std::time::Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RtfReport {
    /// One RTF per successfully timed utterance, in input order.
    pub per_utterance: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n−1); 0 for a single utterance.
    pub sd: f64,
    /// Input indices skipped because they produced no audio.
    pub excluded: Vec<usize>,
}

/// Time `synth` over `utterances`. `synth` returns the duration of the audio
/// it generated, in seconds; utterances yielding none are excluded from the
/// statistics and listed in the report.
pub fn measure_rtf<U, F>(
    mut synth: F,
    utterances: &[U],
    clock: &mut dyn Clock,
) -> Result<RtfReport>
where
    F: FnMut(&U) -> Result<f64>,
{
    if utterances.is_empty() {
        return Err(Error::InvalidArgument("no utterances to time".into()));
    }
    let mut per = Vec::with_capacity(utterances.len());
    let mut excluded = Vec::new();
    for (i, u) in utterances.iter().enumerate() {
        let t0 = clock.now();
        let audio_secs = synth(u)?;
        let t1 = clock.now();
        if t1 < t0 {
            return Err(Error::InvalidArgument(
                "clock went backwards while timing synthesis".into(),
            ));
        }
        if !(audio_secs > 0.0) || !audio_secs.is_finite() {
            excluded.push(i);
            continue;
        }
        per.push((t1 - t0) / audio_secs);
    }
    if per.is_empty() {
        return Err(Error::InvalidArgument(
            "every utterance produced zero-length audio".into(),
        ));
    }
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let sd = if per.len() > 1 {
        (per.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RtfReport {
        per_utterance: per,
        mean,
        sd,
        excluded,
    })
}
