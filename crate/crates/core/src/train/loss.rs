//! Composite TTS training loss: masked L1/L2 feature terms on both mel
//! heads, weighted sigmoid cross-entropy on the stop token, the guided
//! attention penalty, and the duration-predictor MSE.

use serde::{Deserialize, Serialize};

use crate::attention::{guided_attention_loss_node, GuidedAttentionConfig};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::model::{DurationSequence, ForwardOutput};
use crate::nn::{Graph, Scalar, Value};

fn one() -> f64 {
    1.0
}
fn five() -> f64 {
    5.0
}

/// Weights of the loss components. The BCE term always enters the total with
/// weight 1; `bce_pos_weight` scales only the positive (stop) class inside it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub w_l1: f64,
    #[serde(default = "one")]
    pub w_l2: f64,
    #[serde(default = "five")]
    pub bce_pos_weight: f64,
    /// Guided-attention weight; σ lives in [`GuidedAttentionConfig`].
    #[serde(default)]
    pub lambda_ga: f64,
    #[serde(default = "one")]
    pub w_dur: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_l1: 1.0,
            w_l2: 1.0,
            bce_pos_weight: 5.0,
            lambda_ga: 0.0,
            w_dur: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_l1", self.w_l1),
            ("w_l2", self.w_l2),
            ("bce_pos_weight", self.bce_pos_weight),
            ("lambda_ga", self.lambda_ga),
            ("w_dur", self.w_dur),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.w_l1 + self.w_l2 <= 0.0 {
            return Err(Error::Config(
                "at least one of w_l1/w_l2 must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Scalar snapshot of one loss evaluation. Components are unweighted means;
/// `total` applies the weights.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub bce: f64,
    pub guided: f64,
    pub duration: f64,
    /// Valid (unpadded) frame count that the feature terms averaged over.
    pub frames: usize,
}

/// Stop-token targets at decoder-step granularity: 0 everywhere except the
/// step holding the last real frame.
pub fn make_stop_targets(frames: usize, reduction: usize) -> Result<Vec<f64>> {
    if frames == 0 || reduction == 0 {
        return Err(Error::InvalidArgument(
            "make_stop_targets: frames and reduction must be >= 1".into(),
        ));
    }
    let steps = frames.div_ceil(reduction);
    let mut t = vec![0.0; steps];
    t[steps - 1] = 1.0;
    Ok(t)
}

/// Length of the leading all-true prefix; errors if any `true` follows a
/// `false` (padding is always trailing) or the mask is entirely false.
fn prefix_len(mask: &[bool]) -> Result<usize> {
    let k = mask.iter().take_while(|&&m| m).count();
    if mask[k..].iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "frame mask must be a contiguous valid prefix".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("all frames are masked out".into()));
    }
    Ok(k)
}

/// Build the composite loss over one utterance and report its components.
///
/// `valid_frames` marks real rows in the (possibly r-padded) model output;
/// `stop_targets` is 0/1 per decoder step and must be empty for models that
/// emit no stop logits. Returns the differentiable 1×1 total plus a numeric
/// report; `report.total` is the weighted sum of the components.
#[allow(clippy::too_many_arguments)]
pub fn tts_loss<S: Scalar>(
    g: &mut Graph<'_, S>,
    out: &ForwardOutput,
    target: &MelSpectrogram,
    stop_targets: &[f64],
    weights: &LossWeights,
    ga: &GuidedAttentionConfig,
    valid_frames: &[bool],
    durations: Option<&DurationSequence>,
) -> Result<(Value, LossReport)> {
    weights.validate()?;
    ga.validate()?;
    let (t_pad, m) = g.tape.dims(out.mel_before);
    if g.tape.dims(out.mel_after) != (t_pad, m) {
        return Err(Error::shape("tts_loss", "mel_before/mel_after disagree"));
    }
    if m != target.n_mels {
        return Err(Error::shape(
            "tts_loss",
            format!("model emits {m} mel bins, target has {}", target.n_mels),
        ));
    }
    if valid_frames.len() != t_pad {
        return Err(Error::shape(
            "tts_loss",
            format!("mask covers {} frames, output has {t_pad}", valid_frames.len()),
        ));
    }
    let k = prefix_len(valid_frames)?;
    if k > target.frames {
        return Err(Error::shape(
            "tts_loss",
            format!("{k} valid frames but target has only {}", target.frames),
        ));
    }

    // feature terms: means over the k valid frames × m bins, on both heads
    let tgt_data: Vec<S> = target.data[..k * m].iter().map(|&v| S::cast_from(v)).collect();
    let tgt = g.constant(k, m, tgt_data)?;
    let mut head_terms = |pred: Value| -> Result<(Value, Value)> {
        let p = g.tape.slice_rows(pred, 0, k)?;
        let d = g.tape.sub(p, tgt)?;
        let a = g.tape.abs(d);
        let l1 = g.tape.mean_all(a);
        let sq = g.tape.mul(d, d)?;
        let l2 = g.tape.mean_all(sq);
        Ok((l1, l2))
    };
    let (l1_b, l2_b) = head_terms(out.mel_before)?;
    let (l1_a, l2_a) = head_terms(out.mel_after)?;
    let l1 = g.tape.add(l1_b, l1_a)?;
    let l2 = g.tape.add(l2_b, l2_a)?;

    // stop-token BCE over valid decoder steps
    let bce = match out.stop_logits {
        Some(stop) => {
            let (steps, sc) = g.tape.dims(stop);
            if sc != 1 || steps == 0 || t_pad % steps != 0 {
                return Err(Error::shape(
                    "tts_loss",
                    format!("stop logits {steps}x{sc} vs {t_pad} output frames"),
                ));
            }
            if stop_targets.len() != steps {
                return Err(Error::shape(
                    "tts_loss",
                    format!("{} stop targets for {steps} steps", stop_targets.len()),
                ));
            }
            let r = t_pad / steps;
            let valid_steps = k.div_ceil(r);
            let mask: Vec<bool> = (0..steps).map(|s| s < valid_steps).collect();
            let t: Vec<S> = stop_targets.iter().map(|&v| S::cast_from(v)).collect();
            Some(g.tape.bce_with_logits(stop, &t, &mask, S::cast_from(weights.bce_pos_weight))?)
        }
        None => {
            if !stop_targets.is_empty() {
                return Err(Error::InvalidArgument(
                    "stop targets given but the model emits no stop logits".into(),
                ));
            }
            None
        }
    };

    // guided attention, averaged over every collected alignment, each cut to
    // its valid decoder steps
    let guided = if out.alignments.is_empty() {
        None
    } else {
        let mut acc: Option<Value> = None;
        for &a in &out.alignments {
            let (rows, _) = g.tape.dims(a);
            if rows == 0 || t_pad % rows != 0 {
                return Err(Error::shape(
                    "tts_loss",
                    format!("alignment with {rows} rows vs {t_pad} output frames"),
                ));
            }
            let r = t_pad / rows;
            let vs = k.div_ceil(r);
            let cut = g.tape.slice_rows(a, 0, vs)?;
            let term = guided_attention_loss_node(g, cut, ga)?;
            acc = Some(match acc {
                Some(s) => g.tape.add(s, term)?,
                None => term,
            });
        }
        acc.map(|s| g.tape.scale(s, S::cast_from(1.0 / out.alignments.len() as f64)))
    };

    // duration-predictor MSE on log(1 + d)
    let duration = match out.log_durations {
        Some(ld) => {
            let d = durations.ok_or_else(|| {
                Error::InvalidArgument(
                    "model predicts durations but none were given as targets".into(),
                )
            })?;
            let (n, c) = g.tape.dims(ld);
            if c != 1 || d.len() != n {
                return Err(Error::shape(
                    "tts_loss",
                    format!("{} duration targets for {n}x{c} predictions", d.len()),
                ));
            }
            let t: Vec<S> = d
                .per_token
                .iter()
                .map(|&di| S::cast_from((1.0 + di as f64).ln()))
                .collect();
            let tv = g.constant(n, 1, t)?;
            let diff = g.tape.sub(ld, tv)?;
            let sq = g.tape.mul(diff, diff)?;
            Some(g.tape.mean_all(sq))
        }
        None => None,
    };

    // total = w_l1·l1 + w_l2·l2 + bce + λ·guided + w_dur·duration
    let mut total = g.tape.scale(l1, S::cast_from(weights.w_l1));
    let wl2 = g.tape.scale(l2, S::cast_from(weights.w_l2));
    total = g.tape.add(total, wl2)?;
    if let Some(b) = bce {
        total = g.tape.add(total, b)?;
    }
    if let Some(ga_term) = guided {
        if weights.lambda_ga > 0.0 {
            let w = g.tape.scale(ga_term, S::cast_from(weights.lambda_ga));
            total = g.tape.add(total, w)?;
        }
    }
    if let Some(dur) = duration {
        if weights.w_dur > 0.0 {
            let w = g.tape.scale(dur, S::cast_from(weights.w_dur));
            total = g.tape.add(total, w)?;
        }
    }

    let item = |g: &Graph<'_, S>, v: Option<Value>| -> f64 {
        v.map(|v| g.tape.value(v)[0].cast_f64()).unwrap_or(0.0)
    };
    let report = LossReport {
        total: g.tape.value(total)[0].cast_f64(),
        l1: g.tape.value(l1)[0].cast_f64(),
        l2: g.tape.value(l2)[0].cast_f64(),
        bce: item(g, bce),
        guided: item(g, guided),
        duration: item(g, duration),
        frames: k,
    };
    Ok((total, report))
}
