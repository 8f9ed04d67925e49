//! Feed-forward synthesizer: FFT-block encoder, length regulator driven by
//! per-token durations, FFT-block decoder. No autoregression — inference is
//! a single pass using durations from a small conv predictor that trains on
//! log durations with a stop-gradient on its input.

use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, AlignmentMatrix};
use crate::error::{Error, Result};
use crate::nn::{Conv1dPadding, Graph, Scalar, Value};
use crate::text::TokenSequence;

use super::config::{FastSpeechConfig, ParamSpec, SpeakerEmbedding};
use super::transformer::sinusoid_pe;
use super::{add_speaker, apply_postnet, check_tokens, ForwardOutput};

/// Per-token frame counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationSequence {
    pub per_token: Vec<usize>,
}

impl DurationSequence {
    pub fn new(per_token: Vec<usize>) -> Result<Self> {
        if per_token.is_empty() {
            return Err(Error::InvalidArgument("empty duration sequence".into()));
        }
        Ok(DurationSequence { per_token })
    }

    pub fn len(&self) -> usize {
        self.per_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_token.is_empty()
    }

    pub fn total(&self) -> usize {
        self.per_token.iter().sum()
    }
}

/// Read hard durations off an alignment: each frame is assigned to its
/// argmax token (ties to the smallest index), then counted per token.
pub fn extract_durations(align: &AlignmentMatrix) -> DurationSequence {
    let mut per_token = vec![0usize; align.cols];
    for t in 0..align.rows {
        let row = align.row(t);
        let mut best = 0;
        for (n, &w) in row.iter().enumerate() {
            if w > row[best] {
                best = n;
            }
        }
        per_token[best] += 1;
    }
    DurationSequence { per_token }
}

/// Expand token states to frame rate by repeating each row `durations[n]`
/// times, as a constant T×N selection matrix times the states — which keeps
/// the op differentiable w.r.t. the states and doubles as the model's hard
/// alignment. Returns (expanded states, selection matrix).
pub fn length_regulate<S: Scalar>(
    g: &mut Graph<'_, S>,
    states: Value,
    durations: &DurationSequence,
) -> Result<(Value, Value)> {
    let (n, _) = g.tape.dims(states);
    if durations.len() != n {
        return Err(Error::shape(
            "length_regulate",
            format!("{} durations for {} token states", durations.len(), n),
        ));
    }
    let total = durations.total();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "length_regulate: durations sum to zero".into(),
        ));
    }
    let mut sel = vec![S::cast_from(0.0); total * n];
    let mut t = 0;
    for (tok, &d) in durations.per_token.iter().enumerate() {
        for _ in 0..d {
            sel[t * n + tok] = S::cast_from(1.0);
            t += 1;
        }
    }
    let sel = g.constant(total, n, sel)?;
    let expanded = g.tape.matmul(sel, states)?;
    Ok((expanded, sel))
}

fn fft_block_specs(prefix: &str, d: usize, ff: usize, k: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    out.extend(super::config::ln_specs(&format!("{prefix}.ln1"), d));
    for n in ["q", "k", "v", "out"] {
        out.push(ParamSpec::glorot(format!("{prefix}.attn.{n}.w"), vec![d, d]));
    }
    out.extend(super::config::ln_specs(&format!("{prefix}.ln2"), d));
    out.push(ParamSpec::glorot(format!("{prefix}.ff.conv1"), vec![k * d, ff]));
    out.push(ParamSpec::zeros(format!("{prefix}.ff.bias1"), vec![1, ff]));
    out.push(ParamSpec::glorot(format!("{prefix}.ff.conv2"), vec![k * ff, d]));
    out.push(ParamSpec::zeros(format!("{prefix}.ff.bias2"), vec![1, d]));
    out
}

pub(crate) fn manifest(cfg: &FastSpeechConfig) -> Vec<ParamSpec> {
    let d = cfg.model_dim;
    let mut out = Vec::new();
    out.push(ParamSpec::glorot("embed", vec![cfg.vocab_size, d]));
    out.push(ParamSpec::ones("enc.alpha", vec![1, 1]));
    out.push(ParamSpec::ones("dec.alpha", vec![1, 1]));
    if let Some(sd) = cfg.spk_dim {
        out.push(ParamSpec::glorot("spk.proj.w", vec![sd, d]));
    }
    for b in 0..cfg.encoder_blocks {
        out.extend(fft_block_specs(&format!("enc.b{b}"), d, cfg.ff_dim, cfg.ff_kernel));
    }
    out.extend(super::config::ln_specs("enc.ln", d));
    for l in 0..cfg.duration_layers {
        let cin = if l == 0 { d } else { cfg.duration_channels };
        out.push(ParamSpec::glorot(
            format!("dur.{l}.conv"),
            vec![cfg.duration_kernel * cin, cfg.duration_channels],
        ));
        out.push(ParamSpec::zeros(format!("dur.{l}.bias"), vec![1, cfg.duration_channels]));
        out.extend(super::config::ln_specs(
            &format!("dur.{l}.ln"),
            cfg.duration_channels,
        ));
    }
    out.push(ParamSpec::glorot("dur.out.w", vec![cfg.duration_channels, 1]));
    out.push(ParamSpec::zeros("dur.out.b", vec![1, 1]));
    for b in 0..cfg.decoder_blocks {
        out.extend(fft_block_specs(&format!("dec.b{b}"), d, cfg.ff_dim, cfg.ff_kernel));
    }
    out.extend(super::config::ln_specs("dec.ln", d));
    out.push(ParamSpec::glorot("feat.w", vec![d, cfg.n_mels]));
    out.push(ParamSpec::zeros("feat.b", vec![1, cfg.n_mels]));
    if cfg.postnet {
        out.extend(super::config::postnet_specs(
            "post",
            cfg.postnet_layers,
            cfg.postnet_channels,
            cfg.postnet_kernel,
            cfg.n_mels,
        ));
    }
    out
}

/// Pre-norm FFT block: self-attention, then a two-conv feed-forward, both
/// residual.
fn fft_block<S: Scalar>(
    g: &mut Graph<'_, S>,
    prefix: &str,
    x: Value,
    cfg: &FastSpeechConfig,
) -> Result<Value> {
    let nrm = g.layer_norm(x, &format!("{prefix}.ln1"))?;
    let (a, _) = multi_head_attention(g, &format!("{prefix}.attn"), nrm, nrm, nrm, None, cfg.heads)?;
    let a = g.dropout(a, cfg.dropout, false)?;
    let x = g.tape.add(x, a)?;
    let nrm = g.layer_norm(x, &format!("{prefix}.ln2"))?;
    let k1 = g.p(&format!("{prefix}.ff.conv1"))?;
    let mut h = g.tape.conv1d(nrm, k1, cfg.ff_kernel, Conv1dPadding::Same)?;
    let b1 = g.p(&format!("{prefix}.ff.bias1"))?;
    h = g.tape.add_row(h, b1)?;
    h = g.tape.relu(h);
    h = g.dropout(h, cfg.dropout, false)?;
    let k2 = g.p(&format!("{prefix}.ff.conv2"))?;
    h = g.tape.conv1d(h, k2, cfg.ff_kernel, Conv1dPadding::Same)?;
    let b2 = g.p(&format!("{prefix}.ff.bias2"))?;
    h = g.tape.add_row(h, b2)?;
    h = g.dropout(h, cfg.dropout, false)?;
    g.tape.add(x, h)
}

pub(crate) fn encode<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &FastSpeechConfig,
    tokens: &TokenSequence,
    spk: Option<&SpeakerEmbedding>,
) -> Result<Value> {
    let table = g.p("embed")?;
    let emb = g.tape.embed(table, &tokens.ids)?;
    let pe = sinusoid_pe(g, tokens.ids.len(), cfg.model_dim)?;
    let alpha = g.p("enc.alpha")?;
    let pes = g.tape.scale_by(pe, alpha)?;
    let mut x = g.tape.add(emb, pes)?;
    x = g.dropout(x, cfg.dropout, false)?;
    for b in 0..cfg.encoder_blocks {
        x = fft_block(g, &format!("enc.b{b}"), x, cfg)?;
    }
    let x = g.layer_norm(x, "enc.ln")?;
    add_speaker(g, x, cfg.spk_dim, spk)
}

/// Conv duration head over detached encoder states; predicts log(1+d) per
/// token. The detach keeps duration error from steering the encoder.
fn duration_predictor<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &FastSpeechConfig,
    enc: Value,
) -> Result<Value> {
    let mut h = g.detach(enc)?;
    for l in 0..cfg.duration_layers {
        let k = g.p(&format!("dur.{l}.conv"))?;
        h = g.tape.conv1d(h, k, cfg.duration_kernel, Conv1dPadding::Same)?;
        let b = g.p(&format!("dur.{l}.bias"))?;
        h = g.tape.add_row(h, b)?;
        h = g.tape.relu(h);
        h = g.layer_norm(h, &format!("dur.{l}.ln"))?;
        h = g.dropout(h, cfg.dropout, false)?;
    }
    g.affine(h, "dur.out")
}

/// One non-autoregressive pass. With `durations` given (training, or forced
/// synthesis) the regulator uses them as-is; otherwise it rounds the
/// predictor's exp(p)−1 back to integers, clamping at zero — and if that
/// leaves nothing, gives one frame to the highest-scoring token so synthesis
/// always emits something.
pub fn fastspeech_forward<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &FastSpeechConfig,
    tokens: &TokenSequence,
    durations: Option<&DurationSequence>,
    spk: Option<&SpeakerEmbedding>,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    check_tokens(tokens, cfg.vocab_size)?;
    let n = tokens.ids.len();

    let enc = encode(g, cfg, tokens, spk)?;
    let log_durations = duration_predictor(g, cfg, enc)?; // n×1

    let used = match durations {
        Some(d) => {
            if d.len() != n {
                return Err(Error::shape(
                    "fastspeech",
                    format!("{} durations for {} tokens", d.len(), n),
                ));
            }
            d.clone()
        }
        None => {
            let vals = g.tape.value(log_durations);
            let mut per_token: Vec<usize> = vals
                .iter()
                .map(|v| (v.cast_f64().exp() - 1.0).round().max(0.0) as usize)
                .collect();
            if per_token.iter().sum::<usize>() == 0 {
                let mut best = 0;
                for (i, v) in vals.iter().enumerate() {
                    if v.cast_f64() > vals[best].cast_f64() {
                        best = i;
                    }
                }
                per_token[best] = 1;
            }
            DurationSequence { per_token }
        }
    };

    let (expanded, sel) = length_regulate(g, enc, &used)?;
    let total = used.total();
    let pe = sinusoid_pe(g, total, cfg.model_dim)?;
    let alpha = g.p("dec.alpha")?;
    let pes = g.tape.scale_by(pe, alpha)?;
    let mut y = g.tape.add(expanded, pes)?;
    y = g.dropout(y, cfg.dropout, false)?;
    for b in 0..cfg.decoder_blocks {
        y = fft_block(g, &format!("dec.b{b}"), y, cfg)?;
    }
    let y = g.layer_norm(y, "dec.ln")?;
    let mel_before = g.affine(y, "feat")?;
    let mel_after = if cfg.postnet {
        apply_postnet(g, mel_before, "post", cfg.postnet_layers, cfg.postnet_kernel)?
    } else {
        mel_before
    };
    Ok(ForwardOutput {
        mel_before,
        mel_after,
        stop_logits: None,
        alignments: vec![sel],
        log_durations: Some(log_durations),
        frames: total,
    })
}
