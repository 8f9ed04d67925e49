//! Acoustic models: two autoregressive attention-based mel synthesizers and
//! a duration-driven feed-forward one, behind a single [`Model`] wrapper.
//!
//! Forwards are teacher-forced graph builders: they take a [`Graph`] bound to
//! the model's parameters and hand back live [`Value`] nodes so the trainer
//! can attach losses. [`materialize`] snapshots those nodes into plain
//! feature types for synthesis and diagnostics.

mod checkpoint;
mod config;
mod decode;
mod fastspeech;
mod tacotron2;
mod transformer;

pub use config::{
    AttentionKind, FastSpeechConfig, ModelConfig, SpeakerEmbedding, Tacotron2Config,
    TransformerTtsConfig,
};
pub use decode::{decode_autoregressive, DecodeOptions, DecodeResult};
pub use fastspeech::{extract_durations, fastspeech_forward, length_regulate, DurationSequence};
pub use tacotron2::tacotron2_forward;
pub use transformer::transformer_tts_forward;

use crate::attention::AlignmentMatrix;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{Conv1dPadding, Graph, ParamStore, Scalar, Value};
use crate::text::TokenSequence;

/// Log-mel value used for padding frames: the log of the feature floor,
/// i.e. what a silent frame comes out as.
pub fn log_pad_value() -> f64 {
    1e-10f64.ln()
}

/// Live graph nodes out of a teacher-forced forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// Mel prediction before the postnet residual, padded_frames×n_mels.
    pub mel_before: Value,
    /// Prediction after the postnet residual (same node when no postnet).
    pub mel_after: Value,
    /// Stop-token logits, one row per decoder step; absent for fastspeech.
    pub stop_logits: Option<Value>,
    /// Attention alignments, each steps×n_tokens, row-stochastic.
    pub alignments: Vec<Value>,
    /// Predicted log(1+duration), n_tokens×1; fastspeech only.
    pub log_durations: Option<Value>,
    /// Real (unpadded) frame count the prediction covers.
    pub frames: usize,
}

/// Plain-data snapshot of a forward pass or a decode.
#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub mel_before: MelSpectrogram,
    pub mel_after: MelSpectrogram,
    pub stop_logits: Vec<f64>,
    pub alignments: Vec<AlignmentMatrix>,
}

/// Copy a [`ForwardOutput`]'s node values out of the graph. Padded frames are
/// kept; callers that care trim with [`ForwardOutput::frames`].
pub fn materialize<S: Scalar>(
    g: &Graph<'_, S>,
    out: &ForwardOutput,
    hop_length: usize,
    sample_rate: u32,
) -> Result<SynthesisOutput> {
    let grab = |v: Value| -> Vec<f64> { g.tape.value(v).iter().map(|x| x.cast_f64()).collect() };
    let to_mel = |v: Value| -> Result<MelSpectrogram> {
        let (r, c) = g.tape.dims(v);
        MelSpectrogram::new(r, c, grab(v), hop_length, sample_rate)
    };
    let mut alignments = Vec::with_capacity(out.alignments.len());
    for &a in &out.alignments {
        let (r, c) = g.tape.dims(a);
        alignments.push(AlignmentMatrix::new(r, c, grab(a))?);
    }
    Ok(SynthesisOutput {
        mel_before: to_mel(out.mel_before)?,
        mel_after: to_mel(out.mel_after)?,
        stop_logits: out.stop_logits.map(&grab).unwrap_or_default(),
        alignments,
    })
}

/// A model config plus its parameters. `S` is f32 for training and synthesis,
/// f64 for gradient checking.
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Fresh model with seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = config::init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn kind_str(&self) -> &'static str {
        self.config.kind()
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    pub fn graph(&self, seed: u64, train: bool) -> Graph<'_, S> {
        Graph::new(&self.params, seed, train)
    }

    /// Teacher-forced forward dispatch. `durations` is required by fastspeech
    /// (and must sum to the target frame count); the autoregressive models
    /// ignore it.
    pub fn teacher_forward(
        &self,
        g: &mut Graph<'_, S>,
        tokens: &TokenSequence,
        targets: &MelSpectrogram,
        durations: Option<&DurationSequence>,
        spk: Option<&SpeakerEmbedding>,
    ) -> Result<ForwardOutput> {
        match &self.config {
            ModelConfig::Tacotron2(cfg) => tacotron2_forward(g, cfg, tokens, targets, spk),
            ModelConfig::Transformer(cfg) => transformer_tts_forward(g, cfg, tokens, targets, spk),
            ModelConfig::FastSpeech(cfg) => {
                let d = durations.ok_or_else(|| {
                    Error::InvalidArgument("fastspeech training needs per-token durations".into())
                })?;
                if d.total() != targets.frames {
                    return Err(Error::shape(
                        "fastspeech",
                        format!(
                            "durations sum to {} but targets have {} frames",
                            d.total(),
                            targets.frames
                        ),
                    ));
                }
                fastspeech_forward(g, cfg, tokens, Some(d), spk)
            }
        }
    }

    /// Inference dispatch: autoregressive decode, or a single duration-driven
    /// pass for fastspeech.
    pub fn infer(
        &self,
        tokens: &TokenSequence,
        spk: Option<&SpeakerEmbedding>,
        opts: &DecodeOptions,
    ) -> Result<DecodeResult> {
        match &self.config {
            ModelConfig::FastSpeech(cfg) => {
                opts.validate()?;
                let mut g = self.graph(opts.seed, false);
                let out = fastspeech_forward(&mut g, cfg, tokens, None, spk)?;
                let output = materialize(&g, &out, opts.hop_length, opts.sample_rate)?;
                Ok(DecodeResult {
                    steps: out.frames,
                    output,
                    stopped: true,
                    hit_maxlen: false,
                })
            }
            _ => decode_autoregressive(self, tokens, spk, opts),
        }
    }
}

pub(crate) fn check_tokens(tokens: &TokenSequence, vocab_size: usize) -> Result<()> {
    for &id in &tokens.ids {
        if id >= vocab_size {
            return Err(Error::InvalidArgument(format!(
                "token id {} out of range for model vocab {}",
                id, vocab_size
            )));
        }
    }
    Ok(())
}

/// Cast a target spectrogram to `S`, padding with silence frames up to a
/// multiple of the reduction factor. Returns (row-major data, padded frames).
pub(crate) fn pad_frames<S: Scalar>(mel: &MelSpectrogram, r: usize) -> (Vec<S>, usize) {
    let t_pad = mel.frames.div_ceil(r) * r;
    let mut data: Vec<S> = mel.data.iter().map(|&v| S::cast_from(v)).collect();
    data.resize(t_pad * mel.n_mels, S::cast_from(log_pad_value()));
    (data, t_pad)
}

/// Bottleneck prenet: `layers` × (affine → relu → dropout). With `always`
/// set the dropout stays live outside training, which keeps autoregressive
/// decoding from collapsing onto its own conditioning.
pub(crate) fn prenet<S: Scalar>(
    g: &mut Graph<'_, S>,
    x: Value,
    prefix: &str,
    layers: usize,
    p_drop: f64,
    always: bool,
) -> Result<Value> {
    let mut h = x;
    for l in 0..layers {
        h = g.affine(h, &format!("{prefix}.{l}"))?;
        h = g.tape.relu(h);
        h = g.dropout(h, p_drop, always)?;
    }
    Ok(h)
}

/// Convolutional postnet: returns mel + residual, or `mel` untouched when
/// `layers` is zero. All but the last conv are followed by tanh.
pub(crate) fn apply_postnet<S: Scalar>(
    g: &mut Graph<'_, S>,
    mel: Value,
    prefix: &str,
    layers: usize,
    kernel: usize,
) -> Result<Value> {
    if layers == 0 {
        return Ok(mel);
    }
    let mut h = mel;
    for l in 0..layers {
        let kern = g.p(&format!("{prefix}.{l}.conv"))?;
        h = g.tape.conv1d(h, kern, kernel, Conv1dPadding::Same)?;
        let b = g.p(&format!("{prefix}.{l}.b"))?;
        h = g.tape.add_row(h, b)?;
        if l + 1 < layers {
            h = g.tape.tanh(h);
        }
    }
    g.tape.add(mel, h)
}

/// Broadcast-add a projected speaker embedding onto encoder states. Presence
/// must match the config: multi-speaker models require an embedding,
/// single-speaker models reject one.
pub(crate) fn add_speaker<S: Scalar>(
    g: &mut Graph<'_, S>,
    enc: Value,
    spk_dim: Option<usize>,
    spk: Option<&SpeakerEmbedding>,
) -> Result<Value> {
    match (spk_dim, spk) {
        (None, None) => Ok(enc),
        (Some(d), Some(e)) => {
            if e.dim() != d {
                return Err(Error::shape(
                    "speaker",
                    format!("embedding has dim {}, model wants {}", e.dim(), d),
                ));
            }
            let data: Vec<S> = e.data.iter().map(|&v| S::cast_from(v)).collect();
            let ev = g.constant(1, d, data)?;
            let proj = g.linear(ev, "spk.proj")?;
            g.tape.add_row(enc, proj)
        }
        (Some(_), None) => Err(Error::InvalidArgument(
            "model is multi-speaker but no speaker embedding was given".into(),
        )),
        (None, Some(_)) => Err(Error::InvalidArgument(
            "speaker embedding given to a single-speaker model".into(),
        )),
    }
}
