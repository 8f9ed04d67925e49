//! Autoregressive inference: step the decoder on its own predictions until
//! the stop head fires (past a minimum length) or a frame budget runs out.

use serde::{Deserialize, Serialize};

use crate::attention::AlignmentMatrix;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::text::TokenSequence;

use super::config::{SpeakerEmbedding, Tacotron2Config, TransformerTtsConfig};
use super::tacotron2::{self, Tac2Cell};
use super::transformer;
use super::{
    apply_postnet, check_tokens, materialize, ForwardOutput, Model, ModelConfig, SynthesisOutput,
};

fn d_threshold() -> f64 {
    0.5
}
fn d_maxlen() -> f64 {
    10.0
}
fn d_hop() -> usize {
    256
}
fn d_sr() -> u32 {
    22050
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Stop once sigmoid(stop logit) exceeds this.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    /// Emit at least ceil(minlenratio·n_tokens) frames before stopping.
    #[serde(default)]
    pub minlenratio: f64,
    /// Never emit more than floor(maxlenratio·n_tokens) frames.
    #[serde(default = "d_maxlen")]
    pub maxlenratio: f64,
    #[serde(default = "d_hop")]
    pub hop_length: usize,
    #[serde(default = "d_sr")]
    pub sample_rate: u32,
    /// RNG seed for the always-on prenet dropout.
    #[serde(default)]
    pub seed: u64,
    /// Keep the prenet dropout live while decoding (the default; switching it
    /// off makes decoding fully deterministic in distribution, not just per
    /// seed).
    #[serde(default = "d_true")]
    pub prenet_dropout: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            threshold: d_threshold(),
            minlenratio: 0.0,
            maxlenratio: d_maxlen(),
            hop_length: d_hop(),
            sample_rate: d_sr(),
            seed: 0,
            prenet_dropout: true,
        }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "decode: threshold {} outside (0,1)",
                self.threshold
            )));
        }
        if !(self.minlenratio >= 0.0) {
            return Err(Error::Config(format!(
                "decode: minlenratio {} negative",
                self.minlenratio
            )));
        }
        if !(self.maxlenratio > 0.0) {
            return Err(Error::Config(format!(
                "decode: maxlenratio {} must be positive",
                self.maxlenratio
            )));
        }
        if self.maxlenratio < self.minlenratio {
            return Err(Error::Config(format!(
                "decode: maxlenratio {} below minlenratio {}",
                self.maxlenratio, self.minlenratio
            )));
        }
        if self.hop_length == 0 || self.sample_rate == 0 {
            return Err(Error::Config("decode: hop/sample_rate must be nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub output: SynthesisOutput,
    /// Decoder steps taken (frames ÷ reduction for the recurrent models).
    pub steps: usize,
    /// The stop head fired (past the minimum length).
    pub stopped: bool,
    /// The frame budget cut decoding off instead.
    pub hit_maxlen: bool,
}

fn frame_limits(n_tokens: usize, opts: &DecodeOptions) -> (usize, usize) {
    let min_f = (opts.minlenratio * n_tokens as f64).ceil() as usize;
    let max_f = (opts.maxlenratio * n_tokens as f64).floor().max(1.0) as usize;
    (min_f, max_f.max(min_f).max(1))
}

fn stop_fired(logit: f64, threshold: f64) -> bool {
    1.0 / (1.0 + (-logit).exp()) > threshold
}

/// Free-running decode for the autoregressive models. Fastspeech is not
/// autoregressive and is rejected here; use [`Model::infer`].
pub fn decode_autoregressive<S: Scalar>(
    model: &Model<S>,
    tokens: &TokenSequence,
    spk: Option<&SpeakerEmbedding>,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    opts.validate()?;
    match &model.config {
        ModelConfig::Tacotron2(cfg) => decode_tacotron2(model, cfg, tokens, spk, opts),
        ModelConfig::Transformer(cfg) => decode_transformer(model, cfg, tokens, spk, opts),
        ModelConfig::FastSpeech(_) => Err(Error::InvalidArgument(
            "fastspeech is not autoregressive; it synthesizes in one pass".into(),
        )),
    }
}

/// The recurrent decoder carries its state through one persistent graph, so
/// decoding is a single incremental build.
fn decode_tacotron2<S: Scalar>(
    model: &Model<S>,
    cfg: &Tacotron2Config,
    tokens: &TokenSequence,
    spk: Option<&SpeakerEmbedding>,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    cfg.validate()?;
    check_tokens(tokens, cfg.vocab_size)?;
    let n = tokens.ids.len();
    let m = cfg.n_mels;
    let (min_f, max_f) = frame_limits(n, opts);

    let mut g = model.graph(opts.seed, false);
    let enc = tacotron2::encode(&mut g, cfg, tokens, spk)?;
    let mut cell = Tac2Cell::fresh(&mut g, cfg, n)?;

    let mut mel_rows = Vec::new();
    let mut stops = Vec::new();
    let mut aligns = Vec::new();
    let mut prev = g.zeros(1, m);
    let (mut stopped, mut hit_maxlen) = (false, false);
    loop {
        let (flat, stop, align) = cell.step(&mut g, cfg, enc, prev, opts.prenet_dropout)?;
        for j in 0..cfg.reduction {
            mel_rows.push(g.tape.slice_cols(flat, j * m, m)?);
        }
        stops.push(stop);
        aligns.push(align);
        let frames = mel_rows.len();
        let logit = g.tape.value(stop)[0].cast_f64();
        if stop_fired(logit, opts.threshold) && frames >= min_f {
            stopped = true;
            break;
        }
        if frames >= max_f {
            hit_maxlen = true;
            break;
        }
        prev = *mel_rows.last().expect("at least one frame per step");
    }

    mel_rows.truncate(max_f); // an r-group may overshoot the budget
    let mel_before = g.tape.concat_rows(&mel_rows)?;
    let mel_after =
        apply_postnet(&mut g, mel_before, "post", cfg.postnet_layers, cfg.postnet_kernel)?;
    let stop_logits = g.tape.concat_rows(&stops)?;
    let align_mat = g.tape.concat_rows(&aligns)?;
    let out = ForwardOutput {
        mel_before,
        mel_after,
        stop_logits: Some(stop_logits),
        alignments: vec![align_mat],
        log_durations: None,
        frames: mel_rows.len(),
    };
    let output = materialize(&g, &out, opts.hop_length, opts.sample_rate)?;
    Ok(DecodeResult {
        output,
        steps: stops.len(),
        stopped,
        hit_maxlen,
    })
}

/// The parallel decoder has no incremental state: every step re-runs the
/// stack over the whole generated prefix on a fresh graph (the encoder runs
/// once and is fed back as a constant).
fn decode_transformer<S: Scalar>(
    model: &Model<S>,
    cfg: &TransformerTtsConfig,
    tokens: &TokenSequence,
    spk: Option<&SpeakerEmbedding>,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    cfg.validate()?;
    check_tokens(tokens, cfg.vocab_size)?;
    let n = tokens.ids.len();
    let m = cfg.n_mels;
    let r = cfg.reduction;
    let (min_f, max_f) = frame_limits(n, opts);

    let enc_data: Vec<S> = {
        let mut g0 = model.graph(opts.seed, false);
        let enc = transformer::encode(&mut g0, cfg, tokens, spk)?;
        g0.tape.value(enc).to_vec()
    };

    let mut gen: Vec<S> = Vec::new(); // generated frames, row-major
    let mut stops = Vec::new();
    let mut aligns: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let (stopped, hit_maxlen) = loop {
        let step = stops.len();
        let steps_in = step + 1;
        let mut g = model.graph(opts.seed.wrapping_add(step as u64 + 1), false);
        let enc = g.constant(n, cfg.model_dim, enc_data.clone())?;
        let mut din = vec![S::cast_from(0.0); steps_in * m];
        for s in 1..steps_in {
            let src = (s * r - 1) * m;
            din[s * m..(s + 1) * m]
                .copy_from_slice(&gen[src..src + m]);
        }
        let dec_in = g.constant(steps_in, m, din)?;
        let (y, cross) =
            transformer::decoder_stack(&mut g, cfg, enc, dec_in, opts.prenet_dropout)?;
        let last = g.tape.slice_rows(y, steps_in - 1, 1)?;
        let flat = g.affine(last, "feat")?; // 1×(r·m)
        let stop = g.affine(last, "stop")?;
        gen.extend(g.tape.value(flat).iter().copied());
        let logit = g.tape.value(stop)[0].cast_f64();
        stops.push(logit);
        let frames = gen.len() / m;
        let will_stop = stop_fired(logit, opts.threshold) && frames >= min_f;
        let will_max = frames >= max_f;
        if will_stop || will_max {
            for &a in &cross {
                let (ar, ac) = g.tape.dims(a);
                let data = g.tape.value(a).iter().map(|x| x.cast_f64()).collect();
                aligns.push((ar, ac, data));
            }
            break (will_stop, !will_stop && will_max);
        }
    };

    let total = (gen.len() / m).min(max_f);
    gen.truncate(total * m);

    // postnet over the assembled spectrogram, one last graph
    let mut gp = model.graph(opts.seed, false);
    let mel_before = gp.constant(total, m, gen.clone())?;
    let mel_after =
        apply_postnet(&mut gp, mel_before, "post", cfg.postnet_layers, cfg.postnet_kernel)?;

    let before =
        MelSpectrogram::new(total, m, gen.iter().map(|v| v.cast_f64()).collect(), opts.hop_length, opts.sample_rate)?;
    let after = MelSpectrogram::new(
        total,
        m,
        gp.tape.value(mel_after).iter().map(|v| v.cast_f64()).collect(),
        opts.hop_length,
        opts.sample_rate,
    )?;
    let mut alignments = Vec::with_capacity(aligns.len());
    for (ar, ac, data) in aligns {
        alignments.push(AlignmentMatrix::new(ar, ac, data)?);
    }
    Ok(DecodeResult {
        steps: stops.len(),
        output: SynthesisOutput {
            mel_before: before,
            mel_after: after,
            stop_logits: stops,
            alignments,
        },
        stopped,
        hit_maxlen,
    })
}
