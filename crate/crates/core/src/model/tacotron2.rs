//! Recurrent attention-based synthesizer: embedding → BLSTM encoder →
//! prenet-fed LSTM decoder with location-sensitive (or forward) attention,
//! stop-token head, and a convolutional postnet.

use crate::attention::{
    forward_attention_step, location_sensitive_attend, transition_agent, AttentionState,
};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{Graph, Scalar, Value};
use crate::text::TokenSequence;

use super::config::{AttentionKind, ParamSpec, SpeakerEmbedding, Tacotron2Config};
use super::{add_speaker, apply_postnet, check_tokens, pad_frames, prenet, ForwardOutput};

pub(crate) fn manifest(cfg: &Tacotron2Config) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let enc_dim = cfg.enc_dim();
    out.push(ParamSpec::glorot(
        "embed",
        vec![cfg.vocab_size, cfg.embedding_dim],
    ));
    for l in 0..cfg.encoder_layers {
        let d_in = if l == 0 { cfg.embedding_dim } else { enc_dim };
        for dir in ["fwd", "bwd"] {
            let p = format!("enc.blstm{l}.{dir}");
            out.push(ParamSpec::glorot(
                format!("{p}.w_ih"),
                vec![d_in, 4 * cfg.encoder_units],
            ));
            out.push(ParamSpec::glorot(
                format!("{p}.w_hh"),
                vec![cfg.encoder_units, 4 * cfg.encoder_units],
            ));
            out.push(ParamSpec::zeros(format!("{p}.b"), vec![1, 4 * cfg.encoder_units]));
        }
    }
    if let Some(sd) = cfg.spk_dim {
        out.push(ParamSpec::glorot("spk.proj.w", vec![sd, enc_dim]));
    }
    for l in 0..cfg.prenet_layers {
        let d_in = if l == 0 { cfg.n_mels } else { cfg.prenet_units };
        out.push(ParamSpec::glorot(
            format!("prenet.{l}.w"),
            vec![d_in, cfg.prenet_units],
        ));
        // Nonzero bias: the go-frame is all zeros, so a zero bias would park
        // every first-step relu pre-activation exactly on the kink.
        out.push(ParamSpec::uniform(
            format!("prenet.{l}.b"),
            vec![1, cfg.prenet_units],
            1.0 / (d_in as f64).sqrt(),
        ));
    }
    for l in 0..cfg.decoder_layers {
        let d_in = if l == 0 {
            cfg.prenet_out() + enc_dim
        } else {
            cfg.decoder_units + enc_dim
        };
        let p = format!("dec.lstm{l}");
        out.push(ParamSpec::glorot(
            format!("{p}.w_ih"),
            vec![d_in, 4 * cfg.decoder_units],
        ));
        out.push(ParamSpec::glorot(
            format!("{p}.w_hh"),
            vec![cfg.decoder_units, 4 * cfg.decoder_units],
        ));
        out.push(ParamSpec::zeros(format!("{p}.b"), vec![1, 4 * cfg.decoder_units]));
    }
    // location-sensitive scoring machinery (shared by every attention kind)
    out.push(ParamSpec::glorot(
        "att.query.w",
        vec![cfg.decoder_units, cfg.attention_dim],
    ));
    out.push(ParamSpec::glorot("att.keys.w", vec![enc_dim, cfg.attention_dim]));
    out.push(ParamSpec::glorot(
        "att.conv",
        vec![cfg.location.kernel_width, cfg.location.conv_channels],
    ));
    out.push(ParamSpec::glorot(
        "att.loc.w",
        vec![cfg.location.conv_channels, cfg.attention_dim],
    ));
    out.push(ParamSpec::zeros("att.b", vec![1, cfg.attention_dim]));
    out.push(ParamSpec::glorot("att.v", vec![cfg.attention_dim, 1]));
    if cfg.attention == AttentionKind::ForwardTa {
        out.push(ParamSpec::glorot(
            "att.ta.w",
            vec![enc_dim + cfg.decoder_units + 1, 1],
        ));
        out.push(ParamSpec::zeros("att.ta.b", vec![1, 1]));
    }
    let d_out = cfg.decoder_units + enc_dim;
    out.push(ParamSpec::glorot(
        "feat.w",
        vec![d_out, cfg.n_mels * cfg.reduction],
    ));
    out.push(ParamSpec::zeros("feat.b", vec![1, cfg.n_mels * cfg.reduction]));
    out.push(ParamSpec::glorot("stop.w", vec![d_out, 1]));
    out.push(ParamSpec::zeros("stop.b", vec![1, 1]));
    out.extend(super::config::postnet_specs(
        "post",
        cfg.postnet_layers,
        cfg.postnet_channels,
        cfg.postnet_kernel,
        cfg.n_mels,
    ));
    out
}

pub(crate) fn encode<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &Tacotron2Config,
    tokens: &TokenSequence,
    spk: Option<&SpeakerEmbedding>,
) -> Result<Value> {
    let table = g.p("embed")?;
    let mut x = g.tape.embed(table, &tokens.ids)?;
    for l in 0..cfg.encoder_layers {
        x = g.blstm(
            &format!("enc.blstm{l}.fwd"),
            &format!("enc.blstm{l}.bwd"),
            x,
        )?;
    }
    add_speaker(g, x, cfg.spk_dim, spk)
}

/// Recurrent decoder state threaded through the step function; one instance
/// per utterance.
pub(crate) struct Tac2Cell {
    hs: Vec<(Value, Value)>,
    att: AttentionState,
    context: Value,
    prev_u: Value,
}

impl Tac2Cell {
    pub(crate) fn fresh<S: Scalar>(
        g: &mut Graph<'_, S>,
        cfg: &Tacotron2Config,
        n_enc: usize,
    ) -> Result<Self> {
        let hs = (0..cfg.decoder_layers)
            .map(|_| (g.zeros(1, cfg.decoder_units), g.zeros(1, cfg.decoder_units)))
            .collect();
        let att = match cfg.attention {
            AttentionKind::Location => AttentionState::fresh(g, n_enc),
            // the forward recursion has zero mass everywhere if the history
            // starts all-zero; pin it to the first position instead
            _ => AttentionState::fresh_onehot(g, n_enc)?,
        };
        Ok(Tac2Cell {
            hs,
            att,
            context: g.zeros(1, cfg.enc_dim()),
            prev_u: g.scalar(S::cast_from(0.5)),
        })
    }

    /// One decoder step from the previous output frame. Returns the flat
    /// 1×(reduction·n_mels) frame group, the stop logit, and the alignment.
    pub(crate) fn step<S: Scalar>(
        &mut self,
        g: &mut Graph<'_, S>,
        cfg: &Tacotron2Config,
        enc: Value,
        prev_frame: Value,
        prenet_always: bool,
    ) -> Result<(Value, Value, Value)> {
        let pre = prenet(
            g,
            prev_frame,
            "prenet",
            cfg.prenet_layers,
            cfg.prenet_dropout,
            prenet_always,
        )?;
        let x0 = g.tape.concat_cols(&[pre, self.context])?;
        let (h0, c0) = g.lstm_step("dec.lstm0", x0, self.hs[0].0, self.hs[0].1)?;
        self.hs[0] = (h0, c0);

        let (loc_ctx, ahat, loc_state) =
            location_sensitive_attend(g, "att", h0, enc, &self.att, &cfg.location)?;
        let align = match cfg.attention {
            AttentionKind::Location => {
                self.context = loc_ctx;
                self.att = loc_state;
                ahat
            }
            AttentionKind::Forward | AttentionKind::ForwardTa => {
                let u = match cfg.attention {
                    AttentionKind::ForwardTa => Some(self.prev_u),
                    _ => None,
                };
                let al = forward_attention_step(g, ahat, self.att.prev_align, u)?;
                self.context = g.tape.matmul(al, enc)?;
                let cumulative = g.tape.add(self.att.cumulative, al)?;
                self.att = AttentionState {
                    prev_align: al,
                    cumulative,
                    key_cache: loc_state.key_cache,
                };
                if cfg.attention == AttentionKind::ForwardTa {
                    // next step's transition probability, from this context
                    self.prev_u = transition_agent(g, "att.ta", self.context, h0, self.prev_u)?;
                }
                al
            }
        };

        let mut top = h0;
        for l in 1..cfg.decoder_layers {
            let xi = g.tape.concat_cols(&[top, self.context])?;
            let (h, c) = g.lstm_step(&format!("dec.lstm{l}"), xi, self.hs[l].0, self.hs[l].1)?;
            self.hs[l] = (h, c);
            top = h;
        }
        let cat = g.tape.concat_cols(&[top, self.context])?;
        let flat = g.affine(cat, "feat")?;
        let stop = g.affine(cat, "stop")?;
        Ok((flat, stop, align))
    }
}

/// Teacher-forced pass: the decoder sees the ground-truth previous frame at
/// every step. Targets are padded to a reduction multiple with silence.
pub fn tacotron2_forward<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &Tacotron2Config,
    tokens: &TokenSequence,
    targets: &MelSpectrogram,
    spk: Option<&SpeakerEmbedding>,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    check_tokens(tokens, cfg.vocab_size)?;
    if targets.n_mels != cfg.n_mels {
        return Err(Error::shape(
            "tacotron2",
            format!("targets have {} mel bins, model wants {}", targets.n_mels, cfg.n_mels),
        ));
    }
    if targets.frames == 0 {
        return Err(Error::InvalidArgument("tacotron2: empty target spectrogram".into()));
    }

    let n = tokens.ids.len();
    let r = cfg.reduction;
    let (padded, t_pad) = pad_frames::<S>(targets, r);
    let steps = t_pad / r;

    let enc = encode(g, cfg, tokens, spk)?;
    let targets_leaf = g.constant(t_pad, cfg.n_mels, padded)?;
    let mut cell = Tac2Cell::fresh(g, cfg, n)?;

    let mut frames = Vec::with_capacity(t_pad);
    let mut stops = Vec::with_capacity(steps);
    let mut aligns = Vec::with_capacity(steps);
    for s in 0..steps {
        let prev = if s == 0 {
            g.zeros(1, cfg.n_mels)
        } else {
            g.tape.slice_rows(targets_leaf, s * r - 1, 1)?
        };
        let (flat, stop, align) = cell.step(g, cfg, enc, prev, true)?;
        for j in 0..r {
            frames.push(g.tape.slice_cols(flat, j * cfg.n_mels, cfg.n_mels)?);
        }
        stops.push(stop);
        aligns.push(align);
    }

    let mel_before = g.tape.concat_rows(&frames)?;
    let mel_after = apply_postnet(g, mel_before, "post", cfg.postnet_layers, cfg.postnet_kernel)?;
    let stop_logits = g.tape.concat_rows(&stops)?;
    let align_mat = g.tape.concat_rows(&aligns)?;
    Ok(ForwardOutput {
        mel_before,
        mel_after,
        stop_logits: Some(stop_logits),
        alignments: vec![align_mat],
        log_durations: None,
        frames: targets.frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::guided_attention_loss_node;
    use crate::attention::GuidedAttentionConfig;
    use crate::model::{materialize, Model, ModelConfig};
    use crate::nn::finite_diff_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_targets(frames: usize, n_mels: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..frames * n_mels)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        MelSpectrogram::new(frames, n_mels, data, 128, 8000).unwrap()
    }

    fn toy_tokens(ids: &[usize], vocab: usize) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), vocab).unwrap()
    }

    #[test]
    fn shapes_line_up_and_alignments_are_stochastic() {
        let cfg = Tacotron2Config::micro(8, 8);
        let model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 1).unwrap();
        let tokens = toy_tokens(&[3, 4, 5, 2], 8);
        let targets = toy_targets(7, 8, 2);
        let mut g = model.graph(0, true);
        let out = tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).unwrap();
        assert_eq!(g.tape.dims(out.mel_before), (7, 8));
        assert_eq!(g.tape.dims(out.mel_after), (7, 8));
        assert_eq!(g.tape.dims(out.stop_logits.unwrap()), (7, 1));
        assert_eq!(g.tape.dims(out.alignments[0]), (7, 4));
        assert_eq!(out.frames, 7);
        // materialize revalidates: alignment rows must sum to one
        let snap = materialize(&g, &out, 128, 8000).unwrap();
        assert_eq!(snap.alignments[0].rows, 7);
        assert_eq!(snap.stop_logits.len(), 7);
    }

    #[test]
    fn reduction_two_pads_to_a_multiple() {
        let mut cfg = Tacotron2Config::micro(8, 8);
        cfg.reduction = 2;
        let model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 1).unwrap();
        let tokens = toy_tokens(&[3, 4, 2], 8);
        let targets = toy_targets(7, 8, 3); // pads to 8 frames, 4 steps
        let mut g = model.graph(0, true);
        let out = tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).unwrap();
        assert_eq!(g.tape.dims(out.mel_before), (8, 8));
        assert_eq!(g.tape.dims(out.stop_logits.unwrap()), (4, 1));
        assert_eq!(g.tape.dims(out.alignments[0]), (4, 3));
        assert_eq!(out.frames, 7);
    }

    #[test]
    fn zero_params_still_give_finite_outputs() {
        let cfg = Tacotron2Config::micro(8, 6);
        let mut model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 1).unwrap();
        let names: Vec<String> = model.params.names().cloned().collect();
        for n in names {
            model.params.get_mut(&n).unwrap().data.fill(0.0);
        }
        let tokens = toy_tokens(&[1, 2, 3], 8);
        let targets = toy_targets(5, 6, 4);
        let mut g = model.graph(0, true);
        let out = tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).unwrap();
        for v in [out.mel_before, out.mel_after, out.stop_logits.unwrap(), out.alignments[0]] {
            assert!(g.tape.value(v).iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn same_seed_same_outputs() {
        let cfg = Tacotron2Config::micro(8, 8);
        let model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 5).unwrap();
        let tokens = toy_tokens(&[3, 1, 6, 2], 8);
        let targets = toy_targets(6, 8, 6);
        let run = || {
            let mut g = model.graph(11, true);
            let out = tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).unwrap();
            g.tape.value(out.mel_after).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn forward_attention_kinds_run_and_stay_stochastic() {
        for kind in [AttentionKind::Forward, AttentionKind::ForwardTa] {
            let mut cfg = Tacotron2Config::micro(8, 6);
            cfg.attention = kind;
            let model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 3).unwrap();
            let tokens = toy_tokens(&[4, 5, 6, 2], 8);
            let targets = toy_targets(6, 6, 7);
            let mut g = model.graph(2, true);
            let out = tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).unwrap();
            let snap = materialize(&g, &out, 128, 8000).unwrap();
            assert_eq!(snap.alignments[0].rows, 6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = Tacotron2Config::micro(8, 8);
        let model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 1).unwrap();
        let targets = toy_targets(5, 8, 1);
        // token id out of the model's vocab
        let tokens = TokenSequence::new(vec![3, 9], 16).unwrap();
        let mut g = model.graph(0, true);
        assert!(tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).is_err());
        // mel width mismatch
        let tokens = toy_tokens(&[3, 4], 8);
        let bad = toy_targets(5, 4, 1);
        let mut g = model.graph(0, true);
        assert!(tacotron2_forward(&mut g, &cfg, &tokens, &bad, None).is_err());
    }

    #[test]
    fn speaker_embedding_feeds_the_encoder() {
        let mut cfg = Tacotron2Config::micro(8, 6);
        cfg.spk_dim = Some(3);
        let model: Model<f32> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 9).unwrap();
        let tokens = toy_tokens(&[1, 5, 2], 8);
        let targets = toy_targets(4, 6, 9);
        let spk_a = SpeakerEmbedding::new(vec![0.5, -0.3, 0.8]).unwrap();
        let spk_b = SpeakerEmbedding::new(vec![-1.0, 0.2, 0.1]).unwrap();
        let run = |spk: &SpeakerEmbedding| {
            let mut g = model.graph(4, true);
            let out = tacotron2_forward(&mut g, &cfg, &tokens, &targets, Some(spk)).unwrap();
            g.tape.value(out.mel_after).to_vec()
        };
        assert_ne!(run(&spk_a), run(&spk_b));
        // and omitting it is an error for a multi-speaker config
        let mut g = model.graph(4, true);
        assert!(tacotron2_forward(&mut g, &cfg, &tokens, &targets, None).is_err());
    }

    #[test]
    fn micro_gradcheck_composite_loss() {
        // mel + stop + guided-attention terms together exercise every param
        let cfg = Tacotron2Config::micro(6, 4);
        let model: Model<f64> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 7).unwrap();
        let tokens = toy_tokens(&[3, 4, 2], 6);
        let targets = toy_targets(4, 4, 8);
        let ga = GuidedAttentionConfig::default();
        let report = finite_diff_check(&model.params, 1e-5, |g| {
            let out = tacotron2_forward(g, &cfg, &tokens, &targets, None)?;
            let m = g.tape.mean_all(out.mel_after);
            let s = g.tape.mean_all(out.stop_logits.unwrap());
            let ga_term = guided_attention_loss_node(g, out.alignments[0], &ga)?;
            let ms = g.tape.add(m, s)?;
            g.tape.add(ms, ga_term)
        })
        .unwrap();
        assert!(
            report.global_max_rel < 1e-4,
            "worst {} at {:.3e}",
            report.worst_param,
            report.global_max_rel
        );
    }

    #[test]
    fn forward_ta_micro_gradcheck() {
        let mut cfg = Tacotron2Config::micro(6, 4);
        cfg.attention = AttentionKind::ForwardTa;
        cfg.postnet_layers = 0; // keep it lean; postnet is covered above
        let model: Model<f64> = Model::init(ModelConfig::Tacotron2(cfg.clone()), 13).unwrap();
        let tokens = toy_tokens(&[1, 4, 2], 6);
        let targets = toy_targets(3, 4, 14);
        let report = finite_diff_check(&model.params, 1e-5, |g| {
            let out = tacotron2_forward(g, &cfg, &tokens, &targets, None)?;
            let m = g.tape.mean_all(out.mel_after);
            let s = g.tape.mean_all(out.stop_logits.unwrap());
            g.tape.add(m, s)
        })
        .unwrap();
        assert!(
            report.global_max_rel < 1e-4,
            "worst {} at {:.3e}",
            report.worst_param,
            report.global_max_rel
        );
    }
}
