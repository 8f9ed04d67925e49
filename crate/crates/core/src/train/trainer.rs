//! Gradient accumulation, the optimizer step, and the epoch loop.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{diagonality, AlignmentMatrix, GuidedAttentionConfig};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::model::{DurationSequence, Model, SpeakerEmbedding};
use crate::nn::{
    adam_step, clip_global_norm, AdamConfig, AdamState, Graph, LrSchedule, ParamStore, Scalar,
    Value,
};
use crate::text::TokenSequence;

use super::batch::make_dynamic_batches;
use super::loss::{make_stop_targets, tts_loss, LossReport, LossWeights};

/// Everything the trainer owns besides the model: optimizer moments, the
/// gradient holding buffer, and progress counters.
pub struct TrainerState<S: Scalar> {
    pub epoch: usize,
    /// Optimizer applications so far — not micro-batches.
    pub global_step: u64,
    /// Micro-batches currently sitting in the holding buffer.
    pub k_cur: usize,
    pub adam: AdamState<S>,
    pub best_val: Option<f64>,
    pub seed: u64,
    accum: ParamStore<S>,
}

impl<S: Scalar> TrainerState<S> {
    pub fn new(params: &ParamStore<S>, adam: AdamConfig, seed: u64) -> Self {
        TrainerState {
            epoch: 0,
            global_step: 0,
            k_cur: 0,
            adam: AdamState::new(params, adam),
            best_val: None,
            seed,
            accum: params.zeros_like(),
        }
    }

    /// Fold one micro-batch gradient into the buffer; on the `accum_k`-th
    /// call divide by `accum_k`, clip to `clip_norm`, and apply Adam.
    /// Returns whether parameters moved. Non-finite gradients are dropped
    /// with a warning and leave all counters untouched.
    pub fn accumulate_and_step(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &ParamStore<S>,
        accum_k: usize,
        clip_norm: f64,
    ) -> Result<bool> {
        if accum_k == 0 {
            return Err(Error::InvalidArgument("accum_k must be >= 1".into()));
        }
        if !(clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clip_norm must be positive, got {clip_norm}"
            )));
        }
        if !grads.all_finite() {
            eprintln!(
                "warning: non-finite gradients at step {}, skipping batch",
                self.global_step
            );
            return Ok(false);
        }
        self.accum.add_assign(grads)?;
        self.k_cur += 1;
        if self.k_cur < accum_k {
            return Ok(false);
        }
        self.accum.scale(S::cast_from(1.0 / accum_k as f64));
        clip_global_norm(&mut self.accum, clip_norm);
        adam_step(params, &self.accum, &mut self.adam)?;
        self.accum.scale(S::zero());
        self.k_cur = 0;
        self.global_step += 1;
        Ok(true)
    }
}

/// One utterance ready for teacher forcing: normalized features, token IDs,
/// and (FastSpeech) teacher durations.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub tokens: TokenSequence,
    pub mel: MelSpectrogram,
    pub durations: Option<DurationSequence>,
    pub spk: Option<SpeakerEmbedding>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frame-element budget per batch (size × max frames).
    pub batch_budget: usize,
    pub accum_k: usize,
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub guided: GuidedAttentionConfig,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_budget: 20_000,
            accum_k: 1,
            clip_norm: 1.0,
            weights: LossWeights::default(),
            guided: GuidedAttentionConfig::default(),
            schedule: LrSchedule::Constant { lr: 1e-3 },
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_budget == 0 {
            return Err(Error::Config("batch_budget must be >= 1".into()));
        }
        if self.accum_k == 0 {
            return Err(Error::Config("accum_k must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "clip_norm must be positive and finite, got {}",
                self.clip_norm
            )));
        }
        self.weights.validate()?;
        self.guided.validate()?;
        self.schedule.at(1)?;
        Ok(())
    }
}

/// One line of the metrics log; keys are the external contract.
#[derive(Debug, Serialize)]
struct MetricsLine {
    epoch: usize,
    step: u64,
    total: f64,
    l1: f64,
    l2: f64,
    bce: f64,
    guided: f64,
    duration: f64,
    diagonality: f64,
    lr: f64,
}

/// Per-epoch validation summary (component means over the validation set).
#[derive(Debug, Clone, Serialize)]
pub struct ValSummary {
    pub epoch: usize,
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub bce: f64,
    pub guided: f64,
    pub duration: f64,
    pub diagonality: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub val_history: Vec<ValSummary>,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Every checkpoint file written, in write order.
    pub checkpoints: Vec<PathBuf>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Best (max) diagonality across an utterance's alignments, after defensive
/// row renormalization of the float32 softmax outputs.
fn best_diagonality<S: Scalar>(g: &Graph<'_, S>, aligns: &[Value]) -> Result<f64> {
    let mut best = 0.0f64;
    for &a in aligns {
        let (r, c) = g.tape.dims(a);
        let mut data: Vec<f64> = g.tape.value(a).iter().map(|x| x.cast_f64()).collect();
        for t in 0..r {
            let row = &mut data[t * c..(t + 1) * c];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        let m = AlignmentMatrix::new(r, c, data)?;
        best = best.max(diagonality(&m));
    }
    Ok(best)
}

/// Teacher-forced forward + loss for one utterance on a fresh graph.
fn utterance_loss<'a, S: Scalar>(
    model: &'a Model<S>,
    item: &TrainItem,
    cfg: &TrainConfig,
    seed: u64,
    train: bool,
) -> Result<(Graph<'a, S>, Value, LossReport, f64)> {
    let mut g = model.graph(seed, train);
    let out = model.teacher_forward(
        &mut g,
        &item.tokens,
        &item.mel,
        item.durations.as_ref(),
        item.spk.as_ref(),
    )?;
    let (t_pad, _) = g.tape.dims(out.mel_before);
    let mask: Vec<bool> = (0..t_pad).map(|i| i < item.mel.frames).collect();
    let stop_t = if out.stop_logits.is_some() {
        make_stop_targets(item.mel.frames, model.config.reduction())?
    } else {
        Vec::new()
    };
    let diag = best_diagonality(&g, &out.alignments)?;
    let (loss, rep) = tts_loss(
        &mut g,
        &out,
        &item.mel,
        &stop_t,
        &cfg.weights,
        &cfg.guided,
        &mask,
        item.durations.as_ref(),
    )?;
    Ok((g, loss, rep, diag))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// The epoch loop: plan batches, accumulate teacher-forced gradients, step,
/// log one JSON line per optimizer application, validate, snapshot.
///
/// Writes `snapshot.ep.N` after epoch N (N = 0 is the initial state) and
/// keeps the best-validation params in `model.loss.best`.
pub fn train_run<S: Scalar>(
    model: &mut Model<S>,
    cfg: &TrainConfig,
    train_items: &[TrainItem],
    valid_items: &[TrainItem],
    out_dir: &Path,
    metrics: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(Error::InvalidArgument("no training utterances".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let by_id: HashMap<&str, &TrainItem> = train_items
        .iter()
        .map(|it| (it.id.as_str(), it))
        .collect();
    if by_id.len() != train_items.len() {
        return Err(Error::InvalidArgument("duplicate train utterance ids".into()));
    }
    let lengths: Vec<(String, usize)> = train_items
        .iter()
        .map(|it| (it.id.clone(), it.mel.frames))
        .collect();

    let mut trainer = TrainerState::new(&model.params, cfg.adam, cfg.seed);
    let mut outcome = TrainOutcome {
        epochs_run: 0,
        val_history: Vec::new(),
        best_val: None,
        best_epoch: None,
        checkpoints: Vec::new(),
    };
    let mut save = |model: &Model<S>, name: &str, extra: Option<serde_json::Map<String, serde_json::Value>>, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        let path = out_dir.join(name);
        model.save(&path, extra.as_ref())?;
        checkpoints.push(path);
        Ok(())
    };
    save(model, "snapshot.ep.0", None, &mut outcome.checkpoints)?;

    let mut emit = |line: &MetricsLine, metrics: &mut dyn Write| -> Result<()> {
        let s = serde_json::to_string(line)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        writeln!(metrics, "{s}").map_err(|e| Error::io("<metrics>", e))
    };

    let mut micro: u64 = 0; // distinct dropout stream per utterance visit
    for epoch in 1..=cfg.epochs {
        trainer.epoch = epoch;
        let plan = make_dynamic_batches(
            &lengths,
            cfg.batch_budget,
            mix(cfg.seed, epoch as u64, 0x0b417),
        )?;
        // window = everything since the last optimizer application
        let mut win: Vec<LossReport> = Vec::new();
        let mut win_diag: Vec<f64> = Vec::new();
        for batch in &plan.batches {
            let mut grads = model.params.zeros_like();
            let mut contributed = 0usize;
            for id in batch {
                let item = by_id[id.as_str()];
                micro += 1;
                let seed = mix(cfg.seed, epoch as u64, micro);
                let (mut g, loss, rep, diag) = utterance_loss(model, item, cfg, seed, true)?;
                if !rep.total.is_finite() {
                    eprintln!(
                        "warning: non-finite loss on '{id}' at epoch {epoch}, skipping"
                    );
                    continue;
                }
                g.backward(loss)?;
                g.harvest_grads(&mut grads)?;
                contributed += 1;
                win.push(rep);
                win_diag.push(diag);
            }
            if contributed == 0 {
                continue;
            }
            grads.scale(S::cast_from(1.0 / contributed as f64));
            let lr = cfg.schedule.at(trainer.global_step + 1)?;
            trainer.adam.config.lr = lr;
            let stepped =
                trainer.accumulate_and_step(&mut model.params, &grads, cfg.accum_k, cfg.clip_norm)?;
            if stepped {
                let line = MetricsLine {
                    epoch,
                    step: trainer.global_step,
                    total: mean(&win.iter().map(|r| r.total).collect::<Vec<_>>()),
                    l1: mean(&win.iter().map(|r| r.l1).collect::<Vec<_>>()),
                    l2: mean(&win.iter().map(|r| r.l2).collect::<Vec<_>>()),
                    bce: mean(&win.iter().map(|r| r.bce).collect::<Vec<_>>()),
                    guided: mean(&win.iter().map(|r| r.guided).collect::<Vec<_>>()),
                    duration: mean(&win.iter().map(|r| r.duration).collect::<Vec<_>>()),
                    diagonality: mean(&win_diag),
                    lr,
                };
                emit(&line, metrics)?;
                win.clear();
                win_diag.clear();
            }
        }

        if !valid_items.is_empty() {
            let mut reps: Vec<LossReport> = Vec::new();
            let mut diags: Vec<f64> = Vec::new();
            for (i, item) in valid_items.iter().enumerate() {
                let seed = mix(cfg.seed ^ 0x5A5A_5A5A, epoch as u64, i as u64);
                let (_, _, rep, diag) = utterance_loss(model, item, cfg, seed, false)?;
                if !rep.total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "validation loss on '{}' at epoch {epoch}",
                        item.id
                    )));
                }
                reps.push(rep);
                diags.push(diag);
            }
            let val = ValSummary {
                epoch,
                total: mean(&reps.iter().map(|r| r.total).collect::<Vec<_>>()),
                l1: mean(&reps.iter().map(|r| r.l1).collect::<Vec<_>>()),
                l2: mean(&reps.iter().map(|r| r.l2).collect::<Vec<_>>()),
                bce: mean(&reps.iter().map(|r| r.bce).collect::<Vec<_>>()),
                guided: mean(&reps.iter().map(|r| r.guided).collect::<Vec<_>>()),
                duration: mean(&reps.iter().map(|r| r.duration).collect::<Vec<_>>()),
                diagonality: mean(&diags),
            };
            let is_best = outcome.best_val.map(|b| val.total < b).unwrap_or(true);
            if is_best {
                outcome.best_val = Some(val.total);
                outcome.best_epoch = Some(epoch);
                trainer.best_val = Some(val.total);
                let mut extra = serde_json::Map::new();
                extra.insert("val_total".into(), val.total.into());
                extra.insert("val_epoch".into(), (epoch as u64).into());
                save(model, "model.loss.best", Some(extra), &mut outcome.checkpoints)?;
            }
            outcome.val_history.push(val);
        }

        let mut extra = serde_json::Map::new();
        extra.insert("epoch".into(), (epoch as u64).into());
        save(
            model,
            &format!("snapshot.ep.{epoch}"),
            Some(extra),
            &mut outcome.checkpoints,
        )?;
        outcome.epochs_run = epoch;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Tacotron2Config};
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let data: Vec<f32> = (0..6).map(|_| rng.random::<f32>() - 0.5).collect();
        p.insert("w", Tensor::new(vec![2, 3], data).unwrap());
        p
    }

    fn grad(vals: [f32; 6]) -> ParamStore<f32> {
        let mut g = ParamStore::new();
        g.insert("w", Tensor::new(vec![2, 3], vals.to_vec()).unwrap());
        g
    }

    #[test]
    fn accum_one_is_a_plain_step() {
        let mut p1 = store(1);
        let mut p2 = p1.clone();
        let g = grad([0.3, -0.1, 0.7, 0.2, -0.5, 0.05]);

        let mut t = TrainerState::new(&p1, AdamConfig::default(), 0);
        assert!(t.accumulate_and_step(&mut p1, &g, 1, 1.0).unwrap());
        assert_eq!(t.global_step, 1);
        assert_eq!(t.k_cur, 0);

        let mut direct = g.clone();
        clip_global_norm(&mut direct, 1.0);
        let mut adam = AdamState::new(&p2, AdamConfig::default());
        adam_step(&mut p2, &direct, &mut adam).unwrap();
        assert_eq!(p1.get("w").unwrap().data, p2.get("w").unwrap().data);
    }

    #[test]
    fn two_identical_grads_equal_one_step() {
        let mut p1 = store(2);
        let mut p2 = p1.clone();
        let g = grad([0.3, -0.1, 0.7, 0.2, -0.5, 0.05]);

        let mut t = TrainerState::new(&p1, AdamConfig::default(), 0);
        assert!(!t.accumulate_and_step(&mut p1, &g, 2, 1.0).unwrap());
        assert_eq!(t.k_cur, 1);
        assert_eq!(t.global_step, 0);
        assert!(t.accumulate_and_step(&mut p1, &g, 2, 1.0).unwrap());

        let mut t2 = TrainerState::new(&p2, AdamConfig::default(), 0);
        assert!(t2.accumulate_and_step(&mut p2, &g, 1, 1.0).unwrap());
        // (g+g)/2 = g exactly in float
        assert_eq!(p1.get("w").unwrap().data, p2.get("w").unwrap().data);
    }

    #[test]
    fn accumulation_averages_distinct_grads() {
        let mut p1 = store(3);
        let mut p2 = p1.clone();
        let g1 = grad([0.3, -0.1, 0.7, 0.2, -0.5, 0.05]);
        let g2 = grad([-0.2, 0.4, 0.1, -0.3, 0.6, 0.15]);

        let mut t = TrainerState::new(&p1, AdamConfig::default(), 0);
        t.accumulate_and_step(&mut p1, &g1, 2, 1.0).unwrap();
        t.accumulate_and_step(&mut p1, &g2, 2, 1.0).unwrap();

        let mut avg = g1.clone();
        avg.add_assign(&g2).unwrap();
        avg.scale(0.5);
        let mut t2 = TrainerState::new(&p2, AdamConfig::default(), 0);
        t2.accumulate_and_step(&mut p2, &avg, 1, 1.0).unwrap();

        for (a, b) in p1
            .get("w")
            .unwrap()
            .data
            .iter()
            .zip(&p2.get("w").unwrap().data)
        {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn non_finite_grads_are_skipped() {
        let mut p = store(4);
        let before = p.get("w").unwrap().data.clone();
        let g = grad([f32::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut t = TrainerState::new(&p, AdamConfig::default(), 0);
        assert!(!t.accumulate_and_step(&mut p, &g, 1, 1.0).unwrap());
        assert_eq!(t.k_cur, 0);
        assert_eq!(t.global_step, 0);
        assert_eq!(p.get("w").unwrap().data, before);
    }

    // ---- the loop itself, on a throwaway micro corpus ----

    fn toy_corpus(n: usize, vocab: usize, n_mels: usize, seed: u64) -> Vec<TrainItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let n_tok = 2 + (i % 3);
                let ids: Vec<usize> = (0..n_tok).map(|_| rng.random_range(0..vocab)).collect();
                let frames = 3 + (i % 4);
                let data: Vec<f64> = (0..frames * n_mels)
                    .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                    .collect();
                TrainItem {
                    id: format!("utt{i}"),
                    tokens: TokenSequence::new(ids, vocab).unwrap(),
                    mel: MelSpectrogram::new(frames, n_mels, data, 128, 8000).unwrap(),
                    durations: None,
                    spk: None,
                }
            })
            .collect()
    }

    fn micro_model(seed: u64) -> Model<f32> {
        Model::init(
            ModelConfig::Tacotron2(Tacotron2Config::micro(8, 6)),
            seed,
        )
        .unwrap()
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_budget: 12,
            accum_k: 2,
            weights: LossWeights {
                lambda_ga: 0.3,
                ..LossWeights::default()
            },
            schedule: LrSchedule::Constant { lr: 3e-3 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epochs_zero_emits_only_the_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = micro_model(1);
        let before: Vec<f32> = model.params.get("embed").unwrap().data.clone();
        let mut log = Vec::new();
        let out = train_run(
            &mut model,
            &quick_cfg(0),
            &toy_corpus(3, 8, 6, 1),
            &toy_corpus(2, 8, 6, 2),
            dir.path(),
            &mut log,
        )
        .unwrap();
        assert_eq!(out.epochs_run, 0);
        assert!(out.val_history.is_empty());
        assert!(log.is_empty());
        assert_eq!(out.checkpoints.len(), 1);
        assert!(dir.path().join("snapshot.ep.0").exists());
        assert!(!dir.path().join("model.loss.best").exists());
        assert_eq!(model.params.get("embed").unwrap().data, before);
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let mut model = micro_model(7);
            let mut log = Vec::new();
            train_run(
                &mut model,
                &quick_cfg(2),
                &toy_corpus(5, 8, 6, 3),
                &toy_corpus(2, 8, 6, 4),
                dir.path(),
                &mut log,
            )
            .unwrap();
            let flat: Vec<f32> = model
                .params
                .iter()
                .flat_map(|(_, t)| t.data.iter().copied())
                .collect();
            (log, flat)
        };
        let (log_a, par_a) = run();
        let (log_b, par_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(par_a, par_b);
        assert!(!log_a.is_empty());
    }

    #[test]
    fn metrics_lines_carry_exactly_the_contract_keys() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = micro_model(3);
        let mut log = Vec::new();
        train_run(
            &mut model,
            &quick_cfg(1),
            &toy_corpus(4, 8, 6, 5),
            &[],
            dir.path(),
            &mut log,
        )
        .unwrap();
        let first = String::from_utf8(log).unwrap().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["bce", "diagonality", "duration", "epoch", "guided", "l1", "l2", "lr", "step", "total"]
        );
        assert!(v["step"].as_u64().unwrap() >= 1);
        assert!(v["lr"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn snapshots_and_best_are_written_and_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = micro_model(5);
        let mut log = Vec::new();
        let out = train_run(
            &mut model,
            &quick_cfg(2),
            &toy_corpus(4, 8, 6, 6),
            &toy_corpus(2, 8, 6, 7),
            dir.path(),
            &mut log,
        )
        .unwrap();
        for name in ["snapshot.ep.0", "snapshot.ep.1", "snapshot.ep.2", "model.loss.best"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        assert_eq!(out.val_history.len(), 2);
        assert!(out.best_val.is_some());
        let (loaded, meta) = Model::<f32>::load(&dir.path().join("model.loss.best")).unwrap();
        assert_eq!(loaded.kind_str(), "tacotron2");
        assert!(meta["val_total"].as_f64().unwrap().is_finite());
    }

    #[test]
    fn nan_validation_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = micro_model(6);
        model.params.get_mut("feat.w").unwrap().data[0] = f32::NAN;
        let mut log = Vec::new();
        let err = train_run(
            &mut model,
            &quick_cfg(1),
            &toy_corpus(3, 8, 6, 8),
            &toy_corpus(1, 8, 6, 9),
            dir.path(),
            &mut log,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }
}
