use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::LossWeights;
use super::encode::{build_groups, prepare_dialog, EncodedExample, Encoder, ExampleGroup, Tail, Targets};
use super::loss::{composite_loss, loss_and_gradients, LossBreakdown};
use crate::corpus::{AnnotatedDialog, Corpus, SlotLexicon, Speaker, Turn, Vocabulary};
use crate::error::{Error, Result};
use crate::nnet::kernels::log_softmax;
use crate::nnet::{adam_step, Graph, OptimizerConfig};

pub const METRICS_FILE: &str = "metrics.jsonl";
const VALIDATION_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Example groups per optimizer step.
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Count control tokens in the logged validation perplexity.
    pub perplexity_includes_control: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            perplexity_includes_control: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train: LossBreakdown,
    pub validation: Option<LossBreakdown>,
    pub validation_perplexity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient stopped training; `last` holds the
    /// parameters from the end of the previous epoch.
    Aborted { epoch: usize, step: u64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub status: TrainStatus,
}

/// Model-facing copies of every dialog in `corpus` for the checkpoint's mode.
pub fn prepare_corpus(ckpt: &Checkpoint, corpus: &Corpus) -> Vec<AnnotatedDialog> {
    let delex = ckpt.mode.encode_options().delexicalize;
    corpus.dialogs.iter().map(|d| prepare_dialog(d, delex)).collect()
}

pub fn encoder(ckpt: &Checkpoint) -> Encoder<'_> {
    Encoder::new(&ckpt.vocab, ckpt.mode.encode_options(), ckpt.model.config.context)
}

/// Example groups for `corpus` with distractors drawn from `seed`.
pub fn example_groups(ckpt: &Checkpoint, corpus: &Corpus, seed: u64) -> Result<Vec<ExampleGroup>> {
    let dialogs = prepare_corpus(ckpt, corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_groups(&encoder(ckpt), &ckpt.taxonomy, &dialogs, ckpt.model.config.distractors, &mut rng)
}

fn counts_toward_perplexity(vocab: &Vocabulary, token: u32, include_control: bool) -> bool {
    include_control || !vocab.is_control(token)
}

/// Summed negative log-likelihood and token count of the language-modeling
/// targets of the positive examples.
pub fn language_model_nll(ckpt: &Checkpoint, groups: &[ExampleGroup], include_control: bool) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut count = 0;
    for group in groups {
        let targets: Vec<(usize, u32)> = group
            .positive
            .targets
            .lm
            .iter()
            .copied()
            .filter(|&(_, t)| counts_toward_perplexity(&ckpt.vocab, t, include_control))
            .collect();
        if targets.is_empty() {
            continue;
        }
        let mut g = Graph::new(&ckpt.model.store);
        let hidden = ckpt.model.hidden(&mut g, &group.positive.seq, None)?;
        let rows: Vec<usize> = targets.iter().map(|(p, _)| *p).collect();
        let logits = ckpt.model.lm_logits(&mut g, hidden, &rows)?;
        let logits = g.value(logits);
        for (i, &(_, t)) in targets.iter().enumerate() {
            nll -= log_softmax(logits.row(i))[t as usize];
            count += 1;
        }
    }
    Ok((nll, count))
}

fn perplexity_of_groups(ckpt: &Checkpoint, groups: &[ExampleGroup], include_control: bool) -> Result<f64> {
    let (nll, count) = language_model_nll(ckpt, groups, include_control)?;
    if count == 0 {
        return Err(Error::Empty("evaluation split"));
    }
    Ok((nll / count as f64).exp())
}

/// `exp` of the mean per-token negative log-likelihood of the ground-truth
/// system turns of `corpus`. Only word tokens count unless
/// `include_control` is set.
pub fn perplexity(ckpt: &Checkpoint, corpus: &Corpus, include_control: bool) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let dialogs = prepare_corpus(ckpt, corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let groups = build_groups(&encoder(ckpt), &ckpt.taxonomy, &dialogs, 0, &mut rng)?;
    perplexity_of_groups(ckpt, &groups, include_control)
}

fn reset_optimizer_state(ckpt: &mut Checkpoint) {
    for p in ckpt.model.store.iter_mut() {
        p.first_moment.fill(0.0);
        p.second_moment.fill(0.0);
        p.grad.fill(0.0);
    }
}

struct Fit<'a> {
    config: &'a TrainConfig,
    validation: Option<Vec<ExampleGroup>>,
    series_dir: Option<&'a Path>,
}

impl Fit<'_> {
    fn run(&self, mut ckpt: Checkpoint, mut epoch_groups: impl FnMut(&Checkpoint, &mut ChaCha8Rng) -> Result<Vec<ExampleGroup>>) -> Result<TrainOutcome> {
        let cfg = self.config;
        cfg.validate()?;
        reset_optimizer_state(&mut ckpt);
        let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(1);
        let mut log = Vec::new();
        let mut best: Option<(f64, usize, Checkpoint)> = None;
        let mut step = 0u64;
        let mut status = TrainStatus::Completed;
        if let Some(dir) = self.series_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            fs::write(&path, "").map_err(|e| Error::io(&path, e))?;
        }

        'epochs: for epoch in 1..=cfg.epochs {
            let good = ckpt.clone();
            let mut groups = epoch_groups(&ckpt, &mut data_rng)?;
            if groups.is_empty() {
                return Err(Error::Empty("training split"));
            }
            groups.shuffle(&mut data_rng);
            let mut batch_losses = Vec::new();
            for batch in groups.chunks(cfg.batch_size) {
                step += 1;
                let loss = loss_and_gradients(&mut ckpt.model, batch, Some(&mut dropout_rng))?;
                let stepped = if loss.total.is_finite() {
                    adam_step(&mut ckpt.model.store, &cfg.optimizer, step)
                } else {
                    Err(Error::NonFiniteLoss { epoch, step: step as usize })
                };
                match stepped {
                    Ok(()) => batch_losses.push(loss),
                    Err(Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_)) => {
                        tracing::warn!(epoch, step, "non-finite loss, restoring the previous epoch");
                        status = TrainStatus::Aborted { epoch, step };
                        ckpt = good;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
            }
            let train = LossBreakdown::mean(&batch_losses);
            let (validation, validation_perplexity) = match &self.validation {
                Some(v) if !v.is_empty() => (
                    Some(composite_loss(&ckpt.model, v)?),
                    perplexity_of_groups(&ckpt, v, cfg.perplexity_includes_control).ok(),
                ),
                _ => (None, None),
            };
            let score = validation.as_ref().map(|v| v.total).unwrap_or(train.total);
            ckpt.meta.epochs = epoch;
            ckpt.meta.steps = step;
            ckpt.meta.optimizer = Some(cfg.optimizer);
            let record = EpochRecord {
                epoch,
                steps: step,
                train,
                validation,
                validation_perplexity,
            };
            tracing::info!(epoch, step, loss = record.train.total, validation = ?record.validation.as_ref().map(|v| v.total), "epoch finished");
            if let Some(dir) = self.series_dir {
                append_metrics(&dir.join(METRICS_FILE), &record)?;
                ckpt.save(dir.join(format!("epoch-{epoch:03}")))?;
            }
            log.push(record);
            if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                best = Some((score, epoch, ckpt.clone()));
            }
        }

        let (best_loss, best_epoch) = match &best {
            Some((s, e, _)) => (Some(*s), Some(*e)),
            None => (None, None),
        };
        ckpt.meta.best_epoch = best_epoch;
        ckpt.meta.best_validation_loss = best_loss;
        let mut best = best.map(|(_, _, c)| c).unwrap_or_else(|| ckpt.clone());
        best.meta.best_epoch = best_epoch;
        best.meta.best_validation_loss = best_loss;
        Ok(TrainOutcome {
            best,
            last: ckpt,
            log,
            status,
        })
    }
}

fn append_metrics(path: &Path, record: &EpochRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::json("metric record", e))?;
    let mut f = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Multi-task training. Distractors are resampled every epoch; the
/// validation groups are fixed. With `series_dir`, every epoch's checkpoint
/// and the metric log are written there.
pub fn train(init: Checkpoint, train: &Corpus, validation: Option<&Corpus>, config: &TrainConfig, series_dir: Option<&Path>) -> Result<TrainOutcome> {
    init.check_consistency()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let dialogs = prepare_corpus(&init, train);
    let validation = match validation {
        Some(v) if !v.is_empty() => Some(example_groups(&init, v, config.seed ^ VALIDATION_STREAM)?),
        _ => None,
    };
    let fit = Fit {
        config,
        validation,
        series_dir,
    };
    fit.run(init, |ckpt, rng| {
        build_groups(&encoder(ckpt), &ckpt.taxonomy, &dialogs, ckpt.model.config.distractors, rng)
    })
}

/// Language-modeling pass over unannotated dialogs, each a list of turn
/// texts alternating from the human side. Every turn serves as a candidate.
/// The loss weights are restored afterwards.
pub fn pretrain_language_model(init: Checkpoint, dialogs: &[Vec<String>], config: &TrainConfig) -> Result<TrainOutcome> {
    init.check_consistency()?;
    let empty = SlotLexicon::default();
    let mut groups = Vec::new();
    {
        let enc = encoder(&init);
        for dialog in dialogs {
            let turns: Vec<Turn> = dialog
                .iter()
                .enumerate()
                .map(|(i, text)| {
                    let speaker = if i % 2 == 0 { Speaker::Human } else { Speaker::System };
                    Turn::new(speaker, vec![crate::corpus::Sentence::new(text.clone(), "", "")])
                })
                .collect();
            for t in 0..turns.len() {
                let seq = Encoder { options: super::config::EncodeOptions { intent_tokens: false, ..enc.options }, ..enc }
                    .encode(&empty, &turns[..t], Tail::Candidate(&turns[t]), 0)?;
                let span = seq.candidate.expect("candidate tail");
                let lm = (span.start..span.end).map(|p| (p, seq.tokens[p + 1])).collect();
                groups.push(ExampleGroup {
                    positive: EncodedExample {
                        seq,
                        targets: Targets { lm, ..Default::default() },
                        is_distractor: false,
                    },
                    distractors: Vec::new(),
                });
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    let weights = init.model.config.loss_weights;
    let mut init = init;
    init.model.config.loss_weights = LossWeights {
        lm: 1.0,
        human_intent: 0.0,
        human_slot: 0.0,
        system_intent: 0.0,
        system_slot: 0.0,
        next_utterance: 0.0,
    };
    let fit = Fit {
        config,
        validation: None,
        series_dir: None,
    };
    let mut outcome = fit.run(init, |_, _| Ok(groups.clone()))?;
    outcome.best.model.config.loss_weights = weights;
    outcome.last.model.config.loss_weights = weights;
    Ok(outcome)
}
