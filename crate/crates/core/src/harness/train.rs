//! Adam training over the summed multi-task loss, with loss logging,
//! periodic validation, checkpoints and exact resumption.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use inttravel_tensor::{adam_step, AdamConfig, Graph, ParamBinder, ParameterStore};

use super::checkpoint::Checkpoint;
use super::config::{EvalSplit, NegativeMode, RunConfig};
use super::data::{derive_seed, Prepared, CANDIDATE_SALT, EVAL_NEGATIVE_SALT, SHUFFLE_SALT, TRAIN_NEGATIVE_SALT};
use super::eval::{evaluate, ModelPredictor, Predictor};
use super::HarnessError;
use crate::metrics::{MaeMode, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::seqbuild::{batchify, Batch, BatchOptions, LabeledSequence, TIME_BUCKETS};
use crate::Task;

pub const LOSS_LOG_FILE: &str = "loss.tsv";
pub const VALIDATION_FILE: &str = "validation.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Losses of one optimizer step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub total: f64,
    pub per_task: [Option<f64>; 4],
}

impl StepLog {
    pub const HEADER: &'static str = "step\tepoch\ttotal\twhen\thow\twhere\tvia";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\t{}\t{}", self.step, self.epoch, self.total);
        for v in self.per_task {
            match v {
                Some(x) => {
                    let _ = write!(s, "\t{x}");
                }
                None => s.push_str("\tNA"),
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<StepLog>,
    pub validation: Vec<(u64, MetricsReport)>,
    pub stopped_by_time: bool,
    pub checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn first_loss(&self) -> Option<f64> {
        self.log.first().map(|l| l.total)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.log.last().map(|l| l.total)
    }
}

/// Model architecture implied by a run config and dataset vocabularies.
pub fn model_config(cfg: &RunConfig, data: &Prepared) -> ModelConfig {
    ModelConfig {
        dim: cfg.dim,
        heads: cfg.heads,
        depth: cfg.depth,
        streams: cfg.streams,
        max_len: cfg.max_len,
        shared_experts: cfg.shared_experts,
        private_experts: cfg.private_experts,
        profile_dim: cfg.profile_dim,
        embed_std: cfg.embed_std,
        variant: cfg.variant,
        tasks: Task::ALL.to_vec(),
        ..ModelConfig::new(data.vocabs.sizes())
    }
}

pub struct Trainer<'d> {
    pub cfg: RunConfig,
    pub data: &'d Prepared,
    pub model: Model,
    pub store: ParameterStore,
    /// Optimizer steps completed.
    pub step: u64,
    fixed: Option<Vec<LabeledSequence>>,
    epoch_batches: Option<(usize, Vec<Batch>)>,
    batches_per_epoch: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: RunConfig, data: &'d Prepared) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let model = Model::new(model_config(&cfg, data)).map_err(HarnessError::Config)?;
        let store = model.init_params(cfg.seed)?;
        Self::assemble(cfg, data, model, store, 0)
    }

    /// Continues a run from a checkpoint of the same dataset.
    pub fn resume(ckpt: Checkpoint, data: &'d Prepared) -> Result<Self, HarnessError> {
        let model = Model::new(model_config(&ckpt.config, data)).map_err(HarnessError::Config)?;
        let expected: Vec<(String, Vec<usize>)> = model.param_shapes();
        let found: Vec<(String, Vec<usize>)> =
            ckpt.store.iter().map(|(n, e)| (n.to_string(), e.value.shape().to_vec())).collect();
        let mut expected_sorted = expected;
        expected_sorted.sort();
        if expected_sorted != found {
            return Err(HarnessError::Checkpoint {
                path: String::new(),
                message: "parameters do not match the model built from its config and this dataset".into(),
            });
        }
        Self::assemble(ckpt.config, data, model, ckpt.store, ckpt.step)
    }

    fn assemble(
        cfg: RunConfig,
        data: &'d Prepared,
        model: Model,
        store: ParameterStore,
        step: u64,
    ) -> Result<Self, HarnessError> {
        let probe = data.train_sequences(cfg.max_len, &model.active_tasks(), derive_seed(cfg.seed, TRAIN_NEGATIVE_SALT, 0))?;
        if probe.is_empty() {
            return Err(HarnessError::Config("no training sequences".into()));
        }
        let batches_per_epoch = probe.len().div_ceil(cfg.batch_size);
        let fixed = (cfg.negatives == NegativeMode::Fixed).then_some(probe);
        Ok(Self {
            cfg,
            data,
            model,
            store,
            step,
            fixed,
            epoch_batches: None,
            batches_per_epoch,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    /// Steps the configured epochs and step cap allow.
    pub fn planned_steps(&self) -> u64 {
        let by_epochs = (self.cfg.epochs * self.batches_per_epoch) as u64;
        if self.cfg.max_steps > 0 {
            by_epochs.min(self.cfg.max_steps)
        } else {
            by_epochs
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            store: self.store.clone(),
        }
    }

    fn batch_at(&mut self, step: u64) -> Result<&Batch, HarnessError> {
        let epoch = (step / self.batches_per_epoch as u64) as usize;
        let pos = (step % self.batches_per_epoch as u64) as usize;
        if self.epoch_batches.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let seed = self.cfg.seed;
            let owned;
            let seqs = match &self.fixed {
                Some(s) => s,
                None => {
                    let ns = derive_seed(seed, TRAIN_NEGATIVE_SALT, epoch as u64);
                    owned = self.data.train_sequences(self.cfg.max_len, &self.model.active_tasks(), ns)?;
                    &owned
                }
            };
            let opts = BatchOptions {
                batch_size: self.cfg.batch_size,
                shuffle_seed: Some(derive_seed(seed, SHUFFLE_SALT, epoch as u64)),
                candidate_seed: None,
                bucket_by_length: self.cfg.bucket_by_length,
            };
            let batches = batchify(seqs, &self.data.dataset.users, &self.data.vocabs, opts);
            self.epoch_batches = Some((epoch, batches));
        }
        Ok(&self.epoch_batches.as_ref().expect("just built").1[pos])
    }

    /// Forward and backward on the next batch, then one Adam update. The
    /// store is left untouched when the loss or any gradient is not finite.
    pub fn train_step(&mut self) -> Result<StepLog, HarnessError> {
        let step = self.step;
        let epoch = (step / self.batches_per_epoch as u64) as usize;
        let weights = self.cfg.task_weights;
        let batch = self.batch_at(step)?.clone();
        let mut g = Graph::new();
        let mut p = ParamBinder::new(&self.store);
        let out = match self.model.loss(&mut g, &mut p, &batch, &weights) {
            Ok(o) => o,
            Err(inttravel_tensor::TensorError::NonFinite { .. }) => return Err(HarnessError::NonFiniteLoss { step }),
            Err(e) => return Err(e.into()),
        };
        let total = g.value(out.total).item();
        let per_task = out.per_task.map(|v| v.map(|v| g.value(v).item()));
        if !total.is_finite() {
            return Err(HarnessError::NonFiniteLoss { step });
        }
        let grads = g.backward(out.total)?;
        let bound = p.finish();
        self.store.accumulate(&bound, &grads)?;
        if self.store.iter().any(|(_, e)| !e.grad.all_finite()) {
            self.store.zero_grad();
            return Err(HarnessError::NonFiniteLoss { step });
        }
        adam_step(&mut self.store, &AdamConfig::with_lr(self.cfg.lr));
        self.step += 1;
        Ok(StepLog {
            step,
            epoch,
            total,
            per_task,
        })
    }

    /// Loss of the next batch without updating anything.
    pub fn peek_loss(&mut self) -> Result<StepLog, HarnessError> {
        let step = self.step;
        let batch = self.batch_at(step)?.clone();
        let mut g = Graph::new();
        let mut p = ParamBinder::new(&self.store);
        let out = self.model.loss(&mut g, &mut p, &batch, &self.cfg.task_weights)?;
        Ok(StepLog {
            step,
            epoch: (step / self.batches_per_epoch as u64) as usize,
            total: g.value(out.total).item(),
            per_task: out.per_task.map(|v| v.map(|v| g.value(v).item())),
        })
    }

    pub fn evaluate(&self, split: EvalSplit) -> Result<MetricsReport, HarnessError> {
        let mut predictor = ModelPredictor {
            model: &self.model,
            store: &self.store,
        };
        evaluate_with(&mut predictor, &self.cfg, self.data, &self.model.active_tasks(), split)
    }

    /// Trains until the planned step count or the time limit, writing the
    /// loss log, validation reports and checkpoints under `out_dir`.
    pub fn run(&mut self) -> Result<TrainSummary, HarnessError> {
        let out = self.cfg.out_dir.clone();
        fs::create_dir_all(&out).map_err(|source| io_err(&out, source))?;
        let ckpt_path = out.join(CHECKPOINT_FILE);
        let log_path = out.join(LOSS_LOG_FILE);
        let mut log_file = open_log(&log_path, self.step == 0)?;
        let started = Instant::now();
        let planned = self.planned_steps();
        let mut summary = TrainSummary {
            log: Vec::new(),
            validation: Vec::new(),
            stopped_by_time: false,
            checkpoint: ckpt_path.clone(),
        };
        if self.step == 0 {
            self.checkpoint().save(&ckpt_path)?;
        }
        while self.step < planned {
            if self.cfg.time_limit_secs > 0 && started.elapsed().as_secs_f64() >= self.cfg.time_limit_secs as f64 {
                summary.stopped_by_time = true;
                log::warn!("time limit reached after {} steps", self.step);
                break;
            }
            let entry = match self.train_step() {
                Ok(e) => e,
                Err(e @ HarnessError::NonFiniteLoss { .. }) => {
                    log::error!("{e}; last good checkpoint kept at {}", ckpt_path.display());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            writeln!(log_file, "{}", entry.to_tsv()).map_err(|source| io_err(&log_path, source))?;
            if self.cfg.log_every > 0 && entry.step % self.cfg.log_every == 0 {
                log::info!("step {} epoch {} loss {:.6}", entry.step, entry.epoch, entry.total);
            }
            summary.log.push(entry);
            if self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0 {
                let report = self.evaluate(EvalSplit::Validation)?;
                append_validation(&out.join(VALIDATION_FILE), self.step, &report)?;
                summary.validation.push((self.step, report));
            }
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                self.checkpoint().save(&ckpt_path)?;
            }
        }
        log_file.flush().map_err(|source| io_err(&log_path, source))?;
        self.checkpoint().save(&ckpt_path)?;
        Ok(summary)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open_log(path: &Path, fresh: bool) -> Result<std::io::BufWriter<File>, HarnessError> {
    let file = if fresh {
        let mut f = File::create(path).map_err(|s| io_err(path, s))?;
        writeln!(f, "{}", StepLog::HEADER).map_err(|s| io_err(path, s))?;
        f
    } else {
        OpenOptions::new().append(true).create(true).open(path).map_err(|s| io_err(path, s))?
    };
    Ok(std::io::BufWriter::new(file))
}

fn append_validation(path: &Path, step: u64, report: &MetricsReport) -> Result<(), HarnessError> {
    let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(|s| io_err(path, s))?;
    write!(f, "# step {step}\n{}", report.to_text()).map_err(|s| io_err(path, s))
}

/// Evaluation batches of `split` with candidates drawn and shuffled from
/// the run seed.
pub fn eval_batches(
    cfg: &RunConfig,
    data: &Prepared,
    tasks: &[Task],
    split: EvalSplit,
) -> Result<Vec<Batch>, HarnessError> {
    let salt = match split {
        EvalSplit::Validation => 1,
        EvalSplit::Test => 2,
    };
    let seqs = data.eval_sequences(
        split,
        cfg.max_len,
        tasks,
        derive_seed(cfg.seed, EVAL_NEGATIVE_SALT, salt),
        cfg.eval_users,
    )?;
    let opts = BatchOptions {
        batch_size: cfg.batch_size,
        shuffle_seed: None,
        candidate_seed: Some(derive_seed(cfg.seed, CANDIDATE_SALT, salt)),
        bucket_by_length: false,
    };
    Ok(batchify(&seqs, &data.dataset.users, &data.vocabs, opts))
}

pub fn evaluate_with(
    predictor: &mut dyn Predictor,
    cfg: &RunConfig,
    data: &Prepared,
    tasks: &[Task],
    split: EvalSplit,
) -> Result<MetricsReport, HarnessError> {
    let batches = eval_batches(cfg, data, tasks, split)?;
    let mae = if cfg.circular_mae {
        MaeMode::Circular(TIME_BUCKETS)
    } else {
        MaeMode::Linear
    };
    evaluate(predictor, &batches, data, tasks, mae)
}

/// Trains `cfg.variant` from scratch and evaluates it on `cfg.eval_split`.
pub fn run_variant(cfg: &RunConfig, data: &Prepared) -> Result<(TrainSummary, MetricsReport), HarnessError> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let summary = trainer.run()?;
    let report = trainer.evaluate(cfg.eval_split)?;
    Ok((summary, report))
}
