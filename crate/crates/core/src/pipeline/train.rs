use std::fmt::Write as _;

use super::{evaluate, Checkpoint, Corpus, ExperimentConfig, SegmentStream};
use crate::error::{Error, Result};
use crate::model::{forward_segment, ForwardOptions, LmState, Params};
use crate::numerics::{clip_grad_norm, cosine_lr, Adam, AdamConfig, Rng, Scalar, Tape, Tensor};

const INIT_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub lr: f64,
    /// Mean train loss (nats) over the steps since the previous row.
    pub train_loss: f64,
    pub dev_bpc: f64,
    pub dev_ppl: f64,
}

/// Owns everything that changes during training.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub experiment: ExperimentConfig,
    pub step: u64,
    pub params: Params<T>,
    pub optimizer: Adam<T>,
    pub rng: Rng,
    pub lanes: Vec<LmState<T>>,
    pub loss_window: (f64, u64),
}

fn accumulate<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>, w: T) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += w * b;
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn new(experiment: &ExperimentConfig) -> Result<Self> {
        experiment.validate()?;
        let c = &experiment.model;
        let params = Params::init(c, &mut Rng::fork(experiment.seed, INIT_STREAM))?;
        let optimizer = Adam::new(AdamConfig::default(), params.tensors.iter().map(Tensor::shape));
        Ok(Self {
            experiment: experiment.clone(),
            step: 0,
            params,
            optimizer,
            rng: Rng::fork(experiment.seed, DROPOUT_STREAM),
            lanes: (0..experiment.train.batch).map(|_| LmState::new(c)).collect(),
            loss_window: (0.0, 0),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        if ck.lanes.len() != ck.experiment.train.batch {
            return Err(Error::Checkpoint("lane count differs from the batch size".into()));
        }
        Ok(Self {
            experiment: ck.experiment,
            step: ck.step,
            params: ck.params,
            optimizer: ck.optimizer,
            rng: Rng::from_state(&ck.rng),
            lanes: ck.lanes,
            loss_window: ck.loss_window,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            experiment: self.experiment.clone(),
            step: self.step,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.state(),
            lanes: self.lanes.clone(),
            loss_window: self.loss_window,
        }
    }

    fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        let vocab = self.experiment.model.vocab_size;
        if corpus.vocab_size() > vocab {
            return Err(Error::Config(format!(
                "corpus has {} symbols but the model vocabulary is {vocab}",
                corpus.vocab_size()
            )));
        }
        Ok(())
    }

    fn diagnostics(&self) -> String {
        let c = &self.experiment.model;
        let mut s = String::new();
        for (name, t) in self.params.names.iter().zip(&self.params.tensors).take(4) {
            let _ = write!(s, "{name}={:.4e} ", t.sq_norm().as_f64().sqrt());
        }
        for l in 0..c.n_layers {
            let prefix = format!("layers.{l}.");
            let sq: f64 = self
                .params
                .names
                .iter()
                .zip(&self.params.tensors)
                .filter(|(n, _)| n.starts_with(&prefix))
                .map(|(_, t)| t.sq_norm().as_f64())
                .sum();
            let _ = write!(s, "layer{l}={:.4e} ", sq.sqrt());
        }
        s.trim_end().to_string()
    }

    fn diverged(&self, lr: f64, what: &str) -> Error {
        Error::Diverged {
            step: self.step,
            lr,
            diagnostics: format!("{what}; parameter norms: {}", self.diagnostics()),
        }
    }

    /// Runs one optimisation step and returns its mean train loss.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<f64> {
        self.check_corpus(corpus)?;
        let exp = &self.experiment;
        let c = &exp.model;
        let stream = SegmentStream::new(&corpus.train, c.seg_len, exp.train.batch)?;
        let per_epoch = stream.segments_per_lane() as u64;
        let index = self.step % per_epoch;
        if index == 0 {
            self.lanes = (0..exp.train.batch).map(|_| LmState::new(c)).collect();
        }
        let batch = stream.batch_at(index as usize).expect("index below segments per lane");
        let lr = cosine_lr(self.step, exp.train.steps, exp.train.lr);
        let weight = T::of(1.0 / exp.train.batch as f64);

        let mut grads: Vec<Tensor<T>> = self.params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut loss_sum = 0.0;
        for (b, lane) in self.lanes.iter_mut().enumerate() {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape, true);
            let out = forward_segment(
                &mut tape,
                &bound,
                c,
                lane,
                &batch.inputs[b],
                Some(&batch.targets[b]),
                ForwardOptions {
                    dropout_rng: Some(&mut self.rng),
                    record: false,
                },
            )?;
            let loss = out.loss.expect("targets given");
            loss_sum += tape.value(loss).data()[0].as_f64();
            let g = tape.backward(loss)?;
            for (acc, &v) in grads.iter_mut().zip(&bound.all) {
                if let Some(gv) = g.get(v) {
                    accumulate(acc, gv, weight);
                }
            }
        }
        let loss = loss_sum / exp.train.batch as f64;
        if !loss.is_finite() {
            return Err(self.diverged(lr, &format!("non-finite train loss {loss}")));
        }
        clip_grad_norm(&mut grads, exp.train.clip);
        if let Err(e) = self.optimizer.update(&mut self.params.tensors, &grads, lr) {
            return Err(match e {
                Error::NonFiniteGradient { param } => {
                    let name = param
                        .parse::<usize>()
                        .ok()
                        .and_then(|i| self.params.names.get(i).cloned())
                        .unwrap_or(param);
                    self.diverged(lr, &format!("non-finite gradient for `{name}`"))
                }
                other => other,
            });
        }
        self.step += 1;
        self.loss_window.0 += loss;
        self.loss_window.1 += 1;
        Ok(loss)
    }

    /// Trains until `stop` steps (capped at the configured total), appending
    /// a metrics row at every eval interval and at the final step.
    pub fn run_until(&mut self, corpus: &Corpus, stop: u64, log: &mut Vec<MetricRow>) -> Result<()> {
        let total = self.experiment.train.steps;
        while self.step < stop.min(total) {
            let lr = cosine_lr(self.step, total, self.experiment.train.lr);
            self.train_step(corpus)?;
            if self.step.is_multiple_of(self.experiment.train.eval_interval) || self.step == total {
                let c = &self.experiment.model;
                let dev = evaluate(&self.params, c, &corpus.dev, c.effective_mem_len(), self.experiment.train.eval_tokens)?;
                log.push(MetricRow {
                    step: self.step,
                    lr,
                    train_loss: self.loss_window.0 / self.loss_window.1 as f64,
                    dev_bpc: dev.bpc,
                    dev_ppl: dev.ppl,
                });
                self.loss_window = (0.0, 0);
            }
        }
        Ok(())
    }
}

pub struct TrainOutcome<T> {
    pub metrics: Vec<MetricRow>,
    pub checkpoint: Checkpoint<T>,
}

/// Full training run from initialisation.
pub fn train<T: Scalar>(experiment: &ExperimentConfig, corpus: &Corpus) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::<T>::new(experiment)?;
    let mut metrics = Vec::new();
    t.run_until(corpus, experiment.train.steps, &mut metrics)?;
    Ok(TrainOutcome {
        metrics,
        checkpoint: t.checkpoint(),
    })
}
