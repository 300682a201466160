//! AdaDelta optimization, Kaiming initialization, loss assembly
//! (negative log-likelihood plus L2), batching over per-sample tapes,
//! evaluation, and metrics emission.
//!
//! Batches accumulate gradients of `mean NLL + l2_weight * sum ||theta||^2`
//! across per-sample tapes; the optimizer step and gradient reduction are
//! serialized. With `threads == 1` (deterministic mode) runs are bitwise
//! reproducible and metrics report `wall_time_s` as 0.0 so logs are
//! byte-identical across runs.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngExt};
use rand_pcg::Pcg32;
use thiserror::Error;

use crate::agg::{param_count, AggregatorKind, AggregatorSpec, CountConvention};
use crate::autodiff::{GradBuffer, NodeRef, ParamStore, Tape};
use crate::data::{listops, lrt, TaskKind};
use crate::lstm::{CellBank, CellConfig, ListopsHead, LrtHead, ModelError, UpdateActivation};
use crate::rng::{derive_seed, pcg};
use crate::tensor::DenseTensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what}{}: {value}", .param.as_deref().map(|p| format!(" in {p}")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        param: Option<String>,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("empty corpus for {0}")]
    EmptyCorpus(&'static str),
    #[error("corpus task does not match model task")]
    TaskMismatch,
}

/// Seed streams: model initialization and epoch shuffling draw from
/// separate derived streams so datasets, init, and batching never share
/// generator state.
const INIT_STREAM: u64 = 0x4b41_494d;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Default comparison units of the relation head.
pub const DEFAULT_LRT_HEAD_UNITS: usize = 32;

/// Everything a run needs: model shape, task, optimizer constants, loop
/// schedule, and the seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub aggregator: AggregatorKind,
    pub hidden_dim: usize,
    pub rank: Option<usize>,
    pub lrt_head_units: usize,
    pub update_activation: UpdateActivation,
    pub batch_size: usize,
    pub l2_weight: f64,
    pub l2_exempt_biases: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(task: TaskKind, aggregator: AggregatorKind, hidden_dim: usize, rank: Option<usize>) -> Self {
        Self {
            task,
            aggregator,
            hidden_dim,
            rank,
            lrt_head_units: DEFAULT_LRT_HEAD_UNITS,
            update_activation: UpdateActivation::Tanh,
            batch_size: 25,
            l2_weight: 0.01,
            l2_exempt_biases: false,
            max_epochs: 30,
            patience: 5,
            rho: 0.95,
            epsilon: 1e-6,
            seed: 1,
            threads: 1,
        }
    }

    pub fn aggregator_spec(&self) -> AggregatorSpec {
        AggregatorSpec::new(
            self.aggregator,
            self.hidden_dim,
            self.task.context_size(),
            0,
            self.rank,
        )
        .expect("validated at construction")
    }
}

/// i.i.d. normal entries with mean 0 and std `sqrt(2 / fan_in)`, drawn
/// in flat index order.
pub fn kaiming_init(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> DenseTensor {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    DenseTensor::new(shape, data).expect("generated data matches shape")
}

/// Per-parameter accumulators `E[g^2]` and `E[dx^2]`.
#[derive(Debug, Clone)]
pub struct AdaDeltaState {
    pub rho: f64,
    pub epsilon: f64,
    eg2: Vec<Vec<f64>>,
    ex2: Vec<Vec<f64>>,
}

impl AdaDeltaState {
    pub fn new(store: &ParamStore, rho: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .ids()
            .map(|id| vec![0.0; store.value(id).numel()])
            .collect();
        Self {
            rho,
            epsilon,
            eg2: zeros.clone(),
            ex2: zeros,
        }
    }

    pub fn accumulators(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.eg2, &self.ex2)
    }

    pub(crate) fn accumulators_mut(&mut self) -> (&mut [Vec<f64>], &mut [Vec<f64>]) {
        (&mut self.eg2, &mut self.ex2)
    }

    /// One elementwise update from `Parameter.grad`:
    /// `E[g^2] <- rho E[g^2] + (1-rho) g^2`,
    /// `dx = -(sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps)) g`,
    /// `E[dx^2] <- rho E[dx^2] + (1-rho) dx^2`, `x <- x + dx`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TrainError> {
        let (rho, eps) = (self.rho, self.epsilon);
        for id in store.ids().collect::<Vec<_>>() {
            let slot = id.index();
            for e in 0..store.value(id).numel() {
                let g = store.grad(id).data()[e];
                if !g.is_finite() {
                    return Err(TrainError::NonFinite {
                        what: "gradient",
                        param: Some(store.param(id).name().to_string()),
                        value: g,
                    });
                }
                let eg2 = rho * self.eg2[slot][e] + (1.0 - rho) * g * g;
                let dx = -((self.ex2[slot][e] + eps).sqrt() / (eg2 + eps).sqrt()) * g;
                self.eg2[slot][e] = eg2;
                self.ex2[slot][e] = rho * self.ex2[slot][e] + (1.0 - rho) * dx * dx;
                store.value_mut(id).data_mut()[e] += dx;
            }
        }
        Ok(())
    }
}

/// Task head parameters.
#[derive(Debug, Clone)]
pub enum TaskHead {
    Lrt(LrtHead),
    Listops(ListopsHead),
}

/// Encoder bank, task head, and the parameter store backing both.
#[derive(Debug)]
pub struct Model {
    pub store: ParamStore,
    pub bank: CellBank,
    pub head: TaskHead,
    pub task: TaskKind,
}

impl Model {
    /// Builds and Kaiming-initializes all parameters in canonical order
    /// from the config's seed.
    pub fn new(cfg: &TrainConfig) -> Self {
        let mut rng = pcg(derive_seed(cfg.seed, INIT_STREAM));
        let mut init =
            |shape: Vec<usize>, fan_in: usize| kaiming_init(shape, fan_in, &mut rng);
        let mut store = ParamStore::new();
        let cell_cfg = CellConfig {
            agg: cfg.aggregator_spec(),
            input_dim: cfg.task.input_dim(),
            num_operators: cfg.task.num_operators(),
            update_activation: cfg.update_activation,
        };
        let bank = CellBank::init(&mut store, cell_cfg, &mut init);
        let head = match cfg.task {
            TaskKind::Lrt => TaskHead::Lrt(LrtHead::init(
                &mut store,
                cfg.hidden_dim,
                cfg.lrt_head_units,
                &mut init,
            )),
            TaskKind::Listops => {
                TaskHead::Listops(ListopsHead::init(&mut store, cfg.hidden_dim, &mut init))
            }
        };
        Self {
            store,
            bank,
            head,
            task: cfg.task,
        }
    }

    /// Records the logits for one sample on the given tape.
    pub fn record_logits(
        &self,
        tape: &mut Tape<'_>,
        sample: SampleRef<'_>,
    ) -> Result<NodeRef, ModelError> {
        record_logits(&self.bank, &self.head, tape, sample)
    }
}

/// Encoder + head forward over one sample; free function so callers can
/// hold the parameter store separately from the model structure.
pub fn record_logits(
    bank: &CellBank,
    head: &TaskHead,
    tape: &mut Tape<'_>,
    sample: SampleRef<'_>,
) -> Result<NodeRef, ModelError> {
    match (head, sample) {
        (TaskHead::Listops(head), SampleRef::Listops(s)) => {
            let (h, _c) = bank.record_encode(tape, &s.tree)?;
            Ok(head.record(tape, h))
        }
        (TaskHead::Lrt(head), SampleRef::Lrt(s)) => {
            let (hl, _cl) = bank.record_encode(tape, &s.left)?;
            let (hr, _cr) = bank.record_encode(tape, &s.right)?;
            Ok(head.record(tape, hl, hr))
        }
        _ => panic!("sample task does not match model head"),
    }
}

/// Borrowed sample of either task.
#[derive(Clone, Copy)]
pub enum SampleRef<'a> {
    Listops(&'a listops::Sample),
    Lrt(&'a lrt::Sample),
}

impl SampleRef<'_> {
    pub fn class(&self) -> usize {
        match self {
            SampleRef::Listops(s) => s.label as usize,
            SampleRef::Lrt(s) => s.relation.index(),
        }
    }
}

/// Owned dataset split of either task.
#[derive(Debug, Clone)]
pub enum Corpus {
    Listops(Vec<listops::Sample>),
    Lrt(Vec<lrt::Sample>),
}

impl Corpus {
    pub fn task(&self) -> TaskKind {
        match self {
            Corpus::Listops(_) => TaskKind::Listops,
            Corpus::Lrt(_) => TaskKind::Lrt,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Corpus::Listops(v) => v.len(),
            Corpus::Lrt(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> SampleRef<'_> {
        match self {
            Corpus::Listops(v) => SampleRef::Listops(&v[i]),
            Corpus::Lrt(v) => SampleRef::Lrt(&v[i]),
        }
    }

    pub fn read_file(task: TaskKind, path: &Path) -> Result<Self, crate::data::DataError> {
        Ok(match task {
            TaskKind::Listops => Corpus::Listops(listops::read_file(path)?),
            TaskKind::Lrt => Corpus::Lrt(lrt::read_file(path)?),
        })
    }
}

/// One metrics record, appended as a JSON line per (epoch, split).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub param_count_table: u64,
    pub param_count_all: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub accuracy: f64,
    pub mean_nll: f64,
    pub count: usize,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn chunk_ranges(n: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let t = threads.clamp(1, n.max(1));
    let base = n / t;
    let extra = n % t;
    let mut ranges = Vec::with_capacity(t);
    let mut start = 0;
    for i in 0..t {
        let len = base + usize::from(i < extra);
        ranges.push(start..start + len);
        start += len;
    }
    ranges
}

/// Accuracy and mean NLL over a split. Deterministic; forward only.
pub fn evaluate(model: &Model, corpus: &Corpus, threads: usize) -> Result<EvalStats, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus("evaluation"));
    }
    if corpus.task() != model.task {
        return Err(TrainError::TaskMismatch);
    }
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let eval_chunk = |chunk: &[usize]| -> Result<(usize, f64), ModelError> {
        let mut correct = 0usize;
        let mut nll_sum = 0.0;
        for &i in chunk {
            let sample = corpus.get(i);
            let mut tape = Tape::new(&model.store);
            let logits = model.record_logits(&mut tape, sample)?;
            let nll = tape.softmax_cross_entropy(logits, sample.class());
            nll_sum += tape.value(nll).data()[0];
            if argmax(tape.value(logits).data()) == sample.class() {
                correct += 1;
            }
        }
        Ok((correct, nll_sum))
    };

    let ranges = chunk_ranges(indices.len(), threads);
    let results: Vec<Result<(usize, f64), ModelError>> = if ranges.len() == 1 {
        vec![eval_chunk(&indices)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|r| {
                    let slice = &indices[r.clone()];
                    scope.spawn(move || eval_chunk(slice))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };

    let mut correct = 0usize;
    let mut nll_sum = 0.0;
    for r in results {
        let (c, s) = r?;
        correct += c;
        nll_sum += s;
    }
    let n = corpus.len();
    Ok(EvalStats {
        accuracy: correct as f64 / n as f64,
        mean_nll: nll_sum / n as f64,
        count: n,
    })
}

/// Output hooks for a training run.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    pub best_checkpoint: Option<&'a Path>,
    pub last_checkpoint: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics: Vec<MetricsRecord>,
}

/// Resumable training state: model, optimizer accumulators, the epoch
/// shuffling stream, and early-stopping counters.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: AdaDeltaState,
    pub rng: Pcg32,
    /// Completed epochs (next epoch index).
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub stale_epochs: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Self {
        let model = Model::new(&cfg);
        let opt = AdaDeltaState::new(&model.store, cfg.rho, cfg.epsilon);
        let rng = pcg(derive_seed(cfg.seed, SHUFFLE_STREAM));
        Self {
            cfg,
            model,
            opt,
            rng,
            epoch: 0,
            best_val_accuracy: f64::NEG_INFINITY,
            best_epoch: 0,
            stale_epochs: 0,
        }
    }

    /// Trains until `max_epochs` or `patience` epochs without validation
    /// improvement, appending metrics per epoch and keeping the
    /// best-validation checkpoint.
    pub fn run(
        &mut self,
        train_set: &Corpus,
        val_set: &Corpus,
        outputs: &mut TrainOutputs<'_>,
    ) -> Result<TrainResult, TrainError> {
        if train_set.is_empty() {
            return Err(TrainError::EmptyCorpus("training"));
        }
        if train_set.task() != self.model.task || val_set.task() != self.model.task {
            return Err(TrainError::TaskMismatch);
        }
        let spec = self.cfg.aggregator_spec();
        let counts = (
            param_count(&spec, CountConvention::PaperTable),
            param_count(&spec, CountConvention::AllScalars),
        );
        let mut metrics = Vec::new();

        while self.epoch < self.cfg.max_epochs && self.stale_epochs < self.cfg.patience {
            let started = Instant::now();
            let (train_loss, train_acc) = self.run_epoch(train_set)?;
            let train_time = started.elapsed().as_secs_f64();

            let started = Instant::now();
            let val = evaluate(&self.model, val_set, self.cfg.threads)?;
            let val_time = started.elapsed().as_secs_f64();

            self.epoch += 1;
            let deterministic = self.cfg.threads == 1;
            let rec_train = MetricsRecord {
                epoch: self.epoch,
                split: "train".into(),
                loss: train_loss,
                accuracy: train_acc,
                wall_time_s: if deterministic { 0.0 } else { train_time },
                param_count_table: counts.0,
                param_count_all: counts.1,
            };
            let rec_val = MetricsRecord {
                epoch: self.epoch,
                split: "val".into(),
                loss: val.mean_nll,
                accuracy: val.accuracy,
                wall_time_s: if deterministic { 0.0 } else { val_time },
                param_count_table: counts.0,
                param_count_all: counts.1,
            };
            for rec in [&rec_train, &rec_val] {
                if let Some(w) = outputs.metrics.as_deref_mut() {
                    writeln!(w, "{}", serde_json::to_string(rec).expect("serializable"))?;
                }
            }
            metrics.push(rec_train);
            metrics.push(rec_val);

            if val.accuracy > self.best_val_accuracy {
                self.best_val_accuracy = val.accuracy;
                self.best_epoch = self.epoch;
                self.stale_epochs = 0;
                if let Some(path) = outputs.best_checkpoint {
                    crate::checkpoint::save(path, self)?;
                }
            } else {
                self.stale_epochs += 1;
            }
            if let Some(path) = outputs.last_checkpoint {
                crate::checkpoint::save(path, self)?;
            }
        }

        Ok(TrainResult {
            best_val_accuracy: self.best_val_accuracy,
            best_epoch: self.best_epoch,
            epochs_run: self.epoch,
            metrics,
        })
    }

    /// One pass over the training split: shuffle, per-batch gradient
    /// accumulation over per-sample tapes plus the L2 term, AdaDelta
    /// step. Returns running mean NLL and accuracy.
    fn run_epoch(&mut self, train_set: &Corpus) -> Result<(f64, f64), TrainError> {
        use rand::seq::SliceRandom;
        let n = train_set.len();
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut self.rng);

        let mut nll_total = 0.0;
        let mut correct_total = 0usize;
        let mut merged = GradBuffer::new(&self.model.store);

        for batch in indices.chunks(self.cfg.batch_size) {
            merged.clear();
            let scale = 1.0 / batch.len() as f64;
            let model = &self.model;

            type ChunkOut = Result<(GradBuffer, f64, usize), ModelError>;
            let work = |chunk: &[usize]| -> ChunkOut {
                let mut grads = GradBuffer::new(&model.store);
                let mut nll_sum = 0.0;
                let mut correct = 0usize;
                for &i in chunk {
                    let sample = train_set.get(i);
                    let mut tape = Tape::new(&model.store);
                    let logits = model.record_logits(&mut tape, sample)?;
                    let nll = tape.softmax_cross_entropy(logits, sample.class());
                    let loss = tape.scale(nll, scale);
                    tape.backward_into(loss, &mut grads);
                    nll_sum += tape.value(nll).data()[0];
                    if argmax(tape.value(logits).data()) == sample.class() {
                        correct += 1;
                    }
                }
                Ok((grads, nll_sum, correct))
            };

            let ranges = chunk_ranges(batch.len(), self.cfg.threads);
            let results: Vec<ChunkOut> = if ranges.len() == 1 {
                vec![work(batch)]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = ranges
                        .iter()
                        .map(|r| {
                            let slice = &batch[r.clone()];
                            scope.spawn(move || work(slice))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                })
            };
            for r in results {
                let (grads, nll_sum, correct) = r?;
                merged.merge(&grads);
                nll_total += nll_sum;
                correct_total += correct;
            }

            if self.cfg.l2_weight > 0.0 {
                self.record_l2_into(&mut merged);
            }
            let loss_check = nll_total;
            if !loss_check.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    param: None,
                    value: loss_check,
                });
            }
            self.model.store.zero_grads();
            self.model.store.accumulate(&merged);
            self.opt.step(&mut self.model.store)?;
        }

        Ok((nll_total / n as f64, correct_total as f64 / n as f64))
    }

    /// Adds the gradient of `l2_weight * sum ||theta||^2` (2 l2 theta)
    /// on its own tape. Bias vectors are exempt when configured; biases
    /// are recognized by the registration convention that their final
    /// name segment starts with 'b'.
    fn record_l2_into(&self, grads: &mut GradBuffer) {
        let store = &self.model.store;
        let mut tape = Tape::new(store);
        let mut acc: Option<NodeRef> = None;
        for id in store.ids() {
            if self.cfg.l2_exempt_biases {
                let name = store.param(id).name();
                let last = name.rsplit('.').next().unwrap_or(name);
                if last.starts_with('b') {
                    continue;
                }
            }
            let p = tape.param(id);
            let sq = tape.sum_squares(p);
            acc = Some(match acc {
                Some(a) => tape.add(a, sq),
                None => sq,
            });
        }
        if let Some(total) = acc {
            let loss = tape.scale(total, self.cfg.l2_weight);
            tape.backward_into(loss, grads);
        }
    }
}
