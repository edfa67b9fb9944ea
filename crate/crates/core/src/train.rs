//! Supervised training: configuration, AdamW, the combined loss and the epoch loop.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tape};
use crate::kpm::{kernel_polynomial_loss, kpl_with, ChebFilter, Kernel};
use crate::math;
use crate::model::{
    converter_forward, converter_forward_with, ConverterParams, DropoutRates, Mechanism,
    ModelConfig, PeVariant,
};
use crate::ops::Op;
use crate::rng::Rng;
use crate::tasks::{gen_task, Dataset, Splits, Task};
use crate::tensor::ComplexTensor;

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3 << 40;
const DROPOUT_STREAM: u64 = 4 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub samples: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub cheb_order: usize,
    pub blocks: usize,
    pub pe: PeVariant,
    pub mechanism: Mechanism,
    pub kernel: Kernel,
    pub perm_factor: usize,
    pub dropout: DropoutRates,
    pub eta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Pattern,
            samples: 1000,
            vocab: 10,
            seq_len: 128,
            d_model: 32,
            d_hidden: 128,
            cheb_order: 8,
            blocks: 2,
            pe: PeVariant::Spe,
            mechanism: Mechanism::Kernelution,
            kernel: Kernel::Dirichlet,
            perm_factor: 1,
            dropout: DropoutRates::default(),
            eta: 0.01,
            lr: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse '{value}' for {key}")))
}

impl TrainConfig {
    /// Every settable key, sorted.
    pub const KEYS: [&'static str; 27] = [
        "batch_size",
        "beta1",
        "beta2",
        "blocks",
        "cheb_order",
        "clip",
        "d_hidden",
        "d_model",
        "dropout_eigenvalue",
        "dropout_eigenvector",
        "dropout_gffn",
        "dropout_pe",
        "dropout_value",
        "epochs",
        "eps",
        "eta",
        "kernel",
        "lr",
        "mechanism",
        "pe",
        "perm_factor",
        "samples",
        "seed",
        "seq_len",
        "task",
        "vocab",
        "weight_decay",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "batch_size" => self.batch_size = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "cheb_order" => self.cheb_order = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "d_hidden" => self.d_hidden = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "dropout_eigenvalue" => self.dropout.eigenvalue = parse(key, v)?,
            "dropout_eigenvector" => self.dropout.eigenvector = parse(key, v)?,
            "dropout_gffn" => self.dropout.gffn = parse(key, v)?,
            "dropout_pe" => self.dropout.pe = parse(key, v)?,
            "dropout_value" => self.dropout.value = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "kernel" => self.kernel = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "mechanism" => self.mechanism = v.parse()?,
            "pe" => self.pe = v.parse()?,
            "perm_factor" => self.perm_factor = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "seq_len" => self.seq_len = parse(key, v)?,
            "task" => self.task = v.parse()?,
            "vocab" => self.vocab = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "batch_size" => self.batch_size.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "blocks" => self.blocks.to_string(),
            "cheb_order" => self.cheb_order.to_string(),
            "clip" => self.clip.to_string(),
            "d_hidden" => self.d_hidden.to_string(),
            "d_model" => self.d_model.to_string(),
            "dropout_eigenvalue" => self.dropout.eigenvalue.to_string(),
            "dropout_eigenvector" => self.dropout.eigenvector.to_string(),
            "dropout_gffn" => self.dropout.gffn.to_string(),
            "dropout_pe" => self.dropout.pe.to_string(),
            "dropout_value" => self.dropout.value.to_string(),
            "epochs" => self.epochs.to_string(),
            "eps" => self.eps.to_string(),
            "eta" => self.eta.to_string(),
            "kernel" => self.kernel.to_string(),
            "lr" => self.lr.to_string(),
            "mechanism" => self.mechanism.to_string(),
            "pe" => self.pe.to_string(),
            "perm_factor" => self.perm_factor.to_string(),
            "samples" => self.samples.to_string(),
            "seed" => self.seed.to_string(),
            "seq_len" => self.seq_len.to_string(),
            "task" => self.task.to_string(),
            "vocab" => self.vocab.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// `key = value` lines in sorted key order.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            if let Some(v) = self.get(key) {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab: self.vocab,
            classes: self.task.classes(),
            seq_len: self.seq_len,
            d_model: self.d_model,
            d_hidden: self.d_hidden,
            cheb_order: self.cheb_order,
            blocks: self.blocks,
            pe: self.pe,
            mechanism: self.mechanism,
            kernel: self.kernel,
            perm_factor: self.perm_factor,
            dropout: self.dropout,
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        self.adamw().validate()?;
        let bad = |what: String| Err(Error::InvalidConfig(what));
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return bad(format!(
                "clip must be a finite non-negative number, got {}",
                self.clip
            ));
        }
        if self.batch_size == 0 {
            return bad(String::from("batch_size must be positive"));
        }
        if self.samples < 10 {
            return bad(format!("samples must be at least 10, got {}", self.samples));
        }
        if self.vocab < self.task.min_vocab() {
            return bad(format!(
                "{} needs vocab >= {}, got {}",
                self.task,
                self.task.min_vocab(),
                self.vocab
            ));
        }
        self.model_config().validate()
    }

    /// The seeded dataset this configuration trains on.
    pub fn splits(&self) -> Result<Splits> {
        let mut rng = Rng::new(self.seed).fork(DATA_STREAM);
        Ok(gen_task(self.task, &mut rng, self.samples, self.seq_len, self.vocab)?.split())
    }

    pub fn init_params(&self) -> Result<ConverterParams> {
        ConverterParams::init(
            &self.model_config(),
            &mut Rng::new(self.seed).fork(INIT_STREAM),
        )
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidHyperparameter(format!(
            "eta must lie in [0, 1), got {eta}"
        )));
    }
    Ok(())
}

/// Numerically stable `logsumexp(z) − z[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + math::log(logits.iter().map(|&z| math::exp(z - mx)).sum::<f64>());
    Ok(lse - logits[label])
}

/// `(1 − η) · mean CE + η · Σ KPL`.
pub fn total_loss(
    logits: &[Vec<f64>],
    labels: &[usize],
    filters: &[&ChebFilter],
    eta: f64,
) -> Result<f64> {
    check_eta(eta)?;
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: logits.len(),
            found: labels.len(),
        });
    }
    let mut ce = 0.0;
    for (z, &l) in logits.iter().zip(labels) {
        ce += cross_entropy(z, l)?;
    }
    let ce = ce / logits.len().max(1) as f64;
    let kpl: f64 = filters.iter().map(|f| kernel_polynomial_loss(f)).sum();
    Ok((1.0 - eta) * ce + eta * kpl)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(Error::InvalidHyperparameter(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Moment estimates and step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One AdamW update on the real parts of `params`. Decay is applied only where `decay` is set.
/// Nothing is modified when a gradient is non-finite.
pub fn adamw_step(
    params: &mut [&mut ComplexTensor],
    grads: &[Vec<f64>],
    decay: &[bool],
    state: &mut AdamState,
    hp: &AdamW,
) -> Result<()> {
    hp.validate()?;
    for (what, n) in [("gradients", grads.len()), ("decay mask", decay.len())] {
        if n != params.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: params.len(),
                found: n,
            });
        }
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                what: "gradient",
                expected: p.len(),
                found: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: format!("#{i}"),
            });
        }
    }
    if state.m.len() != params.len() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
        state.step = 0;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let c2 = 1.0 - libm::pow(hp.beta2, t as f64);
    for (k, p) in params.iter_mut().enumerate() {
        let shrink = if decay[k] {
            1.0 - hp.lr * hp.weight_decay
        } else {
            1.0
        };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, z) in p.data_mut().iter_mut().enumerate() {
            let g = grads[k][i];
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            let step = hp.lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + hp.eps);
            *z = Complex64::new(z.re * shrink - step, 0.0);
        }
    }
    Ok(())
}

/// Scales all gradients so their joint norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().flatten().map(|g| g * g).sum());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Runs independent per-sample jobs. Results come back in index order.
pub trait BatchExecutor {
    fn run<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn run<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(job).collect()
    }
}

struct SampleOut {
    grads: Vec<Vec<f64>>,
    ce: f64,
    correct: bool,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_gradient(
    cfg: &ModelConfig,
    p: &ConverterParams,
    tokens: &[usize],
    label: usize,
    weight: f64,
    mut rng: Rng,
) -> Result<SampleOut> {
    let mut tape = Tape::new();
    let vars = p.map(&mut |t| tape.param(t));
    let logits = converter_forward_with(&mut tape, cfg, &vars, tokens, Some(&mut rng))?;
    let z = tape.value(&logits).real_parts();
    let ce = tape.unary(Op::CrossEntropy { label }, &logits)?;
    let ce_value = tape.value(&ce).data()[0].re;
    let loss = tape.scale(&ce, Complex64::new(weight, 0.0))?;
    let grads = tape.backward(loss)?;
    let out = vars
        .named()
        .into_iter()
        .map(|(_, id)| {
            grads.get(*id).map_or_else(
                || vec![0.0; tape.value(id).len()],
                ComplexTensor::real_parts,
            )
        })
        .collect();
    Ok(SampleOut {
        grads: out,
        ce: ce_value,
        correct: argmax(&z) == label,
    })
}

/// `η · Σ KPL` over the filters and its gradient, laid out like [`ConverterParams::named`].
fn kpl_gradient(p: &ConverterParams, eta: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let mut total = None;
    let mut ids = Vec::new();
    for block in &p.blocks {
        let w = tape.param(&block.filter.w);
        ids.push(w);
        let k = kpl_with(&mut tape, &block.filter.map(&mut |_| w))?;
        total = Some(match total {
            None => k,
            Some(t) => tape.add(&t, &k)?,
        });
    }
    let mut out: Vec<Vec<f64>> = p.named().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let Some(total) = total else {
        return Ok((0.0, out));
    };
    let value = tape.value(&total).data()[0].re;
    let loss = tape.scale(&total, Complex64::new(eta, 0.0))?;
    let grads = tape.backward(loss)?;
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    for (b, id) in ids.iter().enumerate() {
        let slot = names
            .iter()
            .position(|n| *n == format!("blocks.{b}.filter.w"))
            .expect("every block has a filter");
        out[slot] = grads
            .get_or_zeros(*id, &[p.blocks[b].filter.w.len()])
            .real_parts();
    }
    Ok((value, out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub ce: f64,
    pub kpl: f64,
    pub accuracy: f64,
}

fn penalised_filters(mech: Mechanism, p: &ConverterParams) -> Vec<&ChebFilter> {
    match mech {
        Mechanism::Kernelution => p.filters(),
        Mechanism::Synvolution => Vec::new(),
    }
}

/// Loss and accuracy with dropout off.
pub fn evaluate<E: BatchExecutor>(
    cfg: &ModelConfig,
    p: &ConverterParams,
    data: &Dataset,
    eta: f64,
    exec: &E,
) -> Result<EvalMetrics> {
    check_eta(eta)?;
    if data.classes() != cfg.classes {
        return Err(Error::InvalidConfig(format!(
            "model has {} classes but the data has {}",
            cfg.classes,
            data.classes()
        )));
    }
    let outs = exec.run(data.len(), &|i| -> Result<(f64, bool)> {
        let z = converter_forward(cfg, p, &data.tokens[i])?;
        Ok((
            cross_entropy(&z, data.labels[i])?,
            argmax(&z) == data.labels[i],
        ))
    });
    let mut ce = 0.0;
    let mut correct = 0usize;
    for o in outs {
        let (c, ok) = o?;
        ce += c;
        correct += ok as usize;
    }
    let n = data.len().max(1) as f64;
    let ce = ce / n;
    let kpl: f64 = penalised_filters(cfg.mechanism, p)
        .iter()
        .map(|f| kernel_polynomial_loss(f))
        .sum();
    Ok(EvalMetrics {
        loss: (1.0 - eta) * ce + eta * kpl,
        ce,
        kpl,
        accuracy: correct as f64 / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub metrics: EvalMetrics,
    pub seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,split,loss,ce,kpl,accuracy,seconds";

    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.split, m.loss, m.ce, m.kpl, m.accuracy, self.seconds
        )
    }
}

pub enum TrainEvent<'a> {
    Epoch(&'a EpochMetrics),
    /// A new best validation result and the parameters that produced it.
    Improved {
        params: &'a ConverterParams,
        metrics: &'a EpochMetrics,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ConverterParams,
    pub best: ConverterParams,
    pub best_epoch: usize,
    pub best_val: EvalMetrics,
    pub history: Vec<EpochMetrics>,
}

/// Trains from the configuration's seeded initialisation. `clock` reports elapsed seconds.
pub fn train<E, X>(
    cfg: &TrainConfig,
    splits: &Splits,
    exec: &E,
    clock: &dyn Fn() -> f64,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> core::result::Result<(), X>,
) -> core::result::Result<TrainOutcome, X>
where
    E: BatchExecutor,
    X: From<Error>,
{
    let params = cfg.init_params()?;
    train_from(cfg, params, splits, exec, clock, on_event)
}

pub fn train_from<E, X>(
    cfg: &TrainConfig,
    mut params: ConverterParams,
    splits: &Splits,
    exec: &E,
    clock: &dyn Fn() -> f64,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> core::result::Result<(), X>,
) -> core::result::Result<TrainOutcome, X>
where
    E: BatchExecutor,
    X: From<Error>,
{
    cfg.validate()?;
    let mcfg = cfg.model_config();
    let hp = cfg.adamw();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let decay: Vec<bool> = params.named().iter().map(|(_, t)| t.rank() == 2).collect();
    let eta_kpl = match cfg.mechanism {
        Mechanism::Kernelution => cfg.eta,
        Mechanism::Synvolution => 0.0,
    };
    let mut state = AdamState::default();
    let mut history = Vec::new();

    let emit =
        |history: &mut Vec<EpochMetrics>,
         row: EpochMetrics,
         on_event: &mut dyn FnMut(TrainEvent<'_>) -> core::result::Result<(), X>| {
            history.push(row);
            on_event(TrainEvent::Epoch(&row))
        };

    let train0 = evaluate(&mcfg, &params, &splits.train, cfg.eta, exec)?;
    emit(
        &mut history,
        EpochMetrics {
            epoch: 0,
            split: Split::Train,
            metrics: train0,
            seconds: clock(),
        },
        on_event,
    )?;
    let mut best_val = evaluate(&mcfg, &params, &splits.val, cfg.eta, exec)?;
    let row = EpochMetrics {
        epoch: 0,
        split: Split::Val,
        metrics: best_val,
        seconds: clock(),
    };
    emit(&mut history, row, on_event)?;
    on_event(TrainEvent::Improved {
        params: &params,
        metrics: &row,
    })?;
    let mut best = params.clone();
    let mut best_epoch = 0;

    for epoch in 1..=cfg.epochs {
        let mut shuffle = Rng::new(cfg.seed).fork(SHUFFLE_STREAM + epoch as u64);
        let batches = splits.train.batches(cfg.batch_size, &mut shuffle);
        let (mut ce_sum, mut correct, mut seen, mut kpl_sum, mut steps) =
            (0.0, 0usize, 0usize, 0.0, 0usize);
        for batch in &batches {
            let weight = (1.0 - cfg.eta) / batch.len() as f64;
            let base = seen;
            let snapshot = &params;
            let outs = exec.run(batch.len(), &|i| {
                let stream = DROPOUT_STREAM + ((epoch as u64) << 24) + (base + i) as u64;
                sample_gradient(
                    &mcfg,
                    snapshot,
                    &batch.tokens[i],
                    batch.labels[i],
                    weight,
                    Rng::new(cfg.seed).fork(stream),
                )
            });
            let (kpl, mut grads) = kpl_gradient(&params, eta_kpl)?;
            let kpl = if cfg.mechanism == Mechanism::Kernelution {
                kpl
            } else {
                0.0
            };
            let mut batch_ce = 0.0;
            for out in outs {
                let out = out?;
                batch_ce += out.ce;
                correct += out.correct as usize;
                for (acc, g) in grads.iter_mut().zip(&out.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let loss = (1.0 - cfg.eta) * batch_ce / batch.len() as f64 + cfg.eta * kpl;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    op: "training loss",
                }
                .into());
            }
            if let Some(k) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteGradient {
                    param: names[k].clone(),
                }
                .into());
            }
            clip_global_norm(&mut grads, cfg.clip);
            let mut slots = params.tensors_mut();
            adamw_step(&mut slots, &grads, &decay, &mut state, &hp)?;
            params.project();
            ce_sum += batch_ce;
            kpl_sum += kpl;
            seen += batch.len();
            steps += 1;
        }
        let ce = ce_sum / seen.max(1) as f64;
        let kpl = kpl_sum / steps.max(1) as f64;
        let train_row = EpochMetrics {
            epoch,
            split: Split::Train,
            metrics: EvalMetrics {
                loss: (1.0 - cfg.eta) * ce + cfg.eta * kpl,
                ce,
                kpl,
                accuracy: correct as f64 / seen.max(1) as f64,
            },
            seconds: clock(),
        };
        emit(&mut history, train_row, on_event)?;
        let val = evaluate(&mcfg, &params, &splits.val, cfg.eta, exec)?;
        let row = EpochMetrics {
            epoch,
            split: Split::Val,
            metrics: val,
            seconds: clock(),
        };
        emit(&mut history, row, on_event)?;
        if val.accuracy > best_val.accuracy
            || (val.accuracy == best_val.accuracy && val.loss < best_val.loss)
        {
            best_val = val;
            best = params.clone();
            best_epoch = epoch;
            on_event(TrainEvent::Improved {
                params: &params,
                metrics: &row,
            })?;
        }
    }
    Ok(TrainOutcome {
        params,
        best,
        best_epoch,
        best_val,
        history,
    })
}

/// Mean `|w_k|` over `k ≥ from` across every block's filter.
pub fn mean_high_order_coefficient(p: &ConverterParams, from: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in p.filters() {
        for w in f.coefficients().iter().skip(from) {
            sum += w.abs();
            n += 1;
        }
    }
    sum / n.max(1) as f64
}
