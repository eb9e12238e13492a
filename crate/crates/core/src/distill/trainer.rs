use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{hard_loss, import_trace, student_loss, DistillConfig, DistillMap};
use crate::bmfnet::{batch_inputs, BmfNet, ForwardTrace, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, ParamStore, Tape, Var};
use crate::signals::{derive_seed, MultimodalSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Teacher on its own supervised loss.
    Teacher,
    /// Student on the hard loss alone.
    StudentHard,
    /// Student on the distillation objective against the frozen teacher.
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Teacher => "teacher",
            Phase::StudentHard => "student_hard",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub joint_epochs: usize,
    pub adam: AdamConfig,
    pub distill: DistillConfig,
    /// Reshuffle the training split every epoch.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 240,
            teacher_epochs: 100,
            student_epochs: 100,
            joint_epochs: 100,
            adam: AdamConfig { lr: 5e-5, weight_decay: 1e-3, ..AdamConfig::default() },
            distill: DistillConfig::default(),
            shuffle: true,
            seed: 0,
        }
    }
}

/// Mean losses and accuracy over one epoch. Terms that do not apply to the
/// phase are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_total: f64,
    pub loss_hard: f64,
    pub loss_soft: f64,
    pub loss_parts: [f64; 5],
    pub train_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: BmfNet,
    pub params: ParamStore<f32>,
}

impl TrainedModel {
    /// Runs `f` on the no-grad trace of each batch of `indices`, in order.
    pub fn infer<F>(&self, samples: &[MultimodalSample], indices: &[usize], batch: usize, mut f: F) -> Result<()>
    where
        F: FnMut(&Tape<f32>, &ForwardTrace, &[usize]),
    {
        for chunk in indices.chunks(batch.max(1)) {
            let (eeg, enose, _) = batch_inputs::<f32>(samples, chunk)?;
            let mut tape = Tape::no_grad();
            let (e, n) = (tape.constant(eeg), tape.constant(enose));
            let trace = self.model.forward(&mut tape, &self.params, e, n)?;
            f(&tape, &trace, chunk);
        }
        Ok(())
    }

    pub fn predict(&self, samples: &[MultimodalSample], indices: &[usize], batch: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(indices.len());
        self.infer(samples, indices, batch, |tape, trace, _| {
            let probs = tape.value(trace.probs);
            let c = probs.shape()[1];
            out.extend(probs.data().chunks(c).map(argmax));
        })?;
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub teacher: Option<TrainedModel>,
    pub student: TrainedModel,
    pub history: Vec<EpochRecord>,
}

const INIT_TEACHER: u64 = 1;
const INIT_STUDENT: u64 = 2;
const SHUFFLE: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream]))
}

struct Batches {
    order: Vec<usize>,
    size: usize,
    rng: ChaCha8Rng,
    shuffle: bool,
}

impl Batches {
    fn epoch(&mut self) -> Vec<Vec<usize>> {
        if self.shuffle {
            self.order.shuffle(&mut self.rng);
        }
        self.order.chunks(self.size).map(<[usize]>::to_vec).collect()
    }
}

fn correct(tape: &Tape<f32>, trace: &ForwardTrace, labels: &[usize]) -> usize {
    let probs = tape.value(trace.probs);
    let c = probs.shape()[1];
    probs
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn finite(tape: &Tape<f32>, loss: Var, phase: Phase, epoch: usize, batch: usize) -> Result<f64> {
    let value = tape.value(loss).item() as f64;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { phase: phase.name(), epoch, batch, value })
    }
}

/// Maps numerical failures inside a step onto a diagnostic naming the step.
fn guard<X>(r: Result<X>, phase: Phase, epoch: usize, batch: usize) -> Result<X> {
    r.map_err(|e| match e.root() {
        Error::NonFinite { .. } => Error::NonFiniteLoss { phase: phase.name(), epoch, batch, value: f64::NAN },
        _ => e,
    })
}

#[derive(Default)]
struct Accum {
    n: usize,
    correct: usize,
    batches: usize,
    total: f64,
    hard: f64,
    soft: f64,
    parts: [f64; 5],
}

impl Accum {
    fn record(self, epoch: usize, phase: Phase) -> EpochRecord {
        let b = self.batches.max(1) as f64;
        EpochRecord {
            epoch,
            phase,
            loss_total: self.total / b,
            loss_hard: self.hard / b,
            loss_soft: self.soft / b,
            loss_parts: self.parts.map(|p| p / b),
            train_acc: self.correct as f64 / self.n.max(1) as f64,
        }
    }
}

/// Trains one model on its supervised loss for `epochs` epochs.
#[allow(clippy::too_many_arguments)]
fn supervised(
    model: &BmfNet,
    params: &mut ParamStore<f32>,
    samples: &[MultimodalSample],
    batches: &mut Batches,
    epochs: usize,
    adam: AdamConfig,
    phase: Phase,
    alignment: bool,
    history: &mut Vec<EpochRecord>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    let mut opt = AdamState::new(adam, params);
    for epoch in 0..epochs {
        let mut acc = Accum::default();
        for (bi, idx) in batches.epoch().into_iter().enumerate() {
            let (eeg, enose, labels) = batch_inputs::<f32>(samples, &idx)?;
            let mut tape = Tape::new();
            let (ev, nv) = (tape.constant(eeg), tape.constant(enose));
            let step = (|| {
                let trace = model.forward(&mut tape, params, ev, nv)?;
                let loss = hard_loss(&mut tape, &trace, &labels, alignment)?;
                Ok((trace, loss))
            })();
            let (trace, loss) = guard(step, phase, epoch, bi)?;
            let value = finite(&tape, loss, phase, epoch, bi)?;
            params.zero_grad();
            tape.backward_into(loss, params)?;
            opt.step(params)?;
            acc.n += labels.len();
            acc.correct += correct(&tape, &trace, &labels);
            acc.batches += 1;
            acc.total += value;
            acc.hard += value;
        }
        let rec = acc.record(epoch, phase);
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(())
}

pub fn train(
    samples: &[MultimodalSample],
    train_indices: &[usize],
    teacher_cfg: Option<&ModelConfig>,
    student_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_with(samples, train_indices, teacher_cfg, student_cfg, cfg, &mut |_| {})
}

/// Three-phase training: (i) teacher on its supervised loss, (ii) student on
/// the hard loss, (iii) student on the distillation objective with the
/// teacher frozen. Without a teacher config only phase (ii) runs.
pub fn train_with(
    samples: &[MultimodalSample],
    train_indices: &[usize],
    teacher_cfg: Option<&ModelConfig>,
    student_cfg: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    cfg.distill.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if train_indices.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= samples.len()) {
        return Err(Error::Dataset(alloc::format!("sample index {bad} out of range")));
    }
    let mut history = Vec::new();
    let mut batches = Batches {
        order: train_indices.to_vec(),
        size: cfg.batch_size,
        rng: rng(cfg.seed, SHUFFLE),
        shuffle: cfg.shuffle,
    };

    let teacher = match teacher_cfg {
        Some(tc) => {
            let (model, mut params) = BmfNet::init::<f32, _>(tc.clone(), &mut rng(cfg.seed, INIT_TEACHER))?;
            supervised(
                &model,
                &mut params,
                samples,
                &mut batches,
                cfg.teacher_epochs,
                cfg.adam,
                Phase::Teacher,
                tc.alignment,
                &mut history,
                on_epoch,
            )?;
            Some(TrainedModel { model, params })
        }
        None => None,
    };

    let (model, mut params) = BmfNet::init::<f32, _>(student_cfg.clone(), &mut rng(cfg.seed, INIT_STUDENT))?;
    supervised(
        &model,
        &mut params,
        samples,
        &mut batches,
        cfg.student_epochs,
        cfg.adam,
        Phase::StudentHard,
        student_cfg.alignment,
        &mut history,
        on_epoch,
    )?;
    let mut student = TrainedModel { model, params };

    if let Some(t) = &teacher {
        let map = DistillMap::between(&t.model.config, student_cfg)?;
        let mut opt = AdamState::new(cfg.adam, &student.params);
        let phase = Phase::Joint;
        for epoch in 0..cfg.joint_epochs {
            let mut acc = Accum::default();
            for (bi, idx) in batches.epoch().into_iter().enumerate() {
                let (eeg, enose, labels) = batch_inputs::<f32>(samples, &idx)?;
                let mut frozen = Tape::no_grad();
                let (tev, tnv) = (frozen.constant(eeg.clone()), frozen.constant(enose.clone()));
                let t_trace = guard(t.model.forward(&mut frozen, &t.params, tev, tnv), phase, epoch, bi)?;

                let mut tape = Tape::new();
                let t_trace = import_trace(&frozen, &t_trace, &mut tape);
                drop(frozen);
                let (ev, nv) = (tape.constant(eeg), tape.constant(enose));
                let step = (|| {
                    let trace = student.model.forward(&mut tape, &student.params, ev, nv)?;
                    let loss = student_loss(
                        &mut tape,
                        &trace,
                        &t_trace,
                        &labels,
                        student_cfg.alignment,
                        &map,
                        &cfg.distill,
                    )?;
                    Ok((trace, loss))
                })();
                let (trace, loss) = guard(step, phase, epoch, bi)?;
                let value = finite(&tape, loss.total, phase, epoch, bi)?;
                student.params.zero_grad();
                tape.backward_into(loss.total, &mut student.params)?;
                opt.step(&mut student.params)?;
                acc.n += labels.len();
                acc.correct += correct(&tape, &trace, &labels);
                acc.batches += 1;
                acc.total += value;
                acc.hard += tape.value(loss.hard).item() as f64;
                acc.soft += tape.value(loss.soft).item() as f64;
                for (a, &p) in acc.parts.iter_mut().zip(&loss.parts) {
                    *a += tape.value(p).item() as f64;
                }
            }
            let rec = acc.record(epoch, phase);
            on_epoch(&rec);
            history.push(rec);
        }
    }

    Ok(TrainOutput { teacher, student, history })
}
