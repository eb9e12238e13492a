//! Transformer-block distillation losses and the three-phase trainer.

mod trainer;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use trainer::{
    train, train_with, EpochRecord, Phase, TrainConfig, TrainOutput, TrainedModel,
};

use crate::attention::BlockTaps;
use crate::bmfnet::{ForwardTrace, ModelConfig, Module};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Weight of the hard loss.
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { alpha: 0.3, temperature: 3.0 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// (teacher block, student block) pairs per module, 0-based.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillMap {
    pub mfi: Vec<(usize, usize)>,
    pub aefm: Vec<(usize, usize)>,
    pub ff: Vec<(usize, usize)>,
}

fn module_pairs(teacher: usize, student: usize) -> Result<Vec<(usize, usize)>> {
    if teacher == 0 || student == 0 {
        Ok(Vec::new())
    } else if teacher == student {
        Ok((0..student).map(|i| (i, i)).collect())
    } else if teacher == 2 * student {
        Ok((0..student).map(|i| (2 * i + 1, i)).collect())
    } else {
        Err(Error::Config(format!("cannot map {teacher} teacher blocks onto {student} student blocks")))
    }
}

impl DistillMap {
    /// Every second teacher block guides the student block of the same rank:
    /// teacher blocks 2 and 4 onto student blocks 1 and 2.
    pub fn between(teacher: &ModelConfig, student: &ModelConfig) -> Result<Self> {
        Ok(Self {
            mfi: module_pairs(2 * teacher.mfi_pairs, 2 * student.mfi_pairs)?,
            aefm: module_pairs(teacher.aefm_blocks, student.aefm_blocks)?,
            ff: module_pairs(teacher.ff_blocks, student.ff_blocks)?,
        })
    }

    /// Each block mapped onto itself.
    pub fn identity(cfg: &ModelConfig) -> Self {
        let id = |n: usize| (0..n).map(|i| (i, i)).collect();
        Self { mfi: id(2 * cfg.mfi_pairs), aefm: id(cfg.aefm_blocks), ff: id(cfg.ff_blocks) }
    }

    pub fn pairs(&self, module: Module) -> &[(usize, usize)] {
        match module {
            Module::Mfi => &self.mfi,
            Module::Aefm => &self.aefm,
            Module::Ff => &self.ff,
        }
    }
}

/// Mean over heads of the per-head MSE between attention maps. Heads have
/// equal size, so this is the MSE over all entries.
pub fn attn_loss<T: Scalar>(tape: &mut Tape<T>, teacher: Var, student: Var) -> Result<Var> {
    if tape.shape(teacher) != tape.shape(student) || tape.shape(teacher).len() != 4 {
        return Err(Error::shape(
            "attn_loss",
            format!("teacher maps {:?}, student maps {:?}", tape.shape(teacher), tape.shape(student)),
        ));
    }
    tape.mse_loss(teacher, student)
}

pub fn hidden_loss<T: Scalar>(tape: &mut Tape<T>, teacher: Var, student: Var) -> Result<Var> {
    tape.mse_loss(teacher, student)
}

pub fn fc_loss<T: Scalar>(tape: &mut Tape<T>, teacher: Var, student: Var) -> Result<Var> {
    tape.mse_loss(teacher, student)
}

/// `T² · KL(softmax(z_T / T) ‖ softmax(z_S / T))`, averaged over the batch.
pub fn soft_logit_loss<T: Scalar>(tape: &mut Tape<T>, teacher: Var, student: Var, temperature: f64) -> Result<Var> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let inv = T::from_f64(1.0 / temperature);
    let t = tape.scale(teacher, inv)?;
    let s = tape.scale(student, inv)?;
    let log_t = tape.log_softmax(t)?;
    let log_s = tape.log_softmax(s)?;
    let kl = tape.kl_div(log_t, log_s)?;
    tape.scale(kl, T::from_f64(temperature * temperature))
}

fn zero<T: Scalar>(tape: &mut Tape<T>) -> Var {
    tape.constant(Tensor::scalar(T::zero()))
}

fn tap(taps: &[BlockTaps], module: Module, index: usize) -> Result<BlockTaps> {
    taps.get(index).copied().ok_or(Error::MissingTap { module: module.name(), index })
}

/// Sum of attention and hidden losses over the module's mapped block pairs.
pub fn module_loss<T: Scalar>(
    tape: &mut Tape<T>,
    teacher: &ForwardTrace,
    student: &ForwardTrace,
    map: &DistillMap,
    module: Module,
) -> Result<Var> {
    let mut total = zero(tape);
    for &(ti, si) in map.pairs(module) {
        let t = tap(teacher.taps(module), module, ti)?;
        let s = tap(student.taps(module), module, si)?;
        let a = attn_loss(tape, t.attn, s.attn)?;
        let h = hidden_loss(tape, t.hidden, s.hidden)?;
        let pair = tape.add(a, h)?;
        total = tape.add(total, pair)?;
    }
    Ok(total)
}

/// Supervised loss: alignment MSE (when enabled and both features exist)
/// plus cross-entropy.
pub fn hard_loss<T: Scalar>(tape: &mut Tape<T>, trace: &ForwardTrace, labels: &[usize], alignment: bool) -> Result<Var> {
    let ce = tape.cross_entropy(trace.logits, labels)?;
    match (alignment, trace.m, trace.b) {
        (true, Some(m), Some(b)) => {
            let align = tape.mse_loss(m, b)?;
            tape.add(align, ce)
        }
        _ => Ok(ce),
    }
}

/// `MSE(m_T, b_T) + CE(P_T, label)`.
pub fn teacher_loss<T: Scalar>(tape: &mut Tape<T>, trace: &ForwardTrace, labels: &[usize]) -> Result<Var> {
    hard_loss(tape, trace, labels, true)
}

/// Components of the student objective, all scalar vars on one tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StudentLoss {
    pub total: Var,
    pub hard: Var,
    pub soft: Var,
    /// MFI, AEFM, FF, FC-feature and soft-logit terms.
    pub parts: [Var; 5],
}

/// Soft loss: module losses for MFI, AEFM and FF, FC-feature MSE and the
/// temperature-softened logit KL. Returns the five terms and their sum.
pub fn soft_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student: &ForwardTrace,
    teacher: &ForwardTrace,
    map: &DistillMap,
    temperature: f64,
) -> Result<([Var; 5], Var)> {
    let l1 = module_loss(tape, teacher, student, map, Module::Mfi)?;
    let l2 = module_loss(tape, teacher, student, map, Module::Aefm)?;
    let l3 = module_loss(tape, teacher, student, map, Module::Ff)?;
    let l4 = fc_loss(tape, teacher.feature, student.feature)?;
    let l5 = soft_logit_loss(tape, teacher.logits, student.logits, temperature)?;
    let parts = [l1, l2, l3, l4, l5];
    let mut sum = l1;
    for &p in &parts[1..] {
        sum = tape.add(sum, p)?;
    }
    Ok((parts, sum))
}

/// `α · L_hard + (1 − α) · L_soft`.
pub fn student_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student: &ForwardTrace,
    teacher: &ForwardTrace,
    labels: &[usize],
    alignment: bool,
    map: &DistillMap,
    cfg: &DistillConfig,
) -> Result<StudentLoss> {
    cfg.validate()?;
    let hard = hard_loss(tape, student, labels, alignment)?;
    let (parts, soft) = soft_loss(tape, student, teacher, map, cfg.temperature)?;
    let a = tape.scale(hard, T::from_f64(cfg.alpha))?;
    let b = tape.scale(soft, T::from_f64(1.0 - cfg.alpha))?;
    let total = tape.add(a, b)?;
    Ok(StudentLoss { total, hard, soft, parts })
}

/// Copies the distillation-relevant values of a trace recorded on `src` into
/// `dst` as constants, so losses against them never reach the source model.
pub fn import_trace<T: Scalar>(src: &Tape<T>, trace: &ForwardTrace, dst: &mut Tape<T>) -> ForwardTrace {
    let mut copy = |v: Var| dst.constant(src.value(v).clone());
    let mut taps = |list: &[BlockTaps]| -> Vec<BlockTaps> {
        list.iter().map(|t| BlockTaps { attn: copy(t.attn), hidden: copy(t.hidden) }).collect()
    };
    let mfi = taps(&trace.mfi);
    let aefm = taps(&trace.aefm);
    let ff = taps(&trace.ff);
    ForwardTrace {
        m: trace.m.map(&mut copy),
        b: trace.b.map(&mut copy),
        mfi,
        aefm,
        ff,
        feature: copy(trace.feature),
        logits: copy(trace.logits),
        probs: copy(trace.probs),
    }
}
