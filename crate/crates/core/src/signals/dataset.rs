use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::synth::rng_for;
use super::{preprocess_eeg, synth_eeg, synth_enose, EegRecording, EnoseRecording, PreferenceProfile};
use super::{SignalConfig, ODORS, PARALLELS, WINDOWS};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const EEG_STREAM: u64 = 1;
const ENOSE_STREAM: u64 = 2;

/// One paired EEG window and E-nose frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    /// `channels × window` at the target rate.
    pub eeg: Tensor<f32>,
    /// `sensors × seconds`.
    pub enose: Tensor<f32>,
    pub subject_id: usize,
    pub odor_id: usize,
    pub parallel_id: usize,
    pub window_id: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_subject: usize,
    pub train_subjects: Vec<usize>,
}

/// Leave-one-subject-out partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    /// Set when some fold has no training subjects.
    pub degenerate: bool,
}

impl FoldPlan {
    pub fn leave_one_subject_out(subjects: &[usize]) -> Self {
        let unique: BTreeSet<usize> = subjects.iter().copied().collect();
        let folds: Vec<Fold> = unique
            .iter()
            .map(|&test| Fold {
                test_subject: test,
                train_subjects: unique.iter().copied().filter(|&s| s != test).collect(),
            })
            .collect();
        let degenerate = folds.iter().any(|f| f.train_subjects.is_empty());
        Self { folds, degenerate }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MultimodalSample>,
    pub profiles: Vec<PreferenceProfile>,
    pub folds: FoldPlan,
}

impl Dataset {
    pub fn indices_of(&self, subjects: &[usize]) -> Vec<usize> {
        let set: BTreeSet<usize> = subjects.iter().copied().collect();
        (0..self.samples.len()).filter(|&i| set.contains(&self.samples[i].subject_id)).collect()
    }

    /// (train indices, test indices) of a fold.
    pub fn split(&self, fold: &Fold) -> (Vec<usize>, Vec<usize>) {
        (self.indices_of(&fold.train_subjects), self.indices_of(&[fold.test_subject]))
    }

    pub fn profile(&self, subject: usize) -> Option<&PreferenceProfile> {
        self.profiles.iter().find(|p| p.subject_id == subject)
    }
}

/// Majority profiles for every subject, with the last `minority` subjects
/// flipped to the minority profile.
pub fn default_profiles(n_subjects: usize, minority: usize) -> Vec<PreferenceProfile> {
    (0..n_subjects)
        .map(|s| {
            if s + minority >= n_subjects {
                PreferenceProfile::minority(s)
            } else {
                PreferenceProfile::majority(s)
            }
        })
        .collect()
}

fn profile_for(profiles: &[PreferenceProfile], subject: usize) -> Result<&PreferenceProfile> {
    profiles
        .iter()
        .find(|p| p.subject_id == subject)
        .ok_or_else(|| Error::Dataset(format!("no preference profile for subject {subject}")))
}

fn eeg_recording(
    cfg: &SignalConfig,
    seed: u64,
    profile: &PreferenceProfile,
    odor: usize,
    parallel: usize,
) -> Result<EegRecording> {
    let s = profile.subject_id;
    let mut rng = rng_for(seed, &[EEG_STREAM, s as u64, odor as u64, parallel as u64]);
    synth_eeg(cfg, odor, s, parallel, profile, &mut rng)
}

fn enose_recording(
    cfg: &SignalConfig,
    seed: u64,
    subject: usize,
    odor: usize,
    parallel: usize,
    rep: usize,
) -> Result<EnoseRecording> {
    let mut rng = rng_for(seed, &[ENOSE_STREAM, subject as u64, odor as u64, parallel as u64, rep as u64]);
    synth_enose(&cfg.enose, odor, subject, parallel, rep, &mut rng)
}

fn to_f32(t: &Tensor<f64>) -> Tensor<f32> {
    t.cast()
}

/// Raw, unprocessed recordings of a synthetic cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSet {
    pub eeg: Vec<EegRecording>,
    pub enose: Vec<EnoseRecording>,
    pub profiles: Vec<PreferenceProfile>,
}

pub fn synth_raw(
    n_subjects: usize,
    profiles: &[PreferenceProfile],
    cfg: &SignalConfig,
    seed: u64,
) -> Result<RawSet> {
    let mut eeg = Vec::new();
    let mut enose = Vec::new();
    for s in 0..n_subjects {
        let profile = profile_for(profiles, s)?;
        for odor in 0..ODORS {
            for parallel in 0..PARALLELS {
                eeg.push(eeg_recording(cfg, seed, profile, odor, parallel)?);
                for rep in 0..WINDOWS {
                    enose.push(enose_recording(cfg, seed, s, odor, parallel, rep)?);
                }
            }
        }
    }
    Ok(RawSet { eeg, enose, profiles: profiles[..].to_vec() })
}

fn assemble(
    eeg: &EegRecording,
    enose: &[&EnoseRecording],
    profile: &PreferenceProfile,
    cfg: &SignalConfig,
    out: &mut Vec<MultimodalSample>,
) -> Result<()> {
    let windows = preprocess_eeg(&eeg.samples, cfg)?;
    for (k, window) in windows.iter().enumerate() {
        let nose = enose
            .iter()
            .find(|r| r.repetition_id == k)
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "missing E-nose repetition {k} for subject {} odor {} parallel {}",
                    eeg.subject_id, eeg.odor_id, eeg.parallel_id
                ))
            })?;
        out.push(MultimodalSample {
            eeg: to_f32(window),
            enose: to_f32(&nose.conductivity),
            subject_id: eeg.subject_id,
            odor_id: eeg.odor_id,
            parallel_id: eeg.parallel_id,
            window_id: k,
            label: profile.preference[eeg.odor_id],
        });
    }
    Ok(())
}

/// Preprocesses raw recordings and pairs each EEG window with the E-nose
/// repetition of the same index from the same parallel experiment.
pub fn preprocess_raw(raw: &RawSet, cfg: &SignalConfig) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(raw.eeg.len() * WINDOWS);
    for rec in &raw.eeg {
        let profile = profile_for(&raw.profiles, rec.subject_id)?;
        let paired: Vec<&EnoseRecording> = raw
            .enose
            .iter()
            .filter(|e| {
                e.subject_id == rec.subject_id && e.odor_id == rec.odor_id && e.parallel_id == rec.parallel_id
            })
            .collect();
        assemble(rec, &paired, profile, cfg, &mut samples)?;
    }
    let subjects: Vec<usize> = raw.eeg.iter().map(|r| r.subject_id).collect();
    Ok(Dataset { samples, profiles: raw.profiles.clone(), folds: FoldPlan::leave_one_subject_out(&subjects) })
}

/// Synthesizes and preprocesses a cohort one recording at a time.
///
/// Produces exactly the same samples as `preprocess_raw(synth_raw(..))`.
pub fn build_dataset(
    n_subjects: usize,
    profiles: &[PreferenceProfile],
    cfg: &SignalConfig,
    seed: u64,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(n_subjects * ODORS * PARALLELS * WINDOWS);
    for s in 0..n_subjects {
        let profile = profile_for(profiles, s)?;
        for odor in 0..ODORS {
            for parallel in 0..PARALLELS {
                let eeg = eeg_recording(cfg, seed, profile, odor, parallel)?;
                let enose = (0..WINDOWS)
                    .map(|rep| enose_recording(cfg, seed, s, odor, parallel, rep))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&EnoseRecording> = enose.iter().collect();
                assemble(&eeg, &refs, profile, cfg, &mut samples)?;
            }
        }
    }
    let subjects: Vec<usize> = (0..n_subjects).collect();
    Ok(Dataset {
        samples,
        profiles: profiles.iter().filter(|p| p.subject_id < n_subjects).cloned().collect(),
        folds: FoldPlan::leave_one_subject_out(&subjects),
    })
}

/// Per-row (EEG channel / E-nose sensor) standardization fitted on a
/// training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub eeg_mean: Vec<f64>,
    pub eeg_std: Vec<f64>,
    pub enose_mean: Vec<f64>,
    pub enose_std: Vec<f64>,
}

fn row_stats<'a>(items: impl Iterator<Item = &'a Tensor<f32>> + Clone) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = items.clone().next().ok_or_else(|| Error::Dataset("cannot fit on an empty split".into()))?;
    let (rows, cols) = (first.shape()[0], first.shape()[1]);
    let mut sum = alloc::vec![0.0; rows];
    let mut sq = alloc::vec![0.0; rows];
    let mut count = 0usize;
    for t in items {
        for (r, row) in t.data().chunks(cols).enumerate() {
            for &v in row {
                sum[r] += v as f64;
                sq[r] += (v as f64) * (v as f64);
            }
        }
        count += cols;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / count as f64 - m * m).max(0.0).sqrt().max(1e-6))
        .collect();
    Ok((mean, std))
}

fn normalize(t: &Tensor<f32>, mean: &[f64], std: &[f64]) -> Tensor<f32> {
    let cols = t.shape()[1];
    let mut out = t.clone();
    for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
        for v in row {
            *v = ((*v as f64 - mean[r]) / std[r]) as f32;
        }
    }
    out
}

impl Standardizer {
    pub fn fit(samples: &[MultimodalSample], indices: &[usize]) -> Result<Self> {
        let (eeg_mean, eeg_std) = row_stats(indices.iter().map(|&i| &samples[i].eeg))?;
        let (enose_mean, enose_std) = row_stats(indices.iter().map(|&i| &samples[i].enose))?;
        Ok(Self { eeg_mean, eeg_std, enose_mean, enose_std })
    }

    pub fn apply(&self, sample: &MultimodalSample) -> MultimodalSample {
        MultimodalSample {
            eeg: normalize(&sample.eeg, &self.eeg_mean, &self.eeg_std),
            enose: normalize(&sample.enose, &self.enose_mean, &self.enose_std),
            ..sample.clone()
        }
    }
}
