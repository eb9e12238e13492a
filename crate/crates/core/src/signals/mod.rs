//! Synthetic multimodal recordings, EEG preprocessing and dataset assembly.

mod config;
mod dataset;
pub mod filter;
mod synth;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use config::{EegModel, EnoseModel, SignalConfig, DISGUST, HAPPY, ODORS, PARALLELS, WINDOWS};
pub use dataset::{
    build_dataset, default_profiles, preprocess_raw, synth_raw, Dataset, Fold, FoldPlan, MultimodalSample,
    RawSet, Standardizer,
};
pub use filter::{butter_bandpass, Sos};
pub use synth::{derive_seed, synth_eeg, synth_enose, EegRecording, EnoseRecording, SubjectTraits};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A subject's label for each odor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    pub subject_id: usize,
    pub preference: [usize; ODORS],
}

impl PreferenceProfile {
    /// Population-majority preferences.
    pub const MAJORITY: [usize; ODORS] = [HAPPY, DISGUST, HAPPY, DISGUST];

    pub fn majority(subject_id: usize) -> Self {
        Self { subject_id, preference: Self::MAJORITY }
    }

    /// Disagrees with the majority on odors 0 and 1.
    pub fn minority(subject_id: usize) -> Self {
        let mut preference = Self::MAJORITY;
        preference[0] = 1 - preference[0];
        preference[1] = 1 - preference[1];
        Self { subject_id, preference }
    }

    pub fn is_minority(&self) -> bool {
        self.preference != Self::MAJORITY
    }
}

/// Zero-phase band-pass of every channel (row) of a `channels × T` recording.
pub fn bandpass(recording: &Tensor<f64>, cfg: &SignalConfig) -> Result<Tensor<f64>> {
    let sos = butter_bandpass(cfg.filter_order, cfg.band_low, cfg.band_high, cfg.eeg_rate as f64)?;
    filter_rows(recording, &sos)
}

pub fn filter_rows(recording: &Tensor<f64>, sos: &Sos) -> Result<Tensor<f64>> {
    if recording.rank() != 2 {
        return Err(Error::Signal(format!("expected channels × time, got {:?}", recording.shape())));
    }
    let t = recording.shape()[1];
    let mut out = Vec::with_capacity(recording.len());
    for row in recording.data().chunks(t) {
        out.extend(sos.filtfilt(row)?);
    }
    Tensor::new(recording.shape().to_vec(), out)
}

/// Decimation by two: keeps even sample indices.
pub fn downsample(recording: &Tensor<f64>) -> Result<Tensor<f64>> {
    if recording.rank() != 2 {
        return Err(Error::Signal(format!("expected channels × time, got {:?}", recording.shape())));
    }
    let (c, t) = (recording.shape()[0], recording.shape()[1]);
    if t % 2 != 0 {
        return Err(Error::Signal(format!("cannot halve odd length {t}")));
    }
    let data = recording
        .data()
        .chunks(t)
        .flat_map(|row| row.iter().step_by(2).copied())
        .collect();
    Tensor::new(alloc::vec![c, t / 2], data)
}

/// Cuts the retained span of a downsampled recording into consecutive
/// non-overlapping windows.
pub fn window_samples(recording: &Tensor<f64>, cfg: &SignalConfig) -> Result<Vec<Tensor<f64>>> {
    let expected = cfg.target_rate * cfg.eeg_seconds;
    if recording.rank() != 2 || recording.shape()[1] != expected {
        return Err(Error::Signal(format!(
            "expected {} s at {} Hz ({expected} samples), got shape {:?}",
            cfg.eeg_seconds,
            cfg.target_rate,
            recording.shape()
        )));
    }
    let (c, t) = (recording.shape()[0], expected);
    let len = cfg.window_len();
    let start = cfg.keep_from * cfg.target_rate;
    if start + WINDOWS * len > t {
        return Err(Error::Config("windows extend past the end of the recording".into()));
    }
    (0..WINDOWS)
        .map(|k| {
            let from = start + k * len;
            let mut data = Vec::with_capacity(c * len);
            for row in recording.data().chunks(t) {
                data.extend_from_slice(&row[from..from + len]);
            }
            Tensor::new(alloc::vec![c, len], data)
        })
        .collect()
}

/// Band-pass, downsample and window one raw EEG recording.
pub fn preprocess_eeg(recording: &Tensor<f64>, cfg: &SignalConfig) -> Result<Vec<Tensor<f64>>> {
    if recording.rank() != 2 || recording.shape() != [cfg.eeg_channels, cfg.eeg_len()] {
        return Err(Error::Signal(format!(
            "expected raw EEG of shape [{}, {}], got {:?}",
            cfg.eeg_channels,
            cfg.eeg_len(),
            recording.shape()
        )));
    }
    window_samples(&downsample(&bandpass(recording, cfg)?)?, cfg)
}

#[cfg(test)]
mod tests;
