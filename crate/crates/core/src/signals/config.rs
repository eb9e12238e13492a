use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Stimuli per subject.
pub const ODORS: usize = 4;
/// Parallel experiments per subject and odor.
pub const PARALLELS: usize = 6;
/// EEG windows (and paired E-nose repetitions) per parallel experiment.
pub const WINDOWS: usize = 10;

pub const DISGUST: usize = 0;
pub const HAPPY: usize = 1;

/// Acquisition geometry and preprocessing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub eeg_channels: usize,
    pub eeg_rate: usize,
    pub eeg_seconds: usize,
    pub target_rate: usize,
    /// First retained second after downsampling.
    pub keep_from: usize,
    pub window_seconds: usize,
    pub band_low: f64,
    pub band_high: f64,
    pub filter_order: usize,
    pub eeg: EegModel,
    pub enose: EnoseModel,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            eeg_channels: 21,
            eeg_rate: 256,
            eeg_seconds: 30,
            target_rate: 128,
            keep_from: 1,
            window_seconds: 2,
            band_low: 0.5,
            band_high: 45.0,
            filter_order: 4,
            eeg: EegModel::default(),
            enose: EnoseModel::default(),
        }
    }
}

impl SignalConfig {
    pub fn eeg_len(&self) -> usize {
        self.eeg_rate * self.eeg_seconds
    }

    pub fn window_len(&self) -> usize {
        self.target_rate * self.window_seconds
    }
}

/// Generative model of one olfactory EEG recording: odor-locked rhythms,
/// a preference rhythm whose band follows the subject's label for the odor,
/// a subject-specific channel mixing and background noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EegModel {
    /// Two rhythm frequencies (Hz) per odor.
    pub odor_freqs: Vec<[f64; 2]>,
    pub odor_amp: f64,
    /// Preference rhythm frequency (Hz) indexed by label.
    pub preference_freqs: Vec<f64>,
    pub preference_amp: f64,
    /// Per-subject shift of the preference rhythm, drawn from ±this many Hz.
    pub preference_freq_spread: f64,
    /// Strength of the off-diagonal part of the subject mixing matrix.
    pub subject_mix: f64,
    /// Spread of per-channel subject gains around 1.
    pub subject_gain_spread: f64,
    /// Amplitude of a subject-specific nuisance rhythm.
    pub subject_rhythm_amp: f64,
    /// Standard deviation (µV) of the background noise.
    pub noise_amp: f64,
    /// Uniform phase jitter of every rhythm, as a fraction of π.
    pub phase_jitter: f64,
    pub subject_seed: u64,
}

impl Default for EegModel {
    fn default() -> Self {
        Self {
            odor_freqs: vec![[4.0, 17.0], [6.0, 23.0], [7.5, 31.0], [3.0, 37.0]],
            odor_amp: 6.0,
            preference_freqs: vec![20.0, 10.0],
            preference_amp: 10.0,
            preference_freq_spread: 0.25,
            subject_mix: 0.3,
            subject_gain_spread: 0.2,
            subject_rhythm_amp: 1.0,
            noise_amp: 6.0,
            phase_jitter: 1.0,
            subject_seed: 0x5eed_0001,
        }
    }
}

impl EegModel {
    /// Same structure with every random component switched off.
    pub fn noiseless(mut self) -> Self {
        self.noise_amp = 0.0;
        self.phase_jitter = 0.0;
        self
    }
}

/// First-order sensor response model of the E-nose array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnoseModel {
    pub sensors: usize,
    pub seconds: usize,
    /// Steady-state response (G/G₀ − 1) of each sensor to each odor.
    pub signature: Vec<[f64; 4]>,
    /// Response time constant (s) of each sensor.
    pub tau: Vec<f64>,
    pub noise_std: f64,
}

impl Default for EnoseModel {
    fn default() -> Self {
        Self {
            sensors: 10,
            seconds: 90,
            signature: vec![
                [0.80, 0.20, 0.45, 1.10],
                [0.35, 1.40, 0.25, 0.60],
                [1.60, 0.55, 0.30, 0.20],
                [0.25, 0.30, 1.90, 0.45],
                [0.90, 0.95, 0.60, 0.35],
                [0.15, 0.70, 0.85, 1.50],
                [1.20, 0.40, 1.05, 0.70],
                [0.50, 1.75, 0.40, 0.95],
                [0.30, 0.25, 0.65, 0.30],
                [0.70, 0.60, 1.30, 1.25],
            ],
            tau: vec![6.0, 9.0, 12.0, 7.5, 15.0, 10.0, 5.0, 18.0, 8.0, 13.0],
            noise_std: 0.02,
        }
    }
}
