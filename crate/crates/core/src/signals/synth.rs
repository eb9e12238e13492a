//! Parametric stand-ins for the EEG and E-nose acquisition.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{EegModel, EnoseModel, SignalConfig, ODORS};
use super::PreferenceProfile;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Raw EEG, `channels × rate·seconds`, in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub subject_id: usize,
    pub odor_id: usize,
    pub parallel_id: usize,
    pub samples: Tensor<f64>,
}

/// E-nose conductivity ratios G/G₀, `sensors × seconds`, sampled at 1 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct EnoseRecording {
    pub subject_id: usize,
    pub odor_id: usize,
    pub parallel_id: usize,
    pub repetition_id: usize,
    pub conductivity: Tensor<f64>,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub(crate) fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_enose<R: Rng + ?Sized>(
    model: &EnoseModel,
    odor_id: usize,
    subject_id: usize,
    parallel_id: usize,
    repetition_id: usize,
    rng: &mut R,
) -> Result<EnoseRecording> {
    if odor_id >= ODORS {
        return Err(Error::Signal(format!("odor {odor_id} out of range")));
    }
    if model.signature.len() != model.sensors || model.tau.len() != model.sensors {
        return Err(Error::Config(format!(
            "E-nose model lists {} signatures and {} time constants for {} sensors",
            model.signature.len(),
            model.tau.len(),
            model.sensors
        )));
    }
    let mut data = Vec::with_capacity(model.sensors * model.seconds);
    for s in 0..model.sensors {
        let amp = model.signature[s][odor_id];
        for t in 0..model.seconds {
            let clean = 1.0 + amp * (1.0 - (-(t as f64) / model.tau[s]).exp());
            let noisy = if model.noise_std > 0.0 { clean + model.noise_std * normal(rng) } else { clean };
            data.push(noisy.max(1e-3));
        }
    }
    Ok(EnoseRecording {
        subject_id,
        odor_id,
        parallel_id,
        repetition_id,
        conductivity: Tensor::new(vec![model.sensors, model.seconds], data)?,
    })
}

/// Fixed per-subject characteristics, a pure function of the subject id and
/// the model's subject seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTraits {
    /// Row-major `channels × channels` mixing matrix.
    pub mixing: Vec<f64>,
    pub gain: Vec<f64>,
    pub preference_shift: f64,
    pub rhythm_freq: f64,
    pub rhythm_phase: f64,
}

impl SubjectTraits {
    pub fn generate(model: &EegModel, channels: usize, subject_id: usize) -> Self {
        let mut rng = rng_for(model.subject_seed, &[subject_id as u64]);
        let scale = model.subject_mix / (channels as f64).sqrt();
        let mut mixing = vec![0.0; channels * channels];
        for i in 0..channels {
            for j in 0..channels {
                let eye = if i == j { 1.0 } else { 0.0 };
                mixing[i * channels + j] = eye + scale * normal(&mut rng);
            }
        }
        let gain = (0..channels)
            .map(|_| (1.0 + model.subject_gain_spread * normal(&mut rng)).max(0.2))
            .collect();
        Self {
            mixing,
            gain,
            preference_shift: rng.gen_range(-1.0..=1.0) * model.preference_freq_spread,
            rhythm_freq: rng.gen_range(3.0..40.0),
            rhythm_phase: rng.gen_range(0.0..2.0 * PI),
        }
    }
}

/// Smooth fixed spatial pattern over channels.
fn topography(channels: usize, seed: f64) -> Vec<f64> {
    (0..channels)
        .map(|c| 0.6 + 0.4 * (seed + 0.7 * c as f64).cos())
        .collect()
}

pub fn synth_eeg<R: Rng + ?Sized>(
    cfg: &SignalConfig,
    odor_id: usize,
    subject_id: usize,
    parallel_id: usize,
    profile: &PreferenceProfile,
    rng: &mut R,
) -> Result<EegRecording> {
    let model = &cfg.eeg;
    if odor_id >= ODORS || odor_id >= model.odor_freqs.len() {
        return Err(Error::Signal(format!("odor {odor_id} out of range")));
    }
    if profile.subject_id != subject_id {
        return Err(Error::Signal(format!(
            "profile of subject {} used for subject {subject_id}",
            profile.subject_id
        )));
    }
    let label = profile.preference[odor_id];
    let pref_freq = *model
        .preference_freqs
        .get(label)
        .ok_or_else(|| Error::Config(format!("no preference rhythm for label {label}")))?;

    let channels = cfg.eeg_channels;
    let n = cfg.eeg_len();
    let fs = cfg.eeg_rate as f64;
    let traits = SubjectTraits::generate(model, channels, subject_id);
    let jitter = |rng: &mut R| {
        if model.phase_jitter > 0.0 {
            rng.gen_range(-1.0..1.0) * model.phase_jitter * PI
        } else {
            0.0
        }
    };

    // (frequency, phase, amplitude, spatial pattern) of each source
    let mut sources = Vec::new();
    for (k, &f) in model.odor_freqs[odor_id].iter().enumerate() {
        let phase = 0.9 * (odor_id * 2 + k) as f64 + jitter(rng);
        sources.push((f, phase, model.odor_amp, topography(channels, 1.3 * (odor_id + k) as f64)));
    }
    let phase = 0.4 * label as f64 + jitter(rng);
    sources.push((pref_freq + traits.preference_shift, phase, model.preference_amp, topography(channels, 2.1)));
    sources.push((traits.rhythm_freq, traits.rhythm_phase, model.subject_rhythm_amp, topography(channels, 0.3)));

    let mut clean = vec![0.0; channels * n];
    for (f, phase, amp, pattern) in &sources {
        let w = 2.0 * PI * f / fs;
        for t in 0..n {
            let v = amp * (w * t as f64 + phase).sin();
            for c in 0..channels {
                clean[c * n + t] += pattern[c] * v;
            }
        }
    }

    let mut data = vec![0.0; channels * n];
    for i in 0..channels {
        let out = &mut data[i * n..(i + 1) * n];
        for j in 0..channels {
            let m = traits.mixing[i * channels + j] * traits.gain[i];
            for (o, &s) in out.iter_mut().zip(&clean[j * n..(j + 1) * n]) {
                *o += m * s;
            }
        }
    }

    if model.noise_amp > 0.0 {
        // AR(1) coloured noise normalized to unit variance, plus a white floor
        let rho: f64 = 0.9;
        let norm = (1.0 - rho * rho).sqrt();
        for c in 0..channels {
            let mut state = normal(rng);
            for t in 0..n {
                state = rho * state + norm * normal(rng);
                data[c * n + t] += model.noise_amp * (0.8 * state + 0.6 * normal(rng));
            }
        }
    }

    Ok(EegRecording {
        subject_id,
        odor_id,
        parallel_id,
        samples: Tensor::new(vec![channels, n], data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::config::HAPPY;

    fn profile(subject: usize) -> PreferenceProfile {
        PreferenceProfile::majority(subject)
    }

    #[test]
    fn enose_baseline_and_asymptote() {
        let mut model = EnoseModel::default();
        model.noise_std = 0.0;
        model.seconds = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = synth_enose(&model, 2, 0, 0, 0, &mut rng).unwrap();
        for s in 0..model.sensors {
            assert_eq!(rec.conductivity.get(&[s, 0]), 1.0);
            let last = rec.conductivity.get(&[s, model.seconds - 1]);
            assert!((last - (1.0 + model.signature[s][2])).abs() < 1e-12);
        }
    }

    #[test]
    fn enose_baseline_near_one_with_noise() {
        let model = EnoseModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = synth_enose(&model, 0, 3, 0, 0, &mut rng).unwrap();
        for s in 0..model.sensors {
            assert!((rec.conductivity.get(&[s, 0]) - 1.0).abs() < 6.0 * model.noise_std);
        }
        assert!(rec.conductivity.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn enose_ignores_subject() {
        let mut model = EnoseModel::default();
        model.noise_std = 0.0;
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = synth_enose(&model, 1, 0, 0, 0, &mut r1).unwrap();
        let b = synth_enose(&model, 1, 7, 3, 5, &mut r2).unwrap();
        assert_eq!(a.conductivity, b.conductivity);
    }

    #[test]
    fn noiseless_eeg_is_reproducible() {
        let mut cfg = SignalConfig::default();
        cfg.eeg = cfg.eeg.noiseless();
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = synth_eeg(&cfg, 1, 2, 0, &profile(2), &mut r1).unwrap();
        let b = synth_eeg(&cfg, 1, 2, 0, &profile(2), &mut r2).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn subjects_differ_without_noise() {
        let mut cfg = SignalConfig::default();
        cfg.eeg = cfg.eeg.noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = synth_eeg(&cfg, 0, 0, 0, &profile(0), &mut rng).unwrap();
        let b = synth_eeg(&cfg, 0, 1, 0, &profile(1), &mut rng).unwrap();
        assert_ne!(a.samples, b.samples);
    }

    /// Naive DFT power at an integer-bin frequency.
    fn power(x: &[f64], fs: f64, f: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            re += v * (w * t as f64).cos();
            im -= v * (w * t as f64).sin();
        }
        re * re + im * im
    }

    #[test]
    fn spectrum_peaks_at_odor_rhythms() {
        let mut cfg = SignalConfig::default();
        cfg.eeg = cfg.eeg.noiseless();
        cfg.eeg.subject_rhythm_amp = 0.0;
        cfg.eeg.preference_amp = 0.0;
        let odor = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rec = synth_eeg(&cfg, odor, 0, 0, &profile(0), &mut rng).unwrap();
        let ch = rec.samples.index_axis0(5);
        let fs = cfg.eeg_rate as f64;
        // half-Hz periodogram bins are exact DFT bins of a 30 s record
        let spectrum: Vec<(f64, f64)> =
            (1..=120).map(|k| (k as f64 * 0.5, power(ch.data(), fs, k as f64 * 0.5))).collect();
        let mut ranked = spectrum.clone();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let top: Vec<f64> = ranked[..2].iter().map(|p| p.0).collect();
        assert!(top.contains(&31.0) && top.contains(&7.5), "{top:?}");
    }

    #[test]
    fn preference_band_follows_label() {
        let mut cfg = SignalConfig::default();
        cfg.eeg = cfg.eeg.noiseless();
        cfg.eeg.preference_freq_spread = 0.0;
        cfg.eeg.subject_rhythm_amp = 0.0;
        cfg.eeg.odor_amp = 0.0;
        let mut p = profile(0);
        p.preference[0] = HAPPY;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rec = synth_eeg(&cfg, 0, 0, 0, &p, &mut rng).unwrap();
        let ch = rec.samples.index_axis0(0);
        let fs = cfg.eeg_rate as f64;
        let happy = cfg.eeg.preference_freqs[HAPPY];
        let other = cfg.eeg.preference_freqs[1 - HAPPY];
        assert!(power(ch.data(), fs, happy) > 100.0 * power(ch.data(), fs, other));
    }
}
