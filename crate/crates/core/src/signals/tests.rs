use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::numerics::Tensor;

fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|t| amp * (2.0 * PI * freq * t as f64 / fs).sin()).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn default_sos() -> Sos {
    butter_bandpass(4, 0.5, 45.0, 256.0).unwrap()
}

/// Amplitude ratio measured on the middle half, away from the edges.
fn gain(freq: f64) -> f64 {
    let x = sine(freq, 256.0, 7680, 1.0);
    let y = default_sos().filtfilt(&x).unwrap();
    let (a, b) = (1920, 5760);
    rms(&y[a..b]) / rms(&x[a..b])
}

#[test]
fn passband_sine_within_3db() {
    let g = gain(10.0);
    assert!(20.0 * g.log10() > -3.0, "gain {g}");
}

#[test]
fn mains_attenuated_20db() {
    let g = gain(60.0);
    assert!(20.0 * g.log10() <= -20.0, "gain {g}");
}

#[test]
fn dc_removed() {
    let offset = 3.0;
    let y = default_sos().filtfilt(&vec![offset; 7680]).unwrap();
    let mid = &y[1920..5760];
    let mean = mid.iter().sum::<f64>() / mid.len() as f64;
    assert!(mean.abs() < 0.05 * offset, "mean {mean}");
}

#[test]
fn single_pass_magnitude_matches_analytic_butterworth() {
    let sos = default_sos();
    let fs = 256.0;
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (wl, wh) = (warp(0.5), warp(45.0));
    let (w0sq, bw) = (wl * wh, wh - wl);
    for f in [0.2, 0.5, 1.0, 5.0, 10.0, 30.0, 45.0, 60.0, 100.0] {
        let w = warp(f);
        let x = (w * w - w0sq) / (w * bw);
        let expected = 1.0 / (1.0 + x.powi(8)).sqrt();
        let got = sos.response(f, fs).norm();
        assert!((got - expected).abs() < 1e-9, "f={f}: {got} vs {expected}");
    }
}

#[test]
fn filtfilt_matches_reference_implementation() {
    // Reference values from an independent SOS forward-backward implementation
    // with odd extension of length 27 and steady-state initial conditions.
    let x: Vec<f64> = (0..64)
        .map(|t| {
            let t = t as f64;
            (2.0 * PI * 3.0 * t / 256.0).sin() + 0.5 * (2.0 * PI * 30.0 * t / 256.0).cos() + 0.25
        })
        .collect();
    let y = default_sos().filtfilt(&x).unwrap();
    let expected =
        [(0, 0.27530414), (1, 0.14188399), (10, 0.80619171), (31, 0.71959099), (50, 0.62558475), (63, -0.0531509)];
    for (i, v) in expected {
        assert!((y[i] - v).abs() < 1e-6, "y[{i}] = {} vs {v}", y[i]);
    }
}

#[test]
fn short_input_rejected() {
    let sos = default_sos();
    assert_eq!(sos.padlen(), 27);
    assert!(sos.filtfilt(&[0.0; 27]).is_err());
    assert!(sos.filtfilt(&[0.0; 28]).is_ok());
    let cfg = SignalConfig::default();
    let short = Tensor::<f64>::zeros(vec![2, 10]);
    assert!(bandpass(&short, &cfg).is_err());
}

#[test]
fn downsample_halves_length() {
    let t = Tensor::<f64>::from_fn(vec![21, 7680], |i| i as f64);
    let d = downsample(&t).unwrap();
    assert_eq!(d.shape(), &[21, 3840]);
    assert_eq!(d.data()[1], 2.0);
    assert_eq!(d.data()[3840], 7680.0);
    let c = downsample(&Tensor::full(vec![3, 100], 4.5)).unwrap();
    assert!(c.data().iter().all(|&v| v == 4.5));
    assert!(downsample(&Tensor::<f64>::zeros(vec![1, 7])).is_err());
}

#[test]
fn downsampled_sine_keeps_frequency_and_amplitude() {
    let x = Tensor::new(vec![1, 7680], sine(10.0, 256.0, 7680, 1.0)).unwrap();
    let d = downsample(&x).unwrap();
    // least-squares fit of a·sin + b·cos at 10 Hz on the 128 Hz grid
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, &y) in d.data().iter().enumerate() {
        let ph = 2.0 * PI * 10.0 * t as f64 / 128.0;
        let (s, c) = ph.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += y * s;
        yc += y * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    let amp = (a * a + b * b).sqrt();
    assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
    let resid: f64 = d
        .data()
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let ph = 2.0 * PI * 10.0 * t as f64 / 128.0;
            (y - a * ph.sin() - b * ph.cos()).powi(2)
        })
        .sum();
    assert!(resid < 1e-12);
}

#[test]
fn windows_tile_seconds_one_to_twenty_one() {
    let cfg = SignalConfig::default();
    let stream = Tensor::<f64>::from_fn(vec![21, 3840], |i| i as f64);
    let w = window_samples(&stream, &cfg).unwrap();
    assert_eq!(w.len(), 10);
    for (k, win) in w.iter().enumerate() {
        assert_eq!(win.shape(), &[21, 256]);
        assert_eq!(win.data()[0], (128 * (1 + 2 * k)) as f64);
    }
    for ch in [0, 7, 20] {
        let joined: Vec<f64> = w.iter().flat_map(|win| win.data()[ch * 256..(ch + 1) * 256].to_vec()).collect();
        assert_eq!(joined, stream.data()[ch * 3840 + 128..ch * 3840 + 2688].to_vec());
    }
    assert!(window_samples(&Tensor::zeros(vec![21, 3839]), &cfg).is_err());
    assert!(window_samples(&Tensor::zeros(vec![21, 7680]), &cfg).is_err());
}

#[test]
fn profiles() {
    let m = PreferenceProfile::majority(3);
    let n = PreferenceProfile::minority(4);
    assert!(!m.is_minority());
    assert!(n.is_minority());
    assert_eq!(m.preference.iter().zip(&n.preference).filter(|(a, b)| a != b).count(), 2);
    let p = default_profiles(8, 2);
    assert_eq!(p.iter().filter(|p| p.is_minority()).count(), 2);
    assert!(p.iter().enumerate().all(|(i, p)| p.subject_id == i));
}

#[test]
fn fold_plan_covers_subjects_once() {
    let plan = FoldPlan::leave_one_subject_out(&[0, 1, 2, 2, 3]);
    assert!(!plan.degenerate);
    assert_eq!(plan.folds.len(), 4);
    for f in &plan.folds {
        assert!(!f.train_subjects.contains(&f.test_subject));
        assert_eq!(f.train_subjects.len(), 3);
    }
    assert!(FoldPlan::leave_one_subject_out(&[5]).degenerate);
}

fn quiet_cfg() -> SignalConfig {
    SignalConfig::default()
}

#[test]
fn single_subject_dataset() {
    let cfg = quiet_cfg();
    let profiles = default_profiles(1, 0);
    let ds = build_dataset(1, &profiles, &cfg, 11).unwrap();
    assert_eq!(ds.samples.len(), 240);
    assert!(ds.folds.degenerate);
    let s = &ds.samples[0];
    assert_eq!(s.eeg.shape(), &[21, 256]);
    assert_eq!(s.enose.shape(), &[10, 90]);
    assert!(ds.samples.iter().all(|s| s.label == profiles[0].preference[s.odor_id]));
}

#[test]
fn streaming_matches_two_pass() {
    let cfg = quiet_cfg();
    let profiles = default_profiles(2, 1);
    let streamed = build_dataset(2, &profiles, &cfg, 5).unwrap();
    let raw = synth_raw(2, &profiles, &cfg, 5).unwrap();
    assert_eq!(raw.eeg.len(), 48);
    assert_eq!(raw.enose.len(), 480);
    assert!(raw.enose.iter().all(|r| r.conductivity.data().iter().all(|&v| v > 0.0)));
    let two_pass = preprocess_raw(&raw, &cfg).unwrap();
    assert_eq!(streamed, two_pass);
}

#[test]
fn missing_profile_is_an_error() {
    let cfg = quiet_cfg();
    let profiles = default_profiles(1, 0);
    assert!(build_dataset(2, &profiles, &cfg, 1).is_err());
}

#[test]
fn eight_subjects_folds_disjoint() {
    let cfg = quiet_cfg();
    let profiles = default_profiles(8, 2);
    let ds = build_dataset(8, &profiles, &cfg, 3).unwrap();
    assert_eq!(ds.samples.len(), 1920);
    assert_eq!(ds.folds.folds.len(), 8);
    for fold in &ds.folds.folds {
        let (train, test) = ds.split(fold);
        assert_eq!(test.len(), 240);
        assert_eq!(train.len(), 1680);
        assert!(test.iter().all(|&i| ds.samples[i].subject_id == fold.test_subject));
        assert!(train.iter().all(|&i| ds.samples[i].subject_id != fold.test_subject));
    }
    for s in &ds.samples {
        assert_eq!(s.label, ds.profile(s.subject_id).unwrap().preference[s.odor_id]);
    }
}

#[test]
#[ignore = "paper-scale cohort, run with --ignored"]
fn paper_cohort_cardinality() {
    let cfg = quiet_cfg();
    let ds = build_dataset(24, &default_profiles(24, 4), &cfg, 0).unwrap();
    assert_eq!(ds.samples.len(), 5760);
}

#[test]
fn standardizer_centers_training_split() {
    let cfg = quiet_cfg();
    let ds = build_dataset(1, &default_profiles(1, 0), &cfg, 2).unwrap();
    let idx: Vec<usize> = (0..ds.samples.len()).collect();
    let st = Standardizer::fit(&ds.samples, &idx).unwrap();
    let normed: Vec<MultimodalSample> = ds.samples.iter().map(|s| st.apply(s)).collect();
    for ch in [0, 20] {
        let vals: Vec<f64> =
            normed.iter().flat_map(|s| s.eeg.data()[ch * 256..(ch + 1) * 256].iter().map(|&v| v as f64)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-3 && (var - 1.0).abs() < 1e-3, "{mean} {var}");
    }
    assert!(Standardizer::fit(&ds.samples, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_passes_sines_without_aliasing(freq in 1.0f64..40.0, phase in 0.0f64..6.0) {
        let x: Vec<f64> = (0..7680).map(|t| (2.0 * PI * freq * t as f64 / 256.0 + phase).sin()).collect();
        let rec = Tensor::new(vec![1, 7680], x).unwrap();
        let cfg = quiet_cfg();
        let d = downsample(&bandpass(&rec, &cfg).unwrap()).unwrap();
        let seg = &d.data()[960..2880];
        let ratio = seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64 / 0.5;
        // forward-backward filtering applies |H|² to the amplitude
        let h = default_sos().response(freq, 256.0).norm();
        prop_assert!((ratio - h.powi(4)).abs() < 0.01, "freq {} ratio {} vs {}", freq, ratio, h.powi(4));
        if freq <= 30.0 {
            prop_assert!((ratio - 1.0).abs() < 0.1, "freq {} ratio {}", freq, ratio);
        }
    }
}
