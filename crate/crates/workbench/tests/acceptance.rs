use std::f64::consts::PI;
use std::time::{Duration, Instant};

use bmfnet::core::bmfnet::{count_flops, count_params, BmfNet, ForwardTrace, ModelConfig, Variant};
use bmfnet::core::distill::{hard_loss, import_trace, soft_logit_loss, soft_loss, student_loss, DistillConfig, DistillMap};
use bmfnet::core::numerics::{finite_diff_check, ParamStore, Scalar, Tape, Tensor};
use bmfnet::core::signals::{
    bandpass, build_dataset, default_profiles, downsample, preprocess_eeg, window_samples, SignalConfig,
};
use bmfnet::core::Var;
use bmfnet::{run_loso, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random<T: Scalar>(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(r.gen_range(-1.0..1.0)))
}

fn inputs<T: Scalar>(r: &mut ChaCha8Rng, batch: usize) -> (Tensor<T>, Tensor<T>) {
    (random(r, &[batch, 1, 21, 256]), random(r, &[batch, 1, 10, 90]))
}

fn forward<T: Scalar>(tape: &mut Tape<T>, model: &BmfNet, store: &ParamStore<T>, e: Tensor<T>, n: Tensor<T>) -> ForwardTrace {
    let (ev, nv) = (tape.constant(e), tape.constant(n));
    model.forward(tape, store, ev, nv).unwrap()
}

fn scalar(tape: &Tape<f64>, v: Var) -> f64 {
    tape.value(v).item()
}

fn shapes() -> Outcome {
    let (model, store) = BmfNet::init::<f32, _>(ModelConfig::paper(Variant::Teacher), &mut rng(1)).unwrap();
    let (e, n) = inputs::<f32>(&mut rng(2), 1);
    let start = Instant::now();
    let mut tape = Tape::no_grad();
    let trace = forward(&mut tape, &model, &store, e, n);
    let took = start.elapsed();
    let mfi = trace.mfi.iter().chain(&trace.aefm).all(|t| tape.shape(t.hidden) == [1, 161, 320]);
    let ff = trace.ff.iter().all(|t| tape.shape(t.hidden) == [1, 81, 320]);
    let probs = tape.shape(trace.probs) == [1, 2];
    check(
        mfi && ff && probs && !trace.mfi.is_empty() && !trace.ff.is_empty() && took < Duration::from_secs(5),
        format!("MFI/AEFM 161x320 {mfi}, FF 81x320 {ff}, probs 2 {probs}, forward {took:.2?}"),
    )
}

fn gradients() -> Outcome {
    let cfg = ModelConfig::tiny(Variant::Teacher, 8);
    let (heads, stages) = (cfg.heads, cfg.eeg_encoder.stages.len());
    let mut r = rng(10);
    let (model, mut store) = BmfNet::init::<f64, _>(cfg, &mut r).unwrap();
    let (e, n) = inputs::<f64>(&mut r, 2);
    let labels = [0usize, 1];
    let start = Instant::now();
    let report = finite_diff_check(
        |tape, store| {
            let t = forward(tape, &model, store, e.clone(), n.clone());
            hard_loss(tape, &t, &labels, true)
        },
        &mut store,
        128,
        1e-6,
        &mut r,
    )
    .unwrap();
    let took = start.elapsed();
    check(
        report.probes.len() >= 100 && report.max_rel_error <= 1e-3 && took < Duration::from_secs(120),
        format!(
            "e=8 h={heads} stages={stages}, {} probes, max rel error {:.2e}, {took:.1?}",
            report.probes.len(),
            report.max_rel_error
        ),
    )
}

fn attention_rows() -> Outcome {
    let mut r = rng(20);
    let mut worst = 0.0f64;
    let mut rows = 0usize;
    for k in 0..100 {
        let variant = if k % 2 == 0 { Variant::Teacher } else { Variant::Student };
        let (model, store) = BmfNet::init::<f32, _>(ModelConfig::tiny(variant, 16), &mut r).unwrap();
        let (e, n) = inputs::<f32>(&mut r, 2);
        let mut tape = Tape::no_grad();
        let trace = forward(&mut tape, &model, &store, e, n);
        for t in trace.mfi.iter().chain(&trace.aefm).chain(&trace.ff) {
            let a = tape.value(t.attn);
            let len = *a.shape().last().unwrap();
            for row in a.data().chunks(len) {
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                worst = worst.max((s - 1.0).abs());
                rows += 1;
            }
        }
    }
    check(worst <= 1e-5, format!("{rows} rows over 100 forwards, max |sum - 1| = {worst:.2e}"))
}

fn fixed_point() -> Outcome {
    let (model, store) = BmfNet::init::<f64, _>(ModelConfig::tiny(Variant::Teacher, 16), &mut rng(6)).unwrap();
    let (e, n) = inputs::<f64>(&mut rng(7), 3);
    let mut tape = Tape::new();
    let a = forward(&mut tape, &model, &store, e.clone(), n.clone());
    let b = forward(&mut tape, &model, &store, e, n);
    let map = DistillMap::identity(&model.config);
    let (parts, soft) = soft_loss(&mut tape, &b, &a, &map, 3.0).unwrap();
    let worst = parts.iter().map(|&p| scalar(&tape, p).abs()).fold(0.0, f64::max);
    let soft = scalar(&tape, soft).abs();
    check(worst <= 1e-10 && soft <= 1e-9, format!("max Loss_i {worst:.2e}, L_soft {soft:.2e}"))
}

fn loss_algebra() -> Outcome {
    let mut r = rng(9);
    let (t, ts) = BmfNet::init::<f64, _>(ModelConfig::tiny(Variant::Teacher, 16), &mut r).unwrap();
    let (s, ss) = BmfNet::init::<f64, _>(ModelConfig::tiny(Variant::Student, 16), &mut r).unwrap();
    let (e, n) = inputs::<f64>(&mut r, 2);
    let mut frozen = Tape::no_grad();
    let tt = forward(&mut frozen, &t, &ts, e.clone(), n.clone());
    let mut tape = Tape::new();
    let tt = import_trace(&frozen, &tt, &mut tape);
    let st = forward(&mut tape, &s, &ss, e, n);
    let map = DistillMap::between(&t.config, &s.config).unwrap();
    let labels = [0usize, 1];
    let mut at = |alpha: f64| {
        let l = student_loss(&mut tape, &st, &tt, &labels, true, &map, &DistillConfig { alpha, temperature: 3.0 }).unwrap();
        (scalar(&tape, l.total), scalar(&tape, l.hard), scalar(&tape, l.soft))
    };
    let (one, hard, _) = at(1.0);
    let (zero, _, soft) = at(0.0);
    let (d_hard, d_soft) = ((one - hard).abs(), (zero - soft).abs());

    let (zt, zs) = (random::<f64>(&mut r, &[4, 2]), random::<f64>(&mut r, &[4, 2]));
    let mut tape = Tape::new();
    let (tv, sv) = (tape.constant(zt.clone()), tape.constant(zs.clone()));
    let l = soft_logit_loss(&mut tape, tv, sv, 1.0).unwrap();
    let softmax = |z: &[f64]| {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = ex.iter().sum();
        ex.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let kl: f64 = zt
        .data()
        .chunks(2)
        .zip(zs.data().chunks(2))
        .map(|(a, b)| {
            let (p, q) = (softmax(a), softmax(b));
            p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>()
        })
        .sum::<f64>()
        / 4.0;
    let d_kl = (scalar(&tape, l) - kl).abs();
    check(
        d_hard <= 1e-12 && d_soft <= 1e-12 && d_kl <= 1e-12,
        format!("|Loss_S(1) - L_hard| {d_hard:.1e}, |Loss_S(0) - L_soft| {d_soft:.1e}, |KL_T=1 - KL| {d_kl:.1e}"),
    )
}

fn complexity() -> Outcome {
    let (t, s) = (ModelConfig::paper(Variant::Teacher), ModelConfig::paper(Variant::Student));
    let (pt, ps) = (count_params(&t).unwrap(), count_params(&s).unwrap());
    let (ft, fs) = (count_flops(&t).unwrap(), count_flops(&s).unwrap());
    let ratio = ft as f64 / fs as f64;
    check(
        pt > ps && (1.4..=2.2).contains(&ratio),
        format!("params {:.2}M > {:.2}M, FLOPs ratio {ratio:.3}", pt as f64 / 1e6, ps as f64 / 1e6),
    )
}

fn preprocessing() -> Outcome {
    let cfg = SignalConfig::default();
    let (fs, n) = (cfg.eeg_rate as f64, cfg.eeg_len());
    let gain_db = |freq: f64| {
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * freq * t as f64 / fs).sin()).collect();
        let y = bandpass(&Tensor::new(vec![1, n], x.clone()).unwrap(), &cfg).unwrap();
        let (a, b) = (n / 4, 3 * n / 4);
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        20.0 * (rms(&y.data()[a..b]) / rms(&x[a..b])).log10()
    };
    let (mains, alpha) = (gain_db(60.0), gain_db(10.0));
    let raw: Tensor<f64> = random(&mut rng(3), &[cfg.eeg_channels, n]);
    let half = downsample(&raw).unwrap().shape()[1];
    let windows = preprocess_eeg(&raw, &cfg).unwrap();
    let direct = window_samples(&downsample(&bandpass(&raw, &cfg).unwrap()).unwrap(), &cfg).unwrap();
    check(
        mains <= -20.0 && alpha.abs() <= 3.0 && half * 2 == n && windows.len() == 10 && direct.len() == 10,
        format!("60 Hz {mains:.1} dB, 10 Hz {alpha:.2} dB, {n} -> {half} samples, {} windows", windows.len()),
    )
}

fn dataset() -> Outcome {
    let cfg = SignalConfig::default();
    let ds = build_dataset(24, &default_profiles(24, 3), &cfg, 1).unwrap();
    let mut seen = vec![0usize; ds.samples.len()];
    let mut disjoint = true;
    for fold in &ds.folds.folds {
        let (train, test) = ds.split(fold);
        disjoint &= test.iter().all(|i| !train.contains(i));
        for i in test {
            seen[i] += 1;
        }
    }
    let exhaustive = seen.iter().all(|&c| c == 1);
    check(
        ds.samples.len() == 5760 && ds.folds.folds.len() == 24 && disjoint && exhaustive,
        format!("{} samples, {} folds, disjoint {disjoint}, exhaustive {exhaustive}", ds.samples.len(), ds.folds.folds.len()),
    )
}

fn end_to_end() -> Outcome {
    let cfg = RunConfig { seed: 0, ..RunConfig::default() };
    let start = Instant::now();
    let d = &cfg.dataset;
    let ds = build_dataset(d.n_subjects, &d.profiles(), &d.signal, cfg.seed).unwrap();
    let run = run_loso(&cfg, &ds).unwrap();
    let took = start.elapsed();
    let r = &run.report;
    let mean = r.summary_of(Variant::Student).and_then(|s| s.mean).map_or(0.0, |m| m.accuracy);
    let mut detail = format!("student mean {mean:.2}%");
    let mut minority_ok = true;
    for row in r.folds.iter().filter(|row| row.minority && row.variant == Variant::Student) {
        let acc = |v| r.row(v, row.test_subject).and_then(|x| x.metrics).map(|m| m.accuracy);
        let (s, m) = (acc(Variant::Student), acc(Variant::MnetS));
        minority_ok &= matches!((s, m), (Some(s), Some(m)) if s > m);
        detail += &format!(", subject {} student {:.2}% vs MNet-S {:.2}%", row.test_subject, s.unwrap_or(f64::NAN), m.unwrap_or(f64::NAN));
    }
    detail += &format!(", failures {}, {:.1} min", r.failures(), took.as_secs_f64() / 60.0);
    check(
        r.failures() == 0 && mean >= 90.0 && minority_ok && took <= Duration::from_secs(30 * 60),
        detail,
    )
}

fn determinism() -> Outcome {
    let mut cfg = RunConfig { seed: 21, variants: vec![Variant::Student, Variant::MnetS], ..RunConfig::default() };
    cfg.dataset.n_subjects = 3;
    cfg.dataset.minority = 1;
    cfg.train.teacher_epochs = 1;
    cfg.train.student_epochs = 1;
    cfg.train.joint_epochs = 1;
    let d = &cfg.dataset;
    let once = || {
        let ds = build_dataset(d.n_subjects, &d.profiles(), &d.signal, cfg.seed).unwrap();
        let r = run_loso(&cfg, &ds).unwrap().report;
        (r.summary_json().unwrap(), r)
    };
    let (a, ra) = once();
    let (b, rb) = once();
    check(a == b && ra == rb, format!("{} fold rows, summaries identical {}", ra.folds.len(), a == b))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("shape conformance", shapes),
        ("gradient correctness", gradients),
        ("attention normalization", attention_rows),
        ("distillation fixed point", fixed_point),
        ("loss algebra", loss_algebra),
        ("complexity ordering", complexity),
        ("preprocessing", preprocessing),
        ("dataset arithmetic", dataset),
        ("desk-scale end-to-end", end_to_end),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
