use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::finite_diff_check;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random<T: Scalar>(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(r.gen_range(-1.0..1.0)))
}

fn inputs<T: Scalar>(r: &mut ChaCha8Rng, batch: usize) -> (Tensor<T>, Tensor<T>) {
    (random(r, &[batch, 1, 21, 256]), random(r, &[batch, 1, 10, 90]))
}

#[test]
fn paper_encoder_shapes() {
    assert_eq!(EnoseEncoderSpec::paper().out_shape((1, 10, 90)).unwrap(), (64, 1, 5));
    assert_eq!(EegEncoderSpec::paper().out_shape((1, 21, 256)).unwrap(), (160, 1, 2));
    assert_eq!(EnoseEncoderSpec::paper().layers.len(), 5);
    assert_eq!(EegEncoderSpec::paper().stages.len(), 4);
    assert_eq!(EnoseEncoderSpec::tiny().out_shape((1, 10, 90)).unwrap(), (16, 1, 2));
    assert_eq!(EegEncoderSpec::tiny().out_shape((1, 21, 256)).unwrap(), (16, 1, 2));
}

#[test]
fn encoders_run_and_reshape_to_feature_maps() {
    let cfg = ModelConfig::paper(Variant::Student);
    let mut r = rng(0);
    let mut store = ParamStore::<f32>::new();
    let mut pb = ParamBuilder::new(&mut store, &mut r);
    let enose = EnoseEncoder::new(&mut pb, "enose", &cfg.enose_encoder, 1).unwrap();
    let eeg = EegEncoder::new(&mut pb, "eeg", &cfg.eeg_encoder, 1).unwrap();
    let mut tape = Tape::no_grad();
    let (e, n) = inputs::<f32>(&mut r, 3);
    let (ev, nv) = (tape.constant(e), tape.constant(n));
    let m = enose.forward(&mut tape, &store, nv).unwrap();
    let b = eeg.forward(&mut tape, &store, ev).unwrap();
    assert_eq!(tape.shape(m), &[3, 64, 1, 5]);
    assert_eq!(tape.shape(b), &[3, 160, 1, 2]);
    assert_eq!(tape.value(m).len(), 3 * 320);
}

#[test]
fn enose_encoder_maps_zero_to_zero() {
    let mut r = rng(1);
    let mut store = ParamStore::<f32>::new();
    let enc = EnoseEncoder::new(&mut ParamBuilder::new(&mut store, &mut r), "enose", &EnoseEncoderSpec::paper(), 1)
        .unwrap();
    let mut tape = Tape::no_grad();
    let x = tape.constant(Tensor::zeros(vec![2, 1, 10, 90]));
    let y = enc.forward(&mut tape, &store, x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn enose_encoder_preserves_batch_order() {
    let mut r = rng(2);
    let mut store = ParamStore::<f32>::new();
    let enc = EnoseEncoder::new(&mut ParamBuilder::new(&mut store, &mut r), "enose", &EnoseEncoderSpec::paper(), 1)
        .unwrap();
    let x: Tensor<f32> = random(&mut r, &[240, 1, 10, 90]);
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let y = enc.forward(&mut tape, &store, xv).unwrap();
    let all = tape.value(y).clone();
    assert_eq!(all.shape(), &[240, 64, 1, 5]);
    for i in [0, 117, 239] {
        let single = tape.constant(Tensor::stack(&[&x.index_axis0(i)]).unwrap());
        let yi = enc.forward(&mut tape, &store, single).unwrap();
        assert_eq!(tape.value(yi).data(), all.index_axis0(i).data());
    }
}

#[test]
fn zeroed_residual_stage_is_its_shortcut() {
    let spec = EegEncoderSpec::tiny();
    let mut r = rng(3);
    let mut store = ParamStore::<f64>::new();
    let enc = EegEncoder::new(&mut ParamBuilder::new(&mut store, &mut r), "eeg", &spec, 1).unwrap();
    for name in ["eeg.stage1.conv1.weight", "eeg.stage1.conv2.weight"] {
        let id = store.id(name).unwrap();
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x: Tensor<f64> = random(&mut r, &[2, 1, 21, 256]);
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let out = enc.forward(&mut tape, &store, xv).unwrap();
    // recompute: stem → stage 0 → relu → shortcut for stage 1
    let one_stage = EegEncoderSpec { stages: vec![spec.stages[0]], ..spec.clone() };
    let mut sub = ParamStore::<f64>::new();
    let enc0 = EegEncoder::new(&mut ParamBuilder::new(&mut sub, &mut rng(99)), "eeg", &one_stage, 1).unwrap();
    for name in sub.names() {
        let v = store.by_name(&name).unwrap().value.clone();
        let id = sub.id(&name).unwrap();
        *sub.value_mut(id) = v;
    }
    let xv = tape.constant(x);
    let h = enc0.forward(&mut tape, &sub, xv).unwrap();
    let h = tape.relu(h).unwrap();
    let w = tape.param(&store, store.id("eeg.stage1.shortcut.weight").unwrap());
    let b = tape.param(&store, store.id("eeg.stage1.shortcut.bias").unwrap());
    let expect = tape.conv2d(h, w, Some(b), spec.stages[1].1, (0, 0)).unwrap();
    assert_eq!(tape.value(out), tape.value(expect));
}

#[test]
fn teacher_paper_shapes() {
    let cfg = ModelConfig::paper(Variant::Teacher);
    let mut r = rng(4);
    let (model, store) = BmfNet::init::<f32, _>(cfg, &mut r).unwrap();
    let (e, n) = inputs::<f32>(&mut r, 1);
    let mut tape = Tape::no_grad();
    let (ev, nv) = (tape.constant(e), tape.constant(n));
    let trace = model.forward(&mut tape, &store, ev, nv).unwrap();
    assert_eq!(trace.mfi.len(), 4);
    assert_eq!(trace.aefm.len(), 4);
    assert_eq!(trace.ff.len(), 4);
    for t in trace.mfi.iter().chain(&trace.aefm) {
        assert_eq!(tape.shape(t.hidden), &[1, 161, 320]);
        assert_eq!(tape.shape(t.attn), &[1, 8, 161, 161]);
    }
    for t in &trace.ff {
        assert_eq!(tape.shape(t.hidden), &[1, 81, 320]);
    }
    assert_eq!(tape.shape(trace.m.unwrap()), &[1, 1, 16, 20]);
    assert_eq!(tape.shape(trace.b.unwrap()), &[1, 1, 16, 20]);
    assert_eq!(tape.shape(trace.feature), &[1, 320]);
    let p = tape.value(trace.probs);
    assert_eq!(p.shape(), &[1, 2]);
    assert!((p.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

#[test]
fn tap_counts_per_variant() {
    let expected = [
        (Variant::Teacher, 4, 4, 4),
        (Variant::Student, 2, 2, 2),
        (Variant::BnetS, 0, 2, 2),
        (Variant::MnetS, 0, 2, 2),
        (Variant::NoAefm, 2, 0, 2),
        (Variant::NoAlignment, 2, 2, 2),
    ];
    let mut r = rng(5);
    for (variant, mfi, aefm, ff) in expected {
        let cfg = ModelConfig::tiny(variant, 16);
        let (model, store) = BmfNet::init::<f32, _>(cfg.clone(), &mut r).unwrap();
        let (e, n) = inputs::<f32>(&mut r, 3);
        let mut tape = Tape::no_grad();
        let (ev, nv) = (tape.constant(e), tape.constant(n));
        let trace = model.forward(&mut tape, &store, ev, nv).unwrap();
        assert_eq!((trace.mfi.len(), trace.aefm.len(), trace.ff.len()), (mfi, aefm, ff), "{variant:?}");
        assert_eq!(trace.m.is_some(), cfg.uses_enose());
        assert_eq!(trace.b.is_some(), cfg.uses_eeg());
        assert_eq!(tape.shape(trace.probs), &[3, 2]);
        assert_eq!(count_params(&cfg).unwrap(), store.num_values(), "{variant:?}");
        assert_eq!(cfg.alignment, matches!(variant, Variant::Teacher | Variant::Student | Variant::NoAefm));
    }
}

#[test]
fn mnet_ignores_eeg_and_bnet_ignores_enose() {
    let mut r = rng(6);
    for (variant, vary_eeg) in [(Variant::MnetS, true), (Variant::BnetS, false)] {
        let (model, store) = BmfNet::init::<f64, _>(ModelConfig::tiny(variant, 16), &mut r).unwrap();
        let (e, n) = inputs::<f64>(&mut r, 2);
        let (e2, n2) = inputs::<f64>(&mut r, 2);
        let mut tape = Tape::no_grad();
        let (ev, nv) = (tape.constant(e), tape.constant(n.clone()));
        let a = model.forward(&mut tape, &store, ev, nv).unwrap().probs;
        let (ev, nv) = if vary_eeg { (tape.constant(e2), tape.constant(n)) } else { (ev, tape.constant(n2)) };
        let b = model.forward(&mut tape, &store, ev, nv).unwrap().probs;
        assert_eq!(tape.value(a), tape.value(b), "{variant:?}");
    }
}

#[test]
fn batch_permutation_commutes_with_forward() {
    let mut r = rng(7);
    let (model, store) = BmfNet::init::<f64, _>(ModelConfig::tiny(Variant::Teacher, 16), &mut r).unwrap();
    let (e, n) = inputs::<f64>(&mut r, 4);
    let perm = [2usize, 0, 3, 1];
    let permute = |t: &Tensor<f64>| {
        let rows: Vec<Tensor<f64>> = perm.iter().map(|&i| t.index_axis0(i)).collect();
        Tensor::stack(&rows.iter().collect::<Vec<_>>()).unwrap()
    };
    let mut tape = Tape::no_grad();
    let (ev, nv) = (tape.constant(e.clone()), tape.constant(n.clone()));
    let a = model.forward(&mut tape, &store, ev, nv).unwrap();
    let (pe, pn) = (tape.constant(permute(&e)), tape.constant(permute(&n)));
    let b = model.forward(&mut tape, &store, pe, pn).unwrap();
    for (x, y) in [(a.probs, b.probs), (a.feature, b.feature)] {
        let (x, y) = (tape.value(x).clone(), tape.value(y).clone());
        for (k, &i) in perm.iter().enumerate() {
            for (u, v) in y.index_axis0(k).data().iter().zip(x.index_axis0(i).data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(8);
    let (model, store) = BmfNet::init::<f32, _>(ModelConfig::tiny(Variant::Student, 16), &mut r).unwrap();
    let (e, n) = inputs::<f32>(&mut r, 5);
    let run = || {
        let mut tape = Tape::no_grad();
        let (ev, nv) = (tape.constant(e.clone()), tape.constant(n.clone()));
        let t = model.forward(&mut tape, &store, ev, nv).unwrap();
        tape.value(t.probs).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn wrong_input_shape_names_the_stage() {
    let mut r = rng(9);
    let (model, store) = BmfNet::init::<f32, _>(ModelConfig::tiny(Variant::Student, 16), &mut r).unwrap();
    let mut tape = Tape::no_grad();
    let ev = tape.constant(random(&mut r, &[1, 1, 21, 200]));
    let nv = tape.constant(random(&mut r, &[1, 1, 10, 90]));
    match model.forward(&mut tape, &store, ev, nv) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "eeg_encoder"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn teacher_and_student_share_encoder_layout() {
    for (t, s) in [
        (ModelConfig::paper(Variant::Teacher), ModelConfig::paper(Variant::Student)),
        (ModelConfig::tiny(Variant::Teacher, 16), ModelConfig::tiny(Variant::Student, 16)),
    ] {
        let (_, ts) = BmfNet::init::<f32, _>(t, &mut rng(0)).unwrap();
        let (_, ss) = BmfNet::init::<f32, _>(s, &mut rng(0)).unwrap();
        let enc = |store: &ParamStore<f32>| -> Vec<(String, Vec<usize>)> {
            store
                .iter()
                .filter(|(_, p)| p.name.starts_with("eeg.") || p.name.starts_with("enose."))
                .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec()))
                .collect()
        };
        assert_eq!(enc(&ts), enc(&ss));
        assert!(!enc(&ts).is_empty());
    }
}

#[test]
fn complexity_ordering_at_paper_scale() {
    let t = ModelConfig::paper(Variant::Teacher);
    let s = ModelConfig::paper(Variant::Student);
    let (pt, ps) = (count_params(&t).unwrap(), count_params(&s).unwrap());
    assert!(pt > ps);
    let ratio = count_flops(&t).unwrap() as f64 / count_flops(&s).unwrap() as f64;
    assert!((1.4..=2.2).contains(&ratio), "{ratio}");
    let (_, store) = BmfNet::init::<f32, _>(t, &mut rng(0)).unwrap();
    assert_eq!(store.num_values(), pt);
    let fc: usize = ["fc.weight", "fc.bias"].iter().map(|n| store.by_name(n).unwrap().value.len()).sum();
    assert_eq!(fc, 642);
}

#[test]
fn flops_of_an_encoder_layer_by_hand() {
    let spec = EnoseEncoderSpec { layers: vec![ConvLayer { conv: ConvSpec::new(4, (3, 5), (2, 5), (1, 0)), pool: None }] };
    // output 4×5×18, each output reads 1·3·5 inputs
    assert_eq!(spec.flops((1, 10, 90)).unwrap(), 2 * 4 * 5 * 18 * 15);
    assert_eq!(spec.param_count((1, 10, 90)), 4 * 15 + 4);
}

#[test]
fn invalid_configs_rejected() {
    let mut c = ModelConfig::tiny(Variant::Student, 16);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::tiny(Variant::Student, 16);
    c.ff_map = (4, 4);
    assert!(c.validate().is_err());
    let mut c = ModelConfig::tiny(Variant::Student, 16);
    c.feature_map = (4, 4);
    assert!(c.validate().is_err());
    assert!(Variant::parse("nope").is_err());
    assert_eq!(Variant::parse("mnet_s").unwrap(), Variant::MnetS);
}

#[test]
fn full_model_gradient_check() {
    let cfg = ModelConfig::tiny(Variant::Teacher, 8);
    assert_eq!(cfg.eeg_encoder.stages.len(), 2);
    let mut r = rng(10);
    let (model, store) = BmfNet::init::<f64, _>(cfg, &mut r).unwrap();
    let mut store = store;
    for id in store.iter().map(|(id, _)| id).collect::<Vec<_>>() {
        let noise: Tensor<f64> = random(&mut r, store.value(id).shape());
        store.value_mut(id).add_assign(&noise.map(|v| 0.4 * v));
    }
    let (e, n) = inputs::<f64>(&mut r, 2);
    let labels = [0usize, 1];
    let report = finite_diff_check(
        |tape, store| {
            let (ev, nv) = (tape.constant(e.clone()), tape.constant(n.clone()));
            let t = model.forward(tape, store, ev, nv)?;
            let ce = tape.cross_entropy(t.logits, &labels)?;
            let align = tape.mse_loss(t.m.unwrap(), t.b.unwrap())?;
            tape.add(ce, align)
        },
        &mut store,
        100,
        1e-6,
        &mut r,
    )
    .unwrap();
    let worst = report.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
    assert!(report.max_rel_error <= 1e-3, "{worst:?}");
}

#[test]
fn batching_samples() {
    use crate::signals::{build_dataset, default_profiles, SignalConfig};
    let ds = build_dataset(1, &default_profiles(1, 0), &SignalConfig::default(), 0).unwrap();
    let (e, n, l) = batch_inputs::<f32>(&ds.samples, &[3, 7]).unwrap();
    assert_eq!(e.shape(), &[2, 1, 21, 256]);
    assert_eq!(n.shape(), &[2, 1, 10, 90]);
    assert_eq!(l, vec![ds.samples[3].label, ds.samples[7].label]);
    assert_eq!(&e.data()[21 * 256..], ds.samples[7].eeg.data());
    assert!(batch_inputs::<f32>(&ds.samples, &[]).is_err());
}
