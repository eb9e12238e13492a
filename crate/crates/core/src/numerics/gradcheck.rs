use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Values below this magnitude are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradProbe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<GradProbe>,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients against central differences at `n_probes`
/// coordinates chosen by picking a parameter uniformly, then an entry of it.
///
/// `loss_fn` must be deterministic and build the whole computation on the tape
/// it is given.
pub fn finite_diff_check<F, R>(
    mut loss_fn: F,
    store: &mut ParamStore<f64>,
    n_probes: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Option<Vec<f64>>> = (0..store.len())
        .map(|i| grads.param(store, ParamId(i)).map(|g| g.data().to_vec()))
        .collect();
    drop(tape);

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut probes = Vec::with_capacity(n_probes);
    let mut max_rel_error = 0.0f64;
    for _ in 0..n_probes {
        if store.is_empty() {
            break;
        }
        let id = ParamId(rng.gen_range(0..store.len()));
        let index = rng.gen_range(0..store.value(id).len());
        let original = store.value(id).data()[index];
        store.value_mut(id).data_mut()[index] = original + h;
        let plus = eval(store)?;
        store.value_mut(id).data_mut()[index] = original - h;
        let minus = eval(store)?;
        store.value_mut(id).data_mut()[index] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = analytic[id.0].as_ref().map_or(0.0, |g| g[index]);
        let rel = rel_error(analytic, numeric);
        max_rel_error = max_rel_error.max(rel);
        probes.push(GradProbe {
            param: store.get(id).name.clone(),
            index,
            analytic,
            numeric,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport { max_rel_error, probes })
}
