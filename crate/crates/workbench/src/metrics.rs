use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts with class 1 ("happy") as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(self, o: Confusion) -> Confusion {
        Confusion { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

/// Percentages in [0, 100].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub confusion: Confusion,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn compute_metrics(preds: &[usize], labels: &[usize]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::Mismatch(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::Mismatch(format!("non-binary prediction/label pair ({p}, {l})"))),
        }
    }
    Ok(Metrics::from_confusion(c))
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let mut degenerate = false;
        let accuracy = ratio(c.tp + c.tn, c.total(), &mut degenerate);
        let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
        let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
        let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, &mut degenerate);
        Metrics { accuracy, f1, recall, precision, confusion: c, degenerate }
    }

    /// Unweighted mean of each percentage; confusion counts are summed.
    pub fn mean(all: &[Metrics]) -> Option<Metrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            accuracy: avg(|m| m.accuracy),
            f1: avg(|m| m.f1),
            recall: avg(|m| m.recall),
            precision: avg(|m| m.precision),
            confusion: all.iter().fold(Confusion::default(), |a, m| a.add(m.confusion)),
            degenerate: all.iter().any(|m| m.degenerate),
        })
    }
}
