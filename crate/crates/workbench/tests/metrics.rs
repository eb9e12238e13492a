use bmfnet::{compute_metrics, Confusion, Metrics};
use proptest::prelude::*;

#[test]
fn perfect_predictions_score_100() {
    let labels = [1, 0, 1, 1, 0];
    let m = compute_metrics(&labels, &labels).unwrap();
    assert_eq!((m.accuracy, m.f1, m.recall, m.precision), (100.0, 100.0, 100.0, 100.0));
    assert!(!m.degenerate);
}

#[test]
fn one_of_each_outcome_is_50() {
    let m = compute_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!(m.confusion, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
    assert_eq!((m.accuracy, m.f1, m.recall, m.precision), (50.0, 50.0, 50.0, 50.0));
}

#[test]
fn all_negative_predictions_are_flagged() {
    let m = compute_metrics(&[0, 0, 0, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
    assert_eq!(m.accuracy, 50.0);
    assert!(m.degenerate);
}

#[test]
fn rejects_bad_input() {
    assert!(compute_metrics(&[1, 0], &[1]).is_err());
    assert!(compute_metrics(&[2], &[1]).is_err());
    assert!(compute_metrics(&[1], &[3]).is_err());
}

#[test]
fn mean_is_unweighted() {
    let a = compute_metrics(&[1, 1], &[1, 1]).unwrap();
    let b = compute_metrics(&[1, 0, 0, 0], &[1, 1, 1, 0]).unwrap();
    let m = Metrics::mean(&[a, b]).unwrap();
    assert_eq!(m.accuracy, (a.accuracy + b.accuracy) / 2.0);
    assert_eq!(m.confusion.total(), 6);
    assert!(Metrics::mean(&[]).is_none());
}

proptest! {
    #[test]
    fn metrics_stay_in_range(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..64)) {
        let (preds, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = compute_metrics(&preds, &labels).unwrap();
        for v in [m.accuracy, m.f1, m.recall, m.precision] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert_eq!(m.confusion.total(), preds.len());
        let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        prop_assert!((m.accuracy - 100.0 * hits as f64 / preds.len() as f64).abs() < 1e-9);
    }
}
