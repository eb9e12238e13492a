use bmfnet::core::bmfnet::Variant;
use bmfnet::core::signals::{build_dataset, Dataset};
use bmfnet::harness::{run_loso_with, FoldJob, FoldRun};
use bmfnet::{Error, RunConfig};

fn cohort(n: usize, minority: usize) -> (RunConfig, Dataset) {
    let mut cfg = RunConfig { seed: 5, ..RunConfig::default() };
    cfg.dataset.n_subjects = n;
    cfg.dataset.minority = minority;
    let ds = build_dataset(n, &cfg.dataset.profiles(), &cfg.dataset.signal, cfg.seed).unwrap();
    (cfg, ds)
}

fn oracle(job: &FoldJob<'_>) -> bmfnet::Result<FoldRun> {
    let predictions = job.test.iter().map(|&i| job.samples[i].label).collect();
    Ok(FoldRun { predictions, history: Vec::new(), model: None })
}

#[test]
fn oracle_scores_100_on_every_fold() {
    let (cfg, ds) = cohort(8, 2);
    let run = run_loso_with(&cfg, &ds, oracle).unwrap();
    let r = &run.report;
    assert_eq!(r.folds.len(), 8 * cfg.variants.len());
    for &v in &cfg.variants {
        let rows: Vec<_> = r.folds.iter().filter(|row| row.variant == v).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows.iter().filter(|row| row.minority).count(), 2);
        let mean = r.summary_of(v).unwrap().mean.unwrap();
        assert_eq!((mean.accuracy, mean.f1, mean.recall, mean.precision), (100.0, 100.0, 100.0, 100.0));
    }
    assert_eq!(r.failures(), 0);
}

#[test]
fn test_sets_partition_the_dataset() {
    let (_, ds) = cohort(4, 1);
    let mut seen = vec![0usize; ds.samples.len()];
    for fold in &ds.folds.folds {
        let (train, test) = ds.split(fold);
        assert!(test.iter().all(|i| !train.contains(i)));
        assert_eq!(train.len() + test.len(), ds.samples.len());
        for i in test {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn failed_fold_is_recorded_and_the_rest_run() {
    let (mut cfg, ds) = cohort(3, 1);
    cfg.variants = vec![Variant::Student, Variant::BnetS];
    cfg.workers = 2;
    let run = run_loso_with(&cfg, &ds, |job| {
        if job.test_subject == 1 && job.plan.variant == Variant::BnetS {
            return Err(Error::Config("injected".into()));
        }
        oracle(job)
    })
    .unwrap();
    let r = &run.report;
    assert_eq!(r.failures(), 1);
    let bad = r.row(Variant::BnetS, 1).unwrap();
    assert!(bad.metrics.is_none() && bad.error.as_deref().unwrap().contains("injected"));
    let s = r.summary_of(Variant::BnetS).unwrap();
    assert_eq!((s.folds_ok, s.folds_failed), (2, 1));
    assert_eq!(r.summary_of(Variant::Student).unwrap().folds_ok, 3);

    let mut csv = Vec::new();
    r.write_folds_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.lines().any(|l| l.contains("failed") && l.contains("injected")));
}

#[test]
fn report_is_independent_of_worker_count() {
    let (mut cfg, ds) = cohort(3, 1);
    cfg.variants = vec![Variant::MnetS];
    cfg.train.student_epochs = 1;
    cfg.train.joint_epochs = 0;
    let one = bmfnet::run_loso(&cfg, &ds).unwrap().report;
    cfg.workers = 3;
    let three = bmfnet::run_loso(&cfg, &ds).unwrap().report;
    assert_eq!(one, three);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig { seed: 11, variants: Variant::ALL.to_vec(), ..RunConfig::default() };
    let text = cfg.to_toml().unwrap();
    let back: RunConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    let bad = RunConfig { variants: vec![], ..RunConfig::default() };
    assert!(bad.validate().is_err());
}
