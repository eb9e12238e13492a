use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bmfnet_core::bmfnet::{count_flops, count_params, Variant};
use bmfnet_core::distill::{train_with, EpochRecord, TrainedModel};
use bmfnet_core::signals::{derive_seed, Dataset, Fold, MultimodalSample, Standardizer};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, VariantPlan};
use crate::error::{Error, IoContext, Result};
use crate::export::save_history;
use crate::metrics::{compute_metrics, Metrics};
use crate::store::save_model;

/// One (fold, variant) unit of work.
pub struct FoldJob<'a> {
    pub fold: usize,
    pub test_subject: usize,
    pub plan: &'a VariantPlan,
    /// Standardized with statistics of the training split.
    pub samples: &'a [MultimodalSample],
    pub standardizer: &'a Standardizer,
    pub train: &'a [usize],
    pub test: &'a [usize],
    pub seed: u64,
    pub eval_batch: usize,
}

pub struct FoldRun {
    pub predictions: Vec<usize>,
    pub history: Vec<EpochRecord>,
    pub model: Option<TrainedModel>,
}

/// Trains the job's variant and predicts the held-out subject.
pub fn train_fold(job: &FoldJob<'_>) -> Result<FoldRun> {
    let mut train = job.plan.train.clone();
    train.seed = job.seed;
    let out = train_with(job.samples, job.train, job.plan.teacher.as_ref(), &job.plan.model, &train, &mut |_| {})?;
    let predictions = out.student.predict(job.samples, job.test, job.eval_batch)?;
    Ok(FoldRun { predictions, history: out.history, model: Some(out.student) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub test_subject: usize,
    pub minority: bool,
    pub variant: Variant,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub folds_ok: usize,
    pub folds_failed: usize,
    /// Unweighted mean over successful folds.
    pub mean: Option<Metrics>,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub folds: Vec<FoldRow>,
    pub summary: Vec<VariantSummary>,
}

impl MetricsReport {
    pub fn failures(&self) -> usize {
        self.folds.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn summary_of(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn row(&self, variant: Variant, test_subject: usize) -> Option<&FoldRow> {
        self.folds.iter().find(|r| r.variant == variant && r.test_subject == test_subject)
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            seed: u64,
            failures: usize,
            variants: &'a [VariantSummary],
        }
        Ok(serde_json::to_string_pretty(&Summary { seed: self.seed, failures: self.failures(), variants: &self.summary })?)
    }

    pub fn write_folds_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "fold", "test_subject", "minority", "variant", "status", "accuracy", "f1", "recall", "precision", "tp", "fp",
            "fn", "tn", "error",
        ])?;
        for r in &self.folds {
            let mut row = vec![r.fold.to_string(), r.test_subject.to_string(), r.minority.to_string(), r.variant.name().into()];
            match &r.metrics {
                Some(m) => {
                    row.push(if m.degenerate { "ok_degenerate" } else { "ok" }.into());
                    row.extend([m.accuracy, m.f1, m.recall, m.precision].iter().map(f64::to_string));
                    let c = m.confusion;
                    row.extend([c.tp, c.fp, c.fn_, c.tn].iter().map(usize::to_string));
                }
                None => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), 8));
                }
            }
            row.push(r.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

pub struct LosoRun {
    pub report: MetricsReport,
    /// Per fold row, in the same order as `report.folds`.
    pub histories: Vec<Vec<EpochRecord>>,
    pub models: Vec<Option<(TrainedModel, Standardizer)>>,
}

pub fn run_loso(cfg: &RunConfig, ds: &Dataset) -> Result<LosoRun> {
    run_loso_with(cfg, ds, train_fold)
}

/// Runs every (fold, variant) job on a pool of `cfg.workers` threads.
/// A failing job is recorded in its row; the others still run.
pub fn run_loso_with<F>(cfg: &RunConfig, ds: &Dataset, trainer: F) -> Result<LosoRun>
where
    F: Fn(&FoldJob<'_>) -> Result<FoldRun> + Sync,
{
    cfg.validate()?;
    if ds.folds.folds.is_empty() {
        return Err(Error::Config("dataset has no folds".into()));
    }
    let plans: Vec<VariantPlan> = cfg.variants.iter().map(|&v| cfg.plan(v)).collect();
    let jobs: Vec<(usize, usize)> =
        (0..ds.folds.folds.len()).flat_map(|f| (0..plans.len()).map(move |p| (f, p))).collect();
    let slots: Vec<Mutex<Option<JobOutcome>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(f, p)) = jobs.get(j) else { break };
                let outcome = run_job(cfg, ds, &ds.folds.folds[f], f, &plans[p], &trainer);
                *slots[j].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut folds = Vec::with_capacity(jobs.len());
    let mut histories = Vec::with_capacity(jobs.len());
    let mut models = Vec::with_capacity(jobs.len());
    for (slot, &(f, p)) in slots.into_iter().zip(&jobs) {
        let fold = &ds.folds.folds[f];
        let o = slot.into_inner().unwrap().expect("every job runs");
        let (metrics, error) = match o.result {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        folds.push(FoldRow {
            fold: f,
            test_subject: fold.test_subject,
            minority: ds.profile(fold.test_subject).is_some_and(|p| p.is_minority()),
            variant: plans[p].variant,
            metrics,
            error,
        });
        histories.push(o.history);
        models.push(o.model);
    }
    let summary = plans
        .iter()
        .map(|plan| {
            let rows: Vec<&FoldRow> = folds.iter().filter(|r| r.variant == plan.variant).collect();
            let ok: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
            Ok(VariantSummary {
                variant: plan.variant,
                folds_ok: ok.len(),
                folds_failed: rows.len() - ok.len(),
                mean: Metrics::mean(&ok),
                params: count_params(&plan.model)?,
                flops: count_flops(&plan.model)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LosoRun { report: MetricsReport { seed: cfg.seed, folds, summary }, histories, models })
}

struct JobOutcome {
    result: Result<Metrics>,
    history: Vec<EpochRecord>,
    model: Option<(TrainedModel, Standardizer)>,
}

fn run_job<F>(cfg: &RunConfig, ds: &Dataset, fold: &Fold, index: usize, plan: &VariantPlan, trainer: &F) -> JobOutcome
where
    F: Fn(&FoldJob<'_>) -> Result<FoldRun>,
{
    let failed = |e: Error| JobOutcome { result: Err(e), history: Vec::new(), model: None };
    let (train, test) = ds.split(fold);
    let st = match Standardizer::fit(&ds.samples, &train) {
        Ok(st) => st,
        Err(e) => return failed(e.into()),
    };
    let samples: Vec<MultimodalSample> = ds.samples.iter().map(|s| st.apply(s)).collect();
    let job = FoldJob {
        fold: index,
        test_subject: fold.test_subject,
        plan,
        samples: &samples,
        standardizer: &st,
        train: &train,
        test: &test,
        seed: derive_seed(cfg.seed, &[index as u64]),
        eval_batch: cfg.eval_batch,
    };
    match trainer(&job) {
        Ok(run) => {
            let labels: Vec<usize> = test.iter().map(|&i| samples[i].label).collect();
            JobOutcome {
                result: compute_metrics(&run.predictions, &labels),
                history: run.history,
                model: if cfg.save_checkpoints { run.model.map(|m| (m, st)) } else { None },
            }
        }
        Err(e) => failed(e),
    }
}

/// `per_fold.csv`, `summary.json`, one history CSV per job and, when kept,
/// one checkpoint per job.
pub fn write_report(dir: &Path, run: &LosoRun) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let path = dir.join("per_fold.csv");
    let mut buf = Vec::new();
    run.report.write_folds_csv(&mut buf)?;
    std::fs::write(&path, buf).at(&path)?;
    let path = dir.join("summary.json");
    std::fs::write(&path, run.report.summary_json()?).at(&path)?;
    for ((row, history), model) in run.report.folds.iter().zip(&run.histories).zip(&run.models) {
        let stem = format!("{}_fold{:02}", row.variant.name(), row.fold);
        save_history(&dir.join("history").join(format!("{stem}.csv")), history)?;
        if let Some((m, st)) = model {
            save_model(&dir.join("checkpoints").join(&stem), row.variant, m, Some(st))?;
        }
    }
    Ok(())
}
