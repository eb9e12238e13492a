use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bmfnet_core::bmfnet::Variant;
use bmfnet_core::signals::{build_dataset, preprocess_raw, synth_raw, Dataset, Standardizer};
use clap::{Args, Parser, Subcommand};

use crate::complexity::{complexity_csv, complexity_table};
use crate::config::{ModelParams, Profile, RunConfig};
use crate::export::{export_embeddings, save_embeddings, save_enose_csv, save_history, Split};
use crate::harness::{run_loso, train_fold, write_report, FoldJob};
use crate::metrics::compute_metrics;
use crate::store::{load_model, load_processed, load_raw, save_model, save_processed, save_raw, DatasetKind, DatasetManifest};

#[derive(Debug, Parser)]
#[command(name = "bmfnet", version, about = "Olfactory-preference fusion workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a cohort and write it to disk.
    Synth(SynthArgs),
    /// Filter, downsample and window a raw cohort.
    Preprocess(PreprocessArgs),
    /// Train one variant on one fold.
    Train(TrainArgs),
    /// Leave-one-subject-out over every fold and variant.
    Loso(LosoArgs),
    /// Parameter and FLOP counts for every variant.
    Complexity(ComplexityArgs),
    /// Write FC-layer features of a checkpoint to CSV.
    ExportEmbeddings(ExportArgs),
}

/// Overrides applied on top of the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub minority: Option<usize>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub teacher_epochs: Option<usize>,
    #[arg(long)]
    pub student_epochs: Option<usize>,
    #[arg(long)]
    pub joint_epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub save_checkpoints: bool,
    /// Existing dataset directory instead of synthesizing in memory.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ProfileArg {
    Paper,
    Tiny,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Tiny => Profile::Tiny,
        }
    }
}

impl Overrides {
    pub fn resolve(&self, seed: Option<u64>, output: Option<&Path>) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.seed, seed);
        set!(cfg.output, output.map(Path::to_path_buf));
        set!(cfg.dataset.n_subjects, self.subjects);
        set!(cfg.dataset.minority, self.minority);
        set!(cfg.model.profile, self.profile.map(Profile::from));
        set!(cfg.model.hidden, self.hidden);
        set!(cfg.train.batch_size, self.batch_size);
        set!(cfg.train.adam.lr, self.lr);
        set!(cfg.train.adam.weight_decay, self.weight_decay);
        set!(cfg.train.teacher_epochs, self.teacher_epochs);
        set!(cfg.train.student_epochs, self.student_epochs);
        set!(cfg.train.joint_epochs, self.joint_epochs);
        set!(cfg.train.distill.alpha, self.alpha);
        set!(cfg.train.distill.temperature, self.temperature);
        set!(cfg.workers, self.workers);
        set!(cfg.eval_batch, self.eval_batch);
        if self.no_shuffle {
            cfg.train.shuffle = false;
        }
        if self.save_checkpoints {
            cfg.save_checkpoints = true;
        }
        if !self.variants.is_empty() {
            cfg.variants = self.variants.iter().map(|v| Variant::parse(v)).collect::<Result<_, _>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn dataset(&self, cfg: &RunConfig) -> anyhow::Result<Dataset> {
        match &self.data {
            Some(dir) => load_any(dir),
            None => Ok(build_dataset(cfg.dataset.n_subjects, &cfg.dataset.profiles(), &cfg.dataset.signal, cfg.seed)?),
        }
    }
}

fn load_any(dir: &Path) -> anyhow::Result<Dataset> {
    let manifest = DatasetManifest::load(dir)?;
    Ok(match manifest.kind {
        DatasetKind::Processed => load_processed(dir)?.0,
        DatasetKind::Raw => {
            let (raw, m) = load_raw(dir)?;
            preprocess_raw(&raw, &m.signal)?
        }
    })
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write preprocessed samples instead of raw recordings.
    #[arg(long)]
    pub processed: bool,
    /// Also export the E-nose frames of every subject's first parallel as CSV.
    #[arg(long)]
    pub enose_csv: bool,
    #[command(flatten)]
    pub o: Overrides,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out subject.
    #[arg(long)]
    pub fold: usize,
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub o: Overrides,
}

#[derive(Debug, Args)]
pub struct LosoArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub o: Overrides,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    #[arg(long, value_enum, default_value = "paper")]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Model manifest (`.json`) written next to its `.bmft` file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Subject marked as `test`; everyone else is `train`.
    #[arg(long)]
    pub test_subject: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub o: Overrides,
}

pub fn run<I, T>(args: I) -> anyhow::Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Loso(a) => loso(a),
        Command::Complexity(a) => {
            let rows = complexity_table(&ModelParams { profile: a.profile.into(), hidden: a.hidden })?;
            print!("{}", complexity_csv(&rows)?);
            Ok(0)
        }
        Command::ExportEmbeddings(a) => export(a),
    }
}

fn synth(a: SynthArgs) -> anyhow::Result<i32> {
    let cfg = a.o.resolve(Some(a.seed), None)?;
    let d = &cfg.dataset;
    let raw = synth_raw(d.n_subjects, &d.profiles(), &d.signal, cfg.seed)?;
    if a.enose_csv {
        for rec in raw.enose.iter().filter(|r| r.parallel_id == 0 && r.repetition_id == 0) {
            let name = format!("subject_{:02}_odor_{}.csv", rec.subject_id, rec.odor_id);
            save_enose_csv(&a.out.join("enose_csv").join(name), rec)?;
        }
    }
    let m = if a.processed {
        save_processed(&a.out, &preprocess_raw(&raw, &d.signal)?, cfg.seed, &d.signal)?
    } else {
        save_raw(&a.out, &raw, cfg.seed, &d.signal)?
    };
    eprintln!("wrote {} subjects ({} samples) to {}", m.subjects, m.samples, a.out.display());
    Ok(0)
}

fn preprocess(a: PreprocessArgs) -> anyhow::Result<i32> {
    let (raw, m) = load_raw(&a.input)?;
    let ds = preprocess_raw(&raw, &m.signal)?;
    save_processed(&a.out, &ds, m.seed, &m.signal)?;
    eprintln!("wrote {} samples to {}", ds.samples.len(), a.out.display());
    Ok(0)
}

fn train(a: TrainArgs) -> anyhow::Result<i32> {
    let mut cfg = a.o.resolve(a.seed, a.out.as_deref())?;
    let variant = Variant::parse(&a.variant)?;
    cfg.variants = vec![variant];
    let ds = a.o.dataset(&cfg)?;
    let fold = ds
        .folds
        .folds
        .iter()
        .position(|f| f.test_subject == a.fold)
        .with_context(|| format!("no fold holds out subject {}", a.fold))?;
    let (train_idx, test_idx) = ds.split(&ds.folds.folds[fold]);
    let st = Standardizer::fit(&ds.samples, &train_idx)?;
    let samples: Vec<_> = ds.samples.iter().map(|s| st.apply(s)).collect();
    let plan = cfg.plan(variant);
    let job = FoldJob {
        fold,
        test_subject: a.fold,
        plan: &plan,
        samples: &samples,
        standardizer: &st,
        train: &train_idx,
        test: &test_idx,
        seed: bmfnet_core::signals::derive_seed(cfg.seed, &[fold as u64]),
        eval_batch: cfg.eval_batch,
    };
    let run = train_fold(&job)?;
    let labels: Vec<usize> = test_idx.iter().map(|&i| samples[i].label).collect();
    let metrics = compute_metrics(&run.predictions, &labels)?;
    let stem = cfg.output.join(format!("{}_subject{:02}", variant.name(), a.fold));
    save_history(&stem.with_extension("csv"), &run.history)?;
    if let Some(model) = &run.model {
        save_model(&stem, variant, model, Some(&st))?;
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(0)
}

fn loso(a: LosoArgs) -> anyhow::Result<i32> {
    let cfg = a.o.resolve(Some(a.seed), a.out.as_deref())?;
    let ds = a.o.dataset(&cfg)?;
    let run = run_loso(&cfg, &ds)?;
    write_report(&cfg.output, &run)?;
    std::fs::write(cfg.output.join("config.toml"), cfg.to_toml()?)?;
    println!("{}", run.report.summary_json()?);
    let failures = run.report.failures();
    if failures > 0 {
        eprintln!("{failures} fold job(s) failed; see per_fold.csv");
        return Ok(1);
    }
    Ok(0)
}

fn export(a: ExportArgs) -> anyhow::Result<i32> {
    let (model, manifest) = load_model(&a.checkpoint)?;
    let cfg = a.o.resolve(a.seed, None)?;
    let ds = a.o.dataset(&cfg)?;
    let samples: Vec<_> = match &manifest.standardizer {
        Some(st) => ds.samples.iter().map(|s| st.apply(s)).collect(),
        None => ds.samples.clone(),
    };
    let idx: Vec<usize> = (0..samples.len()).collect();
    let split = |i: usize| if Some(samples[i].subject_id) == a.test_subject { Split::Test } else { Split::Train };
    let rows = export_embeddings(&model, &samples, &idx, split, cfg.eval_batch)?;
    save_embeddings(&a.out, &rows)?;
    if rows.is_empty() {
        bail!("no samples to export");
    }
    eprintln!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(0)
}
