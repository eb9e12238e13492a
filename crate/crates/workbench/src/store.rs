use std::fs;
use std::path::{Path, PathBuf};

use bmfnet_core::bmfnet::{BmfNet, ModelConfig, Variant};
use bmfnet_core::distill::TrainedModel;
use bmfnet_core::numerics::{checkpoint, ParamStore, Scalar, Tensor};
use bmfnet_core::signals::{
    Dataset, EegRecording, EnoseRecording, FoldPlan, MultimodalSample, PreferenceProfile, RawSet, SignalConfig,
    Standardizer, ODORS, PARALLELS, WINDOWS,
};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST: &str = "dataset.toml";

pub fn write_tensors<T: Scalar>(path: &Path, records: &[(String, Tensor<T>)]) -> Result<()> {
    let bytes = checkpoint::encode(records.iter().map(|(n, t)| (n.as_str(), t)));
    fs::write(path, bytes).at(path)
}

pub fn read_tensors<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path).at(path)?;
    Ok(checkpoint::decode(&bytes)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Raw,
    Processed,
}

/// Structured description of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub seed: u64,
    pub subjects: usize,
    pub odors: usize,
    pub parallels: usize,
    pub windows: usize,
    pub samples: usize,
    /// One tensor file per subject, relative to the manifest.
    pub files: Vec<PathBuf>,
    pub profiles: Vec<PreferenceProfile>,
    pub signal: SignalConfig,
}

impl DatasetManifest {
    fn new(kind: DatasetKind, seed: u64, profiles: &[PreferenceProfile], signal: &SignalConfig) -> Self {
        let subjects = profiles.len();
        Self {
            kind,
            seed,
            subjects,
            odors: ODORS,
            parallels: PARALLELS,
            windows: WINDOWS,
            samples: subjects * ODORS * PARALLELS * WINDOWS,
            files: (0..subjects).map(|s| PathBuf::from(format!("subject_{s:02}.bmft"))).collect(),
            profiles: profiles.to_vec(),
            signal: signal.clone(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).at(&path)?;
        Ok(toml::from_str(&text)?)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(MANIFEST);
        fs::write(&path, toml::to_string_pretty(self)?).at(&path)
    }

    fn expect(&self, kind: DatasetKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind:?} dataset, found {:?}", self.kind)));
        }
        if self.files.len() != self.subjects || self.profiles.len() != self.subjects {
            return Err(Error::Format(format!(
                "manifest lists {} files and {} profiles for {} subjects",
                self.files.len(),
                self.profiles.len(),
                self.subjects
            )));
        }
        Ok(())
    }
}

fn eeg_key(o: usize, p: usize) -> String {
    format!("eeg/o{o}/p{p}")
}

fn enose_key(o: usize, p: usize, r: usize) -> String {
    format!("enose/o{o}/p{p}/r{r}")
}

fn take<T: Scalar>(records: &mut Vec<(String, Tensor<T>)>, name: &str, file: &Path) -> Result<Tensor<T>> {
    let i = records
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("{}: missing record `{name}`", file.display())))?;
    Ok(records.swap_remove(i).1)
}

/// Raw recordings, one file per subject. Payloads are stored as f32.
pub fn save_raw(dir: &Path, raw: &RawSet, seed: u64, signal: &SignalConfig) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::new(DatasetKind::Raw, seed, &raw.profiles, signal);
    fs::create_dir_all(dir).at(dir)?;
    for (s, file) in manifest.files.iter().enumerate() {
        let mut records = Vec::new();
        for r in raw.eeg.iter().filter(|r| r.subject_id == s) {
            records.push((eeg_key(r.odor_id, r.parallel_id), r.samples.clone()));
        }
        for r in raw.enose.iter().filter(|r| r.subject_id == s) {
            records.push((enose_key(r.odor_id, r.parallel_id, r.repetition_id), r.conductivity.clone()));
        }
        write_tensors(&dir.join(file), &records)?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

pub fn load_raw(dir: &Path) -> Result<(RawSet, DatasetManifest)> {
    let manifest = DatasetManifest::load(dir)?;
    manifest.expect(DatasetKind::Raw)?;
    let (mut eeg, mut enose) = (Vec::new(), Vec::new());
    for (s, file) in manifest.files.iter().enumerate() {
        let path = dir.join(file);
        let mut records = read_tensors::<f64>(&path)?;
        for o in 0..manifest.odors {
            for p in 0..manifest.parallels {
                let samples = take(&mut records, &eeg_key(o, p), &path)?;
                eeg.push(EegRecording { subject_id: s, odor_id: o, parallel_id: p, samples });
                for r in 0..manifest.windows {
                    let conductivity = take(&mut records, &enose_key(o, p, r), &path)?;
                    enose.push(EnoseRecording { subject_id: s, odor_id: o, parallel_id: p, repetition_id: r, conductivity });
                }
            }
        }
    }
    Ok((RawSet { eeg, enose, profiles: manifest.profiles.clone() }, manifest))
}

/// Preprocessed samples: per subject, stacked `eeg`, `enose` and a `meta`
/// table of (odor, parallel, window, label).
pub fn save_processed(dir: &Path, ds: &Dataset, seed: u64, signal: &SignalConfig) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::new(DatasetKind::Processed, seed, &ds.profiles, signal);
    fs::create_dir_all(dir).at(dir)?;
    for (s, file) in manifest.files.iter().enumerate() {
        let own: Vec<&MultimodalSample> = ds.samples.iter().filter(|x| x.subject_id == s).collect();
        let eeg = Tensor::stack(&own.iter().map(|x| &x.eeg).collect::<Vec<_>>())?;
        let enose = Tensor::stack(&own.iter().map(|x| &x.enose).collect::<Vec<_>>())?;
        let meta: Vec<f32> = own
            .iter()
            .flat_map(|x| [x.odor_id, x.parallel_id, x.window_id, x.label].map(|v| v as f32))
            .collect();
        let meta = Tensor::new(vec![own.len(), 4], meta)?;
        write_tensors(&dir.join(file), &[("eeg".into(), eeg), ("enose".into(), enose), ("meta".into(), meta)])?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

pub fn load_processed(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = DatasetManifest::load(dir)?;
    manifest.expect(DatasetKind::Processed)?;
    let mut samples = Vec::with_capacity(manifest.samples);
    for (s, file) in manifest.files.iter().enumerate() {
        let path = dir.join(file);
        let mut records = read_tensors::<f32>(&path)?;
        let eeg = take(&mut records, "eeg", &path)?;
        let enose = take(&mut records, "enose", &path)?;
        let meta = take(&mut records, "meta", &path)?;
        let n = meta.shape()[0];
        if eeg.shape().first() != Some(&n) || enose.shape().first() != Some(&n) {
            return Err(Error::Format(format!("{}: record lengths disagree", path.display())));
        }
        for i in 0..n {
            let m = meta.index_axis0(i);
            let m: Vec<usize> = m.data().iter().map(|&v| v as usize).collect();
            samples.push(MultimodalSample {
                eeg: eeg.index_axis0(i),
                enose: enose.index_axis0(i),
                subject_id: s,
                odor_id: m[0],
                parallel_id: m[1],
                window_id: m[2],
                label: m[3],
            });
        }
    }
    let subjects: Vec<usize> = (0..manifest.subjects).collect();
    let ds = Dataset { samples, profiles: manifest.profiles.clone(), folds: FoldPlan::leave_one_subject_out(&subjects) };
    Ok((ds, manifest))
}

/// Companion of a `.bmft` parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub variant: Variant,
    pub config: ModelConfig,
    /// Input normalization fitted on the training split.
    pub standardizer: Option<Standardizer>,
    pub params: PathBuf,
}

/// Writes `<stem>.bmft` and `<stem>.json`; returns the manifest path.
pub fn save_model(stem: &Path, variant: Variant, model: &TrainedModel, standardizer: Option<&Standardizer>) -> Result<PathBuf> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let params = stem.with_extension("bmft");
    fs::write(&params, checkpoint::encode_store(&model.params)).at(&params)?;
    let manifest = ModelManifest {
        variant,
        config: model.model.config.clone(),
        standardizer: standardizer.cloned(),
        params: PathBuf::from(params.file_name().unwrap()),
    };
    let path = stem.with_extension("json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).at(&path)?;
    Ok(path)
}

pub fn load_model(manifest_path: &Path) -> Result<(TrainedModel, ModelManifest)> {
    let text = fs::read_to_string(manifest_path).at(manifest_path)?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    let params_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.params);
    let bytes = fs::read(&params_path).at(&params_path)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (model, mut params): (BmfNet, ParamStore<f32>) = BmfNet::init(manifest.config.clone(), &mut rng)?;
    checkpoint::load_into(&mut params, &bytes)
        .map_err(|e| Error::Mismatch(format!("{} does not fit its config: {e}", params_path.display())))?;
    Ok((TrainedModel { model, params }, manifest))
}
