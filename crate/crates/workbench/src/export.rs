use std::io::Write;
use std::path::Path;

use bmfnet_core::distill::{EpochRecord, TrainedModel};
use bmfnet_core::signals::{EnoseRecording, MultimodalSample};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    let file = std::fs::File::create(path).at(path)?;
    Ok(csv::Writer::from_writer(file))
}

pub const HISTORY_HEADER: [&str; 11] = [
    "epoch", "phase", "loss_total", "loss_hard", "loss_soft", "loss_1", "loss_2", "loss_3", "loss_4", "loss_5",
    "train_acc",
];

pub fn write_history<W: Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        let mut row = vec![r.epoch.to_string(), r.phase.name().to_string()];
        row.extend([r.loss_total, r.loss_hard, r.loss_soft].iter().map(f64::to_string));
        row.extend(r.loss_parts.iter().map(f64::to_string));
        row.push(r.train_acc.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_history(&mut buf, history)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, buf).at(path)
}

/// One row per second, one column per sensor.
pub fn save_enose_csv(path: &Path, rec: &EnoseRecording) -> Result<()> {
    let t = &rec.conductivity;
    let (sensors, seconds) = (t.shape()[0], t.shape()[1]);
    let mut w = writer(path)?;
    w.write_record((1..=sensors).map(|s| format!("sensor_{s}")))?;
    for sec in 0..seconds {
        w.write_record((0..sensors).map(|s| t.get(&[s, sec]).to_string()))?;
    }
    w.flush().at(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub subject_id: usize,
    pub odor_id: usize,
    pub label: usize,
    pub split: Split,
    pub features: Vec<f32>,
}

/// FC-layer inputs for `indices`, in order.
pub fn export_embeddings(
    model: &TrainedModel,
    samples: &[MultimodalSample],
    indices: &[usize],
    split: impl Fn(usize) -> Split,
    batch: usize,
) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::with_capacity(indices.len());
    model.infer(samples, indices, batch, |tape, trace, chunk| {
        let feats = tape.value(trace.feature);
        let e = feats.shape()[1];
        for (&i, f) in chunk.iter().zip(feats.data().chunks(e)) {
            let s = &samples[i];
            rows.push(EmbeddingRow {
                subject_id: s.subject_id,
                odor_id: s.odor_id,
                label: s.label,
                split: split(i),
                features: f.to_vec(),
            });
        }
    })?;
    Ok(rows)
}

pub fn save_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.features.len());
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["subject_id", "odor_id", "label", "split"].map(String::from).to_vec();
    header.extend((1..=width).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for r in rows {
        if r.features.len() != width {
            return Err(Error::Mismatch(format!("embedding widths {} and {width} in one export", r.features.len())));
        }
        let mut row = vec![r.subject_id.to_string(), r.odor_id.to_string(), r.label.to_string(), r.split.name().into()];
        row.extend(r.features.iter().map(f32::to_string));
        w.write_record(&row)?;
    }
    w.flush().at(path)
}
