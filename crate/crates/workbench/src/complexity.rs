use bmfnet_core::bmfnet::{count_flops, count_params, Variant};
use serde::Serialize;

use crate::config::ModelParams;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub variant: Variant,
    pub params: usize,
    /// Per sample, multiply-adds counted twice.
    pub flops: u64,
}

pub fn complexity_table(model: &ModelParams) -> Result<Vec<ComplexityRow>> {
    Variant::ALL
        .iter()
        .map(|&variant| {
            let cfg = model.config(variant);
            Ok(ComplexityRow { variant, params: count_params(&cfg)?, flops: count_flops(&cfg)? })
        })
        .collect()
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "params", "params_m", "flops", "gflops"])?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.params.to_string(),
            format!("{:.3}", r.params as f64 / 1e6),
            r.flops.to_string(),
            format!("{:.3}", r.flops as f64 / 1e9),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
