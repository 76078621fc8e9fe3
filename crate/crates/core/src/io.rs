//! Dataset CSV, model files and experiment result tables.
//!
//! Dataset CSV: a header naming the covariate columns, then `dose`, then
//! `reward`; one record per line. Row numbers in errors count data records
//! from 1 (the header is not counted).
//!
//! Model files are JSON with a `format_version` field. Numbers are written
//! as shortest round-trip decimals, so loading a saved model reproduces its
//! predictions exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, DoseRange, FittedGP, RewardScaler};
use crate::harness::ExperimentSummary;
use crate::kernel::Hyperparameters;

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn read_dataset_csv<R: Read>(reader: R, dose_range: DoseRange) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 0, "header"))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = header.len();
    if width < 2 || header[width - 2] != "dose" || header[width - 1] != "reward" {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: format!(
                "expected covariate columns followed by `dose,reward`, got `{}`",
                header.join(",")
            ),
        });
    }
    let p = width - 2;

    let mut covariates = Vec::new();
    let mut doses = Vec::new();
    let mut rewards = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| csv_error(e, row, "record"))?;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                column: "record".into(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: header[col].clone(),
                    message: format!("`{cell}` is not a finite number"),
                })?;
            if col < p {
                covariates.push(value);
            } else if col == p {
                doses.push(value);
            } else {
                rewards.push(value);
            }
        }
    }
    if doses.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: "record".into(),
            message: "no data records".into(),
        });
    }
    let n = doses.len();
    Dataset::new(
        DMatrix::from_row_slice(n, p, &covariates),
        DVector::from_vec(doses),
        DVector::from_vec(rewards),
        dose_range,
    )
}

fn csv_error(e: csv::Error, row: usize, column: &str) -> Error {
    Error::Parse {
        row,
        column: column.into(),
        message: e.to_string(),
    }
}

pub fn read_dataset_file(path: impl AsRef<Path>, dose_range: DoseRange) -> Result<Dataset> {
    read_dataset_csv(BufReader::new(File::open(path)?), dose_range)
}

/// Writes `c1..cp,dose,reward`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    let p = data.covariate_dim();
    let mut header: Vec<String> = (1..=p).map(|j| format!("c{j}")).collect();
    header.push("dose".into());
    header.push("reward".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.len() {
        let mut fields: Vec<String> = data.covariates().row(i).iter().map(|v| v.to_string()).collect();
        fields.push(data.doses()[i].to_string());
        fields.push(data.rewards()[i].to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// On-disk form of a [`FittedGP`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub hyperparameters: Hyperparameters,
    /// Training inputs, one `[covariates..., dose]` row per record.
    pub inputs: Vec<Vec<f64>>,
    pub scaled_targets: Vec<f64>,
    pub scaler: RewardScaler,
    pub dose_range: DoseRange,
    pub log_ml: f64,
}

impl ModelFile {
    pub fn from_model(model: &FittedGP) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            hyperparameters: model.hyperparameters().clone(),
            inputs: model.inputs().row_iter().map(|r| r.iter().copied().collect()).collect(),
            scaled_targets: model.targets().iter().copied().collect(),
            scaler: model.scaler(),
            dose_range: model.dose_range(),
            log_ml: model.log_ml(),
        }
    }

    /// Refactorizes the stored training set.
    pub fn to_model(&self) -> Result<FittedGP> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let n = self.inputs.len();
        let d = self.hyperparameters.dim();
        if n == 0 || self.inputs.iter().any(|r| r.len() != d) || self.scaled_targets.len() != n {
            return Err(Error::Format(format!(
                "inconsistent shapes for {n} records of dimension {d}"
            )));
        }
        let inputs = DMatrix::from_fn(n, d, |i, j| self.inputs[i][j]);
        let dose_range = DoseRange::new(self.dose_range.lo, self.dose_range.hi)?;
        FittedGP::from_scaled(
            self.hyperparameters.clone(),
            inputs,
            DVector::from_vec(self.scaled_targets.clone()),
            self.scaler,
            dose_range,
        )
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn save_model(model: &FittedGP, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    ModelFile::from_model(model).to_writer(&mut out)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedGP> {
    ModelFile::from_reader(BufReader::new(File::open(path)?))?.to_model()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `scenario,n_train,percentile,mean_vhat,std_vhat,completed,failed`, full precision.
pub fn write_summary_csv<W: Write>(summary: &ExperimentSummary, mut out: W) -> Result<()> {
    writeln!(out, "scenario,n_train,percentile,mean_vhat,std_vhat,completed,failed")?;
    for r in &summary.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario,
            r.n_train,
            r.percentile,
            opt(r.mean_vhat),
            opt(r.std_vhat),
            r.completed,
            r.failed
        )?;
    }
    Ok(())
}

/// Long-format penalty sweep: `scenario,n_train,percentile,mean_vhat,std_vhat`.
pub fn write_sweep_csv<W: Write>(summary: &ExperimentSummary, mut out: W) -> Result<()> {
    writeln!(out, "scenario,n_train,percentile,mean_vhat,std_vhat")?;
    for r in &summary.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.scenario,
            r.n_train,
            r.percentile,
            opt(r.mean_vhat),
            opt(r.std_vhat)
        )?;
    }
    Ok(())
}

/// Human-readable `mean (std)` table, two decimals, one line per cell.
pub fn format_summary_table(summary: &ExperimentSummary) -> String {
    let mut s = String::from("scenario  n_train  LCSL.X  mean (std)\n");
    for r in &summary.rows {
        let cell = match (r.mean_vhat, r.std_vhat) {
            (Some(m), Some(sd)) => {
                let flag = if r.std_is_degenerate() {
                    "  [single replication]"
                } else {
                    ""
                };
                format!("{m:.2} ({sd:.2}){flag}")
            }
            _ => "missing".to_string(),
        };
        let failures = if r.failed > 0 {
            format!("  [{} failed]", r.failed)
        } else {
            String::new()
        };
        s.push_str(&format!(
            "{:>8}  {:>7}  LCSL.{:<2}  {cell}{failures}\n",
            r.scenario, r.n_train, r.percentile
        ));
    }
    s
}
