//! Model and training-report files.
//!
//! Models are JSON objects with nested weight rows. Doubles are written in
//! shortest round-trip form and parsed exactly, so save/load is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::learning::{EpochStat, TrainConfig, TrainReport};
use crate::policy::SoftmaxPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub d: usize,
    pub k: usize,
    /// One row of `d` weights per action.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_norm_bound: Option<f64>,
}

fn rows(policy: &SoftmaxPolicy) -> Vec<Vec<f64>> {
    (0..policy.k())
        .map(|a| policy.weight_row(a).to_vec())
        .collect()
}

impl ModelFile {
    pub fn from_policy(policy: &SoftmaxPolicy) -> Self {
        Self {
            d: policy.d(),
            k: policy.k(),
            weights: rows(policy),
            biases: policy.biases().to_vec(),
            sigma: None,
            sigma0: None,
            prior_weights: None,
            feature_norm_bound: None,
        }
    }

    pub fn with_prior(mut self, prior: &SoftmaxPolicy) -> Self {
        self.prior_weights = Some(rows(prior));
        self
    }

    pub fn policy(&self) -> Result<SoftmaxPolicy> {
        if self.weights.len() != self.k || self.weights.iter().any(|r| r.len() != self.d) {
            return Err(CrmError::dims(
                format!("{}x{} weights", self.k, self.d),
                "ragged or mis-sized weight rows",
            ));
        }
        SoftmaxPolicy::new(self.d, self.k, self.weights.concat(), self.biases.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let model: ModelFile = serde_json::from_str(text).map_err(|e| CrmError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        model.policy().map_err(|e| CrmError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(model)
    }
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json() + "\n").map_err(|e| CrmError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CrmError::io(path, e))?;
    ModelFile::from_json(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: TrainConfig,
    pub sigma_star: Option<f64>,
    pub wall_time: f64,
    pub final_objective: Option<f64>,
    pub trace: Vec<EpochStat>,
}

impl From<&TrainReport> for ReportFile {
    fn from(r: &TrainReport) -> Self {
        Self {
            config: r.config.clone(),
            sigma_star: r.sigma_star,
            wall_time: r.wall_time,
            final_objective: r.objective_trace.last().map(|s| s.objective),
            trace: r.objective_trace.clone(),
        }
    }
}

pub fn save_report(report: &TrainReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ReportFile::from(report)).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| CrmError::io(path, e))
}

/// `epoch,objective,wall_time` rows.
pub fn write_trace(trace: &[EpochStat], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "objective", "wall_time"])?;
    for s in trace {
        w.write_record([
            s.epoch.to_string(),
            s.objective.to_string(),
            s.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &[EpochStat], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CrmError::io(path, e))?;
    write_trace(trace, BufWriter::new(file)).map_err(|e| CrmError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
