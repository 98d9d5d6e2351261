//! JSON report documents. Every document carries `schema_version`.

use serde::{Deserialize, Serialize};

use crate::estimator::KalmanConfig;
use crate::pipeline::FilterSpec;
use crate::stats::{
    CellPopulation, FaultMode, FaultSpec, HistogramBin, RateEstimate, StringDistribution, ThresholdSet,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Reproducibility block shared by all reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl RunInfo {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub run: RunInfo,
    pub n_samples: usize,
    pub sample_hz: Option<f64>,
    pub rs_hat_ohm: f64,
    pub p_var: f64,
    pub converged: bool,
    pub converged_at_s: Option<f64>,
    pub n_updates: u64,
    pub n_rejected: u64,
    /// From the truth sidecar; `None` for field telemetry.
    pub truth_resistance_ohm: Option<f64>,
    pub error_rel: Option<f64>,
    /// Filter and estimator settings actually used, defaults included.
    pub filter: FilterSpec,
    pub kalman: KalmanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub schema_version: u32,
    pub run: RunInfo,
    pub n_mc: usize,
    pub population: CellPopulation,
    pub n_cells: usize,
    pub distribution: StringDistribution,
    pub thresholds: ThresholdSet,
    /// Measured on an independent healthy sample.
    pub false_alarm: RateEstimate,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub n_cells: usize,
    pub delta_rel: f64,
    pub fault_mode: FaultMode,
    pub lower_ohm: f64,
    pub upper_ohm: f64,
    pub false_alarm: RateEstimate,
    pub missed_detection: RateEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub run: RunInfo,
    pub n_mc: usize,
    pub population: CellPopulation,
    pub k_sigma: f64,
    /// Mode of the primary rows; rows for every mode are included.
    pub fault_mode: FaultMode,
    pub fault: FaultSpec,
    pub rows: Vec<EvaluationRow>,
}

pub fn write_evaluation_csv<W: std::io::Write>(out: W, rows: &[EvaluationRow]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n_cells",
        "delta_rel",
        "fault_mode",
        "lower_ohm",
        "upper_ohm",
        "fa_rate",
        "fa_se",
        "md_rate",
        "md_se",
    ])?;
    for r in rows {
        let mode = match r.fault_mode {
            FaultMode::ScaleSample => "scale_sample",
            FaultMode::ScaleMean => "scale_mean",
        };
        w.write_record([
            r.n_cells.to_string(),
            r.delta_rel.to_string(),
            mode.to_string(),
            r.lower_ohm.to_string(),
            r.upper_ohm.to_string(),
            r.false_alarm.rate.to_string(),
            r.false_alarm.std_error.to_string(),
            r.missed_detection.rate.to_string(),
            r.missed_detection.std_error.to_string(),
        ])?;
    }
    w.flush().map_err(|e| crate::Error::io("<evaluation table>", e))?;
    Ok(())
}
