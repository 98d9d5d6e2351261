//! Offline estimation: high-pass both telemetry channels, then run the
//! resistance estimator over the filtered pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorRow, KalmanConfig, ResistanceEstimate, ResistanceEstimator};
use crate::signals::{design_highpass, HighPassFilter, DEFAULT_CUTOFF_HZ, DEFAULT_ORDER};
use crate::telemetry::{sample_period, TelemetrySample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub order: usize,
    /// Expected telemetry rate; `None` accepts whatever the stream carries.
    pub sample_hz: Option<f64>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            order: DEFAULT_ORDER,
            sample_hz: None,
        }
    }
}

impl FilterSpec {
    /// Designs the filter for a stream with sample period `dt_s`.
    pub fn design_for(&self, dt_s: f64) -> Result<HighPassFilter> {
        let rate = 1.0 / dt_s;
        if let Some(expected) = self.sample_hz {
            if (rate - expected).abs() > 1e-6 * expected {
                return Err(Error::config(format!(
                    "telemetry sampled at {rate} Hz, configuration expects {expected} Hz"
                )));
            }
        }
        design_highpass(self.cutoff_hz, rate, self.order)
    }
}

#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub estimate: ResistanceEstimate,
    /// Time at which convergence was first declared, relative to the first sample.
    pub converged_at_s: Option<f64>,
    pub sample_hz: Option<f64>,
    pub trace: Vec<EstimatorRow>,
}

/// Runs the full filter + Kalman pipeline over recorded telemetry.
pub fn estimate_resistance(
    samples: &[TelemetrySample],
    filter: &FilterSpec,
    kalman: &KalmanConfig,
) -> Result<EstimationRun> {
    kalman.validate()?;
    let Some(dt) = sample_period(samples)? else {
        return Ok(EstimationRun {
            estimate: ResistanceEstimate::initial(kalman),
            converged_at_s: None,
            sample_hz: None,
            trace: Vec::new(),
        });
    };

    let design = filter.design_for(dt)?;
    let mut v_filter = design.fresh();
    let mut i_filter = design.fresh();
    let mut est = ResistanceEstimator::new(*kalman, dt)?;
    let mut trace = Vec::with_capacity(samples.len());
    for s in samples {
        let v_f = v_filter.process(s.v_terminal_v);
        let i_f = i_filter.process(s.i_total_a);
        trace.push(est.step_traced(v_f, i_f));
    }

    Ok(EstimationRun {
        estimate: *est.estimate(),
        converged_at_s: est.first_converged_s(),
        sample_hz: Some(1.0 / dt),
        trace,
    })
}

pub fn write_estimator_trace<W: std::io::Write>(out: W, rows: &[EstimatorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "v_f", "i_f", "rs_hat_ohm", "p_var", "accepted"])?;
    for r in rows {
        w.write_record([
            r.t_s.to_string(),
            r.v_f.to_string(),
            r.i_f.to_string(),
            r.rs_hat_ohm.to_string(),
            r.p_var.to_string(),
            (r.accepted as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<estimator trace>", e))?;
    Ok(())
}
