//! Online fault verdicts for one string.
//!
//! Telemetry is filtered and fed to the resistance estimator sample by sample.
//! Once per second of telemetry the current estimate is compared with the
//! threshold band. A fault is latched only after `persistence` consecutive
//! out-of-band seconds on the same side, and stays latched until
//! [`DiagnosisEngine::reset`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{KalmanConfig, ResistanceEstimator};
use crate::pipeline::FilterSpec;
use crate::signals::HighPassFilter;
use crate::stats::{BandPosition, ThresholdSet};
use crate::telemetry::{TelemetrySample, TIME_JITTER_S};

pub const DEFAULT_PERSISTENCE: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Normal,
    /// Resistance above the upper threshold: cell degradation.
    DegradationFault,
    /// Resistance below the lower threshold: short-circuit type fault.
    LowResistanceFault,
    /// Estimator not converged.
    Indeterminate,
}

impl Status {
    pub fn is_fault(self) -> bool {
        matches!(self, Status::DegradationFault | Status::LowResistanceFault)
    }
}

/// Band test on a single estimate. Boundaries belong to the band.
pub fn classify(rs_hat: f64, thresholds: &ThresholdSet) -> Status {
    if !rs_hat.is_finite() {
        return Status::Indeterminate;
    }
    match thresholds.position(rs_hat) {
        BandPosition::Inside => Status::Normal,
        BandPosition::Above => Status::DegradationFault,
        BandPosition::Below => Status::LowResistanceFault,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(rename = "t")]
    pub timestamp_s: f64,
    pub status: Status,
    pub rs_hat_ohm: f64,
    pub upper: f64,
    pub lower: f64,
    /// Consecutive out-of-band seconds on the current side.
    pub consecutive: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    pub filter: FilterSpec,
    pub kalman: KalmanConfig,
    /// Consecutive out-of-band classifications needed to latch a fault.
    pub persistence: u32,
    /// Telemetry rate (Hz).
    pub sample_hz: f64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            filter: FilterSpec::default(),
            kalman: KalmanConfig::default(),
            persistence: DEFAULT_PERSISTENCE,
            sample_hz: crate::signals::DEFAULT_SAMPLE_HZ,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosisEngine {
    thresholds: ThresholdSet,
    dt_s: f64,
    samples_per_verdict: u64,
    v_filter: HighPassFilter,
    i_filter: HighPassFilter,
    estimator: ResistanceEstimator,
    index: u64,
    t0: Option<f64>,
    latch: FaultLatch,
}

impl DiagnosisEngine {
    pub fn new(cfg: &DiagnosisConfig, thresholds: ThresholdSet) -> Result<Self> {
        thresholds.validate()?;
        if !(cfg.sample_hz.is_finite() && cfg.sample_hz > 0.0) {
            return Err(Error::config(format!("sample_hz must be > 0, got {}", cfg.sample_hz)));
        }
        if cfg.persistence == 0 {
            return Err(Error::config("persistence must be >= 1"));
        }
        let dt_s = 1.0 / cfg.sample_hz;
        let spec = FilterSpec {
            sample_hz: Some(cfg.filter.sample_hz.unwrap_or(cfg.sample_hz)),
            ..cfg.filter
        };
        let design = spec.design_for(dt_s)?;
        let samples_per_verdict = cfg.sample_hz.round().max(1.0) as u64;
        Ok(Self {
            thresholds,
            dt_s,
            samples_per_verdict,
            v_filter: design.fresh(),
            i_filter: design.fresh(),
            estimator: ResistanceEstimator::new(cfg.kalman, dt_s)?,
            index: 0,
            t0: None,
            latch: FaultLatch::new(cfg.persistence),
        })
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn latched(&self) -> Option<Status> {
        self.latch.latched()
    }

    pub fn estimator(&self) -> &ResistanceEstimator {
        &self.estimator
    }

    /// Clears a latched fault and the persistence counter. The estimator keeps
    /// its state.
    pub fn reset(&mut self) {
        self.latch.reset();
    }

    /// Consumes one sample; returns a verdict at each whole second of telemetry.
    pub fn push(&mut self, sample: &TelemetrySample) -> Result<Option<Verdict>> {
        let k = self.index as usize;
        if !(sample.t_s.is_finite() && sample.i_total_a.is_finite() && sample.v_terminal_v.is_finite()) {
            return Err(Error::Stream {
                index: k,
                reason: "non-finite value".into(),
            });
        }
        let t0 = *self.t0.get_or_insert(sample.t_s);
        let expected = t0 + self.index as f64 * self.dt_s;
        if (sample.t_s - expected).abs() > TIME_JITTER_S {
            return Err(Error::Stream {
                index: k,
                reason: format!(
                    "t = {} but {} Hz sampling expects {expected}",
                    sample.t_s,
                    1.0 / self.dt_s
                ),
            });
        }
        self.index += 1;

        let v_f = self.v_filter.process(sample.v_terminal_v);
        let i_f = self.i_filter.process(sample.i_total_a);
        self.estimator.step(v_f, i_f);

        if !self.index.is_multiple_of(self.samples_per_verdict) {
            return Ok(None);
        }
        Ok(Some(self.verdict(sample.t_s)))
    }

    fn verdict(&mut self, t: f64) -> Verdict {
        let est = self.estimator.estimate();
        let (status, consecutive) = self.latch.update(est.converged, est.rs_hat_ohm, &self.thresholds);
        Verdict {
            timestamp_s: t,
            status,
            rs_hat_ohm: est.rs_hat_ohm,
            upper: self.thresholds.upper_ohm,
            lower: self.thresholds.lower_ohm,
            consecutive,
        }
    }
}

/// Debounce and latch on top of [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultLatch {
    persistence: u32,
    run: Option<(Status, u32)>,
    latched: Option<Status>,
}

impl FaultLatch {
    pub fn new(persistence: u32) -> Self {
        Self {
            persistence: persistence.max(1),
            run: None,
            latched: None,
        }
    }

    pub fn latched(&self) -> Option<Status> {
        self.latched
    }

    pub fn reset(&mut self) {
        self.run = None;
        self.latched = None;
    }

    /// Feeds one classification opportunity; returns the reported status and
    /// the current out-of-band run length.
    pub fn update(&mut self, converged: bool, rs_hat: f64, thresholds: &ThresholdSet) -> (Status, u32) {
        if let Some(fault) = self.latched {
            return (fault, self.run.map_or(0, |(_, c)| c));
        }
        if !converged {
            self.run = None;
            return (Status::Indeterminate, 0);
        }
        let instant = classify(rs_hat, thresholds);
        if !instant.is_fault() {
            self.run = None;
            return (instant, 0);
        }
        let count = match self.run {
            Some((s, c)) if s == instant => c + 1,
            _ => 1,
        };
        self.run = Some((instant, count));
        if count >= self.persistence {
            self.latched = Some(instant);
            (instant, count)
        } else {
            (Status::Normal, count)
        }
    }
}

/// Runs a fresh engine over a telemetry stream.
pub fn run_online<I>(telemetry: I, cfg: &DiagnosisConfig, thresholds: ThresholdSet) -> Result<Vec<Verdict>>
where
    I: IntoIterator<Item = TelemetrySample>,
{
    let mut engine = DiagnosisEngine::new(cfg, thresholds)?;
    let mut out = Vec::new();
    for s in telemetry {
        if let Some(v) = engine.push(&s)? {
            out.push(v);
        }
    }
    Ok(out)
}

/// Batch exit status: 2 if any fault, 0 if any normal verdict, 3 otherwise.
pub fn exit_code(verdicts: &[Verdict]) -> i32 {
    if verdicts.iter().any(|v| v.status.is_fault()) {
        2
    } else if verdicts.iter().any(|v| v.status == Status::Normal) {
        0
    } else {
        3
    }
}

pub fn write_verdicts_jsonl<W: std::io::Write>(mut out: W, verdicts: &[Verdict]) -> Result<()> {
    for v in verdicts {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n").map_err(|e| Error::io("<verdicts>", e))?;
    }
    Ok(())
}
