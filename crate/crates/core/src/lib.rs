//! Fault detection for parallel-connected lithium-ion cells.
//!
//! A string of cells in parallel is excited with a sinusoid on top of a DC
//! current. Both measured channels are high-pass filtered, and a scalar Kalman
//! filter tracks the string's ohmic resistance. The estimate is compared
//! against thresholds designed offline by Monte Carlo over the cell-to-cell
//! resistance spread.
//!
//! ```
//! use parafault::{CellParams, ExcitationProfile, FilterSpec, KalmanConfig, SensorNoise, StringConfig};
//!
//! let string = StringConfig::new(vec![CellParams::with_rs(0.0058), CellParams::with_rs(0.0070)]).unwrap();
//! let sim = parafault::simulate_telemetry(&string, &ExcitationProfile::default(), 1.0, SensorNoise::default(), 0)
//!     .unwrap();
//! let run = parafault::estimate_resistance(&sim.telemetry, &FilterSpec::default(), &KalmanConfig::default())
//!     .unwrap();
//! let truth = string.theoretical_resistance().unwrap();
//! assert!((run.estimate.rs_hat_ohm - truth).abs() / truth < 0.02);
//! ```

pub mod cell;
pub mod config;
pub mod diagnosis;
pub mod error;
pub mod estimator;
pub mod pipeline;
pub mod report;
pub mod signals;
pub mod simulate;
pub mod stats;
pub mod string;
pub mod telemetry;

pub use cell::{ocv, step_cell, terminal_voltage, CellParams, CellState};
pub use config::{config_hash, CellLibrary, ScenarioConfig, StringSpec};
pub use diagnosis::{
    classify, exit_code, run_online, write_verdicts_jsonl, DiagnosisConfig, DiagnosisEngine, FaultLatch, Status,
    Verdict,
};
pub use error::{Error, Result};
pub use estimator::{KalmanConfig, ResistanceEstimate, ResistanceEstimator, UpdateKind};
pub use pipeline::{estimate_resistance, EstimationRun, FilterSpec};
pub use signals::{design_highpass, generate_excitation, ExcitationProfile, HighPassFilter};
pub use simulate::{simulate_telemetry, SensorNoise, Simulation, Truth};
pub use stats::{
    false_alarm_rate, fit_and_thresholds, healthy_distribution, missed_detection_rate, CellPopulation, FaultMode,
    FaultSpec, RateEstimate, StringDistribution, ThresholdSet,
};
pub use string::{parallel_resistance, simulate_string, split_currents, step_string, StringConfig, StringState};
pub use telemetry::{read_telemetry, write_telemetry, TelemetrySample};
