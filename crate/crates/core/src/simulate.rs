//! Virtual test bench: drive a simulated string with an excitation profile and
//! record what the string's two sensors would see.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::SCHEMA_VERSION;
use crate::signals::{generate_excitation, ExcitationProfile};
use crate::string::{simulate_string, StringConfig, StringState, StringTrace};
use crate::telemetry::TelemetrySample;

/// Additive Gaussian sensor noise (standard deviations).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub voltage_std_v: f64,
    pub current_std_a: f64,
}

/// Ground truth written next to simulated telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub schema_version: u32,
    pub n_cells: usize,
    pub cells: Vec<crate::cell::CellParams>,
    pub theoretical_resistance_ohm: f64,
    pub excitation: ExcitationProfile,
    pub string_capacity_ah: f64,
    pub initial_soc: f64,
    pub noise: SensorNoise,
    pub seed: u64,
    pub soc_saturated: bool,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub telemetry: Vec<TelemetrySample>,
    pub trace: StringTrace,
    pub truth: Truth,
}

/// Simulates `config` from `initial_soc` under `profile`. The C-rate refers to
/// the summed capacity of the string.
pub fn simulate_telemetry(
    config: &StringConfig,
    profile: &ExcitationProfile,
    initial_soc: f64,
    noise: SensorNoise,
    seed: u64,
) -> Result<Simulation> {
    config.validate()?;
    if !(0.0..=1.0).contains(&initial_soc) {
        return Err(Error::config(format!(
            "initial SoC must be in [0, 1], got {initial_soc}"
        )));
    }
    if !(noise.voltage_std_v >= 0.0 && noise.current_std_a >= 0.0) {
        return Err(Error::config("noise standard deviations must be >= 0"));
    }
    let capacity = config.capacity_ah();
    let currents = generate_excitation(profile, capacity)?;
    let (trace, _) = simulate_string(
        config,
        StringState::at_soc(config, initial_soc),
        &currents,
        profile.dt_s,
    )?;

    let v_noise = Normal::new(0.0, noise.voltage_std_v).map_err(|e| Error::config(e.to_string()))?;
    let i_noise = Normal::new(0.0, noise.current_std_a).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let telemetry = (0..trace.len())
        .map(|k| {
            let (dv, di) = if noise.voltage_std_v > 0.0 || noise.current_std_a > 0.0 {
                (v_noise.sample(&mut rng), i_noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            TelemetrySample {
                t_s: trace.t_s[k],
                i_total_a: trace.i_total_a[k] + di,
                v_terminal_v: trace.v_terminal_v[k] + dv,
            }
        })
        .collect();

    let truth = Truth {
        schema_version: SCHEMA_VERSION,
        n_cells: config.n(),
        cells: config.cells.clone(),
        theoretical_resistance_ohm: config.theoretical_resistance()?,
        excitation: *profile,
        string_capacity_ah: capacity,
        initial_soc,
        noise,
        seed,
        soc_saturated: trace.saturated,
    };
    Ok(Simulation {
        telemetry,
        trace,
        truth,
    })
}

/// Full simulation trace as CSV:
/// `time_s,i_total_a,v_terminal_v,i_cell_1_a..,soc_1..`.
pub fn write_string_trace<W: std::io::Write>(out: W, trace: &StringTrace) -> Result<()> {
    let n = trace.cell_currents_a.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time_s".to_string(), "i_total_a".into(), "v_terminal_v".into()];
    header.extend((1..=n).map(|k| format!("i_cell_{k}_a")));
    header.extend((1..=n).map(|k| format!("soc_{k}")));
    w.write_record(&header)?;
    for k in 0..trace.len() {
        let mut row = vec![
            trace.t_s[k].to_string(),
            trace.i_total_a[k].to_string(),
            trace.v_terminal_v[k].to_string(),
        ];
        row.extend(trace.cell_currents_a[k].iter().map(f64::to_string));
        row.extend(trace.socs[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<string trace>", e))?;
    Ok(())
}
