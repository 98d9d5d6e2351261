//! Parallel string of cells sharing one terminal voltage and one current sensor.
//!
//! Each step the total current is split so that every cell presents the same
//! terminal voltage. The RC-pair voltages and SoCs are held at their values
//! from the start of the step, which makes the constraint linear:
//!
//! ```text
//! v   = (sum (ocv_i - vc_i) / rs_i - i_total) / sum (1 / rs_i)
//! i_i = (ocv_i - vc_i - v) / rs_i
//! ```

use serde::{Deserialize, Serialize};

use crate::cell::{step_cell, CellParams, CellState};
use crate::error::{Error, Result};

/// Equivalent resistance of resistors in parallel, `(sum 1/R_i)^-1`.
pub fn parallel_resistance(resistances: &[f64]) -> Result<f64> {
    if resistances.is_empty() {
        return Err(Error::domain("parallel_resistance of an empty list"));
    }
    let mut conductance = 0.0;
    for &r in resistances {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::domain(format!("resistance must be finite and > 0, got {r}")));
        }
        conductance += 1.0 / r;
    }
    Ok(1.0 / conductance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringConfig {
    pub cells: Vec<CellParams>,
}

impl StringConfig {
    pub fn new(cells: Vec<CellParams>) -> Result<Self> {
        let config = Self { cells };
        config.validate()?;
        Ok(config)
    }

    /// `n` copies of the same cell.
    pub fn uniform(cell: CellParams, n: usize) -> Result<Self> {
        Self::new(vec![cell; n])
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::domain("a string needs at least one cell"));
        }
        for (idx, cell) in self.cells.iter().enumerate() {
            cell.validate()
                .map_err(|e| Error::domain(format!("cell {}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    /// High-frequency resistance of the string: the parallel combination of
    /// cell ohmic resistances.
    pub fn theoretical_resistance(&self) -> Result<f64> {
        let rs: Vec<f64> = self.cells.iter().map(|c| c.rs_ohm).collect();
        parallel_resistance(&rs)
    }

    /// Sum of effective cell capacities (Ah), the basis for string C-rate.
    pub fn capacity_ah(&self) -> f64 {
        self.cells.iter().map(|c| c.effective_capacity_ah()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringState {
    pub cell_states: Vec<CellState>,
    /// Terminal voltage seen during the last step (V).
    pub v_terminal: f64,
    /// Per-cell currents of the last step (A, discharge positive).
    pub cell_currents: Vec<f64>,
}

impl StringState {
    /// Every cell relaxed at the same SoC.
    pub fn at_soc(config: &StringConfig, soc: f64) -> Self {
        Self::from_cells(config, vec![CellState::at_soc(soc); config.n()])
    }

    pub fn from_cells(config: &StringConfig, cell_states: Vec<CellState>) -> Self {
        let n = cell_states.len();
        let mut state = Self {
            cell_states,
            v_terminal: 0.0,
            cell_currents: vec![0.0; n],
        };
        if let Ok((v, currents)) = split_currents(config, &state, 0.0) {
            state.v_terminal = v;
            state.cell_currents = currents;
        }
        state
    }

    pub fn soc_spread(&self) -> f64 {
        let (lo, hi) = self
            .cell_states
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.soc), hi.max(s.soc))
            });
        hi - lo
    }
}

/// Solves the equal-voltage constraint for `i_total`, returning the shared
/// terminal voltage and the per-cell currents.
pub fn split_currents(config: &StringConfig, state: &StringState, i_total: f64) -> Result<(f64, Vec<f64>)> {
    if config.n() != state.cell_states.len() {
        return Err(Error::config(format!(
            "string has {} cells but state has {}",
            config.n(),
            state.cell_states.len()
        )));
    }
    if !i_total.is_finite() {
        return Err(Error::Numeric(format!("i_total is not finite: {i_total}")));
    }

    let mut conductance = 0.0;
    let mut driven = 0.0;
    for (params, cell) in config.cells.iter().zip(&state.cell_states) {
        if params.rs_ohm <= 0.0 {
            return Err(Error::domain(format!("rs_ohm must be > 0, got {}", params.rs_ohm)));
        }
        let g = 1.0 / params.rs_ohm;
        conductance += g;
        driven += (params.ocv_unchecked(cell.soc) - cell.vc_volt) * g;
    }
    let v = (driven - i_total) / conductance;

    let currents = config
        .cells
        .iter()
        .zip(&state.cell_states)
        .map(|(params, cell)| (params.ocv_unchecked(cell.soc) - cell.vc_volt - v) / params.rs_ohm)
        .collect();
    Ok((v, currents))
}

/// Advances the whole string by `dt` under constant total current.
///
/// The returned state records the terminal voltage and split currents that
/// applied during the step.
pub fn step_string(config: &StringConfig, state: &StringState, i_total: f64, dt: f64) -> Result<StringState> {
    let (v, currents) = split_currents(config, state, i_total)?;
    let cell_states = config
        .cells
        .iter()
        .zip(&state.cell_states)
        .zip(&currents)
        .map(|((params, cell), &i)| step_cell(params, cell, i, dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(StringState {
        cell_states,
        v_terminal: v,
        cell_currents: currents,
    })
}

/// Sampled output of a string simulation. Row `k` holds the current applied
/// over `[t_k, t_k + dt)` and the voltage measured at `t_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StringTrace {
    pub t_s: Vec<f64>,
    pub i_total_a: Vec<f64>,
    pub v_terminal_v: Vec<f64>,
    pub cell_currents_a: Vec<Vec<f64>>,
    pub socs: Vec<Vec<f64>>,
    /// Set if any cell had its SoC clamped.
    pub saturated: bool,
}

impl StringTrace {
    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }
}

/// Runs the string through a sampled current profile.
pub fn simulate_string(
    config: &StringConfig,
    initial: StringState,
    currents: &[f64],
    dt: f64,
) -> Result<(StringTrace, StringState)> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let mut trace = StringTrace {
        t_s: Vec::with_capacity(currents.len()),
        i_total_a: Vec::with_capacity(currents.len()),
        v_terminal_v: Vec::with_capacity(currents.len()),
        cell_currents_a: Vec::with_capacity(currents.len()),
        socs: Vec::with_capacity(currents.len()),
        saturated: false,
    };
    let mut state = initial;
    for (k, &i) in currents.iter().enumerate() {
        let socs = state.cell_states.iter().map(|c| c.soc).collect();
        let next = step_string(config, &state, i, dt)?;
        trace.t_s.push(k as f64 * dt);
        trace.i_total_a.push(i);
        trace.v_terminal_v.push(next.v_terminal);
        trace.cell_currents_a.push(next.cell_currents.clone());
        trace.socs.push(socs);
        state = next;
    }
    trace.saturated = state.cell_states.iter().any(|c| c.saturated);
    Ok((trace, state))
}
