//! First-order equivalent-circuit cell model.
//!
//! A cell is an ohmic resistance in series with one RC pair and an
//! open-circuit voltage source that is linear in state of charge:
//!
//! ```text
//! dvc/dt = -vc/tau + (rt/tau) * i
//! v      = ocv(z) - rs * i - vc
//! dz/dt  = -eta * i / (3600 * qb)
//! ocv(z) = a * z + b
//! ```
//!
//! Current is positive on discharge. The RC state is advanced with the exact
//! zero-order-hold solution so results do not depend on the step size for
//! piecewise-constant current.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on state of charge before the saturation flag is raised.
pub const SOC_CEILING: f64 = 1.05;

pub const DEFAULT_RT_OHM: f64 = 0.010;
pub const DEFAULT_TAU_S: f64 = 30.0;
pub const DEFAULT_QB_AH: f64 = 5.0;
pub const DEFAULT_ETA: f64 = 1.0;
pub const DEFAULT_OCV_A: f64 = 0.8;
pub const DEFAULT_OCV_B: f64 = 3.3;

/// Electrical parameters of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Ohmic resistance (Ω).
    pub rs_ohm: f64,
    /// Diffusion resistance of the RC pair (Ω).
    #[serde(default = "default_rt")]
    pub rt_ohm: f64,
    /// RC time constant (s).
    #[serde(default = "default_tau")]
    pub tau_s: f64,
    /// Nominal capacity (Ah).
    #[serde(default = "default_qb")]
    pub qb_ah: f64,
    /// Fractional capacity loss; scales the capacity used for SoC integration.
    #[serde(default)]
    pub capacity_fade: f64,
    /// Coulombic efficiency.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// OCV slope (V per unit SoC).
    #[serde(default = "default_ocv_a")]
    pub ocv_a: f64,
    /// OCV intercept (V).
    #[serde(default = "default_ocv_b")]
    pub ocv_b: f64,
}

fn default_rt() -> f64 {
    DEFAULT_RT_OHM
}
fn default_tau() -> f64 {
    DEFAULT_TAU_S
}
fn default_qb() -> f64 {
    DEFAULT_QB_AH
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_ocv_a() -> f64 {
    DEFAULT_OCV_A
}
fn default_ocv_b() -> f64 {
    DEFAULT_OCV_B
}

impl CellParams {
    /// Default cell with the given ohmic resistance.
    pub fn with_rs(rs_ohm: f64) -> Self {
        Self {
            rs_ohm,
            rt_ohm: DEFAULT_RT_OHM,
            tau_s: DEFAULT_TAU_S,
            qb_ah: DEFAULT_QB_AH,
            capacity_fade: 0.0,
            eta: DEFAULT_ETA,
            ocv_a: DEFAULT_OCV_A,
            ocv_b: DEFAULT_OCV_B,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rs_ohm,
            self.rt_ohm,
            self.tau_s,
            self.qb_ah,
            self.capacity_fade,
            self.eta,
            self.ocv_a,
            self.ocv_b,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite cell parameter in {self:?}")));
        }
        if self.rs_ohm <= 0.0 {
            return Err(Error::domain(format!("rs_ohm must be > 0, got {}", self.rs_ohm)));
        }
        if self.rt_ohm < 0.0 {
            return Err(Error::domain(format!("rt_ohm must be >= 0, got {}", self.rt_ohm)));
        }
        if self.tau_s <= 0.0 {
            return Err(Error::domain(format!("tau_s must be > 0, got {}", self.tau_s)));
        }
        if self.qb_ah <= 0.0 {
            return Err(Error::domain(format!("qb_ah must be > 0, got {}", self.qb_ah)));
        }
        if !(0.0..1.0).contains(&self.capacity_fade) {
            return Err(Error::domain(format!(
                "capacity_fade must be in [0, 1), got {}",
                self.capacity_fade
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::domain(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        if self.ocv_a < 0.0 {
            return Err(Error::domain(format!("ocv_a must be >= 0, got {}", self.ocv_a)));
        }
        Ok(())
    }

    /// Capacity after fade, the value used for coulomb counting.
    pub fn effective_capacity_ah(&self) -> f64 {
        self.qb_ah * (1.0 - self.capacity_fade)
    }

    /// Unchecked OCV evaluation; the simulator tolerates the small SoC overshoot
    /// allowed by [`SOC_CEILING`].
    pub(crate) fn ocv_unchecked(&self, soc: f64) -> f64 {
        self.ocv_a * soc + self.ocv_b
    }
}

/// Dynamic state of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// RC-pair voltage (V).
    pub vc_volt: f64,
    /// State of charge (fraction).
    pub soc: f64,
    /// Latched once SoC had to be clamped into `[0, SOC_CEILING]`.
    #[serde(default)]
    pub saturated: bool,
}

impl CellState {
    pub fn at_soc(soc: f64) -> Self {
        Self {
            vc_volt: 0.0,
            soc,
            saturated: false,
        }
    }

    /// Fully charged and relaxed.
    pub fn full() -> Self {
        Self::at_soc(1.0)
    }
}

/// Open-circuit voltage `a * soc + b`.
pub fn ocv(params: &CellParams, soc: f64) -> Result<f64> {
    if !soc.is_finite() {
        return Err(Error::Numeric(format!("soc is not finite: {soc}")));
    }
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::domain(format!("soc must be in [0, 1], got {soc}")));
    }
    Ok(params.ocv_unchecked(soc))
}

/// Advances one cell by `dt` seconds under constant current `i_b`.
pub fn step_cell(params: &CellParams, state: &CellState, i_b: f64, dt: f64) -> Result<CellState> {
    if !(i_b.is_finite() && dt.is_finite() && state.vc_volt.is_finite() && state.soc.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite step input (i_b={i_b}, dt={dt}, state={state:?})"
        )));
    }
    if dt <= 0.0 {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }

    let decay = (-dt / params.tau_s).exp();
    let vc = decay * state.vc_volt + params.rt_ohm * (1.0 - decay) * i_b;

    let mut soc = state.soc - params.eta * i_b * dt / (3600.0 * params.effective_capacity_ah());
    let mut saturated = state.saturated;
    if soc < 0.0 {
        soc = 0.0;
        saturated = true;
    } else if soc > SOC_CEILING {
        soc = SOC_CEILING;
        saturated = true;
    }

    Ok(CellState {
        vc_volt: vc,
        soc,
        saturated,
    })
}

/// Terminal voltage `ocv(soc) - rs * i_b - vc`.
pub fn terminal_voltage(params: &CellParams, state: &CellState, i_b: f64) -> f64 {
    params.ocv_unchecked(state.soc) - params.rs_ohm * i_b - state.vc_volt
}
