//! Scalar Kalman filter for the string's high-frequency resistance.
//!
//! After high-pass filtering, voltage and current obey the static relation
//! `v_f = -R * i_f`. The resistance is tracked as a random walk with
//! measurement row `H = -i_f`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::DEFAULT_WARMUP_S;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// Initial estimate (Ω).
    pub rs0_ohm: f64,
    /// Initial error variance (Ω²).
    pub p0_var: f64,
    /// Random-walk process noise (Ω² per sample).
    pub q_process: f64,
    /// Measurement noise variance (V²).
    pub r_meas: f64,
    /// Samples with smaller filtered current only run the predict step.
    pub i_min_a: f64,
    pub conv_window_s: f64,
    pub conv_tol_rel: f64,
    /// Leading filtered output discarded while the high-pass settles.
    pub warmup_s: f64,
    /// Accepted updates required before convergence may be declared.
    pub min_updates: u64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            rs0_ohm: 0.010,
            p0_var: 0.010 * 0.010,
            q_process: 1e-14,
            r_meas: 1e-6,
            i_min_a: 0.05,
            conv_window_s: 30.0,
            conv_tol_rel: 1e-3,
            warmup_s: DEFAULT_WARMUP_S,
            min_updates: 10,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.rs0_ohm.is_finite() {
            return Err(Error::config("rs0_ohm must be finite"));
        }
        for (name, v) in [
            ("p0_var", self.p0_var),
            ("r_meas", self.r_meas),
            ("i_min_a", self.i_min_a),
            ("conv_window_s", self.conv_window_s),
            ("conv_tol_rel", self.conv_tol_rel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        // q = 0 is permitted for the non-increasing-variance analysis
        if !(self.q_process.is_finite() && self.q_process >= 0.0) {
            return Err(Error::config(format!("q_process must be >= 0, got {}", self.q_process)));
        }
        if !(self.warmup_s.is_finite() && self.warmup_s >= 0.0) {
            return Err(Error::config(format!("warmup_s must be >= 0, got {}", self.warmup_s)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceEstimate {
    pub rs_hat_ohm: f64,
    pub p_var: f64,
    pub n_updates: u64,
    /// Samples dropped for non-finite input.
    pub n_rejected: u64,
    pub converged: bool,
    pub warmup_remaining_s: f64,
}

impl ResistanceEstimate {
    pub fn initial(cfg: &KalmanConfig) -> Self {
        Self {
            rs_hat_ohm: cfg.rs0_ohm,
            p_var: cfg.p0_var,
            n_updates: 0,
            n_rejected: 0,
            converged: false,
            warmup_remaining_s: cfg.warmup_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    WarmUp,
    Accepted,
    /// Filtered current below `i_min_a`.
    Skipped,
    /// Non-finite sample.
    Rejected,
}

/// One predict/update cycle on a filtered `(v_f, i_f)` pair. Assumes warm-up
/// has elapsed; the caller owns that bookkeeping.
pub fn kf_update(est: &ResistanceEstimate, cfg: &KalmanConfig, v_f: f64, i_f: f64) -> (ResistanceEstimate, UpdateKind) {
    let mut next = *est;
    next.p_var = est.p_var + cfg.q_process;

    if !(v_f.is_finite() && i_f.is_finite()) {
        next.n_rejected += 1;
        return (next, UpdateKind::Rejected);
    }
    if i_f.abs() < cfg.i_min_a {
        return (next, UpdateKind::Skipped);
    }

    let h = -i_f;
    let innovation = v_f - h * next.rs_hat_ohm;
    let s = h * h * next.p_var + cfg.r_meas;
    let gain = next.p_var * h / s;
    next.rs_hat_ohm += gain * innovation;
    // Joseph form keeps p_var positive under roundoff
    let one_minus = 1.0 - gain * h;
    next.p_var = one_minus * one_minus * next.p_var + gain * gain * cfg.r_meas;
    next.n_updates += 1;
    (next, UpdateKind::Accepted)
}

/// Trailing-window convergence test: the estimate has not moved by more than
/// `conv_tol_rel` (relative to its current value) over the last
/// `conv_window_s` seconds, and enough updates have been accepted.
pub fn check_convergence(est: &ResistanceEstimate, cfg: &KalmanConfig, window: &ConvergenceWindow) -> bool {
    if est.warmup_remaining_s > 0.0 || est.n_updates < cfg.min_updates.max(1) {
        return false;
    }
    if window.span_s() + 1e-9 < cfg.conv_window_s {
        return false;
    }
    let (lo, hi) = window.range();
    let scale = est.rs_hat_ohm.abs();
    scale > 0.0 && (hi - lo) / scale < cfg.conv_tol_rel
}

/// Post-warm-up history of `(t_s, rs_hat)` trimmed to the convergence window.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceWindow {
    samples: VecDeque<(f64, f64)>,
    first_t: Option<f64>,
}

impl ConvergenceWindow {
    fn push(&mut self, t: f64, rs: f64, window_s: f64) {
        self.first_t.get_or_insert(t);
        self.samples.push_back((t, rs));
        while let Some(&(t0, _)) = self.samples.front() {
            if t - t0 > window_s + 1e-9 {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    /// Time covered since the first post-warm-up sample, capped by the window.
    fn span_s(&self) -> f64 {
        match (self.first_t, self.samples.back()) {
            (Some(t0), Some(&(t, _))) => t - t0,
            _ => 0.0,
        }
    }

    fn range(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, r)| {
                (lo.min(r), hi.max(r))
            })
    }
}

/// One row of the estimator trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub t_s: f64,
    pub v_f: f64,
    pub i_f: f64,
    pub rs_hat_ohm: f64,
    pub p_var: f64,
    pub accepted: bool,
}

/// Stateful estimator for one string: warm-up discard, Kalman updates and
/// convergence tracking on a fixed sample period.
#[derive(Debug, Clone)]
pub struct ResistanceEstimator {
    cfg: KalmanConfig,
    dt_s: f64,
    est: ResistanceEstimate,
    warmup_left: u64,
    k: u64,
    window: ConvergenceWindow,
    first_converged_s: Option<f64>,
}

impl ResistanceEstimator {
    pub fn new(cfg: KalmanConfig, dt_s: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(Error::config(format!("dt_s must be > 0, got {dt_s}")));
        }
        let warmup_left = (cfg.warmup_s / dt_s).round() as u64;
        let mut est = ResistanceEstimate::initial(&cfg);
        est.warmup_remaining_s = warmup_left as f64 * dt_s;
        Ok(Self {
            cfg,
            dt_s,
            est,
            warmup_left,
            k: 0,
            window: ConvergenceWindow::default(),
            first_converged_s: None,
        })
    }

    pub fn config(&self) -> &KalmanConfig {
        &self.cfg
    }

    pub fn estimate(&self) -> &ResistanceEstimate {
        &self.est
    }

    /// Time at which the converged flag was first raised.
    pub fn first_converged_s(&self) -> Option<f64> {
        self.first_converged_s
    }

    /// Time stamp of the next sample.
    pub fn time_s(&self) -> f64 {
        self.k as f64 * self.dt_s
    }

    pub fn step(&mut self, v_f: f64, i_f: f64) -> UpdateKind {
        let t = self.time_s();
        self.k += 1;
        if self.warmup_left > 0 {
            self.warmup_left -= 1;
            self.est.warmup_remaining_s = self.warmup_left as f64 * self.dt_s;
            return UpdateKind::WarmUp;
        }
        let (next, kind) = kf_update(&self.est, &self.cfg, v_f, i_f);
        self.est = next;
        self.window.push(t, self.est.rs_hat_ohm, self.cfg.conv_window_s);
        self.est.converged = check_convergence(&self.est, &self.cfg, &self.window);
        if self.est.converged && self.first_converged_s.is_none() {
            self.first_converged_s = Some(t);
        }
        kind
    }

    /// Like [`step`](Self::step) but returns a trace row.
    pub fn step_traced(&mut self, v_f: f64, i_f: f64) -> EstimatorRow {
        let t_s = self.time_s();
        let kind = self.step(v_f, i_f);
        EstimatorRow {
            t_s,
            v_f,
            i_f,
            rs_hat_ohm: self.est.rs_hat_ohm,
            p_var: self.est.p_var,
            accepted: kind == UpdateKind::Accepted,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const R: f64 = 3.17e-3;

    fn sinusoid(n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|k| amp * (2.0 * PI * 0.5 * k as f64 * 0.1).sin()).collect()
    }

    fn run(cfg: KalmanConfig, v: &[f64], i: &[f64]) -> ResistanceEstimator {
        let mut e = ResistanceEstimator::new(cfg, 0.1).unwrap();
        for (&vv, &ii) in v.iter().zip(i) {
            e.step(vv, ii);
        }
        e
    }

    #[test]
    fn noiseless_regression_converges_within_100s() {
        let cfg = KalmanConfig {
            warmup_s: 0.0,
            ..Default::default()
        };
        let i = sinusoid(1000, 5.0);
        let v: Vec<f64> = i.iter().map(|x| -R * x).collect();
        let e = run(cfg, &v, &i);
        let err = (e.estimate().rs_hat_ohm - R).abs() / R;
        assert!(err < 0.005, "relative error {err}");
        assert!(e.estimate().converged);
    }

    #[test]
    fn no_excitation_no_information() {
        let cfg = KalmanConfig {
            warmup_s: 0.0,
            ..Default::default()
        };
        let mut est = ResistanceEstimate::initial(&cfg);
        for k in 1..=100 {
            let (next, kind) = kf_update(&est, &cfg, 0.0, 0.0);
            assert_eq!(kind, UpdateKind::Skipped);
            assert_eq!(next.rs_hat_ohm, cfg.rs0_ohm);
            let expected = cfg.p0_var + k as f64 * cfg.q_process;
            assert!((next.p_var - expected).abs() <= k as f64 * f64::EPSILON * expected);
            est = next;
        }
        let e = run(cfg, &[0.0; 1000], &[0.0; 1000]);
        assert!(!e.estimate().converged);
        assert_eq!(e.estimate().n_updates, 0);
    }

    #[test]
    fn non_finite_samples_are_counted() {
        let cfg = KalmanConfig::default();
        let est = ResistanceEstimate::initial(&cfg);
        let (next, kind) = kf_update(&est, &cfg, f64::NAN, 1.0);
        assert_eq!(kind, UpdateKind::Rejected);
        assert_eq!(next.n_rejected, 1);
        assert_eq!(next.rs_hat_ohm, est.rs_hat_ohm);
    }

    #[test]
    fn warmup_blocks_updates_and_convergence() {
        let cfg = KalmanConfig::default();
        let i = sinusoid(600, 5.0);
        let v: Vec<f64> = i.iter().map(|x| -R * x).collect();
        let mut e = ResistanceEstimator::new(cfg, 0.1).unwrap();
        for (&vv, &ii) in v.iter().zip(&i) {
            assert_eq!(e.step(vv, ii), UpdateKind::WarmUp);
            assert!(!e.estimate().converged);
        }
        assert_eq!(e.estimate().warmup_remaining_s, 0.0);
        assert_eq!(e.estimate().rs_hat_ohm, cfg.rs0_ohm);
        assert_eq!(e.step(-R * 5.0, 5.0), UpdateKind::Accepted);
    }

    #[test]
    fn constant_estimate_over_window_is_converged() {
        let cfg = KalmanConfig::default();
        let mut est = ResistanceEstimate::initial(&cfg);
        est.warmup_remaining_s = 0.0;
        est.n_updates = 500;
        let mut w = ConvergenceWindow::default();
        for k in 0..=300 {
            w.push(k as f64 * 0.1, R, cfg.conv_window_s);
        }
        assert!(check_convergence(&est, &cfg, &w));

        let mut w = ConvergenceWindow::default();
        for k in 0..=300 {
            w.push(k as f64 * 0.1, R * (1.0 + 0.01 * k as f64 / 300.0), cfg.conv_window_s);
        }
        assert!(!check_convergence(&est, &cfg, &w));
    }

    #[test]
    fn variance_non_increasing_without_process_noise() {
        let cfg = KalmanConfig {
            q_process: 0.0,
            warmup_s: 0.0,
            ..Default::default()
        };
        let mut est = ResistanceEstimate::initial(&cfg);
        for (k, i) in sinusoid(500, 3.0).into_iter().enumerate() {
            let noise = 1e-4 * ((k * 7919) % 13) as f64 / 13.0;
            let (next, kind) = kf_update(&est, &cfg, -R * i + noise, i);
            if kind == UpdateKind::Accepted {
                assert!(next.p_var <= est.p_var);
            }
            assert!(next.p_var > 0.0);
            est = next;
        }
    }

    #[test]
    fn sign_flip_leaves_estimate_unchanged() {
        let cfg = KalmanConfig {
            warmup_s: 0.0,
            ..Default::default()
        };
        let i = sinusoid(1500, 4.0);
        let v: Vec<f64> = i
            .iter()
            .enumerate()
            .map(|(k, x)| -R * x + 2e-4 * (k as f64 * 1.3).sin())
            .collect();
        let a = run(cfg, &v, &i);
        let vn: Vec<f64> = v.iter().map(|x| -x).collect();
        let inn: Vec<f64> = i.iter().map(|x| -x).collect();
        let b = run(cfg, &vn, &inn);
        assert_eq!(a.estimate().rs_hat_ohm, b.estimate().rs_hat_ohm);
    }

    #[test]
    fn traced_rows_follow_time() {
        let mut e = ResistanceEstimator::new(KalmanConfig::default(), 0.1).unwrap();
        let r0 = e.step_traced(0.0, 0.0);
        let r1 = e.step_traced(0.0, 0.0);
        assert_eq!(r0.t_s, 0.0);
        assert!((r1.t_s - 0.1).abs() < 1e-15);
        assert!(!r0.accepted);
    }

    #[test]
    fn config_validation() {
        assert!(KalmanConfig::default().validate().is_ok());
        let bad = KalmanConfig {
            r_meas: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = KalmanConfig {
            i_min_a: -1.0,
            ..Default::default()
        };
        assert!(ResistanceEstimator::new(bad, 0.1).is_err());
    }
}
