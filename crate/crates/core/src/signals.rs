//! Excitation profiles and causal Butterworth high-pass filtering.
//!
//! The filter is designed from the analog Butterworth prototype, moved to a
//! high-pass with a cutoff prewarped for the bilinear transform, and realized
//! as a cascade of second-order sections in transposed direct form II. Every
//! section carries a `(1 - z^-1)` factor per order, so the DC gain is exactly
//! zero.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EXCITATION_HZ: f64 = 0.5;
pub const DEFAULT_AMPLITUDE_C: f64 = 0.5;
pub const DEFAULT_DC_C: f64 = 0.5;
pub const DEFAULT_CUTOFF_HZ: f64 = 0.05;
pub const DEFAULT_ORDER: usize = 2;
pub const DEFAULT_SAMPLE_HZ: f64 = 10.0;
/// Filtered output during this window after start-up is not trusted.
pub const DEFAULT_WARMUP_S: f64 = 60.0;

/// Sinusoid-plus-DC current profile expressed in C-rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationProfile {
    pub freq_hz: f64,
    pub amp_c: f64,
    pub dc_c: f64,
    pub duration_s: f64,
    pub dt_s: f64,
}

impl Default for ExcitationProfile {
    fn default() -> Self {
        Self {
            freq_hz: DEFAULT_EXCITATION_HZ,
            amp_c: DEFAULT_AMPLITUDE_C,
            dc_c: DEFAULT_DC_C,
            duration_s: 300.0,
            dt_s: 1.0 / DEFAULT_SAMPLE_HZ,
        }
    }
}

impl ExcitationProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.freq_hz, self.amp_c, self.dc_c, self.duration_s, self.dt_s];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("non-finite excitation field in {self:?}")));
        }
        if self.freq_hz <= 0.0 {
            return Err(Error::config(format!("freq_hz must be > 0, got {}", self.freq_hz)));
        }
        if self.dt_s <= 0.0 {
            return Err(Error::config(format!("dt_s must be > 0, got {}", self.dt_s)));
        }
        // at least 10 samples per period
        if self.dt_s > 1.0 / (10.0 * self.freq_hz) * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "dt_s = {} gives fewer than 10 samples per {} Hz period",
                self.dt_s, self.freq_hz
            )));
        }
        if self.duration_s < 0.0 {
            return Err(Error::config(format!(
                "duration_s must be >= 0, got {}",
                self.duration_s
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize
    }
}

/// Samples `qb_ah * (dc_c + amp_c * sin(2 pi f t_k))`, discharge positive.
pub fn generate_excitation(profile: &ExcitationProfile, qb_ah: f64) -> Result<Vec<f64>> {
    profile.validate()?;
    if !(qb_ah.is_finite() && qb_ah > 0.0) {
        return Err(Error::config(format!("qb_ah must be > 0, got {qb_ah}")));
    }
    let w = 2.0 * PI * profile.freq_hz;
    Ok((0..profile.n_samples())
        .map(|k| {
            let t = k as f64 * profile.dt_s;
            qb_ah * (profile.dc_c + profile.amp_c * (w * t).sin())
        })
        .collect())
}

/// One second-order section, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }

    /// Roots of `z^2 + a1 z + a2` (or `z + a1` for a first-order section).
    fn poles(&self) -> Vec<Complex64> {
        let (a1, a2) = (self.a[1], self.a[2]);
        if a2 == 0.0 {
            return vec![Complex64::new(-a1, 0.0)];
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        vec![(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

/// Causal Butterworth high-pass filter with its own delay-line state.
#[derive(Debug, Clone, PartialEq)]
pub struct HighPassFilter {
    cutoff_hz: f64,
    order: usize,
    sample_hz: f64,
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

/// Designs a discrete Butterworth high-pass filter via the bilinear transform
/// with prewarping at `cutoff_hz`.
pub fn design_highpass(cutoff_hz: f64, sample_hz: f64, order: usize) -> Result<HighPassFilter> {
    if !(cutoff_hz.is_finite() && sample_hz.is_finite()) {
        return Err(Error::domain("cutoff and sample rate must be finite"));
    }
    if sample_hz <= 0.0 {
        return Err(Error::domain(format!("sample_hz must be > 0, got {sample_hz}")));
    }
    if cutoff_hz <= 0.0 || cutoff_hz >= sample_hz / 2.0 {
        return Err(Error::domain(format!(
            "cutoff must satisfy 0 < {cutoff_hz} < {} (Nyquist)",
            sample_hz / 2.0
        )));
    }
    if order == 0 {
        return Err(Error::domain("filter order must be >= 1"));
    }

    let fs2 = 2.0 * sample_hz;
    let warped = fs2 * (PI * cutoff_hz / sample_hz).tan();
    let n = order as f64;

    // z-plane pole for analog prototype pole k
    let pole = |k: usize| -> Complex64 {
        let proto = Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n));
        let s = warped / proto;
        (fs2 + s) / (fs2 - s)
    };

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        let p = pole(k);
        let a = [1.0, -2.0 * p.re, p.norm_sqr()];
        // unity gain at Nyquist, z = -1
        let g = (a[0] - a[1] + a[2]) / 4.0;
        sections.push(Biquad { b: [g, -2.0 * g, g], a });
    }
    if order % 2 == 1 {
        let p = pole(order / 2).re;
        let g = (1.0 + p) / 2.0;
        sections.push(Biquad {
            b: [g, -g, 0.0],
            a: [1.0, -p, 0.0],
        });
    }

    let state = vec![[0.0; 2]; sections.len()];
    Ok(HighPassFilter {
        cutoff_hz,
        order,
        sample_hz,
        sections,
        state,
    })
}

impl HighPassFilter {
    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sample_hz(&self) -> f64 {
        self.sample_hz
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Same design, zeroed delay line. Use one per stream.
    pub fn fresh(&self) -> Self {
        let mut f = self.clone();
        f.reset();
        f
    }

    pub fn reset(&mut self) {
        for s in &mut self.state {
            *s = [0.0; 2];
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (sec, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = sec.b[0] * v + st[0];
            st[0] = sec.b[1] * v - sec.a[1] * y + st[1];
            st[1] = sec.b[2] * v - sec.a[2] * y;
            v = y;
        }
        v
    }

    /// Filters a uniformly sampled series in one causal pass, continuing from
    /// the current delay-line state.
    pub fn filter_series(&mut self, x: &[f64], sample_hz: f64) -> Result<Vec<f64>> {
        if (sample_hz - self.sample_hz).abs() > 1e-9 * self.sample_hz {
            return Err(Error::config(format!(
                "series sampled at {sample_hz} Hz, filter designed for {} Hz",
                self.sample_hz
            )));
        }
        Ok(x.iter().map(|&v| self.process(v)).collect())
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Expanded transfer function `(b, a)` with `a[0] = 1`, each of length `order + 1`.
    pub fn coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![1.0];
        let mut a = vec![1.0];
        for s in &self.sections {
            let len = if s.a[2] == 0.0 && s.b[2] == 0.0 { 2 } else { 3 };
            b = poly_mul(&b, &s.b[..len]);
            a = poly_mul(&a, &s.a[..len]);
        }
        (b, a)
    }

    /// Reproducible text description: cutoff, order, rate and the expanded
    /// coefficients at 17 significant digits.
    pub fn canonical_text(&self) -> String {
        let (b, a) = self.coefficients();
        let mut out = String::new();
        let _ = writeln!(out, "filter = butterworth-highpass");
        let _ = writeln!(out, "cutoff_hz = {:.16e}", self.cutoff_hz);
        let _ = writeln!(out, "order = {}", self.order);
        let _ = writeln!(out, "sample_hz = {:.16e}", self.sample_hz);
        let _ = writeln!(out, "b = [{}]", join_sci(&b));
        let _ = writeln!(out, "a = [{}]", join_sci(&a));
        out
    }
}

fn join_sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(", ")
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &x) in p.iter().enumerate() {
        for (j, &y) in q.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}
