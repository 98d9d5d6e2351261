//! Cell-to-cell variation and threshold design.
//!
//! Cell ohmic resistances are modeled as independent draws from
//! `N(mu, sigma^2)`. A string's resistance is the parallel combination of its
//! cells, sampled by Monte Carlo. Detection thresholds are a `k`-sigma band
//! around the fitted string distribution. False-alarm and missed-detection
//! rates are then measured against fresh draws of healthy and faulty strings.
//!
//! # Reproducibility
//!
//! Sample `i` of a run draws from its own ChaCha stream keyed by
//! `(seed, purpose, i)`, so the sample set does not depend on how the work is
//! split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::string::parallel_resistance;

pub const DEFAULT_N_MC: usize = 10_000;
pub const DEFAULT_K_SIGMA: f64 = 2.0;
/// Minimum sample count for a threshold fit.
pub const MIN_FIT_SAMPLES: usize = 100;

const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationLabel {
    Fresh,
    Aged,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPopulation {
    pub mu_ohm: f64,
    pub sigma_ohm: f64,
    pub label: PopulationLabel,
}

impl CellPopulation {
    /// New cells: 6 mΩ, κ = 2 %.
    pub fn fresh() -> Self {
        Self {
            mu_ohm: 6.0e-3,
            sigma_ohm: 0.12e-3,
            label: PopulationLabel::Fresh,
        }
    }

    /// Aged cells: 11 mΩ, κ = 3.5 %.
    pub fn aged() -> Self {
        Self {
            mu_ohm: 11.0e-3,
            sigma_ohm: 0.385e-3,
            label: PopulationLabel::Aged,
        }
    }

    pub fn custom(mu_ohm: f64, sigma_ohm: f64) -> Self {
        Self {
            mu_ohm,
            sigma_ohm,
            label: PopulationLabel::Custom,
        }
    }

    /// Coefficient of variation `sigma / mu`.
    pub fn kappa(&self) -> f64 {
        self.sigma_ohm / self.mu_ohm
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_ohm.is_finite() && self.mu_ohm > 0.0) {
            return Err(Error::domain(format!(
                "population mean must be > 0, got {}",
                self.mu_ohm
            )));
        }
        if !(self.sigma_ohm.is_finite() && self.sigma_ohm >= 0.0) {
            return Err(Error::domain(format!(
                "population std must be >= 0, got {}",
                self.sigma_ohm
            )));
        }
        Ok(())
    }

    fn normal(&self) -> Result<Normal<f64>> {
        self.validate()?;
        Normal::new(self.mu_ohm, self.sigma_ohm).map_err(|e| Error::domain(e.to_string()))
    }
}

/// How the faulty cell's resistance relates to the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// `R_fault = (1 + delta) * X`, `X` the cell's own draw.
    #[default]
    ScaleSample,
    /// `R_fault = (1 + delta) * mu`.
    ScaleMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Fractional resistance increase, 0.6 means +60 %.
    pub delta_rel: f64,
    pub n_faulty: usize,
    #[serde(default)]
    pub mode: FaultMode,
}

impl FaultSpec {
    pub fn single(delta_rel: f64) -> Self {
        Self {
            delta_rel,
            n_faulty: 1,
            mode: FaultMode::ScaleSample,
        }
    }

    pub fn with_mode(self, mode: FaultMode) -> Self {
        Self { mode, ..self }
    }

    pub fn validate(&self, n_cells: usize) -> Result<()> {
        if !(self.delta_rel.is_finite() && self.delta_rel > -1.0) {
            return Err(Error::domain(format!("delta_rel must be > -1, got {}", self.delta_rel)));
        }
        if self.n_faulty > n_cells {
            return Err(Error::domain(format!(
                "{} faulty cells in a string of {n_cells}",
                self.n_faulty
            )));
        }
        Ok(())
    }
}

fn draw_positive<R: Rng + ?Sized>(dist: &Normal<f64>, rng: &mut R) -> Result<f64> {
    for _ in 0..MAX_REDRAWS {
        let x = dist.sample(rng);
        if x > 0.0 {
            return Ok(x);
        }
    }
    Err(Error::domain(format!(
        "no positive resistance in {MAX_REDRAWS} draws; population is degenerate"
    )))
}

fn check_cells(n_cells: usize) -> Result<()> {
    if n_cells == 0 {
        return Err(Error::domain("n_cells must be >= 1"));
    }
    Ok(())
}

/// One healthy string: the parallel combination of `n_cells` independent
/// positive draws from the population.
pub fn sample_healthy_string<R: Rng + ?Sized>(pop: &CellPopulation, n_cells: usize, rng: &mut R) -> Result<f64> {
    check_cells(n_cells)?;
    let dist = pop.normal()?;
    let cells = (0..n_cells)
        .map(|_| draw_positive(&dist, rng))
        .collect::<Result<Vec<_>>>()?;
    parallel_resistance(&cells)
}

/// One string whose first `fault.n_faulty` cells are degraded. The draws are
/// taken in the same order as [`sample_healthy_string`], so a zero fault on the
/// same stream reproduces the healthy sample.
pub fn sample_faulty_string<R: Rng + ?Sized>(
    pop: &CellPopulation,
    n_cells: usize,
    fault: &FaultSpec,
    rng: &mut R,
) -> Result<f64> {
    check_cells(n_cells)?;
    fault.validate(n_cells)?;
    let dist = pop.normal()?;
    let mut cells = (0..n_cells)
        .map(|_| draw_positive(&dist, rng))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 + fault.delta_rel;
    for r in cells.iter_mut().take(fault.n_faulty) {
        *r = match fault.mode {
            FaultMode::ScaleSample => *r * scale,
            FaultMode::ScaleMean => pop.mu_ohm * scale,
        };
    }
    parallel_resistance(&cells)
}

/// Separates the random streams used for different purposes under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Draws used to fit the string distribution and thresholds.
    Design,
    /// Independent draws used to measure error rates.
    Evaluation,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Design => 0x5EED_0001,
            StreamPurpose::Evaluation => 0x5EED_0002,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for sample `index` of a run.
pub fn sample_rng(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose.tag())));
    rng.set_stream(index);
    rng
}

fn draw_many<F>(n_mc: usize, seed: u64, purpose: StreamPurpose, draw: F) -> Result<Vec<f64>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    (0..n_mc as u64)
        .into_par_iter()
        .map(|i| draw(&mut sample_rng(seed, purpose, i)))
        .collect()
}

/// Monte Carlo sample of string resistances with its fitted normal moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringDistribution {
    #[serde(skip)]
    pub samples: Vec<f64>,
    pub mu_s: f64,
    pub sigma_s: f64,
    pub kappa_s: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub n_cells: usize,
    pub population: CellPopulation,
    pub fault: Option<FaultSpec>,
}

/// Mean and sample standard deviation, computed about the first sample so a
/// constant sample set gives its value back exactly with zero spread.
pub fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let Some(&pivot) = xs.first() else {
        return (f64::NAN, f64::NAN);
    };
    let n = xs.len() as f64;
    let (sum, sum_sq) = xs.iter().fold((0.0, 0.0), |(s, q), &x| {
        let d = x - pivot;
        (s + d, q + d * d)
    });
    let mean_offset = sum / n;
    let var = if xs.len() > 1 {
        ((sum_sq - sum * mean_offset) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (pivot + mean_offset, var.sqrt())
}

impl StringDistribution {
    fn from_samples(
        samples: Vec<f64>,
        seed: u64,
        n_cells: usize,
        population: CellPopulation,
        fault: Option<FaultSpec>,
    ) -> Self {
        let (mu_s, sigma_s) = sample_moments(&samples);
        Self {
            n_samples: samples.len(),
            kappa_s: sigma_s / mu_s,
            samples,
            mu_s,
            sigma_s,
            seed,
            n_cells,
            population,
            fault,
        }
    }
}

/// Healthy-string distribution on the design stream.
pub fn healthy_distribution(
    pop: &CellPopulation,
    n_cells: usize,
    n_mc: usize,
    seed: u64,
) -> Result<StringDistribution> {
    healthy_distribution_on(pop, n_cells, n_mc, seed, StreamPurpose::Design)
}

pub fn healthy_distribution_on(
    pop: &CellPopulation,
    n_cells: usize,
    n_mc: usize,
    seed: u64,
    purpose: StreamPurpose,
) -> Result<StringDistribution> {
    check_cells(n_cells)?;
    pop.validate()?;
    let samples = draw_many(n_mc, seed, purpose, |rng| sample_healthy_string(pop, n_cells, rng))?;
    Ok(StringDistribution::from_samples(samples, seed, n_cells, *pop, None))
}

/// Faulty-string distribution on the chosen stream.
pub fn faulty_distribution_on(
    pop: &CellPopulation,
    n_cells: usize,
    fault: &FaultSpec,
    n_mc: usize,
    seed: u64,
    purpose: StreamPurpose,
) -> Result<StringDistribution> {
    check_cells(n_cells)?;
    pop.validate()?;
    fault.validate(n_cells)?;
    let samples = draw_many(n_mc, seed, purpose, |rng| {
        sample_faulty_string(pop, n_cells, fault, rng)
    })?;
    Ok(StringDistribution::from_samples(
        samples,
        seed,
        n_cells,
        *pop,
        Some(*fault),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// `mu_s ± k sigma_s` from sample moments.
    #[default]
    NormalFit,
    /// Empirical quantiles at the normal tail probabilities of `±k`.
    EmpiricalQuantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProvenance {
    pub population: CellPopulation,
    pub n_cells: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Acceptance band on string resistance. Values on the boundary are inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub lower_ohm: f64,
    pub upper_ohm: f64,
    pub k_sigma: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
    pub method: ThresholdMethod,
    pub provenance: ThresholdProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandPosition {
    Below,
    Inside,
    Above,
}

impl ThresholdSet {
    pub fn position(&self, r: f64) -> BandPosition {
        if r > self.upper_ohm {
            BandPosition::Above
        } else if r < self.lower_ohm {
            BandPosition::Below
        } else {
            BandPosition::Inside
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        self.position(r) == BandPosition::Inside
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower_ohm.is_finite() && self.upper_ohm.is_finite()) {
            return Err(Error::config("thresholds must be finite"));
        }
        if self.lower_ohm > self.upper_ohm {
            return Err(Error::config(format!(
                "lower threshold {} above upper {}",
                self.lower_ohm, self.upper_ohm
            )));
        }
        Ok(())
    }
}

/// Normal fit by sample moments, band at `mu_s ± k sigma_s`.
pub fn fit_and_thresholds(dist: &StringDistribution, k_sigma: f64) -> Result<ThresholdSet> {
    fit_thresholds_with(dist, k_sigma, ThresholdMethod::NormalFit)
}

pub fn fit_thresholds_with(dist: &StringDistribution, k_sigma: f64, method: ThresholdMethod) -> Result<ThresholdSet> {
    if dist.n_samples < MIN_FIT_SAMPLES || dist.samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::domain(format!(
            "threshold fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            dist.samples.len()
        )));
    }
    if !(k_sigma.is_finite() && k_sigma >= 0.0) {
        return Err(Error::domain(format!("k_sigma must be >= 0, got {k_sigma}")));
    }
    let (lower_ohm, upper_ohm) = match method {
        ThresholdMethod::NormalFit => (dist.mu_s - k_sigma * dist.sigma_s, dist.mu_s + k_sigma * dist.sigma_s),
        ThresholdMethod::EmpiricalQuantile => {
            let std = StdNormal::new(0.0, 1.0).expect("unit normal");
            let mut sorted = dist.samples.clone();
            sorted.sort_by(f64::total_cmp);
            (
                quantile_sorted(&sorted, std.cdf(-k_sigma)),
                quantile_sorted(&sorted, std.cdf(k_sigma)),
            )
        }
    };
    Ok(ThresholdSet {
        lower_ohm,
        upper_ohm,
        k_sigma,
        mu_s: dist.mu_s,
        sigma_s: dist.sigma_s,
        method,
        provenance: ThresholdProvenance {
            population: dist.population,
            n_cells: dist.n_cells,
            n_samples: dist.n_samples,
            seed: dist.seed,
        },
    })
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// A Monte Carlo proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub std_error: f64,
    pub count: usize,
    pub n: usize,
}

impl RateEstimate {
    fn from_count(count: usize, n: usize) -> Self {
        let rate = if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let std_error = if n == 0 {
            0.0
        } else {
            (rate * (1.0 - rate) / n as f64).sqrt()
        };
        Self {
            rate,
            std_error,
            count,
            n,
        }
    }
}

/// Fraction of independent healthy strings outside the band.
pub fn false_alarm_rate(
    pop: &CellPopulation,
    n_cells: usize,
    thresholds: &ThresholdSet,
    n_mc: usize,
    seed: u64,
) -> Result<RateEstimate> {
    let dist = healthy_distribution_on(pop, n_cells, n_mc, seed, StreamPurpose::Evaluation)?;
    let count = dist.samples.iter().filter(|&&r| !thresholds.contains(r)).count();
    Ok(RateEstimate::from_count(count, n_mc))
}

/// Fraction of faulty strings that land inside the band. Strings below the
/// lower threshold are flagged (as a different fault) and are not misses.
pub fn missed_detection_rate(
    pop: &CellPopulation,
    n_cells: usize,
    fault: &FaultSpec,
    thresholds: &ThresholdSet,
    n_mc: usize,
    seed: u64,
) -> Result<RateEstimate> {
    let dist = faulty_distribution_on(pop, n_cells, fault, n_mc, seed, StreamPurpose::Evaluation)?;
    let count = dist.samples.iter().filter(|&&r| thresholds.contains(r)).count();
    Ok(RateEstimate::from_count(count, n_mc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_cells: usize,
    pub thresholds: ThresholdSet,
    pub false_alarm: RateEstimate,
    pub missed_detection: RateEstimate,
}

/// Designs thresholds for each string size and measures FA and MD there.
pub fn size_sweep(
    pop: &CellPopulation,
    fault: &FaultSpec,
    k_sigma: f64,
    n_cells_list: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    n_cells_list
        .iter()
        .map(|&n| {
            let design = healthy_distribution(pop, n, n_mc, seed)?;
            let thresholds = fit_and_thresholds(&design, k_sigma)?;
            Ok(SweepRow {
                n_cells: n,
                thresholds,
                false_alarm: false_alarm_rate(pop, n, &thresholds, n_mc, seed)?,
                missed_detection: missed_detection_rate(pop, n, fault, &thresholds, n_mc, seed)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left_ohm: f64,
    pub right_ohm: f64,
    pub count: usize,
}

/// Histogram with Freedman–Diaconis bin width.
pub fn histogram(samples: &[f64]) -> Vec<HistogramBin> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let n_bins = if width > 0.0 && max > min {
        (((max - min) / width).ceil() as usize).clamp(1, 10_000)
    } else {
        1
    };
    let width = if max > min { (max - min) / n_bins as f64 } else { 0.0 };

    let mut counts = vec![0usize; n_bins];
    for &x in &sorted {
        let idx = if width > 0.0 {
            (((x - min) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            left_ohm: min + k as f64 * width,
            right_ohm: if k + 1 == n_bins {
                max
            } else {
                min + (k + 1) as f64 * width
            },
            count,
        })
        .collect()
}

pub fn write_histogram<W: std::io::Write>(out: W, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_left_ohm", "bin_right_ohm", "count"])?;
    for b in bins {
        w.write_record([b.left_ohm.to_string(), b.right_ohm.to_string(), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<histogram>", e))?;
    Ok(())
}
