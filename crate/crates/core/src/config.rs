//! Declarative configuration files.
//!
//! Both cell libraries and scenarios are flat `key = value` text (TOML
//! dotted keys), e.g. `cell.1.rs_ohm = 0.0058`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::CellParams;
use crate::error::{Error, Result};
use crate::estimator::KalmanConfig;
use crate::pipeline::FilterSpec;
use crate::signals::ExcitationProfile;
use crate::simulate::SensorNoise;
use crate::stats::{CellPopulation, FaultMode, PopulationLabel, ThresholdMethod, DEFAULT_K_SIGMA, DEFAULT_N_MC};
use crate::string::StringConfig;

/// The four cells of the validation set, bundled with the crate.
pub const BUNDLED_CELLS: &str = include_str!("../data/cells.cfg");

#[derive(Debug, Deserialize)]
struct CellFile {
    #[serde(default)]
    cell: BTreeMap<String, CellParams>,
}

/// Named cell parameter sets, ordered by numeric id where ids are numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLibrary {
    pub cells: Vec<(String, CellParams)>,
}

impl CellLibrary {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let file: CellFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: line_of(text, e.span().map(|s| s.start)),
            reason: e.message().to_string(),
        })?;
        let mut cells: Vec<(String, CellParams)> = file.cell.into_iter().collect();
        cells.sort_by(|(a, _), (b, _)| match (a.parse::<u64>(), b.parse::<u64>()) {
            (Ok(x), Ok(y)) => x.cmp(&y),
            _ => a.cmp(b),
        });
        for (id, p) in &cells {
            p.validate()
                .map_err(|e| Error::config(format!("{}: cell {id}: {e}", origin.display())))?;
        }
        Ok(Self { cells })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CELLS, Path::new("cells.cfg")).expect("bundled cell file is valid")
    }

    pub fn get(&self, id: &str) -> Option<&CellParams> {
        self.cells.iter().find(|(k, _)| k == id).map(|(_, p)| p)
    }

    /// Cells in the given order; ids may repeat.
    pub fn select(&self, ids: &[String]) -> Result<Vec<CellParams>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .copied()
                    .ok_or_else(|| Error::config(format!("no cell {id:?} in library")))
            })
            .collect()
    }
}

fn line_of(text: &str, offset: Option<usize>) -> u64 {
    offset.map_or(0, |o| text[..o.min(text.len())].matches('\n').count() as u64 + 1)
}

/// Which cells make up a simulated string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StringSpec {
    /// Cell library file; the bundled set is used when absent.
    pub cells_file: Option<PathBuf>,
    /// Cell ids from the library. Takes precedence over `n_cells`.
    pub cells: Vec<String>,
    /// Number of identical cells when `cells` is empty.
    pub n_cells: usize,
    /// Ohmic resistance of the identical cells.
    pub rs_ohm: f64,
    /// Resistance increase applied to the first cell.
    pub fault_delta: f64,
}

impl Default for StringSpec {
    fn default() -> Self {
        Self {
            cells_file: None,
            cells: Vec::new(),
            n_cells: 5,
            rs_ohm: 6.0e-3,
            fault_delta: 0.0,
        }
    }
}

impl StringSpec {
    /// Resolves the spec; a relative `cells_file` is taken relative to `base`.
    pub fn build(&self, base: &Path) -> Result<StringConfig> {
        let mut cells = if self.cells.is_empty() {
            if self.n_cells == 0 {
                return Err(Error::config("n_cells must be >= 1"));
            }
            vec![CellParams::with_rs(self.rs_ohm); self.n_cells]
        } else {
            let lib = match &self.cells_file {
                Some(p) => CellLibrary::load(&resolve(base, p))?,
                None => CellLibrary::bundled(),
            };
            lib.select(&self.cells)?
        };
        if !(self.fault_delta.is_finite() && self.fault_delta > -1.0) {
            return Err(Error::config(format!(
                "fault_delta must be > -1, got {}",
                self.fault_delta
            )));
        }
        cells[0].rs_ohm *= 1.0 + self.fault_delta;
        StringConfig::new(cells)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub label: PopulationLabel,
    /// Used for `custom`.
    pub mu_ohm: f64,
    pub sigma_ohm: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        let fresh = CellPopulation::fresh();
        Self {
            label: PopulationLabel::Fresh,
            mu_ohm: fresh.mu_ohm,
            sigma_ohm: fresh.sigma_ohm,
        }
    }
}

impl PopulationSpec {
    pub fn population(&self) -> CellPopulation {
        match self.label {
            PopulationLabel::Fresh => CellPopulation::fresh(),
            PopulationLabel::Aged => CellPopulation::aged(),
            PopulationLabel::Custom => CellPopulation::custom(self.mu_ohm, self.sigma_ohm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloSpec {
    pub n_mc: usize,
    pub k_sigma: f64,
    pub method: ThresholdMethod,
    pub n_cells: usize,
    /// Fault levels for evaluation tables.
    pub deltas: Vec<f64>,
    pub fault_mode: FaultMode,
    /// Extra string sizes for evaluation tables; `n_cells` is used when empty.
    pub sizes: Vec<usize>,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self {
            n_mc: DEFAULT_N_MC,
            k_sigma: DEFAULT_K_SIGMA,
            method: ThresholdMethod::NormalFit,
            n_cells: 5,
            deltas: vec![0.6, 1.0],
            fault_mode: FaultMode::ScaleSample,
            sizes: Vec::new(),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub initial_soc: f64,
    pub string: StringSpec,
    pub excitation: ExcitationProfile,
    pub noise: SensorNoise,
    pub filter: FilterSpec,
    pub kalman: KalmanConfig,
    pub persistence: u32,
    pub population: PopulationSpec,
    pub monte_carlo: MonteCarloSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            initial_soc: 1.0,
            string: StringSpec::default(),
            excitation: ExcitationProfile::default(),
            noise: SensorNoise::default(),
            filter: FilterSpec::default(),
            kalman: KalmanConfig::default(),
            persistence: crate::diagnosis::DEFAULT_PERSISTENCE,
            population: PopulationSpec::default(),
            monte_carlo: MonteCarloSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: line_of(text, e.span().map(|s| s.start)),
            reason: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses `text`, then applies `key = value` overrides in order. A value
    /// that is not valid TOML is taken as a bare string.
    pub fn parse_with_overrides(text: &str, origin: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: line_of(text, e.span().map(|s| s.start)),
            reason: e.message().to_string(),
        })?;
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {ov:?} is not key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            let patch: toml::Table = toml::from_str(&format!("{key} = {value}"))
                .or_else(|_| toml::from_str(&format!("{key} = {}", toml::Value::from(value))))
                .map_err(|e| Error::config(format!("override {ov:?}: {}", e.message())))?;
            merge(&mut table, patch);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("{}: {}", origin.display(), e.message())))
    }
}

fn merge(into: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_library_has_four_cells() {
        let lib = CellLibrary::bundled();
        let rs: Vec<f64> = lib.cells.iter().map(|(_, p)| p.rs_ohm).collect();
        assert_eq!(rs, vec![0.0058, 0.0070, 0.0072, 0.0105]);
        let ids: Vec<&str> = lib.cells.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(ids, vec!["1", "2", "3", "4"]);
        assert_eq!(lib.get("4").unwrap().capacity_fade, 0.0748);
    }

    #[test]
    fn cell_file_defaults_fill_in() {
        let lib = CellLibrary::parse("cell.a.rs_ohm = 0.004\n", Path::new("mem")).unwrap();
        let p = lib.get("a").unwrap();
        assert_eq!(*p, CellParams::with_rs(0.004));
    }

    #[test]
    fn cell_file_errors_carry_line() {
        let err = CellLibrary::parse("cell.1.rs_ohm = 0.004\ncell.1.tau_s = nope\n", Path::new("c.cfg")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = CellLibrary::parse("cell.1.rs_ohm = -1.0\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn string_spec_variants() {
        let spec = StringSpec {
            cells: vec!["1".into(), "2".into()],
            ..Default::default()
        };
        let cfg = spec.build(Path::new(".")).unwrap();
        assert!((cfg.theoretical_resistance().unwrap() - 1.0 / (1.0 / 0.0058 + 1.0 / 0.007)).abs() < 1e-15);

        let spec = StringSpec {
            fault_delta: 0.6,
            ..Default::default()
        };
        let cfg = spec.build(Path::new(".")).unwrap();
        assert_eq!(cfg.n(), 5);
        assert!((cfg.cells[0].rs_ohm - 0.0096).abs() < 1e-15);

        let spec = StringSpec {
            cells: vec!["9".into()],
            ..Default::default()
        };
        assert!(spec.build(Path::new(".")).is_err());
    }

    #[test]
    fn scenario_parses_flat_keys() {
        let text = "seed = 7\nstring.cells = [\"1\", \"4\"]\nexcitation.duration_s = 120.0\n\
                    kalman.q_process = 0.0\npopulation.label = \"aged\"\nmonte_carlo.deltas = [0.6]\n";
        let sc = ScenarioConfig::parse(text, Path::new("s.cfg")).unwrap();
        assert_eq!(sc.seed, 7);
        assert_eq!(sc.excitation.duration_s, 120.0);
        assert_eq!(sc.excitation.freq_hz, 0.5);
        assert_eq!(sc.kalman.q_process, 0.0);
        assert_eq!(sc.kalman.r_meas, 1e-6);
        assert_eq!(sc.population.population(), CellPopulation::aged());
        assert_eq!(sc.monte_carlo.deltas, vec![0.6]);
        assert!(ScenarioConfig::parse("bogus = [", Path::new("s.cfg")).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let base = "seed = 1\nkalman.r_meas = 2e-6\n";
        let sc = ScenarioConfig::parse_with_overrides(
            base,
            Path::new("s.cfg"),
            &[
                "seed=5".into(),
                "kalman.q_process = 0".into(),
                "population.label=aged".into(),
                "string.cells=[\"2\",\"3\"]".into(),
                "seed = 6".into(),
            ],
        )
        .unwrap();
        assert_eq!(sc.seed, 6);
        assert_eq!(sc.kalman.r_meas, 2e-6);
        assert_eq!(sc.kalman.q_process, 0.0);
        assert_eq!(sc.population.label, PopulationLabel::Aged);
        assert_eq!(sc.string.cells, vec!["2", "3"]);
        assert!(ScenarioConfig::parse_with_overrides("", Path::new("-"), &["seed".into()]).is_err());
        assert!(ScenarioConfig::parse_with_overrides("", Path::new("-"), &["seed=x".into()]).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed = 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }
}
