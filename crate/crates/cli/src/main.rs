use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use parafault::config::{config_hash, ScenarioConfig};
use parafault::report::{
    write_evaluation_csv, DesignReport, EstimateReport, EvaluationReport, EvaluationRow, RunInfo, SCHEMA_VERSION,
};
use parafault::stats::{
    false_alarm_rate, fit_thresholds_with, healthy_distribution, histogram, missed_detection_rate, write_histogram,
    FaultMode, FaultSpec, ThresholdSet,
};
use parafault::telemetry::{read_telemetry_file, write_telemetry_file};
use parafault::{estimate_resistance, exit_code, simulate_telemetry, write_verdicts_jsonl, DiagnosisConfig, Truth};

/// Exit status for usage and runtime errors, kept apart from the diagnosis codes.
const EXIT_ERROR: u8 = 64;

#[derive(Parser)]
#[command(
    name = "parafault",
    version,
    about = "Resistance-based fault detection for parallel cell strings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a string and write telemetry CSV plus a truth JSON sidecar.
    Simulate(SimulateArgs),
    /// Estimate string resistance from telemetry CSV.
    Estimate(EstimateArgs),
    /// Design thresholds by Monte Carlo over the cell population.
    Design(DesignArgs),
    /// Tabulate false-alarm and missed-detection rates.
    Evaluate(EvaluateArgs),
    /// Run the online diagnosis over telemetry; exit 0 normal, 2 fault, 3 indeterminate.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Clone, Default)]
struct ScenarioArgs {
    /// Scenario file (flat `key = value`).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Override any scenario key, e.g. `--set kalman.q_process=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn resolve(&self, extra: Vec<String>) -> Result<(ScenarioConfig, PathBuf)> {
        let (text, origin) = match &self.config {
            Some(p) => (
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                p.clone(),
            ),
            None => (String::new(), PathBuf::from("<defaults>")),
        };
        let mut overrides = extra;
        overrides.extend(self.set.iter().cloned());
        if let Some(seed) = self.seed {
            overrides.push(format!("seed = {seed}"));
        }
        let cfg = ScenarioConfig::parse_with_overrides(&text, &origin, &overrides)?;
        let base = self
            .config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok((cfg, base))
    }
}

fn push<T: std::fmt::Display>(out: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push(format!("{key} = {v}"));
    }
}

fn toml_list<T: std::fmt::Display>(items: &[T], quote: bool) -> String {
    let parts: Vec<String> = items
        .iter()
        .map(|x| {
            if quote {
                format!("{:?}", x.to_string())
            } else {
                x.to_string()
            }
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Cell ids from the cell library, comma separated.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    /// Cell library file.
    #[arg(long)]
    cells_file: Option<PathBuf>,
    /// Number of identical cells (when --cells is not given).
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long)]
    rs_ohm: Option<f64>,
    /// Relative resistance increase of the first cell.
    #[arg(long)]
    fault_delta: Option<f64>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    initial_soc: Option<f64>,
    #[arg(long)]
    voltage_noise_v: Option<f64>,
    #[arg(long)]
    current_noise_a: Option<f64>,
    /// Telemetry CSV output.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Truth JSON output; defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Per-cell trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    telemetry: PathBuf,
    /// Truth sidecar; `<telemetry>.truth.json` is used when present.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report JSON output; stdout when absent.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Estimator trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Population {
    Fresh,
    Aged,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Normal,
    Quantile,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ScaleSample,
    ScaleMean,
}

#[derive(Args, Clone)]
struct PopulationArgs {
    #[arg(long, value_enum)]
    population: Option<Population>,
    #[arg(long)]
    mu_ohm: Option<f64>,
    #[arg(long)]
    sigma_ohm: Option<f64>,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    k_sigma: Option<f64>,
}

impl PopulationArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = self.population {
            let label = match p {
                Population::Fresh => "fresh",
                Population::Aged => "aged",
                Population::Custom => "custom",
            };
            out.push(format!("population.label = {label:?}"));
        }
        push(&mut out, "population.mu_ohm", self.mu_ohm);
        push(&mut out, "population.sigma_ohm", self.sigma_ohm);
        push(&mut out, "monte_carlo.n_mc", self.n_mc);
        push(&mut out, "monte_carlo.k_sigma", self.k_sigma);
        out
    }
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    population: PopulationArgs,
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Threshold report JSON output.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Histogram CSV output.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    population: PopulationArgs,
    /// String sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_cells: Vec<usize>,
    /// Fault levels, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    delta: Vec<f64>,
    /// Mode listed first in the report; rows for both modes are always written.
    #[arg(long, value_enum)]
    fault_mode: Option<Mode>,
    /// Use these thresholds instead of designing them (single string size only).
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    telemetry: PathBuf,
    /// Threshold JSON, as written by `design` or a bare threshold set.
    #[arg(long, short = 't')]
    thresholds: PathBuf,
    #[arg(long)]
    persistence: Option<u32>,
    /// Verdict JSON-lines output; stdout when absent.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let mut ov = Vec::new();
    if !args.cells.is_empty() {
        ov.push(format!("string.cells = {}", toml_list(&args.cells, true)));
    }
    if let Some(p) = &args.cells_file {
        let abs = std::path::absolute(p)?;
        ov.push(format!("string.cells_file = {:?}", abs.to_string_lossy()));
    }
    push(&mut ov, "string.n_cells", args.n_cells);
    push(&mut ov, "string.rs_ohm", args.rs_ohm);
    push(&mut ov, "string.fault_delta", args.fault_delta);
    push(&mut ov, "excitation.duration_s", args.duration_s);
    push(&mut ov, "initial_soc", args.initial_soc);
    push(&mut ov, "noise.voltage_std_v", args.voltage_noise_v);
    push(&mut ov, "noise.current_std_a", args.current_noise_a);
    let (cfg, base) = args.scenario.resolve(ov)?;

    let string = cfg.string.build(&base)?;
    let sim = simulate_telemetry(&string, &cfg.excitation, cfg.initial_soc, cfg.noise, cfg.seed)?;
    write_telemetry_file(&args.out, &sim.telemetry)?;
    let truth_path = args.truth.unwrap_or_else(|| sidecar(&args.out));
    write_json(Some(&truth_path), &sim.truth)?;
    if let Some(p) = &args.trace {
        let mut w = create(p)?;
        parafault::simulate::write_string_trace(&mut w, &sim.trace)?;
    }
    eprintln!(
        "{} samples, {} cells, theoretical resistance {:.6} mOhm",
        sim.telemetry.len(),
        sim.truth.n_cells,
        sim.truth.theoretical_resistance_ohm * 1e3
    );
    Ok(0)
}

fn read_truth(path: &Path) -> Result<Truth> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn estimate(args: EstimateArgs) -> Result<u8> {
    let (cfg, _) = args.scenario.resolve(Vec::new())?;
    let samples = read_telemetry_file(&args.telemetry)?;
    let run = estimate_resistance(&samples, &cfg.filter, &cfg.kalman)?;
    let truth_path = match args.truth {
        Some(p) => Some(p),
        None => Some(sidecar(&args.telemetry)).filter(|p| p.exists()),
    };
    let truth = truth_path.as_deref().map(read_truth).transpose()?;
    let truth_r = truth.map(|t| t.theoretical_resistance_ohm);
    let report = EstimateReport {
        schema_version: SCHEMA_VERSION,
        run: RunInfo::new(config_hash(&cfg)?, cfg.seed),
        n_samples: samples.len(),
        sample_hz: run.sample_hz,
        rs_hat_ohm: run.estimate.rs_hat_ohm,
        p_var: run.estimate.p_var,
        converged: run.estimate.converged,
        converged_at_s: run.converged_at_s,
        n_updates: run.estimate.n_updates,
        n_rejected: run.estimate.n_rejected,
        truth_resistance_ohm: truth_r,
        error_rel: truth_r.map(|t| (run.estimate.rs_hat_ohm - t) / t),
        filter: cfg.filter,
        kalman: cfg.kalman,
    };
    write_json(args.out.as_deref(), &report)?;
    if let Some(p) = &args.trace {
        let mut w = create(p)?;
        parafault::pipeline::write_estimator_trace(&mut w, &run.trace)?;
    }
    Ok(0)
}

fn design_thresholds(cfg: &ScenarioConfig, n_cells: usize) -> Result<(parafault::StringDistribution, ThresholdSet)> {
    let pop = cfg.population.population();
    let dist = healthy_distribution(&pop, n_cells, cfg.monte_carlo.n_mc, cfg.seed)?;
    let th = fit_thresholds_with(&dist, cfg.monte_carlo.k_sigma, cfg.monte_carlo.method)?;
    Ok((dist, th))
}

fn design(args: DesignArgs) -> Result<u8> {
    let mut ov = args.population.overrides();
    push(&mut ov, "monte_carlo.n_cells", args.n_cells);
    if let Some(m) = args.method {
        let m = match m {
            Method::Normal => "normal_fit",
            Method::Quantile => "empirical_quantile",
        };
        ov.push(format!("monte_carlo.method = {m:?}"));
    }
    let (cfg, _) = args.scenario.resolve(ov)?;
    let pop = cfg.population.population();
    let n = cfg.monte_carlo.n_cells;
    let (dist, thresholds) = design_thresholds(&cfg, n)?;
    let false_alarm = false_alarm_rate(&pop, n, &thresholds, cfg.monte_carlo.n_mc, cfg.seed)?;
    let bins = histogram(&dist.samples);
    if let Some(p) = &args.histogram {
        let mut w = create(p)?;
        write_histogram(&mut w, &bins)?;
    }
    let report = DesignReport {
        schema_version: SCHEMA_VERSION,
        run: RunInfo::new(config_hash(&cfg)?, cfg.seed),
        n_mc: cfg.monte_carlo.n_mc,
        population: pop,
        n_cells: n,
        distribution: dist,
        thresholds,
        false_alarm,
        histogram: bins,
    };
    write_json(Some(&args.out), &report)?;
    eprintln!(
        "mu_s {:.6} mOhm, band [{:.6}, {:.6}] mOhm, FA {:.2}%",
        report.distribution.mu_s * 1e3,
        thresholds.lower_ohm * 1e3,
        thresholds.upper_ohm * 1e3,
        false_alarm.rate * 100.0
    );
    Ok(0)
}

fn read_thresholds(path: &Path) -> Result<ThresholdSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = value.get("thresholds").cloned().unwrap_or(value);
    let th: ThresholdSet =
        serde_json::from_value(inner).with_context(|| format!("{} holds no threshold set", path.display()))?;
    th.validate()?;
    Ok(th)
}

fn evaluate(args: EvaluateArgs) -> Result<u8> {
    let mut ov = args.population.overrides();
    if !args.delta.is_empty() {
        ov.push(format!("monte_carlo.deltas = {}", toml_list(&args.delta, false)));
    }
    match args.n_cells.as_slice() {
        [] => {}
        [n] => ov.push(format!("monte_carlo.n_cells = {n}")),
        many => ov.push(format!("monte_carlo.sizes = {}", toml_list(many, false))),
    }
    if let Some(m) = args.fault_mode {
        let m = match m {
            Mode::ScaleSample => "scale_sample",
            Mode::ScaleMean => "scale_mean",
        };
        ov.push(format!("monte_carlo.fault_mode = {m:?}"));
    }
    let (cfg, _) = args.scenario.resolve(ov)?;
    let mc = &cfg.monte_carlo;
    let pop = cfg.population.population();
    let sizes = if mc.sizes.is_empty() {
        vec![mc.n_cells]
    } else {
        mc.sizes.clone()
    };
    let given = args.thresholds.as_deref().map(read_thresholds).transpose()?;
    if let Some(th) = &given {
        if sizes != [th.provenance.n_cells] {
            bail!(
                "thresholds were designed for {} cells; evaluate them at that size only",
                th.provenance.n_cells
            );
        }
    }
    let modes = match mc.fault_mode {
        FaultMode::ScaleSample => [FaultMode::ScaleSample, FaultMode::ScaleMean],
        FaultMode::ScaleMean => [FaultMode::ScaleMean, FaultMode::ScaleSample],
    };

    let mut rows = Vec::new();
    for &n in &sizes {
        let th = match given {
            Some(th) => th,
            None => design_thresholds(&cfg, n)?.1,
        };
        let fa = false_alarm_rate(&pop, n, &th, mc.n_mc, cfg.seed)?;
        for mode in modes {
            for &delta in &mc.deltas {
                let fault = FaultSpec::single(delta).with_mode(mode);
                let md = missed_detection_rate(&pop, n, &fault, &th, mc.n_mc, cfg.seed)?;
                rows.push(EvaluationRow {
                    n_cells: n,
                    delta_rel: delta,
                    fault_mode: mode,
                    lower_ohm: th.lower_ohm,
                    upper_ohm: th.upper_ohm,
                    false_alarm: fa,
                    missed_detection: md,
                });
            }
        }
    }
    if let Some(p) = &args.csv {
        let mut w = create(p)?;
        write_evaluation_csv(&mut w, &rows)?;
    }
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        run: RunInfo::new(config_hash(&cfg)?, cfg.seed),
        n_mc: mc.n_mc,
        population: pop,
        k_sigma: mc.k_sigma,
        fault_mode: mc.fault_mode,
        fault: FaultSpec::single(mc.deltas.first().copied().unwrap_or(0.0)).with_mode(mc.fault_mode),
        rows,
    };
    write_json(Some(&args.out), &report)?;
    Ok(0)
}

fn diagnose(args: DiagnoseArgs) -> Result<u8> {
    let mut ov = Vec::new();
    push(&mut ov, "persistence", args.persistence);
    let (cfg, _) = args.scenario.resolve(ov)?;
    let thresholds = read_thresholds(&args.thresholds)?;
    let samples = read_telemetry_file(&args.telemetry)?;
    let sample_hz = match parafault::telemetry::sample_period(&samples)? {
        Some(dt) => cfg.filter.sample_hz.unwrap_or(1.0 / dt),
        None => cfg.filter.sample_hz.unwrap_or(parafault::signals::DEFAULT_SAMPLE_HZ),
    };
    let dcfg = DiagnosisConfig {
        filter: cfg.filter,
        kalman: cfg.kalman,
        persistence: cfg.persistence,
        sample_hz,
    };
    let verdicts = parafault::run_online(samples, &dcfg, thresholds)?;
    match &args.out {
        Some(p) => {
            let mut w = create(p)?;
            write_verdicts_jsonl(&mut w, &verdicts)?;
            w.flush()?;
        }
        None => write_verdicts_jsonl(std::io::stdout().lock(), &verdicts)?,
    }
    Ok(exit_code(&verdicts) as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Design(a) => design(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
