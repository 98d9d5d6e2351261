//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use parafault::config::CellLibrary;
use parafault::estimator::{KalmanConfig, ResistanceEstimator};
use parafault::stats::{
    false_alarm_rate, faulty_distribution_on, fit_and_thresholds, healthy_distribution, missed_detection_rate,
    CellPopulation, FaultMode, FaultSpec, StreamPurpose,
};
use parafault::{
    design_highpass, estimate_resistance, parallel_resistance, simulate_telemetry, step_string, ExcitationProfile,
    FilterSpec, SensorNoise, StringConfig, StringState,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};

const N_MC: usize = 10_000;
const SEED: u64 = 2024;

/// Pairs of bundled cells and the resistances reported for them (mΩ, rounded).
const PAIRS: [((usize, usize), f64); 6] = [
    ((1, 2), 3.17),
    ((1, 3), 3.21),
    ((1, 4), 3.74),
    ((2, 3), 3.55),
    ((2, 4), 4.20),
    ((3, 4), 4.27),
];

type Outcome = Result<String, String>;
type Suite = fn() -> Result<(), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct PairRun {
    label: String,
    truth: f64,
    estimate: f64,
    converged_at_s: Option<f64>,
    elapsed_s: f64,
}

fn run_pairs() -> Vec<PairRun> {
    let lib = CellLibrary::bundled();
    PAIRS
        .iter()
        .map(|&((a, b), _)| {
            let start = Instant::now();
            let cells = lib.select(&[a.to_string(), b.to_string()]).unwrap();
            let string = StringConfig::new(cells).unwrap();
            let sim =
                simulate_telemetry(&string, &ExcitationProfile::default(), 1.0, SensorNoise::default(), 0).unwrap();
            let run = estimate_resistance(&sim.telemetry, &FilterSpec::default(), &KalmanConfig::default()).unwrap();
            PairRun {
                label: format!("#{a}+#{b}"),
                truth: sim.truth.theoretical_resistance_ohm,
                estimate: run.estimate.rs_hat_ohm,
                converged_at_s: run.converged_at_s,
                elapsed_s: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn criterion_1(runs: &[PairRun]) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (run, &(_, reported)) in runs.iter().zip(&PAIRS) {
        let err = (run.estimate - run.truth).abs() / run.truth;
        // the closed-form value must round to the published figure
        let rounds = ((run.truth * 1e3) - reported).abs() < 0.005 + 1e-9;
        ok &= err <= 0.02 && rounds && run.elapsed_s < 10.0;
        detail.push(format!(
            "{} est {:.4} mΩ vs {:.4} mΩ err {:.3}%",
            run.label,
            run.estimate * 1e3,
            run.truth * 1e3,
            err * 100.0
        ));
    }
    let text = detail.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_2() -> Outcome {
    let cases = [
        (CellPopulation::fresh(), 1.2e-3, 0.0089),
        (CellPopulation::aged(), 2.2e-3, 0.016),
    ];
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for (pop, mu_target, kappa_target) in cases {
        let d = healthy_distribution(&pop, 5, N_MC, SEED).unwrap();
        let mu_err = (d.mu_s - mu_target).abs() / mu_target;
        let kappa_err = (d.kappa_s - kappa_target).abs() / kappa_target;
        ok &= mu_err <= 0.005 && kappa_err <= 0.10;
        detail.push(format!(
            "{:?}: mu_s {:.4} mΩ ({:.2}%), kappa_s {:.3}% ({:.1}% rel)",
            pop.label,
            d.mu_s * 1e3,
            mu_err * 100.0,
            d.kappa_s * 100.0,
            kappa_err * 100.0
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 1.0;
    detail.push(format!("{elapsed:.2} s"));
    let text = detail.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_3() -> Outcome {
    let pop = CellPopulation::fresh();
    let th = fit_and_thresholds(&healthy_distribution(&pop, 5, N_MC, SEED).unwrap(), 2.0).unwrap();
    let fa = false_alarm_rate(&pop, 5, &th, N_MC, SEED).unwrap();
    let text = format!("FA {:.2}% ± {:.2}% (SE)", fa.rate * 100.0, fa.std_error * 100.0);
    if (fa.rate - 0.046).abs() <= 0.006 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn md_for(pop: &CellPopulation, n: usize, delta: f64, mode: FaultMode) -> (f64, f64) {
    let th = fit_and_thresholds(&healthy_distribution(pop, n, N_MC, SEED).unwrap(), 2.0).unwrap();
    let fault = FaultSpec::single(delta).with_mode(mode);
    let md = missed_detection_rate(pop, n, &fault, &th, N_MC, SEED).unwrap();
    (md.rate, md.std_error)
}

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for pop in [CellPopulation::fresh(), CellPopulation::aged()] {
        for delta in [0.6, 1.0] {
            for mode in [FaultMode::ScaleSample, FaultMode::ScaleMean] {
                let (md, _) = md_for(&pop, 5, delta, mode);
                ok &= md == 0.0;
                detail.push(format!("{:?} d={delta} {mode:?}: MD {:.2}%", pop.label, md * 100.0));
            }
        }
    }
    let text = detail.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_5() -> Outcome {
    let pop = CellPopulation::aged();
    let mut any_mode = false;
    let mut detail = Vec::new();
    for mode in [FaultMode::ScaleSample, FaultMode::ScaleMean] {
        let (md6, se6) = md_for(&pop, 10, 0.6, mode);
        let (md10, se10) = md_for(&pop, 10, 1.0, mode);
        let inside = (md6 - 0.0725).abs() <= 0.015 && (md10 - 0.004).abs() <= 0.004;
        any_mode |= inside;
        detail.push(format!(
            "{mode:?}: d=0.6 MD {:.2}% (SE {:.2}), d=1.0 MD {:.2}% (SE {:.2}) {}",
            md6 * 100.0,
            se6 * 100.0,
            md10 * 100.0,
            se10 * 100.0,
            if inside { "in tolerance" } else { "out of tolerance" }
        ));
    }
    let text = detail.join("; ");
    if any_mode {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_6() -> Outcome {
    let (md, se) = md_for(&CellPopulation::aged(), 80, 0.6, FaultMode::ScaleSample);
    let text = format!("MD {:.2}% (SE {:.2})", md * 100.0, se * 100.0);
    if md > 0.40 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_7(runs: &[PairRun]) -> Outcome {
    let mut ok = true;
    let detail: Vec<String> = runs
        .iter()
        .map(|r| {
            ok &= r.converged_at_s.is_some_and(|t| t <= 150.0);
            match r.converged_at_s {
                Some(t) => format!("{} {t:.1} s", r.label),
                None => format!("{} never", r.label),
            }
        })
        .collect();
    let text = detail.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn runner() -> TestRunner {
    TestRunner::new(RunnerConfig {
        cases: 256,
        failure_persistence: None,
        ..RunnerConfig::default()
    })
}

fn check(name: &str, result: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>) -> Result<(), String> {
    result.map_err(|e| format!("{name}: {e}"))
}

fn resistances() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-4..1.0f64, 1..12)
}

fn prop_parallel_resistance() -> Result<(), String> {
    check(
        "parallel bounds",
        runner().run(&resistances(), |rs| {
            let r = parallel_resistance(&rs).unwrap();
            let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(r <= min * (1.0 + 1e-12));
            prop_assert!(r >= min / rs.len() as f64 * (1.0 - 1e-12));
            Ok(())
        }),
    )?;
    check(
        "parallel monotone",
        runner().run(
            &(resistances(), any::<prop::sample::Index>(), 1e-3..2.0f64),
            |(rs, idx, bump)| {
                let mut up = rs.clone();
                let k = idx.index(rs.len());
                up[k] *= 1.0 + bump;
                prop_assert!(parallel_resistance(&up).unwrap() >= parallel_resistance(&rs).unwrap());
                Ok(())
            },
        ),
    )?;
    check(
        "parallel permutation",
        runner().run(
            &resistances()
                .prop_shuffle()
                .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
            |(a, b)| {
                let (ra, rb) = (parallel_resistance(&a).unwrap(), parallel_resistance(&b).unwrap());
                prop_assert!((ra - rb).abs() <= 1e-12 * ra);
                Ok(())
            },
        ),
    )
}

fn prop_current_conservation() -> Result<(), String> {
    let strategy = (
        prop::collection::vec((3e-3..12e-3f64, 0.0..0.08f64, 0.0..1.0f64), 1..10),
        prop::collection::vec(-60.0..60.0f64, 1..50),
    );
    check(
        "current conservation",
        runner().run(&strategy, |(cells, currents)| {
            let params = cells
                .iter()
                .map(|&(rs, fade, _)| parafault::CellParams {
                    capacity_fade: fade,
                    ..parafault::CellParams::with_rs(rs)
                })
                .collect();
            let cfg = StringConfig::new(params).unwrap();
            let states = cells
                .iter()
                .map(|&(_, _, soc)| parafault::CellState::at_soc(soc))
                .collect();
            let mut st = StringState::from_cells(&cfg, states);
            for &i in &currents {
                st = step_string(&cfg, &st, i, 0.1).unwrap();
                let sum: f64 = st.cell_currents.iter().sum();
                let scale = st
                    .cell_currents
                    .iter()
                    .map(|c| c.abs())
                    .sum::<f64>()
                    .max(i.abs())
                    .max(1.0);
                prop_assert!((sum - i).abs() <= 1e-9 * scale, "sum {} vs {}", sum, i);
            }
            Ok(())
        }),
    )
}

fn prop_filter() -> Result<(), String> {
    let hp = design_highpass(0.05, 10.0, 2).unwrap();
    let dc = hp.gain_at(0.0);
    let cut = hp.gain_at(0.05);
    if dc > 1e-12 {
        return Err(format!("filter DC gain {dc:e}"));
    }
    if (cut - std::f64::consts::FRAC_1_SQRT_2).abs() > 1e-6 {
        return Err(format!("filter gain at cutoff {cut}"));
    }
    let mut f = hp.fresh();
    let last = (0..6000).map(|_| f.process(3.7)).last().unwrap();
    if last.abs() > 1e-6 {
        return Err(format!("constant input leaves {last:e} after 600 s"));
    }
    check(
        "filter 3 dB",
        runner().run(&(0.01..1.0f64, 2.0..50.0f64, 1..6usize), |(fc, fs, order)| {
            prop_assume!(fc < 0.4 * fs);
            let hp = design_highpass(fc, fs, order).unwrap();
            prop_assert!((hp.gain_at(fc) - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-6);
            prop_assert!(hp.gain_at(0.0) <= 1e-12);
            Ok(())
        }),
    )
}

fn kf_run(cfg: KalmanConfig, v: &[f64], i: &[f64]) -> f64 {
    let mut est = ResistanceEstimator::new(cfg, 0.1).unwrap();
    for (&v, &i) in v.iter().zip(i) {
        est.step(v, i);
    }
    est.estimate().rs_hat_ohm
}

fn prop_kf_scale() -> Result<(), String> {
    check(
        "KF scale equivariance",
        runner().run(&(1e-3..20e-3f64, 0.1..10.0f64, 0.5..20.0f64), |(r, c, amp)| {
            let base = KalmanConfig {
                warmup_s: 0.0,
                ..KalmanConfig::default()
            };
            let i: Vec<f64> = (0..600)
                .map(|k| amp * (std::f64::consts::PI * k as f64 * 0.1).sin())
                .collect();
            let v: Vec<f64> = i.iter().map(|x| -r * x).collect();
            let vs: Vec<f64> = v.iter().map(|x| c * x).collect();
            let scaled = KalmanConfig {
                rs0_ohm: c * base.rs0_ohm,
                p0_var: c * c * base.p0_var,
                q_process: c * c * base.q_process,
                r_meas: c * c * base.r_meas,
                ..base
            };
            let a = kf_run(base, &v, &i);
            let b = kf_run(scaled, &vs, &i);
            prop_assert!((b - c * a).abs() <= 1e-6 * (c * a).abs(), "{} vs {}", b, c * a);
            Ok(())
        }),
    )
}

fn prop_seed_determinism() -> Result<(), String> {
    let pop = CellPopulation::aged();
    let draw = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let h = healthy_distribution(&pop, 10, 4000, 77).unwrap();
                let f = faulty_distribution_on(&pop, 10, &FaultSpec::single(0.6), 4000, 77, StreamPurpose::Evaluation)
                    .unwrap();
                (h.samples, f.samples)
            })
    };
    let one = draw(1);
    for threads in [2, 4, 7] {
        if draw(threads) != one {
            return Err(format!("samples differ between 1 and {threads} workers"));
        }
    }
    Ok(())
}

fn prop_delta_method() -> Result<(), String> {
    for pop in [CellPopulation::fresh(), CellPopulation::aged()] {
        for n in [2, 5, 10, 20, 80] {
            let d = healthy_distribution(&pop, n, N_MC, SEED + n as u64).unwrap();
            let mu = pop.mu_ohm / n as f64;
            let kappa = pop.kappa() / (n as f64).sqrt();
            let (e_mu, e_k) = ((d.mu_s - mu).abs() / mu, (d.kappa_s - kappa).abs() / kappa);
            if e_mu > 0.02 || e_k > 0.02 {
                return Err(format!(
                    "delta method {:?} N={n}: mu err {:.3}%, kappa err {:.3}%",
                    pop.label,
                    e_mu * 100.0,
                    e_k * 100.0
                ));
            }
        }
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    let suites: [(&str, Suite); 6] = [
        ("parallel resistance", prop_parallel_resistance),
        ("current conservation", prop_current_conservation),
        ("filter", prop_filter),
        ("KF scale", prop_kf_scale),
        ("MC determinism", prop_seed_determinism),
        ("delta method", prop_delta_method),
    ];
    let mut failures = Vec::new();
    for (name, suite) in suites {
        if let Err(e) = suite() {
            failures.push(format!("{name}: {e}"));
        }
    }
    if failures.is_empty() {
        Ok(format!("{} suites", suites.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn main() {
    let runs = run_pairs();
    let criteria: Vec<Criterion> = vec![
        (
            "1 string resistance estimates within 2%",
            Box::new(|| criterion_1(&runs)),
        ),
        ("2 string distribution moments, 5 cells", Box::new(criterion_2)),
        ("3 false alarm at k=2", Box::new(criterion_3)),
        ("4 no missed detection, 5 cells", Box::new(criterion_4)),
        ("5 missed detection, 10-cell aged", Box::new(criterion_5)),
        ("6 missed detection above 40%, 80-cell aged", Box::new(criterion_6)),
        ("7 convergence within 150 s", Box::new(|| criterion_7(&runs))),
        ("8 property suites", Box::new(criterion_8)),
    ];

    let mut failed = 0;
    for (name, f) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
