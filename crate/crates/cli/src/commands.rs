use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qvetrain::analysis::{
    reduced_chi_squared, write_overlay_csv, ChiSquaredMode, GaussianFit, RoiMetrics,
};
use qvetrain::ensemble::{run_ensemble_with, run_seeds, EnsembleOptions};
use qvetrain::pulse::{substream_seed, write_delays_csv};
use qvetrain::spectrum::{
    read_spectrum_csv, single_pulse_reference, spectrum_file_name, write_spectrum_csv, TrainMeta,
};
use qvetrain::{
    build_train, compute_spectrum, fit_gaussian, integrate_mode, oracle_integrate, realize,
    roi_metrics, scaling_benchmark, sweep_sigma, DelayVector, Momentum, PulseTrain,
};
use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::{sha256_hex, OutputDir, SeedRecord, ARTIFACT, VERSION};

/// What a command produced besides its files.
#[derive(Debug, Default)]
pub struct Outcome {
    pub seeds: Vec<SeedRecord>,
    /// Human-readable summary for stdout.
    pub lines: Vec<String>,
    /// Set when outputs were written but the command's check failed.
    pub failure: Option<CliError>,
}

type Echo = Vec<(String, String)>;

fn echo(cfg: &Config, command: &str) -> Echo {
    let g = &cfg.grid;
    let s = &cfg.solver;
    let mut e: Echo = vec![
        ("artifact".into(), format!("{ARTIFACT} {VERSION}")),
        ("command".into(), command.into()),
        ("e0".into(), num(cfg.physical.e0)),
        ("tau".into(), num(cfg.physical.tau)),
        ("n_pulses".into(), cfg.train.n_pulses.to_string()),
        ("mu_t".into(), num(cfg.train.mu_t)),
        ("sigma_t".into(), num(cfg.train.sigma_t)),
        ("seed".into(), cfg.train.seed.to_string()),
        ("p_perp".into(), num(g.p_perp)),
        (
            "p3_grid".into(),
            format!("[{:?}, {:?}] x {}", g.p3_min, g.p3_max, g.n_points),
        ),
        ("rel_tol".into(), num(s.rel_tol)),
        ("abs_tol_f".into(), num(s.abs_tol_f)),
        ("abs_tol_uv".into(), num(s.abs_tol_uv)),
        ("margin_factor".into(), num(s.margin_factor)),
        ("drift_bound".into(), num(s.drift_bound)),
    ];
    if let Some(h) = s.max_step {
        e.push(("max_step".into(), num(h)));
    }
    e
}

fn list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| num(v)).collect();
    format!("[{}]", parts.join(", "))
}

/// Shortest round-trip form, e.g. `20.0`, `1e-10`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// `# key = value` block, header row, then rows.
fn table(echo: &Echo, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut s = String::new();
    for (k, v) in echo {
        writeln!(s, "# {k} = {v}").unwrap();
    }
    writeln!(s, "{}", header.join(",")).unwrap();
    for r in rows {
        writeln!(s, "{}", r.join(",")).unwrap();
    }
    s.into_bytes()
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text.into_bytes()
}

fn reject_explicit_delays(cfg: &Config, command: &str) -> Result<(), CliError> {
    if cfg.run.delays.is_some() {
        return Err(CliError::Config(format!(
            "run.delays fixes one realization; `{command}` samples its own"
        )));
    }
    Ok(())
}

fn train_for(cfg: &Config) -> Result<PulseTrain, CliError> {
    Ok(match &cfg.run.delays {
        Some(d) => build_train(cfg.physical, cfg.train, DelayVector::explicit(d.clone()))?,
        None => realize(cfg.physical, cfg.train, cfg.run.run_index),
    })
}

pub fn spectrum(cfg: &Config, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let pt = train_for(cfg)?;
    let s = compute_spectrum(&cfg.grid, &pt, &cfg.solver)?;
    let explicit = cfg.run.delays.is_some();
    let name = if explicit {
        format!(
            "spectrum_N{}_sigma{}_delays.csv",
            cfg.train.n_pulses, cfg.train.sigma_t
        )
    } else {
        spectrum_file_name(&TrainMeta::of(&pt))
    };
    let mut e = echo(cfg, "spectrum");
    e.push(("run_index".into(), cfg.run.run_index.to_string()));
    e.push(("delays".into(), list(&pt.delays.values)));
    e.push(("explicit_delays".into(), explicit.to_string()));
    let mut csv = Vec::new();
    write_spectrum_csv(&mut csv, &s.p3(), &s.values, &e).expect("in-memory write");
    out.write(&name, &csv)?;

    let mut delays = Vec::new();
    write_delays_csv(&mut delays, &pt)?;
    out.write(&name.replacen("spectrum", "delays", 1), &delays)?;

    let drift = s.drift.iter().copied().fold(0.0, f64::max);
    let mut outcome = Outcome {
        lines: vec![
            format!("wrote {name}"),
            format!("max f = {:e}", s.max_value()),
            format!("max invariant drift = {drift:e}"),
        ],
        ..Default::default()
    };
    if let Some(c) = s.central_value() {
        outcome.lines.push(format!("f(p3 = 0) = {c:e}"));
    }
    if !explicit {
        outcome.seeds.push(SeedRecord {
            master_seed: cfg.train.seed,
            run_seeds: vec![substream_seed(cfg.train.seed, cfg.run.run_index)],
        });
    }
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct FitReport {
    runs: usize,
    fit: GaussianFit,
    roi: RoiMetrics,
    central: Option<f64>,
}

fn fit_row(report: &FitReport) -> Vec<String> {
    let f = &report.fit;
    let e = &f.std_errors;
    vec![
        report.runs.to_string(),
        sci(f.n0()),
        sci(e.n0),
        sci(f.p3_bar()),
        sci(e.p3_bar),
        sci(f.s()),
        sci(e.s),
        sci(f.chi2_red_relative),
        sci(f.chi2_red_absolute),
        report.central.map_or("nan".into(), sci),
        sci(report.roi.max_residual_amplitude),
        sci(report.roi.chi2_red_roi),
        report.roi.n_points.to_string(),
        f.n_iterations.to_string(),
        f.converged.to_string(),
    ]
}

const FIT_HEADER: &[&str] = &[
    "runs",
    "N0",
    "N0_err",
    "p3_bar",
    "p3_bar_err",
    "S",
    "S_err",
    "chi2_red_relative",
    "chi2_red_absolute",
    "central",
    "roi_max_residual",
    "roi_chi2_red",
    "roi_points",
    "iterations",
    "converged",
];

fn fit_spectrum(
    cfg: &Config,
    p3: &[f64],
    values: &[f64],
    runs: usize,
    central: Option<f64>,
) -> Result<FitReport, CliError> {
    let fit = fit_gaussian(p3, values, None)?;
    let roi = roi_metrics(p3, values, &fit.params, (cfg.fit.roi[0], cfg.fit.roi[1]))?;
    Ok(FitReport {
        runs,
        fit,
        roi,
        central,
    })
}

pub fn ensemble(cfg: &Config, out: &mut OutputDir) -> Result<Outcome, CliError> {
    reject_explicit_delays(cfg, "ensemble")?;
    let n = cfg.run.runs;
    let mut counts: Vec<usize> = cfg
        .run
        .batch
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k < n)
        .chain([n])
        .collect();
    counts.sort_unstable();
    counts.dedup();
    let opts = EnsembleOptions {
        keep_runs: false,
        snapshots: counts.clone(),
    };
    let res = run_ensemble_with(&cfg.grid, cfg.physical, cfg.train, n, &cfg.solver, &opts)?;
    let p3 = cfg.grid.points();
    let zero = cfg.grid.zero_index();

    let stem = format!(
        "ensemble_N{}_sigma{}_runs{}_seed{}",
        cfg.train.n_pulses, cfg.train.sigma_t, n, cfg.train.seed
    );
    let mut e = echo(cfg, "ensemble");
    e.push(("runs".into(), n.to_string()));

    let mut csv = Vec::new();
    write_spectrum_csv(&mut csv, &p3, &res.mean, &e).expect("in-memory write");
    out.write(&format!("{stem}.csv"), &csv)?;

    let mut header = vec!["run_index".to_string(), "substream_seed".to_string()];
    header.extend((1..=cfg.train.n_pulses).map(|k| format!("T_{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = res
        .runs
        .iter()
        .map(|r| {
            let mut row = vec![r.run_index.to_string(), r.substream_seed.to_string()];
            row.extend(r.delays.iter().map(|&t| sci(t)));
            row
        })
        .collect();
    out.write(&format!("{stem}_runs.csv"), &table(&e, &header, &rows))?;

    let mut reports = Vec::new();
    for (k, values) in &res.snapshots {
        let central = zero.map(|i| values[i]);
        reports.push(fit_spectrum(cfg, &p3, values, *k, central)?);
    }
    let rows: Vec<Vec<String>> = reports.iter().map(fit_row).collect();
    out.write(
        &format!("{stem}_convergence.csv"),
        &table(&e, FIT_HEADER, &rows),
    )?;

    let last = reports.last().expect("final count is always snapshotted");
    let mut overlay = Vec::new();
    write_overlay_csv(&mut overlay, &p3, &res.mean, &last.fit.params, &e)?;
    out.write(&format!("{stem}_overlay.csv"), &overlay)?;
    out.write(&format!("{stem}_fit.json"), &json(&reports))?;

    let f = &last.fit;
    let mut lines = vec![
        format!("wrote {stem}.csv and fit reports"),
        format!(
            "{:>6} {:>12} {:>10} {:>10} {:>12}",
            "runs", "N0", "p3_bar", "S", "chi2_rel"
        ),
    ];
    for r in &reports {
        lines.push(format!(
            "{:>6} {:>12.5e} {:>10.5} {:>10.5} {:>12.4e}",
            r.runs,
            r.fit.n0(),
            r.fit.p3_bar(),
            r.fit.s(),
            r.fit.chi2_red_relative
        ));
    }
    lines.push(format!(
        "S = {:.5} ± {:.5}, ROI max residual = {:e}",
        f.s(),
        f.std_errors.s,
        last.roi.max_residual_amplitude
    ));
    if let Some(c) = last.central {
        lines.push(format!("mean f(p3 = 0) = {c:e}"));
    }
    Ok(Outcome {
        seeds: vec![SeedRecord {
            master_seed: cfg.train.seed,
            run_seeds: run_seeds(cfg.train.seed, n),
        }],
        lines,
        failure: None,
    })
}

pub fn sweep(cfg: &Config, out: &mut OutputDir) -> Result<Outcome, CliError> {
    reject_explicit_delays(cfg, "sweep")?;
    let sw = &cfg.sweep;
    let mut outcome = Outcome::default();
    for &seed in &sw.seeds {
        let base = qvetrain::TrainParams { seed, ..cfg.train };
        let curve = sweep_sigma(sw.p3, cfg.physical, base, &sw.sigmas, sw.runs, &cfg.solver)?;
        let mut e = echo(cfg, "sweep");
        e.retain(|(k, _)| k != "sigma_t" && k != "seed" && k != "p3_grid");
        e.push(("seed".into(), seed.to_string()));
        e.push(("runs".into(), sw.runs.to_string()));
        e.push(("p3".into(), num(sw.p3)));
        e.push(("reference".into(), sci(curve.reference)));
        let rows: Vec<Vec<String>> = curve
            .points
            .iter()
            .map(|p| {
                vec![
                    sci(p.sigma_t),
                    sci(p.mean),
                    sci(p.ratio),
                    sci(p.min_ratio),
                    sci(p.median_ratio),
                    sci(p.max_ratio),
                ]
            })
            .collect();
        let name = format!(
            "sweep_N{}_runs{}_seed{}.csv",
            cfg.train.n_pulses, sw.runs, seed
        );
        out.write(
            &name,
            &table(
                &e,
                &[
                    "sigma_t",
                    "mean",
                    "ratio",
                    "min_ratio",
                    "median_ratio",
                    "max_ratio",
                ],
                &rows,
            ),
        )?;
        let best = curve
            .points
            .iter()
            .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
            .expect("at least one sigma");
        outcome.lines.push(format!(
            "seed {seed}: reference {:e}, largest ratio {:.4e} at sigma_t = {}",
            curve.reference, best.ratio, best.sigma_t
        ));
        outcome.seeds.push(SeedRecord {
            master_seed: seed,
            run_seeds: run_seeds(seed, sw.runs),
        });
    }
    Ok(outcome)
}

pub fn fit(cfg: &Config, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let input = cfg
        .fit
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("fit needs fit.input or --input".into()))?;
    let bytes = fs::read(input).map_err(CliError::io(input))?;
    let (p3, values) = read_spectrum_csv(bytes.as_slice())?;
    let central = p3.iter().position(|&p| p == 0.0).map(|i| values[i]);
    let report = fit_spectrum(cfg, &p3, &values, 0, central)?;

    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input")
        .to_string();
    let e: Echo = vec![
        ("artifact".into(), format!("{ARTIFACT} {VERSION}")),
        ("command".into(), "fit".into()),
        ("input".into(), display_name(input)),
        ("input_sha256".into(), sha256_hex(&bytes)),
        ("roi".into(), list(&cfg.fit.roi)),
    ];
    let mut overlay = Vec::new();
    write_overlay_csv(&mut overlay, &p3, &values, &report.fit.params, &e)?;
    out.write(&format!("fit_{stem}_overlay.csv"), &overlay)?;
    let mut row = fit_row(&report);
    row.remove(0);
    out.write(
        &format!("fit_{stem}.csv"),
        &table(&e, &FIT_HEADER[1..], &[row]),
    )?;

    let f = &report.fit;
    let abs = reduced_chi_squared(&p3, &values, &f.params, ChiSquaredMode::Absolute);
    Ok(Outcome {
        lines: vec![
            format!("N0 = {:e} ± {:e}", f.n0(), f.std_errors.n0),
            format!("p3_bar = {:e} ± {:e}", f.p3_bar(), f.std_errors.p3_bar),
            format!("S = {:e} ± {:e}", f.s(), f.std_errors.s),
            format!(
                "chi2_red relative = {:e}, absolute = {abs:e}",
                f.chi2_red_relative
            ),
            format!(
                "ROI max residual = {:e}, ROI chi2_red = {:e}",
                report.roi.max_residual_amplitude, report.roi.chi2_red_roi
            ),
        ],
        ..Default::default()
    })
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct BenchmarkSummary {
    n_pulses: usize,
    sigma_t: f64,
    runs: usize,
    factor: f64,
    target_central: f64,
    single_central: f64,
    ratio: f64,
    regime: qvetrain::analysis::Regime,
}

pub fn benchmark(cfg: &Config, out: &mut OutputDir) -> Result<Outcome, CliError> {
    reject_explicit_delays(cfg, "benchmark")?;
    let n = cfg.train.n_pulses;
    let regular = cfg.train.sigma_t == 0.0;
    let single = single_pulse_reference(&cfg.grid, cfg.physical, cfg.train.mu_t, &cfg.solver)?;
    let (target, runs, seeds) = if regular {
        let pt = build_train(
            cfg.physical,
            cfg.train,
            DelayVector::regular(n, cfg.train.mu_t),
        )?;
        (compute_spectrum(&cfg.grid, &pt, &cfg.solver)?, 1, vec![])
    } else {
        let runs = cfg.run.runs;
        let res = run_ensemble_with(
            &cfg.grid,
            cfg.physical,
            cfg.train,
            runs,
            &cfg.solver,
            &EnsembleOptions::default(),
        )?;
        let seeds = vec![SeedRecord {
            master_seed: cfg.train.seed,
            run_seeds: run_seeds(cfg.train.seed, runs),
        }];
        (res.mean_spectrum(), runs, seeds)
    };
    let nf = n as f64;
    let factor = cfg.benchmark.factor.unwrap_or(if regular {
        nf * nf
    } else {
        (2.0 * nf + 1.0) / 2.0
    });
    let report = scaling_benchmark(&target, &single, factor, n)?;

    let mut e = echo(cfg, "benchmark");
    e.push(("runs".into(), runs.to_string()));
    e.push(("factor".into(), num(factor)));
    let rows: Vec<Vec<String>> = (0..cfg.grid.n_points)
        .map(|i| {
            vec![
                sci(cfg.grid.point(i)),
                sci(target.values[i]),
                sci(single.values[i]),
                sci(report.scaled_single[i]),
            ]
        })
        .collect();
    let stem = format!("benchmark_N{n}_sigma{}", cfg.train.sigma_t);
    out.write(
        &format!("{stem}.csv"),
        &table(&e, &["p3", "target", "single", "scaled_single"], &rows),
    )?;
    let summary = BenchmarkSummary {
        n_pulses: n,
        sigma_t: cfg.train.sigma_t,
        runs,
        factor,
        target_central: report.target_central,
        single_central: report.single_central,
        ratio: report.ratio,
        regime: report.regime,
    };
    out.write(&format!("{stem}.json"), &json(&summary))?;
    Ok(Outcome {
        seeds,
        lines: vec![
            format!(
                "central ratio = {:.4} (factor {factor}), regime {:?}",
                report.ratio, report.regime
            ),
            format!(
                "target f(0) = {:e}, single f(0) = {:e}",
                report.target_central, report.single_central
            ),
        ],
        failure: None,
    })
}

pub fn oracle_check(cfg: &Config, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let oc = &cfg.oracle;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for &n in &oc.n_pulses {
        if n == 0 {
            return Err(CliError::Config(
                "oracle.n_pulses entries must be >= 1".into(),
            ));
        }
        let train = cfg.train.with_pulses(n).with_sigma(0.0);
        let pt = build_train(cfg.physical, train, DelayVector::regular(n, train.mu_t))?;
        // kinetic momentum measured at the middle pulse's peak
        let shift = pt.resonant_momentum(n.div_ceil(2));
        for &q in &oc.momenta {
            let p = Momentum::new(cfg.grid.p_perp, q + shift);
            let ode = integrate_mode(p, &pt, &cfg.solver)?.f_out;
            let (quad, change, diag) = match oracle_integrate(p, &pt, oc.step) {
                Ok(r) => (r.f_out, r.rel_change, None),
                Err(
                    err @ qvetrain::oracle::OracleError::NonConvergent {
                        fine, rel_change, ..
                    },
                ) => (fine, rel_change, Some(err.to_string())),
                Err(err) => return Err(err.into()),
            };
            let scale = ode.abs().max(quad.abs());
            let dev = if scale == 0.0 {
                0.0
            } else {
                (ode - quad).abs() / scale
            };
            let pass = diag.is_none() && dev < oc.tolerance;
            let status = if pass { "PASS" } else { "FAIL" };
            lines.push(format!(
                "{status} N = {n} p3 = {q:+.3}: ode {ode:.6e} quadrature {quad:.6e} rel dev {dev:.2e}"
            ));
            if let Some(d) = &diag {
                lines.push(format!("     {d}"));
            }
            if !pass {
                failures.push(format!(
                    "N = {n}, p3 = {q}: {}",
                    diag.unwrap_or_else(|| format!("relative deviation {dev:e}"))
                ));
            }
            rows.push(vec![
                n.to_string(),
                sci(q),
                sci(q + shift),
                sci(ode),
                sci(quad),
                sci(dev),
                sci(change),
                status.to_string(),
            ]);
        }
    }
    let mut e = echo(cfg, "oracle-check");
    e.retain(|(k, _)| k != "n_pulses" && k != "sigma_t" && k != "seed" && k != "p3_grid");
    e.push(("oracle_step".into(), num(oc.step)));
    e.push(("tolerance".into(), num(oc.tolerance)));
    out.write(
        "oracle_check.csv",
        &table(
            &e,
            &[
                "n_pulses",
                "p3",
                "canonical_p3",
                "f_ode",
                "f_quadrature",
                "rel_deviation",
                "quadrature_step_change",
                "status",
            ],
            &rows,
        ),
    )?;
    let failure = (!failures.is_empty()).then(|| {
        CliError::Solver(format!(
            "oracle check failed at {} of {} momenta: {}",
            failures.len(),
            rows.len(),
            failures.join("; ")
        ))
    });
    lines.push(if failure.is_none() {
        "oracle check: PASS".into()
    } else {
        "oracle check: FAIL".into()
    });
    Ok(Outcome {
        lines,
        failure,
        ..Default::default()
    })
}
