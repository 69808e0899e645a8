//! `qvetrain` command-line front end.
//!
//! Every subcommand loads a layered configuration (TOML file, then
//! `QVETRAIN_<SECTION>__<KEY>` environment variables, then flags), writes its
//! CSV/JSON outputs into `--out`, and records a `<command>_manifest.json`
//! with the effective configuration, seeds and output hashes. `replay`
//! re-runs a manifest and checks the hashes.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 solver error or failed check,
//! 4 I/O error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qvetrain::ensemble::with_workers;

use config::Config;
use error::CliError;
use manifest::{sha256_hex, OutputDir, RunManifest, ARTIFACT, VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "qvetrain",
    version,
    about = "Pair production spectra for stochastic alternating-sign Sauter pulse trains"
)]
struct Cli {
    /// TOML configuration file; omitted sections take reference values.
    #[arg(long, short, global = true, env = "QVETRAIN_CONFIG")]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set grid.n_points=201`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "QVETRAIN_WORKERS")]
    workers: Option<usize>,
    /// Output directory [default: out, or <manifest dir>/replay for replay].
    #[arg(long, short, global = true, env = "QVETRAIN_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct TrainFlags {
    #[arg(long)]
    n_pulses: Option<usize>,
    #[arg(long)]
    sigma_t: Option<f64>,
    #[arg(long)]
    mu_t: Option<f64>,
    /// Master seed (0 ..= 2^63 - 1).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    e0: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

impl TrainFlags {
    fn push(&self, o: &mut Vec<(String, String)>) {
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("train.n_pulses", self.n_pulses.map(|v| v.to_string()));
        put("train.sigma_t", self.sigma_t.map(float));
        put("train.mu_t", self.mu_t.map(float));
        put("train.seed", self.seed.map(|v| v.to_string()));
        put("physical.e0", self.e0.map(float));
        put("grid.n_points", self.points.map(|v| v.to_string()));
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One realization's spectrum on the momentum grid.
    Spectrum {
        /// Explicit delays (`k,T_k` CSV) instead of sampling.
        #[arg(long)]
        delays: Option<PathBuf>,
        #[arg(long)]
        run_index: Option<u64>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Ensemble mean spectrum with Gaussian fit, ROI and convergence table.
    Ensemble {
        #[arg(long)]
        runs: Option<usize>,
        /// Run counts for the convergence table, e.g. `10,30,50`.
        #[arg(long, value_delimiter = ',')]
        batch: Vec<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Normalized mean f at one momentum against σ_T.
    Sweep {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Vec<f64>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Gaussian fit and ROI residuals of an existing spectrum CSV.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Central-peak ratio against the single-pulse spectrum.
    Benchmark {
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Compares the ODE route with direct quadrature of the memory integral.
    OracleCheck {
        #[arg(long)]
        step: Option<f64>,
    },
    /// Re-runs a manifest and compares output hashes.
    Replay { manifest: PathBuf },
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn path_value(p: &Path) -> Result<String, CliError> {
    let abs = std::path::absolute(p).map_err(CliError::io(p))?;
    Ok(toml::Value::String(abs.to_string_lossy().into_owned()).to_string())
}

fn list<T: ToString>(v: &[T]) -> String {
    let parts: Vec<String> = v.iter().map(ToString::to_string).collect();
    format!("[{}]", parts.join(", "))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum { .. } => "spectrum",
            Command::Ensemble { .. } => "ensemble",
            Command::Sweep { .. } => "sweep",
            Command::Fit { .. } => "fit",
            Command::Benchmark { .. } => "benchmark",
            Command::OracleCheck { .. } => "oracle-check",
            Command::Replay { .. } => "replay",
        }
    }

    fn overrides(&self, o: &mut Vec<(String, String)>) -> Result<(), CliError> {
        match self {
            Command::Spectrum {
                delays,
                run_index,
                train,
            } => {
                train.push(o);
                if let Some(d) = delays {
                    o.push(("run.delays_file".into(), path_value(d)?));
                }
                if let Some(r) = run_index {
                    o.push(("run.run_index".into(), r.to_string()));
                }
            }
            Command::Ensemble { runs, batch, train } => {
                train.push(o);
                if let Some(r) = runs {
                    o.push(("run.runs".into(), r.to_string()));
                }
                if !batch.is_empty() {
                    o.push(("run.batch".into(), list(batch)));
                }
            }
            Command::Sweep {
                runs,
                seeds,
                sigmas,
                train,
            } => {
                train.push(o);
                if let Some(r) = runs {
                    o.push(("sweep.runs".into(), r.to_string()));
                }
                if !seeds.is_empty() {
                    o.push(("sweep.seeds".into(), list(seeds)));
                }
                if !sigmas.is_empty() {
                    let s: Vec<String> = sigmas.iter().map(|&v| float(v)).collect();
                    o.push(("sweep.sigmas".into(), format!("[{}]", s.join(", "))));
                }
            }
            Command::Fit { input } => {
                if let Some(i) = input {
                    o.push(("fit.input".into(), path_value(i)?));
                }
            }
            Command::Benchmark { runs, train } => {
                train.push(o);
                if let Some(r) = runs {
                    o.push(("run.runs".into(), r.to_string()));
                }
            }
            Command::OracleCheck { step } => {
                if let Some(s) = step {
                    o.push(("oracle.step".into(), float(*s)));
                }
            }
            Command::Replay { .. } => {}
        }
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs `command` into `dir` and writes its manifest.
fn execute(
    command: &str,
    cfg: &Config,
    dir: &Path,
    workers: Option<usize>,
) -> Result<(RunManifest, commands::Outcome), CliError> {
    let started_at = now();
    let mut out = OutputDir::create(dir)?;
    let outcome = with_workers(workers, || {
        let out = &mut out;
        match command {
            "spectrum" => commands::spectrum(cfg, out),
            "ensemble" => commands::ensemble(cfg, out),
            "sweep" => commands::sweep(cfg, out),
            "fit" => commands::fit(cfg, out),
            "benchmark" => commands::benchmark(cfg, out),
            "oracle-check" => commands::oracle_check(cfg, out),
            other => Err(CliError::Config(format!("unknown command {other:?}"))),
        }
    })
    .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))??;
    let manifest = RunManifest {
        artifact: ARTIFACT.into(),
        version: VERSION.into(),
        command: command.into(),
        config: cfg.clone(),
        seeds: outcome.seeds.clone(),
        workers,
        started_at,
        finished_at: now(),
        outputs: out.entries.clone(),
    };
    let path = out.write_manifest(&manifest)?;
    println!("manifest: {}", path.display());
    Ok((manifest, outcome))
}

fn replay(
    manifest_path: &Path,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    let recorded = RunManifest::read(manifest_path)?;
    if recorded.artifact != ARTIFACT {
        return Err(CliError::Config(format!(
            "{} is not a {ARTIFACT} manifest",
            manifest_path.display()
        )));
    }
    if recorded.version != VERSION {
        eprintln!(
            "qvetrain: warning: manifest from version {}, replaying with {VERSION}",
            recorded.version
        );
    }
    recorded.config.validate()?;
    let dir = out.unwrap_or_else(|| {
        manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("replay")
    });
    let (fresh, _) = execute(&recorded.command, &recorded.config, &dir, workers)?;
    let mut mismatched = Vec::new();
    for entry in &recorded.outputs {
        let path = dir.join(&entry.path);
        let status = match std::fs::read(&path) {
            Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => "MATCH",
            Ok(_) => "DIFFER",
            Err(_) => "MISSING",
        };
        println!("{status} {}", entry.path);
        if status != "MATCH" {
            mismatched.push(entry.path.clone());
        }
    }
    for extra in fresh
        .outputs
        .iter()
        .filter(|f| !recorded.outputs.iter().any(|r| r.path == f.path))
    {
        println!("EXTRA {}", extra.path);
    }
    if mismatched.is_empty() {
        println!("replay: all {} outputs identical", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Solver(format!(
            "replay differs from the manifest for {}",
            mismatched.join(", ")
        )))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli.out, cli.workers);
    }
    let mut overrides = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    cli.command.overrides(&mut overrides)?;
    let env: Vec<(String, String)> = std::env::vars().collect();
    let cfg = Config::load(cli.config.as_deref(), &env, &overrides)?;
    let dir = cli.out.unwrap_or_else(|| PathBuf::from("out"));
    let (_, outcome) = execute(cli.command.name(), &cfg, &dir, cli.workers)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qvetrain: error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
