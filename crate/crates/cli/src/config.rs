//! Layered run configuration: TOML file, then `QVETRAIN_<SECTION>__<KEY>`
//! environment variables, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use qvetrain::pulse::read_delays_csv;
use qvetrain::{MomentumGrid, PhysicalParams, SolverConfig, TrainParams};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "QVETRAIN_";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub physical: PhysicalParams,
    pub train: TrainParams,
    pub grid: MomentumGrid,
    pub solver: SolverConfig,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub oracle: OracleSection,
    pub fit: FitSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// Realizations averaged by `ensemble` (and `benchmark` when σ_T > 0).
    pub runs: usize,
    /// Extra run counts reported in the convergence table.
    pub batch: Vec<usize>,
    /// Realization drawn by `spectrum`.
    pub run_index: u64,
    /// Explicit delays T_1..T_N; overrides sampling.
    pub delays: Option<Vec<f64>>,
    /// CSV with `k,T_k` rows, read into `delays` at load time.
    pub delays_file: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            runs: 100,
            batch: Vec::new(),
            run_index: 0,
            delays: None,
            delays_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub p3: f64,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
    /// `[start, stop, step]`, expanded into `sigmas` at load time.
    pub sigma_range: Option<[f64; 3]>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            p3: 0.0,
            runs: 50,
            seeds: vec![1, 2, 3],
            sigmas: vec![0.0],
            sigma_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    pub step: f64,
    pub n_pulses: Vec<usize>,
    /// Kinetic momenta checked, relative to the resonance for a lone pulse.
    pub momenta: Vec<f64>,
    pub tolerance: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            step: 0.025,
            n_pulses: vec![1, 2],
            momenta: vec![-0.4, -0.2, 0.0, 0.2, 0.4],
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    /// Spectrum CSV read by `fit`.
    pub input: Option<PathBuf>,
    pub roi: [f64; 2],
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            input: None,
            roi: [-0.3, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSection {
    /// Multiplier on the single-pulse curve; N² for a regular train and
    /// (2N + 1)/2 otherwise when unset.
    pub factor: Option<f64>,
}

impl Config {
    /// Builds the effective configuration. `file` may be absent; `env` is
    /// the process environment (passed in for testability) and `overrides`
    /// are `section.key = value` pairs from the command line.
    pub fn load(
        file: Option<&Path>,
        env: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(CliError::io(path))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        let mut env: Vec<_> = env
            .iter()
            .filter_map(|(k, v)| env_key(k).map(|key| (key, v.clone())))
            .collect();
        env.sort();
        for (key, raw) in env.iter().chain(overrides) {
            set_path(&mut table, key, raw)?;
        }
        let mut cfg: Config = Value::Table(table.clone())
            .try_into()
            .map_err(|e| CliError::Config(format!("config: {e}")))?;
        check_unknown_keys(&table, &cfg)?;
        let base = file.and_then(Path::parent).unwrap_or(Path::new(""));
        cfg.resolve(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads side files and expands ranges so the configuration is
    /// self-contained.
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        if let Some(rel) = self.run.delays_file.take() {
            let path = base.join(rel);
            let file = fs::File::open(&path).map_err(CliError::io(&path))?;
            let delays = read_delays_csv(file)?;
            self.run.delays = Some(delays.values);
        }
        if let Some(rel) = self.fit.input.take() {
            self.fit.input = Some(base.join(rel));
        }
        if let Some([start, stop, step]) = self.sweep.sigma_range.take() {
            if !(step > 0.0) || !(stop >= start) {
                return Err(CliError::Config(format!(
                    "sweep.sigma_range needs start <= stop and step > 0, got [{start}, {stop}, {step}]"
                )));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            self.sweep.sigmas = (0..=n).map(|i| start + step * i as f64).collect();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.physical.validate_allow_zero_field()?;
        self.train.validate()?;
        self.solver.validate()?;
        self.grid.validate()?;
        if let Some(d) = &self.run.delays {
            if d.len() != self.train.n_pulses {
                return Err(CliError::Config(format!(
                    "run.delays has {} entries but train.n_pulses = {}",
                    d.len(),
                    self.train.n_pulses
                )));
            }
            if d.iter().any(|t| !t.is_finite()) {
                return Err(CliError::Config("run.delays must be finite".into()));
            }
        }
        if self.run.runs == 0 || self.sweep.runs == 0 {
            return Err(CliError::Config("run counts must be at least 1".into()));
        }
        if self.sweep.seeds.is_empty() || self.sweep.sigmas.is_empty() {
            return Err(CliError::Config(
                "sweep.seeds and sweep.sigmas must not be empty".into(),
            ));
        }
        if !(self.oracle.step > 0.0) || !(self.oracle.tolerance > 0.0) {
            return Err(CliError::Config(
                "oracle.step and oracle.tolerance must be > 0".into(),
            ));
        }
        if !(self.fit.roi[0] < self.fit.roi[1]) {
            return Err(CliError::Config(format!(
                "fit.roi must be increasing, got {:?}",
                self.fit.roi
            )));
        }
        Ok(())
    }
}

/// `QVETRAIN_TRAIN__SIGMA_T` -> `train.sigma_t`. Variables without a
/// section separator belong to the flag layer and are skipped.
fn env_key(name: &str) -> Option<String> {
    let rest = name.strip_prefix(ENV_PREFIX)?;
    if !rest.contains("__") {
        return None;
    }
    Some(rest.to_ascii_lowercase().replace("__", "."))
}

/// Parses `raw` as a TOML value, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, raw: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// Every key given must survive a deserialize/serialize round trip,
/// otherwise it was misspelled or misplaced.
fn check_unknown_keys(given: &Table, cfg: &Config) -> Result<(), CliError> {
    let known: Table = toml::to_string(cfg)
        .expect("config serializes")
        .parse()
        .expect("serialized config parses");
    fn walk(given: &Table, known: &Table, prefix: &str) -> Result<(), CliError> {
        for (k, v) in given {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match (v, known.get(k)) {
                (Value::Table(g), Some(Value::Table(kn))) => walk(g, kn, &path)?,
                (_, Some(_)) => {}
                // optional keys that serialize to nothing
                (_, None) if OPTIONAL_KEYS.contains(&path.as_str()) => {}
                (_, None) => return Err(CliError::Config(format!("unknown config key {path}"))),
            }
        }
        Ok(())
    }
    walk(given, &known, "")
}

const OPTIONAL_KEYS: &[&str] = &[
    "run.delays_file",
    "fit.input",
    "sweep.sigma_range",
    "solver.max_step",
    "benchmark.factor",
    "run.delays",
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn empty_config_is_the_reference_setup() {
        let cfg = Config::load(None, &[], &[]).unwrap();
        assert_eq!(cfg.physical.e0, 0.1);
        assert_eq!(cfg.physical.tau, 20.0);
        assert_eq!(cfg.train.n_pulses, 4);
        assert_eq!(cfg.train.mu_t, 180.32);
        assert_eq!(cfg.grid.n_points, 1601);
    }

    #[test]
    fn precedence_is_file_then_env_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "[train]\nsigma_t = 15.0\nseed = 7\nmu_t = 181.0").unwrap();
        let env = pairs(&[
            ("QVETRAIN_TRAIN__SIGMA_T", "45"),
            ("QVETRAIN_TRAIN__SEED", "8"),
            ("QVETRAIN_WORKERS", "3"),
            ("HOME", "/x"),
        ]);
        let flags = pairs(&[("train.seed", "9")]);
        let cfg = Config::load(Some(&path), &env, &flags).unwrap();
        assert_eq!(cfg.train.mu_t, 181.0);
        assert_eq!(cfg.train.sigma_t, 45.0);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::load(None, &[], &pairs(&[("train.sigma", "1")])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("train.sigma"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (k, v) in [
            ("physical.tau", "-1"),
            ("train.sigma_t", "-2"),
            ("grid.n_points", "1"),
            ("train.n_pulses", "\"four\""),
            ("run.runs", "0"),
        ] {
            let err = Config::load(None, &[], &pairs(&[(k, v)])).unwrap_err();
            assert_eq!(err.class(), "config", "{k}");
        }
    }

    #[test]
    fn delay_file_is_inlined_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("d.csv"),
            "k,T_k\n1,172.25\n2,185.38\n3,160.86\n4,191.65\n",
        )
        .unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[run]\ndelays_file = \"d.csv\"\n").unwrap();
        let cfg = Config::load(Some(&path), &[], &[]).unwrap();
        assert_eq!(cfg.run.delays_file, None);
        assert_eq!(cfg.run.delays, Some(vec![172.25, 185.38, 160.86, 191.65]));
        let again: Config = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn sigma_range_expands() {
        let cfg = Config::load(
            None,
            &[],
            &pairs(&[("sweep.sigma_range", "[0.0, 2.0, 0.5]")]),
        )
        .unwrap();
        assert_eq!(cfg.sweep.sigmas, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(cfg.sweep.sigma_range, None);
    }

    #[test]
    fn shipped_recipes_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = Config::load(Some(&path), &[], &[])
                    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                if let Some(d) = &cfg.run.delays {
                    assert_eq!(d.len(), 4);
                }
                n += 1;
            }
        }
        assert!(n >= 20);
    }
}
