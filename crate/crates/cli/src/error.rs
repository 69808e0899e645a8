use std::path::{Path, PathBuf};

use qvetrain::analysis::AnalysisError;
use qvetrain::ensemble::EnsembleError;
use qvetrain::oracle::OracleError;
use qvetrain::pulse::TrainError;
use qvetrain::qve::QveError;
use qvetrain::spectrum::SpectrumError;
use qvetrain::units::ParamError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Config(format!("{} ({})", e, e.code()))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<QveError> for CliError {
    fn from(e: QveError) -> Self {
        match e {
            QveError::Params(p) => p.into(),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::Mode { source, p3 } => match source {
                QveError::Params(p) => p.into(),
                other => CliError::Solver(format!("p3 = {p3}: {other}")),
            },
            SpectrumError::Csv(_) | SpectrumError::Format(_) => CliError::Config(e.to_string()),
            SpectrumError::Grid(_) | SpectrumError::AsymmetricGrid => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Params(p) => p.into(),
            EnsembleError::Run { source, .. } => source.into(),
            EnsembleError::SweepRun { source, .. } => source.into(),
            EnsembleError::NoRuns | EnsembleError::NoZeroNode | EnsembleError::Grid(_) => {
                CliError::Config(e.to_string())
            }
            EnsembleError::RunsNotRetained(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::TooFewPoints { .. }
            | AnalysisError::LengthMismatch(..)
            | AnalysisError::EmptyRoi(..)
            | AnalysisError::GridMismatch
            | AnalysisError::NoZeroNode => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::BadStep(_) => CliError::Config(e.to_string()),
            OracleError::NonConvergent { .. } => CliError::Solver(e.to_string()),
        }
    }
}
