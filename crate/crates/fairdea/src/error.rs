use std::fmt;
use std::io;
use std::path::PathBuf;

use fairdea_core::conformal::ConformalError;
use fairdea_core::dea::DeaError;
use fairdea_core::debias::DebiasError;
use fairdea_core::mediation::MediationError;
use fairdea_core::mmd::MmdError;
use fairdea_core::resample::ResampleError;
use fairdea_core::synth::SynthError;
use fairdea_core::CohortError;
use serde::Serialize;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Synth,
    Resample,
    Debias,
    Dea,
    Conformal,
    Mmd,
    Mediation,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Synth,
        Stage::Resample,
        Stage::Debias,
        Stage::Dea,
        Stage::Conformal,
        Stage::Mmd,
        Stage::Mediation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Synth => "synth",
            Stage::Resample => "resample",
            Stage::Debias => "debias",
            Stage::Dea => "dea",
            Stage::Conformal => "conformal",
            Stage::Mmd => "mmd",
            Stage::Mediation => "mediation",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: missing column {column}", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("{}: row {row}, column {column}: cannot parse {value:?}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{}: row {row}: group {group} is not in the group set", path.display())]
    UnknownGroup {
        path: PathBuf,
        row: usize,
        group: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Debias(#[from] DebiasError),
    #[error(transparent)]
    Dea(#[from] DeaError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
    #[error(transparent)]
    Mediation(#[from] MediationError),
}

/// A stage failure, naming the stage.
#[derive(Debug, Error)]
#[error("{stage} stage failed")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

pub trait InStage<T> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> InStage<T> for Result<T, E> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}
