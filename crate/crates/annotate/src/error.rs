use ccc_core::dataset::DatasetError;
use ccc_core::imaging::ImagingError;
use thiserror::Error;

use crate::task::{BoxPrompt, TaskStatus};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no task with id {0:?}")]
    UnknownTask(String),
    #[error("record {id:?} has no {channel} image")]
    UnknownChannel { id: String, channel: String },
    #[error("cannot {action} task {id:?} while it is {status}")]
    InvalidTransition {
        id: String,
        status: TaskStatus,
        action: &'static str,
    },
    #[error("task {0:?} has no box to segment in")]
    MissingBox(String),
    #[error("no object found inside the box")]
    EmptyProposal,
    #[error("box {prompt:?} is not inside the {width}x{height} image")]
    BoxOutOfBounds { prompt: BoxPrompt, width: u32, height: u32 },
    #[error("box area {area} px is below the minimum of 4")]
    BoxTooSmall { area: i64 },
    #[error("no route for {0}")]
    UnknownRoute(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

impl AnnotateError {
    /// Stable machine-readable code for API clients.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::UnknownTask(_) => "UnknownTask",
            AnnotateError::UnknownChannel { .. } => "UnknownChannel",
            AnnotateError::InvalidTransition { .. } => "InvalidTransition",
            AnnotateError::MissingBox(_) => "MissingBox",
            AnnotateError::EmptyProposal => "EmptyProposal",
            AnnotateError::BoxOutOfBounds { .. } => "BoxOutOfBounds",
            AnnotateError::BoxTooSmall { .. } => "BoxTooSmall",
            AnnotateError::UnknownRoute(_) => "UnknownRoute",
            AnnotateError::BadRequest(_) => "BadRequest",
            AnnotateError::Journal(_) => "JournalError",
            AnnotateError::Dataset(_) => "DatasetError",
            AnnotateError::Imaging(_) => "ImagingError",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            AnnotateError::UnknownTask(_)
            | AnnotateError::UnknownChannel { .. }
            | AnnotateError::UnknownRoute(_) => 404,
            AnnotateError::InvalidTransition { .. } | AnnotateError::MissingBox(_) => 409,
            AnnotateError::EmptyProposal => 422,
            AnnotateError::BoxOutOfBounds { .. }
            | AnnotateError::BoxTooSmall { .. }
            | AnnotateError::BadRequest(_) => 400,
            AnnotateError::Journal(_) | AnnotateError::Dataset(_) | AnnotateError::Imaging(_) => 500,
        }
    }
}
