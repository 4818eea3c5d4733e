//! Box-prompted annotation service.
//!
//! Each dataset record becomes a task. An annotator draws a box, the
//! service proposes an outline of the largest object inside it, and a
//! reviewer accepts (writing the segmentation label file) or rejects it.
//! Every state change is appended to a JSON-lines journal, which is replayed
//! on startup.
//!
//! Routes:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/tasks` | |
//! | GET | `/tasks/{id}` | |
//! | POST | `/tasks/{id}/box` | `{"x","y","w","h","annotator"?}` in pixels |
//! | POST | `/tasks/{id}/propose` | optional `{"box"?, "annotator"?}` |
//! | POST | `/tasks/{id}/accept` | optional `{"reviewer"?}` |
//! | POST | `/tasks/{id}/reject` | optional `{"reviewer"?}` |
//! | GET | `/images/{id}/{channel}` | channel is `bf`, `cd61` or `cd45` |
//!
//! Errors come back as `{"error": {"code", "message"}}` with a 4xx status.

mod error;
pub mod http;
pub mod journal;
pub mod proposer;
pub mod service;
pub mod task;

pub use error::AnnotateError;
pub use http::{router, serve};
pub use proposer::{ClassicalProposer, Proposer};
pub use service::{AnnotationService, ServiceConfig};
pub use task::{AnnotationTask, BoxPrompt, TaskEvent, TaskStatus};
