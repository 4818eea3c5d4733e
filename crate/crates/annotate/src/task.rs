//! Annotation task state and its transition rules.

use ccc_core::imaging::Polygon;
use serde::{Deserialize, Serialize};

use crate::error::AnnotateError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Proposed,
    Accepted,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Proposed => "proposed",
            TaskStatus::Accepted => "accepted",
        }
    }
}

impl std::fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Minimum box area in pixels.
pub const MIN_BOX_AREA: i64 = 4;

/// Box prompt in pixel coordinates of the brightfield image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BoxPrompt {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), AnnotateError> {
        let inside = self.x >= 0
            && self.y >= 0
            && self.w >= 0
            && self.h >= 0
            && self.x + self.w <= i64::from(width)
            && self.y + self.h <= i64::from(height);
        if !inside {
            return Err(AnnotateError::BoxOutOfBounds { prompt: *self, width, height });
        }
        if self.w * self.h < MIN_BOX_AREA {
            return Err(AnnotateError::BoxTooSmall { area: self.w * self.h });
        }
        Ok(())
    }
}

/// One thing that happened to a task. The journal stores these; replaying
/// them in order through [`AnnotationTask::apply`] rebuilds the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TaskEvent {
    BoxSet {
        #[serde(rename = "box")]
        prompt: BoxPrompt,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        annotator: Option<String>,
    },
    Proposed {
        polygon: Polygon,
    },
    Accepted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reviewer: Option<String>,
    },
    Rejected {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reviewer: Option<String>,
    },
}

/// What a request did to a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Changed,
    /// Repeated accept or reject; nothing to write.
    Unchanged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub status: TaskStatus,
    #[serde(rename = "box")]
    pub prompt: Option<BoxPrompt>,
    pub proposal: Option<Polygon>,
    /// Who drew the box.
    pub annotator: Option<String>,
    /// Who accepted the proposal.
    pub reviewer: Option<String>,
    pub rejections: u32,
    /// Set by a reject and cleared by the next box or proposal, so that a
    /// repeated reject is recognised as a no-op.
    pub just_rejected: bool,
}

impl AnnotationTask {
    pub fn new(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            status: TaskStatus::Pending,
            prompt: None,
            proposal: None,
            annotator: None,
            reviewer: None,
            rejections: 0,
            just_rejected: false,
        }
    }

    fn invalid(&self, action: &'static str) -> AnnotateError {
        AnnotateError::InvalidTransition {
            id: self.id.clone(),
            status: self.status,
            action,
        }
    }

    /// A new box is accepted only while the task waits for one.
    pub fn check_box(&self, prompt: &BoxPrompt) -> Result<(), AnnotateError> {
        if self.status != TaskStatus::Pending {
            return Err(self.invalid("box"));
        }
        prompt.validate(self.width, self.height)
    }

    /// The box to segment inside.
    pub fn check_propose(&self) -> Result<BoxPrompt, AnnotateError> {
        if self.status != TaskStatus::Pending {
            return Err(self.invalid("propose"));
        }
        self.prompt.ok_or_else(|| AnnotateError::MissingBox(self.id.clone()))
    }

    pub fn check_accept(&self) -> Result<Outcome, AnnotateError> {
        match self.status {
            TaskStatus::Proposed => Ok(Outcome::Changed),
            TaskStatus::Accepted => Ok(Outcome::Unchanged),
            _ => Err(self.invalid("accept")),
        }
    }

    pub fn check_reject(&self) -> Result<Outcome, AnnotateError> {
        match self.status {
            TaskStatus::Proposed => Ok(Outcome::Changed),
            TaskStatus::Pending if self.just_rejected => Ok(Outcome::Unchanged),
            _ => Err(self.invalid("reject")),
        }
    }

    /// Applies an event without checks. Callers validate first; replay
    /// trusts the journal.
    ///
    /// Rejection passes straight through to pending: the proposal is
    /// dropped, the box is kept for another attempt.
    pub fn apply(&mut self, event: &TaskEvent) {
        match event {
            TaskEvent::BoxSet { prompt, annotator } => {
                self.prompt = Some(*prompt);
                self.just_rejected = false;
                if annotator.is_some() {
                    self.annotator = annotator.clone();
                }
            }
            TaskEvent::Proposed { polygon } => {
                self.proposal = Some(polygon.clone());
                self.just_rejected = false;
                self.status = TaskStatus::Proposed;
            }
            TaskEvent::Accepted { reviewer } => {
                self.reviewer = reviewer.clone();
                self.status = TaskStatus::Accepted;
            }
            TaskEvent::Rejected { .. } => {
                self.proposal = None;
                self.rejections += 1;
                self.just_rejected = true;
                self.status = TaskStatus::Pending;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly() -> Polygon {
        Polygon::new(vec![[0.1, 0.1], [0.2, 0.1], [0.2, 0.2]]).unwrap()
    }

    #[test]
    fn box_bounds_and_area() {
        let ok = BoxPrompt { x: 0, y: 0, w: 2, h: 2 };
        assert!(ok.validate(10, 10).is_ok());
        assert!(matches!(
            BoxPrompt { x: 9, y: 0, w: 2, h: 2 }.validate(10, 10),
            Err(AnnotateError::BoxOutOfBounds { .. })
        ));
        assert!(matches!(
            BoxPrompt { x: -1, y: 0, w: 5, h: 5 }.validate(10, 10),
            Err(AnnotateError::BoxOutOfBounds { .. })
        ));
        assert!(matches!(
            BoxPrompt { x: 0, y: 0, w: 3, h: 1 }.validate(10, 10),
            Err(AnnotateError::BoxTooSmall { area: 3 })
        ));
    }

    #[test]
    fn reject_clears_proposal_keeps_box() {
        let mut t = AnnotationTask::new("a", 10, 10);
        let b = BoxPrompt { x: 1, y: 1, w: 4, h: 4 };
        t.apply(&TaskEvent::BoxSet { prompt: b, annotator: Some("ann".into()) });
        t.apply(&TaskEvent::Proposed { polygon: poly() });
        assert_eq!(t.check_reject().unwrap(), Outcome::Changed);
        t.apply(&TaskEvent::Rejected { reviewer: None });
        assert_eq!(t.proposal, None);
        assert_eq!(t.status, TaskStatus::Pending);
        assert_eq!(t.prompt, Some(b));
        assert_eq!(t.annotator.as_deref(), Some("ann"));
        assert_eq!(t.check_reject().unwrap(), Outcome::Unchanged);
        assert_eq!(t.check_propose().unwrap(), b);
    }

    #[test]
    fn event_json_shape() {
        let e = TaskEvent::BoxSet { prompt: BoxPrompt { x: 1, y: 2, w: 3, h: 4 }, annotator: None };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v, serde_json::json!({"event": "box_set", "box": {"x": 1, "y": 2, "w": 3, "h": 4}}));
        let p = serde_json::to_value(TaskEvent::Proposed { polygon: poly() }).unwrap();
        assert_eq!(p["polygon"]["points"][1], serde_json::json!([0.2, 0.1]));
    }
}
