//! Task store: per-record locking, journaling and label persistence.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ccc_core::dataset::{save_seg_labels, Channel, LabeledPolygon, Manifest};
use ccc_core::imaging::ImageRgb;
use parking_lot::Mutex;

use crate::error::AnnotateError;
use crate::journal::Journal;
use crate::proposer::Proposer;
use crate::task::{AnnotationTask, BoxPrompt, Outcome, TaskEvent, TaskStatus};

/// Class id written for accepted cluster outlines.
pub const CLUSTER_CLASS_ID: u32 = 0;

pub const DEFAULT_JOURNAL_NAME: &str = "annotations.journal.jsonl";

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Defaults to `<dataset root>/annotations.journal.jsonl`.
    pub journal: Option<PathBuf>,
    /// Defaults to `<dataset root>/labels`.
    pub labels_dir: Option<PathBuf>,
}

pub struct AnnotationService {
    manifest: Manifest,
    tasks: BTreeMap<String, Mutex<AnnotationTask>>,
    journal: Journal,
    proposer: Box<dyn Proposer>,
    labels_dir: PathBuf,
}

impl AnnotationService {
    /// One task per manifest record, with state replayed from the journal.
    pub fn open(
        manifest: Manifest,
        config: ServiceConfig,
        proposer: Box<dyn Proposer>,
    ) -> Result<Self, AnnotateError> {
        let journal_path = config
            .journal
            .unwrap_or_else(|| manifest.root.join(DEFAULT_JOURNAL_NAME));
        let labels_dir = config.labels_dir.unwrap_or_else(|| manifest.root.join("labels"));
        let mut tasks = BTreeMap::new();
        for rec in &manifest.records {
            let (w, h) = ImageRgb::probe_dims(manifest.resolve(&rec.brightfield))?;
            tasks.insert(rec.id.clone(), AnnotationTask::new(rec.id.clone(), w, h));
        }
        let (journal, entries) = Journal::open(journal_path)?;
        for entry in &entries {
            match tasks.get_mut(&entry.task) {
                Some(t) => t.apply(&entry.event),
                None => log::warn!("journal entry {} names unknown task {:?}", entry.seq, entry.task),
            }
        }
        let service = Self {
            manifest,
            tasks: tasks.into_iter().map(|(k, v)| (k, Mutex::new(v))).collect(),
            journal,
            proposer,
            labels_dir,
        };
        service.restore_missing_labels()?;
        log::info!(
            "{} tasks, {} journal entries replayed from {}",
            service.tasks.len(),
            entries.len(),
            service.journal.path().display()
        );
        Ok(service)
    }

    /// Rewrites the label file of any accepted task whose file is gone.
    fn restore_missing_labels(&self) -> Result<(), AnnotateError> {
        for cell in self.tasks.values() {
            let t = cell.lock();
            if t.status == TaskStatus::Accepted && !self.label_path(&t.id).exists() {
                log::warn!("restoring label file for accepted task {:?}", t.id);
                self.write_label(&t)?;
            }
        }
        Ok(())
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.labels_dir.join(format!("{id}.txt"))
    }

    fn write_label(&self, t: &AnnotationTask) -> Result<(), AnnotateError> {
        let polygon = t.proposal.clone().expect("accepted tasks carry a proposal");
        save_seg_labels(
            &self.label_path(&t.id),
            &[LabeledPolygon { class_id: CLUSTER_CLASS_ID, polygon }],
        )?;
        Ok(())
    }

    fn cell(&self, id: &str) -> Result<&Mutex<AnnotationTask>, AnnotateError> {
        self.tasks.get(id).ok_or_else(|| AnnotateError::UnknownTask(id.to_string()))
    }

    fn record(&self, t: &mut AnnotationTask, event: TaskEvent) -> Result<(), AnnotateError> {
        self.journal.append(&t.id, event.clone())?;
        t.apply(&event);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Review queue: pending tasks first, then the rest, each by record id.
    pub fn tasks(&self) -> Vec<AnnotationTask> {
        let mut all: Vec<AnnotationTask> = self.tasks.values().map(|c| c.lock().clone()).collect();
        all.sort_by(|a, b| {
            (a.status != TaskStatus::Pending, &a.id).cmp(&(b.status != TaskStatus::Pending, &b.id))
        });
        all
    }

    pub fn task(&self, id: &str) -> Result<AnnotationTask, AnnotateError> {
        Ok(self.cell(id)?.lock().clone())
    }

    pub fn set_box(
        &self,
        id: &str,
        prompt: BoxPrompt,
        annotator: Option<String>,
    ) -> Result<AnnotationTask, AnnotateError> {
        let mut t = self.cell(id)?.lock();
        t.check_box(&prompt)?;
        self.record(&mut t, TaskEvent::BoxSet { prompt, annotator })?;
        Ok(t.clone())
    }

    /// Segments inside the task's box, or inside `prompt` after storing it.
    pub fn propose(
        &self,
        id: &str,
        prompt: Option<BoxPrompt>,
        annotator: Option<String>,
    ) -> Result<AnnotationTask, AnnotateError> {
        let mut t = self.cell(id)?.lock();
        if let Some(prompt) = prompt {
            t.check_box(&prompt)?;
            self.record(&mut t, TaskEvent::BoxSet { prompt, annotator })?;
        }
        let prompt = t.check_propose()?;
        let rec = self.manifest.get(id).expect("every task has a record");
        let img = self
            .manifest
            .load_channel(rec, Channel::Brightfield)?
            .expect("brightfield path is mandatory");
        let polygon = self
            .proposer
            .propose(&img, &prompt)
            .ok_or(AnnotateError::EmptyProposal)?;
        self.record(&mut t, TaskEvent::Proposed { polygon })?;
        Ok(t.clone())
    }

    /// Writes the label file, then journals the acceptance.
    pub fn accept(&self, id: &str, reviewer: Option<String>) -> Result<AnnotationTask, AnnotateError> {
        let mut t = self.cell(id)?.lock();
        if t.check_accept()? == Outcome::Changed {
            self.write_label(&t)?;
            self.record(&mut t, TaskEvent::Accepted { reviewer })?;
        }
        Ok(t.clone())
    }

    pub fn reject(&self, id: &str, reviewer: Option<String>) -> Result<AnnotationTask, AnnotateError> {
        let mut t = self.cell(id)?.lock();
        if t.check_reject()? == Outcome::Changed {
            self.record(&mut t, TaskEvent::Rejected { reviewer })?;
        }
        Ok(t.clone())
    }

    /// PNG bytes of one channel, re-encoded whatever the stored format.
    pub fn image_png(&self, id: &str, channel: &str) -> Result<Vec<u8>, AnnotateError> {
        let rec = self
            .manifest
            .get(id)
            .ok_or_else(|| AnnotateError::UnknownTask(id.to_string()))?;
        let missing = || AnnotateError::UnknownChannel {
            id: id.to_string(),
            channel: channel.to_string(),
        };
        let ch = Channel::parse(channel).ok_or_else(missing)?;
        let img = self.manifest.load_channel(rec, ch)?.ok_or_else(missing)?;
        Ok(img.encode_png()?)
    }
}
