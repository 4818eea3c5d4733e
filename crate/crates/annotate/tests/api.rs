use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ccc_annotate::journal::JournalEntry;
use ccc_annotate::{router, AnnotationService, ClassicalProposer, ServiceConfig};
use ccc_core::dataset::{load_seg_labels, ClusterLabel, Manifest};
use ccc_core::eval::mask_iou;
use ccc_core::imaging::{rasterize_polygon, BinaryMask, ImageRgb, Polygon};
use ccc_core::synth::{category_spec, generate_dataset, generate_scene, Category, DatasetOptions};

const SEED: u64 = 11;

struct Fixture {
    dir: tempfile::TempDir,
    manifest: Manifest,
}

impl Fixture {
    fn new(per_category: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let summary = generate_dataset(dir.path(), per_category, SEED, &DatasetOptions::default()).unwrap();
        let manifest = Manifest::load(&summary.manifest).unwrap();
        Self { dir, manifest }
    }

    fn service(&self) -> Arc<AnnotationService> {
        self.service_for(self.manifest.clone())
    }

    fn service_for(&self, manifest: Manifest) -> Arc<AnnotationService> {
        let config = ServiceConfig {
            journal: Some(self.journal_path()),
            labels_dir: Some(self.dir.path().join("accepted")),
        };
        Arc::new(AnnotationService::open(manifest, config, Box::new(ClassicalProposer::default())).unwrap())
    }

    fn journal_path(&self) -> std::path::PathBuf {
        self.dir.path().join("journal.jsonl")
    }

    fn cluster_ids(&self) -> Vec<String> {
        self.manifest
            .records
            .iter()
            .filter(|r| r.cluster_label == ClusterLabel::Cluster)
            .map(|r| r.id.clone())
            .collect()
    }
}

/// Ground-truth cluster mask for a generated record id such as `plt_0003`.
fn truth_mask(id: &str) -> BinaryMask {
    let (slug, idx) = id.rsplit_once('_').unwrap();
    let cat = Category::ALL.into_iter().find(|c| c.slug() == slug).unwrap();
    let (spec_id, spec) = category_spec(cat, idx.parse().unwrap(), SEED, &DatasetOptions::default());
    assert_eq!(spec_id, id);
    generate_scene(&spec_id, &spec).unwrap().1.cluster_mask
}

/// Bounding box of the truth mask grown by `margin`, clamped to the image.
fn box_around(mask: &BinaryMask, margin: u32) -> Value {
    let b = mask.bounding_box().unwrap();
    let x0 = b.x.saturating_sub(margin);
    let y0 = b.y.saturating_sub(margin);
    let x1 = (b.x + b.w + margin).min(mask.width());
    let y1 = (b.y + b.h + margin).min(mask.height());
    json!({"x": x0, "y": y0, "w": x1 - x0, "h": y1 - y0})
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("<none>")
}

fn journal_entries(path: &Path) -> Vec<JournalEntry> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[tokio::test]
async fn review_queue_counts() {
    let fx = Fixture::new(54);
    assert_eq!(fx.manifest.records.len(), 378);
    let mut records = fx.manifest.records.clone();
    records.truncate(372);
    let svc = fx.service_for(Manifest::new(fx.manifest.root.clone(), records));
    let app = router(svc);

    let (status, tasks) = call(&app, "GET", "/tasks", None).await;
    assert_eq!(status, StatusCode::OK);
    let tasks = tasks.as_array().unwrap();
    assert_eq!(tasks.len(), 372);
    assert!(tasks.iter().all(|t| t["status"] == "pending"));
    let ids: Vec<&str> = tasks.iter().map(|t| t["id"].as_str().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));

    let id = "plt_0000";
    let gt = truth_mask(id);
    let (s, _) = call(&app, "POST", &format!("/tasks/{id}/propose"), Some(json!({"box": box_around(&gt, 4)}))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "POST", &format!("/tasks/{id}/accept"), Some(json!({"reviewer": "second"}))).await;
    assert_eq!(s, StatusCode::OK);

    let (_, tasks) = call(&app, "GET", "/tasks", None).await;
    let tasks = tasks.as_array().unwrap();
    let pending = tasks.iter().take_while(|t| t["status"] == "pending").count();
    assert_eq!(pending, 371);
    assert_eq!(tasks.last().unwrap()["id"], id);
    assert_eq!(tasks.last().unwrap()["reviewer"], "second");
}

#[tokio::test]
async fn empty_dataset_has_no_tasks() {
    let fx = Fixture::new(1);
    let app = router(fx.service_for(Manifest::new(fx.manifest.root.clone(), Vec::new())));
    let (status, tasks) = call(&app, "GET", "/tasks", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tasks, json!([]));
}

#[tokio::test]
async fn proposals_match_synthetic_truth() {
    let fx = Fixture::new(10);
    let app = router(fx.service());
    let mut worst: f64 = 1.0;
    for id in fx.cluster_ids() {
        let gt = truth_mask(&id);
        let prompt = box_around(&gt, 3);
        let (s, task) = call(&app, "POST", &format!("/tasks/{id}/propose"), Some(json!({"box": prompt}))).await;
        assert_eq!(s, StatusCode::OK, "{id}: {task}");
        assert_eq!(task["status"], "proposed");
        let poly: Polygon = serde_json::from_value(task["proposal"].clone()).unwrap();
        let (w, h) = gt.dims();

        // Every vertex lies within the box dilated by 2 px.
        let (bx, by) = (prompt["x"].as_f64().unwrap(), prompt["y"].as_f64().unwrap());
        let (bw, bh) = (prompt["w"].as_f64().unwrap(), prompt["h"].as_f64().unwrap());
        for &[u, v] in poly.vertices() {
            let (px, py) = (u * w as f64, v * h as f64);
            assert!(px >= bx - 2.0 && px <= bx + bw + 2.0 && py >= by - 2.0 && py <= by + bh + 2.0, "{id}: ({px}, {py})");
        }
        let iou = mask_iou(&rasterize_polygon(&poly, w, h), &gt).unwrap();
        worst = worst.min(iou);
    }
    assert!(worst >= 0.9, "worst proposal IoU {worst}");
}

#[tokio::test]
async fn error_responses() {
    let fx = Fixture::new(1);
    let app = router(fx.service());
    let id = "rbc_0000";

    let (s, v) = call(&app, "GET", "/tasks/nope", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "UnknownTask"));
    let (s, v) = call(&app, "POST", "/tasks/nope/accept", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "UnknownTask"));
    let (s, v) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "UnknownRoute"));

    let (s, v) = call(&app, "POST", &format!("/tasks/{id}/accept"), None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::CONFLICT, "InvalidTransition"));
    let (s, v) = call(&app, "POST", &format!("/tasks/{id}/propose"), None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::CONFLICT, "MissingBox"));

    let outside = json!({"x": 120, "y": 10, "w": 20, "h": 20});
    let (s, v) = call(&app, "POST", &format!("/tasks/{id}/box"), Some(outside)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "BoxOutOfBounds"));
    let tiny = json!({"x": 10, "y": 10, "w": 1, "h": 3});
    let (s, v) = call(&app, "POST", &format!("/tasks/{id}/box"), Some(tiny)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "BoxTooSmall"));
    let (s, v) = call(&app, "POST", &format!("/tasks/{id}/box"), Some(json!({"x": "a"}))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "BadRequest"));

    // Blank frame: nothing to segment anywhere.
    let blank = json!({"box": {"x": 10, "y": 10, "w": 60, "h": 60}});
    let (s, v) = call(&app, "POST", "/tasks/blank_0000/propose", Some(blank)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "EmptyProposal"));
    let (_, task) = call(&app, "GET", "/tasks/blank_0000", None).await;
    assert_eq!(task["status"], "pending");
    assert_eq!(task["box"]["w"], 60);
}

#[tokio::test]
async fn accept_writes_parseable_label() {
    let fx = Fixture::new(2);
    let svc = fx.service();
    let app = router(svc.clone());
    let id = "wbc_0001";
    let gt = truth_mask(id);
    let (s, _) = call(&app, "POST", &format!("/tasks/{id}/box"), Some(box_around(&gt, 5))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, proposed) = call(&app, "POST", &format!("/tasks/{id}/propose"), None).await;
    let (s, accepted) = call(&app, "POST", &format!("/tasks/{id}/accept"), Some(json!({"reviewer": "b"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(accepted["status"], "accepted");

    let labels = load_seg_labels(&svc.label_path(id)).unwrap();
    assert_eq!(labels.len(), 1);
    assert_eq!(labels[0].class_id, 0);
    let sent: Polygon = serde_json::from_value(proposed["proposal"].clone()).unwrap();
    assert_eq!(sent.len(), labels[0].polygon.len());
    for (a, b) in sent.vertices().iter().zip(labels[0].polygon.vertices()) {
        assert!((a[0] - b[0]).abs() <= 1e-6 && (a[1] - b[1]).abs() <= 1e-6);
    }
    let (w, h) = gt.dims();
    assert!(!rasterize_polygon(&labels[0].polygon, w, h).is_empty());
}

#[tokio::test]
async fn reject_and_repeats() {
    let fx = Fixture::new(1);
    let app = router(fx.service());
    let id = "plt_0000";
    let prompt = box_around(&truth_mask(id), 4);
    call(&app, "POST", &format!("/tasks/{id}/propose"), Some(json!({"box": prompt.clone()}))).await;
    let (s, t) = call(&app, "POST", &format!("/tasks/{id}/reject"), Some(json!({"reviewer": "b"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["status"], "pending");
    assert_eq!(t["proposal"], Value::Null);
    assert_eq!(t["box"], prompt);
    let before = journal_entries(&fx.journal_path()).len();
    let (s, t2) = call(&app, "POST", &format!("/tasks/{id}/reject"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t2, t);
    assert_eq!(journal_entries(&fx.journal_path()).len(), before);

    call(&app, "POST", &format!("/tasks/{id}/propose"), None).await;
    let (_, a1) = call(&app, "POST", &format!("/tasks/{id}/accept"), Some(json!({"reviewer": "c"}))).await;
    let (s, a2) = call(&app, "POST", &format!("/tasks/{id}/accept"), Some(json!({"reviewer": "d"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a1, a2);
    let (s, v) = call(&app, "POST", &format!("/tasks/{id}/reject"), None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::CONFLICT, "InvalidTransition"));

    let kinds: Vec<String> = journal_entries(&fx.journal_path())
        .iter()
        .map(|e| serde_json::to_value(&e.event).unwrap()["event"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds, ["box_set", "proposed", "rejected", "proposed", "accepted"]);
}

/// Every state crossed with every action.
#[tokio::test]
async fn transition_table_is_exhaustive() {
    #[derive(Clone, Copy, Debug)]
    enum Start {
        Fresh,
        Boxed,
        Rejected,
        Proposed,
        Accepted,
    }
    let fx = Fixture::new(1);
    let id = "wbcplt_0000";
    let prompt = box_around(&truth_mask(id), 4);
    let starts = [Start::Fresh, Start::Boxed, Start::Rejected, Start::Proposed, Start::Accepted];
    let actions = ["box", "propose", "accept", "reject"];
    // Expected status code and resulting task status.
    let expected = |s: Start, a: &str| -> (u16, &str) {
        use Start::*;
        match (s, a) {
            (Fresh | Boxed | Rejected, "box") => (200, "pending"),
            (Proposed | Accepted, "box") => (409, ""),
            (Fresh, "propose") => (409, "pending"),
            (Boxed | Rejected, "propose") => (200, "proposed"),
            (Proposed | Accepted, "propose") => (409, ""),
            (Proposed | Accepted, "accept") => (200, "accepted"),
            (_, "accept") => (409, ""),
            (Proposed | Rejected, "reject") => (200, "pending"),
            (_, "reject") => (409, ""),
            _ => unreachable!(),
        }
    };
    for start in starts {
        for action in actions {
            let dir = tempfile::tempdir().unwrap();
            let config = ServiceConfig {
                journal: Some(dir.path().join("j.jsonl")),
                labels_dir: Some(dir.path().join("labels")),
            };
            let svc = AnnotationService::open(fx.manifest.clone(), config, Box::new(ClassicalProposer::default())).unwrap();
            let app = router(Arc::new(svc));
            let uri = |a: &str| format!("/tasks/{id}/{a}");
            let setup: &[&str] = match start {
                Start::Fresh => &[],
                Start::Boxed => &["box"],
                Start::Rejected => &["box", "propose", "reject"],
                Start::Proposed => &["box", "propose"],
                Start::Accepted => &["box", "propose", "accept"],
            };
            for step in setup {
                let body = (*step == "box").then(|| prompt.clone());
                let (s, v) = call(&app, "POST", &uri(step), body).await;
                assert_eq!(s, StatusCode::OK, "setup {step}: {v}");
            }
            let (_, before) = call(&app, "GET", &format!("/tasks/{id}"), None).await;
            let body = (action == "box").then(|| prompt.clone());
            let (s, after) = call(&app, "POST", &uri(action), body).await;
            let (code, status) = expected(start, action);
            assert_eq!(s.as_u16(), code, "{start:?} + {action}: {after}");
            if code == 200 {
                assert_eq!(after["status"], status, "{start:?} + {action}");
            } else {
                let (_, now) = call(&app, "GET", &format!("/tasks/{id}"), None).await;
                assert_eq!(now, before, "{start:?} + {action} changed state on error");
            }
        }
    }
}

#[tokio::test]
async fn journal_replay_restores_state() {
    let fx = Fixture::new(2);
    let ids = fx.cluster_ids();
    {
        let app = router(fx.service());
        for (k, id) in ids.iter().enumerate() {
            let prompt = box_around(&truth_mask(id), 4);
            call(&app, "POST", &format!("/tasks/{id}/propose"), Some(json!({"box": prompt, "annotator": "a"}))).await;
            match k % 3 {
                0 => {
                    call(&app, "POST", &format!("/tasks/{id}/accept"), Some(json!({"reviewer": "b"}))).await;
                }
                1 => {
                    call(&app, "POST", &format!("/tasks/{id}/reject"), None).await;
                }
                _ => {}
            }
        }
    }
    let first = fx.service().tasks();
    let accepted: Vec<_> = first.iter().filter(|t| t.status == ccc_annotate::TaskStatus::Accepted).collect();
    assert_eq!(accepted.len(), ids.len().div_ceil(3));
    assert!(accepted.iter().all(|t| t.reviewer.as_deref() == Some("b") && t.annotator.as_deref() == Some("a")));

    // A lost label file is rebuilt from the journal.
    let victim = &accepted[0].id;
    let label = fx.dir.path().join("accepted").join(format!("{victim}.txt"));
    let original = std::fs::read_to_string(&label).unwrap();
    std::fs::remove_file(&label).unwrap();
    let second = fx.service().tasks();
    assert_eq!(first, second);
    assert_eq!(std::fs::read_to_string(&label).unwrap(), original);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_requests_stay_consistent() {
    let fx = Fixture::new(12);
    let svc = fx.service();
    let app = router(svc.clone());
    let ids = fx.cluster_ids();
    let mut handles = Vec::new();
    for id in &ids {
        let prompt = box_around(&truth_mask(id), 4);
        let app = app.clone();
        let id = id.clone();
        handles.push(tokio::spawn(async move {
            let (s, _) = call(&app, "POST", &format!("/tasks/{id}/propose"), Some(json!({"box": prompt}))).await;
            assert_eq!(s, StatusCode::OK);
            // Several reviewers race to accept the same task.
            let racers: Vec<_> = (0..4)
                .map(|r| {
                    let app = app.clone();
                    let id = id.clone();
                    tokio::spawn(async move {
                        call(&app, "POST", &format!("/tasks/{id}/accept"), Some(json!({"reviewer": format!("r{r}")}))).await.0
                    })
                })
                .collect();
            for r in racers {
                assert_eq!(r.await.unwrap(), StatusCode::OK);
            }
        }));
    }
    for h in handles {
        h.await.unwrap();
    }

    let entries = journal_entries(&fx.journal_path());
    let seqs: Vec<u64> = entries.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=entries.len() as u64).collect::<Vec<_>>());
    for id in &ids {
        let kinds: Vec<String> = entries
            .iter()
            .filter(|e| &e.task == id)
            .map(|e| serde_json::to_value(&e.event).unwrap()["event"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, ["box_set", "proposed", "accepted"], "{id}");
        let labels = load_seg_labels(&svc.label_path(id)).unwrap();
        assert_eq!(labels.len(), 1);
    }
}

#[tokio::test]
async fn channel_images_are_png() {
    let fx = Fixture::new(1);
    let app = router(fx.service());
    for ch in ["bf", "cd61", "cd45"] {
        let (s, bytes) = call_raw(&app, "GET", &format!("/images/plt_0000/{ch}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(ImageRgb::decode(&bytes).unwrap().dims(), (128, 128));
    }
    let (s, v) = call(&app, "GET", "/images/plt_0000/dapi", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "UnknownChannel"));
}
