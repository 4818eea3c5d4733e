//! Classifier and segmenter interfaces with stub and classical backends.
//!
//! External models are described by a tensor contract: a single input of
//! shape `1x3x224x224` (RGB, `f32` in `[0, 1]`, row-major) and a two-class
//! output where index 0 is `cluster` and index 1 is `non-cluster`. Outputs
//! that are not already probabilities are passed through softmax.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClusterLabel;
use crate::imaging::{
    connected_components, grayscale, morphological_open, otsu_threshold, BinaryMask,
    ImageRgb, PixelBox,
};
use crate::preprocess::STANDARD_SIZE;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("input is {width}x{height}, backend expects {expected}x{expected}")]
    ShapeMismatch { expected: u32, width: u32, height: u32 },
}

/// Cluster/non-cluster decision. `score` is the probability of `label`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPrediction {
    pub label: ClusterLabel,
    pub score: f64,
}

impl ClusterPrediction {
    /// Builds the prediction from the cluster-class probability.
    pub fn from_cluster_probability(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        if p >= 0.5 {
            Self { label: ClusterLabel::Cluster, score: p }
        } else {
            Self { label: ClusterLabel::NonCluster, score: 1.0 - p }
        }
    }

    pub fn cluster_probability(&self) -> f64 {
        match self.label {
            ClusterLabel::Cluster => self.score,
            _ => 1.0 - self.score,
        }
    }
}

/// Two-class softmax over raw logits, or pass-through when `out` already
/// sums to one with entries in `[0, 1]`.
pub fn cluster_probability_from_output(out: [f32; 2]) -> f64 {
    let [a, b] = out.map(f64::from);
    let is_prob = (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && (a + b - 1.0).abs() < 1e-4;
    if is_prob {
        a / (a + b)
    } else {
        1.0 / (1.0 + (b - a).exp())
    }
}

/// Converts a standardized image to the `1x3xHxW` planar `[0, 1]` layout.
pub fn to_input_tensor(img: &ImageRgb) -> Vec<f32> {
    let n = (img.width() * img.height()) as usize;
    let mut out = vec![0.0f32; 3 * n];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = p[c] as f32 / 255.0;
        }
    }
    out
}

/// One segmented object.
#[derive(Clone, Debug, PartialEq)]
pub struct InstancePrediction {
    pub mask: BinaryMask,
    /// Tight bounding box of `mask`.
    pub bbox: PixelBox,
    pub confidence: f64,
    pub class_id: u32,
}

impl InstancePrediction {
    /// `None` for an empty mask, which has no bounding box.
    pub fn from_mask(mask: BinaryMask, confidence: f64, class_id: u32) -> Option<Self> {
        let bbox = mask.bounding_box()?;
        Some(Self {
            mask,
            bbox,
            confidence: confidence.clamp(0.0, 1.0),
            class_id,
        })
    }
}

pub trait ClusterClassifier: Send + Sync {
    fn classify(&self, img: &ImageRgb) -> Result<ClusterPrediction, InferenceError>;
}

pub trait InstanceSegmenter: Send + Sync {
    /// Instances sorted by descending confidence.
    fn segment(&self, img: &ImageRgb) -> Result<Vec<InstancePrediction>, InferenceError>;
}

/// Checks the standardized input shape, then delegates to `backend`.
pub fn classify(
    img: &ImageRgb,
    backend: &dyn ClusterClassifier,
) -> Result<ClusterPrediction, InferenceError> {
    if img.dims() != (STANDARD_SIZE, STANDARD_SIZE) {
        return Err(InferenceError::ShapeMismatch {
            expected: STANDARD_SIZE,
            width: img.width(),
            height: img.height(),
        });
    }
    backend.classify(img)
}

pub fn segment(
    img: &ImageRgb,
    backend: &dyn InstanceSegmenter,
) -> Result<Vec<InstancePrediction>, InferenceError> {
    let mut out = backend.segment(img)?;
    sort_by_confidence(&mut out);
    Ok(out)
}

/// Stable sort, highest confidence first.
pub fn sort_by_confidence(instances: &mut [InstancePrediction]) {
    instances.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// Returns the same prediction for every input.
#[derive(Clone, Copy, Debug)]
pub struct StubClassifier {
    pub prediction: ClusterPrediction,
}

impl StubClassifier {
    pub fn new(label: ClusterLabel, score: f64) -> Self {
        Self {
            prediction: ClusterPrediction { label, score },
        }
    }
}

impl ClusterClassifier for StubClassifier {
    fn classify(&self, _img: &ImageRgb) -> Result<ClusterPrediction, InferenceError> {
        Ok(self.prediction)
    }
}

/// Returns a fixed set of instances regardless of the input.
#[derive(Clone, Debug, Default)]
pub struct EchoSegmenter {
    pub instances: Vec<InstancePrediction>,
}

impl EchoSegmenter {
    /// One instance per non-empty mask, confidence 1.
    pub fn from_masks(masks: impl IntoIterator<Item = BinaryMask>) -> Self {
        Self {
            instances: masks
                .into_iter()
                .filter_map(|m| InstancePrediction::from_mask(m, 1.0, 0))
                .collect(),
        }
    }
}

impl InstanceSegmenter for EchoSegmenter {
    fn segment(&self, _img: &ImageRgb) -> Result<Vec<InstancePrediction>, InferenceError> {
        Ok(self.instances.clone())
    }
}

/// Model-free segmentation: dark objects on a light background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSegmenter {
    pub min_area: usize,
    pub open_radius: u32,
    /// Minimum gap between the Otsu class means; below it the image is
    /// treated as having no foreground.
    pub min_contrast: f64,
}

impl Default for ClassicalSegmenter {
    fn default() -> Self {
        Self {
            min_area: 25,
            open_radius: 1,
            min_contrast: 40.0,
        }
    }
}

impl ClassicalSegmenter {
    /// Foreground mask after thresholding and opening.
    pub fn foreground(&self, img: &ImageRgb) -> BinaryMask {
        let gray = grayscale(img);
        let Some(split) = otsu_threshold(&gray) else {
            return BinaryMask::new(img.width(), img.height());
        };
        if split.mean_high - split.mean_low < self.min_contrast {
            return BinaryMask::new(img.width(), img.height());
        }
        let bits = gray.iter().map(|&g| g <= split.threshold).collect();
        let raw = BinaryMask::from_bits(img.width(), img.height(), bits).expect("same length");
        morphological_open(&raw, self.open_radius)
    }

    pub fn instances(&self, img: &ImageRgb) -> Vec<InstancePrediction> {
        let cc = connected_components(&self.foreground(img));
        let kept: Vec<_> = cc.regions().iter().filter(|r| r.area >= self.min_area).collect();
        let largest = kept.iter().map(|r| r.area).max().unwrap_or(1) as f64;
        let mut out: Vec<InstancePrediction> = kept
            .iter()
            .filter_map(|r| InstancePrediction::from_mask(cc.mask_of(r.id), r.area as f64 / largest, 0))
            .collect();
        sort_by_confidence(&mut out);
        out
    }
}

impl InstanceSegmenter for ClassicalSegmenter {
    fn segment(&self, img: &ImageRgb) -> Result<Vec<InstancePrediction>, InferenceError> {
        Ok(self.instances(img))
    }
}

/// Model-free cluster classifier.
///
/// Fits an ellipse to the largest foreground object by matching its second
/// moments and measures the IoU between object and ellipse. A lone cell is
/// close to elliptical; overlapping cells leave concave waists the fitted
/// ellipse cannot follow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalClassifier {
    pub segmenter: ClassicalSegmenter,
    /// Fit IoU at which the cluster probability is 0.5.
    pub fit_threshold: f64,
}

impl Default for ClassicalClassifier {
    fn default() -> Self {
        Self {
            segmenter: ClassicalSegmenter::default(),
            fit_threshold: 0.95,
        }
    }
}

impl ClassicalClassifier {
    /// IoU between `m` and the ellipse with the same centroid and second
    /// moments. `None` for an empty mask.
    pub fn ellipse_fit_iou(m: &BinaryMask) -> Option<f64> {
        let n = m.area() as f64;
        if n == 0.0 {
            return None;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y) in m.set_pixels() {
            sx += x as f64;
            sy += y as f64;
        }
        let (mx, my) = (sx / n, sy / n);
        let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
        for (x, y) in m.set_pixels() {
            let (dx, dy) = (x as f64 - mx, y as f64 - my);
            cxx += dx * dx;
            cyy += dy * dy;
            cxy += dx * dy;
        }
        // A pixel is a unit square, not a point: add its own variance.
        let (cxx, cyy, cxy) = (cxx / n + 1.0 / 12.0, cyy / n + 1.0 / 12.0, cxy / n);
        let det = cxx * cyy - cxy * cxy;
        // Inverse covariance; a uniform ellipse has semi-axes 2 sigma.
        let (ixx, iyy, ixy) = (cyy / det, cxx / det, -cxy / det);
        let (w, h) = m.dims();
        let mut inter = 0usize;
        let mut union = 0usize;
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - mx, y as f64 - my);
                let inside = ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy <= 4.0;
                let set = m.get(x, y);
                inter += (inside && set) as usize;
                union += (inside || set) as usize;
            }
        }
        Some(inter as f64 / union as f64)
    }

    /// Cluster probability of one object from its ellipse fit.
    pub fn cluster_probability(&self, m: &BinaryMask) -> f64 {
        match Self::ellipse_fit_iou(m) {
            Some(fit) => 1.0 / (1.0 + (100.0 * (fit - self.fit_threshold)).exp()),
            None => 0.0,
        }
    }
}

impl ClusterClassifier for ClassicalClassifier {
    fn classify(&self, img: &ImageRgb) -> Result<ClusterPrediction, InferenceError> {
        let instances = self.segmenter.instances(img);
        let p_cluster = instances.first().map_or(0.0, |o| self.cluster_probability(&o.mask));
        Ok(ClusterPrediction::from_cluster_probability(p_cluster))
    }
}

/// Classical instances that the shape rule calls clusters, with the
/// cluster probability as confidence. Lone cells are dropped.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClassicalClusterSegmenter {
    pub classifier: ClassicalClassifier,
}

impl InstanceSegmenter for ClassicalClusterSegmenter {
    fn segment(&self, img: &ImageRgb) -> Result<Vec<InstancePrediction>, InferenceError> {
        let mut out: Vec<InstancePrediction> = self
            .classifier
            .segmenter
            .instances(img)
            .into_iter()
            .filter_map(|mut inst| {
                let p = self.classifier.cluster_probability(&inst.mask);
                (p >= 0.5).then(|| {
                    inst.confidence = p;
                    inst
                })
            })
            .collect();
        sort_by_confidence(&mut out);
        Ok(out)
    }
}

/// Backend choice as written in configuration files and CLI flags.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Classical,
    /// Constant classifier output; segmentation echoes ground truth.
    Stub { label: ClusterLabel, score: f64 },
    /// Uses each record's own labels as predictions.
    GroundTruth,
    Onnx(PathBuf),
}

impl BackendSpec {
    /// `classical`, `gt`, `stub`, `stub:<label>:<score>` or `onnx:<path>`.
    pub fn parse(s: &str) -> Result<Self, InferenceError> {
        let bad = || InferenceError::BackendUnavailable(format!("unknown backend {s:?}"));
        match s {
            "classical" => return Ok(BackendSpec::Classical),
            "gt" | "ground-truth" => return Ok(BackendSpec::GroundTruth),
            "stub" => {
                return Ok(BackendSpec::Stub {
                    label: ClusterLabel::Cluster,
                    score: 1.0,
                })
            }
            _ => {}
        }
        if let Some(path) = s.strip_prefix("onnx:") {
            return Ok(BackendSpec::Onnx(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("stub:") {
            let (label, score) = rest.split_once(':').unwrap_or((rest, "1.0"));
            let label = match label {
                "cluster" => ClusterLabel::Cluster,
                "non-cluster" => ClusterLabel::NonCluster,
                _ => return Err(bad()),
            };
            let score: f64 = score.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&score) {
                return Err(bad());
            }
            return Ok(BackendSpec::Stub { label, score });
        }
        Err(bad())
    }
}

/// Loads an external classification model. This build carries no
/// neural-network runtime, so only the file check is performed and the
/// call reports the backend as unavailable.
pub fn load_onnx_classifier(path: &Path) -> Result<Box<dyn ClusterClassifier>, InferenceError> {
    if !path.is_file() {
        return Err(InferenceError::BackendUnavailable(format!(
            "model file {} not found",
            path.display()
        )));
    }
    Err(InferenceError::BackendUnavailable(format!(
        "{}: no model runtime compiled into this build",
        path.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(w: u32, h: u32, dark: impl Fn(i64, i64) -> bool) -> ImageRgb {
        ImageRgb::from_fn(w, h, |x, y| {
            if dark(x as i64, y as i64) {
                [70, 70, 70]
            } else {
                [210, 210, 210]
            }
        })
    }

    fn disc(cx: i64, cy: i64, r: i64) -> impl Fn(i64, i64) -> bool {
        move |x, y| (x - cx).pow(2) + (y - cy).pow(2) <= r * r
    }

    #[test]
    fn stub_contract_and_shape_check() {
        let stub = StubClassifier::new(ClusterLabel::Cluster, 0.9);
        let img = ImageRgb::filled(224, 224, [0, 0, 0]);
        let p = classify(&img, &stub).unwrap();
        assert_eq!((p.label, p.score), (ClusterLabel::Cluster, 0.9));
        assert!(matches!(
            classify(&ImageRgb::filled(100, 100, [0, 0, 0]), &stub),
            Err(InferenceError::ShapeMismatch { width: 100, .. })
        ));
    }

    #[test]
    fn probability_to_label() {
        let p = ClusterPrediction::from_cluster_probability(0.5);
        assert_eq!(p.label, ClusterLabel::Cluster);
        let p = ClusterPrediction::from_cluster_probability(0.2);
        assert_eq!((p.label, p.score), (ClusterLabel::NonCluster, 0.8));
        assert!((p.cluster_probability() - 0.2).abs() < 1e-12);
        assert!((cluster_probability_from_output([0.7, 0.3]) - 0.7).abs() < 1e-6);
        assert!((cluster_probability_from_output([2.0, 2.0]) - 0.5).abs() < 1e-12);
        assert!(cluster_probability_from_output([5.0, -1.0]) > 0.99);
    }

    #[test]
    fn input_tensor_is_planar() {
        let img = ImageRgb::new(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        assert_eq!(to_input_tensor(&img), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn classical_uniform_and_specks() {
        let seg = ClassicalSegmenter::default();
        assert!(segment(&ImageRgb::filled(50, 50, [200, 200, 200]), &seg).unwrap().is_empty());
        let specks = scene(50, 50, |x, y| {
            ((10..12).contains(&x) && (10..12).contains(&y)) || ((30..32).contains(&x) && (30..32).contains(&y))
        });
        assert!(segment(&specks, &seg).unwrap().is_empty());
    }

    #[test]
    fn classical_dark_square() {
        let img = scene(100, 80, |x, y| (20..50).contains(&x) && (15..45).contains(&y));
        let out = segment(&img, &ClassicalSegmenter::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, PixelBox { x: 20, y: 15, w: 30, h: 30 });
        assert_eq!(out[0].confidence, 1.0);
        assert_eq!(out[0].mask.bounding_box(), Some(out[0].bbox));
    }

    #[test]
    fn confidence_is_relative_area_and_sorted() {
        let img = scene(100, 100, |x, y| {
            ((5..15).contains(&x) && (5..15).contains(&y)) || ((40..60).contains(&x) && (40..60).contains(&y))
        });
        let out = segment(&img, &ClassicalSegmenter::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].confidence, 1.0);
        assert!((out[1].confidence - 0.25).abs() < 1e-12);
    }

    #[test]
    fn echo_returns_given_masks() {
        let m = BinaryMask::from_fn(10, 10, |x, y| x < 5 && y < 3);
        let echo = EchoSegmenter::from_masks([m.clone(), BinaryMask::new(10, 10)]);
        let out = segment(&ImageRgb::filled(10, 10, [0, 0, 0]), &echo).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mask, m);
    }

    #[test]
    fn classical_classifier_separates_touching_from_single() {
        let clf = ClassicalClassifier::default();
        let (a, b) = (disc(90, 112, 30), disc(136, 112, 30));
        let touching = scene(224, 224, |x, y| a(x, y) || b(x, y));
        assert_eq!(classify(&touching, &clf).unwrap().label, ClusterLabel::Cluster);

        let single = scene(224, 224, disc(112, 112, 35));
        assert_eq!(classify(&single, &clf).unwrap().label, ClusterLabel::NonCluster);

        let (c, d) = (disc(50, 50, 25), disc(170, 170, 25));
        let separated = scene(224, 224, |x, y| c(x, y) || d(x, y));
        assert_eq!(classify(&separated, &clf).unwrap().label, ClusterLabel::NonCluster);

        let blank = ImageRgb::filled(224, 224, [205, 205, 205]);
        assert_eq!(classify(&blank, &clf).unwrap().label, ClusterLabel::NonCluster);
    }

    #[test]
    fn ellipse_fit_is_tight_for_ellipses_only() {
        let (t, a, b) = (0.7f64, 30.0, 21.0);
        let ellipse = BinaryMask::from_fn(120, 120, |x, y| {
            let (dx, dy) = (x as f64 - 60.0, y as f64 - 55.0);
            let u = dx * t.cos() + dy * t.sin();
            let v = -dx * t.sin() + dy * t.cos();
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        });
        assert!(ClassicalClassifier::ellipse_fit_iou(&ellipse).unwrap() > 0.98);

        let (p, q) = (disc(45, 60, 20), disc(75, 60, 20));
        let pair = BinaryMask::from_fn(120, 120, |x, y| p(x as i64, y as i64) || q(x as i64, y as i64));
        assert!(ClassicalClassifier::ellipse_fit_iou(&pair).unwrap() < 0.93);
        assert_eq!(ClassicalClassifier::ellipse_fit_iou(&BinaryMask::new(4, 4)), None);
    }

    #[test]
    fn cluster_segmenter_drops_lone_cells() {
        let (a, b) = (disc(60, 60, 22), disc(92, 60, 22));
        let lone = disc(160, 170, 24);
        let img = scene(224, 224, |x, y| a(x, y) || b(x, y) || lone(x, y));
        let found = ClassicalClusterSegmenter::default().segment(&img).unwrap();
        assert_eq!(found.len(), 1);
        assert!(found[0].mask.get(60, 60) && found[0].mask.get(92, 60));
        assert!(found[0].confidence > 0.5);
        assert_eq!(ClassicalSegmenter::default().segment(&img).unwrap().len(), 2);
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!(BackendSpec::parse("classical").unwrap(), BackendSpec::Classical);
        assert_eq!(
            BackendSpec::parse("stub:non-cluster:0.7").unwrap(),
            BackendSpec::Stub { label: ClusterLabel::NonCluster, score: 0.7 }
        );
        assert_eq!(BackendSpec::parse("onnx:m.onnx").unwrap(), BackendSpec::Onnx("m.onnx".into()));
        assert!(BackendSpec::parse("stub:cluster:1.5").is_err());
        assert!(BackendSpec::parse("yolo").is_err());
    }

    #[test]
    fn missing_model_is_unavailable() {
        assert!(matches!(
            load_onnx_classifier(Path::new("/nonexistent/model.onnx")),
            Err(InferenceError::BackendUnavailable(_))
        ));
    }
}
