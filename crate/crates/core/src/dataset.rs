//! Record catalog, JSON-lines manifests, stratified splits and segmentation
//! label files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{rasterize_polygon, BinaryMask, ImageRgb, ImagingError, Polygon};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("insufficient records: class {class} has {have}, need at least {need}")]
    InsufficientRecords {
        class: String,
        have: usize,
        need: usize,
    },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("label line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterLabel {
    Cluster,
    NonCluster,
    Unknown,
}

impl ClusterLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterLabel::Cluster => "cluster",
            ClusterLabel::NonCluster => "non-cluster",
            ClusterLabel::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground-truth composition of a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phenotype {
    #[serde(rename = "RBC")]
    Rbc,
    #[serde(rename = "PLT")]
    Plt,
    #[serde(rename = "WBC")]
    Wbc,
    #[serde(rename = "WBC+PLT")]
    WbcPlt,
}

impl Phenotype {
    pub const ALL: [Phenotype; 4] = [Phenotype::Rbc, Phenotype::Plt, Phenotype::Wbc, Phenotype::WbcPlt];

    pub fn as_str(self) -> &'static str {
        match self {
            Phenotype::Rbc => "RBC",
            Phenotype::Plt => "PLT",
            Phenotype::Wbc => "WBC",
            Phenotype::WbcPlt => "WBC+PLT",
        }
    }

    /// Whether the CD61 (platelet) stain is expected on the cluster.
    pub fn expresses_cd61(self) -> bool {
        matches!(self, Phenotype::Plt | Phenotype::WbcPlt)
    }

    /// Whether the CD45 (leukocyte) stain is expected on the cluster.
    pub fn expresses_cd45(self) -> bool {
        matches!(self, Phenotype::Wbc | Phenotype::WbcPlt)
    }
}

impl fmt::Display for Phenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Image channels of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    #[serde(alias = "bf")]
    Brightfield,
    Cd61,
    Cd45,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Brightfield, Channel::Cd61, Channel::Cd45];

    pub fn suffix(self) -> &'static str {
        match self {
            Channel::Brightfield => "bf",
            Channel::Cd61 => "cd61",
            Channel::Cd45 => "cd45",
        }
    }

    /// Conventional file name, `{id}_{suffix}.png`.
    pub fn file_name(self, id: &str) -> String {
        format!("{id}_{}.png", self.suffix())
    }

    pub fn parse(s: &str) -> Option<Channel> {
        match s.to_ascii_lowercase().as_str() {
            "bf" | "brightfield" => Some(Channel::Brightfield),
            "cd61" => Some(Channel::Cd61),
            "cd45" => Some(Channel::Cd45),
            _ => None,
        }
    }
}

/// One polygon instance with its class id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPolygon {
    pub class_id: u32,
    pub polygon: Polygon,
}

/// One specimen frame: brightfield plus optional stain channels and labels.
/// Paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiChannelRecord {
    pub id: String,
    pub brightfield: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cd61: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cd45: Option<PathBuf>,
    pub cluster_label: ClusterLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phenotype_label: Option<Phenotype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygons: Option<Vec<LabeledPolygon>>,
    /// Free-form metadata (generator kind, injected artifacts, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, serde_json::Value>,
}

impl MultiChannelRecord {
    /// A record following the `{id}_{channel}.png` naming convention.
    pub fn conventional(id: &str, cluster_label: ClusterLabel) -> Self {
        Self {
            id: id.to_string(),
            brightfield: Channel::Brightfield.file_name(id).into(),
            cd61: Some(Channel::Cd61.file_name(id).into()),
            cd45: Some(Channel::Cd45.file_name(id).into()),
            cluster_label,
            phenotype_label: None,
            polygons: None,
            attributes: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: &str| DatasetError::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() || self.id.chars().any(|c| c.is_whitespace() || c == '/') {
            return Err(invalid("id must be non-empty without whitespace or '/'"));
        }
        if self.brightfield.as_os_str().is_empty() {
            return Err(invalid("brightfield path is empty"));
        }
        if self.phenotype_label.is_some() && self.cluster_label != ClusterLabel::Cluster {
            return Err(invalid("phenotype label on a record not labeled cluster"));
        }
        Ok(())
    }

    pub fn channel_path(&self, channel: Channel) -> Option<&Path> {
        match channel {
            Channel::Brightfield => Some(&self.brightfield),
            Channel::Cd61 => self.cd61.as_deref(),
            Channel::Cd45 => self.cd45.as_deref(),
        }
    }

    /// Union of all labeled polygons rasterized at `width x height`.
    pub fn polygon_mask(&self, width: u32, height: u32) -> Option<BinaryMask> {
        let polys = self.polygons.as_ref()?;
        let mut mask = BinaryMask::new(width, height);
        for lp in polys {
            mask = mask
                .union(&rasterize_polygon(&lp.polygon, width, height))
                .expect("same dimensions");
        }
        Some(mask)
    }

    /// Label text for this record's polygons.
    pub fn seg_label_text(&self) -> Option<String> {
        self.polygons.as_deref().map(write_seg_labels)
    }
}

/// A set of records plus the directory their relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<MultiChannelRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<MultiChannelRecord>) -> Self {
        Self {
            root: root.into(),
            records,
        }
    }

    /// Parses JSON-lines text; blank lines are skipped.
    pub fn parse(root: impl Into<PathBuf>, text: &str) -> Result<Self, DatasetError> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: MultiChannelRecord = serde_json::from_str(line)
                .map_err(|source| DatasetError::Json { line: i + 1, source })?;
            rec.validate()?;
            if !seen.insert(rec.id.clone()) {
                return Err(DatasetError::DuplicateId(rec.id));
            }
            records.push(rec);
        }
        Ok(Self::new(root, records))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(root, &text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Writes the manifest via a temporary file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_atomic(path.as_ref(), self.to_jsonl().as_bytes())
    }

    pub fn get(&self, id: &str) -> Option<&MultiChannelRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        }
    }

    /// Loads one channel image. `Ok(None)` when the record has no path for
    /// the channel.
    pub fn load_channel(
        &self,
        rec: &MultiChannelRecord,
        channel: Channel,
    ) -> Result<Option<ImageRgb>, DatasetError> {
        match rec.channel_path(channel) {
            None => Ok(None),
            Some(rel) => Ok(Some(ImageRgb::load(self.resolve(rel))?)),
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Assignment of every record id to one validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Ids held out in `fold`, sorted.
    pub fn validation_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Ids used for training when `fold` is held out, sorted.
    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Records grouped by cluster label, each group sorted by id then shuffled
/// with `rng`.
fn shuffled_groups<'a>(
    records: &'a [MultiChannelRecord],
    rng: &mut ChaCha8Rng,
) -> BTreeMap<ClusterLabel, Vec<&'a MultiChannelRecord>> {
    let mut groups: BTreeMap<ClusterLabel, Vec<&MultiChannelRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.cluster_label).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.id.cmp(&b.id));
        g.shuffle(rng);
    }
    groups
}

/// Stratified k-fold assignment.
///
/// Within each cluster label the records are shuffled and dealt round-robin.
/// The dealing position carries over from one class to the next, so the
/// remainders of different classes land on different folds and total fold
/// sizes also differ by at most one.
pub fn kfold_split(
    records: &[MultiChannelRecord],
    k: usize,
    seed: u64,
) -> Result<FoldSplit, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidFoldCount(k));
    }
    if records.is_empty() {
        return Err(DatasetError::InsufficientRecords {
            class: "any".into(),
            have: 0,
            need: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(records, &mut rng);
    if let Some((label, g)) = groups.iter().find(|(_, g)| g.len() < k) {
        return Err(DatasetError::InsufficientRecords {
            class: label.to_string(),
            have: g.len(),
            need: k,
        });
    }
    let mut assignments = BTreeMap::new();
    let mut offset = 0;
    for g in groups.values() {
        for (i, r) in g.iter().enumerate() {
            assignments.insert(r.id.clone(), (offset + i) % k);
        }
        offset = (offset + g.len()) % k;
    }
    Ok(FoldSplit { k, assignments })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified 4:1 train/test split.
///
/// The test set holds `round(n / 5)` records (half up), distributed over the
/// cluster labels by largest remainder.
pub fn split_412(records: &[MultiChannelRecord], seed: u64) -> Result<TrainTestSplit, DatasetError> {
    let n = records.len();
    if n < 5 {
        return Err(DatasetError::InsufficientRecords {
            class: "any".into(),
            have: n,
            need: 5,
        });
    }
    let total_test = (2 * n + 5) / 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(records, &mut rng);

    let mut quotas: Vec<usize> = groups.values().map(|g| g.len() * total_test / n).collect();
    let mut remainders: Vec<(usize, usize)> = groups
        .values()
        .enumerate()
        .map(|(i, g)| (g.len() * total_test % n, i))
        .collect();
    // Largest remainder first; ties go to the earlier class.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total_test - quotas.iter().sum::<usize>();
    for &(_, i) in remainders.iter().take(missing) {
        quotas[i] += 1;
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, &q) in groups.values().zip(&quotas) {
        test.extend(g[..q].iter().map(|r| r.id.clone()));
        train.extend(g[q..].iter().map(|r| r.id.clone()));
    }
    train.sort();
    test.sort();
    Ok(TrainTestSplit { train, test })
}

/// One line per instance: `<class_id> <x1> <y1> ... <xn> <yn>`, six decimals.
pub fn write_seg_labels(polygons: &[LabeledPolygon]) -> String {
    let mut out = String::new();
    for lp in polygons {
        out.push_str(&lp.class_id.to_string());
        for &[x, y] in lp.polygon.vertices() {
            out.push_str(&format!(" {x:.6} {y:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Parses label text produced by [`write_seg_labels`]. Blank lines are
/// ignored; coordinates are already normalized so no image size is needed.
pub fn read_seg_labels(text: &str) -> Result<Vec<LabeledPolygon>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let malformed = |reason: String| DatasetError::MalformedLine { line: i + 1, reason };
        let mut fields = line.split_whitespace();
        let Some(class) = fields.next() else { continue };
        let class_id: u32 = class
            .parse()
            .map_err(|_| malformed(format!("class id {class:?} is not a non-negative integer")))?;
        let coords = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(format!("{f:?} is not a number")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if coords.len() % 2 != 0 {
            return Err(malformed(format!("odd coordinate count {}", coords.len())));
        }
        if coords.len() < 6 {
            return Err(malformed(format!("{} points, need at least 3", coords.len() / 2)));
        }
        if let Some(v) = coords.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(malformed(format!("coordinate {v} outside [0, 1]")));
        }
        let vertices = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        out.push(LabeledPolygon {
            class_id,
            polygon: Polygon::new(vertices)?,
        });
    }
    Ok(out)
}

pub fn save_seg_labels(path: &Path, polygons: &[LabeledPolygon]) -> Result<(), DatasetError> {
    write_atomic(path, write_seg_labels(polygons).as_bytes())
}

pub fn load_seg_labels(path: &Path) -> Result<Vec<LabeledPolygon>, DatasetError> {
    read_seg_labels(&fs::read_to_string(path).map_err(io_err(path))?)
}
