//! One function per subcommand. Each returns its JSON report and a table;
//! `main` decides where they go.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use ccc_core::dataset::{
    kfold_split, load_seg_labels, split_412, write_atomic, Channel, ClusterLabel, LabeledPolygon,
    Manifest, MultiChannelRecord,
};
use ccc_core::eval::{
    aggregate_folds, classification_metrics, render_table, ConfusionCounts, CrossvalReport,
    FoldResult, ImageEval, SegEvalReport,
};
use ccc_core::imaging::{rasterize_polygon, BinaryMask, ImageRgb};
use ccc_core::inference::{
    classify, load_onnx_classifier, BackendSpec, ClassicalClassifier, ClassicalClusterSegmenter,
    ClusterClassifier, InferenceError, InstancePrediction, InstanceSegmenter, StubClassifier,
};
use ccc_core::phenotype::{
    phenotype_record, sweep_thresholds, PhenotypeCall, PhenotypeSummary, SweepSample,
    SWEEP_TAUS, SWEEP_V_VALUES,
};
use ccc_core::preprocess::{expand_fivefold, standardize, PAD_GRAY, STANDARD_SIZE};
use ccc_core::synth::{generate_dataset, sweep_design_specs, write_scenes, DatasetOptions};

use crate::config::PipelineConfig;
use crate::UsageError;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

pub struct Output {
    pub stdout: String,
    pub table: String,
    /// Some inputs failed; the report lists them.
    pub partial_failure: bool,
}

impl Output {
    fn json(report: &impl Serialize, table: String) -> Result<Self> {
        Ok(Self {
            stdout: serde_json::to_string_pretty(report)? + "\n",
            table,
            partial_failure: false,
        })
    }
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(UsageError(format!("{} is not a directory", dir.display())).into());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Serialize)]
struct Failure {
    file: String,
    error: String,
}

/// Inputs whose stem repeats an earlier one would overwrite its output.
fn split_duplicate_stems(files: Vec<PathBuf>) -> (Vec<PathBuf>, Vec<Failure>) {
    let mut seen = BTreeSet::new();
    let mut keep = Vec::new();
    let mut dup = Vec::new();
    for f in files {
        if seen.insert(stem(&f)) {
            keep.push(f);
        } else {
            dup.push(Failure {
                file: file_name(&f),
                error: format!("another input already produces {}.png", stem(&f)),
            });
        }
    }
    (keep, dup)
}

pub fn preprocess(input: &Path, output: &Path) -> Result<Output> {
    let (files, mut failed) = split_duplicate_stems(image_files(input)?);
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let results: Vec<(String, Result<String>)> = files
        .par_iter()
        .map(|f| {
            let run = || -> Result<String> {
                let img = ImageRgb::load(f)?;
                let out = standardize(&img, STANDARD_SIZE, PAD_GRAY);
                let name = format!("{}.png", stem(f));
                write_atomic(&output.join(&name), &out.encode_png()?)?;
                Ok(name)
            };
            (file_name(f), run())
        })
        .collect();
    let mut processed = Vec::new();
    for (file, r) in results {
        match r {
            Ok(out) => processed.push(json!({"file": file, "output": out})),
            Err(e) => failed.push(Failure { file, error: format!("{e:#}") }),
        }
    }
    failed.sort_by(|a, b| a.file.cmp(&b.file));
    for f in &failed {
        log::error!("{}: {}", f.file, f.error);
    }
    let table = render_table(
        &["stage", "processed", "failed"],
        &[vec!["preprocess".into(), processed.len().to_string(), failed.len().to_string()]],
    );
    let mut out = Output::json(
        &json!({"size": STANDARD_SIZE, "processed": processed, "failed": failed}),
        table,
    )?;
    out.partial_failure = !failed.is_empty();
    Ok(out)
}

pub fn augment(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<Output> {
    let (files, mut failed) = split_duplicate_stems(image_files(input)?);
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let loaded: Vec<(PathBuf, Result<ImageRgb>)> = files
        .par_iter()
        .map(|f| (f.clone(), ImageRgb::load(f).map_err(Into::into)))
        .collect();
    let mut items = Vec::new();
    for (f, r) in loaded {
        match r {
            Ok(img) => items.push((stem(&f), img)),
            Err(e) => failed.push(Failure { file: file_name(&f), error: format!("{e:#}") }),
        }
    }
    let variants = expand_fivefold(&items, &cfg.augment, cfg.seed);
    variants
        .par_iter()
        .map(|v| -> Result<()> {
            write_atomic(&output.join(format!("{}.png", v.id())), &v.image.encode_png()?)?;
            Ok(())
        })
        .collect::<Result<()>>()?;
    let written: Vec<Value> = variants
        .iter()
        .map(|v| json!({"source": v.source_id, "variant": v.variant, "seed": v.seed, "output": format!("{}.png", v.id())}))
        .collect();
    failed.sort_by(|a, b| a.file.cmp(&b.file));
    let table = render_table(
        &["stage", "sources", "variants", "failed"],
        &[vec!["augment".into(), items.len().to_string(), written.len().to_string(), failed.len().to_string()]],
    );
    let mut out = Output::json(
        &json!({"seed": cfg.seed, "params": cfg.augment, "variants": written, "failed": failed}),
        table,
    )?;
    out.partial_failure = !failed.is_empty();
    Ok(out)
}

fn label_counts<'a>(records: impl Iterator<Item = &'a MultiChannelRecord>) -> BTreeMap<ClusterLabel, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.cluster_label).or_insert(0) += 1;
    }
    counts
}

pub fn split(manifest: &Path, holdout: bool, cfg: &PipelineConfig) -> Result<Output> {
    let m = load_manifest(manifest)?;
    let by_id: BTreeMap<&str, &MultiChannelRecord> = m.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let row = |name: String, ids: &[&str]| {
        let c = label_counts(ids.iter().map(|id| by_id[id]));
        let get = |l| c.get(&l).copied().unwrap_or(0).to_string();
        vec![name, get(ClusterLabel::Cluster), get(ClusterLabel::NonCluster), get(ClusterLabel::Unknown), ids.len().to_string()]
    };
    let header = ["part", "cluster", "non-cluster", "unknown", "total"];
    if holdout {
        let s = split_412(&m.records, cfg.seed)?;
        let train: Vec<&str> = s.train.iter().map(String::as_str).collect();
        let test: Vec<&str> = s.test.iter().map(String::as_str).collect();
        let table = render_table(&header, &[row("train".into(), &train), row("test".into(), &test)]);
        return Output::json(&json!({"mode": "holdout", "seed": cfg.seed, "train": s.train, "test": s.test}), table);
    }
    let s = kfold_split(&m.records, cfg.k, cfg.seed)?;
    let mut rows = Vec::new();
    let mut folds = Vec::new();
    for f in 0..cfg.k {
        let ids = s.validation_ids(f);
        rows.push(row(format!("fold {f}"), &ids));
        folds.push(json!({"fold": f, "size": ids.len(), "validation": ids}));
    }
    Output::json(&json!({"mode": "kfold", "k": cfg.k, "seed": cfg.seed, "folds": folds}), render_table(&header, &rows))
}

enum Classifier {
    Labels,
    Model(Box<dyn ClusterClassifier>),
}

fn classifier_for(spec: &BackendSpec) -> Result<Classifier> {
    Ok(match spec {
        BackendSpec::GroundTruth => Classifier::Labels,
        BackendSpec::Classical => Classifier::Model(Box::new(ClassicalClassifier::default())),
        BackendSpec::Stub { label, score } => Classifier::Model(Box::new(StubClassifier::new(*label, *score))),
        BackendSpec::Onnx(path) => Classifier::Model(load_onnx_classifier(path)?),
    })
}

pub fn crossval(manifest: &Path, cfg: &PipelineConfig) -> Result<Output> {
    let m = load_manifest(manifest)?;
    let spec = cfg.backend_spec()?;
    let clf = classifier_for(&spec)?;
    let labeled: Vec<MultiChannelRecord> = m
        .records
        .iter()
        .filter(|r| r.cluster_label != ClusterLabel::Unknown)
        .cloned()
        .collect();
    if labeled.len() < m.records.len() {
        log::warn!("{} records without a cluster label are left out", m.records.len() - labeled.len());
    }
    let folds = kfold_split(&labeled, cfg.k, cfg.seed)?;
    let predicted: BTreeMap<&str, ClusterLabel> = labeled
        .par_iter()
        .map(|r| -> Result<(&str, ClusterLabel)> {
            let label = match &clf {
                Classifier::Labels => r.cluster_label,
                Classifier::Model(model) => {
                    let img = m
                        .load_channel(r, Channel::Brightfield)?
                        .expect("brightfield path is mandatory");
                    classify(&standardize(&img, STANDARD_SIZE, PAD_GRAY), model.as_ref())?.label
                }
            };
            Ok((r.id.as_str(), label))
        })
        .collect::<Result<_>>()?;
    let truth: BTreeMap<&str, ClusterLabel> = labeled.iter().map(|r| (r.id.as_str(), r.cluster_label)).collect();
    let mut results = Vec::new();
    for f in 0..cfg.k {
        let counts = ConfusionCounts::from_pairs(folds.validation_ids(f).into_iter().map(|id| {
            (truth[id] == ClusterLabel::Cluster, predicted[id] == ClusterLabel::Cluster)
        }));
        let metrics = classification_metrics(&counts).with_context(|| format!("fold {f}"))?;
        results.push(FoldResult { fold: f, counts, metrics });
    }
    let aggregate = aggregate_folds(&results.iter().map(|r| r.metrics).collect::<Vec<_>>())?;
    let report = CrossvalReport { k: cfg.k, backend: cfg.backend.clone(), folds: results, aggregate };
    Output::json(&report, report.table())
}

/// Labeled outlines from the manifest record, else from `labels/{id}.txt`.
fn ground_truth_polygons(m: &Manifest, r: &MultiChannelRecord) -> Result<Option<Vec<LabeledPolygon>>> {
    if let Some(p) = &r.polygons {
        return Ok(Some(p.clone()));
    }
    let path = m.root.join("labels").join(format!("{}.txt", r.id));
    if path.exists() {
        return Ok(Some(load_seg_labels(&path)?));
    }
    Ok(None)
}

fn brightfield_dims(m: &Manifest, r: &MultiChannelRecord) -> Result<(u32, u32)> {
    Ok(ImageRgb::probe_dims(m.resolve(&r.brightfield))?)
}

pub fn segeval(manifest: &Path, cfg: &PipelineConfig) -> Result<Output> {
    let m = load_manifest(manifest)?;
    let spec = cfg.backend_spec()?;
    let model: Option<Box<dyn InstanceSegmenter>> = match &spec {
        BackendSpec::Classical => Some(Box::new(ClassicalClusterSegmenter::default())),
        BackendSpec::GroundTruth | BackendSpec::Stub { .. } => None,
        BackendSpec::Onnx(p) => {
            return Err(InferenceError::BackendUnavailable(format!(
                "no ONNX runtime for segmentation model {}",
                p.display()
            ))
            .into())
        }
    };
    let images: Vec<Option<ImageEval>> = m
        .records
        .par_iter()
        .map(|r| -> Result<Option<ImageEval>> {
            let polys = ground_truth_polygons(&m, r)?;
            let gt: Vec<BinaryMask> = match (r.cluster_label, polys) {
                (_, Some(polys)) => {
                    let (w, h) = brightfield_dims(&m, r)?;
                    polys.iter().map(|p| rasterize_polygon(&p.polygon, w, h)).collect()
                }
                (ClusterLabel::NonCluster, None) => Vec::new(),
                (_, None) => {
                    log::warn!("{}: no outlines, left out of segmentation scoring", r.id);
                    return Ok(None);
                }
            };
            let predictions = match &model {
                Some(seg) => {
                    let img = m.load_channel(r, Channel::Brightfield)?.expect("brightfield path is mandatory");
                    seg.segment(&img)?
                }
                None => gt.iter().filter_map(|g| InstancePrediction::from_mask(g.clone(), 1.0, 0)).collect(),
            };
            Ok(Some(ImageEval { predictions, ground_truth: gt }))
        })
        .collect::<Result<_>>()?;
    let images: Vec<ImageEval> = images.into_iter().flatten().collect();
    let report = SegEvalReport::compute(&cfg.backend, &images)?;
    Output::json(&report, report.table())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskSource {
    /// Outlines when present, otherwise predicted.
    Auto,
    Gt,
    Predicted,
}

fn union(masks: impl IntoIterator<Item = BinaryMask>, w: u32, h: u32) -> BinaryMask {
    masks
        .into_iter()
        .fold(BinaryMask::new(w, h), |acc, m| acc.union(&m).expect("same dimensions"))
}

fn cluster_mask(m: &Manifest, r: &MultiChannelRecord, source: MaskSource) -> Result<(BinaryMask, &'static str)> {
    let (w, h) = brightfield_dims(m, r)?;
    if source != MaskSource::Predicted {
        match ground_truth_polygons(m, r)? {
            Some(polys) => {
                return Ok((union(polys.iter().map(|p| rasterize_polygon(&p.polygon, w, h)), w, h), "gt"));
            }
            None if source == MaskSource::Gt => bail!("{}: no cluster outlines", r.id),
            None => {}
        }
    }
    let img = m.load_channel(r, Channel::Brightfield)?.expect("brightfield path is mandatory");
    let found = ClassicalClusterSegmenter::default().segment(&img)?;
    Ok((union(found.into_iter().map(|i| i.mask), w, h), "predicted"))
}

/// Channel image, or `None` with a warning when it is not available.
fn optional_channel(m: &Manifest, r: &MultiChannelRecord, ch: Channel, missing: &mut Vec<&'static str>) -> Option<ImageRgb> {
    match m.load_channel(r, ch) {
        Ok(Some(img)) => Some(img),
        Ok(None) => {
            log::warn!("{}: no {} image, treated as unstained", r.id, ch.suffix());
            missing.push(ch.suffix());
            None
        }
        Err(e) => {
            log::warn!("{}: {} image unreadable ({e}), treated as unstained", r.id, ch.suffix());
            missing.push(ch.suffix());
            None
        }
    }
}

pub fn phenotype(manifest: &Path, source: MaskSource, cfg: &PipelineConfig) -> Result<Output> {
    let m = load_manifest(manifest)?;
    let params = cfg.phenotype_params();
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    let clusters: Vec<&MultiChannelRecord> =
        m.records.iter().filter(|r| r.cluster_label == ClusterLabel::Cluster).collect();
    let lines: Vec<(Value, Option<(PhenotypeCall, Option<ccc_core::dataset::Phenotype>)>)> = clusters
        .par_iter()
        .map(|r| {
            let run = || -> Result<(Value, PhenotypeCall)> {
                let (mask, mask_source) = cluster_mask(&m, r, source)?;
                let mut missing = Vec::new();
                let cd61 = optional_channel(&m, r, Channel::Cd61, &mut missing);
                let cd45 = optional_channel(&m, r, Channel::Cd45, &mut missing);
                let d = phenotype_record(&mask, cd61.as_ref(), cd45.as_ref(), &params)?;
                let line = json!({
                    "kind": "decision",
                    "id": r.id,
                    "phenotype": d.phenotype,
                    "truth": r.phenotype_label,
                    "mask": mask_source,
                    "missing_channels": missing,
                    "cd61": d.cd61,
                    "cd45": d.cd45,
                });
                Ok((line, d.phenotype))
            };
            match run() {
                Ok((line, call)) => (line, Some((call, r.phenotype_label))),
                Err(e) => {
                    log::error!("{}: {e:#}", r.id);
                    (json!({"kind": "error", "id": r.id, "error": format!("{e:#}")}), None)
                }
            }
        })
        .collect();

    let mut calls: BTreeMap<&str, usize> = BTreeMap::new();
    for (call, _) in lines.iter().filter_map(|(_, c)| c.as_ref()) {
        *calls.entry(call.as_str()).or_insert(0) += 1;
    }
    let errors = lines.iter().filter(|(_, c)| c.is_none()).count();
    let scored: Vec<(PhenotypeCall, ccc_core::dataset::Phenotype)> = lines
        .iter()
        .filter_map(|(_, c)| (*c).and_then(|(call, truth)| truth.map(|t| (call, t))))
        .collect();
    let summary = if scored.is_empty() { None } else { Some(PhenotypeSummary::from_calls(scored)?) };

    let mut stdout = String::new();
    for (line, _) in &lines {
        stdout.push_str(&serde_json::to_string(line)?);
        stdout.push('\n');
    }
    let summary_line = json!({
        "kind": "summary",
        "records": lines.len(),
        "errors": errors,
        "tau": params.tau,
        "v_x": params.v_x,
        "calls": calls,
        "accuracy": summary,
    });
    stdout.push_str(&serde_json::to_string(&summary_line)?);
    stdout.push('\n');

    let mut rows: Vec<Vec<String>> = calls.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect();
    if let Some(s) = summary {
        rows.push(vec!["accuracy %".into(), format!("{:.2}", 100.0 * s.accuracy)]);
        if let Some(d) = s.decided_accuracy {
            rows.push(vec!["decided accuracy %".into(), format!("{:.2}", 100.0 * d)]);
        }
        rows.push(vec!["coverage %".into(), format!("{:.2}", 100.0 * s.coverage)]);
    }
    Ok(Output {
        stdout,
        table: render_table(&["call", "count"], &rows),
        partial_failure: errors > 0,
    })
}

pub fn sweep(manifest: &Path, csv: Option<&Path>, cfg: &PipelineConfig) -> Result<Output> {
    let m = load_manifest(manifest)?;
    let samples: Vec<Option<SweepSample>> = m
        .records
        .par_iter()
        .map(|r| -> Result<Option<SweepSample>> {
            let Some(truth) = r.phenotype_label else { return Ok(None) };
            if ground_truth_polygons(&m, r)?.is_none() {
                log::warn!("{}: no cluster outlines, left out of the sweep", r.id);
                return Ok(None);
            }
            let (cluster, _) = cluster_mask(&m, r, MaskSource::Gt)?;
            let mut missing = Vec::new();
            Ok(Some(SweepSample {
                id: r.id.clone(),
                cluster,
                cd61: optional_channel(&m, r, Channel::Cd61, &mut missing),
                cd45: optional_channel(&m, r, Channel::Cd45, &mut missing),
                truth,
            }))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<SweepSample> = samples.into_iter().flatten().collect();
    let grid = sweep_thresholds(&samples, &SWEEP_V_VALUES, &SWEEP_TAUS, cfg.min_stain_area)?;
    if let Some(path) = csv {
        write_atomic(path, grid.to_csv().as_bytes())?;
    }
    let table = format!("{}\n{}", grid.accuracy_table(), grid.area_table());
    Output::json(&grid, table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthPreset {
    /// Four cluster phenotypes and three non-cluster scene kinds.
    Categories,
    /// Clean and partially stained clusters for the threshold sweep.
    Sweep,
}

pub fn synth(output: &Path, per_category: usize, preset: SynthPreset, opts: &DatasetOptions, seed: u64) -> Result<Output> {
    let summary = match preset {
        SynthPreset::Categories => generate_dataset(output, per_category, seed, opts)?,
        SynthPreset::Sweep => {
            if per_category == 0 {
                return Err(UsageError("need at least one record per group".into()).into());
            }
            write_scenes(output, &sweep_design_specs(per_category, seed))?
        }
    };
    let table = render_table(
        &["records", "manifest", "digest"],
        &[vec![summary.records.to_string(), summary.manifest.display().to_string(), summary.digest[..16].to_string()]],
    );
    Output::json(&summary, table)
}
