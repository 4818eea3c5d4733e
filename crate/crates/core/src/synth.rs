//! Synthetic multi-channel scenes with exact ground truth.
//!
//! Cells are filled ellipses, dark on a light brightfield background. The
//! fluorescence channels are black frames with green (CD61) or yellow
//! (CD45) regions placed according to the phenotype and the requested
//! artifact mode. Every random choice comes from one seeded generator, so a
//! spec always renders to the same bytes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    save_seg_labels, write_atomic, Channel, ClusterLabel, DatasetError, LabeledPolygon, Manifest,
    MultiChannelRecord, Phenotype,
};
use crate::imaging::{connected_components, mask_to_polygons, BinaryMask, ImageRgb, ImagingError};
use crate::phenotype::Stain;
use crate::seeds::{derive_seed, hex_digest};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Blank,
    SingleCell,
    MultiSeparated,
    Cluster,
}

impl SceneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Blank => "blank",
            SceneKind::SingleCell => "single_cell",
            SceneKind::MultiSeparated => "multi_separated",
            SceneKind::Cluster => "cluster",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Artifact {
    None,
    /// A debris blob of stain placed away from the cluster.
    StainOutside,
    /// A stain slab that covers `fraction` of the cluster and runs past it.
    PartialCover { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub canvas: (u32, u32),
    pub kind: SceneKind,
    pub phenotype: Option<Phenotype>,
    pub n_cells: u32,
    pub artifact: Artifact,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub const DEFAULT_CANVAS: u32 = 128;
pub const DEFAULT_NOISE_SIGMA: f64 = 4.0;
/// Minimum pixel gap between cells of a `multi_separated` scene.
pub const SEPARATION_PX: i64 = 5;

impl SceneSpec {
    pub fn cluster(phenotype: Phenotype, n_cells: u32, seed: u64) -> Self {
        Self {
            canvas: (DEFAULT_CANVAS, DEFAULT_CANVAS),
            kind: SceneKind::Cluster,
            phenotype: Some(phenotype),
            n_cells,
            artifact: Artifact::None,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed,
        }
    }

    pub fn non_cluster(kind: SceneKind, n_cells: u32, seed: u64) -> Self {
        Self {
            canvas: (DEFAULT_CANVAS, DEFAULT_CANVAS),
            kind,
            phenotype: None,
            n_cells,
            artifact: Artifact::None,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed,
        }
    }

    pub fn with_artifact(mut self, artifact: Artifact) -> Self {
        self.artifact = artifact;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let (w, h) = self.canvas;
        if w < 48 || h < 48 {
            return bad(format!("canvas {w}x{h} smaller than 48x48"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be finite and >= 0", self.noise_sigma));
        }
        let n = self.n_cells;
        let cells_ok = match self.kind {
            SceneKind::Blank => n == 0,
            SceneKind::SingleCell => n == 1,
            SceneKind::MultiSeparated => (2..=6).contains(&n),
            SceneKind::Cluster => (2..=8).contains(&n),
        };
        if !cells_ok {
            return bad(format!("{} scene cannot have {n} cells", self.kind.as_str()));
        }
        if self.phenotype.is_some() && self.kind != SceneKind::Cluster {
            return bad("phenotype given for a non-cluster scene".into());
        }
        if self.artifact != Artifact::None && self.phenotype.is_none() {
            return bad("artifacts need a phenotyped cluster".into());
        }
        if let Artifact::PartialCover { fraction } = self.artifact {
            if !(fraction > 0.0 && fraction < 1.0) {
                return bad(format!("partial cover fraction {fraction} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.cx, py - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn mean_radius(&self) -> f64 {
        (self.a + self.b) / 2.0
    }

    fn fits(&self, w: u32, h: u32, margin: f64) -> bool {
        let r = self.a.max(self.b) + margin;
        self.cx - r >= 0.0 && self.cy - r >= 0.0 && self.cx + r <= w as f64 && self.cy + r <= h as f64
    }

    /// Pixels whose centers fall inside.
    fn mask(&self, w: u32, h: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

/// Rendered scene plus every ground-truth mask used to build it.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    pub brightfield: ImageRgb,
    pub cd61: ImageRgb,
    pub cd45: ImageRgb,
    pub cell_masks: Vec<BinaryMask>,
    /// Union of the member cells for cluster scenes, empty otherwise.
    pub cluster_mask: BinaryMask,
    pub cd61_truth: BinaryMask,
    pub cd45_truth: BinaryMask,
    /// Channels that received a debris blob.
    pub debris_channels: Vec<Stain>,
    /// Channels whose only stain is debris.
    pub artifact_channels: Vec<Stain>,
}

impl Scene {
    pub fn channel(&self, c: Channel) -> &ImageRgb {
        match c {
            Channel::Brightfield => &self.brightfield,
            Channel::Cd61 => &self.cd61,
            Channel::Cd45 => &self.cd45,
        }
    }
}

/// Integer HSV (half-degree hue) to RGB.
pub fn hsv_to_rgb(h_half: f64, s: f64, v: f64) -> [u8; 3] {
    let (s, v) = (s / 255.0, v / 255.0);
    let hp = (h_half * 2.0).rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
}

fn stain_color(rng: &mut ChaCha8Rng, stain: Stain) -> [u8; 3] {
    let hue = match stain {
        Stain::Cd61 => rng.random_range(50.0..=70.0),
        Stain::Cd45 => rng.random_range(25.0..=33.0),
    };
    let s = rng.random_range(200.0..=255.0);
    let v = rng.random_range(200.0..=255.0);
    hsv_to_rgb(hue, s, v)
}

struct Placer<'a> {
    rng: &'a mut ChaCha8Rng,
    w: u32,
    h: u32,
    r_min: f64,
    r_max: f64,
}

impl Placer<'_> {
    fn ellipse_at(&mut self, cx: f64, cy: f64) -> Ellipse {
        let a = self.rng.random_range(self.r_min..=self.r_max);
        let b = (a * self.rng.random_range(0.75..=1.0)).max(self.r_min * 0.75);
        Ellipse {
            cx,
            cy,
            a,
            b,
            theta: self.rng.random_range(0.0..PI),
        }
    }

    fn random_ellipse(&mut self) -> Ellipse {
        let cx = self.rng.random_range(0.0..self.w as f64);
        let cy = self.rng.random_range(0.0..self.h as f64);
        self.ellipse_at(cx, cy)
    }

    fn cluster(&mut self, n: u32) -> Option<Vec<Ellipse>> {
        let (w, h) = (self.w as f64, self.h as f64);
        for _ in 0..200 {
            let cx = w / 2.0 + self.rng.random_range(-0.1..=0.1) * w;
            let cy = h / 2.0 + self.rng.random_range(-0.1..=0.1) * h;
            let mut cells = vec![self.ellipse_at(cx, cy)];
            let mut tries = 0;
            while cells.len() < n as usize && tries < 400 {
                tries += 1;
                let anchor = cells[self.rng.random_range(0..cells.len())];
                let mut cell = self.ellipse_at(0.0, 0.0);
                let phi = self.rng.random_range(0.0..2.0 * PI);
                let d = self.rng.random_range(0.6..=0.85) * (anchor.mean_radius() + cell.mean_radius());
                cell.cx = anchor.cx + d * phi.cos();
                cell.cy = anchor.cy + d * phi.sin();
                if cell.fits(self.w, self.h, 3.0) {
                    cells.push(cell);
                }
            }
            if cells.len() == n as usize && cells[0].fits(self.w, self.h, 3.0) {
                return Some(cells);
            }
        }
        None
    }

    fn separated(&mut self, n: u32) -> Option<Vec<BinaryMask>> {
        let gap = SEPARATION_PX + 1;
        let near: Vec<(i64, i64)> = (-gap..=gap)
            .flat_map(|dy| (-gap..=gap).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy < gap * gap)
            .collect();
        for _ in 0..100 {
            let mut masks: Vec<BinaryMask> = Vec::new();
            let mut occupied = BinaryMask::new(self.w, self.h);
            let mut tries = 0;
            while masks.len() < n as usize && tries < 300 {
                tries += 1;
                let e = self.random_ellipse();
                if !e.fits(self.w, self.h, 2.0) {
                    continue;
                }
                let m = e.mask(self.w, self.h);
                let clash = m.set_pixels().any(|(x, y)| {
                    near.iter()
                        .any(|&(dx, dy)| occupied.get_signed(x as i64 + dx, y as i64 + dy))
                });
                if !clash {
                    occupied = occupied.union(&m).expect("same dims");
                    masks.push(m);
                }
            }
            if masks.len() == n as usize {
                return Some(masks);
            }
        }
        None
    }

    /// Debris blob at least 3 px away from `avoid`.
    fn debris(&mut self, avoid: &BinaryMask) -> Option<BinaryMask> {
        let near = |m: &BinaryMask| {
            m.set_pixels().any(|(x, y)| {
                (-3i64..=3).any(|dy| (-3i64..=3).any(|dx| avoid.get_signed(x as i64 + dx, y as i64 + dy)))
            })
        };
        for _ in 0..500 {
            let r = self.rng.random_range(5.0..=9.0);
            let e = Ellipse {
                cx: self.rng.random_range(0.0..self.w as f64),
                cy: self.rng.random_range(0.0..self.h as f64),
                a: r,
                b: r * self.rng.random_range(0.8..=1.0),
                theta: self.rng.random_range(0.0..PI),
            };
            if !e.fits(self.w, self.h, 1.0) {
                continue;
            }
            let m = e.mask(self.w, self.h);
            if !near(&m) {
                return Some(m);
            }
        }
        None
    }
}

/// Full-height columns left of the cut plus a partial column, chosen so
/// the region covers exactly `ceil(fraction * area)` pixels of `cluster`
/// and extends beyond it above and below.
pub fn partial_cover_slab(cluster: &BinaryMask, fraction: f64) -> BinaryMask {
    let (w, h) = cluster.dims();
    let target = (fraction * cluster.area() as f64).ceil() as usize;
    let mut covered = 0;
    let mut slab = BinaryMask::new(w, h);
    'outer: for x in 0..w {
        for y in 0..h {
            if covered >= target {
                break 'outer;
            }
            slab.set(x, y, true);
            covered += cluster.get(x, y) as usize;
        }
    }
    slab
}

/// Half-plane split of `cluster` along a random direction at a random
/// quantile in `[0.35, 0.65]` of the projected pixels.
fn split_cluster(rng: &mut ChaCha8Rng, cluster: &BinaryMask) -> (BinaryMask, BinaryMask) {
    let phi = rng.random_range(0.0..2.0 * PI);
    let (s, c) = phi.sin_cos();
    let proj = |x: u32, y: u32| x as f64 * c + y as f64 * s;
    let mut values: Vec<f64> = cluster.set_pixels().map(|(x, y)| proj(x, y)).collect();
    values.sort_by(f64::total_cmp);
    let q = rng.random_range(0.35..=0.65);
    let cut = values[((values.len() - 1) as f64 * q) as usize];
    let (w, h) = cluster.dims();
    let low = BinaryMask::from_fn(w, h, |x, y| cluster.get(x, y) && proj(x, y) <= cut);
    let high = cluster.difference(&low).expect("same dims");
    (low, high)
}

fn render_brightfield(
    rng: &mut ChaCha8Rng,
    w: u32,
    h: u32,
    cells: &[BinaryMask],
    noise: &Option<Normal<f64>>,
) -> ImageRgb {
    let bg = rng.random_range(190.0..=225.0);
    let tones: Vec<f64> = cells.iter().map(|_| rng.random_range(50.0..=110.0)).collect();
    let mut img = ImageRgb::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            // Later cells lie on top of earlier ones.
            let base = cells
                .iter()
                .zip(&tones)
                .rev()
                .find(|(m, _)| m.get(x, y))
                .map_or(bg, |(_, &t)| t);
            let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            let g = (base + n).round().clamp(0.0, 255.0) as u8;
            img.set_pixel(x, y, [g, g, g]);
        }
    }
    img
}

fn render_stain(
    rng: &mut ChaCha8Rng,
    w: u32,
    h: u32,
    regions: &[(BinaryMask, [u8; 3])],
    noise: &Option<Normal<f64>>,
) -> ImageRgb {
    let mut img = ImageRgb::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let base = regions
                .iter()
                .rev()
                .find(|(m, _)| m.get(x, y))
                .map_or([0, 0, 0], |(_, c)| *c);
            let px = base.map(|v| {
                let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
                (v as f64 + n).round().clamp(0.0, 255.0) as u8
            });
            img.set_pixel(x, y, px);
        }
    }
    img
}

/// Renders one scene. The same spec always yields identical images.
pub fn render_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let (w, h) = spec.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    let scale = w.min(h) as f64 / DEFAULT_CANVAS as f64;
    let mut placer = Placer {
        rng: &mut rng,
        w,
        h,
        r_min: 10.0 * scale,
        r_max: 16.0 * scale,
    };
    let fail = || SynthError::InvalidSpec(format!("could not place {} cells", spec.n_cells));

    let cell_masks: Vec<BinaryMask> = match spec.kind {
        SceneKind::Blank => Vec::new(),
        SceneKind::SingleCell => {
            let cx = w as f64 / 2.0 + placer.rng.random_range(-0.15..=0.15) * w as f64;
            let cy = h as f64 / 2.0 + placer.rng.random_range(-0.15..=0.15) * h as f64;
            vec![placer.ellipse_at(cx, cy).mask(w, h)]
        }
        SceneKind::MultiSeparated => placer.separated(spec.n_cells).ok_or_else(fail)?,
        SceneKind::Cluster => {
            let cells = placer.cluster(spec.n_cells).ok_or_else(fail)?;
            cells.iter().map(|e| e.mask(w, h)).collect()
        }
    };
    let mut cluster_mask = BinaryMask::new(w, h);
    if spec.kind == SceneKind::Cluster {
        for m in &cell_masks {
            cluster_mask = cluster_mask.union(m)?;
        }
        debug_assert_eq!(connected_components(&cluster_mask).len(), 1);
    }

    // Stain layout.
    let empty = BinaryMask::new(w, h);
    let mut cd61_regions: Vec<BinaryMask> = Vec::new();
    let mut cd45_regions: Vec<BinaryMask> = Vec::new();
    let mut debris_channels = Vec::new();
    let mut artifact_channels = Vec::new();
    if let Some(p) = spec.phenotype {
        match (p, spec.artifact) {
            (Phenotype::WbcPlt, Artifact::PartialCover { fraction }) => {
                cd61_regions.push(cluster_mask.clone());
                cd45_regions.push(partial_cover_slab(&cluster_mask, fraction));
            }
            (Phenotype::WbcPlt, _) => {
                let (a, b) = split_cluster(placer.rng, &cluster_mask);
                cd61_regions.push(a);
                cd45_regions.push(b);
            }
            _ => {
                if p.expresses_cd61() {
                    cd61_regions.push(cluster_mask.clone());
                }
                if p.expresses_cd45() {
                    cd45_regions.push(cluster_mask.clone());
                }
            }
        }
        match spec.artifact {
            Artifact::None => {}
            Artifact::PartialCover { fraction } => {
                let slab = partial_cover_slab(&cluster_mask, fraction);
                match p {
                    Phenotype::Plt => cd45_regions.push(slab),
                    Phenotype::Wbc | Phenotype::Rbc => cd61_regions.push(slab),
                    Phenotype::WbcPlt => {}
                }
            }
            Artifact::StainOutside => {
                let channels: Vec<Stain> = match p {
                    Phenotype::Plt => vec![Stain::Cd45],
                    Phenotype::Wbc => vec![Stain::Cd61],
                    Phenotype::Rbc | Phenotype::WbcPlt => {
                        vec![if placer.rng.random_bool(0.5) { Stain::Cd61 } else { Stain::Cd45 }]
                    }
                };
                for ch in channels {
                    let blob = placer.debris(&cluster_mask).ok_or_else(fail)?;
                    let regions = match ch {
                        Stain::Cd61 => &mut cd61_regions,
                        Stain::Cd45 => &mut cd45_regions,
                    };
                    if regions.is_empty() {
                        artifact_channels.push(ch);
                    }
                    regions.push(blob);
                    debris_channels.push(ch);
                }
            }
        }
    }

    let brightfield = render_brightfield(&mut rng, w, h, &cell_masks, &noise);
    let c61 = stain_color(&mut rng, Stain::Cd61);
    let c45 = stain_color(&mut rng, Stain::Cd45);
    let colored = |rs: &[BinaryMask], c| rs.iter().map(|m| (m.clone(), c)).collect::<Vec<_>>();
    let cd61 = render_stain(&mut rng, w, h, &colored(&cd61_regions, c61), &noise);
    let cd45 = render_stain(&mut rng, w, h, &colored(&cd45_regions, c45), &noise);
    let union = |rs: &[BinaryMask]| rs.iter().fold(empty.clone(), |acc, m| acc.union(m).expect("same dims"));

    Ok(Scene {
        spec: spec.clone(),
        brightfield,
        cd61,
        cd45,
        cell_masks,
        cd61_truth: union(&cd61_regions),
        cd45_truth: union(&cd45_regions),
        cluster_mask,
        debris_channels,
        artifact_channels,
    })
}

/// Renders a scene and the manifest record describing it. Channel paths
/// follow the `{id}_{channel}.png` convention; cluster scenes carry their
/// outline polygons with class id 0.
pub fn generate_scene(id: &str, spec: &SceneSpec) -> Result<(MultiChannelRecord, Scene), SynthError> {
    let scene = render_scene(spec)?;
    let label = if spec.kind == SceneKind::Cluster {
        ClusterLabel::Cluster
    } else {
        ClusterLabel::NonCluster
    };
    let mut rec = MultiChannelRecord::conventional(id, label);
    rec.phenotype_label = spec.phenotype;
    if spec.kind == SceneKind::Cluster {
        rec.polygons = Some(
            mask_to_polygons(&scene.cluster_mask)
                .into_iter()
                .map(|polygon| LabeledPolygon { class_id: 0, polygon })
                .collect(),
        );
    }
    let attrs = serde_json::json!({
        "kind": spec.kind.as_str(),
        "artifact": spec.artifact,
        "seed": spec.seed,
        "n_cells": spec.n_cells,
        "noise_sigma": spec.noise_sigma,
        "debris_channels": scene.debris_channels,
        "artifact_channels": scene.artifact_channels,
    });
    if let serde_json::Value::Object(map) = attrs {
        rec.attributes = map.into_iter().collect();
    }
    Ok((rec, scene))
}

/// Dataset categories: four phenotyped cluster kinds and three non-cluster
/// kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Cluster(Phenotype),
    NonCluster(SceneKind),
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Cluster(Phenotype::Rbc),
        Category::Cluster(Phenotype::Plt),
        Category::Cluster(Phenotype::Wbc),
        Category::Cluster(Phenotype::WbcPlt),
        Category::NonCluster(SceneKind::Blank),
        Category::NonCluster(SceneKind::SingleCell),
        Category::NonCluster(SceneKind::MultiSeparated),
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Category::Cluster(Phenotype::Rbc) => "rbc",
            Category::Cluster(Phenotype::Plt) => "plt",
            Category::Cluster(Phenotype::Wbc) => "wbc",
            Category::Cluster(Phenotype::WbcPlt) => "wbcplt",
            Category::NonCluster(k) => k.as_str(),
        }
    }
}

/// Knobs for [`generate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub canvas: u32,
    pub noise_sigma: f64,
    /// Share of phenotyped clusters that receive a debris blob.
    pub artifact_rate: f64,
    pub max_cluster_cells: u32,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            canvas: DEFAULT_CANVAS,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            artifact_rate: 0.0,
            max_cluster_cells: 4,
        }
    }
}

/// Spec for record `index` of `category`; a pure function of its inputs.
pub fn category_spec(category: Category, index: usize, seed: u64, opts: &DatasetOptions) -> (String, SceneSpec) {
    let id = format!("{}_{index:04}", category.slug());
    let scene_seed = derive_seed(seed, &id, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let mut spec = match category {
        Category::Cluster(p) => {
            let n = rng.random_range(2..=opts.max_cluster_cells.max(2));
            let mut s = SceneSpec::cluster(p, n, scene_seed);
            if rng.random_bool(opts.artifact_rate.clamp(0.0, 1.0)) {
                s.artifact = Artifact::StainOutside;
            }
            s
        }
        Category::NonCluster(kind) => {
            let n = match kind {
                SceneKind::Blank => 0,
                SceneKind::SingleCell => 1,
                _ => rng.random_range(2..=3),
            };
            SceneSpec::non_cluster(kind, n, scene_seed)
        }
    };
    spec.canvas = (opts.canvas, opts.canvas);
    spec.noise_sigma = opts.noise_sigma;
    (id, spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest: PathBuf,
    pub records: usize,
    /// SHA-256 over the manifest text and every written file, in order.
    pub digest: String,
}

/// Writes `7 * n_per_category` scenes under `dir`: channel PNGs,
/// `labels/{id}.txt` for clusters, and `manifest.jsonl`.
pub fn generate_dataset(
    dir: &Path,
    n_per_category: usize,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<DatasetSummary, SynthError> {
    if n_per_category == 0 {
        return Err(SynthError::InvalidSpec("need at least one record per category".into()));
    }
    let jobs: Vec<(String, SceneSpec)> = Category::ALL
        .iter()
        .flat_map(|&c| (0..n_per_category).map(move |i| (c, i)))
        .map(|(c, i)| category_spec(c, i, seed, opts))
        .collect();
    write_scenes(dir, &jobs)
}

/// Renders and writes arbitrary scenes in the same layout as
/// [`generate_dataset`].
pub fn write_scenes(dir: &Path, jobs: &[(String, SceneSpec)]) -> Result<DatasetSummary, SynthError> {
    fs::create_dir_all(dir.join("labels")).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let written: Vec<(MultiChannelRecord, Vec<u8>)> = jobs
        .par_iter()
        .map(|(id, spec)| {
            let (rec, scene) = generate_scene(id, spec)?;
            let mut bytes = Vec::new();
            for ch in Channel::ALL {
                let png = scene.channel(ch).encode_png()?;
                write_atomic(&dir.join(ch.file_name(id)), &png)?;
                bytes.extend_from_slice(&png);
            }
            if let Some(polys) = &rec.polygons {
                let path = dir.join("labels").join(format!("{id}.txt"));
                save_seg_labels(&path, polys)?;
            }
            Ok((rec, bytes))
        })
        .collect::<Result<_, SynthError>>()?;

    let manifest = Manifest::new(dir, written.iter().map(|(r, _)| r.clone()).collect());
    let path = dir.join("manifest.jsonl");
    manifest.save(&path)?;
    let mut all = manifest.to_jsonl().into_bytes();
    for (_, b) in &written {
        all.extend_from_slice(b);
    }
    Ok(DatasetSummary {
        manifest: path,
        records: written.len(),
        digest: hex_digest(&all),
    })
}

/// Scenes for the threshold-sweep experiment: clean clusters of every
/// phenotype, PLT and WBC clusters with a 10 % spill into the unexpressed
/// channel, and WBC+PLT clusters whose CD45 stain genuinely covers 20 %.
pub fn sweep_design_specs(n_per_group: usize, seed: u64) -> Vec<(String, SceneSpec)> {
    let groups: [(&str, Phenotype, Artifact); 7] = [
        ("clean_rbc", Phenotype::Rbc, Artifact::None),
        ("clean_plt", Phenotype::Plt, Artifact::None),
        ("clean_wbc", Phenotype::Wbc, Artifact::None),
        ("clean_wbcplt", Phenotype::WbcPlt, Artifact::None),
        ("spill_plt", Phenotype::Plt, Artifact::PartialCover { fraction: 0.10 }),
        ("spill_wbc", Phenotype::Wbc, Artifact::PartialCover { fraction: 0.10 }),
        ("partial_wbcplt", Phenotype::WbcPlt, Artifact::PartialCover { fraction: 0.20 }),
    ];
    groups
        .iter()
        .flat_map(|&(name, p, artifact)| {
            (0..n_per_group).map(move |i| {
                let id = format!("{name}_{i:04}");
                let s = derive_seed(seed, &id, 0);
                let n = 2 + (s % 3) as u32;
                (id, SceneSpec::cluster(p, n, s).with_artifact(artifact))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{rasterize_polygon, rgb_to_hsv};
    use crate::phenotype::{extract_stain_region, phenotype_record, PhenotypeCall, PhenotypeParams};

    #[test]
    fn spec_validation() {
        assert!(SceneSpec::cluster(Phenotype::Plt, 1, 0).validate().is_err());
        assert!(SceneSpec::non_cluster(SceneKind::Blank, 2, 0).validate().is_err());
        let mut s = SceneSpec::non_cluster(SceneKind::SingleCell, 1, 0);
        s.phenotype = Some(Phenotype::Rbc);
        assert!(s.validate().is_err());
        assert!(SceneSpec::cluster(Phenotype::Plt, 2, 0)
            .with_artifact(Artifact::PartialCover { fraction: 1.5 })
            .validate()
            .is_err());
        assert!(SceneSpec::cluster(Phenotype::Plt, 2, 0).with_noise(-1.0).validate().is_err());
    }

    #[test]
    fn blank_scene() {
        let s = render_scene(&SceneSpec::non_cluster(SceneKind::Blank, 0, 3).with_noise(0.0)).unwrap();
        let first = s.brightfield.pixel(0, 0);
        assert!(s.brightfield.pixels().all(|p| p == first));
        assert!(s.cluster_mask.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SceneSpec::cluster(Phenotype::WbcPlt, 3, 77);
        let a = render_scene(&spec).unwrap();
        let b = render_scene(&spec).unwrap();
        assert_eq!(a.brightfield, b.brightfield);
        assert_eq!(a.cd61, b.cd61);
        assert_eq!(a.cd45, b.cd45);
        assert_ne!(render_scene(&SceneSpec::cluster(Phenotype::WbcPlt, 3, 78)).unwrap().brightfield, a.brightfield);
    }

    #[test]
    fn cluster_is_one_component() {
        for seed in 0..20 {
            let s = render_scene(&SceneSpec::cluster(Phenotype::Rbc, 2 + (seed % 4) as u32, seed)).unwrap();
            assert_eq!(connected_components(&s.cluster_mask).len(), 1);
            assert_eq!(s.cell_masks.len(), 2 + (seed % 4) as usize);
        }
    }

    #[test]
    fn separated_cells_keep_their_distance() {
        for seed in 0..10 {
            let s = render_scene(&SceneSpec::non_cluster(SceneKind::MultiSeparated, 3, seed)).unwrap();
            for (i, a) in s.cell_masks.iter().enumerate() {
                for b in &s.cell_masks[i + 1..] {
                    let min_d2 = a
                        .set_pixels()
                        .flat_map(|p| b.set_pixels().map(move |q| (p, q)))
                        .map(|((x0, y0), (x1, y1))| {
                            (x0 as i64 - x1 as i64).pow(2) + (y0 as i64 - y1 as i64).pow(2)
                        })
                        .min()
                        .unwrap();
                    assert!(min_d2 >= SEPARATION_PX * SEPARATION_PX);
                }
            }
        }
    }

    #[test]
    fn stain_colors_sit_inside_their_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let g = rgb_to_hsv(stain_color(&mut rng, Stain::Cd61));
            assert!((45..=75).contains(&g.h) && g.s >= 195 && g.v >= 195, "{g:?}");
            let y = rgb_to_hsv(stain_color(&mut rng, Stain::Cd45));
            assert!((23..=35).contains(&y.h) && y.s >= 195 && y.v >= 195, "{y:?}");
        }
    }

    #[test]
    fn plt_stain_covers_cluster() {
        let s = render_scene(&SceneSpec::cluster(Phenotype::Plt, 3, 5)).unwrap();
        let m = extract_stain_region(&s.cd61, Stain::Cd61, 140);
        let inter = m.intersection_area(&s.cluster_mask).unwrap();
        assert!(inter as f64 / s.cluster_mask.area() as f64 >= 0.5);
        assert!(extract_stain_region(&s.cd45, Stain::Cd45, 140).is_empty());
    }

    #[test]
    fn partial_slab_hits_fraction() {
        let s = render_scene(&SceneSpec::cluster(Phenotype::Rbc, 3, 8)).unwrap();
        let slab = partial_cover_slab(&s.cluster_mask, 0.10);
        let area = s.cluster_mask.area() as f64;
        let inter = slab.intersection_area(&s.cluster_mask).unwrap() as f64;
        assert_eq!(inter, (0.10 * area).ceil());
        assert!(slab.area() > inter as usize);
    }

    #[test]
    fn debris_is_artifact_and_decision_follows() {
        let params = PhenotypeParams::default();
        for (p, expected) in [
            (Phenotype::Plt, PhenotypeCall::PltCluster),
            (Phenotype::Wbc, PhenotypeCall::WbcCluster),
            (Phenotype::WbcPlt, PhenotypeCall::WbcPltCluster),
            (Phenotype::Rbc, PhenotypeCall::Indeterminate),
        ] {
            let spec = SceneSpec::cluster(p, 3, 11).with_artifact(Artifact::StainOutside);
            let s = render_scene(&spec).unwrap();
            assert_eq!(s.debris_channels.len(), 1);
            let d = phenotype_record(&s.cluster_mask, Some(&s.cd61), Some(&s.cd45), &params).unwrap();
            assert_eq!(d.phenotype, expected, "{p:?}");
        }
    }

    #[test]
    fn record_polygons_round_trip() {
        let (rec, scene) = generate_scene("x_0001", &SceneSpec::cluster(Phenotype::Wbc, 4, 21)).unwrap();
        let polys = rec.polygons.as_ref().unwrap();
        assert_eq!(polys.len(), 1);
        let back = rasterize_polygon(&polys[0].polygon, 128, 128);
        assert_eq!(back, scene.cluster_mask);
        assert_eq!(rec.cd45.as_deref(), Some(Path::new("x_0001_cd45.png")));
        assert_eq!(rec.attributes["kind"], "cluster");
    }

    #[test]
    fn hsv_to_rgb_primaries() {
        assert_eq!(hsv_to_rgb(60.0, 255.0, 255.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(30.0, 255.0, 255.0), [255, 255, 0]);
        assert_eq!(hsv_to_rgb(0.0, 0.0, 173.0), [173, 173, 173]);
    }
}
