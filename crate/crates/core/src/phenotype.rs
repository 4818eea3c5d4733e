//! Stain extraction, overlap scoring and the phenotype decision table.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Phenotype;
use crate::imaging::{morphological_open, threshold_hsv, BinaryMask, HsvRange, ImageRgb, ImagingError};

pub const DEFAULT_TAU: f64 = 0.15;
pub const DEFAULT_V_X: u8 = 140;
pub const DEFAULT_MIN_STAIN_AREA: usize = 25;
pub const SWEEP_V_VALUES: [u8; 3] = [100, 140, 170];
pub const SWEEP_TAUS: [f64; 8] = [0.05, 0.08, 0.10, 0.13, 0.15, 0.18, 0.20, 0.30];

#[derive(Debug, Error)]
pub enum PhenotypeError {
    #[error("cluster mask is empty")]
    EmptyClusterMask,
    #[error(transparent)]
    DimensionMismatch(#[from] ImagingError),
    #[error("no records to evaluate")]
    EmptyDataset,
    #[error("overlap threshold {0} outside (0, 1)")]
    InvalidTau(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stain {
    #[serde(rename = "CD61")]
    Cd61,
    #[serde(rename = "CD45")]
    Cd45,
}

impl Stain {
    /// CD61 is imaged green, CD45 yellow.
    pub fn range(self, v_x: u8) -> HsvRange {
        match self {
            Stain::Cd61 => HsvRange::green(v_x),
            Stain::Cd45 => HsvRange::yellow(v_x),
        }
    }
}

impl fmt::Display for Stain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stain::Cd61 => "CD61",
            Stain::Cd45 => "CD45",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelState {
    Absent,
    Valid,
    Artifact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelAssessment {
    pub stain: Stain,
    pub stain_area: usize,
    pub overlap_area: usize,
    /// `overlap_area / cluster_area`.
    pub overlap_percent: f64,
    pub state: ChannelState,
}

impl ChannelAssessment {
    /// Assessment for a channel with no image.
    pub fn missing(stain: Stain) -> Self {
        Self {
            stain,
            stain_area: 0,
            overlap_area: 0,
            overlap_percent: 0.0,
            state: ChannelState::Absent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhenotypeCall {
    #[serde(rename = "RBC_cluster")]
    RbcCluster,
    #[serde(rename = "PLT_cluster")]
    PltCluster,
    #[serde(rename = "WBC_cluster")]
    WbcCluster,
    #[serde(rename = "WBC_PLT_cluster")]
    WbcPltCluster,
    Indeterminate,
}

impl PhenotypeCall {
    pub fn phenotype(self) -> Option<Phenotype> {
        match self {
            PhenotypeCall::RbcCluster => Some(Phenotype::Rbc),
            PhenotypeCall::PltCluster => Some(Phenotype::Plt),
            PhenotypeCall::WbcCluster => Some(Phenotype::Wbc),
            PhenotypeCall::WbcPltCluster => Some(Phenotype::WbcPlt),
            PhenotypeCall::Indeterminate => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhenotypeCall::RbcCluster => "RBC_cluster",
            PhenotypeCall::PltCluster => "PLT_cluster",
            PhenotypeCall::WbcCluster => "WBC_cluster",
            PhenotypeCall::WbcPltCluster => "WBC_PLT_cluster",
            PhenotypeCall::Indeterminate => "Indeterminate",
        }
    }
}

impl fmt::Display for PhenotypeCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeDecision {
    pub phenotype: PhenotypeCall,
    pub cd61: ChannelAssessment,
    pub cd45: ChannelAssessment,
    pub tau: f64,
    pub v_x: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhenotypeParams {
    pub tau: f64,
    pub v_x: u8,
    pub min_stain_area: usize,
}

impl Default for PhenotypeParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            v_x: DEFAULT_V_X,
            min_stain_area: DEFAULT_MIN_STAIN_AREA,
        }
    }
}

impl PhenotypeParams {
    pub fn validate(&self) -> Result<(), PhenotypeError> {
        if self.tau > 0.0 && self.tau < 1.0 {
            Ok(())
        } else {
            Err(PhenotypeError::InvalidTau(self.tau))
        }
    }
}

/// Stain pixels of one fluorescence channel: HSV threshold with lower
/// brightness `v_x`, then an opening of radius 1 to drop specks.
pub fn extract_stain_region(channel: &ImageRgb, stain: Stain, v_x: u8) -> BinaryMask {
    morphological_open(&threshold_hsv(channel, &stain.range(v_x)), 1)
}

/// Fraction of the cluster covered by stain.
pub fn overlap_percent(cluster: &BinaryMask, stain: &BinaryMask) -> Result<f64, PhenotypeError> {
    let inter = cluster.intersection_area(stain)?;
    let area = cluster.area();
    if area == 0 {
        return Err(PhenotypeError::EmptyClusterMask);
    }
    Ok(inter as f64 / area as f64)
}

pub fn assess_channel(
    cluster: &BinaryMask,
    stain_mask: &BinaryMask,
    stain: Stain,
    tau: f64,
    min_stain_area: usize,
) -> Result<ChannelAssessment, PhenotypeError> {
    let overlap = overlap_percent(cluster, stain_mask)?;
    let stain_area = stain_mask.area();
    let state = if stain_area < min_stain_area {
        ChannelState::Absent
    } else if overlap >= tau {
        ChannelState::Valid
    } else {
        ChannelState::Artifact
    };
    Ok(ChannelAssessment {
        stain,
        stain_area,
        overlap_area: cluster.intersection_area(stain_mask)?,
        overlap_percent: overlap,
        state,
    })
}

/// The decision table over the two channel states.
pub fn decide_phenotype(cd61: ChannelState, cd45: ChannelState) -> PhenotypeCall {
    use ChannelState::*;
    match (cd61, cd45) {
        (Valid, Valid) => PhenotypeCall::WbcPltCluster,
        (Valid, _) => PhenotypeCall::PltCluster,
        (_, Valid) => PhenotypeCall::WbcCluster,
        (Absent, Absent) => PhenotypeCall::RbcCluster,
        _ => PhenotypeCall::Indeterminate,
    }
}

/// Phenotypes one record. A missing channel image counts as absent stain.
/// Multiple cluster instances should be unioned into `cluster` beforehand.
pub fn phenotype_record(
    cluster: &BinaryMask,
    cd61: Option<&ImageRgb>,
    cd45: Option<&ImageRgb>,
    params: &PhenotypeParams,
) -> Result<PhenotypeDecision, PhenotypeError> {
    params.validate()?;
    if cluster.is_empty() {
        return Err(PhenotypeError::EmptyClusterMask);
    }
    let assess = |img: Option<&ImageRgb>, stain| match img {
        None => Ok(ChannelAssessment::missing(stain)),
        Some(img) => {
            let mask = extract_stain_region(img, stain, params.v_x);
            assess_channel(cluster, &mask, stain, params.tau, params.min_stain_area)
        }
    };
    let cd61 = assess(cd61, Stain::Cd61)?;
    let cd45 = assess(cd45, Stain::Cd45)?;
    Ok(PhenotypeDecision {
        phenotype: decide_phenotype(cd61.state, cd45.state),
        cd61,
        cd45,
        tau: params.tau,
        v_x: params.v_x,
    })
}

/// Agreement between calls and ground truth.
///
/// `accuracy` treats an indeterminate call as wrong. `decided_accuracy`
/// leaves indeterminate records out, as when frames with staining artifacts
/// are excluded from analysis; `coverage` is the share that was decided.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeSummary {
    pub total: usize,
    pub correct: usize,
    pub indeterminate: usize,
    pub accuracy: f64,
    pub decided_accuracy: Option<f64>,
    pub coverage: f64,
}

impl PhenotypeSummary {
    pub fn from_calls(pairs: impl IntoIterator<Item = (PhenotypeCall, Phenotype)>) -> Result<Self, PhenotypeError> {
        let (mut total, mut correct, mut indeterminate) = (0, 0, 0);
        for (call, truth) in pairs {
            total += 1;
            match call.phenotype() {
                None => indeterminate += 1,
                Some(p) if p == truth => correct += 1,
                Some(_) => {}
            }
        }
        if total == 0 {
            return Err(PhenotypeError::EmptyDataset);
        }
        let decided = total - indeterminate;
        Ok(Self {
            total,
            correct,
            indeterminate,
            accuracy: correct as f64 / total as f64,
            decided_accuracy: (decided > 0).then(|| correct as f64 / decided as f64),
            coverage: decided as f64 / total as f64,
        })
    }
}

/// One record of a threshold sweep.
#[derive(Clone, Debug)]
pub struct SweepSample {
    pub id: String,
    pub cluster: BinaryMask,
    pub cd61: Option<ImageRgb>,
    pub cd45: Option<ImageRgb>,
    pub truth: Phenotype,
}

/// Accuracy for every `(tau, v_x)` cell plus mean stain areas per `v_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub v_values: Vec<u8>,
    pub taus: Vec<f64>,
    /// `accuracy[t][v]`, indeterminate calls counted as wrong.
    pub accuracy: Vec<Vec<f64>>,
    pub mean_cd61_area: Vec<f64>,
    pub mean_cd45_area: Vec<f64>,
    pub records: usize,
}

impl SweepGrid {
    pub fn column(&self, v_x: u8) -> Option<Vec<f64>> {
        let v = self.v_values.iter().position(|&x| x == v_x)?;
        Some(self.accuracy.iter().map(|row| row[v]).collect())
    }

    /// Rows are taus, columns are brightness thresholds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau");
        for v in &self.v_values {
            out.push_str(&format!(",v{v}"));
        }
        out.push('\n');
        for (t, row) in self.taus.iter().zip(&self.accuracy) {
            out.push_str(&format!("{t:.2}"));
            for a in row {
                out.push_str(&format!(",{a:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn area_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .v_values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                vec![
                    v.to_string(),
                    format!("{:.1}", self.mean_cd61_area[i]),
                    format!("{:.1}", self.mean_cd45_area[i]),
                ]
            })
            .collect();
        crate::eval::render_table(&["v_x", "mean CD61 area", "mean CD45 area"], &rows)
    }

    pub fn accuracy_table(&self) -> String {
        let mut header = vec!["tau".to_string()];
        header.extend(self.v_values.iter().map(|v| format!("v_x={v}")));
        let rows: Vec<Vec<String>> = self
            .taus
            .iter()
            .zip(&self.accuracy)
            .map(|(t, row)| {
                std::iter::once(format!("{:.0}%", 100.0 * t))
                    .chain(row.iter().map(|a| format!("{:.2}", 100.0 * a)))
                    .collect()
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        crate::eval::render_table(&header, &rows)
    }
}

/// Phenotype accuracy over the `(tau, v_x)` grid. Stain masks are
/// extracted once per record and brightness threshold.
pub fn sweep_thresholds(
    samples: &[SweepSample],
    v_values: &[u8],
    taus: &[f64],
    min_stain_area: usize,
) -> Result<SweepGrid, PhenotypeError> {
    if samples.is_empty() {
        return Err(PhenotypeError::EmptyDataset);
    }
    for &t in taus {
        PhenotypeParams { tau: t, ..Default::default() }.validate()?;
    }
    // per_record[r][v] = (cd61 area, cd45 area, [correct per tau])
    let per_record = samples
        .par_iter()
        .map(|s| {
            v_values
                .iter()
                .map(|&v| {
                    let extract = |img: &Option<ImageRgb>, stain| {
                        img.as_ref().map(|i| extract_stain_region(i, stain, v))
                    };
                    let m61 = extract(&s.cd61, Stain::Cd61);
                    let m45 = extract(&s.cd45, Stain::Cd45);
                    let area = |m: &Option<BinaryMask>| m.as_ref().map_or(0, |m| m.area());
                    let correct = taus
                        .iter()
                        .map(|&tau| {
                            let assess = |m: &Option<BinaryMask>, stain| match m {
                                None => Ok(ChannelState::Absent),
                                Some(m) => assess_channel(&s.cluster, m, stain, tau, min_stain_area).map(|a| a.state),
                            };
                            let call = decide_phenotype(assess(&m61, Stain::Cd61)?, assess(&m45, Stain::Cd45)?);
                            Ok(call.phenotype() == Some(s.truth))
                        })
                        .collect::<Result<Vec<bool>, PhenotypeError>>()?;
                    Ok((area(&m61), area(&m45), correct))
                })
                .collect::<Result<Vec<_>, PhenotypeError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = samples.len() as f64;
    let accuracy = (0..taus.len())
        .map(|t| {
            (0..v_values.len())
                .map(|v| per_record.iter().filter(|r| r[v].2[t]).count() as f64 / n)
                .collect()
        })
        .collect();
    let mean_area = |pick: fn(&(usize, usize, Vec<bool>)) -> usize| {
        (0..v_values.len())
            .map(|v| per_record.iter().map(|r| pick(&r[v]) as f64).sum::<f64>() / n)
            .collect()
    };
    Ok(SweepGrid {
        v_values: v_values.to_vec(),
        taus: taus.to_vec(),
        accuracy,
        mean_cd61_area: mean_area(|r| r.0),
        mean_cd45_area: mean_area(|r| r.1),
        records: samples.len(),
    })
}
