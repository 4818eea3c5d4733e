//! Two-stage analysis of circulating cell clusters in multi-channel
//! imaging flow cytometry frames.
//!
//! Stage one decides cluster vs. non-cluster on the brightfield channel.
//! Stage two segments the cluster, extracts CD61 (green) and CD45 (yellow)
//! stain regions by HSV thresholding, and assigns a phenotype from the
//! overlap between each stain and the cluster mask.

pub mod imaging;
pub mod preprocess;
pub mod seeds;
pub mod dataset;
pub mod inference;
pub mod eval;
pub mod phenotype;
pub mod synth;
