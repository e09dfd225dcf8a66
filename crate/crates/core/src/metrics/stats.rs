use serde::Serialize;

use super::{endpoint_correlation, mdf_points, ClusterLabels};
use crate::error::{Error, Result};
use crate::fiberdata::Bundle;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterAlpha {
    pub cluster: usize,
    pub size: usize,
    pub alpha: f64,
}

/// Mean intra-cluster MDF per non-empty cluster and their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaReport {
    pub per_cluster: Vec<ClusterAlpha>,
    pub mean: f64,
}

fn check_cover(bundle: &Bundle, labels: &ClusterLabels) -> Result<()> {
    if labels.len() != bundle.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} fibers",
            labels.len(),
            bundle.len()
        )));
    }
    Ok(())
}

/// α: mean MDF over unordered intra-cluster pairs. Singletons score 0.
pub fn alpha_measure(bundle: &Bundle, labels: &ClusterLabels) -> Result<AlphaReport> {
    check_cover(bundle, labels)?;
    let recs = bundle.records();
    let mut per_cluster = Vec::new();
    for (cluster, members) in labels.members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                sum += mdf_points(recs[i].fiber.points(), recs[j].fiber.points());
                pairs += 1;
            }
        }
        per_cluster.push(ClusterAlpha {
            cluster,
            size: members.len(),
            alpha: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        });
    }
    let mean = if per_cluster.is_empty() {
        0.0
    } else {
        per_cluster.iter().map(|c| c.alpha).sum::<f64>() / per_cluster.len() as f64
    };
    Ok(AlphaReport { per_cluster, mean })
}

/// Mean pairwise flip-max endpoint correlation within each cluster,
/// averaged without weights over clusters with at least two fibers.
pub fn intra_cluster_correlation(bundle: &Bundle, labels: &ClusterLabels) -> Result<f64> {
    check_cover(bundle, labels)?;
    let recs = bundle.records();
    let mut scores = Vec::new();
    for members in labels.members() {
        if members.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                sum += endpoint_correlation(&recs[i].bold, &recs[j].bold)?;
                pairs += 1;
            }
        }
        scores.push(sum / pairs as f64);
    }
    if scores.is_empty() {
        return Err(Error::Degenerate(
            "no cluster has two or more fibers".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
