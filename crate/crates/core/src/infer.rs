//! FA-fused cluster assignment, representative pathways, cross-subject
//! consistency and the evaluation record.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fiberdata::{Bundle, FaProfile};
use crate::finetune::{soft_assign, soft_assign_sq, ClusterModel};
use crate::metrics::{
    adjusted_rand_index, alpha_measure, direct_flip_sums, endpoint_correlation, fa_manhattan,
    hausdorff, intra_cluster_correlation, pairwise_distance, ClusterAlpha, ClusterLabels,
    DistanceMatrix, Kernel,
};
use crate::nn::{embed, EncoderWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceConfig {
    pub fa_weight: f64,
    pub two_pass: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            fa_weight: 30.0,
            two_pass: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub labels: ClusterLabels,
    pub q: Tensor,
    /// Geometric-only assignment from the first pass.
    pub provisional: ClusterLabels,
    /// Per-cluster FA references used by the second pass.
    pub fa_reference: Option<Vec<FaProfile>>,
}

/// Row-wise argmax; ties go to the lowest column.
pub fn argmax_rows(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|r| {
            let row = q.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn mean_profile(profiles: &[Vec<f64>]) -> Result<FaProfile> {
    let n = profiles.len() as f64;
    let len = profiles[0].len();
    let mean = (0..len)
        .map(|k| profiles.iter().map(|p| p[k]).sum::<f64>() / n)
        .collect();
    FaProfile::new(mean)
}

/// Pointwise mean FA of each cluster's members, each flipped when its
/// geometry runs opposite to the cluster's anchor fiber (the member with
/// the highest soft assignment). Empty clusters fall back to `fallback`.
fn fa_references(bundle: &Bundle, labels: &[usize], q: &Tensor, fallback: impl Fn(usize) -> Result<FaProfile>) -> Result<Vec<FaProfile>> {
    let recs = bundle.records();
    let k = q.cols();
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let Some(&anchor) = m
                .iter()
                .max_by(|&&a, &&b| q.get(a, j).total_cmp(&q.get(b, j)).then(b.cmp(&a)))
            else {
                return fallback(j);
            };
            let anchor_pts = recs[anchor].fiber.points();
            let aligned: Vec<Vec<f64>> = m
                .iter()
                .map(|&i| {
                    let (direct, flipped) = direct_flip_sums(recs[i].fiber.points(), anchor_pts);
                    let mut v = recs[i].fa.values().to_vec();
                    if flipped < direct {
                        v.reverse();
                    }
                    v
                })
                .collect();
            mean_profile(&aligned)
        })
        .collect()
}

/// Assigns the fibers of `bundle` to the model's clusters. Only geometry
/// and FA are read; BOLD signals are ignored.
pub fn infer(bundle: &Bundle, geo: &EncoderWeights, model: &ClusterModel, cfg: &InferenceConfig) -> Result<Inference> {
    if !(cfg.fa_weight >= 0.0) || !cfg.fa_weight.is_finite() {
        return Err(Error::Config(format!("fa_weight must be non-negative, got {}", cfg.fa_weight)));
    }
    let z = embed(geo, bundle)?;
    let q1 = soft_assign(&z, &model.centroids_geo)?;
    let provisional = ClusterLabels::new(argmax_rows(&q1), model.k())?;
    if !cfg.two_pass || cfg.fa_weight == 0.0 {
        return Ok(Inference {
            labels: provisional.clone(),
            q: q1,
            provisional,
            fa_reference: None,
        });
    }

    let recs = bundle.records();
    let n_p = bundle.n_points();
    let fallback = |j: usize| -> Result<FaProfile> {
        if let Some(r) = model.fa_reference.as_ref().and_then(|refs| refs.get(j)) {
            if r.len() == n_p {
                return Ok(r.clone());
            }
        }
        match model.centroid_indices.get(j) {
            Some(&i) if i < recs.len() => Ok(recs[i].fa.clone()),
            _ => mean_profile(&recs.iter().map(|r| r.fa.values().to_vec()).collect::<Vec<_>>()),
        }
    };
    let refs = fa_references(bundle, provisional.labels(), &q1, fallback)?;

    let k = model.k();
    let rows: Vec<Vec<f64>> = (0..bundle.len())
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            (0..k)
                .map(|j| {
                    let geo: f64 = zi
                        .iter()
                        .zip(model.centroids_geo.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    let d = geo + cfg.fa_weight * fa_manhattan(&recs[i].fa, &refs[j])?;
                    Ok(d * d)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let d2 = Tensor::from_vec(bundle.len(), k, rows.concat())?;
    let q = soft_assign_sq(&d2);
    let labels = ClusterLabels::new(argmax_rows(&q), k)?;
    Ok(Inference {
        labels,
        q,
        provisional,
        fa_reference: Some(refs),
    })
}

/// Member with the largest summed endpoint correlation to the other
/// members; ties go to the lowest index.
pub fn representative_pathway(bundle: &Bundle, labels: &ClusterLabels, cluster: usize) -> Result<usize> {
    let members: Vec<usize> = labels
        .labels()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == cluster)
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Err(Error::Degenerate(format!("cluster {cluster} is empty")));
    }
    let recs = bundle.records();
    let m = members.len();
    let mut totals = vec![0.0; m];
    for a in 0..m {
        for b in a + 1..m {
            let c = endpoint_correlation(&recs[members[a]].bold, &recs[members[b]].bold)?;
            totals[a] += c;
            totals[b] += c;
        }
    }
    let mut best = 0;
    for (a, &t) in totals.iter().enumerate() {
        if t > totals[best] {
            best = a;
        }
    }
    Ok(members[best])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathwayDistance {
    pub cluster: usize,
    pub subj_a: usize,
    pub subj_b: usize,
    pub hausdorff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub pathways: Vec<PathwayDistance>,
    pub mean_pathway: f64,
    pub mean_intra_cluster: f64,
    pub mean_bundle: f64,
    /// Cluster ids missing from at least one subject.
    pub skipped: Vec<usize>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn mean_pairwise(m: &DistanceMatrix, idx: &[usize]) -> Option<f64> {
    let mut s = 0.0;
    let mut c = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            s += m.get(i, j);
            c += 1;
        }
    }
    (c > 0).then(|| s / c as f64)
}

/// Hausdorff consistency of representative pathways across subjects that
/// share cluster ids, against intra-cluster and whole-bundle spreads.
pub fn consistency_report(subjects: &[Bundle], labels: &[ClusterLabels]) -> Result<ConsistencyReport> {
    if subjects.len() < 2 {
        return Err(Error::Config(format!(
            "consistency needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    if subjects.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} subjects but {} labelings",
            subjects.len(),
            labels.len()
        )));
    }
    for (s, (b, l)) in subjects.iter().zip(labels).enumerate() {
        if b.len() != l.len() {
            return Err(Error::Record {
                record: s,
                message: format!("{} labels for {} fibers", l.len(), b.len()),
            });
        }
    }
    let k = labels.iter().map(ClusterLabels::k).max().unwrap_or(0);
    let matrices: Vec<DistanceMatrix> = subjects
        .iter()
        .map(|b| pairwise_distance(b, Kernel::Hausdorff))
        .collect();

    let mut pathways = Vec::new();
    let mut skipped = Vec::new();
    let mut intra = Vec::new();
    for c in 0..k {
        let members: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| {
                l.labels()
                    .iter()
                    .enumerate()
                    .filter(|&(_, &x)| x == c)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        if members.iter().any(Vec::is_empty) {
            if members.iter().any(|m| !m.is_empty()) {
                skipped.push(c);
            }
            continue;
        }
        for (s, m) in members.iter().enumerate() {
            if let Some(v) = mean_pairwise(&matrices[s], m) {
                intra.push(v);
            }
        }
        let reps: Vec<usize> = (0..subjects.len())
            .map(|s| representative_pathway(&subjects[s], &labels[s], c))
            .collect::<Result<_>>()?;
        for a in 0..subjects.len() {
            for b in a + 1..subjects.len() {
                let fa = &subjects[a].records()[reps[a]].fiber;
                let fb = &subjects[b].records()[reps[b]].fiber;
                pathways.push(PathwayDistance {
                    cluster: c,
                    subj_a: a,
                    subj_b: b,
                    hausdorff: hausdorff(fa, fb),
                });
            }
        }
    }
    let bundle_means: Vec<f64> = matrices
        .iter()
        .filter_map(|m| mean_pairwise(m, &(0..m.n()).collect::<Vec<_>>()))
        .collect();
    Ok(ConsistencyReport {
        mean_pathway: mean(&pathways.iter().map(|p| p.hausdorff).collect::<Vec<_>>()),
        mean_intra_cluster: mean(&intra),
        mean_bundle: mean(&bundle_means),
        pathways,
        skipped,
    })
}

/// CSV `cluster_id,subj_a,subj_b,pathway_hausdorff` followed by three
/// summary rows keyed in the first column.
pub fn save_consistency(report: &ConsistencyReport, path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("cluster_id,subj_a,subj_b,pathway_hausdorff\n");
    for p in &report.pathways {
        let _ = writeln!(out, "{},{},{},{}", p.cluster, p.subj_a, p.subj_b, p.hausdorff);
    }
    let _ = writeln!(out, "mean_pathway,,,{}", report.mean_pathway);
    let _ = writeln!(out, "mean_intra_cluster,,,{}", report.mean_intra_cluster);
    let _ = writeln!(out, "mean_bundle,,,{}", report.mean_bundle);
    fs::write(path, out)?;
    Ok(())
}

/// Evaluation record of one labelling.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub corr: f64,
    pub alpha_mean: f64,
    pub alpha_per_cluster: Vec<ClusterAlpha>,
    pub ari: Option<f64>,
    pub n_clusters_nonempty: usize,
}

pub fn evaluate(bundle: &Bundle, labels: &ClusterLabels) -> Result<Metrics> {
    let corr = intra_cluster_correlation(bundle, labels)?;
    let alpha = alpha_measure(bundle, labels)?;
    let ari = match bundle.truth_labels() {
        Some(truth) => {
            let truth = ClusterLabels::from_truth(&truth)?;
            Some(adjusted_rand_index(truth.labels(), labels.labels())?)
        }
        None => None,
    };
    Ok(Metrics {
        corr,
        alpha_mean: alpha.mean,
        alpha_per_cluster: alpha.per_cluster,
        ari,
        n_clusters_nonempty: labels.n_nonempty(),
    })
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
