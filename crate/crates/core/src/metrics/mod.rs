//! Fiber distance and similarity kernels, the pairwise matrix engine,
//! clustering statistics and the QuickBundles baseline.

mod labels;
mod pairwise;
mod quickbundles;
mod stats;

pub use labels::{adjusted_rand_index, load_labels, save_labels, ClusterLabels};
pub use pairwise::{
    load_distance_matrix, pairwise_distance, pairwise_distance_serial, save_distance_matrix,
    DistanceMatrix, Kernel,
};
pub use quickbundles::quickbundles;
pub use stats::{alpha_measure, intra_cluster_correlation, AlphaReport, ClusterAlpha};

use crate::error::{Error, Result};
use crate::fiberdata::{dist3, dist3_sq, BoldPair, FaProfile, Fiber};

/// Minimum average direct-flip distance between two equal-length fibers.
pub fn mdf(a: &Fiber, b: &Fiber) -> Result<f64> {
    let (pa, pb) = (a.points(), b.points());
    if pa.len() != pb.len() {
        return Err(Error::Shape(format!(
            "MDF needs equal point counts, got {} and {}",
            pa.len(),
            pb.len()
        )));
    }
    Ok(mdf_points(pa, pb))
}

pub(crate) fn mdf_points(pa: &[[f64; 3]], pb: &[[f64; 3]]) -> f64 {
    let (direct, flipped) = direct_flip_sums(pa, pb);
    direct.min(flipped) / pa.len() as f64
}

/// Summed pointwise distances in direct and flipped order. Flipped terms
/// are added in mirrored pairs so swapping `pa` and `pb` gives the same bits.
pub(crate) fn direct_flip_sums(pa: &[[f64; 3]], pb: &[[f64; 3]]) -> (f64, f64) {
    let n = pa.len();
    let mut direct = 0.0;
    for i in 0..n {
        direct += dist3(&pa[i], &pb[i]);
    }
    let mut flipped = 0.0;
    for i in 0..n / 2 {
        let j = n - 1 - i;
        flipped += dist3(&pa[i], &pb[j]) + dist3(&pa[j], &pb[i]);
    }
    if n % 2 == 1 {
        flipped += dist3(&pa[n / 2], &pb[n / 2]);
    }
    (direct, flipped)
}

/// Symmetric Hausdorff distance between the point sets of two fibers.
pub fn hausdorff(a: &Fiber, b: &Fiber) -> f64 {
    let directed = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist3_sq(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a.points(), b.points())
        .max(directed(b.points(), a.points()))
        .sqrt()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("correlation needs at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Endpoint correlation between two fibers, taking the better of the
/// direct and swapped endpoint pairings.
pub fn endpoint_correlation(a: &BoldPair, b: &BoldPair) -> Result<f64> {
    let direct = 0.5
        * (pearson(a.endpoint_a(), b.endpoint_a())? + pearson(a.endpoint_b(), b.endpoint_b())?);
    let flipped = 0.5
        * (pearson(a.endpoint_a(), b.endpoint_b())? + pearson(a.endpoint_b(), b.endpoint_a())?);
    Ok(direct.max(flipped))
}

/// Functional pseudo-label distance `(1 - c) / 2` in `[0, 1]`, where `c` is
/// the flip-max endpoint correlation.
pub fn functional_similarity(a: &BoldPair, b: &BoldPair) -> Result<f64> {
    Ok((1.0 - endpoint_correlation(a, b)?) / 2.0)
}

/// Mean absolute FA difference, minimised over the flipped ordering.
pub fn fa_manhattan(a: &FaProfile, b: &FaProfile) -> Result<f64> {
    let (va, vb) = (a.values(), b.values());
    if va.len() != vb.len() {
        return Err(Error::Shape(format!(
            "FA profiles differ in length: {} vs {}",
            va.len(),
            vb.len()
        )));
    }
    let n = va.len();
    let mut direct = 0.0;
    let mut flipped = 0.0;
    for i in 0..n {
        direct += (va[i] - vb[i]).abs();
        flipped += (va[i] - vb[n - 1 - i]).abs();
    }
    Ok(direct.min(flipped) / n as f64)
}
