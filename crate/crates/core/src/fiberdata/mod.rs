//! Fiber data model: streamline geometry, endpoint BOLD pairs, FA profiles
//! and the bundle container, plus the preprocessing helpers that bring raw
//! inputs into the fixed sizes the encoders expect.

mod io;
mod synth;

pub use io::{load_bundle, load_bundle_text, parse_bundle, parse_bundle_text, save_bundle, save_bundle_text, BUNDLE_MAGIC};
pub use synth::{jittered_copy, synth_bundle, SynthConfig};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default number of resampled points per fiber.
pub const DEFAULT_POINTS: usize = 25;
/// Default BOLD series length after downsampling.
pub const DEFAULT_BOLD_LEN: usize = 600;

pub type Point3 = [f64; 3];

#[inline]
pub fn dist3(a: &Point3, b: &Point3) -> f64 {
    dist3_sq(a, b).sqrt()
}

#[inline]
pub fn dist3_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered streamline polyline (mm, RAS).
#[derive(Clone, Debug, PartialEq)]
pub struct Fiber {
    points: Vec<Point3>,
}

impl Fiber {
    /// Wraps a polyline. Coordinates must be finite and the polyline must
    /// contain at least two distinct points.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Degenerate(format!(
                "fiber needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("fiber coordinates".into()));
        }
        let first = points[0];
        if points.iter().all(|p| *p == first) {
            return Err(Error::Degenerate("fiber points are all identical".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same streamline traversed in the opposite direction.
    pub fn reversed(&self) -> Fiber {
        let mut points = self.points.clone();
        points.reverse();
        Fiber { points }
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| dist3(&w[0], &w[1])).sum()
    }
}

/// BOLD time series sampled at the two fiber endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct BoldPair {
    endpoint_a: Vec<f64>,
    endpoint_b: Vec<f64>,
}

impl BoldPair {
    pub fn new(endpoint_a: Vec<f64>, endpoint_b: Vec<f64>) -> Result<Self> {
        if endpoint_a.len() != endpoint_b.len() {
            return Err(Error::Shape(format!(
                "endpoint series lengths differ: {} vs {}",
                endpoint_a.len(),
                endpoint_b.len()
            )));
        }
        if endpoint_a.len() < 2 {
            return Err(Error::Degenerate("BOLD series needs at least 2 samples".into()));
        }
        for series in [&endpoint_a, &endpoint_b] {
            if series.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("BOLD series".into()));
            }
            let first = series[0];
            if series.iter().all(|&v| v == first) {
                return Err(Error::ZeroVariance);
            }
        }
        Ok(Self {
            endpoint_a,
            endpoint_b,
        })
    }

    pub fn endpoint_a(&self) -> &[f64] {
        &self.endpoint_a
    }

    pub fn endpoint_b(&self) -> &[f64] {
        &self.endpoint_b
    }

    pub fn len(&self) -> usize {
        self.endpoint_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoint_a.is_empty()
    }

    pub fn swapped(&self) -> BoldPair {
        BoldPair {
            endpoint_a: self.endpoint_b.clone(),
            endpoint_b: self.endpoint_a.clone(),
        }
    }
}

/// Per-point fractional anisotropy along a fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct FaProfile {
    values: Vec<f64>,
}

impl FaProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty FA profile".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Degenerate(format!("FA value {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reversed(&self) -> FaProfile {
        let mut values = self.values.clone();
        values.reverse();
        FaProfile { values }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiberRecord {
    pub fiber: Fiber,
    pub bold: BoldPair,
    pub fa: FaProfile,
    pub truth_label: Option<i32>,
}

impl FiberRecord {
    pub fn new(fiber: Fiber, bold: BoldPair, fa: FaProfile, truth_label: Option<i32>) -> Result<Self> {
        if fa.len() != fiber.len() {
            return Err(Error::Shape(format!(
                "FA profile has {} values for a {}-point fiber",
                fa.len(),
                fiber.len()
            )));
        }
        Ok(Self {
            fiber,
            bold,
            fa,
            truth_label,
        })
    }
}

/// A named set of fibers sharing point count and BOLD length.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub name: String,
    records: Vec<FiberRecord>,
}

impl Bundle {
    pub fn new(name: impl Into<String>, records: Vec<FiberRecord>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Degenerate("bundle has no records".into()));
        };
        let (n_p, t) = (first.fiber.len(), first.bold.len());
        for (i, r) in records.iter().enumerate() {
            if r.fiber.len() != n_p || r.fa.len() != n_p {
                return Err(Error::Record {
                    record: i,
                    message: format!("expected {n_p} points, got {}", r.fiber.len()),
                });
            }
            if r.bold.len() != t {
                return Err(Error::Record {
                    record: i,
                    message: format!("expected BOLD length {t}, got {}", r.bold.len()),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn records(&self) -> &[FiberRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.records[0].fiber.len()
    }

    pub fn bold_len(&self) -> usize {
        self.records[0].bold.len()
    }

    pub fn fibers(&self) -> impl Iterator<Item = &Fiber> {
        self.records.iter().map(|r| &r.fiber)
    }

    /// Truth labels when every record carries one.
    pub fn truth_labels(&self) -> Option<Vec<i32>> {
        self.records.iter().map(|r| r.truth_label).collect()
    }
}

/// Resamples a polyline to `n_points` points spaced evenly by arc length,
/// interpolating linearly between raw vertices. Both endpoints are kept
/// exactly.
pub fn resample_fiber(raw: &[Point3], n_points: usize) -> Result<Fiber> {
    if n_points < 2 {
        return Err(Error::Config(format!("need at least 2 output points, got {n_points}")));
    }
    if raw.len() < 2 {
        return Err(Error::Degenerate("polyline needs at least 2 points".into()));
    }
    let mut cumulative = Vec::with_capacity(raw.len());
    cumulative.push(0.0);
    for w in raw.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + dist3(&w[0], &w[1]));
    }
    let total = *cumulative.last().unwrap();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("polyline has zero arc length".into()));
    }

    let mut out = Vec::with_capacity(n_points);
    out.push(raw[0]);
    let mut seg = 0;
    for i in 1..n_points - 1 {
        let target = total * i as f64 / (n_points - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((target - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (raw[seg], raw[seg + 1]);
        out.push([
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            a[2] + t * (b[2] - a[2]),
        ]);
    }
    out.push(*raw.last().unwrap());
    Fiber::new(out)
}

/// Sorted random subset of `target` time indices out of `len`.
pub fn downsample_indices(len: usize, target: usize, seed: u64) -> Result<Vec<usize>> {
    if target > len {
        return Err(Error::Config(format!(
            "cannot downsample {len} samples to {target}"
        )));
    }
    if target == len {
        return Ok((0..len).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, len, target).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Downsamples both endpoint series with one shared, sorted random index set.
pub fn downsample_bold(endpoint_a: &[f64], endpoint_b: &[f64], target: usize, seed: u64) -> Result<BoldPair> {
    if endpoint_a.len() != endpoint_b.len() {
        return Err(Error::Shape("endpoint series lengths differ".into()));
    }
    let idx = downsample_indices(endpoint_a.len(), target, seed)?;
    BoldPair::new(
        idx.iter().map(|&i| endpoint_a[i]).collect(),
        idx.iter().map(|&i| endpoint_b[i]).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Point3, b: &Point3, tol: f64) -> bool {
        (0..3).all(|k| (a[k] - b[k]).abs() <= tol)
    }

    #[test]
    fn resample_straight_segment() {
        let f = resample_fiber(&[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]], 5).unwrap();
        for (i, p) in f.points().iter().enumerate() {
            assert!(close(p, &[i as f64, 0.0, 0.0], 1e-12));
        }
    }

    #[test]
    fn resample_right_angle_walks_arc_length() {
        let raw = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 2.0, 0.0]];
        let f = resample_fiber(&raw, 5).unwrap();
        let expect = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [2.0, 1.0, 0.0],
            [2.0, 2.0, 0.0],
        ];
        for (p, e) in f.points().iter().zip(expect.iter()) {
            assert!(close(p, e, 1e-12), "{p:?} vs {e:?}");
        }
    }

    #[test]
    fn resample_uniform_polyline_is_identity() {
        let raw: Vec<Point3> = (0..7).map(|i| [i as f64 * 0.5, 1.0, -2.0]).collect();
        let f = resample_fiber(&raw, 7).unwrap();
        for (p, r) in f.points().iter().zip(raw.iter()) {
            assert!(close(p, r, 1e-12));
        }
    }

    #[test]
    fn resample_rejects_zero_length() {
        let raw = [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        assert!(matches!(resample_fiber(&raw, 5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn resample_keeps_endpoints_exactly() {
        let raw = [[0.1, 0.2, 0.3], [1.7, -0.4, 2.2], [3.3, 0.9, 0.1], [5.0, 5.0, 5.0]];
        let f = resample_fiber(&raw, 25).unwrap();
        assert_eq!(f.points()[0], raw[0]);
        assert_eq!(f.points()[24], raw[3]);
    }

    #[test]
    fn downsample_identity_when_lengths_match() {
        let a: Vec<f64> = (0..600).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..600).map(|i| (i as f64).cos()).collect();
        let pair = downsample_bold(&a, &b, 600, 3).unwrap();
        assert_eq!(pair.endpoint_a(), &a[..]);
        assert_eq!(pair.endpoint_b(), &b[..]);
    }

    #[test]
    fn downsample_is_deterministic_and_shared() {
        let a: Vec<f64> = (0..1200).map(|i| (i as f64 * 0.37).sin()).collect();
        let first = downsample_bold(&a, &a, 600, 11).unwrap();
        let second = downsample_bold(&a, &a, 600, 11).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.endpoint_a(), first.endpoint_b());
        assert_eq!(first.len(), 600);
    }

    #[test]
    fn downsample_rejects_oversized_target() {
        let a = vec![1.0, 2.0, 3.0];
        assert!(downsample_bold(&a, &a, 4, 0).is_err());
    }

    #[test]
    fn empty_bundle_rejected() {
        assert!(Bundle::new("x", vec![]).is_err());
    }
}
