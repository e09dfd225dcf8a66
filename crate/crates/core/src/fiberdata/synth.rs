//! Ground-truth-labelled synthetic bundles.
//!
//! Each geometric group is a circular arc template stacked along z at
//! `group_separation` mm. Every group is split into functional subgroups
//! that share one BOLD latent series. Subgroups sit `subgroup_offset` mm
//! apart along y, and each fiber also receives a rigid shift along x drawn
//! with standard deviation `lateral_spread`, so the functional split need
//! not be the dominant geometric direction. Values are rounded through
//! `f32` so a bundle survives the binary format bit-exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    downsample_indices, resample_fiber, BoldPair, Bundle, FaProfile, Fiber, FiberRecord, Point3,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub groups: usize,
    pub subgroups: usize,
    pub n_fibers: usize,
    pub n_points: usize,
    /// Vertices of the raw polyline before arc-length resampling.
    pub raw_points: usize,
    pub bold_len: usize,
    pub raw_bold_len: usize,
    pub arc_radius: f64,
    pub arc_degrees: f64,
    pub group_separation: f64,
    /// Per-vertex isotropic jitter (mm).
    pub sigma_geo: f64,
    /// Standard deviation of the per-fiber rigid shift along x (mm).
    pub lateral_spread: f64,
    /// Distance between neighbouring functional subgroups along y (mm).
    pub subgroup_offset: f64,
    /// Independent noise added to the shared latent, in latent std units.
    pub sigma_bold: f64,
    /// AR(1) coefficient of the latent BOLD series.
    pub bold_autocorr: f64,
    /// FA mean shift between neighbouring geometric groups.
    pub fa_group_step: f64,
    pub sigma_fa: f64,
    /// Reverse a random half of the fibers (orientation is arbitrary in tractography).
    pub random_flip: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            subgroups: 2,
            n_fibers: 400,
            n_points: super::DEFAULT_POINTS,
            raw_points: 40,
            bold_len: super::DEFAULT_BOLD_LEN,
            raw_bold_len: 1200,
            arc_radius: 40.0,
            arc_degrees: 90.0,
            group_separation: 10.0,
            sigma_geo: 0.1,
            lateral_spread: 0.0,
            subgroup_offset: 0.0,
            sigma_bold: 0.7,
            bold_autocorr: 0.6,
            fa_group_step: 0.1,
            sigma_fa: 0.02,
            random_flip: true,
        }
    }
}

impl SynthConfig {
    /// The 4 x 2 reference set used for end-to-end checks: functional
    /// subgroups are offset along y but the per-fiber lateral shift along x
    /// has the larger variance.
    pub fn reference() -> Self {
        Self {
            lateral_spread: 1.5,
            subgroup_offset: 1.2,
            ..Self::default()
        }
    }

    /// Two geometric groups that nearly overlap in space but carry clearly
    /// different FA profiles.
    pub fn fa_discriminative() -> Self {
        Self {
            groups: 2,
            subgroups: 1,
            n_fibers: 200,
            group_separation: 1.0,
            lateral_spread: 1.0,
            fa_group_step: 0.2,
            ..Self::default()
        }
    }

    pub fn n_labels(&self) -> usize {
        self.groups * self.subgroups
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("groups", self.groups),
            ("subgroups", self.subgroups),
            ("n_fibers", self.n_fibers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_points < 2 || self.raw_points < 2 {
            return Err(Error::Config("fibers need at least 2 points".into()));
        }
        if self.bold_len < 2 || self.raw_bold_len < self.bold_len {
            return Err(Error::Config(format!(
                "BOLD lengths invalid: raw {} -> {}",
                self.raw_bold_len, self.bold_len
            )));
        }
        let noises = [
            ("sigma_geo", self.sigma_geo),
            ("lateral_spread", self.lateral_spread),
            ("subgroup_offset", self.subgroup_offset),
            ("sigma_bold", self.sigma_bold),
            ("sigma_fa", self.sigma_fa),
            ("group_separation", self.group_separation),
            ("fa_group_step", self.fa_group_step),
        ];
        for (name, v) in noises {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.arc_radius > 0.0) || !(self.arc_degrees > 0.0) {
            return Err(Error::Config("arc radius and angle must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bold_autocorr) {
            return Err(Error::Config("bold_autocorr must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[inline]
fn q32(v: f64) -> f64 {
    v as f32 as f64
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn arc_template(cfg: &SynthConfig) -> Vec<Point3> {
    let span = cfg.arc_degrees.to_radians();
    let start = std::f64::consts::FRAC_PI_2 - span / 2.0;
    let mut pts: Vec<Point3> = (0..cfg.raw_points)
        .map(|k| {
            let t = k as f64 / (cfg.raw_points - 1) as f64;
            let th = start + t * span;
            [cfg.arc_radius * th.cos(), cfg.arc_radius * th.sin(), 0.0]
        })
        .collect();
    let n = pts.len() as f64;
    let mean_y = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in &mut pts {
        p[1] -= mean_y;
    }
    pts
}

fn ar1_series(rng: &mut ChaCha8Rng, len: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = normal(rng);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(x);
        x = phi * x + innov * normal(rng);
    }
    out
}

/// Generates a labelled synthetic bundle. Truth label of a fiber is
/// `group * subgroups + subgroup`.
pub fn synth_bundle(cfg: &SynthConfig, seed: u64) -> Result<Bundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_labels = cfg.n_labels();

    let mut labels: Vec<usize> = (0..cfg.n_fibers).map(|i| i % n_labels).collect();
    labels.sort_unstable();
    labels.shuffle(&mut rng);

    let latents: Vec<Vec<f64>> = (0..n_labels)
        .map(|_| ar1_series(&mut rng, cfg.raw_bold_len, cfg.bold_autocorr))
        .collect();
    let keep = downsample_indices(cfg.raw_bold_len, cfg.bold_len, rng.random())?;

    let template = arc_template(cfg);
    let group_mid = (cfg.groups as f64 - 1.0) / 2.0;
    let sub_mid = (cfg.subgroups as f64 - 1.0) / 2.0;

    let mut records = Vec::with_capacity(cfg.n_fibers);
    for (i, &label) in labels.iter().enumerate() {
        let (g, f) = (label / cfg.subgroups, label % cfg.subgroups);
        let shift = [
            cfg.lateral_spread * normal(&mut rng),
            cfg.subgroup_offset * (f as f64 - sub_mid),
            cfg.group_separation * (g as f64 - group_mid),
        ];
        let raw: Vec<Point3> = template
            .iter()
            .map(|p| {
                [
                    p[0] + shift[0] + cfg.sigma_geo * normal(&mut rng),
                    p[1] + shift[1] + cfg.sigma_geo * normal(&mut rng),
                    p[2] + shift[2] + cfg.sigma_geo * normal(&mut rng),
                ]
            })
            .collect();
        let resampled = resample_fiber(&raw, cfg.n_points)?;
        let mut points: Vec<Point3> = resampled
            .points()
            .iter()
            .map(|p| [q32(p[0]), q32(p[1]), q32(p[2])])
            .collect();

        let latent = &latents[label];
        let mut endpoint = || -> Vec<f64> {
            let raw: Vec<f64> = latent
                .iter()
                .map(|v| v + cfg.sigma_bold * normal(&mut rng))
                .collect();
            keep.iter().map(|&t| q32(raw[t])).collect()
        };
        let mut bold_a = endpoint();
        let mut bold_b = endpoint();

        let fa_shift = cfg.fa_group_step * (g as f64 - group_mid);
        let mut fa: Vec<f64> = (0..cfg.n_points)
            .map(|k| {
                let t = k as f64 / (cfg.n_points - 1) as f64;
                let v = 0.45 + 0.1 * (std::f64::consts::PI * t).sin() + fa_shift
                    + cfg.sigma_fa * normal(&mut rng);
                q32(v.clamp(0.0, 1.0))
            })
            .collect();

        if cfg.random_flip && rng.random_bool(0.5) {
            points.reverse();
            fa.reverse();
            std::mem::swap(&mut bold_a, &mut bold_b);
        }

        let record = FiberRecord::new(
            Fiber::new(points)?,
            BoldPair::new(bold_a, bold_b).map_err(|e| Error::Record {
                record: i,
                message: e.to_string(),
            })?,
            FaProfile::new(fa)?,
            Some(label as i32),
        )?;
        records.push(record);
    }
    Bundle::new(format!("synth-g{}f{}-s{seed}", cfg.groups, cfg.subgroups), records)
}

/// Copy of `bundle` with independent isotropic jitter on every point; BOLD,
/// FA and labels are kept. Used to fake additional subjects.
pub fn jittered_copy(bundle: &Bundle, sigma: f64, seed: u64) -> Result<Bundle> {
    if !(sigma >= 0.0) {
        return Err(Error::Config("jitter sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = bundle
        .records()
        .iter()
        .map(|r| {
            let points = r
                .fiber
                .points()
                .iter()
                .map(|p| {
                    [
                        q32(p[0] + sigma * normal(&mut rng)),
                        q32(p[1] + sigma * normal(&mut rng)),
                        q32(p[2] + sigma * normal(&mut rng)),
                    ]
                })
                .collect();
            FiberRecord::new(Fiber::new(points)?, r.bold.clone(), r.fa.clone(), r.truth_label)
        })
        .collect::<Result<Vec<_>>>()?;
    Bundle::new(format!("{}-jitter{seed}", bundle.name), records)
}
