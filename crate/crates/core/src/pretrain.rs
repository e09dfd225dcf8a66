//! Siamese pretraining of one view: random fiber pairs labelled with a
//! normalized distance, regressed by the embedding distance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::fiberdata::Bundle;
use crate::metrics::{functional_similarity, mdf_points};
use crate::nn::{embed_with_loss, Adam, EncoderWeights, LrSchedule, View};

/// A training pair with its pseudo-label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub view: View,
    pub s: f64,
}

/// Draws uniformly random unordered pairs and labels them for one view.
/// Geometric labels are MDF divided by the bundle's largest MDF; functional
/// labels are the functional dissimilarity.
pub struct PairSampler<'a> {
    bundle: &'a Bundle,
    view: View,
    max_mdf: f64,
}

/// Largest MDF over all fiber pairs.
pub fn max_mdf(bundle: &Bundle) -> f64 {
    let recs = bundle.records();
    (0..recs.len())
        .into_par_iter()
        .map(|i| {
            recs[i + 1..]
                .iter()
                .map(|r| mdf_points(recs[i].fiber.points(), r.fiber.points()))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

impl<'a> PairSampler<'a> {
    pub fn new(bundle: &'a Bundle, view: View) -> Result<Self> {
        if bundle.len() < 2 {
            return Err(Error::Degenerate(format!(
                "pair sampling needs at least 2 fibers, got {}",
                bundle.len()
            )));
        }
        let max_mdf = match view {
            View::Geometric => {
                let m = max_mdf(bundle);
                if m <= 0.0 {
                    return Err(Error::Degenerate("all fibers coincide".into()));
                }
                m
            }
            View::Functional => 1.0,
        };
        Ok(Self { bundle, view, max_mdf })
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn max_mdf(&self) -> f64 {
        self.max_mdf
    }

    /// Pseudo-label of the pair `(i, j)`.
    pub fn label(&self, i: usize, j: usize) -> Result<f64> {
        let recs = self.bundle.records();
        let s = match self.view {
            View::Geometric => mdf_points(recs[i].fiber.points(), recs[j].fiber.points()) / self.max_mdf,
            View::Functional => functional_similarity(&recs[i].bold, &recs[j].bold)?,
        };
        Ok(s.clamp(0.0, 1.0))
    }

    /// `count` pairs with `i < j`, labels computed in parallel.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<PairSample>> {
        let n = self.bundle.len();
        let idx: Vec<(usize, usize)> = (0..count)
            .map(|_| {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                (a.min(b), a.max(b))
            })
            .collect();
        idx.into_par_iter()
            .map(|(i, j)| {
                Ok(PairSample {
                    i,
                    j,
                    view: self.view,
                    s: self.label(i, j)?,
                })
            })
            .collect()
    }
}

/// `count` labelled pairs drawn with a fresh generator seeded by `seed`.
pub fn make_pairs(bundle: &Bundle, view: View, count: usize, seed: u64) -> Result<Vec<PairSample>> {
    if count == 0 {
        return Err(Error::Config("pair count must be at least 1".into()));
    }
    let sampler = PairSampler::new(bundle, view)?;
    sampler.sample(count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `(||a - b|| - s)^2` for one pair.
pub fn siamese_loss(a: &[f64], b: &[f64], s: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    (d - s) * (d - s)
}

/// Summed siamese loss over `pairs` of rows of the embedding node `z`.
pub fn siamese_loss_graph(g: &mut Graph, z: Var, pairs: &[(usize, usize)], s: &[f64]) -> Result<Var> {
    if pairs.len() != s.len() {
        return Err(Error::Shape(format!("{} pairs but {} labels", pairs.len(), s.len())));
    }
    let zi = g.gather_rows(z, pairs.iter().map(|p| p.0).collect())?;
    let zj = g.gather_rows(z, pairs.iter().map(|p| p.1).collect())?;
    let sq = g.sq_diff(zi, zj)?;
    let d2 = g.sum_axis(sq, crate::autodiff::Axis::Cols);
    let d = g.sqrt(d2);
    let target = g.constant(Tensor::from_vec(s.len(), 1, s.to_vec())?);
    let r = g.sq_diff(d, target)?;
    Ok(g.sum(r))
}

/// Maps pairs of bundle indices onto rows of a compact embedding batch.
/// Returns the sorted unique fiber indices and the pairs re-indexed.
pub fn compact_pairs(pairs: &[PairSample]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut uniq: Vec<usize> = pairs.iter().flat_map(|p| [p.i, p.j]).collect();
    uniq.sort_unstable();
    uniq.dedup();
    let pos = |x: usize| uniq.binary_search(&x).expect("index present");
    let local = pairs.iter().map(|p| (pos(p.i), pos(p.j))).collect();
    (uniq, local)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub batch: usize,
    /// Pairs drawn per epoch; `None` means one per fiber.
    pub pairs_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 450,
            lr0: 3e-3,
            decay: 0.1,
            decay_every: 200,
            batch: 1024,
            pairs_per_epoch: None,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::step_decay(self.lr0, self.decay, self.decay_every)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(self.decay > 0.0) || self.decay_every == 0 || self.batch == 0 {
            return Err(Error::Config(
                "learning rate, decay, decay interval and batch must be positive".into(),
            ));
        }
        if self.pairs_per_epoch == Some(0) {
            return Err(Error::Config("pairs_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the loss history. Epochs are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub weights: EncoderWeights,
    pub history: Vec<EpochLoss>,
}

/// Seed of the initial weights for a view.
pub fn init_seed(seed: u64, view: View) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(view.tag() as u64))
}

/// Pretrains freshly initialised weights for `view`.
pub fn pretrain_view(bundle: &Bundle, view: View, config: &PretrainConfig) -> Result<Pretrained> {
    let init = EncoderWeights::init(view, init_seed(config.seed, view));
    pretrain_from(bundle, init, config, |_, _, _| Ok(()))
}

/// Pretrains `weights`, calling `on_epoch(epoch, weights, record)` after
/// every epoch.
pub fn pretrain_from<F>(bundle: &Bundle, mut weights: EncoderWeights, config: &PretrainConfig, mut on_epoch: F) -> Result<Pretrained>
where
    F: FnMut(usize, &EncoderWeights, &EpochLoss) -> Result<()>,
{
    config.validate()?;
    let view = weights.view();
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(Pretrained { weights, history });
    }
    let sampler = PairSampler::new(bundle, view)?;
    let schedule = config.schedule();
    let mut adam = Adam::new(schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed(config.seed, view).wrapping_add(1));
    let per_epoch = config.pairs_per_epoch.unwrap_or(bundle.len());
    let names = weights.names();

    for e in 0..config.epochs {
        let lr = schedule.lr_at(e);
        let pairs = sampler.sample(per_epoch, &mut rng)?;
        let mut total = 0.0;
        for (b, batch) in pairs.chunks(config.batch).enumerate() {
            let (uniq, local) = compact_pairs(batch);
            let s: Vec<f64> = batch.iter().map(|p| p.s).collect();
            let lg = embed_with_loss(&weights, bundle, &uniq, |g, z| {
                Ok((siamese_loss_graph(g, z, &local, &s)?, Vec::new()))
            })?;
            if !lg.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: e + 1,
                    batch: b,
                    message: format!("loss is {}", lg.loss),
                });
            }
            total += lg.loss;
            let mut params: Vec<&mut Tensor> = weights.tensors_mut().iter_mut().collect();
            adam.step(&mut params, &lg.weights, &names, lr).map_err(|err| Error::Diverged {
                epoch: e + 1,
                batch: b,
                message: err.to_string(),
            })?;
        }
        let record = EpochLoss {
            epoch: e + 1,
            mean_loss: total / pairs.len() as f64,
            lr,
        };
        on_epoch(e + 1, &weights, &record)?;
        history.push(record);
    }
    Ok(Pretrained { weights, history })
}

/// CSV `epoch,mean_loss,lr` preceded by optional `#` header lines.
pub fn save_history(history: &[EpochLoss], path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("epoch,mean_loss,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.mean_loss, r.lr);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn siamese_loss_examples() {
        assert_eq!(siamese_loss(&[1.0, 2.0], &[1.0, 2.0], 0.0), 0.0);
        assert_eq!(siamese_loss(&[0.0, 0.0], &[1.0, 0.0], 0.0), 1.0);
        assert!((siamese_loss(&[0.0], &[0.3], 0.5) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn graph_loss_matches_plain() {
        let z = Tensor::from_vec(3, 2, vec![0.0, 0.0, 0.3, 0.4, -1.0, 2.0]).unwrap();
        let pairs = [(0, 1), (1, 2)];
        let s = [0.2, 0.9];
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let l = siamese_loss_graph(&mut g, zv, &pairs, &s).unwrap();
        let want = siamese_loss(z.row(0), z.row(1), 0.2) + siamese_loss(z.row(1), z.row(2), 0.9);
        assert!((g.scalar(l) - want).abs() < 1e-12);
    }

    #[test]
    fn compact_pairs_reindexes() {
        let p = |i, j| PairSample { i, j, view: View::Geometric, s: 0.0 };
        let (u, l) = compact_pairs(&[p(3, 9), p(1, 3)]);
        assert_eq!(u, vec![1, 3, 9]);
        assert_eq!(l, vec![(1, 2), (0, 1)]);
    }

    #[test]
    fn schedule_defaults() {
        let s = PretrainConfig::default().schedule();
        assert_eq!(s.lr_at(0), 3e-3);
        assert!((s.lr_at(200) - 3e-4).abs() < 1e-18);
    }
}
