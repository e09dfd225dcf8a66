//! Cluster centroids, Student-t soft assignment, the sharpened target
//! distribution and collaborative fine-tuning of both views.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{format_err, Error, Result};
use crate::fiberdata::{Bundle, FaProfile};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::nn::{embed, embed_with_loss, Adam, EncoderWeights, LrSchedule, View, EMBED_DIM};
use crate::pretrain::{siamese_loss_graph, PairSampler};

/// Centroids of both views plus the fibers they were taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub centroids_geo: Tensor,
    pub centroids_func: Tensor,
    pub centroid_indices: Vec<usize>,
    /// Per-cluster FA reference profiles, filled in at inference.
    pub fa_reference: Option<Vec<FaProfile>>,
}

impl ClusterModel {
    pub fn new(centroids_geo: Tensor, centroids_func: Tensor, centroid_indices: Vec<usize>) -> Result<Self> {
        let k = centroid_indices.len();
        for (name, c) in [("geometric", &centroids_geo), ("functional", &centroids_func)] {
            if c.shape() != (k, EMBED_DIM) {
                return Err(Error::Shape(format!(
                    "{name} centroids are {:?}, expected ({k}, {EMBED_DIM})",
                    c.shape()
                )));
            }
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("{name} centroids")));
            }
        }
        Ok(Self {
            centroids_geo,
            centroids_func,
            centroid_indices,
            fa_reference: None,
        })
    }

    pub fn k(&self) -> usize {
        self.centroid_indices.len()
    }

    pub fn centroids(&self, view: View) -> &Tensor {
        match view {
            View::Geometric => &self.centroids_geo,
            View::Functional => &self.centroids_func,
        }
    }
}

/// How functional centroids are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Functional centroids are the functional embeddings of the fibers
    /// nearest the geometric k-means means.
    Cross,
    /// Each view runs its own k-means.
    Individual,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(InitMode::Cross),
            "individual" => Ok(InitMode::Individual),
            other => Err(Error::Config(format!("unknown init mode `{other}`"))),
        }
    }
}

/// For each centroid in order, the nearest fiber not already taken.
fn nearest_distinct(z: &Tensor, centroids: &Tensor) -> Vec<usize> {
    let mut used = vec![false; z.rows()];
    (0..centroids.rows())
        .map(|c| {
            let mu = centroids.row(c);
            let mut best = (usize::MAX, f64::INFINITY);
            for i in (0..z.rows()).filter(|&i| !used[i]) {
                let d: f64 = z.row(i).iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (i, d);
                }
            }
            used[best.0] = true;
            best.0
        })
        .collect()
}

pub fn init_centroids(z_geo: &Tensor, z_func: &Tensor, k: usize, seed: u64, mode: InitMode) -> Result<ClusterModel> {
    if z_geo.shape() != z_func.shape() {
        return Err(Error::Shape(format!(
            "embeddings disagree: {:?} vs {:?}",
            z_geo.shape(),
            z_func.shape()
        )));
    }
    let km = kmeans(z_geo, &KMeansConfig::new(k, seed))?;
    let indices = nearest_distinct(z_geo, &km.centroids);
    let centroids_func = match mode {
        InitMode::Cross => z_func.select_rows(&indices),
        InitMode::Individual => kmeans(z_func, &KMeansConfig::new(k, seed))?.centroids,
    };
    ClusterModel::new(km.centroids, centroids_func, indices)
}

fn normalize_kernel(mut t: Tensor) -> Tensor {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let s: f64 = row.iter().sum();
        for v in row {
            *v /= s;
        }
    }
    t
}

/// Soft assignment from squared fiber-to-centroid distances:
/// `q_ij ∝ 1 / (1 + d_ij)`.
pub fn soft_assign_sq(d2: &Tensor) -> Tensor {
    normalize_kernel(d2.map(|d| 1.0 / (1.0 + d)))
}

/// Student-t soft assignment of embeddings to centroids.
pub fn soft_assign(z: &Tensor, centroids: &Tensor) -> Result<Tensor> {
    if z.cols() != centroids.cols() {
        return Err(Error::Shape(format!(
            "embeddings have {} columns, centroids {}",
            z.cols(),
            centroids.cols()
        )));
    }
    let k = centroids.rows();
    let rows: Vec<Vec<f64>> = (0..z.rows())
        .into_par_iter()
        .map(|i| {
            let x = z.row(i);
            (0..k)
                .map(|j| x.iter().zip(centroids.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect()
        })
        .collect();
    let d2 = Tensor::from_vec(z.rows(), k, rows.concat())?;
    Ok(soft_assign_sq(&d2))
}

/// Sharpened target: `p_ij ∝ q_ij^2 / Σ_i q_ij`.
pub fn target_distribution(q: &Tensor) -> Tensor {
    let mut freq = vec![0.0; q.cols()];
    for r in 0..q.rows() {
        for (f, v) in freq.iter_mut().zip(q.row(r)) {
            *f += v;
        }
    }
    let mut p = q.clone();
    for r in 0..p.rows() {
        for (v, f) in p.row_mut(r).iter_mut().zip(&freq) {
            *v = *v * *v / f;
        }
    }
    normalize_kernel(p)
}

/// `Σ p log(p / q)` with `0 log 0 = 0`.
pub fn kl_loss(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!("KL of {:?} and {:?}", p.shape(), q.shape())));
    }
    Ok(p.data()
        .iter()
        .zip(q.data())
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum())
}

fn entropy_term(p: &Tensor) -> f64 {
    p.data().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// `KL(P || Q)` as a graph node, where `Q` is the soft assignment of `z`
/// to the centroid node `mu` and `P` is a constant target.
pub fn kl_graph(g: &mut Graph, z: Var, mu: Var, p: &Tensor) -> Result<Var> {
    let d2 = g.sq_dist(z, mu)?;
    if g.value(d2).shape() != p.shape() {
        return Err(Error::Shape(format!(
            "target is {:?}, assignment {:?}",
            p.shape(),
            g.value(d2).shape()
        )));
    }
    let shifted = g.add_scalar(d2, 1.0);
    let kernel = g.recip(shifted);
    let mass = g.sum_axis(kernel, Axis::Cols);
    let inv = g.recip(mass);
    let q = g.mul(kernel, inv)?;
    let ln_q = g.ln(q);
    let pc = g.constant(p.clone());
    let cross = g.mul(pc, ln_q)?;
    let cross = g.sum(cross);
    let neg = g.scale(cross, -1.0);
    Ok(g.add_scalar(neg, entropy_term(p)))
}

/// Nodes of `L_s + gamma * KL(P || Q)`.
#[derive(Clone, Copy, Debug)]
pub struct FinetuneLoss {
    pub total: Var,
    pub siamese: Var,
    pub clustering: Var,
}

pub fn finetune_loss_graph(
    g: &mut Graph,
    z: Var,
    mu: Var,
    p: &Tensor,
    pairs: &[(usize, usize)],
    s: &[f64],
    gamma: f64,
) -> Result<FinetuneLoss> {
    let siamese = siamese_loss_graph(g, z, pairs, s)?;
    let clustering = kl_graph(g, z, mu, p)?;
    let weighted = g.scale(clustering, gamma);
    let total = g.add(siamese, weighted)?;
    Ok(FinetuneLoss {
        total,
        siamese,
        clustering,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub pairs_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-5,
            gamma: 0.1,
            batch: 1024,
            pairs_per_epoch: None,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || !(self.gamma >= 0.0) {
            return Err(Error::Config(
                "fine-tune lr and batch must be positive and gamma non-negative".into(),
            ));
        }
        if self.pairs_per_epoch == Some(0) {
            return Err(Error::Config("pairs_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// The view whose target guides epoch `epoch` (numbered from 1).
pub fn guide_view(epoch: usize) -> View {
    if epoch % 2 == 1 {
        View::Geometric
    } else {
        View::Functional
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub ls_geo: f64,
    pub ls_func: f64,
    pub lc_geo: f64,
    pub lc_func: f64,
    pub guide: View,
}

#[derive(Clone, Debug)]
pub struct Finetuned {
    pub geo: EncoderWeights,
    pub func: Option<EncoderWeights>,
    pub model: ClusterModel,
    pub history: Vec<FinetuneRecord>,
}

struct ViewState<'a> {
    weights: EncoderWeights,
    centroids: Tensor,
    adam: Adam,
    sampler: PairSampler<'a>,
    rng: ChaCha8Rng,
}

impl ViewState<'_> {
    /// One epoch of updates against target `p`; returns the mean siamese
    /// loss per pair and the mean clustering loss per step.
    fn epoch(&mut self, bundle: &Bundle, p: &Tensor, cfg: &FinetuneConfig, epoch: usize) -> Result<(f64, f64)> {
        let all: Vec<usize> = (0..bundle.len()).collect();
        let pairs = self.sampler.sample(cfg.pairs_per_epoch.unwrap_or(bundle.len()), &mut self.rng)?;
        let mut names = self.weights.names();
        names.push("centroids");
        let (mut ls_sum, mut lc_sum, mut steps) = (0.0, 0.0, 0usize);
        for (b, batch) in pairs.chunks(cfg.batch).enumerate() {
            let idx: Vec<(usize, usize)> = batch.iter().map(|q| (q.i, q.j)).collect();
            let s: Vec<f64> = batch.iter().map(|q| q.s).collect();
            let mut parts = (0.0, 0.0);
            let centroids = &self.centroids;
            let lg = embed_with_loss(&self.weights, bundle, &all, |g, z| {
                let mu = g.param(centroids.clone());
                let l = finetune_loss_graph(g, z, mu, p, &idx, &s, cfg.gamma)?;
                parts = (g.scalar(l.siamese), g.scalar(l.clustering));
                Ok((l.total, vec![mu]))
            })?;
            if !lg.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    message: format!(
                        "{} view loss is {} (siamese {}, clustering {})",
                        self.weights.view().name(),
                        lg.loss,
                        parts.0,
                        parts.1
                    ),
                });
            }
            ls_sum += parts.0;
            lc_sum += parts.1;
            steps += 1;
            let mut grads = lg.weights;
            grads.extend(lg.extra);
            let mut params: Vec<&mut Tensor> = self.weights.tensors_mut().iter_mut().collect();
            params.push(&mut self.centroids);
            self.adam
                .step(&mut params, &grads, &names, cfg.lr)
                .map_err(|err| Error::Diverged {
                    epoch,
                    batch: b,
                    message: err.to_string(),
                })?;
        }
        Ok((ls_sum / pairs.len() as f64, lc_sum / steps.max(1) as f64))
    }
}

fn stream_seed(seed: u64, view: View) -> u64 {
    seed.wrapping_add(0xF1E7_0000 + view.tag() as u64)
}

/// Collaborative fine-tuning. With `func = None` only the geometric view
/// is refined, which requires `gamma = 0` since even epochs would need
/// the functional target.
pub fn finetune(
    bundle: &Bundle,
    geo: EncoderWeights,
    func: Option<EncoderWeights>,
    model: ClusterModel,
    cfg: &FinetuneConfig,
) -> Result<Finetuned> {
    cfg.validate()?;
    if geo.view() != View::Geometric || func.as_ref().is_some_and(|f| f.view() != View::Functional) {
        return Err(Error::Config("encoder weights passed for the wrong view".into()));
    }
    if func.is_none() && cfg.gamma > 0.0 && cfg.epochs > 1 {
        return Err(Error::Config(
            "functional guidance needs functional weights; use gamma = 0".into(),
        ));
    }
    if model.centroid_indices.iter().any(|&i| i >= bundle.len()) {
        return Err(Error::Config("centroid fiber index outside the bundle".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(Finetuned { geo, func, model, history });
    }
    let make = |w: EncoderWeights, centroids: Tensor| -> Result<ViewState<'_>> {
        let view = w.view();
        Ok(ViewState {
            sampler: PairSampler::new(bundle, view)?,
            rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, view)),
            adam: Adam::new(LrSchedule::constant(cfg.lr)),
            weights: w,
            centroids,
        })
    };
    let mut g_state = make(geo, model.centroids_geo.clone())?;
    let mut f_state = func.map(|w| make(w, model.centroids_func.clone())).transpose()?;

    for epoch in 1..=cfg.epochs {
        let guide = guide_view(epoch);
        let q_geo = soft_assign(&embed(&g_state.weights, bundle)?, &g_state.centroids)?;
        let p = match (&f_state, guide) {
            (Some(fs), View::Functional) => {
                target_distribution(&soft_assign(&embed(&fs.weights, bundle)?, &fs.centroids)?)
            }
            _ => target_distribution(&q_geo),
        };
        let (ls_geo, lc_geo) = g_state.epoch(bundle, &p, cfg, epoch)?;
        let (ls_func, lc_func) = match f_state.as_mut() {
            Some(fs) => fs.epoch(bundle, &p, cfg, epoch)?,
            None => (0.0, 0.0),
        };
        history.push(FinetuneRecord {
            epoch,
            ls_geo,
            ls_func,
            lc_geo,
            lc_func,
            guide,
        });
    }

    let mut model = model;
    model.centroids_geo = g_state.centroids;
    let func = f_state.map(|fs| {
        model.centroids_func = fs.centroids;
        fs.weights
    });
    Ok(Finetuned {
        geo: g_state.weights,
        func,
        model,
        history,
    })
}

pub const MODEL_MAGIC: &[u8; 4] = b"DMCM";

/// Layout: magic, u32 K, K x 10 `f32` geometric centroids, the same for
/// functional centroids, K u32 fiber indices, u8 FA flag and, when set,
/// u32 points per profile followed by K profiles of `f32`.
pub fn save_model(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(model.k() as u32).to_le_bytes());
    for c in [&model.centroids_geo, &model.centroids_func] {
        for &v in c.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &i in &model.centroid_indices {
        buf.extend_from_slice(&(i as u32).to_le_bytes());
    }
    match &model.fa_reference {
        None => buf.push(0),
        Some(refs) => {
            buf.push(1);
            let n_p = refs.first().map_or(0, FaProfile::len);
            if refs.len() != model.k() || refs.iter().any(|r| r.len() != n_p) {
                return Err(Error::Shape("FA references must be K profiles of equal length".into()));
            }
            buf.extend_from_slice(&(n_p as u32).to_le_bytes());
            for r in refs {
                for &v in r.values() {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClusterModel> {
    const KIND: &str = "cluster model";
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let out = bytes
            .get(pos..pos + n)
            .ok_or_else(|| format_err(KIND, format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(out)
    };
    if take(4)? != MODEL_MAGIC {
        return Err(format_err(KIND, "bad magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let floats = |b: &[u8]| -> Vec<f64> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    let k = u32_at(take(4)?) as usize;
    let geo = Tensor::from_vec(k, EMBED_DIM, floats(take(4 * k * EMBED_DIM)?))?;
    let func = Tensor::from_vec(k, EMBED_DIM, floats(take(4 * k * EMBED_DIM)?))?;
    let indices: Vec<usize> = take(4 * k)?.chunks_exact(4).map(|c| u32_at(c) as usize).collect();
    let fa_reference = match take(1)?[0] {
        0 => None,
        1 => {
            let n_p = u32_at(take(4)?) as usize;
            let vals = floats(take(4 * k * n_p)?);
            Some(
                vals.chunks(n_p.max(1))
                    .take(k)
                    .map(|c| FaProfile::new(c.to_vec()))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        other => return Err(format_err(KIND, format!("bad FA flag {other}"))),
    };
    if pos != bytes.len() {
        return Err(format_err(KIND, "trailing bytes"));
    }
    let mut model = ClusterModel::new(geo, func, indices)?;
    model.fa_reference = fa_reference;
    Ok(model)
}

/// CSV `epoch,ls_geo,ls_func,lc_geo,lc_func,guide_view`.
pub fn save_finetune_history(history: &[FinetuneRecord], path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("epoch,ls_geo,ls_func,lc_geo,lc_func,guide_view\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.ls_geo,
            r.ls_func,
            r.lc_geo,
            r.lc_func,
            r.guide.tag()
        );
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn soft_assign_examples() {
        let z = t(&[&[0.0, 0.0]]);
        let q = soft_assign(&z, &t(&[&[0.0, 0.0], &[1.0, 0.0]])).unwrap();
        assert!((q.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        let q = soft_assign(&z, &t(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(q.data(), &[0.5, 0.5]);
        let q = soft_assign(&t(&[&[3.0, 1.0], &[0.0, 2.0]]), &t(&[&[5.0, 5.0]])).unwrap();
        assert_eq!(q.data(), &[1.0, 1.0]);
    }

    #[test]
    fn target_distribution_hand_example() {
        // column masses 1.4 and 0.6
        // row 1: 0.64/1.4 = 0.457143, 0.04/0.6 = 0.066667 -> 0.872727, 0.127273
        // row 2: 0.36/1.4 = 0.257143, 0.16/0.6 = 0.266667 -> 0.490909, 0.509091
        let p = target_distribution(&t(&[&[0.8, 0.2], &[0.6, 0.4]]));
        assert!((p.get(0, 0) - 0.48 / 0.55).abs() < 1e-12);
        assert!((p.get(1, 0) - 0.27 / 0.55).abs() < 1e-12);
        assert!((p.get(1, 1) - 0.28 / 0.55).abs() < 1e-12);
    }

    #[test]
    fn target_distribution_fixed_point() {
        let q = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(target_distribution(&q), q);
        let u = t(&[&[0.25; 4], &[0.25; 4], &[0.25; 4]]);
        assert_eq!(target_distribution(&u), u);
    }

    #[test]
    fn kl_examples() {
        let p = t(&[&[1.0, 0.0]]);
        let q = t(&[&[0.5, 0.5]]);
        assert!((kl_loss(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl_loss(&q, &q).unwrap(), 0.0);
        assert!(kl_loss(&p, &t(&[&[1.0]])).is_err());
    }

    #[test]
    fn kl_graph_matches_plain() {
        let z = t(&[&[0.1, 0.2], &[1.0, -0.5], &[0.3, 0.3]]);
        let mu = t(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let q = soft_assign(&z, &mu).unwrap();
        let p = target_distribution(&q);
        let mut g = Graph::new();
        let zv = g.constant(z);
        let mv = g.constant(mu);
        let kl = kl_graph(&mut g, zv, mv, &p).unwrap();
        assert!((g.scalar(kl) - kl_loss(&p, &q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn guide_alternates_starting_geometric() {
        assert_eq!(guide_view(1), View::Geometric);
        assert_eq!(guide_view(2), View::Functional);
        assert_eq!(guide_view(19), View::Geometric);
    }

    #[test]
    fn k_equals_n_indices_are_a_permutation() {
        let mut z = Tensor::zeros(4, EMBED_DIM);
        for (r, (a, b)) in [(0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (2.0, 2.0)].into_iter().enumerate() {
            z.set(r, 0, a);
            z.set(r, 1, b);
        }
        let m = init_centroids(&z, &z, 4, 5, InitMode::Cross).unwrap();
        let mut idx = m.centroid_indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert!(init_centroids(&z, &z, 5, 5, InitMode::Cross).is_err());
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dmcm");
        let c = Tensor::from_vec(2, EMBED_DIM, (0..20).map(|v| v as f64 * 0.25).collect()).unwrap();
        let mut m = ClusterModel::new(c.clone(), c, vec![4, 1]).unwrap();
        m.fa_reference = Some(vec![
            FaProfile::new(vec![0.5, 0.25, 0.125]).unwrap(),
            FaProfile::new(vec![0.0, 1.0, 0.75]).unwrap(),
        ]);
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}
