use rayon::prelude::*;

use super::{EncoderWeights, View, BOLD_LEN, EMBED_DIM, GEO_POINTS};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::fiberdata::{BoldPair, Bundle, Fiber};

/// Coordinates are multiplied by this before entering the geometric encoder.
pub const COORD_SCALE: f64 = 0.05;
/// Neighbours per point in the edge-convolution graph.
pub const KNN_K: usize = 5;
pub const LEAKY_SLOPE: f64 = 0.01;

const EMBED_CHUNK: usize = 64;

/// A batch of fibers prepared for one encoder.
#[derive(Clone, Debug)]
pub enum EncoderInput {
    /// `(GEO_POINTS * n) x 3` scaled coordinates, fiber-major.
    Geometric { coords: Tensor, n: usize },
    /// `(2 * n) x BOLD_LEN` z-scored series; rows `2i` and `2i + 1` are
    /// the two endpoints of fiber `i`.
    Functional { series: Tensor, n: usize },
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

impl EncoderInput {
    pub fn geometric<'a>(fibers: impl IntoIterator<Item = &'a Fiber>) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for (i, f) in fibers.into_iter().enumerate() {
            if f.len() != GEO_POINTS {
                return Err(Error::Record {
                    record: i,
                    message: format!("fiber has {} points, encoder expects {GEO_POINTS}", f.len()),
                });
            }
            data.extend(f.points().iter().flatten().map(|c| c * COORD_SCALE));
            n += 1;
        }
        Ok(Self::Geometric {
            coords: Tensor::from_vec(n * GEO_POINTS, 3, data)?,
            n,
        })
    }

    pub fn functional<'a>(bolds: impl IntoIterator<Item = &'a BoldPair>) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for (i, b) in bolds.into_iter().enumerate() {
            if b.len() != BOLD_LEN {
                return Err(Error::Record {
                    record: i,
                    message: format!("series has {} samples, encoder expects {BOLD_LEN}", b.len()),
                });
            }
            data.extend(zscore(b.endpoint_a()));
            data.extend(zscore(b.endpoint_b()));
            n += 1;
        }
        Ok(Self::Functional {
            series: Tensor::from_vec(2 * n, BOLD_LEN, data)?,
            n,
        })
    }

    /// Input for the records at `indices`.
    pub fn from_bundle(view: View, bundle: &Bundle, indices: &[usize]) -> Result<Self> {
        let recs = bundle.records();
        if let Some(&bad) = indices.iter().find(|&&i| i >= recs.len()) {
            return Err(Error::Config(format!("fiber index {bad} out of range")));
        }
        match view {
            View::Geometric => Self::geometric(indices.iter().map(|&i| &recs[i].fiber)),
            View::Functional => Self::functional(indices.iter().map(|&i| &recs[i].bold)),
        }
    }

    pub fn view(&self) -> View {
        match self {
            Self::Geometric { .. } => View::Geometric,
            Self::Functional { .. } => View::Functional,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Geometric { n, .. } | Self::Functional { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// For every point of every fiber, the stacked row indices of its `k`
/// nearest other points of the same fiber under Euclidean distance on
/// `features`. Ties go to the lower point index.
pub fn knn_indices(features: &Tensor, points_per_fiber: usize, k: usize) -> Result<Vec<usize>> {
    let p = points_per_fiber;
    if p == 0 || features.rows() % p != 0 || k >= p {
        return Err(Error::Shape(format!(
            "cannot build a {k}-NN graph over {} rows in fibers of {p}",
            features.rows()
        )));
    }
    let mut out = Vec::with_capacity(features.rows() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(p);
    for f in 0..features.rows() / p {
        let base = f * p;
        for a in 0..p {
            let xa = features.row(base + a);
            cand.clear();
            for b in (0..p).filter(|&b| b != a) {
                let d: f64 = xa
                    .iter()
                    .zip(features.row(base + b))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum();
                cand.push((d, b));
            }
            cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            out.extend(cand[..k].iter().map(|&(_, b)| base + b));
        }
    }
    Ok(out)
}

fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = g.matmul(x, w)?;
    g.add(h, b)
}

fn mlp2(g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
    let h = dense(g, x, p[0], p[1])?;
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let h = dense(g, h, p[2], p[3])?;
    Ok(g.leaky_relu(h, LEAKY_SLOPE))
}

/// Edge convolution: shared MLP on `[x_i, x_j - x_i]` over the k-NN graph
/// of the current features, max over neighbours.
fn edge_block(g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
    let nbr = knn_indices(g.value(x), GEO_POINTS, KNN_K)?;
    let centre: Vec<usize> = (0..g.value(x).rows())
        .flat_map(|r| std::iter::repeat_n(r, KNN_K))
        .collect();
    let xc = g.gather_rows(x, centre)?;
    let xn = g.gather_rows(x, nbr)?;
    let diff = g.sub(xn, xc)?;
    let edge = g.concat(xc, diff)?;
    let h = mlp2(g, edge, p)?;
    g.max_groups(h, KNN_K)
}

/// Runs the encoder for `input` with parameters already attached to `g`
/// (in layout order). Returns an `n x EMBED_DIM` node.
pub fn encode(g: &mut Graph, params: &[Var], input: &EncoderInput) -> Result<Var> {
    let expected = input.view().layout().len();
    if params.len() != expected {
        return Err(Error::Shape(format!(
            "{} encoder takes {expected} parameters, got {}",
            input.view().name(),
            params.len()
        )));
    }
    match input {
        EncoderInput::Geometric { coords, .. } => {
            let x = g.constant(coords.clone());
            let h1 = edge_block(g, x, &params[0..4])?;
            let h2 = edge_block(g, h1, &params[4..8])?;
            let pooled = g.max_groups(h2, GEO_POINTS)?;
            dense(g, pooled, params[8], params[9])
        }
        EncoderInput::Functional { series, .. } => {
            let x = g.constant(series.clone());
            let h = mlp2(g, x, &params[0..4])?;
            let pooled = g.max_groups(h, 2)?;
            dense(g, pooled, params[4], params[5])
        }
    }
}

/// Embeddings of the fibers at `indices`, computed without gradients in
/// parallel chunks. Row `r` belongs to `indices[r]`.
pub fn embed_indices(weights: &EncoderWeights, bundle: &Bundle, indices: &[usize]) -> Result<Tensor> {
    let chunks: Vec<Tensor> = indices
        .par_chunks(EMBED_CHUNK)
        .map(|chunk| {
            let input = EncoderInput::from_bundle(weights.view(), bundle, chunk)?;
            let mut g = Graph::new();
            let params = weights.attach_frozen(&mut g);
            let z = encode(&mut g, &params, &input)?;
            Ok(g.value(z).clone())
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(indices.len() * EMBED_DIM);
    for c in chunks {
        data.extend(c.into_data());
    }
    Tensor::from_vec(indices.len(), EMBED_DIM, data)
}

/// Embeddings of every fiber of `bundle`, `N x EMBED_DIM`.
pub fn embed(weights: &EncoderWeights, bundle: &Bundle) -> Result<Tensor> {
    let all: Vec<usize> = (0..bundle.len()).collect();
    embed_indices(weights, bundle, &all)
}

/// Loss value and gradients from [`embed_with_loss`].
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub loss: f64,
    /// Gradients of the encoder tensors in layout order.
    pub weights: Vec<Tensor>,
    /// Gradients of the extra leaves returned by the loss builder.
    pub extra: Vec<Tensor>,
}

/// Largest fiber count embedded in one differentiable graph.
pub const GRAPH_CHUNK: usize = 512;

/// Embeds the fibers at `indices` as an `n x EMBED_DIM` node, hands it to
/// `build` to form a scalar loss (which may add its own leaves, returned
/// for gradient extraction) and backpropagates into the encoder.
///
/// Above [`GRAPH_CHUNK`] fibers the embedding is first computed without
/// gradients, `dL/dZ` is taken on a small graph, and the encoder is then
/// replayed chunk by chunk with that seed to bound memory.
pub fn embed_with_loss<F>(weights: &EncoderWeights, bundle: &Bundle, indices: &[usize], build: F) -> Result<LossGrads>
where
    F: FnOnce(&mut Graph, Var) -> Result<(Var, Vec<Var>)>,
{
    if indices.len() <= GRAPH_CHUNK {
        let input = EncoderInput::from_bundle(weights.view(), bundle, indices)?;
        let mut g = Graph::new();
        let params = weights.attach(&mut g);
        let z = encode(&mut g, &params, &input)?;
        let (loss, extra) = build(&mut g, z)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Ok(LossGrads { loss: value, weights: Vec::new(), extra: Vec::new() });
        }
        g.backward(loss)?;
        return Ok(LossGrads {
            loss: value,
            weights: params.iter().map(|&p| g.take_grad(p)).collect(),
            extra: extra.iter().map(|&e| g.take_grad(e)).collect(),
        });
    }

    let z_full = embed_indices(weights, bundle, indices)?;
    let mut g = Graph::new();
    let z = g.param(z_full);
    let (loss, extra) = build(&mut g, z)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Ok(LossGrads { loss: value, weights: Vec::new(), extra: Vec::new() });
    }
    g.backward(loss)?;
    let dz = g.take_grad(z);
    let extra = extra.iter().map(|&e| g.take_grad(e)).collect();

    let parts: Vec<Vec<Tensor>> = indices
        .par_chunks(GRAPH_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let input = EncoderInput::from_bundle(weights.view(), bundle, chunk)?;
            let rows: Vec<usize> = (c * GRAPH_CHUNK..c * GRAPH_CHUNK + chunk.len()).collect();
            let mut cg = Graph::new();
            let params = weights.attach(&mut cg);
            let zc = encode(&mut cg, &params, &input)?;
            let seed = cg.constant(dz.select_rows(&rows));
            let prod = cg.mul(zc, seed)?;
            let proxy = cg.sum(prod);
            cg.backward(proxy)?;
            Ok(params.iter().map(|&p| cg.take_grad(p)).collect())
        })
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let mut grads = parts.next().unwrap_or_default();
    for part in parts {
        for (acc, gp) in grads.iter_mut().zip(&part) {
            acc.add_assign(gp);
        }
    }
    Ok(LossGrads { loss: value, weights: grads, extra })
}
