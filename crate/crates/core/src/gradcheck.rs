//! Central finite-difference checks of analytic gradients.
//!
//! A coordinate is skipped when either perturbed evaluation takes a
//! different branch (rectifier sign, max winner or neighbour set) from the
//! unperturbed one, since the derivative is not defined across the switch.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::Result;
use crate::fiberdata::{BoldPair, Fiber, Point3};
use crate::finetune::{finetune_loss_graph, soft_assign, target_distribution};
use crate::nn::{encode, EncoderInput, EncoderWeights, View, BOLD_LEN, EMBED_DIM, GEO_POINTS};
use crate::pretrain::siamese_loss_graph;

pub const STEP: f64 = 1e-4;
/// Denominator floor of the relative error, per unit of loss magnitude.
/// Gradients that vanish identically (a bias under a translation-invariant
/// loss) are then judged by absolute agreement, since the rounding noise of
/// a central difference grows with `|f|`.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub seed: u64,
    /// Largest per-tensor relative error `|a - n|∞ / max(|a|∞, |n|∞, floor)`.
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
    pub max_rel_err: f64,
}

/// Compares backpropagated gradients of `build` against central
/// differences. `sample` caps the coordinates checked per tensor.
pub fn check_gradients<F>(params: &[Tensor], build: F, sample: Option<usize>, seed: u64) -> Result<(f64, usize, usize)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let signature = g.branch_signature();
    let floor = SCALE_FLOOR * g.scalar(loss).abs().max(1.0);
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.take_grad(v)).collect();

    let eval = |p: &[Tensor]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = p.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok((g.scalar(loss), g.branch_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for t in 0..params.len() {
        let len = params[t].len();
        let coords: Vec<usize> = match sample {
            Some(m) if m < len => {
                let mut c = index::sample(&mut rng, len, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let (mut a_max, mut n_max, mut diff_max) = (0.0f64, 0.0f64, 0.0f64);
        for &c in &coords {
            let orig = params[t].data()[c];
            work[t].data_mut()[c] = orig + STEP;
            let (fp, sp) = eval(&work)?;
            work[t].data_mut()[c] = orig - STEP;
            let (fm, sm) = eval(&work)?;
            work[t].data_mut()[c] = orig;
            if sp != signature || sm != signature {
                skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * STEP);
            let a = analytic[t].data()[c];
            a_max = a_max.max(a.abs());
            n_max = n_max.max(numeric.abs());
            diff_max = diff_max.max((a - numeric).abs());
            checked += 1;
        }
        worst = worst.max(diff_max / a_max.max(n_max).max(floor));
    }
    Ok((worst, checked, skipped))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Random 25-point walk with mm-scale steps.
pub fn random_fiber(rng: &mut ChaCha8Rng) -> Fiber {
    let mut p: Point3 = [normal(rng) * 10.0, normal(rng) * 10.0, normal(rng) * 10.0];
    let mut pts = Vec::with_capacity(GEO_POINTS);
    for _ in 0..GEO_POINTS {
        pts.push(p);
        for c in &mut p {
            *c += 2.0 + normal(rng);
        }
    }
    Fiber::new(pts).expect("valid walk")
}

pub fn random_bold(rng: &mut ChaCha8Rng) -> BoldPair {
    let a = (0..BOLD_LEN).map(|_| normal(rng)).collect();
    let b = (0..BOLD_LEN).map(|_| normal(rng)).collect();
    BoldPair::new(a, b).expect("random series")
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> (Vec<(usize, usize)>, Vec<f64>) {
    let pairs = (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let j = (i + 1 + rng.random_range(0..n - 1)) % n;
            (i, j)
        })
        .collect();
    let s = (0..count).map(|_| rng.random::<f64>()).collect();
    (pairs, s)
}

/// Three dense layers with rectifiers, a row gather, a concat and a max,
/// reduced by a mean squared difference.
fn mlp3_case(seed: u64) -> Result<(f64, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, 6, 4, 1.0);
    let y = random_tensor(&mut rng, 3, 1, 1.0);
    let params = vec![
        random_tensor(&mut rng, 4, 8, 0.5),
        random_tensor(&mut rng, 1, 8, 0.1),
        random_tensor(&mut rng, 16, 5, 0.3),
        random_tensor(&mut rng, 1, 5, 0.1),
        random_tensor(&mut rng, 5, 1, 0.5),
    ];
    let build = |g: &mut Graph, p: &[Var]| -> Result<Var> {
        let xv = g.constant(x.clone());
        let h = g.matmul(xv, p[0])?;
        let h = g.add(h, p[1])?;
        let h = g.leaky_relu(h, 0.01);
        let shifted = g.gather_rows(h, vec![1, 2, 3, 4, 5, 0])?;
        let h = g.concat(h, shifted)?;
        let h = g.matmul(h, p[2])?;
        let h = g.add(h, p[3])?;
        let h = g.leaky_relu(h, 0.01);
        let h = g.max_groups(h, 2)?;
        let out = g.matmul(h, p[4])?;
        let yv = g.constant(y.clone());
        let d = g.sq_diff(out, yv)?;
        Ok(g.mean(d))
    };
    check_gradients(&params, build, None, seed)
}

/// The smooth ops the losses use, composed on one small input.
fn smooth_ops_case(seed: u64) -> Result<(f64, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = vec![random_tensor(&mut rng, 4, 3, 1.0), random_tensor(&mut rng, 2, 3, 1.0)];
    let build = |g: &mut Graph, p: &[Var]| -> Result<Var> {
        let d2 = g.sq_dist(p[0], p[1])?;
        let d2 = g.add_scalar(d2, 0.5);
        let r = g.recip(d2);
        let s = g.sum_axis(r, Axis::Cols);
        let l = g.ln(s);
        let root = g.sqrt(d2);
        let prod = g.mul(root, l)?;
        let scaled = g.scale(prod, 0.7);
        let rows = g.sum_axis(scaled, Axis::Rows);
        let mixed = g.matmul(rows, p[1])?;
        let diff = g.sub(p[0], mixed)?;
        let m = g.max_axis(diff, Axis::Cols)?;
        Ok(g.sum(m))
    };
    check_gradients(&params, build, None, seed)
}

const FIBERS: usize = 3;
const PAIRS: usize = 3;

fn encoder_input(view: View, rng: &mut ChaCha8Rng) -> Result<EncoderInput> {
    match view {
        View::Geometric => {
            let fibers: Vec<Fiber> = (0..FIBERS).map(|_| random_fiber(rng)).collect();
            EncoderInput::geometric(&fibers)
        }
        View::Functional => {
            let bolds: Vec<BoldPair> = (0..FIBERS).map(|_| random_bold(rng)).collect();
            EncoderInput::functional(&bolds)
        }
    }
}

fn coords_per_tensor(view: View) -> usize {
    match view {
        View::Geometric => 8,
        View::Functional => 12,
    }
}

/// Siamese loss through one encoder.
fn siamese_case(view: View, seed: u64) -> Result<(f64, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = EncoderWeights::init(view, rng.random());
    let input = encoder_input(view, &mut rng)?;
    let (pairs, s) = random_pairs(&mut rng, FIBERS, PAIRS);
    let build = |g: &mut Graph, p: &[Var]| -> Result<Var> {
        let z = encode(g, p, &input)?;
        siamese_loss_graph(g, z, &pairs, &s)
    };
    check_gradients(weights.tensors(), build, Some(coords_per_tensor(view)), seed)
}

/// Siamese plus weighted KL through one encoder, with trainable centroids
/// appended as the last tensor.
fn finetune_case(view: View, seed: u64) -> Result<(f64, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = EncoderWeights::init(view, rng.random());
    let input = encoder_input(view, &mut rng)?;
    let (pairs, s) = random_pairs(&mut rng, FIBERS, PAIRS);
    let mu = random_tensor(&mut rng, 2, EMBED_DIM, 0.5);
    let z0 = {
        let mut g = Graph::new();
        let p = weights.attach_frozen(&mut g);
        let z = encode(&mut g, &p, &input)?;
        g.value(z).clone()
    };
    let target = target_distribution(&soft_assign(&z0, &mu)?);
    let mut params = weights.tensors().to_vec();
    params.push(mu);
    let n_enc = params.len() - 1;
    let build = |g: &mut Graph, p: &[Var]| -> Result<Var> {
        let z = encode(g, &p[..n_enc], &input)?;
        Ok(finetune_loss_graph(g, z, p[n_enc], &target, &pairs, &s, 0.1)?.total)
    };
    check_gradients(&params, build, Some(coords_per_tensor(view)), seed)
}

/// Every case on `instances` seeds starting at `base_seed`.
pub fn run_suite(instances: usize, base_seed: u64) -> Result<GradcheckReport> {
    type Case = fn(u64) -> Result<(f64, usize, usize)>;
    let cases: [(&str, Case); 6] = [
        ("mlp3", mlp3_case),
        ("smooth_ops", smooth_ops_case),
        ("geometric_siamese", |s| siamese_case(View::Geometric, s)),
        ("functional_siamese", |s| siamese_case(View::Functional, s)),
        ("geometric_finetune", |s| finetune_case(View::Geometric, s)),
        ("functional_finetune", |s| finetune_case(View::Functional, s)),
    ];
    let mut out = Vec::new();
    for (name, case) in cases {
        for i in 0..instances as u64 {
            let seed = base_seed.wrapping_add(i);
            let (err, checked, skipped) = case(seed)?;
            out.push(CaseResult {
                case: name.to_string(),
                seed,
                max_rel_err: err,
                checked,
                skipped,
            });
        }
    }
    let max_rel_err = out.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport { cases: out, max_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let p = vec![Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let (err, checked, _) = check_gradients(
            &p,
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            None,
            0,
        )
        .unwrap();
        assert_eq!(checked, 3);
        assert!(err < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // a constant copy of x hides half of d(x^2)/dx from backprop
        let p = vec![Tensor::scalar(1.5)];
        let (err, _, _) = check_gradients(
            &p,
            |g, v| {
                let c = g.constant(Tensor::scalar(g.value(v[0]).data()[0]));
                let sq = g.mul(v[0], c)?;
                Ok(g.sum(sq))
            },
            None,
            0,
        )
        .unwrap();
        assert!(err > 0.1);
    }
}
