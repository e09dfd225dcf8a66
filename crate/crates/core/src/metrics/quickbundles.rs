use super::{direct_flip_sums, ClusterLabels};
use crate::error::{Error, Result};
use crate::fiberdata::{Bundle, Point3};

struct Centroid {
    sum: Vec<Point3>,
    count: usize,
    mean: Vec<Point3>,
}

impl Centroid {
    fn seed(points: &[Point3]) -> Self {
        Self {
            sum: points.to_vec(),
            count: 1,
            mean: points.to_vec(),
        }
    }

    fn absorb(&mut self, points: &[Point3], flipped: bool) {
        let n = points.len();
        for (i, s) in self.sum.iter_mut().enumerate() {
            let p = if flipped { points[n - 1 - i] } else { points[i] };
            for k in 0..3 {
                s[k] += p[k];
            }
        }
        self.count += 1;
        let c = self.count as f64;
        for (m, s) in self.mean.iter_mut().zip(&self.sum) {
            *m = [s[0] / c, s[1] / c, s[2] / c];
        }
    }
}

/// Single-pass QuickBundles in record order. A fiber joins the cluster
/// whose running (flip-aligned) mean is nearest by MDF when that distance
/// is within `threshold` mm, otherwise it starts a new cluster.
pub fn quickbundles(bundle: &Bundle, threshold: f64) -> Result<ClusterLabels> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let mut centroids: Vec<Centroid> = Vec::new();
    let mut labels = Vec::with_capacity(bundle.len());
    let n_p = bundle.n_points() as f64;
    for fiber in bundle.fibers() {
        let pts = fiber.points();
        let mut best: Option<(usize, f64, bool)> = None;
        for (c, centroid) in centroids.iter().enumerate() {
            let (direct, flipped) = direct_flip_sums(pts, &centroid.mean);
            let (d, flip) = if flipped < direct {
                (flipped / n_p, true)
            } else {
                (direct / n_p, false)
            };
            if best.is_none_or(|(_, bd, _)| d < bd) {
                best = Some((c, d, flip));
            }
        }
        match best {
            Some((c, d, flip)) if d <= threshold => {
                centroids[c].absorb(pts, flip);
                labels.push(c);
            }
            _ => {
                labels.push(centroids.len());
                centroids.push(Centroid::seed(pts));
            }
        }
    }
    ClusterLabels::new(labels, centroids.len())
}
