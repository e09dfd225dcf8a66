use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{hausdorff, mdf_points};
use crate::error::{format_err, Result};
use crate::fiberdata::{Bundle, Fiber};

pub const MATRIX_MAGIC: &[u8; 4] = b"DMAT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Mdf,
    Hausdorff,
}

impl Kernel {
    pub fn eval(self, a: &Fiber, b: &Fiber) -> f64 {
        match self {
            Kernel::Mdf => mdf_points(a.points(), b.points()),
            Kernel::Hausdorff => hausdorff(a, b),
        }
    }
}

/// Dense symmetric distance matrix with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    fn from_upper(n: usize, rows: Vec<Vec<f64>>) -> Self {
        let mut data = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, d) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Mean over unordered off-diagonal pairs (0 for n < 2).
    pub fn mean_off_diagonal(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                s += self.get(i, j);
            }
        }
        s / (self.n * (self.n - 1) / 2) as f64
    }
}

fn upper_row(fibers: &[&Fiber], kernel: Kernel, i: usize) -> Vec<f64> {
    fibers[i + 1..]
        .iter()
        .map(|b| kernel.eval(fibers[i], b))
        .collect()
}

/// All-pairs distances over the upper triangle, parallel over rows. Output
/// placement is fixed by row index, so results do not depend on scheduling.
pub fn pairwise_distance(bundle: &Bundle, kernel: Kernel) -> DistanceMatrix {
    let fibers: Vec<&Fiber> = bundle.fibers().collect();
    pairwise_fibers(&fibers, kernel)
}

pub(crate) fn pairwise_fibers(fibers: &[&Fiber], kernel: Kernel) -> DistanceMatrix {
    let n = fibers.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| upper_row(fibers, kernel, i))
        .collect();
    DistanceMatrix::from_upper(n, rows)
}

pub fn pairwise_distance_serial(bundle: &Bundle, kernel: Kernel) -> DistanceMatrix {
    let fibers: Vec<&Fiber> = bundle.fibers().collect();
    let n = fibers.len();
    let rows = (0..n).map(|i| upper_row(&fibers, kernel, i)).collect();
    DistanceMatrix::from_upper(n, rows)
}

/// `"DMAT" | u32 n | upper triangle incl. diagonal, row-major f32`.
pub fn save_distance_matrix(m: &DistanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let n = m.n();
    let mut buf = Vec::with_capacity(8 + 2 * n * (n + 1));
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for i in 0..n {
        for j in i..n {
            buf.extend_from_slice(&(m.get(i, j) as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_distance_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    const KIND: &str = "distance matrix";
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MATRIX_MAGIC {
        return Err(format_err(KIND, "bad magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + 4 * n * (n + 1) / 2;
    if bytes.len() != expected {
        return Err(format_err(
            KIND,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut vals = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = vals.next().unwrap();
            if !v.is_finite() || v < 0.0 {
                return Err(format_err(KIND, format!("invalid entry at ({i}, {j})")));
            }
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiberdata::{synth_bundle, SynthConfig};

    #[test]
    fn single_fiber_gives_zero_matrix() {
        let cfg = SynthConfig {
            n_fibers: 1,
            ..SynthConfig::default()
        };
        let b = synth_bundle(&cfg, 1).unwrap();
        let m = pairwise_distance(&b, Kernel::Mdf);
        assert_eq!(m.n(), 1);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let cfg = SynthConfig {
            n_fibers: 60,
            ..SynthConfig::reference()
        };
        let b = synth_bundle(&cfg, 8).unwrap();
        for k in [Kernel::Mdf, Kernel::Hausdorff] {
            assert_eq!(pairwise_distance(&b, k), pairwise_distance_serial(&b, k));
        }
    }

    #[test]
    fn file_round_trip_at_f32_precision() {
        let cfg = SynthConfig {
            n_fibers: 9,
            ..SynthConfig::default()
        };
        let b = synth_bundle(&cfg, 2).unwrap();
        let m = pairwise_distance(&b, Kernel::Mdf);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dmat");
        save_distance_matrix(&m, &p).unwrap();
        let back = load_distance_matrix(&p).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(back.get(i, j), m.get(i, j) as f32 as f64);
            }
        }
    }
}
