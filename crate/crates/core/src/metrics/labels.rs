use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{format_err, Error, Result};

/// Hard cluster assignment of N fibers into `k` clusters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Config(format!("label {bad} out of range for k = {k}")));
        }
        Ok(Self { labels, k })
    }

    /// Infers `k` as one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self { labels, k }
    }

    /// Truth labels as stored on records (non-negative integers).
    pub fn from_truth(truth: &[i32]) -> Result<Self> {
        let labels = truth
            .iter()
            .map(|&l| usize::try_from(l).map_err(|_| Error::Config(format!("negative label {l}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_labels(labels))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices for every cluster id in `0..k`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn n_nonempty(&self) -> usize {
        self.members().iter().filter(|m| !m.is_empty()).count()
    }
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "labelings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    let mut rows = vec![0usize; ka];
    let mut cols = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let index: f64 = table.iter().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| comb2(c)).sum();
    let total = comb2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        // both partitions trivial (all singletons or one cluster)
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max_index - expected))
}

/// CSV with header `fiber_index,label`, preceded by optional `#` comment lines.
pub fn save_labels(labels: &ClusterLabels, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("fiber_index,label\n");
    for (i, l) in labels.labels().iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<ClusterLabels> {
    const KIND: &str = "labels";
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some("fiber_index,label") {
        return Err(format_err(KIND, "missing `fiber_index,label` header"));
    }
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| format_err(KIND, format!("row {row}: expected two columns")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| format_err(KIND, format!("row {row}: bad index")))?;
        if idx != row {
            return Err(format_err(KIND, format!("row {row}: index {idx} out of order")));
        }
        labels.push(
            label
                .parse()
                .map_err(|_| format_err(KIND, format!("row {row}: bad label")))?,
        );
    }
    Ok(ClusterLabels::from_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_identity_and_permutation() {
        let a = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let perm: Vec<usize> = a.iter().map(|&l| (l + 1) % 3).collect();
        assert!((adjusted_rand_index(&a, &perm).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_contingency_example() {
        // cells {2,1,2,1,2}: index 3; row/col pair sums 7 and 7 over C(8,2) = 28
        // expected 1.75, max 7 -> (3 - 1.75) / (7 - 1.75) = 5/21
        let a = [0, 0, 0, 1, 1, 1, 2, 2];
        let b = [0, 0, 1, 1, 1, 2, 2, 2];
        assert!((adjusted_rand_index(&a, &b).unwrap() - 5.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn ari_length_mismatch() {
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let l = ClusterLabels::new(vec![2, 0, 1, 1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        save_labels(&l, &p, Some("header")).unwrap();
        assert_eq!(load_labels(&p).unwrap(), l);
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(ClusterLabels::new(vec![0, 3], 3).is_err());
    }
}
