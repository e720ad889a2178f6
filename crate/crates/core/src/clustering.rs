//! ε selection, DBSCAN over a precomputed distance matrix, and the
//! outlier-free pseudo-labeled set.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::map_rows;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// Mean of the P globally smallest upper-triangle entries.
    GlobalSmallest,
    /// Mean of the P smallest per-point nearest-neighbor distances.
    PerPointMinimum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanConfig {
    pub ms: usize,
    /// P as a fraction of the N(N-1)/2 upper-triangle entries.
    pub p_fraction: f64,
    /// Absolute P; takes precedence over `p_fraction` when set.
    pub p_count: Option<usize>,
    pub epsilon_rule: EpsilonRule,
    pub epsilon_override: Option<f64>,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            ms: 4,
            p_fraction: 0.02,
            p_count: None,
            epsilon_rule: EpsilonRule::GlobalSmallest,
            epsilon_override: None,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ms == 0 {
            return Err(Error::Config("dbscan.ms must be >= 1".into()));
        }
        if self.p_count == Some(0) {
            return Err(Error::Config("dbscan.p_count must be >= 1".into()));
        }
        if !(self.p_fraction > 0.0 && self.p_fraction <= 1.0) {
            return Err(Error::Config("dbscan.p_fraction must be in (0, 1]".into()));
        }
        if let Some(e) = self.epsilon_override {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config("dbscan.epsilon_override must be > 0".into()));
            }
        }
        Ok(())
    }

    /// P for a dataset of `n` points, at least 1 and at most the number of pairs.
    pub fn resolve_p(&self, n: usize) -> usize {
        let pairs = n * n.saturating_sub(1) / 2;
        let p = match self.p_count {
            Some(p) => p,
            None => (self.p_fraction * pairs as f64).floor() as usize,
        };
        p.clamp(1, pairs.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonChoice {
    pub value: f64,
    /// Every off-diagonal distance is zero.
    pub degenerate: bool,
}

fn check_square(j: &ArrayView2<f64>) -> Result<usize> {
    let n = j.nrows();
    if j.ncols() != n {
        return Err(Error::Contract("distance matrix is not square".into()));
    }
    Ok(n)
}

fn mean_of_smallest(mut values: Vec<f64>, p: usize) -> f64 {
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    if p < values.len() {
        values.select_nth_unstable_by(p, cmp);
        values.truncate(p);
    }
    values.sort_unstable_by(cmp);
    // Rounding can push the mean of equal values just below all of them,
    // which would leave every pair outside ε.
    (values.iter().sum::<f64>() / p as f64).clamp(values[0], values[p - 1])
}

/// Mean of the P smallest strictly-upper-triangle entries.
pub fn select_epsilon(j: ArrayView2<f64>, p: usize) -> Result<EpsilonChoice> {
    let n = check_square(&j)?;
    if n < 2 {
        return Err(Error::Contract("select_epsilon needs at least 2 points".into()));
    }
    let pairs = n * (n - 1) / 2;
    if p == 0 || p > pairs {
        return Err(Error::Contract(format!("P={p} outside 1..={pairs}")));
    }
    let mut upper = Vec::with_capacity(pairs);
    for i in 0..n {
        for k in i + 1..n {
            upper.push(j[[i, k]]);
        }
    }
    let degenerate = upper.iter().all(|&v| v == 0.0);
    if degenerate {
        return Ok(EpsilonChoice {
            value: 0.0,
            degenerate,
        });
    }
    Ok(EpsilonChoice {
        value: mean_of_smallest(upper, p),
        degenerate,
    })
}

/// Mean of the P smallest per-point nearest-neighbor distances (P clamped to N).
pub fn select_epsilon_per_point(j: ArrayView2<f64>, p: usize) -> Result<EpsilonChoice> {
    let n = check_square(&j)?;
    if n < 2 {
        return Err(Error::Contract("select_epsilon needs at least 2 points".into()));
    }
    if p == 0 {
        return Err(Error::Contract("P must be positive".into()));
    }
    let minima: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| k != i)
                .map(|k| j[[i, k]])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let degenerate = j.iter().all(|&v| v == 0.0);
    if degenerate {
        return Ok(EpsilonChoice {
            value: 0.0,
            degenerate,
        });
    }
    Ok(EpsilonChoice {
        value: mean_of_smallest(minima, p.min(n)),
        degenerate,
    })
}

pub fn choose_epsilon(j: ArrayView2<f64>, config: &DbscanConfig) -> Result<EpsilonChoice> {
    let p = config.resolve_p(j.nrows());
    match config.epsilon_rule {
        EpsilonRule::GlobalSmallest => select_epsilon(j, p),
        EpsilonRule::PerPointMinimum => select_epsilon_per_point(j, p),
    }
}

/// DBSCAN over precomputed distances. A core point has at least `ms` points
/// (itself included) within distance `<= epsilon`. Clusters are grown from
/// unlabeled core points in ascending index order, breadth first; a border
/// point joins the first cluster that reaches it. `None` marks noise.
pub fn dbscan_fit(j: ArrayView2<f64>, epsilon: f64, ms: usize) -> Result<Vec<Option<usize>>> {
    let n = check_square(&j)?;
    let neighbors: Vec<Vec<usize>> = map_rows(n, |i| {
        let row = j.row(i);
        (0..n).filter(|&k| k == i || row[k] <= epsilon).collect()
    });
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= ms).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if labels[seed].is_some() || !core[seed] {
            continue;
        }
        labels[seed] = Some(next);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoLabeledSet {
    /// Dataset indices that survived, ascending.
    pub kept_indices: Vec<usize>,
    /// Pseudo-label of each kept index.
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    pub outlier_indices: Vec<usize>,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }

    /// Dataset indices grouped by pseudo-label.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clusters];
        for (&i, &l) in self.kept_indices.iter().zip(&self.labels) {
            m[l].push(i);
        }
        m
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_clusters];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Label per dataset index for a dataset of `n` points.
    pub fn dense_labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (&i, &l) in self.kept_indices.iter().zip(&self.labels) {
            out[i] = Some(l);
        }
        out
    }
}

/// Strip noise and compact labels to 0..C-1 in order of first appearance.
pub fn build_pseudo_labeled_set(raw: &[Option<usize>]) -> Result<PseudoLabeledSet> {
    let mut remap: Vec<Option<usize>> = Vec::new();
    let mut kept_indices = Vec::new();
    let mut labels = Vec::new();
    let mut outlier_indices = Vec::new();
    let mut next = 0;
    for (i, r) in raw.iter().enumerate() {
        match *r {
            None => outlier_indices.push(i),
            Some(c) => {
                if c >= remap.len() {
                    remap.resize(c + 1, None);
                }
                let l = *remap[c].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                });
                kept_indices.push(i);
                labels.push(l);
            }
        }
    }
    if next == 0 {
        return Err(Error::EmptyClustering);
    }
    Ok(PseudoLabeledSet {
        kept_indices,
        labels,
        num_clusters: next,
        outlier_indices,
    })
}

/// CSV with columns index,pseudo_label,round; outliers carry -1. With no
/// clustering every point is written as an outlier.
pub fn pseudo_label_csv(n: usize, pl: Option<&PseudoLabeledSet>, round: usize) -> String {
    let dense = pl.map(|p| p.dense_labels(n)).unwrap_or_else(|| vec![None; n]);
    let mut s = String::with_capacity(16 * (n + 1));
    s.push_str("index,pseudo_label,round\n");
    for (i, l) in dense.iter().enumerate() {
        match l {
            Some(l) => writeln!(s, "{i},{l},{round}").unwrap(),
            None => writeln!(s, "{i},-1,{round}").unwrap(),
        }
    }
    s
}

pub fn write_pseudo_labels(
    path: &Path,
    n: usize,
    pl: Option<&PseudoLabeledSet>,
    round: usize,
) -> Result<()> {
    std::fs::write(path, pseudo_label_csv(n, pl, round))?;
    Ok(())
}
