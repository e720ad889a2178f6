//! Independent reference implementations used only by tests. They favour
//! directness over speed and share no code with the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// N(z_i, k): sort every other point by (distance, index), keep k.
pub fn knn_oracle(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&points[i], &points[j]), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// R(z_i, k) by direct enumeration of the mutual-neighbor condition.
pub fn reciprocal_oracle(knn: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    (0..knn.len())
        .map(|i| {
            knn[i]
                .iter()
                .copied()
                .filter(|&j| knn[j].iter().any(|&x| x == i))
                .collect()
        })
        .collect()
}

pub fn jaccard_oracle(sets: &[BTreeSet<usize>]) -> Vec<Vec<f64>> {
    let n = sets.len();
    let mut j = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let inter = sets[a].intersection(&sets[b]).count();
            let union = sets[a].union(&sets[b]).count();
            j[a][b] = if union == 0 {
                1.0
            } else {
                1.0 - inter as f64 / union as f64
            };
        }
    }
    j
}

pub fn krjd_oracle(points: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    jaccard_oracle(&reciprocal_oracle(&knn_oracle(points, k)))
}

const UNCLASSIFIED: i64 = -2;
const NOISE: i64 = -1;

fn region_query(d: &[Vec<f64>], p: usize, eps: f64) -> Vec<usize> {
    (0..d.len()).filter(|&q| d[p][q] <= eps || q == p).collect()
}

/// Textbook DBSCAN with a fresh region query for every expansion step.
/// Returns -1 for noise.
pub fn dbscan_oracle(d: &[Vec<f64>], eps: f64, ms: usize) -> Vec<i64> {
    let n = d.len();
    let mut label = vec![UNCLASSIFIED; n];
    let mut cid = 0i64;
    for p in 0..n {
        if label[p] != UNCLASSIFIED {
            continue;
        }
        let seeds0 = region_query(d, p, eps);
        if seeds0.len() < ms {
            label[p] = NOISE;
            continue;
        }
        let mut seeds: Vec<usize> = Vec::new();
        label[p] = cid;
        for &q in &seeds0 {
            // A border point already claimed by an earlier cluster keeps it.
            if label[q] == UNCLASSIFIED || label[q] == NOISE {
                if label[q] == UNCLASSIFIED {
                    seeds.push(q);
                }
                label[q] = cid;
            }
        }
        let mut idx = 0;
        while idx < seeds.len() {
            let current = seeds[idx];
            let result = region_query(d, current, eps);
            if result.len() >= ms {
                for &r in &result {
                    if label[r] == UNCLASSIFIED || label[r] == NOISE {
                        if label[r] == UNCLASSIFIED {
                            seeds.push(r);
                        }
                        label[r] = cid;
                    }
                }
            }
            idx += 1;
        }
        cid += 1;
    }
    label
}

/// Pairwise "same cluster" matrix; noise points are in no cluster.
pub fn co_membership(labels: &[i64]) -> Vec<Vec<bool>> {
    let n = labels.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| labels[i] >= 0 && labels[i] == labels[j])
                .collect()
        })
        .collect()
}

/// NMI by summing p_ij ln(p_ij / (p_i p_j)) over a contingency table.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cab: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for i in 0..a.len() {
        *ca.entry(a[i]).or_default() += 1;
        *cb.entry(b[i]).or_default() += 1;
        *cab.entry((a[i], b[i])).or_default() += 1;
    }
    let h = |m: &BTreeMap<usize, usize>| {
        -m.values()
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let (ha, hb) = (h(&ca), h(&cb));
    if ha == 0.0 || hb == 0.0 {
        return if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 };
    }
    let mut i = 0.0;
    for (&(x, y), &c) in &cab {
        let p = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        i += p * (p / (px * py)).ln();
    }
    i / (ha * hb).sqrt()
}

/// Dense MLP forward with explicit loops. `weights[l][o][i]`.
pub fn mlp_forward_oracle(
    weights: &[Vec<Vec<f64>>],
    biases: &[Vec<f64>],
    relu_hidden: bool,
    x: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut cur: Vec<Vec<f64>> = x.to_vec();
    for l in 0..weights.len() {
        let mut next = Vec::new();
        for row in &cur {
            let mut out = Vec::new();
            for o in 0..weights[l].len() {
                let mut s = biases[l][o];
                for i in 0..row.len() {
                    s += weights[l][o][i] * row[i];
                }
                if l + 1 < weights.len() && relu_hidden && s < 0.0 {
                    s = 0.0;
                }
                out.push(s);
            }
            next.push(out);
        }
        cur = next;
    }
    cur
}

/// Textbook Adam on a flat parameter vector.
pub struct AdamOracle {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl AdamOracle {
    pub fn new(n: usize) -> Self {
        AdamOracle {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Nearest-centroid accuracy on explicit episodes: each episode is a list of
/// (support rows per class, query rows per class).
pub fn nearest_centroid_oracle(emb: &[Vec<f64>], episodes: &[(Vec<Vec<usize>>, Vec<Vec<usize>>)]) -> f64 {
    let mut total = 0.0;
    for (support, query) in episodes {
        let dim = emb[0].len();
        let centroids: Vec<Vec<f64>> = support
            .iter()
            .map(|rows| {
                let mut c = vec![0.0; dim];
                for &r in rows {
                    for d in 0..dim {
                        c[d] += emb[r][d];
                    }
                }
                c.iter().map(|v| v / rows.len() as f64).collect()
            })
            .collect();
        let mut correct = 0;
        let mut count = 0;
        for (truth, rows) in query.iter().enumerate() {
            for &q in rows {
                let mut best = 0;
                for k in 1..centroids.len() {
                    if sq_dist(&emb[q], &centroids[k]) < sq_dist(&emb[q], &centroids[best]) {
                        best = k;
                    }
                }
                correct += (best == truth) as usize;
                count += 1;
            }
        }
        total += correct as f64 / count as f64;
    }
    total / episodes.len() as f64
}

/// Mean of the P smallest upper-triangle entries via a full sort.
pub fn epsilon_oracle(j: &[Vec<f64>], p: usize) -> f64 {
    let mut v = Vec::new();
    for a in 0..j.len() {
        for b in a + 1..j.len() {
            v.push(j[a][b]);
        }
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[..p].iter().sum::<f64>() / p as f64
}

/// ln(1 + e^x) from a series that never forms e^x for large x: for x > 0,
/// x + Σ_{n≥1} (-1)^{n+1} e^{-nx} / n; for x ≤ 0 the same series in e^{x}.
/// Terms are summed smallest-first until they fall below 1e-30, so the
/// result is accurate to a few ulps of f64.
pub fn softplus_oracle(x: f64) -> f64 {
    let (base, r) = if x > 0.0 { (x, (-x).exp()) } else { (0.0, x.exp()) };
    if r > 0.5 {
        // Slow series convergence near x = 0; use the closed form on the
        // exactly representable argument instead.
        return base + (1.0 + r).ln();
    }
    let mut terms = Vec::new();
    let mut pow = r;
    let mut n = 1.0;
    while pow / n > 1e-30 {
        let sign = if (n as i64) % 2 == 1 { 1.0 } else { -1.0 };
        terms.push(sign * pow / n);
        pow *= r;
        n += 1.0;
    }
    let tail: f64 = terms.iter().rev().sum();
    base + tail
}
