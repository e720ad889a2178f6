//! Pairwise distances, k-nearest-neighbor lists, k-reciprocal sets and the
//! k-reciprocal Jaccard distance (KRJD).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::par::map_rows;

/// Squared Euclidean distances between all rows. Each entry is summed in the
/// same coordinate order so the result is exactly symmetric.
pub fn pairwise_sq_euclidean(emb: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = emb.nrows();
    if n == 0 {
        return Err(Error::Input("no points".into()));
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite embedding".into()));
    }
    let rows = map_rows(n, |i| {
        let a = emb.row(i);
        (0..n)
            .map(|j| {
                if i == j {
                    return 0.0;
                }
                a.iter()
                    .zip(emb.row(j).iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect()
    });
    Ok(from_rows(n, rows))
}

fn from_rows(n: usize, rows: Vec<Vec<f64>>) -> Array2<f64> {
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, n), flat).expect("square")
}

/// Per-point neighbor lists ordered by ascending distance, ties by index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnSets {
    pub k: usize,
    pub requested_k: usize,
    pub lists: Vec<Vec<usize>>,
}

impl KnnSets {
    /// True when `k` had to be clamped to N - 1.
    pub fn clamped(&self) -> bool {
        self.k != self.requested_k
    }
}

pub fn knn_sets(dist: ArrayView2<f64>, k: usize) -> Result<KnnSets> {
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::Contract("distance matrix is not square".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let k_used = k.min(n.saturating_sub(1));
    let lists = (0..n)
        .map(|i| {
            let row = dist.row(i);
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (row[j], j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k_used < cand.len() {
                cand.select_nth_unstable_by(k_used, cmp);
                cand.truncate(k_used);
            }
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(KnnSets {
        k: k_used,
        requested_k: k,
        lists,
    })
}

/// R(z_i, k): neighbors of i that also list i among their k nearest.
/// Each set is sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReciprocalSets {
    pub k: usize,
    pub sets: Vec<Vec<usize>>,
}

pub fn k_reciprocal_sets(knn: &KnnSets) -> ReciprocalSets {
    let sets = knn
        .lists
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let mut r: Vec<usize> = list
                .iter()
                .copied()
                .filter(|&j| knn.lists[j].contains(&i))
                .collect();
            r.sort_unstable();
            r
        })
        .collect();
    ReciprocalSets { k: knn.k, sets }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JaccardMatrix {
    pub values: Array2<f64>,
    pub k_used: usize,
}

impl JaccardMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// J_ij = 1 - |R_i ∩ R_j| / |R_i ∪ R_j|. Two empty sets give 1 off the
/// diagonal; the diagonal is always 0.
pub fn jaccard_matrix(rec: &ReciprocalSets) -> JaccardMatrix {
    let n = rec.sets.len();
    let sets = &rec.sets;
    let rows = map_rows(n, |i| {
        // |R_i ∩ R_l| = #{m ∈ R_i : l ∈ R_m}, and R is symmetric so the
        // sets themselves serve as the inverted index.
        let mut shared = vec![0u32; n];
        for &m in &sets[i] {
            for &l in &sets[m] {
                shared[l] += 1;
            }
        }
        let size_i = sets[i].len();
        (0..n)
            .map(|l| {
                if l == i {
                    0.0
                } else if shared[l] == 0 {
                    1.0
                } else {
                    let inter = shared[l] as usize;
                    let union = size_i + sets[l].len() - inter;
                    1.0 - inter as f64 / union as f64
                }
            })
            .collect()
    });
    JaccardMatrix {
        values: from_rows(n, rows),
        k_used: rec.k,
    }
}

/// Full KRJD pipeline from embeddings.
pub fn krjd(emb: ArrayView2<f64>, k: usize) -> Result<(JaccardMatrix, KnnSets)> {
    let dist = pairwise_sq_euclidean(emb)?;
    let knn = knn_sets(dist.view(), k)?;
    let rec = k_reciprocal_sets(&knn);
    Ok((jaccard_matrix(&rec), knn))
}

const JACCARD_MAGIC: &[u8; 4] = b"KRJD";

/// Dump as magic, N and k (u32 LE), then row-major f64 LE values.
pub fn write_jaccard(path: &Path, j: &JaccardMatrix) -> Result<()> {
    let n = j.len();
    let mut buf = Vec::with_capacity(12 + 8 * n * n);
    buf.extend_from_slice(JACCARD_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(j.k_used as u32).to_le_bytes());
    for v in j.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_jaccard(path: &Path) -> Result<JaccardMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != JACCARD_MAGIC {
        return Err(Error::Format("not a KRJD dump".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + 8 * n * n {
        return Err(Error::Format(format!(
            "expected {} bytes for N={n}, found {}",
            12 + 8 * n * n,
            bytes.len()
        )));
    }
    let vals = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(JaccardMatrix {
        values: Array2::from_shape_vec((n, n), vals).expect("sized"),
        k_used: k,
    })
}
