//! NMI against ground truth, nearest-prototype few-shot accuracy, and the
//! per-round metrics record.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::PseudoLabeledSet;
use crate::error::{Error, Result};
use crate::losses::sq_dist;
use crate::nn::{embed, ModelParams};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    -compensated_sum(counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        p * p.ln()
    }))
}

/// I(a, b) / sqrt(H(a) H(b)) with natural logs. When an entropy is zero the
/// result is 1 for identical partitions and 0 otherwise.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "label lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Input("empty labeling".into()));
    }
    let n = a.len() as f64;
    let (ca, ka) = compact(a);
    let (cb, kb) = compact(b);
    let mut table = vec![0usize; ka * kb];
    let mut ra = vec![0usize; ka];
    let mut rb = vec![0usize; kb];
    for (&x, &y) in ca.iter().zip(&cb) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let ha = entropy(&ra, n);
    let hb = entropy(&rb, n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 });
    }
    let mi = compensated_sum(table.iter().enumerate().filter(|(_, &c)| c > 0).map(|(idx, &c)| {
        let (x, y) = (idx / kb, idx % kb);
        let p = c as f64 / n;
        p * (c as f64 * n / (ra[x] as f64 * rb[y] as f64)).ln()
    }));
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            way: 5,
            shot: 1,
            queries: 15,
            episodes: 600,
            seed: 7,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.shot == 0 || self.queries == 0 || self.episodes == 0 {
            return Err(Error::Config(
                "eval needs way >= 2 and positive shot, queries and episodes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

pub fn few_shot_accuracy<R: Rng + ?Sized>(
    params: &ModelParams,
    features: ArrayView2<f64>,
    labels: &[usize],
    protocol: &EvalProtocol,
    rng: &mut R,
) -> Result<Accuracy> {
    let emb = embed(params, features)?;
    few_shot_accuracy_on_embeddings(emb.view(), labels, protocol, rng)
}

/// Nearest-prototype classification over random way/shot episodes.
pub fn few_shot_accuracy_on_embeddings<R: Rng + ?Sized>(
    emb: ArrayView2<f64>,
    labels: &[usize],
    protocol: &EvalProtocol,
    rng: &mut R,
) -> Result<Accuracy> {
    if emb.nrows() != labels.len() {
        return Err(Error::Input("labels and features differ in length".into()));
    }
    let per_class = protocol.shot + protocol.queries;
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    {
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &l) in labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        by_class.extend(map);
        by_class.sort_unstable_by_key(|(l, _)| *l);
        by_class.retain(|(_, m)| m.len() >= per_class);
    }
    if by_class.len() < protocol.way {
        return Err(Error::ProtocolInfeasible(format!(
            "{} classes with >= {per_class} examples, {}-way needed",
            by_class.len(),
            protocol.way
        )));
    }
    let dim = emb.ncols();
    let mut scores = Vec::with_capacity(protocol.episodes);
    for _ in 0..protocol.episodes {
        let classes = index::sample(rng, by_class.len(), protocol.way);
        let mut protos = Array2::<f64>::zeros((protocol.way, dim));
        let mut queries: Vec<(usize, usize)> = Vec::with_capacity(protocol.way * protocol.queries);
        for (pos, c) in classes.iter().enumerate() {
            let members = &by_class[c].1;
            let picks = index::sample(rng, members.len(), per_class);
            let mut row = protos.row_mut(pos);
            for s in picks.iter().take(protocol.shot) {
                row += &emb.row(members[s]);
            }
            row /= protocol.shot as f64;
            queries.extend(picks.iter().skip(protocol.shot).map(|q| (members[q], pos)));
        }
        let correct = queries
            .iter()
            .filter(|&&(q, truth)| {
                let z = emb.row(q);
                let mut best = (f64::INFINITY, 0);
                for (k, p) in protos.rows().into_iter().enumerate() {
                    let d = sq_dist(z, p);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1 == truth
            })
            .count();
        scores.push(correct as f64 / queries.len() as f64);
    }
    let n = scores.len() as f64;
    let mean = compensated_sum(scores.iter().copied()) / n;
    let var = compensated_sum(scores.iter().map(|s| (s - mean) * (s - mean))) / n;
    Ok(Accuracy {
        mean,
        std: var.sqrt(),
        episodes: scores.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterStats {
    pub num_clusters: usize,
    pub num_outliers: usize,
    pub mean_cluster_size: f64,
    /// Over kept indices; absent when nothing was clustered.
    pub nmi: Option<f64>,
}

pub fn cluster_stats(pl: Option<&PseudoLabeledSet>, truth: &[usize]) -> Result<ClusterStats> {
    let Some(pl) = pl else {
        return Ok(ClusterStats {
            num_clusters: 0,
            num_outliers: truth.len(),
            mean_cluster_size: 0.0,
            nmi: None,
        });
    };
    if pl.kept_indices.iter().chain(&pl.outlier_indices).any(|&i| i >= truth.len()) {
        return Err(Error::Input("pseudo-labeled index beyond ground truth".into()));
    }
    let kept_truth: Vec<usize> = pl.kept_indices.iter().map(|&i| truth[i]).collect();
    Ok(ClusterStats {
        num_clusters: pl.num_clusters,
        num_outliers: pl.outlier_indices.len(),
        mean_cluster_size: pl.len() as f64 / pl.num_clusters as f64,
        nmi: Some(nmi(&kept_truth, &pl.labels)?),
    })
}

/// Which fallback rung produced the round's clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fallback {
    None,
    /// ε multiplied by 1.5 this many times.
    WidenEpsilon(u32),
    /// ε at its widest and ms lowered to this value.
    ShrinkMs(usize),
    /// Ladder exhausted; no clustering this round.
    Failed,
}

impl Fallback {
    pub fn label(&self) -> String {
        match self {
            Fallback::None => "none".into(),
            Fallback::WidenEpsilon(n) => format!("widen_eps_{n}"),
            Fallback::ShrinkMs(ms) => format!("ms_{ms}"),
            Fallback::Failed => "failed".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Fallback::None),
            "failed" => Some(Fallback::Failed),
            _ => {
                if let Some(n) = s.strip_prefix("widen_eps_") {
                    n.parse().ok().map(Fallback::WidenEpsilon)
                } else {
                    s.strip_prefix("ms_")?.parse().ok().map(Fallback::ShrinkMs)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    /// ε used for the final clustering attempt.
    pub epsilon: f64,
    pub fallback: Fallback,
    pub num_clusters: usize,
    pub num_outliers: usize,
    pub mean_cluster_size: f64,
    pub nmi: Option<f64>,
    /// Training way after any reduction; 0 when training was skipped.
    pub way: usize,
    pub episodes: usize,
    pub mean_loss: Option<f64>,
    /// Held-out accuracy of the model at the end of the round.
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
}
