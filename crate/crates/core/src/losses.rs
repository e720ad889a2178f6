//! Episode objectives: prototype loss, triplet hinge, soft-margin triplet,
//! and batch-hard triplet mining inside an episode.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::EpisodicTask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Prototype,
    /// Random triplets with the hinge.
    Triplet,
    /// Random triplets with the soft margin.
    SoftMarginTriplet,
    /// Batch-hard triplets; margin form set by `LossConfig::hard_margin`.
    HardTriplet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    Hinge,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin: f64,
    pub hard_margin: MarginKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::HardTriplet,
            margin: 0.5,
            hard_margin: MarginKind::Hinge,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("loss.margin must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn hinge(pre: f64) -> f64 {
    pre.max(0.0)
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MarginKind {
    pub fn value(self, pre: f64) -> f64 {
        match self {
            MarginKind::Hinge => hinge(pre),
            MarginKind::Soft => softplus(pre),
        }
    }

    /// Derivative w.r.t. the pre-activation; the hinge kink takes 0.
    pub fn slope(self, pre: f64) -> f64 {
        match self {
            MarginKind::Hinge => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            MarginKind::Soft => sigmoid(pre),
        }
    }
}

/// Loss value and gradients for one triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub pre_activation: f64,
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
}

fn single_triplet(
    a: ArrayView1<f64>,
    p: ArrayView1<f64>,
    n: ArrayView1<f64>,
    margin: f64,
    kind: MarginKind,
) -> TripletGrad {
    let pre = sq_dist(a, p) - sq_dist(a, n) + margin;
    let s = kind.slope(pre);
    let ga = (&n - &p) * (2.0 * s);
    let gp = (&p - &a) * (2.0 * s);
    let gn = (&a - &n) * (2.0 * s);
    TripletGrad {
        loss: kind.value(pre),
        pre_activation: pre,
        anchor: ga,
        positive: gp,
        negative: gn,
    }
}

/// max(0, ‖a−p‖² − ‖a−n‖² + m).
pub fn triplet_hinge_loss(
    a: ArrayView1<f64>,
    p: ArrayView1<f64>,
    n: ArrayView1<f64>,
    margin: f64,
) -> TripletGrad {
    single_triplet(a, p, n, margin, MarginKind::Hinge)
}

/// ln(1 + exp(‖a−p‖² − ‖a−n‖² + m)).
pub fn triplet_soft_margin_loss(
    a: ArrayView1<f64>,
    p: ArrayView1<f64>,
    n: ArrayView1<f64>,
    margin: f64,
) -> TripletGrad {
    single_triplet(a, p, n, margin, MarginKind::Soft)
}

/// Row indices into an episode batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mean triplet loss over a batch and its gradient w.r.t. every row.
pub fn triplet_batch_loss(
    emb: ArrayView2<f64>,
    triplets: &[Triplet],
    margin: f64,
    kind: MarginKind,
) -> Result<(f64, Array2<f64>)> {
    if triplets.is_empty() {
        return Err(Error::Contract("no triplets".into()));
    }
    let mut grad = Array2::zeros(emb.raw_dim());
    let mut total = 0.0;
    let scale = 1.0 / triplets.len() as f64;
    for t in triplets {
        let g = single_triplet(
            emb.row(t.anchor),
            emb.row(t.positive),
            emb.row(t.negative),
            margin,
            kind,
        );
        total += g.loss;
        grad.row_mut(t.anchor).scaled_add(scale, &g.anchor);
        grad.row_mut(t.positive).scaled_add(scale, &g.positive);
        grad.row_mut(t.negative).scaled_add(scale, &g.negative);
    }
    Ok((total * scale, grad))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mining {
    pub triplets: Vec<Triplet>,
    /// Anchors with no valid positive or negative.
    pub skipped: Vec<usize>,
}

fn batch_distances(emb: ArrayView2<f64>) -> Array2<f64> {
    let n = emb.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(emb.row(i), emb.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Batch-hard rule: farthest same-label row as positive, nearest
/// other-label row as negative, ties to the lower index.
pub fn mine_hard_triplets(emb: ArrayView2<f64>, labels: &[usize]) -> Result<Mining> {
    if emb.nrows() != labels.len() {
        return Err(Error::Contract("labels and embeddings differ in length".into()));
    }
    let d = batch_distances(emb);
    let mut out = Mining::default();
    for a in 0..labels.len() {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..labels.len() {
            if j == a {
                continue;
            }
            let dj = d[[a, j]];
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| dj > best) {
                    pos = Some((j, dj));
                }
            } else if neg.is_none_or(|(_, best)| dj < best) {
                neg = Some((j, dj));
            }
        }
        match (pos, neg) {
            (Some((p, _)), Some((n, _))) => out.triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative: n,
            }),
            _ => out.skipped.push(a),
        }
    }
    Ok(out)
}

/// One triplet per anchor with a uniformly drawn positive and negative.
pub fn random_triplets<R: Rng + ?Sized>(labels: &[usize], rng: &mut R) -> Mining {
    let mut out = Mining::default();
    for a in 0..labels.len() {
        let pos: Vec<usize> = (0..labels.len())
            .filter(|&j| j != a && labels[j] == labels[a])
            .collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != labels[a]).collect();
        if pos.is_empty() || neg.is_empty() {
            out.skipped.push(a);
            continue;
        }
        let p = pos[rng.random_range(0..pos.len())];
        let n = neg[rng.random_range(0..neg.len())];
        out.triplets.push(Triplet {
            anchor: a,
            positive: p,
            negative: n,
        });
    }
    out
}

fn prototypes(emb: ArrayView2<f64>, support: &[Vec<usize>]) -> Array2<f64> {
    let mut c = Array2::zeros((support.len(), emb.ncols()));
    for (k, rows) in support.iter().enumerate() {
        let mut row = c.row_mut(k);
        for &r in rows {
            row += &emb.row(r);
        }
        row /= rows.len() as f64;
    }
    c
}

fn check_prototype_inputs(
    emb: ArrayView2<f64>,
    support: &[Vec<usize>],
    query: &[Vec<usize>],
) -> Result<()> {
    if support.len() < 2 {
        return Err(Error::Contract("prototype loss needs at least 2 classes".into()));
    }
    if query.len() > support.len() {
        return Err(Error::Contract("query class absent from support".into()));
    }
    if support.iter().any(Vec::is_empty) {
        return Err(Error::Contract("class with empty support".into()));
    }
    if query.iter().all(Vec::is_empty) {
        return Err(Error::Contract("no queries".into()));
    }
    let n = emb.nrows();
    if support.iter().chain(query).flatten().any(|&r| r >= n) {
        return Err(Error::Contract("row index out of range".into()));
    }
    Ok(())
}

fn softmax_neg(d: &[f64]) -> (Vec<f64>, f64) {
    let max = d.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = d.iter().map(|v| (-v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|v| v / s).collect(), max + s.ln())
}

/// Softmax over prototypes of −‖z − c_k‖² for one query row.
pub fn prototype_probabilities(
    emb: ArrayView2<f64>,
    support: &[Vec<usize>],
    query_row: usize,
) -> Result<Vec<f64>> {
    check_prototype_inputs(emb, support, &[vec![query_row]])?;
    let c = prototypes(emb, support);
    let d: Vec<f64> = c.rows().into_iter().map(|ck| sq_dist(emb.row(query_row), ck)).collect();
    Ok(softmax_neg(&d).0)
}

/// Mean over queries of −log softmax(−‖z − c_p‖²). `support[k]` and
/// `query[k]` hold batch rows of class k. The gradient flows through the
/// prototype means into the support rows.
pub fn prototype_loss(
    emb: ArrayView2<f64>,
    support: &[Vec<usize>],
    query: &[Vec<usize>],
) -> Result<(f64, Array2<f64>)> {
    check_prototype_inputs(emb, support, query)?;
    let c = prototypes(emb, support);
    let k_count = support.len();
    let nq: usize = query.iter().map(Vec::len).sum();
    let scale = 1.0 / nq as f64;
    let mut grad = Array2::zeros(emb.raw_dim());
    let mut grad_c: Array2<f64> = Array2::zeros(c.raw_dim());
    let mut total = 0.0;
    for (y, rows) in query.iter().enumerate() {
        for &q in rows {
            let z = emb.row(q);
            let diffs: Vec<Array1<f64>> = c.rows().into_iter().map(|ck| &z - &ck).collect();
            let d: Vec<f64> = diffs.iter().map(|v| v.dot(v)).collect();
            let (p, lse) = softmax_neg(&d);
            total += d[y] + lse;
            let mut gq = grad.row_mut(q);
            for k in 0..k_count {
                let w = (if k == y { 1.0 } else { 0.0 }) - p[k];
                gq.scaled_add(2.0 * w * scale, &diffs[k]);
                grad_c.row_mut(k).scaled_add(-2.0 * w * scale, &diffs[k]);
            }
        }
    }
    for (k, rows) in support.iter().enumerate() {
        let share = 1.0 / rows.len() as f64;
        for &r in rows {
            grad.row_mut(r).scaled_add(share, &grad_c.row(k));
        }
    }
    Ok((total * scale, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    pub triplets: usize,
    pub skipped_anchors: usize,
}

/// Loss of one episode. Row r of `emb` is the embedding of
/// `task.flat_indices()[r]`. The rng is consumed only by random-triplet modes.
pub fn episode_loss<R: Rng + ?Sized>(
    task: &EpisodicTask,
    emb: ArrayView2<f64>,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<EpisodeLoss> {
    let rows: usize = task.examples.iter().map(Vec::len).sum();
    if emb.nrows() != rows {
        return Err(Error::Contract(format!(
            "episode has {rows} points but {} embeddings",
            emb.nrows()
        )));
    }
    let (mining, kind) = match cfg.kind {
        LossKind::Prototype => {
            let (support, query) = task.partition_rows()?;
            let (value, grad) = prototype_loss(emb, &support, &query)?;
            return Ok(EpisodeLoss {
                value,
                grad,
                triplets: 0,
                skipped_anchors: 0,
            });
        }
        LossKind::Triplet => (random_triplets(&task.flat_labels(), rng), MarginKind::Hinge),
        LossKind::SoftMarginTriplet => (random_triplets(&task.flat_labels(), rng), MarginKind::Soft),
        LossKind::HardTriplet => (mine_hard_triplets(emb, &task.flat_labels())?, cfg.hard_margin),
    };
    let (value, grad) = triplet_batch_loss(emb, &mining.triplets, cfg.margin, kind)?;
    Ok(EpisodeLoss {
        value,
        grad,
        triplets: mining.triplets.len(),
        skipped_anchors: mining.skipped.len(),
    })
}
