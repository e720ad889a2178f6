//! Central finite-difference check of the encoder + loss gradients.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::{mine_hard_triplets, prototype_loss, triplet_batch_loss, MarginKind, Triplet};
use crate::nn::{backward, embed, forward, init_params, ForwardCache, ModelParams};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Loss heads the checker knows how to evaluate on embeddings.
#[derive(Clone, Copy, Debug)]
pub enum CheckedLoss<'a> {
    /// Σ z², summed over the batch.
    SquaredNorm,
    Prototype {
        support: &'a [Vec<usize>],
        query: &'a [Vec<usize>],
    },
    Triplets {
        triplets: &'a [Triplet],
        margin: f64,
        kind: MarginKind,
    },
    HardTriplet {
        labels: &'a [usize],
        margin: f64,
        kind: MarginKind,
    },
}

impl CheckedLoss<'_> {
    pub fn eval(&self, emb: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
        match *self {
            CheckedLoss::SquaredNorm => Ok((emb.iter().map(|v| v * v).sum(), emb.mapv(|v| 2.0 * v))),
            CheckedLoss::Prototype { support, query } => prototype_loss(emb, support, query),
            CheckedLoss::Triplets {
                triplets,
                margin,
                kind,
            } => triplet_batch_loss(emb, triplets, margin, kind),
            CheckedLoss::HardTriplet {
                labels,
                margin,
                kind,
            } => {
                let mining = mine_hard_triplets(emb, labels)?;
                triplet_batch_loss(emb, &mining.triplets, margin, kind)
            }
        }
    }
}

/// Denominator floor. Central differences at h = 1e-4 carry roughly 1e-12
/// of rounding noise, so entries whose true gradient is zero (the output
/// bias under a translation-invariant loss) need a floor well above that.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// |a − n| / max(|a|, |n|, RELATIVE_FLOOR).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn gradient_check(
    loss: &CheckedLoss,
    params: &ModelParams,
    batch: ArrayView2<f64>,
) -> Result<f64> {
    gradient_check_with(params, batch, DEFAULT_STEP, |e| loss.eval(e))
}

/// Max relative error between the backpropagated gradient and central
/// differences with step `h`, over every weight and bias.
pub fn gradient_check_with<F>(
    params: &ModelParams,
    batch: ArrayView2<f64>,
    h: f64,
    loss: F,
) -> Result<f64>
where
    F: Fn(ArrayView2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let (emb, cache): (Array2<f64>, ForwardCache) = forward(params, batch)?;
    let (_, g_emb) = loss(emb.view()).map_err(|e| match e {
        Error::Contract(m) => Error::InfeasibleCheck(m),
        other => other,
    })?;
    let analytic = backward(params, &cache, g_emb.view())?;
    let eval = |p: &ModelParams| -> Result<f64> {
        let e = embed(p, batch)?;
        Ok(loss(e.view())?.0)
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for l in 0..params.layers.len() {
        let (rows, cols) = params.layers[l].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.layers[l].weight[[r, c]];
                probe.layers[l].weight[[r, c]] = orig + h;
                let up = eval(&probe)?;
                probe.layers[l].weight[[r, c]] = orig - h;
                let down = eval(&probe)?;
                probe.layers[l].weight[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max(relative_error(analytic[l].weight[[r, c]], numeric));
            }
        }
        for r in 0..rows {
            let orig = probe.layers[l].bias[r];
            probe.layers[l].bias[r] = orig + h;
            let up = eval(&probe)?;
            probe.layers[l].bias[r] = orig - h;
            let down = eval(&probe)?;
            probe.layers[l].bias[r] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[l].bias[r], numeric));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub trials: usize,
}

const SUITE_DIMS: [usize; 4] = [6, 8, 8, 4];
/// Batches with a hidden pre-activation or hinge pre-activation this close
/// to a kink are redrawn, since finite differences straddle the kink.
const KINK_CLEARANCE: f64 = 1e-3;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

fn clear_of_kinks(params: &ModelParams, batch: ArrayView2<f64>) -> Result<bool> {
    let (_, cache) = forward(params, batch)?;
    Ok(cache.pre.iter().flatten().all(|v| v.abs() >= KINK_CLEARANCE))
}

/// Draw an encoder and batch whose hidden units stay clear of ReLU kinks.
fn draw(rng: &mut ChaCha8Rng, rows: usize) -> Result<(ModelParams, Array2<f64>)> {
    loop {
        let params = init_params(&SUITE_DIMS, rng.random())?;
        let batch = random_batch(rng, rows, SUITE_DIMS[0]);
        if clear_of_kinks(&params, batch.view())? {
            return Ok((params, batch));
        }
    }
}

fn random_triplet_set(rng: &mut ChaCha8Rng, rows: usize, count: usize) -> Vec<Triplet> {
    (0..count)
        .map(|_| {
            let idx = rand::seq::index::sample(rng, rows, 3);
            Triplet {
                anchor: idx.index(0),
                positive: idx.index(1),
                negative: idx.index(2),
            }
        })
        .collect()
}

fn triplet_trial(rng: &mut ChaCha8Rng, kind: MarginKind, margin: f64) -> Result<f64> {
    const ROWS: usize = 8;
    loop {
        let (params, batch) = draw(rng, ROWS)?;
        let triplets = random_triplet_set(rng, ROWS, 6);
        let emb = embed(&params, batch.view())?;
        let pres: Vec<f64> = triplets
            .iter()
            .map(|t| {
                crate::losses::sq_dist(emb.row(t.anchor), emb.row(t.positive))
                    - crate::losses::sq_dist(emb.row(t.anchor), emb.row(t.negative))
                    + margin
            })
            .collect();
        if kind == MarginKind::Hinge
            && (pres.iter().any(|p| p.abs() < KINK_CLEARANCE) || pres.iter().all(|&p| p <= 0.0))
        {
            continue;
        }
        let loss = CheckedLoss::Triplets {
            triplets: &triplets,
            margin,
            kind,
        };
        return gradient_check(&loss, &params, batch.view());
    }
}

fn prototype_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    // 3-way 2-shot with 2 queries per class.
    let (params, batch) = draw(rng, 12)?;
    let support: Vec<Vec<usize>> = (0..3).map(|k| vec![4 * k, 4 * k + 1]).collect();
    let query: Vec<Vec<usize>> = (0..3).map(|k| vec![4 * k + 2, 4 * k + 3]).collect();
    let loss = CheckedLoss::Prototype {
        support: &support,
        query: &query,
    };
    gradient_check(&loss, &params, batch.view())
}

/// Randomized checks of the prototype, hinge triplet and soft-margin
/// triplet losses composed with a 2-hidden-layer ReLU encoder.
pub fn gradient_suite(trials: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>| {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            worst = worst.max(f(&mut rng)?);
        }
        Ok::<_, Error>(SuiteResult {
            name,
            max_rel_error: worst,
            trials,
        })
    };
    Ok(vec![
        run("prototype", &mut |r| prototype_trial(r))?,
        run("triplet_hinge", &mut |r| triplet_trial(r, MarginKind::Hinge, 0.5))?,
        run("triplet_soft_margin", &mut |r| triplet_trial(r, MarginKind::Soft, 0.5))?,
    ])
}
