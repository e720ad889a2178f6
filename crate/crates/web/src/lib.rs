//! WebAssembly bindings for the browser demo. Every entry point takes and
//! returns JSON so the page needs no generated type bindings.

use serde::{Deserialize, Serialize};
use uflst::config::TrainConfig;
use uflst::data::{generate_synthetic, SyntheticSpec};
use uflst::eval::{nmi, RoundMetrics};
use uflst::gradcheck::gradient_suite;
use uflst::losses::LossKind;
use uflst::pipeline::{cluster_embeddings, run_training, GroundTruth, MemorySink};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterRequest {
    pub classes: usize,
    pub points_per_class: usize,
    pub separation: f64,
    pub within_std: f64,
    pub k: usize,
    pub ms: usize,
    pub p_fraction: f64,
    pub seed: u64,
}

impl Default for ClusterRequest {
    fn default() -> Self {
        ClusterRequest {
            classes: 5,
            points_per_class: 40,
            separation: 8.0,
            within_std: 0.4,
            k: 12,
            ms: 4,
            p_fraction: 0.2,
            seed: 2,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ClusterResponse {
    pub points: Vec<[f64; 2]>,
    pub truth: Vec<usize>,
    /// -1 marks noise.
    pub labels: Vec<i64>,
    pub epsilon: f64,
    pub fallback: String,
    pub clusters: usize,
    pub outliers: usize,
    /// NMI on the non-noise points.
    pub nmi: Option<f64>,
    pub warnings: Vec<String>,
}

/// Cluster 2-D blobs directly with k-reciprocal Jaccard DBSCAN.
pub fn cluster_points(req: &ClusterRequest) -> Result<ClusterResponse, String> {
    let spec = SyntheticSpec {
        num_classes: req.classes,
        points_per_class: req.points_per_class,
        dim: 2,
        separation: req.separation,
        within_std: req.within_std,
        heldout_classes: 0,
        seed: req.seed,
        ..Default::default()
    };
    let (train, _) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default();
    cfg.metric.k = req.k;
    cfg.dbscan.ms = req.ms;
    cfg.dbscan.p_fraction = req.p_fraction;
    cfg.validate().map_err(|e| e.to_string())?;
    let out = cluster_embeddings(train.features(), &cfg).map_err(|e| e.to_string())?;
    let truth = train.labels().expect("synthetic labels").to_vec();
    let dense = out
        .pl
        .as_ref()
        .map(|pl| pl.dense_labels(train.len()))
        .unwrap_or_else(|| vec![None; train.len()]);
    let labels = dense.iter().map(|l| l.map_or(-1, |v| v as i64)).collect();
    let score = match &out.pl {
        Some(pl) => {
            let kept: Vec<usize> = pl.kept_indices.iter().map(|&i| truth[i]).collect();
            Some(nmi(&kept, &pl.labels).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    Ok(ClusterResponse {
        points: train.features().rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        truth,
        labels,
        epsilon: out.epsilon,
        fallback: out.fallback.label(),
        clusters: out.pl.as_ref().map_or(0, |p| p.num_clusters),
        outliers: out.pl.as_ref().map_or(train.len(), |p| p.outlier_indices.len()),
        nmi: score,
        warnings: out.warnings,
    })
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRequest {
    pub rounds: usize,
    /// hard_triplet, triplet or prototype.
    pub loss: String,
    pub seed: u64,
    /// Training classes in the benchmark fixture.
    pub classes: usize,
}

impl Default for TrainRequest {
    fn default() -> Self {
        TrainRequest {
            rounds: 5,
            loss: "hard_triplet".into(),
            seed: 0,
            classes: 20,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrainResponse {
    pub untrained_accuracy: f64,
    pub rounds: Vec<RoundRow>,
}

#[derive(Debug, Serialize)]
pub struct RoundRow {
    pub round: usize,
    pub epsilon: f64,
    pub clusters: usize,
    pub outliers: usize,
    pub nmi: Option<f64>,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

impl From<&RoundMetrics> for RoundRow {
    fn from(m: &RoundMetrics) -> Self {
        RoundRow {
            round: m.round,
            epsilon: m.epsilon,
            clusters: m.num_clusters,
            outliers: m.num_outliers,
            nmi: m.nmi,
            loss: m.mean_loss,
            accuracy: m.accuracy_mean,
        }
    }
}

/// Self-supervised rounds on the benchmark fixture, with 5-way 1-shot
/// accuracy on its held-out classes after every round.
pub fn train_rounds(req: &TrainRequest) -> Result<TrainResponse, String> {
    if !(1..=20).contains(&req.rounds) {
        return Err("rounds must be between 1 and 20".into());
    }
    let spec = SyntheticSpec {
        num_classes: req.classes,
        ..SyntheticSpec::benchmark(req.seed)
    };
    let (train, test) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::benchmark();
    cfg.rounds = req.rounds;
    cfg.seed = req.seed;
    cfg.eval.episodes = 200;
    cfg = match req.loss.as_str() {
        "hard_triplet" => cfg,
        "triplet" => {
            cfg.loss.kind = LossKind::Triplet;
            cfg
        }
        "prototype" => cfg.with_prototype_loss(),
        other => return Err(format!("unknown loss {other:?}")),
    };
    let mut observer = GroundTruth {
        train_labels: train.labels(),
        test: Some((test.features(), test.labels().expect("synthetic labels"))),
        protocol: cfg.eval.clone(),
    };
    let out = run_training(&cfg, train.unlabeled(), &mut observer, &mut MemorySink::default())
        .map_err(|e| e.to_string())?;
    Ok(TrainResponse {
        untrained_accuracy: out.initial_accuracy.map_or(f64::NAN, |a| a.mean),
        rounds: out.history.iter().map(RoundRow::from).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct GradcheckRow {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub trials: usize,
}

pub fn check_gradients(trials: usize, seed: u64) -> Result<Vec<GradcheckRow>, String> {
    let results = gradient_suite(trials.clamp(1, 200), seed).map_err(|e| e.to_string())?;
    Ok(results
        .into_iter()
        .map(|r| GradcheckRow {
            name: r.name,
            max_rel_error: r.max_rel_error,
            trials: r.trials,
        })
        .collect())
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, JsValue> {
    let json = if json.trim().is_empty() { "{}" } else { json };
    serde_json::from_str(json).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn reply<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn cluster(request_json: &str) -> Result<String, JsValue> {
    reply(cluster_points(&parse(request_json)?))
}

#[wasm_bindgen]
pub fn train(request_json: &str) -> Result<String, JsValue> {
    reply(train_rounds(&parse(request_json)?))
}

#[wasm_bindgen]
pub fn gradcheck(trials: usize, seed: u64) -> Result<String, JsValue> {
    reply(check_gradients(trials, seed))
}
