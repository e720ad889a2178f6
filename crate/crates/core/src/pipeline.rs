//! The alternating loop: cluster the embeddings into pseudo-classes, train
//! on episodes drawn from them, repeat.

use ndarray::{ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::clustering::{build_pseudo_labeled_set, choose_epsilon, dbscan_fit, PseudoLabeledSet};
use crate::config::{OnExhausted, TrainConfig};
use crate::data::Unlabeled;
use crate::episodes::{split_support_query, EpisodeMode, EpisodeSampler};
use crate::error::{Error, Result};
use crate::eval::{
    compensated_sum, few_shot_accuracy, nmi, Accuracy, EvalProtocol, Fallback, RoundMetrics,
};
use crate::losses::episode_loss;
use crate::metric::{jaccard_matrix, k_reciprocal_sets, knn_sets, pairwise_sq_euclidean};
use crate::nn::{adam_step, backward, embed, forward, init_params_with, ModelParams};

/// Factor applied to ε on each widening rung.
pub const EPSILON_WIDEN: f64 = 1.5;
/// Number of widening rungs before ms is lowered.
pub const EPSILON_WIDEN_STEPS: u32 = 3;
/// Smallest ms the ladder lowers to.
pub const MS_FLOOR: usize = 2;

/// Deterministic per-round stream, so a resumed run replays the same draws.
pub fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringOutcome {
    pub pl: Option<PseudoLabeledSet>,
    /// ε of the last DBSCAN attempt.
    pub epsilon: f64,
    pub ms: usize,
    pub fallback: Fallback,
    pub warnings: Vec<String>,
}

/// Embed every point, build KRJD, pick ε, run DBSCAN and strip outliers.
/// When DBSCAN finds no cluster, ε is widened by 1.5 up to three times and
/// then ms is halved down to 2; if that still fails `pl` is `None`.
pub fn run_clustering_phase(
    params: &ModelParams,
    data: Unlabeled,
    config: &TrainConfig,
) -> Result<ClusteringOutcome> {
    let emb = embed(params, data.features())?;
    cluster_embeddings(emb.view(), config)
}

pub fn cluster_embeddings(emb: ArrayView2<f64>, config: &TrainConfig) -> Result<ClusteringOutcome> {
    let mut warnings = Vec::new();
    let n = emb.nrows();
    let dist = pairwise_sq_euclidean(emb)?;
    if n >= 2 && dist.iter().all(|&d| d == 0.0) {
        warnings.push("degenerate geometry: all embeddings coincide".to_string());
    }
    let knn = knn_sets(dist.view(), config.metric.k)?;
    if knn.clamped() {
        warnings.push(format!(
            "metric.k = {} clamped to {} for {n} points",
            knn.requested_k, knn.k
        ));
    }
    let j = jaccard_matrix(&k_reciprocal_sets(&knn));
    let base = match config.dbscan.epsilon_override {
        Some(e) => {
            warnings.push(format!("epsilon override {e} in use"));
            e
        }
        None if n < 2 => 0.0,
        None => {
            let choice = choose_epsilon(j.values.view(), &config.dbscan)?;
            if choice.degenerate {
                warnings.push("degenerate geometry: every Jaccard distance is zero".to_string());
            }
            choice.value
        }
    };

    let mut rungs = vec![(base, config.dbscan.ms, Fallback::None)];
    let mut eps = base;
    for step in 1..=EPSILON_WIDEN_STEPS {
        eps *= EPSILON_WIDEN;
        rungs.push((eps, config.dbscan.ms, Fallback::WidenEpsilon(step)));
    }
    let mut ms = config.dbscan.ms;
    while ms > MS_FLOOR {
        ms = (ms / 2).max(MS_FLOOR);
        rungs.push((eps, ms, Fallback::ShrinkMs(ms)));
    }

    for (eps, ms, rung) in &rungs {
        let raw = dbscan_fit(j.values.view(), *eps, *ms)?;
        match build_pseudo_labeled_set(&raw) {
            Ok(pl) => {
                if *rung != Fallback::None {
                    warnings.push(format!(
                        "fallback {}: clustered with epsilon {eps} and ms {ms}",
                        rung.label()
                    ));
                }
                return Ok(ClusteringOutcome {
                    pl: Some(pl),
                    epsilon: *eps,
                    ms: *ms,
                    fallback: *rung,
                    warnings,
                });
            }
            Err(Error::EmptyClustering) => continue,
            Err(e) => return Err(e),
        }
    }
    let (eps, ms, _) = *rungs.last().expect("at least one rung");
    warnings.push("fallback ladder exhausted: every point is noise".to_string());
    Ok(ClusteringOutcome {
        pl: None,
        epsilon: eps,
        ms,
        fallback: Fallback::Failed,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodicOutcome {
    /// Way actually used; 0 when training was skipped.
    pub way: usize,
    pub episodes: usize,
    pub mean_loss: Option<f64>,
    pub warnings: Vec<String>,
}

/// Episodes for one round: `episodes_per_round` if set, otherwise
/// epochs × ⌈kept / batch⌉.
pub fn episodes_for(config: &TrainConfig, kept: usize) -> (usize, usize) {
    match config.episodes_per_round {
        Some(s) => (s, s.div_ceil(config.epochs_per_round).max(1)),
        None => {
            let per_epoch = kept.div_ceil(config.episodes.batch_size()).max(1);
            (config.epochs_per_round * per_epoch, per_epoch)
        }
    }
}

/// Train on episodes sampled from `pl`. The way drops to the number of
/// eligible classes when fewer than n_c_train exist; below n_c_test the
/// round is left untrained.
pub fn run_episodic_phase(
    params: &mut ModelParams,
    data: Unlabeled,
    pl: &PseudoLabeledSet,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodicOutcome> {
    let mut warnings = Vec::new();
    let ecfg = &config.episodes;
    let sampler = EpisodeSampler::new(pl, ecfg);
    let eligible = sampler.eligible_count();
    let way = eligible.min(ecfg.n_c_train);
    if way < ecfg.n_c_test.max(2) {
        warnings.push(format!(
            "clustering-only round: {eligible} classes with >= {} members, need {}",
            ecfg.n_e, ecfg.n_c_test
        ));
        return Ok(EpisodicOutcome {
            way: 0,
            episodes: 0,
            mean_loss: None,
            warnings,
        });
    }
    if way < ecfg.n_c_train {
        warnings.push(format!("way reduced from {} to {way}", ecfg.n_c_train));
    }
    let (total, per_epoch) = episodes_for(config, pl.len());
    let features = data.features();
    let mut losses = Vec::with_capacity(total);
    for s in 0..total {
        let epoch = s / per_epoch + 1;
        let mut task = sampler.sample(way, rng)?;
        if ecfg.mode == EpisodeMode::Prototype {
            task = split_support_query(&task, ecfg)?;
        }
        let batch = features.select(Axis(0), &task.flat_indices());
        let (emb, cache) = forward(params, batch.view())?;
        let out = episode_loss(&task, emb.view(), &config.loss, rng)?;
        let grads = backward(params, &cache, out.grad.view())?;
        adam_step(params, &grads, &config.optimizer, epoch)?;
        losses.push(out.value);
    }
    let mean_loss = (!losses.is_empty()).then(|| compensated_sum(losses.iter().copied()) / losses.len() as f64);
    Ok(EpisodicOutcome {
        way,
        episodes: total,
        mean_loss,
        warnings,
    })
}

/// Receives ground-truth-dependent measurements. Training never sees labels;
/// an observer holds them on the side.
pub trait Observer {
    fn nmi(&mut self, _pl: &PseudoLabeledSet) -> Result<Option<f64>> {
        Ok(None)
    }
    fn accuracy(&mut self, _params: &ModelParams) -> Result<Option<Accuracy>> {
        Ok(None)
    }
}

/// No ground truth available.
pub struct Blind;

impl Observer for Blind {}

/// NMI against training labels and few-shot accuracy on a held-out set.
/// Every accuracy call replays the same evaluation episodes.
pub struct GroundTruth<'a> {
    pub train_labels: Option<&'a [usize]>,
    pub test: Option<(ArrayView2<'a, f64>, &'a [usize])>,
    pub protocol: EvalProtocol,
}

impl Observer for GroundTruth<'_> {
    fn nmi(&mut self, pl: &PseudoLabeledSet) -> Result<Option<f64>> {
        let Some(truth) = self.train_labels else {
            return Ok(None);
        };
        let kept: Vec<usize> = pl.kept_indices.iter().map(|&i| truth[i]).collect();
        nmi(&kept, &pl.labels).map(Some)
    }

    fn accuracy(&mut self, params: &ModelParams) -> Result<Option<Accuracy>> {
        let Some((x, y)) = self.test else {
            return Ok(None);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.protocol.seed);
        few_shot_accuracy(params, x, y, &self.protocol, &mut rng).map(Some)
    }
}

/// Destination for per-round artifacts.
pub trait RunSink {
    fn warn(&mut self, _round: usize, _message: &str) {}
    fn pseudo_labels(&mut self, _round: usize, _n: usize, _pl: Option<&PseudoLabeledSet>) -> Result<()> {
        Ok(())
    }
    /// Called after every round with the full state.
    fn round_end(&mut self, _state: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl RunSink for NullSink {}

/// Collects warnings in memory.
#[derive(Default)]
pub struct MemorySink {
    pub warnings: Vec<(usize, String)>,
}

impl RunSink for MemorySink {
    fn warn(&mut self, round: usize, message: &str) {
        self.warnings.push((round, message.to_string()));
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: Checkpoint,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let params = init_params_with(
            &config.model.layer_dims(input_dim),
            config.model.activation,
            config.seed,
        )?;
        Ok(Trainer {
            config,
            state: Checkpoint {
                params,
                round: 0,
                history: Vec::new(),
            },
        })
    }

    pub fn resume(config: TrainConfig, state: Checkpoint) -> Result<Self> {
        config.validate()?;
        if state.history.len() != state.round {
            return Err(Error::Format(format!(
                "checkpoint at round {} holds {} history rows",
                state.round,
                state.history.len()
            )));
        }
        Ok(Trainer { config, state })
    }

    pub fn params(&self) -> &ModelParams {
        &self.state.params
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    /// One clustering phase followed by one episodic phase.
    pub fn run_round(
        &mut self,
        data: Unlabeled,
        observer: &mut dyn Observer,
        sink: &mut dyn RunSink,
    ) -> Result<RoundMetrics> {
        if data.dim() != self.state.params.input_dim() {
            return Err(Error::Input(format!(
                "data has {} columns, model expects {}",
                data.dim(),
                self.state.params.input_dim()
            )));
        }
        let round = self.state.round + 1;
        let mut rng = round_rng(self.config.seed, round);
        if self.config.reset_optimizer {
            self.state.params.reset_optimizer();
        }
        let clus = run_clustering_phase(&self.state.params, data, &self.config)?;
        for w in &clus.warnings {
            sink.warn(round, w);
        }
        sink.pseudo_labels(round, data.len(), clus.pl.as_ref())?;
        let mut metrics = RoundMetrics {
            round,
            epsilon: clus.epsilon,
            fallback: clus.fallback,
            num_clusters: 0,
            num_outliers: data.len(),
            mean_cluster_size: 0.0,
            nmi: None,
            way: 0,
            episodes: 0,
            mean_loss: None,
            accuracy_mean: None,
            accuracy_std: None,
        };
        match &clus.pl {
            Some(pl) => {
                metrics.num_clusters = pl.num_clusters;
                metrics.num_outliers = pl.outlier_indices.len();
                metrics.mean_cluster_size = pl.len() as f64 / pl.num_clusters as f64;
                metrics.nmi = observer.nmi(pl)?;
                let ep = run_episodic_phase(&mut self.state.params, data, pl, &self.config, &mut rng)?;
                for w in &ep.warnings {
                    sink.warn(round, w);
                }
                metrics.way = ep.way;
                metrics.episodes = ep.episodes;
                metrics.mean_loss = ep.mean_loss;
            }
            None => {
                sink.warn(round, "clustering-only round: no clusters to train on");
            }
        }
        if let Some(acc) = observer.accuracy(&self.state.params)? {
            metrics.accuracy_mean = Some(acc.mean);
            metrics.accuracy_std = Some(acc.std);
        }
        self.state.round = round;
        self.state.history.push(metrics.clone());
        sink.round_end(&self.state)?;
        if clus.pl.is_none() && self.config.on_exhausted == OnExhausted::Abort {
            return Err(Error::RoundFailed { round });
        }
        Ok(metrics)
    }

    /// Run the remaining rounds.
    pub fn run(
        &mut self,
        data: Unlabeled,
        observer: &mut dyn Observer,
        sink: &mut dyn RunSink,
    ) -> Result<&[RoundMetrics]> {
        while !self.finished() {
            self.run_round(data, observer, sink)?;
        }
        Ok(&self.state.history)
    }
}

pub struct TrainingOutcome {
    pub params: ModelParams,
    pub history: Vec<RoundMetrics>,
    /// Accuracy of the untrained encoder, when the observer measures it.
    pub initial_accuracy: Option<Accuracy>,
}

pub fn run_training(
    config: &TrainConfig,
    data: Unlabeled,
    observer: &mut dyn Observer,
    sink: &mut dyn RunSink,
) -> Result<TrainingOutcome> {
    let mut trainer = Trainer::new(config.clone(), data.dim())?;
    let initial_accuracy = observer.accuracy(trainer.params())?;
    trainer.run(data, observer, sink)?;
    Ok(TrainingOutcome {
        params: trainer.state.params,
        history: trainer.state.history,
        initial_accuracy,
    })
}
