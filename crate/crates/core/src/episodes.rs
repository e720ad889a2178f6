//! Episodic task construction from a pseudo-labeled set.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::PseudoLabeledSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    Prototype,
    Triplet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Training way.
    pub n_c_train: usize,
    /// Test way; training way is never reduced below this.
    pub n_c_test: usize,
    /// Examples per class.
    pub n_e: usize,
    pub n_s: usize,
    pub n_q: usize,
    pub mode: EpisodeMode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self::triplet_preset()
    }
}

impl EpisodeConfig {
    /// 32 classes × 4 examples, a 128-point batch.
    pub fn triplet_preset() -> Self {
        EpisodeConfig {
            n_c_train: 32,
            n_c_test: 5,
            n_e: 4,
            n_s: 1,
            n_q: 3,
            mode: EpisodeMode::Triplet,
        }
    }

    /// 60-way training with the test shot count as support size.
    pub fn prototype_preset(shot: usize) -> Self {
        EpisodeConfig {
            n_c_train: 60,
            n_c_test: 5,
            n_e: shot + 3,
            n_s: shot,
            n_q: 3,
            mode: EpisodeMode::Prototype,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c_train == 0 || self.n_c_test == 0 {
            return Err(Error::Config("episode way must be positive".into()));
        }
        if self.n_c_train < self.n_c_test {
            return Err(Error::Config(
                "episodes.n_c_train must be >= episodes.n_c_test".into(),
            ));
        }
        match self.mode {
            EpisodeMode::Prototype => {
                if self.n_s == 0 || self.n_q == 0 || self.n_s + self.n_q != self.n_e {
                    return Err(Error::Config(
                        "prototype episodes need n_s >= 1, n_q >= 1 and n_s + n_q = n_e".into(),
                    ));
                }
            }
            EpisodeMode::Triplet => {
                if self.n_e < 2 {
                    return Err(Error::Config("triplet episodes need n_e >= 2".into()));
                }
            }
        }
        Ok(())
    }

    /// Points per training episode at full way.
    pub fn batch_size(&self) -> usize {
        self.n_c_train * self.n_e
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feasibility {
    /// Pseudo-labels with at least n_e members.
    pub eligible: Vec<usize>,
    pub required: usize,
    pub feasible: bool,
}

pub fn check_feasibility(pl: &PseudoLabeledSet, cfg: &EpisodeConfig) -> Feasibility {
    let eligible: Vec<usize> = pl
        .cluster_sizes()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= cfg.n_e)
        .map(|(c, _)| c)
        .collect();
    let feasible = eligible.len() >= cfg.n_c_train;
    Feasibility {
        eligible,
        required: cfg.n_c_train,
        feasible,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodicTask {
    pub class_ids: Vec<usize>,
    /// Dataset indices per sampled class, `n_e` each.
    pub examples: Vec<Vec<usize>>,
    /// Support size per class once split; the rest of each list is query.
    pub n_support: Option<usize>,
}

impl EpisodicTask {
    pub fn way(&self) -> usize {
        self.class_ids.len()
    }

    /// Dataset indices in class-major order; row r of the episode batch.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.examples.iter().flatten().copied().collect()
    }

    /// Episode-local class position of each row of the batch.
    pub fn flat_labels(&self) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .flat_map(|(c, ex)| std::iter::repeat_n(c, ex.len()))
            .collect()
    }

    /// Batch rows of support and query per class. Requires a split.
    pub fn partition_rows(&self) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        let ns = self
            .n_support
            .ok_or_else(|| Error::Contract("task has no support/query split".into()))?;
        let mut support = Vec::with_capacity(self.way());
        let mut query = Vec::with_capacity(self.way());
        let mut row = 0;
        for ex in &self.examples {
            support.push((row..row + ns).collect());
            query.push((row + ns..row + ex.len()).collect());
            row += ex.len();
        }
        Ok((support, query))
    }
}

/// Per-class member lists precomputed for repeated sampling.
pub struct EpisodeSampler {
    members: Vec<Vec<usize>>,
    eligible: Vec<usize>,
    n_e: usize,
}

impl EpisodeSampler {
    pub fn new(pl: &PseudoLabeledSet, cfg: &EpisodeConfig) -> Self {
        let members = pl.members();
        let eligible = (0..members.len())
            .filter(|&c| members[c].len() >= cfg.n_e)
            .collect();
        EpisodeSampler {
            members,
            eligible,
            n_e: cfg.n_e,
        }
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.len()
    }

    /// Classes uniformly without replacement among the eligible ones, then
    /// examples uniformly without replacement within each class.
    pub fn sample<R: Rng + ?Sized>(&self, way: usize, rng: &mut R) -> Result<EpisodicTask> {
        if way == 0 || way > self.eligible.len() {
            return Err(Error::EpisodeInfeasible {
                eligible: self.eligible.len(),
                required: way,
            });
        }
        let picks = index::sample(rng, self.eligible.len(), way);
        let mut class_ids = Vec::with_capacity(way);
        let mut examples = Vec::with_capacity(way);
        for p in picks.iter() {
            let c = self.eligible[p];
            let m = &self.members[c];
            let ex = index::sample(rng, m.len(), self.n_e)
                .iter()
                .map(|i| m[i])
                .collect();
            class_ids.push(c);
            examples.push(ex);
        }
        Ok(EpisodicTask {
            class_ids,
            examples,
            n_support: None,
        })
    }
}

pub fn sample_episode<R: Rng + ?Sized>(
    pl: &PseudoLabeledSet,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<EpisodicTask> {
    EpisodeSampler::new(pl, cfg).sample(cfg.n_c_train, rng)
}

/// First n_s examples of each class become support, the rest query.
pub fn split_support_query(task: &EpisodicTask, cfg: &EpisodeConfig) -> Result<EpisodicTask> {
    if cfg.mode != EpisodeMode::Prototype {
        return Err(Error::Contract("support/query split needs prototype mode".into()));
    }
    if cfg.n_s == 0 || cfg.n_q == 0 || cfg.n_s + cfg.n_q != cfg.n_e {
        return Err(Error::Contract(format!(
            "invalid split n_s={} n_q={} n_e={}",
            cfg.n_s, cfg.n_q, cfg.n_e
        )));
    }
    if task.examples.iter().any(|ex| ex.len() != cfg.n_e) {
        return Err(Error::Contract("task class lists do not have n_e entries".into()));
    }
    Ok(EpisodicTask {
        n_support: Some(cfg.n_s),
        ..task.clone()
    })
}
