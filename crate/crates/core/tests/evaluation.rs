mod oracles;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uflst::clustering::build_pseudo_labeled_set;
use uflst::config::TrainConfig;
use uflst::data::{generate_synthetic, SyntheticSpec};
use uflst::eval::{
    cluster_stats, compensated_sum, few_shot_accuracy, few_shot_accuracy_on_embeddings, nmi,
    EvalProtocol, Fallback,
};
use uflst::nn::{embed, init_params};
use uflst::pipeline::{run_training, Blind, NullSink};
use uflst::Error;

fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[test]
fn nmi_identical_and_renamed() {
    let a = vec![0, 0, 1, 1, 2, 2];
    assert_eq!(nmi(&a, &a).unwrap(), 1.0);
    let b = vec![0, 0, 0, 1, 1, 1];
    let renamed = vec![7, 7, 7, 3, 3, 3];
    assert!((nmi(&b, &renamed).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn nmi_degenerate_entropy() {
    assert_eq!(nmi(&[1, 1, 1], &[4, 4, 4]).unwrap(), 1.0);
    assert_eq!(nmi(&[1, 1, 1], &[0, 1, 2]).unwrap(), 0.0);
    assert!(matches!(nmi(&[], &[]), Err(Error::Input(_))));
    assert!(nmi(&[0, 1], &[0]).is_err());
}

#[test]
fn nmi_matches_oracle_on_small_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let a = random_labels(&mut rng, 10, 3);
        let b = random_labels(&mut rng, 10, 4);
        let got = nmi(&a, &b).unwrap();
        let want = oracles::nmi_oracle(&a, &b);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn compensated_sum_recovers_cancellation() {
    let v = [1e16, 1.0, -1e16, 1.0];
    assert_eq!(compensated_sum(v), 2.0);
}

#[test]
fn query_on_support_point_is_correct() {
    // 5 well-separated single points per class plus an exact copy as query.
    let mut emb = Array2::zeros((10, 5));
    let mut labels = vec![];
    for c in 0..5 {
        emb[[2 * c, c]] = 100.0;
        emb[[2 * c + 1, c]] = 100.0;
        labels.extend([c, c]);
    }
    let protocol = EvalProtocol { way: 5, shot: 1, queries: 1, episodes: 50, seed: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acc = few_shot_accuracy_on_embeddings(emb.view(), &labels, &protocol, &mut rng).unwrap();
    assert_eq!(acc.mean, 1.0);
    assert_eq!(acc.std, 0.0);
    assert_eq!(acc.episodes, 50);
}

#[test]
fn protocol_infeasible() {
    let emb = Array2::zeros((8, 2));
    let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
    let protocol = EvalProtocol::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        few_shot_accuracy_on_embeddings(emb.view(), &labels, &protocol, &mut rng),
        Err(Error::ProtocolInfeasible(_))
    ));
}

#[test]
fn random_encoder_is_at_chance() {
    // Labels carry no information about features. A fixed dataset reused
    // across episodes has its own accidental structure, so the spread is
    // taken across independent datasets rather than across episodes.
    let protocol = EvalProtocol { way: 5, shot: 1, queries: 5, episodes: 1000, seed: 0 };
    let means: Vec<f64> = (0..100u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 400;
            let x = Array2::from_shape_simple_fn((n, 16), || rng.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|i| i % 20).collect();
            let params = init_params(&[16, 32, 8], seed + 100).unwrap();
            few_shot_accuracy(&params, x.view(), &labels, &protocol, &mut rng).unwrap().mean
        })
        .collect();
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let sd = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let bound = 3.0 * sd / k.sqrt();
    assert!((mean - 0.2).abs() < bound, "{mean} ± {bound}");
}

/// Replays the evaluator's draw order to obtain explicit episodes.
fn replay_episodes(
    labels: &[usize],
    protocol: &EvalProtocol,
    seed: u64,
) -> Vec<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let per = protocol.shot + protocol.queries;
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == *c).collect())
        .filter(|m: &Vec<usize>| m.len() >= per)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..protocol.episodes)
        .map(|_| {
            let picked = index::sample(&mut rng, members.len(), protocol.way);
            let mut support = vec![];
            let mut query = vec![];
            for c in picked.iter() {
                let ex = index::sample(&mut rng, members[c].len(), per);
                let ex: Vec<usize> = ex.iter().map(|i| members[c][i]).collect();
                support.push(ex[..protocol.shot].to_vec());
                query.push(ex[protocol.shot..].to_vec());
            }
            (support, query)
        })
        .collect()
}

#[test]
fn trained_accuracy_matches_centroid_oracle() {
    let spec = SyntheticSpec {
        num_classes: 8,
        points_per_class: 16,
        dim: 10,
        heldout_classes: 6,
        separation: 3.0,
        ..Default::default()
    };
    let (train, test) = generate_synthetic(&spec).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.rounds = 2;
    cfg.epochs_per_round = 3;
    cfg.metric.k = 6;
    cfg.episodes.n_c_train = 6;
    cfg.model.output_dim = 8;
    let out = run_training(&cfg, train.unlabeled(), &mut Blind, &mut NullSink).unwrap();
    let protocol = EvalProtocol { way: 5, shot: 2, queries: 4, episodes: 300, seed: 0 };
    let labels = test.labels().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let acc = few_shot_accuracy(&out.params, test.features(), labels, &protocol, &mut rng).unwrap();
    let emb = embed(&out.params, test.features()).unwrap();
    let rows: Vec<Vec<f64>> = emb.rows().into_iter().map(|r| r.to_vec()).collect();
    let expect = oracles::nearest_centroid_oracle(&rows, &replay_episodes(labels, &protocol, 31));
    assert!((acc.mean - expect).abs() < 1e-12, "{} vs {expect}", acc.mean);
}

#[test]
fn stats_for_perfect_clustering() {
    let truth = vec![0, 0, 1, 1, 2, 2];
    let pl = build_pseudo_labeled_set(&[Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)]).unwrap();
    let s = cluster_stats(Some(&pl), &truth).unwrap();
    assert_eq!(s.nmi, Some(1.0));
    assert_eq!(s.num_outliers, 0);
    assert_eq!(s.num_clusters, 3);
    assert_eq!(s.mean_cluster_size, 2.0);
}

#[test]
fn stats_for_all_outlier_round() {
    let s = cluster_stats(None, &[0, 1, 2]).unwrap();
    assert_eq!(s.num_clusters, 0);
    assert_eq!(s.num_outliers, 3);
    assert_eq!(s.nmi, None);
}

#[test]
fn stats_for_two_blob_fixture() {
    // Blob A = 0..5, blob B = 5..10, isolated point 10; the clustering puts
    // one B point into A's cluster.
    let truth = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2];
    let mut raw: Vec<Option<usize>> = vec![Some(0); 5];
    raw.extend([Some(0), Some(1), Some(1), Some(1), Some(1), None]);
    let pl = build_pseudo_labeled_set(&raw).unwrap();
    let s = cluster_stats(Some(&pl), &truth).unwrap();
    assert_eq!(s.num_clusters, 2);
    assert_eq!(s.num_outliers, 1);
    assert_eq!(s.mean_cluster_size, 5.0);
    // Hand count on the 10 kept points: contingency [[5,0],[1,4]].
    let h_truth = 2f64.ln();
    let h_pl = -(0.6 * 0.6f64.ln() + 0.4 * 0.4f64.ln());
    let mi = 0.5 * (0.5 / (0.5 * 0.6) as f64).ln()
        + 0.1 * (0.1 / (0.5 * 0.6) as f64).ln()
        + 0.4 * (0.4 / (0.5 * 0.4) as f64).ln();
    let expect = mi / (h_truth * h_pl).sqrt();
    assert!((s.nmi.unwrap() - expect).abs() < 1e-12);
}

#[test]
fn fallback_labels_round_trip() {
    for f in [Fallback::None, Fallback::WidenEpsilon(2), Fallback::ShrinkMs(3), Fallback::Failed] {
        assert_eq!(Fallback::parse(&f.label()), Some(f));
    }
    assert_eq!(Fallback::parse("bogus"), None);
}

#[test]
fn one_hot_embedding_distances() {
    let emb = array![[0.0, 0.0], [0.0, 0.0], [9.0, 9.0], [9.0, 9.0]];
    let protocol = EvalProtocol { way: 2, shot: 1, queries: 1, episodes: 10, seed: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acc = few_shot_accuracy_on_embeddings(emb.view(), &[0, 0, 1, 1], &protocol, &mut rng).unwrap();
    assert_eq!(acc.mean, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nmi_symmetric_and_bounded(seed in any::<u64>(), n in 1usize..80, ka in 1usize..6, kb in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_labels(&mut rng, n, ka);
        let b = random_labels(&mut rng, n, kb);
        let ab = nmi(&a, &b).unwrap();
        prop_assert!((ab - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - oracles::nmi_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn nmi_permutation_invariant(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_labels(&mut rng, n, 4);
        let b = random_labels(&mut rng, n, 5);
        let base = nmi(&a, &b).unwrap();
        for _ in 0..50 {
            let mut names: Vec<usize> = (0..5).collect();
            names.shuffle(&mut rng);
            let renamed: Vec<usize> = b.iter().map(|&l| names[l] + 10).collect();
            prop_assert!((nmi(&a, &renamed).unwrap() - base).abs() < 1e-12);
        }
    }
}
