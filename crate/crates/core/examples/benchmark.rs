//! Run the synthetic benchmark and print per-round metrics.
//!
//! cargo run --release --example benchmark -- [hard|triplet|prototype] [seed] [fraction] [key=value ...]

use std::time::Instant;

use uflst::config::TrainConfig;
use uflst::data::{generate_synthetic, SyntheticSpec};
use uflst::losses::LossKind;
use uflst::pipeline::{run_training, GroundTruth, NullSink};

fn main() -> uflst::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = args.first().map(String::as_str).unwrap_or("hard");
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let fraction: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let overrides: Vec<&String> = args.iter().skip(3).collect();

    let (train, test) = generate_synthetic(&SyntheticSpec::benchmark(seed))?;
    let train = train.sample_fraction(fraction, seed);
    let mut cfg = TrainConfig::benchmark();
    cfg.seed = seed;
    cfg = match variant {
        "hard" => cfg,
        "triplet" => {
            cfg.loss.kind = LossKind::Triplet;
            cfg
        }
        "prototype" => cfg.with_prototype_loss(),
        other => panic!("unknown variant {other}"),
    };
    let cfg = cfg.with_overrides(&overrides)?;
    let mut obs = GroundTruth {
        train_labels: train.labels(),
        test: Some((test.features(), test.labels().unwrap())),
        protocol: cfg.eval.clone(),
    };
    let start = Instant::now();
    let out = run_training(&cfg, train.unlabeled(), &mut obs, &mut NullSink)?;
    println!("untrained accuracy {:.4}", out.initial_accuracy.unwrap().mean);
    for m in &out.history {
        println!(
            "round {:2} eps {:.3} clusters {:3} outliers {:4} nmi {:.4} way {:2} loss {:.4} acc {:.4}",
            m.round,
            m.epsilon,
            m.num_clusters,
            m.num_outliers,
            m.nmi.unwrap_or(f64::NAN),
            m.way,
            m.mean_loss.unwrap_or(f64::NAN),
            m.accuracy_mean.unwrap_or(f64::NAN)
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
