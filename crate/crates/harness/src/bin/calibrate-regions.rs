//! Calibrates the region-size constant on a fixture.
//!
//! The region size is linear in the constant while loss gaps do not depend on
//! it, so one pass at unit constant yields, per replication, the smallest
//! constant for which the joint membership event holds. The reported
//! calibration is the requested quantile of these per-replication constants.

use clap::Parser;
use confgame_core::cells::DataCells;
use confgame_core::game_model::simulate::simulate_dataset;
use confgame_core::game_model::spec_io::load_spec;
use confgame_core::learner::{coverage_certificate, plan_regions, LearnerSettings};
use confgame_core::ope::Model;
use confgame_core::oracle::exact_q::exact_optimal_pair;
use confgame_core::rng::{derive_seed, Purpose};
use confgame_core::smd::RegionSchedule;
use confgame_harness::config::ExperimentConfig;
use confgame_harness::experiment::{basis_for, thread_pool};
use confgame_harness::policies::ClassChoice;
use confgame_harness::report::quantile;
use rayon::prelude::*;

#[derive(Parser)]
#[command(about = "Calibrate the region-size constant from Monte-Carlo coverage")]
struct Args {
    /// Built-in fixture name or spec path.
    #[arg(long, default_value = "t1")]
    spec: String,
    /// Trajectories per replication.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Number of replications.
    #[arg(long, default_value_t = 200)]
    replications: usize,
    /// Target coverage level.
    #[arg(long, default_value_t = 0.95)]
    target: f64,
    /// Master seed of the calibration replications.
    #[arg(long, default_value_t = 77)]
    seed: u64,
}

fn main() {
    let args = Args::parse();
    let bundle = load_spec(&args.spec).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(2)
    });
    let game = &bundle.game;
    let class = ClassChoice::Auto.resolve(game.spaces());
    let optimum = exact_optimal_pair(game, &class).expect("oracle optimum");
    let cfg = ExperimentConfig::new("calibrate", &args.spec, vec![args.n]);
    let basis = basis_for(&cfg, game, args.n).expect("basis");
    let settings = LearnerSettings {
        schedule: RegionSchedule { constant: 1.0, ..Default::default() },
        ..Default::default()
    };
    let ratios: Vec<f64> = thread_pool().install(|| {
        (0..args.replications as u64)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(args.seed, Purpose::Replication, i);
                let data = simulate_dataset(game, &bundle.behavior, args.n, seed).expect("simulate");
                let cells = DataCells::from_dataset(game.spaces(), &data.observed).expect("cells");
                let model = Model::new(&cells, &basis).expect("model");
                let plan = plan_regions(&model, &settings);
                coverage_certificate(&model, game, &optimum.policy, &plan).expect("certificate").worst_ratio
            })
            .collect()
    });
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    println!("quantile,c_eta");
    for q in [0.5, 0.8, 0.85, 0.9, 0.95, 0.99] {
        println!("{q},{:.4}", quantile(&sorted, q));
    }
    let pick = quantile(&sorted, args.target);
    println!("calibrated c_eta for coverage {}: {:.4}", args.target, pick);
}
