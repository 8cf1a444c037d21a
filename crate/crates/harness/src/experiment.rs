//! Replication cells: simulate, estimate, learn and score against the oracle.

use std::time::Instant;

use confgame_core::cells::DataCells;
use confgame_core::game_model::policy::{PolicyClass, PolicyPair};
use confgame_core::game_model::simulate::simulate_dataset;
use confgame_core::game_model::spec::{GameSpec, SpecBundle};
use confgame_core::game_model::spec_io::load_spec;
use confgame_core::learner::{coverage_certificate, gap_against, learn_policy_pair, plan_regions, LearnerSettings, DEFAULT_CLASS_CAP};
use confgame_core::moments::NuisanceMode;
use confgame_core::ope::{evaluate_cross_fitted, Model};
use confgame_core::oracle::exact_q::{exact_optimal_pair, exact_policy_value, OptimalPair};
use confgame_core::oracle::truth::true_reward_coefficients;
use confgame_core::sieve::{build_basis, k_schedule, BasisKind, SieveBasis};
use confgame_core::smd::fit_joint;
use confgame_core::Result;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Metric};
use crate::policies::{materialize, resolve_policy_name};

/// One metric value of a replication cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub metric: Metric,
    /// Evaluation policy name for `j_error`, empty otherwise.
    pub target: String,
    pub value: f64,
}

/// Outcome of one `(n, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub seed: u64,
    /// Computed metrics, empty when the cell failed.
    pub values: Vec<MetricValue>,
    /// Wall-clock milliseconds per stage.
    pub timings: Vec<(String, f64)>,
    /// Error message of a failed cell.
    pub error: Option<String>,
}

/// Oracle quantities and resolved settings shared by all cells.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub bundle: SpecBundle,
    pub class: PolicyClass,
    pub optimum: OptimalPair,
    /// Evaluation policies with their names and true values `J_A + J_B`.
    pub targets: Vec<(String, PolicyPair, f64)>,
    pub settings: LearnerSettings,
}

/// Resolves the fixture, the class optimum and the evaluation policies.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let bundle = load_spec(&config.spec)?;
    bundle.check()?;
    let spaces = bundle.game.spaces();
    let class = config.class.resolve(spaces);
    let optimum = exact_optimal_pair(&bundle.game, &class)?;
    let mut targets = Vec::new();
    for name in &config.policies {
        let policy = materialize(&resolve_policy_name(name, spaces)?, &bundle.game, &class)?;
        let (ja, jb) = exact_policy_value(&bundle.game, &policy);
        targets.push((name.clone(), policy, ja + jb));
    }
    Ok(Prepared {
        config: config.clone(),
        bundle,
        class,
        optimum,
        targets,
        settings: LearnerSettings {
            schedule: config.schedule,
            inner: config.inner_min(),
        },
    })
}

/// Sieve basis for a sample size under the configured schedule.
pub fn basis_for(config: &ExperimentConfig, game: &GameSpec, n: usize) -> Result<SieveBasis> {
    let kind: BasisKind = config.basis.into();
    let k = match kind {
        BasisKind::Saturated => game.spaces().cells(),
        BasisKind::TensorPolynomial => k_schedule(n, config.k_constant),
    };
    build_basis(kind, game.spaces(), &game.state_coordinates(), k)
}

/// Reward-block coefficient errors: the root mean square over every point,
/// cell and role, and the largest absolute error at the first point.
pub fn reward_coef_errors(game: &GameSpec, cells: &DataCells, basis: &SieveBasis, mode: NuisanceMode, model: Option<&Model>) -> Result<(f64, f64)> {
    let sp = game.spaces();
    let mut sq = 0.0;
    let mut count = 0.0;
    let mut first_sup: f64 = 0.0;
    for (k, pc) in cells.points.iter().enumerate() {
        let fit = match (mode, model) {
            (NuisanceMode::OracleNuisance, Some(m)) => m.points[k].reward_fit.clone(),
            (NuisanceMode::OracleNuisance, None) => confgame_core::smd::point_solver(pc, basis, false)?.fit(&pc.reward)?,
            (NuisanceMode::Joint, _) => fit_joint(pc, &pc.reward, basis, false)?.fit,
        };
        let truth = true_reward_coefficients(game, k);
        for s in 0..sp.n_states {
            for u in 0..sp.n_private {
                let est = fit.coefficients_at(basis, sp.cell(s, u));
                let want = truth.at(s, u);
                for r in 0..3 {
                    let e = est[r] - want[r];
                    sq += e * e;
                    count += 1.0;
                    if k == 0 {
                        first_sup = first_sup.max(e.abs());
                    }
                }
            }
        }
    }
    Ok(((sq / count).sqrt(), first_sup))
}

fn timed<T>(timings: &mut Vec<(String, f64)>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    timings.push((stage.to_string(), t.elapsed().as_secs_f64() * 1e3));
    out
}

fn cell_values(prep: &Prepared, n: usize, seed: u64, timings: &mut Vec<(String, f64)>) -> Result<Vec<MetricValue>> {
    let cfg = &prep.config;
    let game = &prep.bundle.game;
    let wants = |m: Metric| cfg.metrics.contains(&m);
    let data = timed(timings, "simulate", || simulate_dataset(game, &prep.bundle.behavior, n, seed))?;
    let basis = basis_for(cfg, game, n)?;
    let (cells, model) = timed(timings, "fit", || {
        let cells = DataCells::from_dataset(game.spaces(), &data.observed)?;
        let model = Model::new(&cells, &basis)?;
        Ok((cells, model))
    })?;
    let mut out = Vec::new();
    let push = |out: &mut Vec<MetricValue>, metric, target: &str, value| {
        out.push(MetricValue {
            metric,
            target: target.to_string(),
            value,
        })
    };
    if wants(Metric::RmseTheta) {
        let (rmse, _) = timed(timings, "identify", || reward_coef_errors(game, &cells, &basis, cfg.mode.into(), Some(&model)))?;
        push(&mut out, Metric::RmseTheta, "", rmse);
    }
    let plan = plan_regions(&model, &prep.settings);
    if wants(Metric::Coverage) {
        let c = timed(timings, "coverage", || coverage_certificate(&model, game, &prep.optimum.policy, &plan))?;
        push(&mut out, Metric::Coverage, "", if c.joint() { 1.0 } else { 0.0 });
    }
    if wants(Metric::JError) {
        let errors = timed(timings, "evaluate", || {
            prep.targets
                .iter()
                .map(|(name, policy, truth)| {
                    let est = if cfg.cross_fit {
                        evaluate_cross_fitted(game.spaces(), &data.observed, policy, &basis)?
                    } else {
                        model.evaluate(policy)?
                    };
                    Ok((name.clone(), (est.total() - truth).abs()))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (name, e) in errors {
            push(&mut out, Metric::JError, &name, e);
        }
    }
    if wants(Metric::Gap) || wants(Metric::PessValue) {
        let learned = timed(timings, "learn", || learn_policy_pair(&model, &prep.class, &prep.settings, DEFAULT_CLASS_CAP))?;
        if wants(Metric::Gap) {
            push(&mut out, Metric::Gap, "", gap_against(game, prep.optimum.value, &learned.policy));
        }
        if wants(Metric::PessValue) {
            push(&mut out, Metric::PessValue, "", learned.value.value);
        }
    }
    Ok(out)
}

/// Runs one replication cell; failures are captured in the result.
pub fn run_cell(prep: &Prepared, n: usize, seed: u64) -> CellResult {
    let mut timings = Vec::new();
    match cell_values(prep, n, seed, &mut timings) {
        Ok(values) => CellResult {
            n,
            seed,
            values,
            timings,
            error: None,
        },
        Err(e) => CellResult {
            n,
            seed,
            values: Vec::new(),
            timings,
            error: Some(e.to_string()),
        },
    }
}

/// Worker pool sized by `CONFGAME_THREADS` when set.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("CONFGAME_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool builds")
}

/// Runs every `(n, seed)` cell in the pool, ordered by `(n, seed)`.
pub fn run_grid(prep: &Prepared) -> Vec<CellResult> {
    let seeds = prep.config.seed_list();
    let grid: Vec<(usize, u64)> = prep.config.n_grid.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    thread_pool().install(|| grid.par_iter().map(|&(n, s)| run_cell(prep, n, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_cell_produces_every_metric() {
        let cfg = ExperimentConfig::new("smoke", "t1", vec![500]);
        let prep = prepare(&cfg).unwrap();
        let cell = run_cell(&prep, 500, 3);
        assert!(cell.error.is_none(), "{:?}", cell.error);
        let metrics: Vec<Metric> = cell.values.iter().map(|v| v.metric).collect();
        assert_eq!(metrics, Metric::ALL.to_vec());
        assert!(cell.values.iter().all(|v| v.value.is_finite()));
    }

    #[test]
    fn failing_cell_is_captured() {
        let cfg = ExperimentConfig::new("tiny", "t2", vec![2]);
        let prep = prepare(&cfg).unwrap();
        let cell = run_cell(&prep, 2, 1);
        assert!(cell.error.is_some());
        assert!(cell.values.is_empty());
    }

    #[test]
    fn joint_mode_matches_oracle_nuisance_on_saturated_basis() {
        let b = load_spec("t1").unwrap();
        let data = simulate_dataset(&b.game, &b.behavior, 5000, 9).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let cfg = ExperimentConfig::new("j", "t1", vec![5000]);
        let basis = basis_for(&cfg, &b.game, 5000).unwrap();
        let a = reward_coef_errors(&b.game, &cells, &basis, NuisanceMode::OracleNuisance, None).unwrap();
        let j = reward_coef_errors(&b.game, &cells, &basis, NuisanceMode::Joint, None).unwrap();
        assert!((a.0 - j.0).abs() < 1e-6 && (a.1 - j.1).abs() < 1e-6);
    }
}
