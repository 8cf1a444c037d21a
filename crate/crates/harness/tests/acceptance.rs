//! Acceptance suite: prints one PASS or FAIL line per criterion.
//!
//! The process exits with status 0 after reporting. Set
//! `ACCEPTANCE_STRICT=1` to exit with status 1 when any criterion fails.

use std::time::{Duration, Instant};

use confgame_core::cells::DataCells;
use confgame_core::game_model::dataset::{parse_dataset, render_dataset, render_hidden};
use confgame_core::game_model::fixtures;
use confgame_core::game_model::policy::{PolicyClass, PolicyPair};
use confgame_core::game_model::simulate::simulate_dataset;
use confgame_core::game_model::spec::{actor, SpecBundle};
use confgame_core::learner::{learn_policy_pair, pessimistic_value, plan_regions, InnerMin, LearnerSettings};
use confgame_core::moments::NuisanceMode;
use confgame_core::ope::Model;
use confgame_core::oracle::exact_q::{exact_q, player_index};
use confgame_core::oracle::law::exact_joint_law;
use confgame_core::oracle::identification::{reward_system, first_step_system};
use confgame_core::oracle::truth::true_reward_coefficients;
use confgame_core::rng::{derive_seed, Purpose};
use confgame_core::sieve::{build_basis, BasisKind, SieveBasis};
use confgame_core::smd::point_solver;
use confgame_harness::config::{ExperimentConfig, Metric};
use confgame_harness::experiment::{prepare, run_grid, reward_coef_errors, thread_pool, CellResult};
use confgame_harness::report::median;
use confgame_harness::run_experiment;
use rayon::prelude::*;

const MASTER_SEED: u64 = 9001;
const T1_STAR: [f64; 3] = [1.2, 0.5, 0.25];

struct Outcome {
    pass: bool,
    detail: String,
}

fn seeds(count: usize, stream: u64) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(MASTER_SEED + stream, Purpose::Replication, i)).collect()
}

fn saturated(b: &SpecBundle) -> SieveBasis {
    build_basis(BasisKind::Saturated, b.game.spaces(), &[], 1).unwrap()
}

fn grid(spec: &str, n_grid: Vec<usize>, seeds: Vec<u64>, metrics: Vec<Metric>) -> Vec<CellResult> {
    let mut cfg = ExperimentConfig::new("acceptance", spec, n_grid);
    cfg.seeds = seeds;
    cfg.metrics = metrics;
    cfg.policies = vec!["always-1".into(), "uniform".into(), "copy".into()];
    run_grid(&prepare(&cfg).expect("experiment prepares"))
}

fn values(cells: &[CellResult], n: usize, metric: Metric) -> Vec<f64> {
    cells
        .iter()
        .filter(|c| c.n == n)
        .flat_map(|c| c.values.iter().filter(|v| v.metric == metric).map(|v| v.value))
        .collect()
}

fn failures(cells: &[CellResult]) -> usize {
    cells.iter().filter(|c| c.error.is_some()).count()
}

fn identification_exactness() -> Outcome {
    let b = fixtures::t1();
    let law = exact_joint_law(&b.game, &b.behavior).unwrap();
    let sys = first_step_system(&b.game, &law, 0, 0).unwrap();
    let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
    let basis = saturated(&b);
    let fit = point_solver(&cells.points[0], &basis, false).unwrap().fit(&cells.points[0].reward).unwrap();
    let smd = fit.coefficients_at(&basis, 0);
    let err_sys = (0..3).map(|i| (sys.solution[i] - T1_STAR[i]).abs()).fold(0.0, f64::max);
    let err_smd = (0..3).map(|i| (smd[i] - T1_STAR[i]).abs()).fold(0.0, f64::max);
    Outcome {
        pass: err_sys <= 1e-8 && err_smd <= 1e-8,
        detail: format!("linear system error {err_sys:.1e}, population SMD error {err_smd:.1e}"),
    }
}

fn finite_sample_recovery() -> Outcome {
    let b = fixtures::t1();
    let basis = saturated(&b);
    let errors: Vec<f64> = thread_pool().install(|| {
        seeds(50, 2)
            .par_iter()
            .map(|&s| {
                let sim = simulate_dataset(&b.game, &b.behavior, 100_000, s).unwrap();
                let cells = DataCells::from_dataset(b.game.spaces(), &sim.observed).unwrap();
                reward_coef_errors(&b.game, &cells, &basis, NuisanceMode::OracleNuisance, None).unwrap().1
            })
            .collect()
    });
    let share = errors.iter().filter(|e| **e <= 0.05).count() as f64 / errors.len() as f64;
    Outcome {
        pass: share >= 0.95,
        detail: format!("sup error <= 0.05 in {:.0}% of 50 replications (median {:.4})", 100.0 * share, median(&errors)),
    }
}

fn slope(ns: &[usize], ys: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ls.iter().sum::<f64>() / ls.len() as f64;
    let num: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn rate_slope() -> Outcome {
    let ns = [1_000, 4_000, 16_000, 64_000];
    let cells = grid("t1", ns.to_vec(), seeds(50, 3), vec![Metric::RmseTheta]);
    let medians: Vec<f64> = ns.iter().map(|&n| median(&values(&cells, n, Metric::RmseTheta))).collect();
    let s = slope(&ns, &medians);
    Outcome {
        pass: s <= -0.25 && failures(&cells) == 0,
        detail: format!("log-log slope {s:.3}, medians {:?}", medians.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()),
    }
}

fn identity_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let b = fixtures::random_fixture(MASTER_SEED, i, 1 + (i as usize % 2));
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        for k in 0..b.game.spaces().points() {
            let truth = true_reward_coefficients(&b.game, k);
            for s in 0..b.game.n_states {
                for u in 0..b.game.n_private {
                    let sys = reward_system(&b.game, law.point(k), k, s, u).unwrap();
                    worst = sys.residuals(&truth.at(s, u)).iter().fold(worst, |m, r| m.max(r.abs()));
                }
            }
        }
    }
    let b = fixtures::negative_control();
    let basis = saturated(&b);
    let sp = b.game.spaces();
    let fits: Vec<Vec<[f64; 4]>> = seeds(10, 4)
        .par_iter()
        .map(|&s| {
            let sim = simulate_dataset(&b.game, &b.behavior, 100_000, s).unwrap();
            let cells = DataCells::from_dataset(sp, &sim.observed).unwrap();
            let pc = &cells.points[0];
            let fit = point_solver(pc, &basis, false).unwrap().fit(&pc.reward).unwrap();
            (0..sp.cells()).map(|c| fit.coefficients_at(&basis, c)).collect()
        })
        .collect();
    let truth = true_reward_coefficients(&b.game, 0);
    let mut bias: f64 = 0.0;
    for s in 0..sp.n_states {
        for u in 0..sp.n_private {
            let want = truth.at(s, u);
            for r in 0..3 {
                let mean = fits.iter().map(|f| f[sp.cell(s, u)][r]).sum::<f64>() / fits.len() as f64;
                bias = bias.max((mean - want[r]).abs());
            }
        }
    }
    Outcome {
        pass: worst <= 1e-10 && bias >= 0.01,
        detail: format!("largest identity residual {worst:.1e} on 5 fixtures, negative-control bias {bias:.4}"),
    }
}

fn coverage() -> Outcome {
    let cells = grid("t1", vec![4_000, 10_000, 16_000], seeds(200, 5), vec![Metric::Coverage]);
    let rate = |n| {
        let v = values(&cells, n, Metric::Coverage);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (c4, c10, c16) = (rate(4_000), rate(10_000), rate(16_000));
    Outcome {
        pass: c10 >= 0.85 && c4 <= c16 && failures(&cells) == 0,
        detail: format!("coverage {c4:.3} at n=4000, {c10:.3} at n=10000, {c16:.3} at n=16000"),
    }
}

fn ope_accuracy() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (spec, tol) in [("t1", 0.05), ("t2", 0.1)] {
        let cells = grid(spec, vec![100_000], seeds(1, 6), vec![Metric::JError]);
        let errs = values(&cells, 100_000, Metric::JError);
        let worst = errs.iter().fold(0.0f64, |m, e| m.max(*e));
        pass &= errs.len() == 3 && worst <= tol;
        parts.push(format!("{spec} worst |J error| {worst:.4} (tolerance {tol})"));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn regret_trend() -> Outcome {
    let ns = [1_000, 4_000, 16_000, 64_000];
    let cells = grid("t1", ns.to_vec(), seeds(50, 7), vec![Metric::Gap]);
    let medians: Vec<f64> = ns.iter().map(|&n| median(&values(&cells, n, Metric::Gap))).collect();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    Outcome {
        pass: monotone && medians[3] <= 0.1 && failures(&cells) == 0,
        detail: format!("median gaps {medians:?}"),
    }
}

fn horizon_envelope() -> Outcome {
    let gaps: Vec<f64> = (1..=3)
        .map(|h| {
            let cells = grid(&format!("t2-h{h}"), vec![16_000], seeds(50, 8), vec![Metric::Gap]);
            median(&values(&cells, 16_000, Metric::Gap))
        })
        .collect();
    let pass = (2..=3).all(|h| gaps[h - 1] <= 1.5 * (h * h) as f64 * gaps[0]);
    Outcome {
        pass,
        detail: format!("median gaps for H = 1, 2, 3: {:.4}, {:.4}, {:.4}", gaps[0], gaps[1], gaps[2]),
    }
}

fn fitted_model(b: &SpecBundle, n: usize, seed: u64) -> (DataCells, Model) {
    let sim = simulate_dataset(&b.game, &b.behavior, n, seed).unwrap();
    let cells = DataCells::from_dataset(b.game.spaces(), &sim.observed).unwrap();
    let model = Model::new(&cells, &saturated(b)).unwrap();
    (cells, model)
}

fn structural_invariants() -> Outcome {
    let cases: Vec<(SpecBundle, PolicyClass, u64)> = seeds(30, 9)
        .into_iter()
        .map(|s| (fixtures::t1(), PolicyClass::FullDeterministic, s))
        .chain(seeds(10, 10).into_iter().map(|s| (fixtures::t2(2), PolicyClass::Stationary, s)))
        .collect();
    let checks: Vec<(usize, usize, bool)> = cases
        .par_iter()
        .map(|(b, class, seed)| {
            let (cells, model) = fitted_model(b, 4_000, *seed);
            let sp = b.game.spaces();
            let members = class.enumerate(sp, 4096).unwrap();
            let mut violations = 0;
            for inner in [InnerMin::default(), InnerMin::Exact] {
                let s = LearnerSettings { inner, ..Default::default() };
                let plan = plan_regions(&model, &s);
                violations += members.iter().filter(|p| {
                    let v = pessimistic_value(&model, p, &plan, inner);
                    v.value > v.plug_in
                })
                .count();
            }
            let s = LearnerSettings::default();
            let base = learn_policy_pair(&model, class, &s, 4096).unwrap();
            let mut invariant = true;
            for c in [2.0, 0.5, 3.0] {
                let scaled = Model::new(&cells.scaled_rewards(c), &saturated(b)).unwrap();
                let l = learn_policy_pair(&scaled, class, &s, 4096).unwrap();
                invariant &= l.index == base.index;
                if c != 3.0 {
                    invariant &= l.value.value == c * base.value.value;
                }
            }
            (members.len() * 2, violations, invariant)
        })
        .collect();
    let probes: usize = checks.iter().map(|c| c.0).sum();
    let violations: usize = checks.iter().map(|c| c.1).sum();
    let invariance = checks.iter().all(|c| c.2);

    let mut bilinear_err: f64 = 0.0;
    for b in [fixtures::t2(3), fixtures::random_fixture(MASTER_SEED, 11, 2)] {
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let model = Model::new(&cells, &saturated(&b)).unwrap();
        let sp = b.game.spaces();
        let pol = PolicyPair::from_fns(sp, 0.4, |h, s, _, z| if (h + s) % 2 == 0 { z as f64 } else { 0.7 }, |_, s, a| 0.2 + 0.3 * (s as f64) + 0.3 * a as f64);
        let qhat = model.recursion(&pol);
        let truth = exact_q(&b.game, &pol);
        for k in 0..sp.points() {
            for p in [actor(k), actor(k + 1)] {
                for c in 0..sp.cells() {
                    let e = qhat.q[k][player_index(p)][c];
                    let t = truth.marginal[k][player_index(p)][c];
                    for (x, z) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                        bilinear_err = bilinear_err.max((e.eval(x, z) - t.eval(x, z)).abs());
                    }
                }
            }
        }
    }

    let b = fixtures::t2(2);
    let s1 = simulate_dataset(&b.game, &b.behavior, 2_000, 5).unwrap();
    let s2 = simulate_dataset(&b.game, &b.behavior, 2_000, 5).unwrap();
    let text = render_dataset(&s1.observed);
    let round_trip = parse_dataset(&text).map(|d| render_dataset(&d) == text && d == s1.observed).unwrap_or(false);
    let simulation_deterministic = text == render_dataset(&s2.observed) && render_hidden(&s1.hidden) == render_hidden(&s2.hidden);
    let mut cfg = ExperimentConfig::new("determinism", "t1", vec![500, 1_000]);
    cfg.replications = 3;
    let (a, bdir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&cfg, Some(a.path())).unwrap().1;
    let rb = run_experiment(&cfg, Some(bdir.path())).unwrap().1;
    let reports_identical = std::fs::read(&ra.report).unwrap() == std::fs::read(&rb.report).unwrap()
        && std::fs::read(&ra.summary).unwrap() == std::fs::read(&rb.summary).unwrap();

    Outcome {
        pass: violations == 0 && invariance && bilinear_err <= 1e-8 && round_trip && simulation_deterministic && reports_identical,
        detail: format!(
            "pessimism violations {violations}/{probes}, scaling invariance {invariance}, stage-wise bilinear error {bilinear_err:.1e}, \
             round trip {round_trip}, deterministic simulation {simulation_deterministic}, identical reports {reports_identical}"
        ),
    }
}

/// Name, runtime limit and check of one criterion.
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("identification exactness", Duration::from_secs(1), identification_exactness),
        ("finite-sample recovery", Duration::from_secs(120), finite_sample_recovery),
        ("rate slope", Duration::from_secs(300), rate_slope),
        ("identity suite and negative control", Duration::from_secs(60), identity_suite),
        ("confidence-region coverage", Duration::from_secs(300), coverage),
        ("off-policy evaluation accuracy", Duration::from_secs(180), ope_accuracy),
        ("regret trend", Duration::from_secs(600), regret_trend),
        ("horizon envelope", Duration::from_secs(600), horizon_envelope),
        ("structural invariants", Duration::from_secs(600), structural_invariants),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= *limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {}. {}: {} [{:.2} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
