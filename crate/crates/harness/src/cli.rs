//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when a validation fails, 2 on a runtime error
//! and 64 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use confgame_core::cells::DataCells;
use confgame_core::game_model::dataset::{read_dataset, write_simulated, OfflineDataset};
use confgame_core::game_model::policy::{render_policy, PolicyClass};
use confgame_core::game_model::simulate::simulate_dataset;
use confgame_core::game_model::spec::{actor, step_label, SpecBundle, Spaces};
use confgame_core::game_model::spec_io::load_spec;
use confgame_core::game_model::validate::validate_spec;
use confgame_core::learner::{gap_against, learn_policy_pair, LearnerSettings, DEFAULT_CLASS_CAP};
use confgame_core::ope::{evaluate_cross_fitted, Model};
use confgame_core::oracle::exact_q::{exact_optimal_pair, exact_policy_value};
use confgame_core::oracle::truth::true_reward_coefficients;
use confgame_core::smd::{fit_joint, point_solver, RegionSchedule};

use crate::config::{BasisChoice, ExperimentConfig, ModeChoice};
use crate::policies::{materialize, resolve_policy_name, ClassChoice};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code when a validation check fails.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for runtime errors.
pub const EXIT_RUNTIME: i32 = 2;
/// Exit code for usage errors.
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "confgame", version, about = "Offline learning for confounded two-player turn-based games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an offline dataset and its hidden trace.
    Simulate(SimulateArgs),
    /// Fit the reward coefficients of every decision point.
    Identify(IdentifyArgs),
    /// Estimate the value of a policy pair.
    Evaluate(EvaluateArgs),
    /// Learn a policy pair by pessimistic maximisation.
    Learn(LearnArgs),
    /// Run a replication experiment and write reports.
    Benchmark(BenchmarkArgs),
    /// Run the exact checks on a game spec.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Built-in fixture name or spec file.
    #[arg(long)]
    spec: String,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Output dataset CSV; the hidden trace goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Built-in fixture name or spec file; enables oracle comparisons.
    #[arg(long)]
    spec: Option<String>,
    /// Sieve basis.
    #[arg(long, value_enum, default_value = "saturated")]
    basis: BasisArg,
    /// Nuisance handling.
    #[arg(long, value_enum, default_value = "oracle-nuisance")]
    mode: ModeArg,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum BasisArg {
    Saturated,
    TensorPolynomial,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    OracleNuisance,
    Joint,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum ClassArg {
    Auto,
    Full,
    Stationary,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum InnerArg {
    Sampled,
    Exact,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Policy CSV or built-in policy name.
    #[arg(long)]
    policy: String,
    /// Two-fold cross-fitting.
    #[arg(long)]
    cross_fit: bool,
    /// Write the estimated coefficients as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    /// Smoothness exponent.
    #[arg(long = "alpha", value_name = "ALPHA")]
    smoothness: Option<f64>,
    /// Ill-posedness exponent.
    #[arg(long = "varsigma", value_name = "VARSIGMA")]
    ill_posedness: Option<f64>,
    /// Region-size constant.
    #[arg(long = "c-eta", value_name = "C_ETA")]
    constant: Option<f64>,
}

impl ScheduleArgs {
    fn apply(&self, mut schedule: RegionSchedule) -> RegionSchedule {
        schedule.smoothness = self.smoothness.unwrap_or(schedule.smoothness);
        schedule.ill_posedness = self.ill_posedness.unwrap_or(schedule.ill_posedness);
        schedule.constant = self.constant.unwrap_or(schedule.constant);
        schedule
    }
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Policy class searched.
    #[arg(long, value_enum, default_value = "auto")]
    class: ClassArg,
    /// Inner minimisation over the regions.
    #[arg(long, value_enum, default_value = "sampled")]
    inner: InnerArg,
    /// Write the learned policy as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the fixture.
    #[arg(long)]
    spec: Option<String>,
    /// Override the sample-size grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Override the seeds (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the basis.
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    /// Override the nuisance handling.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Built-in fixture name or spec file.
    #[arg(long)]
    spec: String,
    /// Print every check as CSV.
    #[arg(long)]
    verbose: bool,
}

impl From<BasisArg> for BasisChoice {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Saturated => BasisChoice::Saturated,
            BasisArg::TensorPolynomial => BasisChoice::TensorPolynomial,
        }
    }
}

impl From<ModeArg> for ModeChoice {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OracleNuisance => ModeChoice::OracleNuisance,
            ModeArg::Joint => ModeChoice::Joint,
        }
    }
}

impl From<ClassArg> for ClassChoice {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Auto => ClassChoice::Auto,
            ClassArg::Full => ClassChoice::Full,
            ClassArg::Stationary => ClassChoice::Stationary,
        }
    }
}

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Observed spaces implied by a dataset.
pub fn infer_spaces(data: &OfflineDataset) -> Spaces {
    let mut n_states = 1;
    let mut n_private = 1;
    for t in &data.trajectories {
        n_states = n_states.max(t.terminal as usize + 1);
        for st in &t.steps {
            n_states = n_states.max(st.s.max(st.s_half) as usize + 1);
            n_private = n_private.max(st.u.max(st.u_half) as usize + 1);
        }
    }
    Spaces {
        horizon: data.horizon,
        n_states,
        n_private,
    }
}

struct Loaded {
    data: OfflineDataset,
    spaces: Spaces,
    bundle: Option<SpecBundle>,
    config: ExperimentConfig,
}

fn load(fit: &FitArgs) -> std::result::Result<Loaded, Failure> {
    let data = read_dataset(&fit.data)?;
    let bundle = fit.spec.as_deref().map(load_spec).transpose()?;
    let spaces = match &bundle {
        Some(b) => b.game.spaces(),
        None => infer_spaces(&data),
    };
    data.check(spaces)?;
    let mut config = ExperimentConfig::new("cli", fit.spec.as_deref().unwrap_or("t1"), vec![data.len().max(1)]);
    config.basis = fit.basis.into();
    config.mode = fit.mode.into();
    Ok(Loaded {
        data,
        spaces,
        bundle,
        config,
    })
}

fn basis_of(l: &Loaded) -> std::result::Result<confgame_core::sieve::SieveBasis, Failure> {
    let coords = match &l.bundle {
        Some(b) => b.game.state_coordinates(),
        None => confgame_core::game_model::spec::default_coordinates(l.spaces.n_states),
    };
    let kind = l.config.basis.into();
    let k = match kind {
        confgame_core::sieve::BasisKind::Saturated => l.spaces.cells(),
        confgame_core::sieve::BasisKind::TensorPolynomial => confgame_core::sieve::k_schedule(l.data.len(), l.config.k_constant),
    };
    Ok(confgame_core::sieve::build_basis(kind, l.spaces, &coords, k)?)
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Outcome {
    let bundle = load_spec(&a.spec)?;
    let sim = simulate_dataset(&bundle.game, &bundle.behavior, a.n, a.seeds)?;
    write_simulated(&sim, &a.out)?;
    writeln!(out, "wrote {} trajectories to {}", a.n, a.out.display())?;
    Ok(())
}

fn identify(a: &IdentifyArgs, out: &mut dyn Write) -> Outcome {
    let l = load(&a.fit)?;
    let basis = basis_of(&l)?;
    let cells = DataCells::from_dataset(l.spaces, &l.data)?;
    writeln!(out, "step,player,s,u,theta,gamma,omega")?;
    let mut errors = Vec::new();
    for (k, pc) in cells.points.iter().enumerate() {
        let fit = match l.config.mode {
            ModeChoice::OracleNuisance => point_solver(pc, &basis, false)?.fit(&pc.reward)?,
            ModeChoice::Joint => fit_joint(pc, &pc.reward, &basis, false)?.fit,
        };
        let truth = l.bundle.as_ref().map(|b| true_reward_coefficients(&b.game, k));
        let mut sup: f64 = 0.0;
        for s in 0..l.spaces.n_states {
            for u in 0..l.spaces.n_private {
                let t = fit.coefficients_at(&basis, l.spaces.cell(s, u));
                writeln!(out, "{},{},{s},{u},{},{},{}", step_label(k), actor(k).label(), t[0], t[1], t[2])?;
                if let Some(tr) = &truth {
                    let w = tr.at(s, u);
                    sup = (0..3).fold(sup, |m, r| m.max((t[r] - w[r]).abs()));
                }
            }
        }
        errors.push((k, sup));
    }
    if l.bundle.is_some() {
        writeln!(out, "\nblock,sup_error")?;
        for (k, e) in errors {
            writeln!(out, "{} reward ({}),{e:.6}", step_label(k), actor(k).label())?;
        }
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Outcome {
    let l = load(&a.fit)?;
    let basis = basis_of(&l)?;
    let target = resolve_policy_name(&a.policy, l.spaces)?;
    let policy = match (&target, &l.bundle) {
        (_, Some(b)) => materialize(&target, &b.game, &ClassChoice::Auto.resolve(l.spaces))?,
        (crate::policies::PolicyTarget::Fixed(p), None) => p.clone(),
        (crate::policies::PolicyTarget::Optimum, None) => return Err(Failure::Runtime("policy 'optimum' needs --spec".into())),
    };
    let est = if a.cross_fit {
        evaluate_cross_fitted(l.spaces, &l.data, &policy, &basis)?
    } else {
        let cells = DataCells::from_dataset(l.spaces, &l.data)?;
        Model::new(&cells, &basis)?.evaluate(&policy)?
    };
    writeln!(out, "j_alice,{}\nj_bob,{}\nj_total,{}", est.j_a, est.j_b, est.total())?;
    if let Some(b) = &l.bundle {
        let (ja, jb) = exact_policy_value(&b.game, &policy);
        writeln!(out, "oracle_total,{}\nabs_error,{}", ja + jb, (est.total() - ja - jb).abs())?;
    }
    if let Some(path) = &a.out {
        std::fs::write(path, est.qhat.to_csv())?;
    }
    Ok(())
}

fn learn(a: &LearnArgs, out: &mut dyn Write) -> Outcome {
    let l = load(&a.fit)?;
    let basis = basis_of(&l)?;
    let cells = DataCells::from_dataset(l.spaces, &l.data)?;
    let model = Model::new(&cells, &basis)?;
    let class: PolicyClass = ClassChoice::from(a.class).resolve(l.spaces);
    let settings = LearnerSettings {
        schedule: a.schedule.apply(RegionSchedule::default()),
        inner: match a.inner {
            InnerArg::Sampled => confgame_core::learner::InnerMin::default(),
            InnerArg::Exact => confgame_core::learner::InnerMin::Exact,
        },
    };
    let learned = learn_policy_pair(&model, &class, &settings, DEFAULT_CLASS_CAP)?;
    writeln!(
        out,
        "index,{}\ncandidates,{}\npessimistic_value,{}\nplug_in_value,{}",
        learned.index, learned.candidates, learned.value.value, learned.value.plug_in
    )?;
    if let Some(b) = &l.bundle {
        let opt = exact_optimal_pair(&b.game, &class)?;
        let (ja, jb) = exact_policy_value(&b.game, &learned.policy);
        writeln!(out, "oracle_value,{}\noptimal_value,{}\ngap,{}", ja + jb, opt.value, gap_against(&b.game, opt.value, &learned.policy))?;
    }
    match &a.out {
        Some(path) => std::fs::write(path, render_policy(&learned.policy))?,
        None => write!(out, "\n{}", render_policy(&learned.policy))?,
    }
    Ok(())
}

fn benchmark(a: &BenchmarkArgs, out: &mut dyn Write) -> Outcome {
    let mut cfg = ExperimentConfig::read(&a.config).map_err(|e| Failure::Validation(e.to_string()))?;
    if let Some(s) = &a.spec {
        cfg.spec = s.clone();
    }
    if let Some(n) = &a.n {
        cfg.n_grid = n.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(b) = a.basis {
        cfg.basis = b.into();
    }
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    cfg.schedule = a.schedule.apply(cfg.schedule);
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    cfg.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    let (cells, paths) = crate::run_experiment(&cfg, None)?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    writeln!(out, "cells,{}\nfailed,{}\nreport,{}", cells.len(), failed, paths.report.display())?;
    write!(out, "{}", std::fs::read_to_string(&paths.summary)?)?;
    Ok(())
}

fn validate(a: &ValidateArgs, out: &mut dyn Write) -> Outcome {
    let bundle = load_spec(&a.spec).map_err(|e| Failure::Validation(e.to_string()))?;
    bundle.check().map_err(|e| Failure::Validation(e.to_string()))?;
    let report = validate_spec(&bundle.game, &bundle.behavior)?;
    if a.verbose {
        write!(out, "{}", report.to_csv())?;
    } else {
        write!(out, "{report}")?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} checks failed", report.violations().len())))
    }
}

/// Runs the CLI on `argv`, writing output to `out` and diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Identify(a) => identify(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Learn(a) => learn(a, out),
        Command::Benchmark(a) => benchmark(a, out),
        Command::Validate(a) => validate(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Validation(m)) => {
            let _ = writeln!(err, "validation failed: {m}");
            EXIT_VALIDATION
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}
