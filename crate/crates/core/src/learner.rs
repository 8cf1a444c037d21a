//! Pessimistic policy learning over loss-gap confidence regions.
//!
//! Every block of the backward recursion owns a region: reward blocks are
//! policy-free, continuation blocks are centred at the fit of the
//! policy-contracted pseudo-outcome of an upstream member. The value of a
//! policy pair is minimised over the nested union of these regions, either
//! by sampling upstream members along principal axes and solving the first
//! point in closed form, or exactly by pulling the linear objective back
//! through the recursion.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::bilinear::Bilinear;
use crate::error::{Error, Result};
use crate::game_model::policy::{PolicyClass, PolicyPair};
use crate::game_model::spec::{actor, step_index, GameSpec, Player};
use crate::ope::{Block, Model, PLAYERS};
use crate::oracle::exact_q::{exact_optimal_pair, exact_policy_value, exact_q, player_index};
use crate::oracle::truth::{continuation_truth, true_reward_coefficients};
use crate::sieve::{Projector, SieveBasis};
use crate::smd::{horizon_weight, ConfidenceRegion, RegionSchedule};

/// Default number of sampled members per region.
pub const DEFAULT_MEMBERS: usize = 16;
/// Default cap on the size of an enumerated policy class.
pub const DEFAULT_CLASS_CAP: u128 = 4096;

/// How the minimum over the nested union of regions is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMin {
    /// Upstream members sampled along principal axes; first point solved in closed form.
    Sampled { members: usize },
    /// Closed-form minimum through the adjoint of the recursion.
    Exact,
}

impl Default for InnerMin {
    fn default() -> Self {
        InnerMin::Sampled { members: DEFAULT_MEMBERS }
    }
}

/// Region sizes and inner-minimisation settings of the learner.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LearnerSettings {
    pub schedule: RegionSchedule,
    pub inner: InnerMin,
}

/// Policy-independent region data for every point of a fitted model.
#[derive(Debug, Clone)]
pub struct RegionPlan {
    /// Region size of each point's reward block.
    pub reward_size: Vec<f64>,
    /// Region size of each point's continuation blocks.
    pub continuation_size: Vec<f64>,
    reward_offsets: Vec<Vec<DVector<f64>>>,
    continuation_offsets: Vec<Vec<DVector<f64>>>,
    members: usize,
}

/// Computes the region sizes and sampled members of every block.
pub fn plan_regions(model: &Model, settings: &LearnerSettings) -> RegionPlan {
    let horizon = model.spaces.horizon;
    let scale = model.mean_sq_reward;
    let members = match settings.inner {
        InnerMin::Sampled { members } => members.max(1),
        InnerMin::Exact => 1,
    };
    let mut plan = RegionPlan {
        reward_size: Vec::new(),
        continuation_size: Vec::new(),
        reward_offsets: Vec::new(),
        continuation_offsets: Vec::new(),
        members,
    };
    for (k, pm) in model.points.iter().enumerate() {
        let er = settings.schedule.size(model.n, 1.0, scale);
        let ec = settings.schedule.size(model.n, horizon_weight(horizon, step_index(k) + 1), scale);
        plan.reward_offsets.push(pm.reward.geometry.sample_offsets(er, members));
        plan.continuation_offsets.push(match &pm.continuation {
            Some(s) => s.geometry.sample_offsets(ec, members),
            None => Vec::new(),
        });
        plan.reward_size.push(er);
        plan.continuation_size.push(ec);
    }
    plan
}

/// Confidence regions of every block for one policy pair, centred at the plug-in chain.
#[derive(Debug, Clone)]
pub struct QRegions {
    /// Reward region of each point.
    pub reward: Vec<ConfidenceRegion>,
    /// `continuation[k][player]` holds the `[instrument, action, interaction]` regions.
    pub continuation: Vec<[Vec<ConfidenceRegion>; 2]>,
}

/// Builds the block regions of a policy pair around the plug-in recursion.
pub fn build_q_regions(model: &Model, policy: &PolicyPair, plan: &RegionPlan) -> QRegions {
    let qhat = model.recursion(policy);
    let mut reward = Vec::new();
    let mut continuation = Vec::new();
    for (k, pm) in model.points.iter().enumerate() {
        reward.push(pm.reward.region(&pm.reward_fit, plan.reward_size[k]));
        let per = PLAYERS.map(|p| match &pm.continuation {
            Some(solver) => model
                .continuation_centers(k, &qhat.q[k + 1][player_index(p)], policy)
                .into_iter()
                .map(|c| ConfidenceRegion {
                    center: DVector::from_vec(c),
                    size: plan.continuation_size[k],
                    geometry: solver.geometry.clone(),
                })
                .collect(),
            None => Vec::new(),
        });
        continuation.push(per);
    }
    QRegions { reward, continuation }
}

/// Lower confidence bound on `J_A + J_B` for one policy pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PessimisticValue {
    /// Minimum over the nested regions, `−∞` when unbounded.
    pub value: f64,
    /// Plug-in estimate `Ĵ_A + Ĵ_B`.
    pub plug_in: f64,
    /// Number of upstream chains evaluated.
    pub chains: usize,
    /// Chain attaining the minimum.
    pub argmin_chain: usize,
    /// Direction of unboundedness, if any.
    pub unbounded: Option<Vec<f64>>,
}

fn width(geometry: &crate::smd::RegionGeometry, weights: &[f64], size: f64) -> Result<f64> {
    Ok(geometry.min_offset(weights, size)?.0)
}

fn stage_widths(model: &Model, policy: &PolicyPair, plan: &RegionPlan, exact: bool) -> Result<f64> {
    let initial_weights = model.value_weights(policy);
    let points = if exact { model.spaces.points() } else { 1 };
    let mut total = 0.0;
    for p in PLAYERS {
        let mut cell_weights = initial_weights.clone();
        for k in 0..points {
            let pm = &model.points[k];
            if actor(k) == p {
                total += width(&pm.reward.geometry, &model.block_weights(Block::Reward, &cell_weights), plan.reward_size[k])?;
            }
            let Some(solver) = &pm.continuation else { break };
            let bw: Vec<Vec<f64>> = Block::CONTINUATION.iter().map(|b| model.block_weights(*b, &cell_weights)).collect();
            for w in &bw {
                total += width(&solver.geometry, w, plan.continuation_size[k])?;
            }
            if k + 1 < points {
                cell_weights = model.pull_back(k, &bw, policy);
            }
        }
    }
    Ok(total)
}

fn chain_value(model: &Model, policy: &PolicyPair, plan: &RegionPlan, chain: usize) -> f64 {
    let offset = |k: usize, _p: Player, block: Block| -> Option<DVector<f64>> {
        if k == 0 {
            return None;
        }
        let list = if block == Block::Reward { &plan.reward_offsets[k] } else { &plan.continuation_offsets[k] };
        list.get(chain).cloned()
    };
    let q = model.recursion_with(policy, &offset);
    let w = model.value_weights(policy);
    model.value(&q.q[0][0], &w) + model.value(&q.q[0][1], &w)
}

/// Pessimistic value of a policy pair.
pub fn pessimistic_value(model: &Model, policy: &PolicyPair, plan: &RegionPlan, inner: InnerMin) -> PessimisticValue {
    let eval_w = model.value_weights(policy);
    let plug_q = model.recursion(policy);
    let plug_in = model.value(&plug_q.q[0][0], &eval_w) + model.value(&plug_q.q[0][1], &eval_w);
    let exact = inner == InnerMin::Exact;
    let widths = match stage_widths(model, policy, plan, exact) {
        Ok(w) => w,
        Err(Error::UnboundedBelow { direction }) => {
            return PessimisticValue {
                value: f64::NEG_INFINITY,
                plug_in,
                chains: 0,
                argmin_chain: 0,
                unbounded: Some(direction),
            }
        }
        Err(_) => f64::NEG_INFINITY,
    };
    if exact {
        return PessimisticValue {
            value: plug_in + widths,
            plug_in,
            chains: 1,
            argmin_chain: 0,
            unbounded: None,
        };
    }
    let chains = plan
        .reward_offsets
        .iter()
        .chain(&plan.continuation_offsets)
        .map(|o| o.len())
        .max()
        .unwrap_or(1)
        .min(plan.members)
        .max(1);
    let chains = if model.spaces.points() > 1 { chains } else { 1 };
    let mut best = (plug_in, 0);
    for i in 1..chains {
        let v = chain_value(model, policy, plan, i);
        if v < best.0 {
            best = (v, i);
        }
    }
    PessimisticValue {
        value: best.0 + widths,
        plug_in,
        chains,
        argmin_chain: best.1,
        unbounded: None,
    }
}

/// Learned policy pair and its pessimistic value.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicy {
    pub policy: PolicyPair,
    /// Position of the policy in the enumerated class.
    pub index: usize,
    pub value: PessimisticValue,
    /// Number of candidates evaluated.
    pub candidates: usize,
}

/// Maximises the pessimistic value over an enumerated policy class; ties go
/// to the earliest member.
pub fn learn_policy_pair(model: &Model, class: &PolicyClass, settings: &LearnerSettings, cap: u128) -> Result<LearnedPolicy> {
    let members = class.enumerate(model.spaces, cap)?;
    if members.is_empty() {
        return Err(Error::EmptyClass);
    }
    let plan = plan_regions(model, settings);
    let values: Vec<PessimisticValue> = members.par_iter().map(|p| pessimistic_value(model, p, &plan, settings.inner)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.value > values[best].value {
            best = i;
        }
    }
    Ok(LearnedPolicy {
        policy: members[best].clone(),
        index: best,
        value: values[best].clone(),
        candidates: members.len(),
    })
}

/// Regret `J(optimum) − J(learned)` against the in-class optimum.
pub fn compute_gap(game: &GameSpec, class: &PolicyClass, learned: &PolicyPair) -> Result<f64> {
    let opt = exact_optimal_pair(game, class)?;
    Ok(gap_against(game, opt.value, learned))
}

/// Regret of `learned` against a known optimal value.
pub fn gap_against(game: &GameSpec, optimum: f64, learned: &PolicyPair) -> f64 {
    let (ja, jb) = exact_policy_value(game, learned);
    optimum - (ja + jb)
}

/// Outcome of checking that true coefficients lie in their regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCheck {
    /// Alice's first reward block truth is in its region.
    pub alice_reward: bool,
    /// Every block on the chain defining Bob's first-point value contains its truth.
    pub bob_first: bool,
    /// Largest ratio of loss gap to region size over the checked blocks.
    pub worst_ratio: f64,
}

impl CoverageCheck {
    /// Both events hold.
    pub fn joint(&self) -> bool {
        self.alice_reward && self.bob_first
    }
}

fn coefficients_of(basis: &SieveBasis, per_cell: &[[f64; 4]], params: usize) -> Vec<f64> {
    let uniform = vec![1.0; basis.spaces.cells()];
    let projector = Projector::new(basis, &uniform);
    let mut out = Vec::with_capacity(params * basis.k());
    for p in 0..params {
        let values: Vec<f64> = per_cell.iter().map(|v| v[p]).collect();
        out.extend(projector.coefficients(&values));
    }
    out
}

fn gap_ratio(region: &ConfidenceRegion, coefs: &[f64]) -> Result<f64> {
    let gap = region.loss_gap(coefs)?;
    Ok(if region.size > 0.0 {
        gap / region.size
    } else if gap <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// Checks region membership of the true coefficients of Alice's first reward
/// block and of every block feeding Bob's first-point action value.
///
/// Each continuation block is re-centred at the fit of the pseudo-outcome
/// built from the true upstream value, so membership of every block implies
/// that the true first-point value lies in the nested region.
pub fn coverage_certificate(model: &Model, game: &GameSpec, policy: &PolicyPair, plan: &RegionPlan) -> Result<CoverageCheck> {
    let sp = model.spaces;
    let basis = &model.basis;
    let truth = exact_q(game, policy);
    let reward_truth = |k: usize| -> Vec<f64> {
        let t = true_reward_coefficients(game, k);
        let per: Vec<[f64; 4]> = (0..sp.cells())
            .map(|c| {
                let v = t.at(c / sp.n_private, c % sp.n_private);
                [v[0], v[1], v[2], 0.0]
            })
            .collect();
        coefficients_of(basis, &per, 3)
    };
    let alice_ratio = gap_ratio(&model.points[0].reward.region(&model.points[0].reward_fit, plan.reward_size[0]), &reward_truth(0))?;
    let mut bob_ratio: f64 = 0.0;
    let pb = player_index(Player::Bob);
    for k in 0..sp.points() {
        let pm = &model.points[k];
        if actor(k) == Player::Bob {
            let region = pm.reward.region(&pm.reward_fit, plan.reward_size[k]);
            bob_ratio = bob_ratio.max(gap_ratio(&region, &reward_truth(k))?);
        }
        let Some(solver) = &pm.continuation else { continue };
        let next: &Vec<Bilinear> = &truth.marginal[k + 1][pb];
        let p = |c: usize, x: u8| model.target_prob(policy, k + 1, c, x);
        let cell = |s: usize, u: usize| sp.cell(s, u);
        let ys = model.pseudo_outcomes(k, next, policy);
        let truths = [
            continuation_truth(game, k, |s, u, _| next[cell(s, u)].iv),
            continuation_truth(game, k, |s, u, x| next[cell(s, u)].act * p(cell(s, u), x) + next[cell(s, u)].level),
            continuation_truth(game, k, |s, u, _| next[cell(s, u)].int * p(cell(s, u), 1)),
        ];
        for (y, t) in ys.iter().zip(&truths) {
            let region = ConfidenceRegion {
                center: DVector::from_vec(solver.center(y)),
                size: plan.continuation_size[k],
                geometry: solver.geometry.clone(),
            };
            let per: Vec<[f64; 4]> = t.iter().map(|b| b.to_array()).collect();
            bob_ratio = bob_ratio.max(gap_ratio(&region, &coefficients_of(basis, &per, 4))?);
        }
    }
    Ok(CoverageCheck {
        alice_reward: alice_ratio <= 1.0,
        bob_first: bob_ratio <= 1.0,
        worst_ratio: alice_ratio.max(bob_ratio),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::DataCells;
    use crate::game_model::fixtures;
    use crate::game_model::simulate::simulate_dataset;
    use crate::game_model::spec::Spaces;
    use crate::sieve::{build_basis, BasisKind};

    fn saturated(spaces: Spaces) -> SieveBasis {
        build_basis(BasisKind::Saturated, spaces, &[], 1).unwrap()
    }

    fn model_for(bundle: &crate::game_model::spec::SpecBundle, n: usize, seed: u64) -> Model {
        let data = simulate_dataset(&bundle.game, &bundle.behavior, n, seed).unwrap();
        let cells = DataCells::from_dataset(bundle.game.spaces(), &data.observed).unwrap();
        Model::new(&cells, &saturated(bundle.game.spaces())).unwrap()
    }

    fn settings(constant: f64, inner: InnerMin) -> LearnerSettings {
        LearnerSettings {
            schedule: RegionSchedule { constant, ..Default::default() },
            inner,
        }
    }

    #[test]
    fn zero_size_gives_the_plug_in_value() {
        let b = fixtures::t2(2);
        let model = model_for(&b, 4000, 1);
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 0.0);
        for inner in [InnerMin::Exact, InnerMin::default()] {
            let s = settings(0.0, inner);
            let plan = plan_regions(&model, &s);
            let v = pessimistic_value(&model, &pol, &plan, inner);
            assert!((v.value - v.plug_in).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn value_is_pessimistic_and_monotone_in_size() {
        let b = fixtures::t2(2);
        let model = model_for(&b, 4000, 2);
        let pols = PolicyClass::Stationary.enumerate(b.game.spaces(), 4096).unwrap();
        for inner in [InnerMin::Exact, InnerMin::default()] {
            let small = plan_regions(&model, &settings(1.0, inner));
            let large = plan_regions(&model, &settings(2.0, inner));
            for pol in pols.iter().step_by(37) {
                let v1 = pessimistic_value(&model, pol, &small, inner);
                let v2 = pessimistic_value(&model, pol, &large, inner);
                assert!(v1.value <= v1.plug_in + 1e-12);
                assert!(v2.value <= v1.value + 1e-12);
            }
        }
    }

    #[test]
    fn exact_inner_min_is_below_sampled() {
        let b = fixtures::t2(2);
        let model = model_for(&b, 4000, 3);
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 1.0);
        let s = settings(2.0, InnerMin::Exact);
        let plan = plan_regions(&model, &s);
        let exact = pessimistic_value(&model, &pol, &plan, InnerMin::Exact);
        let sampled = pessimistic_value(&model, &pol, &plan_regions(&model, &settings(2.0, InnerMin::default())), InnerMin::default());
        assert!(exact.value <= sampled.value + 1e-12);
    }

    #[test]
    fn centres_belong_to_their_regions() {
        let b = fixtures::t1();
        let model = model_for(&b, 10_000, 4);
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 1.0);
        let plan = plan_regions(&model, &LearnerSettings::default());
        let regions = build_q_regions(&model, &pol, &plan);
        for r in regions.reward.iter().chain(regions.continuation.iter().flat_map(|c| c.iter().flatten())) {
            assert!(r.contains(r.center.as_slice()).unwrap());
        }
    }

    #[test]
    fn single_member_class_returns_it() {
        let b = fixtures::t1();
        let model = model_for(&b, 2000, 5);
        let pol = PolicyPair::constant(b.game.spaces(), 1.0, 0.0, 1.0);
        let learned = learn_policy_pair(&model, &PolicyClass::Explicit(vec![pol.clone()]), &LearnerSettings::default(), 4096).unwrap();
        assert_eq!(learned.policy, pol);
        assert!(matches!(
            learn_policy_pair(&model, &PolicyClass::Explicit(vec![]), &LearnerSettings::default(), 4096),
            Err(Error::EmptyClass)
        ));
    }

    #[test]
    fn zero_rewards_pick_the_first_member() {
        let b = fixtures::zero_rewards(fixtures::t1());
        let model = model_for(&b, 2000, 6);
        let learned = learn_policy_pair(&model, &PolicyClass::FullDeterministic, &LearnerSettings::default(), 4096).unwrap();
        assert_eq!(learned.index, 0);
        assert_eq!(learned.value.value, 0.0);
        assert_eq!(compute_gap(&b.game, &PolicyClass::FullDeterministic, &learned.policy).unwrap(), 0.0);
    }

    #[test]
    fn scaling_rewards_scales_values_and_keeps_the_argmax() {
        let b = fixtures::t2(1);
        let data = simulate_dataset(&b.game, &b.behavior, 3000, 7).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let basis = saturated(b.game.spaces());
        let m1 = Model::new(&cells, &basis).unwrap();
        let m2 = Model::new(&cells.scaled_rewards(2.0), &basis).unwrap();
        let s = LearnerSettings::default();
        let l1 = learn_policy_pair(&m1, &PolicyClass::Stationary, &s, 4096).unwrap();
        let l2 = learn_policy_pair(&m2, &PolicyClass::Stationary, &s, 4096).unwrap();
        assert_eq!(l1.index, l2.index);
        assert_eq!(2.0 * l1.value.value, l2.value.value);
    }

    #[test]
    fn gap_of_the_optimum_is_zero_and_positive_otherwise() {
        let b = fixtures::t1();
        let class = PolicyClass::FullDeterministic;
        let opt = exact_optimal_pair(&b.game, &class).unwrap();
        assert!(compute_gap(&b.game, &class, &opt.policy).unwrap().abs() < 1e-12);
        let lazy = PolicyPair::constant(b.game.spaces(), 1.0, 0.0, 1.0);
        let (ja, jb) = exact_policy_value(&b.game, &lazy);
        let gap = compute_gap(&b.game, &class, &lazy).unwrap();
        assert!((gap - (opt.value - ja - jb)).abs() < 1e-12 && gap > 0.0);
    }

    #[test]
    fn population_certificate_holds_with_zero_size() {
        let b = fixtures::t2(2);
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let model = Model::new(&cells, &saturated(b.game.spaces())).unwrap();
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 1.0);
        let plan = plan_regions(&model, &LearnerSettings::default());
        let c = coverage_certificate(&model, &b.game, &pol, &plan).unwrap();
        assert!(c.joint(), "{c:?}");
    }
}
