//! Off-policy evaluation by backward composition of minimum-distance fits.
//!
//! At every decision point `k` each player's action value is bilinear in the
//! current action `x` and instrument `z`. The next point's value, averaged
//! over the next actor's target rule `p(s', u', x)`, equals
//! `act'·p(x) + iv'·x + int'·x·p(1) + level'`. It is split into three
//! pseudo-outcome blocks, each fitted through the point's moment system:
//!
//! * instrument block, outcome `iv'(s', u')`, multiplied by `x` after fitting,
//! * action block, outcome `act'·p(s', u', x) + level'`,
//! * interaction block, outcome `int'·p(s', u', 1)`, multiplied by `x`.
//!
//! The actor's own reward block is added at its points. The policy value is
//! the exact expectation of the first point's coefficients under the target
//! rule and the empirical law of the first state.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::bilinear::Bilinear;
use crate::cells::{sub_parts, DataCells, PointCells};
use crate::error::{Error, Result};
use crate::game_model::dataset::OfflineDataset;
use crate::game_model::policy::PolicyPair;
use crate::game_model::spec::{actor, step_label, Player, Spaces};
use crate::oracle::exact_q::player_index;
use crate::sieve::SieveBasis;
use crate::smd::{functional_weights, point_solver, coefficients_at, BlockSolver, SmdFit};

/// Both players, in per-player array order.
pub const PLAYERS: [Player; 2] = [Player::Alice, Player::Bob];

/// A fitted block of one decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    /// The actor's reward.
    Reward,
    /// Pseudo-outcome `iv'`, multiplied by the action.
    Instrument,
    /// Pseudo-outcome `act'·p + level'`.
    Action,
    /// Pseudo-outcome `int'·p(1)`, multiplied by the action.
    Interaction,
}

impl Block {
    /// Continuation blocks in storage order.
    pub const CONTINUATION: [Block; 3] = [Block::Instrument, Block::Action, Block::Interaction];

    /// Short name used in diagnostics.
    pub fn name(self) -> &'static str {
        match self {
            Block::Reward => "reward",
            Block::Instrument => "instrument",
            Block::Action => "action",
            Block::Interaction => "interaction",
        }
    }

    /// Maps weights on the combined `(act, iv, int, level)` coefficients to weights on this block's coefficients.
    pub fn adjoint(self, cell_weights: [f64; 4]) -> [f64; 4] {
        let [act, iv, int, level] = cell_weights;
        match self {
            Block::Reward => [act, iv, int, 0.0],
            Block::Instrument | Block::Interaction => [act, int, int, act],
            Block::Action => [act, iv, int, level],
        }
    }
}

/// Fitted solvers of one decision point.
#[derive(Debug, Clone)]
pub struct PointModel {
    pub cells: PointCells,
    /// Reward-block solver (no intercept).
    pub reward: BlockSolver,
    /// Reward-block fit of the actor's logged reward.
    pub reward_fit: SmdFit,
    /// Continuation solver shared by every pseudo-outcome block; absent at the last point.
    pub continuation: Option<BlockSolver>,
}

/// Every policy-independent ingredient of the recursion for one dataset.
#[derive(Debug, Clone)]
pub struct Model {
    pub spaces: Spaces,
    pub basis: SieveBasis,
    pub points: Vec<PointModel>,
    /// Empirical law of the first `(s, u)` cell.
    pub initial: Vec<f64>,
    /// Sample size (infinite for population laws).
    pub n: f64,
    /// Mean squared logged reward.
    pub mean_sq_reward: f64,
}

/// Estimated action values at every point for both players.
#[derive(Debug, Clone, PartialEq)]
pub struct QHat {
    pub spaces: Spaces,
    /// `q[k][player][cell]` in role coordinates.
    pub q: Vec<[Vec<Bilinear>; 2]>,
}

impl QHat {
    /// Coefficients of `player` at point `k` and cell `(s, u)`.
    pub fn at(&self, k: usize, player: Player, s: usize, u: usize) -> Bilinear {
        self.q[k][player_index(player)][self.spaces.cell(s, u)]
    }

    /// CSV dump with header `step,player,s,u,theta,gamma,omega,level`, where
    /// the `theta`, `gamma` and `omega` columns multiply Alice's action, Bob's action and
    /// their product.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,player,s,u,theta,gamma,omega,level\n");
        for (k, per_player) in self.q.iter().enumerate() {
            for p in PLAYERS {
                for s in 0..self.spaces.n_states {
                    for u in 0..self.spaces.n_private {
                        let c = per_player[player_index(p)][self.spaces.cell(s, u)].canonical(actor(k));
                        out.push_str(&format!("{},{},{},{},{},{},{},{}\n", step_label(k), p.label(), s, u, c[0], c[1], c[2], c[3]));
                    }
                }
            }
        }
        out
    }
}

/// Result of one policy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub qhat: QHat,
    pub j_a: f64,
    pub j_b: f64,
}

impl Evaluation {
    /// `Ĵ_A + Ĵ_B`.
    pub fn total(&self) -> f64 {
        self.j_a + self.j_b
    }
}

impl Model {
    /// Fits every policy-independent solver.
    pub fn new(cells: &DataCells, basis: &SieveBasis) -> Result<Model> {
        let spaces = cells.spaces;
        let points: Vec<PointModel> = cells
            .points
            .par_iter()
            .map(|pc| {
                let tag = |e: Error, block: &str| e.at_stage(step_label(pc.k), pc.actor().label(), block);
                let reward = point_solver(pc, basis, false).map_err(|e| tag(e, "reward"))?;
                let reward_fit = reward.fit(&pc.reward).map_err(|e| tag(e, "reward"))?;
                let continuation = if pc.has_next() {
                    Some(point_solver(pc, basis, true).map_err(|e| tag(e, "continuation"))?)
                } else {
                    None
                };
                Ok(PointModel {
                    cells: pc.clone(),
                    reward,
                    reward_fit,
                    continuation,
                })
            })
            .collect::<Result<_>>()?;
        let initial = cells.points[0].cell_weights();
        Ok(Model {
            spaces,
            basis: basis.clone(),
            points,
            initial,
            n: cells.sample_size(),
            mean_sq_reward: cells.mean_sq_reward,
        })
    }

    /// Per-cell role coefficients of parameter-major sieve coefficients.
    pub fn per_cell(&self, coefs: &[f64], params: usize) -> Vec<[f64; 4]> {
        (0..self.spaces.cells()).map(|c| coefficients_at(coefs, params, &self.basis, c)).collect()
    }

    /// Target probability that the actor at point `k` plays 1 in cell `cell` given instrument `z`.
    pub fn target_prob(&self, policy: &PolicyPair, k: usize, cell: usize, z: u8) -> f64 {
        let np = self.spaces.n_private;
        policy.action_prob(k, cell / np, cell % np, z)
    }

    /// Sub-cell means of the three pseudo-outcomes at point `k` built from the
    /// next point's coefficients `next[cell]`.
    pub fn pseudo_outcomes(&self, k: usize, next: &[Bilinear], policy: &PolicyPair) -> [Vec<f64>; 3] {
        let pc = &self.points[k].cells;
        let p = |c: usize, x: u8| self.target_prob(policy, k + 1, c, x);
        [
            pc.pseudo_outcome(|c, _| next[c].iv),
            pc.pseudo_outcome(|c, x| next[c].act * p(c, x) + next[c].level),
            pc.pseudo_outcome(|c, _| next[c].int * p(c, 1)),
        ]
    }

    /// Combines reward and continuation coefficients into the action value of `player` at point `k`.
    pub fn combine(&self, k: usize, player: Player, reward: &[f64], continuation: &[Vec<f64>]) -> Vec<Bilinear> {
        let cells = self.spaces.cells();
        let mut out = vec![Bilinear::default(); cells];
        if actor(k) == player {
            for (c, r) in self.per_cell(reward, 3).into_iter().enumerate() {
                out[c] = Bilinear::from_array([r[0], r[1], r[2], 0.0]);
            }
        }
        if continuation.is_empty() {
            return out;
        }
        let a = self.per_cell(&continuation[0], 4);
        let b = self.per_cell(&continuation[1], 4);
        let cc = self.per_cell(&continuation[2], 4);
        for c in 0..cells {
            let add = Bilinear {
                act: a[c][0] + a[c][3] + b[c][0] + cc[c][0] + cc[c][3],
                iv: b[c][1],
                int: a[c][1] + a[c][2] + b[c][2] + cc[c][1] + cc[c][2],
                level: b[c][3],
            };
            out[c] = out[c] + add;
        }
        out
    }

    /// Continuation block centres at point `k` for a player whose next-point coefficients are `next`.
    pub fn continuation_centers(&self, k: usize, next: &[Bilinear], policy: &PolicyPair) -> Vec<Vec<f64>> {
        match &self.points[k].continuation {
            None => Vec::new(),
            Some(solver) => self.pseudo_outcomes(k, next, policy).iter().map(|y| solver.center(y)).collect(),
        }
    }

    /// Weights `weights[cell]` on the first point's role coefficients whose inner
    /// product with `Q_0` is the policy value.
    pub fn value_weights(&self, policy: &PolicyPair) -> Vec<[f64; 4]> {
        value_weights(self.spaces, &self.initial, policy)
    }

    /// Inner product of value weights with first-point coefficients.
    pub fn value(&self, q0: &[Bilinear], weights: &[[f64; 4]]) -> f64 {
        q0.iter()
            .zip(weights)
            .map(|(q, w)| {
                let a = q.to_array();
                (0..4).map(|i| a[i] * w[i]).sum::<f64>()
            })
            .sum()
    }

    /// Sieve-coefficient weights of a block given weights on the combined coefficients.
    pub fn block_weights(&self, block: Block, cell_weights: &[[f64; 4]]) -> Vec<f64> {
        let mapped: Vec<[f64; 4]> = cell_weights.iter().map(|w| block.adjoint(*w)).collect();
        let params = if block == Block::Reward { 3 } else { 4 };
        functional_weights(&mapped, params, &self.basis)
    }

    /// Pulls weights on continuation block coefficients at point `k` back to
    /// weights on the next point's role coefficients.
    pub fn pull_back(&self, k: usize, block_weights: &[Vec<f64>], policy: &PolicyPair) -> Vec<[f64; 4]> {
        let pm = &self.points[k];
        let solver = pm.continuation.as_ref().expect("continuation solver exists before the last point");
        let cells = self.spaces.cells();
        let mut out = vec![[0.0; 4]; cells];
        let us: Vec<DVector<f64>> = block_weights
            .iter()
            .map(|w| solver.response.transpose() * DVector::from_column_slice(w))
            .collect();
        for (sub, row) in pm.cells.transition.iter().enumerate() {
            let x = sub_parts(sub).2;
            for (c, t) in row.iter().enumerate() {
                if *t == 0.0 {
                    continue;
                }
                out[c][1] += us[0][sub] * t;
                out[c][0] += us[1][sub] * t * self.target_prob(policy, k + 1, c, x);
                out[c][3] += us[1][sub] * t;
                out[c][2] += us[2][sub] * t * self.target_prob(policy, k + 1, c, 1);
            }
        }
        out
    }

    /// Backward recursion in which every block coefficient vector may be
    /// shifted by `offset(k, player, block)` before combination.
    pub fn recursion_with(&self, policy: &PolicyPair, offset: &dyn Fn(usize, Player, Block) -> Option<DVector<f64>>) -> QHat {
        let points = self.spaces.points();
        let mut q: Vec<[Vec<Bilinear>; 2]> = vec![[Vec::new(), Vec::new()]; points];
        for k in (0..points).rev() {
            let pm = &self.points[k];
            let mut reward = pm.reward_fit.coefficients.clone();
            if let Some(o) = offset(k, actor(k), Block::Reward) {
                reward.iter_mut().zip(o.iter()).for_each(|(r, d)| *r += d);
            }
            for p in PLAYERS {
                let mut cont = if k + 1 < points {
                    self.continuation_centers(k, &q[k + 1][player_index(p)], policy)
                } else {
                    Vec::new()
                };
                for (block, coefs) in Block::CONTINUATION.iter().zip(cont.iter_mut()) {
                    if let Some(o) = offset(k, p, *block) {
                        coefs.iter_mut().zip(o.iter()).for_each(|(r, d)| *r += d);
                    }
                }
                q[k][player_index(p)] = self.combine(k, p, &reward, &cont);
            }
        }
        QHat { spaces: self.spaces, q }
    }

    /// Plug-in backward recursion.
    pub fn recursion(&self, policy: &PolicyPair) -> QHat {
        self.recursion_with(policy, &|_, _, _| None)
    }

    /// Plug-in evaluation of a policy pair.
    pub fn evaluate(&self, policy: &PolicyPair) -> Result<Evaluation> {
        check_policy(self.spaces, policy)?;
        let qhat = self.recursion(policy);
        let w = self.value_weights(policy);
        let j_a = self.value(&qhat.q[0][0], &w);
        let j_b = self.value(&qhat.q[0][1], &w);
        Ok(Evaluation { qhat, j_a, j_b })
    }
}

/// Weights on first-point role coefficients given the law `initial` of the first cell.
pub fn value_weights(spaces: Spaces, initial: &[f64], policy: &PolicyPair) -> Vec<[f64; 4]> {
    let np = spaces.n_private;
    let pz = policy.initial_bob();
    (0..spaces.cells())
        .map(|c| {
            let mut w = [0.0; 4];
            for z in 0..2u8 {
                let m = initial[c] * if z == 1 { pz } else { 1.0 - pz };
                let px = policy.action_prob(0, c / np, c % np, z);
                w[0] += m * px;
                w[1] += m * z as f64;
                w[2] += m * px * z as f64;
                w[3] += m;
            }
            w
        })
        .collect()
}

fn check_policy(spaces: Spaces, policy: &PolicyPair) -> Result<()> {
    if policy.spaces() != spaces {
        return Err(Error::MalformedSpec("policy spaces do not match the data".into()));
    }
    policy.check()
}

/// Evaluates a policy pair on a horizon-one dataset.
pub fn evaluate_single_stage(cells: &DataCells, policy: &PolicyPair, basis: &SieveBasis) -> Result<Evaluation> {
    if cells.spaces.horizon != 1 {
        return Err(Error::MalformedSpec(format!("single-stage evaluation needs H = 1, got {}", cells.spaces.horizon)));
    }
    evaluate_multistage(cells, policy, basis)
}

/// Evaluates a policy pair by the full backward recursion.
pub fn evaluate_multistage(cells: &DataCells, policy: &PolicyPair, basis: &SieveBasis) -> Result<Evaluation> {
    Model::new(cells, basis)?.evaluate(policy)
}

/// Two-fold cross-fitted evaluation: trajectories are split by index parity,
/// each fold's blocks use pseudo-outcomes built from the other fold's next-point
/// fits, and the two chains are averaged.
pub fn evaluate_cross_fitted(spaces: Spaces, data: &OfflineDataset, policy: &PolicyPair, basis: &SieveBasis) -> Result<Evaluation> {
    check_policy(spaces, policy)?;
    let full = DataCells::from_dataset(spaces, data)?;
    let folds = [
        Model::new(&DataCells::from_dataset_subset(spaces, data, |i| i % 2 == 0)?, basis)?,
        Model::new(&DataCells::from_dataset_subset(spaces, data, |i| i % 2 == 1)?, basis)?,
    ];
    let points = spaces.points();
    let mut chains: [Vec<[Vec<Bilinear>; 2]>; 2] = [vec![[Vec::new(), Vec::new()]; points], vec![[Vec::new(), Vec::new()]; points]];
    for k in (0..points).rev() {
        for f in 0..2 {
            let m = &folds[f];
            let reward = &m.points[k].reward_fit.coefficients;
            for p in PLAYERS {
                let cont = if k + 1 < points {
                    m.continuation_centers(k, &chains[1 - f][k + 1][player_index(p)], policy)
                } else {
                    Vec::new()
                };
                chains[f][k][player_index(p)] = m.combine(k, p, reward, &cont);
            }
        }
    }
    let q: Vec<[Vec<Bilinear>; 2]> = (0..points)
        .map(|k| {
            let avg = |slot: usize| -> Vec<Bilinear> {
                chains[0][k][slot].iter().zip(&chains[1][k][slot]).map(|(a, b)| (*a + *b).scale(0.5)).collect()
            };
            [avg(0), avg(1)]
        })
        .collect();
    let qhat = QHat { spaces, q };
    let weights = value_weights(spaces, &full.points[0].cell_weights(), policy);
    let model = &folds[0];
    let j_a = model.value(&qhat.q[0][0], &weights);
    let j_b = model.value(&qhat.q[0][1], &weights);
    Ok(Evaluation { qhat, j_a, j_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::fixtures;
    use crate::game_model::simulate::simulate_dataset;
    use crate::oracle::exact_q::{exact_policy_value, exact_q};
    use crate::sieve::{build_basis, BasisKind};

    fn saturated(spaces: Spaces) -> SieveBasis {
        build_basis(BasisKind::Saturated, spaces, &[], 1).unwrap()
    }

    fn mixed_policy(spaces: Spaces) -> PolicyPair {
        PolicyPair::from_fns(
            spaces,
            0.4,
            |h, s, _, b| 0.3 + 0.4 * b as f64 - 0.1 * s as f64 + 0.05 * h as f64,
            |h, s, a| 0.6 - 0.3 * a as f64 + 0.2 * s as f64 - 0.05 * h as f64,
        )
    }

    #[test]
    fn population_recursion_reproduces_exact_action_values() {
        let cases = [
            fixtures::t1(),
            fixtures::t2(1),
            fixtures::t2(3),
            fixtures::random_fixture(17, 0, 2),
            fixtures::random_fixture(17, 1, 3),
        ];
        for b in &cases {
            let sp = b.game.spaces();
            let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
            let model = Model::new(&cells, &saturated(sp)).unwrap();
            for policy in [mixed_policy(sp), PolicyPair::constant(sp, 1.0, 1.0, 0.0)] {
                let eval = model.evaluate(&policy).unwrap();
                let truth = exact_q(&b.game, &policy);
                for k in 0..sp.points() {
                    for p in PLAYERS {
                        for c in 0..sp.cells() {
                            if cells.points[k].cell_weight(c) == 0.0 {
                                continue;
                            }
                            let (s, u) = (c / sp.n_private, c % sp.n_private);
                            let d = eval.qhat.at(k, p, s, u).max_abs_diff(&truth.at(k, p, s, u));
                            assert!(d < 1e-8, "k={k} {p:?} cell {c}: {d}");
                        }
                    }
                }
                let (ja, jb) = exact_policy_value(&b.game, &policy);
                assert!((eval.j_a - ja).abs() < 1e-8 && (eval.j_b - jb).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let b = fixtures::zero_rewards(fixtures::t1());
        let data = simulate_dataset(&b.game, &b.behavior, 2000, 1).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 1.0);
        let eval = evaluate_single_stage(&cells, &pol, &saturated(b.game.spaces())).unwrap();
        assert!(eval.j_a.abs() < 1e-12 && eval.j_b.abs() < 1e-12);
        for per in &eval.qhat.q {
            for q in per.iter().flatten() {
                assert!(q.max_abs_diff(&Bilinear::default()) < 1e-12);
            }
        }
    }

    #[test]
    fn t1_value_at_large_n() {
        let b = fixtures::t1();
        let data = simulate_dataset(&b.game, &b.behavior, 100_000, 31).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 1.0);
        let eval = evaluate_single_stage(&cells, &pol, &saturated(b.game.spaces())).unwrap();
        let (ja, _) = exact_policy_value(&b.game, &pol);
        assert!((eval.j_a - ja).abs() <= 0.05, "{} vs {ja}", eval.j_a);
    }

    #[test]
    fn zero_bob_reward_gives_small_bob_values() {
        let b = fixtures::zero_bob_reward(fixtures::t1());
        let data = simulate_dataset(&b.game, &b.behavior, 100_000, 2).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let pol = PolicyPair::constant(b.game.spaces(), 0.5, 1.0, 1.0);
        let eval = evaluate_single_stage(&cells, &pol, &saturated(b.game.spaces())).unwrap();
        let q = eval.qhat.at(0, Player::Bob, 0, 0);
        assert!(q.max_abs_diff(&Bilinear::default()) < 0.05, "{q:?}");
    }

    #[test]
    fn flat_transitions_decouple_the_continuation() {
        let b = fixtures::t2_flat(2);
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let model = Model::new(&cells, &saturated(b.game.spaces())).unwrap();
        let pol = PolicyPair::from_fns(b.game.spaces(), 0.4, |_, s, _, _| 0.3 + 0.4 * s as f64, |_, s, _| 0.7 - 0.2 * s as f64);
        let eval = model.evaluate(&pol).unwrap();
        let reward = model.per_cell(&model.points[0].reward_fit.coefficients, 3);
        for c in 0..2 {
            let q = eval.qhat.q[0][0][c];
            assert!((q.act - reward[c][0]).abs() < 1e-8);
            assert!((q.iv - reward[c][1]).abs() < 1e-8);
            assert!((q.int - reward[c][2]).abs() < 1e-8);
        }
    }

    #[test]
    fn value_is_linear_in_the_initial_rule() {
        let b = fixtures::t2(2);
        let data = simulate_dataset(&b.game, &b.behavior, 3000, 6).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let model = Model::new(&cells, &saturated(b.game.spaces())).unwrap();
        let base = mixed_policy(b.game.spaces());
        let (p0, p1) = (base.with_initial_bob(0.0), base.with_initial_bob(1.0));
        let lam = 0.3;
        let mix = base.with_initial_bob(lam);
        let (e0, e1, em) = (model.evaluate(&p0).unwrap(), model.evaluate(&p1).unwrap(), model.evaluate(&mix).unwrap());
        assert!((em.total() - ((1.0 - lam) * e0.total() + lam * e1.total())).abs() < 1e-12);
    }

    #[test]
    fn pull_back_matches_the_forward_map() {
        let b = fixtures::t2(2);
        let data = simulate_dataset(&b.game, &b.behavior, 3000, 6).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let model = Model::new(&cells, &saturated(b.game.spaces())).unwrap();
        let pol = mixed_policy(b.game.spaces());
        let next = vec![Bilinear::from_array([0.3, -0.2, 0.5, 1.1]), Bilinear::from_array([-0.4, 0.7, 0.1, 0.2])];
        let w: Vec<Vec<f64>> = vec![vec![0.2, -0.1, 0.4, 0.3, 0.5, -0.2, 0.1, 0.7], vec![0.3; 8], vec![-0.5, 0.2, 0.0, 0.1, 0.3, 0.3, -0.1, 0.2]];
        let centers = model.continuation_centers(1, &next, &pol);
        let forward: f64 = centers.iter().zip(&w).map(|(c, w)| c.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum();
        let back = model.pull_back(1, &w, &pol);
        let via: f64 = next.iter().zip(&back).map(|(q, o)| (0..4).map(|i| q.to_array()[i] * o[i]).sum::<f64>()).sum();
        assert!((forward - via).abs() < 1e-12);
    }

    #[test]
    fn cross_fitting_is_close_to_plug_in() {
        let b = fixtures::t2(2);
        let data = simulate_dataset(&b.game, &b.behavior, 40_000, 9).unwrap();
        let sp = b.game.spaces();
        let cells = DataCells::from_dataset(sp, &data.observed).unwrap();
        let pol = mixed_policy(sp);
        let plug = evaluate_multistage(&cells, &pol, &saturated(sp)).unwrap();
        let cf = evaluate_cross_fitted(sp, &data.observed, &pol, &saturated(sp)).unwrap();
        let (ja, jb) = exact_policy_value(&b.game, &pol);
        assert!((cf.total() - plug.total()).abs() < 0.1);
        assert!((cf.total() - ja - jb).abs() < 0.2);
    }

    #[test]
    fn qhat_csv_has_one_row_per_point_player_and_cell() {
        let b = fixtures::t2(2);
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let eval = evaluate_multistage(&cells, &mixed_policy(b.game.spaces()), &saturated(b.game.spaces())).unwrap();
        let csv = eval.qhat.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4 * 2 * 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,A,0,0,"));
        assert!(csv.contains("\n1.5,B,1,0,"));
    }

    #[test]
    fn single_stage_rejects_longer_horizons() {
        let b = fixtures::t2(2);
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let r = evaluate_single_stage(&cells, &mixed_policy(b.game.spaces()), &saturated(b.game.spaces()));
        assert!(matches!(r, Err(Error::MalformedSpec(_))));
    }
}
