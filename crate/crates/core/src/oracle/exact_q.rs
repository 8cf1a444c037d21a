//! Exact action values, policy values and in-class optimal policy pairs.

use rayon::prelude::*;

use crate::bilinear::Bilinear;
use crate::error::{Error, Result};
use crate::game_model::policy::{PolicyClass, PolicyPair};
use crate::game_model::spec::{actor, GameSpec, Player, Spaces, NV};

use super::law::bernoulli;
use super::KahanSum;

/// Largest class searched exhaustively; bigger full classes use dynamic programming.
pub const EXHAUSTIVE_CAP: u128 = 1_000_000;

/// Tolerance below which two policy values count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Index of a player in per-player arrays.
pub fn player_index(p: Player) -> usize {
    match p {
        Player::Alice => 0,
        Player::Bob => 1,
    }
}

/// Exact action values of a target policy pair at every decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactQ {
    pub spaces: Spaces,
    /// Per point and player, coefficients per `(s, u, v)`, indexed `cell·4 + v`.
    pub full: Vec<[Vec<Bilinear>; 2]>,
    /// Per point and player, coefficients per `(s, u)` with `V` integrated out.
    pub marginal: Vec<[Vec<Bilinear>; 2]>,
}

impl ExactQ {
    /// Marginal coefficients of `player` at point `k` and cell `(s, u)`.
    pub fn at(&self, k: usize, player: Player, s: usize, u: usize) -> Bilinear {
        self.marginal[k][player_index(player)][self.spaces.cell(s, u)]
    }
}

/// Continuation value `E[sum of rewards from point k | S_k = s, Z_k = z]` per player.
type Continuation = [Vec<[f64; 2]>; 2];

/// Backward dynamic program for a fixed target policy pair.
pub fn exact_q(game: &GameSpec, policy: &PolicyPair) -> ExactQ {
    exact_q_with_continuation(game, policy).0
}

fn exact_q_with_continuation(game: &GameSpec, policy: &PolicyPair) -> (ExactQ, Continuation) {
    let sp = game.spaces();
    let ns = sp.n_states;
    let mut cont: Continuation = [vec![[0.0; 2]; ns], vec![[0.0; 2]; ns]];
    let mut full = vec![[Vec::new(), Vec::new()]; sp.points()];
    let mut marginal = vec![[Vec::new(), Vec::new()]; sp.points()];
    for k in (0..sp.points()).rev() {
        let law = &game.private_laws[k];
        let kernel = game.kernel_at(k);
        let reward = game.reward_at(k);
        let mut next_cont: Continuation = [vec![[0.0; 2]; ns], vec![[0.0; 2]; ns]];
        for p in [Player::Alice, Player::Bob] {
            let slot = player_index(p);
            let rewarded = actor(k) == p;
            let mut f = Vec::with_capacity(sp.cells() * NV);
            let mut m = Vec::with_capacity(sp.cells());
            for s in 0..ns {
                let mut acc = [KahanSum::default(), KahanSum::default()];
                for u in 0..sp.n_private {
                    let mut corners_m = [[KahanSum::default(), KahanSum::default()], [KahanSum::default(), KahanSum::default()]];
                    for v in 0..NV {
                        let mut q = [[0.0; 2]; 2];
                        for x in 0..2u8 {
                            for z in 0..2u8 {
                                let mut val = KahanSum::default();
                                if rewarded {
                                    val.add(reward.mean(s, u, v, x, z));
                                }
                                for (t, pt) in kernel[s][u][v][x as usize][z as usize].iter().enumerate() {
                                    val.add(pt * cont[slot][t][x as usize]);
                                }
                                q[x as usize][z as usize] = val.total();
                            }
                        }
                        let pv = law.p_v(s, v);
                        let pu = law.p_u(s, u);
                        for x in 0..2u8 {
                            for z in 0..2u8 {
                                corners_m[x as usize][z as usize].add(pv * q[x as usize][z as usize]);
                            }
                        }
                        for z in 0..2u8 {
                            let p1 = policy.action_prob(k, s, u, z);
                            let ev = bernoulli(p1, 0) * q[0][z as usize] + bernoulli(p1, 1) * q[1][z as usize];
                            acc[z as usize].add(pu * pv * ev);
                        }
                        f.push(Bilinear::from_corners(q));
                    }
                    m.push(Bilinear::from_corners([
                        [corners_m[0][0].total(), corners_m[0][1].total()],
                        [corners_m[1][0].total(), corners_m[1][1].total()],
                    ]));
                }
                next_cont[slot][s] = [acc[0].total(), acc[1].total()];
            }
            full[k][slot] = f;
            marginal[k][slot] = m;
        }
        cont = next_cont;
    }
    (ExactQ { spaces: sp, full, marginal }, cont)
}

/// Exact values `(J_A, J_B)` of a target policy pair.
pub fn exact_policy_value(game: &GameSpec, policy: &PolicyPair) -> (f64, f64) {
    let (_, cont) = exact_q_with_continuation(game, policy);
    let mut j = [KahanSum::default(), KahanSum::default()];
    for (s, ps) in game.init_state.iter().enumerate() {
        for z in 0..2u8 {
            let w = ps * bernoulli(policy.initial_bob(), z);
            for (slot, acc) in j.iter_mut().enumerate() {
                acc.add(w * cont[slot][s][z as usize]);
            }
        }
    }
    (j[0].total(), j[1].total())
}

/// In-class optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPair {
    pub policy: PolicyPair,
    /// `J_A + J_B` of the optimum.
    pub value: f64,
    pub j_a: f64,
    pub j_b: f64,
}

/// Optimal policy pair over a class, maximising `J_A + J_B`.
///
/// Classes with at most [`EXHAUSTIVE_CAP`] members are searched exhaustively
/// and ties within [`TIE_TOL`] go to the lowest encoding. Larger full
/// deterministic classes are solved by backward dynamic programming, which
/// prefers action 0 on ties.
pub fn exact_optimal_pair(game: &GameSpec, class: &PolicyClass) -> Result<OptimalPair> {
    let sp = game.spaces();
    let size = class.size(sp);
    if size == 0 {
        return Err(Error::EmptyClass);
    }
    if size <= EXHAUSTIVE_CAP {
        let values: Vec<(f64, f64)> = (0..size as u64)
            .into_par_iter()
            .map(|i| exact_policy_value(game, &class.member(sp, i as u128)))
            .collect();
        let mut best = 0usize;
        for (i, (a, b)) in values.iter().enumerate() {
            if a + b > values[best].0 + values[best].1 + TIE_TOL {
                best = i;
            }
        }
        let (j_a, j_b) = values[best];
        return Ok(OptimalPair {
            policy: class.member(sp, best as u128),
            value: j_a + j_b,
            j_a,
            j_b,
        });
    }
    match class {
        PolicyClass::FullDeterministic => {
            let policy = dynamic_programming_optimum(game);
            let (j_a, j_b) = exact_policy_value(game, &policy);
            Ok(OptimalPair {
                policy,
                value: j_a + j_b,
                j_a,
                j_b,
            })
        }
        _ => Err(Error::SpaceTooLarge {
            cells: size,
            budget: EXHAUSTIVE_CAP,
        }),
    }
}

fn dynamic_programming_optimum(game: &GameSpec) -> PolicyPair {
    let sp = game.spaces();
    let ns = sp.n_states;
    let mut policy = PolicyPair::constant(sp, 0.0, 0.0, 0.0);
    let mut cont = vec![[0.0; 2]; ns];
    for k in (0..sp.points()).rev() {
        let law = &game.private_laws[k];
        let kernel = game.kernel_at(k);
        let reward = game.reward_at(k);
        // q[s][u][v][z][x]: total reward from point k onward
        let q = |s: usize, u: usize, v: usize, z: u8, x: u8, cont: &Vec<[f64; 2]>| {
            let mut val = KahanSum::default();
            val.add(reward.mean(s, u, v, x, z));
            for (t, pt) in kernel[s][u][v][x as usize][z as usize].iter().enumerate() {
                val.add(pt * cont[t][x as usize]);
            }
            val.total()
        };
        let mut next = vec![[0.0; 2]; ns];
        for (s, next_s) in next.iter_mut().enumerate() {
            for z in 0..2u8 {
                match actor(k) {
                    Player::Alice => {
                        let mut total = KahanSum::default();
                        for u in 0..sp.n_private {
                            let mut ev = [KahanSum::default(), KahanSum::default()];
                            for v in 0..NV {
                                for x in 0..2u8 {
                                    ev[x as usize].add(law.p_v(s, v) * q(s, u, v, z, x, &cont));
                                }
                            }
                            let (e0, e1) = (ev[0].total(), ev[1].total());
                            let choice = if e1 > e0 + TIE_TOL { 1.0 } else { 0.0 };
                            policy.set_alice(k / 2, s, u, z, choice);
                            total.add(law.p_u(s, u) * if choice == 1.0 { e1 } else { e0 });
                        }
                        next_s[z as usize] = total.total();
                    }
                    Player::Bob => {
                        let mut ev = [KahanSum::default(), KahanSum::default()];
                        for u in 0..sp.n_private {
                            for v in 0..NV {
                                let w = law.p_u(s, u) * law.p_v(s, v);
                                for x in 0..2u8 {
                                    ev[x as usize].add(w * q(s, u, v, z, x, &cont));
                                }
                            }
                        }
                        let (e0, e1) = (ev[0].total(), ev[1].total());
                        let choice = if e1 > e0 + TIE_TOL { 1.0 } else { 0.0 };
                        policy.set_bob(k / 2, s, z, choice);
                        next_s[z as usize] = if choice == 1.0 { e1 } else { e0 };
                    }
                }
            }
        }
        cont = next;
    }
    let mut ev = [KahanSum::default(), KahanSum::default()];
    for (s, ps) in game.init_state.iter().enumerate() {
        for z in 0..2 {
            ev[z].add(ps * cont[s][z]);
        }
    }
    policy.set_initial_bob(if ev[1].total() > ev[0].total() + TIE_TOL { 1.0 } else { 0.0 });
    policy
}
