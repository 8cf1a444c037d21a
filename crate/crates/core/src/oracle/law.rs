//! Exact forward laws of the observed and hidden variables.

use crate::error::{Error, Result};
use crate::game_model::policy::PolicyPair;
use crate::game_model::spec::{BehaviorPolicyPair, GameSpec, Spaces, NV};

use super::KahanSum;

/// Default cell budget for full-trajectory enumeration.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Rule choosing the acting player's action at every decision point.
pub trait ActionRule: Sync {
    /// Probability that Bob's initial action is 1.
    fn initial(&self) -> f64;
    /// Probability that the actor at point `k` plays 1.
    fn prob(&self, k: usize, s: usize, u: usize, v: usize, z: u8) -> f64;
}

impl ActionRule for BehaviorPolicyPair {
    fn initial(&self) -> f64 {
        self.initial_bob
    }
    fn prob(&self, k: usize, s: usize, u: usize, v: usize, z: u8) -> f64 {
        self.action_prob(k, s, u, v, z)
    }
}

impl ActionRule for PolicyPair {
    fn initial(&self) -> f64 {
        self.initial_bob()
    }
    fn prob(&self, k: usize, s: usize, u: usize, _v: usize, z: u8) -> f64 {
        self.action_prob(k, s, u, z)
    }
}

/// Probability of a binary outcome given `P(1) = p`.
pub fn bernoulli(p: f64, x: u8) -> f64 {
    if x == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Joint law of `(S, U, V, Z, X)` at one decision point, where `Z` is the
/// instrument and `X` the action.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    spaces: Spaces,
    p: Vec<f64>,
}

impl PointTable {
    fn zeros(spaces: Spaces) -> Self {
        PointTable {
            spaces,
            p: vec![0.0; spaces.cells() * NV * 4],
        }
    }

    fn index(&self, s: usize, u: usize, v: usize, z: u8, x: u8) -> usize {
        ((self.spaces.cell(s, u) * NV + v) * 2 + z as usize) * 2 + x as usize
    }

    /// `P(S = s, U = u, V = v, Z = z, X = x)`.
    pub fn prob(&self, s: usize, u: usize, v: usize, z: u8, x: u8) -> f64 {
        self.p[self.index(s, u, v, z, x)]
    }

    /// `P(S = s, U = u, Z = z, X = x)` with `V` summed out.
    pub fn observed(&self, s: usize, u: usize, z: u8, x: u8) -> f64 {
        let mut acc = KahanSum::default();
        for v in 0..NV {
            acc.add(self.prob(s, u, v, z, x));
        }
        acc.total()
    }

    /// `P(S = s, U = u)`.
    pub fn cell_mass(&self, s: usize, u: usize) -> f64 {
        let mut acc = KahanSum::default();
        for v in 0..NV {
            for z in 0..2 {
                for x in 0..2 {
                    acc.add(self.prob(s, u, v, z, x));
                }
            }
        }
        acc.total()
    }

    /// Total mass.
    pub fn total(&self) -> f64 {
        let mut acc = KahanSum::default();
        for p in &self.p {
            acc.add(*p);
        }
        acc.total()
    }
}

/// Per-point laws of one regime (behavior or target) plus the terminal state law.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLaws {
    /// One table per decision point `k = 0..2H`.
    pub points: Vec<PointTable>,
    /// Law of the terminal state `S_{H+1}`.
    pub terminal: Vec<f64>,
}

/// Propagates the state and instrument law forward through every point.
pub fn point_laws(game: &GameSpec, rule: &dyn ActionRule) -> PointLaws {
    let sp = game.spaces();
    let ns = sp.n_states;
    // joint law of (state, instrument) entering the current point
    let mut entry: Vec<[f64; 2]> = game
        .init_state
        .iter()
        .map(|p| [p * bernoulli(rule.initial(), 0), p * bernoulli(rule.initial(), 1)])
        .collect();
    let mut points = Vec::with_capacity(sp.points());
    for k in 0..sp.points() {
        let law = &game.private_laws[k];
        let kernel = game.kernel_at(k);
        let mut table = PointTable::zeros(sp);
        let mut next = vec![[KahanSum::default(), KahanSum::default()]; ns];
        for s in 0..ns {
            for u in 0..sp.n_private {
                for v in 0..NV {
                    let base = law.p_u(s, u) * law.p_v(s, v);
                    for z in 0..2u8 {
                        let pz = entry[s][z as usize] * base;
                        if pz == 0.0 {
                            continue;
                        }
                        let p1 = rule.prob(k, s, u, v, z);
                        for x in 0..2u8 {
                            let p = pz * bernoulli(p1, x);
                            let i = table.index(s, u, v, z, x);
                            table.p[i] = p;
                            if p == 0.0 {
                                continue;
                            }
                            for (t, q) in kernel[s][u][v][x as usize][z as usize].iter().enumerate() {
                                next[t][x as usize].add(p * q);
                            }
                        }
                    }
                }
            }
        }
        points.push(table);
        entry = next.iter().map(|[a, b]| [a.total(), b.total()]).collect();
    }
    let terminal = entry.iter().map(|[a, b]| a + b).collect();
    PointLaws { points, terminal }
}

/// Values drawn at one decision point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointDraw {
    pub s: u8,
    pub u: u8,
    pub v: u8,
    pub x: u8,
}

/// One full trajectory with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Bob's initial action.
    pub initial: u8,
    /// Draws at points `k = 0..2H`.
    pub points: Vec<PointDraw>,
    /// Terminal state.
    pub terminal: u8,
    /// Probability of the trajectory.
    pub prob: f64,
}

impl Atom {
    /// Instrument at point `k`: the previous action.
    pub fn instrument(&self, k: usize) -> u8 {
        if k == 0 {
            self.initial
        } else {
            self.points[k - 1].x
        }
    }
}

/// Exact joint law of a trajectory under a behavior policy.
#[derive(Debug, Clone)]
pub struct JointLaw {
    /// Every positive-probability trajectory.
    pub atoms: Vec<Atom>,
    /// Per-point marginal tables.
    pub laws: PointLaws,
}

impl JointLaw {
    /// Total probability mass of the atoms.
    pub fn total_mass(&self) -> f64 {
        let mut acc = KahanSum::default();
        for a in &self.atoms {
            acc.add(a.prob);
        }
        acc.total()
    }

    /// Table at decision point `k`.
    pub fn point(&self, k: usize) -> &PointTable {
        &self.laws.points[k]
    }
}

/// Upper bound on the number of enumerated trajectories.
pub fn enumeration_size(spaces: Spaces) -> u128 {
    let per_point = (spaces.cells() * NV * 2) as u128;
    let mut total: u128 = 2 * spaces.n_states as u128;
    for _ in 0..spaces.points() {
        total = total.saturating_mul(per_point);
    }
    total
}

/// Enumerates every positive-probability trajectory under `rule`.
pub fn exact_joint_law_with(game: &GameSpec, rule: &dyn ActionRule, budget: u128) -> Result<JointLaw> {
    let sp = game.spaces();
    let cells = enumeration_size(sp);
    if cells > budget {
        return Err(Error::SpaceTooLarge { cells, budget });
    }
    let mut atoms = Vec::new();
    let mut stack = Vec::with_capacity(sp.points());
    for b0 in 0..2u8 {
        let p0 = bernoulli(rule.initial(), b0);
        if p0 == 0.0 {
            continue;
        }
        for (s, ps) in game.init_state.iter().enumerate() {
            if *ps == 0.0 {
                continue;
            }
            expand(game, rule, 0, s, b0, b0, p0 * ps, &mut stack, &mut atoms);
        }
    }
    Ok(JointLaw {
        atoms,
        laws: point_laws(game, rule),
    })
}

/// Exact joint law under the behavior policy with the default budget.
pub fn exact_joint_law(game: &GameSpec, behavior: &BehaviorPolicyPair) -> Result<JointLaw> {
    exact_joint_law_with(game, behavior, DEFAULT_BUDGET)
}

#[allow(clippy::too_many_arguments)]
fn expand(
    game: &GameSpec,
    rule: &dyn ActionRule,
    k: usize,
    s: usize,
    initial: u8,
    z: u8,
    prob: f64,
    stack: &mut Vec<PointDraw>,
    atoms: &mut Vec<Atom>,
) {
    if k == 2 * game.horizon {
        atoms.push(Atom {
            initial,
            points: stack.clone(),
            terminal: s as u8,
            prob,
        });
        return;
    }
    let law = &game.private_laws[k];
    let kernel = game.kernel_at(k);
    for u in 0..game.n_private {
        let pu = law.p_u(s, u);
        if pu == 0.0 {
            continue;
        }
        for v in 0..NV {
            let pv = law.p_v(s, v);
            if pv == 0.0 {
                continue;
            }
            let p1 = rule.prob(k, s, u, v, z);
            for x in 0..2u8 {
                let px = bernoulli(p1, x);
                if px == 0.0 {
                    continue;
                }
                for (t, q) in kernel[s][u][v][x as usize][z as usize].iter().enumerate() {
                    if *q == 0.0 {
                        continue;
                    }
                    stack.push(PointDraw {
                        s: s as u8,
                        u: u as u8,
                        v: v as u8,
                        x,
                    });
                    expand(game, rule, k + 1, t, initial, x, prob * pu * pv * px * q, stack, atoms);
                    stack.pop();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::fixtures;

    #[test]
    fn t1_law_has_unit_mass() {
        let b = fixtures::t1();
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        assert!((law.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(law.atoms.len(), 2 * 4 * 2 * 4 * 2);
        for k in 0..2 {
            assert!((law.point(k).total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn t2_law_reproduces_initial_state_distribution() {
        let b = fixtures::t2(2);
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        assert!((law.total_mass() - 1.0).abs() < 1e-12);
        let mut s1 = [0.0; 2];
        for a in &law.atoms {
            s1[a.points[0].s as usize] += a.prob;
        }
        assert!((s1[0] - 0.5).abs() < 1e-12 && (s1[1] - 0.5).abs() < 1e-12);
        let terminal: f64 = law.laws.terminal.iter().sum();
        assert!((terminal - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atoms_agree_with_point_tables() {
        let b = fixtures::t2(2);
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        for k in 0..4 {
            let mut acc = vec![0.0; 2 * 4 * 4];
            for a in &law.atoms {
                let d = a.points[k];
                acc[((d.s as usize * 4 + d.v as usize) * 2 + a.instrument(k) as usize) * 2 + d.x as usize] += a.prob;
            }
            for s in 0..2 {
                for v in 0..4 {
                    for z in 0..2u8 {
                        for x in 0..2u8 {
                            let e = acc[((s * 4 + v) * 2 + z as usize) * 2 + x as usize];
                            assert!((e - law.point(k).prob(s, 0, v, z, x)).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_game_has_single_atom() {
        let mut b = fixtures::t1();
        b.behavior.initial_bob = 1.0;
        for law in b.game.private_laws.iter_mut() {
            law.v1 = vec![1.0];
            law.v2 = vec![0.0];
        }
        b.behavior.alice[0][0][0] = [[1.0, 1.0]; 4];
        b.behavior.bob[0][0] = [[0.0; 4]; 2];
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        assert_eq!(law.atoms.len(), 1);
        assert_eq!(law.atoms[0].prob, 1.0);
    }

    #[test]
    fn budget_is_enforced() {
        let b = fixtures::t2(3);
        assert!(matches!(
            exact_joint_law(&b.game, &b.behavior),
            Err(Error::SpaceTooLarge { .. })
        ));
    }
}
