//! `V`-marginalised structural coefficients.

use crate::bilinear::Bilinear;
use crate::game_model::spec::{GameSpec, RewardTable, Spaces, NV};

use super::KahanSum;

/// Marginal action, instrument and interaction effects over the `(s, u)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTriple {
    pub spaces: Spaces,
    /// Marginal action effect, indexed by cell `s·|U| + u`.
    pub action: Vec<f64>,
    /// Marginal instrument effect.
    pub instrument: Vec<f64>,
    /// Marginal interaction effect.
    pub interaction: Vec<f64>,
}

impl CoefficientTriple {
    /// `(act, iv, int)` at cell `(s, u)`.
    pub fn at(&self, s: usize, u: usize) -> [f64; 3] {
        let c = self.spaces.cell(s, u);
        [self.action[c], self.instrument[c], self.interaction[c]]
    }

    /// Role-coordinate coefficients per cell with zero intercept.
    pub fn to_bilinear(&self) -> Vec<Bilinear> {
        (0..self.spaces.cells())
            .map(|c| Bilinear::from_array([self.action[c], self.instrument[c], self.interaction[c], 0.0]))
            .collect()
    }
}

/// Marginal reward coefficients of the player acting at point `k`.
pub fn true_reward_coefficients(game: &GameSpec, k: usize) -> CoefficientTriple {
    marginal_reward(game.reward_at(k), game, k)
}

fn marginal_reward(table: &RewardTable, game: &GameSpec, k: usize) -> CoefficientTriple {
    let sp = game.spaces();
    let law = &game.private_laws[k];
    let mut out = CoefficientTriple {
        spaces: sp,
        action: vec![0.0; sp.cells()],
        instrument: vec![0.0; sp.cells()],
        interaction: vec![0.0; sp.cells()],
    };
    for s in 0..sp.n_states {
        for u in 0..sp.n_private {
            let (mut a, mut z, mut az) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
            for v in 0..NV {
                let p = law.p_v(s, v);
                a.add(p * table.action[s][u][v]);
                z.add(p * table.instrument[s][u][v]);
                az.add(p * table.interaction[s][u][v]);
            }
            let c = sp.cell(s, u);
            out.action[c] = a.total();
            out.instrument[c] = z.total();
            out.interaction[c] = az.total();
        }
    }
    out
}

/// Reward coefficients and transition coefficients of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueCoefficients {
    /// Reward block of the actor at each point `k`.
    pub reward: Vec<CoefficientTriple>,
    /// Transition blocks per point `k` and indicator test function `1[S' = t]`,
    /// per cell in role coordinates.
    pub transition: Vec<Vec<Vec<Bilinear>>>,
}

/// Exact `V`-marginalised coefficients of every structural block.
pub fn true_coefficients(game: &GameSpec) -> TrueCoefficients {
    let sp = game.spaces();
    let reward = (0..sp.points()).map(|k| true_reward_coefficients(game, k)).collect();
    let transition = (0..sp.points())
        .map(|k| {
            (0..sp.n_states)
                .map(|t| {
                    let kernel = game.kernel_at(k);
                    marginal_bilinear(game, k, |s, u, v, x, z| kernel[s][u][v][x as usize][z as usize][t])
                })
                .collect()
        })
        .collect();
    TrueCoefficients { reward, transition }
}

/// Per-cell `V`-marginal bilinear coefficients of a conditional mean
/// `m(s, u, v, x, z)` at point `k`.
pub fn marginal_bilinear(game: &GameSpec, k: usize, m: impl Fn(usize, usize, usize, u8, u8) -> f64) -> Vec<Bilinear> {
    let sp = game.spaces();
    let law = &game.private_laws[k];
    let mut out = Vec::with_capacity(sp.cells());
    for s in 0..sp.n_states {
        for u in 0..sp.n_private {
            let mut corners = [[KahanSum::default(), KahanSum::default()], [KahanSum::default(), KahanSum::default()]];
            for v in 0..NV {
                let p = law.p_v(s, v);
                for x in 0..2u8 {
                    for z in 0..2u8 {
                        corners[x as usize][z as usize].add(p * m(s, u, v, x, z));
                    }
                }
            }
            out.push(Bilinear::from_corners([
                [corners[0][0].total(), corners[0][1].total()],
                [corners[1][0].total(), corners[1][1].total()],
            ]));
        }
    }
    out
}

/// True coefficients of a continuation block at point `k < 2H − 1` whose
/// outcome is `g(s', u', x)`, a function of the next point's state and
/// Alice's private value and of the current action.
pub fn continuation_truth(game: &GameSpec, k: usize, g: impl Fn(usize, usize, u8) -> f64) -> Vec<Bilinear> {
    let kernel = game.kernel_at(k);
    let next_law = &game.private_laws[k + 1];
    marginal_bilinear(game, k, |s, u, v, x, z| {
        let mut acc = KahanSum::default();
        for (t, q) in kernel[s][u][v][x as usize][z as usize].iter().enumerate() {
            if *q == 0.0 {
                continue;
            }
            for u2 in 0..game.n_private {
                acc.add(q * next_law.p_u(t, u2) * g(t, u2, x));
            }
        }
        acc.total()
    })
}
