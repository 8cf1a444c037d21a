//! Sufficient statistics of the logged data at every decision point.
//!
//! Every moment used by the estimators is linear in the outcome, and the
//! remaining row variables `(s, u, z, x)` are discrete, so each decision point
//! is summarised by weighted sub-cells `(s, u, z, x)`: the empirical frequency,
//! the mean reward and the empirical law of the next point's `(s', u')`. The
//! same structure can be filled from an exact population law, which turns every
//! estimator into its population counterpart.

use crate::error::{Error, Result};
use crate::game_model::dataset::OfflineDataset;
use crate::game_model::spec::{actor, BehaviorPolicyPair, GameSpec, Player, Spaces, NV};
use crate::oracle::law::point_laws;

/// Number of `(z, x)` combinations inside one `(s, u)` cell.
pub const SUB: usize = 4;

/// Index of sub-cell `(cell, z, x)`.
pub fn sub_index(cell: usize, z: u8, x: u8) -> usize {
    cell * SUB + 2 * z as usize + x as usize
}

/// Splits a sub-cell index into `(cell, z, x)`.
pub fn sub_parts(sub: usize) -> (usize, u8, u8) {
    (sub / SUB, ((sub % SUB) / 2) as u8, (sub % 2) as u8)
}

/// Weighted sub-cells of one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCells {
    pub spaces: Spaces,
    /// Decision point index.
    pub k: usize,
    /// Number of logged rows, or `None` for a population law.
    pub n: Option<usize>,
    /// Frequency of each sub-cell `(s, u, z, x)`, summing to one.
    pub weight: Vec<f64>,
    /// Mean reward of the actor in each sub-cell.
    pub reward: Vec<f64>,
    /// Empirical law of the next point's `(s', u')` cell per sub-cell; empty at the last point.
    pub transition: Vec<Vec<f64>>,
}

impl PointCells {
    /// Acting player.
    pub fn actor(&self) -> Player {
        actor(self.k)
    }

    /// Whether a continuation exists after this point.
    pub fn has_next(&self) -> bool {
        !self.transition.is_empty()
    }

    /// Frequency of the `(s, u)` cell.
    pub fn cell_weight(&self, cell: usize) -> f64 {
        self.weight[cell * SUB..(cell + 1) * SUB].iter().sum()
    }

    /// Per-cell frequencies.
    pub fn cell_weights(&self) -> Vec<f64> {
        (0..self.spaces.cells()).map(|c| self.cell_weight(c)).collect()
    }

    /// Sub-cell means of a pseudo-outcome `g(s', u', x)` evaluated on the next point.
    pub fn pseudo_outcome(&self, g: impl Fn(usize, u8) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.weight.len()];
        for (sub, row) in self.transition.iter().enumerate() {
            let x = (sub % 2) as u8;
            out[sub] = row.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(c, p)| p * g(c, x)).sum();
        }
        out
    }
}

/// Sufficient statistics of a dataset or population law at every point.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCells {
    pub spaces: Spaces,
    /// Number of trajectories, or `None` for a population law.
    pub n: Option<usize>,
    /// One entry per decision point `k = 0..2H`.
    pub points: Vec<PointCells>,
    /// Mean squared reward over all logged rewards.
    pub mean_sq_reward: f64,
}

struct Accumulator {
    count: Vec<f64>,
    reward: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl DataCells {
    /// Aggregates every trajectory of a dataset.
    pub fn from_dataset(spaces: Spaces, data: &OfflineDataset) -> Result<DataCells> {
        Self::from_dataset_subset(spaces, data, |_| true)
    }

    /// Aggregates the trajectories whose index passes `keep`.
    pub fn from_dataset_subset(spaces: Spaces, data: &OfflineDataset, keep: impl Fn(usize) -> bool) -> Result<DataCells> {
        data.check(spaces)?;
        let n_sub = spaces.cells() * SUB;
        let points = spaces.points();
        let mut acc: Vec<Accumulator> = (0..points)
            .map(|k| Accumulator {
                count: vec![0.0; n_sub],
                reward: vec![0.0; n_sub],
                transition: if k + 1 < points { vec![vec![0.0; spaces.cells()]; n_sub] } else { Vec::new() },
            })
            .collect();
        let mut n = 0usize;
        let mut sq = 0.0;
        let horizon = spaces.horizon;
        for (i, t) in data.trajectories.iter().enumerate() {
            if !keep(i) {
                continue;
            }
            n += 1;
            for h in 0..horizon {
                let st = &t.steps[h];
                let z_alice = if h == 0 { t.initial_bob } else { t.steps[h - 1].b };
                let alice_next = spaces.cell(st.s_half as usize, st.u_half as usize);
                let alice = (spaces.cell(st.s as usize, st.u as usize), z_alice, st.a, st.r_a, Some(alice_next));
                let bob_next = (h + 1 < horizon).then(|| spaces.cell(t.steps[h + 1].s as usize, t.steps[h + 1].u as usize));
                let bob = (alice_next, st.a, st.b, st.r_b, bob_next);
                for (k, (cell, z, x, r, next)) in [(2 * h, alice), (2 * h + 1, bob)] {
                    let a = &mut acc[k];
                    let sub = sub_index(cell, z, x);
                    a.count[sub] += 1.0;
                    a.reward[sub] += r;
                    sq += r * r;
                    if let Some(next) = next {
                        a.transition[sub][next] += 1.0;
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData { rows: 0, needed: 1 });
        }
        let total = n as f64;
        let points = acc
            .into_iter()
            .enumerate()
            .map(|(k, a)| {
                let reward = a.reward.iter().zip(&a.count).map(|(r, c)| if *c > 0.0 { r / c } else { 0.0 }).collect();
                let transition = a
                    .transition
                    .into_iter()
                    .zip(&a.count)
                    .map(|(row, c)| if *c > 0.0 { row.into_iter().map(|m| m / c).collect() } else { row })
                    .collect();
                PointCells {
                    spaces,
                    k,
                    n: Some(n),
                    weight: a.count.iter().map(|c| c / total).collect(),
                    reward,
                    transition,
                }
            })
            .collect();
        Ok(DataCells {
            spaces,
            n: Some(n),
            points,
            mean_sq_reward: sq / (total * spaces.points() as f64),
        })
    }

    /// Exact population counterpart under the behavior policy.
    pub fn from_population(game: &GameSpec, behavior: &BehaviorPolicyPair) -> Result<DataCells> {
        game.check()?;
        behavior.check(game.spaces())?;
        let spaces = game.spaces();
        let laws = point_laws(game, behavior);
        let n_sub = spaces.cells() * SUB;
        let noise_sq = game.noise_half_width * game.noise_half_width / 3.0;
        let mut sq = 0.0;
        let mut points = Vec::with_capacity(spaces.points());
        for k in 0..spaces.points() {
            let table = &laws.points[k];
            let reward_table = game.reward_at(k);
            let kernel = game.kernel_at(k);
            let has_next = k + 1 < spaces.points();
            let mut weight = vec![0.0; n_sub];
            let mut reward = vec![0.0; n_sub];
            let mut transition = if has_next { vec![vec![0.0; spaces.cells()]; n_sub] } else { Vec::new() };
            for s in 0..spaces.n_states {
                for u in 0..spaces.n_private {
                    let cell = spaces.cell(s, u);
                    for z in 0..2u8 {
                        for x in 0..2u8 {
                            let sub = sub_index(cell, z, x);
                            let mass = table.observed(s, u, z, x);
                            weight[sub] = mass;
                            if mass <= 0.0 {
                                continue;
                            }
                            for v in 0..NV {
                                let pv = table.prob(s, u, v, z, x) / mass;
                                if pv == 0.0 {
                                    continue;
                                }
                                let mean = reward_table.mean(s, u, v, x, z);
                                reward[sub] += pv * mean;
                                sq += table.prob(s, u, v, z, x) * (mean * mean + noise_sq);
                                if has_next {
                                    let next_law = &game.private_laws[k + 1];
                                    for (t, q) in kernel[s][u][v][x as usize][z as usize].iter().enumerate() {
                                        for u2 in 0..spaces.n_private {
                                            transition[sub][spaces.cell(t, u2)] += pv * q * next_law.p_u(t, u2);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            points.push(PointCells {
                spaces,
                k,
                n: None,
                weight,
                reward,
                transition,
            });
        }
        Ok(DataCells {
            spaces,
            n: None,
            points,
            mean_sq_reward: sq / spaces.points() as f64,
        })
    }

    /// Sample size used by the region schedules; population laws count as infinite.
    pub fn sample_size(&self) -> f64 {
        self.n.map(|n| n as f64).unwrap_or(f64::INFINITY)
    }

    /// Copy with every reward multiplied by `c`.
    pub fn scaled_rewards(&self, c: f64) -> DataCells {
        let mut out = self.clone();
        for p in &mut out.points {
            for r in &mut p.reward {
                *r *= c;
            }
        }
        out.mean_sq_reward *= c * c;
        out
    }
}
