//! The identifying linear system evaluated on exact population moments.
//!
//! Within a cell `(s, u)` write `D = Z − f1` and `E = X − f2(Z)` with
//! `f1 = E[Z]` and `f2(z) = E[X | Z = z]`. The rows are
//!
//! * residual-product row: `E[D·E·Y] = act·E[D·E·X] + int·E[D·E·X·Z]`,
//! * instrument-residual row: `E[D·Y] = act·E[D·X] + iv·E[D·Z] + int·E[D·X·Z]`,
//! * covariance row: `Cov(Z·D, E·Y) = act·Cov(Z·D, E·X) + int·Cov(Z·D, E·X·Z)`,
//! * level row: `E[Y] = act·E[X] + iv·E[Z] + int·E[X·Z] (+ level)`,
//!
//! and, for blocks with a free intercept `level`, the action-residual row
//! `E[E·Y] = act·E[E·X] + int·E[E·X·Z]`. The first three rows alone have
//! rank two for a binary instrument, so the level row is always included.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game_model::spec::{GameSpec, NV};

use super::law::{JointLaw, PointTable};
use super::KahanSum;

/// Threshold on the smallest singular value and on the instrument relevance.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Population identifying system at one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationSystem {
    /// Coefficient matrix, one row per moment equation.
    pub matrix: DMatrix<f64>,
    /// Right-hand side.
    pub rhs: DVector<f64>,
    /// Least-squares solution `(act, iv, int[, level])`.
    pub solution: DVector<f64>,
    /// Smallest singular value of the matrix.
    pub min_singular_value: f64,
    /// Largest singular value of the matrix.
    pub max_singular_value: f64,
    /// `|Cov(X, Z | s, u)|`.
    pub relevance: f64,
}

impl IdentificationSystem {
    /// Row residuals `M·coefs − rhs` at a given coefficient vector.
    pub fn residuals(&self, coefs: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(coefs);
        (&self.matrix * t - &self.rhs).iter().copied().collect()
    }
}

/// Conditional moments of `(Z, X, Y)` within one cell.
struct CellMoments {
    /// `P(v, z, x | s, u)` indexed `[v][z][x]`.
    p: [[[f64; 2]; 2]; NV],
    /// `E[Y | s, u, v, z, x]`.
    y: [[[f64; 2]; 2]; NV],
}

impl CellMoments {
    fn expect(&self, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let mut acc = KahanSum::default();
        for v in 0..NV {
            for z in 0..2 {
                for x in 0..2 {
                    let p = self.p[v][z][x];
                    if p != 0.0 {
                        acc.add(p * f(z as f64, x as f64, self.y[v][z][x]));
                    }
                }
            }
        }
        acc.total()
    }
}

/// Builds and solves the identifying system at point `k` and cell `(s, u)`
/// for an outcome with conditional mean `outcome(v, z, x)`.
pub fn identification_system(
    table: &PointTable,
    s: usize,
    u: usize,
    with_intercept: bool,
    outcome: impl Fn(usize, u8, u8) -> f64,
) -> Result<IdentificationSystem> {
    let mass = table.cell_mass(s, u);
    if mass <= 0.0 {
        return Err(Error::SingularSystem {
            s,
            u,
            reason: "cell has zero probability".into(),
        });
    }
    let mut m = CellMoments {
        p: [[[0.0; 2]; 2]; NV],
        y: [[[0.0; 2]; 2]; NV],
    };
    for v in 0..NV {
        for z in 0..2u8 {
            for x in 0..2u8 {
                m.p[v][z as usize][x as usize] = table.prob(s, u, v, z, x) / mass;
                m.y[v][z as usize][x as usize] = outcome(v, z, x);
            }
        }
    }
    let f1 = m.expect(|z, _, _| z);
    let pz1 = f1;
    let f2 = [
        if pz1 < 1.0 { m.expect(|z, x, _| (1.0 - z) * x) / (1.0 - pz1) } else { 0.0 },
        if pz1 > 0.0 { m.expect(|z, x, _| z * x) / pz1 } else { 0.0 },
    ];
    let e = |z: f64, x: f64| x - if z > 0.5 { f2[1] } else { f2[0] };
    let d = |z: f64| z - f1;
    let relevance = (m.expect(|z, x, _| z * x) - f1 * m.expect(|_, x, _| x)).abs();

    let f3 = m.expect(|z, x, y| e(z, x) * y);
    let f4 = m.expect(|z, x, _| e(z, x) * x);
    let f5 = m.expect(|z, x, _| e(z, x) * x * z);
    let var_z = f1 * (1.0 - f1);

    let cols = if with_intercept { 4 } else { 3 };
    let mut rows: Vec<(Vec<f64>, f64)> = vec![
        (
            vec![m.expect(|z, x, _| d(z) * e(z, x) * x), 0.0, m.expect(|z, x, _| d(z) * e(z, x) * x * z)],
            m.expect(|z, x, y| d(z) * e(z, x) * y),
        ),
        (
            vec![m.expect(|z, x, _| d(z) * x), m.expect(|z, _, _| d(z) * z), m.expect(|z, x, _| d(z) * x * z)],
            m.expect(|z, _, y| d(z) * y),
        ),
        (
            vec![
                m.expect(|z, x, _| z * d(z) * e(z, x) * x) - var_z * f4,
                0.0,
                m.expect(|z, x, _| x * z * d(z) * e(z, x)) - var_z * f5,
            ],
            m.expect(|z, x, y| z * d(z) * e(z, x) * y) - var_z * f3,
        ),
        (
            vec![m.expect(|_, x, _| x), f1, m.expect(|z, x, _| x * z)],
            m.expect(|_, _, y| y),
        ),
    ];
    if with_intercept {
        for (i, r) in rows.iter_mut().enumerate() {
            r.0.push(if i == 3 { 1.0 } else { 0.0 });
        }
        rows.push((vec![f4, 0.0, f5, 0.0], f3));
    }
    let matrix = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].0[j]);
    let rhs = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    let svd = matrix.clone().svd(true, true);
    let min_singular_value = svd.singular_values.min();
    let max_singular_value = svd.singular_values.max();
    if relevance < SINGULAR_TOL {
        return Err(Error::SingularSystem {
            s,
            u,
            reason: format!("instrument relevance |Cov(X, Z)| = {relevance:e}"),
        });
    }
    if min_singular_value < SINGULAR_TOL {
        return Err(Error::SingularSystem {
            s,
            u,
            reason: format!("smallest singular value {min_singular_value:e}"),
        });
    }
    let solution = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::SingularSystem { s, u, reason: e.to_string() })?;
    Ok(IdentificationSystem {
        matrix,
        rhs,
        solution,
        min_singular_value,
        max_singular_value,
        relevance,
    })
}

/// Identifying system of the reward block of the actor at point `k`.
pub fn reward_system(game: &GameSpec, table: &PointTable, k: usize, s: usize, u: usize) -> Result<IdentificationSystem> {
    let reward = game.reward_at(k);
    identification_system(table, s, u, false, |v, z, x| reward.mean(s, u, v, x, z))
}

/// Identifying system of Alice's first-step reward block at cell `(s, u)`.
pub fn first_step_system(game: &GameSpec, law: &JointLaw, s: usize, u: usize) -> Result<IdentificationSystem> {
    reward_system(game, law.point(0), 0, s, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::fixtures;
    use crate::oracle::law::exact_joint_law;
    use crate::oracle::truth::{continuation_truth, true_reward_coefficients};

    #[test]
    fn t1_recovers_marginal_coefficients() {
        let b = fixtures::t1();
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        let sys = first_step_system(&b.game, &law, 0, 0).unwrap();
        let want = [1.2, 0.5, 0.25];
        for i in 0..3 {
            assert!((sys.solution[i] - want[i]).abs() < 1e-10, "{:?}", sys.solution);
        }
        assert!((sys.relevance - 0.075).abs() < 1e-12);
        assert!(sys.residuals(&want).iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn t1_bob_block_recovers_marginal_coefficients() {
        let b = fixtures::t1();
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        let sys = reward_system(&b.game, law.point(1), 1, 0, 0).unwrap();
        for (i, w) in [0.8, 0.3, 0.1].iter().enumerate() {
            assert!((sys.solution[i] - w).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_instrument_is_singular() {
        let b = fixtures::t1_without_instrument();
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        assert!(matches!(first_step_system(&b.game, &law, 0, 0), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn unconfounded_outcome_matches_saturated_regression() {
        let b = fixtures::t1();
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        let sys = identification_system(law.point(0), 0, 0, false, |_, z, x| 0.7 * x as f64 - 0.2 * z as f64 + 0.4 * (x * z) as f64).unwrap();
        for (i, w) in [0.7, -0.2, 0.4].iter().enumerate() {
            assert!((sys.solution[i] - w).abs() < 1e-10);
        }
    }

    #[test]
    fn random_fixtures_satisfy_identities() {
        for i in 0..5 {
            let b = fixtures::random_fixture(21, i, 1);
            let law = exact_joint_law(&b.game, &b.behavior).unwrap();
            for k in 0..2 {
                let truth = true_reward_coefficients(&b.game, k);
                for s in 0..b.game.n_states {
                    for u in 0..b.game.n_private {
                        let sys = reward_system(&b.game, law.point(k), k, s, u).unwrap();
                        let t = truth.at(s, u);
                        assert!(sys.residuals(&t).iter().all(|r| r.abs() < 1e-10), "fixture {i} point {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn continuation_blocks_recover_marginal_coefficients() {
        let b = fixtures::t2(2);
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        let g = |s2: usize, _u2: usize, x: u8| 0.3 + 0.9 * s2 as f64 - 0.4 * (s2 as f64) * x as f64;
        for k in 0..3 {
            let truth = continuation_truth(&b.game, k, g);
            let kernel = b.game.kernel_at(k);
            for s in 0..2 {
                let sys = identification_system(law.point(k), s, 0, true, |v, z, x| {
                    kernel[s][0][v][x as usize][z as usize].iter().enumerate().map(|(t, q)| q * g(t, 0, x)).sum()
                })
                .unwrap();
                let want = truth[s].to_array();
                for j in 0..4 {
                    assert!((sys.solution[j] - want[j]).abs() < 1e-10, "k={k} s={s} {:?} vs {:?}", sys.solution, want);
                }
            }
        }
    }

    #[test]
    fn negative_control_is_biased() {
        let b = fixtures::negative_control();
        let law = exact_joint_law(&b.game, &b.behavior).unwrap();
        let sys = first_step_system(&b.game, &law, 0, 0).unwrap();
        let truth = true_reward_coefficients(&b.game, 0).at(0, 0);
        let bias = (0..3).map(|i| (sys.solution[i] - truth[i]).abs()).fold(0.0, f64::max);
        assert!(bias >= 0.01, "bias {bias}");
    }
}
