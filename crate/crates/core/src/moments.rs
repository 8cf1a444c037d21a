//! The invalid-instrument moment system of one decision point.
//!
//! At a point with action `X` and instrument `Z` (the other player's previous
//! action), the nuisances are
//! `f1(s,u) = E[Z | s,u]`, `f2(s,u,z) = E[X | s,u,z]`, and with
//! `D = Z − f1`, `E = X − f2`: `f3 = E[E·Y | s,u]`, `f4 = E[E·X | s,u]`,
//! `f5 = E[E·X·Z | s,u]`. The residual stack for coefficients
//! `(act, iv, int[, level])` is
//!
//! * `w1 = D·E·(Y − act X − int XZ)`,
//! * `w2 = D·(Y − act X − iv Z − int XZ)`,
//! * `w3 = Z·D·E·(Y − act X − int XZ) − f1(1 − f1)·(f3 − act f4 − int f5)`,
//! * level `Y − act X − iv Z − int XZ [− level]`,
//! * and, for blocks with an intercept, `E·(Y − act X − int XZ)`.
//!
//! Each residual is affine in the outcome and in the coefficients, so a point
//! is represented by its sub-cells `(s, u, z, x)` with per-row coefficient
//! vectors and outcome multipliers.

use nalgebra::DMatrix;

use crate::cells::{sub_parts, PointCells, SUB};
use crate::error::{Error, Result};
use crate::sieve::{Projector, SieveBasis};

/// Clipping bounds applied to the fitted action propensity `f2`.
pub const F2_CLIP: (f64, f64) = (1e-6, 1.0 - 1e-6);
/// Smallest admissible conditional instrument variance.
pub const MIN_IV_VARIANCE: f64 = 1e-6;

/// How nuisance functions enter the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceMode {
    /// Nuisances are fitted first and plugged in.
    OracleNuisance,
    /// Nuisances and coefficients are estimated together from the stacked residuals.
    Joint,
}

impl std::str::FromStr for NuisanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle-nuisance" => Ok(NuisanceMode::OracleNuisance),
            "joint" => Ok(NuisanceMode::Joint),
            other => Err(Error::MalformedSpec(format!("unknown nuisance mode '{other}'"))),
        }
    }
}

/// Fitted nuisance functions of one decision point, evaluated per `(s, u)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    /// `f1(s,u)` after clipping to `[0, 1]`.
    pub f1: Vec<f64>,
    /// `f2(s,u,z)` after clipping to [`F2_CLIP`].
    pub f2: Vec<[f64; 2]>,
    /// `f4(s,u)`.
    pub f4: Vec<f64>,
    /// `f5(s,u)`.
    pub f5: Vec<f64>,
    /// Linear map from sub-cell outcome means to `f3(s,u)`.
    pub f3_map: DMatrix<f64>,
    /// Number of clipped nuisance values.
    pub clip_count: usize,
    /// Condition number of the instrument-basis Gram matrix.
    pub condition: f64,
}

impl NuisanceSet {
    /// `f3(s,u)` for an outcome with sub-cell means `ybar`.
    pub fn f3(&self, ybar: &[f64]) -> Vec<f64> {
        (&self.f3_map * nalgebra::DVector::from_column_slice(ybar)).iter().copied().collect()
    }

    /// Instrument residual `D = z − f1`.
    pub fn d(&self, cell: usize, z: u8) -> f64 {
        z as f64 - self.f1[cell]
    }

    /// Action residual `E = x − f2(z)`.
    pub fn e(&self, cell: usize, z: u8, x: u8) -> f64 {
        x as f64 - self.f2[cell][z as usize]
    }

    /// In-sample means of the nuisance-defining residuals
    /// `(Z − f1, X − f2, E·Y − f3, E·X − f4, E·X·Z − f5)`.
    pub fn residual_means(&self, point: &PointCells, ybar: &[f64]) -> [f64; 5] {
        let f3 = self.f3(ybar);
        let mut out = [0.0; 5];
        for (sub, w) in point.weight.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let (c, z, x) = sub_parts(sub);
            let e = self.e(c, z, x);
            let (xf, zf) = (x as f64, z as f64);
            out[0] += w * (zf - self.f1[c]);
            out[1] += w * e;
            out[2] += w * (e * ybar[sub] - f3[c]);
            out[3] += w * (e * xf - self.f4[c]);
            out[4] += w * (e * xf * zf - self.f5[c]);
        }
        out
    }
}

/// Per-cell conditional means of a sub-cell quantity.
fn cell_means(point: &PointCells, value: impl Fn(usize) -> f64) -> Vec<f64> {
    let cells = point.spaces.cells();
    let mut out = vec![0.0; cells];
    for (c, o) in out.iter_mut().enumerate() {
        let total = point.cell_weight(c);
        if total > 0.0 {
            *o = (0..SUB).map(|j| point.weight[c * SUB + j] * value(c * SUB + j)).sum::<f64>() / total;
        }
    }
    out
}

/// Fits `f1`, `f2`, `f4`, `f5` and the linear map defining `f3` at one point.
///
/// The instrument is the other player's previous action and the action is the
/// current actor's, so the same code serves both players.
pub fn estimate_nuisances(point: &PointCells, basis: &SieveBasis) -> Result<NuisanceSet> {
    let k = basis.k();
    if let Some(n) = point.n {
        if n < k {
            return Err(Error::InsufficientData { rows: n, needed: k });
        }
    }
    let sp = point.spaces;
    let cells = sp.cells();
    let cell_w = point.cell_weights();
    for c in 0..cells {
        if cell_w[c] <= 0.0 {
            continue;
        }
        let pz = (point.weight[c * SUB + 2] + point.weight[c * SUB + 3]) / cell_w[c];
        let variance = pz * (1.0 - pz);
        if variance < MIN_IV_VARIANCE {
            return Err(Error::DegenerateIV {
                s: c / sp.n_private,
                u: c % sp.n_private,
                variance,
            });
        }
    }
    let projector = Projector::new(basis, &cell_w);
    let hat = projector.hat_matrix();
    let mut clip_count = 0;

    let f1_raw = projector.fitted(&cell_means(point, |sub| sub_parts(sub).1 as f64));
    let f1: Vec<f64> = f1_raw
        .iter()
        .map(|v| {
            if !(0.0..=1.0).contains(v) {
                clip_count += 1;
            }
            v.clamp(0.0, 1.0)
        })
        .collect();

    let mut f2 = vec![[0.0; 2]; cells];
    for z in 0..2u8 {
        let zw: Vec<f64> = (0..cells).map(|c| point.weight[c * SUB + 2 * z as usize] + point.weight[c * SUB + 2 * z as usize + 1]).collect();
        let rate: Vec<f64> = (0..cells)
            .map(|c| if zw[c] > 0.0 { point.weight[c * SUB + 2 * z as usize + 1] / zw[c] } else { 0.0 })
            .collect();
        let fitted = Projector::new(basis, &zw).fitted(&rate);
        for c in 0..cells {
            let v = fitted[c];
            if v < F2_CLIP.0 || v > F2_CLIP.1 {
                clip_count += 1;
            }
            f2[c][z as usize] = v.clamp(F2_CLIP.0, F2_CLIP.1);
        }
    }
    let e = |sub: usize| {
        let (c, z, x) = sub_parts(sub);
        x as f64 - f2[c][z as usize]
    };
    let f4 = &hat * nalgebra::DVector::from_vec(cell_means(point, |sub| e(sub) * sub_parts(sub).2 as f64));
    let f5 = &hat * nalgebra::DVector::from_vec(cell_means(point, |sub| {
        let (_, z, x) = sub_parts(sub);
        e(sub) * (x * z) as f64
    }));
    let n_sub = point.weight.len();
    let mut mean_map = DMatrix::zeros(cells, n_sub);
    for sub in 0..n_sub {
        let c = sub / SUB;
        if cell_w[c] > 0.0 {
            mean_map[(c, sub)] = point.weight[sub] / cell_w[c] * e(sub);
        }
    }
    Ok(NuisanceSet {
        f1,
        f2,
        f4: f4.iter().copied().collect(),
        f5: f5.iter().copied().collect(),
        f3_map: hat * mean_map,
        clip_count,
        condition: projector.gram_inverse.condition,
    })
}

/// Observed variables of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    /// Outcome `Y`.
    pub y: f64,
    /// Action `A` of the acting player.
    pub a: f64,
    /// Instrument `B`, the other player's previous action.
    pub b: f64,
}

/// The ten product features of a row given `f1(s,u)` and `f2(s,u,b)`:
/// `D·E·Y, D·E·A, B·D·E·A, D·Y, D·A, B·D, A·B·D, B·D·E·Y, A·D·E, A·B·D·E`
/// with `D = B − f1` and `E = A − f2`.
pub fn moment_features(row: Row, f1: f64, f2: f64) -> [f64; 10] {
    let d = row.b - f1;
    let e = row.a - f2;
    let (y, a, b) = (row.y, row.a, row.b);
    [
        d * e * y,
        d * e * a,
        b * d * e * a,
        d * y,
        d * a,
        b * d,
        a * b * d,
        b * d * e * y,
        a * d * e,
        a * b * d * e,
    ]
}

/// Index of the `w3` row inside a moment system.
pub const W3_ROW: usize = 2;

/// Residual stack of one decision point in oracle-nuisance form.
///
/// For sub-cell `j` and row `r`, the conditional mean of the residual is
/// `Σ_p loadings[j][r][p]·coef_p(s,u) + outcome[j][r]·ȳ_j`, and row [`W3_ROW`]
/// additionally carries `f3_scale[cell]·f3(cell)` where `f3` is linear in `ȳ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    /// Number of coefficient functions (3, or 4 with an intercept).
    pub params: usize,
    /// Number of residual rows (4, or 5 with an intercept).
    pub rows: usize,
    /// Sub-cell weights.
    pub weight: Vec<f64>,
    /// `loadings[sub][row][param]`.
    pub loadings: Vec<Vec<[f64; 4]>>,
    /// `outcome[sub][row]`.
    pub outcome: Vec<Vec<f64>>,
    /// Coefficient of `f3(cell)` in the `w3` row, `−f1(1 − f1)`.
    pub f3_scale: Vec<f64>,
    /// The nuisances the system was assembled with.
    pub nuisances: NuisanceSet,
}

/// Assembles the oracle-nuisance residual stack of a point.
pub fn assemble_system(point: &PointCells, nuisances: &NuisanceSet, with_intercept: bool) -> MomentSystem {
    let params = if with_intercept { 4 } else { 3 };
    let rows = if with_intercept { 5 } else { 4 };
    let n_sub = point.weight.len();
    let mut loadings = Vec::with_capacity(n_sub);
    let mut outcome = Vec::with_capacity(n_sub);
    for sub in 0..n_sub {
        let (c, z, x) = sub_parts(sub);
        let (xf, zf) = (x as f64, z as f64);
        let d = nuisances.d(c, z);
        let e = nuisances.e(c, z, x);
        let v = nuisances.f1[c] * (1.0 - nuisances.f1[c]);
        let lvl = if with_intercept { -1.0 } else { 0.0 };
        let mut p = vec![
            [-d * e * xf, 0.0, -d * e * xf * zf, 0.0],
            [-d * xf, -d * zf, -d * xf * zf, 0.0],
            [-(zf * d * e * xf - v * nuisances.f4[c]), 0.0, -(zf * d * e * xf * zf - v * nuisances.f5[c]), 0.0],
            [-xf, -zf, -xf * zf, lvl],
        ];
        let mut o = vec![d * e, d, zf * d * e, 1.0];
        if with_intercept {
            p.push([-e * xf, 0.0, -e * xf * zf, 0.0]);
            o.push(e);
        }
        loadings.push(p);
        outcome.push(o);
    }
    MomentSystem {
        params,
        rows,
        weight: point.weight.clone(),
        loadings,
        outcome,
        f3_scale: nuisances.f1.iter().map(|f| -f * (1.0 - f)).collect(),
        nuisances: nuisances.clone(),
    }
}

impl MomentSystem {
    /// Outcome part of every residual, per sub-cell and row.
    pub fn offsets(&self, ybar: &[f64]) -> Vec<Vec<f64>> {
        let f3 = self.nuisances.f3(ybar);
        self.outcome
            .iter()
            .enumerate()
            .map(|(sub, o)| {
                let c = sub / SUB;
                o.iter()
                    .enumerate()
                    .map(|(r, m)| m * ybar[sub] + if r == W3_ROW { self.f3_scale[c] * f3[c] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Residuals per sub-cell and row at per-cell coefficients `coefs[cell]`.
    pub fn evaluate(&self, ybar: &[f64], coefs: &[[f64; 4]]) -> Vec<Vec<f64>> {
        let offsets = self.offsets(ybar);
        offsets
            .into_iter()
            .enumerate()
            .map(|(sub, a)| {
                let t = coefs[sub / SUB];
                a.into_iter()
                    .enumerate()
                    .map(|(r, av)| av + (0..self.params).map(|p| self.loadings[sub][r][p] * t[p]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Conditional means of the residuals per `(s, u)` cell.
    pub fn conditional_means(&self, ybar: &[f64], coefs: &[[f64; 4]]) -> Vec<Vec<f64>> {
        let w = self.evaluate(ybar, coefs);
        let cells = self.weight.len() / SUB;
        (0..cells)
            .map(|c| {
                let total: f64 = self.weight[c * SUB..(c + 1) * SUB].iter().sum();
                (0..self.rows)
                    .map(|r| {
                        if total > 0.0 {
                            (0..SUB).map(|j| self.weight[c * SUB + j] * w[c * SUB + j][r]).sum::<f64>() / total
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Per-cell nuisance values used as free parameters in joint mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceValues {
    pub f1: f64,
    pub f2: [f64; 2],
    pub f3: f64,
    pub f4: f64,
    pub f5: f64,
}

/// Number of residual rows in the joint stack without an intercept.
pub const JOINT_ROWS: usize = 10;

/// Full residual stack of one sub-cell for joint estimation: the identifying
/// rows followed by the nuisance-defining rows
/// `Z − f1`, `(1 − Z)(X − f2(0))`, `Z(X − f2(1))`, `E·Y − f3`, `E·X − f4`, `E·X·Z − f5`.
pub fn joint_rows(z: u8, x: u8, ybar: f64, coefs: [f64; 4], with_intercept: bool, f: NuisanceValues) -> Vec<f64> {
    let (xf, zf) = (x as f64, z as f64);
    let d = zf - f.f1;
    let e = xf - f.f2[z as usize];
    let v = f.f1 * (1.0 - f.f1);
    let core = ybar - coefs[0] * xf - coefs[2] * xf * zf;
    let mut out = vec![
        d * e * core,
        d * (core - coefs[1] * zf),
        zf * d * e * core - v * (f.f3 - coefs[0] * f.f4 - coefs[2] * f.f5),
        core - coefs[1] * zf - if with_intercept { coefs[3] } else { 0.0 },
    ];
    if with_intercept {
        out.push(e * core);
    }
    out.extend([
        zf - f.f1,
        (1.0 - zf) * (xf - f.f2[0]),
        zf * (xf - f.f2[1]),
        e * ybar - f.f3,
        e * xf - f.f4,
        e * xf * zf - f.f5,
    ]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{sub_index, DataCells};
    use crate::game_model::fixtures;
    use crate::game_model::simulate::simulate_dataset;
    use crate::oracle::truth::true_reward_coefficients;
    use crate::sieve::{build_basis, BasisKind};

    fn saturated(spaces: crate::game_model::spec::Spaces) -> SieveBasis {
        build_basis(BasisKind::Saturated, spaces, &[], 1).unwrap()
    }

    #[test]
    fn rho_zero_factors() {
        let r = moment_features(Row { y: 2.0, a: 1.0, b: 0.5 }, 0.5, 0.3);
        assert!(r[..5].iter().all(|v| *v == 0.0));
        let r = moment_features(Row { y: 2.0, a: 0.6, b: 1.0 }, 0.5, 0.6);
        assert_eq!((r[0], r[7], r[8], r[9]), (0.0, 0.0, 0.0, 0.0));
        let r = moment_features(Row { y: 2.0, a: 1.0, b: 1.0 }, 0.5, 0.6);
        assert!((r[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn t1_nuisances_from_data() {
        let b = fixtures::t1();
        let data = simulate_dataset(&b.game, &b.behavior, 100_000, 11).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let basis = saturated(b.game.spaces());
        let nuis = estimate_nuisances(&cells.points[0], &basis).unwrap();
        assert!((nuis.f1[0] - 0.5).abs() < 0.01);
        assert!((nuis.f2[0][1] - nuis.f2[0][0] - 0.3).abs() < 0.015);
        let means = nuis.residual_means(&cells.points[0], &cells.points[0].reward);
        assert!(means.iter().all(|m| m.abs() < 1e-10), "{means:?}");
    }

    #[test]
    fn constant_instrument_is_degenerate() {
        let mut b = fixtures::t1();
        b.behavior.initial_bob = 1.0;
        let data = simulate_dataset(&b.game, &b.behavior, 1000, 1).unwrap();
        let cells = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let err = estimate_nuisances(&cells.points[0], &saturated(b.game.spaces())).unwrap_err();
        assert!(matches!(err, Error::DegenerateIV { .. }));
    }

    #[test]
    fn population_residuals_vanish_at_truth() {
        let bundles = [fixtures::t1(), fixtures::t2(2), fixtures::random_fixture(3, 0, 1), fixtures::random_fixture(3, 1, 2)];
        for b in &bundles {
            let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
            let basis = saturated(b.game.spaces());
            for point in &cells.points {
                let nuis = estimate_nuisances(point, &basis).unwrap();
                let sys = assemble_system(point, &nuis, false);
                let truth = true_reward_coefficients(&b.game, point.k);
                let coefs: Vec<[f64; 4]> = (0..b.game.spaces().cells())
                    .map(|c| {
                        let t = truth.at(c / b.game.n_private, c % b.game.n_private);
                        [t[0], t[1], t[2], 0.0]
                    })
                    .collect();
                for (c, means) in sys.conditional_means(&point.reward, &coefs).iter().enumerate() {
                    if point.cell_weight(c) > 0.0 {
                        assert!(means.iter().all(|m| m.abs() < 1e-10), "k={} {means:?}", point.k);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_coefficients_leave_the_outcome_part() {
        let b = fixtures::t1();
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let nuis = estimate_nuisances(&cells.points[0], &saturated(b.game.spaces())).unwrap();
        let sys = assemble_system(&cells.points[0], &nuis, false);
        let y = &cells.points[0].reward;
        assert_eq!(sys.evaluate(y, &[[0.0; 4]]), sys.offsets(y));
        let sub = sub_index(0, 1, 1);
        let f = moment_features(Row { y: y[sub], a: 1.0, b: 1.0 }, nuis.f1[0], nuis.f2[0][1]);
        assert!((sys.offsets(y)[sub][0] - f[0]).abs() < 1e-14);
        assert!((sys.offsets(y)[sub][1] - f[3]).abs() < 1e-14);
    }

    #[test]
    fn residuals_are_linear_in_coefficients() {
        let b = fixtures::t2(1);
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let nuis = estimate_nuisances(&cells.points[0], &saturated(b.game.spaces())).unwrap();
        let sys = assemble_system(&cells.points[0], &nuis, true);
        let y = cells.points[0].pseudo_outcome(|c, x| c as f64 - x as f64);
        let t1 = [[0.1, 0.2, 0.3, 0.4], [0.5, -0.6, 0.7, -0.8]];
        let t2 = [[1.1, -0.2, 0.0, 0.3], [0.2, 0.6, -0.7, 0.1]];
        let (w1, w2) = (sys.evaluate(&y, &t1), sys.evaluate(&y, &t2));
        for sub in 0..8 {
            for r in 0..5 {
                let c = sub / SUB;
                let lin: f64 = (0..4).map(|p| sys.loadings[sub][r][p] * (t1[c][p] - t2[c][p])).sum();
                assert!((w1[sub][r] - w2[sub][r] - lin).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn duplicated_rows_give_the_same_system() {
        let b = fixtures::t1();
        let data = simulate_dataset(&b.game, &b.behavior, 500, 4).unwrap();
        let mut doubled = data.observed.clone();
        doubled.trajectories.extend(data.observed.trajectories.iter().cloned());
        let basis = saturated(b.game.spaces());
        let one = DataCells::from_dataset(b.game.spaces(), &data.observed).unwrap();
        let two = DataCells::from_dataset(b.game.spaces(), &doubled).unwrap();
        let s1 = assemble_system(&one.points[0], &estimate_nuisances(&one.points[0], &basis).unwrap(), false);
        let s2 = assemble_system(&two.points[0], &estimate_nuisances(&two.points[0], &basis).unwrap(), false);
        let coefs = [[1.0, 0.5, 0.25, 0.0]];
        let (m1, m2) = (
            s1.conditional_means(&one.points[0].reward, &coefs),
            s2.conditional_means(&two.points[0].reward, &coefs),
        );
        for (a, c) in m1[0].iter().zip(&m2[0]) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_rows_match_oracle_form_at_fitted_nuisances() {
        let b = fixtures::t1();
        let cells = DataCells::from_population(&b.game, &b.behavior).unwrap();
        let point = &cells.points[0];
        let nuis = estimate_nuisances(point, &saturated(b.game.spaces())).unwrap();
        let sys = assemble_system(point, &nuis, false);
        let coefs = [0.9, 0.4, 0.2, 0.0];
        let w = sys.evaluate(&point.reward, &[coefs]);
        let f = NuisanceValues {
            f1: nuis.f1[0],
            f2: nuis.f2[0],
            f3: nuis.f3(&point.reward)[0],
            f4: nuis.f4[0],
            f5: nuis.f5[0],
        };
        for sub in 0..4 {
            let (_, z, x) = sub_parts(sub);
            let j = joint_rows(z, x, point.reward[sub], coefs, false, f);
            assert_eq!(j.len(), JOINT_ROWS);
            for r in 0..4 {
                assert!((j[r] - w[sub][r]).abs() < 1e-14);
            }
        }
    }
}
