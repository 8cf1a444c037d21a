//! Exact checks of the identification assumptions on a spec.

use std::fmt;

use serde::Serialize;

use super::spec::{step_label, BehaviorPolicyPair, GameSpec, NV};
use crate::error::Result;
use crate::oracle::law::{point_laws, PointTable};
use crate::oracle::KahanSum;

/// Tolerance above which a check is flagged.
pub const VALIDATION_TOL: f64 = 1e-12;

/// One exact check at a decision point and cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    /// Step label (`"h"` or `"h.5"`).
    pub step: String,
    pub s: usize,
    pub u: usize,
    /// Name of the checked quantity.
    pub name: String,
    /// Computed value.
    pub value: f64,
    /// Whether the check passes.
    pub ok: bool,
}

/// Result of [`validate_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    /// True when no check is flagged.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    /// Flagged checks.
    pub fn violations(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.ok).collect()
    }

    /// Checks with a given name.
    pub fn named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Check> + 'a {
        self.checks.iter().filter(move |c| c.name == name)
    }

    /// CSV rendering with columns `step,s,u,check,value,ok`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,s,u,check,value,ok\n");
        for c in &self.checks {
            out.push_str(&format!("{},{},{},{},{:e},{}\n", c.step, c.s, c.u, c.name, c.value, c.ok));
        }
        out
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bad = self.violations();
        writeln!(f, "{} checks, {} violations", self.checks.len(), bad.len())?;
        for c in bad {
            writeln!(f, "  step {} (s={}, u={}): {} = {:e}", c.step, c.s, c.u, c.name, c.value)?;
        }
        Ok(())
    }
}

fn covariance(p: &[f64; NV], f: &[f64; NV], g: &[f64; NV]) -> f64 {
    let (mut ef, mut eg, mut efg) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
    for v in 0..NV {
        ef.add(p[v] * f[v]);
        eg.add(p[v] * g[v]);
        efg.add(p[v] * f[v] * g[v]);
    }
    efg.total() - ef.total() * eg.total()
}

/// Runs every exact check.
///
/// Per decision point and cell the report lists: the instrument relevance
/// `|Cov(X, Z | s, u)|`; the largest deviation from `Z ⟂ V | (S, U)`; the seven
/// orthogonality covariances between the reward coefficient functions and the
/// action-propensity functions `p_z`, `p_us`; the mean of the reward baseline
/// over `V`; and, per next-state indicator, the same seven covariances for the
/// transition coefficients plus the covariance of the transition baseline with
/// `p_us`.
pub fn validate_spec(game: &GameSpec, behavior: &BehaviorPolicyPair) -> Result<ValidationReport> {
    game.check()?;
    behavior.check(game.spaces())?;
    let laws = point_laws(game, behavior);
    let mut report = ValidationReport::default();
    for k in 0..game.spaces().points() {
        let table = &laws.points[k];
        let law = &game.private_laws[k];
        let reward = game.reward_at(k);
        let kernel = game.kernel_at(k);
        let label = step_label(k);
        for s in 0..game.n_states {
            for u in 0..game.n_private {
                let mut push = |name: String, value: f64, ok: bool| {
                    report.checks.push(Check {
                        step: label.clone(),
                        s,
                        u,
                        name,
                        value,
                        ok,
                    })
                };
                let mass = table.cell_mass(s, u);
                if mass > 0.0 {
                    let rel = relevance(table, s, u, mass);
                    push("relevance".into(), rel, rel > VALIDATION_TOL);
                    let ci = instrument_independence(table, s, u, mass);
                    push("instrument_independent_of_v".into(), ci, ci <= VALIDATION_TOL);
                }
                let pv: [f64; NV] = std::array::from_fn(|v| law.p_v(s, v));
                let propensity_us: [f64; NV] = std::array::from_fn(|v| behavior.action_prob(k, s, u, v, 0));
                let propensity_z: [f64; NV] = std::array::from_fn(|v| behavior.action_prob(k, s, u, v, 1) - propensity_us[v]);
                let coef = |t: &Vec<Vec<[f64; NV]>>| -> [f64; NV] { t[s][u] };
                let (ra, rz, raz, rb) = (coef(&reward.action), coef(&reward.instrument), coef(&reward.interaction), coef(&reward.baseline));
                for (name, value) in orthogonality(&pv, &ra, &rz, &raz, &rb, &propensity_z, &propensity_us) {
                    push(format!("reward_{name}"), value, value.abs() <= VALIDATION_TOL);
                }
                let base_mean: f64 = (0..NV).map(|v| pv[v] * rb[v]).sum();
                push("reward_baseline_mean".into(), base_mean, base_mean.abs() <= VALIDATION_TOL);
                for t in 0..game.n_states {
                    let corner = |x: usize, z: usize| -> [f64; NV] { std::array::from_fn(|v| kernel[s][u][v][x][z][t]) };
                    let (c00, c01, c10, c11) = (corner(0, 0), corner(0, 1), corner(1, 0), corner(1, 1));
                    let ta: [f64; NV] = std::array::from_fn(|v| c10[v] - c00[v]);
                    let tz: [f64; NV] = std::array::from_fn(|v| c01[v] - c00[v]);
                    let taz: [f64; NV] = std::array::from_fn(|v| c11[v] - c10[v] - c01[v] + c00[v]);
                    for (name, value) in orthogonality(&pv, &ta, &tz, &taz, &c00, &propensity_z, &propensity_us) {
                        push(format!("transition_{t}_{name}"), value, value.abs() <= VALIDATION_TOL);
                    }
                    let cov = covariance(&pv, &c00, &propensity_us);
                    push(format!("transition_{t}_baseline_propensity_us"), cov, cov.abs() <= VALIDATION_TOL);
                }
            }
        }
    }
    Ok(report)
}

fn orthogonality(
    pv: &[f64; NV],
    a: &[f64; NV],
    z: &[f64; NV],
    az: &[f64; NV],
    base: &[f64; NV],
    propensity_z: &[f64; NV],
    propensity_us: &[f64; NV],
) -> [(&'static str, f64); 7] {
    [
        ("cov_action_propensity_z", covariance(pv, a, propensity_z)),
        ("cov_action_propensity_us", covariance(pv, a, propensity_us)),
        ("cov_instrument_propensity_z", covariance(pv, z, propensity_z)),
        ("cov_instrument_propensity_us", covariance(pv, z, propensity_us)),
        ("cov_propensity_z_interaction", covariance(pv, propensity_z, az)),
        ("cov_propensity_z_baseline", covariance(pv, propensity_z, base)),
        ("cov_interaction_propensity_us", covariance(pv, az, propensity_us)),
    ]
}

fn relevance(table: &PointTable, s: usize, u: usize, mass: f64) -> f64 {
    let mut ez = 0.0;
    let mut ex = 0.0;
    let mut exz = 0.0;
    for z in 0..2u8 {
        for x in 0..2u8 {
            let p = table.observed(s, u, z, x) / mass;
            ez += p * z as f64;
            ex += p * x as f64;
            exz += p * (x * z) as f64;
        }
    }
    (exz - ex * ez).abs()
}

fn instrument_independence(table: &PointTable, s: usize, u: usize, mass: f64) -> f64 {
    let mut pzv = [[0.0; NV]; 2];
    for (z, row) in pzv.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            *cell = (table.prob(s, u, v, z as u8, 0) + table.prob(s, u, v, z as u8, 1)) / mass;
        }
    }
    let pz = [pzv[0].iter().sum::<f64>(), pzv[1].iter().sum::<f64>()];
    let mut worst: f64 = 0.0;
    for v in 0..NV {
        let pvv = pzv[0][v] + pzv[1][v];
        for z in 0..2 {
            worst = worst.max((pzv[z][v] - pz[z] * pvv).abs());
        }
    }
    worst
}
