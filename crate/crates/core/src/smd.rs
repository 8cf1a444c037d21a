//! Sieve minimum-distance estimation and loss-gap confidence regions.
//!
//! Coefficient functions are expanded in a sieve basis, `coef_p(s,u) = Σ_k c[p·K + k]·q_k(s,u)`.
//! For residual row `r`, the projected conditional mean is summarised by
//! `b_r = Σ_j w_j q(cell_j) W_r(j) = D_r c + E_r ȳ`, and the empirical loss is
//! `L̂(c) = Σ_r b_rᵀ G⁻¹ b_r` with `G` the weighted Gram matrix of the basis.
//! `L̂` is a convex quadratic in `c`, so the estimator is the minimum-norm
//! solution of the normal equations and depends linearly on the outcome means
//! `ȳ`. A [`BlockSolver`] caches everything that does not depend on `ȳ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cells::{sub_parts, PointCells, SUB};
use crate::error::{Error, Result};
use crate::moments::{
    assemble_system, estimate_nuisances, joint_rows, MomentSystem, NuisanceValues, F2_CLIP, JOINT_ROWS, W3_ROW,
};
use crate::sieve::{gram, invert_gram, Projector, SieveBasis};

/// Relative eigenvalue threshold separating the range and the null space of the Hessian.
pub const NULL_TOL: f64 = 1e-12;

/// Exponent-and-constant settings of the region-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RegionSchedule {
    /// Smoothness exponent.
    #[serde(rename = "alpha")]
    pub smoothness: f64,
    /// Ill-posedness exponent.
    #[serde(rename = "varsigma")]
    pub ill_posedness: f64,
    /// Dimension of the conditioning variables.
    #[serde(rename = "d")]
    pub dimension: f64,
    /// Multiplicative constant.
    #[serde(rename = "c_eta")]
    pub constant: f64,
}

impl Default for RegionSchedule {
    fn default() -> Self {
        RegionSchedule {
            smoothness: 2.0,
            ill_posedness: 0.0,
            dimension: 1.0,
            constant: 0.11,
        }
    }
}

/// Region size `constant · horizon_weight · n^{−2s/(2s+2v+d)}` for smoothness `s`,
/// ill-posedness `v` and dimension `d`; zero for an infinite sample.
pub fn region_size(n: f64, smoothness: f64, ill_posedness: f64, dimension: f64, constant: f64, horizon_weight: f64) -> f64 {
    if n.is_infinite() {
        return 0.0;
    }
    constant * horizon_weight * n.powf(-2.0 * smoothness / (2.0 * smoothness + 2.0 * ill_posedness + dimension))
}

/// Horizon weight `max(1, (H − h)^4)` of a recursion block at step `h` (1-based).
pub fn horizon_weight(horizon: usize, step: usize) -> f64 {
    let gap = horizon.saturating_sub(step) as f64;
    gap.powi(4).max(1.0)
}

impl RegionSchedule {
    /// Region size for a block with the given horizon weight, scaled by the mean squared reward.
    pub fn size(&self, n: f64, horizon_weight: f64, reward_scale: f64) -> f64 {
        region_size(n, self.smoothness, self.ill_posedness, self.dimension, self.constant, horizon_weight) * reward_scale
    }
}

/// Result of a minimum-distance fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SmdFit {
    /// Number of coefficient functions.
    pub params: usize,
    /// Number of basis terms per coefficient function.
    pub k: usize,
    /// Sieve coefficients, parameter-major.
    pub coefficients: Vec<f64>,
    /// Achieved loss `L̂(ĉ)`.
    pub loss: f64,
    /// Condition number of the instrument Gram matrix.
    pub gram_condition: f64,
    /// Whether the Gram ridge was used.
    pub ridge: bool,
    /// Smallest non-null eigenvalue of the loss Hessian.
    pub min_singular_value: f64,
    /// Dimension of the Hessian null space.
    pub null_dim: usize,
}

impl SmdFit {
    /// Coefficient functions evaluated at a cell, padded to four entries.
    pub fn coefficients_at(&self, basis: &SieveBasis, cell: usize) -> [f64; 4] {
        coefficients_at(&self.coefficients, self.params, basis, cell)
    }
}

/// Evaluates parameter-major sieve coefficients at a cell.
pub fn coefficients_at(coefs: &[f64], params: usize, basis: &SieveBasis, cell: usize) -> [f64; 4] {
    let k = basis.k();
    let mut out = [0.0; 4];
    for (p, o) in out.iter_mut().enumerate().take(params) {
        *o = basis.combine(&coefs[p * k..(p + 1) * k], cell);
    }
    out
}

/// Linear functional on sieve coefficients equal to `Σ_cell Σ_p weights[cell][p]·coef_p(cell)`.
pub fn functional_weights(cell_weights: &[[f64; 4]], params: usize, basis: &SieveBasis) -> Vec<f64> {
    let k = basis.k();
    let mut w = vec![0.0; params * k];
    for (cell, om) in cell_weights.iter().enumerate() {
        let q = basis.eval(cell);
        for p in 0..params {
            if om[p] == 0.0 {
                continue;
            }
            for (j, qj) in q.iter().enumerate() {
                w[p * k + j] += om[p] * qj;
            }
        }
    }
    w
}

/// Shape of the loss-gap quadratic shared by every outcome fitted at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGeometry {
    /// Hessian `H` of `L̂` in sieve coefficients.
    pub hessian: DMatrix<f64>,
    /// Moore-Penrose inverse of `H`.
    pub hessian_pinv: DMatrix<f64>,
    /// Orthonormal basis of the null space of `H`, one column per direction.
    pub null_space: DMatrix<f64>,
    /// Range eigenpairs `(value, vector)` sorted by increasing value (longest axes first).
    pub axes: Vec<(f64, DVector<f64>)>,
}

impl RegionGeometry {
    fn from_hessian(hessian: DMatrix<f64>) -> Self {
        let dim = hessian.nrows();
        let eig = hessian.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let tol = NULL_TOL * max.max(f64::MIN_POSITIVE);
        let mut pinv = DMatrix::zeros(dim, dim);
        let mut nulls = Vec::new();
        let mut axes = Vec::new();
        for i in 0..dim {
            let v = eig.eigenvectors.column(i).into_owned();
            let l = eig.eigenvalues[i];
            if l > tol {
                pinv += &v * v.transpose() / l;
                axes.push((l, v));
            } else {
                nulls.push(v);
            }
        }
        axes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let null_space = if nulls.is_empty() { DMatrix::zeros(dim, 0) } else { DMatrix::from_columns(&nulls) };
        RegionGeometry {
            hessian,
            hessian_pinv: pinv,
            null_space,
            axes,
        }
    }

    /// Coefficient dimension.
    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    /// Smallest range eigenvalue, or zero when the Hessian vanishes.
    pub fn min_singular_value(&self) -> f64 {
        self.axes.first().map(|a| a.0).unwrap_or(0.0)
    }

    /// Half-width `min over the region of ⟨w, c − ĉ⟩ = −sqrt(2·size·wᵀH⁺w)` and the minimising offset.
    pub fn min_offset(&self, weights: &[f64], size: f64) -> Result<(f64, DVector<f64>)> {
        if weights.len() != self.dim() {
            return Err(Error::BasisMismatch {
                expected: self.dim(),
                got: weights.len(),
            });
        }
        let w = DVector::from_column_slice(weights);
        let wn = w.norm();
        if self.null_space.ncols() > 0 && wn > 0.0 {
            let comp = self.null_space.transpose() * &w;
            if comp.norm() > 1e-9 * wn {
                let direction: Vec<f64> = (&self.null_space * comp).iter().map(|v| -v).collect();
                return Err(Error::UnboundedBelow { direction });
            }
        }
        let hw = &self.hessian_pinv * &w;
        let quad = w.dot(&hw);
        if quad <= 0.0 || size <= 0.0 {
            return Ok((0.0, DVector::zeros(self.dim())));
        }
        let scale = (2.0 * size / quad).sqrt();
        Ok((-(2.0 * size * quad).sqrt(), hw * -scale))
    }

    /// Region members used by the sampled nested minimisation: the centre
    /// offset followed by `±` boundary offsets along the principal axes,
    /// longest axes first, truncated to `count` members.
    pub fn sample_offsets(&self, size: f64, count: usize) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(self.dim())];
        for (l, v) in &self.axes {
            if out.len() >= count {
                break;
            }
            let half = (2.0 * size / l).sqrt();
            out.push(v * half);
            if out.len() < count {
                out.push(v * -half);
            }
        }
        out.truncate(count);
        out
    }
}

/// Cached minimum-distance solver for one moment system; fits any outcome
/// vector by a matrix-vector product.
#[derive(Debug, Clone)]
pub struct BlockSolver {
    pub basis: SieveBasis,
    pub params: usize,
    d: Vec<DMatrix<f64>>,
    e: Vec<DMatrix<f64>>,
    gram_inverse: DMatrix<f64>,
    gram_condition: f64,
    ridge: bool,
    /// Linear map from sub-cell outcome means to fitted coefficients.
    pub response: DMatrix<f64>,
    /// Shared region shape.
    pub geometry: Arc<RegionGeometry>,
}

impl BlockSolver {
    /// Precomputes the normal equations of a moment system.
    pub fn new(system: &MomentSystem, basis: &SieveBasis) -> Result<BlockSolver> {
        let k = basis.k();
        let params = system.params;
        let dim = params * k;
        let n_sub = system.weight.len();
        let cells = n_sub / SUB;
        if cells != basis.spaces.cells() {
            return Err(Error::BasisMismatch {
                expected: basis.spaces.cells(),
                got: cells,
            });
        }
        let cell_w: Vec<f64> = (0..cells).map(|c| system.weight[c * SUB..(c + 1) * SUB].iter().sum()).collect();
        let g = gram(basis, &cell_w);
        let gi = invert_gram(&g);
        let mut d = vec![DMatrix::zeros(k, dim); system.rows];
        let mut e = vec![DMatrix::zeros(k, n_sub); system.rows];
        for sub in 0..n_sub {
            let w = system.weight[sub];
            if w == 0.0 {
                continue;
            }
            let q = basis.eval(sub / SUB);
            for r in 0..system.rows {
                for i in 0..k {
                    let wq = w * q[i];
                    if wq == 0.0 {
                        continue;
                    }
                    e[r][(i, sub)] += wq * system.outcome[sub][r];
                    for p in 0..params {
                        let f = system.loadings[sub][r][p];
                        if f == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            d[r][(i, p * k + j)] += wq * f * q[j];
                        }
                    }
                }
            }
        }
        // f3 enters the w3 row through a cell-level linear map of the outcome.
        let f3_map = &system.nuisances.f3_map;
        for c in 0..cells {
            let scale = cell_w[c] * system.f3_scale[c];
            if scale == 0.0 {
                continue;
            }
            let q = basis.eval(c);
            for i in 0..k {
                for sub in 0..n_sub {
                    e[W3_ROW][(i, sub)] += scale * q[i] * f3_map[(c, sub)];
                }
            }
        }
        let ginv = gi.inverse.clone();
        let mut a = DMatrix::zeros(dim, dim);
        let mut cross = DMatrix::zeros(dim, n_sub);
        for r in 0..system.rows {
            let dt_g = d[r].transpose() * &ginv;
            a += &dt_g * &d[r];
            cross += &dt_g * &e[r];
        }
        let a = (&a + a.transpose()) * 0.5;
        let geometry = RegionGeometry::from_hessian(&a * 2.0);
        let response = -(&geometry.hessian_pinv * 2.0) * &cross;
        Ok(BlockSolver {
            basis: basis.clone(),
            params,
            d,
            e,
            gram_inverse: ginv,
            gram_condition: gi.condition,
            ridge: gi.ridge,
            response,
            geometry: Arc::new(geometry),
        })
    }

    /// Coefficient dimension `params · K`.
    pub fn dim(&self) -> usize {
        self.params * self.basis.k()
    }

    /// Empirical loss `L̂(c)` for outcome means `ybar`.
    pub fn loss(&self, coefs: &[f64], ybar: &[f64]) -> Result<f64> {
        if coefs.len() != self.dim() {
            return Err(Error::BasisMismatch {
                expected: self.dim(),
                got: coefs.len(),
            });
        }
        let c = DVector::from_column_slice(coefs);
        let y = DVector::from_column_slice(ybar);
        let mut total = 0.0;
        for (d, e) in self.d.iter().zip(&self.e) {
            let b = d * &c + e * &y;
            total += b.dot(&(&self.gram_inverse * &b));
        }
        Ok(total)
    }

    /// Centre coefficients `L·ȳ` without diagnostics.
    pub fn center(&self, ybar: &[f64]) -> Vec<f64> {
        (&self.response * DVector::from_column_slice(ybar)).iter().copied().collect()
    }

    /// Fits the coefficient functions for outcome means `ybar`.
    pub fn fit(&self, ybar: &[f64]) -> Result<SmdFit> {
        let y = DVector::from_column_slice(ybar);
        let geo = &self.geometry;
        if geo.null_space.ncols() > 0 {
            let mut grad = DVector::zeros(self.dim());
            for (d, e) in self.d.iter().zip(&self.e) {
                grad += d.transpose() * (&self.gram_inverse * (e * &y));
            }
            let comp = (geo.null_space.transpose() * &grad).norm();
            if comp > 1e-8 * (1.0 + grad.norm()) {
                return Err(Error::IllPosedFit { residual: comp });
            }
        }
        let coefficients = self.center(ybar);
        let loss = self.loss(&coefficients, ybar)?;
        Ok(SmdFit {
            params: self.params,
            k: self.basis.k(),
            coefficients,
            loss,
            gram_condition: self.gram_condition,
            ridge: self.ridge,
            min_singular_value: geo.min_singular_value(),
            null_dim: geo.null_space.ncols(),
        })
    }

    /// Confidence region `{c : L̂(c) − L̂(ĉ) ≤ size}` around a fit.
    pub fn region(&self, fit: &SmdFit, size: f64) -> ConfidenceRegion {
        ConfidenceRegion {
            center: DVector::from_column_slice(&fit.coefficients),
            size,
            geometry: Arc::clone(&self.geometry),
        }
    }
}

/// Builds the oracle-nuisance solver of a point: nuisances, moment system and normal equations.
pub fn point_solver(point: &PointCells, basis: &SieveBasis, with_intercept: bool) -> Result<BlockSolver> {
    let nuisances = estimate_nuisances(point, basis)?;
    let system = assemble_system(point, &nuisances, with_intercept);
    BlockSolver::new(&system, basis)
}

/// One-shot minimum-distance fit of a moment system.
pub fn fit_smd(system: &MomentSystem, basis: &SieveBasis, ybar: &[f64]) -> Result<SmdFit> {
    BlockSolver::new(system, basis)?.fit(ybar)
}

/// Loss sublevel set around a fitted centre.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    /// Centre coefficients `ĉ`.
    pub center: DVector<f64>,
    /// Threshold on the loss gap.
    pub size: f64,
    /// Shared quadratic shape.
    pub geometry: Arc<RegionGeometry>,
}

impl ConfidenceRegion {
    /// Quadratic form `(H, g, c0)` with `ΔL̂(c) = ½ cᵀHc + gᵀc + c0`.
    pub fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let h = self.geometry.hessian.clone();
        let hc = &h * &self.center;
        let c0 = 0.5 * self.center.dot(&hc);
        (h, -hc, c0)
    }

    /// Loss gap `L̂(c) − L̂(ĉ)`.
    pub fn loss_gap(&self, coefs: &[f64]) -> Result<f64> {
        if coefs.len() != self.center.len() {
            return Err(Error::BasisMismatch {
                expected: self.center.len(),
                got: coefs.len(),
            });
        }
        let diff = DVector::from_column_slice(coefs) - &self.center;
        Ok(0.5 * diff.dot(&(&self.geometry.hessian * &diff)))
    }

    /// Whether `c` lies in the region.
    pub fn contains(&self, coefs: &[f64]) -> Result<bool> {
        Ok(self.loss_gap(coefs)? <= self.size)
    }

    /// Minimises `⟨w, c⟩` over the region: returns the value and the minimiser.
    pub fn min_linear(&self, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (half, offset) = self.geometry.min_offset(weights, self.size)?;
        let w = DVector::from_column_slice(weights);
        let arg = &self.center + offset;
        Ok((w.dot(&self.center) + half, arg.iter().copied().collect()))
    }
}

/// Result of joint estimation of coefficients and nuisances.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFit {
    pub fit: SmdFit,
    /// Nuisance sieve coefficients in the order `f1, f2(z=0), f2(z=1), f3, f4, f5`.
    pub nuisance_coefficients: Vec<f64>,
    /// Levenberg-Marquardt iterations used.
    pub iterations: usize,
    /// Whether the relative step fell below tolerance.
    pub converged: bool,
}

struct JointProblem<'a> {
    point: &'a PointCells,
    ybar: &'a [f64],
    basis: &'a SieveBasis,
    with_intercept: bool,
    params: usize,
    whitener: DMatrix<f64>,
}

impl JointProblem<'_> {
    fn rows(&self) -> usize {
        JOINT_ROWS + usize::from(self.with_intercept)
    }

    fn residual(&self, x: &[f64]) -> DVector<f64> {
        let k = self.basis.k();
        let rows = self.rows();
        let coef_len = self.params * k;
        let (cell_coefs, nu_c) = x.split_at(coef_len);
        let cells = self.basis.spaces.cells();
        let mut b = DMatrix::<f64>::zeros(k, rows);
        for cell in 0..cells {
            let coefs = coefficients_at(cell_coefs, self.params, self.basis, cell);
            let nv = |j: usize| self.basis.combine(&nu_c[j * k..(j + 1) * k], cell);
            let f = NuisanceValues {
                f1: nv(0),
                f2: [nv(1), nv(2)],
                f3: nv(3),
                f4: nv(4),
                f5: nv(5),
            };
            let q = self.basis.eval(cell);
            for j in 0..SUB {
                let sub = cell * SUB + j;
                let w = self.point.weight[sub];
                if w == 0.0 {
                    continue;
                }
                let (_, z, xa) = sub_parts(sub);
                let wr = joint_rows(z, xa, self.ybar[sub], coefs, self.with_intercept, f);
                for (r, val) in wr.iter().enumerate() {
                    for i in 0..k {
                        b[(i, r)] += w * q[i] * val;
                    }
                }
            }
        }
        let white = &self.whitener * b;
        DVector::from_column_slice(white.as_slice())
    }
}

/// Joint minimum-distance estimation of coefficients and nuisances by
/// Levenberg-Marquardt on the whitened stacked residuals, started from the
/// oracle-nuisance solution.
pub fn fit_joint(point: &PointCells, ybar: &[f64], basis: &SieveBasis, with_intercept: bool) -> Result<JointFit> {
    let k = basis.k();
    let nuisances = estimate_nuisances(point, basis)?;
    let system = assemble_system(point, &nuisances, with_intercept);
    let solver = BlockSolver::new(&system, basis)?;
    let start = solver.fit(ybar)?;
    let cell_w = point.cell_weights();
    let projector = Projector::new(basis, &cell_w);
    let g = gram(basis, &cell_w);
    let gi = invert_gram(&g);
    let whitener = match gi.inverse.clone().cholesky() {
        Some(ch) => ch.l().transpose(),
        None => return Err(Error::IllPosedFit { residual: f64::NAN }),
    };
    let mut x = start.coefficients.clone();
    let f3 = nuisances.f3(ybar);
    let mut f2_0 = Vec::new();
    let mut f2_1 = Vec::new();
    for c in 0..basis.spaces.cells() {
        f2_0.push(nuisances.f2[c][0]);
        f2_1.push(nuisances.f2[c][1]);
    }
    for values in [&nuisances.f1, &f2_0, &f2_1, &f3, &nuisances.f4, &nuisances.f5] {
        x.extend(projector.coefficients(values));
    }
    let problem = JointProblem {
        point,
        ybar,
        basis,
        with_intercept,
        params: system.params,
        whitener,
    };
    let n = x.len();
    let mut r = problem.residual(&x);
    let mut cost = r.norm_squared();
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 200 {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), n);
        for j in 0..n {
            let h = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let col = (problem.residual(&xp) - problem.residual(&xm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        if jtr.norm() < 1e-14 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for i in 0..n {
                m[(i, i)] += damping * (1.0 + jtj[(i, i)]);
            }
            let step = match m.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    damping *= 10.0;
                    continue;
                }
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = problem.residual(&xn);
            let cn = rn.norm_squared();
            if cn <= cost {
                let rel = step.norm() / (1.0 + DVector::from_column_slice(&x).norm());
                x = xn;
                r = rn;
                cost = cn;
                damping = (damping / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved || converged {
            converged = converged || !improved;
            break;
        }
    }
    let coef_len = system.params * k;
    let mut nuisance_coefficients = x[coef_len..].to_vec();
    // f2 is reported inside its clipping band, as in oracle-nuisance mode.
    for v in &mut nuisance_coefficients[k..3 * k] {
        if basis.kind == crate::sieve::BasisKind::Saturated {
            *v = v.clamp(F2_CLIP.0, F2_CLIP.1);
        }
    }
    Ok(JointFit {
        fit: SmdFit {
            params: system.params,
            k,
            coefficients: x[..coef_len].to_vec(),
            loss: cost,
            gram_condition: gi.condition,
            ridge: gi.ridge,
            min_singular_value: start.min_singular_value,
            null_dim: start.null_dim,
        },
        nuisance_coefficients,
        iterations,
        converged,
    })
}
