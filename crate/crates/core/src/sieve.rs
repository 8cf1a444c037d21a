//! Sieve bases over the observed `(s, u)` cells and series least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::spec::Spaces;

/// Condition number above which the ridge jitter is added.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Ridge jitter added to ill-conditioned Gram matrices.
pub const RIDGE: f64 = 1e-8;
/// Relative eigenvalue threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Family of basis functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// One indicator per `(s, u)` cell.
    Saturated,
    /// Monomials in the state coordinates, tensored with indicators of `u`.
    TensorPolynomial,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saturated" => Ok(BasisKind::Saturated),
            "tensor-polynomial" | "polynomial" => Ok(BasisKind::TensorPolynomial),
            other => Err(Error::MalformedSpec(format!("unknown basis kind '{other}'"))),
        }
    }
}

/// Number of polynomial terms from the default schedule `ceil(c·n^{1/3})`.
pub fn k_schedule(n: usize, c: f64) -> usize {
    ((c * (n.max(1) as f64).cbrt()).ceil() as usize).max(1)
}

/// Evaluated basis functions `q_1..q_K` on every `(s, u)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveBasis {
    pub kind: BasisKind,
    pub spaces: Spaces,
    /// Total polynomial degree, for polynomial bases.
    pub degree: Option<usize>,
    /// `values[cell][k]`.
    values: Vec<Vec<f64>>,
}

fn monomials(d: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; d]];
    for total in 1..=degree {
        let mut exps = Vec::new();
        compositions(d, total, &mut vec![0; d], 0, &mut exps);
        out.extend(exps);
    }
    out
}

fn compositions(d: usize, remaining: usize, cur: &mut Vec<usize>, pos: usize, out: &mut Vec<Vec<usize>>) {
    if pos == d - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        compositions(d, remaining - e, cur, pos + 1, out);
    }
}

fn polynomial_values(spaces: Spaces, coords: &[Vec<f64>], degree: usize, tensor_u: bool) -> Vec<Vec<f64>> {
    let d = coords[0].len();
    let terms = monomials(d, degree);
    let mut values = Vec::with_capacity(spaces.cells());
    for s in 0..spaces.n_states {
        let mono: Vec<f64> = terms
            .iter()
            .map(|e| e.iter().zip(&coords[s]).map(|(p, x)| x.powi(*p as i32)).product())
            .collect();
        for u in 0..spaces.n_private {
            if tensor_u {
                let mut row = vec![0.0; mono.len() * spaces.n_private];
                row[u * mono.len()..(u + 1) * mono.len()].copy_from_slice(&mono);
                values.push(row);
            } else {
                values.push(mono.clone());
            }
        }
    }
    values
}

impl SieveBasis {
    /// Number of basis functions.
    pub fn k(&self) -> usize {
        self.values.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Basis values at a cell index.
    pub fn eval(&self, cell: usize) -> &[f64] {
        &self.values[cell]
    }

    /// Basis values at `(s, u)`.
    pub fn eval_at(&self, s: usize, u: usize) -> &[f64] {
        &self.values[self.spaces.cell(s, u)]
    }

    /// Evaluates `Σ_k c_k q_k` at a cell.
    pub fn combine(&self, coefs: &[f64], cell: usize) -> f64 {
        self.values[cell].iter().zip(coefs).map(|(q, c)| q * c).sum()
    }

    /// Checks linear independence on the support described by per-cell weights.
    pub fn check_support(&self, weights: &[f64]) -> Result<()> {
        let rank = gram_rank(&gram(self, weights));
        if rank < self.k() {
            return Err(Error::RankDeficientBasis { rank, k: self.k() });
        }
        Ok(())
    }
}

/// Builds a basis with at most `k` terms (exactly `|S|·|U|` for the saturated kind).
///
/// Polynomial bases use the largest total degree whose term count fits in `k`
/// and whose terms stay linearly independent on the state grid; when `k` is
/// smaller than `|U|` the `u` indicators are dropped.
pub fn build_basis(kind: BasisKind, spaces: Spaces, coords: &[Vec<f64>], k: usize) -> Result<SieveBasis> {
    if k == 0 {
        return Err(Error::RankDeficientBasis { rank: 0, k: 0 });
    }
    match kind {
        BasisKind::Saturated => {
            let n = spaces.cells();
            let values = (0..n).map(|c| (0..n).map(|j| f64::from(u8::from(c == j))).collect()).collect();
            Ok(SieveBasis {
                kind,
                spaces,
                degree: None,
                values,
            })
        }
        BasisKind::TensorPolynomial => {
            if coords.len() != spaces.n_states || coords.is_empty() || coords[0].is_empty() {
                return Err(Error::MalformedSpec("state coordinates do not match the state space".into()));
            }
            let d = coords[0].len();
            let tensor_u = spaces.n_private > 1 && k >= spaces.n_private;
            let per_u = if tensor_u { spaces.n_private } else { 1 };
            let mut degree = 0;
            while monomials(d, degree + 1).len() * per_u <= k {
                degree += 1;
                if degree > 32 {
                    break;
                }
            }
            loop {
                let values = polynomial_values(spaces, coords, degree, tensor_u);
                let basis = SieveBasis {
                    kind,
                    spaces,
                    degree: Some(degree),
                    values,
                };
                let uniform = vec![1.0; spaces.cells()];
                if basis.check_support(&uniform).is_ok() || degree == 0 {
                    return Ok(basis);
                }
                degree -= 1;
            }
        }
    }
}

/// Weighted Gram matrix `Σ_c w_c q_c q_cᵀ`.
pub fn gram(basis: &SieveBasis, weights: &[f64]) -> DMatrix<f64> {
    let k = basis.k();
    let mut g = DMatrix::zeros(k, k);
    for (c, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let q = basis.eval(c);
        for i in 0..k {
            if q[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                g[(i, j)] += w * q[i] * q[j];
            }
        }
    }
    g
}

fn gram_rank(g: &DMatrix<f64>) -> usize {
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|l| **l > RANK_TOL * max).count()
}

/// Inverse of a weighted Gram matrix with the ridge fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct GramInverse {
    pub inverse: DMatrix<f64>,
    pub condition: f64,
    pub ridge: bool,
}

/// Inverts a symmetric positive semidefinite Gram matrix, adding [`RIDGE`] to the
/// diagonal when its condition number exceeds [`RIDGE_CONDITION`].
pub fn invert_gram(g: &DMatrix<f64>) -> GramInverse {
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let ridge = condition.is_nan() || condition > RIDGE_CONDITION;
    let shift = if ridge { RIDGE } else { 0.0 };
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + shift));
    let inverse = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    GramInverse {
        inverse,
        condition,
        ridge,
    }
}

/// Least-squares projection of several outcomes onto the span of a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    /// Coefficients per outcome dimension.
    pub coefficients: Vec<Vec<f64>>,
    /// Condition number of the Gram matrix.
    pub condition: f64,
    /// Whether the ridge jitter was used.
    pub ridge: bool,
    /// Weighted in-sample residual sum of squares per outcome dimension.
    pub residual_norm: Vec<f64>,
}

impl SeriesFit {
    /// Fitted value of outcome `dim` at a cell.
    pub fn predict(&self, basis: &SieveBasis, dim: usize, cell: usize) -> f64 {
        basis.combine(&self.coefficients[dim], cell)
    }
}

/// Reusable projector for fixed per-cell weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub basis: SieveBasis,
    pub weights: Vec<f64>,
    pub gram_inverse: GramInverse,
}

impl Projector {
    /// Prepares the projection for per-cell weights.
    pub fn new(basis: &SieveBasis, weights: &[f64]) -> Self {
        let g = gram(basis, weights);
        Projector {
            basis: basis.clone(),
            weights: weights.to_vec(),
            gram_inverse: invert_gram(&g),
        }
    }

    /// Coefficients of the projection of per-cell means `ybar`.
    pub fn coefficients(&self, ybar: &[f64]) -> Vec<f64> {
        let k = self.basis.k();
        let mut b = DVector::zeros(k);
        for (c, (w, y)) in self.weights.iter().zip(ybar).enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (i, q) in self.basis.eval(c).iter().enumerate() {
                b[i] += w * q * y;
            }
        }
        (&self.gram_inverse.inverse * b).iter().copied().collect()
    }

    /// Fitted values on every cell.
    pub fn fitted(&self, ybar: &[f64]) -> Vec<f64> {
        let coefs = self.coefficients(ybar);
        (0..self.weights.len()).map(|c| self.basis.combine(&coefs, c)).collect()
    }

    /// Linear map from per-cell means to fitted values, `fitted = P·ybar`.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        let n = self.weights.len();
        let k = self.basis.k();
        let q = DMatrix::from_fn(n, k, |c, i| self.basis.eval(c)[i]);
        let qw = DMatrix::from_fn(k, n, |i, c| self.basis.eval(c)[i] * self.weights[c]);
        q * &self.gram_inverse.inverse * qw
    }
}

/// Projects each outcome dimension of `(s, u, y)` rows onto the basis.
pub fn project_conditional_mean(rows: &[(usize, usize, Vec<f64>)], basis: &SieveBasis) -> Result<SeriesFit> {
    let k = basis.k();
    if rows.len() < k {
        return Err(Error::InsufficientData { rows: rows.len(), needed: k });
    }
    let dims = rows.first().map(|r| r.2.len()).unwrap_or(0);
    let n_cells = basis.spaces.cells();
    let mut counts = vec![0.0; n_cells];
    let mut sums = vec![vec![0.0; n_cells]; dims];
    for (s, u, y) in rows {
        let c = basis.spaces.cell(*s, *u);
        counts[c] += 1.0;
        for (d, v) in y.iter().enumerate() {
            sums[d][c] += v;
        }
    }
    let n = rows.len() as f64;
    let weights: Vec<f64> = counts.iter().map(|c| c / n).collect();
    let projector = Projector::new(basis, &weights);
    let mut coefficients = Vec::with_capacity(dims);
    let mut residual_norm = Vec::with_capacity(dims);
    for sum in &sums {
        let ybar: Vec<f64> = sum.iter().zip(&counts).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect();
        let coefs = projector.coefficients(&ybar);
        coefficients.push(coefs);
    }
    for (d, coefs) in coefficients.iter().enumerate() {
        let mut rss = 0.0;
        for (s, u, y) in rows {
            let r = y[d] - basis.combine(coefs, basis.spaces.cell(*s, *u));
            rss += r * r;
        }
        residual_norm.push(rss / n);
    }
    Ok(SeriesFit {
        coefficients,
        condition: projector.gram_inverse.condition,
        ridge: projector.gram_inverse.ridge,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::spec::default_coordinates;

    fn sp(s: usize, u: usize) -> Spaces {
        Spaces {
            horizon: 1,
            n_states: s,
            n_private: u,
        }
    }

    #[test]
    fn saturated_gram_is_diagonal_of_frequencies() {
        let b = build_basis(BasisKind::Saturated, sp(2, 2), &default_coordinates(2), 4).unwrap();
        assert_eq!(b.k(), 4);
        let g = gram(&b, &[0.1, 0.2, 0.3, 0.4]);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { [0.1, 0.2, 0.3, 0.4][i] } else { 0.0 };
                assert_eq!(g[(i, j)], want);
            }
        }
    }

    #[test]
    fn constant_basis_projects_to_mean() {
        let b = build_basis(BasisKind::TensorPolynomial, sp(3, 1), &default_coordinates(3), 1).unwrap();
        assert_eq!(b.k(), 1);
        let rows = vec![(0, 0, vec![1.0]), (1, 0, vec![2.0]), (2, 0, vec![6.0])];
        let fit = project_conditional_mean(&rows, &b).unwrap();
        assert!((fit.predict(&b, 0, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_on_two_dimensional_grid_has_six_terms() {
        let coords: Vec<Vec<f64>> = (0..9).map(|i| vec![(i % 3) as f64 / 2.0, (i / 3) as f64 / 2.0]).collect();
        let b = build_basis(BasisKind::TensorPolynomial, sp(9, 1), &coords, 6).unwrap();
        assert_eq!((b.k(), b.degree), (6, Some(2)));
    }

    #[test]
    fn constants_and_basis_functions_are_reproduced() {
        let coords = default_coordinates(5);
        let b = build_basis(BasisKind::TensorPolynomial, sp(5, 2), &coords, 6).unwrap();
        let rows: Vec<_> = (0..5)
            .flat_map(|s| (0..2).map(move |u| (s, u)))
            .map(|(s, u)| (s, u, vec![2.5, b.eval_at(s, u)[1]]))
            .collect();
        let fit = project_conditional_mean(&rows, &b).unwrap();
        for c in 0..10 {
            assert!((fit.predict(&b, 0, c) - 2.5).abs() < 1e-10);
        }
        for (i, c) in fit.coefficients[1].iter().enumerate() {
            assert!((c - if i == 1 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }

    #[test]
    fn saturated_projection_is_cell_mean() {
        let b = build_basis(BasisKind::Saturated, sp(1, 1), &default_coordinates(1), 1).unwrap();
        let rows = vec![(0, 0, vec![1.0]), (0, 0, vec![4.0])];
        let fit = project_conditional_mean(&rows, &b).unwrap();
        assert!((fit.predict(&b, 0, 0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn insufficient_rows_and_rank_deficiency_are_errors() {
        let b = build_basis(BasisKind::Saturated, sp(2, 1), &default_coordinates(2), 2).unwrap();
        assert!(matches!(project_conditional_mean(&[(0, 0, vec![1.0])], &b), Err(Error::InsufficientData { .. })));
        assert!(matches!(b.check_support(&[1.0, 0.0]), Err(Error::RankDeficientBasis { rank: 1, k: 2 })));
    }

    #[test]
    fn projection_is_idempotent_and_residuals_shrink() {
        let coords = default_coordinates(6);
        let rows: Vec<_> = (0..60).map(|i| (i % 6, 0, vec![((i * 7919) % 13) as f64 / 13.0])).collect();
        let mut last = f64::INFINITY;
        for k in 1..=4 {
            let b = build_basis(BasisKind::TensorPolynomial, sp(6, 1), &coords, k).unwrap();
            let fit = project_conditional_mean(&rows, &b).unwrap();
            assert!(fit.residual_norm[0] <= last + 1e-12);
            last = fit.residual_norm[0];
            let refit_rows: Vec<_> = rows.iter().map(|(s, u, _)| (*s, *u, vec![fit.predict(&b, 0, *s)])).collect();
            let refit = project_conditional_mean(&refit_rows, &b).unwrap();
            for (a, c) in refit.coefficients[0].iter().zip(&fit.coefficients[0]) {
                assert!((a - c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn schedule_is_cube_root() {
        assert_eq!(k_schedule(1000, 2.0), 20);
        assert_eq!(k_schedule(1, 2.0), 2);
    }
}
