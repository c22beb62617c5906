//! Dense and banded linear algebra kernels.
//!
//! Everything here is deliberately self-contained: symmetric eigensolves go
//! through cyclic Jacobi rotations after a Cholesky reduction of the
//! generalized problem, banded systems are factored in band storage with
//! partial pivoting, and nonnegative least squares uses the active-set
//! method. Problem orders in this crate stay in the low hundreds, where
//! these kernels are accurate and fast enough.

use crate::error::{Error, Result};
use crate::util::KahanSum;

/// Relative asymmetry tolerated when accepting a symmetric matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Jacobi sweep convergence threshold, relative to the matrix scale.
const JACOBI_TOL: f64 = 1e-14;
/// Jacobi sweep cap; exceeding it is a convergence failure.
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DMat {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, data: vec![0.0; n_rows * n_cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch("ragged rows in matrix construction".into()));
        }
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// y = Aᵀ x.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows);
        let mut y = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj += self.get(i, j) * xi;
                }
            }
        }
        y
    }
}

/// Symmetric matrix in full dense storage, validated on construction.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Accepts `data` in row-major order; rejects non-finite entries and
    /// asymmetry beyond [`SYMMETRY_TOL`] relative to the largest magnitude.
    pub fn new(order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != order * order {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix of order {order} needs {} entries, got {}",
                order * order,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix entry".into()));
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut max_asym = 0.0f64;
        for i in 0..order {
            for j in (i + 1)..order {
                max_asym = max_asym.max((data[i * order + j] - data[j * order + i]).abs());
            }
        }
        if max_asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { max_asym: max_asym / scale, tol: SYMMETRY_TOL });
        }
        // Store the symmetrized matrix so downstream rotations see an exactly
        // symmetric operand.
        let mut sym = data;
        for i in 0..order {
            for j in (i + 1)..order {
                let avg = 0.5 * (sym[i * order + j] + sym[j * order + i]);
                sym[i * order + j] = avg;
                sym[j * order + i] = avg;
            }
        }
        Ok(Self { order, data: sym })
    }

    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; order * order];
        for i in 0..order {
            for j in 0..order {
                data[i * order + j] = f(i, j);
            }
        }
        Self::new(order, data)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.order);
        (0..self.order)
            .map(|i| {
                self.data[i * self.order..(i + 1) * self.order]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Lower-triangular Cholesky factor L with B = L Lᵀ.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    order: usize,
    /// Row-major lower triangle, including diagonal; upper entries are zero.
    l: Vec<f64>,
}

impl CholeskyFactor {
    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.order + j]
    }

    /// Solves L y = b.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.get(i, j) * y[j];
            }
            y[i] = s / self.get(i, i);
        }
        y
    }

    /// Solves Lᵀ x = b.
    pub fn solve_lower_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.get(j, i) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }

    /// Solves B x = b with B = L Lᵀ.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_lower_transpose(&self.solve_lower(b))
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky(b: &SymMatrix) -> Result<CholeskyFactor> {
    let n = b.order();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = b.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::NotPositiveDefinite {
                        order: i + 1,
                        context: format!("pivot {s:.3e} during Cholesky"),
                    });
                }
                l[i * n + j] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(CholeskyFactor { order: n, l })
}

/// Eigen decomposition of a symmetric (or symmetric-definite generalized)
/// problem. `values` are sorted in descending order, ties keeping their
/// pre-sort order; `vectors` holds eigenvectors as columns, each scaled so
/// its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub values: Vec<f64>,
    pub vectors: DMat,
}

/// Symmetric eigensolve by cyclic Jacobi rotations.
pub fn sym_eig(a: &SymMatrix) -> Result<EigDecomposition> {
    let n = a.order();
    if n == 0 {
        return Ok(EigDecomposition { values: vec![], vectors: DMat::zeros(0, 0) });
    }
    let mut m = a.data.clone();
    let mut v = DMat::identity(n);
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);

    let mut converged = false;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        // Small rotations early in the process only churn; skip entries well
        // below the current off-diagonal scale (classic threshold strategy).
        let skip = if sweep < 3 { off * 1e-6 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Entry negligible relative to its diagonal pair: zero it.
                if apq.abs() <= f64::EPSILON * 1e-2 * (app.abs() + aqq.abs()) {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Update rows/columns p and q of the symmetric matrix.
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[k * n + p] = new_kp;
                    m[p * n + k] = new_kp;
                    m[k * n + q] = new_kq;
                    m[q * n + k] = new_kq;
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                // Accumulate the rotation into the eigenvector matrix.
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "Jacobi eigensolver: off-diagonal did not reach {JACOBI_TOL:.0e} (relative) \
             within {JACOBI_MAX_SWEEPS} sweeps at order {n}"
        )));
    }

    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let mut order_idx: Vec<usize> = (0..n).collect();
    // Stable descending sort: ties keep their original (pre-sort) order.
    order_idx.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());

    let values: Vec<f64> = order_idx.iter().map(|&i| diag[i]).collect();
    let mut vectors = DMat::zeros(n, n);
    for (new_col, &old_col) in order_idx.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|r| v.get(r, old_col)).collect();
        fix_sign(&mut col);
        for (r, val) in col.iter().enumerate() {
            vectors.set(r, new_col, *val);
        }
    }
    Ok(EigDecomposition { values, vectors })
}

/// Flips a vector so its largest-magnitude entry (first such, on ties) is
/// positive. Pins an otherwise arbitrary sign for reproducibility.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v.get(best).copied().unwrap_or(0.0) < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Solves A x = λ B x for symmetric A and symmetric positive definite B.
///
/// B is Cholesky-factored and the problem reduced to a standard symmetric
/// one; returned eigenvectors are B-orthonormal (xᵀ B x = 1) with the sign
/// convention of [`fix_sign`] applied after the back-transformation.
pub fn generalized_sym_eig(a: &SymMatrix, b: &SymMatrix) -> Result<EigDecomposition> {
    let n = a.order();
    if b.order() != n {
        return Err(Error::DimensionMismatch(format!(
            "generalized eigenproblem: A order {n} vs B order {}",
            b.order()
        )));
    }
    let l = cholesky(b)?;
    // C = L⁻¹ A L⁻ᵀ, built column by column: Y = L⁻¹ A, then C = Y L⁻ᵀ,
    // i.e. row i of C solves L c_iᵀ = y_iᵀ.
    let mut y = DMat::zeros(n, n);
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| a.get(i, j)).collect();
        let sol = l.solve_lower(&col);
        for i in 0..n {
            y.set(i, j, sol[i]);
        }
    }
    let mut c = DMat::zeros(n, n);
    for i in 0..n {
        let sol = l.solve_lower(y.row(i));
        for j in 0..n {
            c.set(i, j, sol[j]);
        }
    }
    // Symmetrize roundoff before the Jacobi sweep.
    let mut cdata = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cdata[i * n + j] = 0.5 * (c.get(i, j) + c.get(j, i));
        }
    }
    let std_problem = SymMatrix { order: n, data: cdata };
    let eig = sym_eig(&std_problem)?;

    let mut vectors = DMat::zeros(n, n);
    for j in 0..n {
        let yj = eig.vectors.column(j);
        let mut xj = l.solve_lower_transpose(&yj);
        fix_sign(&mut xj);
        for i in 0..n {
            vectors.set(i, j, xj[i]);
        }
    }
    Ok(EigDecomposition { values: eig.values, vectors })
}

/// Banded square matrix with lower bandwidth `kl` and upper bandwidth `ku`.
/// Storage stays O(order × (kl + ku)); factorization adds the usual `kl`
/// rows of fill-in for partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    order: usize,
    kl: usize,
    ku: usize,
    /// data[d * order + j] holds entry (i, j) with d = i - j + ku.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn new(order: usize, kl: usize, ku: usize) -> Self {
        Self { order, kl, ku, data: vec![0.0; (kl + ku + 1) * order] }
    }

    /// Tridiagonal convenience constructor from the three diagonals.
    pub fn tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if lower.len() != n.saturating_sub(1) || upper.len() != n.saturating_sub(1) {
            return Err(Error::DimensionMismatch(
                "tridiagonal constructor: off-diagonals must have length order-1".into(),
            ));
        }
        let mut m = Self::new(n, 1, 1);
        for i in 0..n {
            m.set(i, i, diag[i]);
        }
        for i in 0..n.saturating_sub(1) {
            m.set(i + 1, i, lower[i]);
            m.set(i, i + 1, upper[i]);
        }
        Ok(m)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        (j as isize - i as isize) <= self.ku as isize
            && (i as isize - j as isize) <= self.kl as isize
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[(i + self.ku - j) * self.order + j]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku);
        self.data[(i + self.ku - j) * self.order + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku);
        self.data[(i + self.ku - j) * self.order + j] += v;
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(n.saturating_sub(1));
            let mut s = 0.0;
            for j in lo..=hi {
                s += self.get(i, j) * x[j];
            }
            y[i] = s;
        }
        y
    }
}

/// Solves A x = b for a banded A by LU factorization with partial pivoting.
pub fn solve_banded(a: &BandedMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.order;
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "banded solve: order {n} vs rhs length {}",
            b.len()
        )));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let kl = a.kl;
    let ku_fill = a.ku + a.kl; // upper bandwidth after row interchanges
    // Working band: entry (i, j) at diagonal slot d = i - j + ku_fill.
    let width = kl + ku_fill + 1;
    let mut w = vec![0.0f64; width * n];
    for j in 0..n {
        let lo = j.saturating_sub(a.ku);
        let hi = (j + kl).min(n - 1);
        for i in lo..=hi {
            w[(i + ku_fill - j) * n + j] = a.get(i, j);
        }
    }
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Singular("banded solve: matrix is identically zero".into()));
    }
    let tiny = scale * f64::EPSILON * n as f64;

    let mut x = b.to_vec();
    let at = |w: &Vec<f64>, i: usize, j: usize| -> f64 { w[(i + ku_fill - j) * n + j] };
    let set = |w: &mut Vec<f64>, i: usize, j: usize, v: f64| {
        w[(i + ku_fill - j) * n + j] = v;
    };

    for k in 0..n {
        let row_hi = (k + kl).min(n - 1);
        // Partial pivoting: largest magnitude in column k among rows k..=row_hi.
        let mut p = k;
        let mut pmax = at(&w, k, k).abs();
        for i in (k + 1)..=row_hi {
            let v = at(&w, i, k).abs();
            if v > pmax {
                pmax = v;
                p = i;
            }
        }
        if pmax <= tiny {
            return Err(Error::Singular(format!(
                "banded solve: pivot {pmax:.3e} at column {k} below breakdown threshold"
            )));
        }
        let col_hi = (k + ku_fill).min(n - 1);
        if p != k {
            for j in k..=col_hi {
                let t = at(&w, p, j);
                let u = at(&w, k, j);
                set(&mut w, p, j, u);
                set(&mut w, k, j, t);
            }
            x.swap(p, k);
        }
        let pivot = at(&w, k, k);
        for i in (k + 1)..=row_hi {
            let m = at(&w, i, k) / pivot;
            if m != 0.0 {
                for j in (k + 1)..=col_hi {
                    let v = at(&w, i, j) - m * at(&w, k, j);
                    set(&mut w, i, j, v);
                }
                x[i] -= m * x[k];
            }
            set(&mut w, i, k, 0.0);
        }
    }
    // Back substitution on the in-place upper factor.
    for i in (0..n).rev() {
        let hi = (i + ku_fill).min(n - 1);
        let mut s = x[i];
        for j in (i + 1)..=hi {
            s -= at(&w, i, j) * x[j];
        }
        x[i] = s / at(&w, i, i);
    }
    Ok(x)
}

/// Nonnegative least squares: minimizes ‖A x − b‖₂ subject to x ≥ 0 by the
/// Lawson–Hanson active-set method. Ties in the entering-variable choice go
/// to the lowest column index, so the result is reproducible.
///
/// Returns the solution and the final residual norm.
pub fn nnls(a: &DMat, b: &[f64], max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let m = a.n_rows();
    let n = a.n_cols();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "nnls: {m} rows vs rhs length {}",
            b.len()
        )));
    }
    let mut x = vec![0.0f64; n];
    let mut passive = vec![false; n];
    let mut residual: Vec<f64> = b.to_vec();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let dual_tol = 1e-12 * b_norm;

    let ls_on_passive = |passive: &[bool]| -> Result<Vec<f64>> {
        // Normal equations on the passive columns; the passive set stays
        // small (bounded by the row count) so this is cheap and stable
        // enough for the well-conditioned moment systems used here.
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let k = cols.len();
        let mut g = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (ci, &jci) in cols.iter().enumerate() {
            for (cj, &jcj) in cols.iter().enumerate().skip(ci) {
                let mut s = KahanSum::new();
                for r in 0..m {
                    s.add(a.get(r, jci) * a.get(r, jcj));
                }
                g[ci * k + cj] = s.value();
                g[cj * k + ci] = s.value();
            }
            let mut s = KahanSum::new();
            for r in 0..m {
                s.add(a.get(r, jci) * b[r]);
            }
            rhs[ci] = s.value();
        }
        let gm = SymMatrix::new(k, g)?;
        let chol = cholesky(&gm).map_err(|_| {
            Error::Singular("nnls: passive-set normal equations not positive definite".into())
        })?;
        let z = chol.solve(&rhs);
        let mut full = vec![0.0; n];
        for (ci, &j) in cols.iter().enumerate() {
            full[j] = z[ci];
        }
        Ok(full)
    };

    for _ in 0..max_iter {
        // Dual vector w = Aᵀ r restricted to the active (zero) set.
        let w = a.tr_mul_vec(&residual);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > dual_tol {
                match best {
                    Some((_, bw)) if w[j] <= bw => {}
                    _ => best = Some((j, w[j])),
                }
            }
        }
        let Some((enter, _)) = best else {
            break; // KKT satisfied
        };
        passive[enter] = true;

        loop {
            let z = ls_on_passive(&passive)?;
            let min_z = (0..n)
                .filter(|&j| passive[j])
                .map(|j| z[j])
                .fold(f64::INFINITY, f64::min);
            if min_z > 0.0 {
                x = z;
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                return Err(Error::Convergence("nnls: degenerate step in inner loop".into()));
            }
            for j in 0..n {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                    if x[j] <= 1e-14 * b_norm {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
        }
        let ax = a.mul_vec(&x);
        residual = b.iter().zip(&ax).map(|(bb, aa)| bb - aa).collect();
    }
    let res_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((x, res_norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form eigenvalues of a symmetric 3x3 matrix via the
    /// trigonometric solution of the characteristic polynomial. Independent
    /// of the Jacobi path; used as the oracle.
    fn eig3_characteristic(a: &SymMatrix) -> Vec<f64> {
        assert_eq!(a.order(), 3);
        let (a11, a12, a13) = (a.get(0, 0), a.get(0, 1), a.get(0, 2));
        let (a22, a23, a33) = (a.get(1, 1), a.get(1, 2), a.get(2, 2));
        let p1 = a12 * a12 + a13 * a13 + a23 * a23;
        let mut eig = if p1 == 0.0 {
            vec![a11, a22, a33]
        } else {
            let q = (a11 + a22 + a33) / 3.0;
            let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b11 = (a11 - q) / p;
            let b22 = (a22 - q) / p;
            let b33 = (a33 - q) / p;
            let b12 = a12 / p;
            let b13 = a13 / p;
            let b23 = a23 / p;
            let detb = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13)
                + b13 * (b12 * b23 - b22 * b13);
            let r = (detb / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let e2 = 3.0 * q - e1 - e3;
            vec![e1, e2, e3]
        };
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }

    fn rng_matrix(seed: u64, n: usize) -> SymMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix::new(n, data).unwrap()
    }

    #[test]
    fn tridiagonal_solve_hand_value() {
        let m = BandedMatrix::tridiagonal(&[-1.0, -1.0], &[2.0, 2.0, 2.0], &[-1.0, -1.0]).unwrap();
        let x = solve_banded(&m, &[1.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 0.75).abs() < 1e-14);
        assert!((x[1] - 0.5).abs() < 1e-14);
        assert!((x[2] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn banded_solve_matches_residual_on_random_systems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = rng.gen_range(2..30);
            let kl = rng.gen_range(0..3.min(n));
            let ku = rng.gen_range(0..3.min(n));
            let mut a = BandedMatrix::new(n, kl, ku);
            for i in 0..n {
                for j in 0..n {
                    if a.in_band(i, j) {
                        a.set(i, j, rng.gen_range(-1.0..1.0));
                    }
                }
                // Diagonal dominance keeps the system comfortably regular.
                a.add(i, i, 4.0);
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solve_banded(&a, &b).unwrap();
            let ax = a.mul_vec(&x);
            let err: f64 = ax.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(err < 1e-11, "trial {trial}: residual {err}");
        }
    }

    #[test]
    fn banded_solve_needs_pivoting() {
        // Zero leading diagonal entry: fails without row interchanges.
        let m = BandedMatrix::tridiagonal(&[1.0, 1.0], &[0.0, 1.0, 2.0], &[2.0, 0.5]).unwrap();
        let b = vec![2.0, 3.5, 4.0];
        let x = solve_banded(&m, &b).unwrap();
        let ax = m.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_banded_matrix_rejected() {
        let m = BandedMatrix::tridiagonal(&[0.0], &[1.0, 0.0], &[0.0]).unwrap();
        let err = solve_banded(&m, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let err = SymMatrix::new(2, vec![1.0, 2.0, 2.5, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { .. }));
    }

    #[test]
    fn cholesky_reconstructs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for n in [1usize, 3, 8, 20] {
            // SPD by construction: Gram matrix of random vectors plus ridge.
            let mut g = vec![0.0; n * n];
            let cols: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n + 2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                    g[i * n + j] = dot + if i == j { 0.5 } else { 0.0 };
                }
            }
            let b = SymMatrix::new(n, g).unwrap();
            let l = cholesky(&b).unwrap();
            let mut max_err = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += l.get(i, k) * l.get(j, k);
                    }
                    max_err = max_err.max((s - b.get(i, j)).abs());
                    scale = scale.max(b.get(i, j).abs());
                }
            }
            assert!(max_err <= 1e-12 * scale, "order {n}: {max_err:.3e}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let b = SymMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let err = cholesky(&b).unwrap_err();
        match err {
            Error::NotPositiveDefinite { order, .. } => assert_eq!(order, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn jacobi_matches_characteristic_polynomial_oracle() {
        for seed in 0..25 {
            let a = rng_matrix(100 + seed, 3);
            let oracle = eig3_characteristic(&a);
            let eig = sym_eig(&a).unwrap();
            for (got, want) in eig.values.iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn jacobi_eigenpairs_satisfy_residual_and_orthogonality() {
        for &n in &[2usize, 5, 17, 40] {
            let a = rng_matrix(n as u64, n);
            let eig = sym_eig(&a).unwrap();
            for j in 0..n {
                let v = eig.vectors.column(j);
                let av = a.mul_vec(&v);
                for i in 0..n {
                    assert!((av[i] - eig.values[j] * v[i]).abs() < 1e-11);
                }
                for k in (j + 1)..n {
                    let u = eig.vectors.column(k);
                    let dot: f64 = v.iter().zip(&u).map(|(x, y)| x * y).sum();
                    assert!(dot.abs() < 1e-11);
                }
            }
            // Descending order.
            for j in 1..n {
                assert!(eig.values[j - 1] >= eig.values[j] - 1e-13);
            }
        }
    }

    #[test]
    fn eigenvector_sign_convention() {
        let a = rng_matrix(3, 6);
        let eig = sym_eig(&a).unwrap();
        for j in 0..6 {
            let v = eig.vectors.column(j);
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() {
                    best = i;
                }
            }
            assert!(v[best] > 0.0);
        }
    }

    #[test]
    fn generalized_eig_b_orthonormal_and_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for n in [2usize, 6, 15] {
            let a = rng_matrix(50 + n as u64, n);
            let mut g = vec![0.0; n * n];
            let cols: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n + 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                    g[i * n + j] = dot + if i == j { 1.0 } else { 0.0 };
                }
            }
            let b = SymMatrix::new(n, g).unwrap();
            let eig = generalized_sym_eig(&a, &b).unwrap();
            for j in 0..n {
                let x = eig.vectors.column(j);
                let ax = a.mul_vec(&x);
                let bx = b.mul_vec(&x);
                for i in 0..n {
                    assert!(
                        (ax[i] - eig.values[j] * bx[i]).abs() < 1e-10,
                        "residual at order {n}"
                    );
                }
                for k in 0..n {
                    let y = eig.vectors.column(k);
                    let by = b.mul_vec(&y);
                    let dot: f64 = x.iter().zip(&by).map(|(u, v)| u * v).sum();
                    let expect = if j == k { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn nnls_small_known_problem() {
        // Columns: (1,0), (0,1), (1,1); target (2, 1). Exact nonnegative
        // representation exists: x = (1, 0, 1).
        let a = DMat::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let (x, res) = nnls(&a, &[2.0, 1.0], 50).unwrap();
        assert!(res < 1e-12);
        assert!(x.iter().all(|&v| v >= 0.0));
        let ax = a.mul_vec(&x);
        assert!((ax[0] - 2.0).abs() < 1e-12 && (ax[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_infeasible_direction() {
        // Only negative coordinates could fit the target exactly; the
        // constrained optimum is x = 0 with residual ‖b‖.
        let a = DMat::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let (x, res) = nnls(&a, &[-3.0, 4.0], 50).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((res - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_recovers_random_nonnegative_combinations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for _ in 0..10 {
            let m = 6;
            let n = 12;
            let mut rows = vec![vec![0.0; n]; m];
            for r in rows.iter_mut() {
                for v in r.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let a = DMat::from_rows(&rows).unwrap();
            let xtrue: Vec<f64> =
                (0..n).map(|j| if j % 3 == 0 { rng.gen_range(0.0..2.0) } else { 0.0 }).collect();
            let b = a.mul_vec(&xtrue);
            let (x, res) = nnls(&a, &b, 200).unwrap();
            assert!(res < 1e-9, "residual {res}");
            assert!(x.iter().all(|&v| v >= 0.0));
        }
    }
}
