//! Polynomial chaos expansions over two independent uniform input blocks
//! and their reduction to a handful of random variables.
//!
//! An expansion holds vector-valued coefficients over the total-degree
//! truncated tensor Legendre basis in (ξ, ζ). The reduction collects the
//! covariance of the ζ-chaos coefficient functions induced by ξ, solves a
//! weighted block generalized eigenproblem, and represents the field as a
//! mean plus a short sum of deterministic mode fields scaled by zero-mean,
//! unit-variance, uncorrelated random variables. Those variables are
//! themselves chaos expansions in ξ, which is what lets a downstream
//! computation treat them as reduced inputs.

use serde::{Deserialize, Serialize};

use crate::basis::TotalDegreeBasis;
use crate::error::{Error, Result};
use crate::linalg::{generalized_sym_eig, cholesky, CholeskyFactor, SymMatrix};
use crate::util::KahanSum;

/// Relative threshold: eigenvalues below -tol·λ₁ mean a broken symmetric
/// assembly; values in (-tol·λ₁, 0) are roundoff and are clipped to zero.
const EIG_CLIP_REL: f64 = 1e-12;
/// Relative gap under which eigenvalues at the retention cut count as tied
/// and are kept together.
const TIE_REL: f64 = 1e-12;

/// Symmetric positive definite weighting matrix defining the spatial inner
/// product used throughout the reduction.
#[derive(Debug, Clone)]
pub struct WeightingMatrix {
    matrix: SymMatrix,
    chol: CholeskyFactor,
}

impl WeightingMatrix {
    /// Validates positive definiteness by factorization.
    pub fn new(matrix: SymMatrix) -> Result<Self> {
        let chol = cholesky(&matrix).map_err(|e| match e {
            Error::NotPositiveDefinite { order, .. } => Error::NotPositiveDefinite {
                order,
                context: "weighting matrix must be positive definite".into(),
            },
            other => other,
        })?;
        Ok(Self { matrix, chol })
    }

    pub fn identity(order: usize) -> Self {
        let m = SymMatrix::from_fn(order, |i, j| if i == j { 1.0 } else { 0.0 }).unwrap();
        Self::new(m).unwrap()
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.matrix.order()
    }

    #[inline]
    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    #[inline]
    pub fn cholesky_factor(&self) -> &CholeskyFactor {
        &self.chol
    }

    /// uᵀ W v.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let wv = self.matrix.mul_vec(v);
        u.iter().zip(&wv).map(|(a, b)| a * b).sum()
    }

    /// uᵀ W u (nonnegative up to roundoff).
    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0)
    }
}

/// Vector-valued polynomial chaos expansion over two blocks of uniform
/// inputs, truncated by total degree across both blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosExpansion {
    xi_dim: usize,
    zeta_dim: usize,
    degree: usize,
    value_dim: usize,
    /// Coefficient vectors aligned with the graded enumeration of the
    /// combined (ξ, ζ) multi-index of dimension xi_dim + zeta_dim.
    coeffs: Vec<Vec<f64>>,
}

impl ChaosExpansion {
    pub fn zeros(xi_dim: usize, zeta_dim: usize, degree: usize, value_dim: usize) -> Self {
        let n = TotalDegreeBasis::new(xi_dim + zeta_dim, degree).len();
        Self { xi_dim, zeta_dim, degree, value_dim, coeffs: vec![vec![0.0; value_dim]; n] }
    }

    pub fn from_coeffs(
        xi_dim: usize,
        zeta_dim: usize,
        degree: usize,
        coeffs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = TotalDegreeBasis::new(xi_dim + zeta_dim, degree).len();
        if coeffs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expansion needs {n} coefficient vectors, got {}",
                coeffs.len()
            )));
        }
        let value_dim = coeffs.first().map_or(0, Vec::len);
        if value_dim == 0 || coeffs.iter().any(|c| c.len() != value_dim) {
            return Err(Error::DimensionMismatch(
                "coefficient vectors must share one positive length".into(),
            ));
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("chaos coefficient".into()));
        }
        Ok(Self { xi_dim, zeta_dim, degree, value_dim, coeffs })
    }

    #[inline]
    pub fn xi_dim(&self) -> usize {
        self.xi_dim
    }

    #[inline]
    pub fn zeta_dim(&self) -> usize {
        self.zeta_dim
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn pair_basis(&self) -> TotalDegreeBasis {
        TotalDegreeBasis::new(self.xi_dim + self.zeta_dim, self.degree)
    }

    #[inline]
    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn coeff(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    #[inline]
    pub fn coeff_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coeffs[k]
    }

    /// Mean field: the coefficient of the constant basis member.
    pub fn mean(&self) -> &[f64] {
        &self.coeffs[0]
    }

    /// Splits combined index `idx` into its (α, β) halves.
    #[inline]
    pub fn split_index<'a>(&self, idx: &'a [u32]) -> (&'a [u32], &'a [u32]) {
        idx.split_at(self.xi_dim)
    }

    pub fn evaluate(&self, xi: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.xi_dim || zeta.len() != self.zeta_dim {
            return Err(Error::DimensionMismatch(format!(
                "expansion over ({}, {}) evaluated at ({}, {})",
                self.xi_dim,
                self.zeta_dim,
                xi.len(),
                zeta.len()
            )));
        }
        let mut point = Vec::with_capacity(self.xi_dim + self.zeta_dim);
        point.extend_from_slice(xi);
        point.extend_from_slice(zeta);
        let vals = self.pair_basis().eval_all(&point)?;
        Ok(self.evaluate_from_basis_values(&vals))
    }

    /// Fast path: combine precomputed basis member values (aligned with the
    /// pair basis) with the coefficients.
    pub fn evaluate_from_basis_values(&self, basis_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.value_dim];
        for (c, &bv) in self.coeffs.iter().zip(basis_values) {
            if bv != 0.0 {
                for (o, &ci) in out.iter_mut().zip(c) {
                    *o += bv * ci;
                }
            }
        }
        out
    }

    /// Sum over every term of the W-weighted squared coefficient norm;
    /// by basis orthonormality this is the mean square of the field's
    /// W-norm, mean included.
    pub fn total_weighted_energy(&self, w: &WeightingMatrix) -> f64 {
        let mut acc = KahanSum::new();
        for c in &self.coeffs {
            acc.add(w.norm_sq(c));
        }
        acc.value()
    }
}

/// First and second moments of the ζ-coefficient functions of an expansion:
/// the mean coefficients and the covariance blocks over the β range that
/// can carry ξ-fluctuation.
#[derive(Debug, Clone)]
pub struct CoefficientStats {
    /// Basis of β indices for the mean coefficients (degree ≤ p).
    pub mean_basis: TotalDegreeBasis,
    /// Mean coefficient vectors q_{0β}, aligned with `mean_basis`.
    pub mean: Vec<Vec<f64>>,
    /// Basis of β indices carrying fluctuation (degree ≤ p-1).
    pub block_basis: TotalDegreeBasis,
    /// Covariance blocks as one matrix over the stacked block index:
    /// entry ((b,i),(b̃,k)) is C_{β_b β_b̃}[i,k]. Symmetric.
    pub cov: SymMatrix,
    value_dim: usize,
}

impl CoefficientStats {
    #[inline]
    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn cov_block(&self, b: usize, bt: usize) -> Vec<f64> {
        let w = self.value_dim;
        let mut out = vec![0.0; w * w];
        for i in 0..w {
            for k in 0..w {
                out[i * w + k] = self.cov.get(b * w + i, bt * w + k);
            }
        }
        out
    }
}

/// Computes coefficient means and covariance blocks. The covariance of the
/// coefficient functions q_β(ξ) follows from Legendre orthonormality:
/// C_{ββ̃} = Σ_{1 ≤ |α| ≤ p - max(|β|, |β̃|)} q_{αβ} q_{αβ̃}ᵀ, which is the
/// full sum over nonconstant α here because coefficients beyond the total
/// degree truncation vanish identically.
pub fn coefficient_stats(q: &ChaosExpansion) -> CoefficientStats {
    let p = q.degree;
    let w = q.value_dim;
    let pair_basis = q.pair_basis();
    let mean_basis = TotalDegreeBasis::new(q.zeta_dim, p);
    let block_basis = TotalDegreeBasis::new(q.zeta_dim, p.saturating_sub(1));
    let alpha_basis = TotalDegreeBasis::new(q.xi_dim, p);

    let mut mean = vec![vec![0.0; w]; mean_basis.len()];
    // Q[b] is (#α≥1) × w, rows over the nonconstant α in graded order.
    let n_alpha = alpha_basis.len().saturating_sub(1);
    let mut q_mats: Vec<Vec<f64>> = vec![vec![0.0; n_alpha * w]; block_basis.len()];

    for (k, idx) in pair_basis.indices().iter().enumerate() {
        let (alpha, beta) = q.split_index(idx);
        let a_deg: u32 = alpha.iter().sum();
        if a_deg == 0 {
            let b = mean_basis.position_of(beta).expect("beta within mean basis");
            mean[b].copy_from_slice(q.coeff(k));
        } else if let Some(b) = block_basis.position_of(beta) {
            let a_pos = alpha_basis.position_of(alpha).expect("alpha within basis") - 1;
            q_mats[b][a_pos * w..(a_pos + 1) * w].copy_from_slice(q.coeff(k));
        }
    }

    let nb = block_basis.len();
    let order = nb * w;
    let mut cov = vec![0.0; order * order];
    for b in 0..nb {
        for bt in b..nb {
            // C_{ββ̃} = Q_βᵀ Q_β̃ contracting the α rows.
            for i in 0..w {
                for k in 0..w {
                    let mut acc = KahanSum::new();
                    for a in 0..n_alpha {
                        acc.add(q_mats[b][a * w + i] * q_mats[bt][a * w + k]);
                    }
                    let v = acc.value();
                    cov[(b * w + i) * order + (bt * w + k)] = v;
                    cov[(bt * w + k) * order + (b * w + i)] = v;
                }
            }
        }
    }
    let cov = SymMatrix::new(order, cov).expect("covariance assembly is symmetric");
    CoefficientStats { mean_basis, mean, block_basis, cov, value_dim: w }
}

/// How many modes the reduction keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModeSelector {
    /// Exactly this many modes (ties at the cut still extend the count).
    FixedCount(usize),
    /// Smallest d with sqrt(Σ_{j>d} λ_j) ≤ ε · sqrt(total weighted energy
    /// of the expansion, mean included).
    Tolerance(f64),
}

/// Reduced representation: mean part plus d modes, each a deterministic
/// field expansion in ζ scaled by sqrt(λ_j) and by a scalar random
/// variable η_j carried as a chaos expansion in ξ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedExpansion {
    xi_dim: usize,
    zeta_dim: usize,
    degree: usize,
    value_dim: usize,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Energy left in the discarded modes: Σ_{j>d} λ_j.
    pub residual_energy: f64,
    /// Full clipped spectrum, for diagnostics and reports.
    pub spectrum: Vec<f64>,
    /// Mean coefficients over β with |β| ≤ p.
    pub mean_part: Vec<Vec<f64>>,
    /// basis_vectors[j][b] is the β_b coefficient vector of mode j
    /// (|β| ≤ p-1), W-orthonormal across modes in the stacked sense.
    pub basis_vectors: Vec<Vec<Vec<f64>>>,
    /// reduced_coeffs[j] holds the chaos coefficients of η_j over the full
    /// ξ basis of degree p (constant slot fixed at zero).
    pub reduced_coeffs: Vec<Vec<f64>>,
}

impl ReducedExpansion {
    #[inline]
    pub fn d(&self) -> usize {
        self.eigenvalues.len()
    }

    #[inline]
    pub fn xi_dim(&self) -> usize {
        self.xi_dim
    }

    #[inline]
    pub fn zeta_dim(&self) -> usize {
        self.zeta_dim
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn mean_basis(&self) -> TotalDegreeBasis {
        TotalDegreeBasis::new(self.zeta_dim, self.degree)
    }

    pub fn vector_basis(&self) -> TotalDegreeBasis {
        TotalDegreeBasis::new(self.zeta_dim, self.degree.saturating_sub(1))
    }

    pub fn eta_basis(&self) -> TotalDegreeBasis {
        TotalDegreeBasis::new(self.xi_dim, self.degree)
    }

    /// Values of the reduced variables at a ξ point.
    pub fn eta_eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let vals = self.eta_basis().eval_all(xi)?;
        Ok(self.eta_from_basis_values(&vals))
    }

    /// Fast path with precomputed ξ basis member values.
    pub fn eta_from_basis_values(&self, basis_values: &[f64]) -> Vec<f64> {
        self.reduced_coeffs
            .iter()
            .map(|c| c.iter().zip(basis_values).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Mean field at a ζ point.
    pub fn mean_field(&self, zeta: &[f64]) -> Result<Vec<f64>> {
        let psi = self.mean_basis().eval_all(zeta)?;
        Ok(self.mean_field_from_basis_values(&psi))
    }

    pub fn mean_field_from_basis_values(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.value_dim];
        for (c, &b) in self.mean_part.iter().zip(psi) {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += b * ci;
            }
        }
        out
    }

    /// Mode field φ_j at a ζ point.
    pub fn mode_field(&self, j: usize, zeta: &[f64]) -> Result<Vec<f64>> {
        let psi = self.vector_basis().eval_all(zeta)?;
        Ok(self.mode_field_from_basis_values(j, &psi))
    }

    pub fn mode_field_from_basis_values(&self, j: usize, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.value_dim];
        for (c, &b) in self.basis_vectors[j].iter().zip(psi) {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += b * ci;
            }
        }
        out
    }

    /// Full evaluation: mean(ζ) + Σ_j sqrt(λ_j) η_j(ξ) φ_j(ζ).
    pub fn evaluate(&self, xi: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
        let eta = self.eta_eval(xi)?;
        self.evaluate_at_eta(&eta, zeta)
    }

    /// Evaluation with the reduced variables supplied directly; this is the
    /// form a downstream solver uses once η carries the upstream
    /// uncertainty.
    pub fn evaluate_at_eta(&self, eta: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
        if eta.len() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "{} reduced variables supplied for a d={} expansion",
                eta.len(),
                self.d()
            )));
        }
        let mut out = self.mean_field(zeta)?;
        if self.d() == 0 {
            return Ok(out);
        }
        let psi = self.vector_basis().eval_all(zeta)?;
        for j in 0..self.d() {
            let scale = self.eigenvalues[j].sqrt() * eta[j];
            let mode = self.mode_field_from_basis_values(j, &psi);
            for (o, m) in out.iter_mut().zip(&mode) {
                *o += scale * m;
            }
        }
        Ok(out)
    }
}

/// Reduces a chaos expansion to `selector`-many modes under the spatial
/// inner product `w`.
pub fn reduce(
    q: &ChaosExpansion,
    w: &WeightingMatrix,
    selector: ModeSelector,
) -> Result<ReducedExpansion> {
    if w.order() != q.value_dim() {
        return Err(Error::DimensionMismatch(format!(
            "weighting matrix order {} vs expansion value dimension {}",
            w.order(),
            q.value_dim()
        )));
    }
    let stats = coefficient_stats(q);
    let nb = stats.block_basis.len();
    let wd = q.value_dim();
    let order = nb * wd;
    let alpha_basis = TotalDegreeBasis::new(q.xi_dim(), q.degree());
    let n_alpha = alpha_basis.len();

    // Degenerate case: degree 0 carries no fluctuation at all.
    if q.degree() == 0 || stats.cov.order() == 0 {
        return finish_reduction(q, &stats, vec![], vec![], vec![], 0.0, vec![], selector);
    }

    // A = (I ⊗ W) C (I ⊗ W), B = I ⊗ W, assembled blockwise.
    let wm = w.matrix();
    let mut a = vec![0.0; order * order];
    let mut b = vec![0.0; order * order];
    for bb in 0..nb {
        for bt in 0..nb {
            let c = stats.cov_block(bb, bt);
            // W C W for this block.
            let mut cw = vec![0.0; wd * wd];
            for i in 0..wd {
                for k in 0..wd {
                    let mut s = 0.0;
                    for l in 0..wd {
                        s += c[i * wd + l] * wm.get(l, k);
                    }
                    cw[i * wd + k] = s;
                }
            }
            for i in 0..wd {
                for k in 0..wd {
                    let mut s = 0.0;
                    for l in 0..wd {
                        s += wm.get(i, l) * cw[l * wd + k];
                    }
                    a[(bb * wd + i) * order + (bt * wd + k)] = s;
                }
            }
        }
        for i in 0..wd {
            for k in 0..wd {
                b[(bb * wd + i) * order + (bb * wd + k)] = wm.get(i, k);
            }
        }
    }
    let a = SymMatrix::new(order, a)?;
    let b = SymMatrix::new(order, b)?;
    let eig = generalized_sym_eig(&a, &b)?;

    // Clip roundoff negatives; loudly reject anything worse.
    let lambda1 = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let mut spectrum = Vec::with_capacity(order);
    for &v in &eig.values {
        if v < -EIG_CLIP_REL * lambda1.max(1e-300) {
            return Err(Error::Convergence(format!(
                "coefficient covariance produced eigenvalue {v:.3e} below the clipping \
                 threshold; assembly symmetry is broken"
            )));
        }
        spectrum.push(v.max(0.0));
    }
    let n_positive = spectrum.iter().filter(|&&v| v > 0.0).count();

    // Mode count selection.
    let mut d = match selector {
        ModeSelector::FixedCount(k) => {
            if k > spectrum.len() {
                return Err(Error::InvalidArgument(format!(
                    "requested {k} modes but the spectrum has only {}",
                    spectrum.len()
                )));
            }
            if k > n_positive {
                return Err(Error::InvalidArgument(format!(
                    "requested {k} modes but only {n_positive} carry positive energy"
                )));
            }
            k
        }
        ModeSelector::Tolerance(eps) => {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "reduction tolerance must lie in (0, 1), got {eps}"
                )));
            }
            let total_norm = q.total_weighted_energy(w).sqrt();
            let mut tail: f64 = spectrum.iter().sum();
            let mut d = 0;
            while tail.max(0.0).sqrt() > eps * total_norm && d < n_positive {
                tail -= spectrum[d];
                d += 1;
            }
            d
        }
    };
    // Ties at the cut: keep all modes whose eigenvalue is indistinguishable
    // from the last retained one.
    while d > 0 && d < n_positive && (spectrum[d - 1] - spectrum[d]).abs() <= TIE_REL * lambda1 {
        d += 1;
    }

    let mut tail_acc = KahanSum::new();
    for &v in &spectrum[d..] {
        tail_acc.add(v);
    }
    let residual_energy = tail_acc.value().max(0.0);

    // Extract modes, W-apply once per block, and form the η coefficients
    // η_{j,α} = (1/sqrt λ_j) Σ_β q_{αβ}ᵀ W φ_{j,β}.
    let mut eigenvalues = Vec::with_capacity(d);
    let mut basis_vectors = Vec::with_capacity(d);
    let mut reduced_coeffs = Vec::with_capacity(d);
    let pair_basis = q.pair_basis();
    for j in 0..d {
        let lambda = spectrum[j];
        eigenvalues.push(lambda);
        let col = eig.vectors.column(j);
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut w_blocks: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for bb in 0..nb {
            let phi = col[bb * wd..(bb + 1) * wd].to_vec();
            w_blocks.push(wm.mul_vec(&phi));
            blocks.push(phi);
        }
        let inv_sqrt = 1.0 / lambda.sqrt();
        let mut eta = vec![0.0; n_alpha];
        for (k, idx) in pair_basis.indices().iter().enumerate() {
            let (alpha, beta) = q.split_index(idx);
            if alpha.iter().sum::<u32>() == 0 {
                continue;
            }
            if let Some(bb) = stats.block_basis.position_of(beta) {
                let dot: f64 =
                    q.coeff(k).iter().zip(&w_blocks[bb]).map(|(a, b)| a * b).sum();
                let a_pos = alpha_basis.position_of(alpha).expect("alpha in basis");
                eta[a_pos] += dot * inv_sqrt;
            }
        }
        basis_vectors.push(blocks);
        reduced_coeffs.push(eta);
    }
    finish_reduction(
        q,
        &stats,
        eigenvalues,
        basis_vectors,
        reduced_coeffs,
        residual_energy,
        spectrum,
        selector,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_reduction(
    q: &ChaosExpansion,
    stats: &CoefficientStats,
    eigenvalues: Vec<f64>,
    basis_vectors: Vec<Vec<Vec<f64>>>,
    reduced_coeffs: Vec<Vec<f64>>,
    residual_energy: f64,
    spectrum: Vec<f64>,
    selector: ModeSelector,
) -> Result<ReducedExpansion> {
    if let ModeSelector::FixedCount(k) = selector {
        if eigenvalues.len() < k {
            return Err(Error::InvalidArgument(format!(
                "requested {k} modes but the expansion carries no fluctuation"
            )));
        }
    }
    Ok(ReducedExpansion {
        xi_dim: q.xi_dim(),
        zeta_dim: q.zeta_dim(),
        degree: q.degree(),
        value_dim: q.value_dim(),
        eigenvalues,
        residual_energy,
        spectrum,
        mean_part: stats.mean.clone(),
        basis_vectors,
        reduced_coeffs,
    })
}
