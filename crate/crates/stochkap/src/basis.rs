//! Multivariate polynomial bases.
//!
//! Two families live here. The analytic one is the tensor product of
//! Legendre polynomials normalized against the uniform probability measure
//! on [-1, 1], truncated by total degree. The numeric one is produced by
//! Gram-Schmidt orthonormalization of graded monomials against a
//! caller-supplied inner product and is represented by dense coefficient
//! tables over those monomials.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::util::binomial;

/// Tolerance for accepting evaluation points marginally outside [-1, 1];
/// quadrature nodes are interior, so anything further out is a caller bug.
const DOMAIN_TOL: f64 = 1e-12;

/// Ratio below which a Gram-Schmidt candidate is declared linearly
/// dependent on its predecessors under the supplied inner product.
const DEGENERACY_RATIO: f64 = 1e-10;

/// Enumerates all exponent tuples of the given dimension with total degree
/// at most `degree`, in graded order: ascending total degree, and within a
/// degree block lexicographic with the leading coordinate varying slowest
/// from high to low.
///
/// The ordering is part of the crate's public contract: coefficient tables,
/// CSV exports, and block eigenproblem layouts all index against it.
pub fn enumerate_total_degree(dimension: usize, degree: usize) -> Vec<Vec<u32>> {
    if dimension == 0 {
        // The empty product is the constant: one member, the empty tuple.
        return vec![Vec::new()];
    }
    let mut out = Vec::with_capacity(binomial(dimension + degree, degree));
    let mut scratch = vec![0u32; dimension];
    for total in 0..=degree as u32 {
        fill_degree_block(dimension, total, 0, &mut scratch, &mut out);
    }
    out
}

fn fill_degree_block(
    dimension: usize,
    remaining: u32,
    dim: usize,
    scratch: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if dim + 1 == dimension {
        scratch[dim] = remaining;
        out.push(scratch.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        scratch[dim] = v;
        fill_degree_block(dimension, remaining - v, dim + 1, scratch, out);
    }
}

/// Total-degree truncated tensor Legendre basis over [-1, 1]^dimension.
#[derive(Debug, Clone)]
pub struct TotalDegreeBasis {
    dimension: usize,
    degree: usize,
    indices: Vec<Vec<u32>>,
    position: HashMap<Vec<u32>, usize>,
}

impl TotalDegreeBasis {
    pub fn new(dimension: usize, degree: usize) -> Self {
        let indices = enumerate_total_degree(dimension, degree);
        let position = indices.iter().cloned().zip(0..).collect();
        Self { dimension, degree, indices, position }
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    #[inline]
    pub fn index(&self, k: usize) -> &[u32] {
        &self.indices[k]
    }

    pub fn position_of(&self, index: &[u32]) -> Option<usize> {
        self.position.get(index).copied()
    }

    /// Values of every basis member at `point`, sharing one set of
    /// univariate Legendre tables across members.
    pub fn eval_all(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dimension {
            return Err(Error::DimensionMismatch(format!(
                "basis over {} dims evaluated at point of dim {}",
                self.dimension,
                point.len()
            )));
        }
        let tables: Result<Vec<Vec<f64>>> =
            point.iter().map(|&x| legendre_eval(self.degree, x)).collect();
        let tables = tables?;
        Ok(self
            .indices
            .iter()
            .map(|idx| {
                let mut v = 1.0;
                for (d, &k) in idx.iter().enumerate() {
                    if k > 0 {
                        v *= tables[d][k as usize];
                    }
                }
                v
            })
            .collect())
    }
}

/// Values ψ_0(x), ..., ψ_degree(x) of the Legendre polynomials normalized
/// to unit norm against the uniform probability measure on [-1, 1]:
/// ψ_k = sqrt(2k+1) P_k.
pub fn legendre_eval(degree: usize, x: f64) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::NonFinite("legendre evaluation point".into()));
    }
    if x.abs() > 1.0 + DOMAIN_TOL {
        return Err(Error::InvalidArgument(format!(
            "legendre evaluation point {x} outside [-1, 1]"
        )));
    }
    let mut out = Vec::with_capacity(degree + 1);
    let mut p_prev = 1.0f64; // P_0
    out.push(1.0);
    if degree == 0 {
        return Ok(out);
    }
    let mut p = x; // P_1
    out.push(3.0f64.sqrt() * p);
    for k in 1..degree {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
        out.push(((2 * k + 3) as f64).sqrt() * p);
    }
    Ok(out)
}

/// Value of the tensor basis member with the given exponent tuple.
pub fn tensor_basis_eval(index: &[u32], point: &[f64]) -> Result<f64> {
    if index.len() != point.len() {
        return Err(Error::DimensionMismatch(format!(
            "index of dim {} against point of dim {}",
            index.len(),
            point.len()
        )));
    }
    let mut v = 1.0;
    for (&k, &x) in index.iter().zip(point) {
        if k > 0 {
            v *= legendre_eval(k as usize, x)?[k as usize];
        } else {
            // Still validate the coordinate.
            legendre_eval(0, x)?;
        }
    }
    Ok(v)
}

/// Orthonormal polynomial family produced by Gram-Schmidt against some
/// inner product, stored as dense coefficient tables over the graded
/// monomials of its dimension and degree.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OrthonormalPolyFamily {
    dimension: usize,
    degree: usize,
    monomials: Vec<Vec<u32>>,
    /// members[j] holds the coefficients of the j-th orthonormal polynomial
    /// over `monomials`; member j has total degree equal to that of
    /// monomial j.
    members: Vec<Vec<f64>>,
}

impl OrthonormalPolyFamily {
    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    #[inline]
    pub fn member_coeffs(&self, j: usize) -> &[f64] {
        &self.members[j]
    }

    /// Values of all monomials at `point` (no domain restriction; these are
    /// plain power products).
    pub fn eval_monomials(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dimension {
            return Err(Error::DimensionMismatch(format!(
                "family over {} dims evaluated at point of dim {}",
                self.dimension,
                point.len()
            )));
        }
        // Per-dimension power tables up to the family degree.
        let mut pows = vec![vec![1.0f64; self.degree + 1]; self.dimension];
        for (d, &x) in point.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite("monomial evaluation point".into()));
            }
            for k in 1..=self.degree {
                pows[d][k] = pows[d][k - 1] * x;
            }
        }
        Ok(self
            .monomials
            .iter()
            .map(|m| {
                let mut v = 1.0;
                for (d, &k) in m.iter().enumerate() {
                    if k > 0 {
                        v *= pows[d][k as usize];
                    }
                }
                v
            })
            .collect())
    }

    pub fn eval_member(&self, j: usize, point: &[f64]) -> Result<f64> {
        let mono = self.eval_monomials(point)?;
        Ok(self.members[j].iter().zip(&mono).map(|(c, m)| c * m).sum())
    }

    /// Values of all members at `point`.
    pub fn eval_all(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mono = self.eval_monomials(point)?;
        Ok(self
            .members
            .iter()
            .map(|coeffs| coeffs.iter().zip(&mono).map(|(c, m)| c * m).sum())
            .collect())
    }
}

/// Gram-Schmidt orthonormalization of the graded monomial sequence of the
/// given dimension and degree against a caller-supplied inner product.
///
/// The oracle receives two coefficient vectors over the graded monomial
/// list of (dimension, degree) and must return their inner product. A
/// modified Gram-Schmidt pass plus one full re-orthogonalization pass is
/// applied to each candidate; candidates whose remaining norm falls below
/// 1e-10 of their raw norm indicate a measure that cannot support the
/// requested degree, which is an error naming the offending member.
pub fn gram_schmidt_orthonormalize(
    dimension: usize,
    degree: usize,
    inner_product: &mut dyn FnMut(&[f64], &[f64]) -> f64,
) -> Result<OrthonormalPolyFamily> {
    let monomials = enumerate_total_degree(dimension, degree);
    let n = monomials.len();
    let mut members: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        let raw_norm = inner_product(&v, &v).max(0.0).sqrt();
        if raw_norm == 0.0 {
            return Err(Error::Degenerate(format!(
                "monomial {:?} (total degree {}) has zero norm under the supplied inner product",
                monomials[k],
                monomials[k].iter().sum::<u32>()
            )));
        }
        for _pass in 0..2 {
            for m in &members {
                let r = inner_product(&v, m);
                for (vi, mi) in v.iter_mut().zip(m) {
                    *vi -= r * mi;
                }
            }
        }
        let norm = inner_product(&v, &v).max(0.0).sqrt();
        if norm < DEGENERACY_RATIO * raw_norm {
            return Err(Error::Degenerate(format!(
                "measure cannot support degree {}: monomial {:?} (member {k}) is linearly \
                 dependent on lower members (norm ratio {:.3e})",
                monomials[k].iter().sum::<u32>(),
                monomials[k],
                norm / raw_norm
            )));
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        members.push(v);
    }
    Ok(OrthonormalPolyFamily { dimension, degree, monomials, members })
}
