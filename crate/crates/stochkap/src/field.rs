//! Random field representation: covariance kernel, Karhunen-Loève
//! decomposition, and truncated-series sampling.
//!
//! The kernel is the squared-sinc family C(x,y) = sin²(t)/t² with
//! t = π(x-y)/(2a), which has unit pointwise variance. The integral
//! operator is normalized by the domain length so its eigenvalues are
//! dimensionless fractions of the total variance, summing to one in the
//! continuum; eigenfunctions are orthonormal in the length-normalized L²
//! inner product. With that convention the truncated field reads
//! mean · (1 + δ Σ_j sqrt(λ_j) sqrt(3) u_j φ_j(x)) for independent uniform
//! u_j on [-1, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{generalized_sym_eig, SymMatrix};
use crate::mesh::FeMesh;
use crate::quadrature::gauss_legendre;
use crate::util::KahanSum;

/// Upper bound (exclusive) for the coefficient of variation: 1/sqrt(3).
/// At or above it even the one-term truncated field can reach zero.
pub const MAX_COV: f64 = 0.577_350_269_189_625_8;

/// Specification of a positive random field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    /// Mean value of the field (must be positive).
    pub mean: f64,
    /// Coefficient of variation δ, in [0, 1/sqrt(3)).
    pub cov: f64,
    /// Spatial correlation length a (same units as the mesh).
    pub corr_length: f64,
    /// Number of Karhunen-Loève terms retained.
    pub n_terms: usize,
}

impl FieldSpec {
    /// Validates ranges; `path` names this spec in error messages so config
    /// errors point at the offending key.
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.mean > 0.0) || !self.mean.is_finite() {
            return Err(Error::Config(format!("{path}.mean must be positive, got {}", self.mean)));
        }
        if !(self.cov >= 0.0 && self.cov < MAX_COV) {
            return Err(Error::Config(format!(
                "{path}.cov must lie in [0, 1/sqrt(3)) to keep the field positive, got {}",
                self.cov
            )));
        }
        if !(self.corr_length > 0.0) || !self.corr_length.is_finite() {
            return Err(Error::Config(format!(
                "{path}.corr_length must be positive, got {}",
                self.corr_length
            )));
        }
        if self.n_terms == 0 {
            return Err(Error::Config(format!("{path}.n_terms must be at least 1")));
        }
        Ok(())
    }
}

/// Normalized covariance kernel sin²(t)/t², t = π(x-y)/(2·corr_length).
/// Unit value on the diagonal; first zero at |x-y| = 2·corr_length.
pub fn covariance_kernel(corr_length: f64, x: f64, y: f64) -> f64 {
    let dx = x - y;
    let t = std::f64::consts::PI * dx / (2.0 * corr_length);
    if dx.abs() < 1e-8 * corr_length {
        // Series for sin²(t)/t² around t = 0; at this branch point the t²
        // term is already below machine precision.
        let t2 = t * t;
        1.0 - t2 / 3.0 + 2.0 * t2 * t2 / 45.0
    } else {
        let s = t.sin();
        s * s / (t * t)
    }
}

/// Karhunen-Loève decomposition of the covariance operator on a finite
/// element mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlDecomposition {
    /// Retained eigenvalues, descending; dimensionless variance fractions.
    pub eigenvalues: Vec<f64>,
    /// Retained eigenfunctions as nodal value columns, orthonormal in the
    /// length-normalized L² inner product.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Sum over the full computed spectrum (all mesh modes), for trace
    /// diagnostics: the continuum value is exactly 1.
    pub spectrum_sum: f64,
    /// Mesh node coordinates the eigenfunctions are sampled on.
    pub node_coords: Vec<f64>,
}

impl KlDecomposition {
    #[inline]
    pub fn n_terms(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Fraction of the computed spectrum captured by the retained terms.
    pub fn captured_fraction(&self) -> f64 {
        let mut acc = KahanSum::new();
        for &l in &self.eigenvalues {
            acc.add(l);
        }
        acc.value() / self.spectrum_sum
    }
}

/// Galerkin discretization of the normalized covariance operator and
/// solution of the resulting generalized eigenproblem. Keeps
/// `spec.n_terms` modes.
pub fn kl_decompose(spec: &FieldSpec, mesh: &FeMesh) -> Result<KlDecomposition> {
    spec.validate("field_spec")?;
    let n = mesh.n_nodes();
    if spec.n_terms > n {
        return Err(Error::InvalidArgument(format!(
            "requested {} KL terms but the mesh supports only {n}",
            spec.n_terms
        )));
    }
    let length = mesh.length();
    let h = mesh.element_size();
    let gauss = gauss_legendre(4)?;
    // Element Gauss points and Lebesgue weights (probability weight × h).
    let n_e = mesh.n_elements();
    let mut pts = Vec::with_capacity(n_e * 4);
    for e in 0..n_e {
        let a = mesh.nodes()[e];
        for (node, &w) in gauss.nodes().iter().zip(gauss.weights()) {
            let x = a + (node[0] + 1.0) * 0.5 * h;
            let shp = mesh.shape_values(e, x);
            pts.push((e, x, w * h, shp));
        }
    }
    // A_ik = (1/L²) ∫∫ N_i(x) C(x,y) N_k(y) dx dy.
    let mut a_mat = vec![0.0f64; n * n];
    let inv_l2 = 1.0 / (length * length);
    for (e1, x1, w1, s1) in &pts {
        for (e2, x2, w2, s2) in &pts {
            let c = covariance_kernel(spec.corr_length, *x1, *x2) * w1 * w2 * inv_l2;
            for li in 0..2 {
                for lk in 0..2 {
                    a_mat[(e1 + li) * n + (e2 + lk)] += c * s1[li] * s2[lk];
                }
            }
        }
    }
    let a = SymMatrix::new(n, a_mat)?;
    // B = mass matrix / L.
    let mass = mesh.mass_matrix();
    let b = SymMatrix::from_fn(n, |i, j| mass.get(i, j) / length)?;
    let eig = generalized_sym_eig(&a, &b)?;

    let lambda1 = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let mut spectrum_sum = KahanSum::new();
    for &l in &eig.values {
        if l < -1e-10 * lambda1.max(1e-300) {
            return Err(Error::Convergence(format!(
                "covariance discretization produced eigenvalue {l:.3e}, too negative for a \
                 positive semidefinite kernel"
            )));
        }
        spectrum_sum.add(l.max(0.0));
    }
    let eigenvalues: Vec<f64> = eig.values[..spec.n_terms].iter().map(|&l| l.max(0.0)).collect();
    let eigenfunctions: Vec<Vec<f64>> =
        (0..spec.n_terms).map(|j| eig.vectors.column(j)).collect();

    let kl = KlDecomposition {
        eigenvalues,
        eigenfunctions,
        spectrum_sum: spectrum_sum.value(),
        node_coords: mesh.nodes().to_vec(),
    };
    // Truncated-field positivity: the worst case over |u_j| <= 1 draws is
    // cov·sqrt(3)·max_x Σ_j sqrt(λ_j)|φ_j(x)|, which must stay below 1.
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut s = 0.0;
        for (l, phi) in kl.eigenvalues.iter().zip(&kl.eigenfunctions) {
            s += l.sqrt() * phi[i].abs();
        }
        worst = worst.max(s);
    }
    let amplitude = spec.cov * 3.0f64.sqrt() * worst;
    if amplitude >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "field can reach zero: cov {} with this spectrum allows fluctuation amplitude \
             {amplitude:.3} >= 1",
            spec.cov
        )));
    }
    Ok(kl)
}

/// One realization of the truncated field at the mesh nodes for uniform
/// draws in [-1, 1]^n_terms.
pub fn sample_field(spec: &FieldSpec, kl: &KlDecomposition, draws: &[f64]) -> Result<Vec<f64>> {
    if draws.len() != kl.n_terms() {
        return Err(Error::DimensionMismatch(format!(
            "{} draws for a {}-term decomposition",
            draws.len(),
            kl.n_terms()
        )));
    }
    if draws.iter().any(|u| !u.is_finite() || u.abs() > 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(
            "field draws must be uniform variates in [-1, 1]".into(),
        ));
    }
    let n = kl.node_coords.len();
    let sqrt3 = 3.0f64.sqrt();
    let mut out = vec![0.0f64; n];
    for ((l, phi), &u) in kl.eigenvalues.iter().zip(&kl.eigenfunctions).zip(draws) {
        let amp = l.sqrt() * sqrt3 * u;
        for (o, p) in out.iter_mut().zip(phi) {
            *o += amp * p;
        }
    }
    for o in out.iter_mut() {
        *o = spec.mean * (1.0 + spec.cov * *o);
    }
    Ok(out)
}
