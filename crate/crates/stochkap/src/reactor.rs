//! One-dimensional coupled neutronics and heat conduction model of a fuel
//! rod with random heat transfer and absorption fields.
//!
//! Temperature obeys a conduction equation with volumetric exchange to the
//! coolant and fission heating; neutron flux obeys one-group diffusion with
//! temperature-dependent cross sections. Both are discretized with linear
//! finite elements on a shared uniform mesh and coupled by alternating
//! (Gauss-Seidel) solves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sample_field, FieldSpec, KlDecomposition};
use crate::linalg::{solve_banded, BandedMatrix, SymMatrix};
use crate::mesh::FeMesh;
use crate::chaos::WeightingMatrix;

/// Physical and discretization parameters of the coupled rod problem.
///
/// Defaults reproduce the reference configuration used across the test
/// suite: a 100 cm rod, 40 elements, and cross sections giving a
/// subcritical reaction margin of 0.003 cm⁻¹.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReactorConfig {
    /// Rod length [cm].
    pub length: f64,
    /// Number of equal-length elements.
    pub n_elements: usize,
    /// Thermal conductivity [J/(K·cm·s)].
    pub conductivity: f64,
    /// Coolant temperature [K].
    pub t_inf: f64,
    /// Energy released per fission [J].
    pub e_f: f64,
    /// Reference macroscopic fission cross section [1/cm].
    pub sigma_f_ref: f64,
    /// Reference diffusion coefficient [cm].
    pub d_ref: f64,
    /// Neutrons per fission.
    pub nu: f64,
    /// Volumetric neutron source [neutrons/(s·cm³)].
    pub source: f64,
    /// Reference temperature for cross-section scaling [K].
    pub t_ref: f64,
    /// Clamp window for the temperature entering the coefficient laws [K].
    pub t_min: f64,
    pub t_max: f64,
    /// Random heat transfer coefficient field [J/(K·cm³·s)].
    pub h_spec: FieldSpec,
    /// Random reference absorption cross-section field [1/cm].
    pub sigma_spec: FieldSpec,
}

impl Default for ReactorConfig {
    fn default() -> Self {
        Self {
            length: 100.0,
            n_elements: 40,
            conductivity: 100.0,
            t_inf: 390.0,
            e_f: 3.0e-11,
            sigma_f_ref: 0.0075,
            d_ref: 2.2,
            nu: 2.2,
            source: 5.0e11,
            t_ref: 390.0,
            t_min: 390.0,
            t_max: 1000.0,
            h_spec: FieldSpec { mean: 0.17, cov: 0.1, corr_length: 15.0, n_terms: 10 },
            sigma_spec: FieldSpec { mean: 0.0195, cov: 0.1, corr_length: 50.0, n_terms: 2 },
        }
    }
}

impl ReactorConfig {
    /// Mean subcritical reaction margin Σ̄_a,ref - ν·Σ_f,ref [1/cm].
    pub fn reaction_margin(&self) -> f64 {
        self.sigma_spec.mean - self.nu * self.sigma_f_ref
    }

    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("length", self.length),
            ("conductivity", self.conductivity),
            ("t_inf", self.t_inf),
            ("e_f", self.e_f),
            ("sigma_f_ref", self.sigma_f_ref),
            ("d_ref", self.d_ref),
            ("nu", self.nu),
            ("source", self.source),
            ("t_ref", self.t_ref),
            ("t_min", self.t_min),
            ("t_max", self.t_max),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("reactor.{name} must be positive, got {v}")));
            }
        }
        if self.n_elements < 2 {
            return Err(Error::Config(format!(
                "reactor.n_elements must be at least 2, got {}",
                self.n_elements
            )));
        }
        if !(self.t_min <= self.t_ref && self.t_ref <= self.t_max) {
            return Err(Error::Config(format!(
                "reactor temperature window violated: t_min {} <= t_ref {} <= t_max {}",
                self.t_min, self.t_ref, self.t_max
            )));
        }
        let margin = self.reaction_margin();
        if !(margin > 0.0) {
            return Err(Error::Config(format!(
                "mean absorption must dominate fission production: \
                 sigma_a_ref - nu*sigma_f_ref = {margin} must be positive"
            )));
        }
        self.h_spec.validate("reactor.h_spec")?;
        self.sigma_spec.validate("reactor.sigma_spec")?;
        Ok(())
    }

    pub fn mesh(&self) -> Result<FeMesh> {
        FeMesh::new(self.length, self.n_elements)
    }
}

/// Temperature-dependent coefficient factors. The temperature is clamped to
/// the configured window before entering the square-root laws, keeping the
/// fixed-point map defined for any iterate.
#[derive(Debug, Clone, Copy)]
pub struct TempCoefficients {
    /// Diffusion coefficient D(T) = D_ref·sqrt(T_c/T_ref) [cm].
    pub diffusion: f64,
    /// Multiplier sqrt(T_ref/T_c) applied to the absorption field.
    pub absorption_factor: f64,
    /// Multiplier sqrt(T_ref/T_c) applied to the fission cross section.
    pub fission_factor: f64,
}

pub fn temperature_coefficients(t: f64, cfg: &ReactorConfig) -> TempCoefficients {
    let t_c = t.clamp(cfg.t_min, cfg.t_max);
    let factor = (cfg.t_ref / t_c).sqrt();
    TempCoefficients {
        diffusion: cfg.d_ref * (t_c / cfg.t_ref).sqrt(),
        absorption_factor: factor,
        fission_factor: factor,
    }
}

/// Gram matrix of the linear FE basis under the inner product
/// ∫ u v + ∫ u' v': tridiagonal, symmetric positive definite. This is the
/// spatial weighting used for norms of nodal fields.
pub fn h1_gram(mesh: &FeMesh) -> Result<WeightingMatrix> {
    let n = mesh.n_nodes();
    let mass = mesh.mass_matrix();
    let stiff = mesh.stiffness_matrix();
    let m = SymMatrix::from_fn(n, |i, j| mass.get(i, j) + stiff.get(i, j))?;
    WeightingMatrix::new(m)
}

/// Assembles the thermal system [K + H(ξ)] T = q(Φ_prev, T_prev):
/// conduction stiffness plus the h-field mass operator, with fission
/// heating from the previous flux iterate and the coolant exchange load.
/// All mass-type integrals use 2-point Gauss per element with nodal fields
/// interpolated linearly.
pub fn assemble_heat(
    mesh: &FeMesh,
    cfg: &ReactorConfig,
    h_nodal: &[f64],
    t_prev: &[f64],
    phi_prev: &[f64],
) -> Result<(BandedMatrix, Vec<f64>)> {
    let n = mesh.n_nodes();
    for (name, arr) in [("h", h_nodal), ("T_prev", t_prev), ("Phi_prev", phi_prev)] {
        if arr.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {} entries for a {n}-node mesh",
                arr.len()
            )));
        }
    }
    let h_el = mesh.element_size();
    let mut a = BandedMatrix::new(n, 1, 1);
    let mut rhs = vec![0.0; n];
    let kd = cfg.conductivity / h_el;
    for e in 0..mesh.n_elements() {
        // Conduction: exact stiffness of the linear element.
        a.add(e, e, kd);
        a.add(e + 1, e + 1, kd);
        a.add(e, e + 1, -kd);
        a.add(e + 1, e, -kd);
        let (gauss, w) = mesh.element_gauss2(e);
        for &x in &gauss {
            let shape = mesh.shape_values(e, x);
            let h_val = mesh.interpolate(h_nodal, e, x);
            let t_val = mesh.interpolate(t_prev, e, x);
            let phi_val = mesh.interpolate(phi_prev, e, x);
            let coeffs = temperature_coefficients(t_val, cfg);
            let heating = cfg.e_f * cfg.sigma_f_ref * coeffs.fission_factor * phi_val;
            for local in 0..2 {
                let ni = shape[local];
                rhs[e + local] += w * ni * (heating + h_val * cfg.t_inf);
                for other in 0..2 {
                    a.add(e + local, e + other, w * h_val * ni * shape[other]);
                }
            }
        }
    }
    Ok((a, rhs))
}

/// Neutronics system [D(T) + M(T, ζ)] Φ = s and the smallest reaction
/// coefficient Σ_a(x,T,ζ) - ν·Σ_f(T) seen at a quadrature point. A
/// nonpositive minimum means the discrete operator may lose coercivity
/// (locally supercritical configuration); the solve reports it if the
/// factorization breaks down.
pub struct NeutronicsSystem {
    pub matrix: BandedMatrix,
    pub rhs: Vec<f64>,
    pub min_reaction: f64,
}

pub fn assemble_neutronics(
    mesh: &FeMesh,
    cfg: &ReactorConfig,
    t_nodal: &[f64],
    sigma_nodal: &[f64],
) -> Result<NeutronicsSystem> {
    let n = mesh.n_nodes();
    for (name, arr) in [("T", t_nodal), ("sigma", sigma_nodal)] {
        if arr.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {} entries for a {n}-node mesh",
                arr.len()
            )));
        }
    }
    let h_el = mesh.element_size();
    let mut a = BandedMatrix::new(n, 1, 1);
    let mut rhs = vec![0.0; n];
    let mut min_reaction = f64::INFINITY;
    for e in 0..mesh.n_elements() {
        let (gauss, w) = mesh.element_gauss2(e);
        // Diffusion with D evaluated at the Gauss points; the linear-shape
        // derivatives are constant so each point contributes w·D/h².
        let mut d_acc = 0.0;
        for &x in &gauss {
            let t_val = mesh.interpolate(t_nodal, e, x);
            d_acc += w * temperature_coefficients(t_val, cfg).diffusion;
        }
        let dk = d_acc / (h_el * h_el);
        a.add(e, e, dk);
        a.add(e + 1, e + 1, dk);
        a.add(e, e + 1, -dk);
        a.add(e + 1, e, -dk);
        for &x in &gauss {
            let shape = mesh.shape_values(e, x);
            let t_val = mesh.interpolate(t_nodal, e, x);
            let sigma_val = mesh.interpolate(sigma_nodal, e, x);
            let coeffs = temperature_coefficients(t_val, cfg);
            let reaction = sigma_val * coeffs.absorption_factor
                - cfg.nu * cfg.sigma_f_ref * coeffs.fission_factor;
            min_reaction = min_reaction.min(reaction);
            for local in 0..2 {
                let ni = shape[local];
                rhs[e + local] += w * ni * cfg.source;
                for other in 0..2 {
                    a.add(e + local, e + other, w * reaction * ni * shape[other]);
                }
            }
        }
    }
    Ok(NeutronicsSystem { matrix: a, rhs, min_reaction })
}

/// Result of the alternating coupled solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledSolution {
    pub temperature: Vec<f64>,
    pub flux: Vec<f64>,
    /// Relative W-norm of the temperature update per iteration.
    pub t_updates: Vec<f64>,
    /// Relative W-norm of the flux update per iteration.
    pub phi_updates: Vec<f64>,
}

/// Solves the coupled pair for one realization of the two random fields by
/// alternating solves: the thermal system sees the previous flux, then the
/// neutronics system sees the fresh temperature. Initial iterates are
/// T ≡ T_ref and Φ ≡ 0.
pub fn solve_coupled(
    cfg: &ReactorConfig,
    mesh: &FeMesh,
    kl_h: &KlDecomposition,
    kl_sigma: &KlDecomposition,
    xi: &[f64],
    zeta: &[f64],
    n_iter: usize,
    w: &WeightingMatrix,
) -> Result<CoupledSolution> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("coupled solve needs at least 1 iteration".into()));
    }
    let h_nodal = sample_field(&cfg.h_spec, kl_h, xi)?;
    let sigma_nodal = sample_field(&cfg.sigma_spec, kl_sigma, zeta)?;
    solve_coupled_fields(cfg, mesh, &h_nodal, &sigma_nodal, n_iter, w)
}

/// Assembles and solves the neutronics subproblem for one temperature
/// iterate and one absorption field realization.
///
/// A locally negative reaction coefficient can leave the operator
/// indefinite; partial pivoting may still factor it without a breakdown,
/// in which case a negative flux entry is the loss of coercivity in
/// disguise. Both forms surface as the same singularity error.
pub fn solve_neutronics_once(
    mesh: &FeMesh,
    cfg: &ReactorConfig,
    t_nodal: &[f64],
    sigma_nodal: &[f64],
) -> Result<Vec<f64>> {
    let sys = assemble_neutronics(mesh, cfg, t_nodal, sigma_nodal)?;
    let phi = solve_banded(&sys.matrix, &sys.rhs).map_err(|e| {
        if sys.min_reaction <= 0.0 {
            Error::Singular(format!(
                "neutronics solve failed: locally supercritical (min reaction \
                 coefficient {:.3e} 1/cm): {e}",
                sys.min_reaction
            ))
        } else {
            Error::Singular(format!("neutronics solve failed: {e}"))
        }
    })?;
    if sys.min_reaction <= 0.0 {
        if let Some(min_flux) = phi.iter().copied().reduce(f64::min) {
            if min_flux < 0.0 {
                return Err(Error::Singular(format!(
                    "neutronics operator lost coercivity: locally supercritical \
                     (min reaction coefficient {:.3e} 1/cm, min nodal flux {min_flux:.3e})",
                    sys.min_reaction
                )));
            }
        }
    }
    Ok(phi)
}

/// Same as [`solve_coupled`] but with the field realizations already in
/// nodal form (used when the thermal side runs against a surrogate).
pub fn solve_coupled_fields(
    cfg: &ReactorConfig,
    mesh: &FeMesh,
    h_nodal: &[f64],
    sigma_nodal: &[f64],
    n_iter: usize,
    w: &WeightingMatrix,
) -> Result<CoupledSolution> {
    let n = mesh.n_nodes();
    let mut t = vec![cfg.t_ref; n];
    let mut phi = vec![0.0; n];
    let mut t_updates = Vec::with_capacity(n_iter);
    let mut phi_updates = Vec::with_capacity(n_iter);
    for iter in 1..=n_iter {
        let (a_heat, b_heat) = assemble_heat(mesh, cfg, h_nodal, &t, &phi)?;
        let t_new = solve_banded(&a_heat, &b_heat).map_err(|e| {
            Error::Singular(format!("thermal solve failed at iteration {iter}: {e}"))
        })?;
        let phi_new = solve_neutronics_once(mesh, cfg, &t_new, sigma_nodal).map_err(|e| {
            match e {
                Error::Singular(msg) => {
                    Error::Singular(format!("{msg} (coupling iteration {iter})"))
                }
                other => other,
            }
        })?;
        t_updates.push(relative_update(w, &t_new, &t));
        phi_updates.push(relative_update(w, &phi_new, &phi));
        t = t_new;
        phi = phi_new;
    }
    Ok(CoupledSolution { temperature: t, flux: phi, t_updates, phi_updates })
}

fn relative_update(w: &WeightingMatrix, new: &[f64], old: &[f64]) -> f64 {
    let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    let denom = w.norm_sq(new).sqrt();
    if denom == 0.0 {
        w.norm_sq(&diff).sqrt()
    } else {
        w.norm_sq(&diff).sqrt() / denom
    }
}
