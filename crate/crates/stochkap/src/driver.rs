//! Outer solver drivers: the spectral Gauss-Seidel iteration that couples
//! the heat and neutronics subproblems through a reduced representation of
//! the exchanged temperature, the Monte Carlo reference driver, and the
//! statistics connecting the two.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{legendre_eval, OrthonormalPolyFamily, TotalDegreeBasis};
use crate::chaos::{reduce, ChaosExpansion, ModeSelector, ReducedExpansion, WeightingMatrix};
use crate::error::{Error, Result};
use crate::field::{kl_decompose, sample_field, KlDecomposition};
use crate::linalg::solve_banded;
use crate::measure::{
    build_reduced_basis, mixed_sparse_rule, pushforward_measure, MixedRuleReport,
};
use crate::mesh::FeMesh;
use crate::quadrature::{smolyak_rule, tensor_gauss_legendre, GrowthRule, QuadratureRule};
use crate::reactor::{assemble_heat, h1_gram, solve_coupled, solve_neutronics_once, ReactorConfig};
use crate::util::KahanSum;

/// Hard cap on the flux chaos degree search.
pub const DEFAULT_Q_CAP: usize = 8;

/// Outer iterations stop early once the temperature update norm stays below
/// this level for [`STAGNATION_RUN`] consecutive iterations.
pub const STAGNATION_TOL: f64 = 1e-8;
pub const STAGNATION_RUN: usize = 3;

/// Largest atom count accepted for the tensor-product fallback rule behind
/// the pushforward measure of the reduced variables.
pub const PUSHFORWARD_ATOM_CAP: usize = 200_000;

/// Sample count for the probe estimate of the flux update norm (the flux
/// surrogates of successive iterations live over different reduced bases,
/// so their distance is estimated at fixed probe draws).
pub const PROBE_SAMPLES: usize = 2048;
const PROBE_SEED: u64 = 0x70726f6265_u64;

/// Settings of the spectral solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Total degree of the temperature chaos expansion.
    pub p: usize,
    /// Reduction tolerance selecting the reduced dimension d.
    pub eps1: f64,
    /// Truncation tolerance selecting the flux chaos degree q.
    pub eps2: f64,
    /// Outer Gauss-Seidel iteration budget.
    pub max_outer_iters: usize,
    /// Level of the sparse rule behind the heat sweep; `None` means p+1.
    pub xi_zeta_rule_level: Option<usize>,
    /// The mixed rule for a degree-q flux projection uses level q plus this
    /// offset.
    pub mixed_rule_level_offset: usize,
    /// Hard cap on the flux degree search.
    pub q_cap: usize,
    /// Bound each iteration's flux degree search by the previous accepted
    /// degree plus one. Disabled, the search always runs to `q_cap`.
    pub warm_cap: bool,
    /// Monte Carlo sample count for reference runs.
    pub mc_samples: usize,
    /// Seed for Monte Carlo sampling.
    pub rng_seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            p: 4,
            eps1: 0.01,
            eps2: 0.01,
            max_outer_iters: 20,
            xi_zeta_rule_level: None,
            mixed_rule_level_offset: 2,
            q_cap: DEFAULT_Q_CAP,
            warm_cap: true,
            mc_samples: 10_000,
            rng_seed: 1729,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("solver.p must be at least 1".into()));
        }
        for (name, v) in [("solver.eps1", self.eps1), ("solver.eps2", self.eps2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("solver.max_outer_iters must be at least 1".into()));
        }
        if let Some(l) = self.xi_zeta_rule_level {
            if l == 0 {
                return Err(Error::Config("solver.xi_zeta_rule_level must be at least 1".into()));
            }
        }
        if self.mixed_rule_level_offset == 0 {
            return Err(Error::Config(
                "solver.mixed_rule_level_offset must be at least 1".into(),
            ));
        }
        if self.q_cap == 0 {
            return Err(Error::Config("solver.q_cap must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("solver.mc_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Level of the combined-input sparse rule behind the heat sweep.
    pub fn heat_rule_level(&self) -> usize {
        self.xi_zeta_rule_level.unwrap_or(self.p + 1)
    }
}

/// Per-outer-iteration diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub ell: usize,
    /// Reduced dimension retained for the temperature.
    pub d: usize,
    /// Accepted flux chaos degree.
    pub q: usize,
    /// Retained eigenvalues of the reduction.
    pub eigenvalues: Vec<f64>,
    /// Relative coefficient-space update of the temperature expansion.
    pub t_update: f64,
    /// Probe estimate of the relative flux surrogate update.
    pub phi_update: f64,
    /// Node count of the heat sweep rule.
    pub heat_nodes: usize,
    /// Node count of the mixed rule behind the accepted flux projection.
    pub neutronics_nodes: usize,
}

/// Chaos expansion of the flux over the reduced variables η and the
/// original uniform block ζ: coefficients against Γ_γ(η)·ψ_β(ζ) with
/// |γ| + |β| ≤ q, where Γ is orthonormal against the discrete pushforward
/// measure of η and ψ is the normalized Legendre family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedExpansion {
    eta_dim: usize,
    zeta_dim: usize,
    degree: usize,
    value_dim: usize,
    /// Absent when the reduced block is empty (d = 0): the η factor of
    /// every retained basis member is then the constant 1.
    family: Option<OrthonormalPolyFamily>,
    /// Coefficient vectors over the graded joint enumeration of (γ, β).
    coeffs: Vec<Vec<f64>>,
}

impl MixedExpansion {
    /// Degree-zero expansion holding a single constant value.
    pub fn constant(zeta_dim: usize, value: Vec<f64>) -> Self {
        Self {
            eta_dim: 0,
            zeta_dim,
            degree: 0,
            value_dim: value.len(),
            family: None,
            coeffs: vec![value],
        }
    }

    fn from_parts(
        eta_dim: usize,
        zeta_dim: usize,
        degree: usize,
        family: Option<OrthonormalPolyFamily>,
        coeffs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = TotalDegreeBasis::new(eta_dim + zeta_dim, degree).len();
        if coeffs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "mixed expansion needs {n} coefficient vectors, got {}",
                coeffs.len()
            )));
        }
        let value_dim = coeffs.first().map_or(0, Vec::len);
        if value_dim == 0 || coeffs.iter().any(|c| c.len() != value_dim) {
            return Err(Error::DimensionMismatch(
                "mixed expansion coefficients must share one positive length".into(),
            ));
        }
        if eta_dim > 0 {
            let fam = family.as_ref().ok_or_else(|| {
                Error::InvalidArgument("mixed expansion with η block needs a family".into())
            })?;
            if fam.dimension() != eta_dim || fam.degree() < degree {
                return Err(Error::DimensionMismatch(format!(
                    "family over {} dims to degree {} cannot host an η block of dim {eta_dim} \
                     at degree {degree}",
                    fam.dimension(),
                    fam.degree()
                )));
            }
        }
        Ok(Self { eta_dim, zeta_dim, degree, value_dim, family, coeffs })
    }

    #[inline]
    pub fn eta_dim(&self) -> usize {
        self.eta_dim
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

    /// The orthonormal family over the reduced variables; absent when the
    /// expansion has no η block.
    #[inline]
    pub fn family(&self) -> Option<&OrthonormalPolyFamily> {
        self.family.as_ref()
    }

    pub fn joint_basis(&self) -> TotalDegreeBasis {
        TotalDegreeBasis::new(self.eta_dim + self.zeta_dim, self.degree)
    }

    #[inline]
    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn coeff(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    /// Mean coefficient (the constant basis member).
    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.coeffs[0]
    }

    /// Precomputes the joint-index bookkeeping for repeated evaluations.
    pub fn eval_context(&self) -> MixedEvalContext {
        let joint = self.joint_basis();
        let eta_enum = TotalDegreeBasis::new(self.eta_dim, self.degree);
        let members = joint
            .indices()
            .iter()
            .map(|idx| {
                let (gamma, beta) = idx.split_at(self.eta_dim);
                let gamma_pos = eta_enum
                    .position_of(gamma)
                    .expect("η prefix of a joint index lies in the η enumeration");
                (gamma_pos, beta.to_vec())
            })
            .collect();
        MixedEvalContext { members, zeta_dim: self.zeta_dim, degree: self.degree }
    }

    /// Values of all joint basis members at one (η, ζ) point.
    pub fn basis_values(&self, ctx: &MixedEvalContext, eta: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
        if eta.len() != self.eta_dim {
            return Err(Error::DimensionMismatch(format!(
                "η of dim {} supplied to a mixed expansion with η dim {}",
                eta.len(),
                self.eta_dim
            )));
        }
        if zeta.len() != self.zeta_dim {
            return Err(Error::DimensionMismatch(format!(
                "ζ of dim {} supplied to a mixed expansion with ζ dim {}",
                zeta.len(),
                self.zeta_dim
            )));
        }
        let fam_vals = match &self.family {
            Some(f) => f.eval_all(eta)?,
            None => vec![1.0],
        };
        let tables: Result<Vec<Vec<f64>>> =
            zeta.iter().map(|&z| legendre_eval(self.degree, z)).collect();
        let tables = tables?;
        Ok(ctx
            .members
            .iter()
            .map(|(gamma_pos, beta)| {
                let mut v = fam_vals[*gamma_pos];
                for (d, &k) in beta.iter().enumerate() {
                    if k > 0 {
                        v *= tables[d][k as usize];
                    }
                }
                v
            })
            .collect())
    }

    pub fn evaluate_with(
        &self,
        ctx: &MixedEvalContext,
        eta: &[f64],
        zeta: &[f64],
    ) -> Result<Vec<f64>> {
        let vals = self.basis_values(ctx, eta, zeta)?;
        let mut out = vec![0.0; self.value_dim];
        for (c, &b) in self.coeffs.iter().zip(&vals) {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += b * ci;
            }
        }
        Ok(out)
    }

    /// One-off evaluation; build an [`MixedExpansion::eval_context`] for
    /// loops.
    pub fn evaluate(&self, eta: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
        let ctx = self.eval_context();
        self.evaluate_with(&ctx, eta, zeta)
    }
}

/// Joint-index bookkeeping shared across evaluations of one
/// [`MixedExpansion`].
#[derive(Debug, Clone)]
pub struct MixedEvalContext {
    members: Vec<(usize, Vec<u32>)>,
    #[allow(dead_code)]
    zeta_dim: usize,
    #[allow(dead_code)]
    degree: usize,
}

/// Nonintrusive spectral projection: coefficient k is the rule-weighted sum
/// of samples against basis member k, accumulated per coefficient in fixed
/// node order with compensated summation.
///
/// `basis_values[k]` holds the values of basis member k at every node.
pub fn nonintrusive_project(
    samples: &[Vec<f64>],
    rule: &QuadratureRule,
    basis_values: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if samples.len() != rule.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples against a rule with {} nodes",
            samples.len(),
            rule.len()
        )));
    }
    let value_dim = samples.first().map_or(0, Vec::len);
    if value_dim == 0 || samples.iter().any(|s| s.len() != value_dim) {
        return Err(Error::DimensionMismatch(
            "samples must share one positive length".into(),
        ));
    }
    for (k, s) in samples.iter().enumerate() {
        for (c, v) in s.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "sample at node {k} has non-finite component {c}"
                )));
            }
        }
    }
    for (i, col) in basis_values.iter().enumerate() {
        if col.len() != rule.len() {
            return Err(Error::DimensionMismatch(format!(
                "basis member {i} has {} values for {} nodes",
                col.len(),
                rule.len()
            )));
        }
    }
    let weights = rule.weights();
    Ok(basis_values
        .par_iter()
        .map(|col| {
            let mut acc = vec![KahanSum::new(); value_dim];
            for ((s, &b), &w) in samples.iter().zip(col.iter()).zip(weights) {
                let bw = b * w;
                for (a, &v) in acc.iter_mut().zip(s) {
                    a.add(v * bw);
                }
            }
            acc.into_iter().map(|a| a.value()).collect()
        })
        .collect())
}

/// Univariate normalized-Legendre tables for every node: entry
/// `dim·(degree+1) + k` of row `node` is ψ_k at that node's coordinate.
fn legendre_node_tables(nodes: &[Vec<f64>], degree: usize) -> Result<Vec<Vec<f64>>> {
    nodes
        .iter()
        .map(|node| {
            let mut row = Vec::with_capacity(node.len() * (degree + 1));
            for &x in node {
                row.extend(legendre_eval(degree, x)?);
            }
            Ok(row)
        })
        .collect()
}

/// Projects samples onto a full total-degree Legendre basis, materializing
/// basis columns in member chunks to bound memory.
fn project_chaos(
    samples: &[Vec<f64>],
    rule: &QuadratureRule,
    enumeration: &TotalDegreeBasis,
) -> Result<Vec<Vec<f64>>> {
    let degree = enumeration.degree();
    let stride = degree + 1;
    let tables = legendre_node_tables(rule.nodes(), degree)?;
    const CHUNK: usize = 256;
    let mut coeffs = Vec::with_capacity(enumeration.len());
    for chunk in enumeration.indices().chunks(CHUNK) {
        let cols: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|idx| {
                tables
                    .iter()
                    .map(|row| {
                        let mut v = 1.0;
                        for (d, &k) in idx.iter().enumerate() {
                            if k > 0 {
                                v *= row[d * stride + k as usize];
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        coeffs.extend(nonintrusive_project(samples, rule, &cols)?);
    }
    Ok(coeffs)
}

/// Where the pushforward measure's source rule came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushforwardDiagnostics {
    /// "xi-marginal" or "tensor-fallback".
    pub source: String,
    /// Tensor fallback level, when used.
    pub fallback_level: Option<usize>,
    /// Negative mass of the rejected marginal rule, when the fallback fired.
    pub rejected_negative_mass: Option<f64>,
    /// Node count of the source rule.
    pub source_nodes: usize,
    /// Atom count of the merged pushforward measure.
    pub measure_atoms: usize,
}

/// Reference rule over the ξ block for the pushforward measure: the ξ
/// marginal of the heat rule when its collapsed weights stay positive,
/// otherwise a positive tensor rule of bounded size.
///
/// The fallback level targets the deepest embedded-rule construction the
/// degree search can request: a level-L embedded rule needs the pushforward
/// measure to support polynomials to degree 2L-1, which in turn needs
/// enough well-placed atoms. The target shrinks until the tensor rule fits
/// the atom budget.
fn xi_reference_rule(
    heat_rule: &QuadratureRule,
    xi_dim: usize,
    p: usize,
    max_mixed_level: usize,
) -> Result<(QuadratureRule, String, Option<usize>, Option<f64>)> {
    let marginal = heat_rule.marginal(xi_dim)?;
    if marginal.is_positive() {
        return Ok((marginal, "xi-marginal".into(), None, None));
    }
    let negative_mass: f64 = marginal.weights().iter().filter(|&&w| w < 0.0).sum();
    let mut level = (p + 1).max(2 * max_mixed_level).max(2);
    while level > 2 && (level as f64).powi(xi_dim as i32) > PUSHFORWARD_ATOM_CAP as f64 {
        level -= 1;
    }
    let rule = tensor_gauss_legendre(xi_dim, level)?;
    Ok((rule, "tensor-fallback".into(), Some(level), Some(negative_mass)))
}

/// Rebuilds the discrete measure of the reduced variables that a finished
/// run projected against: the pushforward of the ξ reference rule through
/// the stored η map. Deterministic given the same configuration.
pub fn eta_measure_for(
    cfg: &ReactorConfig,
    settings: &SolverSettings,
    reduced: &ReducedExpansion,
) -> Result<crate::measure::DiscreteMeasure> {
    if reduced.d() == 0 {
        return Err(Error::Degenerate(
            "reduction has no modes: no reduced-variable measure exists".into(),
        ));
    }
    let m = cfg.h_spec.n_terms;
    let n = cfg.sigma_spec.n_terms;
    let heat_rule = smolyak_rule(m + n, settings.heat_rule_level(), GrowthRule::Exponential)?;
    let xi_ref = xi_reference_rule(
        &heat_rule,
        m,
        settings.p,
        settings.q_cap + settings.mixed_rule_level_offset,
    )?;
    let eta_basis = reduced.eta_basis();
    pushforward_measure(&xi_ref.0, reduced.d(), |xi| {
        let vals = eta_basis.eval_all(xi).expect("ξ rule nodes lie in the basis domain");
        reduced.eta_from_basis_values(&vals)
    })
}

/// State carried between outer iterations.
struct IterationState {
    temperature: ChaosExpansion,
    reduced: ReducedExpansion,
    flux: MixedExpansion,
    q: usize,
}

/// Full output of the spectral solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcRunResult {
    /// Final temperature expansion over (ξ, ζ).
    pub temperature: ChaosExpansion,
    /// Final flux expansion over (η, ζ).
    pub flux: MixedExpansion,
    /// Final reduction of the temperature.
    pub reduced: ReducedExpansion,
    /// Reduction of every outer iteration, in order.
    pub reduced_history: Vec<ReducedExpansion>,
    pub records: Vec<IterationRecord>,
    /// Pushforward sourcing of the final iteration (absent when d = 0).
    pub pushforward: Option<PushforwardDiagnostics>,
    /// Mixed-rule construction report of the final accepted flux projection
    /// (absent when d = 0, where the rule is a plain ζ tensor rule).
    pub mixed_report: Option<MixedRuleReport>,
    /// Whether the outer loop stopped on stagnation before exhausting its
    /// budget.
    pub stagnated: bool,
}

/// Runs the spectral Gauss-Seidel solver.
pub fn run_pc_solver(cfg: &ReactorConfig, settings: &SolverSettings) -> Result<PcRunResult> {
    cfg.validate()?;
    settings.validate()?;
    let mesh = cfg.mesh()?;
    let w = h1_gram(&mesh)?;
    let kl_h = kl_decompose(&cfg.h_spec, &mesh)?;
    let kl_s = kl_decompose(&cfg.sigma_spec, &mesh)?;
    let m = cfg.h_spec.n_terms;
    let n = cfg.sigma_spec.n_terms;
    let p = settings.p;
    let r = mesh.n_nodes();

    let heat_rule = smolyak_rule(m + n, settings.heat_rule_level(), GrowthRule::Exponential)?;
    let pair_enum = TotalDegreeBasis::new(m + n, p);
    let xi_ref = xi_reference_rule(
        &heat_rule,
        m,
        p,
        settings.q_cap + settings.mixed_rule_level_offset,
    )?;

    let mut prev: Option<IterationState> = None;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut reduced_history: Vec<ReducedExpansion> = Vec::new();
    let mut final_pushforward: Option<PushforwardDiagnostics> = None;
    let mut final_mixed_report: Option<MixedRuleReport> = None;
    let mut stagnation_run = 0usize;
    let mut stagnated = false;

    for ell in 1..=settings.max_outer_iters {
        let t_samples = heat_sweep(&heat_rule, prev.as_ref(), cfg, &mesh, &kl_h, m, r)
            .map_err(|e| iteration_context(e, ell))?;
        let t_coeffs = project_chaos(&t_samples, &heat_rule, &pair_enum)
            .map_err(|e| iteration_context(e, ell))?;
        drop(t_samples);
        let temperature = ChaosExpansion::from_coeffs(m, n, p, t_coeffs)?;
        let reduced = reduce(&temperature, &w, ModeSelector::Tolerance(settings.eps1))
            .map_err(|e| iteration_context(e, ell))?;

        let prev_q = prev.as_ref().map(|s| s.q);
        let flux_out = flux_stage(
            cfg, &mesh, &kl_s, &w, &reduced, &xi_ref.0, n, settings, prev_q,
        )
        .map_err(|e| iteration_context(e, ell))?;

        let t_update = match prev.as_ref() {
            Some(s) => expansion_update(&temperature, &s.temperature, &w),
            None => {
                let mut initial = ChaosExpansion::zeros(m, n, p, r);
                for v in initial.coeff_mut(0) {
                    *v = cfg.t_ref;
                }
                expansion_update(&temperature, &initial, &w)
            }
        };
        let phi_update = probe_flux_update(
            prev.as_ref().map(|s| (&s.reduced, &s.flux)),
            (&reduced, &flux_out.expansion),
            m,
            n,
            &w,
        )?;

        records.push(IterationRecord {
            ell,
            d: reduced.d(),
            q: flux_out.q,
            eigenvalues: reduced.eigenvalues.clone(),
            t_update,
            phi_update,
            heat_nodes: heat_rule.len(),
            neutronics_nodes: flux_out.rule_nodes,
        });
        reduced_history.push(reduced.clone());
        final_pushforward = flux_out.pushforward;
        final_mixed_report = flux_out.mixed_report;

        if t_update < STAGNATION_TOL {
            stagnation_run += 1;
        } else {
            stagnation_run = 0;
        }
        prev = Some(IterationState {
            temperature,
            reduced,
            flux: flux_out.expansion,
            q: flux_out.q,
        });
        if stagnation_run >= STAGNATION_RUN {
            stagnated = true;
            break;
        }
    }

    let last = prev.expect("at least one outer iteration ran");
    Ok(PcRunResult {
        temperature: last.temperature,
        flux: last.flux,
        reduced: last.reduced,
        reduced_history,
        records,
        pushforward: final_pushforward,
        mixed_report: final_mixed_report,
        stagnated,
    })
}

fn iteration_context(e: Error, ell: usize) -> Error {
    match e {
        Error::Singular(msg) => Error::Singular(format!("outer iteration {ell}: {msg}")),
        Error::Convergence(msg) => Error::Convergence(format!("outer iteration {ell}: {msg}")),
        Error::NonFinite(msg) => Error::NonFinite(format!("outer iteration {ell}: {msg}")),
        Error::Degenerate(msg) => Error::Degenerate(format!("outer iteration {ell}: {msg}")),
        other => other,
    }
}

/// Solves the heat subproblem at every node of the sparse rule, feeding the
/// previous iteration's surrogates as the coupled state.
fn heat_sweep(
    rule: &QuadratureRule,
    prev: Option<&IterationState>,
    cfg: &ReactorConfig,
    mesh: &FeMesh,
    kl_h: &KlDecomposition,
    xi_dim: usize,
    r: usize,
) -> Result<Vec<Vec<f64>>> {
    let prev_ctx = prev.map(|s| {
        (s.temperature.pair_basis(), s.reduced.eta_basis(), s.flux.eval_context())
    });
    let results: Vec<Result<Vec<f64>>> = rule
        .nodes()
        .par_iter()
        .enumerate()
        .map(|(k, node)| {
            let (xi, zeta) = node.split_at(xi_dim);
            let h_nodal = sample_field(&cfg.h_spec, kl_h, xi)?;
            let (t_prev, phi_prev) = match (prev, &prev_ctx) {
                (Some(s), Some((pair, eta_basis, flux_ctx))) => {
                    let pair_vals = pair.eval_all(node)?;
                    let t = s.temperature.evaluate_from_basis_values(&pair_vals);
                    let eta_vals = eta_basis.eval_all(xi)?;
                    let eta = s.reduced.eta_from_basis_values(&eta_vals);
                    let phi = s.flux.evaluate_with(flux_ctx, &eta, zeta)?;
                    (t, phi)
                }
                _ => (vec![cfg.t_ref; r], vec![0.0; r]),
            };
            let (a, b) = assemble_heat(mesh, cfg, &h_nodal, &t_prev, &phi_prev)?;
            solve_banded(&a, &b)
                .map_err(|e| Error::Singular(format!("heat sweep node {k}: {e}")))
        })
        .collect();
    results.into_iter().collect()
}

struct FluxStageOutput {
    expansion: MixedExpansion,
    q: usize,
    rule_nodes: usize,
    pushforward: Option<PushforwardDiagnostics>,
    mixed_report: Option<MixedRuleReport>,
}

/// Builds the measure-transformed flux expansion: pushforward measure of η,
/// orthonormal family, mixed projection rules, and the degree search that
/// stops at the first negligible coefficient shell.
#[allow(clippy::too_many_arguments)]
fn flux_stage(
    cfg: &ReactorConfig,
    mesh: &FeMesh,
    kl_s: &KlDecomposition,
    w: &WeightingMatrix,
    reduced: &ReducedExpansion,
    xi_rule: &QuadratureRule,
    zeta_dim: usize,
    settings: &SolverSettings,
    prev_q: Option<usize>,
) -> Result<FluxStageOutput> {
    let d = reduced.d();
    let offset = settings.mixed_rule_level_offset;

    let (measure, pushforward) = if d > 0 {
        let eta_basis = reduced.eta_basis();
        let measure = pushforward_measure(xi_rule, d, |xi| {
            let vals = eta_basis.eval_all(xi).expect("ξ rule nodes lie in the basis domain");
            reduced.eta_from_basis_values(&vals)
        })?;
        let diag = PushforwardDiagnostics {
            source: String::new(),
            fallback_level: None,
            rejected_negative_mass: None,
            source_nodes: xi_rule.len(),
            measure_atoms: measure.len(),
        };
        (Some(measure), Some(diag))
    } else {
        (None, None)
    };

    let ceiling = match (settings.warm_cap, prev_q) {
        (true, Some(pq)) => settings.q_cap.min(pq + 1),
        _ => settings.q_cap,
    };

    let mut last_ratio = f64::INFINITY;
    for q_trial in 1..=ceiling {
        let level = q_trial + offset;
        let (rule, report) = match &measure {
            Some(meas) => {
                let (rule, report) = mixed_sparse_rule(meas, zeta_dim, level)?;
                (rule, Some(report))
            }
            // With no reduced block the mixed construction degenerates to
            // the plain ζ tensor rule.
            None => (tensor_gauss_legendre(zeta_dim, level)?, None),
        };
        let family = match &measure {
            Some(meas) => Some(build_reduced_basis(meas, q_trial)?),
            None => None,
        };
        let samples = neutronics_sweep(&rule, reduced, cfg, mesh, kl_s, d)?;
        let joint = TotalDegreeBasis::new(d + zeta_dim, q_trial);
        let basis_matrix =
            mixed_basis_matrix(family.as_ref(), d, zeta_dim, q_trial, rule.nodes())?;
        let coeffs = nonintrusive_project(&samples, &rule, &basis_matrix)?;
        drop(samples);

        // Shell energies: W-norm² of the coefficients per total degree.
        let mut shells = vec![KahanSum::new(); q_trial + 1];
        for (idx, c) in joint.indices().iter().zip(&coeffs) {
            let deg: u32 = idx.iter().sum();
            shells[deg as usize].add(w.norm_sq(c));
        }
        let shells: Vec<f64> = shells.into_iter().map(|s| s.value().max(0.0)).collect();
        let cumulative: f64 = shells.iter().sum();
        let top = shells[q_trial];
        last_ratio = if cumulative > 0.0 { (top / cumulative).sqrt() } else { 0.0 };
        if top.sqrt() <= settings.eps2 * cumulative.sqrt() {
            // The top shell adds nothing: degree q_trial - 1 suffices.
            let q = q_trial - 1;
            let kept = TotalDegreeBasis::new(d + zeta_dim, q).len();
            let expansion = MixedExpansion::from_parts(
                d,
                zeta_dim,
                q,
                family,
                coeffs.into_iter().take(kept).collect(),
            )?;
            return Ok(FluxStageOutput {
                expansion,
                q,
                rule_nodes: rule.len(),
                pushforward,
                mixed_report: report,
            });
        }
        if q_trial == ceiling && ceiling < settings.q_cap {
            // Warm-capped search exhausted: accept the full projection and
            // let the ceiling climb next iteration.
            let expansion =
                MixedExpansion::from_parts(d, zeta_dim, q_trial, family, coeffs)?;
            return Ok(FluxStageOutput {
                expansion,
                q: q_trial,
                rule_nodes: rule.len(),
                pushforward,
                mixed_report: report,
            });
        }
    }
    Err(Error::Convergence(format!(
        "flux degree search exceeded its cap {}: top-shell ratio {last_ratio:.3e} \
         still above eps2 {:.3e}",
        settings.q_cap, settings.eps2
    )))
}

/// Values of every mixed basis member (family ⊗ Legendre) at the given
/// nodes, member-major.
fn mixed_basis_matrix(
    family: Option<&OrthonormalPolyFamily>,
    eta_dim: usize,
    zeta_dim: usize,
    degree: usize,
    nodes: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let joint = TotalDegreeBasis::new(eta_dim + zeta_dim, degree);
    let eta_enum = TotalDegreeBasis::new(eta_dim, degree);
    // Per-node values: family members at η, Legendre tables at ζ.
    let node_vals: Result<Vec<(Vec<f64>, Vec<f64>)>> = nodes
        .iter()
        .map(|node| {
            let (eta, zeta) = node.split_at(eta_dim);
            let fam = match family {
                Some(f) => f.eval_all(eta)?,
                None => vec![1.0],
            };
            let mut zl = Vec::with_capacity(zeta_dim * (degree + 1));
            for &z in zeta {
                zl.extend(legendre_eval(degree, z)?);
            }
            Ok((fam, zl))
        })
        .collect();
    let node_vals = node_vals?;
    let stride = degree + 1;
    Ok(joint
        .indices()
        .iter()
        .map(|idx| {
            let (gamma, beta) = idx.split_at(eta_dim);
            let gamma_pos = eta_enum
                .position_of(gamma)
                .expect("η prefix of a joint index lies in the η enumeration");
            node_vals
                .iter()
                .map(|(fam, zl)| {
                    let mut v = fam[gamma_pos];
                    for (dz, &k) in beta.iter().enumerate() {
                        if k > 0 {
                            v *= zl[dz * stride + k as usize];
                        }
                    }
                    v
                })
                .collect()
        })
        .collect())
}

/// Solves the neutronics subproblem at every mixed-rule node, with the
/// temperature supplied by its reduced expansion.
fn neutronics_sweep(
    rule: &QuadratureRule,
    reduced: &ReducedExpansion,
    cfg: &ReactorConfig,
    mesh: &FeMesh,
    kl_s: &KlDecomposition,
    eta_dim: usize,
) -> Result<Vec<Vec<f64>>> {
    let mean_basis = reduced.mean_basis();
    let vector_basis = reduced.vector_basis();
    let results: Vec<Result<Vec<f64>>> = rule
        .nodes()
        .par_iter()
        .enumerate()
        .map(|(k, node)| {
            let (eta, zeta) = node.split_at(eta_dim);
            let psi_mean = mean_basis.eval_all(zeta)?;
            let mut t_nodal = reduced.mean_field_from_basis_values(&psi_mean);
            if eta_dim > 0 {
                let psi_vec = vector_basis.eval_all(zeta)?;
                for j in 0..eta_dim {
                    let scale = reduced.eigenvalues[j].sqrt() * eta[j];
                    let mode = reduced.mode_field_from_basis_values(j, &psi_vec);
                    for (t, m) in t_nodal.iter_mut().zip(&mode) {
                        *t += scale * m;
                    }
                }
            }
            let sigma_nodal = sample_field(&cfg.sigma_spec, kl_s, zeta)?;
            solve_neutronics_once(mesh, cfg, &t_nodal, &sigma_nodal).map_err(|e| match e {
                Error::Singular(msg) => {
                    Error::Singular(format!("neutronics sweep node {k}: {msg}"))
                }
                other => other,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Relative W-distance between two expansions over the same basis,
/// coefficient space.
fn expansion_update(new: &ChaosExpansion, old: &ChaosExpansion, w: &WeightingMatrix) -> f64 {
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for k in 0..new.n_terms() {
        let a = new.coeff(k);
        let b = old.coeff(k);
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        num.add(w.norm_sq(&diff));
        den.add(w.norm_sq(a));
    }
    let num = num.value().max(0.0).sqrt();
    let den = den.value().max(0.0).sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Probe-sample estimate of the relative distance between the flux
/// surrogates of successive iterations (their reduced bases differ, so the
/// comparison happens pointwise at shared draws).
fn probe_flux_update(
    prev: Option<(&ReducedExpansion, &MixedExpansion)>,
    cur: (&ReducedExpansion, &MixedExpansion),
    xi_dim: usize,
    zeta_dim: usize,
    w: &WeightingMatrix,
) -> Result<f64> {
    let (cur_red, cur_flux) = cur;
    let cur_eta_basis = cur_red.eta_basis();
    let cur_ctx = cur_flux.eval_context();
    let prev_ctx = prev.map(|(r, f)| (r.eta_basis(), f.eval_context(), r, f));
    let mut rng = ChaCha12Rng::seed_from_u64(PROBE_SEED);
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for _ in 0..PROBE_SAMPLES {
        let xi: Vec<f64> = (0..xi_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zeta: Vec<f64> = (0..zeta_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta_vals = cur_eta_basis.eval_all(&xi)?;
        let eta = cur_red.eta_from_basis_values(&eta_vals);
        let cur_val = cur_flux.evaluate_with(&cur_ctx, &eta, &zeta)?;
        let prev_val = match &prev_ctx {
            Some((basis, ctx, red, flux)) => {
                let vals = basis.eval_all(&xi)?;
                let eta_prev = red.eta_from_basis_values(&vals);
                flux.evaluate_with(ctx, &eta_prev, &zeta)?
            }
            None => vec![0.0; cur_val.len()],
        };
        let diff: Vec<f64> = cur_val.iter().zip(&prev_val).map(|(a, b)| a - b).collect();
        num.add(w.norm_sq(&diff));
        den.add(w.norm_sq(&cur_val));
    }
    let num = num.value().max(0.0).sqrt();
    let den = den.value().max(0.0).sqrt();
    Ok(if den == 0.0 { num } else { num / den })
}

/// One successful Monte Carlo sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSample {
    pub index: usize,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub temperature: Vec<f64>,
    pub flux: Vec<f64>,
}

/// A sample whose coupled solve failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McFailure {
    pub index: usize,
    pub message: String,
}

/// Monte Carlo sample store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McStore {
    pub n_requested: usize,
    pub samples: Vec<McSample>,
    pub failures: Vec<McFailure>,
}

/// Mean/variance summaries over the successful samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub n_samples: usize,
    pub n_failures: usize,
    pub mean_temperature: Vec<f64>,
    pub var_temperature: Vec<f64>,
    pub mean_flux: Vec<f64>,
    pub var_flux: Vec<f64>,
}

impl McStore {
    /// Two-pass mean and (unbiased) variance fields over the successes.
    pub fn summary(&self) -> Result<McSummary> {
        let n = self.samples.len();
        if n == 0 {
            return Err(Error::Degenerate(
                "no successful Monte Carlo samples to summarize".into(),
            ));
        }
        let r = self.samples[0].temperature.len();
        let mean = |get: &dyn Fn(&McSample) -> &[f64]| -> Vec<f64> {
            let mut acc = vec![KahanSum::new(); r];
            for s in &self.samples {
                for (a, &v) in acc.iter_mut().zip(get(s)) {
                    a.add(v);
                }
            }
            acc.into_iter().map(|a| a.value() / n as f64).collect()
        };
        let var = |get: &dyn Fn(&McSample) -> &[f64], mean: &[f64]| -> Vec<f64> {
            if n < 2 {
                return vec![0.0; r];
            }
            let mut acc = vec![KahanSum::new(); r];
            for s in &self.samples {
                for ((a, &v), &mu) in acc.iter_mut().zip(get(s)).zip(mean) {
                    let dv = v - mu;
                    a.add(dv * dv);
                }
            }
            acc.into_iter().map(|a| a.value() / (n - 1) as f64).collect()
        };
        let get_t: &dyn Fn(&McSample) -> &[f64] = &|s| &s.temperature;
        let get_p: &dyn Fn(&McSample) -> &[f64] = &|s| &s.flux;
        let mean_t = mean(get_t);
        let mean_p = mean(get_p);
        let var_t = var(get_t, &mean_t);
        let var_p = var(get_p, &mean_p);
        Ok(McSummary {
            n_samples: n,
            n_failures: self.failures.len(),
            mean_temperature: mean_t,
            var_temperature: var_t,
            mean_flux: mean_p,
            var_flux: var_p,
        })
    }
}

/// Draws the (ξ, ζ) pair of Monte Carlo sample `index` under `seed`.
///
/// Every sample owns an RNG stream derived from (seed, index), so the draw
/// is independent of evaluation order and thread count.
pub fn mc_draw(
    seed: u64,
    index: usize,
    xi_dim: usize,
    zeta_dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let xi = (0..xi_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let zeta = (0..zeta_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (xi, zeta)
}

/// Runs the Monte Carlo reference: independent coupled solves at uniform
/// draws. Per-sample failures are recorded and the run continues.
pub fn run_monte_carlo(
    cfg: &ReactorConfig,
    n_samples: usize,
    n_iter: usize,
    seed: u64,
) -> Result<McStore> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("monte carlo needs at least 1 sample".into()));
    }
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let w = h1_gram(&mesh)?;
    let kl_h = kl_decompose(&cfg.h_spec, &mesh)?;
    let kl_s = kl_decompose(&cfg.sigma_spec, &mesh)?;
    let m = cfg.h_spec.n_terms;
    let n = cfg.sigma_spec.n_terms;
    let results: Vec<std::result::Result<McSample, McFailure>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let (xi, zeta) = mc_draw(seed, i, m, n);
            match solve_coupled(cfg, &mesh, &kl_h, &kl_s, &xi, &zeta, n_iter, &w) {
                Ok(sol) => Ok(McSample {
                    index: i,
                    xi,
                    zeta,
                    temperature: sol.temperature,
                    flux: sol.flux,
                }),
                Err(e) => Err(McFailure { index: i, message: e.to_string() }),
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(n_samples);
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(f) => failures.push(f),
        }
    }
    Ok(McStore { n_requested: n_samples, samples, failures })
}

/// Shares of the total variance carried by each input block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceFractions {
    /// Terms indexed only by the first block (ξ for the temperature, η for
    /// the flux).
    pub xi_only: f64,
    /// Terms indexed only by ζ.
    pub zeta_only: f64,
    /// Terms indexed by both blocks.
    pub mixed: f64,
}

/// Splits the variance of both expansions over the three index groups.
pub fn variance_decomposition(
    temperature: &ChaosExpansion,
    flux: &MixedExpansion,
    w: &WeightingMatrix,
) -> Result<(VarianceFractions, VarianceFractions)> {
    let t_enum = temperature.pair_basis();
    let t_frac = group_fractions(
        t_enum.indices(),
        temperature.xi_dim(),
        (0..t_enum.len()).map(|k| temperature.coeff(k)),
        w,
        "temperature",
    )?;
    let p_enum = flux.joint_basis();
    let p_frac = group_fractions(
        p_enum.indices(),
        flux.eta_dim(),
        (0..p_enum.len()).map(|k| flux.coeff(k)),
        w,
        "flux",
    )?;
    Ok((t_frac, p_frac))
}

fn group_fractions<'a>(
    indices: &[Vec<u32>],
    first_dim: usize,
    coeffs: impl Iterator<Item = &'a [f64]>,
    w: &WeightingMatrix,
    what: &str,
) -> Result<VarianceFractions> {
    let mut sums = [KahanSum::new(), KahanSum::new(), KahanSum::new()];
    for (idx, c) in indices.iter().zip(coeffs) {
        let (a, b) = idx.split_at(first_dim);
        let a_on = a.iter().any(|&k| k > 0);
        let b_on = b.iter().any(|&k| k > 0);
        let slot = match (a_on, b_on) {
            (false, false) => continue, // the mean carries no variance
            (true, false) => 0,
            (false, true) => 1,
            (true, true) => 2,
        };
        sums[slot].add(w.norm_sq(c));
    }
    let parts: Vec<f64> = sums.iter().map(|s| s.value().max(0.0)).collect();
    let total: f64 = parts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(format!(
            "{what} expansion has zero total variance: fractions undefined"
        )));
    }
    Ok(VarianceFractions {
        xi_only: parts[0] / total,
        zeta_only: parts[1] / total,
        mixed: parts[2] / total,
    })
}

/// Relative mean-square W-distances between the Monte Carlo samples and the
/// spectral surrogates at the same draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossCompareReport {
    pub t_distance: f64,
    pub phi_distance: f64,
    /// Number of shared draws entering the metric.
    pub n_used: usize,
}

/// Evaluates the surrogates at the stored Monte Carlo draws and forms the
/// relative mean-square W-distance for both fields.
pub fn cross_compare(
    store: &McStore,
    result: &PcRunResult,
    w: &WeightingMatrix,
    n_common: usize,
) -> Result<CrossCompareReport> {
    let used: Vec<&McSample> = store.samples.iter().take(n_common).collect();
    if used.is_empty() {
        return Err(Error::Degenerate(
            "no shared samples available for cross comparison".into(),
        ));
    }
    let pair = result.temperature.pair_basis();
    let eta_basis = result.reduced.eta_basis();
    let flux_ctx = result.flux.eval_context();
    let mut t_num = KahanSum::new();
    let mut t_den = KahanSum::new();
    let mut p_num = KahanSum::new();
    let mut p_den = KahanSum::new();
    for s in &used {
        let point: Vec<f64> = s.xi.iter().chain(&s.zeta).copied().collect();
        let pair_vals = pair.eval_all(&point)?;
        let t_hat = result.temperature.evaluate_from_basis_values(&pair_vals);
        let eta_vals = eta_basis.eval_all(&s.xi)?;
        let eta = result.reduced.eta_from_basis_values(&eta_vals);
        let p_hat = result.flux.evaluate_with(&flux_ctx, &eta, &s.zeta)?;
        let dt: Vec<f64> = s.temperature.iter().zip(&t_hat).map(|(a, b)| a - b).collect();
        let dp: Vec<f64> = s.flux.iter().zip(&p_hat).map(|(a, b)| a - b).collect();
        t_num.add(w.norm_sq(&dt));
        t_den.add(w.norm_sq(&s.temperature));
        p_num.add(w.norm_sq(&dp));
        p_den.add(w.norm_sq(&s.flux));
    }
    let ratio = |num: KahanSum, den: KahanSum| -> f64 {
        let n = num.value().max(0.0).sqrt();
        let d = den.value().max(0.0).sqrt();
        if d == 0.0 {
            n
        } else {
            n / d
        }
    };
    Ok(CrossCompareReport {
        t_distance: ratio(t_num, t_den),
        phi_distance: ratio(p_num, p_den),
        n_used: used.len(),
    })
}
