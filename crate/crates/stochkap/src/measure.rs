//! Discrete measures induced by mapping quadrature rules through nonlinear
//! transformations, orthonormal polynomial families adapted to such
//! measures, and small embedded rules that match their moments.
//!
//! This is the machinery that lets a downstream computation integrate
//! against reduced input variables whose distribution is only known through
//! samples: push a positive rule through the map, orthonormalize monomials
//! against the resulting atom cloud, then select a few atoms that reproduce
//! the moments.

use serde::{Deserialize, Serialize};

use crate::basis::{enumerate_total_degree, gram_schmidt_orthonormalize, OrthonormalPolyFamily};
use crate::error::{Error, Result};
use crate::linalg::{nnls, DMat, SymMatrix};
use crate::quadrature::{merge_nodes, tensor_gauss_legendre, QuadratureRule};
use crate::util::KahanSum;

/// Tolerance on the total mass deviation from one.
pub const MASS_TOL: f64 = 1e-12;
/// Max-norm tolerance for merging atoms that land on the same point.
pub const ATOM_MERGE_TOL: f64 = 1e-10;
/// Moment-matching residual below which an embedded rule is accepted.
pub const EMBED_RESIDUAL_TOL: f64 = 1e-9;

/// Probability measure supported on finitely many atoms with strictly
/// positive masses summing to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dimension: usize,
    atoms: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dimension: usize, atoms: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("measure of dimension 0".into()));
        }
        if atoms.is_empty() || atoms.len() != masses.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} atoms vs {} masses",
                atoms.len(),
                masses.len()
            )));
        }
        for a in &atoms {
            if a.len() != dimension {
                return Err(Error::DimensionMismatch(format!(
                    "atom of dim {} in measure of dim {dimension}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("measure atom".into()));
            }
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "measure masses must be strictly positive and finite".into(),
            ));
        }
        let mut acc = KahanSum::new();
        for &m in &masses {
            acc.add(m);
        }
        let total = acc.value();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "measure masses sum to {total}, expected 1 within {MASS_TOL:e}"
            )));
        }
        // Normalize exactly so moment matching can target clean values.
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(Self { dimension, atoms, masses })
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    #[inline]
    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![KahanSum::new(); self.dimension];
        for (a, &m) in self.atoms.iter().zip(&self.masses) {
            for (s, &x) in acc.iter_mut().zip(a) {
                s.add(m * x);
            }
        }
        acc.iter().map(KahanSum::value).collect()
    }

    /// Raw moment E[x^k] for a multi-exponent k.
    pub fn moment(&self, exponents: &[u32]) -> Result<f64> {
        if exponents.len() != self.dimension {
            return Err(Error::DimensionMismatch(format!(
                "exponent of dim {} for measure of dim {}",
                exponents.len(),
                self.dimension
            )));
        }
        let mut acc = KahanSum::new();
        for (a, &m) in self.atoms.iter().zip(&self.masses) {
            let mut v = m;
            for (&x, &k) in a.iter().zip(exponents) {
                if k > 0 {
                    v *= x.powi(k as i32);
                }
            }
            acc.add(v);
        }
        Ok(acc.value())
    }

    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = KahanSum::new();
        for (a, &m) in self.atoms.iter().zip(&self.masses) {
            acc.add(m * f(a));
        }
        acc.value()
    }
}

/// Pushes a positive-weight quadrature rule through a map, merging images
/// that coincide. Signed rules are rejected: their weights cannot act as
/// probability masses, so callers must supply a tensor rule or a filtered
/// rule with nonpositive-weight nodes removed.
pub fn pushforward_measure(
    rule: &QuadratureRule,
    out_dim: usize,
    mut map: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<DiscreteMeasure> {
    if !rule.is_positive() {
        return Err(Error::NegativeWeights(format!(
            "pushforward source rule has min weight {:.6e}",
            rule.min_weight()
        )));
    }
    if out_dim == 0 {
        return Err(Error::InvalidArgument("pushforward to dimension 0".into()));
    }
    let mut images = Vec::with_capacity(rule.len());
    for node in rule.nodes() {
        let y = map(node);
        if y.len() != out_dim {
            return Err(Error::DimensionMismatch(format!(
                "map produced dim {} instead of {out_dim}",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pushforward image".into()));
        }
        images.push(y);
    }
    let (atoms, masses) = merge_nodes(images, rule.weights().to_vec(), ATOM_MERGE_TOL);
    DiscreteMeasure::new(out_dim, atoms, masses)
}

/// Orthonormalizes the graded monomials of the measure's dimension against
/// the measure, up to `degree`. The Gram matrix of the monomials is formed
/// once; the Gram-Schmidt sweep then works purely on coefficient vectors.
pub fn build_reduced_basis(
    measure: &DiscreteMeasure,
    degree: usize,
) -> Result<OrthonormalPolyFamily> {
    let dim = measure.dimension();
    let monomials = enumerate_total_degree(dim, degree);
    let nm = monomials.len();
    // Gram over the monomial products needs powers up to 2·degree.
    let mut gram = vec![KahanSum::new(); nm * nm];
    let mut pows = vec![vec![1.0f64; 2 * degree + 1]; dim];
    let mut vals = vec![0.0f64; nm];
    for (atom, &mass) in measure.atoms().iter().zip(measure.masses()) {
        for (d, &x) in atom.iter().enumerate() {
            for k in 1..=2 * degree {
                pows[d][k] = pows[d][k - 1] * x;
            }
        }
        for (v, mono) in vals.iter_mut().zip(&monomials) {
            let mut m = 1.0;
            for (d, &k) in mono.iter().enumerate() {
                if k > 0 {
                    m *= pows[d][k as usize];
                }
            }
            *v = m;
        }
        for j in 0..nm {
            let mj = mass * vals[j];
            for k in j..nm {
                gram[j * nm + k].add(mj * vals[k]);
            }
        }
    }
    let mut g = vec![0.0; nm * nm];
    for j in 0..nm {
        for k in j..nm {
            let v = gram[j * nm + k].value();
            g[j * nm + k] = v;
            g[k * nm + j] = v;
        }
    }
    let g = SymMatrix::new(nm, g)?;
    let mut inner = |a: &[f64], b: &[f64]| -> f64 {
        let gb = g.mul_vec(b);
        a.iter().zip(&gb).map(|(x, y)| x * y).sum()
    };
    gram_schmidt_orthonormalize(dim, degree, &mut inner)
}

/// How an embedded rule's nodes were found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionOutcome {
    /// Level-1 shortcut: a parent atom sits at the mean.
    MeanAtom,
    /// Nonnegative solve restricted to greedily selected candidate atoms.
    SubsetNonnegative,
    /// Nonnegative solve over every parent atom.
    FullNonnegative,
    /// Signed least-squares weights on the selected atoms.
    SubsetSigned,
    /// Gave up selecting: the full parent measure is its own rule.
    FullParent,
}

/// Diagnostics from embedded rule construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddedRuleReport {
    pub level: usize,
    pub matched_degree: usize,
    pub n_candidates: usize,
    pub n_nodes: usize,
    pub outcome: SelectionOutcome,
    pub residual: f64,
}

/// Builds a small rule supported on the measure's atoms that reproduces its
/// moments up to degree 2·level-1.
///
/// Matching is posed against the measure-orthonormal family, so the target
/// vector is the first unit vector and the system is well conditioned even
/// when raw moments span many scales. A cascade of attempts is used:
/// nonnegative weights on a pivoted-QR subset of atoms, nonnegative weights
/// over all atoms, signed weights on the subset, and finally the parent
/// measure itself, accepting the first with residual below
/// [`EMBED_RESIDUAL_TOL`].
pub fn embed_rule(
    measure: &DiscreteMeasure,
    level: usize,
) -> Result<(QuadratureRule, EmbeddedRuleReport)> {
    if level == 0 {
        return Err(Error::InvalidArgument("embedded rule level must be at least 1".into()));
    }
    let degree = 2 * level - 1;
    let dim = measure.dimension();
    let n_atoms = measure.len();

    if level == 1 {
        // A single atom at the mean matches degree-1 moments with weight 1.
        let mean = measure.mean();
        let scale = 1.0 + mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let nearest = measure
            .atoms()
            .iter()
            .position(|a| a.iter().zip(&mean).all(|(x, y)| (x - y).abs() <= 1e-12 * scale));
        if let Some(i) = nearest {
            let rule = QuadratureRule::new(dim, vec![measure.atoms()[i].clone()], vec![1.0])?;
            let report = EmbeddedRuleReport {
                level,
                matched_degree: degree,
                n_candidates: n_atoms,
                n_nodes: 1,
                outcome: SelectionOutcome::MeanAtom,
                residual: 0.0,
            };
            return Ok((rule, report));
        }
    }

    let family = build_reduced_basis(measure, degree)?;
    let nm = family.len();
    // Candidate matrix: member values at every atom, one column per atom.
    let mut design = DMat::zeros(nm, n_atoms);
    for (j, atom) in measure.atoms().iter().enumerate() {
        let col = family.eval_all(atom)?;
        for (i, v) in col.into_iter().enumerate() {
            design.set(i, j, v);
        }
    }
    // Orthonormality of the family against the parent measure makes the
    // target E[Γ_k] = δ_{k0}.
    let mut target = vec![0.0; nm];
    target[0] = 1.0;

    let subset = pivoted_columns(&design, nm.min(n_atoms));
    let sub_design = extract_columns(&design, &subset);

    let finish = |cols: &[usize],
                  weights: Vec<f64>,
                  outcome: SelectionOutcome,
                  residual: f64|
     -> Result<(QuadratureRule, EmbeddedRuleReport)> {
        let mut nodes = Vec::new();
        let mut kept = Vec::new();
        for (&c, &w) in cols.iter().zip(&weights) {
            if w != 0.0 {
                nodes.push(measure.atoms()[c].clone());
                kept.push(w);
            }
        }
        let n_nodes = nodes.len();
        let rule = QuadratureRule::new(dim, nodes, kept)?;
        Ok((
            rule,
            EmbeddedRuleReport {
                level,
                matched_degree: degree,
                n_candidates: n_atoms,
                n_nodes,
                outcome,
                residual,
            },
        ))
    };

    if let Ok((x, res)) = nnls(&sub_design, &target, 30 * nm.max(8)) {
        if res < EMBED_RESIDUAL_TOL {
            return finish(&subset, x, SelectionOutcome::SubsetNonnegative, res);
        }
    }
    if let Ok((x, res)) = nnls(&design, &target, 30 * nm.max(8)) {
        if res < EMBED_RESIDUAL_TOL {
            let all: Vec<usize> = (0..n_atoms).collect();
            return finish(&all, x, SelectionOutcome::FullNonnegative, res);
        }
    }
    if let Some((x, res)) = signed_least_squares(&sub_design, &target) {
        if res < EMBED_RESIDUAL_TOL {
            return finish(&subset, x, SelectionOutcome::SubsetSigned, res);
        }
    }
    // The parent reproduces its own moments by definition.
    let all: Vec<usize> = (0..n_atoms).collect();
    let res = residual_norm(&design, measure.masses(), &target);
    finish(&all, measure.masses().to_vec(), SelectionOutcome::FullParent, res)
}

/// Greedy column selection: repeatedly picks the column with the largest
/// remaining norm after projecting out previously chosen directions. Ties
/// break toward the lower index, keeping the choice deterministic.
fn pivoted_columns(a: &DMat, count: usize) -> Vec<usize> {
    let (m, n) = (a.n_rows(), a.n_cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut chosen = Vec::with_capacity(count);
    let mut used = vec![false; n];
    for _ in 0..count.min(n) {
        let mut best = usize::MAX;
        let mut best_norm = 0.0;
        for (j, c) in cols.iter().enumerate() {
            if used[j] {
                continue;
            }
            let norm: f64 = c.iter().map(|v| v * v).sum();
            if norm > best_norm {
                best_norm = norm;
                best = j;
            }
        }
        if best == usize::MAX || best_norm <= 1e-28 {
            break;
        }
        used[best] = true;
        let mut q = cols[best].clone();
        let norm = best_norm.sqrt();
        for v in q.iter_mut() {
            *v /= norm;
        }
        for (j, c) in cols.iter_mut().enumerate() {
            if used[j] {
                continue;
            }
            let r: f64 = q.iter().zip(c.iter()).map(|(x, y)| x * y).sum();
            for (ci, qi) in c.iter_mut().zip(&q) {
                *ci -= r * qi;
            }
        }
        chosen.push(best);
        if chosen.len() >= m {
            // More columns than rows cannot add rank.
        }
    }
    chosen.sort_unstable();
    chosen
}

fn extract_columns(a: &DMat, cols: &[usize]) -> DMat {
    let m = a.n_rows();
    let mut out = DMat::zeros(m, cols.len());
    for (jj, &j) in cols.iter().enumerate() {
        for i in 0..m {
            out.set(i, jj, a.get(i, j));
        }
    }
    out
}

fn residual_norm(a: &DMat, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    ax.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Minimum-norm-ish signed solve via normal equations with a small ridge;
/// good enough as a fallback when nonnegative weights cannot reach the
/// residual target.
fn signed_least_squares(a: &DMat, b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = a.n_cols();
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    for i in 0..n {
        let ci = a.column(i);
        atb[i] = ci.iter().zip(b).map(|(x, y)| x * y).sum();
        for j in i..n {
            let cj = a.column(j);
            let dot: f64 = ci.iter().zip(&cj).map(|(x, y)| x * y).sum();
            ata[i * n + j] = dot;
            ata[j * n + i] = dot;
        }
    }
    let scale = (0..n).map(|i| ata[i * n + i]).fold(0.0f64, f64::max);
    for i in 0..n {
        ata[i * n + i] += 1e-14 * scale.max(1e-300);
    }
    let sym = SymMatrix::new(n, ata).ok()?;
    let chol = crate::linalg::cholesky(&sym).ok()?;
    let x = chol.solve(&atb);
    let res = residual_norm(a, &x, b);
    Some((x, res))
}

/// Diagnostics from mixed rule construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedRuleReport {
    pub level: usize,
    pub embedded: Vec<EmbeddedRuleReport>,
    /// Node count summed over tensor terms before merging.
    pub raw_nodes: usize,
    pub merged_nodes: usize,
}

/// Sparse rule over the product of a reduced-variable measure and a uniform
/// block, built by a two-block combination with slow (linear) growth:
/// levels (k, l) with k + l in {level, level + 1} contribute
/// (-1)^(level+1-k-l) embedded_rule(k) ⊗ tensor_gauss(l). Weights are
/// signed by construction and kept signed; the rule is meant for
/// projections, not as a probability measure.
pub fn mixed_sparse_rule(
    measure: &DiscreteMeasure,
    zeta_dim: usize,
    level: usize,
) -> Result<(QuadratureRule, MixedRuleReport)> {
    if level == 0 {
        return Err(Error::InvalidArgument("mixed rule level must be at least 1".into()));
    }
    if zeta_dim == 0 {
        return Err(Error::InvalidArgument(
            "mixed rule needs a nonempty uniform block".into(),
        ));
    }
    let d = measure.dimension();
    let mut eta_rules: Vec<Option<(QuadratureRule, EmbeddedRuleReport)>> =
        (0..=level).map(|_| None).collect();
    let mut nodes: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut raw_nodes = 0usize;
    for total in level..=level + 1 {
        let sign = if (level + 1 - total) % 2 == 0 { 1.0 } else { -1.0 };
        for k in 1..total {
            let l = total - k;
            if eta_rules[k].is_none() {
                eta_rules[k] = Some(embed_rule(measure, k)?);
            }
            let (eta_rule, _) = eta_rules[k].as_ref().unwrap();
            let zeta_rule = tensor_gauss_legendre(zeta_dim, l)?;
            raw_nodes += eta_rule.len() * zeta_rule.len();
            for (en, &ew) in eta_rule.nodes().iter().zip(eta_rule.weights()) {
                for (zn, &zw) in zeta_rule.nodes().iter().zip(zeta_rule.weights()) {
                    let mut node = Vec::with_capacity(d + zeta_dim);
                    node.extend_from_slice(en);
                    node.extend_from_slice(zn);
                    nodes.push(node);
                    weights.push(sign * ew * zw);
                }
            }
        }
    }
    let (nodes, weights) = merge_nodes(nodes, weights, crate::quadrature::MERGE_TOL);
    let rule = QuadratureRule::new(d + zeta_dim, nodes, weights)?;
    let embedded: Vec<EmbeddedRuleReport> =
        eta_rules.into_iter().flatten().map(|(_, rep)| rep).collect();
    let merged_nodes = rule.len();
    Ok((rule, MixedRuleReport { level, embedded, raw_nodes, merged_nodes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::legendre_eval;
    use crate::quadrature::{gauss_legendre, smolyak_rule, uniform_monomial_moment, GrowthRule};

    fn uniform_square_measure(level: usize) -> DiscreteMeasure {
        let rule = tensor_gauss_legendre(2, level).unwrap();
        pushforward_measure(&rule, 2, |x| x.to_vec()).unwrap()
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(1, vec![vec![0.0]], vec![1.0]).is_ok());
        assert!(DiscreteMeasure::new(1, vec![vec![0.0]], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.0]).is_err());
        assert!(DiscreteMeasure::new(2, vec![vec![0.0]], vec![1.0]).is_err());
    }

    #[test]
    fn pushforward_rejects_signed_rules() {
        let sparse = smolyak_rule(2, 3, GrowthRule::Exponential).unwrap();
        assert!(sparse.min_weight() < 0.0, "test premise: rule must be signed");
        let err = pushforward_measure(&sparse, 2, |x| x.to_vec()).unwrap_err();
        assert!(matches!(err, Error::NegativeWeights(_)), "{err}");
    }

    #[test]
    fn pushforward_merges_collapsed_images() {
        // Summing the coordinates of a symmetric grid makes (a,b) and (b,a)
        // collide; the merged measure must still have unit mass and the
        // right first moments.
        let rule = tensor_gauss_legendre(2, 3).unwrap();
        let m = pushforward_measure(&rule, 1, |x| vec![x[0] + x[1]]).unwrap();
        assert!(m.len() < 9, "got {} atoms", m.len());
        let total: f64 = m.masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(m.moment(&[1]).unwrap().abs() < 1e-15);
        // E[(x+y)^2] = 2/3 under the uniform square.
        assert!((m.moment(&[2]).unwrap() - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn reduced_basis_recovers_legendre_for_uniform_measure() {
        // A 6-point Gauss grid reproduces uniform moments to degree 11, so
        // orthonormalizing monomials of degree <= 4 against it must give
        // the normalized Legendre family.
        let rule = gauss_legendre(6).unwrap();
        let m = pushforward_measure(&rule, 1, |x| x.to_vec()).unwrap();
        let family = build_reduced_basis(&m, 4).unwrap();
        for &x in &[-0.9, -0.3, 0.2, 0.77] {
            let got = family.eval_all(&[x]).unwrap();
            let want = legendre_eval(4, x).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g.abs() - w.abs()).abs() < 1e-10, "{got:?} vs {want:?}");
            }
        }
        // And orthonormality holds against the measure itself.
        for j in 0..family.len() {
            for k in j..family.len() {
                let dot = m.expectation(|x| {
                    family.eval_member(j, x).unwrap() * family.eval_member(k, x).unwrap()
                });
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "({j},{k}): {dot}");
            }
        }
    }

    #[test]
    fn embedded_rule_matches_moments() {
        // Matching degree 2·level-1 needs at least 2·level distinct values
        // per coordinate in the parent support, hence the 6-point grid.
        let m = uniform_square_measure(6);
        assert_eq!(m.len(), 36);
        for level in 1..=3usize {
            let (rule, report) = embed_rule(&m, level).unwrap();
            let degree = 2 * level - 1;
            assert_eq!(report.matched_degree, degree);
            assert!(report.residual < EMBED_RESIDUAL_TOL, "level {level}: {report:?}");
            // Node count at most the matched polynomial space dimension
            // unless selection fell back to the parent.
            let space = enumerate_total_degree(2, degree).len();
            if report.outcome != SelectionOutcome::FullParent {
                assert!(
                    rule.len() <= space,
                    "level {level}: {} nodes for space {space}",
                    rule.len()
                );
            }
            for expo in enumerate_total_degree(2, degree) {
                let mut acc = 0.0;
                for (node, &w) in rule.nodes().iter().zip(rule.weights()) {
                    let mut v = w;
                    for (&x, &k) in node.iter().zip(&expo) {
                        v *= x.powi(k as i32);
                    }
                    acc += v;
                }
                let want = m.moment(&expo).unwrap();
                assert!(
                    (acc - want).abs() < 1e-8,
                    "level {level} moment {expo:?}: {acc} vs {want}"
                );
            }
            // Embedded: every node is a parent atom.
            for node in rule.nodes() {
                assert!(m
                    .atoms()
                    .iter()
                    .any(|a| a.iter().zip(node).all(|(x, y)| (x - y).abs() < 1e-13)));
            }
        }
    }

    #[test]
    fn level_one_uses_mean_atom_when_present() {
        // An odd tensor grid contains the origin, which is the mean.
        let m = uniform_square_measure(3);
        let (rule, report) = embed_rule(&m, 1).unwrap();
        assert_eq!(report.outcome, SelectionOutcome::MeanAtom);
        assert_eq!(rule.len(), 1);
        assert_eq!(rule.weights()[0], 1.0);
        assert!(rule.nodes()[0].iter().all(|&v| v.abs() < 1e-15));

        // An even grid has no atom at the mean; selection still matches
        // degree-1 moments.
        let m2 = uniform_square_measure(2);
        let (rule2, report2) = embed_rule(&m2, 1).unwrap();
        assert_ne!(report2.outcome, SelectionOutcome::MeanAtom);
        let mut mx = 0.0;
        let mut total = 0.0;
        for (node, &w) in rule2.nodes().iter().zip(rule2.weights()) {
            mx += w * node[0];
            total += w;
        }
        assert!((total - 1.0).abs() < 1e-10);
        assert!(mx.abs() < 1e-10);
    }

    #[test]
    fn mixed_rule_block_exactness() {
        // Exact for eta-degree <= 2k-1 times zeta-degree <= 2l-1 whenever
        // (k, l) is inside the combination index set.
        let m = uniform_square_measure(4);
        let zeta_dim = 2;
        let level = 2;
        let (rule, report) = mixed_sparse_rule(&m, zeta_dim, level).unwrap();
        assert_eq!(rule.dimension(), 4);
        assert!((rule.weight_sum() - 1.0).abs() < 1e-10);
        assert!(report.raw_nodes >= report.merged_nodes);
        let admissible = |k: usize, l: usize| k >= 1 && l >= 1 && k + l <= level + 1;
        for eta_deg in 0..=3u32 {
            for zeta_deg in 0..=3u32 {
                // A level-k rule is exact to degree 2k-1, so degree g
                // needs level ceil((g+1)/2).
                let needs_k = (eta_deg as usize + 1).div_ceil(2).max(1);
                let needs_l = (zeta_deg as usize + 1).div_ceil(2).max(1);
                if !admissible(needs_k, needs_l) {
                    continue;
                }
                // Monomial eta_0^a * zeta_0^b * zeta_1^b2 with split degrees.
                let expo_eta = [eta_deg, 0];
                let b1 = zeta_deg / 2;
                let b2 = zeta_deg - b1;
                let mut acc = KahanSum::new();
                for (node, &w) in rule.nodes().iter().zip(rule.weights()) {
                    let v = w
                        * node[0].powi(expo_eta[0] as i32)
                        * node[2].powi(b1 as i32)
                        * node[3].powi(b2 as i32);
                    acc.add(v);
                }
                let want = m.moment(&expo_eta).unwrap()
                    * uniform_monomial_moment(&[b1])
                    * uniform_monomial_moment(&[b2]);
                assert!(
                    (acc.value() - want).abs() < 1e-8,
                    "eta {eta_deg} zeta ({b1},{b2}): {} vs {want}",
                    acc.value()
                );
            }
        }
    }

    #[test]
    fn mixed_rule_level_one_is_single_tensor_term() {
        let m = uniform_square_measure(3);
        let (rule, report) = mixed_sparse_rule(&m, 1, 1).unwrap();
        // Only (k,l) = (1,1): mean atom times the midpoint rule.
        assert_eq!(rule.len(), 1);
        assert_eq!(report.embedded.len(), 1);
        assert!((rule.weights()[0] - 1.0).abs() < 1e-14);
    }
}
