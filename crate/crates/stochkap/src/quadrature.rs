//! Quadrature rules for the uniform probability measure on [-1, 1]^n.
//!
//! Univariate Gauss-Legendre rules come from the Golub-Welsch eigenvalue
//! problem of the three-term recurrence. Multivariate rules are either full
//! tensor products or sparse-grid combinations; sparse combination weights
//! are signed and are kept signed. Node lists are always merged with an
//! exact-duplicate tolerance so that shared points (the origin, mirrored
//! pairs) appear once.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, SymMatrix};
use crate::util::{binomial, KahanSum};

/// Max-norm tolerance under which two nodes are considered the same point.
pub const MERGE_TOL: f64 = 1e-12;

/// Multidimensional quadrature rule. Weights may be signed (sparse-grid
/// combination rules); they always sum to one.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QuadratureRule {
    dimension: usize,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(dimension: usize, nodes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("quadrature rule of dimension 0".into()));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("quadrature rule with no nodes".into()));
        }
        if nodes.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} nodes vs {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        for node in &nodes {
            if node.len() != dimension {
                return Err(Error::DimensionMismatch(format!(
                    "node of dim {} in rule of dim {dimension}",
                    node.len()
                )));
            }
            if node.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("quadrature node".into()));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("quadrature weight".into()));
        }
        Ok(Self { dimension, nodes, weights })
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        let mut acc = KahanSum::new();
        for &w in &self.weights {
            acc.add(w);
        }
        acc.value()
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when every weight is strictly positive.
    pub fn is_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// Restriction to the leading `sub_dim` coordinates: collapses the
    /// trailing coordinates of every node and merges the resulting atoms,
    /// summing weights. The restriction of a rule that integrates functions
    /// of the leading block exactly keeps that exactness.
    pub fn marginal(&self, sub_dim: usize) -> Result<QuadratureRule> {
        if sub_dim == 0 || sub_dim > self.dimension {
            return Err(Error::InvalidArgument(format!(
                "marginal dimension {sub_dim} outside 1..={}",
                self.dimension
            )));
        }
        let nodes: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| n[..sub_dim].to_vec()).collect();
        let (nodes, weights) = merge_nodes(nodes, self.weights.clone(), MERGE_TOL);
        QuadratureRule::new(sub_dim, nodes, weights)
    }

    /// Keeps only strictly positive-weight nodes and rescales so weights
    /// again sum to one. Sacrifices polynomial exactness for positivity;
    /// returns the discarded (signed) mass for diagnostics.
    pub fn filtered_positive(&self) -> Result<(QuadratureRule, f64)> {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut dropped = KahanSum::new();
        for (node, &w) in self.nodes.iter().zip(&self.weights) {
            if w > 0.0 {
                nodes.push(node.clone());
                weights.push(w);
            } else {
                dropped.add(w);
            }
        }
        if nodes.is_empty() {
            return Err(Error::InvalidArgument(
                "positive-weight filtering removed every node".into(),
            ));
        }
        let total: f64 = {
            let mut acc = KahanSum::new();
            for &w in &weights {
                acc.add(w);
            }
            acc.value()
        };
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok((QuadratureRule::new(self.dimension, nodes, weights)?, dropped.value()))
    }
}

/// Univariate Gauss-Legendre rule with `level` points for the uniform
/// probability measure on [-1, 1]; exact for polynomials of degree
/// 2·level-1. Nodes are returned in ascending order, mirrored exactly
/// about zero (with an exact zero node when `level` is odd).
pub fn gauss_legendre(level: usize) -> Result<QuadratureRule> {
    if level == 0 {
        return Err(Error::InvalidArgument("gauss-legendre level must be at least 1".into()));
    }
    if level == 1 {
        return QuadratureRule::new(1, vec![vec![0.0]], vec![1.0]);
    }
    // Golub-Welsch: the Jacobi matrix of the orthonormal Legendre
    // recurrence has zero diagonal and off-diagonals k / sqrt(4k^2 - 1).
    let n = level;
    let mut j = vec![0.0; n * n];
    for k in 1..n {
        let beta = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k - 1) * n + k] = beta;
        j[k * n + (k - 1)] = beta;
    }
    let eig = sym_eig(&SymMatrix::new(n, j)?)?;
    // Eigenvalues (descending) are the nodes; squared first components of
    // the normalized eigenvectors are the weights (zeroth moment is 1).
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|c| {
            let v0 = eig.vectors.get(0, c);
            (eig.values[c], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Enforce the exact symmetry of the rule: mirrored node pairs, equal
    // weights, and an exact zero center for odd sizes. This keeps shared
    // points bit-identical across rules, which node merging relies on.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let m = n - 1 - i;
        let mag = 0.5 * (nodes[m] - nodes[i]);
        nodes[i] = -mag;
        nodes[m] = mag;
        let w = 0.5 * (weights[i] + weights[m]);
        weights[i] = w;
        weights[m] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    QuadratureRule::new(1, nodes.into_iter().map(|x| vec![x]).collect(), weights)
}

/// Tensor product of component rules; the result's dimension is the sum of
/// the component dimensions and its node count their product.
pub fn tensor_rule(parts: &[QuadratureRule]) -> Result<QuadratureRule> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("tensor product of zero rules".into()));
    }
    let dimension = parts.iter().map(QuadratureRule::dimension).sum();
    let mut nodes: Vec<Vec<f64>> = vec![vec![]];
    let mut weights: Vec<f64> = vec![1.0];
    for part in parts {
        let mut new_nodes = Vec::with_capacity(nodes.len() * part.len());
        let mut new_weights = Vec::with_capacity(nodes.len() * part.len());
        for (node, &w) in nodes.iter().zip(&weights) {
            for (pn, &pw) in part.nodes().iter().zip(part.weights()) {
                let mut combined = node.clone();
                combined.extend_from_slice(pn);
                new_nodes.push(combined);
                new_weights.push(w * pw);
            }
        }
        nodes = new_nodes;
        weights = new_weights;
    }
    QuadratureRule::new(dimension, nodes, weights)
}

/// Fully tensorized Gauss-Legendre rule: `level` points per dimension.
pub fn tensor_gauss_legendre(dimension: usize, level: usize) -> Result<QuadratureRule> {
    let one = gauss_legendre(level)?;
    let parts = vec![one; dimension];
    tensor_rule(&parts)
}

/// Growth rule mapping a sparse-grid level index to a univariate point
/// count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GrowthRule {
    /// 2^l - 1 points at level l; deepens univariate exactness quickly.
    Exponential,
    /// l points at level l; slowly increasing, tuned for total-degree
    /// exactness with the fewest points.
    Linear,
}

impl GrowthRule {
    pub fn points(self, level: usize) -> usize {
        match self {
            GrowthRule::Exponential => (1usize << level) - 1,
            GrowthRule::Linear => level,
        }
    }
}

/// Sparse-grid Gauss-Legendre rule of the given dimension and level by the
/// combination technique: signed sums of anisotropic tensor rules over the
/// level shells λ ≤ |l| ≤ λ + n - 1. Combination weights are retained with
/// their signs; duplicate nodes across component grids are merged.
pub fn smolyak_rule(dimension: usize, level: usize, growth: GrowthRule) -> Result<QuadratureRule> {
    if dimension == 0 {
        return Err(Error::InvalidArgument("sparse rule of dimension 0".into()));
    }
    if level == 0 {
        return Err(Error::InvalidArgument("sparse rule level must be at least 1".into()));
    }
    let n = dimension;
    let hi = level + n - 1;
    let lo = level.max(n); // every component level index is at least 1
    let mut univariate: HashMap<usize, QuadratureRule> = HashMap::new();
    let mut nodes: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();

    let mut composition = vec![1usize; n];
    for s in lo..=hi {
        let excess = hi - s;
        let coeff = (if excess % 2 == 0 { 1.0 } else { -1.0 }) * binomial(n - 1, excess) as f64;
        compositions(s, n, 0, &mut composition, &mut |levels: &[usize]| {
            let mut parts = Vec::with_capacity(n);
            for &l in levels {
                let pts = growth.points(l);
                let rule = univariate
                    .entry(pts)
                    .or_insert_with(|| gauss_legendre(pts).expect("level >= 1"));
                parts.push(rule.clone());
            }
            let grid = tensor_rule(&parts).expect("component tensor rule");
            for (node, &w) in grid.nodes().iter().zip(grid.weights()) {
                nodes.push(node.clone());
                weights.push(coeff * w);
            }
        });
    }
    let (nodes, weights) = merge_nodes(nodes, weights, MERGE_TOL);
    QuadratureRule::new(n, nodes, weights)
}

/// Visits every composition of `total` into `parts` strictly positive
/// summands, in lexicographic order.
fn compositions(
    total: usize,
    parts: usize,
    dim: usize,
    scratch: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if parts - dim == 1 {
        if total >= 1 {
            scratch[dim] = total;
            visit(scratch);
        }
        return;
    }
    // Leave at least one unit for each remaining part.
    let remaining_parts = parts - dim - 1;
    for v in 1..=(total - remaining_parts) {
        scratch[dim] = v;
        compositions(total - v, parts, dim + 1, scratch, visit);
    }
}

/// Merges duplicate nodes (max-norm distance within `tol`), summing their
/// weights in a deterministic sorted order. Nodes are compared against the
/// first representative of their group so near-duplicates cannot chain.
pub fn merge_nodes(
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    tol: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    assert_eq!(nodes.len(), weights.len());
    if nodes.is_empty() {
        return (nodes, weights);
    }
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        nodes[a]
            .iter()
            .zip(&nodes[b])
            .find_map(|(x, y)| match x.partial_cmp(y).unwrap() {
                std::cmp::Ordering::Equal => None,
                other => Some(other),
            })
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut out_nodes: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<KahanSum> = Vec::new();
    for &i in &order {
        let matches_last = out_nodes.last().is_some_and(|rep| {
            rep.iter().zip(&nodes[i]).all(|(a, b)| (a - b).abs() <= tol)
        });
        if matches_last {
            sums.last_mut().unwrap().add(weights[i]);
        } else {
            out_nodes.push(nodes[i].clone());
            let mut acc = KahanSum::new();
            acc.add(weights[i]);
            sums.push(acc);
        }
    }
    (out_nodes, sums.into_iter().map(|s| s.value()).collect())
}

/// Integrates `f` with the rule: compensated summation over the rule's
/// fixed node order.
pub fn integrate(rule: &QuadratureRule, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut acc = KahanSum::new();
    for (node, &w) in rule.nodes().iter().zip(rule.weights()) {
        acc.add(w * f(node));
    }
    acc.value()
}

/// Analytic moment of the uniform probability measure on [-1, 1]^n for the
/// monomial with the given exponents: product of 1/(k+1) over even k, zero
/// if any exponent is odd.
pub fn uniform_monomial_moment(exponents: &[u32]) -> f64 {
    let mut m = 1.0;
    for &k in exponents {
        if k % 2 == 1 {
            return 0.0;
        }
        m /= (k + 1) as f64;
    }
    m
}
