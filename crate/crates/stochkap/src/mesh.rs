//! Uniform one-dimensional linear finite element mesh on [0, L].

use crate::error::{Error, Result};
use crate::linalg::BandedMatrix;

/// Uniform mesh with linear (hat function) elements. Nodes include both
/// endpoints, so there are `n_elements + 1` degrees of freedom.
#[derive(Debug, Clone)]
pub struct FeMesh {
    length: f64,
    n_elements: usize,
    nodes: Vec<f64>,
}

impl FeMesh {
    pub fn new(length: f64, n_elements: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidArgument(format!("mesh length {length} must be positive")));
        }
        if n_elements == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one element".into()));
        }
        let h = length / n_elements as f64;
        let nodes = (0..=n_elements).map(|i| i as f64 * h).collect();
        Ok(Self { length, n_elements, nodes })
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_elements + 1
    }

    #[inline]
    pub fn element_size(&self) -> f64 {
        self.length / self.n_elements as f64
    }

    #[inline]
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Two-point Gauss points of element `e` and the common weight
    /// (half the element size per point).
    pub fn element_gauss2(&self, e: usize) -> ([f64; 2], f64) {
        let h = self.element_size();
        let a = self.nodes[e];
        let g = h * 0.5 / 3.0f64.sqrt();
        let mid = a + 0.5 * h;
        ([mid - g, mid + g], 0.5 * h)
    }

    /// Values of the two local hat functions of element `e` at a point
    /// inside it.
    pub fn shape_values(&self, e: usize, x: f64) -> [f64; 2] {
        let h = self.element_size();
        let t = (x - self.nodes[e]) / h;
        [1.0 - t, t]
    }

    /// Linear interpolation of a nodal field at a point inside element `e`.
    pub fn interpolate(&self, nodal: &[f64], e: usize, x: f64) -> f64 {
        let s = self.shape_values(e, x);
        s[0] * nodal[e] + s[1] * nodal[e + 1]
    }

    /// Tridiagonal mass matrix (integrals of hat function products).
    pub fn mass_matrix(&self) -> BandedMatrix {
        let n = self.n_nodes();
        let h = self.element_size();
        let mut m = BandedMatrix::new(n, 1, 1);
        for e in 0..self.n_elements {
            m.add(e, e, h / 3.0);
            m.add(e + 1, e + 1, h / 3.0);
            m.add(e, e + 1, h / 6.0);
            m.add(e + 1, e, h / 6.0);
        }
        m
    }

    /// Tridiagonal stiffness matrix (integrals of hat function derivative
    /// products), with unit coefficient.
    pub fn stiffness_matrix(&self) -> BandedMatrix {
        let n = self.n_nodes();
        let h = self.element_size();
        let mut k = BandedMatrix::new(n, 1, 1);
        for e in 0..self.n_elements {
            k.add(e, e, 1.0 / h);
            k.add(e + 1, e + 1, 1.0 / h);
            k.add(e, e + 1, -1.0 / h);
            k.add(e + 1, e, -1.0 / h);
        }
        k
    }
}
