//! Laplacian smoothing regularization.
//!
//! Solves `psi_tau - div(eps^2 grad psi_tau) = psi` with zero Neumann
//! boundary conditions, discretized with the same multilinear shape
//! functions used for displacements: `G = M + K_eps`, `G psi_tau = f(psi)`.
//! The per-axis smoothing lengths are `eps_i = tau_i * h_i`; an orthotropic
//! tau with a large out-of-plane component produces extruded designs.
//!
//! The operator is assembled and factorized once and reused for every
//! smoothing call.

use crate::mesh::{FieldLocation, ScalarField, StructuredGrid};
use crate::solver::{cg_solve, BandedLdlt, CsrMatrix};
use crate::{Error, Result};

const GAUSS: f64 = 0.577_350_269_189_625_8;

/// Direct factorization is used while the banded factorization cost
/// `n * bw^2` stays below this; larger operators fall back to CG.
const DIRECT_FLOP_CAP: f64 = 3e10;

enum Inner {
    Direct(BandedLdlt),
    Cg(CsrMatrix),
}

/// Factorized smoothing operator `G = M + K_eps` with its consistent mass
/// matrix.
pub struct SmoothingOperator {
    epsilon: [f64; 3],
    tau: [f64; 3],
    n_nodes: usize,
    mass: CsrMatrix,
    inner: Inner,
    /// Per-node right-hand-side weight of a unit element field:
    /// `int_e N dOmega` accumulated over adjacent elements.
    rhs_weight_per_element: f64,
}

fn shape_grads_2d(h: [f64; 3], xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let xs = [-1.0, 1.0, 1.0, -1.0];
    let es = [-1.0, -1.0, 1.0, 1.0];
    let mut n = [0.0; 4];
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        n[a] = (1.0 + xs[a] * xi) * (1.0 + es[a] * eta) / 4.0;
        g[a][0] = xs[a] * (1.0 + es[a] * eta) / 4.0 * 2.0 / h[0];
        g[a][1] = es[a] * (1.0 + xs[a] * xi) / 4.0 * 2.0 / h[1];
    }
    (n, g)
}

fn shape_grads_3d(h: [f64; 3], xi: f64, eta: f64, zeta: f64) -> ([f64; 8], [[f64; 3]; 8]) {
    let xs = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
    let es = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
    let zs = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
    let mut n = [0.0; 8];
    let mut g = [[0.0; 3]; 8];
    for a in 0..8 {
        n[a] = (1.0 + xs[a] * xi) * (1.0 + es[a] * eta) * (1.0 + zs[a] * zeta) / 8.0;
        g[a][0] = xs[a] * (1.0 + es[a] * eta) * (1.0 + zs[a] * zeta) / 8.0 * 2.0 / h[0];
        g[a][1] = es[a] * (1.0 + xs[a] * xi) * (1.0 + zs[a] * zeta) / 8.0 * 2.0 / h[1];
        g[a][2] = zs[a] * (1.0 + xs[a] * xi) * (1.0 + es[a] * eta) / 8.0 * 2.0 / h[2];
    }
    (n, g)
}

impl SmoothingOperator {
    /// Assemble and factorize the operator for per-axis `tau` values.
    pub fn build(grid: &StructuredGrid, tau: [f64; 3]) -> Result<Self> {
        let ndim = grid.ndim();
        for a in 0..ndim {
            if !(tau[a] >= 0.0) || !tau[a].is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "tau[{a}] must be nonnegative, got {}",
                    tau[a]
                )));
            }
        }
        let h = grid.h();
        let mut epsilon = [0.0; 3];
        for a in 0..ndim {
            epsilon[a] = tau[a] * h[a];
        }
        let nen = grid.nodes_per_element();
        // Element mass and diffusion matrices on the reference element.
        let mut me = vec![0.0; nen * nen];
        let mut ke = vec![0.0; nen * nen];
        let detj = grid.element_volume() / (1 << ndim) as f64;
        let pts = [-GAUSS, GAUSS];
        if ndim == 2 {
            for &xi in &pts {
                for &eta in &pts {
                    let (n, g) = shape_grads_2d(h, xi, eta);
                    for a in 0..4 {
                        for b in 0..4 {
                            me[a * nen + b] += n[a] * n[b] * detj;
                            ke[a * nen + b] += (epsilon[0] * epsilon[0] * g[a][0] * g[b][0]
                                + epsilon[1] * epsilon[1] * g[a][1] * g[b][1])
                                * detj;
                        }
                    }
                }
            }
        } else {
            for &xi in &pts {
                for &eta in &pts {
                    for &zeta in &pts {
                        let (n, g) = shape_grads_3d(h, xi, eta, zeta);
                        for a in 0..8 {
                            for b in 0..8 {
                                me[a * nen + b] += n[a] * n[b] * detj;
                                ke[a * nen + b] += (epsilon[0] * epsilon[0] * g[a][0] * g[b][0]
                                    + epsilon[1] * epsilon[1] * g[a][1] * g[b][1]
                                    + epsilon[2] * epsilon[2] * g[a][2] * g[b][2])
                                    * detj;
                            }
                        }
                    }
                }
            }
        }
        let n_nodes = grid.n_nodes();
        let mut m_trip = Vec::with_capacity(grid.n_elements() * nen * nen);
        let mut g_trip = Vec::with_capacity(grid.n_elements() * nen * nen);
        for e in 0..grid.n_elements() {
            let nodes = grid.element_nodes(e);
            for a in 0..nen {
                for b in 0..nen {
                    m_trip.push((nodes[a], nodes[b], me[a * nen + b]));
                    g_trip.push((nodes[a], nodes[b], me[a * nen + b] + ke[a * nen + b]));
                }
            }
        }
        let mass = CsrMatrix::from_triplets(n_nodes, &m_trip);
        let g = CsrMatrix::from_triplets(n_nodes, &g_trip);
        let bw = g.half_bandwidth() as f64;
        let inner = if n_nodes as f64 * bw * bw <= DIRECT_FLOP_CAP {
            Inner::Direct(BandedLdlt::factor(&g)?)
        } else {
            Inner::Cg(g)
        };
        Ok(SmoothingOperator {
            epsilon,
            tau,
            n_nodes,
            mass,
            inner,
            rhs_weight_per_element: grid.element_volume() / nen as f64,
        })
    }

    pub fn epsilon(&self) -> [f64; 3] {
        self.epsilon
    }

    pub fn tau(&self) -> [f64; 3] {
        self.tau
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.inner {
            Inner::Direct(f) => Ok(f.solve(rhs)),
            Inner::Cg(g) => cg_solve(g, rhs, None, 1e-12, 20 * self.n_nodes.max(100)),
        }
    }

    /// Smooth an element field into a nodal field: `G psi_tau = f(psi)`
    /// with `f(psi) = int N^T psi dOmega` and `psi` constant per element.
    pub fn smooth(&self, grid: &StructuredGrid, xi: &ScalarField) -> Result<ScalarField> {
        if xi.location != FieldLocation::Element || xi.values.len() != grid.n_elements() {
            return Err(Error::InvalidField(
                "smooth expects an element field on the operator's grid".into(),
            ));
        }
        let mut rhs = vec![0.0; self.n_nodes];
        for e in 0..grid.n_elements() {
            let w = xi.values[e] * self.rhs_weight_per_element;
            for n in grid.element_nodes(e) {
                rhs[n] += w;
            }
        }
        let sol = self.solve(&rhs)?;
        ScalarField::nodal(grid, sol)
    }

    /// Smooth a nodal field: the right-hand side is the consistent-mass
    /// projection `M psi`, so `tau = 0` reproduces the input exactly.
    pub fn smooth_nodal(&self, grid: &StructuredGrid, psi: &ScalarField) -> Result<ScalarField> {
        if psi.location != FieldLocation::Nodal || psi.values.len() != self.n_nodes {
            return Err(Error::InvalidField(
                "smooth_nodal expects a nodal field on the operator's grid".into(),
            ));
        }
        let mut rhs = vec![0.0; self.n_nodes];
        self.mass.matvec(&psi.values, &mut rhs);
        let sol = self.solve(&rhs)?;
        ScalarField::nodal(grid, sol)
    }

    /// Mass-weighted integral of a nodal field, `1^T M psi`.
    pub fn mass_integral(&self, psi: &[f64]) -> f64 {
        let mut mp = vec![0.0; self.n_nodes];
        self.mass.matvec(psi, &mut mp);
        mp.iter().sum()
    }
}
