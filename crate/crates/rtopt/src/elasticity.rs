//! Bi-material linear elasticity on structured grids.
//!
//! The hard phase carries the nominal constitutive matrix `D`; an element
//! with design value `chi` carries `chi^m D`. Interface-cut elements use the
//! mixed element of the three-field formulation: element-constant strain
//! evaluated at the centroid and the volume-averaged constitutive matrix
//! `D_bar = (v_plus + alpha * v_minus) D`.
//!
//! Plane strain is assumed in 2D with unit thickness.

use nalgebra::DMatrix;

use crate::geometry::CutElementData;
use crate::mesh::{DesignField, StructuredGrid};
use crate::solver::{CsrMatrix, Factorized, SolverKind};
use crate::{Error, Result};

const GAUSS: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Isotropic material of the hard phase plus the soft-phase contrast.
#[derive(Debug, Clone, Copy)]
pub struct Material {
    /// Young modulus (Pa).
    pub e: f64,
    /// Poisson ratio.
    pub nu: f64,
    /// Contrast stiffness factor: soft-phase stiffness is `alpha * D`.
    pub alpha: f64,
    /// Contrast stiffness exponent.
    pub m: u32,
}

impl Material {
    pub fn new(e: f64, nu: f64, alpha: f64, m: u32) -> Result<Self> {
        let mat = Material { e, nu, alpha, m };
        mat.validate()?;
        Ok(mat)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "Young modulus must be positive, got {}",
                self.e
            )));
        }
        if !(self.nu > -1.0 && self.nu < 0.5) {
            return Err(Error::InvalidMaterial(format!(
                "Poisson ratio must lie in (-1, 0.5), got {}",
                self.nu
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidMaterial(format!(
                "contrast factor alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.m < 1 {
            return Err(Error::InvalidMaterial("exponent m must be >= 1".into()));
        }
        Ok(())
    }

    /// Relaxation factor `beta = alpha^(1/m)`.
    pub fn beta(&self) -> f64 {
        self.alpha.powf(1.0 / self.m as f64)
    }

    pub fn lame_lambda(&self) -> f64 {
        self.nu * self.e / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
    }

    pub fn lame_mu(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }
}

/// Voigt constitutive matrix of the isotropic hard phase: 3x3 plane strain
/// or 6x6 in 3D, with engineering shear strains.
pub fn constitutive_matrix(material: &Material, ndim: usize) -> Result<DMatrix<f64>> {
    material.validate()?;
    let la = material.lame_lambda();
    let mu = material.lame_mu();
    if !la.is_finite() {
        return Err(Error::InvalidMaterial(
            "incompressible limit nu = 0.5 is singular".into(),
        ));
    }
    let d = match ndim {
        2 => {
            let mut d = DMatrix::zeros(3, 3);
            d[(0, 0)] = la + 2.0 * mu;
            d[(1, 1)] = la + 2.0 * mu;
            d[(0, 1)] = la;
            d[(1, 0)] = la;
            d[(2, 2)] = mu;
            d
        }
        3 => {
            let mut d = DMatrix::zeros(6, 6);
            for i in 0..3 {
                for j in 0..3 {
                    d[(i, j)] = if i == j { la + 2.0 * mu } else { la };
                }
                d[(i + 3, i + 3)] = mu;
            }
            d
        }
        n => return Err(Error::InvalidMaterial(format!("unsupported dimension {n}"))),
    };
    Ok(d)
}

/// Number of Voigt strain components for a grid dimension.
pub fn n_strain(ndim: usize) -> usize {
    if ndim == 2 {
        3
    } else {
        6
    }
}

/// Precomputed per-element quantities shared by all elements of a uniform
/// grid: the full-material element stiffness, strain matrices at the Gauss
/// points and at the centroid.
pub struct ElementKernel {
    pub ndim: usize,
    pub nen: usize,
    pub ndof: usize,
    pub ke_full: DMatrix<f64>,
    pub b_gauss: Vec<DMatrix<f64>>,
    pub b_centroid: DMatrix<f64>,
    /// Integration weight times Jacobian determinant, identical for all
    /// Gauss points on a rectangular element.
    pub w_detj: f64,
    pub volume: f64,
    pub d: DMatrix<f64>,
}

fn b_matrix_2d(h: [f64; 3], xi: f64, eta: f64) -> DMatrix<f64> {
    // CCW corners in reference coordinates.
    let xs = [-1.0, 1.0, 1.0, -1.0];
    let es = [-1.0, -1.0, 1.0, 1.0];
    let mut b = DMatrix::zeros(3, 8);
    for a in 0..4 {
        let dndx = xs[a] * (1.0 + es[a] * eta) / 4.0 * 2.0 / h[0];
        let dndy = es[a] * (1.0 + xs[a] * xi) / 4.0 * 2.0 / h[1];
        b[(0, 2 * a)] = dndx;
        b[(1, 2 * a + 1)] = dndy;
        b[(2, 2 * a)] = dndy;
        b[(2, 2 * a + 1)] = dndx;
    }
    b
}

fn b_matrix_3d(h: [f64; 3], xi: f64, eta: f64, zeta: f64) -> DMatrix<f64> {
    let xs = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
    let es = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
    let zs = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
    let mut b = DMatrix::zeros(6, 24);
    for a in 0..8 {
        let dndx = xs[a] * (1.0 + es[a] * eta) * (1.0 + zs[a] * zeta) / 8.0 * 2.0 / h[0];
        let dndy = es[a] * (1.0 + xs[a] * xi) * (1.0 + zs[a] * zeta) / 8.0 * 2.0 / h[1];
        let dndz = zs[a] * (1.0 + xs[a] * xi) * (1.0 + es[a] * eta) / 8.0 * 2.0 / h[2];
        let c = 3 * a;
        b[(0, c)] = dndx;
        b[(1, c + 1)] = dndy;
        b[(2, c + 2)] = dndz;
        b[(3, c)] = dndy;
        b[(3, c + 1)] = dndx;
        b[(4, c + 1)] = dndz;
        b[(4, c + 2)] = dndy;
        b[(5, c)] = dndz;
        b[(5, c + 2)] = dndx;
    }
    b
}

impl ElementKernel {
    pub fn new(grid: &StructuredGrid, material: &Material) -> Result<Self> {
        let ndim = grid.ndim();
        let h = grid.h();
        let d = constitutive_matrix(material, ndim)?;
        let nen = grid.nodes_per_element();
        let ndof = nen * ndim;
        let (b_gauss, b_centroid, w_detj) = if ndim == 2 {
            let detj = h[0] * h[1] / 4.0;
            let mut bs = Vec::with_capacity(4);
            for &xi in &[-GAUSS, GAUSS] {
                for &eta in &[-GAUSS, GAUSS] {
                    bs.push(b_matrix_2d(h, xi, eta));
                }
            }
            (bs, b_matrix_2d(h, 0.0, 0.0), detj)
        } else {
            let detj = h[0] * h[1] * h[2] / 8.0;
            let mut bs = Vec::with_capacity(8);
            for &xi in &[-GAUSS, GAUSS] {
                for &eta in &[-GAUSS, GAUSS] {
                    for &zeta in &[-GAUSS, GAUSS] {
                        bs.push(b_matrix_3d(h, xi, eta, zeta));
                    }
                }
            }
            (bs, b_matrix_3d(h, 0.0, 0.0, 0.0), detj)
        };
        let mut ke = DMatrix::zeros(ndof, ndof);
        for b in &b_gauss {
            ke += b.transpose() * &d * b * w_detj;
        }
        // Enforce exact symmetry of the reference matrix.
        for i in 0..ndof {
            for j in (i + 1)..ndof {
                let v = 0.5 * (ke[(i, j)] + ke[(j, i)]);
                ke[(i, j)] = v;
                ke[(j, i)] = v;
            }
        }
        Ok(ElementKernel {
            ndim,
            nen,
            ndof,
            ke_full: ke,
            b_gauss,
            b_centroid,
            w_detj,
            volume: grid.element_volume(),
            d,
        })
    }

    /// One-point (centroid) full-material element matrix scaled by a
    /// constitutive factor; the mixed element for cut cells.
    fn ke_one_point(&self, factor: f64) -> DMatrix<f64> {
        let mut ke =
            self.b_centroid.transpose() * &self.d * &self.b_centroid * (factor * self.volume);
        for i in 0..self.ndof {
            for j in (i + 1)..self.ndof {
                let v = 0.5 * (ke[(i, j)] + ke[(j, i)]);
                ke[(i, j)] = v;
                ke[(j, i)] = v;
            }
        }
        ke
    }
}

/// Element stiffness matrix: `chi^m Ke_full` for full-phase elements, the
/// mixed one-point matrix with the volume-averaged constitutive factor for
/// cut elements.
pub fn element_stiffness(
    kernel: &ElementKernel,
    material: &Material,
    chi_e: f64,
    cut: Option<&CutElementData>,
) -> Result<DMatrix<f64>> {
    match cut {
        None => Ok(&kernel.ke_full * chi_e.powi(material.m as i32)),
        Some(c) => {
            let ve = kernel.volume;
            if ((c.vol_plus + c.vol_minus) - ve).abs() > 1e-9 * ve {
                return Err(Error::InvalidField(format!(
                    "cut volumes {} + {} do not sum to element volume {ve}",
                    c.vol_plus, c.vol_minus
                )));
            }
            let factor = (c.vol_plus + material.alpha * c.vol_minus) / ve;
            Ok(kernel.ke_one_point(factor))
        }
    }
}

/// Assembled nodal loads: external force vector plus spring stiffness added
/// to the diagonal (both sized `n_nodes * ndim`).
#[derive(Debug, Clone)]
pub struct LoadAssembly {
    pub f: Vec<f64>,
    pub spring_diag: Vec<f64>,
}

impl LoadAssembly {
    pub fn new(ndof: usize) -> Self {
        LoadAssembly {
            f: vec![0.0; ndof],
            spring_diag: vec![0.0; ndof],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite load entry".into()));
        }
        if self.spring_diag.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidField(
                "spring stiffness entries must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Homogeneous Dirichlet constraints per degree of freedom.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub fixed: Vec<bool>,
}

impl BoundaryConditions {
    pub fn none(ndof: usize) -> Self {
        BoundaryConditions {
            fixed: vec![false; ndof],
        }
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }
}

/// Assembled and factorized state problem for one design.
pub struct ElasticState {
    pub ndim: usize,
    pub ndof: usize,
    fixed: Vec<bool>,
    full_to_reduced: Vec<usize>,
    reduced_to_full: Vec<usize>,
    fact: Factorized,
    /// External load vector in full numbering.
    pub f: Vec<f64>,
}

/// Assemble the global stiffness for a design, eliminate the constrained
/// rows/columns and factorize.
pub fn assemble(
    grid: &StructuredGrid,
    design: &DesignField,
    material: &Material,
    cuts: &[Option<CutElementData>],
    loads: &LoadAssembly,
    bc: &BoundaryConditions,
    solver: SolverKind,
) -> Result<ElasticState> {
    assemble_perturbed(grid, design, material, cuts, loads, bc, solver, None)
}

/// Assembly variant that lets one element carry an arbitrary continuous
/// `chi` value; the finite-difference sensitivity harness depends on it.
#[allow(clippy::too_many_arguments)]
pub fn assemble_perturbed(
    grid: &StructuredGrid,
    design: &DesignField,
    material: &Material,
    cuts: &[Option<CutElementData>],
    loads: &LoadAssembly,
    bc: &BoundaryConditions,
    solver: SolverKind,
    chi_override: Option<(usize, f64)>,
) -> Result<ElasticState> {
    let ndim = grid.ndim();
    let ndof = grid.n_nodes() * ndim;
    if design.chi().len() != grid.n_elements() {
        return Err(Error::InvalidField("design does not match grid".into()));
    }
    if !cuts.is_empty() && cuts.len() != grid.n_elements() {
        return Err(Error::InvalidField("cut data does not match grid".into()));
    }
    if loads.f.len() != ndof || loads.spring_diag.len() != ndof || bc.fixed.len() != ndof {
        return Err(Error::InvalidField("load/bc vectors do not match grid".into()));
    }
    loads.validate()?;
    if bc.n_fixed() == 0 {
        return Err(Error::RigidBodyMotion(
            "no Dirichlet constraints given".into(),
        ));
    }

    let kernel = ElementKernel::new(grid, material)?;
    // Reduced ordering walks the longest grid axis slowest, which keeps
    // the band of the reduced matrix proportional to the smaller axes.
    let mut axes: Vec<usize> = (0..3).collect();
    let dims = grid.dims();
    axes.sort_by_key(|&a| std::cmp::Reverse(dims[a]));
    let mut order: Vec<usize> = (0..ndof).filter(|&d| !bc.fixed[d]).collect();
    order.sort_by_key(|&dof| {
        let c = grid.node_coords(dof / ndim);
        (c[axes[0]], c[axes[1]], c[axes[2]], dof % ndim)
    });
    let mut full_to_reduced = vec![usize::MAX; ndof];
    let reduced_to_full = order;
    for (r, &dof) in reduced_to_full.iter().enumerate() {
        full_to_reduced[dof] = r;
    }
    let nred = reduced_to_full.len();

    // Element matrices: one shared full matrix scaled per element, plus the
    // handful of distinct cut matrices.
    let mut triplets: Vec<(usize, usize, f64)> =
        Vec::with_capacity(grid.n_elements() * kernel.ndof * kernel.ndof / 2);
    let mut dofs = vec![0usize; kernel.ndof];
    for e in 0..grid.n_elements() {
        let cut = cuts.get(e).and_then(|c| c.as_ref());
        let overridden = chi_override.filter(|&(idx, _)| idx == e);
        let ke = match overridden {
            Some((_, chi)) => element_stiffness(&kernel, material, chi, None)?,
            None => element_stiffness(&kernel, material, design.chi()[e], cut)?,
        };
        for (a, n) in grid.element_nodes(e).into_iter().enumerate() {
            for c in 0..ndim {
                dofs[a * ndim + c] = n * ndim + c;
            }
        }
        for a in 0..kernel.ndof {
            let ra = full_to_reduced[dofs[a]];
            if ra == usize::MAX {
                continue;
            }
            for b in 0..kernel.ndof {
                let rb = full_to_reduced[dofs[b]];
                if rb == usize::MAX {
                    continue;
                }
                triplets.push((ra, rb, ke[(a, b)]));
            }
        }
    }
    for dof in 0..ndof {
        let r = full_to_reduced[dof];
        if r != usize::MAX && loads.spring_diag[dof] != 0.0 {
            triplets.push((r, r, loads.spring_diag[dof]));
        }
    }
    let k = CsrMatrix::from_triplets(nred, &triplets);
    let fact = Factorized::new(k, solver)?;
    Ok(ElasticState {
        ndim,
        ndof,
        fixed: bc.fixed.clone(),
        full_to_reduced,
        reduced_to_full,
        fact,
        f: loads.f.clone(),
    })
}

impl ElasticState {
    pub fn stiffness(&self) -> &CsrMatrix {
        self.fact.matrix()
    }

    /// Solve `K d = rhs` for a full-numbering right hand side; constrained
    /// entries of the result are zero.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_warm(rhs, None)
    }

    pub fn solve_warm(&self, rhs: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        if rhs.len() != self.ndof {
            return Err(Error::InvalidField("rhs does not match dof count".into()));
        }
        let reduced_rhs: Vec<f64> = self.reduced_to_full.iter().map(|&d| rhs[d]).collect();
        let warm_red: Option<Vec<f64>> =
            warm.map(|w| self.reduced_to_full.iter().map(|&d| w[d]).collect());
        let x = self.fact.solve(&reduced_rhs, warm_red.as_deref())?;
        let mut full = vec![0.0; self.ndof];
        for (r, &dof) in self.reduced_to_full.iter().enumerate() {
            full[dof] = x[r];
        }
        Ok(full)
    }

    /// Solve the state problem with the assembled external loads.
    pub fn solve_state(&self) -> Result<Vec<f64>> {
        self.solve(&self.f)
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof]
    }

    pub fn reduced_index(&self, dof: usize) -> Option<usize> {
        let r = self.full_to_reduced[dof];
        (r != usize::MAX).then_some(r)
    }
}

/// Structural compliance `f^T d`.
pub fn compliance(f: &[f64], d: &[f64]) -> f64 {
    f.iter().zip(d).map(|(a, b)| a * b).sum()
}

/// Solve the two systems of the compliant-mechanism problem with the same
/// stiffness: `K d1 = f` and `K d2 = 1_vert`.
pub fn mechanism_outputs(state: &ElasticState, one_vert: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d1 = state.solve_state()?;
    let d2 = state.solve(one_vert)?;
    Ok((d1, d2))
}

/// Per-element strain samples: the Gauss-point strains for full elements,
/// the single centroid strain for cut elements. Components use Voigt
/// ordering with engineering shear, padded to six entries.
#[derive(Debug, Clone)]
pub struct ElementStrains {
    pub ncomp: usize,
    /// `samples[e]` has one entry per sampling point of element `e`.
    pub samples: Vec<Vec<[f64; 6]>>,
}

/// Evaluate strains from a displacement vector.
pub fn element_strains(
    grid: &StructuredGrid,
    material: &Material,
    cuts: &[Option<CutElementData>],
    d: &[f64],
) -> Result<ElementStrains> {
    let kernel = ElementKernel::new(grid, material)?;
    let ndim = grid.ndim();
    let ncomp = n_strain(ndim);
    let mut samples = Vec::with_capacity(grid.n_elements());
    let mut de = vec![0.0; kernel.ndof];
    for e in 0..grid.n_elements() {
        for (a, n) in grid.element_nodes(e).into_iter().enumerate() {
            for c in 0..ndim {
                de[a * ndim + c] = d[n * ndim + c];
            }
        }
        let cut = cuts.get(e).and_then(|c| c.as_ref()).is_some();
        let bs: &[DMatrix<f64>] = if cut {
            std::slice::from_ref(&kernel.b_centroid)
        } else {
            &kernel.b_gauss
        };
        let mut elem = Vec::with_capacity(bs.len());
        for b in bs {
            let mut eps = [0.0f64; 6];
            for comp in 0..ncomp {
                let mut s = 0.0;
                for (col, &dv) in de.iter().enumerate() {
                    s += b[(comp, col)] * dv;
                }
                eps[comp] = s;
            }
            elem.push(eps);
        }
        samples.push(elem);
    }
    Ok(ElementStrains { ncomp, samples })
}
