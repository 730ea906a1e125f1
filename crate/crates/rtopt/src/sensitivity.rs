//! Relaxed topological derivatives.
//!
//! The catalog entries (phase volumes, perimeters, interface) are closed
//! form. The cost sensitivities come from the adjoint construction: for
//! mean compliance the adjoint equals the state, for mechanisms it is the
//! auxiliary solve, and in both cases the per-point sensitivity reduces to
//! a nominal energy density built with the full-material constitutive
//! matrix. The lambda-free part `xi` is what the cutting algorithm smooths
//! and cuts.

use nalgebra::DMatrix;

use crate::elasticity::ElementStrains;
use crate::geometry::CutElementData;
use crate::mesh::{DesignField, ScalarField, StructuredGrid};
use crate::{Error, Result};

/// Phase of the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointPhase {
    /// Hard phase (`chi = 1`).
    Plus,
    /// Soft phase (`chi = beta`).
    Minus,
}

/// RTD of the hard-phase volume `|Omega+|`: `sgn(Delta chi)`, i.e. -1 on
/// the hard phase and +1 on the soft phase. The soft-phase volume
/// derivative is the negation.
pub fn rtd_volume(point_phase: PointPhase) -> f64 {
    match point_phase {
        PointPhase::Plus => -1.0,
        PointPhase::Minus => 1.0,
    }
}

/// RTD of the soft-phase volume `|Omega-|`.
pub fn rtd_volume_soft(point_phase: PointPhase) -> f64 {
    -rtd_volume(point_phase)
}

/// RTD of either phase perimeter and of the interface measure: 1 at every
/// point.
pub fn rtd_perimeter() -> f64 {
    1.0
}

/// Sign of the phase-exchange increment `Delta chi` at a point.
pub fn sign_delta_chi(phase: PointPhase) -> f64 {
    rtd_volume(phase)
}

/// Which cost functional an energy field belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    Compliance,
    Mechanism,
}

/// The lambda-free part of the discrimination function, stored per
/// element.
#[derive(Debug, Clone)]
pub struct EnergyField {
    pub xi: ScalarField,
    pub kind: EnergyKind,
    pub m: u32,
    pub beta: f64,
}

/// Per-element factor `chi^(m-1)` of the sensitivity. Full-phase elements
/// use their stored two-valued chi. Interface-cut elements, whose sampling
/// point sees both phases, use the volume-fraction average
/// `v_plus * 1 + v_minus * beta^(m-1)`, mirroring the mixed element's
/// volume-averaged constitutive matrix; this keeps the energy of a cut
/// element continuous in the interface position instead of jumping by a
/// factor `beta^(m-1)` when its centroid changes side.
fn chi_power_factor(
    design: &DesignField,
    cuts: &[Option<CutElementData>],
    e: usize,
    m: u32,
) -> f64 {
    let beta_pow = design.beta().powi(m as i32 - 1);
    if !USE_GRADED_CUTS.load(std::sync::atomic::Ordering::Relaxed) {
        return if design.is_hard(e) { 1.0 } else { beta_pow };
    }
    match cuts.get(e).and_then(|c| c.as_ref()) {
        Some(c) => {
            let total = c.vol_plus + c.vol_minus;
            let v_plus = c.vol_plus / total;
            v_plus + (1.0 - v_plus) * beta_pow
        }
        None => {
            if design.is_hard(e) {
                1.0
            } else {
                beta_pow
            }
        }
    }
}

fn mean_nominal_energy(
    samples: &[[f64; 6]],
    other: Option<&[[f64; 6]]>,
    d: &DMatrix<f64>,
    ncomp: usize,
) -> f64 {
    let mut acc = 0.0;
    for (s_idx, eps1) in samples.iter().enumerate() {
        let eps2 = other.map_or(eps1, |o| &o[s_idx]);
        let mut q = 0.0;
        for i in 0..ncomp {
            for j in 0..ncomp {
                q += eps1[i] * d[(i, j)] * eps2[j];
            }
        }
        acc += 0.5 * q;
    }
    acc / samples.len() as f64
}

/// Compliance energy field: `xi[e] = 2 m (1 - beta) chi^(m-1) U_bar[e]`
/// with the nominal energy density `U_bar = 1/2 eps^T D eps` averaged over
/// the element's sampling points.
pub fn compliance_energy(
    design: &DesignField,
    strains: &ElementStrains,
    d: &DMatrix<f64>,
    m: u32,
) -> Result<EnergyField> {
    compliance_energy_with_cuts(design, strains, d, m, &[])
}

/// Compliance energy with interface-cut elements carrying the
/// volume-averaged `chi^(m-1)` factor.
pub fn compliance_energy_with_cuts(
    design: &DesignField,
    strains: &ElementStrains,
    d: &DMatrix<f64>,
    m: u32,
    cuts: &[Option<CutElementData>],
) -> Result<EnergyField> {
    let beta = design.beta();
    let n = design.chi().len();
    if strains.samples.len() != n {
        return Err(Error::InvalidField("strain/design size mismatch".into()));
    }
    let mut xi = Vec::with_capacity(n);
    for e in 0..n {
        let u_bar = mean_nominal_energy(&strains.samples[e], None, d, strains.ncomp);
        if u_bar < -1e-12 * u_bar.abs().max(1.0) {
            return Err(Error::InvalidField(format!(
                "negative nominal energy density {u_bar} at element {e}"
            )));
        }
        let factor = chi_power_factor(design, cuts, e, m);
        xi.push(2.0 * m as f64 * (1.0 - beta) * factor * u_bar.max(0.0));
    }
    Ok(EnergyField {
        xi: ScalarField {
            location: crate::mesh::FieldLocation::Element,
            values: xi,
        },
        kind: EnergyKind::Compliance,
        m,
        beta,
    })
}

/// Mechanism pseudo-energy field:
/// `xi[e] = -2 m (1 - beta) chi^(m-1) Uc[e]` with
/// `Uc = 1/2 eps1^T D eps2`; sign-indefinite by nature.
pub fn mechanism_energy(
    design: &DesignField,
    strains1: &ElementStrains,
    strains2: &ElementStrains,
    d: &DMatrix<f64>,
    m: u32,
) -> Result<EnergyField> {
    mechanism_energy_with_cuts(design, strains1, strains2, d, m, &[])
}

/// Mechanism energy with interface-cut elements carrying the
/// volume-averaged `chi^(m-1)` factor.
pub fn mechanism_energy_with_cuts(
    design: &DesignField,
    strains1: &ElementStrains,
    strains2: &ElementStrains,
    d: &DMatrix<f64>,
    m: u32,
    cuts: &[Option<CutElementData>],
) -> Result<EnergyField> {
    let beta = design.beta();
    let n = design.chi().len();
    if strains1.samples.len() != n || strains2.samples.len() != n {
        return Err(Error::InvalidField("strain/design size mismatch".into()));
    }
    let mut xi = Vec::with_capacity(n);
    for e in 0..n {
        if strains1.samples[e].len() != strains2.samples[e].len() {
            return Err(Error::InvalidField(
                "mismatched sampling points between the two states".into(),
            ));
        }
        let uc = mean_nominal_energy(
            &strains1.samples[e],
            Some(&strains2.samples[e]),
            d,
            strains1.ncomp,
        );
        let factor = chi_power_factor(design, cuts, e, m);
        xi.push(-2.0 * m as f64 * (1.0 - beta) * factor * uc);
    }
    Ok(EnergyField {
        xi: ScalarField {
            location: crate::mesh::FieldLocation::Element,
            values: xi,
        },
        kind: EnergyKind::Mechanism,
        m,
        beta,
    })
}

/// Finite-difference validation oracle for the cost sensitivities.
pub mod fd {
    use super::*;
    use crate::elasticity::{
        assemble_perturbed, compliance, BoundaryConditions, LoadAssembly, Material,
    };
    use crate::geometry::CutElementData;
    use crate::solver::SolverKind;

    /// Cost functional evaluated by the oracle.
    pub enum FdCost<'a> {
        /// `J = f^T d`.
        Compliance,
        /// `J = -d^T 1_vert`.
        Mechanism { one_vert: &'a [f64] },
    }

    /// Central difference of the cost with respect to a continuous `chi`
    /// at one element, per unit volume:
    /// `(J(chi_e + delta) - J(chi_e - delta)) / (2 delta |Omega_e|)`.
    ///
    /// Re-assembles and re-solves for each perturbation; independent of the
    /// closed-form sensitivity path it validates. Requires a cut-free
    /// design. Warns when halving `delta` changes the estimate by more
    /// than 1%, which indicates a truncation-dominated step.
    #[allow(clippy::too_many_arguments)]
    pub fn fd_sensitivity_oracle(
        grid: &StructuredGrid,
        design: &DesignField,
        material: &Material,
        loads: &LoadAssembly,
        bc: &BoundaryConditions,
        cost: FdCost<'_>,
        element: usize,
        delta: f64,
    ) -> Result<f64> {
        let no_cuts: Vec<Option<CutElementData>> = Vec::new();
        let eval = |chi_e: f64| -> Result<f64> {
            let state = assemble_perturbed(
                grid,
                design,
                material,
                &no_cuts,
                loads,
                bc,
                SolverKind::Direct,
                Some((element, chi_e)),
            )?;
            let d = state.solve_state()?;
            Ok(match &cost {
                FdCost::Compliance => compliance(&loads.f, &d),
                FdCost::Mechanism { one_vert } => -compliance(one_vert, &d),
            })
        };
        let chi0 = design.chi()[element];
        let ve = grid.element_volume();
        let central = |dl: f64| -> Result<f64> {
            Ok((eval(chi0 + dl)? - eval(chi0 - dl)?) / (2.0 * dl * ve))
        };
        let g = central(delta)?;
        let g_half = central(0.5 * delta)?;
        if (g - g_half).abs() > 1e-2 * g_half.abs().max(1e-300) {
            log::warn!(
                "fd oracle truncation check failed at element {element}: delta {delta} gives {g}, delta/2 gives {g_half}"
            );
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::{
        assemble, compliance, constitutive_matrix, element_strains, mechanism_outputs,
        BoundaryConditions, LoadAssembly, Material,
    };
    use crate::mesh::build_grid;
    use crate::solver::SolverKind;

    #[test]
    fn volume_rtd_catalog() {
        assert_eq!(rtd_volume(PointPhase::Plus), -1.0);
        assert_eq!(rtd_volume(PointPhase::Minus), 1.0);
        for phase in [PointPhase::Plus, PointPhase::Minus] {
            assert_eq!(rtd_volume(phase) + rtd_volume_soft(phase), 0.0);
        }
        assert_eq!(rtd_perimeter(), 1.0);
        // Interface derivative is the mean of the two perimeter RTDs.
        assert_eq!(0.5 * (rtd_perimeter() + rtd_perimeter()), 1.0);
    }

    fn strains_single(eps: [f64; 6], n: usize, ncomp: usize) -> ElementStrains {
        ElementStrains {
            ncomp,
            samples: vec![vec![eps]; n],
        }
    }

    #[test]
    fn compliance_energy_values() {
        let grid = build_grid(&[1, 1], &[1.0, 1.0], &[]).unwrap();
        let beta = 0.0631f64;
        let design = DesignField::full_hard(&grid, beta).unwrap();
        let mat = Material::new(1.0, 0.0, beta.powi(5), 5).unwrap();
        let d = constitutive_matrix(&mat, 2).unwrap();
        // Zero strain gives zero energy.
        let zero = compliance_energy(&design, &strains_single([0.0; 6], 1, 3), &d, 5).unwrap();
        assert_eq!(zero.xi.values[0], 0.0);
        // U_bar = 1 from eps = (sqrt(2), 0, 0) with D11 = 1.
        let eps = [(2.0f64).sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0];
        let xi = compliance_energy(&design, &strains_single(eps, 1, 3), &d, 5).unwrap();
        assert!((xi.xi.values[0] - 9.369).abs() < 1e-12, "{}", xi.xi.values[0]);
    }

    #[test]
    fn compliance_energy_constant_for_patch_state() {
        let grid = build_grid(&[3, 2], &[1.5, 1.0], &[]).unwrap();
        let m = Material::new(1.0, 0.0, 1e-6, 5).unwrap();
        let design = DesignField::full_hard(&grid, m.beta()).unwrap();
        let ndof = grid.n_nodes() * 2;
        let mut bc = BoundaryConditions::none(ndof);
        let mut loads = LoadAssembly::new(ndof);
        for n in 0..grid.n_nodes() {
            let c = grid.node_coords(n);
            if c[0] == 0 {
                bc.fixed[2 * n] = true;
            }
            if c[0] == 3 {
                let w = if c[1] == 0 || c[1] == 2 { 0.25 } else { 0.5 };
                loads.f[2 * n] = w;
            }
        }
        bc.fixed[1] = true;
        let state = assemble(&grid, &design, &m, &[], &loads, &bc, SolverKind::Direct).unwrap();
        let d = state.solve_state().unwrap();
        let strains = element_strains(&grid, &m, &[], &d).unwrap();
        let dmat = constitutive_matrix(&m, 2).unwrap();
        let xi = compliance_energy(&design, &strains, &dmat, m.m).unwrap();
        let first = xi.xi.values[0];
        for v in &xi.xi.values {
            assert!((v - first).abs() < 1e-10 * first.abs());
            assert!(*v >= 0.0);
        }
    }

    #[test]
    fn mechanism_energy_signs_and_symmetry() {
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let beta = 0.2f64;
        let design = DesignField::full_hard(&grid, beta).unwrap();
        let mat = Material::new(1.0, 0.25, beta.powi(3), 3).unwrap();
        let d = constitutive_matrix(&mat, 2).unwrap();
        let n = grid.n_elements();
        let e1 = strains_single([0.7, -0.2, 0.4, 0.0, 0.0, 0.0], n, 3);
        let zero = strains_single([0.0; 6], n, 3);
        let out = mechanism_energy(&design, &e1, &zero, &d, 3).unwrap();
        assert!(out.xi.values.iter().all(|&v| v == 0.0));
        // eps1 == eps2: minus the compliance field, nonpositive.
        let same = mechanism_energy(&design, &e1, &e1, &d, 3).unwrap();
        let compl = compliance_energy(&design, &e1, &d, 3).unwrap();
        for (a, b) in same.xi.values.iter().zip(&compl.xi.values) {
            assert!((a + b).abs() < 1e-14);
            assert!(*a <= 0.0);
        }
        // Swapping the arguments is symmetric.
        let e2 = strains_single([-0.1, 0.5, 0.2, 0.0, 0.0, 0.0], n, 3);
        let ab = mechanism_energy(&design, &e1, &e2, &d, 3).unwrap();
        let ba = mechanism_energy(&design, &e2, &e1, &d, 3).unwrap();
        for (a, b) in ab.xi.values.iter().zip(&ba.xi.values) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-30));
        }
    }

    fn cantilever_3x3() -> (
        crate::mesh::StructuredGrid,
        Material,
        LoadAssembly,
        BoundaryConditions,
    ) {
        let grid = build_grid(&[3, 3], &[1.0, 1.0], &[]).unwrap();
        let m = Material::new(210e9, 0.3, 1e-6, 5).unwrap();
        let ndof = grid.n_nodes() * 2;
        let mut bc = BoundaryConditions::none(ndof);
        for n in 0..grid.n_nodes() {
            if grid.node_coords(n)[0] == 0 {
                bc.fixed[2 * n] = true;
                bc.fixed[2 * n + 1] = true;
            }
        }
        let mut loads = LoadAssembly::new(ndof);
        loads.f[2 * grid.node_index(3, 0, 0) + 1] = -1e6;
        (grid, m, loads, bc)
    }

    #[test]
    fn fd_oracle_zero_for_rigid_problem() {
        let (grid, m, _, _) = cantilever_3x3();
        let ndof = grid.n_nodes() * 2;
        let mut bc = BoundaryConditions::none(ndof);
        bc.fixed.iter_mut().for_each(|f| *f = true);
        let loads = LoadAssembly::new(ndof);
        let design = DesignField::full_hard(&grid, m.beta()).unwrap();
        let g = fd::fd_sensitivity_oracle(
            &grid,
            &design,
            &m,
            &loads,
            &bc,
            fd::FdCost::Compliance,
            4,
            1e-6,
        )
        .unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn fd_oracle_matches_compliance_formula() {
        let (grid, m, loads, bc) = cantilever_3x3();
        let mut design = DesignField::full_hard(&grid, m.beta()).unwrap();
        design.set_soft(4);
        let state = assemble(&grid, &design, &m, &[], &loads, &bc, SolverKind::Direct).unwrap();
        let d = state.solve_state().unwrap();
        let strains = element_strains(&grid, &m, &[], &d).unwrap();
        let dmat = constitutive_matrix(&m, 2).unwrap();
        let _j = compliance(&loads.f, &d);
        for e in [0usize, 4, 8] {
            let chi = design.chi()[e];
            let u_bar = {
                let xi = compliance_energy(&design, &strains, &dmat, m.m).unwrap();
                xi.xi.values[e] / (2.0 * m.m as f64 * (1.0 - design.beta()) * chi.powi(m.m as i32 - 1))
            };
            let formula = -2.0 * m.m as f64 * chi.powi(m.m as i32 - 1) * u_bar;
            let oracle = fd::fd_sensitivity_oracle(
                &grid,
                &design,
                &m,
                &loads,
                &bc,
                fd::FdCost::Compliance,
                e,
                1e-6,
            )
            .unwrap();
            assert!(
                ((oracle - formula) / formula).abs() < 1e-4,
                "element {e}: oracle {oracle} vs formula {formula}"
            );
        }
    }

    #[test]
    fn fd_oracle_matches_mechanism_formula() {
        let (grid, m, mut loads, bc) = cantilever_3x3();
        let nout = grid.node_index(3, 3, 0);
        loads.spring_diag[2 * nout + 1] = 1e10;
        let mut one_vert = vec![0.0; grid.n_nodes() * 2];
        one_vert[2 * nout + 1] = -1.0;
        let design = DesignField::full_hard(&grid, m.beta()).unwrap();
        let state = assemble(&grid, &design, &m, &[], &loads, &bc, SolverKind::Direct).unwrap();
        let (d1, d2) = mechanism_outputs(&state, &one_vert).unwrap();
        let s1 = element_strains(&grid, &m, &[], &d1).unwrap();
        let s2 = element_strains(&grid, &m, &[], &d2).unwrap();
        let dmat = constitutive_matrix(&m, 2).unwrap();
        for e in [1usize, 4, 7] {
            let chi = design.chi()[e];
            let uc = {
                let xi = mechanism_energy(&design, &s1, &s2, &dmat, m.m).unwrap();
                -xi.xi.values[e]
                    / (2.0 * m.m as f64 * (1.0 - design.beta()) * chi.powi(m.m as i32 - 1))
            };
            let formula = 2.0 * m.m as f64 * chi.powi(m.m as i32 - 1) * uc;
            let oracle = fd::fd_sensitivity_oracle(
                &grid,
                &design,
                &m,
                &loads,
                &bc,
                fd::FdCost::Mechanism {
                    one_vert: &one_vert,
                },
                e,
                1e-6,
            )
            .unwrap();
            assert!(
                ((oracle - formula) / formula).abs() < 1e-4,
                "element {e}: oracle {oracle} vs formula {formula}"
            );
        }
    }

    #[test]
    fn load_scaling_scales_energy_quadratically() {
        let (grid, m, loads, bc) = cantilever_3x3();
        let design = DesignField::full_hard(&grid, m.beta()).unwrap();
        let dmat = constitutive_matrix(&m, 2).unwrap();
        let xi_of = |scale: f64| -> Vec<f64> {
            let mut l = loads.clone();
            l.f.iter_mut().for_each(|v| *v *= scale);
            let state = assemble(&grid, &design, &m, &[], &l, &bc, SolverKind::Direct).unwrap();
            let d = state.solve_state().unwrap();
            let strains = element_strains(&grid, &m, &[], &d).unwrap();
            compliance_energy(&design, &strains, &dmat, m.m)
                .unwrap()
                .xi
                .values
        };
        let base = xi_of(1.0);
        let scaled = xi_of(3.0);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((9.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-30));
        }
    }
}

// Temporary experiment switch, removed before finalizing.
pub static USE_GRADED_CUTS: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(true);
