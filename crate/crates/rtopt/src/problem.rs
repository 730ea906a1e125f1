//! Problem bundles consumed by the optimization drivers: grid, material,
//! loads, constraints and run settings, plus the builders that turn
//! region-based specifications into assembled load vectors.

use crate::elasticity::{BoundaryConditions, LoadAssembly, Material};
use crate::mesh::{Region, StructuredGrid};
use crate::solver::SolverKind;
use crate::{Error, Result};

/// Cost functional being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Mean compliance `f^T d`.
    Compliance,
    /// Mechanism output `-d^T 1_vert`.
    Mechanism,
}

/// Displacement constraint on a region.
#[derive(Debug, Clone)]
pub struct FixSpec {
    pub region: Region,
    /// Which displacement components are fixed.
    pub dofs: [bool; 3],
}

/// Constant traction (N/m^2) on tagged boundary faces, lumped consistently.
#[derive(Debug, Clone)]
pub struct TractionSpec {
    pub region: Region,
    pub traction: [f64; 3],
}

/// Concentrated force (N) applied to every node of the region.
#[derive(Debug, Clone)]
pub struct PointLoadSpec {
    pub region: Region,
    pub force: [f64; 3],
}

/// Distributed spring (N/m^3, stiffness per unit boundary area) acting on
/// one displacement component of a boundary region; converted to nodal
/// springs by tributary area.
#[derive(Debug, Clone)]
pub struct SpringSpec {
    pub region: Region,
    pub stiffness_per_area: f64,
    pub axis: usize,
}

/// Output-port definition of a mechanism: unit forces along `direction` at
/// every node of the region build the `1_vert` vector.
#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub region: Region,
    pub direction: [f64; 3],
}

/// Full physics description of one benchmark problem.
pub struct Problem {
    pub grid: StructuredGrid,
    pub material: Material,
    pub kind: ProblemKind,
    pub loads: LoadAssembly,
    pub bc: BoundaryConditions,
    pub one_vert: Option<Vec<f64>>,
}

impl Problem {
    pub fn beta(&self) -> f64 {
        self.material.beta()
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.loads.validate()?;
        if self.bc.n_fixed() == 0 {
            return Err(Error::RigidBodyMotion(
                "problem has no displacement constraints".into(),
            ));
        }
        if self.kind == ProblemKind::Mechanism && self.one_vert.is_none() {
            return Err(Error::InvalidConfig(
                "mechanism problems need an output port (1_vert)".into(),
            ));
        }
        Ok(())
    }
}

/// Assemble a [`Problem`] from region-based specifications.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    grid: StructuredGrid,
    material: Material,
    kind: ProblemKind,
    fixes: &[FixSpec],
    tractions: &[TractionSpec],
    point_loads: &[PointLoadSpec],
    springs: &[SpringSpec],
    body_force: Option<[f64; 3]>,
    output: Option<&OutputSpec>,
) -> Result<Problem> {
    let ndim = grid.ndim();
    let ndof = grid.n_nodes() * ndim;
    let mut bc = BoundaryConditions::none(ndof);
    for fix in fixes {
        let tag = grid.resolve_region(&fix.region);
        if tag.nodes.is_empty() {
            return Err(Error::InvalidConfig(
                "a fix region matched no nodes".into(),
            ));
        }
        for &n in &tag.nodes {
            for c in 0..ndim {
                if fix.dofs[c] {
                    bc.fixed[n * ndim + c] = true;
                }
            }
        }
    }
    let mut loads = LoadAssembly::new(ndof);
    for tr in tractions {
        let tag = grid.resolve_region(&tr.region);
        if tag.faces.is_empty() {
            return Err(Error::InvalidConfig(
                "a traction region matched no boundary faces".into(),
            ));
        }
        for face in &tag.faces {
            let share = face.measure / face.nodes.len() as f64;
            for &n in &face.nodes {
                for c in 0..ndim {
                    loads.f[n * ndim + c] += tr.traction[c] * share;
                }
            }
        }
    }
    for pl in point_loads {
        let tag = grid.resolve_region(&pl.region);
        if tag.nodes.is_empty() {
            return Err(Error::InvalidConfig(
                "a point-load region matched no nodes".into(),
            ));
        }
        for &n in &tag.nodes {
            for c in 0..ndim {
                loads.f[n * ndim + c] += pl.force[c];
            }
        }
    }
    if let Some(b) = body_force {
        let share = grid.element_volume() / grid.nodes_per_element() as f64;
        for e in 0..grid.n_elements() {
            for n in grid.element_nodes(e) {
                for c in 0..ndim {
                    loads.f[n * ndim + c] += b[c] * share;
                }
            }
        }
    }
    for sp in springs {
        if sp.axis >= ndim {
            return Err(Error::InvalidConfig(format!(
                "spring axis {} out of range",
                sp.axis
            )));
        }
        if sp.stiffness_per_area < 0.0 {
            return Err(Error::InvalidConfig("negative spring stiffness".into()));
        }
        let tag = grid.resolve_region(&sp.region);
        if tag.faces.is_empty() {
            return Err(Error::InvalidConfig(
                "a spring region matched no boundary faces".into(),
            ));
        }
        let trib = tag.tributary(grid.n_nodes());
        for &n in &tag.nodes {
            loads.spring_diag[n * ndim + sp.axis] += sp.stiffness_per_area * trib[n];
        }
    }
    let one_vert = match output {
        Some(spec) => {
            let tag = grid.resolve_region(&spec.region);
            if tag.nodes.is_empty() {
                return Err(Error::InvalidConfig(
                    "the output region matched no nodes".into(),
                ));
            }
            let mut v = vec![0.0; ndof];
            for &n in &tag.nodes {
                for c in 0..ndim {
                    v[n * ndim + c] = spec.direction[c];
                }
            }
            Some(v)
        }
        None => None,
    };
    let problem = Problem {
        grid,
        material,
        kind,
        loads,
        bc,
        one_vert,
    };
    problem.validate()?;
    Ok(problem)
}

/// Convergence tolerances of the fixed-point drivers.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Topology tolerance on the L2 norm of the chi increment.
    pub chi: f64,
    /// Lagrange multiplier tolerance (levelset convergence and the
    /// secondary bracket criterion).
    pub lambda: f64,
    /// Volume-constraint tolerance of the bisection.
    pub constraint: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            chi: 1e-1,
            lambda: 1e-1,
            constraint: 1e-5,
        }
    }
}

/// Level-set driver settings.
#[derive(Debug, Clone, Copy)]
pub struct LevelSetSettings {
    /// Fixed step size; `None` selects the adaptive step that caps the
    /// largest per-iteration phi update at 0.1.
    pub k: Option<f64>,
    /// Augmented-Lagrangian penalty on the (normalized) constraint.
    pub rho: f64,
    /// Iteration cap per time step.
    pub max_iterations: usize,
}

impl Default for LevelSetSettings {
    fn default() -> Self {
        LevelSetSettings {
            k: None,
            rho: 1.0,
            max_iterations: 5000,
        }
    }
}

/// Run configuration shared by both drivers.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    /// Per-axis smoothing intensity; `epsilon_i = tau_i * h_i`.
    pub tau: [f64; 3],
    pub tolerances: Tolerances,
    pub solver: SolverKind,
    /// Fixed-point iteration cap per time step.
    pub max_iterations: usize,
    /// When false, reported wall times are zero so that output files are
    /// byte-reproducible.
    pub measure_time: bool,
    pub levelset: LevelSetSettings,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            tau: [1.0, 1.0, 1.0],
            tolerances: Tolerances::default(),
            solver: SolverKind::Direct,
            max_iterations: 500,
            measure_time: true,
            levelset: LevelSetSettings::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, Side};

    #[test]
    fn build_problem_assembles_loads_and_bcs() {
        let grid = build_grid(&[4, 2], &[2.0, 1.0], &[]).unwrap();
        let material = Material::new(210e9, 0.3, 1e-6, 5).unwrap();
        let problem = build_problem(
            grid,
            material,
            ProblemKind::Compliance,
            &[FixSpec {
                region: Region::on_face(0, Side::Low),
                dofs: [true, true, false],
            }],
            &[TractionSpec {
                region: Region::on_face(0, Side::High),
                traction: [0.0, -2.0, 0.0],
            }],
            &[],
            &[],
            None,
            None,
        )
        .unwrap();
        // 3 clamped nodes x 2 dofs.
        assert_eq!(problem.bc.n_fixed(), 6);
        // Total traction force: -2 N/m^2 x 1 m edge x 1 m thickness.
        let total: f64 = problem.loads.f.iter().sum();
        assert!((total + 2.0).abs() < 1e-12);
        // Consistent lumping: interior edge node carries double the corner share.
        let ndim = 2;
        let mid = problem.grid.node_index(4, 1, 0);
        let corner = problem.grid.node_index(4, 0, 0);
        assert!((problem.loads.f[mid * ndim + 1] - 2.0 * problem.loads.f[corner * ndim + 1]).abs() < 1e-12);
    }

    #[test]
    fn mechanism_requires_output() {
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let material = Material::new(1.0, 0.3, 1e-2, 3).unwrap();
        let err = build_problem(
            grid,
            material,
            ProblemKind::Mechanism,
            &[FixSpec {
                region: Region::on_face(0, Side::Low),
                dofs: [true, true, false],
            }],
            &[],
            &[],
            &[],
            None,
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn spring_uses_tributary_area() {
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let material = Material::new(1.0, 0.3, 1e-2, 3).unwrap();
        let problem = build_problem(
            grid,
            material,
            ProblemKind::Compliance,
            &[FixSpec {
                region: Region::on_face(0, Side::Low),
                dofs: [true, true, false],
            }],
            &[],
            &[],
            &[SpringSpec {
                region: Region::on_face(0, Side::High),
                stiffness_per_area: 10.0,
                axis: 0,
            }],
            None,
            None,
        )
        .unwrap();
        let ndim = 2;
        let corner = problem.grid.node_index(2, 0, 0);
        let mid = problem.grid.node_index(2, 1, 0);
        assert!((problem.loads.spring_diag[corner * ndim] - 2.5).abs() < 1e-12);
        assert!((problem.loads.spring_diag[mid * ndim] - 5.0).abs() < 1e-12);
    }
}
