//! Hamilton-Jacobi level-set baseline driven by the same relaxed
//! topological derivatives as the closed-form driver.
//!
//! The level-set function lives per element, clamped to [-1, 1]; the
//! design is its relaxed Heaviside. The pointwise update is
//! `phi <- phi - k (1/Delta chi) dL/dchi` with
//! `dL/dchi = (lambda - xi_tau) sgn(Delta chi)`, and the multiplier
//! follows the augmented-Lagrangian rule `lambda <- lambda + rho C`. The
//! volume constraint is therefore only satisfied at convergence, which is
//! the methodological difference the iteration-count comparison measures.
//!
//! Energies are normalized by the same `Delta_norm` constant as the
//! closed-form path (no shift: the update uses the raw RTD of the cost).

use std::time::Instant;

use crate::geometry::{classify_and_measure, ElemPhase, TopologySnapshot};
use crate::mesh::{element_to_nodal, DesignField, FieldLocation, ScalarField, StructuredGrid};
use crate::optimizer::{solve_and_energy, IterationRecord, RunHistory, StepRecord, TimeSchedule};
use crate::problem::{Problem, RunSettings};
use crate::sensitivity::{sign_delta_chi, PointPhase};
use crate::{Error, Result};

/// Mutable level-set driver state.
pub struct LevelSetState {
    /// Per-element level-set values in [-1, 1].
    pub phi: Vec<f64>,
    pub lambda: f64,
    pub design: DesignField,
    /// Energy normalization frozen at the first step.
    pub norm: f64,
}

impl LevelSetState {
    fn sync_design(&mut self, grid: &StructuredGrid, beta: f64) -> Result<()> {
        let hard: Vec<bool> = self.phi.iter().map(|&p| p >= 0.0).collect();
        self.design = DesignField::from_hard_mask(grid, beta, &hard)?;
        Ok(())
    }

    pub fn soft_volume_fraction(&self, grid: &StructuredGrid) -> f64 {
        let soft = self
            .design
            .chi()
            .iter()
            .filter(|&&c| c != 1.0)
            .count();
        soft as f64 * grid.element_volume() / grid.domain_volume()
    }
}

/// One pointwise Hamilton-Jacobi update:
/// `phi[e] -= k / Delta_chi[e] * dL/dchi[e]`, clamp to [-1, 1], then
/// re-evaluate the design as the relaxed Heaviside of phi.
///
/// `xi_smoothed` is the element-located smoothed (normalized) energy;
/// `dL/dchi = -xi sgn + lambda sgn` is assembled here from the RTD pieces.
pub fn hj_update(
    state: &mut LevelSetState,
    grid: &StructuredGrid,
    xi_smoothed: &ScalarField,
    k: f64,
) -> Result<()> {
    if xi_smoothed.location != FieldLocation::Element
        || xi_smoothed.values.len() != grid.n_elements()
    {
        return Err(Error::InvalidField(
            "hj_update expects an element field".into(),
        ));
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidConfig(format!("invalid step size k = {k}")));
    }
    let beta = state.design.beta();
    let one_minus_beta = 1.0 - beta;
    for e in 0..grid.n_elements() {
        let phase = if state.design.is_hard(e) {
            PointPhase::Plus
        } else {
            PointPhase::Minus
        };
        let sgn = sign_delta_chi(phase);
        let dchi = one_minus_beta * sgn;
        let dl = (state.lambda - xi_smoothed.values[e]) * sgn;
        let update = -k * dl / dchi;
        if !update.is_finite() {
            return Err(Error::Solver(format!(
                "non-finite level-set update at element {e}"
            )));
        }
        state.phi[e] = (state.phi[e] + update).clamp(-1.0, 1.0);
    }
    state.sync_design(grid, beta)
}

/// Augmented-Lagrangian multiplier update:
/// `lambda += rho * (t - |Omega-|/|Omega|)`. Returns the constraint value
/// used.
pub fn augmented_lagrangian_update(
    state: &mut LevelSetState,
    volume_fraction_soft: f64,
    t: f64,
    rho: f64,
) -> f64 {
    let c = t - volume_fraction_soft;
    state.lambda += rho * c;
    c
}

/// The level-set driver over a shared schedule, producing records of the
/// same shape as the closed-form driver's.
pub struct LevelSetDriver<'a> {
    problem: &'a Problem,
    settings: &'a RunSettings,
    smoother: crate::filter::SmoothingOperator,
    pub state: LevelSetState,
}

impl<'a> LevelSetDriver<'a> {
    pub fn new(problem: &'a Problem, settings: &'a RunSettings) -> Result<Self> {
        problem.validate()?;
        let grid = &problem.grid;
        let smoother = crate::filter::SmoothingOperator::build(grid, settings.tau)?;
        let design = DesignField::full_hard(grid, problem.beta())?;
        let solved = solve_and_energy(problem, settings, &design, &[], None)?;
        let mut norm = (solved.xi.xi.max() - solved.xi.xi.min()).abs();
        if norm == 0.0 {
            log::warn!("degenerate initial energy field; level-set normalization set to 1");
            norm = 1.0;
        }
        Ok(LevelSetDriver {
            problem,
            settings,
            smoother,
            state: LevelSetState {
                phi: vec![1.0; grid.n_elements()],
                lambda: 0.0,
                design,
                norm,
            },
        })
    }

    /// Smoothed normalized energy of the current design, element-located.
    pub fn smoothed_energy(&self) -> Result<ScalarField> {
        let solved = solve_and_energy(self.problem, self.settings, &self.state.design, &[], None)?;
        self.smoothed_energy_of(&solved.xi.xi)
    }

    fn smoothed_energy_of(&self, xi_raw: &ScalarField) -> Result<ScalarField> {
        let grid = &self.problem.grid;
        let normalized = ScalarField {
            location: FieldLocation::Element,
            values: xi_raw.values.iter().map(|v| v / self.state.norm).collect(),
        };
        let nodal = self.smoother.smooth(grid, &normalized)?;
        crate::mesh::nodal_to_element(grid, &nodal)
    }

    /// Effective step size: the configured constant, or the adaptive value
    /// capping the largest pointwise update at 0.1.
    fn effective_k(&self, xi_smoothed: &ScalarField) -> f64 {
        if let Some(k) = self.settings.levelset.k {
            return k;
        }
        let beta = self.state.design.beta();
        let mut max_u: f64 = 0.0;
        for e in 0..xi_smoothed.values.len() {
            let u = (xi_smoothed.values[e] - self.state.lambda).abs() / (1.0 - beta);
            max_u = max_u.max(u);
        }
        if max_u > 0.0 {
            0.1 / max_u
        } else {
            0.0
        }
    }

    pub fn step(&mut self, step_idx: usize, t: f64) -> Result<StepRecord> {
        let started = Instant::now();
        let grid = &self.problem.grid;
        let domain = grid.domain_volume();
        let tol = self.settings.tolerances;
        let rho = self.settings.levelset.rho;
        let mut iteration_log = Vec::new();
        let mut converged = false;
        for i in 1..=self.settings.levelset.max_iterations {
            let solved =
                solve_and_energy(self.problem, self.settings, &self.state.design, &[], None)?;
            let cost = solved.cost;
            let xi_s = self.smoothed_energy_of(&solved.xi.xi)?;
            let k = self.effective_k(&xi_s);
            let prev_design = self.state.design.clone();
            let frac_before = self.state.soft_volume_fraction(grid);
            hj_update(&mut self.state, grid, &xi_s, k)?;
            let c = augmented_lagrangian_update(&mut self.state, frac_before, t, rho);
            let delta = self.state.design.l2_distance(&prev_design, grid);
            iteration_log.push(IterationRecord {
                iteration: i,
                chi_delta_l2: delta,
                lambda_hat: self.state.lambda,
                constraint: c,
                cost,
            });
            if delta <= tol.chi && (rho * c).abs() <= tol.lambda {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "level-set step {step_idx} (t = {t}) did not converge in {} iterations",
                self.settings.levelset.max_iterations
            )));
        }
        // Final consistent solve and export fields.
        let solved = solve_and_energy(self.problem, self.settings, &self.state.design, &[], None)?;
        let cost = solved.cost;
        let xi_s = self.smoothed_energy_of(&solved.xi.xi)?;
        let phi_nodal = element_to_nodal(
            grid,
            &ScalarField {
                location: FieldLocation::Element,
                values: self.state.phi.clone(),
            },
        )?;
        // Interface extracted from the nodal projection of phi, for
        // visualization; volume bookkeeping stays element-wise, matching
        // the constraint the driver actually enforces.
        let vis = classify_and_measure(grid, &phi_nodal, 0.0)?;
        let soft_frac = self.state.soft_volume_fraction(grid);
        let phases: Vec<ElemPhase> = self
            .state
            .design
            .chi()
            .iter()
            .map(|&c| if c == 1.0 { ElemPhase::Hard } else { ElemPhase::Soft })
            .collect();
        let snapshot = TopologySnapshot {
            vol_plus: (1.0 - soft_frac) * domain,
            vol_minus: soft_frac * domain,
            interface_measure: vis.snapshot.interface_measure,
            triangles: vis.snapshot.triangles,
            segments: vis.snapshot.segments,
            phases,
        };
        let wall_ms = if self.settings.measure_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(StepRecord {
            step: step_idx,
            t,
            lambda_hat: self.state.lambda,
            cost,
            vol_hard_frac: 1.0 - soft_frac,
            vol_soft_frac: soft_frac,
            iterations: iteration_log.len(),
            wall_ms,
            iteration_log,
            chi: self.state.design.chi().to_vec(),
            psi_tau: element_to_nodal(grid, &xi_s)?.values,
            xi: solved.xi.xi.values,
            design_hash: self.state.design.content_hash(),
            snapshot,
        })
    }

    pub fn run_with(
        &mut self,
        schedule: &TimeSchedule,
        mut sink: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<RunHistory> {
        let mut history = RunHistory::default();
        for (idx, &t) in schedule.times().iter().enumerate() {
            let record = self.step(idx, t)?;
            sink(&record)?;
            history.steps.push(record);
        }
        Ok(history)
    }
}

/// Convenience wrapper mirroring `optimizer::run`.
pub fn run_levelset(
    problem: &Problem,
    settings: &RunSettings,
    schedule: &TimeSchedule,
) -> Result<RunHistory> {
    LevelSetDriver::new(problem, settings)?.run_with(schedule, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    fn toy_state(grid: &StructuredGrid) -> LevelSetState {
        LevelSetState {
            phi: vec![1.0; grid.n_elements()],
            lambda: 0.0,
            design: DesignField::full_hard(grid, 0.2).unwrap(),
            norm: 1.0,
        }
    }

    #[test]
    fn hj_update_stationary_and_identity() {
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let mut state = toy_state(&grid);
        // dL/dchi = 0 everywhere: lambda = 0 and xi = 0.
        let xi = ScalarField::constant(&grid, FieldLocation::Element, 0.0);
        hj_update(&mut state, &grid, &xi, 0.5).unwrap();
        assert!(state.phi.iter().all(|&p| p == 1.0));
        // k = 0 leaves phi unchanged for any field.
        let xi = ScalarField::element(&grid, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        hj_update(&mut state, &grid, &xi, 0.0).unwrap();
        assert!(state.phi.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn hj_update_single_element_hand_value() {
        let grid = build_grid(&[1, 1], &[1.0, 1.0], &[]).unwrap();
        let mut state = toy_state(&grid);
        state.phi[0] = 0.3;
        state.lambda = 0.25;
        let xi_val = -0.4;
        let k = 0.05;
        let beta = 0.2;
        // Hard element: sgn = -1, Delta chi = -(1-beta).
        // dL = (lambda - xi) * sgn = -(0.25 + 0.4) = -0.65.
        // update = -k * dL / Delta chi = -(0.05)(-0.65)/(-(0.8)) = -0.040625.
        let expected = 0.3 - k * (0.25 - xi_val) / (1.0 - beta);
        let xi = ScalarField::element(&grid, vec![xi_val]).unwrap();
        hj_update(&mut state, &grid, &xi, k).unwrap();
        assert!((state.phi[0] - expected).abs() < 1e-12, "{}", state.phi[0]);
        // Went down but not past the clamp; still hard.
        assert!(state.design.is_hard(0));
    }

    #[test]
    fn hj_update_clamps_phi() {
        let grid = build_grid(&[1, 1], &[1.0, 1.0], &[]).unwrap();
        let mut state = toy_state(&grid);
        let xi = ScalarField::element(&grid, vec![50.0]).unwrap();
        hj_update(&mut state, &grid, &xi, 10.0).unwrap();
        assert_eq!(state.phi[0], 1.0);
        let xi = ScalarField::element(&grid, vec![-50.0]).unwrap();
        hj_update(&mut state, &grid, &xi, 10.0).unwrap();
        assert_eq!(state.phi[0], -1.0);
        assert!(!state.design.is_hard(0));
    }

    #[test]
    fn augmented_lagrangian_arithmetic() {
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let mut state = toy_state(&grid);
        let c = augmented_lagrangian_update(&mut state, 0.4, 0.4, 1.0);
        assert_eq!(c, 0.0);
        assert_eq!(state.lambda, 0.0);
        let c = augmented_lagrangian_update(&mut state, 0.3, 0.4, 1.0);
        assert!((c - 0.1).abs() < 1e-15);
        assert!((state.lambda - 0.1).abs() < 1e-15);
    }

    #[test]
    fn augmented_lagrangian_converges_on_staircase() {
        // Synthetic monotone staircase volume response: |Omega-|(lambda)
        // quantized to 1/20. Repeated updates settle below the staircase
        // resolution.
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let mut state = toy_state(&grid);
        let t = 0.43;
        let volume_of = |lambda: f64| -> f64 { (lambda.clamp(0.0, 1.0) * 20.0).round() / 20.0 };
        let mut c = f64::INFINITY;
        for _ in 0..200 {
            let vol = volume_of(state.lambda);
            c = augmented_lagrangian_update(&mut state, vol, t, 1.0);
        }
        assert!(c.abs() <= 0.05, "final constraint {c}");
    }
}
