//! Pseudo-time sequential driver with the closed-form cutting solution.
//!
//! Every time step solves the fixed-point problem
//!
//! 1. solve the elastic state problem(s) for the current design,
//! 2. build the energy field `xi`,
//! 3. apply the frozen shift/normalization from the first step,
//! 4. Laplacian-smooth the normalized field to nodal values,
//! 5. find the cut level `lambda` enforcing the volume constraint
//!    `C = t - |Omega-|/|Omega| = 0` by bracketed regula falsi,
//! 6. cut: the new design is the super-level set of the smoothed field,
//!
//! until the L2 norm of the design increment drops below the topology
//! tolerance. The volume constraint is met (to its own tolerance) at every
//! iteration, not only at convergence.

use std::time::Instant;

use crate::elasticity::{
    assemble, compliance, constitutive_matrix, element_strains, mechanism_outputs,
};
use crate::filter::SmoothingOperator;
use crate::geometry::{
    classify_and_measure, classify_volumes, Classification, CutElementData, ElemPhase,
    TopologySnapshot,
};
use crate::mesh::{element_to_nodal, DesignField, FieldLocation, ScalarField, StructuredGrid};
use crate::problem::{Problem, ProblemKind, RunSettings};
use crate::sensitivity::{compliance_energy_with_cuts, mechanism_energy_with_cuts, EnergyField};
use crate::{Error, Result};

/// Pseudo-time schedule: strictly increasing values in [0, 1] starting at
/// `t0`.
#[derive(Debug, Clone)]
pub struct TimeSchedule {
    times: Vec<f64>,
}

impl TimeSchedule {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidConfig("empty schedule".into()));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig("schedule must be increasing".into()));
            }
        }
        if times[0] < 0.0 || *times.last().unwrap() > 1.0 {
            return Err(Error::InvalidConfig("schedule must lie in [0,1]".into()));
        }
        Ok(TimeSchedule { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Truncate to `cap`: keep entries below `cap` and end with exactly
    /// `cap`.
    pub fn truncated(&self, cap: f64) -> Result<TimeSchedule> {
        if cap <= self.times[0] || cap > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "truncation time {cap} outside the schedule range"
            )));
        }
        let mut times: Vec<f64> = self
            .times
            .iter()
            .cloned()
            .filter(|&t| t < cap - 1e-12)
            .collect();
        times.push(cap);
        TimeSchedule::from_times(times)
    }
}

/// Exponentially spaced schedule
/// `t_i = t0 + (T - t0) (1 - e^(K i / n)) / (1 - e^K)`, `i = 0..=n`.
/// `K = 0` degenerates to uniform spacing (with a warning).
pub fn make_schedule(n: usize, k: f64, t0: f64, t_end: f64) -> Result<TimeSchedule> {
    if n < 1 {
        return Err(Error::InvalidConfig("schedule needs n >= 1".into()));
    }
    if !(0.0..1.0).contains(&t0) || t_end <= t0 || t_end > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "schedule range [{t0}, {t_end}] invalid"
        )));
    }
    let mut times = Vec::with_capacity(n + 1);
    if k == 0.0 {
        log::warn!("schedule exponent K = 0; using uniform spacing");
        for i in 0..=n {
            times.push(t0 + (t_end - t0) * i as f64 / n as f64);
        }
    } else {
        let denom = 1.0 - k.exp();
        for i in 0..=n {
            times.push(t0 + (t_end - t0) / denom * (1.0 - (k * i as f64 / n as f64).exp()));
        }
    }
    times[0] = t0;
    times[n] = t_end;
    TimeSchedule::from_times(times)
}

/// One inner iteration of the fixed-point loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `||chi_(i+1) - chi_i||_{L2(Omega)}`.
    pub chi_delta_l2: f64,
    pub lambda_hat: f64,
    /// Volume constraint value `t - |Omega-|/|Omega|` after the cut.
    pub constraint: f64,
    /// Cost of the state solved at the start of the iteration.
    pub cost: f64,
}

/// Converged result at one schedule time.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub lambda_hat: f64,
    /// Cost of the converged design.
    pub cost: f64,
    pub vol_hard_frac: f64,
    pub vol_soft_frac: f64,
    pub iterations: usize,
    pub wall_ms: u64,
    pub iteration_log: Vec<IterationRecord>,
    pub snapshot: TopologySnapshot,
    /// Converged two-valued design values per element.
    pub chi: Vec<f64>,
    /// Smoothed normalized energy of the converged design (nodal).
    pub psi_tau: Vec<f64>,
    /// Raw energy field of the converged design (per element).
    pub xi: Vec<f64>,
    pub design_hash: u64,
}

/// Full run output: one record per schedule entry.
#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    pub steps: Vec<StepRecord>,
}

/// Mutable optimizer state between steps.
pub struct OptimizerState {
    pub design: DesignField,
    pub lambda_hat: f64,
    /// Shift frozen from the first-step energy field.
    pub shift: f64,
    /// Normalization frozen from the first-step energy field.
    pub norm: f64,
    pub classification: Classification,
    /// Phase of the discrimination function at each Gauss sampling point
    /// of each element (`true` = hard), from the latest cut.
    pub gauss_phases: Vec<bool>,
}

/// Sampling points per axis used to integrate the chi-increment norm.
const NORM_SAMPLES_PER_AXIS: usize = 4;

fn norm_samples_per_element(ndim: usize) -> usize {
    NORM_SAMPLES_PER_AXIS.pow(ndim as u32)
}

/// Phase of `psi = field - iso` on a regular sampling lattice inside every
/// element (cell-midpoint rule per axis), by multilinear interpolation of
/// the nodal field; `psi >= 0` counts as hard. Used to integrate the
/// L2 norm of characteristic-function increments at sub-element
/// resolution.
pub fn sample_phases(grid: &StructuredGrid, field: &ScalarField, iso: f64) -> Vec<bool> {
    let ndim = grid.ndim();
    let ns = NORM_SAMPLES_PER_AXIS;
    let per_elem = norm_samples_per_element(ndim);
    let mut bits = Vec::with_capacity(grid.n_elements() * per_elem);
    // Midpoint lattice in reference coordinates [0, 1].
    let pts: Vec<f64> = (0..ns).map(|i| (i as f64 + 0.5) / ns as f64).collect();
    let mut corner_vals = [0.0f64; 8];
    for e in 0..grid.n_elements() {
        let nodes = grid.element_nodes(e);
        for (a, &n) in nodes.iter().enumerate() {
            corner_vals[a] = field.values[n];
        }
        if ndim == 2 {
            for &y in &pts {
                for &x in &pts {
                    let v = corner_vals[0] * (1.0 - x) * (1.0 - y)
                        + corner_vals[1] * x * (1.0 - y)
                        + corner_vals[2] * x * y
                        + corner_vals[3] * (1.0 - x) * y;
                    bits.push(v - iso >= 0.0);
                }
            }
        } else {
            for &z in &pts {
                for &y in &pts {
                    for &x in &pts {
                        let v = (corner_vals[0] * (1.0 - x) * (1.0 - y)
                            + corner_vals[1] * x * (1.0 - y)
                            + corner_vals[2] * x * y
                            + corner_vals[3] * (1.0 - x) * y)
                            * (1.0 - z)
                            + (corner_vals[4] * (1.0 - x) * (1.0 - y)
                                + corner_vals[5] * x * (1.0 - y)
                                + corner_vals[6] * x * y
                                + corner_vals[7] * (1.0 - x) * y)
                                * z;
                        bits.push(v - iso >= 0.0);
                    }
                }
            }
        }
    }
    bits
}

/// `L2(Omega)` norm of the change of the two-valued characteristic
/// function: each sampling point that changed side contributes
/// `(1 - beta)^2` times its lattice volume.
pub fn chi_delta_l2(
    grid: &StructuredGrid,
    old_phases: &[bool],
    new_phases: &[bool],
    beta: f64,
) -> f64 {
    let per_elem = norm_samples_per_element(grid.ndim());
    let w = grid.element_volume() / per_elem as f64;
    let flips = old_phases
        .iter()
        .zip(new_phases)
        .filter(|(a, b)| a != b)
        .count();
    ((1.0 - beta) * (1.0 - beta) * flips as f64 * w).sqrt()
}

pub(crate) struct Solved {
    pub d1: Vec<f64>,
    pub cost: f64,
    pub xi: EnergyField,
}

/// Solve the state problem(s) for a design and build its energy field.
pub(crate) fn solve_and_energy(
    problem: &Problem,
    settings: &RunSettings,
    design: &DesignField,
    cuts: &[Option<CutElementData>],
    warm: Option<&[f64]>,
) -> Result<Solved> {
    let grid = &problem.grid;
    let state = assemble(
        grid,
        design,
        &problem.material,
        cuts,
        &problem.loads,
        &problem.bc,
        settings.solver,
    )?;
    let d = constitutive_matrix(&problem.material, grid.ndim())?;
    match problem.kind {
        ProblemKind::Compliance => {
            let d1 = state.solve_warm(&problem.loads.f, warm)?;
            let cost = compliance(&problem.loads.f, &d1);
            let strains = element_strains(grid, &problem.material, cuts, &d1)?;
            let xi =
                compliance_energy_with_cuts(design, &strains, &d, problem.material.m, cuts)?;
            Ok(Solved { d1, cost, xi })
        }
        ProblemKind::Mechanism => {
            let one_vert = problem.one_vert.as_ref().ok_or_else(|| {
                Error::InvalidConfig("mechanism problem without 1_vert".into())
            })?;
            let (d1, d2) = mechanism_outputs(&state, one_vert)?;
            let cost = -compliance(one_vert, &d1);
            let s1 = element_strains(grid, &problem.material, cuts, &d1)?;
            let s2 = element_strains(grid, &problem.material, cuts, &d2)?;
            let xi =
                mechanism_energy_with_cuts(design, &s1, &s2, &d, problem.material.m, cuts)?;
            Ok(Solved { d1, cost, xi })
        }
    }
}

/// Apply the frozen shift (hard-phase elements only) and normalization
/// (everywhere) to an energy field.
pub fn shift_normalize(
    xi: &ScalarField,
    design: &DesignField,
    shift: f64,
    norm: f64,
) -> ScalarField {
    let values = xi
        .values
        .iter()
        .enumerate()
        .map(|(e, &v)| {
            if design.is_hard(e) {
                (v - shift) / norm
            } else {
                v / norm
            }
        })
        .collect();
    ScalarField {
        location: xi.location,
        values,
    }
}

/// Normalized multiplier corresponding to a raw multiplier.
pub fn lambda_hat_of(lambda: f64, shift: f64, norm: f64) -> f64 {
    (lambda - shift) / norm
}

/// Build the two-valued design from a cut classification. Full-phase
/// elements take the phase value; cut elements take the sign of the
/// centroid value of `psi = xi_tau_hat - lambda_hat` (zero counts as
/// hard).
pub fn design_from_cut(
    grid: &StructuredGrid,
    xi_tau_hat: &ScalarField,
    lambda_hat: f64,
    beta: f64,
    classification: &Classification,
) -> Result<DesignField> {
    let nen = grid.nodes_per_element() as f64;
    let hard: Vec<bool> = (0..grid.n_elements())
        .map(|e| match classification.phases()[e] {
            ElemPhase::Hard => true,
            ElemPhase::Soft => false,
            ElemPhase::Cut => {
                let mean: f64 = grid
                    .element_nodes(e)
                    .iter()
                    .map(|&n| xi_tau_hat.values[n])
                    .sum::<f64>()
                    / nen;
                mean - lambda_hat >= 0.0
            }
        })
        .collect();
    DesignField::from_hard_mask(grid, beta, &hard)
}

/// Cut a smoothed field at a given level: classification plus the updated
/// design.
pub fn cut(
    grid: &StructuredGrid,
    xi_tau_hat: &ScalarField,
    lambda_hat: f64,
    beta: f64,
) -> Result<(DesignField, Classification)> {
    let classification = classify_and_measure(grid, xi_tau_hat, lambda_hat)?;
    let design = design_from_cut(grid, xi_tau_hat, lambda_hat, beta, &classification)?;
    Ok((design, classification))
}

/// Find the cut level enforcing `phi(lambda) = t - |Omega-|/|Omega| = 0`
/// on the smoothed nodal field, by bracketing plus Illinois-damped regula
/// falsi. Accepts on `|phi| <= tol_c`; a collapsed bracket is accepted as
/// the alternative criterion (with a warning, since the volume function is
/// continuous here and this indicates a plateau).
pub fn bisect_lambda(
    grid: &StructuredGrid,
    xi_tau_hat: &ScalarField,
    t: f64,
    tol_c: f64,
    warm: Option<f64>,
) -> Result<(f64, Classification)> {
    if xi_tau_hat.location != FieldLocation::Nodal {
        return Err(Error::InvalidField("bisection expects a nodal field".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Bisection(format!("t = {t} outside [0,1]")));
    }
    let domain = grid.domain_volume();
    let phi = |lambda: f64| -> Result<f64> {
        let c = classify_volumes(grid, xi_tau_hat, lambda)?;
        Ok(t - c.snapshot.vol_minus / domain)
    };
    let fmin = xi_tau_hat.min();
    let fmax = xi_tau_hat.max();
    let range = (fmax - fmin).max(1e-12);
    let pad = 1e-9 * range;
    let gmin = fmin - pad;
    let gmax = fmax + pad;

    // Bracket: warm start around the previous level, doubled until the
    // sign changes, falling back to the guaranteed global bracket.
    let (mut lo, mut hi) = (gmin, gmax);
    if let Some(w) = warm {
        if w.is_finite() {
            let mut d = 0.05 * range;
            let mut wlo = (w - d).max(gmin);
            let mut whi = (w + d).min(gmax);
            for _ in 0..64 {
                let alo = phi(wlo)?;
                let ahi = phi(whi)?;
                if alo >= 0.0 && ahi <= 0.0 {
                    lo = wlo;
                    hi = whi;
                    break;
                }
                if wlo <= gmin && whi >= gmax {
                    break;
                }
                d *= 2.0;
                wlo = (w - d).max(gmin);
                whi = (w + d).min(gmax);
            }
        }
    }
    let mut flo = phi(lo)?;
    let mut fhi = phi(hi)?;
    if flo < 0.0 || fhi > 0.0 {
        return Err(Error::Bisection(format!(
            "no sign change over the field range: phi({lo}) = {flo}, phi({hi}) = {fhi}"
        )));
    }

    let bracket_tol = 1e-13 * range;
    let mut lambda = lo;
    let mut best = (lo, flo.abs());
    let mut last_side: i8 = 0;
    let mut accepted = false;
    for _ in 0..200 {
        if flo.abs() <= tol_c {
            lambda = lo;
            accepted = true;
            break;
        }
        if fhi.abs() <= tol_c {
            lambda = hi;
            accepted = true;
            break;
        }
        if hi - lo <= bracket_tol {
            // Alternative acceptance on the bracket width; keep the
            // hard-rich endpoint.
            lambda = lo;
            log::warn!(
                "bisection bracket collapsed at width {:.3e} with |phi| = {:.3e}",
                hi - lo,
                flo.abs().min(fhi.abs())
            );
            accepted = true;
            break;
        }
        let mut c = (lo * fhi - hi * flo) / (fhi - flo);
        if !c.is_finite() || c <= lo || c >= hi {
            c = 0.5 * (lo + hi);
        }
        let fc = phi(c)?;
        if fc.abs() < best.1 {
            best = (c, fc.abs());
        }
        if fc.abs() <= tol_c {
            lambda = c;
            accepted = true;
            break;
        }
        if fc > 0.0 {
            if last_side == 1 {
                fhi *= 0.5;
            }
            lo = c;
            flo = fc;
            last_side = 1;
        } else {
            if last_side == -1 {
                flo *= 0.5;
            }
            hi = c;
            fhi = fc;
            last_side = -1;
        }
    }
    if !accepted {
        let (b, bv) = best;
        if bv <= tol_c {
            lambda = b;
        } else {
            return Err(Error::Bisection(format!(
                "no level with |phi| <= {tol_c} found; best |phi| = {bv}"
            )));
        }
    }
    let classification = classify_and_measure(grid, xi_tau_hat, lambda)?;
    Ok((lambda, classification))
}

fn hash_cuts(cuts: &[Option<CutElementData>]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for c in cuts.iter().flatten() {
        h ^= (c.element as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
        h ^= c.vol_plus.to_bits();
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn all_hard_classification(grid: &StructuredGrid) -> Classification {
    Classification {
        cuts: vec![None; grid.n_elements()],
        snapshot: TopologySnapshot {
            vol_plus: grid.domain_volume(),
            vol_minus: 0.0,
            interface_measure: 0.0,
            triangles: Vec::new(),
            segments: Vec::new(),
            phases: vec![ElemPhase::Hard; grid.n_elements()],
        },
    }
}

/// The closed-form driver.
pub struct Optimizer<'a> {
    problem: &'a Problem,
    settings: &'a RunSettings,
    smoother: SmoothingOperator,
    state: OptimizerState,
    cache: Option<(u64, Solved)>,
}

impl<'a> Optimizer<'a> {
    /// Initialize at the full hard-phase design: solve it, freeze the
    /// shift and normalization constants from its energy field and start
    /// with `lambda = 0` (in raw units).
    pub fn new(problem: &'a Problem, settings: &'a RunSettings) -> Result<Self> {
        problem.validate()?;
        let grid = &problem.grid;
        let smoother = SmoothingOperator::build(grid, settings.tau)?;
        let design = DesignField::full_hard(grid, problem.beta())?;
        let classification = all_hard_classification(grid);
        let solved = solve_and_energy(problem, settings, &design, &classification.cuts, None)?;
        let shift = solved.xi.xi.min();
        let mut norm = (solved.xi.xi.max() - shift).abs();
        if norm == 0.0 {
            log::warn!("degenerate initial energy field (zero range); normalization set to 1");
            norm = 1.0;
        }
        let lambda_hat = lambda_hat_of(0.0, shift, norm);
        let key = design.content_hash() ^ hash_cuts(&classification.cuts);
        let ng = norm_samples_per_element(grid.ndim());
        Ok(Optimizer {
            problem,
            settings,
            smoother,
            state: OptimizerState {
                design,
                lambda_hat,
                shift,
                norm,
                classification,
                gauss_phases: vec![true; grid.n_elements() * ng],
            },
            cache: Some((key, solved)),
        })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn smoother(&self) -> &SmoothingOperator {
        &self.smoother
    }

    fn cache_key(&self) -> u64 {
        self.state.design.content_hash() ^ hash_cuts(&self.state.classification.cuts)
    }

    fn ensure_solved(&mut self) -> Result<()> {
        let key = self.cache_key();
        let stale = match &self.cache {
            Some((k, _)) => *k != key,
            None => true,
        };
        if stale {
            let warm = self.cache.take().map(|(_, s)| s.d1);
            let solved = solve_and_energy(
                self.problem,
                self.settings,
                &self.state.design,
                &self.state.classification.cuts,
                warm.as_deref(),
            )?;
            self.cache = Some((key, solved));
        }
        Ok(())
    }

    fn solved(&self) -> &Solved {
        &self.cache.as_ref().expect("ensure_solved must run first").1
    }

    fn snapshot_state(&self) -> OptimizerState {
        OptimizerState {
            design: self.state.design.clone(),
            lambda_hat: self.state.lambda_hat,
            shift: self.state.shift,
            norm: self.state.norm,
            classification: self.state.classification.clone(),
            gauss_phases: self.state.gauss_phases.clone(),
        }
    }

    /// Advance to `t`, bisecting the pseudo-time increment when the
    /// fixed-point loop fails to converge: the interval is split and the
    /// midpoint solved as an unrecorded helper step. The returned record
    /// is always at `t`.
    pub fn step_with_continuation(
        &mut self,
        step_idx: usize,
        t_prev: f64,
        t: f64,
        depth: usize,
    ) -> Result<StepRecord> {
        let saved = self.snapshot_state();
        let saved_cache = self.cache.as_ref().map(|(k, _)| *k);
        match self.step(step_idx, t) {
            Ok(r) => Ok(r),
            Err(Error::NonConvergence(why)) if depth > 0 && (t - t_prev) > 1e-4 => {
                log::warn!(
                    "step {step_idx} at t = {t}: {why}; retrying via midpoint sub-step"
                );
                self.state = saved;
                if self.cache.as_ref().map(|(k, _)| *k) != saved_cache {
                    self.cache = None;
                }
                let mid = 0.5 * (t_prev + t);
                let _ = self.step_with_continuation(step_idx, t_prev, mid, depth - 1)?;
                self.step_with_continuation(step_idx, mid, t, depth - 1)
            }
            Err(e) => Err(e),
        }
    }

    /// Run the fixed-point loop at one schedule time.
    pub fn step(&mut self, step_idx: usize, t: f64) -> Result<StepRecord> {
        let started = Instant::now();
        let grid = &self.problem.grid;
        let beta = self.problem.beta();
        let tol = self.settings.tolerances;
        let domain = grid.domain_volume();
        let mut iteration_log = Vec::new();
        let mut psi_tau: Option<ScalarField> = None;
        let mut converged = false;
        for i in 1..=self.settings.max_iterations {
            self.ensure_solved()?;
            let (cost, xi_hat) = {
                let solved = self.solved();
                (
                    solved.cost,
                    shift_normalize(
                        &solved.xi.xi,
                        &self.state.design,
                        self.state.shift,
                        self.state.norm,
                    ),
                )
            };
            let xi_tau_hat = self.smoother.smooth(grid, &xi_hat)?;
            let (lambda_hat, classification) = bisect_lambda(
                grid,
                &xi_tau_hat,
                t,
                tol.constraint,
                Some(self.state.lambda_hat),
            )?;
            let new_design =
                design_from_cut(grid, &xi_tau_hat, lambda_hat, beta, &classification)?;
            let new_phases = sample_phases(grid, &xi_tau_hat, lambda_hat);
            let delta = chi_delta_l2(grid, &self.state.gauss_phases, &new_phases, beta);
            let constraint = t - classification.snapshot.vol_minus / domain;
            iteration_log.push(IterationRecord {
                iteration: i,
                chi_delta_l2: delta,
                lambda_hat,
                constraint,
                cost,
            });
            self.state.design = new_design;
            self.state.classification = classification;
            self.state.lambda_hat = lambda_hat;
            self.state.gauss_phases = new_phases;
            psi_tau = Some(xi_tau_hat);
            if delta <= tol.chi {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "step {step_idx} (t = {t}) did not converge in {} iterations; last chi delta {:.3e}",
                self.settings.max_iterations,
                iteration_log.last().map(|r| r.chi_delta_l2).unwrap_or(f64::NAN)
            )));
        }
        // Final consistent solve of the converged design (cached for the
        // next step's first iteration).
        self.ensure_solved()?;
        let (cost, xi_raw) = {
            let solved = self.solved();
            (solved.cost, solved.xi.xi.values.clone())
        };
        let psi_tau = match psi_tau {
            Some(f) => f,
            None => {
                let xi_hat = shift_normalize(
                    &ScalarField {
                        location: FieldLocation::Element,
                        values: xi_raw.clone(),
                    },
                    &self.state.design,
                    self.state.shift,
                    self.state.norm,
                );
                self.smoother.smooth(grid, &xi_hat)?
            }
        };
        let snapshot = self.state.classification.snapshot.clone();
        let wall_ms = if self.settings.measure_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(StepRecord {
            step: step_idx,
            t,
            lambda_hat: self.state.lambda_hat,
            cost,
            vol_hard_frac: snapshot.vol_plus / domain,
            vol_soft_frac: snapshot.vol_minus / domain,
            iterations: iteration_log.len(),
            wall_ms,
            iteration_log,
            chi: self.state.design.chi().to_vec(),
            psi_tau: psi_tau.values,
            xi: xi_raw,
            design_hash: self.state.design.content_hash(),
            snapshot,
        })
    }

    /// Run the whole schedule, invoking `sink` after each converged step.
    pub fn run_with(
        &mut self,
        schedule: &TimeSchedule,
        mut sink: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<RunHistory> {
        let mut history = RunHistory::default();
        let mut t_prev = schedule.times()[0];
        for (idx, &t) in schedule.times().iter().enumerate() {
            let record = self.step_with_continuation(idx, t_prev, t, 5)?;
            sink(&record)?;
            history.steps.push(record);
            t_prev = t;
        }
        Ok(history)
    }
}

/// Convenience wrapper: initialize and run the full schedule.
pub fn run(
    problem: &Problem,
    settings: &RunSettings,
    schedule: &TimeSchedule,
) -> Result<RunHistory> {
    Optimizer::new(problem, settings)?.run_with(schedule, |_| Ok(()))
}

/// Nodal-to-element projection of a smoothed field, used when checking the
/// optimality sign off the interface band.
pub fn element_level_field(grid: &StructuredGrid, nodal: &ScalarField) -> Result<ScalarField> {
    crate::mesh::nodal_to_element(grid, nodal)
}

/// Project an element energy field to nodes for export.
pub fn xi_as_nodal(grid: &StructuredGrid, xi: &[f64]) -> Result<ScalarField> {
    element_to_nodal(
        grid,
        &ScalarField {
            location: FieldLocation::Element,
            values: xi.to_vec(),
        },
    )
}
