use rtopt::elasticity::*;
use rtopt::filter::SmoothingOperator;
use rtopt::mesh::*;
use rtopt::optimizer::*;
use rtopt::problem::*;
use rtopt::sensitivity::*;
use rtopt::solver::SolverKind;

fn main() {
    let grid = build_grid(&[96, 48], &[1.0, 0.5], &[]).unwrap();
    let material = Material::new(210e9, 0.3, 1e-6, 5).unwrap();
    let problem = build_problem(
        grid, material, ProblemKind::Compliance,
        &[FixSpec { region: Region::on_face(0, Side::Low), dofs: [true, true, false] }],
        &[TractionSpec {
            region: Region::on_face_boxed(0, Side::High, [0.0, 0.0, f64::NEG_INFINITY], [1.0, 0.05, f64::INFINITY]),
            traction: [0.0, -1e7, 0.0],
        }],
        &[], &[], None, None,
    ).unwrap();
    let grid = &problem.grid;
    let smoother = SmoothingOperator::build(grid, [1.0, 1.0, 0.0]).unwrap();
    let beta = material.beta();
    let dmat = constitutive_matrix(&material, 2).unwrap();
    let mut design = DesignField::full_hard(grid, beta).unwrap();
    let mut cuts: Vec<Option<rtopt::geometry::CutElementData>> = vec![];
    let solve = |design: &DesignField, cuts: &[Option<rtopt::geometry::CutElementData>]| {
        let state = assemble(grid, design, &material, cuts, &problem.loads, &problem.bc, SolverKind::Direct).unwrap();
        let d = state.solve_state().unwrap();
        let strains = element_strains(grid, &material, cuts, &d).unwrap();
        let xi = compliance_energy_with_cuts(design, &strains, &dmat, material.m, cuts).unwrap();
        (compliance(&problem.loads.f, &d), xi)
    };
    let (_, xi0) = solve(&design, &cuts);
    let shift = xi0.xi.min();
    let norm = (xi0.xi.max() - shift).abs();
    let mut lambda_hat = (0.0 - shift) / norm;
    let schedule = make_schedule(40, -4.5, 0.0, 1.0).unwrap();
    for (si, &t) in schedule.times().iter().enumerate().take(13) {
        let mut printed = 0;
        for i in 1..=60 {
            let (cost, xi) = solve(&design, &cuts);
            let xi_hat = shift_normalize(&xi.xi, &design, shift, norm);
            let xi_tau = smoother.smooth(grid, &xi_hat).unwrap();
            let (lh, class) = bisect_lambda(grid, &xi_tau, t, 1e-5, Some(lambda_hat)).unwrap();
            let new_design = design_from_cut(grid, &xi_tau, lh, beta, &class).unwrap();
            let delta = new_design.l2_distance(&design, grid);
            if si >= 11 && printed < 25 {
                println!("  s{si} i={i:2} J={cost:.5e} delta={delta:.4} lam={lh:.5} range=[{:.3e},{:.3e}]", xi_tau.min(), xi_tau.max());
                printed += 1;
            }
            design = new_design;
            cuts = class.cuts;
            lambda_hat = lh;
            if delta <= 0.1 {
                println!("step {si} t={t:.4} converged i={i} J={cost:.4e}");
                break;
            }
            if i == 60 { println!("step {si} STALL delta={delta:.3}"); }
        }
    }
}
