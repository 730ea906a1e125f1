use rtopt::elasticity::*;
use rtopt::filter::SmoothingOperator;
use rtopt::mesh::*;
use rtopt::optimizer::*;
use rtopt::problem::*;
use rtopt::sensitivity::*;
use rtopt::solver::SolverKind;

fn draw(chi: &[f64], nx: usize, ny: usize) {
    for j in (0..ny).step_by(2).rev() {
        let mut line = String::new();
        for i in 0..nx {
            let a = chi[j * nx + i] == 1.0;
            let b = if j + 1 < ny { chi[(j + 1) * nx + i] == 1.0 } else { false };
            line.push(match (b, a) { (true, true) => '#', (false, true) => '.', (true, false) => '\'', _ => ' ' });
        }
        println!("|{line}|");
    }
}

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
    let settings = RunSettings { tau: [1.0, 1.0, 0.0], ..Default::default() };
    let schedule = make_schedule(40, -4.5, 0.0, 1.0).unwrap().truncated(0.92).unwrap();
    let mut opt = Optimizer::new(&problem, &settings).unwrap();
    for (idx, &t) in schedule.times().iter().enumerate().take(12) {
        let r = opt.step(idx, t).unwrap();
        println!("step {idx} t={t:.4} J={:.4e} iters={}", r.cost, r.iterations);
    }
    // Manual iterations of step 12 (t = 0.7491).
    let t = schedule.times()[12];
    let grid = &problem.grid;
    let smoother = SmoothingOperator::build(grid, [1.0, 1.0, 0.0]).unwrap();
    let beta = material.beta();
    let dmat = constitutive_matrix(&material, 2).unwrap();
    let mut design = opt.state().design.clone();
    let mut cuts = opt.state().classification.cuts.clone();
    let mut lambda_hat = opt.state().lambda_hat;
    let shift = opt.state().shift;
    let norm = opt.state().norm;
    for i in 1..=4 {
        let state = assemble(grid, &design, &material, &cuts, &problem.loads, &problem.bc, SolverKind::Direct).unwrap();
        let d = state.solve_state().unwrap();
        let j = compliance(&problem.loads.f, &d);
        let strains = element_strains(grid, &material, &cuts, &d).unwrap();
        let xi = compliance_energy_with_cuts(&design, &strains, &dmat, material.m, &cuts).unwrap();
        let xi_hat = shift_normalize(&xi.xi, &design, shift, norm);
        let xi_tau = smoother.smooth(grid, &xi_hat).unwrap();
        let (lh, class) = bisect_lambda(grid, &xi_tau, t, 1e-5, Some(lambda_hat)).unwrap();
        let new_design = design_from_cut(grid, &xi_tau, lh, beta, &class).unwrap();
        println!("-- step12 iter {i}: J(chi_i)={j:.4e} lambda={lh:.4}; chi_(i+1):");
        draw(new_design.chi(), 96, 48);
        design = new_design;
        cuts = class.cuts;
        lambda_hat = lh;
    }
}
