use rtopt::elasticity::Material;
use rtopt::mesh::{build_grid, Region, Side};
use rtopt::optimizer::{make_schedule, Optimizer};
use rtopt::problem::*;

const STRIP: f64 = 0.05;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.get(3).map(|s| s == "nograde").unwrap_or(false) {
        rtopt::sensitivity::USE_GRADED_CUTS.store(false, std::sync::atomic::Ordering::Relaxed);
    }
    let nx: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(48);
    let ny = nx / 2;
    let grid = build_grid(&[nx, ny], &[1.0, 0.5], &[]).unwrap();
    let material = Material::new(210e9, 0.3, 1e-6, 5).unwrap();
    let problem = build_problem(
        grid, material, ProblemKind::Compliance,
        &[FixSpec { region: Region::on_face(0, Side::Low), dofs: [true, true, false] }],
        &[TractionSpec {
            region: Region::on_face_boxed(0, Side::High, [0.0, 0.0, f64::NEG_INFINITY], [1.0, STRIP, f64::INFINITY]),
            traction: [0.0, -1e7, 0.0],
        }],
        &[], &[], None, None,
    ).unwrap();
    let tau: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let settings = RunSettings { tau: [tau, tau, 0.0], ..Default::default() };
    let schedule = make_schedule(40, -4.5, 0.0, 1.0).unwrap().truncated(0.92).unwrap();
    let mut opt = Optimizer::new(&problem, &settings).unwrap();
    let t0 = std::time::Instant::now();
    let hist = opt.run_with(&schedule, |r| {
        println!(
            "step {:2} t={:.5} iters={:3} J={:.6e} hard={:.5} maxC={:.2e} wall={}ms",
            r.step, r.t, r.iterations, r.cost, r.vol_hard_frac,
            r.iteration_log.iter().map(|l| l.constraint.abs()).fold(0.0f64, f64::max), r.wall_ms
        );
        Ok(())
    });
    match hist {
        Ok(h) => println!("DONE {} steps in {:?}", h.steps.len(), t0.elapsed()),
        Err(e) => println!("ERROR after {:?}: {e}", t0.elapsed()),
    }
}
