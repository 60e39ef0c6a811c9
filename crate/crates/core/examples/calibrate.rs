//! Recomputes the frozen regression constants of the stripe fixture.
//!
//! cargo run --release -p chinpaint-core --example calibrate

use chinpaint_core::adjoint;
use chinpaint_core::control::{self, random_direction, ControlProblem, CostWeights, OptimConfig};
use chinpaint_core::decay::{self, RegularizeConfig};
use chinpaint_core::fixtures::{random_control, StripeFixture};
use chinpaint_core::forward;
use chinpaint_core::potential::LogPotential;
use chinpaint_core::sensitivity;
use rayon::prelude::*;

fn main() {
    let fx = StripeFixture::standard(32).unwrap();
    let pot = LogPotential::new(fx.params).unwrap();
    let cfg = fx.solver_config();
    let bx = fx.control_box();
    let weights = CostWeights::default();

    let pairs: Vec<(u64, u64)> = (0..60).map(|i| (1000 + 2 * i, 1001 + 2 * i)).collect();
    let h = random_direction(&fx.mask_d, 99);
    let ratios: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let l1 = bx.fidelity(&random_control(&bx, a)).unwrap();
            let l2 = bx.fidelity(&random_control(&bx, b)).unwrap();
            let dist = l1.lambda().sub(l2.lambda()).norm();
            let t1 = forward::solve_states(&fx.phi0, &l1, &fx.f, &cfg, &pot).unwrap();
            let t2 = forward::solve_states(&fx.phi0, &l2, &fx.f, &cfg, &pot).unwrap();
            let state = t1.max_l2_distance(&t2) / dist;
            let x1 = sensitivity::solve_linearized(&t1, &l1, &h, &fx.f, &cfg, &pot).unwrap();
            let x2 = sensitivity::solve_linearized(&t2, &l2, &h, &fx.f, &cfg, &pot).unwrap();
            let lin = x1.max_l2_distance(&x2) / dist;
            let p1 = adjoint::solve_adjoint(&t1, &l1, &fx.f, &weights, &cfg, &pot).unwrap();
            let p2 = adjoint::solve_adjoint(&t2, &l2, &fx.f, &weights, &cfg, &pot).unwrap();
            let co = p1.max_l2_distance(&p2) / dist;
            (state, lin, co)
        })
        .collect();
    let max = |k: usize| ratios.iter().map(|r| [r.0, r.1, r.2][k]).fold(0.0, f64::max);
    println!("K_CAL_STATE = {:e}", max(0));
    println!("K_LIP_SENSITIVITY = {:e}", max(1));
    println!("K_CAL_COSTATE = {:e}", max(2));

    let pb = ControlProblem::new(fx.phi0.clone(), fx.f.clone(), bx.clone(), weights, cfg, &pot).unwrap();
    println!("COST_MIDPOINT_32 = {:e}", pb.cost(&bx.midpoint()).unwrap());

    let rc = RegularizeConfig::default();
    let target = decay::regularized_target(&fx.f, &fx.mask_d, &pot, &rc).unwrap();
    println!(
        "target: steps {:?} norm {:e} energy {:e} residual {:e}",
        target.steps,
        target.field.norm(),
        forward::energy(&target.field, &pot),
        target.residual
    );
    let pert = decay::smooth_perturbation(&target.field, 0.05, 7);
    let reps = decay::decay_experiment(
        &target.field,
        &target.field.add(&pert),
        &fx.mask_d,
        &[1.0, 10.0, 100.0, 1000.0],
        &pot,
        &cfg,
    )
    .unwrap();
    for r in &reps {
        println!("decay lambda0 {} rate {:e} r2 {}", r.lambda0, r.fitted_rate, r.fit_r2);
    }

    let fx64 = StripeFixture::standard(64).unwrap();
    let pot64 = LogPotential::new(fx64.params).unwrap();
    let bx64 = fx64.control_box();
    let pb64 = ControlProblem::new(fx64.phi0.clone(), fx64.f.clone(), bx64.clone(), weights, cfg, &pot64).unwrap();
    let (_, report, at) = control::optimize(&pb64, &bx64.midpoint(), &OptimConfig::default()).unwrap();
    let last = at.eval.trajectory.last();
    println!(
        "optimum 64: iters {} J0 {:e} J {:e} misfit {:e} agreement {}",
        report.iterations,
        report.initial_cost(),
        report.final_cost(),
        fx64.misfit(last),
        fx64.hole_agreement(last)
    );
    let mid = bx64.fidelity(&bx64.midpoint()).unwrap();
    let traj = forward::solve_states(&fx64.phi0, &mid, &fx64.f, &cfg, &pot64).unwrap();
    let mis: Vec<f64> = traj.states().iter().map(|s| fx64.misfit(s)).collect();
    let last_increase = mis.windows(2).rposition(|w| w[1] > w[0]);
    println!("misfit at midpoint: last increase at step {:?}, final {:e}", last_increase, mis[mis.len() - 1]);
}
