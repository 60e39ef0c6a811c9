use std::f64::consts::PI;

use chinpaint_core::control::random_direction;
use chinpaint_core::fixtures::{self, random_control, StripeFixture};
use chinpaint_core::forward::{self, FidelityField, SolverConfig, Trajectory};
use chinpaint_core::potential::{LogPotential, QuadraticPotential};
use chinpaint_core::sensitivity::{self, LinearizedSources};
use chinpaint_core::spectral;
use chinpaint_core::{Error, Field, Grid};

struct Setup {
    fx: StripeFixture,
    pot: LogPotential,
    lam: FidelityField,
    traj: Trajectory,
    cfg: SolverConfig,
}

fn setup(n: usize, seed: u64) -> Setup {
    let fx = StripeFixture::standard(n).unwrap();
    let pot = LogPotential::new(fx.params).unwrap();
    let bx = fx.control_box();
    let cfg = SolverConfig { n_steps: 60, ..fx.solver_config() };
    let lam = bx.fidelity(&random_control(&bx, seed)).unwrap();
    let traj = forward::solve_states(&fx.phi0, &lam, &fx.f, &cfg, &pot).unwrap();
    Setup { fx, pot, lam, traj, cfg }
}

#[test]
fn linear_in_the_direction() {
    let s = setup(16, 1);
    let h1 = random_direction(&s.fx.mask_d, 2);
    let h2 = random_direction(&s.fx.mask_d, 3);
    let (a, b) = (1.7, -0.4);
    let mut comb = h1.scaled(a);
    comb.axpy(b, &h2);
    let xi = |h: &Field| sensitivity::solve_linearized(&s.traj, &s.lam, h, &s.fx.f, &s.cfg, &s.pot).unwrap();
    let (x1, x2, xc) = (xi(&h1), xi(&h2), xi(&comb));
    let scale = xc.max_l2_norm();
    for n in 0..=s.cfg.n_steps {
        let mut expect = x1.state(n).scaled(a);
        expect.axpy(b, x2.state(n));
        assert!(xc.state(n).sub(&expect).norm() <= 1e-10 * scale);
    }
}

#[test]
fn zero_direction_and_trivial_sources_give_zero() {
    let s = setup(16, 4);
    let g = s.fx.grid;
    let xi = sensitivity::solve_linearized(&s.traj, &s.lam, &Field::zeros(g), &s.fx.f, &s.cfg, &s.pot).unwrap();
    assert!(xi.states().iter().all(|x| x.values().iter().all(|&v| v == 0.0)));

    // No fidelity, and a target equal to a stationary state.
    let c = Field::constant(g, 0.2);
    let lam = FidelityField::zero(s.fx.mask_d.clone());
    let traj = forward::solve_states(&c, &lam, &c, &s.cfg, &s.pot).unwrap();
    let h = random_direction(&s.fx.mask_d, 5);
    let xi = sensitivity::solve_linearized(&traj, &lam, &h, &c, &s.cfg, &s.pot).unwrap();
    assert_eq!(xi.max_l2_norm(), 0.0);
}

#[test]
fn directional_sources_reproduce_the_specialised_solver() {
    let s = setup(16, 6);
    let h = random_direction(&s.fx.mask_d, 7);
    let a = sensitivity::solve_linearized(&s.traj, &s.lam, &h, &s.fx.f, &s.cfg, &s.pot).unwrap();
    let src = LinearizedSources::directional(&s.traj, &h, &s.fx.f);
    let b = sensitivity::solve_linear_general(&s.traj, &s.lam, &src, &s.cfg, &s.pot).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_mode_matches_scalar_recursion() {
    // Quadratic potential without fidelity: every cosine mode evolves alone.
    let g = Grid::new(16, 12, 3.0, 2.0).unwrap();
    let (c, eps, dt, n_steps) = (-1.3, 0.6, 0.02, 50);
    let pot = QuadraticPotential { curvature: c, eps };
    let cfg = SolverConfig { stabilization: Some(0.8), ..SolverConfig::new(dt, n_steps) };
    let lam = FidelityField::zero(Field::zeros(g));
    let traj = Trajectory::new(g, dt, vec![Field::zeros(g); n_steps + 1]).unwrap();
    let (k, l) = (2, 1);
    let mode = Field::from_fn(g, |x, y| (k as f64 * PI * x / g.lx()).cos() * (l as f64 * PI * y / g.ly()).cos());
    let mut src = LinearizedSources::zeros(g, n_steps);
    let amp1 = |n: usize| (0.3 * n as f64).sin();
    let amp2 = |n: usize| 0.5 - 0.01 * n as f64;
    for n in 0..=n_steps {
        src.g1[n] = mode.scaled(amp1(n));
        src.g2[n] = mode.scaled(amp2(n));
    }
    let xi = sensitivity::solve_linear_general(&traj, &lam, &src, &cfg, &pot).unwrap();

    let mu = g.eigenvalue(k, l);
    let s = 0.8 / eps;
    let a = 1.0 + dt * (eps * mu * mu + s * mu);
    let kk = 1.0 + dt * s * mu - dt / eps * mu * c;
    let mut x = 0.0;
    for n in 0..n_steps {
        x = (kk * x + dt * amp1(n + 1) - dt * mu * amp2(n)) / a;
        let got = spectral::to_spectral(xi.state(n + 1)).coeff(k, l);
        assert!((got - x).abs() <= 1e-8 * x.abs().max(1e-3), "step {}: {got} vs {x}", n + 1);
    }
}

#[test]
fn quadratic_remainder_solves_the_linear_system() {
    // For a quadratic potential the Taylor remainder r = S(l + t h) - S(l) - t xi
    // obeys the same linear system with g1 = -t h (S(l + t h) - S(l)).
    let fx = StripeFixture::standard(16).unwrap();
    let pot = QuadraticPotential { curvature: -1.0, eps: 0.5 };
    let cfg = SolverConfig { picard_tol: 1e-13, n_steps: 40, ..fx.solver_config() };
    let lam = FidelityField::constant(fx.mask_d.clone(), 20.0, 1.0, 1e4).unwrap();
    let h = random_direction(&fx.mask_d, 11).scaled(5.0);
    let tau = 0.5;
    let mut moved_ctl = lam.lambda().clone();
    moved_ctl.axpy(tau, &h);
    let moved_lam = FidelityField::from_control(&moved_ctl, &fx.mask_d, 1.0, 1e4).unwrap();
    let base = forward::solve_states(&fx.phi0, &lam, &fx.f, &cfg, &pot).unwrap();
    let moved = forward::solve_states(&fx.phi0, &moved_lam, &fx.f, &cfg, &pot).unwrap();
    let xi = sensitivity::solve_linearized(&base, &lam, &h, &fx.f, &cfg, &pot).unwrap();
    let mut src = LinearizedSources::zeros(fx.grid, cfg.n_steps);
    for n in 0..=cfg.n_steps {
        src.g1[n] = h.mul(&moved.state(n).sub(base.state(n))).scaled(-tau);
    }
    let r = sensitivity::solve_linear_general(&base, &lam, &src, &cfg, &pot).unwrap();
    let scale = r.max_l2_norm();
    assert!(scale > 1e-6);
    for n in 0..=cfg.n_steps {
        let mut direct = moved.state(n).sub(base.state(n));
        direct.axpy(-tau, xi.state(n));
        assert!(direct.sub(r.state(n)).norm() <= 1e-7 * scale, "step {n}");
    }
}

#[test]
fn taylor_report_for_zero_direction() {
    let s = setup(16, 8);
    let rep = sensitivity::taylor_remainder_order(
        &s.fx.phi0,
        &s.lam,
        &Field::zeros(s.fx.grid),
        &s.fx.f,
        &[1e-2, 1e-3],
        &s.cfg,
        &s.pot,
    )
    .unwrap();
    assert_eq!(rep.remainders, vec![0.0, 0.0]);
    assert_eq!(rep.order, None);
}

#[test]
fn sensitivity_is_lipschitz_in_the_control() {
    let fx = StripeFixture::standard(32).unwrap();
    let pot = LogPotential::new(fx.params).unwrap();
    let bx = fx.control_box();
    let cfg = fx.solver_config();
    let h = random_direction(&fx.mask_d, 99);
    for i in 0..3 {
        let l1 = bx.fidelity(&random_control(&bx, 6000 + 2 * i)).unwrap();
        let l2 = bx.fidelity(&random_control(&bx, 6001 + 2 * i)).unwrap();
        let xi = |l: &FidelityField| {
            let t = forward::solve_states(&fx.phi0, l, &fx.f, &cfg, &pot).unwrap();
            sensitivity::solve_linearized(&t, l, &h, &fx.f, &cfg, &pot).unwrap()
        };
        let ratio = xi(&l1).max_l2_distance(&xi(&l2)) / l1.lambda().sub(l2.lambda()).norm();
        assert!(ratio <= 1.2 * fixtures::K_LIP_SENSITIVITY, "pair {i}: {ratio:e}");
    }
}

#[test]
fn eta_of_a_cosine() {
    let g = Grid::square(16, 2.0).unwrap();
    let eps = 0.5;
    let pot = QuadraticPotential { curvature: 3.0, eps };
    let mode = Field::from_fn(g, |x, _| (PI * x / 2.0).cos());
    let xi = Trajectory::new(g, 0.1, vec![mode.clone()]).unwrap();
    let bar = Trajectory::new(g, 0.1, vec![Field::zeros(g)]).unwrap();
    let eta = sensitivity::reconstruct_eta(&xi, &bar, &pot);
    let expect = mode.scaled(eps * g.eigenvalue(1, 0) + 3.0 / eps);
    assert!(eta[0].sub(&expect).max_abs() <= 1e-12);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let s = setup(16, 9);
    let short = SolverConfig { n_steps: 10, ..s.cfg };
    let h = random_direction(&s.fx.mask_d, 1);
    assert!(matches!(
        sensitivity::solve_linearized(&s.traj, &s.lam, &h, &s.fx.f, &short, &s.pot),
        Err(Error::TrajectoryMismatch(_))
    ));
    let src = LinearizedSources::zeros(s.fx.grid, 10);
    assert!(matches!(
        sensitivity::solve_linear_general(&s.traj, &s.lam, &src, &s.cfg, &s.pot),
        Err(Error::TrajectoryMismatch(_))
    ));
}
