//! Backward marches: the exact transpose of the linearised forward scheme.
//!
//! For weights `c^0..c^N` the backward system is
//!
//! ```text
//! M z^n = c^n + K_n^T z^{n+1},   z^{N+1} = 0
//! K_n^T = B + (dt/eps) diag(F''(phi^n)) L
//! ```
//!
//! and satisfies `sum_n <c^n, xi^n> = sum_n dt <z^n, g1^n> + dt <L z^{n+1}, g2^n>`
//! for every solution `xi` of the linearised system.

use crate::control::{trapezoid_weight, CostWeights};
use crate::error::{Error, Result};
use crate::forward::{self, FidelityField, SolverConfig, Trajectory};
use crate::grid::{Field, Grid};
use crate::operator::StepOperator;
use crate::potential::Potential;
use crate::spectral;

/// Data of the general backward system: the distributed source `g3` on
/// every time node and the final datum `g4`.
#[derive(Debug, Clone)]
pub struct AdjointSources {
    pub g3: Vec<Field>,
    pub g4: Field,
}

impl AdjointSources {
    pub fn zeros(grid: Grid, n_steps: usize) -> Self {
        AdjointSources {
            g3: vec![Field::zeros(grid); n_steps + 1],
            g4: Field::zeros(grid),
        }
    }

    /// Time-discrete weights `c^n = dt w_n g3^n + [n = N] g4` with
    /// trapezoid `w_n`.
    pub fn weights(&self, dt: f64) -> Vec<Field> {
        let n_steps = self.g3.len() - 1;
        self.g3
            .iter()
            .enumerate()
            .map(|(n, g)| {
                let mut c = g.scaled(dt * trapezoid_weight(n, n_steps));
                if n == n_steps {
                    c = c.add(&self.g4);
                }
                c
            })
            .collect()
    }
}

fn march_backward(
    op: &StepOperator,
    traj_bar: &Trajectory,
    c: &[Field],
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    let grid = *traj_bar.grid();
    let n_steps = traj_bar.n_steps();
    let mut states = vec![Field::zeros(grid); n_steps + 1];
    for n in (0..=n_steps).rev() {
        let mut rhs = c[n].values().to_vec();
        if n < n_steps {
            let w: Vec<f64> = traj_bar.state(n).values().iter().map(|&p| potential.d2(p)).collect();
            let kz = op.explicit_transpose(states[n + 1].values(), &w);
            rhs.iter_mut().zip(&kz).for_each(|(r, k)| *r += k);
        }
        let z = op.solve_linear(&rhs)?;
        states[n] = Field::from_values(grid, z).map_err(|_| Error::NonFinite {
            context: format!("backward step {n}"),
        })?;
    }
    Trajectory::new(grid, traj_bar.dt(), states)
}

fn check_backward_inputs(
    traj_bar: &Trajectory,
    lambda_bar: &FidelityField,
    c: &[Field],
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    traj_bar.check_against(cfg, lambda_bar.grid())?;
    if c.len() != cfg.n_steps + 1 {
        return Err(Error::TrajectoryMismatch(format!(
            "{} backward weights for {} steps",
            c.len(),
            cfg.n_steps
        )));
    }
    for ci in c {
        if ci.grid() != traj_bar.grid() {
            return Err(Error::GridMismatch);
        }
        ci.check_finite("backward source")?;
    }
    Ok(())
}

/// Backward solve with explicit per-node weights `c^n` (already multiplied by
/// the quadrature weights).
pub fn solve_backward_weighted(
    traj_bar: &Trajectory,
    lambda_bar: &FidelityField,
    c: &[Field],
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    check_backward_inputs(traj_bar, lambda_bar, c, cfg)?;
    let op = cfg.operator(potential, lambda_bar);
    march_backward(&op, traj_bar, c, potential)
}

/// General backward system with distributed source `g3` and final datum `g4`.
pub fn solve_backward_general(
    traj_bar: &Trajectory,
    lambda_bar: &FidelityField,
    sources: &AdjointSources,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    if sources.g3.len() != cfg.n_steps + 1 {
        return Err(Error::TrajectoryMismatch(format!(
            "g3 covers {} nodes, expected {}",
            sources.g3.len(),
            cfg.n_steps + 1
        )));
    }
    sources.g4.same_grid(traj_bar.state(0))?;
    solve_backward_weighted(traj_bar, lambda_bar, &sources.weights(cfg.dt), cfg, potential)
}

/// The cost adjoint: `g3 = alpha1 chi (phi - f)`, `g4 = alpha2 chi (phi^N - f)`.
pub fn solve_adjoint(
    traj_bar: &Trajectory,
    lambda_bar: &FidelityField,
    f: &Field,
    weights: &CostWeights,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    weights.validate()?;
    f.same_grid(traj_bar.state(0))?;
    let chi = lambda_bar.mask_undamaged();
    let g3 = traj_bar
        .states()
        .iter()
        .map(|phi| phi.sub(f).mul(&chi).scaled(weights.alpha1))
        .collect();
    let g4 = traj_bar.last().sub(f).mul(&chi).scaled(weights.alpha2);
    solve_backward_general(traj_bar, lambda_bar, &AdjointSources { g3, g4 }, cfg, potential)
}

/// Derivative of the adjoint state in the control direction `h`, given the
/// state derivative `xi` in the same direction. Requires `alpha2 = 0`.
///
/// Differentiating `M z^n = c^n + K_n^T z^{n+1}` gives the same backward
/// system with weights
/// `alpha1 w_n dt chi xi^n - dt h z^n + (dt/eps) F'''(phi^n) xi^n L z^{n+1}`.
#[allow(clippy::too_many_arguments)]
pub fn solve_linearized_adjoint(
    traj_bar: &Trajectory,
    adj_bar: &Trajectory,
    xi: &Trajectory,
    lambda_bar: &FidelityField,
    h: &Field,
    weights: &CostWeights,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    weights.validate()?;
    if weights.alpha2 != 0.0 {
        return Err(Error::Alpha2NotZero(weights.alpha2));
    }
    adj_bar.check_against(cfg, lambda_bar.grid())?;
    xi.check_against(cfg, lambda_bar.grid())?;
    let h = h.zip_map(lambda_bar.mask_d(), |v, m| if m == 1.0 { 0.0 } else { v });
    let chi = lambda_bar.mask_undamaged();
    let (dt, eps, n_steps) = (cfg.dt, potential.eps(), cfg.n_steps);
    let c: Vec<Field> = (0..=n_steps)
        .map(|n| {
            let x = xi.state(n);
            let mut c = x.mul(&chi).scaled(weights.alpha1 * dt * trapezoid_weight(n, n_steps));
            c.axpy(-dt, &h.mul(adj_bar.state(n)));
            if n < n_steps {
                let lz = spectral::laplacian(adj_bar.state(n + 1));
                let third = traj_bar.state(n).map(|p| potential.d3(p));
                c.axpy(dt / eps, &third.mul(x).mul(&lz));
            }
            c
        })
        .collect();
    solve_backward_weighted(traj_bar, lambda_bar, &c, cfg, potential)
}

/// `q = -eps Laplacian p`.
pub fn costate(p: &Field, eps: f64) -> Field {
    spectral::laplacian(p).scaled(-eps)
}

/// `max_n ||p1^n - p2^n|| / ||lambda1 - lambda2||`, or 0 when the controls
/// coincide.
#[allow(clippy::too_many_arguments)]
pub fn costate_lipschitz_ratio(
    phi0: &Field,
    lambda1: &FidelityField,
    lambda2: &FidelityField,
    f: &Field,
    weights: &CostWeights,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<f64> {
    if weights.alpha2 != 0.0 {
        return Err(Error::Alpha2NotZero(weights.alpha2));
    }
    let dist = lambda1.lambda().sub(lambda2.lambda()).norm();
    if dist == 0.0 {
        return Ok(0.0);
    }
    let adjoint = |lam: &FidelityField| -> Result<Trajectory> {
        let traj = forward::solve_states(phi0, lam, f, cfg, potential)?;
        solve_adjoint(&traj, lam, f, weights, cfg, potential)
    };
    let (p1, p2) = (adjoint(lambda1)?, adjoint(lambda2)?);
    Ok(p1.max_l2_distance(&p2) / dist)
}
