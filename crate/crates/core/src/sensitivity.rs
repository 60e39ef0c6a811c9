//! Derivative of the discrete control-to-state map.
//!
//! Differentiating one forward step with respect to the fidelity gives
//!
//! ```text
//! M xi^{n+1} = K_n xi^n + dt g1^{n+1} + dt L g2^n
//! K_n = B + (dt/eps) L diag(F''(phi^n))
//! ```
//!
//! with `g1^{n+1} = h (f - phi^{n+1})` and `g2 = 0` for the directional
//! derivative. Because this is the exact derivative of the scheme, the Taylor
//! remainder is quadratic down to round-off.

use crate::error::{Error, Result};
use crate::forward::{self, FidelityField, SolverConfig, Trajectory};
use crate::grid::{Field, Grid};
use crate::potential::Potential;
use crate::spectral;

/// Sources of the general linear system. `g1[n]` enters the step that
/// produces `xi^n` (so `g1[0]` is unused); `g2[n]` enters the step that
/// leaves `xi^n` (so `g2[N]` is unused).
#[derive(Debug, Clone)]
pub struct LinearizedSources {
    pub g1: Vec<Field>,
    pub g2: Vec<Field>,
}

impl LinearizedSources {
    pub fn zeros(grid: Grid, n_steps: usize) -> Self {
        LinearizedSources {
            g1: vec![Field::zeros(grid); n_steps + 1],
            g2: vec![Field::zeros(grid); n_steps + 1],
        }
    }

    /// `g1^n = h (f - phi^n)`, `g2 = 0`.
    pub fn directional(traj: &Trajectory, h: &Field, f: &Field) -> Self {
        let g1 = traj
            .states()
            .iter()
            .map(|phi| h.mul(&f.sub(phi)))
            .collect();
        LinearizedSources {
            g1,
            g2: vec![Field::zeros(*traj.grid()); traj.states().len()],
        }
    }

    fn check(&self, n_steps: usize, grid: &Grid) -> Result<()> {
        if self.g1.len() != n_steps + 1 || self.g2.len() != n_steps + 1 {
            return Err(Error::TrajectoryMismatch(format!(
                "sources cover {}/{} nodes, trajectory has {}",
                self.g1.len(),
                self.g2.len(),
                n_steps + 1
            )));
        }
        for g in self.g1.iter().chain(&self.g2) {
            if g.grid() != grid {
                return Err(Error::GridMismatch);
            }
            g.check_finite("linearized source")?;
        }
        Ok(())
    }
}

/// Solves the general linear system along `traj_bar`, starting from zero.
pub fn solve_linear_general(
    traj_bar: &Trajectory,
    lambda_bar: &FidelityField,
    sources: &LinearizedSources,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = *traj_bar.grid();
    traj_bar.check_against(cfg, lambda_bar.grid())?;
    sources.check(cfg.n_steps, &grid)?;
    let op = cfg.operator(potential, lambda_bar);
    let dt = cfg.dt;
    let eps = potential.eps();
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    states.push(Field::zeros(grid));
    for n in 0..cfg.n_steps {
        let xi: &Field = &states[n];
        let phi = traj_bar.state(n);
        // (dt/eps) L (F'' xi + eps g2) = (dt/eps) L (F'' xi) + dt L g2
        let y: Vec<f64> = phi
            .values()
            .iter()
            .zip(xi.values())
            .zip(sources.g2[n].values())
            .map(|((&p, &x), &g)| potential.d2(p) * x + eps * g)
            .collect();
        let mut rhs = op.explicit(xi.values(), &y);
        for (r, g) in rhs.iter_mut().zip(sources.g1[n + 1].values()) {
            *r += dt * g;
        }
        let next = op.solve_linear(&rhs)?;
        states.push(Field::from_values(grid, next).map_err(|_| Error::NonFinite {
            context: format!("linearized step {n}"),
        })?);
    }
    Trajectory::new(grid, dt, states)
}

/// Directional derivative `xi = DS(lambda_bar)[h]` of the discrete state.
pub fn solve_linearized(
    traj_bar: &Trajectory,
    lambda_bar: &FidelityField,
    h: &Field,
    f: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    h.same_grid(f)?;
    h.same_grid(lambda_bar.lambda())?;
    let h = h.zip_map(lambda_bar.mask_d(), |v, m| if m == 1.0 { 0.0 } else { v });
    let sources = LinearizedSources::directional(traj_bar, &h, f);
    solve_linear_general(traj_bar, lambda_bar, &sources, cfg, potential)
}

/// `eta^n = -eps Laplacian xi^n + (1/eps) F''(phi^n) xi^n`.
pub fn reconstruct_eta(
    xi: &Trajectory,
    traj_bar: &Trajectory,
    potential: &(impl Potential + ?Sized),
) -> Vec<Field> {
    let eps = potential.eps();
    xi.states()
        .iter()
        .zip(traj_bar.states())
        .map(|(x, phi)| {
            let lap = spectral::laplacian(x);
            let react = x.zip_map(phi, |xv, p| potential.d2(p) * xv / eps);
            lap.scaled(-eps).add(&react)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorReport {
    pub taus: Vec<f64>,
    /// `max_n ||S(lambda + tau h) - S(lambda) - tau xi||_{L^2}` per `tau`.
    pub remainders: Vec<f64>,
    /// Least-squares slope of `log remainder` against `log tau`; `None`
    /// when every remainder is exactly zero.
    pub order: Option<f64>,
}

/// Least-squares slope and coefficient of determination of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Taylor test of the linearisation around `lambda0` in direction `h`.
pub fn taylor_remainder_order(
    phi0: &Field,
    lambda0: &FidelityField,
    h: &Field,
    f: &Field,
    taus: &[f64],
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<TaylorReport> {
    let perturbed: Vec<FidelityField> = taus
        .iter()
        .map(|&tau| {
            let mut l = lambda0.lambda().clone();
            l.axpy(tau, h);
            FidelityField::from_control(&l, lambda0.mask_d(), lambda0.lambda_min(), lambda0.lambda_max())
        })
        .collect::<Result<_>>()?;
    let base = forward::solve_states(phi0, lambda0, f, cfg, potential)?;
    let xi = solve_linearized(&base, lambda0, h, f, cfg, potential)?;
    let mut remainders = Vec::with_capacity(taus.len());
    for (lam, &tau) in perturbed.iter().zip(taus) {
        let moved = forward::solve_states(phi0, lam, f, cfg, potential)?;
        let r = moved
            .states()
            .iter()
            .zip(base.states())
            .zip(xi.states())
            .map(|((a, b), x)| {
                let mut d = a.sub(b);
                d.axpy(-tau, x);
                d.norm()
            })
            .fold(0.0, f64::max);
        remainders.push(r);
    }
    let order = if remainders.iter().all(|&r| r == 0.0) {
        None
    } else {
        let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = remainders.iter().map(|r| r.max(f64::MIN_POSITIVE).ln()).collect();
        Some(linear_fit(&lx, &ly).0)
    };
    Ok(TaylorReport {
        taus: taus.to_vec(),
        remainders,
        order,
    })
}
