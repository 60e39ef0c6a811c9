//! Large-fidelity decay experiment.
//!
//! A near-stationary target `f_tilde` is built with the solver itself, then
//! the state is started away from it and the distance
//! `d(t) = ||chi (phi(t) - f_tilde)||_{-1}` is recorded. The proposition being
//! probed concerns a problem posed on the undamaged region with matching
//! conditions on the hole boundary; here the whole-domain analogue is run and
//! the subdomain dual norm is replaced by the masked whole-domain one.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{self, FidelityField, SolverConfig};
use crate::grid::Field;
use crate::potential::{LogPotential, Potential, PotentialParams};
use crate::sensitivity::linear_fit;
use crate::spectral;

/// Header line carried by every decay output.
pub const REPORT_HEADER: &str =
    "whole-domain analogue of the subdomain problem; distance in the surrogate-norm (masked H^-1 on the full rectangle)";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizeConfig {
    /// Fidelity on the undamaged region during the first stage.
    pub lambda_big: f64,
    pub dt: f64,
    /// Step cap for each stage.
    pub max_steps: usize,
    /// Stop a stage once `||phi^{n+1} - phi^n|| / dt <= stat_tol`.
    pub stat_tol: f64,
}

impl Default for RegularizeConfig {
    fn default() -> Self {
        RegularizeConfig {
            lambda_big: 1e3,
            dt: 0.02,
            max_steps: 100_000,
            stat_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegularizedTarget {
    pub field: Field,
    /// Steps taken by the fidelity stage and the relaxation stage.
    pub steps: (usize, usize),
    /// `||phi^{n+1} - phi^n|| / dt` at the last step.
    pub stationarity: f64,
    /// `L^2` norm over the undamaged cells of
    /// `-Laplacian(-eps Laplacian f + F'(f) / eps)`.
    pub residual: f64,
}

/// Euler-Lagrange residual `Laplacian mu` of a state, measured on the
/// undamaged cells.
pub fn euler_lagrange_residual(phi: &Field, mask_d: &Field, potential: &(impl Potential + ?Sized)) -> f64 {
    let mu = forward::chemical_potential(phi, potential);
    spectral::laplacian(&mu)
        .zip_map(mask_d, |v, m| if m == 1.0 { 0.0 } else { v })
        .norm()
}

fn relax(
    start: &Field,
    lambda: &FidelityField,
    f: &Field,
    rc: &RegularizeConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<(Field, usize, f64)> {
    const CHUNK: usize = 100;
    let mut phi = start.clone();
    let mut rate = f64::INFINITY;
    let mut taken = 0;
    while taken < rc.max_steps {
        let n = CHUNK.min(rc.max_steps - taken);
        let traj = forward::solve_states(&phi, lambda, f, &SolverConfig::new(rc.dt, n), potential)?;
        let mut states = traj.into_states();
        for k in 1..states.len() {
            rate = states[k].sub(&states[k - 1]).norm() / rc.dt;
            if rate <= rc.stat_tol {
                return Ok((states.swap_remove(k), taken + k, rate));
            }
        }
        taken += n;
        phi = states.pop().expect("nonempty");
    }
    Err(Error::NotStationary {
        steps: rc.max_steps,
        residual: rate,
    })
}

/// Surrogate of the regularised target: relax towards `f_raw` under a large
/// fidelity on the undamaged region, then relax with no fidelity so that the
/// result is a stationary point of the plain Cahn-Hilliard flow.
pub fn regularized_target(
    f_raw: &Field,
    mask_d: &Field,
    potential: &(impl Potential + ?Sized),
    rc: &RegularizeConfig,
) -> Result<RegularizedTarget> {
    f_raw.same_grid(mask_d)?;
    spectral::check_binary_mask(mask_d)?;
    let big = FidelityField::unchecked(mask_d.map(|m| if m == 1.0 { 0.0 } else { rc.lambda_big }), mask_d.clone());
    let (stage1, n1, _) = relax(f_raw, &big, f_raw, rc, potential)?;
    let none = FidelityField::zero(mask_d.clone());
    let (field, n2, rate) = relax(&stage1, &none, f_raw, rc, potential)?;
    let residual = euler_lagrange_residual(&field, mask_d, potential);
    log::debug!("regularised target: {n1} + {n2} steps, stationarity {rate:.3e}, residual {residual:.3e}");
    Ok(RegularizedTarget {
        field,
        steps: (n1, n2),
        stationarity: rate,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub lambda0: f64,
    pub times: Vec<f64>,
    pub hminus1_values: Vec<f64>,
    /// `-slope` of `log d(t)` over the fit window, per unit time.
    pub fitted_rate: f64,
    pub fit_r2: f64,
    /// Number of samples used by the fit.
    pub fit_points: usize,
    pub eps: f64,
    /// `lambda0 * eps^3`, the quantity the decay threshold is stated in.
    pub lambda0_eps3: f64,
}

/// Fits `log d = a - rate t` on the second half of the samples, ignoring
/// samples that have reached the round-off floor (`d <= floor`). Returns
/// `(rate, r2, points)`; the rate is NaN when fewer than two points remain.
pub fn fit_decay(times: &[f64], values: &[f64], floor: f64) -> (f64, f64, usize) {
    let start = times.len() / 2;
    let (x, y): (Vec<f64>, Vec<f64>) = times[start..]
        .iter()
        .zip(&values[start..])
        .filter(|(_, &v)| v > floor && v.is_finite())
        .map(|(&t, &v)| (t, v.ln()))
        .unzip();
    if x.len() < 2 {
        return (f64::NAN, f64::NAN, x.len());
    }
    let (slope, _, r2) = linear_fit(&x, &y);
    (-slope, r2, x.len())
}

/// Relative floor below which distances are treated as converged.
pub const DECAY_FLOOR: f64 = 1e-11;

/// One decay run per fidelity level; rungs run in parallel.
pub fn decay_experiment(
    f_tilde: &Field,
    phi0: &Field,
    mask_d: &Field,
    lambda0_values: &[f64],
    potential: &(impl Potential + ?Sized),
    cfg: &SolverConfig,
) -> Result<Vec<DecayReport>> {
    let chi = mask_d.map(|m| 1.0 - m);
    let eps = potential.eps();
    lambda0_values
        .par_iter()
        .map(|&lambda0| {
            let lambda = FidelityField::unchecked(chi.scaled(lambda0), mask_d.clone());
            let traj = forward::solve_states(phi0, &lambda, f_tilde, cfg, potential)?;
            let values: Vec<f64> = traj
                .states()
                .iter()
                .map(|phi| spectral::hminus1_norm(&phi.sub(f_tilde).mul(&chi)))
                .collect();
            let times = traj.times();
            let floor = DECAY_FLOOR * values[0];
            let (rate, r2, points) = fit_decay(&times, &values, floor);
            Ok(DecayReport {
                lambda0,
                times,
                hminus1_values: values,
                fitted_rate: rate,
                fit_r2: r2,
                fit_points: points,
                eps,
                lambda0_eps3: lambda0 * eps.powi(3),
            })
        })
        .collect()
}

/// Smooth zero-mean perturbation used to start the decay runs.
pub fn smooth_perturbation(template: &Field, amplitude: f64, seed: u64) -> Field {
    let noise = crate::control::random_direction(&Field::zeros(*template.grid()), seed);
    let smooth = forward::smooth(&noise, 0.5);
    let smooth = smooth.map(|v| v - spectral::mean(&smooth));
    smooth.scaled(amplitude / smooth.max_abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub eps: f64,
    pub target_residual: f64,
    pub report: DecayReport,
}

/// Decay rate at a fixed fidelity for each interface width. Each row builds
/// its own target and starts from it plus the same perturbation.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_threshold_scan(
    f_raw: &Field,
    mask_d: &Field,
    eps_values: &[f64],
    lambda0: f64,
    base: &PotentialParams,
    cfg: &SolverConfig,
    rc: &RegularizeConfig,
    perturbation: &Field,
) -> Result<Vec<ScanRow>> {
    eps_values
        .par_iter()
        .map(|&eps| {
            let params = PotentialParams { eps, ..*base };
            let potential = LogPotential::new(params)?;
            let target = regularized_target(f_raw, mask_d, &potential, rc)?;
            let phi0 = target.field.add(perturbation);
            let mut report =
                decay_experiment(&target.field, &phi0, mask_d, &[lambda0], &potential, cfg)?;
            Ok(ScanRow {
                eps,
                target_residual: target.residual,
                report: report.remove(0),
            })
        })
        .collect()
}
