//! The control problem: cost, reduced gradient, Hessian, projected-gradient
//! optimisation over the box, and optimality diagnostics.
//!
//! ```text
//! J(lambda) = (alpha1/2) sum_n w_n dt ||chi (phi^n - f)||^2
//!           + (alpha2/2) ||chi (phi^N - f)||^2
//!           + (beta/r) sum_{Omega \ D} lambda^{-r} hx hy
//! ```
//!
//! The gradient density `g` satisfies `DJ[h] = <g, h>` for every direction
//! supported off `D`, so descent moves along `-g`. The quantity inside the
//! variational inequality of the continuous problem is `-g`.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::adjoint;
use crate::error::{Error, Result};
use crate::forward::{self, FidelityField, SolverConfig, Trajectory};
use crate::grid::Field;
use crate::potential::Potential;
use crate::sensitivity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// Exponent of the penalty `(beta/r) lambda^{-r}`.
    pub r: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            alpha1: 1.0,
            alpha2: 0.0,
            beta: 1e-3,
            r: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let (a1, a2, b) = (self.alpha1, self.alpha2, self.beta);
        if !(a1 >= 0.0 && a2 >= 0.0 && b >= 0.0) || !(a1.is_finite() && a2.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(
                "alpha1, alpha2 and beta must be finite and nonnegative".into(),
            ));
        }
        if a1 == 0.0 && a2 == 0.0 && b == 0.0 {
            return Err(Error::InvalidParameter(
                "alpha1, alpha2 and beta cannot all be zero".into(),
            ));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter("penalty exponent r must be positive".into()));
        }
        Ok(())
    }
}

/// Trapezoid weight of node `n` out of `0..=n_steps`.
pub fn trapezoid_weight(n: usize, n_steps: usize) -> f64 {
    if n_steps == 0 {
        0.0
    } else if n == 0 || n == n_steps {
        0.5
    } else {
        1.0
    }
}

/// The admissible set `lambda_min <= lambda0 <= lambda_max` off `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mask_d: Field,
}

impl ControlBox {
    pub fn new(lambda_min: f64, lambda_max: f64, mask_d: Field) -> Result<Self> {
        crate::imaging::validate_mask(&mask_d)?;
        if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(ControlBox {
            lambda_min,
            lambda_max,
            mask_d,
        })
    }

    pub fn midpoint(&self) -> Field {
        let mid = 0.5 * (self.lambda_min + self.lambda_max);
        self.mask_d.map(|m| if m == 1.0 { 0.0 } else { mid })
    }

    pub fn fidelity(&self, lambda0: &Field) -> Result<FidelityField> {
        FidelityField::from_control(lambda0, &self.mask_d, self.lambda_min, self.lambda_max)
    }
}

/// Pointwise clamp into the box off `D`, zero on `D`.
pub fn project_box(lambda0: &Field, bounds: &ControlBox) -> Field {
    lambda0.zip_map(&bounds.mask_d, |l, m| {
        if m == 1.0 {
            0.0
        } else {
            l.clamp(bounds.lambda_min, bounds.lambda_max)
        }
    })
}

/// `||lambda - P(lambda - s0 g)|| / s0`: zero exactly when the discrete
/// variational inequality holds.
pub fn stationarity(lambda0: &Field, g: &Field, bounds: &ControlBox, s0: f64) -> f64 {
    let mut trial = lambda0.clone();
    trial.axpy(-s0, g);
    lambda0.sub(&project_box(&trial, bounds)).norm() / s0
}

/// The cost of a computed trajectory.
pub fn cost(traj: &Trajectory, lambda: &FidelityField, f: &Field, weights: &CostWeights) -> f64 {
    let chi = lambda.mask_undamaged();
    let n_steps = traj.n_steps();
    let dt = traj.dt();
    let misfit = |phi: &Field| {
        let d = phi.sub(f).mul(&chi);
        d.dot(&d)
    };
    let tracking: f64 = traj
        .states()
        .iter()
        .enumerate()
        .map(|(n, phi)| trapezoid_weight(n, n_steps) * dt * misfit(phi))
        .sum();
    let final_misfit = if weights.alpha2 != 0.0 { misfit(traj.last()) } else { 0.0 };
    let cell = traj.grid().cell_area();
    let penalty: f64 = lambda
        .lambda()
        .values()
        .iter()
        .zip(chi.values())
        .filter(|(_, &c)| c == 1.0)
        .map(|(&l, _)| l.powf(-weights.r))
        .sum::<f64>()
        * cell;
    0.5 * weights.alpha1 * tracking + 0.5 * weights.alpha2 * final_misfit + weights.beta / weights.r * penalty
}

/// Riesz density of `DJ` in `L^2(Omega \ D)`:
/// `g = sum_{n >= 1} dt p^n (f - phi^n) - beta lambda^{-(r+1)}`, zero on `D`.
pub fn reduced_gradient(
    traj: &Trajectory,
    adj: &Trajectory,
    lambda: &FidelityField,
    f: &Field,
    weights: &CostWeights,
) -> Field {
    let dt = traj.dt();
    let mut g = Field::zeros(*traj.grid());
    for (phi, p) in traj.states().iter().zip(adj.states()).skip(1) {
        g.axpy(dt, &p.mul(&f.sub(phi)));
    }
    let r = weights.r;
    let penalty = lambda.lambda().map(|l| if l > 0.0 { l.powf(-(r + 1.0)) } else { 0.0 });
    g.axpy(-weights.beta, &penalty);
    g.zip_map(lambda.mask_d(), |v, m| if m == 1.0 { 0.0 } else { v })
}

/// Riesz density of `D^2J[., k]`, so that `D^2J[h, k] = <hessian_apply(k), h>`.
/// Requires `alpha2 = 0`.
#[allow(clippy::too_many_arguments)]
pub fn hessian_apply(
    traj: &Trajectory,
    adj: &Trajectory,
    lambda: &FidelityField,
    f: &Field,
    weights: &CostWeights,
    k: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Field> {
    if weights.alpha2 != 0.0 {
        return Err(Error::Alpha2NotZero(weights.alpha2));
    }
    let k = k.zip_map(lambda.mask_d(), |v, m| if m == 1.0 { 0.0 } else { v });
    let xi = sensitivity::solve_linearized(traj, lambda, &k, f, cfg, potential)?;
    let big_p = adjoint::solve_linearized_adjoint(traj, adj, &xi, lambda, &k, weights, cfg, potential)?;
    let dt = traj.dt();
    let mut out = Field::zeros(*traj.grid());
    for n in 1..=traj.n_steps() {
        out.axpy(dt, &big_p.state(n).mul(&f.sub(traj.state(n))));
        out.axpy(-dt, &adj.state(n).mul(xi.state(n)));
    }
    let r = weights.r;
    let curvature = lambda.lambda().map(|l| if l > 0.0 { (r + 1.0) * l.powf(-(r + 2.0)) } else { 0.0 });
    out.axpy(weights.beta, &curvature.mul(&k));
    Ok(out.zip_map(lambda.mask_d(), |v, m| if m == 1.0 { 0.0 } else { v }))
}

/// `D^2J[h, k]`.
#[allow(clippy::too_many_arguments)]
pub fn hessian_form(
    traj: &Trajectory,
    adj: &Trajectory,
    lambda: &FidelityField,
    f: &Field,
    weights: &CostWeights,
    h: &Field,
    k: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<f64> {
    Ok(hessian_apply(traj, adj, lambda, f, weights, k, cfg, potential)?.dot(h))
}

/// Strongly active set and the critical cone at a control.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCone {
    /// `|g| > tol_active` off `D`.
    pub strongly_active: Vec<bool>,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
    pub damaged: Vec<bool>,
}

impl CriticalCone {
    pub fn strongly_active_count(&self) -> usize {
        self.strongly_active.iter().filter(|&&a| a).count()
    }

    /// Cells where the cone leaves the direction unrestricted or sign
    /// restricted (anything but forced zero).
    pub fn free_count(&self) -> usize {
        (0..self.damaged.len())
            .filter(|&i| !self.damaged[i] && !self.strongly_active[i])
            .count()
    }

    /// Whether `h` lies in the cone: zero on `D` and on the strongly active
    /// set, `h >= 0` at the lower bound, `h <= 0` at the upper bound.
    pub fn contains(&self, h: &Field) -> bool {
        h.values().iter().enumerate().all(|(i, &v)| {
            // a cell with lambda_min == lambda_max is pinned like an active one
            if self.damaged[i] || self.strongly_active[i] || (self.at_lower[i] && self.at_upper[i]) {
                v == 0.0
            } else if self.at_lower[i] {
                v >= 0.0
            } else if self.at_upper[i] {
                v <= 0.0
            } else {
                true
            }
        })
    }

    /// Nearest point of the cone (componentwise).
    pub fn project(&self, h: &Field) -> Field {
        let vals = h
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if self.damaged[i] || self.strongly_active[i] || (self.at_lower[i] && self.at_upper[i]) {
                    0.0
                } else if self.at_lower[i] {
                    v.max(0.0)
                } else if self.at_upper[i] {
                    v.min(0.0)
                } else {
                    v
                }
            })
            .collect();
        Field::from_values(*h.grid(), vals).expect("projection of finite data")
    }
}

pub fn active_set_and_cone(lambda0: &Field, g: &Field, bounds: &ControlBox, tol_active: f64) -> CriticalCone {
    let n = lambda0.values().len();
    let mut cone = CriticalCone {
        strongly_active: vec![false; n],
        at_lower: vec![false; n],
        at_upper: vec![false; n],
        damaged: vec![false; n],
    };
    for i in 0..n {
        if bounds.mask_d.values()[i] == 1.0 {
            cone.damaged[i] = true;
            continue;
        }
        let l = lambda0.values()[i];
        cone.strongly_active[i] = g.values()[i].abs() > tol_active;
        cone.at_lower[i] = l <= bounds.lambda_min;
        cone.at_upper[i] = l >= bounds.lambda_max;
    }
    cone
}

/// Default activity threshold: `1e-8 ||g||_inf`.
pub fn default_tol_active(g: &Field) -> f64 {
    1e-8 * g.max_abs()
}

/// Everything needed to evaluate the reduced cost and its derivatives.
#[derive(Debug, Clone)]
pub struct ControlProblem<'a, P: Potential + ?Sized> {
    pub phi0: Field,
    pub f: Field,
    pub bounds: ControlBox,
    pub weights: CostWeights,
    pub cfg: SolverConfig,
    pub potential: &'a P,
}

/// State, cost and (once requested) adjoint and gradient at one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub control: Field,
    pub fidelity: FidelityField,
    pub trajectory: Trajectory,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct GradientEvaluation {
    pub eval: Evaluation,
    pub adjoint: Trajectory,
    pub gradient: Field,
}

impl<'a, P: Potential + ?Sized> ControlProblem<'a, P> {
    pub fn new(
        phi0: Field,
        f: Field,
        bounds: ControlBox,
        weights: CostWeights,
        cfg: SolverConfig,
        potential: &'a P,
    ) -> Result<Self> {
        weights.validate()?;
        cfg.validate()?;
        phi0.same_grid(&f)?;
        phi0.same_grid(&bounds.mask_d)?;
        Ok(ControlProblem {
            phi0,
            f,
            bounds,
            weights,
            cfg,
            potential,
        })
    }

    pub fn evaluate(&self, control: &Field) -> Result<Evaluation> {
        let fidelity = self.bounds.fidelity(control)?;
        let trajectory = forward::solve_states(&self.phi0, &fidelity, &self.f, &self.cfg, self.potential)?;
        let cost = cost(&trajectory, &fidelity, &self.f, &self.weights);
        Ok(Evaluation {
            control: control.clone(),
            fidelity,
            trajectory,
            cost,
        })
    }

    pub fn cost(&self, control: &Field) -> Result<f64> {
        Ok(self.evaluate(control)?.cost)
    }

    pub fn gradient_at(&self, eval: Evaluation) -> Result<GradientEvaluation> {
        let adjoint = adjoint::solve_adjoint(
            &eval.trajectory,
            &eval.fidelity,
            &self.f,
            &self.weights,
            &self.cfg,
            self.potential,
        )?;
        let gradient = reduced_gradient(&eval.trajectory, &adjoint, &eval.fidelity, &self.f, &self.weights);
        Ok(GradientEvaluation {
            eval,
            adjoint,
            gradient,
        })
    }

    pub fn gradient(&self, control: &Field) -> Result<GradientEvaluation> {
        self.gradient_at(self.evaluate(control)?)
    }

    pub fn hessian_apply(&self, at: &GradientEvaluation, k: &Field) -> Result<Field> {
        hessian_apply(
            &at.eval.trajectory,
            &at.adjoint,
            &at.eval.fidelity,
            &self.f,
            &self.weights,
            k,
            &self.cfg,
            self.potential,
        )
    }

    /// Zeroes a direction on `D`.
    pub fn restrict(&self, h: &Field) -> Field {
        h.zip_map(&self.bounds.mask_d, |v, m| if m == 1.0 { 0.0 } else { v })
    }
}

/// Random direction supported off `D`, unit `L^2` norm.
pub fn random_direction(mask_d: &Field, seed: u64) -> Field {
    let h = gaussian_field(mask_d, seed);
    let n = h.norm();
    h.scaled(1.0 / n)
}

/// Random relative perturbation of a control: `control * r` with `r`
/// Gaussian, supported off `D` and scaled to `max |r| = 1`. Used by the
/// derivative checks so that a step `tau` changes the control by at most a
/// fraction `tau` of its value.
pub fn relative_direction(control: &Field, mask_d: &Field, seed: u64) -> Field {
    let r = gaussian_field(mask_d, seed);
    let m = r.max_abs();
    r.scaled(1.0 / m).mul(control)
}

fn gaussian_field(mask_d: &Field, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = mask_d
        .values()
        .iter()
        .map(|&m| {
            let v: f64 = StandardNormal.sample(&mut rng);
            if m == 1.0 { 0.0 } else { v }
        })
        .collect();
    Field::from_values(*mask_d.grid(), vals).expect("finite samples")
}

/// One gradient-check direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckRow {
    pub adjoint: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

/// Compares `<g, h>` with `(J(lambda + tau h) - J(lambda - tau h)) / (2 tau)`
/// for each direction. Both perturbed controls must lie in the box; a step
/// that leaves it is reported as a box violation.
pub fn gradient_check<P: Potential + ?Sized>(
    problem: &ControlProblem<'_, P>,
    control: &Field,
    directions: &[Field],
    tau: f64,
) -> Result<Vec<GradCheckRow>> {
    let at = problem.gradient(control)?;
    directions
        .par_iter()
        .map(|h| {
            let h = problem.restrict(h);
            let adj = at.gradient.dot(&h);
            let mut plus = control.clone();
            plus.axpy(tau, &h);
            let mut minus = control.clone();
            minus.axpy(-tau, &h);
            let fd = (problem.cost(&plus)? - problem.cost(&minus)?) / (2.0 * tau);
            Ok(GradCheckRow {
                adjoint: adj,
                finite_difference: fd,
                relative_error: relative_error(adj, fd),
            })
        })
        .collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 { 0.0 } else { (a - b).abs() / scale }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessCheckRow {
    pub hk_h: f64,
    pub hh_k: f64,
    pub hh_h: f64,
    pub second_difference: f64,
    pub symmetry_defect: f64,
    pub relative_error: f64,
}

/// For each pair `(h, k)`: symmetry `|D2J[h,k] - D2J[k,h]|` scaled by
/// `|D2J[h,h]| + |D2J[k,k]| + 1`, and `D2J[h,h]` against the second
/// difference `(J(+tau h) - 2J + J(-tau h)) / tau^2`.
pub fn hessian_check<P: Potential + ?Sized>(
    problem: &ControlProblem<'_, P>,
    control: &Field,
    pairs: &[(Field, Field)],
    tau: f64,
) -> Result<Vec<HessCheckRow>> {
    let at = problem.gradient(control)?;
    let j0 = at.eval.cost;
    pairs
        .par_iter()
        .map(|(h, k)| {
            let (h, k) = (problem.restrict(h), problem.restrict(k));
            let hh = problem.hessian_apply(&at, &h)?;
            let hk = problem.hessian_apply(&at, &k)?;
            let hk_h = hk.dot(&h);
            let hh_k = hh.dot(&k);
            let hh_h = hh.dot(&h);
            let kk_k = hk.dot(&k);
            let mut plus = control.clone();
            plus.axpy(tau, &h);
            let mut minus = control.clone();
            minus.axpy(-tau, &h);
            let sd = (problem.cost(&plus)? - 2.0 * j0 + problem.cost(&minus)?) / (tau * tau);
            Ok(HessCheckRow {
                hk_h,
                hh_k,
                hh_h,
                second_difference: sd,
                symmetry_defect: (hk_h - hh_k).abs() / (hh_h.abs() + kk_k.abs() + 1.0),
                relative_error: relative_error(hh_h, sd),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Stop once `stationarity(lambda, g, box, stationarity_step)` is below
    /// both `tol` and `rtol` times its initial value.
    pub tol: f64,
    pub rtol: f64,
    /// Step `s0` of the stationarity measure; `None` uses the initial trial
    /// step, which puts `s0 g` on the scale of the box.
    pub stationarity_step: Option<f64>,
    pub armijo_c: f64,
    pub max_halvings: usize,
    /// First trial step; `None` picks the step whose largest change is a
    /// tenth of the box width.
    pub initial_step: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            max_iter: 200,
            tol: 1e-6,
            rtol: 1e-4,
            stationarity_step: None,
            armijo_c: 1e-4,
            max_halvings: 40,
            initial_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub cost: f64,
    pub stationarity: f64,
    /// Accepted step (0 for the record of the final iterate).
    pub step_size: f64,
    pub armijo_backtracks: usize,
    pub min_lambda: f64,
    pub max_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveSummary {
    pub at_lower: usize,
    pub at_upper: usize,
    pub interior: usize,
    pub strongly_active: usize,
}

#[derive(Debug, Clone)]
pub struct OptimReport {
    pub iterations: usize,
    pub converged: bool,
    /// The `s0` used for every stationarity value in the history.
    pub stationarity_step: f64,
    pub history: Vec<IterRecord>,
    pub active: ActiveSummary,
    pub wall_time: Duration,
}

impl OptimReport {
    pub fn initial_cost(&self) -> f64 {
        self.history[0].cost
    }
    pub fn final_cost(&self) -> f64 {
        self.history.last().expect("nonempty history").cost
    }
    pub fn final_stationarity(&self) -> f64 {
        self.history.last().expect("nonempty history").stationarity
    }
    pub fn costs_nonincreasing(&self) -> bool {
        self.history.windows(2).all(|w| w[1].cost <= w[0].cost)
    }
}

fn control_range(control: &Field, mask_d: &Field) -> (f64, f64) {
    control
        .values()
        .iter()
        .zip(mask_d.values())
        .filter(|(_, &m)| m == 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&l, _)| (lo.min(l), hi.max(l)))
}

/// Projected gradient descent with Armijo backtracking. Trial steps after
/// the first use the Barzilai-Borwein length.
pub fn optimize<P: Potential + ?Sized>(
    problem: &ControlProblem<'_, P>,
    initial: &Field,
    opt: &OptimConfig,
) -> Result<(Field, OptimReport, GradientEvaluation)> {
    let start = Instant::now();
    let bounds = &problem.bounds;
    let mut current = problem.gradient(&project_box(initial, bounds))?;
    let mut history = Vec::new();
    let mut step = opt.initial_step.unwrap_or_else(|| {
        let gmax = current.gradient.max_abs();
        if gmax > 0.0 { 0.1 * (bounds.lambda_max - bounds.lambda_min) / gmax } else { 1.0 }
    });
    let s0 = opt.stationarity_step.unwrap_or(step);
    let mut converged = false;
    let mut iter = 0;
    let mut stat0 = None;
    loop {
        let stat = stationarity(&current.eval.control, &current.gradient, bounds, s0);
        let stat0 = *stat0.get_or_insert(stat);
        let (lo, hi) = control_range(&current.eval.control, &bounds.mask_d);
        let mut record = IterRecord {
            iter,
            cost: current.eval.cost,
            stationarity: stat,
            step_size: 0.0,
            armijo_backtracks: 0,
            min_lambda: lo,
            max_lambda: hi,
        };
        if stat <= opt.tol && stat <= opt.rtol * stat0 {
            converged = true;
            history.push(record);
            break;
        }
        if iter == opt.max_iter {
            history.push(record);
            break;
        }
        let x = &current.eval.control;
        let g = &current.gradient;
        let mut s = step;
        let mut halvings = 0;
        let accepted = loop {
            let mut trial = x.clone();
            trial.axpy(-s, g);
            let trial = project_box(&trial, bounds);
            let d = trial.sub(x);
            let decrease = g.dot(&d);
            let eval = problem.evaluate(&trial)?;
            if d.max_abs() > 0.0 && eval.cost <= current.eval.cost + opt.armijo_c * decrease {
                break eval;
            }
            if halvings == opt.max_halvings {
                return Err(Error::LineSearchFailed { halvings });
            }
            halvings += 1;
            s *= 0.5;
        };
        record.step_size = s;
        record.armijo_backtracks = halvings;
        log::debug!(
            "iter {iter}: J = {:.6e}, stationarity = {stat:.3e}, step = {s:.3e}, backtracks = {halvings}",
            current.eval.cost
        );
        history.push(record);
        let next = problem.gradient_at(accepted)?;
        let dx = next.eval.control.sub(x);
        let dg = next.gradient.sub(g);
        let curv = dx.dot(&dg);
        step = if curv > 0.0 { dx.dot(&dx) / curv } else { 2.0 * s };
        current = next;
        iter += 1;
    }
    let tol_active = default_tol_active(&current.gradient);
    let cone = active_set_and_cone(&current.eval.control, &current.gradient, bounds, tol_active);
    let count = |v: &[bool]| {
        v.iter()
            .zip(&cone.damaged)
            .filter(|(&a, &d)| a && !d)
            .count()
    };
    let at_lower = count(&cone.at_lower);
    let at_upper = count(&cone.at_upper);
    let undamaged = cone.damaged.iter().filter(|&&d| !d).count();
    let active = ActiveSummary {
        at_lower,
        at_upper,
        interior: undamaged - at_lower - at_upper,
        strongly_active: cone.strongly_active_count(),
    };
    let report = OptimReport {
        iterations: iter,
        converged,
        stationarity_step: s0,
        history,
        active,
        wall_time: start.elapsed(),
    };
    Ok((current.eval.control.clone(), report, current))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderReport {
    /// `D2J[h, h]` for each sampled direction that survived projection.
    pub curvatures: Vec<f64>,
    /// Directions that projected to zero.
    pub skipped: usize,
    pub strongly_active: usize,
    /// Cells where the cone does not force a zero.
    pub free_cells: usize,
}

impl SecondOrderReport {
    pub fn min_curvature(&self) -> Option<f64> {
        self.curvatures.iter().cloned().reduce(f64::min)
    }
}

/// Samples `n_dirs` Gaussian directions, projects them into the critical
/// cone, normalises, and evaluates the curvature along each.
pub fn second_order_check<P: Potential + ?Sized>(
    problem: &ControlProblem<'_, P>,
    at: &GradientEvaluation,
    n_dirs: usize,
    tol_active: f64,
    seed: u64,
) -> Result<SecondOrderReport> {
    let cone = active_set_and_cone(&at.eval.control, &at.gradient, &problem.bounds, tol_active);
    let dirs: Vec<Field> = (0..n_dirs)
        .map(|i| cone.project(&random_direction(&problem.bounds.mask_d, seed.wrapping_add(i as u64))))
        .collect();
    let results: Vec<Option<f64>> = dirs
        .par_iter()
        .map(|h| {
            let n = h.norm();
            if n == 0.0 {
                return Ok(None);
            }
            let h = h.scaled(1.0 / n);
            Ok(Some(problem.hessian_apply(at, &h)?.dot(&h)))
        })
        .collect::<Result<_>>()?;
    Ok(SecondOrderReport {
        skipped: results.iter().filter(|r| r.is_none()).count(),
        curvatures: results.into_iter().flatten().collect(),
        strongly_active: cone.strongly_active_count(),
        free_cells: cone.free_count(),
    })
}
