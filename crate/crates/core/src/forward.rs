//! Time integration of the Cahn-Hilliard inpainting system
//!
//! ```text
//! d_t phi - Laplacian mu = lambda (f - phi)
//! mu = -eps Laplacian phi + (1/eps) F'(phi)
//! ```
//!
//! with homogeneous Neumann conditions. The scheme is linearly implicit: the
//! biharmonic term and the fidelity reaction are implicit, `F'` is explicit
//! and balanced by the stabilisation `(S/eps)(phi^{n+1} - phi^n)`.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::operator::StepOperator;
use crate::potential::Potential;
use crate::spectral::{self, check_binary_mask, Dct2d};

/// Fidelity coefficient: a control on the undamaged region, zero on `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityField {
    lambda: Field,
    mask_d: Field,
    lambda_min: f64,
    lambda_max: f64,
}

impl FidelityField {
    /// Validates `lambda = 0` on `D` and `lambda in [lambda_min, lambda_max]`
    /// elsewhere.
    pub fn new(lambda: Field, mask_d: Field, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        lambda.same_grid(&mask_d)?;
        check_binary_mask(&mask_d)?;
        if !(lambda_min > 0.0 && lambda_min <= lambda_max) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        for (idx, (&l, &m)) in lambda.values().iter().zip(mask_d.values()).enumerate() {
            if m == 1.0 && l != 0.0 {
                return Err(Error::BoxViolation(format!(
                    "lambda = {l} inside the damaged region at cell {idx}"
                )));
            }
            if m == 0.0 && !(l >= lambda_min && l <= lambda_max) {
                return Err(Error::BoxViolation(format!(
                    "lambda = {l} outside [{lambda_min}, {lambda_max}] at cell {idx}"
                )));
            }
        }
        Ok(FidelityField {
            lambda,
            mask_d,
            lambda_min,
            lambda_max,
        })
    }

    /// `lambda0` on the undamaged cells, zero on `D`.
    pub fn constant(mask_d: Field, lambda0: f64, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        let lambda = mask_d.map(|m| if m == 1.0 { 0.0 } else { lambda0 });
        FidelityField::new(lambda, mask_d, lambda_min, lambda_max)
    }

    /// Builds the extension of a control: values of `lambda0` off `D`, zero on
    /// `D`.
    pub fn from_control(
        lambda0: &Field,
        mask_d: &Field,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        let lambda = lambda0.zip_map(mask_d, |l, m| if m == 1.0 { 0.0 } else { l });
        FidelityField::new(lambda, mask_d.clone(), lambda_min, lambda_max)
    }

    /// Fidelity without any control: zero everywhere. Only valid as a solver
    /// input, not as a member of the admissible set.
    pub fn zero(mask_d: Field) -> Self {
        FidelityField {
            lambda: Field::zeros(*mask_d.grid()),
            mask_d,
            lambda_min: 0.0,
            lambda_max: 0.0,
        }
    }

    /// A fidelity field with no admissibility checks. Used for experiment
    /// setups where `D` is empty and `lambda` constant.
    pub fn unchecked(lambda: Field, mask_d: Field) -> Self {
        let (lo, hi) = (lambda.min(), lambda.max());
        FidelityField {
            lambda,
            mask_d,
            lambda_min: lo,
            lambda_max: hi,
        }
    }

    pub fn lambda(&self) -> &Field {
        &self.lambda
    }
    pub fn mask_d(&self) -> &Field {
        &self.mask_d
    }
    /// `chi_{Omega \ D}`.
    pub fn mask_undamaged(&self) -> Field {
        self.mask_d.map(|m| 1.0 - m)
    }
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
    pub fn grid(&self) -> &Grid {
        self.lambda.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub n_steps: usize,
    /// `None` selects `S = curvature_bound / 2` from the potential.
    pub stabilization: Option<f64>,
    /// Inner solve tolerance; the per-step mass defect stays below it.
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-2,
            n_steps: 100,
            stabilization: None,
            picard_tol: 1e-10,
            picard_max: 200,
        }
    }
}

impl SolverConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        SolverConfig {
            dt,
            n_steps,
            ..Default::default()
        }
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if let Some(s) = self.stabilization {
            if !(s >= 0.0) {
                return Err(Error::InvalidParameter(
                    "stabilization must be nonnegative".into(),
                ));
            }
        }
        if !(self.picard_tol > 0.0) || self.picard_max == 0 {
            return Err(Error::InvalidParameter(
                "picard_tol must be positive and picard_max nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn stabilization_for(&self, potential: &(impl Potential + ?Sized)) -> f64 {
        self.stabilization
            .unwrap_or_else(|| 0.5 * potential.curvature_bound())
    }

    pub(crate) fn operator(
        &self,
        potential: &(impl Potential + ?Sized),
        lambda: &FidelityField,
    ) -> StepOperator {
        StepOperator::new(
            *lambda.grid(),
            self.dt,
            potential.eps(),
            self.stabilization_for(potential),
            lambda.lambda(),
            self.picard_tol,
            self.picard_max,
        )
    }
}

/// Time-indexed fields on a uniform time grid `t_n = n dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    dt: f64,
    states: Vec<Field>,
}

impl Trajectory {
    pub fn new(grid: Grid, dt: f64, states: Vec<Field>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if states.is_empty() {
            return Err(Error::InvalidParameter("trajectory needs a state".into()));
        }
        for (n, s) in states.iter().enumerate() {
            if *s.grid() != grid {
                return Err(Error::GridMismatch);
            }
            s.check_finite(&format!("trajectory state {n}"))?;
        }
        Ok(Trajectory { grid, dt, states })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn states(&self) -> &[Field] {
        &self.states
    }
    pub fn state(&self, n: usize) -> &Field {
        &self.states[n]
    }
    pub fn last(&self) -> &Field {
        self.states.last().expect("nonempty trajectory")
    }
    /// Number of time steps (states minus one).
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|n| n as f64 * self.dt).collect()
    }
    pub fn into_states(self) -> Vec<Field> {
        self.states
    }

    pub(crate) fn check_against(&self, cfg: &SolverConfig, grid: &Grid) -> Result<()> {
        if self.grid != *grid {
            return Err(Error::TrajectoryMismatch("grid differs".into()));
        }
        if self.dt != cfg.dt {
            return Err(Error::TrajectoryMismatch(format!(
                "dt {} vs configured {}",
                self.dt, cfg.dt
            )));
        }
        if self.n_steps() != cfg.n_steps {
            return Err(Error::TrajectoryMismatch(format!(
                "{} steps vs configured {}",
                self.n_steps(),
                cfg.n_steps
            )));
        }
        Ok(())
    }

    /// `max_n || a^n - b^n ||_{L^2}`.
    pub fn max_l2_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sub(b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_l2_norm(&self) -> f64 {
        self.states.iter().map(Field::norm).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub mass: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    pub clamp_events: usize,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl ForwardSolution {
    pub fn final_state(&self) -> &Field {
        self.trajectory.last()
    }
}

/// Ginzburg-Landau energy `(eps/2) |grad phi|^2 + (1/eps) sum F(phi) hx hy`,
/// with the gradient term evaluated spectrally.
pub fn energy(phi: &Field, potential: &(impl Potential + ?Sized)) -> f64 {
    let grid = phi.grid();
    let s = spectral::to_spectral(phi);
    let mut grad = 0.0;
    for l in 0..grid.ny() {
        let wl = if l == 0 { 1.0 } else { 0.5 };
        for k in 0..grid.nx() {
            let wk = if k == 0 { 1.0 } else { 0.5 };
            let a = s.coeff(k, l);
            grad += wk * wl * grid.eigenvalue(k, l) * a * a;
        }
    }
    grad *= grid.area();
    let bulk: f64 = phi.values().iter().map(|&v| potential.value(v)).sum::<f64>() * grid.cell_area();
    let eps = potential.eps();
    0.5 * eps * grad + bulk / eps
}

/// `mu = -eps Laplacian phi + (1/eps) F'(phi)`.
pub fn chemical_potential(phi: &Field, potential: &(impl Potential + ?Sized)) -> Field {
    let eps = potential.eps();
    let lap = spectral::laplacian(phi);
    lap.zip_map(phi, |l, p| -eps * l + potential.d1(p) / eps)
}

fn count_clamped(phi: &Field, potential: &(impl Potential + ?Sized)) -> usize {
    match potential.clamp_limit() {
        Some(lim) => phi.values().iter().filter(|v| v.abs() > lim).count(),
        None => 0,
    }
}

struct Stepper<'a, P: Potential + ?Sized> {
    op: StepOperator,
    potential: &'a P,
    source: Vec<f64>,
}

impl<'a, P: Potential + ?Sized> Stepper<'a, P> {
    fn new(lambda: &FidelityField, f: &Field, cfg: &SolverConfig, potential: &'a P) -> Self {
        let op = cfg.operator(potential, lambda);
        let source = lambda
            .lambda()
            .values()
            .iter()
            .zip(f.values())
            .map(|(l, fv)| cfg.dt * l * fv)
            .collect();
        Stepper {
            op,
            potential,
            source,
        }
    }

    fn advance(&self, phi: &Field) -> Result<(Field, usize)> {
        let fp: Vec<f64> = phi.values().iter().map(|&v| self.potential.d1(v)).collect();
        let mut rhs = self.op.explicit(phi.values(), &fp);
        for (r, s) in rhs.iter_mut().zip(&self.source) {
            *r += s;
        }
        let (next, iters) = self.op.solve(&rhs)?;
        let next = Field::from_values(*phi.grid(), next).map_err(|_| Error::NonFinite {
            context: "forward step".into(),
        })?;
        Ok((next, iters))
    }
}

fn check_inputs(phi: &Field, lambda: &FidelityField, f: &Field, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    phi.same_grid(lambda.lambda())?;
    phi.same_grid(f)?;
    phi.check_finite("initial state")?;
    f.check_finite("target image")?;
    Ok(())
}

/// One stabilised step. Returns `(phi^{n+1}, mu^{n+1})`.
pub fn step(
    phi_n: &Field,
    lambda: &FidelityField,
    f: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<(Field, Field)> {
    check_inputs(phi_n, lambda, f, cfg)?;
    let stepper = Stepper::new(lambda, f, cfg, potential);
    let (next, _) = stepper.advance(phi_n)?;
    let mu = chemical_potential(&next, potential);
    Ok((next, mu))
}

fn diagnostics(
    n: usize,
    dt: f64,
    phi: &Field,
    potential: &(impl Potential + ?Sized),
    iters: usize,
) -> StepDiagnostics {
    StepDiagnostics {
        step: n,
        time: n as f64 * dt,
        energy: energy(phi, potential),
        mass: spectral::mean(phi),
        min_phi: phi.min(),
        max_phi: phi.max(),
        clamp_events: count_clamped(phi, potential),
        inner_iterations: iters,
    }
}

/// Per-step diagnostics of a stored trajectory. Inner iteration counts are
/// not recorded in trajectories and are reported as 0.
pub fn trajectory_diagnostics(traj: &Trajectory, potential: &(impl Potential + ?Sized)) -> Vec<StepDiagnostics> {
    traj.states()
        .iter()
        .enumerate()
        .map(|(n, phi)| diagnostics(n, traj.dt(), phi, potential, 0))
        .collect()
}

/// Marches `cfg.n_steps` steps from `phi0`, storing every state.
pub fn solve(
    phi0: &Field,
    lambda: &FidelityField,
    f: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<ForwardSolution> {
    check_inputs(phi0, lambda, f, cfg)?;
    if spectral::mean(phi0).abs() >= 1.0 {
        return Err(Error::InvalidParameter(
            "initial mean must lie strictly inside (-1, 1)".into(),
        ));
    }
    if phi0.max_abs() > 1.0 {
        return Err(Error::InvalidParameter(
            "initial state must satisfy |phi0| <= 1".into(),
        ));
    }
    let stepper = Stepper::new(lambda, f, cfg, potential);
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    let mut diags = Vec::with_capacity(cfg.n_steps + 1);
    states.push(phi0.clone());
    diags.push(diagnostics(0, cfg.dt, phi0, potential, 0));
    for n in 0..cfg.n_steps {
        let (next, iters) = stepper.advance(&states[n])?;
        diags.push(diagnostics(n + 1, cfg.dt, &next, potential, iters));
        states.push(next);
    }
    Ok(ForwardSolution {
        trajectory: Trajectory::new(*phi0.grid(), cfg.dt, states)?,
        diagnostics: diags,
    })
}

/// Forward march without diagnostics; cheaper inside optimisation loops.
pub fn solve_states(
    phi0: &Field,
    lambda: &FidelityField,
    f: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<Trajectory> {
    check_inputs(phi0, lambda, f, cfg)?;
    let stepper = Stepper::new(lambda, f, cfg, potential);
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    states.push(phi0.clone());
    for n in 0..cfg.n_steps {
        let (next, _) = stepper.advance(&states[n])?;
        states.push(next);
    }
    Trajectory::new(*phi0.grid(), cfg.dt, states)
}

/// `max_n |(m(phi^{n+1}) - m(phi^n))/dt - mean(lambda (f - phi^{n+1}))|`.
pub fn mass_balance_residual(traj: &Trajectory, lambda: &FidelityField, f: &Field) -> f64 {
    let dt = traj.dt();
    let lam = lambda.lambda();
    traj.states()
        .windows(2)
        .map(|w| {
            let rate = (spectral::mean(&w[1]) - spectral::mean(&w[0])) / dt;
            let forcing = spectral::mean(&lam.mul(&f.sub(&w[1])));
            (rate - forcing).abs()
        })
        .fold(0.0, f64::max)
}

/// Applies a diagonal spectral filter; used by fixtures to build smooth data.
pub fn smooth(field: &Field, width: f64) -> Field {
    let dct = Dct2d::new(*field.grid());
    let sym: Vec<f64> = dct
        .eigenvalues()
        .into_iter()
        .map(|k| (-k * width * width).exp())
        .collect();
    Field::from_values(*field.grid(), dct.apply_diagonal(field.values(), &sym))
        .expect("filtered field is finite")
}

/// `max_n ||phi1^n - phi2^n|| / ||lambda1 - lambda2||`, or 0 when the
/// fidelities coincide.
pub fn state_lipschitz_ratio(
    phi0: &Field,
    lambda1: &FidelityField,
    lambda2: &FidelityField,
    f: &Field,
    cfg: &SolverConfig,
    potential: &(impl Potential + ?Sized),
) -> Result<f64> {
    let dist = lambda1.lambda().sub(lambda2.lambda()).norm();
    if dist == 0.0 {
        return Ok(0.0);
    }
    let a = solve_states(phi0, lambda1, f, cfg, potential)?;
    let b = solve_states(phi0, lambda2, f, cfg, potential)?;
    Ok(a.max_l2_distance(&b) / dist)
}
