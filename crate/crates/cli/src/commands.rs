//! The subcommands. Each writes its files into the output directory and
//! returns the summary lines shown on stdout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chinpaint_core::control::{self, relative_direction, ControlProblem};
use chinpaint_core::decay;
use chinpaint_core::export;
use chinpaint_core::fixtures::StripeFixture;
use chinpaint_core::forward;
use chinpaint_core::imaging;
use chinpaint_core::potential::{self, LogPotential, Potential};
use chinpaint_core::{Field, Grid};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::image_io;

/// Image, mask and initial state for one run.
pub struct Problem {
    pub grid: Grid,
    pub m_star: f64,
    pub potential: LogPotential,
    /// Phase image, zero on the damaged region.
    pub f: Field,
    pub mask_d: Field,
    pub phi0: Field,
    /// Undamaged ground truth, known only for the built-in stripe image.
    pub truth: Option<Field>,
}

impl Problem {
    /// Fraction of damaged cells whose sign matches the ground truth.
    pub fn hole_agreement(&self, phi: &Field) -> Option<f64> {
        let truth = self.truth.as_ref()?;
        let mut hit = 0usize;
        let mut total = 0usize;
        for ((&p, &t), &m) in phi.values().iter().zip(truth.values()).zip(self.mask_d.values()) {
            if m == 1.0 {
                total += 1;
                hit += usize::from((p > 0.0) == (t > 0.0));
            }
        }
        Some(hit as f64 / total as f64)
    }

    /// `L^2` misfit off the damaged region.
    pub fn misfit(&self, phi: &Field) -> f64 {
        phi.sub(&self.f).zip_map(&self.mask_d, |v, m| if m == 1.0 { 0.0 } else { v }).norm()
    }
}

pub struct Inputs {
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

pub fn build_problem(cfg: &RunConfig, inputs: &Inputs) -> CliResult<Problem> {
    let potential = LogPotential::new(cfg.potential)?;
    let m_star = potential.well_location()?;
    match (&inputs.image, &inputs.mask) {
        (Some(img_path), Some(mask_path)) => {
            let img = image_io::load_gray(img_path)?;
            let nx = cfg.nx.unwrap_or(img.width);
            let ny = cfg.ny.unwrap_or(img.height);
            img.check_dims(img_path, nx, ny)?;
            let grid = cfg.grid(nx, ny)?;
            let mask_d = image_io::load_mask(mask_path, nx, ny, grid)?;
            let gray = img.to_field(grid)?;
            let f = imaging::binarize_to_phase(&gray, &mask_d, m_star, cfg.binarize_threshold)?;
            let phi0 = imaging::initial_guess(&f, &mask_d, cfg.blur_sigma)?;
            Ok(Problem { grid, m_star, potential, f, mask_d, phi0, truth: None })
        }
        (None, None) => {
            let n = cfg.fixture_n;
            if cfg.nx.is_some_and(|v| v != n) || cfg.ny.is_some_and(|v| v != n) {
                return Err(CliError::Config(format!(
                    "nx/ny do not match fixture.n = {n}; set fixture.n to size the built-in image"
                )));
            }
            let fx = StripeFixture::new(n, cfg.h, n / 8, n / 4, cfg.blur_sigma, cfg.fixture_target_blur, cfg.potential)?;
            Ok(Problem {
                grid: fx.grid,
                m_star,
                potential,
                f: fx.f,
                mask_d: fx.mask_d,
                phi0: fx.phi0,
                truth: Some(fx.truth),
            })
        }
        _ => Err(CliError::Config("--image and --mask must be given together".into())),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Writes a CSV or binary file through `body`.
fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> chinpaint_core::Result<()>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let mut w = create(&path)?;
    body(&mut w)?;
    finish(w, &path)?;
    Ok(path)
}

fn write_image(cfg: &RunConfig, dir: &Path, stem: &str, phi: &Field, m_star: f64) -> CliResult<PathBuf> {
    let path = dir.join(format!("{stem}.{}", cfg.image_format));
    image_io::write_phase_image(phi, m_star, &path)?;
    Ok(path)
}

fn write_field_csv(w: &mut impl Write, name: &str, field: &Field) -> chinpaint_core::Result<()> {
    let g = field.grid();
    writeln!(w, "i,j,{name}")?;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            writeln!(w, "{i},{j},{}", field.at(i, j))?;
        }
    }
    Ok(())
}

pub fn prepare_out_dir(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join("config_used.txt");
    fs::write(&path, cfg.to_text()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn quality_lines(pb: &Problem, phi: &Field, out: &mut Vec<String>) {
    out.push(format!("misfit off the damaged region: {:e}", pb.misfit(phi)));
    if let Some(a) = pb.hole_agreement(phi) {
        out.push(format!("sign agreement with the ground truth inside the hole: {:.2}%", 100.0 * a));
    }
}

/// Forward solve with the constant control `lambda0`.
pub fn inpaint(cfg: &RunConfig, pb: &Problem, dir: &Path) -> CliResult<Vec<String>> {
    let bounds = cfg.control_box(&pb.mask_d)?;
    let lam = bounds.fidelity(&cfg.initial_control(&bounds))?;
    let sol = forward::solve(&pb.phi0, &lam, &pb.f, &cfg.solver, &pb.potential)?;
    let d = &sol.diagnostics;
    write_file(dir, "diagnostics.csv", |w| export::write_diagnostics_csv(w, d))?;
    if cfg.write_trajectory {
        write_file(dir, "trajectory.bin", |w| export::write_trajectory(w, &sol.trajectory))?;
    }
    write_image(cfg, dir, "input", &pb.f, pb.m_star)?;
    write_image(cfg, dir, "phi0", &pb.phi0, pb.m_star)?;
    let last = sol.final_state();
    write_image(cfg, dir, "phi_final", last, pb.m_star)?;
    let mass_drift = d.iter().map(|x| (x.mass - d[0].mass).abs()).fold(0.0, f64::max);
    let sep = potential::separation_report(last);
    let mut out = vec![
        format!("steps: {} (T = {})", cfg.solver.n_steps, cfg.solver.final_time()),
        format!("energy: {:e} -> {:e}", d[0].energy, d[d.len() - 1].energy),
        format!("largest mass change from the start: {mass_drift:e}"),
        format!("final min/max phi: {} / {} (separation {:e})", sep.min_phi, sep.max_phi, sep.delta_observed),
        format!("clamped evaluations: {}", pb.potential.clamp_events()),
    ];
    quality_lines(pb, last, &mut out);
    Ok(out)
}

fn control_problem<'a>(cfg: &RunConfig, pb: &'a Problem) -> CliResult<ControlProblem<'a, LogPotential>> {
    let bounds = cfg.control_box(&pb.mask_d)?;
    Ok(ControlProblem::new(pb.phi0.clone(), pb.f.clone(), bounds, cfg.weights, cfg.solver, &pb.potential)?)
}

/// Projected-gradient optimisation of the fidelity.
pub fn optimize(cfg: &RunConfig, pb: &Problem, dir: &Path) -> CliResult<Vec<String>> {
    let problem = control_problem(cfg, pb)?;
    let start = cfg.initial_control(&problem.bounds);
    let (ctl, report, at) = control::optimize(&problem, &start, &cfg.optim)?;
    write_file(dir, "optimizer.csv", |w| export::write_optimizer_csv(w, &report))?;
    write_file(dir, "lambda.csv", |w| write_field_csv(w, "lambda", &ctl))?;
    let diags = forward::trajectory_diagnostics(&at.eval.trajectory, &pb.potential);
    write_file(dir, "diagnostics.csv", |w| export::write_diagnostics_csv(w, &diags))?;
    if cfg.write_trajectory {
        write_file(dir, "trajectory.bin", |w| export::write_trajectory(w, &at.eval.trajectory))?;
    }
    let last = at.eval.trajectory.last();
    write_image(cfg, dir, "phi_optimal", last, pb.m_star)?;
    let a = report.active;
    let mut out = vec![
        format!(
            "{} after {} iterations ({:.1} s)",
            if report.converged { "converged" } else { "stopped at the iteration cap" },
            report.iterations,
            report.wall_time.as_secs_f64()
        ),
        format!("J: {:e} -> {:e}", report.initial_cost(), report.final_cost()),
        format!("stationarity: {:e} (s0 = {:e})", report.final_stationarity(), report.stationarity_step),
        format!(
            "control cells: {} at lambda_min, {} at lambda_max, {} interior, {} strongly active",
            a.at_lower, a.at_upper, a.interior, a.strongly_active
        ),
    ];
    if cfg.check.second_order_directions > 0 {
        let tol = control::default_tol_active(&at.gradient);
        let so = control::second_order_check(&problem, &at, cfg.check.second_order_directions, tol, cfg.seed)?;
        out.push(match so.min_curvature() {
            Some(c) => format!(
                "critical-cone curvature: min {c:e} over {} sampled directions",
                so.curvatures.len()
            ),
            None => format!(
                "critical-cone curvature: no direction survived projection ({} free cells); the cone is {{0}}",
                so.free_cells
            ),
        });
    }
    quality_lines(pb, last, &mut out);
    Ok(out)
}

fn directions(cfg: &RunConfig, ctl: &Field, mask_d: &Field, count: usize, offset: u64) -> Vec<Field> {
    (0..count as u64)
        .map(|i| relative_direction(ctl, mask_d, cfg.seed.wrapping_add(offset + i)))
        .collect()
}

/// Adjoint gradient against central differences of the cost.
pub fn grad_check(cfg: &RunConfig, pb: &Problem, dir: &Path) -> CliResult<Vec<String>> {
    let problem = control_problem(cfg, pb)?;
    let ctl = cfg.initial_control(&problem.bounds);
    let dirs = directions(cfg, &ctl, &pb.mask_d, cfg.check.directions, 0);
    let rows = control::gradient_check(&problem, &ctl, &dirs, cfg.check.tau)?;
    write_file(dir, "grad_check.csv", |w| {
        writeln!(w, "direction,adjoint,finite_difference,relative_error")?;
        for (k, r) in rows.iter().enumerate() {
            writeln!(w, "{k},{},{},{}", r.adjoint, r.finite_difference, r.relative_error)?;
        }
        Ok(())
    })?;
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let line = format!(
        "max relative error over {} directions (tau = {:e}): {worst:e} (tolerance {:e})",
        rows.len(),
        cfg.check.tau,
        cfg.check.grad_tol
    );
    if worst > cfg.check.grad_tol {
        return Err(CliError::CheckFailed(line));
    }
    Ok(vec![line, "gradient check passed".into()])
}

/// Hessian symmetry and agreement with second differences of the cost.
pub fn hess_check(cfg: &RunConfig, pb: &Problem, dir: &Path) -> CliResult<Vec<String>> {
    let problem = control_problem(cfg, pb)?;
    let ctl = cfg.initial_control(&problem.bounds);
    let n = cfg.check.hess_pairs;
    let hs = directions(cfg, &ctl, &pb.mask_d, n, 0);
    let ks = directions(cfg, &ctl, &pb.mask_d, n, 1000);
    let pairs: Vec<(Field, Field)> = hs.into_iter().zip(ks).collect();
    let rows = control::hessian_check(&problem, &ctl, &pairs, cfg.check.hess_tau)?;
    write_file(dir, "hess_check.csv", |w| {
        writeln!(w, "pair,hk_h,hh_k,hh_h,second_difference,symmetry_defect,relative_error")?;
        for (k, r) in rows.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{},{},{},{}",
                r.hk_h, r.hh_k, r.hh_h, r.second_difference, r.symmetry_defect, r.relative_error
            )?;
        }
        Ok(())
    })?;
    let sym = rows.iter().map(|r| r.symmetry_defect).fold(0.0, f64::max);
    let err = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let lines = vec![
        format!("max symmetry defect: {sym:e} (tolerance {:e})", cfg.check.hess_symmetry_tol),
        format!(
            "max D2J[h,h] vs second difference (tau = {:e}): {err:e} (tolerance {:e})",
            cfg.check.hess_tau, cfg.check.hess_tol
        ),
    ];
    if sym > cfg.check.hess_symmetry_tol || err > cfg.check.hess_tol {
        return Err(CliError::CheckFailed(lines.join("; ")));
    }
    Ok(lines)
}

/// Large-fidelity decay runs, plus the optional interface-width scan.
pub fn decay_experiment(cfg: &RunConfig, pb: &Problem, dir: &Path) -> CliResult<Vec<String>> {
    let d = &cfg.decay;
    let target = decay::regularized_target(&pb.f, &pb.mask_d, &pb.potential, &d.regularize)?;
    write_image(cfg, dir, "decay_target", &target.field, pb.m_star)?;
    let pert = decay::smooth_perturbation(&target.field, d.amplitude, cfg.seed);
    let phi0 = target.field.add(&pert);
    let reports = decay::decay_experiment(&target.field, &phi0, &pb.mask_d, &d.ladder, &pb.potential, &cfg.solver)?;
    for r in &reports {
        write_file(dir, &format!("decay_{}.csv", r.lambda0), |w| export::write_decay_csv(w, r))?;
    }
    write_file(dir, "decay_summary.csv", |w| export::write_decay_summary(w, &reports))?;
    let mut out = vec![
        decay::REPORT_HEADER.to_string(),
        format!(
            "target: {} + {} steps, stationarity {:e}, residual {:e}",
            target.steps.0, target.steps.1, target.stationarity, target.residual
        ),
    ];
    for r in &reports {
        out.push(format!(
            "lambda0 = {}: rate {:.6} (R^2 {:.6}, {} points)",
            r.lambda0, r.fitted_rate, r.fit_r2, r.fit_points
        ));
    }
    if !d.eps_scan.is_empty() {
        let rows = decay::epsilon_threshold_scan(
            &pb.f,
            &pb.mask_d,
            &d.eps_scan,
            d.scan_lambda0,
            &cfg.potential,
            &cfg.solver,
            &d.regularize,
            &pert,
        )?;
        write_file(dir, "eps_scan.csv", |w| {
            writeln!(w, "# {}", decay::REPORT_HEADER)?;
            writeln!(w, "eps,lambda0,lambda0_eps3,rate,r2,target_residual")?;
            for row in &rows {
                let r = &row.report;
                writeln!(w, "{},{},{},{},{},{}", row.eps, r.lambda0, r.lambda0_eps3, r.fitted_rate, r.fit_r2, row.target_residual)?;
            }
            Ok(())
        })?;
        for row in &rows {
            out.push(format!(
                "eps = {} at lambda0 = {}: rate {:.6} (lambda0 eps^3 = {})",
                row.eps, d.scan_lambda0, row.report.fitted_rate, row.report.lambda0_eps3
            ));
        }
    }
    Ok(out)
}

/// The positive well of the potential and the residual of `F'` there.
pub fn mstar(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let m = potential::well_location(&cfg.potential)?;
    let pot = LogPotential::new(cfg.potential)?;
    Ok(vec![
        format!("m* = {m:.17}"),
        format!("|F'(m*)| = {:e}", pot.d1(m).abs()),
    ])
}

/// Recomputes the per-step diagnostics of a stored trajectory.
pub fn export_diagnostics(cfg: &RunConfig, dir: &Path) -> CliResult<Vec<String>> {
    let path = cfg
        .trajectory
        .as_ref()
        .ok_or_else(|| CliError::Config("export-diagnostics needs `trajectory = <file>`".into()))?;
    let file = File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let traj = export::read_trajectory(std::io::BufReader::new(file))?;
    let pot = LogPotential::new(cfg.potential)?;
    let m_star = pot.well_location()?;
    let diags = forward::trajectory_diagnostics(&traj, &pot);
    write_file(dir, "diagnostics.csv", |w| export::write_diagnostics_csv(w, &diags))?;
    write_image(cfg, dir, "phi_final", traj.last(), m_star)?;
    let g = traj.grid();
    Ok(vec![
        format!("{} frames on a {}x{} grid, dt = {}", traj.states().len(), g.nx(), g.ny(), traj.dt()),
        format!("energy: {:e} -> {:e}", diags[0].energy, diags[diags.len() - 1].energy),
    ])
}
