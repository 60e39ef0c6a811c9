//! File formats: trajectory binary and the CSV reports.
//!
//! Trajectory layout (little endian): `nx: u64, ny: u64, lx: f64, ly: f64,
//! dt: f64, n_steps: u64`, then `n_steps + 1` frames of `nx * ny` `f64`
//! values in row-major order.

use std::io::{Read, Write};

use crate::control::OptimReport;
use crate::decay::{DecayReport, REPORT_HEADER};
use crate::error::{Error, Result};
use crate::forward::{StepDiagnostics, Trajectory};
use crate::grid::{Field, Grid};

pub fn write_trajectory(mut w: impl Write, traj: &Trajectory) -> Result<()> {
    let g = traj.grid();
    w.write_all(&(g.nx() as u64).to_le_bytes())?;
    w.write_all(&(g.ny() as u64).to_le_bytes())?;
    w.write_all(&g.lx().to_le_bytes())?;
    w.write_all(&g.ly().to_le_bytes())?;
    w.write_all(&traj.dt().to_le_bytes())?;
    w.write_all(&(traj.n_steps() as u64).to_le_bytes())?;
    for s in traj.states() {
        for v in s.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_trajectory(mut r: impl Read) -> Result<Trajectory> {
    let nx = read_u64(&mut r)? as usize;
    let ny = read_u64(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let n_steps = read_u64(&mut r)? as usize;
    let grid = Grid::new(nx, ny, lx, ly)?;
    let frame_bytes = grid
        .len()
        .checked_mul(8)
        .ok_or_else(|| Error::Io("frame size overflows".into()))?;
    let mut buf = vec![0u8; frame_bytes];
    let mut states = Vec::new();
    for _ in 0..=n_steps {
        r.read_exact(&mut buf)?;
        let vals = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        states.push(Field::from_values(grid, vals)?);
    }
    Trajectory::new(grid, dt, states)
}

pub fn write_diagnostics_csv(mut w: impl Write, diags: &[StepDiagnostics]) -> Result<()> {
    writeln!(w, "step,time,energy,mass,min_phi,max_phi,clamp_events")?;
    for d in diags {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            d.step, d.time, d.energy, d.mass, d.min_phi, d.max_phi, d.clamp_events
        )?;
    }
    Ok(())
}

pub fn write_optimizer_csv(mut w: impl Write, report: &OptimReport) -> Result<()> {
    writeln!(w, "iter,J,stationarity,step_size,armijo_backtracks,min_lambda,max_lambda")?;
    for r in &report.history {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iter, r.cost, r.stationarity, r.step_size, r.armijo_backtracks, r.min_lambda, r.max_lambda
        )?;
    }
    Ok(())
}

/// `time,d_hminus1`, preceded by a `#` line naming the norm surrogate.
pub fn write_decay_csv(mut w: impl Write, report: &DecayReport) -> Result<()> {
    writeln!(w, "# {REPORT_HEADER}; lambda0 = {}, eps = {}", report.lambda0, report.eps)?;
    writeln!(w, "time,d_hminus1")?;
    for (t, d) in report.times.iter().zip(&report.hminus1_values) {
        writeln!(w, "{t},{d}")?;
    }
    Ok(())
}

pub fn write_decay_summary(mut w: impl Write, reports: &[DecayReport]) -> Result<()> {
    writeln!(w, "# {REPORT_HEADER}")?;
    writeln!(w, "lambda0,rate,r2")?;
    for r in reports {
        writeln!(w, "{},{},{}", r.lambda0, r.fitted_rate, r.fit_r2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip() {
        let g = Grid::new(5, 4, 2.0, 1.5).unwrap();
        let states = (0..3)
            .map(|n| Field::from_fn(g, |x, y| n as f64 + x * y))
            .collect();
        let traj = Trajectory::new(g, 0.125, states).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        assert_eq!(buf.len(), 48 + 3 * 20 * 8);
        assert_eq!(&buf[..8], &5u64.to_le_bytes());
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
        assert!(read_trajectory(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn diagnostics_columns() {
        let d = StepDiagnostics {
            step: 1,
            time: 0.5,
            energy: -1.0,
            mass: 0.25,
            min_phi: -0.5,
            max_phi: 0.75,
            clamp_events: 0,
            inner_iterations: 3,
        };
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &[d]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,time,energy,mass,min_phi,max_phi,clamp_events\n1,0.5,-1,0.25,-0.5,0.75,0\n"
        );
    }
}
