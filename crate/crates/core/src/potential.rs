//! Logarithmic (Flory-Huggins) double-well potential
//!
//! `F(s) = (theta/2)[(1-s)ln(1-s) + (1+s)ln(1+s)] - (theta_c/2) s^2`
//!
//! split into the convex singular part `F0` and the concave quadratic `F1`.
//! Arguments are clamped to `[-1 + delta_clip, 1 - delta_clip]` before
//! evaluation; each clamped evaluation bumps an atomic counter.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::grid::Field;

/// Nonlinearity of the chemical potential, together with the interface width.
///
/// The solvers only see this trait, which lets tests substitute simpler
/// potentials (see [`QuadraticPotential`]).
pub trait Potential: Send + Sync {
    fn value(&self, s: f64) -> f64;
    fn d1(&self, s: f64) -> f64;
    fn d2(&self, s: f64) -> f64;
    fn d3(&self, s: f64) -> f64;
    fn d4(&self, s: f64) -> f64;
    /// Interface width `eps`.
    fn eps(&self) -> f64;
    /// Upper bound of `|F''|` over the range the dynamics is expected to visit.
    fn curvature_bound(&self) -> f64;
    /// Largest `|s|` evaluated without clamping, if the potential clamps.
    fn clamp_limit(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub theta: f64,
    pub theta_c: f64,
    pub eps: f64,
    pub delta_clip: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        PotentialParams {
            theta: 1.0,
            theta_c: 2.0,
            eps: 1.0,
            delta_clip: 1e-6,
        }
    }
}

impl PotentialParams {
    pub fn new(theta: f64, theta_c: f64, eps: f64) -> Result<Self> {
        let p = PotentialParams {
            theta,
            theta_c,
            eps,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta_c > 0.0) {
            return Err(Error::InvalidParameter(
                "theta and theta_c must be positive".into(),
            ));
        }
        if self.theta >= self.theta_c {
            return Err(Error::InvalidParameter(format!(
                "theta ({}) must be below theta_c ({}) for a double well",
                self.theta, self.theta_c
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter("eps must be positive".into()));
        }
        if !(self.delta_clip > 0.0 && self.delta_clip < 0.5) {
            return Err(Error::InvalidParameter(
                "delta_clip must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Convex logarithmic part `F0` and its derivatives.
pub fn f0_parts(theta: f64, s: f64) -> [f64; 5] {
    let (a, b) = (1.0 - s, 1.0 + s);
    let q = a * b;
    [
        0.5 * theta * (a * a.ln() + b * b.ln()),
        0.5 * theta * (b / a).ln(),
        theta / q,
        2.0 * theta * s / (q * q),
        2.0 * theta * (1.0 + 3.0 * s * s) / (q * q * q),
    ]
}

/// Concave quadratic part `F1 = -(theta_c/2) s^2` and its derivatives.
pub fn f1_parts(theta_c: f64, s: f64) -> [f64; 5] {
    [-0.5 * theta_c * s * s, -theta_c * s, -theta_c, 0.0, 0.0]
}

#[derive(Debug)]
pub struct LogPotential {
    params: PotentialParams,
    clamp_events: AtomicU64,
}

impl Clone for LogPotential {
    fn clone(&self) -> Self {
        LogPotential {
            params: self.params,
            clamp_events: AtomicU64::new(self.clamp_events()),
        }
    }
}

impl LogPotential {
    pub fn new(params: PotentialParams) -> Result<Self> {
        params.validate()?;
        Ok(LogPotential {
            params,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &PotentialParams {
        &self.params
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    #[inline]
    fn clamp(&self, s: f64) -> f64 {
        let lim = 1.0 - self.params.delta_clip;
        if s > lim {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            lim
        } else if s < -lim {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            -lim
        } else {
            s
        }
    }

    /// `(F0, F1)` derivative tables at the clamped argument.
    pub fn split_f0_f1(&self, s: f64) -> ([f64; 5], [f64; 5]) {
        let s = self.clamp(s);
        (f0_parts(self.params.theta, s), f1_parts(self.params.theta_c, s))
    }

    fn derivative(&self, order: usize, s: f64) -> f64 {
        let (a, b) = self.split_f0_f1(s);
        a[order] + b[order]
    }

    pub fn well_location(&self) -> Result<f64> {
        well_location(&self.params)
    }
}

impl Potential for LogPotential {
    fn value(&self, s: f64) -> f64 {
        self.derivative(0, s)
    }
    fn d1(&self, s: f64) -> f64 {
        self.derivative(1, s)
    }
    fn d2(&self, s: f64) -> f64 {
        self.derivative(2, s)
    }
    fn d3(&self, s: f64) -> f64 {
        self.derivative(3, s)
    }
    fn d4(&self, s: f64) -> f64 {
        self.derivative(4, s)
    }
    fn eps(&self) -> f64 {
        self.params.eps
    }

    /// `max |F''|` over `|s| <= (1 + m*)/2`, the band between the wells and
    /// the singularity.
    fn curvature_bound(&self) -> f64 {
        let p = &self.params;
        let m = well_location(p).unwrap_or(0.0);
        let s = 0.5 * (1.0 + m);
        let at_edge = p.theta / (1.0 - s * s) - p.theta_c;
        at_edge.abs().max((p.theta - p.theta_c).abs())
    }

    fn clamp_limit(&self) -> Option<f64> {
        Some(1.0 - self.params.delta_clip)
    }
}

/// `F(s) = (a/2) s^2`, a smooth stand-in with `F''' = 0`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticPotential {
    pub curvature: f64,
    pub eps: f64,
}

impl Potential for QuadraticPotential {
    fn value(&self, s: f64) -> f64 {
        0.5 * self.curvature * s * s
    }
    fn d1(&self, s: f64) -> f64 {
        self.curvature * s
    }
    fn d2(&self, _s: f64) -> f64 {
        self.curvature
    }
    fn d3(&self, _s: f64) -> f64 {
        0.0
    }
    fn d4(&self, _s: f64) -> f64 {
        0.0
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn curvature_bound(&self) -> f64 {
        self.curvature.abs()
    }
}

/// Positive root `m*` of `F'(m) = 0`, the location of the two equal minima.
///
/// Bisection on `(0, 1 - 1e-15)` run until the bracket stops shrinking.
pub fn well_location(params: &PotentialParams) -> Result<f64> {
    let (theta, theta_c) = (params.theta, params.theta_c);
    if !(theta < theta_c) || !(theta > 0.0) {
        return Err(Error::NoRoot { theta, theta_c });
    }
    let fp = |m: f64| 0.5 * theta * ((1.0 + m) / (1.0 - m)).ln() - theta_c * m;
    // F' < 0 just right of 0 (F''(0) = theta - theta_c < 0) and F' -> +inf at 1.
    let (mut lo, mut hi) = (0.0_f64, 1.0 - 1e-15);
    if fp(hi) <= 0.0 {
        return Err(Error::NoRoot { theta, theta_c });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fp(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if fp(lo).abs() <= fp(hi).abs() { lo } else { hi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    pub min_phi: f64,
    pub max_phi: f64,
    pub delta_observed: f64,
    pub violated: bool,
}

pub fn separation_report(phi: &Field) -> SeparationReport {
    let (min_phi, max_phi) = (phi.min(), phi.max());
    let delta_observed = 1.0 - min_phi.abs().max(max_phi.abs());
    SeparationReport {
        min_phi,
        max_phi,
        delta_observed,
        violated: delta_observed <= 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn pot(theta: f64, theta_c: f64) -> LogPotential {
        LogPotential::new(PotentialParams::new(theta, theta_c, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn values_at_origin() {
        let p = pot(1.0, 2.0);
        assert_eq!(p.value(0.0), 0.0);
        assert_eq!(p.d1(0.0), 0.0);
        assert!((p.d2(0.0) - (1.0 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn derivative_at_half() {
        let p = pot(1.0, 2.0);
        let expect = 0.5 * 3.0_f64.ln() - 1.0;
        assert!((p.d1(0.5) - expect).abs() < 1e-15);
        assert!((p.d1(0.5) + 0.450_693_855_665_945_1).abs() < 1e-12);
        let h = 1e-6;
        let fd = (p.value(0.5 + h) - p.value(0.5 - h)) / (2.0 * h);
        assert!((fd - expect).abs() < 1e-8);
    }

    #[test]
    fn split_sums_to_whole() {
        let p = pot(0.7, 1.3);
        let (f0, f1) = p.split_f0_f1(0.0);
        assert!((f0[2] - 0.7).abs() < 1e-15);
        for k in 0..100 {
            let s = -0.99 + 1.98 * k as f64 / 99.0;
            let (a, b) = p.split_f0_f1(s);
            assert_eq!(b[2], -1.3);
            assert!((a[0] + b[0] - p.value(s)).abs() < 1e-14);
        }
        assert_eq!(f1[2], -1.3);
    }

    #[test]
    fn well_location_examples() {
        let m = well_location(&PotentialParams::new(1.0, 2.0, 1.0).unwrap()).unwrap();
        assert!(m > 0.0 && m < 1.0);
        let p = pot(1.0, 2.0);
        assert!(p.d1(m).abs() <= 1e-12);
        assert!(p.d1(-m).abs() <= 1e-12);
        let near = PotentialParams {
            theta: 1.0,
            theta_c: 1.001,
            ..Default::default()
        };
        assert!(well_location(&near).unwrap() < 0.1);
        let bad = PotentialParams {
            theta: 2.0,
            theta_c: 1.0,
            ..Default::default()
        };
        assert!(matches!(well_location(&bad), Err(Error::NoRoot { .. })));
    }

    #[test]
    fn clamping_is_counted() {
        let p = pot(1.0, 2.0);
        assert_eq!(p.clamp_events(), 0);
        let inside = p.d1(1.0 - 1e-6);
        let beyond = p.d1(1.5);
        assert_eq!(inside, beyond);
        assert_eq!(p.clamp_events(), 1);
        assert!(p.d1(-3.0).is_finite());
        assert_eq!(p.clamp_events(), 2);
    }

    #[test]
    fn separation_examples() {
        let g = Grid::square(4, 1.0).unwrap();
        let r = separation_report(&Field::zeros(g));
        assert_eq!(r.delta_observed, 1.0);
        assert!(!r.violated);
        let r = separation_report(&Field::constant(g, 0.99));
        assert!((r.delta_observed - 0.01).abs() < 1e-15);
        let mut touching = Field::zeros(g);
        touching.values_mut()[5] = 1.0;
        assert!(separation_report(&touching).violated);
    }

    #[test]
    fn params_validation() {
        assert!(PotentialParams::new(2.0, 2.0, 1.0).is_err());
        assert!(PotentialParams::new(1.0, 2.0, 0.0).is_err());
        let bad_clip = PotentialParams {
            delta_clip: 0.6,
            ..Default::default()
        };
        assert!(bad_clip.validate().is_err());
    }
}
