//! Synthetic test problems: vertical stripes with a square hole.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::ControlBox;
use crate::error::Result;
use crate::forward::SolverConfig;
use crate::grid::{Field, Grid};
use crate::imaging;
use crate::potential::{well_location, PotentialParams};

/// A damaged stripe image and everything needed to run the solvers on it.
#[derive(Debug, Clone)]
pub struct StripeFixture {
    pub grid: Grid,
    pub params: PotentialParams,
    pub m_star: f64,
    /// Undamaged stripe image in phase units, defined everywhere.
    pub truth: Field,
    /// `chi_D`.
    pub mask_d: Field,
    /// `truth` with the damaged region set to zero.
    pub f: Field,
    pub phi0: Field,
}

impl StripeFixture {
    /// `n x n` cells on a square of side `n h`; stripes `stripe` cells wide;
    /// centred square hole of `hole` cells; blur of `blur` cells.
    pub fn new(
        n: usize,
        h: f64,
        stripe: usize,
        hole: usize,
        blur: f64,
        target_blur: f64,
        params: PotentialParams,
    ) -> Result<Self> {
        let grid = Grid::square(n, n as f64 * h)?;
        let m_star = well_location(&params)?;
        let truth = Field::from_fn(grid, |x, _| {
            let i = (x / h).floor() as usize;
            if (i / stripe).is_multiple_of(2) { m_star } else { -m_star }
        });
        let lo = (n - hole) / 2;
        let hi = lo + hole;
        let mask_d = Field::from_fn(grid, |x, y| {
            let (i, j) = ((x / h).floor() as usize, (y / h).floor() as usize);
            if (lo..hi).contains(&i) && (lo..hi).contains(&j) { 1.0 } else { 0.0 }
        });
        let f = imaging::gaussian_blur(&truth, target_blur)
            .zip_map(&mask_d, |t, m| if m == 1.0 { 0.0 } else { t });
        let phi0 = imaging::initial_guess(&f, &mask_d, blur)?;
        Ok(StripeFixture { grid, params, m_star, truth, mask_d, f, phi0 })
    }

    /// The standard configuration on an `n x n` grid: cells of size 1/4,
    /// stripes `n/8` cells wide, a centred hole of `n/4` cells, `eps = 0.5`.
    /// The target is the stripe image blurred by two cells, which keeps the
    /// large-fidelity states well inside the separation margin.
    pub fn standard(n: usize) -> Result<Self> {
        let params = PotentialParams { eps: 0.5, ..PotentialParams::default() };
        StripeFixture::new(n, 0.25, n / 8, n / 4, 1.0, 2.0, params)
    }
}

/// Time step and horizon used with the stripe fixture: `T = 2`.
pub const FIXTURE_DT: f64 = 0.01;
pub const FIXTURE_STEPS: usize = 200;
pub const FIXTURE_LAMBDA_MIN: f64 = 1.0;
pub const FIXTURE_LAMBDA_MAX: f64 = 1e4;

impl StripeFixture {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig::new(FIXTURE_DT, FIXTURE_STEPS)
    }

    pub fn control_box(&self) -> ControlBox {
        ControlBox::new(FIXTURE_LAMBDA_MIN, FIXTURE_LAMBDA_MAX, self.mask_d.clone())
            .expect("fixture mask is a proper subset")
    }

    /// Fraction of damaged cells where `phi` has the sign of the ground truth.
    pub fn hole_agreement(&self, phi: &Field) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for ((&p, &t), &m) in phi.values().iter().zip(self.truth.values()).zip(self.mask_d.values()) {
            if m == 1.0 {
                total += 1;
                if (p > 0.0) == (t > 0.0) {
                    hit += 1;
                }
            }
        }
        hit as f64 / total as f64
    }

    /// `||chi_{Omega \ D} (phi - f)||_{L^2}`.
    pub fn misfit(&self, phi: &Field) -> f64 {
        phi.sub(&self.f).zip_map(&self.mask_d, |v, m| if m == 1.0 { 0.0 } else { v }).norm()
    }
}

/// Control with independent uniform values in the box off `D`.
pub fn random_control(bounds: &ControlBox, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = bounds
        .mask_d
        .values()
        .iter()
        .map(|&m| {
            let u: f64 = rng.gen();
            if m == 1.0 { 0.0 } else { bounds.lambda_min + u * (bounds.lambda_max - bounds.lambda_min) }
        })
        .collect();
    Field::from_values(*bounds.mask_d.grid(), vals).expect("finite samples")
}

// Regression values of the standard fixture with the fixture solver
// configuration and default cost weights. `examples/calibrate.rs` recomputes
// them.

/// Largest `max_n ||phi1^n - phi2^n|| / ||lambda1 - lambda2||` over 60
/// random control pairs on the 32 x 32 fixture.
pub const K_CAL_STATE: f64 = 1.2970727433750168e-6;
/// Same ratio for the linearised states in a fixed unit direction.
pub const K_LIP_SENSITIVITY: f64 = 1.212859875410833e-10;
/// Same ratio for the adjoint states.
pub const K_CAL_COSTATE: f64 = 1.5399649806825785e-9;
/// Reduced cost at the box midpoint, 32 x 32.
pub const COST_MIDPOINT_32: f64 = 8.341103886619259e-4;
/// `||f_tilde||` of the regularised 32 x 32 target at `eps = 0.5`.
pub const TARGET_NORM_32: f64 = 7.145300926731454;
/// Fitted decay rates of the 32 x 32 ladder `lambda0 = 1, 10, 100, 1000`
/// (perturbation amplitude 0.05, seed 7).
pub const DECAY_RATES_32: [f64; 4] = [
    8.967205342451178e-1,
    1.5372826532671295,
    3.3029043321455602,
    4.986111491489326,
];
/// Misfit `||chi (phi(T) - f)||` at the computed 64 x 64 optimum
/// (`2.04975e-3`), rounded up.
pub const MISFIT_AT_OPTIMUM_64: f64 = 2.0498e-3;
/// Steps after which the misfit of a large-fidelity 32 x 32 run stops
/// increasing.
pub const MISFIT_TRANSIENT_STEPS: usize = 5;
/// Separation margin: `max |phi| <= 1 - SEPARATION_MARGIN` along fixture runs.
pub const SEPARATION_MARGIN: f64 = 1e-3;
