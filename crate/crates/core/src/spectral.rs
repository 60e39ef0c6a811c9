//! Neumann-spectral operators on cell-centred grids.
//!
//! Coefficients use the amplitude convention
//! `f(x, y) = sum_{k,l} a_{kl} cos(k pi x / lx) cos(l pi y / ly)`, so
//! `a_{00}` is the mean of `f` and a unit coefficient reproduces the sampled
//! basis function. The forward transform is a DCT-II per axis, the inverse a
//! DCT-III.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

type Plan = Arc<dyn TransformType2And3<f64>>;

fn plan(len: usize) -> Plan {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plan>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("dct plan cache poisoned");
    guard
        .entry(len)
        .or_insert_with(|| DctPlanner::new().plan_dct2(len))
        .clone()
}

/// Cosine-basis coefficients of a [`Field`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        SpectralField {
            grid,
            coeffs: vec![0.0; grid.len()],
        }
    }

    pub fn from_coeffs(grid: Grid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { grid, coeffs })
    }

    /// Single cosine mode `(k, l)` with the given amplitude.
    pub fn mode(grid: Grid, k: usize, l: usize, amplitude: f64) -> Self {
        let mut s = SpectralField::zeros(grid);
        s.coeffs[grid.index(k, l)] = amplitude;
        s
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Coefficient of mode `(k, l)`: `k` along x, `l` along y.
    pub fn coeff(&self, k: usize, l: usize) -> f64 {
        self.coeffs[self.grid.index(k, l)]
    }

    /// `|Omega| sum w_k w_l a_{kl}^2` with `w_0 = 1`, `w_k = 1/2` otherwise.
    /// Equals the discrete `L^2` norm squared of the represented field.
    pub fn l2_norm_squared(&self) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for l in 0..g.ny() {
            let wl = if l == 0 { 1.0 } else { 0.5 };
            for k in 0..g.nx() {
                let wk = if k == 0 { 1.0 } else { 0.5 };
                let a = self.coeffs[g.index(k, l)];
                acc += wk * wl * a * a;
            }
        }
        acc * g.area()
    }
}

/// Tensor-product DCT pair for one grid.
#[derive(Clone)]
pub struct Dct2d {
    grid: Grid,
    row: Plan,
    col: Plan,
}

impl std::fmt::Debug for Dct2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dct2d").field("grid", &self.grid).finish()
    }
}

impl Dct2d {
    pub fn new(grid: Grid) -> Self {
        Dct2d {
            grid,
            row: plan(grid.nx()),
            col: plan(grid.ny()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn along_columns(&self, data: &mut [f64], f: impl Fn(&Plan, &mut [f64], &mut [f64])) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut column = vec![0.0; ny];
        let mut scratch = vec![0.0; self.col.get_scratch_len()];
        for i in 0..nx {
            for j in 0..ny {
                column[j] = data[j * nx + i];
            }
            f(&self.col, &mut column, &mut scratch);
            for j in 0..ny {
                data[j * nx + i] = column[j];
            }
        }
    }

    /// Sample values to amplitude coefficients.
    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut data = values.to_vec();
        let mut scratch = vec![0.0; self.row.get_scratch_len()];
        for row in data.chunks_exact_mut(nx) {
            self.row.process_dct2_with_scratch(row, &mut scratch);
        }
        self.along_columns(&mut data, |p, c, s| p.process_dct2_with_scratch(c, s));
        let (sx, sy) = (1.0 / nx as f64, 1.0 / ny as f64);
        for l in 0..ny {
            let cl = if l == 0 { sy } else { 2.0 * sy };
            for k in 0..nx {
                let ck = if k == 0 { sx } else { 2.0 * sx };
                data[l * nx + k] *= ck * cl;
            }
        }
        data
    }

    /// Amplitude coefficients to sample values.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut data = coeffs.to_vec();
        // DCT-III computes x_0/2 + sum_k x_k cos(..): double the zero modes.
        for l in 0..ny {
            for k in 0..nx {
                let mut s = 1.0;
                if k == 0 {
                    s *= 2.0;
                }
                if l == 0 {
                    s *= 2.0;
                }
                data[l * nx + k] *= s;
            }
        }
        let mut scratch = vec![0.0; self.row.get_scratch_len()];
        for row in data.chunks_exact_mut(nx) {
            self.row.process_dct3_with_scratch(row, &mut scratch);
        }
        self.along_columns(&mut data, |p, c, s| p.process_dct3_with_scratch(c, s));
        data
    }

    /// Applies the diagonal spectral operator with symbol `diag[k + l nx]`.
    pub fn apply_diagonal(&self, values: &[f64], diag: &[f64]) -> Vec<f64> {
        let mut c = self.forward(values);
        for (a, d) in c.iter_mut().zip(diag) {
            *a *= d;
        }
        self.inverse(&c)
    }

    /// Eigenvalues of `-Laplacian` laid out like the coefficients.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(g.len());
        for l in 0..g.ny() {
            for k in 0..g.nx() {
                out.push(g.eigenvalue(k, l));
            }
        }
        out
    }
}

pub fn to_spectral(f: &Field) -> SpectralField {
    let dct = Dct2d::new(*f.grid());
    SpectralField {
        grid: *f.grid(),
        coeffs: dct.forward(f.values()),
    }
}

pub fn from_spectral(s: &SpectralField) -> Field {
    let dct = Dct2d::new(s.grid);
    Field::from_values(s.grid, dct.inverse(&s.coeffs)).expect("inverse transform of finite data")
}

/// Neumann Laplacian, exact on the cosine basis.
pub fn laplacian(f: &Field) -> Field {
    let dct = Dct2d::new(*f.grid());
    let symbol: Vec<f64> = dct.eigenvalues().into_iter().map(|k| -k).collect();
    let v = dct.apply_diagonal(f.values(), &symbol);
    Field::from_values(*f.grid(), v).expect("laplacian of finite data")
}

/// Zero-mean solution `w` of `-Laplacian w = g`.
///
/// Fails with [`Error::NonZeroMean`] unless `|mean(g)| <= 1e-10 rms(g)`.
pub fn inv_neumann_laplacian(g: &Field) -> Result<Field> {
    let m = mean(g);
    let tol = 1e-10 * g.rms();
    if m.abs() > tol {
        return Err(Error::NonZeroMean { mean: m, tol });
    }
    let dct = Dct2d::new(*g.grid());
    let symbol: Vec<f64> = dct
        .eigenvalues()
        .into_iter()
        .map(|k| if k == 0.0 { 0.0 } else { 1.0 / k })
        .collect();
    Field::from_values(*g.grid(), dct.apply_diagonal(g.values(), &symbol))
}

/// Cell average `(1/|Omega|) sum f hx hy`.
pub fn mean(f: &Field) -> f64 {
    f.sum() / f.grid().len() as f64
}

pub fn l2_inner(f: &Field, g: &Field) -> Result<f64> {
    f.same_grid(g)?;
    Ok(f.dot(g))
}

pub fn l2_norm(f: &Field) -> f64 {
    f.norm()
}

/// `sqrt(<f0, N^{-1} f0> + mean(f)^2 |Omega|)` with `f0 = f - mean(f)`.
pub fn hminus1_norm(f: &Field) -> f64 {
    let grid = *f.grid();
    let s = to_spectral(f);
    let mut acc = 0.0;
    for l in 0..grid.ny() {
        let wl = if l == 0 { 1.0 } else { 0.5 };
        for k in 0..grid.nx() {
            if k == 0 && l == 0 {
                continue;
            }
            let wk = if k == 0 { 1.0 } else { 0.5 };
            let a = s.coeff(k, l);
            acc += wk * wl * a * a / grid.eigenvalue(k, l);
        }
    }
    let m = mean(f);
    ((acc + m * m) * grid.area()).sqrt()
}

pub fn check_binary_mask(mask: &Field) -> Result<()> {
    match mask
        .values()
        .iter()
        .position(|&v| v != 0.0 && v != 1.0)
    {
        Some(index) => Err(Error::NonBinaryMask {
            index,
            value: mask.values()[index],
        }),
        None => Ok(()),
    }
}

/// Pointwise product with a `{0, 1}` mask.
pub fn masked(f: &Field, mask: &Field) -> Result<Field> {
    f.same_grid(mask)?;
    check_binary_mask(mask)?;
    Ok(f.mul(mask))
}
