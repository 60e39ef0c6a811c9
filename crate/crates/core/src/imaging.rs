//! Conversions between grayscale images and phase fields, and the blurred
//! initial guess.
//!
//! Gray levels live in `[0, 1]` with 1 = black. Thresholded pixels map to
//! `+m*` (black) or `-m*` (white); pixels in the damaged region map to 0.

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::spectral;

/// `gray >= threshold -> +m*`, otherwise `-m*`; cells with `mask_d = 1` get 0.
pub fn binarize_to_phase(gray: &Field, mask_d: &Field, m_star: f64, threshold: f64) -> Result<Field> {
    gray.same_grid(mask_d)?;
    spectral::check_binary_mask(mask_d)?;
    Ok(gray.zip_map(mask_d, |g, m| {
        if m == 1.0 {
            0.0
        } else if g >= threshold {
            m_star
        } else {
            -m_star
        }
    }))
}

/// Checks `0 < |D| < |Omega|`.
pub fn validate_mask(mask_d: &Field) -> Result<()> {
    spectral::check_binary_mask(mask_d)?;
    let damaged = mask_d.sum();
    if damaged == 0.0 || damaged == mask_d.grid().len() as f64 {
        return Err(Error::InvalidParameter(
            "damaged region must be nonempty and smaller than the image".into(),
        ));
    }
    Ok(())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Reflects an out-of-range index back into `0..n` (half-sample symmetric,
/// which matches the Neumann extension of cell-centred data).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflect padding, truncated at `4 sigma`.
/// `sigma` is measured in cells.
pub fn gaussian_blur(field: &Field, sigma: f64) -> Field {
    if sigma <= 0.0 {
        return field.clone();
    }
    let g = *field.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = field.values();
    let mut tmp = vec![0.0; g.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let ii = reflect(i as isize + t as isize - r, nx);
                acc += w * src[j * nx + ii];
            }
            tmp[j * nx + i] = acc;
        }
    }
    let mut out = vec![0.0; g.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let jj = reflect(j as isize + t as isize - r, ny);
                acc += w * tmp[jj * nx + i];
            }
            out[j * nx + i] = acc;
        }
    }
    Field::from_values(g, out).expect("blur of finite data")
}

/// Blurred, slightly shrunk copy of the zero-extended phase image.
pub fn initial_guess(f_phase: &Field, mask_d: &Field, blur_sigma: f64) -> Result<Field> {
    if !(blur_sigma >= 0.0) {
        return Err(Error::InvalidParameter("blur_sigma must be >= 0".into()));
    }
    let extended = f_phase.zip_map(mask_d, |v, m| if m == 1.0 { 0.0 } else { v });
    let phi0 = gaussian_blur(&extended, blur_sigma).scaled(1.0 - 1e-6);
    let m = spectral::mean(&phi0);
    if !(m.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "initial mean {m} is not inside (-1, 1)"
        )));
    }
    Ok(phi0)
}

/// `u = (phi/m*)/2 + 1/2` clipped to `[0, 1]`, quantised to 8 bits with
/// round-half-up.
pub fn phase_to_gray8(phi: &Field, m_star: f64) -> Vec<u8> {
    phi.values()
        .iter()
        .map(|&p| {
            let u = (0.5 * p / m_star + 0.5).clamp(0.0, 1.0);
            (u * 255.0 + 0.5).floor().min(255.0) as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn binarize_examples() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let no_damage = Field::zeros(g);
        let white = Field::zeros(g);
        let f = binarize_to_phase(&white, &no_damage, 0.9, 0.5).unwrap();
        assert!(f.values().iter().all(|&v| v == -0.9));
        let levels = [0.0, 128.0 / 255.0, 1.0];
        let gray = Field::from_fn(g, |x, _| levels[((x * 4.0) as usize).min(2)]);
        let f = binarize_to_phase(&gray, &no_damage, 0.9, 0.5).unwrap();
        assert_eq!(f.at(0, 0), -0.9);
        assert_eq!(f.at(1, 0), 0.9);
        assert_eq!(f.at(2, 0), 0.9);
        let checker = Field::from_fn(g, |x, y| (((x * 4.0) as usize + (y * 4.0) as usize) % 2) as f64);
        let f = binarize_to_phase(&checker, &no_damage, 0.5, 0.5).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let expect = if (i + j) % 2 == 1 { 0.5 } else { -0.5 };
                assert_eq!(f.at(i, j), expect);
            }
        }
    }

    #[test]
    fn mask_validation() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        assert!(validate_mask(&Field::zeros(g)).is_err());
        assert!(validate_mask(&Field::constant(g, 1.0)).is_err());
        let sq = Field::from_fn(g, |x, y| if (0.25..0.75).contains(&x) && (0.25..0.75).contains(&y) { 1.0 } else { 0.0 });
        assert_eq!(sq.sum(), 4.0);
        assert!(validate_mask(&sq).is_ok());
    }

    #[test]
    fn blur_examples() {
        let g = Grid::new(16, 8, 1.0, 1.0).unwrap();
        let none = Field::zeros(g);
        let c = Field::constant(g, 0.4);
        let phi0 = initial_guess(&c, &none, 0.0).unwrap();
        assert!(phi0.sub(&c.scaled(1.0 - 1e-6)).max_abs() < 1e-16);
        let blurred = initial_guess(&c, &none, 2.0).unwrap();
        assert!(blurred.sub(&c.scaled(1.0 - 1e-6)).max_abs() < 1e-14);
        let m = 0.9;
        let stripe = Field::from_fn(g, |x, _| if x < 0.5 { m } else { -m });
        let b = initial_guess(&stripe, &none, 1.5).unwrap();
        assert!(b.at(7, 3).abs() < m && b.at(8, 3).abs() < m);
        assert!(b.max_abs() < m);
    }

    #[test]
    fn gray_quantisation() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let m = 0.8;
        assert!(phase_to_gray8(&Field::constant(g, m), m).iter().all(|&v| v == 255));
        assert!(phase_to_gray8(&Field::constant(g, -m), m).iter().all(|&v| v == 0));
        assert!(phase_to_gray8(&Field::zeros(g), m).iter().all(|&v| v == 128));
    }
}
