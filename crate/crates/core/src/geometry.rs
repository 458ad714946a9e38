//! Planar IOS layout and the spatial statistics derived from it.
//!
//! Elements are indexed row by row: element `n` (1-based) sits at column
//! `mod(n − 1, N_h)` and row `⌊(n − 1)/N_h⌋` of the `yOz` plane. Channel
//! correlation between two elements depends only on their distance through
//! the isotropic-scattering sinc kernel.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::specfun::{elliptic_e, elliptic_k};

/// Correlations this close to one are treated as fully coherent in
/// [`cross_moment`], where `(m − 1)/2 · K(m)` degenerates to `0 · ∞`.
const COHERENT_LIMIT: f64 = 1e-9;

/// Rectangular IOS array of `n_h × n_v` elements of size `l × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    n_h: usize,
    n_v: usize,
    elem_len_l: f64,
    elem_len_w: f64,
    base_height_l0: f64,
    wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(
        n_h: usize,
        n_v: usize,
        elem_len_l: f64,
        elem_len_w: f64,
        base_height_l0: f64,
        wavelength: f64,
    ) -> Result<Self> {
        if n_h == 0 {
            return Err(Error::config("n_h", "must be >= 1"));
        }
        if n_v == 0 {
            return Err(Error::config("n_v", "must be >= 1"));
        }
        for (key, v) in [
            ("elem_len_l", elem_len_l),
            ("elem_len_w", elem_len_w),
            ("wavelength", wavelength),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be a positive length, got {v}")));
            }
        }
        if !(base_height_l0 >= 0.0 && base_height_l0.is_finite()) {
            return Err(Error::config("base_height", format!("must be >= 0, got {base_height_l0}")));
        }
        Ok(Self {
            n_h,
            n_v,
            elem_len_l,
            elem_len_w,
            base_height_l0,
            wavelength,
        })
    }

    /// Half-wavelength elements at wavelength `lambda`, no mounting height.
    pub fn half_wavelength(n_h: usize, n_v: usize, lambda: f64) -> Result<Self> {
        Self::new(n_h, n_v, lambda / 2.0, lambda / 2.0, 0.0, lambda)
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn elem_len_l(&self) -> f64 {
        self.elem_len_l
    }

    pub fn elem_len_w(&self) -> f64 {
        self.elem_len_w
    }

    pub fn base_height(&self) -> f64 {
        self.base_height_l0
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Total element count `N = N_h · N_v`.
    pub fn len(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn with_n_h(&self, n_h: usize) -> Result<Self> {
        Self::new(
            n_h,
            self.n_v,
            self.elem_len_l,
            self.elem_len_w,
            self.base_height_l0,
            self.wavelength,
        )
    }

    /// Coordinate `[0, y(n)·l, z(n)·w + l0]` of element `n` (1-based).
    pub fn element_coordinate(&self, n: usize) -> Result<[f64; 3]> {
        if n == 0 || n > self.len() {
            return Err(Error::config(
                "element_index",
                format!("{n} outside 1..={}", self.len()),
            ));
        }
        let y = (n - 1) % self.n_h;
        let z = (n - 1) / self.n_h;
        Ok([
            0.0,
            y as f64 * self.elem_len_l,
            z as f64 * self.elem_len_w + self.base_height_l0,
        ])
    }

    /// Spatial correlation matrix `[R]_{m,n} = sinc(2π‖a_m − a_n‖/λ)`.
    pub fn correlation_matrix(&self) -> CorrelationMatrix {
        let n = self.len();
        let coords: Vec<[f64; 3]> = (1..=n)
            .map(|i| self.element_coordinate(i).expect("index in range"))
            .collect();
        let k = 2.0 * PI / self.wavelength;
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance(&coords[i], &coords[j]);
                let v = sinc(k * d);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        CorrelationMatrix(m)
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Symmetric unit-diagonal correlation matrix of a channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    /// Uncorrelated channels.
    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Wraps an explicit matrix after checking symmetry, unit diagonal and range.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::config("correlation", "matrix must be square and non-empty"));
        }
        let n = m.nrows();
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::config("correlation", format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::config("correlation", format!("entry ({i},{j}) = {v}")));
                }
                if (v - m[(j, i)]).abs() > 1e-12 {
                    return Err(Error::config("correlation", "matrix is not symmetric"));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// True when every off-diagonal entry is (numerically) zero.
    pub fn is_identity(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)].abs() < 1e-12))
    }
}

/// `R̄ = E[|w||w|ᵀ]`, the second moments of the channel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMomentMatrix(DMatrix<f64>);

impl MagnitudeMomentMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `E[|w_n||w_i|]` for unit-power circularly-symmetric complex Gaussians
/// with `|E[w_n w_i*]|² = rho_sq`:
///
/// ```text
/// (rho_sq/2 − 1/2) · K(rho_sq) + E(rho_sq)
/// ```
///
/// Ranges from π/4 (independent) to 1 (identical).
pub fn cross_moment(rho_sq: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho_sq) {
        return Err(Error::Domain {
            func: "cross_moment",
            value: rho_sq,
            domain: "[0, 1]",
        });
    }
    if rho_sq > 1.0 - COHERENT_LIMIT {
        return Ok(1.0);
    }
    Ok((0.5 * rho_sq - 0.5) * elliptic_k(rho_sq)? + elliptic_e(rho_sq)?)
}

/// Applies [`cross_moment`] entrywise to `|R|²`, with a unit diagonal.
pub fn magnitude_moment_matrix(r: &CorrelationMatrix) -> MagnitudeMomentMatrix {
    let n = r.dim();
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let rho = r.get(i, j);
            let v = cross_moment((rho * rho).min(1.0)).expect("squared correlation lies in [0, 1]");
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    MagnitudeMomentMatrix(m)
}

/// `tr(R̄ R̄) = Σ_{m,n} [R̄]²_{m,n}` (R̄ is symmetric).
pub fn trace_rbar_sq(rbar: &MagnitudeMomentMatrix) -> f64 {
    rbar.0.iter().map(|v| v * v).sum()
}

/// `tr(R̄R̄)` for `n` uncorrelated elements: `N + N(N−1)π²/16`.
pub fn trace_rbar_sq_uncorrelated(n: usize) -> f64 {
    let n = n as f64;
    n + n * (n - 1.0) * PI * PI / 16.0
}
