//! Array responses and angle-of-arrival dictionaries.
//!
//! The base station is a uniform linear array (ULA) and the RIS a uniform
//! planar array (UPA) built as the Kronecker product of two ULAs. The AoA
//! grid is uniform in `sin θ` over `[-1, 1)`; index 0 of every grid and
//! dictionary is reserved for the (known) RIS-to-BS direction.

use crate::error::{Error, Result};
use crate::numerics::{cis, ComplexMatrix, Real};

/// Sin-space distance under which the RIS direction is considered to
/// collide with a uniform grid point.
const COLLISION_TOL: f64 = 1e-12;
/// Sin-space nudge applied to a colliding grid point.
const COLLISION_NUDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UlaConfig<T> {
    pub num_elements: usize,
    /// Element spacing in wavelengths.
    pub spacing: T,
}

impl<T: Real> UlaConfig<T> {
    /// Half-wavelength array.
    pub fn new(num_elements: usize) -> Self {
        Self {
            num_elements,
            spacing: T::lit(0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpaConfig<T> {
    pub ny: usize,
    pub nz: usize,
    pub spacing: T,
}

impl<T: Real> UpaConfig<T> {
    pub fn new(ny: usize, nz: usize) -> Self {
        Self {
            ny,
            nz,
            spacing: T::lit(0.5),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.ny * self.nz
    }
}

/// ULA response; element `m` is `exp(j·2π·d·m·sin θ)`.
pub fn ula_steering<T: Real>(cfg: &UlaConfig<T>, theta: T) -> ComplexMatrix<T> {
    let phase_step = T::TAU() * cfg.spacing * theta.sin();
    ComplexMatrix::column_vector(
        (0..cfg.num_elements)
            .map(|m| cis(phase_step * T::from_count(m)))
            .collect(),
    )
}

/// UPA response `a_y(az, el) ⊗ a_z(el)`, element index `iy·nz + iz`.
pub fn upa_steering<T: Real>(cfg: &UpaConfig<T>, azimuth: T, elevation: T) -> ComplexMatrix<T> {
    let step_y = T::TAU() * cfg.spacing * azimuth.sin() * elevation.cos();
    let step_z = T::TAU() * cfg.spacing * elevation.sin();
    let mut out = Vec::with_capacity(cfg.num_elements());
    for iy in 0..cfg.ny {
        for iz in 0..cfg.nz {
            out.push(cis(step_y * T::from_count(iy) + step_z * T::from_count(iz)));
        }
    }
    ComplexMatrix::column_vector(out)
}

/// Candidate arrival angles. Index 0 is the RIS direction `theta0`, indices
/// `1..=K` are the uniform sin-space grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AoaGrid<T> {
    angles: Vec<T>,
    sines: Vec<T>,
}

impl<T: Real> AoaGrid<T> {
    /// `K` points at `sin θ = -1 + 2i/K`, prepended with `theta0`.
    pub fn uniform(num_points: usize, theta0: T) -> Result<Self> {
        if num_points == 0 {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        let sin0 = theta0.sin();
        let step = T::lit(2.0) / T::from_count(num_points);
        let mut sines = Vec::with_capacity(num_points + 1);
        sines.push(sin0);
        for i in 0..num_points {
            let mut s = -T::one() + step * T::from_count(i);
            if (s - sin0).abs() < T::lit(COLLISION_TOL) {
                s = s + T::lit(COLLISION_NUDGE);
            }
            sines.push(s);
        }
        let angles = std::iter::once(theta0)
            .chain(sines[1..].iter().map(|s| s.asin()))
            .collect();
        Ok(Self { angles, sines })
    }

    /// Number of uniform grid points `K` (excluding the RIS direction).
    pub fn num_points(&self) -> usize {
        self.angles.len() - 1
    }

    pub fn theta0(&self) -> T {
        self.angles[0]
    }

    /// All `K + 1` dictionary angles.
    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    pub fn angle(&self, k: usize) -> T {
        self.angles[k]
    }

    pub fn sines(&self) -> &[T] {
        &self.sines
    }

    /// Nominal sin-space spacing `2/K`.
    pub fn sin_spacing(&self) -> T {
        T::lit(2.0) / T::from_count(self.num_points())
    }

    /// True for the grid point at `θ = -π/2`. Its cell lies on one side of
    /// the grid angle only, since `θ_k - h` is not a physical direction and
    /// gives the same steering vector as `θ_k + h`.
    pub fn is_endfire(&self, k: usize) -> bool {
        k != 0 && self.sines[k] <= -T::one()
    }

    /// Largest angular offset `h` such that `θ_k ± h` both stay inside grid
    /// cell `k` (the sin-space interval of half-width `1/K`). Zero for the
    /// RIS direction.
    pub fn half_cell(&self, k: usize) -> T {
        if k == 0 {
            return T::zero();
        }
        let half = self.sin_spacing() / T::lit(2.0);
        let s = self.sines[k];
        let theta = self.angles[k];
        // s + half < 1 for every grid point, so the upper edge is reachable.
        let upper = (s + half).min(T::one()).asin() - theta;
        let lower = if s - half >= -T::one() {
            theta - (s - half).asin()
        } else {
            // The cell wraps past endfire: sin(θ - h) folds back up and
            // leaves the cell through its upper edge.
            theta + T::PI() + (s + half).asin()
        };
        upper.min(lower)
    }
}

/// `M × (K+1)` dictionary whose column `k` is the ULA response at grid angle `k`.
pub fn build_dictionary<T: Real>(cfg: &UlaConfig<T>, grid: &AoaGrid<T>) -> ComplexMatrix<T> {
    let mut dict = ComplexMatrix::zeros(cfg.num_elements, grid.angles.len());
    for (k, &theta) in grid.angles.iter().enumerate() {
        dict.set_column(k, &ula_steering(cfg, theta));
    }
    dict
}

/// Dictionary with column `k` steered to `θ_k + δ_k`. `delta[0]` must be zero.
pub fn build_corrected_dictionary<T: Real>(
    cfg: &UlaConfig<T>,
    grid: &AoaGrid<T>,
    delta: &[T],
) -> Result<ComplexMatrix<T>> {
    if delta.len() != grid.angles.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} dictionary columns",
            delta.len(),
            grid.angles.len()
        )));
    }
    if delta[0] != T::zero() {
        return Err(Error::InvalidArgument(
            "residual of the RIS direction must be zero".into(),
        ));
    }
    let mut dict = ComplexMatrix::zeros(cfg.num_elements, grid.angles.len());
    for (k, (&theta, &d)) in grid.angles.iter().zip(delta).enumerate() {
        dict.set_column(k, &ula_steering(cfg, theta + d));
    }
    Ok(dict)
}

/// `max_{j≠k} |a_jᴴ a_k| / (‖a_j‖‖a_k‖)` over the dictionary columns.
pub fn mutual_coherence<T: Real>(dict: &ComplexMatrix<T>) -> T {
    let gram = dict.adjoint().matmul(dict).expect("square gram");
    let n = dict.cols();
    let mut best = T::zero();
    for j in 0..n {
        for k in 0..n {
            if j != k {
                let norm = (gram[(j, j)].re * gram[(k, k)].re).sqrt();
                best = best.max(gram[(j, k)].norm() / norm);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn broadside_is_all_ones() {
        let a = ula_steering(&UlaConfig::<f64>::new(8), 0.0);
        assert!(a
            .as_slice()
            .iter()
            .all(|z| (z.re - 1.0).abs() < 1e-15 && z.im.abs() < 1e-15));
    }

    #[test]
    fn endfire_alternates_sign() {
        let a = ula_steering(&UlaConfig::<f64>::new(6), FRAC_PI_2);
        for (m, z) in a.as_slice().iter().enumerate() {
            let expect = if m % 2 == 0 { 1.0 } else { -1.0 };
            assert!((z.re - expect).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn steering_norm_and_conjugate_symmetry() {
        let cfg = UlaConfig::<f64>::new(16);
        for &theta in &[-1.2, -0.3, 0.1, 0.77, 1.5] {
            let a = ula_steering(&cfg, theta);
            assert!((a.frobenius_norm() - 4.0).abs() < 1e-12);
            let b = ula_steering(&cfg, -theta);
            assert!(a.conj().sub(&b).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn upa_degenerate_cases() {
        let upa = UpaConfig::<f64>::new(16, 16);
        let a = upa_steering(&upa, 0.0, 0.0);
        assert_eq!(a.len(), 256);
        assert!(a.as_slice().iter().all(|z| (z.re - 1.0).abs() < 1e-15));
        let upa2 = UpaConfig::<f64>::new(2, 1);
        let ula2 = UlaConfig::<f64>::new(2);
        for &az in &[-0.9, 0.4, 1.1] {
            let d = upa_steering(&upa2, az, 0.0).sub(&ula_steering(&ula2, az)).unwrap();
            assert!(d.max_abs() < 1e-14);
        }
        let r = upa_steering(&UpaConfig::<f64>::new(4, 3), 0.7, -0.4);
        assert!((r.frobenius_norm() - 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_point_grid() {
        let g = AoaGrid::uniform(2, 0.3f64).unwrap();
        assert_eq!(g.angles().len(), 3);
        assert_eq!(g.theta0(), 0.3);
        assert_eq!(g.sines()[1], -1.0);
        assert_eq!(g.sines()[2], 0.0);
    }

    #[test]
    fn default_grid_has_33_columns() {
        let g = AoaGrid::uniform(32, 0.2f64).unwrap();
        assert_eq!(g.angles().len(), 33);
        for w in g.sines()[1..].windows(2) {
            assert!((w[1] - w[0] - 2.0 / 32.0).abs() < 1e-15);
        }
        assert!(AoaGrid::<f64>::uniform(0, 0.0).is_err());
    }

    #[test]
    fn colliding_grid_point_is_nudged() {
        // sin(0) = 0 is a grid point for even K.
        let g = AoaGrid::uniform(4, 0.0f64).unwrap();
        assert_eq!(g.sines()[3], 1e-6);
        assert_eq!(g.sines()[2], -0.5);
    }

    #[test]
    fn half_cell_bounds() {
        let g = AoaGrid::uniform(32, 0.2f64).unwrap();
        assert_eq!(g.half_cell(0), 0.0);
        for k in 1..=32 {
            let h = g.half_cell(k);
            assert!(h > 0.0);
            let s = g.sines()[k];
            for sign in [-1.0, 1.0] {
                let shifted = (g.angle(k) + sign * h * (1.0 - 1e-12)).sin();
                assert!((shifted - s).abs() <= 1.0 / 32.0 + 1e-12, "k={k}");
            }
        }
        // Broadside cell: asin(1/K).
        let mid = g.sines().iter().position(|&s| s == 0.0).unwrap();
        assert!((g.half_cell(mid) - (1.0f64 / 32.0).asin()).abs() < 1e-15);
        // Endfire cell wraps: h = acos(1 - 1/K).
        assert!((g.half_cell(1) - (1.0f64 - 1.0 / 32.0).acos()).abs() < 1e-12);
    }

    #[test]
    fn dictionary_columns() {
        let cfg = UlaConfig::<f64>::new(16);
        let g = AoaGrid::uniform(32, 0.35).unwrap();
        let d = build_dictionary(&cfg, &g);
        assert_eq!(d.shape(), (16, 33));
        for k in 0..33 {
            assert!((d.column(k).frobenius_norm_sqr() - 16.0).abs() < 1e-10);
        }
        assert!(d.column(0).sub(&ula_steering(&cfg, 0.35)).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn single_column_dictionary() {
        // K = 1 is the smallest grid; its RIS column is column 0.
        let cfg = UlaConfig::<f64>::new(4);
        let g = AoaGrid::uniform(1, -0.4).unwrap();
        let d = build_dictionary(&cfg, &g);
        assert_eq!(d.column(0), ula_steering(&cfg, -0.4));
    }

    #[test]
    fn coherence_matches_dirichlet_kernel_scan() {
        let m = 16usize;
        let k = 32usize;
        let cfg = UlaConfig::<f64>::new(m);
        let g = AoaGrid::uniform(k, 0.35).unwrap();
        let d = build_dictionary(&cfg, &g);
        // |Σ_m exp(jπ m Δs)| / M = |sin(Mπ Δs/2) / sin(π Δs/2)| / M
        let s = g.sines();
        let mut oracle: f64 = 0.0;
        for a in 0..=k {
            for b in 0..=k {
                if a == b {
                    continue;
                }
                let x = PI * (s[a] - s[b]);
                let val = ((m as f64) * x / 2.0).sin().abs() / ((x / 2.0).sin().abs() * m as f64);
                oracle = oracle.max(val);
            }
        }
        assert!((mutual_coherence(&d) - oracle).abs() < 1e-10);
    }

    #[test]
    fn corrected_dictionary() {
        let cfg = UlaConfig::<f64>::new(16);
        let g = AoaGrid::uniform(32, 0.35).unwrap();
        let base = build_dictionary(&cfg, &g);
        let zero = build_corrected_dictionary(&cfg, &g, &[0.0; 33]).unwrap();
        assert_eq!(base, zero);
        let mut delta = vec![0.0; 33];
        delta[7] = 0.5 * g.half_cell(7);
        let corr = build_corrected_dictionary(&cfg, &g, &delta).unwrap();
        for k in 0..33 {
            let same = corr.column(k) == base.column(k);
            assert_eq!(same, k != 7);
        }
        let truth = ula_steering(&cfg, g.angle(7) + delta[7]);
        assert!(corr.column(7).sub(&truth).unwrap().max_abs() < 1e-15);
        let mut bad = vec![0.0; 33];
        bad[0] = 1e-3;
        assert!(build_corrected_dictionary(&cfg, &g, &bad).is_err());
        assert!(build_corrected_dictionary(&cfg, &g, &[0.0; 5]).is_err());
    }
}
