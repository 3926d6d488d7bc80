//! Channel realizations and received pilot synthesis.
//!
//! The direct user–BS link is a sparse sum of `S` scattering paths whose
//! arrival angles sit on (or, in off-grid mode, within half a cell of) the
//! AoA grid. The RIS link is line of sight on both hops and collapses to a
//! rank-one matrix `Φ = a_BS(θ₀)·γᴴ` acting on the RIS phase vector.
//! Received pilots over `L` slots are
//!
//! ```text
//! Y = √P·x · A_R(δ)·Q̃·Ṽ + N,   Q̃ = [[0, γᴴ], [z̄, 0]]
//! ```

use std::io::Write;

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codebook::{Codebook, GroupingMap};
use crate::error::{Error, Result};
use crate::geometry::{build_corrected_dictionary, build_dictionary, upa_steering, AoaGrid, UlaConfig, UpaConfig};
use crate::numerics::{sample_cn, ComplexMatrix, Real};

/// Converts dBm to watts; `-inf` maps to zero.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    if dbm == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf((dbm - 30.0) / 10.0)
    }
}

/// Scalar parameters of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// BS antennas `M`.
    pub num_antennas: usize,
    pub ris_ny: usize,
    pub ris_nz: usize,
    /// RIS groups `G`.
    pub num_groups: usize,
    /// Uniform AoA grid points `K`.
    pub grid_points: usize,
    /// Pilot slots `L`.
    pub num_slots: usize,
    /// NLoS paths `S`.
    pub num_paths: usize,
    /// Noise power per antenna and slot; `-inf` disables noise.
    pub noise_dbm: f64,
    pub tx_power_dbm: f64,
    pub pilot_symbol: Complex<f64>,
    pub seed: u64,
    pub off_grid: bool,
    /// RIS-to-BS arrival angle, fixed by the BS/RIS placement.
    pub theta0_deg: f64,
    /// Element spacing of both arrays, in wavelengths.
    pub element_spacing: f64,
    /// Minimum circular separation between NLoS grid indices, in units of
    /// the BS array beamwidth `2/M` (sin space). Zero only requires distinct
    /// indices.
    pub path_separation: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_antennas: 16,
            ris_ny: 16,
            ris_nz: 16,
            num_groups: 16,
            grid_points: 32,
            num_slots: 17,
            num_paths: 3,
            noise_dbm: -110.0,
            tx_power_dbm: 0.0,
            pilot_symbol: Complex::new(1.0, 0.0),
            seed: 0,
            off_grid: false,
            theta0_deg: 20.0,
            element_spacing: 0.5,
            path_separation: 1.5,
        }
    }
}

impl ScenarioConfig {
    pub fn num_ris_elements(&self) -> usize {
        self.ris_ny * self.ris_nz
    }

    pub fn noise_variance(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    /// Complex gain `√P·x` applied to every pilot.
    pub fn observation_gain(&self) -> Complex<f64> {
        self.pilot_symbol * dbm_to_watts(self.tx_power_dbm).sqrt()
    }

    /// Minimum separation between path grid indices, in grid cells.
    pub fn min_separation_cells(&self) -> usize {
        let cells = self.path_separation * self.grid_points as f64 / self.num_antennas as f64;
        (cells.ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_antennas == 0 || self.ris_ny == 0 || self.ris_nz == 0 {
            return fail("array sizes must be positive".into());
        }
        if self.grid_points == 0 {
            return fail("K must be at least 1".into());
        }
        if self.num_groups == 0 || self.num_groups > self.num_ris_elements() {
            return fail(format!(
                "G = {} must lie in 1..={}",
                self.num_groups,
                self.num_ris_elements()
            ));
        }
        if self.num_slots < self.num_groups + 1 {
            return fail(format!(
                "L = {} must be at least G + 1 = {}",
                self.num_slots,
                self.num_groups + 1
            ));
        }
        if self.num_paths > self.grid_points || self.num_paths > self.num_antennas {
            return fail(format!("S = {} exceeds min(M, K)", self.num_paths));
        }
        if self.noise_dbm.is_nan() || self.noise_dbm == f64::INFINITY {
            return fail("noise_dbm must be finite or -inf".into());
        }
        if !self.tx_power_dbm.is_finite() {
            return fail("tx_power_dbm must be finite".into());
        }
        if self.pilot_symbol.norm() <= 0.0 || !self.pilot_symbol.norm().is_finite() {
            return fail("pilot symbol must be nonzero".into());
        }
        if !(self.theta0_deg > -90.0 && self.theta0_deg <= 90.0) {
            return fail("theta0_deg must lie in (-90, 90]".into());
        }
        if self.element_spacing <= 0.0 || !self.element_spacing.is_finite() {
            return fail("element spacing must be positive".into());
        }
        if self.path_separation < 0.0 || !self.path_separation.is_finite() {
            return fail("path_separation must be >= 0".into());
        }
        if self.num_paths > 1 && self.num_paths * self.min_separation_cells() > self.grid_points {
            return fail(format!(
                "{} paths separated by {} cells do not fit a {}-point grid",
                self.num_paths,
                self.min_separation_cells(),
                self.grid_points
            ));
        }
        Ok(())
    }
}

/// Immutable objects derived from a [`ScenarioConfig`]: arrays, grid,
/// dictionary, codebook and RIS grouping.
#[derive(Clone, Debug)]
pub struct Scenario<T> {
    pub config: ScenarioConfig,
    pub ula: UlaConfig<T>,
    pub upa: UpaConfig<T>,
    pub grid: AoaGrid<T>,
    /// On-grid dictionary `A_R`, `M × (K+1)`.
    pub dictionary: ComplexMatrix<T>,
    pub codebook: Codebook<T>,
    pub grouping: GroupingMap,
}

impl<T: Real> Scenario<T> {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let spacing = T::lit(config.element_spacing);
        let ula = UlaConfig {
            num_elements: config.num_antennas,
            spacing,
        };
        let upa = UpaConfig {
            ny: config.ris_ny,
            nz: config.ris_nz,
            spacing,
        };
        let grid = AoaGrid::uniform(config.grid_points, T::lit(config.theta0_deg.to_radians()))?;
        let dictionary = build_dictionary(&ula, &grid);
        let codebook = Codebook::dft(config.num_groups, config.num_slots)?;
        let grouping = GroupingMap::for_groups(&upa, config.num_groups)?;
        Ok(Self {
            config,
            ula,
            upa,
            grid,
            dictionary,
            codebook,
            grouping,
        })
    }

    /// Same scenario at a different transmit power.
    pub fn with_tx_power(&self, dbm: f64) -> Self {
        let mut s = self.clone();
        s.config.tx_power_dbm = dbm;
        s
    }

    pub fn observation_gain(&self) -> Complex<T> {
        let g = self.config.observation_gain();
        Complex::new(T::lit(g.re), T::lit(g.im))
    }

    /// RIS direction response `a_R(θ̃₀)` (dictionary column 0).
    pub fn ris_steering(&self) -> ComplexMatrix<T> {
        self.dictionary.column(0)
    }
}

/// One NLoS path on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord<T> {
    /// Grid index in `1..=K`.
    pub grid_index: usize,
    pub beta: Complex<T>,
    /// True angle minus grid angle.
    pub delta: T,
}

/// All physical unknowns of one channel draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization<T> {
    pub theta0: T,
    pub c_r: Complex<T>,
    pub c_v: Complex<T>,
    /// AoD at the RIS towards the BS.
    pub theta_t_ris: T,
    /// AoA at the RIS from the user.
    pub theta_r_ris: T,
    /// Group-level RIS gain vector, `G × 1`.
    pub gamma: ComplexMatrix<T>,
    pub paths: Vec<PathRecord<T>>,
    /// Residuals indexed like the dictionary columns (`K + 1` entries).
    pub delta_vec: Vec<T>,
}

impl<T: Real> ChannelRealization<T> {
    /// Sorted support of the NLoS paths (grid indices `1..=K`).
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.paths.iter().map(|p| p.grid_index).collect();
        s.sort_unstable();
        s
    }

    /// Same realization at another precision.
    pub fn cast<U: Real>(&self) -> ChannelRealization<U> {
        let c = |z: Complex<T>| Complex::new(U::lit(z.re.to_f64_lossy()), U::lit(z.im.to_f64_lossy()));
        let r = |x: T| U::lit(x.to_f64_lossy());
        ChannelRealization {
            theta0: r(self.theta0),
            c_r: c(self.c_r),
            c_v: c(self.c_v),
            theta_t_ris: r(self.theta_t_ris),
            theta_r_ris: r(self.theta_r_ris),
            gamma: self.gamma.cast(),
            paths: self
                .paths
                .iter()
                .map(|p| PathRecord {
                    grid_index: p.grid_index,
                    beta: c(p.beta),
                    delta: r(p.delta),
                })
                .collect(),
            delta_vec: self.delta_vec.iter().map(|&d| r(d)).collect(),
        }
    }
}

/// Channels an estimator tries to recover.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    /// Direct channel, `M × 1`.
    pub h_d: ComplexMatrix<T>,
    /// RIS channel `a_R(θ̃₀)·γᴴ`, `M × G`.
    pub phi: ComplexMatrix<T>,
    /// Sparse NLoS gains over grid points `1..=K`, `K × 1`.
    pub z_bar: ComplexMatrix<T>,
    /// `(K+1) × (G+1)`: column 0 is `[0; z̄]`, row 0 beyond entry 0 is `γᴴ`.
    pub q_tilde: ComplexMatrix<T>,
}

fn circular_distance(a: usize, b: usize, k: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(k - d)
}

/// Uniformly random path support with the configured minimum separation.
pub fn sample_support<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<usize>> {
    sample_support_with(cfg, None, rng)
}

/// Like [`sample_support`], optionally forcing one grid index into the
/// support (placed first).
pub fn sample_support_with<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    required: Option<usize>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = cfg.grid_points;
    let sep = cfg.min_separation_cells();
    if let Some(r) = required {
        if r == 0 || r > k || cfg.num_paths == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot force grid index {r} into the support"
            )));
        }
    }
    for _ in 0..100_000 {
        let picks: Vec<usize> = match required {
            None => rand::seq::index::sample(rng, k, cfg.num_paths).into_vec(),
            Some(r) => {
                let others = rand::seq::index::sample(rng, k - 1, cfg.num_paths - 1);
                std::iter::once(r - 1)
                    .chain(others.into_iter().map(|i| if i >= r - 1 { i + 1 } else { i }))
                    .collect()
            }
        };
        let ok = picks
            .iter()
            .enumerate()
            .all(|(i, &a)| picks[i + 1..].iter().all(|&b| circular_distance(a, b, k) >= sep));
        if ok {
            return Ok(picks.into_iter().map(|i| i + 1).collect());
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not place {} paths {sep} cells apart on {k} grid points",
        cfg.num_paths
    )))
}

/// Group-level RIS gains. Element `n` carries
/// `conj(c_r·c_v)·a_n(θ_T)·conj(a_n(θ_R))` so that
/// `H_r·diag(v)·h_v = a_BS·γᴴ·v`; elements are then summed per group.
pub fn compute_gamma<T: Real>(
    c_r: Complex<T>,
    c_v: Complex<T>,
    theta_t_ris: T,
    theta_r_ris: T,
    upa: &UpaConfig<T>,
    grouping: &GroupingMap,
) -> Result<ComplexMatrix<T>> {
    if grouping.num_elements() != upa.num_elements() {
        return Err(Error::DimensionMismatch(format!(
            "grouping covers {} elements, array has {}",
            grouping.num_elements(),
            upa.num_elements()
        )));
    }
    let elements = element_gamma(c_r, c_v, theta_t_ris, theta_r_ris, upa);
    let mut gamma = ComplexMatrix::zeros(grouping.num_groups(), 1);
    for (n, g) in elements.as_slice().iter().enumerate() {
        let idx = grouping.group_of(n);
        gamma[(idx, 0)] = gamma[(idx, 0)] + g;
    }
    Ok(gamma)
}

/// Element-level RIS gains (`N × 1`), before grouping.
pub fn element_gamma<T: Real>(
    c_r: Complex<T>,
    c_v: Complex<T>,
    theta_t_ris: T,
    theta_r_ris: T,
    upa: &UpaConfig<T>,
) -> ComplexMatrix<T> {
    let a_t = upa_steering(upa, theta_t_ris, T::zero());
    let a_r = upa_steering(upa, theta_r_ris, T::zero());
    let scale = (c_r * c_v).conj();
    ComplexMatrix::column_vector(
        a_t.as_slice()
            .iter()
            .zip(a_r.as_slice())
            .map(|(t, r)| scale * t * r.conj())
            .collect(),
    )
}

/// Draws one channel and derives its ground truth.
pub fn sample_channel<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    rng: &mut R,
) -> Result<(ChannelRealization<T>, GroundTruth<T>)>
where
    StandardNormal: Distribution<T>,
{
    sample_channel_with(scenario, None, rng)
}

/// [`sample_channel`] with an optional grid index that must carry a path.
pub fn sample_channel_with<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    required: Option<usize>,
    rng: &mut R,
) -> Result<(ChannelRealization<T>, GroundTruth<T>)>
where
    StandardNormal: Distribution<T>,
{
    let cfg = &scenario.config;
    let k = cfg.grid_points;
    let support = sample_support_with(cfg, required, rng)?;
    let betas = sample_cn(T::one(), support.len(), rng)?;
    // Residual fractions are drawn in both modes so that on-grid and
    // off-grid runs with the same seed share every other quantity.
    let fractions: Vec<T> = (0..support.len())
        .map(|_| rng.random_range(-T::one()..=T::one()))
        .collect();
    let gains = sample_cn(T::one(), 2, rng)?;
    let half_pi = T::FRAC_PI_2();
    let theta_t_ris = rng.random_range(-half_pi..half_pi);
    let theta_r_ris = rng.random_range(-half_pi..half_pi);

    let mut delta_vec = vec![T::zero(); k + 1];
    let paths: Vec<PathRecord<T>> = support
        .iter()
        .zip(&betas)
        .zip(&fractions)
        .map(|((&idx, &beta), &u)| {
            let delta = if !cfg.off_grid {
                T::zero()
            } else if scenario.grid.is_endfire(idx) {
                u.abs() * scenario.grid.half_cell(idx)
            } else {
                u * scenario.grid.half_cell(idx)
            };
            delta_vec[idx] = delta;
            PathRecord {
                grid_index: idx,
                beta,
                delta,
            }
        })
        .collect();

    let gamma = compute_gamma(
        gains[0],
        gains[1],
        theta_t_ris,
        theta_r_ris,
        &scenario.upa,
        &scenario.grouping,
    )?;
    let realization = ChannelRealization {
        theta0: scenario.grid.theta0(),
        c_r: gains[0],
        c_v: gains[1],
        theta_t_ris,
        theta_r_ris,
        gamma,
        paths,
        delta_vec,
    };
    let truth = ground_truth(scenario, &realization)?;
    Ok((realization, truth))
}

/// Channels implied by a realization.
pub fn ground_truth<T: Real>(scenario: &Scenario<T>, real: &ChannelRealization<T>) -> Result<GroundTruth<T>> {
    let k = scenario.config.grid_points;
    let g = real.gamma.len();
    let mut z_bar = ComplexMatrix::zeros(k, 1);
    for p in &real.paths {
        z_bar[(p.grid_index - 1, 0)] = p.beta;
    }
    let mut q_tilde = ComplexMatrix::zeros(k + 1, g + 1);
    for i in 0..k {
        q_tilde[(i + 1, 0)] = z_bar[(i, 0)];
    }
    for j in 0..g {
        q_tilde[(0, j + 1)] = real.gamma[(j, 0)].conj();
    }
    let corrected = build_corrected_dictionary(&scenario.ula, &scenario.grid, &real.delta_vec)?;
    let h_d = corrected.matmul(&q_tilde.column(0))?;
    let phi = ComplexMatrix::outer_adjoint(&scenario.ris_steering(), &real.gamma);
    Ok(GroundTruth {
        h_d,
        phi,
        z_bar,
        q_tilde,
    })
}

/// Noise-free pilot observations `√P·x·A_R(δ)·Q̃·Ṽ`.
pub fn noiseless_rx<T: Real>(
    scenario: &Scenario<T>,
    real: &ChannelRealization<T>,
    truth: &GroundTruth<T>,
) -> Result<ComplexMatrix<T>> {
    let cb = &scenario.codebook;
    if truth.q_tilde.cols() != cb.num_groups() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} RIS groups, codebook {}",
            truth.q_tilde.cols() - 1,
            cb.num_groups()
        )));
    }
    let corrected = build_corrected_dictionary(&scenario.ula, &scenario.grid, &real.delta_vec)?;
    Ok(corrected
        .matmul(&truth.q_tilde)?
        .matmul(cb.v_tilde())?
        .scale(scenario.observation_gain()))
}

/// Received pilots `Y` (`M × L`) with i.i.d. `CN(0, N₀)` noise.
pub fn synthesize_rx<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    real: &ChannelRealization<T>,
    truth: &GroundTruth<T>,
    rng: &mut R,
) -> Result<ComplexMatrix<T>>
where
    StandardNormal: Distribution<T>,
{
    let clean = noiseless_rx(scenario, real, truth)?;
    let noise_var = scenario.config.noise_variance();
    if noise_var == 0.0 {
        return Ok(clean);
    }
    let noise = sample_cn(T::lit(noise_var), clean.len(), rng)?;
    clean.add(&ComplexMatrix::from_vec(clean.rows(), clean.cols(), noise)?)
}

/// Writes a realization and its ground truth as `quantity,index,re,im` rows.
pub fn write_realization_csv<T: Real, W: Write>(
    real: &ChannelRealization<T>,
    truth: &GroundTruth<T>,
    mut out: W,
) -> Result<()> {
    writeln!(out, "quantity,index,re,im")?;
    let scalar = |out: &mut W, name: &str, v: T| writeln!(out, "{name},0,{v},0");
    scalar(&mut out, "theta0", real.theta0)?;
    scalar(&mut out, "theta_t_ris", real.theta_t_ris)?;
    scalar(&mut out, "theta_r_ris", real.theta_r_ris)?;
    writeln!(out, "c_r,0,{},{}", real.c_r.re, real.c_r.im)?;
    writeln!(out, "c_v,0,{},{}", real.c_v.re, real.c_v.im)?;
    for p in &real.paths {
        writeln!(out, "path_beta,{},{},{}", p.grid_index, p.beta.re, p.beta.im)?;
        writeln!(out, "path_delta,{},{},0", p.grid_index, p.delta)?;
    }
    for (i, d) in real.delta_vec.iter().enumerate() {
        writeln!(out, "delta,{i},{d},0")?;
    }
    let matrix = |out: &mut W, name: &str, m: &ComplexMatrix<T>| -> std::io::Result<()> {
        for (i, z) in m.as_slice().iter().enumerate() {
            writeln!(out, "{name},{i},{},{}", z.re, z.im)?;
        }
        Ok(())
    };
    matrix(&mut out, "gamma", &real.gamma)?;
    matrix(&mut out, "h_d", &truth.h_d)?;
    matrix(&mut out, "phi", &truth.phi)?;
    matrix(&mut out, "z_bar", &truth.z_bar)?;
    Ok(())
}
