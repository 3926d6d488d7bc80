//! Channel estimators: the structured estimator (projection, OMP, RIS isolation and
//! γ least squares), the unstructured least-squares baseline, and NMSE.
//!
//! All estimates are returned in channel units: the pilot gain `√P·x` is
//! divided out of `Y` before anything else happens.

use std::fmt;
use std::io::Write;

use log::warn;
use num_complex::Complex;
use num_traits::One;

use crate::channel::{ChannelRealization, ScenarioConfig};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::numerics::{least_squares, solve_least_squares, ComplexMatrix, Real};

/// Output of the structured estimator and of the off-grid pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult<T> {
    pub h_d_hat: ComplexMatrix<T>,
    /// Always `a_R(θ̃₀)·γ̂ᴴ`.
    pub phi_hat: ComplexMatrix<T>,
    /// `K × 1`; entry `k - 1` belongs to grid index `k`.
    pub z_bar_hat: ComplexMatrix<T>,
    /// Grid indices in `1..=K`, in detection order.
    pub support: Vec<usize>,
    pub gamma_hat: ComplexMatrix<T>,
    /// `K + 1` residuals used for the dictionary (zero on-grid).
    pub delta_hat: Vec<T>,
}

impl<T: Real> EstimationResult<T> {
    pub fn sorted_support(&self) -> Vec<usize> {
        let mut s = self.support.clone();
        s.sort_unstable();
        s
    }

    /// Whether the detected support equals the true path support.
    pub fn support_matches(&self, real: &ChannelRealization<T>) -> bool {
        self.sorted_support() == real.support()
    }
}

/// `y′ = Y·ṽ₀* / (ṽ₀ᵀṽ₀*)`, which keeps only the direct-path column of Q̃.
pub fn project_direct<T: Real>(y: &ComplexMatrix<T>, cb: &Codebook<T>) -> Result<ComplexMatrix<T>> {
    if y.cols() != cb.num_slots() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} slots, codebook {}",
            y.cols(),
            cb.num_slots()
        )));
    }
    let v0 = cb.v_tilde().row(0);
    let energy: T = v0.iter().map(|z| z.norm_sqr()).sum();
    let v0_conj = ComplexMatrix::column_vector(v0.iter().map(|z| z.conj()).collect());
    Ok(y.matmul(&v0_conj)?.scale_real(T::one() / energy))
}

/// OMP stopping rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmpOptions<T> {
    /// Maximum number of atoms.
    pub sparsity: usize,
    /// Optional absolute residual norm at which to stop early.
    pub residual_threshold: Option<T>,
}

impl<T> OmpOptions<T> {
    pub fn exact(sparsity: usize) -> Self {
        Self {
            sparsity,
            residual_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmpResult<T> {
    /// Coefficients over all dictionary columns, zero off-support.
    pub z_hat: ComplexMatrix<T>,
    /// Selected column indices of the dictionary passed in, in order.
    pub support: Vec<usize>,
    /// `‖r‖` before the first and after every iteration.
    pub residual_norms: Vec<T>,
    pub residual: ComplexMatrix<T>,
}

/// Orthogonal matching pursuit with a least-squares refit after every
/// selection. Stops after `sparsity` atoms, when the residual vanishes
/// relative to `y`, or when it drops below the optional threshold.
pub fn omp<T: Real>(y: &ComplexMatrix<T>, dictionary: &ComplexMatrix<T>, opts: OmpOptions<T>) -> Result<OmpResult<T>> {
    let (m, k) = dictionary.shape();
    if y.shape() != (m, 1) {
        return Err(Error::DimensionMismatch(format!(
            "y is {:?}, expected ({m}, 1)",
            y.shape()
        )));
    }
    if opts.sparsity > m || opts.sparsity > k {
        return Err(Error::InvalidArgument(format!(
            "sparsity {} exceeds min(M, K) = {}",
            opts.sparsity,
            m.min(k)
        )));
    }
    let col_norms: Vec<T> = (0..k).map(|c| dictionary.column(c).frobenius_norm()).collect();
    let y_norm = y.frobenius_norm();
    let vanish = T::lit(1e-13) * y_norm;

    let mut support = Vec::with_capacity(opts.sparsity);
    let mut coeffs = ComplexMatrix::zeros(0, 1);
    let mut residual = y.clone();
    let mut residual_norms = vec![y_norm];
    let done = |r: T| r <= vanish || opts.residual_threshold.is_some_and(|t| r < t);

    while support.len() < opts.sparsity && !done(*residual_norms.last().unwrap()) {
        let mut best = None;
        let mut best_score = T::neg_infinity();
        for (c, &norm) in col_norms.iter().enumerate() {
            if support.contains(&c) || norm == T::zero() {
                continue;
            }
            let score = dictionary.column(c).inner(&residual).norm() / norm;
            if score > best_score {
                best_score = score;
                best = Some(c);
            }
        }
        let Some(c) = best else { break };
        support.push(c);
        let sub = dictionary.select_columns(&support);
        coeffs = solve_least_squares(&sub, y)?;
        residual = y.sub(&sub.matmul(&coeffs)?)?;
        residual_norms.push(residual.frobenius_norm());
    }

    let mut z_hat = ComplexMatrix::zeros(k, 1);
    for (i, &c) in support.iter().enumerate() {
        z_hat[(c, 0)] = coeffs[(i, 0)];
    }
    Ok(OmpResult {
        z_hat,
        support,
        residual_norms,
        residual,
    })
}

/// `Y_ris = Y − g·A_R·[0; ẑ]·ṽ₀ᵀ` where `g` is the pilot gain.
pub fn remove_direct<T: Real>(
    y: &ComplexMatrix<T>,
    dictionary: &ComplexMatrix<T>,
    z_bar_hat: &ComplexMatrix<T>,
    cb: &Codebook<T>,
    gain: Complex<T>,
) -> Result<ComplexMatrix<T>> {
    let h_d = direct_from_sparse(dictionary, z_bar_hat)?;
    let v0 = ComplexMatrix::from_vec(1, cb.num_slots(), cb.v_tilde().row(0).to_vec())?;
    y.sub(&h_d.matmul(&v0)?.scale(gain))
}

/// `A_R·[0; ẑ]`.
pub fn direct_from_sparse<T: Real>(
    dictionary: &ComplexMatrix<T>,
    z_bar: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    if z_bar.shape() != (dictionary.cols().saturating_sub(1), 1) {
        return Err(Error::DimensionMismatch(format!(
            "z̄ is {:?} for a dictionary with {} columns",
            z_bar.shape(),
            dictionary.cols()
        )));
    }
    let mut padded = ComplexMatrix::zeros(dictionary.cols(), 1);
    for i in 0..z_bar.rows() {
        padded[(i + 1, 0)] = z_bar[(i, 0)];
    }
    dictionary.matmul(&padded)
}

/// Minimizes `‖Y_ris − a₀·γᴴ·V‖_F` over γ.
pub fn estimate_gamma<T: Real>(
    y_ris: &ComplexMatrix<T>,
    a0: &ComplexMatrix<T>,
    v: &ComplexMatrix<T>,
) -> Result<ComplexMatrix<T>> {
    if a0.cols() != 1 || a0.rows() != y_ris.rows() || v.cols() != y_ris.cols() {
        return Err(Error::DimensionMismatch(format!(
            "Y_ris {:?}, a0 {:?}, V {:?}",
            y_ris.shape(),
            a0.shape(),
            v.shape()
        )));
    }
    let a0_energy = a0.frobenius_norm_sqr();
    if a0_energy == T::zero() {
        return Err(Error::InvalidArgument("a0 is zero".into()));
    }
    // Row vector b = a₀ᴴ·Y_ris/‖a₀‖², then γᴴ·V ≈ b in the LS sense.
    let b = a0.adjoint().matmul(y_ris)?.scale_real(T::one() / a0_energy);
    let ls = least_squares(&v.transpose(), &b.transpose())?;
    if ls.rank < v.rows() {
        warn!(
            "codebook V has rank {} < G = {}; using the minimum-norm solution",
            ls.rank,
            v.rows()
        );
    }
    Ok(ls.solution.conj())
}

fn gain_of<T: Real>(cfg: &ScenarioConfig) -> Complex<T> {
    let g = cfg.observation_gain();
    Complex::new(T::lit(g.re), T::lit(g.im))
}

/// Fills in ẑ, ĥ_d, γ̂ and Φ̂ once the direct-path support is fixed:
/// LS fit of the support columns to `y′`, then RIS isolation and γ LS.
/// `y` must already be in channel units.
pub fn estimate_with_support<T: Real>(
    y: &ComplexMatrix<T>,
    dictionary: &ComplexMatrix<T>,
    cb: &Codebook<T>,
    support: &[usize],
) -> Result<EstimationResult<T>> {
    let k = dictionary.cols() - 1;
    if let Some(&bad) = support.iter().find(|&&s| s == 0 || s > k) {
        return Err(Error::InvalidArgument(format!("support index {bad} outside 1..={k}")));
    }
    let y_prime = project_direct(y, cb)?;
    let mut z_bar_hat = ComplexMatrix::zeros(k, 1);
    if !support.is_empty() {
        let beta = solve_least_squares(&dictionary.select_columns(support), &y_prime)?;
        for (i, &s) in support.iter().enumerate() {
            z_bar_hat[(s - 1, 0)] = beta[(i, 0)];
        }
    }
    finish(y, dictionary, cb, z_bar_hat, support.to_vec())
}

fn finish<T: Real>(
    y: &ComplexMatrix<T>,
    dictionary: &ComplexMatrix<T>,
    cb: &Codebook<T>,
    z_bar_hat: ComplexMatrix<T>,
    support: Vec<usize>,
) -> Result<EstimationResult<T>> {
    let y_ris = remove_direct(y, dictionary, &z_bar_hat, cb, Complex::one())?;
    let a0 = dictionary.column(0);
    let gamma_hat = estimate_gamma(&y_ris, &a0, &cb.v())?;
    let phi_hat = ComplexMatrix::outer_adjoint(&a0, &gamma_hat);
    let h_d_hat = direct_from_sparse(dictionary, &z_bar_hat)?;
    Ok(EstimationResult {
        h_d_hat,
        phi_hat,
        z_bar_hat,
        support,
        gamma_hat,
        delta_hat: vec![T::zero(); dictionary.cols()],
    })
}

/// Structured estimator: project onto the direct path, recover ẑ by OMP over grid
/// columns `1..=K`, strip the direct contribution and solve for γ.
pub fn run_algorithm1<T: Real>(
    y: &ComplexMatrix<T>,
    dictionary: &ComplexMatrix<T>,
    cb: &Codebook<T>,
    cfg: &ScenarioConfig,
) -> Result<EstimationResult<T>> {
    if dictionary.rows() != y.rows() || dictionary.cols() < 1 {
        return Err(Error::DimensionMismatch(format!(
            "dictionary {:?} vs Y {:?}",
            dictionary.shape(),
            y.shape()
        )));
    }
    let y = y.scale(gain_of::<T>(cfg).inv());
    let y_prime = project_direct(&y, cb)?;
    let grid_cols: Vec<usize> = (1..dictionary.cols()).collect();
    let fit = omp(
        &y_prime,
        &dictionary.select_columns(&grid_cols),
        OmpOptions::exact(cfg.num_paths),
    )?;
    let support = fit.support.iter().map(|c| c + 1).collect();
    finish(&y, dictionary, cb, fit.z_hat, support)
}

/// Unstructured LS: `[ĥ_d Φ̂] = Y·Ṽ†/(√P·x)`. Returns `(ĥ_d, Φ̂)`.
pub fn ls_baseline<T: Real>(
    y: &ComplexMatrix<T>,
    cb: &Codebook<T>,
    cfg: &ScenarioConfig,
) -> Result<(ComplexMatrix<T>, ComplexMatrix<T>)> {
    let g = cb.num_groups();
    if cb.num_slots() < g + 1 {
        return Err(Error::InvalidArgument(format!("L = {} < G + 1", cb.num_slots())));
    }
    if y.cols() != cb.num_slots() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} slots, codebook {}",
            y.cols(),
            cb.num_slots()
        )));
    }
    let y = y.scale(gain_of::<T>(cfg).inv());
    let x = solve_least_squares(&cb.v_tilde().transpose(), &y.transpose())?.transpose();
    let cols: Vec<usize> = (1..=g).collect();
    Ok((x.column(0), x.select_columns(&cols)))
}

/// `‖estimate − truth‖_F² / ‖truth‖_F²`.
pub fn nmse<T: Real>(estimate: &ComplexMatrix<T>, truth: &ComplexMatrix<T>) -> Result<T> {
    let denom = truth.frobenius_norm_sqr();
    if denom == T::zero() {
        return Err(Error::InvalidArgument("NMSE undefined for a zero reference".into()));
    }
    Ok(estimate.sub(truth)?.frobenius_norm_sqr() / denom)
}

/// Estimation method identifiers used in sweeps and CSV files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Alg1,
    Alg1PerfectAoa,
    Ls,
    Nn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Alg1, Method::Alg1PerfectAoa, Method::Ls, Method::Nn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Alg1 => "alg1",
            Method::Alg1PerfectAoa => "alg1-perfect-aoa",
            Method::Ls => "ls",
            Method::Nn => "nn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Direct,
    Ris,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Direct, Target::Ris];

    pub fn name(self) -> &'static str {
        match self {
            Target::Direct => "direct",
            Target::Ris => "ris",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown target '{s}'")))
    }
}

/// One scored estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub power_dbm: f64,
    pub method: Method,
    pub target: Target,
    pub nmse: f64,
}

impl TrialRecord {
    pub const CSV_HEADER: &'static str = "trial,power_dbm,method,target,nmse";

    pub fn write_csv<W: Write>(records: &[TrialRecord], mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in records {
            writeln!(out, "{},{},{},{},{}", r.trial, r.power_dbm, r.method, r.target, r.nmse)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{noiseless_rx, sample_channel, synthesize_rx, Scenario};
    use crate::numerics::sample_cn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn noiseless_scenario() -> Scenario<f64> {
        Scenario::new(ScenarioConfig {
            noise_dbm: f64::NEG_INFINITY,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn projection_keeps_direct_path() {
        let sc = noiseless_scenario();
        let (real, truth) = sample_channel(&sc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let y = noiseless_rx(&sc, &real, &truth).unwrap();
        let yp = project_direct(&y, &sc.codebook).unwrap();
        let expect = truth.h_d.scale(sc.observation_gain());
        assert!(yp.sub(&expect).unwrap().max_abs() < 1e-10);
        let zero = ComplexMatrix::<f64>::zeros(16, 17);
        assert_eq!(project_direct(&zero, &sc.codebook).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn projected_noise_variance() {
        let cb = Codebook::<f64>::dft(16, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n0 = 2.0;
        let trials = 10_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let n = ComplexMatrix::from_vec(4, 17, sample_cn(n0, 68, &mut rng).unwrap()).unwrap();
            acc += project_direct(&n, &cb).unwrap().frobenius_norm_sqr() / 4.0;
        }
        let var = acc / trials as f64;
        let expect = n0 / 17.0;
        // 40 000 exponential samples: relative std 0.5%.
        assert!((var / expect - 1.0).abs() < 0.03, "{var} vs {expect}");
    }

    #[test]
    fn omp_one_sparse_exact() {
        let sc = noiseless_scenario();
        let dict = sc.dictionary.select_columns(&(1..=32).collect::<Vec<_>>());
        let y = dict.column(4).scale(c(3.0, 4.0));
        let r = omp(&y, &dict, OmpOptions::exact(1)).unwrap();
        assert_eq!(r.support, vec![4]);
        assert!((r.z_hat[(4, 0)] - c(3.0, 4.0)).norm() < 1e-10);
        // Extra iterations stop once the residual vanishes.
        let r3 = omp(&y, &dict, OmpOptions::exact(3)).unwrap();
        assert_eq!(r3.support, vec![4]);
    }

    #[test]
    fn omp_zero_input() {
        let sc = noiseless_scenario();
        let y = ComplexMatrix::zeros(16, 1);
        let r = omp(&y, &sc.dictionary, OmpOptions::exact(3)).unwrap();
        assert!(r.support.is_empty());
        assert_eq!(r.z_hat.max_abs(), 0.0);
    }

    #[test]
    fn omp_rejects_excess_sparsity() {
        let d = ComplexMatrix::<f64>::identity(4);
        let y = ComplexMatrix::zeros(4, 1);
        assert!(omp(&y, &d, OmpOptions::exact(5)).is_err());
        assert!(omp(&ComplexMatrix::zeros(3, 1), &d, OmpOptions::exact(1)).is_err());
    }

    #[test]
    fn omp_ties_pick_lowest_index() {
        let d = ComplexMatrix::<f64>::identity(3);
        let y = ComplexMatrix::column_vector(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0)]);
        let r = omp(&y, &d, OmpOptions::exact(1)).unwrap();
        assert_eq!(r.support, vec![1]);
    }

    #[test]
    fn omp_residual_threshold_stops_early() {
        let d = ComplexMatrix::<f64>::identity(3);
        let y = ComplexMatrix::column_vector(vec![c(2.0, 0.0), c(0.01, 0.0), c(0.0, 0.0)]);
        let opts = OmpOptions {
            sparsity: 3,
            residual_threshold: Some(0.1),
        };
        assert_eq!(omp(&y, &d, opts).unwrap().support, vec![0]);
    }

    #[test]
    fn remove_direct_cancels() {
        let sc = noiseless_scenario();
        let (real, truth) = sample_channel(&sc, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = noiseless_rx(&sc, &real, &truth).unwrap();
        let g = sc.observation_gain();
        let y_ris = remove_direct(&y, &sc.dictionary, &truth.z_bar, &sc.codebook, g).unwrap();
        let expect = truth.phi.matmul(&sc.codebook.v()).unwrap().scale(g);
        assert!(y_ris.sub(&expect).unwrap().max_abs() < 1e-10);
        let zero = ComplexMatrix::zeros(32, 1);
        assert_eq!(remove_direct(&y, &sc.dictionary, &zero, &sc.codebook, g).unwrap(), y);
    }

    #[test]
    fn gamma_round_trip_and_local_minimum() {
        let cb = Codebook::<f64>::dft(4, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a0 = ComplexMatrix::column_vector(sample_cn(1.0, 5, &mut rng).unwrap());
        let gamma = ComplexMatrix::column_vector(sample_cn(1.0, 4, &mut rng).unwrap());
        let v = cb.v();
        let y = ComplexMatrix::outer_adjoint(&a0, &gamma).matmul(&v).unwrap();
        let est = estimate_gamma(&y, &a0, &v).unwrap();
        assert!(est.sub(&gamma).unwrap().max_abs() < 1e-10);
        assert_eq!(
            estimate_gamma(&ComplexMatrix::zeros(5, 6), &a0, &v).unwrap().max_abs(),
            0.0
        );

        let noisy = y
            .add(&ComplexMatrix::from_vec(5, 6, sample_cn(0.1, 30, &mut rng).unwrap()).unwrap())
            .unwrap();
        let g_hat = estimate_gamma(&noisy, &a0, &v).unwrap();
        let objective = |g: &ComplexMatrix<f64>| {
            noisy
                .sub(&ComplexMatrix::outer_adjoint(&a0, g).matmul(&v).unwrap())
                .unwrap()
                .frobenius_norm_sqr()
        };
        let base = objective(&g_hat);
        for i in 0..4 {
            for step in [c(1e-4, 0.0), c(-1e-4, 0.0), c(0.0, 1e-4), c(0.0, -1e-4)] {
                let mut p = g_hat.clone();
                p[(i, 0)] += step;
                assert!(objective(&p) > base);
            }
        }
    }

    #[test]
    fn algorithm1_noiseless_exact() {
        let sc = noiseless_scenario();
        for seed in 0..10 {
            let (real, truth) = sample_channel(&sc, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let y = noiseless_rx(&sc, &real, &truth).unwrap();
            let est = run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap();
            assert!(est.support_matches(&real));
            assert!(nmse(&est.h_d_hat, &truth.h_d).unwrap() < 1e-8);
            assert!(nmse(&est.phi_hat, &truth.phi).unwrap() < 1e-8);
            assert_eq!(est.support.len(), 3);
        }
    }

    #[test]
    fn algorithm1_without_paths() {
        let sc = Scenario::<f64>::new(ScenarioConfig {
            num_paths: 0,
            noise_dbm: f64::NEG_INFINITY,
            ..Default::default()
        })
        .unwrap();
        let (real, truth) = sample_channel(&sc, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = noiseless_rx(&sc, &real, &truth).unwrap();
        let est = run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap();
        assert_eq!(est.h_d_hat.max_abs(), 0.0);
        assert!(nmse(&est.phi_hat, &truth.phi).unwrap() < 1e-20);
    }

    #[test]
    fn algorithm1_reproducible_with_noise() {
        let sc = Scenario::<f64>::new(ScenarioConfig::default()).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let (real, truth) = sample_channel(&sc, &mut rng).unwrap();
            let y = synthesize_rx(&sc, &real, &truth, &mut rng).unwrap();
            run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn algorithm1_scale_equivariance() {
        let sc = noiseless_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (real, truth) = sample_channel(&sc, &mut rng).unwrap();
        let noise = ComplexMatrix::from_vec(16, 17, sample_cn(1e-3, 16 * 17, &mut rng).unwrap()).unwrap();
        let y = noiseless_rx(&sc, &real, &truth).unwrap().add(&noise).unwrap();
        let s = c(-0.3, 1.7);
        let a = run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap();
        let b = run_algorithm1(&y.scale(s), &sc.dictionary, &sc.codebook, &sc.config).unwrap();
        assert_eq!(a.sorted_support(), b.sorted_support());
        assert!(b.z_bar_hat.sub(&a.z_bar_hat.scale(s)).unwrap().max_abs() < 1e-10);
        // Φ = a₀γᴴ scales by s, so γ̂ scales by conj(s).
        assert!(b.phi_hat.sub(&a.phi_hat.scale(s)).unwrap().max_abs() < 1e-10);
        assert!(b.gamma_hat.sub(&a.gamma_hat.scale(s.conj())).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn ls_noiseless_exact_and_shapes_match() {
        let sc = noiseless_scenario();
        let (real, truth) = sample_channel(&sc, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let y = noiseless_rx(&sc, &real, &truth).unwrap();
        let (h, phi) = ls_baseline(&y, &sc.codebook, &sc.config).unwrap();
        assert!(h.sub(&truth.h_d).unwrap().max_abs() < 1e-10);
        assert!(phi.sub(&truth.phi).unwrap().max_abs() < 1e-10);
        let est = run_algorithm1(&y, &sc.dictionary, &sc.codebook, &sc.config).unwrap();
        assert_eq!(h.shape(), est.h_d_hat.shape());
        assert_eq!(phi.shape(), est.phi_hat.shape());
    }

    #[test]
    fn ls_noise_propagation() {
        let cfg = ScenarioConfig {
            tx_power_dbm: 40.0,
            noise_dbm: 30.0,
            ..Default::default()
        };
        let cb = Codebook::<f64>::dft(16, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n0 = cfg.noise_variance();
        let p = 10.0;
        let trials = 10_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let n = ComplexMatrix::from_vec(16, 17, sample_cn(n0, 16 * 17, &mut rng).unwrap()).unwrap();
            acc += ls_baseline(&n, &cb, &cfg).unwrap().0.frobenius_norm_sqr();
        }
        let expect = 16.0 * n0 / (17.0 * p);
        assert!((acc / trials as f64 / expect - 1.0).abs() < 0.03);
    }

    #[test]
    fn nmse_basic_values() {
        let t = ComplexMatrix::column_vector(vec![c(1.0, 2.0), c(-3.0, 0.5)]);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&ComplexMatrix::zeros(2, 1), &t).unwrap(), 1.0);
        assert!((nmse(&t.scale_real(2.0), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&t, &ComplexMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn method_and_target_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        for t in Target::ALL {
            assert_eq!(t.name().parse::<Target>().unwrap(), t);
        }
        assert!("omp".parse::<Method>().is_err());
    }

    #[test]
    fn trial_records_to_csv() {
        let rows = vec![TrialRecord {
            trial: 3,
            power_dbm: -5.0,
            method: Method::Ls,
            target: Target::Ris,
            nmse: 0.25,
        }];
        let mut buf = Vec::new();
        TrialRecord::write_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "trial,power_dbm,method,target,nmse\n3,-5,ls,ris,0.25\n"
        );
    }
}
