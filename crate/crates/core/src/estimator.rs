//! Subspace estimation of subbands, spatial phases, carriers and DOAs.
//!
//! Pipeline: sample covariance → eigen-decomposition → model order (MDL, AIC or
//! pinned) → noise subspace → per-subband MUSIC over `a(φ) ⊗ B_l` → carrier
//! refinement on a spatially filtered stream → DOA from `(φ̂, f̂)`.
//!
//! Each estimate is born inside one subband, so phase and carrier need no pairing.

use std::f64::consts::PI;

use nalgebra::DVector;
use rustfft::FftPlanner;

use crate::linalg::HermitianEigen;
use crate::model::{doa_from_phase, manifold_vector, modulation_column, ArrayGeometry, SamplingConfig};
use crate::{CMatrix, Error, Result, C64};

/// `(1/T) Y Yᴴ`, symmetrised.
pub fn sample_covariance(snapshots: &CMatrix) -> CMatrix {
    let t = snapshots.ncols().max(1) as f64;
    let r = snapshots * snapshots.adjoint() / C64::new(t, 0.0);
    (&r + r.adjoint()) * C64::new(0.5, 0.0)
}

/// Information criterion used to pick the signal-subspace dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderCriterion {
    Mdl,
    Aic,
}

/// Eigenvalues below this fraction of the largest are clamped before taking logs.
const EIGEN_FLOOR: f64 = 1e-12;

/// Criterion value for every candidate order `k = 0..p-1`.
///
/// With `g` and `a` the geometric and arithmetic means of the `p - k` smallest
/// eigenvalues, `MDL(k) = -T (p-k) ln(g/a) + k(2p-k) ln(T) / 2` and
/// `AIC(k) = -2T (p-k) ln(g/a) + 2k(2p-k)`.
pub fn information_criterion(
    eigenvalues: &[f64],
    snapshots: usize,
    criterion: OrderCriterion,
) -> Result<Vec<f64>> {
    let p = eigenvalues.len();
    if p < 2 {
        return Err(Error::invalid(format!(
            "model order selection needs at least 2 eigenvalues, got {p}"
        )));
    }
    if snapshots == 0 {
        return Err(Error::invalid("snapshot count must be at least 1"));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("eigenvalues must be finite"));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("eigenvalues must be sorted in descending order"));
    }
    let floor = (eigenvalues[0] * EIGEN_FLOOR).max(f64::MIN_POSITIVE);
    let logs: Vec<f64> = eigenvalues.iter().map(|&v| v.max(floor).ln()).collect();
    let clamped: Vec<f64> = eigenvalues.iter().map(|&v| v.max(floor)).collect();
    let t = snapshots as f64;
    Ok((0..p)
        .map(|k| {
            let n = (p - k) as f64;
            let log_g = logs[k..].iter().sum::<f64>() / n;
            let log_a = (clamped[k..].iter().sum::<f64>() / n).ln();
            // ln(g/a) <= 0; clamp the rounding that can push it above
            let fit = (log_g - log_a).min(0.0);
            let free = (k * (2 * p - k)) as f64;
            match criterion {
                OrderCriterion::Mdl => -t * n * fit + 0.5 * free * t.ln(),
                OrderCriterion::Aic => -2.0 * t * n * fit + 2.0 * free,
            }
        })
        .collect())
}

/// Number of sources minimising the chosen criterion.
pub fn estimate_source_count(
    eigenvalues: &[f64],
    snapshots: usize,
    criterion: OrderCriterion,
) -> Result<usize> {
    let scores = information_criterion(eigenvalues, snapshots, criterion)?;
    Ok(scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap())
}

/// Orthonormal basis of the eigenvectors of `r` outside its `signal_dim` largest eigenvalues.
pub fn noise_subspace(r: &CMatrix, signal_dim: usize) -> Result<CMatrix> {
    HermitianEigen::new(r)?.noise_subspace(signal_dim)
}

/// Uniform phase grid over `[-π d, π d]` plus the refinement tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    phis: Vec<f64>,
    refine_tol: f64,
}

impl SearchGrid {
    pub const DEFAULT_POINTS: usize = 4096;
    pub const DEFAULT_REFINE_TOL: f64 = 1e-10;

    pub fn new(geometry: &ArrayGeometry, points: usize, refine_tol: f64) -> Result<Self> {
        if points < 3 {
            return Err(Error::invalid(format!("phase grid needs at least 3 points, got {points}")));
        }
        if !(refine_tol.is_finite() && refine_tol > 0.0) {
            return Err(Error::invalid(format!("refinement tolerance must be positive, got {refine_tol}")));
        }
        let half = PI * geometry.spacing();
        let step = 2.0 * half / (points - 1) as f64;
        let max_step = PI / (10.0 * geometry.aperture() as f64);
        if step > max_step {
            return Err(Error::invalid(format!(
                "grid step {step:.3e} exceeds π/(10·{}) = {max_step:.3e}; use more points",
                geometry.aperture()
            )));
        }
        let phis = (0..points).map(|i| -half + step * i as f64).collect();
        Ok(Self { phis, refine_tol })
    }

    pub fn with_defaults(geometry: &ArrayGeometry) -> Result<Self> {
        Self::new(geometry, Self::DEFAULT_POINTS, Self::DEFAULT_REFINE_TOL)
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn step(&self) -> f64 {
        self.phis[1] - self.phis[0]
    }

    pub fn refine_tol(&self) -> f64 {
        self.refine_tol
    }
}

/// MUSIC denominator `‖Enᴴ (a(φ) ⊗ B_l)‖²` for one subband.
///
/// The grid scan uses the lag form `c_0 + 2 Re Σ_δ c_δ e^{-jφδ}` over the array
/// coarray; refinement uses the direct norm, which keeps its relative accuracy
/// near the nulls.
struct SubbandDenominator {
    /// `Enᴴ (I_M ⊗ B_l)`, one column per sensor.
    reduced: CMatrix,
    positions: Vec<f64>,
    lag0: f64,
    lags: Vec<(u32, C64)>,
    max_lag: u32,
    manifold_norm2: f64,
}

impl SubbandDenominator {
    fn new(noise_basis: &CMatrix, geometry: &ArrayGeometry, sampling: &SamplingConfig, subband: usize) -> Self {
        let b = modulation_column(sampling, subband);
        let p = b.len();
        let m = geometry.sensors();
        let dim = noise_basis.ncols();
        let reduced = CMatrix::from_fn(dim, m, |j, s| {
            (0..p).map(|q| noise_basis[(s * p + q, j)].conj() * b[q]).sum()
        });
        let q = reduced.adjoint() * &reduced;
        let pos = geometry.positions();
        let max_lag = geometry.aperture();
        let mut coef = vec![C64::new(0.0, 0.0); max_lag as usize + 1];
        for i in 0..m {
            for k in i + 1..m {
                coef[(pos[k] - pos[i]) as usize] += q[(i, k)];
            }
        }
        let lags = coef
            .into_iter()
            .enumerate()
            .skip(1)
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(d, c)| (d as u32, c))
            .collect();
        let b_norm2: f64 = b.iter().map(|v| v.norm_sqr()).sum();
        Self {
            reduced,
            positions: pos.iter().map(|&v| v as f64).collect(),
            lag0: (0..m).map(|i| q[(i, i)].re).sum(),
            lags,
            max_lag,
            manifold_norm2: m as f64 * b_norm2,
        }
    }

    fn scan(&self, phi: f64) -> f64 {
        let z = C64::from_polar(1.0, -phi);
        let mut powers = Vec::with_capacity(self.max_lag as usize + 1);
        let mut acc = C64::new(1.0, 0.0);
        for _ in 0..=self.max_lag {
            powers.push(acc);
            acc *= z;
        }
        let cross: f64 = self.lags.iter().map(|(d, c)| (c * powers[*d as usize]).re).sum();
        self.lag0 + 2.0 * cross
    }

    fn direct(&self, phi: f64) -> f64 {
        let a = DVector::from_iterator(
            self.positions.len(),
            self.positions.iter().map(|&p| C64::from_polar(1.0, -phi * p)),
        );
        (&self.reduced * a).norm_squared()
    }

    fn spectrum(&self, den: f64) -> f64 {
        self.manifold_norm2 / den.max(1e-300)
    }
}

/// Normalised MUSIC pseudo-spectrum `1 / ‖Enᴴ u‖²`, `u = (a(φ) ⊗ B_l) / ‖a(φ) ⊗ B_l‖`.
pub fn pseudo_spectrum(
    noise_basis: &CMatrix,
    geometry: &ArrayGeometry,
    sampling: &SamplingConfig,
    subband: usize,
    phis: &[f64],
) -> Vec<f64> {
    let den = SubbandDenominator::new(noise_basis, geometry, sampling, subband);
    phis.iter().map(|&phi| den.spectrum(den.direct(phi))).collect()
}

/// A refined local maximum of the pseudo-spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub subband: usize,
    pub phi: f64,
    pub value: f64,
    /// Whether the grid peak cleared the detection threshold.
    pub detected: bool,
}

/// Which grid maxima [`music_search`] refines and returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakSelection {
    /// A grid maximum is detected when it is at least this multiple of the
    /// subband's median pseudo-spectrum value.
    pub threshold_ratio: f64,
    /// If fewer peaks are detected, the largest undetected maxima (across all
    /// subbands) are added until this many are returned.
    pub min_peaks: usize,
}

impl Default for PeakSelection {
    fn default() -> Self {
        Self {
            threshold_ratio: 10.0,
            min_peaks: 0,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Minimise `f` on `[lo, hi]` by golden-section search down to `tol`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Per-subband MUSIC search over `a(φ) ⊗ B_l`.
///
/// Grid maxima are refined by parabolic interpolation of the denominator and a
/// bounded golden-section search between the neighbouring grid points. Refined
/// peaks in one subband closer than `refine_tol` collapse onto the larger one.
/// Output is sorted by `(subband, φ)`.
pub fn music_search(
    noise_basis: &CMatrix,
    geometry: &ArrayGeometry,
    sampling: &SamplingConfig,
    grid: &SearchGrid,
    selection: &PeakSelection,
) -> Result<Vec<Peak>> {
    let expected_rows = geometry.sensors() * sampling.branches();
    if noise_basis.nrows() != expected_rows {
        return Err(Error::invalid(format!(
            "noise basis has {} rows, expected M·P = {expected_rows}",
            noise_basis.nrows()
        )));
    }
    let phis = grid.phis();
    let n = phis.len();
    let dens: Vec<SubbandDenominator> = (0..sampling.reduction())
        .map(|l| SubbandDenominator::new(noise_basis, geometry, sampling, l))
        .collect();

    // (subband, grid index, grid value, detected)
    let mut candidates = Vec::new();
    let mut scans = Vec::with_capacity(dens.len());
    for (l, den) in dens.iter().enumerate() {
        let scan: Vec<f64> = phis.iter().map(|&phi| den.scan(phi)).collect();
        let spec: Vec<f64> = scan.iter().map(|&d| den.spectrum(d)).collect();
        let threshold = selection.threshold_ratio * median(&spec);
        for i in 0..n {
            let left = i == 0 || spec[i] > spec[i - 1];
            let right = i + 1 == n || spec[i] >= spec[i + 1];
            if left && right {
                candidates.push((l, i, spec[i], spec[i] >= threshold));
            }
        }
        scans.push(scan);
    }

    let mut chosen: Vec<_> = candidates.iter().filter(|c| c.3).cloned().collect();
    if chosen.len() < selection.min_peaks {
        let mut rest: Vec<_> = candidates.iter().filter(|c| !c.3).cloned().collect();
        rest.sort_by(|a, b| b.2.total_cmp(&a.2));
        chosen.extend(rest.into_iter().take(selection.min_peaks - chosen.len()));
    }

    let step = grid.step();
    let mut peaks: Vec<Peak> = chosen
        .into_iter()
        .map(|(l, i, _, detected)| {
            let den = &dens[l];
            let lo = phis[i.saturating_sub(1)];
            let hi = phis[(i + 1).min(n - 1)];
            let f = |phi: f64| den.direct(phi);
            let (mut best_phi, mut best_den) = golden_section(f, lo, hi, grid.refine_tol());
            if i > 0 && i + 1 < n {
                let (ym, y0, yp) = (scans[l][i - 1], scans[l][i], scans[l][i + 1]);
                let curv = ym - 2.0 * y0 + yp;
                if curv > 0.0 {
                    let vertex = phis[i] + 0.5 * step * (ym - yp) / curv;
                    if (lo..=hi).contains(&vertex) {
                        let d = den.direct(vertex);
                        if d < best_den {
                            best_phi = vertex;
                            best_den = d;
                        }
                    }
                }
            }
            Peak {
                subband: l,
                phi: best_phi,
                value: den.spectrum(best_den),
                detected,
            }
        })
        .collect();

    peaks.sort_by(|a, b| a.subband.cmp(&b.subband).then(a.phi.total_cmp(&b.phi)));
    let mut deduped: Vec<Peak> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match deduped.last_mut() {
            Some(last) if last.subband == p.subband && (p.phi - last.phi).abs() <= grid.refine_tol() => {
                if p.value > last.value {
                    *last = p;
                }
            }
            _ => deduped.push(p),
        }
    }
    Ok(deduped)
}

/// Carrier estimate for a source found at `(subband, phi)`.
///
/// The snapshot stream is spatially filtered with the unit-gain response to
/// `a(φ) ⊗ B_l` that nulls the `interferers` (other phases in the same subband);
/// with no interferers this is the matched filter `ĝ / ‖ĝ‖²`. The peak of the
/// `T`-point periodogram is refined by a golden-section search of the
/// periodogram between the neighbouring bins, giving an offset in `[0, f_sub)`
/// that is added to the subband's lower edge.
pub fn fine_frequency(
    snapshots: &CMatrix,
    subband: usize,
    phi: f64,
    interferers: &[f64],
    geometry: &ArrayGeometry,
    sampling: &SamplingConfig,
) -> Result<f64> {
    let t = snapshots.ncols();
    if t < 8 {
        return Err(Error::InsufficientData(format!(
            "carrier refinement needs at least 8 snapshots, got {t}"
        )));
    }
    if subband >= sampling.reduction() {
        return Err(Error::invalid(format!("subband {subband} out of range")));
    }
    let weights = spatial_filter(phi, interferers, geometry, sampling, subband);
    let z: Vec<C64> = (0..t).map(|n| weights.dotc(&snapshots.column(n))).collect();
    let mut spectrum = z.clone();
    FftPlanner::<f64>::new().plan_fft_forward(t).process(&mut spectrum);
    let k = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .map(|(k, _)| k)
        .unwrap();
    // Periodogram peak between the neighbouring bins, in bins.
    let neg_power = |bin: f64| {
        let w = -2.0 * PI * bin / t as f64;
        let acc: C64 = z.iter().enumerate().map(|(n, v)| v * C64::from_polar(1.0, w * n as f64)).sum();
        -acc.norm_sqr()
    };
    let (peak, _) = golden_section(neg_power, k as f64 - 1.0, k as f64 + 1.0, 1e-9);

    let f_sub = sampling.sub_rate_hz();
    let mut offset = peak * f_sub / t as f64;
    if offset < 0.0 {
        offset += f_sub;
    }
    if offset >= f_sub * (1.0 - 1e-12) {
        offset = 0.0;
    }
    Ok(subband as f64 * f_sub + offset)
}

fn spatial_filter(
    phi: f64,
    interferers: &[f64],
    geometry: &ArrayGeometry,
    sampling: &SamplingConfig,
    subband: usize,
) -> DVector<C64> {
    let target = manifold_vector(geometry, sampling, subband, phi);
    let matched = || target.clone() / C64::new(target.norm_squared(), 0.0);
    if interferers.is_empty() {
        return matched();
    }
    let mut cols = vec![target.clone()];
    cols.extend(interferers.iter().map(|&p| manifold_vector(geometry, sampling, subband, p)));
    let g = CMatrix::from_columns(&cols);
    let gram = g.adjoint() * &g;
    let mut e0 = DVector::zeros(cols.len());
    e0[0] = C64::new(1.0, 0.0);
    match gram.lu().solve(&e0) {
        Some(x) if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => {
            let w = &g * x;
            let gain = w.dotc(&target);
            if gain.norm() > 1e-6 {
                w
            } else {
                matched()
            }
        }
        _ => matched(),
    }
}

/// How many sources to look for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceCount {
    Mdl,
    Aic,
    Known(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub source_count: SourceCount,
    pub grid_points: usize,
    pub refine_tol: f64,
    pub threshold_ratio: f64,
    /// Refine carriers and convert phases to DOAs (needs tone data).
    pub estimate_frequency: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            source_count: SourceCount::Mdl,
            grid_points: SearchGrid::DEFAULT_POINTS,
            refine_tol: SearchGrid::DEFAULT_REFINE_TOL,
            threshold_ratio: 10.0,
            estimate_frequency: true,
        }
    }
}

/// One recovered source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    /// Zero-based subband.
    pub subband: usize,
    pub phi: f64,
    pub freq_hz: Option<f64>,
    /// `None` when carriers are not estimated or `(φ̂, f̂)` maps outside `|sin θ| ≤ 1`.
    pub theta_deg: Option<f64>,
    pub peak: f64,
}

#[derive(Debug, Clone)]
pub struct EstimateSet {
    pub estimates: Vec<Estimate>,
    /// `K̂`, pinned or selected by the information criterion.
    pub source_count: usize,
    /// Grid peaks that cleared the detection threshold.
    pub detected_peaks: usize,
    /// Set when the detected peak count differs from `K̂`.
    pub mismatch: bool,
    pub eigenvalues: Vec<f64>,
}

/// Full pipeline from `MP × T` snapshots to sorted estimates.
pub fn estimate_all(
    snapshots: &CMatrix,
    geometry: &ArrayGeometry,
    sampling: &SamplingConfig,
    config: &EstimatorConfig,
) -> Result<EstimateSet> {
    let dim = geometry.sensors() * sampling.branches();
    if snapshots.nrows() != dim {
        return Err(Error::invalid(format!(
            "snapshots have {} rows, expected M·P = {dim}",
            snapshots.nrows()
        )));
    }
    let t = snapshots.ncols();
    if t == 0 {
        return Err(Error::InsufficientData("no snapshots".into()));
    }
    let eig = HermitianEigen::new(&sample_covariance(snapshots))?;
    let k_hat = match config.source_count {
        SourceCount::Mdl => estimate_source_count(&eig.values, t, OrderCriterion::Mdl)?,
        SourceCount::Aic => estimate_source_count(&eig.values, t, OrderCriterion::Aic)?,
        SourceCount::Known(k) => k,
    };
    if k_hat >= dim {
        return Err(Error::invalid(format!(
            "{k_hat} sources leave no noise subspace in dimension {dim}"
        )));
    }
    let mut result = EstimateSet {
        estimates: Vec::new(),
        source_count: k_hat,
        detected_peaks: 0,
        mismatch: false,
        eigenvalues: eig.values.clone(),
    };
    if k_hat == 0 {
        return Ok(result);
    }

    let noise = eig.noise_subspace(k_hat)?;
    let grid = SearchGrid::new(geometry, config.grid_points, config.refine_tol)?;
    // A subband crowded with sources lifts its median, so the threshold alone
    // can miss every peak there; K̂ decides how many maxima are kept.
    let selection = PeakSelection {
        threshold_ratio: config.threshold_ratio,
        min_peaks: k_hat,
    };
    let mut peaks = music_search(&noise, geometry, sampling, &grid, &selection)?;
    result.detected_peaks = peaks.iter().filter(|p| p.detected).count();
    result.mismatch = result.detected_peaks != k_hat;

    peaks.sort_by(|a, b| b.detected.cmp(&a.detected).then(b.value.total_cmp(&a.value)));
    peaks.truncate(k_hat);
    peaks.sort_by(|a, b| a.subband.cmp(&b.subband).then(a.phi.total_cmp(&b.phi)));

    for peak in &peaks {
        let (freq_hz, theta_deg) = if config.estimate_frequency {
            let others: Vec<f64> = peaks
                .iter()
                .filter(|q| q.subband == peak.subband && q.phi != peak.phi)
                .map(|q| q.phi)
                .collect();
            let f = fine_frequency(snapshots, peak.subband, peak.phi, &others, geometry, sampling)?;
            let theta = doa_from_phase(peak.phi, f, geometry.spacing(), sampling.nyquist_hz()).ok();
            (Some(f), theta)
        } else {
            (None, None)
        };
        result.estimates.push(Estimate {
            subband: peak.subband,
            phi: peak.phi,
            freq_hz,
            theta_deg,
            peak: peak.value,
        });
    }
    Ok(result)
}
