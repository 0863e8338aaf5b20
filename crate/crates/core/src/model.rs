//! Deterministic matrices of the time-space union model.
//!
//! Every sensor of an `M`-element array feeds `P` multicoset branches running at
//! `f_sub = f_N / L`. Stacking the branch spectra of all sensors gives
//!
//! ```text
//! Y(f) = G S̄(f) + (I_M ⊗ B) N̄(f),    G = [A_1 ⊗ B_1, …, A_L ⊗ B_L]
//! ```
//!
//! where `A_l` holds the steering vectors of the sources whose carrier falls in
//! subband `l` and `B_l` is column `l` of the `P × L` modulation matrix. Subband
//! indices are zero-based in this crate; user-facing outputs add one.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DVector;

use crate::linalg;
use crate::{CMatrix, Error, Result, C64};

pub use crate::linalg::numerical_rank;

/// Default relative tolerance for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Seven-sensor minimum redundancy array, positions in units of the base spacing.
pub const MRA7_POSITIONS: [u32; 7] = [0, 1, 4, 10, 16, 22, 28];

/// Linear array with sensors at integer multiples of a base spacing `d`
/// (`d` in half-wavelengths at the Nyquist frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<u32>,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<u32>, spacing: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::invalid(format!(
                "array needs at least 2 sensors, got {}",
                positions.len()
            )));
        }
        if positions[0] != 0 {
            return Err(Error::invalid(format!(
                "first sensor position must be 0, got {}",
                positions[0]
            )));
        }
        if let Some(w) = positions.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "sensor positions must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { positions, spacing })
    }

    /// Uniform linear array of `sensors` elements at half-wavelength spacing.
    pub fn ula(sensors: usize) -> Result<Self> {
        Self::new((0..sensors as u32).collect(), 1.0)
    }

    /// The 7-element minimum redundancy array `[0, 1, 4, 10, 16, 22, 28]`.
    pub fn mra7() -> Self {
        Self::new(MRA7_POSITIONS.to_vec(), 1.0).expect("MRA positions are valid")
    }

    pub fn sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Largest sensor position, in units of `d`.
    pub fn aperture(&self) -> u32 {
        *self.positions.last().unwrap()
    }
}

/// Multicoset sampling pattern shared by every sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    nyquist_hz: f64,
    reduction: usize,
    cosets: Vec<usize>,
}

impl SamplingConfig {
    /// `reduction` is `L`; `cosets` is the pattern `C`, one offset per branch.
    pub fn new(nyquist_hz: f64, reduction: usize, cosets: Vec<usize>) -> Result<Self> {
        if !(nyquist_hz.is_finite() && nyquist_hz > 0.0) {
            return Err(Error::invalid(format!(
                "Nyquist rate must be positive, got {nyquist_hz}"
            )));
        }
        if reduction == 0 {
            return Err(Error::invalid("reduction factor L must be at least 1"));
        }
        if cosets.is_empty() || cosets.len() > reduction {
            return Err(Error::invalid(format!(
                "branch count P = {} must lie in [1, L = {reduction}]",
                cosets.len()
            )));
        }
        let mut seen = vec![false; reduction];
        for &c in &cosets {
            if c >= reduction {
                return Err(Error::invalid(format!("coset offset {c} not in [0, {reduction})")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::invalid(format!("coset offset {c} repeated")));
            }
        }
        Ok(Self {
            nyquist_hz,
            reduction,
            cosets,
        })
    }

    /// `P = L` branches with the pattern `C = [0, 1, …, L-1]`.
    pub fn full(nyquist_hz: f64, reduction: usize) -> Result<Self> {
        Self::new(nyquist_hz, reduction, (0..reduction).collect())
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.nyquist_hz
    }

    /// `L`, also the number of subbands.
    pub fn reduction(&self) -> usize {
        self.reduction
    }

    /// `P`.
    pub fn branches(&self) -> usize {
        self.cosets.len()
    }

    pub fn cosets(&self) -> &[usize] {
        &self.cosets
    }

    pub fn sub_rate_hz(&self) -> f64 {
        self.nyquist_hz / self.reduction as f64
    }

    pub fn nyquist_interval(&self) -> f64 {
        1.0 / self.nyquist_hz
    }

    /// Zero-based subband holding `freq_hz`, or `None` outside `[0, f_N)`.
    pub fn subband_of(&self, freq_hz: f64) -> Option<usize> {
        if !(freq_hz >= 0.0 && freq_hz < self.nyquist_hz) {
            return None;
        }
        let l = (freq_hz / self.sub_rate_hz()).floor() as usize;
        Some(l.min(self.reduction - 1))
    }
}

/// A narrowband far-field source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub theta_deg: f64,
    pub freq_hz: f64,
    pub power: f64,
}

impl SourceSpec {
    pub fn new(theta_deg: f64, freq_hz: f64, power: f64) -> Self {
        Self {
            theta_deg,
            freq_hz,
            power,
        }
    }
}

/// Spatial phase `π d sin(θ) f / f_N` in radians.
pub fn spatial_phase(theta_deg: f64, freq_hz: f64, spacing: f64, nyquist_hz: f64) -> Result<f64> {
    if ![theta_deg, freq_hz, spacing, nyquist_hz].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("spatial phase inputs must be finite"));
    }
    if nyquist_hz <= 0.0 {
        return Err(Error::invalid(format!("Nyquist rate must be positive, got {nyquist_hz}")));
    }
    if theta_deg.abs() >= 90.0 {
        return Err(Error::invalid(format!("DOA {theta_deg}° not in (-90°, 90°)")));
    }
    Ok(PI * spacing * theta_deg.to_radians().sin() * freq_hz / nyquist_hz)
}

/// Inverse of [`spatial_phase`]: the DOA in degrees that produces `phi` at carrier `freq_hz`.
pub fn doa_from_phase(phi: f64, freq_hz: f64, spacing: f64, nyquist_hz: f64) -> Result<f64> {
    if ![phi, freq_hz, spacing, nyquist_hz].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("DOA inversion inputs must be finite"));
    }
    if freq_hz == 0.0 || spacing <= 0.0 || nyquist_hz <= 0.0 {
        return Err(Error::invalid(
            "DOA inversion needs a non-zero carrier and positive spacing and rate",
        ));
    }
    let s = phi * nyquist_hz / (PI * spacing * freq_hz);
    if s.abs() > 1.0 {
        return Err(Error::OutOfRange(format!(
            "phase {phi} at {freq_hz} Hz needs sin(θ) = {s}"
        )));
    }
    Ok(s.asin().to_degrees())
}

/// Steering vector `exp(-j φ p_m)` over the sensor positions.
pub fn steering_vector(geometry: &ArrayGeometry, phi: f64) -> Vec<C64> {
    geometry
        .positions()
        .iter()
        .map(|&p| C64::from_polar(1.0, -phi * p as f64))
        .collect()
}

/// `M × K` steering matrix, one column per phase.
pub fn steering_matrix(geometry: &ArrayGeometry, phases: &[f64]) -> CMatrix {
    let m = geometry.sensors();
    let mut a = CMatrix::zeros(m, phases.len());
    for (k, &phi) in phases.iter().enumerate() {
        for (i, v) in steering_vector(geometry, phi).into_iter().enumerate() {
            a[(i, k)] = v;
        }
    }
    a
}

/// `P × L` modulation matrix `B_il = exp(j 2π c_i l / L) / √L` with zero-based `l`.
pub fn modulation_matrix(sampling: &SamplingConfig) -> CMatrix {
    let l_count = sampling.reduction();
    let scale = 1.0 / (l_count as f64).sqrt();
    CMatrix::from_fn(sampling.branches(), l_count, |i, l| {
        let c = sampling.cosets()[i];
        // reduce the exponent first so large L keeps full precision
        let e = (c * l) % l_count;
        C64::from_polar(scale, 2.0 * PI * e as f64 / l_count as f64)
    })
}

/// Column `subband` of `B`.
pub fn modulation_column(sampling: &SamplingConfig, subband: usize) -> Vec<C64> {
    let l_count = sampling.reduction();
    let scale = 1.0 / (l_count as f64).sqrt();
    sampling
        .cosets()
        .iter()
        .map(|&c| C64::from_polar(scale, 2.0 * PI * ((c * subband) % l_count) as f64 / l_count as f64))
        .collect()
}

/// Manifold vector `a(φ) ⊗ B_l`.
pub fn manifold_vector(
    geometry: &ArrayGeometry,
    sampling: &SamplingConfig,
    subband: usize,
    phi: f64,
) -> DVector<C64> {
    linalg::kron_vec(
        &steering_vector(geometry, phi),
        &modulation_column(sampling, subband),
    )
}

/// Sources, array, sampling pattern, noise level and snapshot count.
///
/// Sources are stored sorted by subband, then by spatial phase; every matrix
/// built from a scenario uses that column order.
#[derive(Debug, Clone)]
pub struct Scenario {
    geometry: ArrayGeometry,
    sampling: SamplingConfig,
    sources: Vec<SourceSpec>,
    subbands: Vec<usize>,
    phases: Vec<f64>,
    sigma2: f64,
    snapshots: usize,
}

impl Scenario {
    pub fn new(
        geometry: ArrayGeometry,
        sampling: SamplingConfig,
        sources: Vec<SourceSpec>,
        sigma2: f64,
        snapshots: usize,
    ) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::invalid(format!("noise power must be >= 0, got {sigma2}")));
        }
        if snapshots == 0 {
            return Err(Error::invalid("snapshot count must be at least 1"));
        }
        let mut tagged = Vec::with_capacity(sources.len());
        for (i, s) in sources.into_iter().enumerate() {
            if !(s.power.is_finite() && s.power > 0.0) {
                return Err(Error::invalid(format!("source {i}: power must be positive, got {}", s.power)));
            }
            let subband = sampling.subband_of(s.freq_hz).ok_or_else(|| {
                Error::invalid(format!(
                    "source {i}: carrier {} Hz not in [0, {})",
                    s.freq_hz,
                    sampling.nyquist_hz()
                ))
            })?;
            let phi = spatial_phase(s.theta_deg, s.freq_hz, geometry.spacing(), sampling.nyquist_hz())
                .map_err(|e| Error::invalid(format!("source {i}: {e}")))?;
            tagged.push((subband, phi, s));
        }
        tagged.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(Self {
            geometry,
            sampling,
            subbands: tagged.iter().map(|t| t.0).collect(),
            phases: tagged.iter().map(|t| t.1).collect(),
            sources: tagged.into_iter().map(|t| t.2).collect(),
            sigma2,
            snapshots,
        })
    }

    /// Like [`Scenario::new`], additionally asserting identifiable mode.
    pub fn identifiable(
        geometry: ArrayGeometry,
        sampling: SamplingConfig,
        sources: Vec<SourceSpec>,
        sigma2: f64,
        snapshots: usize,
    ) -> Result<Self> {
        let s = Self::new(geometry, sampling, sources, sigma2, snapshots)?;
        s.check_identifiable()?;
        Ok(s)
    }

    /// Identifiable mode: `P = L`, at most `M - 1` sources per subband and
    /// pairwise distinct phases inside each subband. Together these give
    /// `rank(G) = K ≤ (M - 1) L`.
    pub fn check_identifiable(&self) -> Result<()> {
        let m = self.geometry.sensors();
        let l_count = self.sampling.reduction();
        if self.sampling.branches() != l_count {
            return Err(Error::invalid(format!(
                "identifiable mode needs P = L, got P = {} and L = {l_count}",
                self.sampling.branches()
            )));
        }
        let bound = (m - 1) * l_count;
        if self.num_sources() > bound {
            return Err(Error::invalid(format!(
                "{} sources exceed the identifiable maximum (M-1)L = {bound}",
                self.num_sources()
            )));
        }
        for l in 0..l_count {
            let range = self.subband_range(l);
            if range.len() > m - 1 {
                return Err(Error::invalid(format!(
                    "subband {} holds {} sources, at most M-1 = {} allowed",
                    l + 1,
                    range.len(),
                    m - 1
                )));
            }
            let phases = &self.phases[range];
            if phases.windows(2).any(|w| (w[1] - w[0]).abs() <= 1e-12) {
                return Err(Error::invalid(format!(
                    "subband {} holds two sources with the same spatial phase",
                    l + 1
                )));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }

    pub fn sources(&self) -> &[SourceSpec] {
        &self.sources
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Zero-based subband of each source.
    pub fn subbands(&self) -> &[usize] {
        &self.subbands
    }

    /// Spatial phase of each source.
    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    /// Source indices belonging to `subband` (contiguous thanks to the ordering).
    pub fn subband_range(&self, subband: usize) -> Range<usize> {
        let start = self.subbands.partition_point(|&l| l < subband);
        let end = self.subbands.partition_point(|&l| l <= subband);
        start..end
    }

    /// `K_l` for every subband.
    pub fn subband_counts(&self) -> Vec<usize> {
        (0..self.sampling.reduction())
            .map(|l| self.subband_range(l).len())
            .collect()
    }

    /// Carrier offset of each source within its subband, `f_k - l_k f_sub`.
    pub fn baseband_offsets(&self) -> Vec<f64> {
        let f_sub = self.sampling.sub_rate_hz();
        self.sources
            .iter()
            .zip(&self.subbands)
            .map(|(s, &l)| s.freq_hz - l as f64 * f_sub)
            .collect()
    }

    pub fn with_snapshots(&self, snapshots: usize) -> Result<Self> {
        Self::new(
            self.geometry.clone(),
            self.sampling.clone(),
            self.sources.clone(),
            self.sigma2,
            snapshots,
        )
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(
            self.geometry.clone(),
            self.sampling.clone(),
            self.sources.clone(),
            sigma2,
            self.snapshots,
        )
    }

    /// Same array, sampling and noise with a different source list.
    pub fn with_sources(&self, sources: Vec<SourceSpec>) -> Result<Self> {
        Self::new(
            self.geometry.clone(),
            self.sampling.clone(),
            sources,
            self.sigma2,
            self.snapshots,
        )
    }

    pub fn with_geometry(&self, geometry: ArrayGeometry) -> Result<Self> {
        Self::new(
            geometry,
            self.sampling.clone(),
            self.sources.clone(),
            self.sigma2,
            self.snapshots,
        )
    }
}

/// The matrices `A`, `B` and `G` of a scenario.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    steering: CMatrix,
    modulation: CMatrix,
    measurement: CMatrix,
    subband_of: Vec<usize>,
}

impl MeasurementModel {
    pub fn new(scenario: &Scenario) -> Self {
        let steering = steering_matrix(scenario.geometry(), scenario.phases());
        let modulation = modulation_matrix(scenario.sampling());
        let m = steering.nrows();
        let p = modulation.nrows();
        let k = steering.ncols();
        let mut measurement = CMatrix::zeros(m * p, k);
        for (col, &l) in scenario.subbands().iter().enumerate() {
            for i in 0..m {
                for j in 0..p {
                    measurement[(i * p + j, col)] = steering[(i, col)] * modulation[(j, l)];
                }
            }
        }
        Self {
            steering,
            modulation,
            measurement,
            subband_of: scenario.subbands().to_vec(),
        }
    }

    /// `A`, `M × K`.
    pub fn steering(&self) -> &CMatrix {
        &self.steering
    }

    /// `B`, `P × L`.
    pub fn modulation(&self) -> &CMatrix {
        &self.modulation
    }

    /// `G`, `MP × K`.
    pub fn measurement(&self) -> &CMatrix {
        &self.measurement
    }

    pub fn subband_of(&self) -> &[usize] {
        &self.subband_of
    }

    pub fn sensors(&self) -> usize {
        self.steering.nrows()
    }

    pub fn branches(&self) -> usize {
        self.modulation.nrows()
    }

    fn columns_of(&self, subband: usize) -> Vec<usize> {
        (0..self.subband_of.len())
            .filter(|&k| self.subband_of[k] == subband)
            .collect()
    }

    /// `A_l`, the steering columns of sources in `subband`.
    pub fn steering_block(&self, subband: usize) -> CMatrix {
        let cols = self.columns_of(subband);
        self.steering.select_columns(cols.iter())
    }

    /// `V_l = A_l ⊗ B_l`, i.e. the columns of `G` in `subband`.
    pub fn kron_block(&self, subband: usize) -> CMatrix {
        let cols = self.columns_of(subband);
        self.measurement.select_columns(cols.iter())
    }

    /// Applies `I_M ⊗ B` to a stacked `M·L` vector without forming the Kronecker product.
    pub fn apply_noise_operator(&self, stacked: &[C64]) -> Vec<C64> {
        let l_count = self.modulation.ncols();
        let p = self.modulation.nrows();
        assert_eq!(stacked.len(), self.sensors() * l_count, "noise vector length");
        let mut out = vec![C64::new(0.0, 0.0); self.sensors() * p];
        for (m, chunk) in stacked.chunks(l_count).enumerate() {
            for j in 0..p {
                out[m * p + j] = (0..l_count).map(|l| self.modulation[(j, l)] * chunk[l]).sum();
            }
        }
        out
    }
}

/// Assemble `A`, `B` and `G` for a scenario.
pub fn measurement_matrix(scenario: &Scenario) -> MeasurementModel {
    MeasurementModel::new(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_modulus;
    use approx::assert_abs_diff_eq;

    const F_N: f64 = 10e9;

    fn ula_scenario(sources: Vec<SourceSpec>, l: usize) -> Scenario {
        Scenario::new(
            ArrayGeometry::ula(7).unwrap(),
            SamplingConfig::full(F_N, l).unwrap(),
            sources,
            0.01,
            100,
        )
        .unwrap()
    }

    #[test]
    fn spatial_phase_examples() {
        assert_eq!(spatial_phase(0.0, 3e9, 1.0, F_N).unwrap(), 0.0);
        assert_abs_diff_eq!(spatial_phase(30.0, 5e9, 1.0, F_N).unwrap(), PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spatial_phase(-30.0, 5e9, 1.0, F_N).unwrap(), -PI / 4.0, epsilon = 1e-15);
        assert!(spatial_phase(f64::NAN, 5e9, 1.0, F_N).is_err());
        assert!(spatial_phase(90.0, 5e9, 1.0, F_N).is_err());
        assert!(spatial_phase(10.0, 5e9, 1.0, 0.0).is_err());
    }

    #[test]
    fn doa_inversion_examples() {
        assert_abs_diff_eq!(doa_from_phase(PI / 4.0, 5e9, 1.0, F_N).unwrap(), 30.0, epsilon = 1e-12);
        assert_eq!(doa_from_phase(0.0, 2e9, 1.0, F_N).unwrap(), 0.0);
        assert!(matches!(doa_from_phase(PI, 1e9, 1.0, F_N), Err(Error::OutOfRange(_))));
        assert!(matches!(doa_from_phase(0.1, 0.0, 1.0, F_N), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::new(vec![0], 1.0).is_err());
        assert!(ArrayGeometry::new(vec![1, 2], 1.0).is_err());
        assert!(ArrayGeometry::new(vec![0, 2, 2], 1.0).is_err());
        assert!(ArrayGeometry::new(vec![0, 3, 1], 1.0).is_err());
        assert!(ArrayGeometry::new(vec![0, 1], 0.0).is_err());
        assert_eq!(ArrayGeometry::mra7().aperture(), 28);
    }

    #[test]
    fn sampling_validation() {
        assert!(SamplingConfig::new(F_N, 4, vec![0, 1, 2, 3, 0]).is_err());
        assert!(SamplingConfig::new(F_N, 4, vec![0, 0]).is_err());
        assert!(SamplingConfig::new(F_N, 4, vec![4]).is_err());
        assert!(SamplingConfig::new(F_N, 0, vec![]).is_err());
        assert!(SamplingConfig::new(-1.0, 2, vec![0]).is_err());
        let s = SamplingConfig::full(F_N, 7).unwrap();
        assert_abs_diff_eq!(s.sub_rate_hz(), F_N / 7.0);
        assert_eq!(s.subband_of(0.0), Some(0));
        assert_eq!(s.subband_of(F_N / 7.0 * 2.5), Some(2));
        assert_eq!(s.subband_of(F_N), None);
        assert_eq!(s.subband_of(-1.0), None);
    }

    #[test]
    fn steering_examples() {
        let ula = ArrayGeometry::ula(7).unwrap();
        assert!(steering_vector(&ula, 0.0).iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));

        let ula3 = ArrayGeometry::ula(3).unwrap();
        let col = steering_vector(&ula3, PI / 2.0);
        let expected = [C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0)];
        for (a, b) in col.iter().zip(expected) {
            assert!((a - b).norm() < 1e-15);
        }

        let mra = ArrayGeometry::mra7();
        for (v, &p) in steering_vector(&mra, PI / 4.0).iter().zip(MRA7_POSITIONS.iter()) {
            let expected = C64::from_polar(1.0, -PI / 4.0 * p as f64);
            assert!((v - expected).norm() < 1e-13);
            assert!((v.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn modulation_examples() {
        let b = modulation_matrix(&SamplingConfig::full(F_N, 2).unwrap());
        let h = 1.0 / 2f64.sqrt();
        let expected = [[h, h], [h, -h]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((b[(i, j)] - C64::new(expected[i][j], 0.0)).norm() < 1e-15);
            }
        }
        let b1 = modulation_matrix(&SamplingConfig::full(F_N, 1).unwrap());
        assert_eq!(b1[(0, 0)], C64::new(1.0, 0.0));

        let b7 = modulation_matrix(&SamplingConfig::full(F_N, 7).unwrap());
        let gram = b7.adjoint() * &b7 - CMatrix::identity(7, 7);
        assert!(max_modulus(&gram) < 1e-12);
    }

    #[test]
    fn sources_sorted_by_subband_then_phase() {
        let f_sub = F_N / 4.0;
        let s = ula_scenario(
            vec![
                SourceSpec::new(10.0, 2.5 * f_sub, 1.0),
                SourceSpec::new(20.0, 0.5 * f_sub, 1.0),
                SourceSpec::new(-20.0, 0.5 * f_sub, 1.0),
            ],
            4,
        );
        assert_eq!(s.subbands(), &[0, 0, 2]);
        assert!(s.phases()[0] < s.phases()[1]);
        assert_eq!(s.subband_range(0), 0..2);
        assert_eq!(s.subband_range(1), 2..2);
        assert_eq!(s.subband_counts(), vec![2, 0, 1, 0]);
        assert_abs_diff_eq!(s.baseband_offsets()[2], 0.5 * f_sub, epsilon = 1e-3);
    }

    #[test]
    fn kronecker_example_two_sensors() {
        let scenario = Scenario::new(
            ArrayGeometry::ula(2).unwrap(),
            SamplingConfig::full(F_N, 2).unwrap(),
            vec![SourceSpec::new(0.0, 0.25 * F_N, 1.0)],
            0.0,
            1,
        )
        .unwrap();
        let model = MeasurementModel::new(&scenario);
        let h = 1.0 / 2f64.sqrt();
        for i in 0..4 {
            assert!((model.measurement()[(i, 0)] - C64::new(h, 0.0)).norm() < 1e-15);
        }
        let g = model.measurement().column(0).into_owned();
        let direct = manifold_vector(scenario.geometry(), scenario.sampling(), 0, 0.0);
        assert!((g - direct).norm() < 1e-15);
    }

    #[test]
    fn gram_is_block_diagonal() {
        let f_sub = F_N / 7.0;
        let scenario = ula_scenario(
            vec![
                SourceSpec::new(10.0, 0.3 * f_sub, 1.0),
                SourceSpec::new(-35.0, 0.6 * f_sub, 1.0),
                SourceSpec::new(10.0, 1.3 * f_sub, 1.0),
                SourceSpec::new(50.0, 4.2 * f_sub, 1.0),
            ],
            7,
        );
        let model = MeasurementModel::new(&scenario);
        let g = model.measurement();
        let gram = g.adjoint() * g;
        let sb = scenario.subbands();
        for i in 0..4 {
            for j in 0..4 {
                if sb[i] != sb[j] {
                    assert!(gram[(i, j)].norm() < 1e-12);
                }
            }
            assert_abs_diff_eq!(g.column(i).norm(), 7f64.sqrt(), epsilon = 1e-12);
        }
        let a0 = model.steering_block(0);
        let block = a0.adjoint() * &a0;
        for i in 0..2 {
            for j in 0..2 {
                assert!((gram[(i, j)] - block[(i, j)]).norm() < 1e-12);
            }
        }
        assert_eq!(model.kron_block(0).ncols(), 2);
        assert_eq!(model.kron_block(3).ncols(), 0);
    }

    #[test]
    fn noise_operator_matches_kronecker_product() {
        let scenario = ula_scenario(vec![SourceSpec::new(0.0, 1e9, 1.0)], 3);
        let model = MeasurementModel::new(&scenario);
        let ib = CMatrix::identity(7, 7).kronecker(model.modulation());
        let x: Vec<C64> = (0..21).map(|i| C64::new(i as f64, -(i as f64) * 0.5)).collect();
        let direct = &ib * DVector::from_vec(x.clone());
        let fast = model.apply_noise_operator(&x);
        for (a, b) in direct.iter().zip(fast) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_from_repeated_column() {
        let f_sub = F_N / 7.0;
        let src = SourceSpec::new(20.0, 2.4 * f_sub, 1.0);
        let scenario = ula_scenario(vec![src, src, SourceSpec::new(-5.0, 2.6 * f_sub, 1.0)], 7);
        let model = MeasurementModel::new(&scenario);
        assert_eq!(numerical_rank(model.measurement(), DEFAULT_RANK_TOL).unwrap(), 2);
        assert!(scenario.check_identifiable().is_err());
    }

    #[test]
    fn identifiable_mode_rejects_overfull_subband() {
        let f_sub = F_N / 7.0;
        let sources: Vec<_> = (0..7)
            .map(|i| SourceSpec::new(-50.0 + 15.0 * i as f64, 3.5 * f_sub, 1.0))
            .collect();
        let err = Scenario::identifiable(
            ArrayGeometry::ula(7).unwrap(),
            SamplingConfig::full(F_N, 7).unwrap(),
            sources,
            0.0,
            10,
        )
        .unwrap_err();
        assert!(err.to_string().contains("subband 4"));

        let partial = SamplingConfig::new(F_N, 7, vec![0, 2, 5]).unwrap();
        let s = Scenario::new(ArrayGeometry::ula(7).unwrap(), partial, vec![], 0.0, 10).unwrap();
        assert!(s.check_identifiable().is_err());
    }
}
