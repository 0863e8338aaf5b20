//! Experiment configuration: a single JSON document, unknown keys rejected.
//!
//! Parsing errors carry the JSON line/column and the field path; semantic checks
//! report the field path of the offending value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subnyq_core::crb::SnapshotConvention;
use subnyq_core::estimator::{EstimatorConfig, SearchGrid, SourceCount};
use subnyq_core::synth::SourceWaveformSpec;
use subnyq_core::{ArrayGeometry, SamplingConfig, SourceSpec};

use crate::error::HarnessError;

pub const FULL_SCALE_TRIALS: usize = 2000;
pub const FULL_SCALE_NYQUIST_SNAPSHOTS: usize = 7000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_nyquist_hz")]
    pub nyquist_hz: f64,
    /// Rate reduction factor `L`.
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    /// Coset offsets; all `L` offsets when omitted.
    #[serde(default)]
    pub cosets: Option<Vec<usize>>,
    #[serde(default = "default_arrays")]
    pub arrays: Vec<ArrayConfig>,
    pub sources: SourcePlanConfig,
    /// `None` (or JSON `null`) means noise-free.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Sub-Nyquist snapshot count `T_sub`; Nyquist-rate bounds use `L · T_sub`.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub waveform: WaveformConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub rmse: RmseSection,
    #[serde(default)]
    pub crb: CrbSection,
    #[serde(default)]
    pub frontend: FrontendSection,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_nyquist_hz() -> f64 {
    10e9
}
fn default_reduction() -> usize {
    7
}
fn default_arrays() -> Vec<ArrayConfig> {
    vec![ArrayConfig {
        name: Some("MRA".into()),
        preset: Some(ArrayPreset::Mra),
        sensors: None,
        positions: None,
        spacing: 1.0,
    }]
}
fn default_snapshots() -> usize {
    FULL_SCALE_NYQUIST_SNAPSHOTS / 7
}
fn default_trials() -> usize {
    500
}
fn default_spacing() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayPreset {
    Ula,
    Mra,
}

/// A preset (`ula` with `sensors`, or the 7-sensor `mra`) or explicit `positions`
/// in units of `spacing` half-wavelengths at `f_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub preset: Option<ArrayPreset>,
    #[serde(default)]
    pub sensors: Option<usize>,
    #[serde(default)]
    pub positions: Option<Vec<u32>>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

impl ArrayConfig {
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (self.preset, &self.positions) {
            (Some(ArrayPreset::Mra), _) => "MRA".into(),
            (Some(ArrayPreset::Ula), _) => "ULA".into(),
            _ => "custom".into(),
        }
    }

    fn geometry(&self, path: &str) -> Result<ArrayGeometry, HarnessError> {
        let positions = match (self.preset, &self.positions, self.sensors) {
            (Some(_), Some(_), _) => {
                return Err(HarnessError::field(path, "give either `preset` or `positions`, not both"))
            }
            (Some(ArrayPreset::Mra), None, None | Some(7)) => subnyq_core::model::MRA7_POSITIONS.to_vec(),
            (Some(ArrayPreset::Mra), None, Some(m)) => {
                return Err(HarnessError::field(
                    format!("{path}.sensors"),
                    format!("the MRA preset has 7 sensors, got {m}"),
                ))
            }
            (Some(ArrayPreset::Ula), None, Some(m)) => (0..m as u32).collect(),
            (Some(ArrayPreset::Ula), None, None) => (0..7).collect(),
            (None, Some(p), None) => p.clone(),
            (None, Some(_), Some(_)) => {
                return Err(HarnessError::field(
                    format!("{path}.sensors"),
                    "`sensors` is implied by `positions`",
                ))
            }
            (None, None, _) => {
                return Err(HarnessError::field(path, "array needs a `preset` or `positions`"))
            }
        };
        ArrayGeometry::new(positions, self.spacing).map_err(|e| HarnessError::field(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub theta_deg: f64,
    pub freq_hz: f64,
    #[serde(default = "unit_power")]
    pub power: f64,
}

fn unit_power() -> f64 {
    1.0
}

impl From<SourceConfig> for SourceSpec {
    fn from(s: SourceConfig) -> Self {
        SourceSpec::new(s.theta_deg, s.freq_hz, s.power)
    }
}

/// Either an explicit source list or the randomized occupancy plan. Sweeps over
/// `K` always take the first `K` entries of the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourcePlanConfig {
    Explicit {
        list: Vec<SourceConfig>,
    },
    Random {
        count: usize,
        #[serde(default = "default_theta_range")]
        theta_range_deg: [f64; 2],
        /// Entries per subband in the pool; entries `i, i + L, i + 2L, …` share
        /// subband `q_i` of a random permutation `q`. Defaults to 2.
        #[serde(default = "default_per_subband")]
        per_subband: usize,
        /// Minimum `|Δφ|` between sources that share a subband (radians).
        #[serde(default = "default_min_phase_sep")]
        min_phase_separation: f64,
        /// Carriers stay this fraction of `f_sub` away from subband edges.
        #[serde(default = "default_edge_margin")]
        edge_margin: f64,
        /// Minimum distance between any two baseband offsets, as a fraction of
        /// `f_sub`. Defaults to `2 / T_sub`.
        #[serde(default)]
        min_offset_separation: Option<f64>,
    },
}

fn default_theta_range() -> [f64; 2] {
    [-60.0, 60.0]
}
fn default_per_subband() -> usize {
    2
}
fn default_min_phase_sep() -> f64 {
    0.1
}
fn default_edge_margin() -> f64 {
    0.05
}

impl SourcePlanConfig {
    pub fn count(&self) -> usize {
        match self {
            SourcePlanConfig::Explicit { list } => list.len(),
            SourcePlanConfig::Random { count, .. } => *count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WaveformMode {
    Tone,
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    #[serde(default)]
    pub mode: WaveformMode,
    #[serde(default)]
    pub bandwidth_fraction: f64,
}

impl WaveformConfig {
    pub fn spec(&self) -> SourceWaveformSpec {
        let base = match self.mode {
            WaveformMode::Tone => SourceWaveformSpec::tone(),
            WaveformMode::Gaussian => SourceWaveformSpec::gaussian(),
        };
        SourceWaveformSpec {
            bandwidth_fraction: self.bandwidth_fraction,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountRule {
    Mdl,
    Aic,
    /// Use the true `K` of each trial.
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_count_rule")]
    pub source_count: CountRule,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_refine_tol")]
    pub refine_tol: f64,
    #[serde(default = "default_threshold_ratio")]
    pub threshold_ratio: f64,
}

fn default_count_rule() -> CountRule {
    CountRule::Mdl
}
fn default_grid_points() -> usize {
    SearchGrid::DEFAULT_POINTS
}
fn default_refine_tol() -> f64 {
    SearchGrid::DEFAULT_REFINE_TOL
}
fn default_threshold_ratio() -> f64 {
    10.0
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            source_count: default_count_rule(),
            grid_points: default_grid_points(),
            refine_tol: default_refine_tol(),
            threshold_ratio: default_threshold_ratio(),
        }
    }
}

impl EstimatorSection {
    pub fn config(&self, true_k: usize, estimate_frequency: bool) -> EstimatorConfig {
        EstimatorConfig {
            source_count: match self.source_count {
                CountRule::Mdl => SourceCount::Mdl,
                CountRule::Aic => SourceCount::Aic,
                CountRule::Known => SourceCount::Known(true_k),
            },
            grid_points: self.grid_points,
            refine_tol: self.refine_tol,
            threshold_ratio: self.threshold_ratio,
            estimate_frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RmseSection {
    /// Values of `K` to sweep; the plan's count alone when empty.
    #[serde(default)]
    pub source_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConventionConfig {
    /// Both bounds at `T_sub`.
    #[default]
    Same,
    /// Sub-Nyquist bound at `T_sub`, Nyquist bound at `L · T_sub`.
    SubScaled,
}

impl ConventionConfig {
    pub fn core(self) -> SnapshotConvention {
        match self {
            ConventionConfig::Same => SnapshotConvention::Same,
            ConventionConfig::SubScaled => SnapshotConvention::SubScaled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrbSection {
    /// Number of plan draws to tabulate.
    #[serde(default = "default_crb_scenarios")]
    pub scenarios: usize,
    #[serde(default)]
    pub convention: ConventionConfig,
}

fn default_crb_scenarios() -> usize {
    100
}

impl Default for CrbSection {
    fn default() -> Self {
        Self {
            scenarios: default_crb_scenarios(),
            convention: ConventionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSection {
    #[serde(default = "default_guard_bins")]
    pub guard_bins: usize,
    #[serde(default = "default_energy_floor")]
    pub energy_floor: f64,
}

fn default_guard_bins() -> usize {
    8
}
fn default_energy_floor() -> f64 {
    1e-3
}

impl Default for FrontendSection {
    fn default() -> Self {
        Self {
            guard_bins: default_guard_bins(),
            energy_floor: default_energy_floor(),
        }
    }
}

/// Pass/fail limits. Unset limits are not checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// identify: largest `|φ̂ − φ|` (radians).
    #[serde(default)]
    pub max_phase_error: Option<f64>,
    /// identify: largest carrier error as a fraction of `f_sub`.
    #[serde(default)]
    pub max_freq_error_fraction: Option<f64>,
    /// rmse: `RMSE ≤ factor · √CRB_sub`, per source and pooled.
    #[serde(default)]
    pub max_rmse_over_crb: Option<f64>,
    /// rmse: fraction of trials with `K̂ = K`.
    #[serde(default)]
    pub min_detection_rate: Option<f64>,
    /// crb: off-block magnitude relative to the largest diagonal.
    #[serde(default)]
    pub max_off_block: Option<f64>,
    /// crb: `‖CRB_sub − CRB_Ny‖ / ‖CRB_Ny‖` on single-subband scenarios.
    #[serde(default)]
    pub max_equality_residual: Option<f64>,
    /// crb: smallest allowed `CRB_Ny[k,k] − CRB_sub[k,k]`.
    #[serde(default)]
    pub min_diagonal_gap: Option<f64>,
    /// validate: largest relative spectral error on interior bins.
    #[serde(default)]
    pub max_spectral_error: Option<f64>,
    /// validate: relative Frobenius error between the two routes' covariances.
    #[serde(default)]
    pub max_covariance_error: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            HarnessError::Parse {
                line: inner.line(),
                column: inner.column(),
                path,
                message: inner.to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn sampling(&self) -> Result<SamplingConfig, HarnessError> {
        let cosets = self.cosets.clone().unwrap_or_else(|| (0..self.reduction).collect());
        SamplingConfig::new(self.nyquist_hz, self.reduction, cosets).map_err(|e| {
            let field = if self.cosets.is_some() { "cosets" } else { "reduction" };
            HarnessError::field(field, e)
        })
    }

    pub fn geometries(&self) -> Result<Vec<(String, ArrayGeometry)>, HarnessError> {
        self.arrays
            .iter()
            .enumerate()
            .map(|(i, a)| Ok((a.label(), a.geometry(&format!("arrays[{i}]"))?)))
            .collect()
    }

    /// Noise power for unit-power sources, zero when noise-free.
    pub fn sigma2(&self) -> f64 {
        self.snr_db.map_or(0.0, |snr| 10f64.powf(-snr / 10.0))
    }

    /// Sweep values of `K`.
    pub fn source_counts(&self) -> Vec<usize> {
        if self.rmse.source_counts.is_empty() {
            vec![self.sources.count()]
        } else {
            self.rmse.source_counts.clone()
        }
    }

    /// Applies the full-scale trial and snapshot counts.
    pub fn full_scale(&mut self) {
        self.trials = FULL_SCALE_TRIALS;
        self.snapshots = FULL_SCALE_NYQUIST_SNAPSHOTS / self.reduction.max(1);
    }

    /// Checks every scenario invariant that can be decided before trials run.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.nyquist_hz.is_finite() && self.nyquist_hz > 0.0) {
            return Err(HarnessError::field("nyquist_hz", "must be positive and finite"));
        }
        if self.reduction == 0 {
            return Err(HarnessError::field("reduction", "L must be at least 1"));
        }
        let sampling = self.sampling()?;
        if sampling.branches() != sampling.reduction() {
            return Err(HarnessError::field(
                "cosets",
                format!(
                    "{} cosets for L = {}; the estimator and bounds need P = L",
                    sampling.branches(),
                    sampling.reduction()
                ),
            ));
        }
        if self.arrays.is_empty() {
            return Err(HarnessError::field("arrays", "at least one array is required"));
        }
        let geometries = self.geometries()?;
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(HarnessError::field("snr_db", "must be finite or null"));
            }
        }
        if self.snapshots == 0 {
            return Err(HarnessError::field("snapshots", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(HarnessError::field("trials", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::field("workers", "must be at least 1"));
        }
        if let Err(e) = self.waveform.spec().validate() {
            return Err(HarnessError::field("waveform", e));
        }
        self.validate_estimator(&geometries)?;
        self.validate_plan(&sampling, &geometries)?;
        for (i, &k) in self.rmse.source_counts.iter().enumerate() {
            if k == 0 || k > self.sources.count() {
                return Err(HarnessError::field(
                    format!("rmse.source_counts[{i}]"),
                    format!("K = {k} must lie in 1..={} (the plan size)", self.sources.count()),
                ));
            }
        }
        if self.crb.scenarios == 0 {
            return Err(HarnessError::field("crb.scenarios", "must be at least 1"));
        }
        if !(self.frontend.energy_floor > 0.0 && self.frontend.energy_floor < 1.0) {
            return Err(HarnessError::field("frontend.energy_floor", "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn validate_estimator(&self, geometries: &[(String, ArrayGeometry)]) -> Result<(), HarnessError> {
        let e = &self.estimator;
        for (i, (_, g)) in geometries.iter().enumerate() {
            SearchGrid::new(g, e.grid_points, e.refine_tol).map_err(|err| {
                let field = if e.refine_tol > 0.0 { "estimator.grid_points" } else { "estimator.refine_tol" };
                HarnessError::field(field, format!("{err} (arrays[{i}])"))
            })?;
        }
        if !(e.threshold_ratio.is_finite() && e.threshold_ratio >= 1.0) {
            return Err(HarnessError::field("estimator.threshold_ratio", "must be at least 1"));
        }
        Ok(())
    }

    fn validate_plan(
        &self,
        sampling: &SamplingConfig,
        geometries: &[(String, ArrayGeometry)],
    ) -> Result<(), HarnessError> {
        let l = sampling.reduction();
        match &self.sources {
            SourcePlanConfig::Explicit { list } => {
                for (i, s) in list.iter().enumerate() {
                    let path = format!("sources.list[{i}]");
                    if !(s.power.is_finite() && s.power > 0.0) {
                        return Err(HarnessError::field(format!("{path}.power"), "must be positive"));
                    }
                    if !(s.freq_hz > 0.0 && s.freq_hz < self.nyquist_hz) {
                        return Err(HarnessError::field(
                            format!("{path}.freq_hz"),
                            format!("{} Hz is outside (0, f_N)", s.freq_hz),
                        ));
                    }
                    if !(s.theta_deg.abs() < 90.0) {
                        return Err(HarnessError::field(format!("{path}.theta_deg"), "must lie in (-90, 90)"));
                    }
                }
                for (name, g) in geometries {
                    let sources: Vec<SourceSpec> = list.iter().map(|&s| s.into()).collect();
                    subnyq_core::Scenario::identifiable(
                        g.clone(),
                        sampling.clone(),
                        sources,
                        self.sigma2(),
                        self.snapshots,
                    )
                    .map_err(|e| HarnessError::field("sources.list", format!("array '{name}': {e}")))?;
                }
            }
            SourcePlanConfig::Random {
                count,
                theta_range_deg,
                per_subband,
                min_phase_separation,
                edge_margin,
                min_offset_separation,
            } => {
                let [lo, hi] = *theta_range_deg;
                if !(lo < hi && lo > -90.0 && hi < 90.0) {
                    return Err(HarnessError::field(
                        "sources.theta_range_deg",
                        "need -90 < low < high < 90",
                    ));
                }
                if *per_subband == 0 {
                    return Err(HarnessError::field("sources.per_subband", "must be at least 1"));
                }
                if *count == 0 || *count > per_subband * l {
                    return Err(HarnessError::field(
                        "sources.count",
                        format!("K = {count} must lie in 1..={} (per_subband · L)", per_subband * l),
                    ));
                }
                // arrays that cannot hold K are skipped by sweeps; one must hold it
                let cap = geometries.iter().map(|(_, g)| g.sensors() - 1).max().unwrap_or(0);
                if *count > cap * l {
                    return Err(HarnessError::field(
                        "sources.count",
                        format!("K = {count} exceeds (M-1)L = {} for every configured array", cap * l),
                    ));
                }
                if count.div_ceil(l) > cap {
                    return Err(HarnessError::field(
                        "sources.count",
                        format!("K = {count} puts {} sources in one subband; M-1 = {cap}", count.div_ceil(l)),
                    ));
                }
                if !(*min_phase_separation >= 0.0 && min_phase_separation.is_finite()) {
                    return Err(HarnessError::field("sources.min_phase_separation", "must be non-negative"));
                }
                if !(*edge_margin >= 0.0 && *edge_margin < 0.5) {
                    return Err(HarnessError::field("sources.edge_margin", "must lie in [0, 0.5)"));
                }
                if let Some(sep) = min_offset_separation {
                    let room = 1.0 - 2.0 * edge_margin;
                    if !(*sep >= 0.0) || sep * (*count as f64) > room {
                        return Err(HarnessError::field(
                            "sources.min_offset_separation",
                            format!("{sep} leaves no room for {count} baseband offsets"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
