//! The four experiments behind the CLI subcommands.
//!
//! Every run draws its randomness from ChaCha8 seeded with the master seed; trial
//! (or scenario) `i` uses stream `i`, so results do not depend on the worker count
//! or on the order in which trials finish.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use subnyq_core::crb::{self, compare_crb, off_block_residual, source_covariance, SnapshotConvention};
use subnyq_core::estimator::{estimate_all, sample_covariance};
use subnyq_core::synth::{
    align_branches, frontend_residual, generate_snapshots, multicoset_sample, synthesize_nyquist,
    FrontendReport, SourceWaveformSpec,
};
use subnyq_core::{ArrayGeometry, Error as CoreError, SamplingConfig, Scenario, SourceSpec};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::metrics::{pair_estimates, scenario_columns, truths, SquaredError};
use crate::output::{num, opt, Check, Report, Table};
use crate::plan::draw_pool;
use crate::svg::{Marker, Plot, Series, Style};

/// Trial counts below this give noisy RMSE estimates.
pub const MIN_RMSE_TRIALS: usize = 100;

struct Setup {
    sampling: SamplingConfig,
    arrays: Vec<(String, ArrayGeometry)>,
    spacings: Vec<f64>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, HarnessError> {
    cfg.validate()?;
    let arrays = cfg.geometries()?;
    let spacings = arrays.iter().map(|(_, g)| g.spacing()).collect();
    Ok(Setup {
        sampling: cfg.sampling()?,
        arrays,
        spacings,
    })
}

/// Random stream for trial or scenario `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Worker count actually used for a configuration.
pub fn worker_count(cfg: &ExperimentConfig) -> usize {
    cfg.workers.unwrap_or_else(rayon::current_num_threads).max(1)
}

fn thread_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg))
        .build()
        .map_err(|e| HarnessError::field("workers", e))
}

fn capacity_error(name: &str, geometry: &ArrayGeometry, sampling: &SamplingConfig, k: usize) -> Option<String> {
    let cap = geometry.sensors() - 1;
    let per_band = k.div_ceil(sampling.reduction());
    (k > cap * sampling.reduction() || per_band > cap).then(|| {
        format!(
            "K = {k} exceeds what array '{name}' can classify ((M-1)L = {}, at most {cap} per subband)",
            cap * sampling.reduction()
        )
    })
}

fn tone_spec(cfg: &ExperimentConfig) -> SourceWaveformSpec {
    SourceWaveformSpec {
        bandwidth_fraction: cfg.waveform.bandwidth_fraction,
        ..SourceWaveformSpec::tone()
    }
}

// ---------------------------------------------------------------------------
// identify

/// One line of the identifiability table: a truth with its matched estimate,
/// or an unmatched estimate (false alarm).
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyRow {
    /// One-based pool index; `None` for a false alarm.
    pub source: Option<usize>,
    /// Zero-based subband.
    pub subband: usize,
    pub true_freq_hz: Option<f64>,
    pub true_theta_deg: Option<f64>,
    pub true_phi: Option<f64>,
    pub est_freq_hz: Option<f64>,
    pub est_theta_deg: Option<f64>,
    pub est_phi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IdentifyOutcome {
    pub array: String,
    pub k: usize,
    pub k_hat: usize,
    pub matched: usize,
    pub false_alarms: usize,
    pub max_phase_error: f64,
    pub max_freq_error_hz: f64,
    pub sub_rate_hz: f64,
    pub rows: Vec<IdentifyRow>,
}

impl IdentifyOutcome {
    pub fn all_recovered(&self) -> bool {
        self.k_hat == self.k && self.matched == self.k && self.false_alarms == 0
    }
}

/// Single tone-mode run of the full estimator per configured array.
pub fn run_identify(cfg: &ExperimentConfig) -> Result<Vec<IdentifyOutcome>, HarnessError> {
    let s = setup(cfg)?;
    let t = cfg.snapshots;
    let mut rng = stream_rng(cfg.seed, 0);
    let pool = draw_pool(&cfg.sources, &s.sampling, &s.spacings, t, &mut rng)?;
    let data_seed: u64 = rng.random();
    let k = pool.len();

    let mut out = Vec::new();
    for (name, geometry) in &s.arrays {
        if let Some(msg) = capacity_error(name, geometry, &s.sampling, k) {
            return Err(HarnessError::field("sources", msg));
        }
        let sc = Scenario::identifiable(geometry.clone(), s.sampling.clone(), pool.clone(), cfg.sigma2(), t)
            .map_err(|e| HarnessError::field("sources", format!("array '{name}': {e}")))?;
        let y = generate_snapshots(&sc, &tone_spec(cfg), t, data_seed)?;
        let est = estimate_all(&y.data, geometry, &s.sampling, &cfg.estimator.config(k, true))?;
        let truth = truths(&sc, &pool);
        let pairs = pair_estimates(&truth, &est.estimates);

        let mut rows = Vec::new();
        let (mut max_phase, mut max_freq) = (0.0f64, 0.0f64);
        let mut used = vec![false; est.estimates.len()];
        for (i, (tr, pair)) in truth.iter().zip(&pairs).enumerate() {
            let e = pair.map(|j| {
                used[j] = true;
                est.estimates[j]
            });
            if let Some(e) = e {
                max_phase = max_phase.max((e.phi - tr.phi).abs());
                match e.freq_hz {
                    Some(f) => max_freq = max_freq.max((f - pool[i].freq_hz).abs()),
                    None => max_freq = f64::INFINITY,
                }
            }
            rows.push(IdentifyRow {
                source: Some(i + 1),
                subband: tr.subband,
                true_freq_hz: Some(pool[i].freq_hz),
                true_theta_deg: Some(pool[i].theta_deg),
                true_phi: Some(tr.phi),
                est_freq_hz: e.and_then(|e| e.freq_hz),
                est_theta_deg: e.and_then(|e| e.theta_deg),
                est_phi: e.map(|e| e.phi),
            });
        }
        for (j, e) in est.estimates.iter().enumerate().filter(|(j, _)| !used[*j]) {
            let _ = j;
            rows.push(IdentifyRow {
                source: None,
                subband: e.subband,
                true_freq_hz: None,
                true_theta_deg: None,
                true_phi: None,
                est_freq_hz: e.freq_hz,
                est_theta_deg: e.theta_deg,
                est_phi: Some(e.phi),
            });
        }
        let matched = pairs.iter().filter(|p| p.is_some()).count();
        out.push(IdentifyOutcome {
            array: name.clone(),
            k,
            k_hat: est.source_count,
            matched,
            false_alarms: est.estimates.len() - matched,
            max_phase_error: if matched == k { max_phase } else { f64::INFINITY },
            max_freq_error_hz: if matched == k { max_freq } else { f64::INFINITY },
            sub_rate_hz: s.sampling.sub_rate_hz(),
            rows,
        });
    }
    Ok(out)
}

pub fn identify_report(cfg: &ExperimentConfig, outcomes: &[IdentifyOutcome]) -> Report {
    let mut report = Report::new("identify");
    let mut table = Table::new(
        "identify.csv",
        &[
            "array",
            "source",
            "subband",
            "true_freq_hz",
            "true_theta_deg",
            "true_phi",
            "est_freq_hz",
            "est_theta_deg",
            "est_phi",
            "phi_error",
            "freq_error_hz",
        ],
    );
    let mut summary = Table::new(
        "identify_summary.csv",
        &["array", "k", "k_hat", "matched", "false_alarms", "max_phi_error", "max_freq_error_hz", "max_freq_error_fraction"],
    );
    for o in outcomes {
        for r in &o.rows {
            let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| (a - b).abs());
            table.push(vec![
                o.array.clone(),
                r.source.map(|s| s.to_string()).unwrap_or_default(),
                (r.subband + 1).to_string(),
                opt(r.true_freq_hz),
                opt(r.true_theta_deg),
                opt(r.true_phi),
                opt(r.est_freq_hz),
                opt(r.est_theta_deg),
                opt(r.est_phi),
                opt(diff(r.est_phi, r.true_phi)),
                opt(diff(r.est_freq_hz, r.true_freq_hz)),
            ]);
        }
        let freq_fraction = o.max_freq_error_hz / o.sub_rate_hz;
        summary.push(vec![
            o.array.clone(),
            o.k.to_string(),
            o.k_hat.to_string(),
            o.matched.to_string(),
            o.false_alarms.to_string(),
            num(o.max_phase_error),
            num(o.max_freq_error_hz),
            num(freq_fraction),
        ]);
        report.checks.push(Check::new(
            format!("{}: all sources recovered", o.array),
            o.all_recovered(),
            format!("K = {}, K̂ = {}, matched {}, false alarms {}", o.k, o.k_hat, o.matched, o.false_alarms),
        ));
        report
            .checks
            .extend(Check::at_most(&format!("{}: max phase error", o.array), o.max_phase_error, cfg.thresholds.max_phase_error));
        report.checks.extend(Check::at_most(
            &format!("{}: max carrier error / f_sub", o.array),
            freq_fraction,
            cfg.thresholds.max_freq_error_fraction,
        ));

        let ghz = |f: f64| f / 1e9;
        let truth_pts = o
            .rows
            .iter()
            .filter_map(|r| Some((ghz(r.true_freq_hz?), r.true_theta_deg?)))
            .collect();
        let est_pts = o
            .rows
            .iter()
            .filter_map(|r| Some((ghz(r.est_freq_hz?), r.est_theta_deg?)))
            .collect();
        report.figures.push((
            format!("identify_{}.svg", slug(&o.array)),
            Plot {
                title: format!("Actual and estimated sources, K = {} ({})", o.k, o.array),
                x_label: "frequency (GHz)".into(),
                y_label: "DOA (degrees)".into(),
                log_y: false,
                series: vec![
                    Series {
                        label: "actual".into(),
                        points: truth_pts,
                        style: Style::Points(Marker::Circle),
                    },
                    Series {
                        label: "estimated".into(),
                        points: est_pts,
                        style: Style::Points(Marker::Cross),
                    },
                ],
            },
        ));
    }
    report.tables.push(table);
    report.tables.push(summary);
    report
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

// ---------------------------------------------------------------------------
// rmse

/// Per-trial contribution for one `(K, array)` cell.
#[derive(Debug, Clone)]
struct TrialCell {
    k_hat: usize,
    /// Signed φ error per pool entry, `None` when unmatched.
    errors: Vec<Option<f64>>,
    false_alarms: usize,
    crb_sub: Vec<f64>,
    crb_ny: Option<Vec<f64>>,
}

/// Monte Carlo aggregate for one `(K, array)` pair.
#[derive(Debug, Clone)]
pub struct RmseCell {
    pub k: usize,
    pub array: String,
    pub trials: usize,
    /// Trials with `K̂ = K`; only these enter the RMSE.
    pub correct_trials: usize,
    pub pooled: SquaredError,
    pub per_source: Vec<SquaredError>,
    /// Truths left unmatched in correct-`K̂` trials.
    pub missed: usize,
    pub false_alarms: usize,
    /// Mean over trials of `CRB_sub[k,k]`, per pool entry.
    pub crb_sub: Vec<f64>,
    /// Mean over trials of `CRB_Ny[k,k]`; `None` when any trial is rank-deficient.
    pub crb_ny: Option<Vec<f64>>,
    pub crb_ny_rank_deficient: usize,
}

impl RmseCell {
    pub fn detection_rate(&self) -> f64 {
        self.correct_trials as f64 / self.trials as f64
    }

    pub fn rmse(&self) -> Option<f64> {
        self.pooled.rmse()
    }

    pub fn crb_sub_pooled(&self) -> f64 {
        self.crb_sub.iter().sum::<f64>() / self.crb_sub.len() as f64
    }

    pub fn crb_ny_pooled(&self) -> Option<f64> {
        self.crb_ny.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Bounds on the first pool entry: `CRB_sub(one)` tracks only its own
    /// subband, `CRB_Ny(one)` every source.
    pub fn crb_sub_one(&self) -> f64 {
        self.crb_sub[0]
    }

    pub fn crb_ny_one(&self) -> Option<f64> {
        self.crb_ny.as_ref().map(|v| v[0])
    }
}

#[derive(Debug, Clone)]
pub struct RmseOutcome {
    pub cells: Vec<RmseCell>,
    pub warnings: Vec<String>,
}

impl RmseOutcome {
    pub fn cell(&self, k: usize, array: &str) -> Option<&RmseCell> {
        self.cells.iter().find(|c| c.k == k && c.array == array)
    }
}

fn rmse_trial(
    cfg: &ExperimentConfig,
    s: &Setup,
    jobs: &[(usize, usize)],
    max_k: usize,
    trial: usize,
) -> Result<Vec<TrialCell>, HarnessError> {
    let t_sub = cfg.snapshots;
    let mut rng = stream_rng(cfg.seed, trial as u64);
    let mut pool = draw_pool(&cfg.sources, &s.sampling, &s.spacings, t_sub, &mut rng)?;
    pool.truncate(max_k);
    let data_seed: u64 = rng.random();
    let spec = cfg.waveform.spec();

    jobs.iter()
        .map(|&(k, a)| {
            let (name, geometry) = &s.arrays[a];
            let sources: Vec<SourceSpec> = pool[..k].to_vec();
            let sc = Scenario::identifiable(geometry.clone(), s.sampling.clone(), sources.clone(), cfg.sigma2(), t_sub)
                .map_err(|e| HarnessError::field("sources", format!("trial {trial}, array '{name}', K = {k}: {e}")))?;
            let y = generate_snapshots(&sc, &spec, t_sub, data_seed)?;
            let est = estimate_all(&y.data, geometry, &s.sampling, &cfg.estimator.config(k, false))?;
            let truth = truths(&sc, &sources);
            let pairs = pair_estimates(&truth, &est.estimates);
            let errors: Vec<Option<f64>> = truth
                .iter()
                .zip(&pairs)
                .map(|(tr, p)| p.map(|j| est.estimates[j].phi - tr.phi))
                .collect();
            let matched = errors.iter().filter(|e| e.is_some()).count();

            let cols = scenario_columns(&sc, &sources);
            let r_s = source_covariance(&sc);
            let sub = crb::crb_sub(&sc, &r_s)?;
            let nyquist_sc = sc.with_snapshots(t_sub * s.sampling.reduction())?;
            let ny = match crb::crb_ny(&nyquist_sc, &r_s) {
                Ok(m) => Some(cols.iter().map(|&c| m[(c, c)]).collect()),
                Err(CoreError::RankDeficient(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(TrialCell {
                k_hat: est.source_count,
                errors,
                false_alarms: est.estimates.len() - matched,
                crb_sub: cols.iter().map(|&c| sub[(c, c)]).collect(),
                crb_ny: ny,
            })
        })
        .collect()
}

/// Monte Carlo RMSE of the spatial phases and the matching bounds, for every
/// `K` in the sweep and every configured array.
pub fn run_rmse(cfg: &ExperimentConfig) -> Result<RmseOutcome, HarnessError> {
    let s = setup(cfg)?;
    if cfg.snr_db.is_none() {
        return Err(HarnessError::field("snr_db", "the RMSE sweep needs a finite SNR"));
    }
    let mut warnings = Vec::new();
    if cfg.trials < MIN_RMSE_TRIALS {
        warnings.push(format!(
            "only {} trials; RMSE estimates below {MIN_RMSE_TRIALS} trials are noisy",
            cfg.trials
        ));
    }
    let counts = cfg.source_counts();
    let mut jobs = Vec::new();
    for &k in &counts {
        for (a, (name, g)) in s.arrays.iter().enumerate() {
            match capacity_error(name, g, &s.sampling, k) {
                Some(msg) => warnings.push(format!("skipped: {msg}")),
                None => jobs.push((k, a)),
            }
        }
    }
    let max_k = counts.iter().copied().max().unwrap_or(0);
    let pool = thread_pool(cfg)?;
    let per_trial: Vec<Vec<TrialCell>> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| rmse_trial(cfg, &s, &jobs, max_k, t))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let cells = jobs
        .iter()
        .enumerate()
        .map(|(j, &(k, a))| {
            let mut cell = RmseCell {
                k,
                array: s.arrays[a].0.clone(),
                trials: cfg.trials,
                correct_trials: 0,
                pooled: SquaredError::default(),
                per_source: vec![SquaredError::default(); k],
                missed: 0,
                false_alarms: 0,
                crb_sub: vec![0.0; k],
                crb_ny: Some(vec![0.0; k]),
                crb_ny_rank_deficient: 0,
            };
            for trial in &per_trial {
                let tc = &trial[j];
                for (acc, v) in cell.crb_sub.iter_mut().zip(&tc.crb_sub) {
                    *acc += v / cfg.trials as f64;
                }
                match (&mut cell.crb_ny, &tc.crb_ny) {
                    (Some(acc), Some(v)) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b / cfg.trials as f64),
                    (_, None) => {
                        cell.crb_ny = None;
                        cell.crb_ny_rank_deficient += 1;
                    }
                    (None, Some(_)) => {}
                }
                if tc.k_hat != k {
                    continue;
                }
                cell.correct_trials += 1;
                cell.false_alarms += tc.false_alarms;
                for (i, e) in tc.errors.iter().enumerate() {
                    match e {
                        Some(e) => {
                            cell.pooled.add(*e);
                            cell.per_source[i].add(*e);
                        }
                        None => cell.missed += 1,
                    }
                }
            }
            cell
        })
        .collect();
    Ok(RmseOutcome { cells, warnings })
}

pub fn rmse_report(cfg: &ExperimentConfig, outcome: &RmseOutcome) -> Report {
    let mut report = Report::new("rmse");
    report.warnings = outcome.warnings.clone();
    let mut table = Table::new(
        "rmse.csv",
        &[
            "k",
            "array",
            "trials",
            "correct_k_trials",
            "detection_rate",
            "paired_estimates",
            "missed",
            "false_alarms",
            "rmse_phi",
            "sqrt_crb_sub",
            "sqrt_crb_ny",
            "sqrt_crb_sub_one",
            "sqrt_crb_ny_one",
            "crb_ny_status",
        ],
    );
    let mut sources = Table::new(
        "rmse_sources.csv",
        &["k", "array", "source", "paired_estimates", "rmse_phi", "sqrt_crb_sub", "sqrt_crb_ny"],
    );
    for c in &outcome.cells {
        let status = if c.crb_ny.is_some() {
            "ok".to_string()
        } else {
            format!("rank-deficient in {} of {} trials", c.crb_ny_rank_deficient, c.trials)
        };
        table.push(vec![
            c.k.to_string(),
            c.array.clone(),
            c.trials.to_string(),
            c.correct_trials.to_string(),
            num(c.detection_rate()),
            c.pooled.count.to_string(),
            c.missed.to_string(),
            c.false_alarms.to_string(),
            opt(c.rmse()),
            num(c.crb_sub_pooled().sqrt()),
            opt(c.crb_ny_pooled().map(f64::sqrt)),
            num(c.crb_sub_one().sqrt()),
            opt(c.crb_ny_one().map(f64::sqrt)),
            status,
        ]);
        for (i, acc) in c.per_source.iter().enumerate() {
            sources.push(vec![
                c.k.to_string(),
                c.array.clone(),
                (i + 1).to_string(),
                acc.count.to_string(),
                opt(acc.rmse()),
                num(c.crb_sub[i].sqrt()),
                opt(c.crb_ny.as_ref().map(|v| v[i].sqrt())),
            ]);
        }

        report.checks.extend(Check::at_least(
            &format!("K={} {}: detection rate", c.k, c.array),
            c.detection_rate(),
            cfg.thresholds.min_detection_rate,
        ));
        if let Some(factor) = cfg.thresholds.max_rmse_over_crb {
            let ratio = c.rmse().map_or(f64::INFINITY, |r| r / c.crb_sub_pooled().sqrt());
            report.checks.push(Check::new(
                format!("K={} {}: pooled RMSE / sqrt(CRB_sub)", c.k, c.array),
                ratio <= factor,
                format!("{ratio:.4} <= {factor}"),
            ));
            for (i, acc) in c.per_source.iter().enumerate() {
                let ratio = acc.rmse().map_or(f64::INFINITY, |r| r / c.crb_sub[i].sqrt());
                report.checks.push(Check::new(
                    format!("K={} {}: source {} RMSE / sqrt(CRB_sub)", c.k, c.array, i + 1),
                    ratio <= factor,
                    format!("{ratio:.4} <= {factor}"),
                ));
            }
        }
    }

    let mut series = Vec::new();
    let arrays: Vec<String> = {
        let mut v: Vec<String> = Vec::new();
        for c in &outcome.cells {
            if !v.contains(&c.array) {
                v.push(c.array.clone());
            }
        }
        v
    };
    type Metric = fn(&RmseCell) -> Option<f64>;
    let metrics: [(&str, Metric, bool); 5] = [
        ("RMSE", |c| c.rmse(), false),
        ("sqrt CRB_sub", |c| Some(c.crb_sub_pooled().sqrt()), true),
        ("sqrt CRB_Ny", |c| c.crb_ny_pooled().map(f64::sqrt), true),
        ("sqrt CRB_sub(one)", |c| Some(c.crb_sub_one().sqrt()), true),
        ("sqrt CRB_Ny(one)", |c| c.crb_ny_one().map(f64::sqrt), true),
    ];
    for name in &arrays {
        for (label, metric, dashed) in &metrics {
            let points = outcome
                .cells
                .iter()
                .filter(|c| &c.array == name)
                .filter_map(|c| metric(c).map(|v| (c.k as f64, v)))
                .collect();
            series.push(Series {
                label: format!("{label} ({name})"),
                points,
                style: Style::Line { dashed: *dashed },
            });
        }
    }
    report.figures.push((
        "rmse.svg".into(),
        Plot {
            title: format!("RMSE of phase estimates versus number of sources (SNR {} dB)", cfg.snr_db.unwrap_or(f64::NAN)),
            x_label: "number of sources K".into(),
            y_label: "RMSE of φ (rad)".into(),
            log_y: true,
            series,
        },
    ));
    report.tables.push(table);
    report.tables.push(sources);
    report
}

// ---------------------------------------------------------------------------
// crb

#[derive(Debug, Clone, PartialEq)]
pub struct CrbRow {
    pub scenario: usize,
    pub array: String,
    pub k: usize,
    pub occupied_subbands: usize,
    /// Largest off-block entry of `CRB_sub` relative to its largest diagonal.
    pub off_block: f64,
    /// Largest deviation between `CRB_sub` and the per-subband blocks, relative
    /// to the largest diagonal.
    pub block_match: f64,
    /// `‖CRB_sub − CRB_Ny‖ / ‖CRB_Ny‖` for the most populated subband alone.
    pub equality_residual: f64,
    pub min_diagonal_ratio: Option<f64>,
    /// `min_k (CRB_Ny[k,k] − CRB_sub[k,k])`.
    pub min_diagonal_gap: Option<f64>,
    pub min_eigen_difference: Option<f64>,
    pub crb_ny_status: String,
}

/// Bound structure for `crb.scenarios` draws of the plan.
pub fn run_crb(cfg: &ExperimentConfig) -> Result<Vec<CrbRow>, HarnessError> {
    let s = setup(cfg)?;
    if cfg.sigma2() <= 0.0 {
        return Err(HarnessError::field("snr_db", "the CRB is undefined at zero noise; set a finite SNR"));
    }
    let convention = cfg.crb.convention.core();
    let pool = thread_pool(cfg)?;
    let rows: Vec<Vec<CrbRow>> = pool.install(|| {
        (0..cfg.crb.scenarios)
            .into_par_iter()
            .map(|i| crb_scenario(cfg, &s, convention, i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(rows.into_iter().flatten().collect())
}

fn crb_scenario(
    cfg: &ExperimentConfig,
    s: &Setup,
    convention: SnapshotConvention,
    index: usize,
) -> Result<Vec<CrbRow>, HarnessError> {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let pool = draw_pool(&cfg.sources, &s.sampling, &s.spacings, cfg.snapshots, &mut rng)?;
    let mut rows = Vec::new();
    for (name, geometry) in &s.arrays {
        if capacity_error(name, geometry, &s.sampling, pool.len()).is_some() {
            continue;
        }
        let sc = Scenario::identifiable(geometry.clone(), s.sampling.clone(), pool.clone(), cfg.sigma2(), cfg.snapshots)
            .map_err(|e| HarnessError::field("sources", format!("scenario {index}, array '{name}': {e}")))?;
        let r_s = source_covariance(&sc);
        let res = crb::crb_result(&sc, &r_s)?;
        let diag_max = (0..res.crb_sub.nrows()).fold(0.0f64, |m, i| m.max(res.crb_sub[(i, i)].abs()));
        let mut block_dev = 0.0f64;
        for b in &res.blocks {
            for (bi, i) in b.indices.clone().enumerate() {
                for (bj, j) in b.indices.clone().enumerate() {
                    block_dev = block_dev.max((res.crb_sub[(i, j)] - b.block[(bi, bj)]).abs());
                }
            }
        }

        let counts = sc.subband_counts();
        let busiest = (0..counts.len()).max_by_key(|&l| (counts[l], std::cmp::Reverse(l))).unwrap();
        let single: Vec<SourceSpec> = sc.sources()[sc.subband_range(busiest)].to_vec();
        let single_sc = sc.with_sources(single)?;
        let equality = compare_crb(&single_sc, &source_covariance(&single_sc), SnapshotConvention::Same)?
            .relative_difference;

        let (ratio, gap, eig, status) = match compare_crb(&sc, &r_s, convention) {
            Ok(c) => {
                let gap = (0..c.crb_sub.nrows())
                    .map(|k| c.crb_ny[(k, k)] - c.crb_sub[(k, k)])
                    .fold(f64::INFINITY, f64::min);
                (Some(c.min_ratio()), Some(gap), Some(c.min_eigen_difference), "ok".to_string())
            }
            Err(CoreError::RankDeficient(msg)) => (None, None, None, format!("rank-deficient: {msg}")),
            Err(e) => return Err(e.into()),
        };
        rows.push(CrbRow {
            scenario: index,
            array: name.clone(),
            k: sc.num_sources(),
            occupied_subbands: counts.iter().filter(|&&c| c > 0).count(),
            off_block: off_block_residual(&sc, &res.crb_sub),
            block_match: if diag_max > 0.0 { block_dev / diag_max } else { 0.0 },
            equality_residual: equality,
            min_diagonal_ratio: ratio,
            min_diagonal_gap: gap,
            min_eigen_difference: eig,
            crb_ny_status: status,
        });
    }
    Ok(rows)
}

pub fn crb_report(cfg: &ExperimentConfig, rows: &[CrbRow]) -> Report {
    let mut report = Report::new("crb");
    let mut table = Table::new(
        "crb.csv",
        &[
            "scenario",
            "array",
            "k",
            "occupied_subbands",
            "off_block_residual",
            "block_match_residual",
            "equality_residual",
            "min_diagonal_ratio",
            "min_diagonal_gap",
            "min_eigen_difference",
            "crb_ny_status",
        ],
    );
    for r in rows {
        table.push(vec![
            r.scenario.to_string(),
            r.array.clone(),
            r.k.to_string(),
            r.occupied_subbands.to_string(),
            num(r.off_block),
            num(r.block_match),
            num(r.equality_residual),
            opt(r.min_diagonal_ratio),
            opt(r.min_diagonal_gap),
            opt(r.min_eigen_difference),
            r.crb_ny_status.clone(),
        ]);
    }
    let worst = |f: fn(&CrbRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    report
        .checks
        .extend(Check::at_most("max off-block residual", worst(|r| r.off_block), cfg.thresholds.max_off_block));
    report.checks.extend(Check::at_most(
        "max equality residual",
        worst(|r| r.equality_residual),
        cfg.thresholds.max_equality_residual,
    ));
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.min_diagonal_gap).collect();
    if let Some(limit) = cfg.thresholds.min_diagonal_gap {
        let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        report.checks.push(Check::new(
            "min diagonal gap CRB_Ny - CRB_sub",
            !gaps.is_empty() && min_gap >= limit,
            format!("{min_gap:e} >= {limit:e} over {} comparable scenarios", gaps.len()),
        ));
    }
    report.tables.push(table);
    report
}

// ---------------------------------------------------------------------------
// validate

#[derive(Debug, Clone)]
pub struct FrontendOutcome {
    pub array: String,
    pub sensors: Vec<FrontendReport>,
    /// Relative Frobenius distance between the sample covariances of the
    /// aligned multicoset route and the direct model route.
    pub covariance_error: f64,
}

impl FrontendOutcome {
    pub fn max_rel_error(&self) -> f64 {
        self.sensors.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn excluded_bins(&self) -> usize {
        self.sensors.iter().map(|r| r.excluded_bins).sum()
    }
}

/// Nyquist-rate synthesis → multicoset sampling, checked against the aliasing
/// model per sensor and against the direct model route. Tone waveforms only.
pub fn run_validate(cfg: &ExperimentConfig) -> Result<Vec<FrontendOutcome>, HarnessError> {
    let s = setup(cfg)?;
    let t = cfg.snapshots;
    let l = s.sampling.reduction();
    let mut rng = stream_rng(cfg.seed, 0);
    let pool = draw_pool(&cfg.sources, &s.sampling, &s.spacings, t, &mut rng)?;
    let data_seed: u64 = rng.random();
    let spec = tone_spec(cfg);
    let mut out = Vec::new();
    for (name, geometry) in &s.arrays {
        let sc = Scenario::new(geometry.clone(), s.sampling.clone(), pool.clone(), cfg.sigma2(), t)
            .map_err(|e| HarnessError::field("sources", format!("array '{name}': {e}")))?;
        let x = synthesize_nyquist(&sc, &spec, t * l, data_seed)?;
        let sensors = (0..x.nrows())
            .map(|m| {
                let row: Vec<_> = x.row(m).iter().cloned().collect();
                frontend_residual(&row, &s.sampling, cfg.frontend.guard_bins, cfg.frontend.energy_floor)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let aligned = align_branches(&multicoset_sample(&x, &s.sampling)?, &s.sampling)?;
        let direct_sc = sc.with_sigma2(cfg.sigma2() / l as f64)?;
        let direct = generate_snapshots(&direct_sc, &spec, t, data_seed)?;
        let ra = sample_covariance(&aligned.data);
        let rd = sample_covariance(&direct.data);
        let covariance_error = (&ra - &rd).norm() / rd.norm();
        out.push(FrontendOutcome {
            array: name.clone(),
            sensors,
            covariance_error,
        });
    }
    Ok(out)
}

pub fn validate_report(cfg: &ExperimentConfig, outcomes: &[FrontendOutcome]) -> Report {
    let mut report = Report::new("validate");
    let mut table = Table::new(
        "frontend.csv",
        &["array", "sensor", "compared_bins", "excluded_bins", "max_rel_error", "covariance_error"],
    );
    for o in outcomes {
        for (m, r) in o.sensors.iter().enumerate() {
            table.push(vec![
                o.array.clone(),
                (m + 1).to_string(),
                r.compared_bins.to_string(),
                r.excluded_bins.to_string(),
                num(r.max_rel_error),
                num(o.covariance_error),
            ]);
        }
        if o.excluded_bins() > 0 {
            report.warnings.push(format!(
                "{}: {} significant bins near subband edges excluded (spectral leakage)",
                o.array,
                o.excluded_bins()
            ));
        }
        report.checks.extend(Check::at_most(
            &format!("{}: max spectral error", o.array),
            o.max_rel_error(),
            cfg.thresholds.max_spectral_error,
        ));
        report.checks.extend(Check::at_most(
            &format!("{}: covariance error", o.array),
            o.covariance_error,
            cfg.thresholds.max_covariance_error,
        ));
    }
    report.tables.push(table);
    report
}
