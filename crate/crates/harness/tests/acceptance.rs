//! Acceptance gate. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! non-zero when any criterion fails.

use std::error::Error;
use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use subnyq_core::crb::{
    compare_crb, crb_ny, crb_sub, derivative_matrices, off_block_residual, source_covariance, SnapshotConvention,
};
use subnyq_core::model::{
    doa_from_phase, modulation_matrix, numerical_rank, spatial_phase, DEFAULT_RANK_TOL,
};
use subnyq_core::{ArrayGeometry, MeasurementModel, SamplingConfig, Scenario, SourceSpec, C64};
use subnyq_harness::experiments::{run_identify, run_rmse, run_validate, stream_rng};
use subnyq_harness::ExperimentConfig;

type Outcome = Result<(bool, String), Box<dyn Error>>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

const F_N: f64 = 10e9;
const L: usize = 7;

fn sampling() -> SamplingConfig {
    SamplingConfig::full(F_N, L).unwrap()
}

fn arrays() -> [ArrayGeometry; 2] {
    [ArrayGeometry::mra7(), ArrayGeometry::ula(7).unwrap()]
}

/// Appends one source per entry of `bands` to `existing`, keeping carrier
/// offsets 0.01 apart and same-subband phases `min_sep` apart. `None` when a
/// source cannot be placed.
fn add_sources(
    rng: &mut ChaCha8Rng,
    geometry: &ArrayGeometry,
    bands: &[usize],
    existing: &[SourceSpec],
    min_sep: f64,
) -> Option<Vec<SourceSpec>> {
    let f_sub = F_N / L as f64;
    let key = |s: &SourceSpec| {
        let band = (s.freq_hz / f_sub).floor();
        let phi = spatial_phase(s.theta_deg, s.freq_hz, geometry.spacing(), F_N).unwrap();
        (band as usize, s.freq_hz / f_sub - band, phi)
    };
    let mut placed: Vec<(usize, f64, f64)> = existing.iter().map(key).collect();
    let mut out = existing.to_vec();
    for &band in bands {
        let mut ok = false;
        for _ in 0..2000 {
            let theta: f64 = rng.random_range(-60.0..60.0);
            let frac: f64 = rng.random_range(0.05..0.95);
            let freq = (band as f64 + frac) * f_sub;
            let phi = spatial_phase(theta, freq, geometry.spacing(), F_N).unwrap();
            let clash = placed
                .iter()
                .any(|&(b, fr, p)| (fr - frac).abs() < 0.01 || (b == band && (p - phi).abs() < min_sep));
            if !clash {
                placed.push((band, frac, phi));
                out.push(SourceSpec::new(theta, freq, rng.random_range(0.5..2.0)));
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(out)
}

fn draw_scenario(rng: &mut ChaCha8Rng, geometry: &ArrayGeometry, bands: &[usize], min_sep: f64) -> Scenario {
    loop {
        if let Some(sources) = add_sources(rng, geometry, bands, &[], min_sep) {
            let sigma2 = rng.random_range(0.01..1.0);
            return Scenario::identifiable(geometry.clone(), sampling(), sources, sigma2, 1000).unwrap();
        }
    }
}

/// `k` subbands drawn at random, at most two sources in subband 0 and three elsewhere.
fn random_bands(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut counts = [0usize; L];
    (0..k)
        .map(|_| loop {
            let b = rng.random_range(0..L);
            if counts[b] < if b == 0 { 2 } else { 3 } {
                counts[b] += 1;
                break b;
            }
        })
        .collect()
}

fn c1_identifiability() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/identify_k42.json");
    let cfg = ExperimentConfig::from_file(path)?;
    let out = run_identify(&cfg)?;
    let o = &out[0];
    let freq_frac = o.max_freq_error_hz / o.sub_rate_hz;
    let passed = o.k == 42 && o.all_recovered() && o.max_phase_error < 1e-3 && freq_frac < 0.01;
    Ok((
        passed,
        format!(
            "K = {}, K̂ = {}, matched {}, max |Δφ| = {:.2e} rad, max carrier error = {:.2e} f_sub",
            o.k, o.k_hat, o.matched, o.max_phase_error, freq_frac
        ),
    ))
}

fn c2_unitarity() -> Outcome {
    let b = modulation_matrix(&sampling());
    let gram = b.adjoint() * &b;
    let mut worst = 0.0f64;
    for i in 0..L {
        for j in 0..L {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    Ok((worst < 1e-12, format!("‖BᴴB − I‖_max = {worst:.2e}")))
}

fn c3_rank() -> Outcome {
    let mut rng = stream_rng(3, 0);
    let mut full = 0;
    let mut dup = 0;
    let mut worst = String::new();
    for i in 0..200 {
        let geometry = &arrays()[i % 2];
        let k = rng.random_range(1..=42usize);
        let mut order: Vec<usize> = (0..L).collect();
        order.shuffle(&mut rng);
        let bands: Vec<usize> = (0..k).map(|j| order[j % L]).collect();
        let sc = draw_scenario(&mut rng, geometry, &bands, 0.02);
        let rank = numerical_rank(MeasurementModel::new(&sc).measurement(), DEFAULT_RANK_TOL)?;
        if rank == k {
            full += 1;
        } else if worst.is_empty() {
            worst = format!("; first failure K = {k}, rank {rank}");
        }
        let mut sources = sc.sources().to_vec();
        sources.push(sources[rng.random_range(0..k)]);
        let twin = Scenario::new(geometry.clone(), sampling(), sources, 0.0, 1000)?;
        let rank = numerical_rank(MeasurementModel::new(&twin).measurement(), DEFAULT_RANK_TOL)?;
        if rank == k {
            dup += 1;
        } else if worst.is_empty() {
            worst = format!("; first failure with a repeated source: K = {}, rank {rank}", k + 1);
        }
    }
    Ok((
        full == 200 && dup == 200,
        format!("rank = K in {full}/200, rank = K − 1 with a repeated source in {dup}/200{worst}"),
    ))
}

fn c4_block_structure() -> Outcome {
    let mut rng = stream_rng(4, 0);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let k = rng.random_range(2..=14usize);
        let bands = random_bands(&mut rng, k);
        let sc = draw_scenario(&mut rng, &arrays()[i % 2], &bands, 0.2);
        let c = crb_sub(&sc, &source_covariance(&sc))?;
        worst = worst.max(off_block_residual(&sc, &c));
    }
    Ok((worst < 1e-10, format!("max off-block / max diagonal = {worst:.2e} over 100 scenarios")))
}

fn c5_equality() -> Outcome {
    let mut rng = stream_rng(5, 0);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let band = rng.random_range(0..L);
        let k = rng.random_range(1..=if band == 0 { 2 } else { 3 });
        let sc = draw_scenario(&mut rng, &arrays()[i % 2], &vec![band; k], 0.2);
        let cmp = compare_crb(&sc, &source_covariance(&sc), SnapshotConvention::Same)?;
        worst = worst.max(cmp.relative_difference);
    }
    Ok((worst < 1e-8, format!("max ‖CRB_sub − CRB_Ny‖ / ‖CRB_Ny‖ = {worst:.2e} over 100 single-subband scenarios")))
}

fn c6_ordering() -> Outcome {
    let mut rng = stream_rng(6, 0);
    let mut gap = f64::INFINITY;
    let mut eig = f64::INFINITY;
    for i in 0..100 {
        let k = rng.random_range(2..=6usize);
        let bands = loop {
            let b = random_bands(&mut rng, k);
            if b.iter().any(|&x| x != b[0]) {
                break b;
            }
        };
        let sc = draw_scenario(&mut rng, &arrays()[i % 2], &bands, 0.2);
        let cmp = compare_crb(&sc, &source_covariance(&sc), SnapshotConvention::Same)?;
        for j in 0..k {
            gap = gap.min(cmp.crb_ny[(j, j)] - cmp.crb_sub[(j, j)]);
        }
        eig = eig.min(cmp.min_eigen_difference);
    }
    Ok((
        gap >= -1e-12,
        format!("min diag(CRB_Ny − CRB_sub) = {gap:.2e}, min eigenvalue of the difference = {eig:.2e}"),
    ))
}

fn c7_closed_form() -> Outcome {
    let mut rng = stream_rng(7, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let band = rng.random_range(1..L);
        let freq = (band as f64 + rng.random_range(0.1..0.9)) * F_N / L as f64;
        let theta = rng.random_range(-70.0..70.0);
        let sigma2 = rng.random_range(0.001..2.0);
        let t = rng.random_range(10..5000usize);
        let sc = Scenario::identifiable(
            ArrayGeometry::ula(7)?,
            sampling(),
            vec![SourceSpec::new(theta, freq, 1.0)],
            sigma2,
            t,
        )?;
        // Σp² − (Σp)²/M = 91 − 63 = 28 for positions 0..6.
        let oracle = sigma2 / (56.0 * t as f64);
        let r_s = source_covariance(&sc);
        for v in [crb_sub(&sc, &r_s)?[(0, 0)], crb_ny(&sc, &r_s)?[(0, 0)]] {
            worst = worst.max((v - oracle).abs() / oracle);
        }
    }
    Ok((worst < 1e-10, format!("max relative error against σ²/(56T) = {worst:.2e} over 20 draws")))
}

/// Entry `(m P + i)` of a column of `G`, written out from the definitions.
fn g_column(positions: &[u32], cosets: &[usize], subband: usize, phi: f64) -> Vec<C64> {
    let mut col = Vec::new();
    for &p in positions {
        for &c in cosets {
            let a = C64::from_polar(1.0, -phi * p as f64);
            let b = C64::from_polar(1.0 / (L as f64).sqrt(), 2.0 * PI * (c * subband) as f64 / L as f64);
            col.push(a * b);
        }
    }
    col
}

fn c8_derivative() -> Outcome {
    let mut rng = stream_rng(8, 0);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut model_gap = 0.0f64;
    for i in 0..100 {
        let k = rng.random_range(1..=14usize);
        let bands = random_bands(&mut rng, k);
        let sc = draw_scenario(&mut rng, &arrays()[i % 2], &bands, 0.2);
        let g = MeasurementModel::new(&sc);
        let (_, e) = derivative_matrices(&sc);
        let pos = sc.geometry().positions();
        let cosets = sc.sampling().cosets();
        for j in 0..k {
            let (band, phi) = (sc.subbands()[j], sc.phases()[j]);
            let at = g_column(pos, cosets, band, phi);
            let up = g_column(pos, cosets, band, phi + h);
            let down = g_column(pos, cosets, band, phi - h);
            let (mut num, mut den) = (0.0, 0.0);
            for r in 0..at.len() {
                model_gap = model_gap.max((at[r] - g.measurement()[(r, j)]).norm());
                let fd = (up[r] - down[r]) / (2.0 * h);
                num += (fd - e[(r, j)]).norm_sqr();
                den += e[(r, j)].norm_sqr();
            }
            worst = worst.max((num / den).sqrt());
        }
    }
    Ok((
        worst < 1e-6 && model_gap < 1e-12,
        format!("max ‖ΔG/Δφ − E‖ / ‖E‖ = {worst:.2e}; G against entrywise oracle {model_gap:.1e}"),
    ))
}

fn c9_efficiency() -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "arrays": [{"name": "MRA", "preset": "mra"}],
            "sources": {"plan": "explicit", "list": [
                {"theta_deg": 20, "freq_hz": 1.8e9},
                {"theta_deg": -35, "freq_hz": 3.5e9},
                {"theta_deg": 50, "freq_hz": 6.0e9},
                {"theta_deg": -10, "freq_hz": 8.9e9}]},
            "snr_db": 20, "snapshots": 1000, "trials": 500, "seed": 9,
            "rmse": {"source_counts": [4]}
        }"#,
    )?;
    let out = run_rmse(&cfg)?;
    let cell = out.cell(4, "MRA").ok_or("no K = 4 cell")?;
    let mut passed = cell.correct_trials > 0;
    let mut worst = 0.0f64;
    for (acc, bound) in cell.per_source.iter().zip(&cell.crb_sub) {
        let ratio = acc.rmse().map_or(f64::INFINITY, |r| r / bound.sqrt());
        worst = worst.max(ratio);
        passed &= ratio <= 2.0;
    }
    Ok((
        passed,
        format!(
            "max RMSE / √CRB_sub = {worst:.3} over 4 sources, K̂ = 4 in {}/{} trials",
            cell.correct_trials, cell.trials
        ),
    ))
}

fn c10_more_sources_than_sensors() -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "arrays": [{"name": "MRA", "preset": "mra"}],
            "sources": {"plan": "random", "count": 10, "per_subband": 2},
            "snr_db": 20, "snapshots": 1000, "trials": 500, "seed": 10,
            "rmse": {"source_counts": [10]}
        }"#,
    )?;
    let out = run_rmse(&cfg)?;
    let cell = out.cell(10, "MRA").ok_or("no K = 10 cell")?;
    let rmse = cell.rmse();
    let passed = cell.detection_rate() >= 0.95
        && rmse.is_some_and(f64::is_finite)
        && cell.crb_ny.is_none()
        && cell.crb_ny_rank_deficient == cell.trials;
    Ok((
        passed,
        format!(
            "K̂ = 10 in {:.1}% of {} trials, RMSE = {}, CRB_Ny rank-deficient in {}/{} trials",
            100.0 * cell.detection_rate(),
            cell.trials,
            rmse.map_or("none".into(), |r| format!("{r:.2e} rad")),
            cell.crb_ny_rank_deficient,
            cell.trials
        ),
    ))
}

fn c11_mra_advantage() -> Outcome {
    let f_sub = F_N / L as f64;
    // 0.8 rad apart: resolvable by both arrays.
    let phis = [-2.0, -1.2, -0.4, 0.4, 1.2, 2.0];
    let fracs = [0.15, 0.3, 0.45, 0.6, 0.75, 0.9];
    let list: Vec<String> = phis
        .iter()
        .zip(fracs)
        .map(|(&phi, frac)| {
            let freq = (6.0 + frac) * f_sub;
            let theta = doa_from_phase(phi, freq, 1.0, F_N).unwrap();
            format!(r#"{{"theta_deg": {theta}, "freq_hz": {freq}}}"#)
        })
        .collect();
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "arrays": [{{"name": "ULA", "preset": "ula", "sensors": 7}}, {{"name": "MRA", "preset": "mra"}}],
            "sources": {{"plan": "explicit", "list": [{}]}},
            "snr_db": 20, "snapshots": 1000, "trials": 500, "seed": 11,
            "rmse": {{"source_counts": [6]}}
        }}"#,
        list.join(", ")
    ))?;
    let out = run_rmse(&cfg)?;
    let ula = out.cell(6, "ULA").ok_or("no ULA cell")?;
    let mra = out.cell(6, "MRA").ok_or("no MRA cell")?;
    let show = |v: Option<f64>| v.map_or("none".into(), |r| format!("{r:.3e}"));
    Ok((
        matches!((mra.rmse(), ula.rmse()), (Some(m), Some(u)) if m < u),
        format!(
            "pooled RMSE MRA = {} rad ({} misses), ULA = {} rad ({} misses)",
            show(mra.rmse()),
            mra.missed,
            show(ula.rmse()),
            ula.missed
        ),
    ))
}

fn c12_frontend() -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "arrays": [{"name": "MRA", "preset": "mra"}],
            "sources": {"plan": "explicit", "list": [{"theta_deg": 20, "freq_hz": 4.9643e9}]},
            "snr_db": null, "snapshots": 4096, "seed": 12
        }"#,
    )?;
    let out = run_validate(&cfg)?;
    let o = &out[0];
    let compared: usize = o.sensors.iter().map(|r| r.compared_bins).sum();
    let err = o.max_rel_error();
    Ok((
        err < 1e-6 && compared > 0,
        format!("max relative spectral error = {err:.2e} over {compared} bins, {} edge bins excluded", o.excluded_bins()),
    ))
}

fn c13_decoupling() -> Outcome {
    let mut rng = stream_rng(13, 0);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let geometry = &arrays()[done % 2];
        let k = rng.random_range(2..=10usize);
        let bands = random_bands(&mut rng, k);
        let base = draw_scenario(&mut rng, geometry, &bands, 0.2);
        let j = bands[rng.random_range(0..k)];
        let extra = rng.random_range(1..=2usize);
        let Some(sources) = add_sources(&mut rng, geometry, &vec![j; extra], base.sources(), 0.2) else {
            continue;
        };
        let Ok(grown) = base.with_sources(sources) else {
            continue;
        };
        let before = crb_sub(&base, &source_covariance(&base))?;
        let after = crb_sub(&grown, &source_covariance(&grown))?;
        for l in (0..L).filter(|&l| l != j) {
            let (r0, r1) = (base.subband_range(l), grown.subband_range(l));
            for (a, b) in r0.clone().zip(r1.clone()) {
                for (c, d) in r0.clone().zip(r1.clone()) {
                    let scale = before[(a, a)].abs().max(before[(c, c)].abs());
                    worst = worst.max((before[(a, c)] - after[(b, d)]).abs() / scale);
                }
            }
        }
        done += 1;
    }
    Ok((worst < 1e-12, format!("max relative change of C_l, l ≠ j = {worst:.2e} over 100 scenarios")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("C1", "identifiability at K = 42", c1_identifiability),
        ("C2", "modulation matrix unitarity", c2_unitarity),
        ("C3", "measurement matrix rank", c3_rank),
        ("C4", "CRB_sub block structure", c4_block_structure),
        ("C5", "single-subband equality", c5_equality),
        ("C6", "CRB_Ny ≥ CRB_sub on the diagonal", c6_ordering),
        ("C7", "closed-form single-source bound", c7_closed_form),
        ("C8", "derivative matrix", c8_derivative),
        ("C9", "estimator efficiency", c9_efficiency),
        ("C10", "more sources than sensors", c10_more_sources_than_sensors),
        ("C11", "MRA advantage", c11_mra_advantage),
        ("C12", "front-end spectra", c12_frontend),
        ("C13", "subband decoupling", c13_decoupling),
    ];
    let mut failed = 0;
    for (id, title, run) in criteria {
        let start = Instant::now();
        let (passed, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {id} {title}: {detail} ({:.1}s)", start.elapsed().as_secs_f64());
        failed += usize::from(!passed);
    }
    if failed == 0 {
        println!("all 13 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} of 13 criteria failed");
        ExitCode::FAILURE
    }
}
