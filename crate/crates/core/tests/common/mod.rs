#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subnyq_core::{ArrayGeometry, SamplingConfig, Scenario, SourceSpec};

pub const F_N: f64 = 10e9;

pub fn sampling(l: usize) -> SamplingConfig {
    SamplingConfig::full(F_N, l).unwrap()
}

/// Source in zero-based `subband` of an `L`-subband pattern whose spatial phase
/// (with `d = 1`) is `phi`, at fractional position `frac` inside the subband.
pub fn source_at(l: usize, subband: usize, frac: f64, phi: f64, power: f64) -> SourceSpec {
    let f = (subband as f64 + frac) * F_N / l as f64;
    let s = phi * F_N / (std::f64::consts::PI * f);
    assert!(s.abs() < 1.0, "phase {phi} unreachable at {f} Hz");
    SourceSpec::new(s.asin().to_degrees(), f, power)
}

/// Random identifiable scenario with up to `k` sources over random subbands, at
/// most `M - 1` per subband, distinct carriers, and phases at least `min_sep`
/// apart. Low subbands can hold only a few well-separated phases, so a subband
/// that keeps rejecting draws is closed and the result may have fewer sources.
pub fn random_identifiable(
    rng: &mut ChaCha8Rng,
    geometry: &ArrayGeometry,
    l: usize,
    k: usize,
    sigma2: f64,
    snapshots: usize,
    min_sep: f64,
) -> Scenario {
    let cap = geometry.sensors() - 1;
    let f_sub = F_N / l as f64;
    let mut per: Vec<Vec<(f64, f64)>> = vec![Vec::new(); l];
    let mut rejects = vec![0usize; l];
    let mut sources = Vec::new();
    while sources.len() < k {
        let open: Vec<usize> = (0..l).filter(|&b| per[b].len() < cap && rejects[b] < 200).collect();
        if open.is_empty() {
            break;
        }
        let sb = open[rng.random_range(0..open.len())];
        let frac: f64 = rng.random_range(0.05..0.95);
        let theta: f64 = rng.random_range(-60.0..60.0);
        let f = (sb as f64 + frac) * f_sub;
        let phi = std::f64::consts::PI * geometry.spacing() * theta.to_radians().sin() * f / F_N;
        if per[sb].iter().any(|&(p, fr)| (p - phi).abs() < min_sep || (fr - frac).abs() < 0.02) {
            rejects[sb] += 1;
            continue;
        }
        per[sb].push((phi, frac));
        sources.push(SourceSpec::new(theta, f, 1.0));
    }
    Scenario::identifiable(geometry.clone(), SamplingConfig::full(F_N, l).unwrap(), sources, sigma2, snapshots)
        .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
