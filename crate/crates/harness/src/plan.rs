//! Source plans: the explicit list from the config, or a randomized draw.
//!
//! The randomized pool places entry `i` in subband `q[i mod L]` for a random
//! permutation `q`, so entries `i, i + L, i + 2L, …` share a subband and the first
//! `K` entries occupy `min(K, L)` subbands. DOAs are uniform over the configured
//! range; carriers are uniform inside their subband away from the edges.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use subnyq_core::{SamplingConfig, SourceSpec};

use crate::config::SourcePlanConfig;
use crate::error::HarnessError;

const MAX_ATTEMPTS: usize = 100_000;

/// Draws the plan's source pool (explicit plans are returned unchanged).
///
/// `spacings` lists the sensor spacings of every array the pool will be used
/// with; same-subband phase separation is enforced for all of them.
pub fn draw_pool<R: Rng>(
    plan: &SourcePlanConfig,
    sampling: &SamplingConfig,
    spacings: &[f64],
    snapshots: usize,
    rng: &mut R,
) -> Result<Vec<SourceSpec>, HarnessError> {
    let (count, theta_range, min_sep, margin, offset_sep) = match plan {
        SourcePlanConfig::Explicit { list } => return Ok(list.iter().map(|&s| s.into()).collect()),
        SourcePlanConfig::Random {
            count,
            theta_range_deg,
            min_phase_separation,
            edge_margin,
            min_offset_separation,
            ..
        } => (
            *count,
            *theta_range_deg,
            *min_phase_separation,
            *edge_margin,
            min_offset_separation.unwrap_or(2.0 / snapshots as f64),
        ),
    };
    let l = sampling.reduction();
    let f_sub = sampling.sub_rate_hz();
    let f_n = sampling.nyquist_hz();
    let min_spacing = spacings.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut order: Vec<usize> = (0..l).collect();
    order.shuffle(rng);

    // (subband, offset fraction, sin θ)
    let mut drawn: Vec<(usize, f64, f64)> = Vec::with_capacity(count);
    let mut sources = Vec::with_capacity(count);
    for i in 0..count {
        let band = order[i % l];
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(HarnessError::field(
                    "sources",
                    format!("could not place source {} under the separation constraints", i + 1),
                ));
            }
            let theta: f64 = rng.random_range(theta_range[0]..theta_range[1]);
            let frac: f64 = rng.random_range(margin..1.0 - margin);
            let sin = theta.to_radians().sin();
            let freq = (band as f64 + frac) * f_sub;
            let clash = drawn.iter().any(|&(b, fr, s)| {
                if (fr - frac).abs() < offset_sep {
                    return true;
                }
                if b != band {
                    return false;
                }
                let other = (b as f64 + fr) * f_sub;
                let dphi = PI * min_spacing * (sin * freq - s * other).abs() / f_n;
                dphi < min_sep
            });
            if !clash {
                drawn.push((band, frac, sin));
                sources.push(SourceSpec::new(theta, freq, 1.0));
                break;
            }
        }
    }
    Ok(sources)
}
