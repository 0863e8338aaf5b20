//! Synthetic sub-Nyquist data.
//!
//! Two routes produce the `MP × T` branch-output matrix:
//!
//! - [`generate_snapshots`] draws columns directly from `y[n] = G s[n] + (I_M ⊗ B) w[n]`.
//! - [`synthesize_nyquist`] builds the analytic Nyquist-rate sensor signals, and
//!   [`multicoset_sample`] decimates them branch by branch. [`align_branches`]
//!   then removes the per-branch fractional delay `exp(j 2π f c_p T_N)` and the
//!   `√L` gain so the result is distributed like the model route.
//!
//! Row `m * P + p` always holds branch `p` of sensor `m`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::model::{modulation_matrix, steering_matrix, MeasurementModel, Scenario};
use crate::{CMatrix, Error, Result, SamplingConfig, C64};

/// Source waveform family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformMode {
    /// Complex exponential at the source carrier with a random initial phase.
    Tone,
    /// Independent circular Gaussian samples, `CN(0, power)`, per snapshot.
    Gaussian,
}

/// How each source's sample stream is generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceWaveformSpec {
    pub mode: WaveformMode,
    /// Envelope bandwidth as a fraction of `f_sub`. Zero gives a pure tone; a
    /// positive value modulates the tone with a unit-power first-order
    /// Gauss-Markov envelope of roughly that bandwidth. Ignored in Gaussian mode.
    pub bandwidth_fraction: f64,
}

impl SourceWaveformSpec {
    pub fn tone() -> Self {
        Self {
            mode: WaveformMode::Tone,
            bandwidth_fraction: 0.0,
        }
    }

    pub fn gaussian() -> Self {
        Self {
            mode: WaveformMode::Gaussian,
            bandwidth_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta = self.bandwidth_fraction;
        if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
            return Err(Error::invalid(format!(
                "envelope bandwidth fraction {beta} not in [0, 1)"
            )));
        }
        Ok(())
    }
}

/// Where a snapshot block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataDomain {
    /// Drawn from the union model.
    Model,
    /// Raw multicoset decimation of Nyquist-rate data.
    TimeDomainRaw,
    /// Decimated data after [`align_branches`]; statistically equivalent to `Model`.
    TimeDomainAligned,
}

/// `MP × T` branch outputs at rate `f_sub`.
#[derive(Debug, Clone)]
pub struct SnapshotBlock {
    pub data: CMatrix,
    pub sensors: usize,
    pub branches: usize,
    pub rate_hz: f64,
    pub domain: DataDomain,
}

impl SnapshotBlock {
    pub fn snapshots(&self) -> usize {
        self.data.ncols()
    }

    /// The `P` branch streams of sensor `m` as a `P × T` view.
    pub fn sensor_rows(&self, m: usize) -> CMatrix {
        self.data.rows(m * self.branches, self.branches).into_owned()
    }
}

pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

/// Per-source random state shared by both synthesis routes, drawn first so
/// the same seed gives the same initial phases on either route.
fn draw_initial_phases(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.random::<f64>() * 2.0 * PI).collect()
}

/// Unit-power first-order Gauss-Markov envelope with pole `rho`.
struct Envelope {
    rho: f64,
    innovation: f64,
    state: C64,
}

impl Envelope {
    fn new(rng: &mut ChaCha8Rng, bandwidth_fraction: f64, samples_per_sub_period: f64) -> Option<Self> {
        if bandwidth_fraction == 0.0 {
            return None;
        }
        let rho = (-PI * bandwidth_fraction / samples_per_sub_period).exp();
        Some(Self {
            rho,
            innovation: (1.0 - rho * rho).sqrt(),
            state: complex_normal(rng, 1.0),
        })
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> C64 {
        let out = self.state;
        self.state = self.state * self.rho + complex_normal(rng, 1.0) * self.innovation;
        out
    }
}

fn tone_sample(cycles_per_sample: f64, n: usize, psi: f64) -> C64 {
    let turns = (cycles_per_sample * n as f64).fract();
    C64::from_polar(1.0, 2.0 * PI * turns + psi)
}

/// `K × T` source streams at the sub-Nyquist rate.
fn source_streams(
    scenario: &Scenario,
    spec: &SourceWaveformSpec,
    snapshots: usize,
    rng: &mut ChaCha8Rng,
) -> CMatrix {
    let k = scenario.num_sources();
    let psi = draw_initial_phases(rng, k);
    let f_sub = scenario.sampling().sub_rate_hz();
    let offsets = scenario.baseband_offsets();
    let mut s = CMatrix::zeros(k, snapshots);
    match spec.mode {
        WaveformMode::Tone => {
            let mut envelopes: Vec<Option<Envelope>> = (0..k)
                .map(|_| Envelope::new(rng, spec.bandwidth_fraction, 1.0))
                .collect();
            for n in 0..snapshots {
                for (i, src) in scenario.sources().iter().enumerate() {
                    let env = envelopes[i]
                        .as_mut()
                        .map_or(C64::new(1.0, 0.0), |e| e.next(rng));
                    s[(i, n)] = tone_sample(offsets[i] / f_sub, n, psi[i]) * env * src.power.sqrt();
                }
            }
        }
        WaveformMode::Gaussian => {
            for n in 0..snapshots {
                for (i, src) in scenario.sources().iter().enumerate() {
                    s[(i, n)] = complex_normal(rng, src.power);
                }
            }
        }
    }
    s
}

/// Draw `snapshots` columns of `G s[n] + (I_M ⊗ B) w[n]` with `w[n] ~ CN(0, σ² I)`.
pub fn generate_snapshots(
    scenario: &Scenario,
    spec: &SourceWaveformSpec,
    snapshots: usize,
    seed: u64,
) -> Result<SnapshotBlock> {
    spec.validate()?;
    if snapshots == 0 {
        return Err(Error::invalid("snapshot count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MeasurementModel::new(scenario);
    let streams = source_streams(scenario, spec, snapshots, &mut rng);
    let mut data = model.measurement() * streams;

    let sigma2 = scenario.sigma2();
    if sigma2 > 0.0 {
        let stacked_len = model.sensors() * scenario.sampling().reduction();
        let mut w = vec![C64::new(0.0, 0.0); stacked_len];
        for n in 0..snapshots {
            w.iter_mut().for_each(|v| *v = complex_normal(&mut rng, sigma2));
            for (row, v) in model.apply_noise_operator(&w).into_iter().enumerate() {
                data[(row, n)] += v;
            }
        }
    }
    Ok(SnapshotBlock {
        data,
        sensors: model.sensors(),
        branches: model.branches(),
        rate_hz: scenario.sampling().sub_rate_hz(),
        domain: DataDomain::Model,
    })
}

/// Analytic sensor signals sampled at `f_N`: `x_m[n] = Σ_k A_mk s_k(n T_N) + w_m[n]`
/// with `w_m[n] ~ CN(0, σ²)`. Tone waveforms only.
pub fn synthesize_nyquist(
    scenario: &Scenario,
    spec: &SourceWaveformSpec,
    samples: usize,
    seed: u64,
) -> Result<CMatrix> {
    spec.validate()?;
    if spec.mode != WaveformMode::Tone {
        return Err(Error::invalid(
            "the Nyquist-rate front end only synthesises tone waveforms",
        ));
    }
    let f_n = scenario.sampling().nyquist_hz();
    if let Some(s) = scenario.sources().iter().find(|s| s.freq_hz >= f_n) {
        return Err(Error::invalid(format!("carrier {} Hz not below f_N", s.freq_hz)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = scenario.num_sources();
    let psi = draw_initial_phases(&mut rng, k);
    let l_count = scenario.sampling().reduction() as f64;
    let mut envelopes: Vec<Option<Envelope>> = (0..k)
        .map(|_| Envelope::new(&mut rng, spec.bandwidth_fraction, l_count))
        .collect();

    let mut s = CMatrix::zeros(k, samples);
    for n in 0..samples {
        for (i, src) in scenario.sources().iter().enumerate() {
            let env = envelopes[i]
                .as_mut()
                .map_or(C64::new(1.0, 0.0), |e| e.next(&mut rng));
            s[(i, n)] = tone_sample(src.freq_hz / f_n, n, psi[i]) * env * src.power.sqrt();
        }
    }
    let a = steering_matrix(scenario.geometry(), scenario.phases());
    let mut x = a * s;
    let sigma2 = scenario.sigma2();
    if sigma2 > 0.0 {
        for n in 0..samples {
            for m in 0..x.nrows() {
                x[(m, n)] += complex_normal(&mut rng, sigma2);
            }
        }
    }
    Ok(x)
}

/// Multicoset decimation: `y_mp[n] = x_m[n L + c_p]` for `n < ⌊N / L⌋`.
pub fn multicoset_sample(nyquist: &CMatrix, sampling: &SamplingConfig) -> Result<SnapshotBlock> {
    let l_count = sampling.reduction();
    let n = nyquist.ncols();
    if n < l_count {
        return Err(Error::invalid(format!(
            "need at least L = {l_count} Nyquist samples, got {n}"
        )));
    }
    let m = nyquist.nrows();
    let p = sampling.branches();
    let t = n / l_count;
    let data = CMatrix::from_fn(m * p, t, |row, col| {
        let (sensor, branch) = (row / p, row % p);
        nyquist[(sensor, col * l_count + sampling.cosets()[branch])]
    });
    Ok(SnapshotBlock {
        data,
        sensors: m,
        branches: p,
        rate_hz: sampling.sub_rate_hz(),
        domain: DataDomain::TimeDomainRaw,
    })
}

/// Remove the branch delay `c_p T_N` (a frequency-dependent phase
/// `exp(j 2π f c_p T_N)` on the DFT grid of each branch) and the `√L` gain of
/// raw decimation. The correction is circular, so it is exact for tones on the
/// DFT grid and leaks slightly otherwise.
pub fn align_branches(block: &SnapshotBlock, sampling: &SamplingConfig) -> Result<SnapshotBlock> {
    if block.domain != DataDomain::TimeDomainRaw {
        return Err(Error::invalid("only raw multicoset output can be aligned"));
    }
    if block.branches != sampling.branches() {
        return Err(Error::invalid("branch count does not match the sampling pattern"));
    }
    let t = block.snapshots();
    let l_count = sampling.reduction();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(t);
    let inv = planner.plan_fft_inverse(t);
    let scale = 1.0 / (t as f64 * (l_count as f64).sqrt());
    let mut data = block.data.clone();
    let mut buf = vec![C64::new(0.0, 0.0); t];
    for row in 0..data.nrows() {
        let c = sampling.cosets()[row % block.branches] as f64;
        buf.iter_mut().enumerate().for_each(|(n, v)| *v = data[(row, n)]);
        fwd.process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            *v *= C64::from_polar(scale, -2.0 * PI * k as f64 * c / (t as f64 * l_count as f64));
        }
        inv.process(&mut buf);
        buf.iter().enumerate().for_each(|(n, v)| data[(row, n)] = *v);
    }
    Ok(SnapshotBlock {
        data,
        domain: DataDomain::TimeDomainAligned,
        ..block.clone()
    })
}

/// Outcome of comparing decimated branch spectra with `B X̄(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendReport {
    /// Largest `‖√L e^{-j2πf c T_N} Y(f) − B X̄(f)‖ / ‖B X̄(f)‖` over compared bins.
    pub max_rel_error: f64,
    pub compared_bins: usize,
    /// Significant bins skipped because they sit within the guard of a subband edge.
    pub excluded_bins: usize,
}

/// Checks one sensor's multicoset branch spectra against the aliasing model.
///
/// The Nyquist record is truncated to a multiple of `L`, transformed with a dense
/// FFT, folded into the `L` subband slices `X̄_l[k] = X[k + l N/L]` and mixed by
/// `B`. Each branch is transformed at the sub-rate, its delay phase removed and
/// scaled by `√L`. Bins whose model energy is below `energy_floor` times the peak
/// are ignored; bins within `guard_bins` of a subband edge are excluded and counted.
pub fn frontend_residual(
    nyquist_row: &[C64],
    sampling: &SamplingConfig,
    guard_bins: usize,
    energy_floor: f64,
) -> Result<FrontendReport> {
    let l_count = sampling.reduction();
    let n_sub = nyquist_row.len() / l_count;
    if n_sub == 0 {
        return Err(Error::invalid("record shorter than one sub-Nyquist period"));
    }
    let n = n_sub * l_count;
    let mut planner = FftPlanner::<f64>::new();

    let mut dense = nyquist_row[..n].to_vec();
    planner.plan_fft_forward(n).process(&mut dense);

    let b = modulation_matrix(sampling);
    let p = sampling.branches();
    let model = CMatrix::from_fn(p, n_sub, |i, k| {
        (0..l_count).map(|l| b[(i, l)] * dense[k + l * n_sub]).sum()
    });

    let sub_fft = planner.plan_fft_forward(n_sub);
    let root_l = (l_count as f64).sqrt();
    let mut measured = CMatrix::zeros(p, n_sub);
    for (i, &c) in sampling.cosets().iter().enumerate() {
        let mut y: Vec<C64> = (0..n_sub).map(|j| nyquist_row[j * l_count + c]).collect();
        sub_fft.process(&mut y);
        for (k, v) in y.into_iter().enumerate() {
            let delay = C64::from_polar(root_l, -2.0 * PI * (k * c) as f64 / n as f64);
            measured[(i, k)] = v * delay;
        }
    }

    let energy: Vec<f64> = (0..n_sub).map(|k| model.column(k).norm()).collect();
    let peak = energy.iter().cloned().fold(0.0, f64::max);
    let mut report = FrontendReport {
        max_rel_error: 0.0,
        compared_bins: 0,
        excluded_bins: 0,
    };
    for k in 0..n_sub {
        if peak == 0.0 || energy[k] < energy_floor * peak {
            continue;
        }
        if k < guard_bins || k + guard_bins >= n_sub {
            report.excluded_bins += 1;
            continue;
        }
        let err = (measured.column(k) - model.column(k)).norm() / energy[k];
        report.max_rel_error = report.max_rel_error.max(err);
        report.compared_bins += 1;
    }
    Ok(report)
}

const MAGIC: &[u8; 4] = b"SNYQ";
const FORMAT_VERSION: u32 = 1;

/// Writes the binary snapshot format: a 32-byte little-endian header
/// (`"SNYQ"`, version `u32`, `M u32`, `P u32`, `T u64`, `f_sub f64`) followed by
/// the data row-major as interleaved `f64` real/imaginary pairs.
pub fn write_snapshots<W: Write>(mut out: W, block: &SnapshotBlock) -> Result<()> {
    let dims = |v: usize| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} exceeds u32")))
    };
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&dims(block.sensors)?.to_le_bytes())?;
    out.write_all(&dims(block.branches)?.to_le_bytes())?;
    out.write_all(&(block.snapshots() as u64).to_le_bytes())?;
    out.write_all(&block.rate_hz.to_le_bytes())?;
    let mut row_buf = Vec::with_capacity(16 * block.snapshots());
    for r in 0..block.data.nrows() {
        row_buf.clear();
        for v in block.data.row(r).iter() {
            row_buf.extend_from_slice(&v.re.to_le_bytes());
            row_buf.extend_from_slice(&v.im.to_le_bytes());
        }
        out.write_all(&row_buf)?;
    }
    Ok(())
}

/// Reads a block written by [`write_snapshots`]. The domain is not stored and
/// comes back as [`DataDomain::Model`].
pub fn read_snapshots<R: Read>(mut input: R) -> Result<SnapshotBlock> {
    let mut header = [0u8; 32];
    input.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let sensors = u32_at(8) as usize;
    let branches = u32_at(12) as usize;
    let t = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let rate_hz = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let rows = sensors * branches;
    let mut raw = vec![0u8; rows * t * 16];
    input.read_exact(&mut raw)?;
    let f = |i: usize| f64::from_le_bytes(raw[i * 8..i * 8 + 8].try_into().unwrap());
    let data = CMatrix::from_fn(rows, t, |r, c| {
        let i = 2 * (r * t + c);
        C64::new(f(i), f(i + 1))
    });
    Ok(SnapshotBlock {
        data,
        sensors,
        branches,
        rate_hz,
        domain: DataDomain::Model,
    })
}

pub fn write_snapshot_file(path: impl AsRef<Path>, block: &SnapshotBlock) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_snapshots(file, block)
}

pub fn read_snapshot_file(path: impl AsRef<Path>) -> Result<SnapshotBlock> {
    read_snapshots(std::io::BufReader::new(std::fs::File::open(path)?))
}
