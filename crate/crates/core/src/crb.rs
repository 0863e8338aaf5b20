//! Cramér-Rao bounds on the spatial phases.
//!
//! Both bounds share the deterministic form
//!
//! ```text
//! CRB = σ² / (2T) · ( Re[ (Xᴴ P⊥ X) ⊙ R_Sᴴ ] )⁻¹
//! ```
//!
//! with `(X, P⊥) = (E, I − G G†)` for the sub-Nyquist receiver and
//! `(D, I − A A†)` for a Nyquist-sampled array of the same geometry. Because
//! `Bᴴ B = I` when `P = L`, the sub-Nyquist bound splits into independent
//! per-subband blocks `C_l`, each equal to the Nyquist bound of subband `l`'s
//! sources alone.

use std::ops::Range;

use nalgebra::DVector;

use crate::linalg::{invert_spd, max_abs, project_off};
use crate::model::{modulation_column, MeasurementModel, Scenario};
use crate::{CMatrix, Error, RMatrix, Result, C64};

/// Singular values below this fraction of the largest are treated as zero in `G†`/`A†`.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Fisher matrices with reciprocal condition below this are reported as singular.
const FISHER_RCOND_MIN: f64 = 1e-13;

/// `R_S = diag(powers)`: uncorrelated sources.
pub fn source_covariance(scenario: &Scenario) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_iterator(
        scenario.num_sources(),
        scenario.sources().iter().map(|s| C64::new(s.power, 0.0)),
    ))
}

/// `D = dA/dφ` (`M × K`) and `E = dG/dφ` (`MP × K`), column `k` differentiated
/// with respect to `φ_k` only.
pub fn derivative_matrices(scenario: &Scenario) -> (CMatrix, CMatrix) {
    let model = MeasurementModel::new(scenario);
    let pos = scenario.geometry().positions();
    let a = model.steering();
    let d = CMatrix::from_fn(a.nrows(), a.ncols(), |m, k| {
        a[(m, k)] * C64::new(0.0, -(pos[m] as f64))
    });
    let p = scenario.sampling().branches();
    let mut e = CMatrix::zeros(a.nrows() * p, a.ncols());
    for (k, &l) in scenario.subbands().iter().enumerate() {
        let b = modulation_column(scenario.sampling(), l);
        for m in 0..a.nrows() {
            for (j, bj) in b.iter().enumerate() {
                e[(m * p + j, k)] = d[(m, k)] * bj;
            }
        }
    }
    (d, e)
}

fn check_inputs(scenario: &Scenario, r_s: &CMatrix) -> Result<()> {
    if scenario.sigma2() <= 0.0 {
        return Err(Error::invalid("the CRB needs a positive noise power"));
    }
    let k = scenario.num_sources();
    if r_s.nrows() != k || r_s.ncols() != k {
        return Err(Error::invalid(format!(
            "source covariance is {}x{}, expected {k}x{k}",
            r_s.nrows(),
            r_s.ncols()
        )));
    }
    let scale = r_s.iter().fold(0.0f64, |a, v| a.max(v.norm())).max(f64::MIN_POSITIVE);
    if (r_s - r_s.adjoint()).iter().any(|v| v.norm() > 1e-12 * scale) {
        return Err(Error::invalid("source covariance must be Hermitian"));
    }
    Ok(())
}

/// `σ²/(2T) (Re[(Xᴴ P⊥ X) ⊙ R_Sᴴ])⁻¹` where `P⊥` projects off the columns of `manifold`.
fn deterministic_bound(
    sigma2: f64,
    snapshots: f64,
    deriv: &CMatrix,
    manifold: &CMatrix,
    r_s: &CMatrix,
    what: &str,
) -> Result<RMatrix> {
    let k = manifold.ncols();
    if k == 0 {
        return Ok(RMatrix::zeros(0, 0));
    }
    let (resid, rank) = project_off(manifold, deriv, PINV_REL_TOL);
    if rank < k {
        return Err(Error::RankDeficient(format!(
            "{what} has numerical rank {rank} < K = {k}"
        )));
    }
    let h = resid.adjoint() * resid;
    let fisher = RMatrix::from_fn(k, k, |i, j| (h[(i, j)] * r_s[(j, i)].conj()).re);
    let inv = invert_spd(&fisher, FISHER_RCOND_MIN).ok_or_else(|| {
        Error::RankDeficient(format!("Re((X^H P X) ⊙ R_S^H) is singular for {what}"))
    })?;
    Ok(inv * (sigma2 / (2.0 * snapshots)))
}

fn crb_sub_at(scenario: &Scenario, r_s: &CMatrix, snapshots: f64) -> Result<RMatrix> {
    check_inputs(scenario, r_s)?;
    let sb = scenario.subbands();
    for i in 0..sb.len() {
        for j in 0..sb.len() {
            if sb[i] != sb[j] && r_s[(i, j)].norm() > 0.0 {
                return Err(Error::invalid(
                    "sources in different subbands must be uncorrelated",
                ));
            }
        }
    }
    let model = MeasurementModel::new(scenario);
    let (_, e) = derivative_matrices(scenario);
    deterministic_bound(scenario.sigma2(), snapshots, &e, model.measurement(), r_s, "G")
}

fn crb_ny_at(scenario: &Scenario, r_s: &CMatrix, snapshots: f64) -> Result<RMatrix> {
    check_inputs(scenario, r_s)?;
    let m = scenario.geometry().sensors();
    let k = scenario.num_sources();
    if k >= m {
        return Err(Error::RankDeficient(format!(
            "a {m}-sensor Nyquist array cannot resolve K = {k} sources"
        )));
    }
    let model = MeasurementModel::new(scenario);
    let (d, _) = derivative_matrices(scenario);
    deterministic_bound(scenario.sigma2(), snapshots, &d, model.steering(), r_s, "A")
}

/// Sub-Nyquist bound from the full `(G, E)` expression, at the scenario's snapshot count.
pub fn crb_sub(scenario: &Scenario, r_s: &CMatrix) -> Result<RMatrix> {
    crb_sub_at(scenario, r_s, scenario.snapshots() as f64)
}

/// Nyquist-sampling bound from `(A, D)`, at the scenario's snapshot count.
pub fn crb_ny(scenario: &Scenario, r_s: &CMatrix) -> Result<RMatrix> {
    crb_ny_at(scenario, r_s, scenario.snapshots() as f64)
}

/// `C_l` for one occupied subband, covering sources `indices`.
#[derive(Debug, Clone)]
pub struct SubbandBlock {
    pub subband: usize,
    pub indices: Range<usize>,
    pub block: RMatrix,
}

/// Per-subband blocks `C_l = σ²/(2T) (Re[(D_lᴴ P_{A_l} D_l) ⊙ R_{S_l}ᴴ])⁻¹`,
/// computed from each subband's steering alone. Empty subbands are skipped.
pub fn subband_blocks(scenario: &Scenario, r_s: &CMatrix) -> Result<Vec<SubbandBlock>> {
    check_inputs(scenario, r_s)?;
    let model = MeasurementModel::new(scenario);
    let (d, _) = derivative_matrices(scenario);
    let t = scenario.snapshots() as f64;
    let mut blocks = Vec::new();
    for l in 0..scenario.sampling().reduction() {
        let idx = scenario.subband_range(l);
        if idx.is_empty() {
            continue;
        }
        let a_l = model.steering().columns(idx.start, idx.len()).into_owned();
        let d_l = d.columns(idx.start, idx.len()).into_owned();
        let r_l = r_s.view((idx.start, idx.start), (idx.len(), idx.len())).into_owned();
        let block = deterministic_bound(scenario.sigma2(), t, &d_l, &a_l, &r_l, "A_l")?;
        blocks.push(SubbandBlock {
            subband: l,
            indices: idx,
            block,
        });
    }
    Ok(blocks)
}

/// Everything the bound computation produces for one scenario.
#[derive(Debug, Clone)]
pub struct CrbResult {
    pub crb_sub: RMatrix,
    /// `Err` when the Nyquist array cannot resolve the sources.
    pub crb_ny: std::result::Result<RMatrix, String>,
    pub blocks: Vec<SubbandBlock>,
    pub d: CMatrix,
    pub e: CMatrix,
    pub r_s: CMatrix,
}

pub fn crb_result(scenario: &Scenario, r_s: &CMatrix) -> Result<CrbResult> {
    let crb_sub = crb_sub(scenario, r_s)?;
    let crb_ny = match crb_ny(scenario, r_s) {
        Ok(m) => Ok(m),
        Err(Error::RankDeficient(msg)) => Err(msg),
        Err(e) => return Err(e),
    };
    let blocks = subband_blocks(scenario, r_s)?;
    let (d, e) = derivative_matrices(scenario);
    Ok(CrbResult {
        crb_sub,
        crb_ny,
        blocks,
        d,
        e,
        r_s: r_s.clone(),
    })
}

/// Largest entry of `crb` outside the per-subband diagonal blocks, relative to
/// its largest diagonal entry.
pub fn off_block_residual(scenario: &Scenario, crb: &RMatrix) -> f64 {
    let sb = scenario.subbands();
    let diag_max = (0..crb.nrows()).fold(0.0f64, |a, i| a.max(crb[(i, i)].abs()));
    if diag_max == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..crb.nrows() {
        for j in 0..crb.ncols() {
            if sb[i] != sb[j] {
                worst = worst.max(crb[(i, j)].abs());
            }
        }
    }
    worst / diag_max
}

/// Snapshot accounting when the two bounds are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotConvention {
    /// Both bounds at the scenario's `T`.
    Same,
    /// Sub-Nyquist bound at `T / L`, Nyquist bound at `T`.
    SubScaled,
}

#[derive(Debug, Clone)]
pub struct CrbComparison {
    pub convention: SnapshotConvention,
    pub crb_sub: RMatrix,
    pub crb_ny: RMatrix,
    /// `CRB_Ny[k,k] / CRB_sub[k,k]`.
    pub diagonal_ratios: Vec<f64>,
    /// Smallest eigenvalue of `CRB_Ny − CRB_sub` (Loewner-order check).
    pub min_eigen_difference: f64,
    /// `max |CRB_Ny − CRB_sub| / max |CRB_Ny|`.
    pub relative_difference: f64,
}

impl CrbComparison {
    pub fn min_ratio(&self) -> f64 {
        self.diagonal_ratios.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub fn compare_crb(
    scenario: &Scenario,
    r_s: &CMatrix,
    convention: SnapshotConvention,
) -> Result<CrbComparison> {
    let t = scenario.snapshots() as f64;
    let t_sub = match convention {
        SnapshotConvention::Same => t,
        SnapshotConvention::SubScaled => t / scenario.sampling().reduction() as f64,
    };
    let sub = crb_sub_at(scenario, r_s, t_sub)?;
    let ny = crb_ny_at(scenario, r_s, t)?;
    let diagonal_ratios = (0..sub.nrows()).map(|k| ny[(k, k)] / sub[(k, k)]).collect();
    let diff = &ny - &sub;
    let min_eigen_difference = if diff.is_empty() {
        0.0
    } else {
        let sym = (&diff + diff.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let scale = max_abs(&ny);
    let relative_difference = if scale > 0.0 { max_abs(&diff) / scale } else { 0.0 };
    Ok(CrbComparison {
        convention,
        crb_sub: sub,
        crb_ny: ny,
        diagonal_ratios,
        min_eigen_difference,
        relative_difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrayGeometry, SamplingConfig, SourceSpec};

    const F_N: f64 = 10e9;

    fn scenario(geometry: ArrayGeometry, sources: Vec<SourceSpec>, sigma2: f64, t: usize) -> Scenario {
        Scenario::new(geometry, SamplingConfig::full(F_N, 7).unwrap(), sources, sigma2, t).unwrap()
    }

    #[test]
    fn derivative_of_ula_at_broadside() {
        let s = Scenario::new(
            ArrayGeometry::ula(3).unwrap(),
            SamplingConfig::full(F_N, 2).unwrap(),
            vec![SourceSpec::new(0.0, 1e9, 1.0)],
            1.0,
            1,
        )
        .unwrap();
        let (d, e) = derivative_matrices(&s);
        let expected = [C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, -2.0)];
        for m in 0..3 {
            assert!((d[(m, 0)] - expected[m]).norm() < 1e-15);
        }
        assert_eq!(e.nrows(), 6);
        assert_eq!(e[(0, 0)], C64::new(0.0, 0.0));
    }

    #[test]
    fn single_source_closed_form() {
        // Σp² − (Σp)²/M = 91 − 63 = 28 for positions 0..6
        let s = scenario(ArrayGeometry::ula(7).unwrap(), vec![SourceSpec::new(20.0, 3e9, 1.0)], 0.3, 250);
        let rs = source_covariance(&s);
        let expected = 0.3 / (2.0 * 250.0 * 28.0);
        let sub = crb_sub(&s, &rs).unwrap();
        let ny = crb_ny(&s, &rs).unwrap();
        assert!((sub[(0, 0)] - expected).abs() < 1e-10 * expected);
        assert!((ny[(0, 0)] - expected).abs() < 1e-10 * expected);
        let cmp = compare_crb(&s, &rs, SnapshotConvention::Same).unwrap();
        assert!((cmp.diagonal_ratios[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bound_is_linear_in_noise_and_inverse_in_snapshots() {
        let srcs = vec![
            SourceSpec::new(20.0, 3e9, 1.0),
            SourceSpec::new(-10.0, 3.2e9, 2.0),
            SourceSpec::new(45.0, 8.1e9, 1.0),
        ];
        let s = scenario(ArrayGeometry::mra7(), srcs, 0.1, 100);
        let rs = source_covariance(&s);
        let base = crb_sub(&s, &rs).unwrap();
        let doubled = crb_sub(&s.with_sigma2(0.2).unwrap(), &rs).unwrap();
        let longer = crb_sub(&s.with_snapshots(400).unwrap(), &rs).unwrap();
        assert!((doubled - &base * 2.0).abs().max() < 1e-12 * max_abs(&base));
        assert!((longer * 4.0 - &base).abs().max() < 1e-12 * max_abs(&base));
    }

    #[test]
    fn nyquist_bound_rejects_too_many_sources() {
        let srcs: Vec<_> = (0..8)
            .map(|i| SourceSpec::new(-60.0 + 15.0 * i as f64, (0.5 + i as f64 * 0.9) * 1e9, 1.0))
            .collect();
        let s = scenario(ArrayGeometry::ula(7).unwrap(), srcs, 0.1, 10);
        let rs = source_covariance(&s);
        assert!(matches!(crb_ny(&s, &rs), Err(Error::RankDeficient(_))));
        assert!(crb_sub(&s, &rs).is_ok());
        let res = crb_result(&s, &rs).unwrap();
        assert!(res.crb_ny.is_err());
    }

    #[test]
    fn zero_noise_and_bad_covariance_rejected() {
        let s = scenario(ArrayGeometry::ula(7).unwrap(), vec![SourceSpec::new(0.0, 1e9, 1.0)], 0.0, 10);
        let rs = source_covariance(&s);
        assert!(matches!(crb_sub(&s, &rs), Err(Error::InvalidArgument(_))));
        let s = s.with_sigma2(1.0).unwrap();
        assert!(crb_sub(&s, &CMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn repeated_source_is_rank_deficient() {
        let src = SourceSpec::new(10.0, 2e9, 1.0);
        let s = scenario(ArrayGeometry::ula(7).unwrap(), vec![src, src], 1.0, 10);
        let rs = source_covariance(&s);
        assert!(matches!(crb_sub(&s, &rs), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn blocks_match_full_expression() {
        let srcs = vec![
            SourceSpec::new(20.0, 3e9, 1.0),
            SourceSpec::new(-10.0, 3.2e9, 1.0),
            SourceSpec::new(45.0, 8.1e9, 1.0),
            SourceSpec::new(-45.0, 8.3e9, 1.0),
            SourceSpec::new(5.0, 0.4e9, 1.0),
        ];
        let s = scenario(ArrayGeometry::mra7(), srcs, 0.05, 1000);
        let rs = source_covariance(&s);
        let full = crb_sub(&s, &rs).unwrap();
        assert!(off_block_residual(&s, &full) < 1e-10);
        for blk in subband_blocks(&s, &rs).unwrap() {
            let r = blk.indices.clone();
            let sub = full.view((r.start, r.start), (r.len(), r.len()));
            assert!((sub - &blk.block).abs().max() < 1e-8 * max_abs(&blk.block));
        }
    }
}
