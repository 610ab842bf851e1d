//! Quality of uncertainty maps against segmentation errors.
//!
//! The error map is `pred ≠ gt`, where `pred` is the 0.5-thresholded mean
//! prediction. Patch statistics split the grid into 4³ tiles (or sliding
//! windows); lesion coverage looks at reference components the segmentation
//! misses and asks whether the thresholded uncertainty map flags them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{binarize, connected_components, BinaryMask, Connectivity, UncertaintyMap};
use crate::seg_metrics::dice;

pub const PATCH_SIZE: usize = 4;
pub const PATCH_ACCURACY_THRESHOLD: f64 = 0.8;
/// UEO level used to pick a comparable operating point across methods.
pub const UEO_REFERENCE: f64 = 0.4;
/// Fraction of a missed lesion that must be uncertain under the relaxed rule.
pub const RELAXED_FRACTION: f64 = 0.5;
/// Voxel count cap of the relaxed rule.
pub const RELAXED_VOXEL_CAP: usize = 5;

/// Voxels where the hard prediction disagrees with the reference.
pub fn error_map(pred: &BinaryMask, gt: &BinaryMask) -> Result<BinaryMask> {
    pred.check_shape(gt)?;
    Ok(pred.with_data(pred.data().iter().zip(gt.data()).map(|(a, b)| a != b).collect()))
}

/// Soft uncertainty-error overlap `2 Σ e u / Σ (e² + u²)`.
pub fn sueo(u: &UncertaintyMap, e: &BinaryMask) -> Result<f64> {
    u.check_shape(e)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&uv, &ev) in u.data().iter().zip(e.data()) {
        let ev = ev as u8 as f64;
        num += ev * uv;
        den += ev * ev + uv * uv;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("uncertainty and error maps are both zero".into()));
    }
    Ok(2.0 * num / den)
}

/// Dice between the uncertainty map thresholded at `tau` and the error map.
pub fn ueo(u: &UncertaintyMap, e: &BinaryMask, tau: f64) -> Result<f64> {
    dice(&binarize(u, tau), e)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    /// Non-overlapping tiles anchored at the origin; trailing partial tiles
    /// are kept with their actual voxel counts.
    #[default]
    Tiling,
    /// Every full window at unit stride (a single clipped window along axes
    /// shorter than the patch).
    Sliding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub size: usize,
    pub acc_threshold: f64,
    pub mode: PatchMode,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: PATCH_SIZE,
            acc_threshold: PATCH_ACCURACY_THRESHOLD,
            mode: PatchMode::Tiling,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGridStats {
    pub n_ac: usize,
    pub n_au: usize,
    pub n_ci: usize,
    pub n_ui: usize,
    pub tau: f64,
    pub patch_size: usize,
    pub acc_threshold: f64,
}

impl PatchGridStats {
    pub fn total(&self) -> usize {
        self.n_ac + self.n_au + self.n_ci + self.n_ui
    }

    pub fn p_acc_given_cert(&self) -> Option<f64> {
        ratio(self.n_ac, self.n_ac + self.n_ci)
    }

    pub fn p_uncert_given_inacc(&self) -> Option<f64> {
        ratio(self.n_ui, self.n_ui + self.n_ci)
    }

    /// `(n_ac + n_ui) / (n_ac + n_ui + n_au + n_ci)`.
    pub fn pavpu(&self) -> Option<f64> {
        ratio(self.n_ac + self.n_ui, self.total())
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Patch {
    accurate: bool,
    mean_uncertainty: f64,
}

/// Per-patch accuracy and mean uncertainty, computed once and then counted
/// at any number of thresholds.
#[derive(Clone, Debug)]
pub struct PatchSummary {
    patches: Vec<Patch>,
    config: PatchConfig,
}

fn starts(n: usize, size: usize, mode: PatchMode) -> Vec<(usize, usize)> {
    match mode {
        PatchMode::Tiling => (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect(),
        PatchMode::Sliding if n <= size => vec![(0, n)],
        PatchMode::Sliding => (0..=n - size).map(|s| (s, s + size)).collect(),
    }
}

impl PatchSummary {
    pub fn new(pred: &BinaryMask, gt: &BinaryMask, u: &UncertaintyMap, config: PatchConfig) -> Result<Self> {
        pred.check_shape(gt)?;
        pred.check_shape(u)?;
        if config.size == 0 {
            return Err(Error::Domain("patch size must be positive".into()));
        }
        let [nx, ny, nz] = pred.dims();
        let (xs, ys, zs) = (
            starts(nx, config.size, config.mode),
            starts(ny, config.size, config.mode),
            starts(nz, config.size, config.mode),
        );
        let mut patches = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &(z0, z1) in &zs {
            for &(y0, y1) in &ys {
                for &(x0, x1) in &xs {
                    let mut correct = 0usize;
                    let mut u_sum = 0.0;
                    for z in z0..z1 {
                        for y in y0..y1 {
                            for x in x0..x1 {
                                let i = pred.index(x, y, z);
                                correct += (pred.data()[i] == gt.data()[i]) as usize;
                                u_sum += u.data()[i];
                            }
                        }
                    }
                    let n = ((x1 - x0) * (y1 - y0) * (z1 - z0)) as f64;
                    patches.push(Patch {
                        accurate: correct as f64 / n >= config.acc_threshold,
                        mean_uncertainty: u_sum / n,
                    });
                }
            }
        }
        Ok(Self { patches, config })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Counts at threshold `tau`: a patch is uncertain iff its mean
    /// uncertainty is `>= tau`.
    pub fn at(&self, tau: f64) -> PatchGridStats {
        let mut s = PatchGridStats {
            n_ac: 0,
            n_au: 0,
            n_ci: 0,
            n_ui: 0,
            tau,
            patch_size: self.config.size,
            acc_threshold: self.config.acc_threshold,
        };
        for p in &self.patches {
            let uncertain = p.mean_uncertainty >= tau;
            match (p.accurate, uncertain) {
                (true, false) => s.n_ac += 1,
                (true, true) => s.n_au += 1,
                (false, false) => s.n_ci += 1,
                (false, true) => s.n_ui += 1,
            }
        }
        s
    }
}

pub fn patch_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
    u: &UncertaintyMap,
    tau: f64,
    config: PatchConfig,
) -> Result<PatchGridStats> {
    Ok(PatchSummary::new(pred, gt, u, config)?.at(tau))
}

/// One reference lesion seen at a given threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub size: usize,
    /// Voxels covered by the segmentation.
    pub segmented: usize,
    /// Voxels with uncertainty `>= tau`.
    pub uncertain: usize,
    /// Unsegmented voxels that are uncertain.
    pub uncertain_unsegmented: usize,
    /// No segmented and no uncertain voxel.
    pub undetected_strict: bool,
    /// Not segmented at all and fewer than `min(⌈50% size⌉, 5)` uncertain voxels.
    pub undetected_relaxed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub tau: f64,
    pub n_components: usize,
    /// Components with no segmented voxel.
    pub n_unsegmented: usize,
    /// Mean over components with unsegmented voxels of the fraction of those
    /// voxels that are uncertain.
    pub coverage: Option<f64>,
    pub undetected_strict: Option<f64>,
    pub undetected_relaxed: Option<f64>,
    pub undetected_strict_mean_size: Option<f64>,
    pub undetected_relaxed_mean_size: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionCoverage {
    pub lesions: Vec<LesionRecord>,
    pub summary: CoverageSummary,
}

/// Uncertain voxels needed for a missed lesion of `size` voxels to count as
/// flagged under the relaxed rule.
pub fn relaxed_requirement(size: usize) -> usize {
    ((RELAXED_FRACTION * size as f64).ceil() as usize).min(RELAXED_VOXEL_CAP)
}

/// Reference components with their voxels, reused across thresholds.
#[derive(Clone, Debug)]
pub struct LesionSet {
    /// Per component: (voxel count, segmented count, uncertainty of each unsegmented voxel,
    /// uncertainty of each segmented voxel).
    lesions: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
}

impl LesionSet {
    pub fn new(pred: &BinaryMask, gt: &BinaryMask, u: &UncertaintyMap, connectivity: Connectivity) -> Result<Self> {
        pred.check_shape(gt)?;
        pred.check_shape(u)?;
        let cc = connected_components(gt, connectivity);
        let lesions = cc
            .components
            .iter()
            .map(|c| {
                let (seg, unseg): (Vec<usize>, Vec<usize>) = c.voxels.iter().partition(|&&i| pred.data()[i]);
                (
                    c.size(),
                    seg.len(),
                    unseg.iter().map(|&i| u.data()[i]).collect(),
                    seg.iter().map(|&i| u.data()[i]).collect(),
                )
            })
            .collect();
        Ok(Self { lesions })
    }

    pub fn at(&self, tau: f64) -> LesionCoverage {
        let lesions: Vec<LesionRecord> = self
            .lesions
            .iter()
            .map(|(size, segmented, unseg_u, seg_u)| {
                let uu = unseg_u.iter().filter(|&&v| v >= tau).count();
                let uncertain = uu + seg_u.iter().filter(|&&v| v >= tau).count();
                LesionRecord {
                    size: *size,
                    segmented: *segmented,
                    uncertain,
                    uncertain_unsegmented: uu,
                    undetected_strict: *segmented == 0 && uncertain == 0,
                    undetected_relaxed: *segmented == 0 && uncertain < relaxed_requirement(*size),
                }
            })
            .collect();

        let n = lesions.len();
        let partial: Vec<f64> = lesions
            .iter()
            .filter(|l| l.segmented < l.size)
            .map(|l| l.uncertain_unsegmented as f64 / (l.size - l.segmented) as f64)
            .collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let sizes = |pick: fn(&LesionRecord) -> bool| -> Vec<f64> {
            lesions.iter().filter(|l| pick(l)).map(|l| l.size as f64).collect()
        };
        let strict = sizes(|l| l.undetected_strict);
        let relaxed = sizes(|l| l.undetected_relaxed);
        let summary = CoverageSummary {
            tau,
            n_components: n,
            n_unsegmented: lesions.iter().filter(|l| l.segmented == 0).count(),
            coverage: mean(&partial),
            undetected_strict: ratio(strict.len(), n),
            undetected_relaxed: ratio(relaxed.len(), n),
            undetected_strict_mean_size: mean(&strict),
            undetected_relaxed_mean_size: mean(&relaxed),
        };
        LesionCoverage { lesions, summary }
    }
}

pub fn lesion_coverage(
    pred: &BinaryMask,
    gt: &BinaryMask,
    u: &UncertaintyMap,
    tau: f64,
    connectivity: Connectivity,
) -> Result<LesionCoverage> {
    Ok(LesionSet::new(pred, gt, u, connectivity)?.at(tau))
}

/// One threshold of a UQ sweep; every field is plottable against `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub ueo: f64,
    pub p_acc_given_cert: Option<f64>,
    pub p_uncert_given_inacc: Option<f64>,
    pub pavpu: Option<f64>,
    pub coverage: Option<f64>,
    pub undetected_strict: Option<f64>,
    pub undetected_relaxed: Option<f64>,
    pub undetected_strict_mean_size: Option<f64>,
    pub undetected_relaxed_mean_size: Option<f64>,
}

/// `n` evenly spaced thresholds over `[0, ln 2]`.
pub fn tau_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| std::f64::consts::LN_2 * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn uq_sweep(
    pred: &BinaryMask,
    gt: &BinaryMask,
    u: &UncertaintyMap,
    taus: &[f64],
    patch: PatchConfig,
    connectivity: Connectivity,
) -> Result<Vec<SweepRow>> {
    let e = error_map(pred, gt)?;
    let patches = PatchSummary::new(pred, gt, u, patch)?;
    let lesions = LesionSet::new(pred, gt, u, connectivity)?;
    taus.iter()
        .map(|&tau| {
            let p = patches.at(tau);
            let c = lesions.at(tau).summary;
            Ok(SweepRow {
                tau,
                ueo: ueo(u, &e, tau)?,
                p_acc_given_cert: p.p_acc_given_cert(),
                p_uncert_given_inacc: p.p_uncert_given_inacc(),
                pavpu: p.pavpu(),
                coverage: c.coverage,
                undetected_strict: c.undetected_strict,
                undetected_relaxed: c.undetected_relaxed,
                undetected_strict_mean_size: c.undetected_strict_mean_size,
                undetected_relaxed_mean_size: c.undetected_relaxed_mean_size,
            })
        })
        .collect()
}

/// Index of the sweep row whose UEO is closest to `target` (first on ties).
pub fn operating_point(rows: &[SweepRow], target: f64) -> Option<usize> {
    rows.iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (a.ueo - target).abs().total_cmp(&(b.ueo - target).abs()))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;
    use std::f64::consts::LN_2;

    fn line_mask(bits: &[u8]) -> BinaryMask {
        VoxelGrid::new([bits.len(), 1, 1], [1.0; 3], bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn line_u(values: &[f64]) -> UncertaintyMap {
        VoxelGrid::new([values.len(), 1, 1], [1.0; 3], values.to_vec()).unwrap()
    }

    #[test]
    fn sueo_examples() {
        let e = line_mask(&[1, 0, 1, 1, 0]);
        assert_eq!(sueo(&e.to_f64(), &e).unwrap(), 1.0);
        assert_eq!(sueo(&line_u(&[0.0; 5]), &e).unwrap(), 0.0);
        let half = e.map(|&b| if b { 0.5 } else { 0.0 });
        assert!((sueo(&half, &e).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(sueo(&line_u(&[0.0; 5]), &line_mask(&[0; 5])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ueo_at_zero_threshold_flags_everything() {
        let e = line_mask(&[1, 0, 0, 0]);
        let u = line_u(&[0.1, 0.0, 0.3, 0.0]);
        assert_eq!(ueo(&u, &e, 0.0).unwrap(), 2.0 / 5.0);
        assert_eq!(ueo(&u, &e, 0.1).unwrap(), 2.0 / 3.0);
        assert_eq!(ueo(&line_u(&[0.0; 4]), &line_mask(&[0; 4]), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn perfect_certain_prediction() {
        let gt = BinaryMask::from_fn([8, 8, 8], [1.0; 3], |x, y, z| (x + y + z) % 5 == 0).unwrap();
        let u = UncertaintyMap::filled([8, 8, 8], [1.0; 3], 0.0).unwrap();
        let s = patch_metrics(&gt, &gt, &u, 0.1, PatchConfig::default()).unwrap();
        assert_eq!(s.total(), 8);
        assert_eq!(s.n_ac, 8);
        assert_eq!(s.p_acc_given_cert(), Some(1.0));
        assert_eq!(s.p_uncert_given_inacc(), None);
        assert_eq!(s.pavpu(), Some(1.0));
    }

    #[test]
    fn partial_tiles_and_sliding_windows() {
        let m = BinaryMask::filled([6, 5, 1], [1.0; 3], false).unwrap();
        let u = UncertaintyMap::filled([6, 5, 1], [1.0; 3], 0.0).unwrap();
        let tiles = PatchSummary::new(&m, &m, &u, PatchConfig::default()).unwrap();
        assert_eq!(tiles.len(), 2 * 2);
        let cfg = PatchConfig { mode: PatchMode::Sliding, ..PatchConfig::default() };
        let windows = PatchSummary::new(&m, &m, &u, cfg).unwrap();
        assert_eq!(windows.len(), 3 * 2);
    }

    #[test]
    fn accuracy_threshold_is_inclusive() {
        // 5 voxels, 4 correct: 0.8 exactly
        let pred = line_mask(&[1, 1, 1, 1, 1]);
        let gt = line_mask(&[1, 1, 1, 1, 0]);
        let u = line_u(&[0.0; 5]);
        let cfg = PatchConfig { size: 5, ..PatchConfig::default() };
        assert_eq!(patch_metrics(&pred, &gt, &u, 0.5, cfg).unwrap().n_ac, 1);
    }

    #[test]
    fn relaxed_rule_arithmetic() {
        assert_eq!(relaxed_requirement(1), 1);
        assert_eq!(relaxed_requirement(3), 2);
        assert_eq!(relaxed_requirement(9), 5);
        assert_eq!(relaxed_requirement(100), 5);
    }

    #[test]
    fn three_voxel_lesion_with_two_uncertain() {
        let gt = line_mask(&[1, 1, 1, 0, 0]);
        let pred = line_mask(&[0, 0, 0, 0, 0]);
        let u = line_u(&[0.5, 0.5, 0.0, 0.0, 0.0]);
        let c = lesion_coverage(&pred, &gt, &u, 0.3, Connectivity::TwentySix).unwrap();
        let l = c.lesions[0];
        assert_eq!((l.size, l.segmented, l.uncertain), (3, 0, 2));
        assert!(!l.undetected_strict);
        assert!(!l.undetected_relaxed);
        assert_eq!(c.summary.coverage, Some(2.0 / 3.0));

        let u1 = line_u(&[0.5, 0.0, 0.0, 0.0, 0.0]);
        let c = lesion_coverage(&pred, &gt, &u1, 0.3, Connectivity::TwentySix).unwrap();
        assert!(!c.lesions[0].undetected_strict);
        assert!(c.lesions[0].undetected_relaxed);
    }

    #[test]
    fn silent_failure_and_full_coverage() {
        let gt = line_mask(&[1, 0, 1, 1, 0, 0]);
        let pred = line_mask(&[0, 0, 0, 0, 0, 0]);
        let none = lesion_coverage(&pred, &gt, &line_u(&[0.0; 6]), 0.1, Connectivity::Six).unwrap();
        assert_eq!(none.summary.undetected_strict, Some(1.0));
        assert_eq!(none.summary.undetected_relaxed, Some(1.0));
        assert_eq!(none.summary.undetected_strict_mean_size, Some(1.5));
        let all = lesion_coverage(&pred, &gt, &line_u(&[LN_2; 6]), 0.1, Connectivity::Six).unwrap();
        assert_eq!(all.summary.coverage, Some(1.0));
        assert_eq!(all.summary.undetected_strict, Some(0.0));
        assert_eq!(all.summary.undetected_relaxed, Some(0.0));
        let empty = lesion_coverage(&pred, &pred, &line_u(&[0.0; 6]), 0.1, Connectivity::Six).unwrap();
        assert_eq!(empty.summary.coverage, None);
        assert_eq!(empty.summary.undetected_strict, None);
    }

    #[test]
    fn tau_grid_spans_range() {
        let g = tau_grid(50);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[49], LN_2);
    }
}
