//! Segmentation quality: Dice, absolute volume difference, lesion-wise F1,
//! best-of-samples scores, generalized energy distance and the run/subject
//! aggregation used in cohort tables.
//!
//! Conventions: Dice and IoU of two empty masks are 1, of an empty and a
//! non-empty mask 0. AVD against an empty reference is an error, never a
//! sentinel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{binarize, connected_components, BinaryMask, Connectivity};
use crate::stochastic::SampleSet;

/// Threshold turning probability maps into segmentations.
pub const SEGMENTATION_THRESHOLD: f64 = 0.5;

fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    a.check_shape(b)?;
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok((inter, na, nb))
}

/// `2|a ∩ b| / (|a| + |b|)`.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = overlap(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Intersection over union.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = overlap(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `100 · |V_pred − V_gt| / V_gt` with spacing-weighted volumes.
pub fn avd_percent(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_shape(gt)?;
    let v_gt = gt.volume();
    if v_gt == 0.0 {
        return Err(Error::EmptyGroundTruth);
    }
    Ok(100.0 * (pred.volume() - v_gt).abs() / v_gt)
}

/// Lesion-wise detection counts. A reference component is detected when any
/// predicted voxel overlaps it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCounts {
    /// Reference components overlapped by the prediction.
    pub tp: usize,
    /// Predicted components with no reference overlap.
    pub fp: usize,
    /// Reference components with no predicted overlap.
    pub fn_: usize,
    pub gt_components: usize,
    pub pred_components: usize,
}

impl ComponentCounts {
    /// `2TP / (2TP + FP + FN)`, 1 when both masks are empty.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }

    /// Fraction of predicted components touching the reference; 1 with no
    /// predicted components and no reference, 0 with no predictions otherwise.
    pub fn precision(&self) -> f64 {
        if self.pred_components == 0 {
            return if self.gt_components == 0 { 1.0 } else { 0.0 };
        }
        (self.pred_components - self.fp) as f64 / self.pred_components as f64
    }

    pub fn recall(&self) -> f64 {
        if self.gt_components == 0 {
            return if self.pred_components == 0 { 1.0 } else { 0.0 };
        }
        self.tp as f64 / self.gt_components as f64
    }
}

pub fn component_counts(pred: &BinaryMask, gt: &BinaryMask, connectivity: Connectivity) -> Result<ComponentCounts> {
    pred.check_shape(gt)?;
    let gt_cc = connected_components(gt, connectivity);
    let pred_cc = connected_components(pred, connectivity);
    let touches = |voxels: &[usize], other: &BinaryMask| voxels.iter().any(|&i| other.data()[i]);
    let tp = gt_cc.components.iter().filter(|c| touches(&c.voxels, pred)).count();
    let fp = pred_cc.components.iter().filter(|c| !touches(&c.voxels, gt)).count();
    Ok(ComponentCounts {
        tp,
        fp,
        fn_: gt_cc.count() - tp,
        gt_components: gt_cc.count(),
        pred_components: pred_cc.count(),
    })
}

pub fn component_f1(pred: &BinaryMask, gt: &BinaryMask, connectivity: Connectivity) -> Result<f64> {
    Ok(component_counts(pred, gt, connectivity)?.f1())
}

/// Scores of one segmentation against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub dice: f64,
    /// `None` when the reference is empty.
    pub avd_percent: Option<f64>,
    pub component_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub top_dice: Option<f64>,
    pub top_avd: Option<f64>,
}

pub fn seg_scores(pred: &BinaryMask, gt: &BinaryMask, connectivity: Connectivity) -> Result<SegScores> {
    let counts = component_counts(pred, gt, connectivity)?;
    let avd = match avd_percent(pred, gt) {
        Ok(v) => Some(v),
        Err(Error::EmptyGroundTruth) => None,
        Err(e) => return Err(e),
    };
    Ok(SegScores {
        dice: dice(pred, gt)?,
        avd_percent: avd,
        component_f1: counts.f1(),
        precision: counts.precision(),
        recall: counts.recall(),
        top_dice: None,
        top_avd: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopScores {
    pub top_dice: f64,
    /// `None` when the reference is empty.
    pub top_avd: Option<f64>,
}

/// Best Dice and best (lowest) AVD over the binarized samples; the two may
/// come from different samples.
pub fn top_scores(samples: &SampleSet, gt: &BinaryMask, t: f64) -> Result<TopScores> {
    let masks = samples.binarized(t);
    let mut top_dice = f64::NEG_INFINITY;
    let mut top_avd: Option<f64> = None;
    let empty_gt = gt.count() == 0;
    for m in &masks {
        top_dice = top_dice.max(dice(m, gt)?);
        if !empty_gt {
            let a = avd_percent(m, gt)?;
            top_avd = Some(top_avd.map_or(a, |b| b.min(a)));
        }
    }
    Ok(TopScores { top_dice, top_avd })
}

/// Generalized energy distance with `d = 1 − IoU`:
/// `2 E[d(y, ŷ)] − E[d(y, y′)] − E[d(ŷ, ŷ′)]`.
///
/// The cross term averages all `|pred| · |gt|` pairs; each self term averages
/// all unordered pairs of distinct members and is 0 for a single member.
pub fn ged(samples: &SampleSet, gt_set: &SampleSet, t: f64) -> Result<f64> {
    if samples.dims() != gt_set.dims() {
        return Err(Error::DimensionMismatch(format!(
            "samples {:?} vs references {:?}",
            samples.dims(),
            gt_set.dims()
        )));
    }
    let pred = samples.binarized(t);
    let refs = gt_set.binarized(t);
    let d = |a: &BinaryMask, b: &BinaryMask| iou(a, b).map(|v| 1.0 - v);

    let mut cross = 0.0;
    for p in &pred {
        for r in &refs {
            cross += d(p, r)?;
        }
    }
    cross /= (pred.len() * refs.len()) as f64;

    let self_term = |set: &[BinaryMask]| -> Result<f64> {
        if set.len() < 2 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        let mut n = 0usize;
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                acc += d(&set[i], &set[j])?;
                n += 1;
            }
        }
        Ok(acc / n as f64)
    };
    Ok(2.0 * cross - self_term(&refs)? - self_term(&pred)?)
}

/// Cohort aggregate of a metric matrix `E[run][subject]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Bessel-corrected std over runs of the per-run subject mean;
    /// `None` with fewer than two runs.
    pub std_runs: Option<f64>,
    /// Bessel-corrected std over subjects of the per-subject run mean;
    /// `None` with fewer than two subjects.
    pub std_subjects: Option<f64>,
}

/// Sample standard deviation (n − 1 denominator); `None` for n < 2.
pub fn bessel_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

pub fn aggregate(values: &[Vec<f64>]) -> Result<Aggregate> {
    let runs = values.len();
    let subjects = values.first().map_or(0, Vec::len);
    if runs == 0 || subjects == 0 {
        return Err(Error::Degenerate("metric matrix is empty".into()));
    }
    if values.iter().any(|r| r.len() != subjects) {
        return Err(Error::DimensionMismatch("metric matrix rows differ in length".into()));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("metric matrix contains non-finite values".into()));
    }
    let run_means: Vec<f64> = values.iter().map(|r| r.iter().sum::<f64>() / subjects as f64).collect();
    let subject_means: Vec<f64> = (0..subjects)
        .map(|s| values.iter().map(|r| r[s]).sum::<f64>() / runs as f64)
        .collect();
    Ok(Aggregate {
        mean: run_means.iter().sum::<f64>() / runs as f64,
        std_runs: bessel_std(&run_means),
        std_subjects: bessel_std(&subject_means),
    })
}

/// Binarizes the sample mean at [`SEGMENTATION_THRESHOLD`].
pub fn mean_segmentation(samples: &SampleSet) -> BinaryMask {
    binarize(&samples.mean(), SEGMENTATION_THRESHOLD)
}
