//! Deterministic synthetic subjects: ellipsoid brain and ventricles, blob
//! lesions placed ring by ring, a low-rank logit model around the lesion
//! mask, and an ordinal Fazekas-like score derived from ring volumes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, ring_partition, FeatureVector, RingPartition, NUM_RINGS, OUTSIDE};
use crate::grid::{binarize, BinaryMask, Connectivity, VoxelGrid};
use crate::seed::{derive_seed, rng, Rng};
use crate::seg_metrics::{dice, SEGMENTATION_THRESHOLD};
use crate::stochastic::{predictive_entropy, sample_logits, LogitModel, SampleSet};

/// Axis-aligned ellipsoid in mm; voxel `i` sits at `i · spacing`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.radii_mm[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn mask(&self, dims: [usize; 3], spacing: [f64; 3]) -> Result<BinaryMask> {
        BinaryMask::from_fn(dims, spacing, |x, y, z| {
            self.contains([x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]])
        })
    }
}

/// Lesion count (inclusive range) and per-axis radius range for one ring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingLesions {
    pub count: [usize; 2],
    pub radius_mm: [f64; 2],
}

impl RingLesions {
    pub const NONE: Self = Self { count: [0, 0], radius_mm: [1.0, 1.0] };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub brain: Ellipsoid,
    pub ventricles: Ellipsoid,
    /// Lesions for R0..R3.
    pub lesions: [RingLesions; NUM_RINGS],
    /// Clip each lesion to the ring it was seeded in.
    pub confine_to_ring: bool,
    /// Mean foreground logit is `+margin` inside lesions, `-margin` outside.
    pub margin: f64,
    pub noise: f64,
    pub rank: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: [24, 24, 24],
            spacing: [2.0; 3],
            brain: Ellipsoid { center_mm: [23.0; 3], radii_mm: [22.0, 22.0, 20.0] },
            ventricles: Ellipsoid { center_mm: [23.0; 3], radii_mm: [7.0, 4.0, 4.0] },
            lesions: [
                RingLesions { count: [1, 2], radius_mm: [2.0, 3.0] },
                RingLesions { count: [1, 2], radius_mm: [2.0, 3.0] },
                RingLesions { count: [0, 2], radius_mm: [2.0, 3.0] },
                RingLesions { count: [0, 2], radius_mm: [2.0, 3.0] },
            ],
            confine_to_ring: true,
            margin: 4.0,
            noise: 1.0,
            rank: 4,
            seed: 0,
        }
    }
}

/// Width range (mm) of the smooth bumps forming each factor column.
pub const BUMP_SIGMA_MM: [f64; 2] = [3.0, 8.0];
/// Per-entry diagonal std as a fraction of the noise scale.
pub const DIAG_FRACTION: f64 = 0.25;

/// Ordinal scores 0–3 for the periventricular and deep regions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FazekasProxy {
    pub pv: usize,
    pub deep: usize,
}

/// Volume cut points (mm³) between consecutive scores. PV burden is the
/// lesion volume in R0 ∪ R1, deep burden the volume in R2 ∪ R3; the score is
/// the number of cut points at or below the burden.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FazekasRule {
    pub pv_edges_mm3: [f64; 3],
    pub deep_edges_mm3: [f64; 3],
}

impl Default for FazekasRule {
    fn default() -> Self {
        Self {
            pv_edges_mm3: [1.0, 220.0, 540.0],
            deep_edges_mm3: [1.0, 220.0, 540.0],
        }
    }
}

fn score(volume: f64, edges: &[f64; 3]) -> usize {
    edges.iter().filter(|&&e| volume >= e).count()
}

/// Lesion volume (mm³) in each ring.
pub fn ring_volumes(lesions: &BinaryMask, rings: &RingPartition) -> Result<[f64; NUM_RINGS]> {
    lesions.check_shape(rings.labels())?;
    let mut v = [0.0; NUM_RINGS];
    for (&l, &r) in lesions.data().iter().zip(rings.labels().data()) {
        if l && (r as usize) < NUM_RINGS {
            v[r as usize] += 1.0;
        }
    }
    let vv = lesions.voxel_volume();
    Ok(v.map(|n| n * vv))
}

/// No lesions scores (0, 0).
pub fn fazekas_proxy(lesions: &BinaryMask, rings: &RingPartition, rule: &FazekasRule) -> Result<FazekasProxy> {
    let v = ring_volumes(lesions, rings)?;
    Ok(FazekasProxy {
        pv: score(v[0] + v[1], &rule.pv_edges_mm3),
        deep: score(v[2] + v[3], &rule.deep_edges_mm3),
    })
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub brain: BinaryMask,
    pub ventricles: BinaryMask,
    pub lesions: BinaryMask,
    pub rings: RingPartition,
    pub logits: LogitModel,
    pub fazekas: FazekasProxy,
    pub ring_volumes: [f64; NUM_RINGS],
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if !(spec.margin > 0.0 && spec.margin.is_finite()) {
        return Err(Error::Spec(format!("margin must be positive, got {}", spec.margin)));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Spec(format!("noise must be >= 0, got {}", spec.noise)));
    }
    for e in [&spec.brain, &spec.ventricles] {
        if e.radii_mm.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Spec("ellipsoid radii must be positive".into()));
        }
    }
    for (i, l) in spec.lesions.iter().enumerate() {
        if l.count[0] > l.count[1] {
            return Err(Error::Spec(format!("ring {i}: count range {:?} is reversed", l.count)));
        }
        if !(l.radius_mm[0] > 0.0 && l.radius_mm[0] <= l.radius_mm[1]) {
            return Err(Error::Spec(format!("ring {i}: bad radius range {:?}", l.radius_mm)));
        }
    }
    Ok(())
}

fn place_lesions(
    spec: &SynthSpec,
    ventricles: &BinaryMask,
    rings: &RingPartition,
    r: &mut Rng,
) -> Result<BinaryMask> {
    let labels = rings.labels();
    let mut lesions = ventricles.map(|_| false);
    let [nx, ny, nz] = spec.dims;
    let s = spec.spacing;
    for (ring, cfg) in spec.lesions.iter().enumerate() {
        let candidates: Vec<usize> = (0..labels.len())
            .filter(|&i| labels.data()[i] as usize == ring && !ventricles.data()[i])
            .collect();
        let n = r.random_range(cfg.count[0]..=cfg.count[1]);
        if n > candidates.len() {
            return Err(Error::Spec(format!(
                "ring {ring}: {n} lesions requested but only {} voxels available",
                candidates.len()
            )));
        }
        for _ in 0..n {
            let c = labels.coords(candidates[r.random_range(0..candidates.len())]);
            let radii: [f64; 3] = std::array::from_fn(|_| r.random_range(cfg.radius_mm[0]..=cfg.radius_mm[1]));
            let blob = Ellipsoid {
                center_mm: std::array::from_fn(|a| c[a] as f64 * s[a]),
                radii_mm: radii,
            };
            let lo = |a: usize| ((c[a] as f64 - radii[a] / s[a]).floor().max(0.0)) as usize;
            let hi = |a: usize, n: usize| ((c[a] as f64 + radii[a] / s[a]).ceil() as usize).min(n - 1);
            for z in lo(2)..=hi(2, nz) {
                for y in lo(1)..=hi(1, ny) {
                    for x in lo(0)..=hi(0, nx) {
                        let i = labels.index(x, y, z);
                        let l = labels.data()[i];
                        let allowed = l != OUTSIDE
                            && !ventricles.data()[i]
                            && (!spec.confine_to_ring || l as usize == ring);
                        if allowed && blob.contains([x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]]) {
                            lesions.data_mut()[i] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(lesions)
}

fn logit_model(spec: &SynthSpec, lesions: &BinaryMask, brain: &BinaryMask, r: &mut Rng) -> Result<LogitModel> {
    let v = lesions.len();
    let mut mean = Vec::with_capacity(2 * v);
    for &l in lesions.data() {
        let m = if l { spec.margin } else { -spec.margin };
        mean.extend([-m / 2.0, m / 2.0]);
    }
    let rank = spec.rank;
    let mut factor = vec![0.0; 2 * v * rank];
    if spec.noise > 0.0 {
        let inside: Vec<usize> = (0..v).filter(|&i| brain.data()[i]).collect();
        let s = spec.spacing;
        for k in 0..rank {
            let c = lesions.coords(inside[r.random_range(0..inside.len())]);
            let sigma = r.random_range(BUMP_SIGMA_MM[0]..=BUMP_SIGMA_MM[1]);
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            for i in 0..v {
                let p = lesions.coords(i);
                let d2: f64 = (0..3).map(|a| ((p[a] as f64 - c[a] as f64) * s[a]).powi(2)).sum();
                let a = sign * spec.noise * (-d2 / (2.0 * sigma * sigma)).exp() / 2.0;
                factor[(2 * i) * rank + k] = -a;
                factor[(2 * i + 1) * rank + k] = a;
            }
        }
    }
    let d = (DIAG_FRACTION * spec.noise).powi(2);
    LogitModel::new(spec.dims, spec.spacing, 2, rank, mean, factor, vec![d; 2 * v])
}

/// Builds one subject. Identical specs give bit-identical output.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    generate_with_rule(spec, &FazekasRule::default())
}

pub fn generate_with_rule(spec: &SynthSpec, rule: &FazekasRule) -> Result<SynthOutput> {
    validate(spec)?;
    let brain = spec.brain.mask(spec.dims, spec.spacing)?;
    let ventricles = spec.ventricles.mask(spec.dims, spec.spacing)?;
    if ventricles.count() == 0 {
        return Err(Error::Spec("ventricle ellipsoid covers no voxel".into()));
    }
    if ventricles.data().iter().zip(brain.data()).any(|(&v, &b)| v && !b) {
        return Err(Error::Spec("ventricles must lie inside the brain".into()));
    }
    let rings = ring_partition(&ventricles, &brain)?;
    let lesions = place_lesions(spec, &ventricles, &rings, &mut rng(derive_seed(spec.seed, 0)))?;
    let logits = logit_model(spec, &lesions, &brain, &mut rng(derive_seed(spec.seed, 1)))?;
    let ring_volumes = ring_volumes(&lesions, &rings)?;
    let fazekas = fazekas_proxy(&lesions, &rings, rule)?;
    Ok(SynthOutput { brain, ventricles, lesions, rings, logits, fazekas, ring_volumes })
}

/// Per-subject lesion levels 0..=3 for the PV and deep regions, drawn
/// independently so total volume does not determine either score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortLevels {
    pub pv: usize,
    pub deep: usize,
}

/// Lesion counts per level; radii are fixed by [`COHORT_RADIUS_MM`].
pub const COHORT_COUNTS: [[usize; 2]; 4] = [[0, 0], [1, 1], [3, 3], [6, 6]];
pub const COHORT_RADIUS_MM: [f64; 2] = [3.0, 4.0];
pub const COHORT_NOISE: [f64; 2] = [0.5, 2.5];

/// Specs for an `n`-subject cohort. Subject `i` uses sub-seed
/// `derive_seed(seed, i)`; its levels cycle so every score is represented.
pub fn cohort_specs(n: usize, seed: u64) -> Vec<SynthSpec> {
    (0..n)
        .map(|i| {
            let sub = derive_seed(seed, i as u64);
            let mut r = rng(derive_seed(sub, 2));
            let pv = i % 4;
            let deep = (i / 4 + r.random_range(0..4)) % 4;
            let ring = |level: usize, share: usize| RingLesions {
                count: COHORT_COUNTS[level].map(|c| (c + share) / 2),
                radius_mm: COHORT_RADIUS_MM,
            };
            SynthSpec {
                lesions: [ring(pv, 1), ring(pv, 0), ring(deep, 1), ring(deep, 0)],
                noise: r.random_range(COHORT_NOISE[0]..=COHORT_NOISE[1]),
                seed: sub,
                ..SynthSpec::default()
            }
        })
        .collect()
}

/// Everything the downstream tasks need from one simulated subject.
#[derive(Clone, Debug)]
pub struct SimulatedSubject {
    pub output: SynthOutput,
    pub samples: SampleSet,
    pub mean: VoxelGrid<f64>,
    pub entropy: VoxelGrid<f64>,
    pub features: FeatureVector,
    /// Dice of the binarized mean against the lesion mask.
    pub dice: f64,
}

pub fn simulate(spec: &SynthSpec, n_samples: usize, t: f64, connectivity: Connectivity) -> Result<SimulatedSubject> {
    let output = generate(spec)?;
    let samples = sample_logits(&output.logits, n_samples, derive_seed(spec.seed, 3))?;
    let mean = samples.mean();
    let entropy = predictive_entropy(&samples);
    let features = extract_features(&mean, &entropy, Some(&samples), &output.rings, t, connectivity)?;
    let dice = dice(&binarize(&mean, SEGMENTATION_THRESHOLD), &output.lesions)?;
    Ok(SimulatedSubject { output, samples, mean, entropy, features, dice })
}
