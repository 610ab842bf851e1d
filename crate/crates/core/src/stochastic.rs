//! Sampling segmentations from stochastic models and turning sample sets into
//! uncertainty maps.
//!
//! A [`LogitModel`] is the low-rank-plus-diagonal Gaussian over per-voxel class
//! logits: `η ~ N(μ, P Pᵀ + D)`. Samples are drawn in factor form, so the
//! `(V·C)²` covariance is never built. A [`DirichletField`] holds evidential
//! outputs, with concentrations `(e + 1)²`.
//!
//! Class index [`FOREGROUND`] is the lesion channel. Entropy maps are defined
//! for the binary foreground task only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ProbMap, UncertaintyMap, VoxelGrid};
use crate::seed::{derive_seed, rng, Rng};
use crate::vgf::{self, Volume};

pub const FOREGROUND: usize = 1;

/// Number of stochastic inferences drawn per evaluation.
pub const DEFAULT_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ssn,
    Ensemble,
    #[default]
    External,
}

/// An ordered, non-empty collection of foreground probability maps sharing one
/// geometry. Binary samples are stored as 0/1 maps.
#[derive(Clone, Debug)]
pub struct SampleSet {
    members: Vec<ProbMap>,
    provenance: Provenance,
}

impl SampleSet {
    pub fn new(members: Vec<ProbMap>, provenance: Provenance) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Degenerate("sample set must contain at least one sample".into()))?;
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.dims() != first.dims() || m.spacing() != first.spacing() {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has geometry {:?}/{:?}, expected {:?}/{:?}",
                    m.dims(),
                    m.spacing(),
                    first.dims(),
                    first.spacing()
                )));
            }
        }
        Ok(Self { members, provenance })
    }

    pub fn from_masks(masks: &[BinaryMask], provenance: Provenance) -> Result<Self> {
        Self::new(masks.iter().map(BinaryMask::to_f64).collect(), provenance)
    }

    pub fn members(&self) -> &[ProbMap] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dims(&self) -> [usize; 3] {
        self.members[0].dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.members[0].spacing()
    }

    /// Voxelwise mean probability over the members.
    pub fn mean(&self) -> ProbMap {
        let first = &self.members[0];
        let mut acc = vec![0.0; first.len()];
        for m in &self.members {
            for (a, &v) in acc.iter_mut().zip(m.data()) {
                *a += v;
            }
        }
        let s = self.members.len() as f64;
        first.with_data(acc.into_iter().map(|a| a / s).collect())
    }

    pub fn binarized(&self, t: f64) -> Vec<BinaryMask> {
        self.members.iter().map(|m| crate::grid::binarize(m, t)).collect()
    }
}

/// Gaussian over per-voxel class logits with covariance `P Pᵀ + D`.
///
/// Logits are indexed voxel-major: entry `v * C + c`. The factor is stored
/// row-major with one row per logit entry and `rank` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitModel {
    dims: [usize; 3],
    spacing: [f64; 3],
    classes: usize,
    rank: usize,
    mean: Vec<f64>,
    factor: Vec<f64>,
    diag: Vec<f64>,
}

impl LogitModel {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        classes: usize,
        rank: usize,
        mean: Vec<f64>,
        factor: Vec<f64>,
        diag: Vec<f64>,
    ) -> Result<Self> {
        // validates geometry
        let probe = VoxelGrid::filled(dims, spacing, ())?;
        let entries = probe.len() * classes;
        if classes < 2 {
            return Err(Error::Domain(format!("need at least 2 classes, got {classes}")));
        }
        if mean.len() != entries {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, expected V*C = {entries}",
                mean.len()
            )));
        }
        if diag.len() != entries {
            return Err(Error::DimensionMismatch(format!(
                "diag has {} entries, expected V*C = {entries}",
                diag.len()
            )));
        }
        if factor.len() != entries * rank {
            return Err(Error::DimensionMismatch(format!(
                "factor has {} entries, expected V*C*R = {}",
                factor.len(),
                entries * rank
            )));
        }
        if let Some(d) = diag.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::Domain(format!("diagonal term {d} must be finite and >= 0")));
        }
        Ok(Self {
            dims,
            spacing,
            classes,
            rank,
            mean,
            factor,
            diag,
        })
    }

    /// A model with zero covariance around `mean`.
    pub fn deterministic(dims: [usize; 3], spacing: [f64; 3], classes: usize, mean: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        Self::new(dims, spacing, classes, 0, mean, Vec::new(), vec![0.0; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn voxels(&self) -> usize {
        self.mean.len() / self.classes
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Covariance entry `(i, j)` of `P Pᵀ + D`. Used for checks on small models.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let r = self.rank;
        let low: f64 = (0..r).map(|k| self.factor[i * r + k] * self.factor[j * r + k]).sum();
        if i == j {
            low + self.diag[i]
        } else {
            low
        }
    }

    /// One logit draw `μ + P ε_R + sqrt(D) ε_V`, written into `out`.
    /// Consumes `R` normals for the factor part, then `V·C` for the diagonal.
    pub fn draw_logits(&self, rng: &mut Rng, out: &mut Vec<f64>) {
        let r = self.rank;
        let eps_r: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        out.clear();
        out.extend(self.mean.iter().enumerate().map(|(i, &mu)| {
            let row = &self.factor[i * r..(i + 1) * r];
            let low: f64 = row.iter().zip(&eps_r).map(|(p, e)| p * e).sum();
            let e_v: f64 = rng.sample(StandardNormal);
            mu + low + self.diag[i].sqrt() * e_v
        }));
    }

    /// Foreground softmax probability for every voxel of a logit vector.
    pub fn foreground_probs(&self, logits: &[f64]) -> ProbMap {
        let c = self.classes;
        let data = logits.chunks_exact(c).map(|row| softmax_channel(row, FOREGROUND)).collect();
        VoxelGrid::new(self.dims, self.spacing, data).expect("geometry validated at construction")
    }

    /// `softmax(μ)`, the prediction of the mean logits.
    pub fn mean_probs(&self) -> ProbMap {
        self.foreground_probs(&self.mean)
    }
}

/// Softmax probability of one channel, computed with max-subtraction.
pub fn softmax_channel(logits: &[f64], channel: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    (logits[channel] - m).exp() / denom
}

/// Draws `n` spatially correlated samples and returns their foreground maps.
pub fn sample_logits(model: &LogitModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::Degenerate("sample count must be at least 1".into()));
    }
    let mut rng = rng(seed);
    let mut buf = Vec::with_capacity(model.mean.len());
    let members = (0..n)
        .map(|_| {
            model.draw_logits(&mut rng, &mut buf);
            model.foreground_probs(&buf)
        })
        .collect();
    SampleSet::new(members, Provenance::Ssn)
}

/// Evidential output: nonnegative per-voxel class evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletField {
    dims: [usize; 3],
    spacing: [f64; 3],
    classes: usize,
    evidence: Vec<f64>,
}

impl DirichletField {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], classes: usize, evidence: Vec<f64>) -> Result<Self> {
        let probe = VoxelGrid::filled(dims, spacing, ())?;
        if classes < 2 {
            return Err(Error::Domain(format!("need at least 2 classes, got {classes}")));
        }
        if evidence.len() != probe.len() * classes {
            return Err(Error::DimensionMismatch(format!(
                "evidence has {} entries, expected V*C = {}",
                evidence.len(),
                probe.len() * classes
            )));
        }
        if let Some(e) = evidence.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::Domain(format!("evidence {e} must be finite and >= 0")));
        }
        Ok(Self {
            dims,
            spacing,
            classes,
            evidence,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn evidence(&self) -> &[f64] {
        &self.evidence
    }

    /// `β = (e + 1)²`, voxel-major.
    pub fn concentrations(&self) -> Vec<f64> {
        self.evidence.iter().map(|&e| (e + 1.0) * (e + 1.0)).collect()
    }

    /// Dirichlet strength `S_v = Σ_c β_vc` per voxel.
    pub fn strength(&self) -> Vec<f64> {
        self.concentrations()
            .chunks_exact(self.classes)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Expected class probabilities `β_vc / S_v`, voxel-major.
    pub fn class_probabilities(&self) -> Vec<f64> {
        let beta = self.concentrations();
        beta.chunks_exact(self.classes)
            .flat_map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(move |&b| b / s)
            })
            .collect()
    }
}

/// Foreground channel of the Dirichlet expected probabilities.
pub fn dirichlet_probs(field: &DirichletField) -> ProbMap {
    let c = field.classes;
    let data = field
        .class_probabilities()
        .chunks_exact(c)
        .map(|row| row[FOREGROUND])
        .collect();
    VoxelGrid::new(field.dims, field.spacing, data).expect("geometry validated at construction")
}

/// Pools `draws_per_member` samples from each member set into one set whose
/// mean is the uniform mixture. Taking every sample of every member keeps the
/// original order; otherwise a seeded subset is drawn without replacement.
pub fn mix_ensemble(sets: &[SampleSet], draws_per_member: usize, seed: u64) -> Result<SampleSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Degenerate("ensemble must have at least one member".into()))?;
    if draws_per_member == 0 {
        return Err(Error::Degenerate("draws_per_member must be at least 1".into()));
    }
    let mut pooled = Vec::with_capacity(sets.len() * draws_per_member);
    for (m, set) in sets.iter().enumerate() {
        if set.dims() != first.dims() || set.spacing() != first.spacing() {
            return Err(Error::DimensionMismatch(format!(
                "ensemble member {m} has dims {:?}, expected {:?}",
                set.dims(),
                first.dims()
            )));
        }
        if draws_per_member > set.len() {
            return Err(Error::Degenerate(format!(
                "member {m} has {} samples, cannot draw {draws_per_member}",
                set.len()
            )));
        }
        let mut picks = if draws_per_member == set.len() {
            (0..set.len()).collect::<Vec<_>>()
        } else {
            let mut r = rng(derive_seed(seed, m as u64));
            rand::seq::index::sample(&mut r, set.len(), draws_per_member).into_vec()
        };
        picks.sort_unstable();
        pooled.extend(picks.into_iter().map(|i| set.members[i].clone()));
    }
    SampleSet::new(pooled, Provenance::Ensemble)
}

/// Ensemble of logit models: `draws_per_member` fresh logit samples from each
/// element, member `m` seeded with `derive_seed(seed, m)`.
pub fn sample_logit_ensemble(models: &[LogitModel], draws_per_member: usize, seed: u64) -> Result<SampleSet> {
    let sets = models
        .iter()
        .enumerate()
        .map(|(m, model)| sample_logits(model, draws_per_member, derive_seed(seed, m as u64)))
        .collect::<Result<Vec<_>>>()?;
    mix_ensemble(&sets, draws_per_member, seed)
}

/// Binary entropy in nats with `0 ln 0 = 0`, clamped to `[0, ln 2]`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    (term(p) + term(1.0 - p)).clamp(0.0, std::f64::consts::LN_2)
}

/// Predictive entropy of a probability map (sample-free methods).
pub fn entropy_map(p: &ProbMap) -> UncertaintyMap {
    p.map(|&v| binary_entropy(v))
}

/// Predictive entropy of the mean foreground probability of a sample set.
pub fn predictive_entropy(samples: &SampleSet) -> UncertaintyMap {
    entropy_map(&samples.mean())
}

/// Builds 3D samples from per-slice 2D samples: 3D sample `n` stacks, for
/// every slice, the slice sample with the `n`-th largest foreground volume.
/// Ties keep the original sample order. Slices are stacked in key order and
/// each slice sample must have dims `[nx, ny, 1]`.
pub fn assemble_3d_samples(
    per_slice: &BTreeMap<usize, Vec<ProbMap>>,
    provenance: Provenance,
) -> Result<SampleSet> {
    let (_, first) = per_slice
        .iter()
        .next()
        .ok_or_else(|| Error::Degenerate("no slices supplied".into()))?;
    let count = first.len();
    if count == 0 {
        return Err(Error::Degenerate("slices contain no samples".into()));
    }
    let geometry = first[0].dims();
    if geometry[2] != 1 {
        return Err(Error::DimensionMismatch(format!(
            "slice samples must have a single z plane, got dims {geometry:?}"
        )));
    }
    let spacing = first[0].spacing();
    let plane = geometry[0] * geometry[1];

    let mut orders = Vec::with_capacity(per_slice.len());
    for (&z, samples) in per_slice {
        if samples.len() != count {
            return Err(Error::RaggedSamples(format!(
                "slice {z} has {} samples, expected {count}",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|s| s.dims() != geometry) {
            return Err(Error::DimensionMismatch(format!(
                "slice {z} sample dims {:?}, expected {geometry:?}",
                bad.dims()
            )));
        }
        let volumes: Vec<f64> = samples.iter().map(|s| s.sum()).collect();
        let mut order: Vec<usize> = (0..count).collect();
        // stable sort keeps original order on ties
        order.sort_by(|&a, &b| volumes[b].total_cmp(&volumes[a]));
        orders.push((samples, order));
    }

    let dims = [geometry[0], geometry[1], per_slice.len()];
    let members = (0..count)
        .map(|n| {
            let mut data = Vec::with_capacity(plane * dims[2]);
            for (samples, order) in &orders {
                data.extend_from_slice(samples[order[n]].data());
            }
            VoxelGrid::new(dims, spacing, data)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(members, provenance)
}

/// On-disk manifest referencing the VGF volumes of a [`LogitModel`]. Each
/// volume stacks the `C` class channels along z, so its dims are
/// `[nx, ny, nz * C]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogitManifest {
    pub mu: PathBuf,
    pub diag: PathBuf,
    pub factors: Vec<PathBuf>,
    pub classes: usize,
}

fn to_channel_stack(dims: [usize; 3], spacing: [f64; 3], classes: usize, values: impl Fn(usize) -> f64) -> Result<VoxelGrid<f64>> {
    let v = dims.iter().product::<usize>();
    let mut data = vec![0.0; v * classes];
    for c in 0..classes {
        for i in 0..v {
            data[c * v + i] = values(i * classes + c);
        }
    }
    VoxelGrid::new([dims[0], dims[1], dims[2] * classes], spacing, data)
}

fn from_channel_stack(grid: &VoxelGrid<f64>, classes: usize) -> Result<([usize; 3], Vec<f64>)> {
    let d = grid.dims();
    if d[2] % classes != 0 {
        return Err(Error::DimensionMismatch(format!(
            "channel stack depth {} is not a multiple of {classes} classes",
            d[2]
        )));
    }
    let dims = [d[0], d[1], d[2] / classes];
    let v = dims.iter().product::<usize>();
    let mut out = vec![0.0; v * classes];
    for c in 0..classes {
        for i in 0..v {
            out[i * classes + c] = grid.data()[c * v + i];
        }
    }
    Ok((dims, out))
}

impl LogitModel {
    /// Writes `<stem>_mu.vgf`, `<stem>_diag.vgf`, `<stem>_factor<r>.vgf` and
    /// `<stem>.json` into `dir`; returns the manifest path. Values are stored
    /// as f32.
    pub fn write_bundle(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let c = self.classes;
        let r = self.rank;
        let mu = to_channel_stack(self.dims, self.spacing, c, |i| self.mean[i])?;
        let diag = to_channel_stack(self.dims, self.spacing, c, |i| self.diag[i])?;
        let mu_name = format!("{stem}_mu.vgf");
        let diag_name = format!("{stem}_diag.vgf");
        vgf::write(dir.join(&mu_name), &Volume::from_f64(&mu))?;
        vgf::write(dir.join(&diag_name), &Volume::from_f64(&diag))?;
        let mut factors = Vec::with_capacity(r);
        for k in 0..r {
            let col = to_channel_stack(self.dims, self.spacing, c, |i| self.factor[i * r + k])?;
            let name = format!("{stem}_factor{k}.vgf");
            vgf::write(dir.join(&name), &Volume::from_f64(&col))?;
            factors.push(PathBuf::from(name));
        }
        let manifest = LogitManifest {
            mu: mu_name.into(),
            diag: diag_name.into(),
            factors,
            classes: c,
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Loads a model from a manifest. Relative paths resolve against the
    /// manifest's directory.
    pub fn read_manifest(path: &Path) -> Result<Self> {
        let manifest: LogitManifest = serde_json::from_slice(&std::fs::read(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let load = |p: &Path| -> Result<VoxelGrid<f64>> { Ok(vgf::read(base.join(p))?.to_f64()) };
        let c = manifest.classes;
        let mu_grid = load(&manifest.mu)?;
        let spacing = mu_grid.spacing();
        let (dims, mean) = from_channel_stack(&mu_grid, c)?;
        let diag_grid = load(&manifest.diag)?;
        mu_grid.check_shape(&diag_grid)?;
        let (_, diag) = from_channel_stack(&diag_grid, c)?;
        let r = manifest.factors.len();
        let mut factor = vec![0.0; mean.len() * r];
        for (k, fp) in manifest.factors.iter().enumerate() {
            let g = load(fp)?;
            mu_grid.check_shape(&g)?;
            let (_, col) = from_channel_stack(&g, c)?;
            for (i, v) in col.into_iter().enumerate() {
                factor[i * r + k] = v;
            }
        }
        Self::new(dims, spacing, c, r, mean, factor, diag)
    }
}
