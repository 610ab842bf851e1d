//! Ventricle-distance ring partition and the per-ring features fed to the
//! Fazekas and QC classifiers, plus the feature table and its normalization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{connected_components, distance_field, BinaryMask, Connectivity, VoxelGrid};
use crate::stochastic::SampleSet;

/// Outer edges of R0, R1 and R2 in mm.
pub const RING_EDGES_MM: [f64; 3] = [5.0, 10.0, 15.0];
pub const FEATURE_THRESHOLD: f64 = 0.2;
/// Label of voxels outside the brain in [`RingPartition::labels`].
pub const OUTSIDE: u8 = u8::MAX;
pub const NUM_RINGS: usize = 4;

/// Ring index for a distance to the ventricles.
pub fn ring_of(distance_mm: f64) -> u8 {
    ring_with_edges(distance_mm, &RING_EDGES_MM)
}

fn ring_with_edges(distance_mm: f64, edges: &[f64; 3]) -> u8 {
    edges.iter().take_while(|&&edge| distance_mm >= edge).count() as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct RingPartition {
    labels: VoxelGrid<u8>,
    distance: VoxelGrid<f64>,
}

impl RingPartition {
    /// Per voxel ring index 0..=3, or [`OUTSIDE`].
    pub fn labels(&self) -> &VoxelGrid<u8> {
        &self.labels
    }

    /// Distance in mm to the nearest ventricle voxel.
    pub fn distance(&self) -> &VoxelGrid<f64> {
        &self.distance
    }

    pub fn dims(&self) -> [usize; 3] {
        self.labels.dims()
    }

    pub fn region(&self, ring: u8) -> BinaryMask {
        self.labels.map(|&l| l == ring)
    }

    pub fn brain(&self) -> BinaryMask {
        self.labels.map(|&l| l != OUTSIDE)
    }

    pub fn region_volume(&self, ring: u8) -> f64 {
        self.labels.data().iter().filter(|&&l| l == ring).count() as f64 * self.labels.voxel_volume()
    }
}

pub fn ring_partition(ventricles: &BinaryMask, brain: &BinaryMask) -> Result<RingPartition> {
    ring_partition_with_edges(ventricles, brain, &RING_EDGES_MM)
}

/// Partition with custom ascending ring edges in mm.
pub fn ring_partition_with_edges(ventricles: &BinaryMask, brain: &BinaryMask, edges: &[f64; 3]) -> Result<RingPartition> {
    if !(edges[0] > 0.0 && edges[0] < edges[1] && edges[1] < edges[2]) {
        return Err(Error::Domain(format!("ring edges {edges:?} must be positive and increasing")));
    }
    ventricles.check_shape(brain)?;
    if ventricles.count() == 0 {
        return Err(Error::EmptyVentricles);
    }
    if ventricles.data().iter().zip(brain.data()).any(|(&v, &b)| v && !b) {
        return Err(Error::Domain("ventricles extend outside the brain mask".into()));
    }
    let distance = distance_field(ventricles)?;
    let labels = brain.with_data(
        brain
            .data()
            .iter()
            .zip(distance.data())
            .map(|(&b, &d)| if b { ring_with_edges(d, edges) } else { OUTSIDE })
            .collect(),
    );
    Ok(RingPartition { labels, distance })
}

/// Zeroes values below `t`; the rest keep their soft value.
pub fn threshold_map(m: &VoxelGrid<f64>, t: f64) -> VoxelGrid<f64> {
    m.map(|&v| if v < t { 0.0 } else { v })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Seg,
    Uq,
    /// Std across samples of a seg-derived feature.
    SampleStd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRegion {
    R0,
    R1,
    R2,
    R3,
    Bridge12,
    Bridge23,
    Global,
}

impl FeatureRegion {
    fn ring(ring: u8) -> Self {
        [Self::R0, Self::R1, Self::R2, Self::R3][ring as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub source: FeatureSource,
    pub region: FeatureRegion,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub features: Vec<Feature>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.value)
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.value).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Features of one thresholded map. Names are `{prefix}_r{i}_volume`,
/// `{prefix}_r{i}_cc_density`, `{prefix}_r{i}_cc_std`, `{prefix}_bridge12`,
/// `{prefix}_bridge23` and `{prefix}_global_volume`.
fn map_features(
    map: &VoxelGrid<f64>,
    rings: &RingPartition,
    t: f64,
    connectivity: Connectivity,
    prefix: &str,
    source: FeatureSource,
) -> Vec<Feature> {
    let thr = threshold_map(map, t);
    let labels = rings.labels().data();
    let vv = map.voxel_volume();
    let mut out = Vec::with_capacity(NUM_RINGS * 3 + 3);
    let mut push = |name: String, region, value| out.push(Feature { name, source, region, value });

    for ring in 0..NUM_RINGS as u8 {
        let region = FeatureRegion::ring(ring);
        let volume: f64 = thr.data().iter().zip(labels).filter(|(_, &l)| l == ring).map(|(v, _)| v).sum::<f64>() * vv;
        let mask = thr.with_data(thr.data().iter().zip(labels).map(|(&v, &l)| v > 0.0 && l == ring).collect());
        let cc = connected_components(&mask, connectivity);
        let region_volume = rings.region_volume(ring);
        let sizes: Vec<f64> = cc.components.iter().map(|c| c.size() as f64 * vv).collect();
        let (density, spread) = if region_volume > 0.0 {
            (cc.count() as f64 / region_volume, population_std(&sizes) / region_volume)
        } else {
            (0.0, 0.0)
        };
        push(format!("{prefix}_r{ring}_volume"), region, volume);
        push(format!("{prefix}_r{ring}_cc_density"), region, density);
        push(format!("{prefix}_r{ring}_cc_std"), region, spread);
    }

    let in_brain = thr.with_data(thr.data().iter().zip(labels).map(|(&v, &l)| v > 0.0 && l != OUTSIDE).collect());
    let cc = connected_components(&in_brain, connectivity);
    let bridge = |a: u8, b: u8| {
        cc.components
            .iter()
            .filter(|c| c.voxels.iter().any(|&i| labels[i] == a) && c.voxels.iter().any(|&i| labels[i] == b))
            .map(|c| c.size() as f64 * vv)
            .fold(0.0, f64::max)
    };
    push(format!("{prefix}_bridge12"), FeatureRegion::Bridge12, bridge(0, 1));
    push(format!("{prefix}_bridge23"), FeatureRegion::Bridge23, bridge(1, 2));
    let global: f64 = thr.data().iter().zip(labels).filter(|(_, &l)| l != OUTSIDE).map(|(v, _)| v).sum::<f64>() * vv;
    push(format!("{prefix}_global_volume"), FeatureRegion::Global, global);
    out
}

pub fn extract_features(
    seg: &VoxelGrid<f64>,
    uq: &VoxelGrid<f64>,
    samples: Option<&SampleSet>,
    rings: &RingPartition,
    t: f64,
    connectivity: Connectivity,
) -> Result<FeatureVector> {
    seg.check_shape(uq)?;
    seg.check_shape(rings.labels())?;
    let mut features = map_features(seg, rings, t, connectivity, "seg", FeatureSource::Seg);
    features.extend(map_features(uq, rings, t, connectivity, "uq", FeatureSource::Uq));

    if let Some(samples) = samples {
        if samples.dims() != seg.dims() {
            return Err(Error::DimensionMismatch(format!(
                "samples {:?} vs map {:?}",
                samples.dims(),
                seg.dims()
            )));
        }
        let per_sample: Vec<Vec<Feature>> = samples
            .members()
            .iter()
            .map(|s| map_features(s, rings, t, connectivity, "seg", FeatureSource::Seg))
            .collect();
        let template = &per_sample[0];
        for (j, f) in template.iter().enumerate() {
            let column: Vec<f64> = per_sample.iter().map(|row| row[j].value).collect();
            features.push(Feature {
                name: format!("std_{}", f.name),
                source: FeatureSource::SampleStd,
                region: f.region,
                value: population_std(&column),
            });
        }
    }
    Ok(FeatureVector { features })
}

/// Subjects × features, with optional integer targets keyed by name
/// (for example `deep`, `pv`, `qc`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub subjects: Vec<String>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: BTreeMap<String, Vec<usize>>,
}

const TARGET_PREFIX: &str = "target_";

impl FeatureTable {
    pub fn new(subjects: Vec<String>, names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if subjects.len() != rows.len() {
            return Err(Error::DimensionMismatch(format!("{} subjects, {} rows", subjects.len(), rows.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::DimensionMismatch(format!("row of {} values, {} names", r.len(), names.len())));
        }
        let mut sorted = names.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate feature names".into()));
        }
        Ok(Self { subjects, names, rows, targets: BTreeMap::new() })
    }

    pub fn from_vectors(subjects: Vec<String>, vectors: &[FeatureVector]) -> Result<Self> {
        let names = vectors.first().map(FeatureVector::names).unwrap_or_default();
        if vectors.iter().any(|v| v.names() != names) {
            return Err(Error::Format("feature vectors have different feature sets".into()));
        }
        Self::new(subjects, names, vectors.iter().map(FeatureVector::values).collect())
    }

    pub fn with_target(mut self, name: &str, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "target {name} has {} labels for {} rows",
                labels.len(),
                self.rows.len()
            )));
        }
        self.targets.insert(name.to_string(), labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn target(&self, name: &str) -> Result<&[usize]> {
        self.targets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingFeature(format!("{TARGET_PREFIX}{name}")))
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingFeature(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Keeps the named columns in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_>>()?;
        Ok(Self {
            subjects: self.subjects.clone(),
            names: names.to_vec(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            targets: self.targets.clone(),
        })
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            subjects: rows.iter().map(|&i| self.subjects[i].clone()).collect(),
            names: self.names.clone(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: self
                .targets
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// CSV with a `subject` column, one column per feature and one
    /// `target_<name>` column per target.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["subject".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(self.targets.keys().map(|k| format!("{TARGET_PREFIX}{k}")));
        out.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![self.subjects[i].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.extend(self.targets.values().map(|t| t[i].to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("subject") {
            return Err(Error::Format("first CSV column must be `subject`".into()));
        }
        let mut feature_cols = Vec::new();
        let mut target_cols = Vec::new();
        for (j, h) in header.iter().enumerate().skip(1) {
            match h.strip_prefix(TARGET_PREFIX) {
                Some(t) => target_cols.push((j, t.to_string())),
                None => feature_cols.push((j, h.clone())),
            }
        }
        let mut subjects = Vec::new();
        let mut rows = Vec::new();
        let mut targets: BTreeMap<String, Vec<usize>> =
            target_cols.iter().map(|(_, t)| (t.clone(), Vec::new())).collect();
        for rec in reader.records() {
            let rec = rec?;
            subjects.push(rec[0].to_string());
            let row = feature_cols
                .iter()
                .map(|(j, h)| {
                    rec[*j]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad value {:?} in column {h}", &rec[*j])))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
            for (j, t) in &target_cols {
                let v = rec[*j]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad label {:?} in column {TARGET_PREFIX}{t}", &rec[*j])))?;
                targets.get_mut(t).expect("target column registered").push(v);
            }
        }
        let mut tbl = Self::new(subjects, feature_cols.into_iter().map(|(_, h)| h).collect(), rows)?;
        tbl.targets = targets;
        Ok(tbl)
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Percentile by linear interpolation between order statistics
/// (position `(n − 1) q` in the sorted values).
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub const CLIP_PERCENTILE: f64 = 0.95;

/// Per-feature clip level, mean and std, fit on training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub names: Vec<String>,
    pub p95: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Relative spread below which a fitted feature is treated as constant.
pub const CONSTANT_RTOL: f64 = 1e-9;

impl NormalizationParams {
    /// Mean and (population) std per feature use only fit values at or below
    /// the 95th percentile.
    pub fn fit(tbl: &FeatureTable, fit_rows: &[usize]) -> Result<Self> {
        if fit_rows.is_empty() {
            return Err(Error::Degenerate("no rows to fit normalization on".into()));
        }
        let k = tbl.names.len();
        let mut p95 = Vec::with_capacity(k);
        let mut mean = Vec::with_capacity(k);
        let mut std = Vec::with_capacity(k);
        for j in 0..k {
            let col: Vec<f64> = fit_rows.iter().map(|&i| tbl.rows[i][j]).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("non-finite value in feature {}", tbl.names[j])));
            }
            let clip = percentile(&col, CLIP_PERCENTILE).expect("non-empty column");
            // spread at rounding level relative to the column counts as constant
            let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let kept: Vec<f64> = col.into_iter().filter(|&v| v <= clip).collect();
            let m = kept.iter().sum::<f64>() / kept.len() as f64;
            let sd = population_std(&kept);
            p95.push(clip);
            mean.push(m);
            std.push(if sd > CONSTANT_RTOL * scale { sd } else { 0.0 });
        }
        Ok(Self { names: tbl.names.clone(), p95, mean, std })
    }

    /// Clips to the fitted p95, then z-scores; zero-std features map to 0.
    pub fn apply(&self, tbl: &FeatureTable) -> Result<FeatureTable> {
        let aligned = tbl.select(&self.names)?;
        let rows = aligned
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        if self.std[j] > 0.0 {
                            (v.min(self.p95[j]) - self.mean[j]) / self.std[j]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureTable { rows, ..aligned })
    }
}

pub fn normalize_table(tbl: &FeatureTable, fit_rows: &[usize]) -> Result<(FeatureTable, NormalizationParams)> {
    let params = NormalizationParams::fit(tbl, fit_rows)?;
    Ok((params.apply(tbl)?, params))
}
