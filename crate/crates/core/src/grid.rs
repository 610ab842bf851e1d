//! Dense voxel grids with anisotropic spacing, plus the three primitives every
//! other module builds on: thresholding, 3D connected components and exact
//! Euclidean distance fields.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 3D scalar field. Data is stored with x varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<T>,
}

/// Foreground-class probabilities in `[0, 1]`.
pub type ProbMap = VoxelGrid<f64>;
/// Voxelwise predictive entropy in `[0, ln 2]`.
pub type UncertaintyMap = VoxelGrid<f64>;
pub type BinaryMask = VoxelGrid<bool>;

/// Slack allowed above `ln 2` when validating uncertainty maps.
pub const UNCERTAINTY_SLACK: f64 = 1e-9;

fn check_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<usize> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidGrid(format!(
            "spacing must be finite and positive, got {spacing:?}"
        )));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidGrid("voxel count overflows usize".into()))
}

impl<T> VoxelGrid<T> {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        if data.len() != n {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        let mut data = Vec::with_capacity(n);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Volume of a single voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.index(x, y, z)]
    }

    pub fn same_shape<U>(&self, other: &VoxelGrid<U>) -> bool {
        self.dims == other.dims
    }

    /// Errors unless `other` has the same dims as `self`.
    pub fn check_shape<U>(&self, other: &VoxelGrid<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )))
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> VoxelGrid<U> {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Same geometry, new data. Panics if the length differs.
    pub fn with_data<U>(&self, data: Vec<U>) -> VoxelGrid<U> {
        assert_eq!(data.len(), self.data.len(), "with_data: length mismatch");
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }
}

impl<T: Clone> VoxelGrid<T> {
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        Ok(Self {
            dims,
            spacing,
            data: vec![value; n],
        })
    }
}

impl VoxelGrid<f64> {
    /// Checks every value lies in `[0, 1]`.
    pub fn validate_probabilities(&self) -> Result<()> {
        match self.data.iter().position(|p| !(0.0..=1.0).contains(p)) {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!(
                "probability {} at voxel {} is outside [0, 1]",
                self.data[i], i
            ))),
        }
    }

    /// Checks every value lies in `[0, ln 2 + slack]`.
    pub fn validate_uncertainty(&self) -> Result<()> {
        let hi = std::f64::consts::LN_2 + UNCERTAINTY_SLACK;
        match self.data.iter().position(|u| !(0.0..=hi).contains(u)) {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!(
                "uncertainty {} at voxel {} is outside [0, ln 2]",
                self.data[i], i
            ))),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl VoxelGrid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Foreground volume in mm³.
    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.voxel_volume()
    }

    pub fn to_f64(&self) -> VoxelGrid<f64> {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_shape(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        ))
    }

    pub fn not(&self) -> BinaryMask {
        self.map(|&b| !b)
    }
}

/// Voxel is foreground iff `p >= t`.
pub fn binarize(p: &VoxelGrid<f64>, t: f64) -> BinaryMask {
    p.map(|&v| v >= t)
}

/// Neighborhood used for connected components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_axes = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nz = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nz > 0 && nz <= max_axes {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6, 18 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub id: u32,
    /// Flat voxel indices, ascending.
    pub voxels: Vec<usize>,
}

impl Component {
    pub fn size(&self) -> usize {
        self.voxels.len()
    }
}

/// Label grid (0 = background, components numbered from 1 in scan order of
/// their first voxel) together with the component table.
#[derive(Clone, Debug)]
pub struct ComponentLabeling {
    pub labels: VoxelGrid<u32>,
    pub components: Vec<Component>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.components.len()
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let [nx, ny, nz] = mask.dims();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; mask.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..mask.len() {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut voxels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            voxels.push(idx);
            let [x, y, z] = mask.coords(idx);
            for off in &offsets {
                let (xx, yy, zz) = (
                    x as isize + off[0],
                    y as isize + off[1],
                    z as isize + off[2],
                );
                if xx < 0 || yy < 0 || zz < 0 {
                    continue;
                }
                let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                if xx >= nx || yy >= ny || zz >= nz {
                    continue;
                }
                let n = mask.index(xx, yy, zz);
                if mask.data[n] && labels[n] == 0 {
                    labels[n] = id;
                    queue.push_back(n);
                }
            }
        }
        voxels.sort_unstable();
        components.push(Component { id, voxels });
    }

    ComponentLabeling {
        labels: mask.with_data(labels),
        components,
    }
}

/// Exact squared-distance lower envelope along one line (Felzenszwalb &
/// Huttenlocher) with sample positions `i * spacing`. Infinite inputs are
/// treated as absent sites.
fn squared_edt_line(f: &[f64], spacing: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    let pos = |i: usize| i as f64 * spacing;
    let intersect = |p: usize, q: usize| {
        let (xp, xq) = (pos(p), pos(q));
        ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp))
    };

    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match sites.last() {
                None => {
                    sites.push(q);
                    break;
                }
                Some(&p) => {
                    let s = intersect(p, q);
                    if let Some(&b) = bounds.last() {
                        if s <= b {
                            sites.pop();
                            bounds.pop();
                            continue;
                        }
                    }
                    bounds.push(s);
                    sites.push(q);
                    break;
                }
            }
        }
    }

    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = pos(i);
        while k < bounds.len() && bounds[k] < x {
            k += 1;
        }
        let d = x - pos(sites[k]);
        *o = d * d + f[sites[k]];
    }
}

/// Euclidean distance in mm from every voxel centre to the nearest foreground
/// voxel centre. Foreground voxels get 0.
pub fn distance_field(mask: &BinaryMask) -> Result<VoxelGrid<f64>> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let dims = mask.dims();
    let spacing = mask.spacing();
    let mut sq: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut sites, mut bounds) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        // every line along `axis` starts at a voxel whose `axis` coordinate is 0
        for start in 0..sq.len() {
            if mask.coords(start)[axis] != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = sq[start + i * stride];
            }
            squared_edt_line(&line, spacing[axis], &mut out, &mut sites, &mut bounds);
            for i in 0..n {
                sq[start + i * stride] = out[i];
            }
        }
    }

    Ok(mask.with_data(sq.into_iter().map(f64::sqrt).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::filled(dims, spacing, false).unwrap();
        for &[x, y, z] in on {
            let i = m.index(x, y, z);
            m.data_mut()[i] = true;
        }
        m
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(VoxelGrid::new([2, 2, 0], [1.0; 3], Vec::<f64>::new()).is_err());
        assert!(VoxelGrid::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]).is_err());
        assert!(VoxelGrid::new([2, 1, 1], [1.0; 3], vec![0.0]).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let g = VoxelGrid::filled([3, 4, 5], [1.0; 3], 0u8).unwrap();
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        assert_eq!(g.coords(g.index(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn binarize_boundary_inclusive() {
        let p = ProbMap::filled([2, 2, 2], [1.0; 3], 0.5).unwrap();
        assert_eq!(binarize(&p, 0.5).count(), 8);
        assert_eq!(binarize(&p, 0.500_000_1).count(), 0);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = BinaryMask::filled([4, 4, 4], [1.0; 3], false).unwrap();
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 0);
    }

    #[test]
    fn corner_touching_voxels() {
        let m = mask_from([3, 3, 3], [1.0; 3], &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).count(), 2);
        assert_eq!(connected_components(&m, Connectivity::Six).count(), 2);

        let edge = mask_from([3, 3, 3], [1.0; 3], &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(connected_components(&edge, Connectivity::Eighteen).count(), 1);
        assert_eq!(connected_components(&edge, Connectivity::Six).count(), 2);
    }

    #[test]
    fn labels_follow_scan_order() {
        let m = mask_from([4, 1, 1], [1.0; 3], &[[0, 0, 0], [2, 0, 0], [3, 0, 0]]);
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.labels.data(), &[1, 0, 2, 2]);
        assert_eq!(cc.components[1].voxels, vec![2, 3]);
    }

    #[test]
    fn connectivity_serde() {
        let c: Connectivity = serde_json::from_str("18").unwrap();
        assert_eq!(c, Connectivity::Eighteen);
        assert_eq!(serde_json::to_string(&Connectivity::TwentySix).unwrap(), "26");
        assert!(serde_json::from_str::<Connectivity>("7").is_err());
    }

    #[test]
    fn distance_respects_spacing() {
        let m = mask_from([3, 3, 3], [1.0, 2.0, 3.0], &[[1, 1, 1]]);
        let d = distance_field(&m).unwrap();
        assert_eq!(*d.get(1, 1, 1), 0.0);
        assert_eq!(*d.get(2, 1, 1), 1.0);
        assert_eq!(*d.get(1, 2, 1), 2.0);
        assert_eq!(*d.get(1, 1, 2), 3.0);
        assert!((d.get(2, 2, 2) - (1.0f64 + 4.0 + 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_of_full_and_empty_masks() {
        let full = BinaryMask::filled([3, 2, 2], [0.5, 1.0, 2.0], true).unwrap();
        assert!(distance_field(&full).unwrap().data().iter().all(|&d| d == 0.0));
        let empty = BinaryMask::filled([3, 2, 2], [1.0; 3], false).unwrap();
        assert!(matches!(distance_field(&empty), Err(Error::EmptyMask)));
    }
}
