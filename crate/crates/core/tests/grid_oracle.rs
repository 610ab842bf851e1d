mod oracle;

use proptest::prelude::*;

use seg_uq::grid::{binarize, connected_components, distance_field, Connectivity, VoxelGrid};

fn masks() -> impl Strategy<Value = ([usize; 3], Vec<bool>)> {
    (1usize..7, 1usize..7, 1usize..6, 0.05f64..0.6).prop_flat_map(|(x, y, z, density)| {
        let n = x * y * z;
        (Just([x, y, z]), prop::collection::vec(prop::bool::weighted(density), n))
    })
}

fn conn_of(code: u8) -> Connectivity {
    Connectivity::try_from(code).unwrap()
}

proptest! {
    #[test]
    fn components_match_union_find((d, mask) in masks(), code in prop::sample::select(vec![6u8, 18, 26])) {
        let grid = VoxelGrid::new(d, [1.0; 3], mask.clone()).unwrap();
        let got = connected_components(&grid, conn_of(code));
        let want = oracle::components(&mask, d, code);
        let got_sets: Vec<Vec<usize>> = got.components.iter().map(|c| c.voxels.clone()).collect();
        prop_assert_eq!(got_sets, want);
        for (k, c) in got.components.iter().enumerate() {
            for &i in &c.voxels {
                prop_assert_eq!(got.labels.data()[i] as usize, k + 1);
            }
        }
        prop_assert_eq!(got.labels.data().iter().filter(|&&l| l == 0).count(), mask.iter().filter(|&&b| !b).count());
    }

    #[test]
    fn finer_connectivity_never_merges_more((d, mask) in masks()) {
        let grid = VoxelGrid::new(d, [1.0; 3], mask).unwrap();
        let n6 = connected_components(&grid, Connectivity::Six).count();
        let n18 = connected_components(&grid, Connectivity::Eighteen).count();
        let n26 = connected_components(&grid, Connectivity::TwentySix).count();
        prop_assert!(n6 >= n18 && n18 >= n26);
    }

    #[test]
    fn distance_matches_exhaustive_search(
        (d, mut mask) in masks(),
        spacing in prop::sample::select(vec![[1.0, 1.0, 1.0], [1.0, 1.5, 2.0], [0.5, 2.0, 3.0], [2.0, 0.25, 1.0]]),
    ) {
        if !mask.iter().any(|&b| b) {
            mask[0] = true;
        }
        let grid = VoxelGrid::new(d, spacing, mask.clone()).unwrap();
        let got = distance_field(&grid).unwrap();
        let want = oracle::distance(&mask, d, spacing);
        for (g, w) in got.data().iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * w.max(1.0), "{} vs {}", g, w);
        }
    }

    #[test]
    fn binarize_is_inclusive(values in prop::collection::vec(0.0f64..=1.0, 1..40), t in 0.0f64..=1.0) {
        let n = values.len();
        let grid = VoxelGrid::new([n, 1, 1], [1.0; 3], values.clone()).unwrap();
        let m = binarize(&grid, t);
        for (b, v) in m.data().iter().zip(&values) {
            prop_assert_eq!(*b, *v >= t);
        }
    }
}

#[test]
fn distance_of_empty_mask_is_an_error() {
    let grid = VoxelGrid::new([3, 3, 3], [1.0; 3], vec![false; 27]).unwrap();
    assert!(distance_field(&grid).is_err());
}

#[test]
fn diagonal_voxels_split_under_six_connectivity() {
    let mut mask = vec![false; 8];
    mask[oracle::idx([2, 2, 2], 0, 0, 0)] = true;
    mask[oracle::idx([2, 2, 2], 1, 1, 0)] = true;
    mask[oracle::idx([2, 2, 2], 1, 1, 1)] = true;
    let grid = VoxelGrid::new([2, 2, 2], [1.0; 3], mask).unwrap();
    assert_eq!(connected_components(&grid, Connectivity::Six).count(), 2);
    assert_eq!(connected_components(&grid, Connectivity::Eighteen).count(), 1);
    assert_eq!(connected_components(&grid, Connectivity::TwentySix).count(), 1);
}
