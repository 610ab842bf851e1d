mod oracle;

use proptest::prelude::*;

use seg_uq::features::{
    normalize_table, percentile, ring_partition_with_edges, FeatureTable, NormalizationParams, OUTSIDE,
};
use seg_uq::grid::VoxelGrid;

fn rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..12, 1usize..4).prop_flat_map(|(n, k)| prop::collection::vec(prop::collection::vec(-50.0f64..50.0, k), n))
}

fn table(rows: Vec<Vec<f64>>) -> FeatureTable {
    let k = rows[0].len();
    FeatureTable::new(
        (0..rows.len()).map(|i| format!("s{i}")).collect(),
        (0..k).map(|j| format!("f{j}")).collect(),
        rows,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn percentile_matches_sorted_interpolation(values in prop::collection::vec(-1e3f64..1e3, 1..30), q in 0.0f64..=1.0) {
        let mut s = values.clone();
        s.sort_by(f64::total_cmp);
        let pos = q * (s.len() - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos.fract());
        let want = if lo + 1 < s.len() { s[lo] * (1.0 - frac) + s[lo + 1] * frac } else { s[lo] };
        let got = percentile(&values, q).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        prop_assert!(got >= s[0] && got <= s[s.len() - 1]);
    }

    #[test]
    fn normalization_ignores_positive_affine_maps(rows in rows(), a in 0.1f64..10.0, b in -20.0f64..20.0) {
        let fit_rows: Vec<usize> = (0..rows.len()).collect();
        let (z, _) = normalize_table(&table(rows.clone()), &fit_rows).unwrap();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| a * v + b).collect()).collect();
        let (z2, _) = normalize_table(&table(moved), &fit_rows).unwrap();
        for (r1, r2) in z.rows.iter().zip(&z2.rows) {
            for (x, y) in r1.iter().zip(r2) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn normalized_values_are_capped(rows in rows()) {
        let fit_rows: Vec<usize> = (0..rows.len()).collect();
        let tbl = table(rows);
        let params = NormalizationParams::fit(&tbl, &fit_rows).unwrap();
        let z = params.apply(&tbl).unwrap();
        for j in 0..tbl.names.len() {
            let cap = if params.std[j] > 0.0 { (params.p95[j] - params.mean[j]) / params.std[j] } else { 0.0 };
            for r in &z.rows {
                prop_assert!(r[j] <= cap + 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_lossless(rows in rows()) {
        let tbl = table(rows);
        let mut buf = Vec::new();
        tbl.write_csv(&mut buf).unwrap();
        let back = FeatureTable::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.subjects, tbl.subjects);
        prop_assert_eq!(back.names, tbl.names);
        prop_assert_eq!(back.rows, tbl.rows);
    }

    #[test]
    fn rings_follow_exhaustive_distance(
        (d, vent, extra) in (2usize..7, 2usize..7, 1usize..5).prop_flat_map(|(x, y, z)| {
            let n = x * y * z;
            (Just([x, y, z]), prop::collection::vec(prop::bool::weighted(0.1), n), prop::collection::vec(prop::bool::weighted(0.7), n))
        }),
        spacing in prop::sample::select(vec![[1.0, 1.0, 1.0], [2.0, 1.0, 3.0]]),
    ) {
        let mut vent = vent;
        if !vent.iter().any(|&b| b) {
            vent[0] = true;
        }
        let brain: Vec<bool> = vent.iter().zip(&extra).map(|(v, e)| *v || *e).collect();
        let edges = [1.5, 2.5, 4.0];
        let part = ring_partition_with_edges(
            &VoxelGrid::new(d, spacing, vent.clone()).unwrap(),
            &VoxelGrid::new(d, spacing, brain.clone()).unwrap(),
            &edges,
        )
        .unwrap();
        let dist = oracle::distance(&vent, d, spacing);
        for i in 0..vent.len() {
            let want = if brain[i] { edges.iter().filter(|&&e| dist[i] >= e).count() as u8 } else { OUTSIDE };
            prop_assert_eq!(part.labels().data()[i], want);
        }
        let v = spacing.iter().product::<f64>();
        let total: f64 = (0..4u8).map(|r| part.region_volume(r)).sum();
        prop_assert!((total - brain.iter().filter(|&&b| b).count() as f64 * v).abs() < 1e-9);
    }
}

#[test]
fn constant_columns_normalize_to_zero() {
    let tbl = table(vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 4.0]]);
    let (z, params) = normalize_table(&tbl, &[0, 1, 2]).unwrap();
    assert_eq!(params.std[0], 0.0);
    assert!(z.rows.iter().all(|r| r[0] == 0.0));
}

#[test]
fn ventricles_outside_brain_are_rejected() {
    let vent = VoxelGrid::new([2, 1, 1], [1.0; 3], vec![true, false]).unwrap();
    let brain = VoxelGrid::new([2, 1, 1], [1.0; 3], vec![false, true]).unwrap();
    assert!(ring_partition_with_edges(&vent, &brain, &[1.0, 2.0, 3.0]).is_err());
}
