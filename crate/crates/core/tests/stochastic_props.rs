use std::f64::consts::LN_2;

use proptest::prelude::*;

use seg_uq::grid::VoxelGrid;
use seg_uq::stochastic::{
    binary_entropy, dirichlet_probs, mix_ensemble, predictive_entropy, sample_logits, DirichletField, LogitModel,
    Provenance, SampleSet,
};

const D: [usize; 3] = [3, 2, 2];
const V: usize = 12;

fn model() -> impl Strategy<Value = LogitModel> {
    (1usize..3, 0usize..3).prop_flat_map(|(extra, rank)| {
        let c = extra + 1;
        (
            prop::collection::vec(-5.0f64..5.0, V * c),
            prop::collection::vec(-1.0f64..1.0, V * c * rank),
            prop::collection::vec(0.0f64..2.0, V * c),
        )
            .prop_map(move |(m, f, d)| LogitModel::new(D, [1.0; 3], c, rank, m, f, d).unwrap())
    })
}

proptest! {
    #[test]
    fn samples_are_probabilities(m in model(), n in 1usize..6, seed in any::<u64>()) {
        let set = sample_logits(&m, n, seed).unwrap();
        prop_assert_eq!(set.len(), n);
        prop_assert_eq!(set.provenance(), Provenance::Ssn);
        for member in set.members() {
            prop_assert!(member.data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let again = sample_logits(&m, n, seed).unwrap();
        prop_assert_eq!(again.members(), set.members());
        let u = predictive_entropy(&set);
        prop_assert!(u.data().iter().all(|h| (0.0..=LN_2).contains(h)));
    }

    #[test]
    fn entropy_is_symmetric(p in 0.0f64..=1.0) {
        prop_assert!((binary_entropy(p) - binary_entropy(1.0 - p)).abs() <= 1e-15);
        prop_assert!(binary_entropy(p) <= binary_entropy(0.5));
    }

    #[test]
    fn dirichlet_mean_is_normalized(c in 2usize..5, ev in prop::collection::vec(0.0f64..50.0, V * 4)) {
        let field = DirichletField::new(D, [1.0; 3], c, ev[..V * c].to_vec()).unwrap();
        let probs = field.class_probabilities();
        for row in probs.chunks_exact(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let fg = dirichlet_probs(&field);
        for (v, p) in fg.data().iter().enumerate() {
            let e = &ev[v * c..(v + 1) * c];
            let beta: Vec<f64> = e.iter().map(|x| (x + 1.0).powi(2)).collect();
            let want = beta[1] / beta.iter().sum::<f64>();
            prop_assert!((p - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn ensemble_pools_the_requested_draws(members in 1usize..4, per in 1usize..5, draws in 1usize..5, seed in any::<u64>()) {
        let draws = draws.min(per);
        let sets: Vec<SampleSet> = (0..members)
            .map(|m| {
                let maps = (0..per)
                    .map(|s| VoxelGrid::filled(D, [1.0; 3], (m * per + s) as f64 / 100.0).unwrap())
                    .collect();
                SampleSet::new(maps, Provenance::Ssn).unwrap()
            })
            .collect();
        let mixed = mix_ensemble(&sets, draws, seed).unwrap();
        prop_assert_eq!(mixed.len(), members * draws);
        prop_assert_eq!(mixed.provenance(), Provenance::Ensemble);
        // draws are without replacement, so every pooled map is distinct
        let mut tags: Vec<i64> = mixed.members().iter().map(|m| (m.data()[0] * 100.0).round() as i64).collect();
        tags.dedup();
        prop_assert_eq!(tags.len(), members * draws);
    }
}

#[test]
fn zero_samples_are_refused() {
    let m = LogitModel::deterministic(D, [1.0; 3], 2, vec![0.0; V * 2]).unwrap();
    assert!(sample_logits(&m, 0, 1).is_err());
}
