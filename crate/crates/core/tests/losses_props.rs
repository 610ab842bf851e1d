use ndarray::{Array2, Array3, ArrayD};
use proptest::prelude::*;

use seg_uq::losses::{evid_kl, evid_sdice, evid_xent, evidential_loss, gaussian_kl, hs_mc_loss, ssn_loss, DiagGaussian};

const H: f64 = 1e-6;

fn one_hot(labels: &[usize], c: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), c), |(v, k)| if labels[v] == k { 1.0 } else { 0.0 })
}

fn alpha_case() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..6, 2usize..5).prop_flat_map(|(v, c)| {
        (prop::collection::vec(1.0f64..20.0, v * c), prop::collection::vec(0..c, v)).prop_map(move |(a, l)| {
            (Array2::from_shape_vec((v, c), a).unwrap(), one_hot(&l, c))
        })
    })
}

fn logit_case() -> impl Strategy<Value = (Array3<f64>, Array2<f64>)> {
    (1usize..4, 1usize..5, 2usize..4).prop_flat_map(|(s, v, c)| {
        (prop::collection::vec(-4.0f64..4.0, s * v * c), prop::collection::vec(0..c, v)).prop_map(move |(x, l)| {
            (Array3::from_shape_vec((s, v, c), x).unwrap(), one_hot(&l, c))
        })
    })
}

/// Central differences of `f` at `x`, compared entry by entry with `grad`.
fn check_fd<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    grad: &ArrayD<f64>,
    f: impl Fn(&ndarray::Array<f64, D>) -> f64,
) -> Result<(), TestCaseError> {
    prop_assert_eq!(grad.shape(), x.shape());
    for (i, g) in grad.iter().enumerate() {
        let mut up = x.clone();
        let mut dn = x.clone();
        up.as_slice_mut().unwrap()[i] += H;
        dn.as_slice_mut().unwrap()[i] -= H;
        let fd = (f(&up) - f(&dn)) / (2.0 * H);
        prop_assert!((fd - g).abs() <= 1e-5 * fd.abs().max(1.0), "entry {}: fd {} vs {}", i, fd, g);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evidential_terms_are_nonnegative((a, y) in alpha_case()) {
        prop_assert!(evid_xent(a.view(), y.view()).unwrap().value >= 0.0);
        prop_assert!(evid_sdice(a.view(), y.view()).unwrap().value >= 0.0);
        prop_assert!(evid_kl(a.view(), y.view(), 1.0).unwrap().value >= -1e-12);
    }

    #[test]
    fn evidential_gradient_matches_differences((a, y) in alpha_case(), w in 0.0f64..1.0) {
        let l = evidential_loss(a.view(), y.view(), w).unwrap();
        // stay inside the alpha >= 1 domain
        let shifted = a.mapv(|v| v.max(1.0 + 2.0 * H));
        let l = if shifted == a { l } else { evidential_loss(shifted.view(), y.view(), w).unwrap() };
        check_fd(&shifted, l.grad.as_ref().unwrap(), |p| evidential_loss(p.view(), y.view(), w).unwrap().value)?;
    }

    #[test]
    fn mc_loss_is_nonnegative_with_matching_gradient((x, y) in logit_case()) {
        let l = hs_mc_loss(x.view(), y.view()).unwrap();
        prop_assert!(l.value >= -1e-12);
        check_fd(&x, l.grad.as_ref().unwrap(), |p| hs_mc_loss(p.view(), y.view()).unwrap().value)?;
    }

    #[test]
    fn ssn_gradient_matches_differences((x, y) in logit_case()) {
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let l = ssn_loss(mean.view(), x.view(), y.view()).unwrap();
        check_fd(&x, l.grad.as_ref().unwrap(), |p| ssn_loss(mean.view(), p.view(), y.view()).unwrap().value)?;
    }

    #[test]
    fn gaussian_kl_matches_quadrature(mq in -2.0f64..2.0, mp in -2.0f64..2.0, vq in 0.2f64..3.0, vp in 0.2f64..3.0) {
        let q = DiagGaussian::new(vec![mq, mq], vec![vq, vq]).unwrap();
        let p = DiagGaussian::new(vec![mp, 0.0], vec![vp, 1.0]).unwrap();
        let dens = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let quad = |m2: f64, v2: f64| {
            let (lo, hi, n) = (mq - 12.0 * vq.sqrt(), mq + 12.0 * vq.sqrt(), 20_000);
            let h = (hi - lo) / n as f64;
            (0..=n)
                .map(|i| {
                    let x = lo + i as f64 * h;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    let a = dens(x, mq, vq);
                    w * a * (a / dens(x, m2, v2)).ln()
                })
                .sum::<f64>()
                * h
        };
        let want = quad(mp, vp) + quad(0.0, 1.0);
        let got = gaussian_kl(&q, &p).unwrap();
        prop_assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{} vs {}", got, want);
        prop_assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let a = Array2::from_elem((3, 2), 2.0);
    let y = one_hot(&[0, 1], 2);
    assert!(evid_xent(a.view(), y.view()).is_err());
}
