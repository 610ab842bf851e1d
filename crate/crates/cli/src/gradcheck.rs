//! Central finite-difference checks of the analytic loss gradients.

use ndarray::{Array2, Array3, ArrayD};
use rand::Rng as _;
use serde::Serialize;

use seg_uq::grid::VoxelGrid;
use seg_uq::losses::{combo_loss, evid_kl, evid_sdice, evid_xent, hs_mc_loss, ssn_loss, EVID_KL_WEIGHT};
use seg_uq::seed::{derive_seed, rng, Rng};
use seg_uq::Result;

pub const GRAD_REL_TOL: f64 = 1e-5;
pub const POINTS_PER_LOSS: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckRow {
    pub loss: &'static str,
    pub point: usize,
    pub value: f64,
    /// `‖g − g_fd‖∞ / max(‖g_fd‖∞, 1e-8)`.
    pub rel_error: f64,
    pub pass: bool,
}

/// Relative error between analytic and numeric gradients.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

/// Central differences of `f` at `x` with step `1e-6 · max(1, |x_i|)`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

fn one_hot(r: &mut Rng, v: usize, c: usize) -> Array2<f64> {
    let mut y = Array2::zeros((v, c));
    for i in 0..v {
        y[[i, r.random_range(0..c)]] = 1.0;
    }
    y
}

fn flat(g: Option<ArrayD<f64>>) -> Vec<f64> {
    g.expect("loss returns a gradient").iter().copied().collect()
}

fn row(loss: &'static str, point: usize, value: f64, analytic: &[f64], numeric: &[f64]) -> GradCheckRow {
    let e = rel_error(analytic, numeric);
    GradCheckRow { loss, point, value, rel_error: e, pass: e < GRAD_REL_TOL }
}

/// Checks every differentiable loss at [`POINTS_PER_LOSS`] random valid
/// points. Concentrations stay in `[1.5, 6]`, probabilities in `[0.05, 0.95]`
/// so finite-difference probes remain in the domain.
pub fn run(seed: u64) -> Result<Vec<GradCheckRow>> {
    let (v, c, s) = (6, 3, 4);
    let mut rows = Vec::new();
    for point in 0..POINTS_PER_LOSS {
        let mut r = rng(derive_seed(seed, point as u64));
        let alpha = Array2::from_shape_fn((v, c), |_| r.random_range(1.5..6.0));
        let y = one_hot(&mut r, v, c);
        let a: Vec<f64> = alpha.iter().copied().collect();
        let as_alpha = |x: &[f64]| Array2::from_shape_vec((v, c), x.to_vec()).expect("shape");

        let l = evid_xent(alpha.view(), y.view())?;
        let n = numeric_grad(&a, |x| Ok(evid_xent(as_alpha(x).view(), y.view())?.value))?;
        rows.push(row("evid_xent", point, l.value, &flat(l.grad), &n));

        let l = evid_sdice(alpha.view(), y.view())?;
        let n = numeric_grad(&a, |x| Ok(evid_sdice(as_alpha(x).view(), y.view())?.value))?;
        rows.push(row("evid_sdice", point, l.value, &flat(l.grad), &n));

        let l = evid_kl(alpha.view(), y.view(), EVID_KL_WEIGHT)?;
        let n = numeric_grad(&a, |x| Ok(evid_kl(as_alpha(x).view(), y.view(), EVID_KL_WEIGHT)?.value))?;
        rows.push(row("evid_kl", point, l.value, &flat(l.grad), &n));

        let logits = Array3::from_shape_fn((s, v, c), |_| r.random_range(-3.0..3.0));
        let lg: Vec<f64> = logits.iter().copied().collect();
        let as_logits = |x: &[f64]| Array3::from_shape_vec((s, v, c), x.to_vec()).expect("shape");
        let l = hs_mc_loss(logits.view(), y.view())?;
        let n = numeric_grad(&lg, |x| Ok(hs_mc_loss(as_logits(x).view(), y.view())?.value))?;
        rows.push(row("hs_mc_loss", point, l.value, &flat(l.grad), &n));

        let mean = Array2::from_shape_fn((v, c), |_| r.random_range(-2.0..2.0));
        let l = ssn_loss(mean.view(), logits.view(), y.view())?;
        let n = numeric_grad(&lg, |x| Ok(ssn_loss(mean.view(), as_logits(x).view(), y.view())?.value))?;
        rows.push(row("ssn_loss", point, l.value, &flat(l.grad), &n));

        let p: Vec<f64> = (0..v).map(|_| r.random_range(0.05..0.95)).collect();
        let gt = VoxelGrid::new([v, 1, 1], [1.0; 3], (0..v).map(|_| r.random_bool(0.5)).collect())?;
        let as_map = |x: &[f64]| VoxelGrid::new([v, 1, 1], [1.0; 3], x.to_vec());
        let l = combo_loss(&as_map(&p)?, &gt, 0.5, 0.5)?;
        let n = numeric_grad(&p, |x| Ok(combo_loss(&as_map(x)?, &gt, 0.5, 0.5)?.value))?;
        rows.push(row("combo_loss", point, l.value, &flat(l.grad), &n));
    }
    Ok(rows)
}
