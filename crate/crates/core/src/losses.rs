//! Training objectives for evidential, heteroscedastic/SSN and
//! conditional-VAE segmentation models, evaluated on small arrays.
//!
//! Each loss returns its value together with the analytic gradient with
//! respect to its main array argument. Concentrations are written `alpha`;
//! for the evidential model they are the `(e + 1)²` posterior parameters.

use ndarray::{Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, Ix2};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ProbMap};
use crate::special::{digamma, ln_gamma, trigamma};

/// Weight of the KL term in the evidential loss.
pub const EVID_KL_WEIGHT: f64 = 0.05;
/// KL weight of the conditional-VAE objective.
pub const ELBO_BETA: f64 = 1.0;
/// Cross-entropy / soft-Dice weights of the combo loss.
pub const COMBO_WEIGHTS: (f64, f64) = (0.5, 0.5);
/// Floor applied to soft-Dice denominators.
pub const DICE_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    /// Gradient with the shape of the differentiated argument.
    pub grad: Option<ArrayD<f64>>,
}

impl LossValue {
    fn with_grad<D: ndarray::Dimension>(value: f64, grad: ndarray::Array<f64, D>) -> Self {
        Self {
            value,
            grad: Some(grad.into_dyn()),
        }
    }
}

fn check_alpha(alpha: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<()> {
    if alpha.shape() != y.shape() {
        return Err(Error::DimensionMismatch(format!(
            "alpha {:?} vs labels {:?}",
            alpha.shape(),
            y.shape()
        )));
    }
    if alpha.ncols() < 2 || alpha.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "need V >= 1 voxels and C >= 2 classes, got {:?}",
            alpha.shape()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
        return Err(Error::Domain(format!("concentration {a} must be finite and >= 1")));
    }
    check_one_hot(y)
}

fn check_one_hot(y: &ArrayView2<f64>) -> Result<()> {
    for (v, row) in y.axis_iter(Axis(0)).enumerate() {
        let ones = row.iter().filter(|&&x| x == 1.0).count();
        let zeros = row.iter().filter(|&&x| x == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Domain(format!("label row {v} is not one-hot")));
        }
    }
    Ok(())
}

/// Bayes risk of cross entropy under `Dir(alpha)`:
/// `(1/V) Σ_v Σ_c y_vc (ψ(S_v) − ψ(α_vc))`.
pub fn evid_xent(alpha: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<LossValue> {
    check_alpha(&alpha, &y)?;
    let v_count = alpha.nrows() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(alpha.raw_dim());
    for ((a, t), mut g) in alpha
        .axis_iter(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        let s: f64 = a.sum();
        let y_sum: f64 = t.sum();
        let (psi_s, tri_s) = (digamma(s), trigamma(s));
        for c in 0..a.len() {
            value += t[c] * (psi_s - digamma(a[c]));
            g[c] = (tri_s * y_sum - t[c] * trigamma(a[c])) / v_count;
        }
    }
    Ok(LossValue::with_grad(value / v_count, grad))
}

/// Bayes risk of the soft Dice loss under `Dir(alpha)`, averaged over classes.
pub fn evid_sdice(alpha: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<LossValue> {
    check_alpha(&alpha, &y)?;
    let (v_count, c_count) = alpha.dim();
    let s: Vec<f64> = alpha.axis_iter(Axis(0)).map(|r| r.sum()).collect();

    let mut num = vec![0.0; c_count];
    let mut den = vec![0.0; c_count];
    for v in 0..v_count {
        for c in 0..c_count {
            let p = alpha[[v, c]] / s[v];
            let var = p * (1.0 - p) / (s[v] + 1.0);
            num[c] += y[[v, c]] * p;
            den[c] += y[[v, c]] * y[[v, c]] + p * p + var;
        }
    }
    let guarded: Vec<bool> = den.iter().map(|&d| d < DICE_EPS).collect();
    let den: Vec<f64> = den.into_iter().map(|d| d.max(DICE_EPS)).collect();
    let ratio: f64 = num.iter().zip(&den).map(|(n, d)| n / d).sum();
    let value = 1.0 - 2.0 / c_count as f64 * ratio;

    let mut grad = Array2::zeros((v_count, c_count));
    for v in 0..v_count {
        let sv = s[v];
        for k in 0..c_count {
            let mut acc = 0.0;
            for c in 0..c_count {
                let p = alpha[[v, c]] / sv;
                let dp = ((c == k) as u8 as f64 - p) / sv;
                let dvar = (1.0 - 2.0 * p) * dp / (sv + 1.0) - p * (1.0 - p) / ((sv + 1.0) * (sv + 1.0));
                let dnum = y[[v, c]] * dp;
                let dden = if guarded[c] { 0.0 } else { 2.0 * p * dp + dvar };
                acc += (dnum * den[c] - num[c] * dden) / (den[c] * den[c]);
            }
            grad[[v, k]] = -2.0 / c_count as f64 * acc;
        }
    }
    Ok(LossValue::with_grad(value, grad))
}

/// `KL(Dir(α̃) ‖ Dir(1))` summed over voxels and scaled by `weight`, with the
/// correct-class evidence masked out: `α̃ = y + (1 − y) α`.
pub fn evid_kl(alpha: ArrayView2<f64>, y: ArrayView2<f64>, weight: f64) -> Result<LossValue> {
    check_alpha(&alpha, &y)?;
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::Domain(format!("KL weight {weight} must be >= 0")));
    }
    let c_count = alpha.ncols();
    let ln_gamma_c = ln_gamma(c_count as f64);
    let mut value = 0.0;
    let mut grad = Array2::zeros(alpha.raw_dim());
    for ((a, t), mut g) in alpha
        .axis_iter(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        let masked: Vec<f64> = a.iter().zip(&t).map(|(&a, &y)| y + (1.0 - y) * a).collect();
        if masked.iter().all(|&m| m == 1.0) {
            continue;
        }
        let total: f64 = masked.iter().sum();
        let (psi_t, tri_t) = (digamma(total), trigamma(total));
        let mut kl = ln_gamma(total) - ln_gamma_c;
        for &m in &masked {
            kl += -ln_gamma(m) + (m - 1.0) * (digamma(m) - psi_t);
        }
        value += kl;
        for c in 0..c_count {
            let m = masked[c];
            let d_masked = (m - 1.0) * trigamma(m) - tri_t * (total - c_count as f64);
            g[c] = weight * (1.0 - t[c]) * d_masked;
        }
    }
    Ok(LossValue::with_grad(weight * value, grad))
}

/// Sum of the three evidential terms with the KL term scaled by `kl_weight`.
pub fn evidential_loss(alpha: ArrayView2<f64>, y: ArrayView2<f64>, kl_weight: f64) -> Result<LossValue> {
    let parts = [
        evid_xent(alpha, y)?,
        evid_sdice(alpha, y)?,
        evid_kl(alpha, y, kl_weight)?,
    ];
    let value = parts.iter().map(|p| p.value).sum();
    let mut grad = ArrayD::zeros(alpha.shape());
    for p in &parts {
        grad += p.grad.as_ref().expect("evidential losses return gradients");
    }
    Ok(LossValue { value, grad: Some(grad) })
}

/// Monte-Carlo heteroscedastic loss over `S` logit samples (`S × V × C`):
/// `−LSE_s(Σ_v Σ_c y_vc log softmax(η⁽ˢ⁾_v)_c) + log S`.
pub fn hs_mc_loss(logits: ArrayView3<f64>, y: ArrayView2<f64>) -> Result<LossValue> {
    let (s_count, v_count, c_count) = logits.dim();
    if s_count == 0 {
        return Err(Error::Degenerate("need at least one logit sample".into()));
    }
    if (v_count, c_count) != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "logits {:?} vs labels {:?}",
            logits.shape(),
            y.shape()
        )));
    }
    check_one_hot(&y)?;

    let mut probs = Array3::zeros(logits.raw_dim());
    let mut ll = vec![0.0; s_count];
    for s in 0..s_count {
        for v in 0..v_count {
            let row = logits.slice(ndarray::s![s, v, ..]);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
            for c in 0..c_count {
                let log_p = row[c] - lse;
                probs[[s, v, c]] = log_p.exp();
                ll[s] += y[[v, c]] * log_p;
            }
        }
    }
    let m = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = ll.iter().map(|&l| (l - m).exp()).sum();
    let value = -(m + sum_exp.ln()) + (s_count as f64).ln();

    let mut grad = Array3::zeros(logits.raw_dim());
    for s in 0..s_count {
        let w = (ll[s] - m).exp() / sum_exp;
        for v in 0..v_count {
            let y_sum: f64 = y.row(v).sum();
            for c in 0..c_count {
                grad[[s, v, c]] = -w * (y[[v, c]] - probs[[s, v, c]] * y_sum);
            }
        }
    }
    Ok(LossValue::with_grad(value, grad))
}

/// Diagonal Gaussian given by means and variances.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} means vs {} variances",
                mean.len(),
                var.len()
            )));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("variance {v} must be positive")));
        }
        Ok(Self { mean, var })
    }
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
pub fn gaussian_kl(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.mean.len() != p.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "latent sizes {} vs {}",
            q.mean.len(),
            p.mean.len()
        )));
    }
    Ok(q.mean
        .iter()
        .zip(&q.var)
        .zip(p.mean.iter().zip(&p.var))
        .map(|((&mq, &vq), (&mp, &vp))| 0.5 * ((vp / vq).ln() + (vq + (mq - mp) * (mq - mp)) / vp - 1.0))
        .sum())
}

/// Negative ELBO: reconstruction NLL plus `beta · KL(posterior ‖ prior)`.
pub fn elbo(recon_nll: f64, prior: &DiagGaussian, posterior: &DiagGaussian, beta: f64) -> Result<LossValue> {
    for g in [prior, posterior] {
        if let Some(v) = g.var.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!("variance {v} must be positive")));
        }
    }
    Ok(LossValue {
        value: recon_nll + beta * gaussian_kl(posterior, prior)?,
        grad: None,
    })
}

/// Foreground soft Dice loss `1 − 2 Σ p y / (Σ p² + Σ y²)`; 0 when both
/// maps are empty. Returns the value and the gradient with respect to `p`.
pub fn soft_dice_loss(p: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let num: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
    let den: f64 = p.iter().map(|a| a * a).sum::<f64>() + y.iter().map(|b| b * b).sum::<f64>();
    if den == 0.0 {
        return (0.0, vec![0.0; p.len()]);
    }
    let den = den.max(DICE_EPS);
    let grad = p
        .iter()
        .zip(y)
        .map(|(&a, &b)| -2.0 * (b * den - num * 2.0 * a) / (den * den))
        .collect();
    (1.0 - 2.0 * num / den, grad)
}

/// `w_xent · mean binary cross entropy + w_dice · soft Dice loss`, gradient
/// with respect to the flattened probability map.
pub fn combo_loss(p: &ProbMap, y: &BinaryMask, w_xent: f64, w_dice: f64) -> Result<LossValue> {
    p.check_shape(y)?;
    if !(w_xent >= 0.0 && w_dice >= 0.0) {
        return Err(Error::Domain("combo weights must be >= 0".into()));
    }
    let n = p.len() as f64;
    let target: Vec<f64> = y.data().iter().map(|&b| b as u8 as f64).collect();
    let mut ce = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&q, &t) in p.data().iter().zip(y.data()) {
        if t {
            ce -= q.ln();
            grad.push(-w_xent / (q * n));
        } else {
            ce -= (1.0 - q).ln();
            grad.push(w_xent / ((1.0 - q) * n));
        }
    }
    let (dice, dice_grad) = soft_dice_loss(p.data(), &target);
    for (g, d) in grad.iter_mut().zip(dice_grad) {
        *g += w_dice * d;
    }
    Ok(LossValue::with_grad(
        w_xent * ce / n + w_dice * dice,
        ndarray::Array1::from(grad),
    ))
}

/// SSN objective: heteroscedastic MC loss plus soft Dice on `softmax(μ)` and
/// on each sample, the latter two weighted by [`COMBO_WEIGHTS`]. Gradient is
/// with respect to the sample logits only.
pub fn ssn_loss(mean_logits: ArrayView2<f64>, logits: ArrayView3<f64>, y: ArrayView2<f64>) -> Result<LossValue> {
    let hs = hs_mc_loss(logits, y)?;
    let fg_target: Vec<f64> = y.column(crate::stochastic::FOREGROUND).to_vec();
    let fg = |rows: ArrayView2<f64>| -> Vec<f64> {
        rows.axis_iter(Axis(0))
            .map(|r| crate::stochastic::softmax_channel(r.as_slice().expect("contiguous row"), crate::stochastic::FOREGROUND))
            .collect()
    };
    let mean_std = mean_logits.as_standard_layout();
    let (mean_dice, _) = soft_dice_loss(&fg(mean_std.view()), &fg_target);
    let s_count = logits.dim().0;
    let mut grad = hs
        .grad
        .expect("hs_mc_loss returns a gradient")
        .into_dimensionality::<ndarray::Ix3>()
        .expect("3d gradient");
    let mut sample_dice = 0.0;
    for s in 0..s_count {
        let rows = logits.index_axis(Axis(0), s).as_standard_layout().into_owned();
        let probs = fg(rows.view());
        let (d, dp) = soft_dice_loss(&probs, &fg_target);
        sample_dice += d;
        // chain rule through the foreground softmax channel
        for (v, (&p, &g)) in probs.iter().zip(&dp).enumerate() {
            for c in 0..rows.ncols() {
                let dsoft = if c == crate::stochastic::FOREGROUND { p * (1.0 - p) } else { -p * softmax_prob(rows.row(v), c) };
                grad[[s, v, c]] += COMBO_WEIGHTS.1 / s_count as f64 * g * dsoft;
            }
        }
    }
    Ok(LossValue {
        value: hs.value + COMBO_WEIGHTS.1 * mean_dice + COMBO_WEIGHTS.1 / s_count as f64 * sample_dice,
        grad: Some(grad.into_dyn()),
    })
}

fn softmax_prob(row: ndarray::ArrayView1<f64>, c: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = row.iter().map(|&l| (l - m).exp()).sum();
    (row[c] - m).exp() / denom
}

/// Gradient as a 2D array; panics if absent or not 2D.
pub fn grad2(loss: &LossValue) -> Array2<f64> {
    loss.grad
        .clone()
        .expect("gradient present")
        .into_dimensionality::<Ix2>()
        .expect("2d gradient")
}
