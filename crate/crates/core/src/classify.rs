//! Class-balanced multinomial logistic regression, recursive feature
//! elimination, classification metrics and bootstrap confidence intervals.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{percentile, FeatureTable, FeatureVector, NormalizationParams};
use crate::seed::{derive_seed, rng};

pub const DEFAULT_REG: f64 = 10.0;
pub const FAZEKAS_K: usize = 18;
pub const QC_K: usize = 9;
pub const QC_DICE_CUTOFF: f64 = 0.57;
pub const BOOTSTRAP_SPLITS: usize = 1000;
pub const TRAIN_FRACTION: f64 = 0.75;
pub const SWEEP_THRESHOLDS: [f64; 3] = [0.1, 0.2, 0.3];
pub const FAZEKAS_K_RANGE: (usize, usize) = (10, 26);
pub const QC_K_RANGE: (usize, usize) = (6, 12);
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 10_000;
/// Redraws allowed for a split that leaves a class out of training.
pub const MAX_SPLIT_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub reg: f64,
    pub class_balance: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { reg: DEFAULT_REG, class_balance: true, max_iter: MAX_ITER, tol: GRAD_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub names: Vec<String>,
    /// `weights[j][c]`: feature `j`, class `c`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Label of each class column, ascending.
    pub classes: Vec<usize>,
    /// Objective value at the returned parameters.
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn softmax_into(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.bias.clone();
        for (xj, wj) in x.iter().zip(&self.weights) {
            for (sc, w) in s.iter_mut().zip(wj) {
                *sc += xj * w;
            }
        }
        s
    }

    /// Class probabilities for values ordered like `self.names`.
    pub fn predict_values(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.scores(x);
        softmax_into(&mut s);
        s
    }

    pub fn predict_proba(&self, row: &FeatureVector) -> Result<Vec<f64>> {
        let x = self
            .names
            .iter()
            .map(|n| row.get(n).ok_or_else(|| Error::MissingFeature(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.predict_values(&x))
    }

    pub fn predict_table(&self, tbl: &FeatureTable) -> Result<Vec<Vec<f64>>> {
        let aligned = tbl.select(&self.names)?;
        Ok(aligned.rows.iter().map(|r| self.predict_values(r)).collect())
    }

    /// L2 norm of each feature's weight row.
    pub fn importance(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

/// Sorted distinct labels.
fn class_set(labels: &[usize]) -> Vec<usize> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// `max_count / count_c` per class, or all ones without balancing.
pub fn class_weights(labels: &[usize], classes: &[usize], balance: bool) -> Vec<f64> {
    if !balance {
        return vec![1.0; classes.len()];
    }
    let counts: Vec<usize> = classes.iter().map(|c| labels.iter().filter(|&&l| l == *c).count()).collect();
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    counts.iter().map(|&n| if n == 0 { 0.0 } else { max / n as f64 }).collect()
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<usize>,
    w: Vec<f64>,
    k: usize,
    c: usize,
    reg: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.k * self.c + self.c
    }

    /// Objective and gradient at `theta = [W row-major, b]`.
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (k, c) = (self.k, self.c);
        let (wt, b) = theta.split_at(k * c);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut s = vec![0.0; c];
        for (xn, &yn) in self.x.iter().zip(&self.y) {
            s.copy_from_slice(b);
            for (j, &xj) in xn.iter().enumerate() {
                for (cc, sc) in s.iter_mut().enumerate() {
                    *sc += xj * wt[j * c + cc];
                }
            }
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let wn = self.w[yn];
            loss += wn * (lse - s[yn]);
            for cc in 0..c {
                let r = wn * ((s[cc] - lse).exp() - (cc == yn) as u8 as f64);
                for (j, &xj) in xn.iter().enumerate() {
                    grad[j * c + cc] += r * xj;
                }
                grad[k * c + cc] += r;
            }
        }
        for (i, &v) in wt.iter().enumerate() {
            loss += self.reg * v * v;
            grad[i] += 2.0 * self.reg * v;
        }
        loss
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L-BFGS with Armijo backtracking. Falls back to steepest descent when
/// the quasi-Newton direction is not a descent direction.
fn minimize(p: &Problem<'_>, mut theta: Vec<f64>, max_iter: usize, tol: f64) -> (Vec<f64>, f64, usize, bool) {
    const MEMORY: usize = 10;
    let n = p.dim();
    let mut g = vec![0.0; n];
    let mut f = p.eval(&theta, &mut g);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut alpha = vec![0.0; MEMORY];
    for it in 0..max_iter {
        if norm(&g) <= tol {
            return (theta, f, it, true);
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (m, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[m] = rho * dot(s, &d);
            axpy(-alpha[m], y, &mut d);
        }
        let mut step = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / (1.0 + norm(&g)),
        };
        d.iter_mut().for_each(|v| *v *= step);
        for (m, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &d);
            axpy(alpha[m] - beta, s, &mut d);
        }
        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            step = 1.0 / (1.0 + norm(&g));
            d.iter_mut().for_each(|v| *v *= step);
            slope *= step;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = theta[i] + t * d[i];
            }
            let f_trial = p.eval(&trial, &mut g_trial);
            // slack of a few ulps so rounding in `f` cannot stall the search
            if f_trial <= f + 1e-4 * t * slope + 8.0 * f64::EPSILON * f.abs() {
                let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if hist.len() == MEMORY {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut theta, &mut trial);
                std::mem::swap(&mut g, &mut g_trial);
                f = f_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            // no representable decrease left
            let converged = norm(&g) <= tol;
            return (theta, f, it, converged);
        }
    }
    let converged = norm(&g) <= tol;
    (theta, f, max_iter, converged)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_inputs(x: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Vec<usize>> {
    if x.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} rows, {} labels", x.len(), labels.len())));
    }
    if x.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch("row length differs from feature count".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature value".into()));
    }
    let classes = class_set(labels);
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    Ok(classes)
}

fn fit_from(
    names: &[String],
    x: &[Vec<f64>],
    labels: &[usize],
    cfg: &FitConfig,
    init: Option<(&[Vec<f64>], &[f64])>,
) -> Result<ClassifierModel> {
    let k = names.len();
    let classes = check_inputs(x, labels, k)?;
    let c = classes.len();
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("label in class set")).collect();
    let w = class_weights(labels, &classes, cfg.class_balance);
    let p = Problem { x, y, w, k, c, reg: cfg.reg };
    let mut theta = vec![0.0; p.dim()];
    if let Some((wi, bi)) = init {
        for j in 0..k {
            theta[j * c..(j + 1) * c].copy_from_slice(&wi[j]);
        }
        theta[k * c..].copy_from_slice(bi);
    }
    let (theta, loss, iterations, converged) = minimize(&p, theta, cfg.max_iter, cfg.tol);
    Ok(ClassifierModel {
        names: names.to_vec(),
        weights: (0..k).map(|j| theta[j * c..(j + 1) * c].to_vec()).collect(),
        bias: theta[k * c..].to_vec(),
        classes,
        loss,
        iterations,
        converged,
    })
}

/// Objective of the fitted problem at arbitrary parameters, for oracles.
pub fn objective(x: &[Vec<f64>], labels: &[usize], cfg: &FitConfig, weights: &[Vec<f64>], bias: &[f64]) -> Result<f64> {
    let k = weights.len();
    let classes = check_inputs(x, labels, k)?;
    let c = classes.len();
    let p = Problem {
        x,
        y: labels.iter().map(|l| classes.binary_search(l).expect("label in class set")).collect(),
        w: class_weights(labels, &classes, cfg.class_balance),
        k,
        c,
        reg: cfg.reg,
    };
    let mut theta: Vec<f64> = weights.iter().flatten().cloned().collect();
    theta.extend_from_slice(bias);
    if theta.len() != p.dim() {
        return Err(Error::DimensionMismatch("parameter shape".into()));
    }
    let mut g = vec![0.0; p.dim()];
    Ok(p.eval(&theta, &mut g))
}

/// Fits on all rows of `tbl` from zero initialization.
pub fn fit(tbl: &FeatureTable, labels: &[usize], cfg: &FitConfig) -> Result<ClassifierModel> {
    fit_from(&tbl.names, &tbl.rows, labels, cfg, None)
}

/// Recursive feature elimination down to `k` features, one feature per
/// round. Returns the survivors (in table order) and the model refit on them.
pub fn rfe(tbl: &FeatureTable, labels: &[usize], k: usize, cfg: &FitConfig) -> Result<(Vec<String>, ClassifierModel)> {
    if k == 0 || k > tbl.names.len() {
        return Err(Error::Domain(format!("k = {k} with {} features", tbl.names.len())));
    }
    let mut keep: Vec<usize> = (0..tbl.names.len()).collect();
    let sub = |keep: &[usize]| -> (Vec<String>, Vec<Vec<f64>>) {
        (
            keep.iter().map(|&j| tbl.names[j].clone()).collect(),
            tbl.rows.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect(),
        )
    };
    let (names, x) = sub(&keep);
    let mut model = fit_from(&names, &x, labels, cfg, None)?;
    while keep.len() > k {
        let imp = model.importance();
        let mut drop = 0;
        for i in 1..keep.len() {
            let (a, b) = (imp[i], imp[drop]);
            if a < b || (a == b && tbl.names[keep[i]] > tbl.names[keep[drop]]) {
                drop = i;
            }
        }
        keep.remove(drop);
        let mut w = model.weights.clone();
        w.remove(drop);
        let bias = model.bias.clone();
        let (names, x) = sub(&keep);
        model = fit_from(&names, &x, labels, cfg, Some((&w, &bias)))?;
    }
    Ok((model.names.clone(), model))
}

/// Confusion counts: `matrix[true][predicted]` over `classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: Vec<usize>,
    pub matrix: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.matrix) {
            s.push_str(&c.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub kappa: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub root_brier: Option<f64>,
    pub confusion: Confusion,
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// AUC of `scores` for positives vs negatives by pair counting, ties as ½.
pub fn mann_whitney_auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// `preds[n][c]` are probabilities over `classes`; `labels` must be members.
pub fn eval_metrics(preds: &[Vec<f64>], labels: &[usize], classes: &[usize]) -> Result<EvalMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    let c = classes.len();
    if preds.iter().any(|p| p.len() != c) {
        return Err(Error::DimensionMismatch("prediction width differs from class count".into()));
    }
    let y = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::Domain(format!("label {l} not among classes {classes:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let n = y.len();
    let mut matrix = vec![vec![0usize; c]; c];
    for (p, &t) in preds.iter().zip(&y) {
        matrix[t][argmax(p)] += 1;
    }
    let confusion = Confusion { classes: classes.to_vec(), matrix };
    if n == 0 {
        return Ok(EvalMetrics { kappa: None, balanced_accuracy: None, auroc: None, root_brier: None, confusion });
    }
    let nf = n as f64;
    let m = &confusion.matrix;
    let p_o = (0..c).map(|i| m[i][i]).sum::<usize>() as f64 / nf;
    let p_e: f64 = (0..c)
        .map(|i| {
            let row: usize = m[i].iter().sum();
            let col: usize = m.iter().map(|r| r[i]).sum();
            (row as f64 / nf) * (col as f64 / nf)
        })
        .sum();
    let kappa = (p_e < 1.0).then(|| (p_o - p_e) / (1.0 - p_e));

    let present: Vec<usize> = (0..c).filter(|&i| m[i].iter().sum::<usize>() > 0).collect();
    let balanced_accuracy = (!present.is_empty()).then(|| {
        present.iter().map(|&i| m[i][i] as f64 / m[i].iter().sum::<usize>() as f64).sum::<f64>() / present.len() as f64
    });

    let aucs: Vec<f64> = present
        .iter()
        .filter_map(|&i| {
            let (pos, neg): (Vec<_>, Vec<_>) = preds.iter().zip(&y).partition(|(_, &t)| t == i);
            mann_whitney_auc(
                &pos.iter().map(|(p, _)| p[i]).collect::<Vec<_>>(),
                &neg.iter().map(|(p, _)| p[i]).collect::<Vec<_>>(),
            )
        })
        .collect();
    let auroc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);

    let sq: f64 = preds
        .iter()
        .zip(&y)
        .map(|(p, &t)| p.iter().enumerate().map(|(i, &v)| (v - (i == t) as u8 as f64).powi(2)).sum::<f64>())
        .sum();
    Ok(EvalMetrics {
        kappa,
        balanced_accuracy,
        auroc,
        root_brier: Some((sq / nf).sqrt()),
        confusion,
    })
}

/// Label 1 (poor quality) iff `dice <= cutoff`.
pub fn qc_labels(dice: &[f64], cutoff: f64) -> Vec<usize> {
    dice.iter().map(|&d| (d <= cutoff) as usize).collect()
}

/// Stratified split: per class, a seeded shuffle puts `round(f · n_c)`
/// members in training, clamped so classes with two or more members land on
/// both sides.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in class_set(labels) {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut r);
        let n = idx.len();
        let n_train = if n < 2 { n } else { ((train_fraction * n as f64).round() as usize).clamp(1, n - 1) };
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub train_fraction: f64,
    pub k: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: BOOTSTRAP_SPLITS,
            train_fraction: TRAIN_FRACTION,
            k: FAZEKAS_K,
            fit: FitConfig::default(),
            seed: 0,
        }
    }
}

/// Mean and 2.5 / 97.5 percentiles of a metric over bootstrap splits where
/// it was defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl Interval {
    pub fn from_draws(values: &[f64]) -> Option<Self> {
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            ci_low: percentile(values, 0.025)?,
            ci_high: percentile(values, 0.975)?,
            n: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub kappa: Option<Interval>,
    pub balanced_accuracy: Option<Interval>,
    pub auroc: Option<Interval>,
    pub root_brier: Option<Interval>,
    pub n_boot: usize,
    /// Confusion matrix and selected features of split 0.
    pub confusion: Confusion,
    pub selected: Vec<String>,
    pub splits: Vec<EvalMetrics>,
}

/// Normalization fit on train, RFE and fit on train, evaluation on test.
pub fn evaluate_split(
    tbl: &FeatureTable,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    k: usize,
    cfg: &FitConfig,
) -> Result<(Vec<String>, EvalMetrics)> {
    let params = NormalizationParams::fit(tbl, train)?;
    let norm = params.apply(tbl)?;
    let train_tbl = norm.subset_rows(train);
    let train_y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let (selected, model) = rfe(&train_tbl, &train_y, k.min(tbl.names.len()), cfg)?;
    let test_tbl = norm.subset_rows(test);
    let test_y: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let preds = model.predict_table(&test_tbl)?;
    Ok((selected, eval_metrics(&preds, &test_y, &model.classes)?))
}

fn split_once(tbl: &FeatureTable, labels: &[usize], cfg: &BootstrapConfig, i: usize) -> Result<(Vec<String>, EvalMetrics)> {
    let base = derive_seed(cfg.seed, i as u64);
    let mut last = Error::DegenerateLabels;
    for attempt in 0..=MAX_SPLIT_RETRIES {
        let (train, test) = stratified_split(labels, cfg.train_fraction, derive_seed(base, attempt as u64));
        if test.is_empty() {
            last = Error::Degenerate("empty test split".into());
            continue;
        }
        match evaluate_split(tbl, labels, &train, &test, cfg.k, &cfg.fit) {
            Err(e @ Error::DegenerateLabels) => last = e,
            other => return other,
        }
    }
    Err(last)
}

pub fn bootstrap_eval(tbl: &FeatureTable, labels: &[usize], cfg: &BootstrapConfig) -> Result<EvalSummary> {
    if cfg.n_boot == 0 {
        return Err(Error::Domain("n_boot must be at least 1".into()));
    }
    if labels.len() != tbl.len() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", labels.len(), tbl.len())));
    }
    let results: Vec<(Vec<String>, EvalMetrics)> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|i| split_once(tbl, labels, cfg, i))
        .collect::<Result<_>>()?;
    let collect = |get: fn(&EvalMetrics) -> Option<f64>| {
        let v: Vec<f64> = results.iter().filter_map(|(_, m)| get(m)).collect();
        Interval::from_draws(&v)
    };
    Ok(EvalSummary {
        kappa: collect(|m| m.kappa),
        balanced_accuracy: collect(|m| m.balanced_accuracy),
        auroc: collect(|m| m.auroc),
        root_brier: collect(|m| m.root_brier),
        n_boot: cfg.n_boot,
        confusion: results[0].1.confusion.clone(),
        selected: results[0].0.clone(),
        splits: results.into_iter().map(|(_, m)| m).collect(),
    })
}

/// Normalize, select and fit on every row, then score the same rows.
pub fn in_sample_eval(tbl: &FeatureTable, labels: &[usize], k: usize, cfg: &FitConfig) -> Result<(ClassifierModel, EvalMetrics)> {
    let all: Vec<usize> = (0..tbl.len()).collect();
    let norm = NormalizationParams::fit(tbl, &all)?.apply(tbl)?;
    let (_, model) = rfe(&norm, labels, k.min(tbl.names.len()), cfg)?;
    let preds = model.predict_table(&norm)?;
    let metrics = eval_metrics(&preds, labels, &model.classes)?;
    Ok((model, metrics))
}
