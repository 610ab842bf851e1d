//! Brute-force reference implementations used as test oracles. Each one
//! works on flat x-fastest vectors and avoids the library's algorithms:
//! components by union-find over all neighbor pairs, distances by exhaustive
//! search, patches and lesions by direct loops.

#![allow(dead_code)]

pub type Dims = [usize; 3];

pub fn idx(d: Dims, x: usize, y: usize, z: usize) -> usize {
    x + d[0] * (y + d[1] * z)
}

pub fn coords(d: Dims, i: usize) -> [usize; 3] {
    [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])]
}

/// Neighborhood: 6 shares a face, 18 a face or edge, 26 anything.
pub fn adjacent(a: [usize; 3], b: [usize; 3], conn: u8) -> bool {
    let diff: Vec<usize> = (0..3).map(|k| a[k].abs_diff(b[k])).collect();
    if diff.iter().any(|&v| v > 1) || diff.iter().all(|&v| v == 0) {
        return false;
    }
    let moved = diff.iter().filter(|&&v| v == 1).count();
    match conn {
        6 => moved == 1,
        18 => moved <= 2,
        _ => true,
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Components as sorted voxel lists, ordered by their first voxel.
pub fn components(mask: &[bool], d: Dims, conn: u8) -> Vec<Vec<usize>> {
    let fg: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let mut parent: Vec<usize> = (0..fg.len()).collect();
    for a in 0..fg.len() {
        for b in a + 1..fg.len() {
            if adjacent(coords(d, fg[a]), coords(d, fg[b]), conn) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for a in 0..fg.len() {
        let r = find(&mut parent, a);
        groups.entry(r).or_default().push(fg[a]);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Distance in mm from each voxel to the nearest foreground voxel.
pub fn distance(mask: &[bool], d: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let fg: Vec<[usize; 3]> = (0..mask.len()).filter(|&i| mask[i]).map(|i| coords(d, i)).collect();
    (0..mask.len())
        .map(|i| {
            let c = coords(d, i);
            fg.iter()
                .map(|f| {
                    (0..3)
                        .map(|k| {
                            let v = (c[k] as f64 - f[k] as f64) * spacing[k];
                            v * v
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

pub fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = count(a) + count(b);
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn avd_percent(pred: &[bool], gt: &[bool], spacing: [f64; 3]) -> Option<f64> {
    let vv = spacing[0] * spacing[1] * spacing[2];
    let vg = count(gt) as f64 * vv;
    (vg > 0.0).then(|| 100.0 * (count(pred) as f64 * vv - vg).abs() / vg)
}

/// (tp, fp, fn) of lesion-wise detection.
pub fn lesion_counts(pred: &[bool], gt: &[bool], d: Dims, conn: u8) -> (usize, usize, usize) {
    let g = components(gt, d, conn);
    let p = components(pred, d, conn);
    let tp = g.iter().filter(|c| c.iter().any(|&i| pred[i])).count();
    let fp = p.iter().filter(|c| !c.iter().any(|&i| gt[i])).count();
    (tp, fp, g.len() - tp)
}

pub fn lesion_f1(pred: &[bool], gt: &[bool], d: Dims, conn: u8) -> f64 {
    let (tp, fp, fn_) = lesion_counts(pred, gt, d, conn);
    if 2 * tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// `2 E d(p, g) − E d(g, g′) − E d(p, p′)` with `d = 1 − IoU`, self terms
/// over distinct unordered pairs.
pub fn ged(pred: &[Vec<bool>], refs: &[Vec<bool>]) -> f64 {
    let d = |a: &[bool], b: &[bool]| 1.0 - iou(a, b);
    let mut cross = 0.0;
    for p in pred {
        for r in refs {
            cross += d(p, r);
        }
    }
    cross /= (pred.len() * refs.len()) as f64;
    let selfd = |s: &[Vec<bool>]| {
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += d(&s[i], &s[j]);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    };
    2.0 * cross - selfd(refs) - selfd(pred)
}

pub fn sueo(u: &[f64], e: &[bool]) -> Option<f64> {
    let num: f64 = u.iter().zip(e).filter(|(_, &e)| e).map(|(u, _)| u).sum();
    let den: f64 = u.iter().zip(e).map(|(u, &e)| u * u + if e { 1.0 } else { 0.0 }).sum();
    (den > 0.0).then(|| 2.0 * num / den)
}

pub fn ueo(u: &[f64], e: &[bool], tau: f64) -> f64 {
    let h: Vec<bool> = u.iter().map(|&v| v >= tau).collect();
    dice(&h, e)
}

/// (n_ac, n_au, n_ci, n_ui) over non-overlapping patches anchored at the
/// origin, partial edge patches included.
pub fn patch_counts(
    pred: &[bool],
    gt: &[bool],
    u: &[f64],
    d: Dims,
    size: usize,
    acc: f64,
    tau: f64,
) -> (usize, usize, usize, usize) {
    let mut counts = (0, 0, 0, 0);
    let tiles = |n: usize| (0..n.div_ceil(size)).map(move |t| (t * size, ((t + 1) * size).min(n)));
    for (z0, z1) in tiles(d[2]) {
        for (y0, y1) in tiles(d[1]) {
            for (x0, x1) in tiles(d[0]) {
                let mut voxels = Vec::new();
                for z in z0..z1 {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            voxels.push(idx(d, x, y, z));
                        }
                    }
                }
                let n = voxels.len() as f64;
                let correct = voxels.iter().filter(|&&i| pred[i] == gt[i]).count() as f64;
                let mean_u = voxels.iter().map(|&i| u[i]).sum::<f64>() / n;
                match (correct / n >= acc, mean_u >= tau) {
                    (true, false) => counts.0 += 1,
                    (true, true) => counts.1 += 1,
                    (false, false) => counts.2 += 1,
                    (false, true) => counts.3 += 1,
                }
            }
        }
    }
    counts
}

/// (coverage, strict undetected fraction, relaxed undetected fraction).
pub fn coverage(
    pred: &[bool],
    gt: &[bool],
    u: &[f64],
    d: Dims,
    conn: u8,
    tau: f64,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let comps = components(gt, d, conn);
    let mut fractions = Vec::new();
    let mut strict = 0;
    let mut relaxed = 0;
    for c in &comps {
        let seg = c.iter().filter(|&&i| pred[i]).count();
        let unc = c.iter().filter(|&&i| u[i] >= tau).count();
        let unseg: Vec<usize> = c.iter().copied().filter(|&i| !pred[i]).collect();
        if !unseg.is_empty() {
            let flagged = unseg.iter().filter(|&&i| u[i] >= tau).count();
            fractions.push(flagged as f64 / unseg.len() as f64);
        }
        if seg == 0 && unc == 0 {
            strict += 1;
        }
        let need = (c.len().div_ceil(2)).min(5);
        if seg == 0 && unc < need {
            relaxed += 1;
        }
    }
    let n = comps.len();
    let frac = |k: usize| (n > 0).then(|| k as f64 / n as f64);
    let cov = (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);
    (cov, frac(strict), frac(relaxed))
}

pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}
