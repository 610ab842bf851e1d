//! Subcommand bodies. Each takes plain arguments so tests can call them
//! without going through the argument parser.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;

use seg_uq::classify::{bootstrap_eval, BootstrapConfig, FitConfig, FAZEKAS_K_RANGE, QC_K_RANGE};
use seg_uq::features::{extract_features, ring_partition, FeatureTable};
use seg_uq::grid::{binarize, Connectivity};
use seg_uq::seed::derive_seed;
use seg_uq::seg_metrics::{ged, seg_scores, top_scores, SegScores, TopScores};
use seg_uq::stochastic::{entropy_map, predictive_entropy, sample_logits, LogitModel, Provenance, SampleSet};
use seg_uq::synth::{cohort_specs, generate, SynthOutput, SynthSpec};
use seg_uq::uq_metrics::{error_map, sueo, tau_grid, uq_sweep, PatchConfig};
use seg_uq::vgf::{self, Volume};

use crate::config::{PipelineConfig, SubjectConfig};
use crate::gradcheck;
use crate::pipeline::{load_mask, load_samples, write_sweep_csv};

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    spec: &'a SynthSpec,
    fazekas_pv: usize,
    fazekas_deep: usize,
    ring_volumes_mm3: [f64; 4],
    lesion_voxels: usize,
}

/// Writes one subject: masks, logit bundle and `synth.json`.
pub fn synth_subject(spec: &SynthSpec, dir: &Path) -> anyhow::Result<SynthOutput> {
    std::fs::create_dir_all(dir)?;
    let out = generate(spec)?;
    vgf::write(dir.join("brain.vgf"), &Volume::from_mask(&out.brain))?;
    vgf::write(dir.join("ventricles.vgf"), &Volume::from_mask(&out.ventricles))?;
    vgf::write(dir.join("lesions.vgf"), &Volume::from_mask(&out.lesions))?;
    out.logits.write_bundle(dir, "logits")?;
    write_json(
        Some(&dir.join("synth.json")),
        &SynthRecord {
            spec,
            fazekas_pv: out.fazekas.pv,
            fazekas_deep: out.fazekas.deep,
            ring_volumes_mm3: out.ring_volumes,
            lesion_voxels: out.lesions.count(),
        },
    )?;
    Ok(out)
}

/// Writes `n` subjects under `dir/<id>/` plus a `config.json` that runs
/// the full pipeline on them.
pub fn synth_cohort(n: usize, seed: u64, dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut cfg = PipelineConfig { output_dir: PathBuf::from("report"), seed, ..PipelineConfig::default() };
    for (i, spec) in cohort_specs(n, seed).iter().enumerate() {
        let id = format!("s{i:03}");
        let out = synth_subject(spec, &dir.join(&id))?;
        cfg.subjects.push(SubjectConfig {
            id: id.clone(),
            logits: Some(PathBuf::from(format!("{id}/logits.json"))),
            samples: Vec::new(),
            gt: Some(PathBuf::from(format!("{id}/lesions.vgf"))),
            brain: Some(PathBuf::from(format!("{id}/brain.vgf"))),
            ventricles: Some(PathBuf::from(format!("{id}/ventricles.vgf"))),
            targets: BTreeMap::from([("deep".to_string(), out.fazekas.deep), ("pv".to_string(), out.fazekas.pv)]),
        });
    }
    let path = dir.join("config.json");
    write_json(Some(&path), &cfg)?;
    Ok(path)
}

/// Draws `n` samples; writes `sample_XXX.vgf` and `mean.vgf` into `out`.
pub fn sample(manifest: &Path, n: usize, seed: u64, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let model = LogitModel::read_manifest(manifest)?;
    let set = sample_logits(&model, n, seed)?;
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(n);
    for (i, m) in set.members().iter().enumerate() {
        let p = out.join(format!("sample_{i:03}.vgf"));
        vgf::write(&p, &Volume::from_f64(m))?;
        paths.push(p);
    }
    vgf::write(out.join("mean.vgf"), &Volume::from_f64(&set.mean()))?;
    Ok(paths)
}

/// Predictive entropy of samples, or binary entropy of a single map.
pub fn entropy(samples: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let u = match samples {
        [] => bail!("no input maps"),
        [single] => {
            let p = vgf::read(single)?.to_f64();
            p.validate_probabilities()?;
            entropy_map(&p)
        }
        many => predictive_entropy(&load_samples(many)?),
    };
    vgf::write(out, &Volume::from_f64(&u))?;
    Ok(())
}

#[derive(Serialize)]
pub struct EvalOutput {
    pub scores: SegScores,
    pub top: TopScores,
    pub ged: f64,
    pub threshold: f64,
    pub connectivity: Connectivity,
}

pub fn eval(samples: &[PathBuf], gt: &Path, threshold: f64, connectivity: Connectivity) -> anyhow::Result<EvalOutput> {
    let set = load_samples(samples)?;
    let gt = load_mask(gt)?;
    let pred = binarize(&set.mean(), threshold);
    let mut scores = seg_scores(&pred, &gt, connectivity)?;
    let top = top_scores(&set, &gt, threshold)?;
    scores.top_dice = Some(top.top_dice);
    scores.top_avd = top.top_avd;
    let gt_set = SampleSet::from_masks(std::slice::from_ref(&gt), Provenance::External)?;
    Ok(EvalOutput { ged: ged(&set, &gt_set, threshold)?, scores, top, threshold, connectivity })
}

#[derive(Serialize)]
pub struct UqEvalOutput {
    pub sueo: Option<f64>,
    pub rows: Vec<seg_uq::uq_metrics::SweepRow>,
}

/// Sweep over `steps` thresholds; `.csv` outputs write rows only, anything
/// else gets JSON with sUEO.
pub fn uq_eval(
    mean: &Path,
    uq: &Path,
    gt: &Path,
    steps: usize,
    patch: PatchConfig,
    connectivity: Connectivity,
    out: Option<&Path>,
) -> anyhow::Result<UqEvalOutput> {
    let p = vgf::read(mean)?.to_f64();
    let u = vgf::read(uq)?.to_f64();
    u.validate_uncertainty()?;
    let gt = load_mask(gt)?;
    let pred = binarize(&p, seg_uq::seg_metrics::SEGMENTATION_THRESHOLD);
    let rows = uq_sweep(&pred, &gt, &u, &tau_grid(steps), patch, connectivity)?;
    let result = UqEvalOutput { sueo: sueo(&u, &error_map(&pred, &gt)?).ok(), rows };
    match out {
        Some(path) if path.extension().is_some_and(|e| e == "csv") => write_sweep_csv(path, &result.rows)?,
        other => write_json(other, &result)?,
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
pub fn features(
    subject: &str,
    seg: &Path,
    uq: &Path,
    ventricles: &Path,
    brain: &Path,
    samples: &[PathBuf],
    t: f64,
    connectivity: Connectivity,
) -> anyhow::Result<FeatureTable> {
    let p = vgf::read(seg)?.to_f64();
    let u = vgf::read(uq)?.to_f64();
    let rings = ring_partition(&load_mask(ventricles)?, &load_mask(brain)?)?;
    let set = if samples.is_empty() { None } else { Some(load_samples(samples)?) };
    let f = extract_features(&p, &u, set.as_ref(), &rings, t, connectivity)?;
    Ok(FeatureTable::from_vectors(vec![subject.to_string()], &[f])?)
}

/// Default RFE size range for a target.
pub fn k_range(target: &str) -> (usize, usize) {
    if target == "qc" {
        QC_K_RANGE
    } else {
        FAZEKAS_K_RANGE
    }
}

#[derive(Serialize)]
struct ClassifyOutput<'a> {
    target: &'a str,
    t: Option<f64>,
    k: usize,
    reg: f64,
    n_boot: usize,
    seed: u64,
    summary: &'a seg_uq::classify::EvalSummary,
}

#[allow(clippy::too_many_arguments)]
pub fn classify(
    table: &Path,
    target: &str,
    t: Option<f64>,
    k: usize,
    reg: f64,
    n_boot: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<seg_uq::classify::EvalSummary> {
    let tbl = FeatureTable::read_csv_path(table)?;
    let labels = tbl.target(target)?.to_vec();
    let cfg = BootstrapConfig {
        n_boot,
        k,
        seed,
        fit: FitConfig { reg, ..FitConfig::default() },
        ..BootstrapConfig::default()
    };
    let summary = bootstrap_eval(&tbl, &labels, &cfg)?;
    std::fs::create_dir_all(out)?;
    write_json(
        Some(&out.join(format!("classify_{target}.json"))),
        &ClassifyOutput { target, t, k, reg, n_boot, seed, summary: &summary },
    )?;
    std::fs::write(out.join(format!("confusion_{target}.csv")), summary.confusion.to_csv())?;
    Ok(summary)
}

#[derive(Serialize)]
pub struct SweepCell {
    pub t: f64,
    pub k: usize,
    pub kappa: Option<f64>,
    pub kappa_low: Option<f64>,
    pub kappa_high: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub balanced_accuracy_low: Option<f64>,
    pub balanced_accuracy_high: Option<f64>,
    pub auroc: Option<f64>,
    pub root_brier: Option<f64>,
}

/// Grid over feature tables (one per threshold) and RFE sizes.
pub fn sweep(
    tables: &[(f64, PathBuf)],
    target: &str,
    ks: (usize, usize),
    reg: f64,
    n_boot: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for (ti, (t, path)) in tables.iter().enumerate() {
        let tbl = FeatureTable::read_csv_path(path)?;
        let labels = tbl.target(target)?.to_vec();
        for k in ks.0..=ks.1 {
            let cfg = BootstrapConfig {
                n_boot,
                k,
                seed: derive_seed(seed, (ti * 1000 + k) as u64),
                fit: FitConfig { reg, ..FitConfig::default() },
                ..BootstrapConfig::default()
            };
            let s = bootstrap_eval(&tbl, &labels, &cfg)?;
            cells.push(SweepCell {
                t: *t,
                k,
                kappa: s.kappa.map(|i| i.mean),
                kappa_low: s.kappa.map(|i| i.ci_low),
                kappa_high: s.kappa.map(|i| i.ci_high),
                balanced_accuracy: s.balanced_accuracy.map(|i| i.mean),
                balanced_accuracy_low: s.balanced_accuracy.map(|i| i.ci_low),
                balanced_accuracy_high: s.balanced_accuracy.map(|i| i.ci_high),
                auroc: s.auroc.map(|i| i.mean),
                root_brier: s.root_brier.map(|i| i.mean),
            });
        }
    }
    let mut w = csv::Writer::from_path(out)?;
    for c in &cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(cells)
}

/// Prints the gradient-check table; returns whether every row passed.
pub fn loss_check(seed: u64, mut out: impl Write) -> anyhow::Result<bool> {
    let rows = gradcheck::run(seed)?;
    writeln!(out, "{:<12} {:>5} {:>14} {:>12}  result", "loss", "point", "value", "rel_error")?;
    for r in &rows {
        writeln!(
            out,
            "{:<12} {:>5} {:>14.6e} {:>12.3e}  {}",
            r.loss,
            r.point,
            r.value,
            r.rel_error,
            if r.pass { "ok" } else { "FAIL" }
        )?;
    }
    Ok(rows.iter().all(|r| r.pass))
}
