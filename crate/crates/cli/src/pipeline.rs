//! Cohort pipeline: sample → entropy → eval → uq-eval → features per
//! subject in parallel, then the feature table and classification.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use seg_uq::classify::{bootstrap_eval, qc_labels, BootstrapConfig, EvalSummary, FitConfig};
use seg_uq::features::{extract_features, ring_partition_with_edges, FeatureTable, FeatureVector};
use seg_uq::grid::{binarize, BinaryMask};
use seg_uq::seed::derive_seed;
use seg_uq::seg_metrics::{ged, seg_scores, top_scores};
use seg_uq::stochastic::{predictive_entropy, sample_logits, LogitModel, Provenance, SampleSet};
use seg_uq::uq_metrics::{error_map, operating_point, sueo, tau_grid, uq_sweep, PatchConfig, SweepRow};
use seg_uq::vgf::{self, Volume};
use seg_uq::Error;

use crate::config::{PipelineConfig, SubjectConfig};
use crate::report::{ClassifyStatus, CohortError, MetricReport, StageError, SubjectRow};

/// Env var capping the worker pool.
pub const THREADS_ENV: &str = "SEG_UQ_THREADS";
/// Offset separating classification sub-seeds from subject sub-seeds.
pub const CLASSIFY_STREAM: u64 = 1_000_000;

pub fn thread_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().expect("thread pool")
}

pub fn load_mask(path: &Path) -> seg_uq::Result<BinaryMask> {
    Ok(vgf::read(path)?.to_mask())
}

pub fn load_samples(paths: &[PathBuf]) -> seg_uq::Result<SampleSet> {
    let members = paths
        .iter()
        .map(|p| {
            let g = vgf::read(p)?.to_f64();
            g.validate_probabilities()?;
            Ok(g)
        })
        .collect::<seg_uq::Result<Vec<_>>>()?;
    SampleSet::new(members, Provenance::External)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

struct SubjectOutput {
    row: SubjectRow,
    features: Option<FeatureVector>,
    dice: Option<f64>,
}

fn stage_failed(row: &mut SubjectRow, stage: &str, e: &Error) {
    row.errors.push(StageError { stage: stage.into(), code: e.code().into(), message: e.to_string() });
    row.fail_remaining(e.code());
}

fn process_subject(cfg: &PipelineConfig, index: usize, s: &SubjectConfig, out: &Path) -> SubjectOutput {
    let mut row = SubjectRow::new(&s.id);
    let mut features = None;
    let mut dice = None;

    let samples = match &s.logits {
        Some(m) => LogitModel::read_manifest(m)
            .and_then(|model| sample_logits(&model, cfg.samples, derive_seed(cfg.seed, index as u64))),
        None => load_samples(&s.samples),
    };
    let samples = match samples {
        Ok(v) => v,
        Err(e) => {
            stage_failed(&mut row, "sample", &e);
            return SubjectOutput { row, features, dice };
        }
    };

    let mean = samples.mean();
    let u = predictive_entropy(&samples);
    row.set("mean_entropy", Some(u.sum() / u.len() as f64), "");
    let maps = out.join("maps");
    for (name, grid) in [("mean", &mean), ("entropy", &u)] {
        if let Err(e) = vgf::write(maps.join(format!("{}_{name}.vgf", s.id)), &Volume::from_f64(grid)) {
            stage_failed(&mut row, "entropy", &e);
        }
    }

    let pred = binarize(&mean, cfg.seg_threshold);
    match s.gt.as_deref().map(load_mask) {
        None => row.fail_remaining("no_ground_truth"),
        Some(Err(e)) => stage_failed(&mut row, "eval", &e),
        Some(Ok(gt)) => {
            if let Err(e) = evaluate(cfg, &samples, &pred, &gt, &u, &s.id, out, &mut row, &mut dice) {
                stage_failed(&mut row, "eval", &e);
            }
        }
    }

    if let (Some(b), Some(v)) = (&s.brain, &s.ventricles) {
        let extracted = load_mask(v).and_then(|vent| {
            let brain = load_mask(b)?;
            let rings = ring_partition_with_edges(&vent, &brain, &cfg.features.ring_edges_mm)?;
            extract_features(&mean, &u, Some(&samples), &rings, cfg.features.threshold, cfg.connectivity)
        });
        match extracted {
            Ok(f) => features = Some(f),
            Err(e) => row.errors.push(StageError { stage: "features".into(), code: e.code().into(), message: e.to_string() }),
        }
    }
    SubjectOutput { row, features, dice }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &PipelineConfig,
    samples: &SampleSet,
    pred: &BinaryMask,
    gt: &BinaryMask,
    u: &seg_uq::grid::UncertaintyMap,
    id: &str,
    out: &Path,
    row: &mut SubjectRow,
    dice_out: &mut Option<f64>,
) -> seg_uq::Result<()> {
    let scores = seg_scores(pred, gt, cfg.connectivity)?;
    *dice_out = Some(scores.dice);
    row.set("dice", Some(scores.dice), "");
    row.set("avd_percent", scores.avd_percent, Error::EmptyGroundTruth.code());
    row.set("component_f1", Some(scores.component_f1), "");
    row.set("precision", Some(scores.precision), "");
    row.set("recall", Some(scores.recall), "");
    let top = top_scores(samples, gt, cfg.seg_threshold)?;
    row.set("top_dice", Some(top.top_dice), "");
    row.set("top_avd", top.top_avd, Error::EmptyGroundTruth.code());
    let gt_set = SampleSet::from_masks(std::slice::from_ref(gt), Provenance::External)?;
    row.set("ged", Some(ged(samples, &gt_set, cfg.seg_threshold)?), "");

    let e = error_map(pred, gt)?;
    match sueo(u, &e) {
        Ok(v) => row.set("sueo", Some(v), ""),
        Err(err) => row.set("sueo", None, err.code()),
    }
    let patch = PatchConfig { size: cfg.uq.patch_size, acc_threshold: cfg.uq.patch_accuracy, mode: cfg.uq.patch_mode };
    let sweep = uq_sweep(pred, gt, u, &tau_grid(cfg.uq.tau_steps), patch, cfg.connectivity)?;
    if let Err(err) = write_sweep_csv(&out.join("uq").join(format!("{id}_sweep.csv")), &sweep) {
        return Err(Error::Format(format!("writing sweep: {err}")));
    }
    let best = sweep.iter().enumerate().max_by(|a, b| a.1.ueo.total_cmp(&b.1.ueo).then(b.0.cmp(&a.0)));
    if let Some((_, b)) = best {
        row.set("ueo_max", Some(b.ueo), "");
        row.set("tau_ueo_max", Some(b.tau), "");
    }
    if let Some(i) = operating_point(&sweep, cfg.uq.ueo_reference) {
        let r = &sweep[i];
        row.set("tau_ref", Some(r.tau), "");
        row.set("pavpu_ref", r.pavpu, "empty_denominator");
        row.set("coverage_ref", r.coverage, "no_unsegmented_lesions");
        row.set("undetected_strict_ref", r.undetected_strict, "no_lesions");
        row.set("undetected_relaxed_ref", r.undetected_relaxed, "no_lesions");
    }
    Ok(())
}

pub struct PipelineOutcome {
    pub report: MetricReport,
    pub report_path: PathBuf,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.report.has_errors())
    }
}

/// Builds the feature table from subjects with features, in id order. A
/// target column is kept only when every row has a label; `qc` comes from
/// Dice.
fn feature_table(
    cfg: &PipelineConfig,
    outputs: &[(String, &SubjectConfig, Option<FeatureVector>, Option<f64>)],
) -> seg_uq::Result<Option<FeatureTable>> {
    let rows: Vec<_> = outputs.iter().filter(|o| o.2.is_some()).collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let subjects = rows.iter().map(|o| o.0.clone()).collect();
    let vectors: Vec<FeatureVector> = rows.iter().map(|o| o.2.clone().expect("filtered")).collect();
    let mut tbl = FeatureTable::from_vectors(subjects, &vectors)?;
    let names: std::collections::BTreeSet<&String> = rows.iter().flat_map(|o| o.1.targets.keys()).collect();
    for name in names {
        if name == "qc" {
            continue;
        }
        let labels: Option<Vec<usize>> = rows.iter().map(|o| o.1.targets.get(name).copied()).collect();
        if let Some(l) = labels {
            tbl = tbl.with_target(name, l)?;
        }
    }
    let dice: Option<Vec<f64>> = rows.iter().map(|o| o.3).collect();
    if let Some(d) = dice {
        tbl = tbl.with_target("qc", qc_labels(&d, cfg.classify.qc_cutoff))?;
    }
    Ok(Some(tbl))
}

fn status(status: &str, reason: Option<String>, k: usize, n: usize, s: Option<&EvalSummary>) -> ClassifyStatus {
    ClassifyStatus {
        status: status.into(),
        reason,
        k,
        n_subjects: n,
        kappa: s.and_then(|s| s.kappa),
        balanced_accuracy: s.and_then(|s| s.balanced_accuracy),
        auroc: s.and_then(|s| s.auroc),
        root_brier: s.and_then(|s| s.root_brier),
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> anyhow::Result<PipelineOutcome> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(out.join("maps"))?;
    std::fs::create_dir_all(out.join("uq"))?;
    let pool = thread_pool();
    let results: Vec<SubjectOutput> = pool.install(|| {
        cfg.subjects
            .par_iter()
            .enumerate()
            .map(|(i, s)| process_subject(cfg, i, s, &out))
            .collect()
    });

    let mut outputs: Vec<(String, &SubjectConfig, Option<FeatureVector>, Option<f64>)> = results
        .iter()
        .zip(&cfg.subjects)
        .map(|(r, s)| (s.id.clone(), s, r.features.clone(), r.dice))
        .collect();
    outputs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut cohort_errors = Vec::new();
    let mut classification = BTreeMap::new();
    match feature_table(cfg, &outputs) {
        Err(e) => cohort_errors.push(CohortError {
            stage: "features".into(),
            target: None,
            code: e.code().into(),
            message: e.to_string(),
        }),
        Ok(None) => {}
        Ok(Some(tbl)) => {
            tbl.write_csv_path(out.join("features.csv"))?;
            if cfg.classify.enabled {
                for (j, target) in cfg.classify.targets.iter().enumerate() {
                    let k = if target == "qc" { cfg.classify.qc_k } else { cfg.classify.fazekas_k };
                    let labels = match tbl.target(target) {
                        Ok(l) => l.to_vec(),
                        Err(_) => {
                            classification.insert(target.clone(), status("skipped", Some("no_labels".into()), k, tbl.len(), None));
                            continue;
                        }
                    };
                    if labels.iter().all(|&l| l == labels[0]) {
                        classification.insert(target.clone(), status("skipped", Some("single_class".into()), k, tbl.len(), None));
                        continue;
                    }
                    let bcfg = BootstrapConfig {
                        n_boot: cfg.classify.bootstrap,
                        train_fraction: cfg.classify.train_fraction,
                        k,
                        fit: FitConfig { reg: cfg.classify.reg, class_balance: cfg.classify.class_balance, ..FitConfig::default() },
                        seed: derive_seed(cfg.seed, CLASSIFY_STREAM + j as u64),
                    };
                    match pool.install(|| bootstrap_eval(&tbl, &labels, &bcfg)) {
                        Ok(summary) => {
                            std::fs::write(
                                out.join(format!("classify_{target}.json")),
                                serde_json::to_string_pretty(&summary)? + "\n",
                            )?;
                            std::fs::write(out.join(format!("confusion_{target}.csv")), summary.confusion.to_csv())?;
                            classification.insert(target.clone(), status("ok", None, k, tbl.len(), Some(&summary)));
                        }
                        Err(e) => {
                            classification.insert(target.clone(), status("error", Some(e.code().into()), k, tbl.len(), None));
                            cohort_errors.push(CohortError {
                                stage: "classify".into(),
                                target: Some(target.clone()),
                                code: e.code().into(),
                                message: e.to_string(),
                            });
                        }
                    }
                }
            }
        }
    }

    let rows = results.into_iter().map(|r| r.row).collect();
    let report = MetricReport::new(cfg.clone(), rows, classification, cohort_errors);
    let report_path = out.join("report.json");
    std::fs::write(&report_path, report.to_json())?;
    Ok(PipelineOutcome { report, report_path })
}
