//! Pipeline configuration. Every field has a default, so a config file only
//! lists what it changes; the full resolved config is echoed into reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seg_uq::classify::{BOOTSTRAP_SPLITS, DEFAULT_REG, FAZEKAS_K, QC_DICE_CUTOFF, QC_K, TRAIN_FRACTION};
use seg_uq::features::{FEATURE_THRESHOLD, RING_EDGES_MM};
use seg_uq::grid::Connectivity;
use seg_uq::losses::{COMBO_WEIGHTS, ELBO_BETA, EVID_KL_WEIGHT};
use seg_uq::seg_metrics::SEGMENTATION_THRESHOLD;
use seg_uq::stochastic::DEFAULT_SAMPLES;
use seg_uq::uq_metrics::{PatchMode, PATCH_ACCURACY_THRESHOLD, PATCH_SIZE, UEO_REFERENCE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub patch_size: usize,
    pub patch_accuracy: f64,
    pub patch_mode: PatchMode,
    /// Number of evenly spaced thresholds over `[0, ln 2]`.
    pub tau_steps: usize,
    pub ueo_reference: f64,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            patch_size: PATCH_SIZE,
            patch_accuracy: PATCH_ACCURACY_THRESHOLD,
            patch_mode: PatchMode::Tiling,
            tau_steps: 50,
            ueo_reference: UEO_REFERENCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub threshold: f64,
    pub ring_edges_mm: [f64; 3],
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { threshold: FEATURE_THRESHOLD, ring_edges_mm: RING_EDGES_MM }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub enabled: bool,
    /// Targets to evaluate; `qc` is derived from per-subject Dice.
    pub targets: Vec<String>,
    pub fazekas_k: usize,
    pub qc_k: usize,
    pub qc_cutoff: f64,
    pub reg: f64,
    pub class_balance: bool,
    pub bootstrap: usize,
    pub train_fraction: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            targets: vec!["deep".into(), "pv".into(), "qc".into()],
            fazekas_k: FAZEKAS_K,
            qc_k: QC_K,
            qc_cutoff: QC_DICE_CUTOFF,
            reg: DEFAULT_REG,
            class_balance: true,
            bootstrap: BOOTSTRAP_SPLITS,
            train_fraction: TRAIN_FRACTION,
        }
    }
}

/// Training-time loss settings. Not used by the evaluation pipeline; echoed
/// so reports record the weights the maps were produced under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub evid_kl_weight: f64,
    pub elbo_beta: f64,
    pub combo_weights: [f64; 2],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            evid_kl_weight: EVID_KL_WEIGHT,
            elbo_beta: ELBO_BETA,
            combo_weights: [COMBO_WEIGHTS.0, COMBO_WEIGHTS.1],
        }
    }
}

/// One subject's inputs. Relative paths resolve against the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubjectConfig {
    pub id: String,
    /// Logit-model manifest; samples are drawn from it.
    pub logits: Option<PathBuf>,
    /// Precomputed probability-map samples, used when `logits` is absent.
    pub samples: Vec<PathBuf>,
    pub gt: Option<PathBuf>,
    pub brain: Option<PathBuf>,
    pub ventricles: Option<PathBuf>,
    /// Known labels, for example `{"pv": 2, "deep": 1}`.
    pub targets: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Subject `i` (config order) samples with `derive_seed(seed, i)`;
    /// bootstrap for target `j` uses `derive_seed(seed, 1_000_000 + j)`.
    pub seed: u64,
    pub samples: usize,
    pub seg_threshold: f64,
    pub connectivity: Connectivity,
    pub uq: UqConfig,
    pub features: FeatureConfig,
    pub classify: ClassifyConfig,
    pub losses: LossConfig,
    pub subjects: Vec<SubjectConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("seg-uq-out"),
            seed: 0,
            samples: DEFAULT_SAMPLES,
            seg_threshold: SEGMENTATION_THRESHOLD,
            connectivity: Connectivity::TwentySix,
            uq: UqConfig::default(),
            features: FeatureConfig::default(),
            classify: ClassifyConfig::default(),
            losses: LossConfig::default(),
            subjects: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for s in &mut self.subjects {
            s.logits.iter_mut().for_each(fix);
            s.samples.iter_mut().for_each(fix);
            s.gt.iter_mut().for_each(fix);
            s.brain.iter_mut().for_each(fix);
            s.ventricles.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.seg_threshold) {
            return bad(format!("seg_threshold {} outside [0, 1]", self.seg_threshold));
        }
        if self.uq.patch_size == 0 || self.uq.tau_steps == 0 {
            return bad("patch_size and tau_steps must be positive".into());
        }
        if self.classify.bootstrap == 0 || !(0.0 < self.classify.train_fraction && self.classify.train_fraction < 1.0) {
            return bad("bootstrap must be positive and train_fraction in (0, 1)".into());
        }
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.iter().any(|id| id.is_empty()) {
            return bad("subject ids must be non-empty".into());
        }
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate subject id {}", w[0]));
        }
        for s in &self.subjects {
            if s.logits.is_none() && s.samples.is_empty() {
                return bad(format!("subject {} has neither logits nor samples", s.id));
            }
        }
        Ok(())
    }
}
