use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use seg_uq::classify::{BOOTSTRAP_SPLITS, DEFAULT_REG, SWEEP_THRESHOLDS};
use seg_uq::features::FEATURE_THRESHOLD;
use seg_uq::grid::Connectivity;
use seg_uq::seg_metrics::SEGMENTATION_THRESHOLD;
use seg_uq::stochastic::DEFAULT_SAMPLES;
use seg_uq::synth::SynthSpec;
use seg_uq::uq_metrics::{PatchConfig, PatchMode, PATCH_ACCURACY_THRESHOLD, PATCH_SIZE};

use seg_uq_cli::commands;
use seg_uq_cli::config::PipelineConfig;
use seg_uq_cli::pipeline::run_pipeline;

#[derive(Parser)]
#[command(name = "seg-uq", version, about = "Uncertainty maps, metrics and clinical-score classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    let n: u8 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    Connectivity::try_from(n).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic subject, or a cohort with `--cohort N`.
    Synth {
        /// JSON spec; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        cohort: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw probability-map samples from a logit model.
    Sample {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entropy map of one probability map or of a sample set.
    Entropy {
        #[arg(long, num_args = 1.., required = true)]
        samples: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segmentation metrics of the sample mean against ground truth.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        samples: Vec<PathBuf>,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = SEGMENTATION_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "26", value_parser = parse_connectivity)]
        connectivity: Connectivity,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uncertainty metrics over a threshold sweep.
    UqEval {
        #[arg(long)]
        mean: PathBuf,
        #[arg(long)]
        uq: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = PATCH_SIZE)]
        patch_size: usize,
        #[arg(long, default_value_t = PATCH_ACCURACY_THRESHOLD)]
        patch_accuracy: f64,
        #[arg(long)]
        sliding: bool,
        #[arg(long, default_value = "26", value_parser = parse_connectivity)]
        connectivity: Connectivity,
        /// `.csv` writes sweep rows; anything else writes JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ring features of one subject as a one-row CSV.
    Features {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        seg: PathBuf,
        #[arg(long)]
        uq: PathBuf,
        #[arg(long)]
        ventricles: PathBuf,
        #[arg(long)]
        brain: PathBuf,
        #[arg(long, num_args = 1..)]
        samples: Vec<PathBuf>,
        #[arg(long, default_value_t = FEATURE_THRESHOLD)]
        t: f64,
        #[arg(long, default_value = "26", value_parser = parse_connectivity)]
        connectivity: Connectivity,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap evaluation of a classifier on a feature table.
    Classify {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        target: String,
        /// Threshold the table was built with; recorded in the output.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_REG)]
        reg: f64,
        #[arg(long, default_value_t = BOOTSTRAP_SPLITS)]
        boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid over feature thresholds and RFE sizes.
    Sweep {
        /// Feature tables as `T=PATH`, one per threshold.
        #[arg(long = "table", num_args = 1.., required = true)]
        tables: Vec<String>,
        #[arg(long)]
        target: String,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_REG)]
        reg: f64,
        #[arg(long, default_value_t = BOOTSTRAP_SPLITS)]
        boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every loss gradient.
    LossCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full pipeline from a config file.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_table(s: &str) -> anyhow::Result<(f64, PathBuf)> {
    let (t, p) = s.split_once('=').with_context(|| format!("expected T=PATH, got {s}"))?;
    Ok((t.parse().with_context(|| format!("bad threshold {t}"))?, PathBuf::from(p)))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synth { spec, seed, cohort, out } => match cohort {
            Some(n) => {
                let cfg = commands::synth_cohort(n, seed, &out)?;
                println!("{}", cfg.display());
            }
            None => {
                let mut s: SynthSpec = match spec {
                    Some(p) => serde_json::from_slice(&std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?)?,
                    None => SynthSpec::default(),
                };
                s.seed = seed;
                let o = commands::synth_subject(&s, &out)?;
                println!("fazekas pv={} deep={}", o.fazekas.pv, o.fazekas.deep);
            }
        },
        Command::Sample { logits, n, seed, out } => {
            commands::sample(&logits, n, seed, &out)?;
        }
        Command::Entropy { samples, out } => commands::entropy(&samples, &out)?,
        Command::Eval { samples, gt, threshold, connectivity, out } => {
            let r = commands::eval(&samples, &gt, threshold, connectivity)?;
            let text = serde_json::to_string_pretty(&r)? + "\n";
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::UqEval { mean, uq, gt, steps, patch_size, patch_accuracy, sliding, connectivity, out } => {
            let patch = PatchConfig {
                size: patch_size,
                acc_threshold: patch_accuracy,
                mode: if sliding { PatchMode::Sliding } else { PatchMode::Tiling },
            };
            commands::uq_eval(&mean, &uq, &gt, steps, patch, connectivity, out.as_deref())?;
        }
        Command::Features { subject, seg, uq, ventricles, brain, samples, t, connectivity, out } => {
            let tbl = commands::features(&subject, &seg, &uq, &ventricles, &brain, &samples, t, connectivity)?;
            tbl.write_csv_path(&out)?;
        }
        Command::Classify { features, target, t, k, reg, boot, seed, out } => {
            let k = k.unwrap_or(if target == "qc" { seg_uq::classify::QC_K } else { seg_uq::classify::FAZEKAS_K });
            let s = commands::classify(&features, &target, t, k, reg, boot, seed, &out)?;
            if let Some(kappa) = s.kappa {
                println!("kappa {:.4} [{:.4}, {:.4}]", kappa.mean, kappa.ci_low, kappa.ci_high);
            }
        }
        Command::Sweep { tables, target, k_min, k_max, reg, boot, seed, out } => {
            let tables = tables.iter().map(|s| parse_table(s)).collect::<anyhow::Result<Vec<_>>>()?;
            let (lo, hi) = commands::k_range(&target);
            let ks = (k_min.unwrap_or(lo), k_max.unwrap_or(hi));
            if tables.iter().any(|(t, _)| !SWEEP_THRESHOLDS.contains(t)) {
                eprintln!("note: thresholds outside the default grid {SWEEP_THRESHOLDS:?}");
            }
            commands::sweep(&tables, &target, ks, reg, boot, seed, &out)?;
        }
        Command::LossCheck { seed } => {
            if !commands::loss_check(seed, std::io::stdout())? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let outcome = run_pipeline(&cfg)?;
            println!("{}", outcome.report_path.display());
            return Ok(ExitCode::from(outcome.exit_code() as u8));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
