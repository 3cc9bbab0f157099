use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyad_core::config::{PipelineConfig, SynthSpec};
use dyad_core::features::PcaModel;
use dyad_core::ingest::DatasetManifest;
use dyad_core::pipeline::{
    compute_features, compute_pseudo, evaluate, read_features, read_pseudo, read_scores, score, train, write_eval,
    write_features, write_pseudo, write_scores, EvalData, HeldOut,
};
use dyad_core::pseudo_scoring::CompanionScorer;
use dyad_core::synth::{generate, write_dataset};
use dyad_core::trainer::RegressorEnsemble;
use dyad_core::{Error, Result};

/// Self-trained video anomaly detection pipeline.
#[derive(Parser, Debug)]
#[command(name = "dyad", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Random seed; falls back to the config file, then DYAD_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Directory holding intermediate artifacts.
    #[arg(long, short = 'w', global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    segments: Option<usize>,
    #[arg(long, global = true)]
    pca_k: Option<usize>,
    #[arg(long, global = true)]
    iforest_trees: Option<usize>,
    #[arg(long, global = true)]
    iforest_subsample: Option<usize>,
    #[arg(long, global = true)]
    meb_epsilon: Option<f64>,
    /// Companion scorer combined with the isolation forest: ocsvm, lof or pca-recon.
    #[arg(long, global = true)]
    scorer: Option<CompanionScorer>,
    #[arg(long, global = true)]
    lof_k: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    passes: Option<usize>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Label bags from appearance scores alone.
    #[arg(long, global = true)]
    no_dynamicity: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with frame-level ground truth.
    Synth(SynthArgs),
    /// Extract appearance and motion features for every segment.
    Features {
        /// Reuse a fitted PCA model instead of fitting one.
        #[arg(long)]
        pca: Option<PathBuf>,
    },
    /// Compute pseudo anomaly scores and the initial bags.
    Pseudo,
    /// Run the self-training passes and save the ensemble.
    Train {
        /// Manifest of a held-out set to score after every pass.
        #[arg(long)]
        held_out: Option<PathBuf>,
    },
    /// Score every segment with the trained ensemble.
    Score {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frame-level ROC, AUC and false-alarm rate.
    Eval {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic-dataset spec; flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    frames_per_video: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    segments_per_video: Option<usize>,
    #[arg(long)]
    anomaly_rate: Option<f64>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    motion_burst: Option<f64>,
    #[arg(long)]
    distractor_rate: Option<f64>,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("DYAD_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("DYAD_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn read_json(path: &Path) -> Result<(String, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let has_seed = value.get("seed").is_some();
    Ok((text, has_seed))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_seed(flag: Option<u64>, in_file: bool) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if in_file {
        return Ok(None);
    }
    env_seed()
}

fn pipeline_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let (mut cfg, seed_in_file) = match &g.config {
        Some(path) => {
            let (text, has_seed) = read_json(path)?;
            (PipelineConfig::from_json(&text)?, has_seed)
        }
        None => (PipelineConfig::default(), false),
    };
    set(&mut cfg.seed, resolve_seed(g.seed, seed_in_file)?);
    if g.manifest.is_some() {
        cfg.manifest = g.manifest.clone();
    }
    if g.work_dir.is_some() {
        cfg.work_dir = g.work_dir.clone();
    }
    set(&mut cfg.segments, g.segments);
    set(&mut cfg.pca_k, g.pca_k);
    set(&mut cfg.iforest_trees, g.iforest_trees);
    set(&mut cfg.iforest_subsample, g.iforest_subsample);
    set(&mut cfg.meb_epsilon, g.meb_epsilon);
    set(&mut cfg.scorer, g.scorer);
    set(&mut cfg.lof_k, g.lof_k);
    set(&mut cfg.tau, g.tau);
    set(&mut cfg.passes, g.passes);
    set(&mut cfg.iterations, g.iterations);
    set(&mut cfg.batch_size, g.batch_size);
    set(&mut cfg.learning_rate, g.learning_rate);
    if g.no_dynamicity {
        cfg.use_dynamicity = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth_spec(g: &GlobalArgs, a: &SynthArgs) -> Result<SynthSpec> {
    let (mut spec, seed_in_file) = match &a.spec {
        Some(path) => {
            let (text, has_seed) = read_json(path)?;
            let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            (spec, has_seed)
        }
        None => (SynthSpec::default(), false),
    };
    set(&mut spec.seed, resolve_seed(g.seed, seed_in_file)?);
    set(&mut spec.videos, a.videos);
    set(&mut spec.frames_per_video, a.frames_per_video);
    set(&mut spec.width, a.width);
    set(&mut spec.height, a.height);
    set(&mut spec.segments_per_video, a.segments_per_video);
    set(&mut spec.anomaly_rate, a.anomaly_rate);
    set(&mut spec.separation, a.separation);
    set(&mut spec.motion_burst, a.motion_burst);
    set(&mut spec.distractor_rate, a.distractor_rate);
    spec.validate()?;
    Ok(spec)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required (flag or config file)")))
}

fn load_manifest(path: &Path, cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::load(path)?;
    if manifest.segment_count_per_video != cfg.segments {
        return Err(Error::Config(format!(
            "manifest has {} segments per video, config has {}",
            manifest.segment_count_per_video, cfg.segments
        )));
    }
    Ok(manifest)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

fn run(cli: Cli) -> Result<String> {
    if let Command::Synth(args) = &cli.command {
        let spec = synth_spec(&cli.global, args)?;
        if cli.global.print_config {
            return Ok(serde_json::to_string_pretty(&spec)?);
        }
        let data = generate(&spec)?;
        let manifest = write_dataset(&spec, &data, &args.out)?;
        return Ok(format!(
            "synth: {} videos x {} segments, {} anomalous segments -> {}",
            manifest.entries.len(),
            spec.segments_per_video,
            data.anomalous.len(),
            args.out.join("manifest.json").display()
        ));
    }

    let cfg = pipeline_config(&cli.global)?;
    if cli.global.print_config {
        return cfg.to_json();
    }
    let work = required(&cfg.work_dir, "--work-dir")?;
    match &cli.command {
        Command::Synth(_) => unreachable!(),
        Command::Features { pca } => {
            let manifest = load_manifest(required(&cfg.manifest, "--manifest")?, &cfg)?;
            let pca = pca.as_ref().map(PcaModel::load).transpose()?;
            let art = compute_features(&manifest, &cfg, pca.as_ref())?;
            write_features(work, &art)?;
            Ok(format!(
                "features: {} segments from {} videos, appearance dim {}, motion dim {}, mean dynamicity {:.4} -> {}",
                art.views.len(),
                manifest.entries.len(),
                art.appearance[0].dim(),
                art.motion[0].dim(),
                mean(&art.dynamicity),
                work.display()
            ))
        }
        Command::Pseudo => {
            let art = read_features(work)?;
            let pseudo = compute_pseudo(&art, &cfg)?;
            write_pseudo(work, &pseudo)?;
            let initial = dyad_core::pipeline::training_set(&art, &pseudo.y_s_hat)?;
            let bags = dyad_core::bagging::form_bags(&cfg.trainer().gate(initial.pseudo), cfg.tau)?;
            bags.write_csv(work.join("bags.csv"))?;
            Ok(format!(
                "pseudo: {} segments scored with iforest+{}, initial bags A={} N={}",
                pseudo.y_s_hat.len(),
                cfg.scorer,
                bags.positive.len(),
                bags.negative.len()
            ))
        }
        Command::Train { held_out } => {
            let art = read_features(work)?;
            let y_s_hat = read_pseudo(work, art.views.len())?;
            let held = match held_out {
                Some(path) => {
                    let manifest = load_manifest(path, &cfg)?;
                    let hart = compute_features(&manifest, &cfg, Some(&art.pca))?;
                    let eval = EvalData::load(&manifest, hart.views.clone())?;
                    Some((hart, eval))
                }
                None => None,
            };
            let held = held.as_ref().map(|(a, e)| HeldOut {
                appearance: &a.appearance,
                motion: &a.motion,
                eval: e,
            });
            let ensemble = train(&art, &y_s_hat, &cfg, held.as_ref())?;
            let dir = work.join("ensemble");
            ensemble.save(&dir)?;
            let last = ensemble.passes.last().expect("at least one pass");
            let metric = match last.metric {
                Some(m) => format!(", held-out AUC {m:.4}"),
                None => String::new(),
            };
            Ok(format!(
                "train: {} passes, final bags A={} N={}{metric} -> {}",
                ensemble.k(),
                last.bags_after.positive.len(),
                last.bags_after.negative.len(),
                dir.display()
            ))
        }
        Command::Score { out } => {
            let art = read_features(work)?;
            let ensemble = RegressorEnsemble::load(work.join("ensemble"))?;
            let scores = score(&ensemble, &art)?;
            let path = out.clone().unwrap_or_else(|| work.join("scores.csv"));
            write_scores(&path, &scores)?;
            let anomalous = scores.iter().filter(|s| s.label == 1).count();
            Ok(format!(
                "score: {} segments, {anomalous} labeled anomalous -> {}",
                scores.len(),
                path.display()
            ))
        }
        Command::Eval { scores, out } => {
            let path = scores.clone().unwrap_or_else(|| work.join("scores.csv"));
            let scores = read_scores(&path)?;
            let art = read_features(work)?;
            if scores.len() != art.views.len() {
                return Err(Error::LengthMismatch {
                    left: scores.len(),
                    right: art.views.len(),
                });
            }
            let manifest = load_manifest(required(&cfg.manifest, "--manifest")?, &cfg)?;
            let eval = EvalData::load(&manifest, art.views.clone())?;
            let y_s: Vec<f64> = scores.iter().map(|s| s.y_s).collect();
            let y_d: Vec<f64> = scores.iter().map(|s| s.y_d).collect();
            let report = evaluate(&eval, &y_s, &y_d, cfg.tau)?;
            let dir = out.clone().unwrap_or_else(|| work.join("eval"));
            write_eval(&dir, &report)?;
            Ok(format!(
                "eval: {} frames, AUC {:.4}, FAR {:.4} at tau {} -> {}",
                report.frames,
                report.auc,
                report.far,
                report.tau,
                dir.join("summary.json").display()
            ))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dyad: error: {e}");
            ExitCode::FAILURE
        }
    }
}
