use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scene_factor::mnist::Split;
use scene_factor::vfa::Canvas;
use scene_factor_cli::config::{parse_canvas, ExperimentConfig};
use scene_factor_cli::experiments::{self, Pipeline};

#[derive(Parser)]
#[command(name = "scene-factor", version, about = "Factorize colored digit scenes with resonator networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the PCA/ICA shape dictionary from the MNIST training split.
    LearnFeatures {
        #[command(flatten)]
        common: Common,
        /// Use this dictionary file instead of learning one.
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Render random scenes of test digits.
    GenScenes(Common),
    /// Factorize one multi-object scene and write waterfalls and reconstructions.
    Factorize(Common),
    /// Train both linear classifiers and score them on reconstructed test scenes.
    ClassifyEval(Common),
    /// Track moving digits with parallel networks.
    Track(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene count (gen-scenes), test scenes (classify-eval) or experiments (track).
    #[arg(long)]
    n_scenes: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// `56` or `WxH`.
    #[arg(long, value_parser = parse_canvas)]
    canvas: Option<Canvas>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.canvas {
            cfg.canvas = v;
        }
        if let Some(v) = &self.mnist_dir {
            cfg.mnist_dir = v.clone();
        }
        Ok(cfg)
    }
}

fn prepare(common: &Common, command: &str, apply_n: impl FnOnce(&mut ExperimentConfig, usize)) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = common.resolve()?;
    if let Some(n) = common.n_scenes {
        apply_n(&mut cfg, n);
    }
    cfg.validate()?;
    cfg.write_snapshot(command)?;
    Ok(cfg)
}

fn pipeline(cfg: &ExperimentConfig) -> anyhow::Result<Pipeline> {
    Pipeline::new(cfg, experiments::load_dictionary(cfg)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::LearnFeatures { common, external } => {
            let cfg = prepare(&common, "learn_features", |_, _| {})?;
            let report = experiments::learn_features(&cfg, external.as_deref())?;
            let path = cfg.out.join("learn_features_report.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "dictionary: {} features, orthonormality error {:.2e}, written to {}",
                report.features,
                report.orthonormality_error,
                report.path.display()
            );
        }
        Command::GenScenes(common) => {
            let cfg = prepare(&common, "gen_scenes", |c, n| c.scenes.count = n)?;
            let test = experiments::load_digits(&cfg, Split::Test)?;
            let dir = cfg.out.join("scenes");
            let specs = experiments::gen_scenes(&cfg, &test, &dir)?;
            println!("wrote {} scenes to {}", specs.len(), dir.display());
        }
        Command::Factorize(common) => {
            let cfg = prepare(&common, "factorize", |_, _| {})?;
            let pipe = pipeline(&cfg)?;
            let test = experiments::load_digits(&cfg, Split::Test)?;
            let dir = cfg.out.join("factorize");
            let result = experiments::factorize(&cfg, &pipe, &test, &dir)?;
            for (k, e) in result.estimates.iter().enumerate() {
                println!(
                    "object {k}: color {} at ({}, {}), {} iterations{}",
                    cfg.palette.names[e.color],
                    e.x,
                    e.y,
                    e.iterations,
                    if e.converged { "" } else { ", did not converge" }
                );
            }
            println!("outputs in {}", dir.display());
        }
        Command::ClassifyEval(common) => {
            let cfg = prepare(&common, "classify_eval", |c, n| c.classify.test_scenes = n)?;
            let pipe = pipeline(&cfg)?;
            let train = experiments::load_digits(&cfg, Split::Train)?;
            let test = experiments::load_digits(&cfg, Split::Test)?;
            let outcome = experiments::classify_eval(&cfg, &pipe, &train, &test)?;
            let dir = cfg.out.join("classify");
            experiments::write_classify_outputs(&dir, &outcome)?;
            for row in &outcome.report.rows {
                println!(
                    "{}: {:.1}% on {} reconstructions ({} training samples)",
                    row.classifier,
                    100.0 * row.accuracy,
                    row.evaluated,
                    row.training_samples
                );
            }
            println!("outputs in {}", dir.display());
        }
        Command::Track(common) => {
            let cfg = prepare(&common, "track", |c, n| c.tracking.experiments = n)?;
            let pipe = pipeline(&cfg)?;
            let test = experiments::load_digits(&cfg, Split::Test)?;
            let (runs, summary) = experiments::track_experiments(&cfg, &pipe, &test)?;
            let dir = cfg.out.join("track");
            experiments::write_track_outputs(&dir, &runs, &summary)?;
            println!(
                "{} networks locked of {} over {} experiments",
                summary.locked_networks, summary.networks, summary.experiments
            );
            if let Some(c) = summary.calibrated {
                println!(
                    "calibrated error: mean {:.2}, median {:.2}, {:.1}% under 5 px",
                    c.mean,
                    c.median,
                    100.0 * c.frac_under_5
                );
            }
            println!("outputs in {}", dir.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
