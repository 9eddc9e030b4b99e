use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dcsm_cli::{
    cmd_dilution, cmd_emit_dcsm, cmd_eval, cmd_gen_data, cmd_scaling, cmd_train, cmd_verify_lemmas, Baseline, FamilyArg,
};
use dcsm_core::config::RunConfig;
use dcsm_core::eval::results_table;
use dcsm_core::oracle::Layout;

#[derive(Parser)]
#[command(name = "dcsm", version, about = "Hypersphere embedding lemmas and dense cosine similarity map scoring")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// key=value config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra overrides, e.g. --set train.epochs=3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Clone, Copy)]
struct FamilyOpt {
    #[arg(long, value_enum, default_value = "all")]
    family: FamilyArg,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the five lemma experiments and the condition reports.
    VerifyLemmas {
        #[arg(long, value_parser = parse_layout)]
        layout: Option<Layout>,
        /// Monte-Carlo trials for the noise sweep.
        #[arg(long)]
        trials: Option<usize>,
        /// Embedding dimension; concepts are capped at this number.
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Generate train and held-out eval benchmark sets as JSON lines.
    GenData {
        #[command(flatten)]
        family: FamilyOpt,
    },
    /// Train the map scorer (or a baseline) and write its checkpoint.
    Train {
        #[command(flatten)]
        family: FamilyOpt,
        /// Train without functional rows (ablation).
        #[arg(long)]
        no_fr: bool,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Caption-choice accuracy of the trained scorer against baselines.
    Eval {
        #[command(flatten)]
        family: FamilyOpt,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Accuracy at 1/4, 1/2, 1 and 2 times the base training size.
    Scaling {
        #[command(flatten)]
        family: FamilyOpt,
        #[arg(long)]
        no_fr: bool,
    },
    /// Write one normalized map as CSV and PGM, plus its embeddings as DCSE.
    EmitDcsm {
        /// Caption, e.g. "obj00 above obj01".
        #[arg(long)]
        caption: String,
        /// Scene, e.g. "attr00 obj00@0,1; attr01 obj01@2,1".
        #[arg(long)]
        scene: String,
        /// Seed of the image noise.
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        no_fr: bool,
        /// Base name of the output files.
        #[arg(long, default_value = "dcsm")]
        name: String,
    },
    /// Cosine between a concept and k-concept composites, k = 1..k_max.
    Dilution {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
    },
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    s.parse().map_err(|e: dcsm_core::Error| e.to_string())
}

fn resolve(g: &Global) -> anyhow::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &g.sets {
        let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = resolve(&cli.global)?;
    let progress = |e: &dcsm_core::train::EpochLog| eprintln!("epoch {:>3}  loss {:.5}  train acc {:.4}", e.epoch, e.loss, e.accuracy);
    match cli.cmd {
        Cmd::VerifyLemmas { layout, trials, dims } => {
            if let Some(l) = layout {
                cfg.layout = l;
            }
            if let Some(t) = trials {
                cfg.sweep_trials = t;
            }
            if let Some(d) = dims {
                cfg.verify_dimension = d;
                cfg.verify_concepts = cfg.verify_concepts.min(d);
            }
            let report = cmd_verify_lemmas(&cfg)?;
            print!("{}", report.text());
            return Ok(report.passed());
        }
        Cmd::GenData { family } => {
            let (train, eval) = cmd_gen_data(&cfg, &family.family.families())?;
            println!("{} train and {} eval samples in {}", train.len(), eval.len(), cfg.out.display());
        }
        Cmd::Train { family, no_fr, baseline } => {
            cfg.use_frs &= !no_fr;
            let s = cmd_train(&cfg, &family.family.families(), baseline, progress)?;
            println!("wrote {} after {:.1}s", s.artifact.display(), s.elapsed.as_secs_f64());
        }
        Cmd::Eval { family, baseline } => {
            let results = cmd_eval(&cfg, &family.family.families(), baseline)?;
            print!("{}", results_table(&results));
        }
        Cmd::Scaling { family, no_fr } => {
            cfg.use_frs &= !no_fr;
            for p in cmd_scaling(&cfg, &family.family.families())? {
                println!("{:>5}x {:>6}/family  {:<10} {:.4}", p.multiplier, p.train_per_family, p.family.to_string(), p.accuracy);
            }
        }
        Cmd::EmitDcsm { caption, scene, noise_seed, no_fr, name } => {
            cfg.use_frs &= !no_fr;
            let map = cmd_emit_dcsm(&cfg, &caption, &scene, noise_seed, &name)?;
            println!("{}x{} map written to {}", map.rows, map.cols, cfg.out.join(format!("{name}.{{csv,pgm,text.dcse,image.dcse}}")).display());
        }
        Cmd::Dilution { trials, dims } => {
            if let Some(t) = trials {
                cfg.dilution_trials = t;
            }
            if let Some(d) = dims {
                cfg.dilution_dimension = d;
            }
            for p in cmd_dilution(&cfg)? {
                println!("k={:<2} mean cos {:.4}  1/sqrt(k) {:.4}", p.k, p.mean_cos, p.orthogonal_prediction);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
