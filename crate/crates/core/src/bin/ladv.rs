use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latent_adv::attack::GradMethod;
use latent_adv::pipeline::selftest::{check_outcomes, run_selftest};
use latent_adv::pipeline::{
    cmd_attack, cmd_eval, cmd_gen_data, cmd_train, AttackOverrides, RunConfig, WORKDIR_ENV,
};
use latent_adv::Result;

/// Latent-space adversarial examples against synthetic-image detectors.
#[derive(Parser)]
#[command(name = "ladv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; omitted sections take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Working directory; overrides `paths.workdir` in the config.
    #[arg(long, env = WORKDIR_ENV)]
    workdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData(Common),
    /// Train the codec, score network and detectors.
    Train(Common),
    /// Attack the fake images of the evaluation split.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_parser = parse_method)]
        grad_method: Option<GradMethod>,
        #[arg(long)]
        no_transforms: bool,
        /// DDIM index s to perturb at.
        #[arg(long)]
        timestep: Option<usize>,
    },
    /// Score the attack records and write the report.
    Eval(Common),
    /// Run the built-in correctness checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_method(s: &str) -> std::result::Result<GradMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected plain-gd, fgsm-sign or mi-fgsm, got {s:?}"))
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &c.workdir {
        cfg.paths.workdir = w.clone();
    }
    println!("config_hash {}", cfg.content_hash());
    println!("config {}", cfg.canonical_json());
    println!("workdir {}", cfg.paths.workdir.display());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let samples = cmd_gen_data(&resolve(&c)?)?;
            println!("wrote {} samples", samples.len());
        }
        Command::Train(c) => {
            let r = cmd_train(&resolve(&c)?)?;
            println!(
                "admitted: white-box accuracy {:?}, transfer {:.4}, reconstruction L∞ {:.3e}",
                r.white_box_accuracy, r.transfer_accuracy, r.reconstruction_linf
            );
        }
        Command::Attack {
            common,
            limit,
            grad_method,
            no_transforms,
            timestep,
        } => {
            let overrides = AttackOverrides {
                limit,
                grad_method,
                no_transforms,
                timestep,
            };
            let results = cmd_attack(&resolve(&common)?, &overrides)?;
            let ok = results.iter().filter(|r| r.success).count();
            println!("attacked {} images, {ok} fooled every white-box detector", results.len());
        }
        Command::Eval(c) => {
            let out = cmd_eval(&resolve(&c)?)?;
            let s = &out.summary;
            println!("records {}", s.records);
            for c in &s.per_classifier {
                println!("asr {} {}", c.name, c.asr.map_or("n/a".into(), |a| format!("{a:.4}")));
            }
            println!("mean_ssim {}", s.mean_ssim.map_or("n/a".into(), |a| format!("{a:.4}")));
            println!("score {:.4}", s.score.total);
            println!("report {}", out.paths.csv.display());
        }
        Command::Selftest { seed } => {
            let out = run_selftest(seed);
            for o in &out {
                println!("{} {} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            check_outcomes(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
