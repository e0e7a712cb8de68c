//! gen-data -> train -> attack -> eval into one workdir, as the CLI runs it.
//!
//! `cargo run --release --example full_pipeline -- [workdir] [limit]`

use latent_adv::pipeline::{cmd_attack, cmd_eval, ensure_trained, AttackOverrides, RunConfig};

fn main() -> latent_adv::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::default();
    if let Some(dir) = args.first() {
        cfg.paths.workdir = dir.into();
    }
    let limit = args.get(1).and_then(|s| s.parse().ok());
    println!("config {}", cfg.content_hash());
    ensure_trained(&cfg)?;
    let attacks = cmd_attack(&cfg, &AttackOverrides { limit, ..Default::default() })?;
    println!("attacked {} fakes", attacks.len());
    let out = cmd_eval(&cfg)?;
    for c in &out.summary.per_classifier {
        println!("{}{}: ASR {:.3}", c.name, if c.transfer { " (held out)" } else { "" }, c.asr.unwrap_or(0.0));
    }
    println!("mean SSIM {:.4}, score {:.3}", out.summary.mean_ssim.unwrap_or(0.0), out.summary.score.total);
    println!("report in {}", out.paths.csv.parent().unwrap().display());
    Ok(())
}
