//! Attack a few test fakes in latent space and show where each succeeded.
//!
//! `cargo run --release --example latent_attack -- [workdir] [count]`

use latent_adv::attack::{run_attack, AttackModels};
use latent_adv::data::read_corpus;
use latent_adv::pipeline::{attack_targets, ensure_trained, ModelBundle, RunConfig};

fn main() -> latent_adv::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::default();
    if let Some(dir) = args.first() {
        cfg.paths.workdir = dir.into();
    }
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    ensure_trained(&cfg)?;

    let dir = &cfg.paths.workdir;
    let bundle = ModelBundle::load(dir, &cfg)?;
    let samples = read_corpus(dir)?;
    let cond = bundle.score.table.embed(cfg.attack.cond_index)?;
    let null = bundle.score.table.null();
    let transfer = [bundle.transfer.clone()];
    let models = AttackModels {
        codec: &bundle.codec,
        score: &bundle.score.net,
        schedule: &bundle.schedule,
        cond: &cond,
        null_cond: &null,
        white_box: &bundle.white_box,
        transfer: &transfer,
    };
    for i in attack_targets(&samples, &cfg).into_iter().take(count) {
        let r = run_attack(&samples[i].image, &cfg.attack, &models, i)?;
        println!(
            "image {i}: success {} radius {} ssim {:.4} transfer verdict {} after {} iterations",
            r.success,
            r.radius.map_or("-".into(), |x| format!("{x:.2}")),
            r.ssim,
            r.transfer_verdicts[0],
            r.iterations
        );
    }
    Ok(())
}
