//! Pixel-space MI-FGSM at 8/255 against the same detectors, for comparison
//! with the latent attack.
//!
//! `cargo run --release --example pixel_baseline -- [workdir]`

use latent_adv::attack::{run_pixel_mifgsm, PixelAttackConfig};
use latent_adv::data::read_corpus;
use latent_adv::models::LABEL_REAL;
use latent_adv::pipeline::{attack_targets, ensure_trained, ModelBundle, RunConfig};

fn main() -> latent_adv::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = std::env::args().nth(1) {
        cfg.paths.workdir = dir.into();
    }
    ensure_trained(&cfg)?;
    let bundle = ModelBundle::load(&cfg.paths.workdir, &cfg)?;
    let samples = read_corpus(&cfg.paths.workdir)?;
    let transfer = [bundle.transfer.clone()];
    let pixel = PixelAttackConfig::default();
    let (mut wb, mut tr, mut ssim, mut n) = (0, 0, 0.0, 0);
    for i in attack_targets(&samples, &cfg) {
        let r = run_pixel_mifgsm(&samples[i].image, &pixel, &bundle.white_box, &transfer, i)?;
        wb += r.success as usize;
        tr += (r.transfer_verdicts[0] == LABEL_REAL) as usize;
        ssim += r.ssim;
        n += 1;
    }
    let n_f = n as f64;
    println!("{n} fakes: white-box ASR {:.3}, transfer ASR {:.3}, mean SSIM {:.4}", wb as f64 / n_f, tr as f64 / n_f, ssim / n_f);
    Ok(())
}
