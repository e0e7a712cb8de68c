//! Train the codec, score network and the four detectors on the default
//! corpus and print the admission report.
//!
//! `cargo run --release --example train_detectors -- [workdir]`

use latent_adv::pipeline::{ensure_trained, RunConfig};

fn main() -> latent_adv::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = std::env::args().nth(1) {
        cfg.paths.workdir = dir.into();
    }
    let r = ensure_trained(&cfg)?;
    println!("white-box accuracy {:?}", r.white_box_accuracy);
    println!("transfer accuracy  {:.4}", r.transfer_accuracy);
    println!("codec test MSE     {:.3e}", r.codec_test_mse);
    println!("reconstruction L∞  {:.3e}", r.reconstruction_linf);
    println!(
        "score-net loss     {:.4} -> {:.4}",
        r.score_training.initial_loss,
        r.score_training.final_loss()
    );
    println!("checkpoints in {}", cfg.paths.workdir.display());
    Ok(())
}
