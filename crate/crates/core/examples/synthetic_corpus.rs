//! Generate the real/fake corpus and write it with its manifest.
//!
//! `cargo run --example synthetic_corpus -- [dir]`

use latent_adv::data::{artifact_channel, gen_dataset, render, split_view, write_corpus, Split};
use latent_adv::models::LABEL_FAKE;

fn main() -> latent_adv::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "work/corpus".into());
    let samples = gen_dataset(200, 7)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let v = split_view(&samples, split);
        let fakes = v.labels.iter().filter(|&&l| l == LABEL_FAKE).count();
        println!("{split:?}: {} images, {fakes} fake", v.len());
    }

    // a fake and its artifact-free twin differ only on the artifact channel
    let fake = samples.iter().find(|s| s.label == LABEL_FAKE).unwrap();
    let twin = render(fake.seed, 0, 0.0);
    let c = artifact_channel(fake.seed);
    let diff = fake.image.sub(&twin)?;
    let plane = &diff.data()[c * 256..(c + 1) * 256];
    println!(
        "sample {}: artifact on channel {c}, mean |diff| there {:.4}",
        fake.seed,
        plane.iter().map(|v| v.abs()).sum::<f64>() / 256.0
    );

    std::fs::create_dir_all(&dir)?;
    write_corpus(std::path::Path::new(&dir), &samples)?;
    println!("wrote {} samples to {dir}", samples.len());
    Ok(())
}
