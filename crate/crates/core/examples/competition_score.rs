//! Score a handful of records and write the report files.
//!
//! `cargo run --example competition_score -- [dir]`

use latent_adv::metrics::{competition_score, EvalRecord};
use latent_adv::report::{summarize, write_report};

fn main() -> latent_adv::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "work/score_demo".into());
    let names: Vec<String> = ["wb0", "wb1", "wb2", "transfer"].map(String::from).to_vec();
    let records = vec![
        EvalRecord { id: 0, ssim: 0.93, verdicts: vec![0, 0, 0, 0], radius: Some(0.07), success: true },
        EvalRecord { id: 1, ssim: 0.88, verdicts: vec![0, 0, 0, 1], radius: Some(0.21), success: true },
        EvalRecord { id: 2, ssim: 0.85, verdicts: vec![1, 0, 0, 1], radius: None, success: false },
    ];
    let b = competition_score(&records, &names)?;
    for (name, partial) in &b.per_classifier {
        println!("{name}: {partial:.2}");
    }
    println!("total {:.2}", b.total);

    let summary = summarize(&records, &names, 3, "demo", serde_json::Value::Null)?;
    let paths = write_report(std::path::Path::new(&dir), &records, &names, &summary, &[])?;
    println!("wrote {} and {}", paths.csv.display(), paths.summary.display());
    Ok(())
}
