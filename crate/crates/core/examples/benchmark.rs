//! Runs the desk-scale benchmark for a few seeds and prints per-seed errors.
//!
//! `cargo run --release -p gazeadapt --example benchmark -- [seeds] [variants] [config.json]`

use gazeadapt::bench::{adapt_and_score, median, BenchmarkConfig};
use gazeadapt::engine::{Ablation, AdaptConfig};

fn main() -> gazeadapt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let variants: Vec<String> = args
        .get(2)
        .map(|s| s.split(',').map(String::from).collect())
        .unwrap_or_else(|| vec!["2oma+js+sg".into(), "oma".into(), "sg".into()]);
    let bench: BenchmarkConfig = match args.get(3) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path).expect("config"))?,
        None => BenchmarkConfig::default(),
    };
    let mut improvements = vec![Vec::new(); variants.len()];
    for seed in 0..seeds {
        let t = std::time::Instant::now();
        let data = bench.data(seed)?;
        let ckpts = bench.pretrain(&data, seed)?;
        let vals: Vec<String> = ckpts
            .iter()
            .map(|c| format!("{:.3}", c.source_val_error.unwrap()))
            .collect();
        println!("seed {seed}: source val errors [{}] ({:.1}s)", vals.join(" "), t.elapsed().as_secs_f64());
        for (i, v) in variants.iter().enumerate() {
            let cfg = AdaptConfig {
                ablation: Ablation::parse(v)?,
                ..bench.adapt.clone()
            };
            let r = adapt_and_score(&bench, &data, &ckpts, &cfg, seed)?;
            let imp = 100.0 * (r.baseline - r.adapted) / r.baseline;
            improvements[i].push(imp);
            println!(
                "  {v:>12}: baseline {:.3} adapted {:.3} ({imp:+.1}%) read {}",
                r.baseline, r.adapted, r.target_images_read
            );
        }
    }
    for (v, imp) in variants.iter().zip(&improvements) {
        println!("{v:>12}: median improvement {:+.1}%", median(imp));
    }
    Ok(())
}
