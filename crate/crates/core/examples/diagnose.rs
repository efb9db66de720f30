//! Per-member target errors versus the error of the averaged group prediction.

use gazeadapt::bench::BenchmarkConfig;
use gazeadapt::data::evaluate;
use gazeadapt::engine::rank_checkpoints;
use gazeadapt::{angular_error, GazeLabel};

fn main() -> gazeadapt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let mut bench: BenchmarkConfig = match args.get(3) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path).expect("config"))?,
        None => BenchmarkConfig::default(),
    };
    bench.pretrain.steps = steps;
    for seed in 0..seeds {
        let data = bench.data(seed)?;
        let ranked = rank_checkpoints(&bench.pretrain(&data, seed)?)?;
        let mut preds = Vec::new();
        let mut line = String::new();
        for c in &ranked {
            let m = c.instantiate()?;
            let r = evaluate(m.as_ref(), &data.target)?;
            let s = evaluate(m.as_ref(), &data.source_val)?;
            line += &format!(" {:.2}/{:.2}", s.mean, r.mean);
            preds.push(r.predictions);
        }
        let truths: Vec<GazeLabel> = data.target.iter().map(|(_, l)| l.unwrap()).collect();
        let mut bias = [0.0; 2];
        let mut mean_err = [0.0; 2];
        for h in [3usize, 4] {
            let mut e = 0.0;
            for i in 0..truths.len() {
                let p: f64 = preds[..h].iter().map(|v| v[i].pitch).sum::<f64>() / h as f64;
                let y: f64 = preds[..h].iter().map(|v| v[i].yaw).sum::<f64>() / h as f64;
                if h == 3 {
                    bias[0] += (p - truths[i].pitch) / truths.len() as f64;
                    bias[1] += (y - truths[i].yaw) / truths.len() as f64;
                }
                e += angular_error(GazeLabel::prediction(p, y), truths[i])?;
            }
            mean_err[h - 3] = e / truths.len() as f64;
        }
        println!(
            "seed {seed}: src/tgt{line} | mean3 {:.2} mean4 {:.2} | bias3 ({:.3},{:.3})",
            mean_err[0], mean_err[1], bias[0], bias[1]
        );
    }
    Ok(())
}
