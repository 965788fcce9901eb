//! How many leaves a sample reaches as a depth-10 tree trains, for several
//! smooth-step widths. Starts near 2^10 and collapses towards 1.
//!
//! cargo run --release --example reachable_leaves

use tel::cli::{cmd_bench_reachable, BenchReachableArgs};

fn main() -> tel::error::Result<()> {
    let args = BenchReachableArgs {
        gammas: vec![1e-4, 1e-2, 1.0],
        depth: 10,
        trees: 1,
        epochs: 20,
        lr: 0.1,
        batch_size: 256,
        init_scale: 1e-6,
        data: None,
        label_col: "label".into(),
        n: 5000,
        p: 20,
        seed: 0,
        threads: 0,
        out: None,
    };
    let rows = cmd_bench_reachable(&args, &mut std::io::sink())?;
    for gamma in &args.gammas {
        let series: Vec<String> = rows
            .iter()
            .filter(|r| r.gamma == *gamma && [0, 1, 2, 5, 10, 20].contains(&r.epoch))
            .map(|r| format!("e{}={:.2}", r.epoch, r.mean_reachable_leaves))
            .collect();
        println!("gamma {gamma:e}: {}", series.join("  "));
    }
    Ok(())
}
