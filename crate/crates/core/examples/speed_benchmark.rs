//! Training time of conditional smooth-step trees against dense logistic
//! trees as depth grows (ten trees, a few epochs).
//!
//! cargo run --release --example speed_benchmark

use tel::cli::{cmd_bench_speed, BenchSpeedArgs};

fn main() -> tel::error::Result<()> {
    let args = BenchSpeedArgs {
        depths: vec![2, 4, 6, 8],
        trees: 10,
        epochs: 3,
        gamma: 1.0,
        alpha: 1.0,
        lr: 0.1,
        batch_size: 256,
        n: 5000,
        p: 20,
        seed: 0,
        threads: 1,
        out: None,
    };
    let report = cmd_bench_speed(&args, &mut std::io::sink(), &mut std::io::sink())?;
    println!("depth  smooth(s)  logistic(s)  speed-up");
    for (depth, ratio) in &report.speedups {
        println!(
            "{depth:5}  {:9.3}  {:11.3}  {ratio:7.1}x",
            report.seconds(*depth, "smooth").unwrap_or(f64::NAN),
            report.seconds(*depth, "logistic").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
