//! Trains the default ten depth-4 trees on the bundled linear-plus-XOR data
//! and reports held-out metrics.
//!
//! cargo run --release --example train_synthetic

use tel::data::stratified_split;
use tel::data::synthetic::linear_xor;
use tel::nn::{train, TrainConfig};

fn main() -> tel::error::Result<()> {
    let ds = linear_xor(5000, 20, 0);
    let (train_set, test_set) = stratified_split(&ds, 0.3, 0)?;
    let cfg = TrainConfig::default();
    let outcome = train(&cfg, &train_set, Some(&test_set))?;
    println!("epoch  train_loss  val_loss  val_acc  val_auc  reachable");
    for r in outcome.history.iter().filter(|r| r.epoch % 5 == 0 || r.epoch == 1) {
        println!(
            "{:5}  {:10.4}  {:8.4}  {:7.4}  {:7.4}  {:9.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.val_auc, r.mean_reachable_leaves
        );
    }
    Ok(())
}
