//! The file-based workflow behind `tel train` / `tel eval`: CSV in, JSON
//! model and CSV history out, then scoring the saved model.
//!
//! cargo run --release --example csv_workflow

use tel::cli::{write_history, ModelFile};
use tel::data::synthetic::blobs;
use tel::data::{load_csv, stratified_split, write_csv};
use tel::nn::{train, TrainConfig};
use tel::parallel::Parallelism;

fn main() -> tel::error::Result<()> {
    let dir = std::env::temp_dir().join("tel-csv-workflow");
    std::fs::create_dir_all(&dir).map_err(|e| tel::error::Error::Data(e.to_string()))?;
    let data = dir.join("blobs.csv");
    write_csv(&blobs(1000, 5, 3.0, 7), &data, "label")?;

    let ds = load_csv(&data, "label")?;
    let (train_set, test_set) = stratified_split(&ds, 0.3, 0)?;
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let outcome = train(&cfg, &train_set, Some(&test_set))?;
    ModelFile::from_model(&outcome.model, &ds.class_names)?.write(dir.join("model.json"))?;
    write_history(dir.join("history.csv"), &outcome.history)?;

    let restored = ModelFile::read(dir.join("model.json"))?.to_model()?;
    let eval = restored.evaluate(&test_set, &Parallelism::serial())?;
    println!("wrote {}", dir.display());
    println!(
        "held-out accuracy {:.4}, AUC {:.4}, reachable leaves {:.2}",
        eval.accuracy, eval.auc, eval.mean_reachable_leaves
    );
    assert_eq!(restored, outcome.model);
    Ok(())
}
