use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Per-class proportional train/test split. Each class sends
/// `floor(n_c * test_fraction)` shuffled samples to the test side; both
/// sides list their rows in original order.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &c) in ds.y.iter().enumerate() {
        per_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in per_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class '{}' has a single sample and cannot be split",
                ds.class_names[c]
            )));
        }
        let n_test = (idx.len() as f64 * test_fraction).floor() as usize;
        if n_test >= idx.len() {
            return Err(Error::Data(format!(
                "class '{}' would have no training samples",
                ds.class_names[c]
            )));
        }
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}
