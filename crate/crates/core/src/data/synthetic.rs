//! Seeded synthetic classification datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::matrix::Matrix;

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

/// Gaussian features with a label from a random hyperplane plus an XOR of
/// the signs of the first two features:
/// `y = [0.75 <v, x> + sign(x0 * x1) > 0]` with `v` a random unit vector.
/// Requires `p >= 2`.
pub fn linear_xor(n: usize, p: usize, seed: u64) -> Dataset {
    assert!(p >= 2, "linear_xor needs at least two features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let linear: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
        let xor = if x[0] * x[1] > 0.0 { 1.0 } else { -1.0 };
        y.push(usize::from(0.75 * linear + xor > 0.0));
        data.extend(x);
    }
    Dataset::new(
        Matrix::from_vec(n, p, data).expect("n * p values"),
        y,
        names(p),
        vec!["0".into(), "1".into()],
    )
    .expect("consistent synthetic dataset")
}

/// Two isotropic Gaussian blobs centred at `-c` and `+c` along a random
/// direction, `|c| = separation / 2`. Classes alternate so both are balanced.
pub fn blobs(n: usize, p: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|a| *a *= 0.5 * separation / norm);
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let sign = if class == 1 { 1.0 } else { -1.0 };
        for d in &dir {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(sign * d + z);
        }
        y.push(class);
    }
    Dataset::new(
        Matrix::from_vec(n, p, data).expect("n * p values"),
        y,
        names(p),
        vec!["0".into(), "1".into()],
    )
    .expect("consistent synthetic dataset")
}
