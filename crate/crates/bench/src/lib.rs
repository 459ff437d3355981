//! Shared fixtures for the benchmarks.

use rand::Rng;
use viscal_core::mvconstruct::SampleMatrix;
use viscal_core::{stream, Pmf};

pub fn random_pmf(seed: u64, n: usize) -> Pmf {
    let mut rng = stream!(seed, "bench-pmf");
    Pmf::from_weights((0..n).map(|_| rng.random::<f64>()).collect()).expect("positive weights")
}

pub fn random_sample(seed: u64, members: usize, dims: usize) -> (SampleMatrix, Vec<f64>) {
    let mut rng = stream!(seed, "bench-sample");
    let values = (0..members * dims).map(|_| rng.random_range(0.0..70_000.0)).collect();
    let obs = (0..dims).map(|_| rng.random_range(0.0..70_000.0)).collect();
    (SampleMatrix::new(members, dims, values).expect("shape"), obs)
}

/// Features and labels resembling a year of one station's training data.
pub fn training_set(seed: u64, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = stream!(seed, "bench-train");
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let latent = 40.0 * row[0] + 20.0 * row[1] + rng.random_range(-10.0..10.0);
        y.push(latent.clamp(0.0, 83.0) as usize);
        x.push(row);
    }
    (x, y)
}
