#![allow(dead_code)]

use hamlearn::data::{generate, sample_ground_truth, CountTable, Dataset, DatasetSpec};
use hamlearn::{HamiltonianFamily, StateVector};
use num_complex::Complex64;
use rand::Rng;

pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> StateVector {
    let amps: Vec<Complex64> = (0..1usize << n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).unwrap()
}

pub fn random_params<R: Rng>(family: HamiltonianFamily, n: usize, rng: &mut R) -> Vec<f64> {
    (0..family.num_params(n)).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn small_spec(family: HamiltonianFamily, n: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        num_states: 3,
        timestamps: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        num_bases: 12,
        shots: 40,
        ..DatasetSpec::standard(family, n, seed)
    }
}

pub fn small_dataset(family: HamiltonianFamily, n: usize, seed: u64) -> (Vec<f64>, Dataset, CountTable) {
    let truth = sample_ground_truth(family, n, seed);
    let ds = generate(&small_spec(family, n, seed), &truth).unwrap();
    let table = CountTable::from_dataset(&ds).unwrap();
    (truth, ds, table)
}

/// Pearson chi-square against `probs` after pooling outcomes whose expected
/// count is below 5. Returns (statistic, critical value at `alpha`).
pub fn chi_square(counts: &[u64], probs: &[f64], alpha: f64) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = counts.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * total as f64;
        if e < 5.0 {
            pool.0 += c as f64;
            pool.1 += e;
        } else {
            cells.push((c as f64, e));
        }
    }
    if pool.1 > 0.0 {
        cells.push(pool);
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (cells.len() - 1).max(1) as f64;
    (stat, ChiSquared::new(dof).unwrap().inverse_cdf(1.0 - alpha))
}
