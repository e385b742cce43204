//! Synthetic functional data generators for experiments and tests.

use crate::dataset::{Dataset, FunctionalSample};
use crate::error::Result;
use crate::linalg::{Matrix, Vector};
use crate::rng::{mix_key, stream, SplitMix64};

/// Equally spaced grid on [0, 1].
pub fn unit_grid(j: usize) -> Vec<f64> {
    if j == 1 {
        return vec![0.0];
    }
    (0..j).map(|t| t as f64 / (j - 1) as f64).collect()
}

/// Modified Gram-Schmidt under the weighted inner product
/// <a, b> = sum_i w_i a_i b_i. Returns exactly w-orthonormal vectors.
pub fn orthonormalize_w(basis: &[Vec<f64>], weights: &[f64]) -> Vec<Vector> {
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut v = b.clone();
        for prev in &out {
            let proj = inner(&v, prev);
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= proj * p;
            }
        }
        let norm = inner(&v, &v).sqrt();
        assert!(norm > 1e-12, "basis vectors must be linearly independent");
        for x in &mut v {
            *x /= norm;
        }
        out.push(v);
    }
    out.into_iter().map(Vector::from).collect()
}

/// Draws curves x_i = sum_k a_ik phi_k + noise with a_ik ~ N(0, variance_k).
///
/// Components are univariate functions over the grid. Returns the dataset
/// (unlabeled) together with the N x K matrix of drawn scores, which tests
/// use as the oracle for recovered eigenvalues.
pub fn karhunen_loeve(
    n: usize,
    grid: &[f64],
    components: &[(Vector, f64)],
    noise_sd: f64,
    seed: u64,
) -> Result<(Dataset, Matrix)> {
    let j = grid.len();
    let k = components.len();
    let mut draws = Matrix::zeros(n, k);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = SplitMix64::new(mix_key(&[seed, stream::SIMULATE, i as u64]));
        let mut curve = vec![0.0; j];
        for (c, (phi, variance)) in components.iter().enumerate() {
            let a = variance.sqrt() * rng.next_gaussian();
            draws.set(i, c, a);
            for t in 0..j {
                curve[t] += a * phi[t];
            }
        }
        if noise_sd > 0.0 {
            for v in &mut curve {
                *v += noise_sd * rng.next_gaussian();
            }
        }
        samples.push(FunctionalSample::fully_observed(
            Matrix::from_vec(j, 1, curve)?,
            None,
        ));
    }
    Ok((Dataset::new(grid.to_vec(), samples, 1, 1)?, draws))
}

/// Balanced two-class set with sin-shaped means for class 0 and cos-shaped
/// means for class 1, one harmonic per channel, plus pointwise Gaussian
/// noise.
pub fn two_class_curves(
    n: usize,
    j: usize,
    channels: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let grid = unit_grid(j);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let mut rng = SplitMix64::new(mix_key(&[seed, stream::SIMULATE, i as u64]));
        let mut values = Matrix::zeros(j, channels);
        for d in 0..channels {
            let freq = 2.0 * std::f64::consts::PI * (d + 1) as f64;
            for (t, &g) in grid.iter().enumerate() {
                let mean = if label == 0 {
                    (freq * g).sin()
                } else {
                    (freq * g).cos()
                };
                values.set(t, d, mean + noise_sd * rng.next_gaussian());
            }
        }
        samples.push(FunctionalSample::fully_observed(values, Some(label)));
    }
    Dataset::new(grid, samples, 2, channels)
}

/// Balanced two-class set where the classes sit at -c and +c along one
/// component function, plus pointwise noise. The component separation is
/// what FPC scores recover, so an FPCA + logistic pipeline classifies this
/// by construction.
pub fn two_class_along_component(
    n: usize,
    grid: &[f64],
    component: &Vector,
    separation: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let j = grid.len();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { -1.0 } else { 1.0 };
        let mut rng = SplitMix64::new(mix_key(&[seed, stream::SIMULATE, i as u64]));
        let curve: Vec<f64> = (0..j)
            .map(|t| sign * separation * component[t] + noise_sd * rng.next_gaussian())
            .collect();
        samples.push(FunctionalSample::fully_observed(
            Matrix::from_vec(j, 1, curve)?,
            Some(label),
        ));
    }
    Dataset::new(grid.to_vec(), samples, 2, 1)
}
