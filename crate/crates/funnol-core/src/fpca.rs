//! Functional principal component analysis on a dense common grid.
//!
//! Multivariate curves are concatenated channel after channel into one
//! long vector, the discretized covariance matrix is built with trapezoid
//! quadrature weights, and the weighted eigenproblem is solved through the
//! symmetric eigendecomposition of W^{1/2} C W^{1/2}. Eigenfunctions are
//! orthonormal under the weighted inner product. Sparse curves are
//! linearly imputed before fitting or scoring.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FunctionalSample};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix, Vector};

/// Fitted FPCA model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub grid: Vec<f64>,
    /// Trapezoid weights over the grid (length J); the concatenated space
    /// tiles them across channels.
    pub quad_weights: Vec<f64>,
    /// Pointwise mean of the concatenated training curves (length J*D).
    pub mean: Vector,
    /// Retained eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vector,
    /// K columns of length J*D, orthonormal under the quadrature weights.
    pub eigenfunctions: Matrix,
    pub num_components: usize,
    pub num_channels: usize,
}

impl FpcaModel {
    fn weight_at(&self, index: usize) -> f64 {
        self.quad_weights[index % self.grid.len()]
    }
}

/// Trapezoid quadrature weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let j = grid.len();
    if j == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; j];
    w[0] = (grid[1] - grid[0]) / 2.0;
    w[j - 1] = (grid[j - 1] - grid[j - 2]) / 2.0;
    for t in 1..j - 1 {
        w[t] = (grid[t + 1] - grid[t - 1]) / 2.0;
    }
    w
}

/// Concatenates the channels of a sample into one J*D vector,
/// channel-major: entries d*J..(d+1)*J hold channel d.
pub fn concat_channels(sample: &FunctionalSample) -> Vector {
    let j = sample.grid_len();
    let d = sample.channels();
    let mut out = Vec::with_capacity(j * d);
    for ch in 0..d {
        for t in 0..j {
            out.push(sample.value(t, ch));
        }
    }
    Vector::from(out)
}

/// Fits FPCA with K retained components on fully observed training data.
pub fn fpca_fit(train: &Dataset, num_components: usize) -> Result<FpcaModel> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "FPCA needs at least 2 samples, got {n}"
        )));
    }
    if !train.fully_observed() {
        return Err(Error::Degenerate(
            "FPCA requires fully observed samples; impute sparse curves first".into(),
        ));
    }
    let j = train.grid_len();
    let d = train.num_channels;
    let dim = j * d;
    if num_components == 0 || num_components > dim {
        return Err(Error::InvalidConfig(format!(
            "component count must be in 1..={dim}, got {num_components}"
        )));
    }

    let rows: Vec<Vector> = train.samples.iter().map(concat_channels).collect();
    let mut mean = Vector::zeros(dim);
    for r in &rows {
        mean.add_assign(r);
    }
    mean.scale(1.0 / n as f64);

    // Covariance of the centered concatenated curves.
    let mut cov = Matrix::zeros(dim, dim);
    for r in &rows {
        let centered = r.sub(&mean);
        cov.add_outer(&centered, &centered, 1.0);
    }
    cov.scale(1.0 / (n - 1) as f64);

    let weights = trapezoid_weights(&train.grid);
    let sqrt_w: Vec<f64> = (0..dim).map(|a| weights[a % j].sqrt()).collect();
    let mut weighted = cov;
    for a in 0..dim {
        for b in 0..dim {
            weighted.set(a, b, weighted.get(a, b) * sqrt_w[a] * sqrt_w[b]);
        }
    }

    let (raw_values, raw_vectors) = sym_eigen(&weighted)?;
    let mut eigenvalues = Vector::zeros(num_components);
    let mut eigenfunctions = Matrix::zeros(dim, num_components);
    for k in 0..num_components {
        let lambda = raw_values[k];
        if lambda < -1e-10 {
            log::warn!("clamping negative FPCA eigenvalue {lambda}");
        }
        eigenvalues[k] = lambda.max(0.0);
        for a in 0..dim {
            // Back-transform so the function is w-orthonormal.
            eigenfunctions.set(a, k, raw_vectors.get(a, k) / sqrt_w[a]);
        }
    }
    Ok(FpcaModel {
        grid: train.grid.clone(),
        quad_weights: weights,
        mean,
        eigenvalues,
        eigenfunctions,
        num_components,
        num_channels: d,
    })
}

/// Quadrature inner product of a centered sample with each eigenfunction.
pub fn fpc_scores(model: &FpcaModel, sample: &FunctionalSample) -> Result<Vector> {
    let x = concat_channels(sample);
    if x.len() != model.mean.len() {
        return Err(Error::DimMismatch(format!(
            "sample has {} points, model expects {}",
            x.len(),
            model.mean.len()
        )));
    }
    if sample.mask().iter().any(|&m| !m) {
        return Err(Error::Degenerate(
            "FPC scores require a fully observed sample; impute first".into(),
        ));
    }
    let centered = x.sub(&model.mean);
    let mut scores = Vector::zeros(model.num_components);
    for k in 0..model.num_components {
        let mut acc = 0.0;
        for a in 0..centered.len() {
            acc += model.weight_at(a) * centered[a] * model.eigenfunctions.get(a, k);
        }
        scores[k] = acc;
    }
    Ok(scores)
}

/// mean + sum_k score_k phi_k over the concatenated grid.
pub fn fpca_reconstruct(model: &FpcaModel, scores: &Vector) -> Result<Vector> {
    if scores.len() != model.num_components {
        return Err(Error::DimMismatch(format!(
            "{} scores for a model with {} components",
            scores.len(),
            model.num_components
        )));
    }
    let mut out = model.mean.clone();
    for k in 0..model.num_components {
        let s = scores[k];
        for a in 0..out.len() {
            out[a] += s * model.eigenfunctions.get(a, k);
        }
    }
    Ok(out)
}

/// Linear interpolation of missing cells per channel with flat
/// extrapolation at the ends. Needs at least 2 observed points per channel.
pub fn impute_linear(sample: &FunctionalSample, grid: &[f64]) -> Result<FunctionalSample> {
    let j = sample.grid_len();
    let d = sample.channels();
    debug_assert_eq!(grid.len(), j);
    let mut values = Matrix::zeros(j, d);
    for ch in 0..d {
        let observed: Vec<usize> = (0..j).filter(|&t| sample.observed(t, ch)).collect();
        if observed.len() < 2 {
            return Err(Error::Degenerate(format!(
                "channel {ch} has {} observed points, need at least 2 to impute",
                observed.len()
            )));
        }
        for t in 0..j {
            let v = if sample.observed(t, ch) {
                sample.value(t, ch)
            } else if t < observed[0] {
                sample.value(observed[0], ch)
            } else if t > *observed.last().unwrap() {
                sample.value(*observed.last().unwrap(), ch)
            } else {
                let hi = observed.iter().position(|&o| o > t).expect("interior gap");
                let (a, b) = (observed[hi - 1], observed[hi]);
                let frac = (grid[t] - grid[a]) / (grid[b] - grid[a]);
                sample.value(a, ch) + frac * (sample.value(b, ch) - sample.value(a, ch))
            };
            values.set(t, ch, v);
        }
    }
    Ok(FunctionalSample::fully_observed(values, sample.label()))
}

/// Imputes every sparse sample in a dataset.
pub fn impute_dataset(ds: &Dataset) -> Result<Dataset> {
    let samples: Vec<FunctionalSample> = ds
        .samples
        .iter()
        .map(|s| {
            if s.mask().iter().all(|&m| m) {
                Ok(s.clone())
            } else {
                impute_linear(s, &ds.grid)
            }
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        grid: ds.grid.clone(),
        samples,
        num_classes: ds.num_classes,
        num_channels: ds.num_channels,
        class_labels: ds.class_labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn unit_grid(j: usize) -> Vec<f64> {
        (0..j).map(|t| t as f64 / (j - 1) as f64).collect()
    }

    fn dataset_from_vectors(grid: Vec<f64>, rows: Vec<Vec<f64>>) -> Dataset {
        let j = grid.len();
        let samples = rows
            .into_iter()
            .map(|r| FunctionalSample::fully_observed(Matrix::from_vec(j, 1, r).unwrap(), Some(0)))
            .collect();
        Dataset::new(grid, samples, 1, 1).unwrap()
    }

    /// w-inner product of two concatenated vectors.
    fn inner_w(model: &FpcaModel, a: &Vector, b: &Vector) -> f64 {
        (0..a.len()).map(|i| model.weight_at(i) * a[i] * b[i]).sum()
    }

    #[test]
    fn identical_samples_give_zero_eigenvalues() {
        let grid = unit_grid(10);
        let row: Vec<f64> = grid.iter().map(|t| t.sin()).collect();
        let ds = dataset_from_vectors(grid, vec![row.clone(), row.clone(), row]);
        let model = fpca_fit(&ds, 3).unwrap();
        for k in 0..3 {
            approx(model.eigenvalues[k], 0.0, 1e-12);
        }
    }

    // Oracle: with x_i = a_i * phi and a_i ~ N(0, 4), the leading
    // eigenvalue estimates the sample variance of the drawn scores.
    #[test]
    fn single_component_variance_recovered() {
        let j = 20;
        let grid = unit_grid(j);
        let weights = trapezoid_weights(&grid);
        // phi = constant, normalized under w.
        let total_w: f64 = weights.iter().sum();
        let phi: Vec<f64> = vec![1.0 / total_w.sqrt(); j];
        let mut rng = SplitMix64::new(4242);
        let n = 500;
        let mut rows = Vec::new();
        let mut draws = Vec::new();
        for _ in 0..n {
            let a = 2.0 * rng.next_gaussian();
            draws.push(a);
            rows.push(phi.iter().map(|p| a * p).collect());
        }
        let ds = dataset_from_vectors(grid, rows);
        let model = fpca_fit(&ds, 3).unwrap();
        let mean_a = draws.iter().sum::<f64>() / n as f64;
        let var_a = draws
            .iter()
            .map(|a| (a - mean_a) * (a - mean_a))
            .sum::<f64>()
            / (n - 1) as f64;
        assert!((model.eigenvalues[0] - var_a).abs() / var_a < 0.1);
        approx(model.eigenvalues[1], 0.0, 1e-10);
        approx(model.eigenvalues[2], 0.0, 1e-10);
    }

    // Two-curve oracle: {+v, -v} has covariance 2 v v^T, so the single
    // nonzero eigenvalue of the weighted problem is 2 ||v||_w^2.
    #[test]
    fn two_curve_eigenvalue_by_hand() {
        let j = 8;
        let grid = unit_grid(j);
        let v: Vec<f64> = grid.iter().map(|t| (3.0 * t).cos()).collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let ds = dataset_from_vectors(grid.clone(), vec![v.clone(), neg]);
        let model = fpca_fit(&ds, 2).unwrap();
        let vv = Vector::from(v);
        let norm_w = inner_w(&model, &vv, &vv);
        approx(model.eigenvalues[0], 2.0 * norm_w, 1e-10);
        approx(model.eigenvalues[1], 0.0, 1e-10);
    }

    fn random_dataset(n: usize, j: usize, seed: u64) -> Dataset {
        let mut rng = SplitMix64::new(seed);
        let grid = unit_grid(j);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a = rng.next_gaussian();
                let b = rng.next_gaussian();
                grid.iter()
                    .map(|t| a * (2.0 * t).sin() + b * (5.0 * t).cos() + 0.1 * rng.next_gaussian())
                    .collect()
            })
            .collect();
        dataset_from_vectors(grid, rows)
    }

    #[test]
    fn scores_of_mean_are_zero() {
        let ds = random_dataset(40, 12, 7);
        let model = fpca_fit(&ds, 4).unwrap();
        let j = ds.grid_len();
        let mean_sample = FunctionalSample::fully_observed(
            Matrix::from_vec(j, 1, model.mean.as_slice().to_vec()).unwrap(),
            None,
        );
        let scores = fpc_scores(&model, &mean_sample).unwrap();
        for k in 0..4 {
            approx(scores[k], 0.0, 1e-10);
        }
    }

    #[test]
    fn scores_pick_out_component_coefficients() {
        let ds = random_dataset(40, 12, 8);
        let model = fpca_fit(&ds, 3).unwrap();
        let c = 1.7;
        let j = ds.grid_len();
        let curve: Vec<f64> = (0..j)
            .map(|a| model.mean[a] + c * model.eigenfunctions.get(a, 0))
            .collect();
        let sample = FunctionalSample::fully_observed(Matrix::from_vec(j, 1, curve).unwrap(), None);
        let scores = fpc_scores(&model, &sample).unwrap();
        approx(scores[0], c, 1e-8);
        approx(scores[1], 0.0, 1e-8);
        approx(scores[2], 0.0, 1e-8);
    }

    // Oracle: independent naive inner-product implementation.
    #[test]
    fn scores_match_naive_inner_product() {
        let ds = random_dataset(25, 10, 9);
        let model = fpca_fit(&ds, 3).unwrap();
        let sample = &ds.samples[4];
        let scores = fpc_scores(&model, sample).unwrap();
        for k in 0..3 {
            let mut acc = 0.0;
            for t in 0..10 {
                let centered = sample.value(t, 0) - model.mean[t];
                acc += model.quad_weights[t] * centered * model.eigenfunctions.get(t, k);
            }
            approx(scores[k], acc, 1e-12);
        }
    }

    #[test]
    fn reconstruct_zero_scores_gives_mean() {
        let ds = random_dataset(30, 9, 10);
        let model = fpca_fit(&ds, 2).unwrap();
        let out = fpca_reconstruct(&model, &Vector::zeros(2)).unwrap();
        assert_eq!(out, model.mean);
    }

    // Full-basis completeness: with K = J the eigenbasis spans the space.
    #[test]
    fn full_basis_reconstruction_is_exact() {
        let ds = random_dataset(30, 9, 11);
        let model = fpca_fit(&ds, 9).unwrap();
        for sample in ds.samples.iter().take(5) {
            let scores = fpc_scores(&model, sample).unwrap();
            let rec = fpca_reconstruct(&model, &scores).unwrap();
            for t in 0..9 {
                approx(rec[t], sample.value(t, 0), 1e-8);
            }
        }
    }

    // Projection property: the K=1 residual is w-orthogonal to phi_1.
    #[test]
    fn rank_one_residual_orthogonal_to_component() {
        let ds = random_dataset(30, 9, 12);
        let model = fpca_fit(&ds, 1).unwrap();
        let sample = &ds.samples[3];
        let scores = fpc_scores(&model, sample).unwrap();
        let rec = fpca_reconstruct(&model, &scores).unwrap();
        let x = concat_channels(sample);
        let residual = x.sub(&rec);
        let phi1 = model.eigenfunctions.column(0);
        approx(inner_w(&model, &residual, &phi1), 0.0, 1e-8);
    }

    #[test]
    fn eigenfunctions_orthonormal_under_weights() {
        let ds = random_dataset(40, 11, 13);
        let model = fpca_fit(&ds, 5).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let fa = model.eigenfunctions.column(a);
                let fb = model.eigenfunctions.column(b);
                let expect = if a == b { 1.0 } else { 0.0 };
                approx(inner_w(&model, &fa, &fb), expect, 1e-8);
            }
        }
    }

    // Total variance identity: sum of all eigenvalues equals the
    // w-weighted total variance of the centered training data.
    #[test]
    fn eigenvalue_sum_matches_total_weighted_variance() {
        let ds = random_dataset(35, 10, 14);
        let model = fpca_fit(&ds, 10).unwrap();
        let n = ds.len();
        let mut total = 0.0;
        for s in &ds.samples {
            let x = concat_channels(s);
            let centered = x.sub(&model.mean);
            total += inner_w(&model, &centered, &centered);
        }
        total /= (n - 1) as f64;
        let sum: f64 = model.eigenvalues.as_slice().iter().sum();
        approx(sum, total, 1e-8);
    }

    #[test]
    fn training_scores_empirically_uncorrelated() {
        let ds = random_dataset(60, 10, 15);
        let model = fpca_fit(&ds, 4).unwrap();
        let all_scores: Vec<Vector> = ds
            .samples
            .iter()
            .map(|s| fpc_scores(&model, s).unwrap())
            .collect();
        let n = all_scores.len();
        let mut means = [0.0; 4];
        for s in &all_scores {
            for k in 0..4 {
                means[k] += s[k] / n as f64;
            }
        }
        for a in 0..4 {
            for b in 0..a {
                let mut cov = 0.0;
                for s in &all_scores {
                    cov += (s[a] - means[a]) * (s[b] - means[b]);
                }
                cov /= (n - 1) as f64;
                let bound = 1e-6
                    * (model.eigenvalues[a] * model.eigenvalues[b])
                        .sqrt()
                        .max(1e-12);
                assert!(cov.abs() < bound.max(1e-10), "cov[{a},{b}] = {cov}");
            }
        }
    }

    #[test]
    fn reconstruction_error_monotone_in_component_count() {
        let ds = random_dataset(30, 10, 16);
        let sample = &ds.samples[0];
        let x = concat_channels(sample);
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let model = fpca_fit(&ds, k).unwrap();
            let scores = fpc_scores(&model, sample).unwrap();
            let rec = fpca_reconstruct(&model, &scores).unwrap();
            let err = inner_w(&model, &x.sub(&rec), &x.sub(&rec));
            assert!(err <= last + 1e-10, "K={k}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn impute_fully_observed_unchanged() {
        let ds = random_dataset(3, 8, 17);
        let s = &ds.samples[0];
        let out = impute_linear(s, &ds.grid).unwrap();
        assert_eq!(&out, s);
    }

    #[test]
    fn impute_linear_midpoint() {
        let grid = vec![0.0, 1.0, 2.0];
        let values = Matrix::from_rows(&[&[0.0], &[123.0], &[2.0]]);
        let s = FunctionalSample::new(values, vec![true, false, true], None).unwrap();
        let out = impute_linear(&s, &grid).unwrap();
        assert_eq!(out.value(1, 0), 1.0);
    }

    #[test]
    fn impute_flat_head_extrapolation() {
        let grid = vec![0.0, 1.0, 2.0];
        let values = Matrix::from_rows(&[&[9.0], &[4.0], &[5.0]]);
        let s = FunctionalSample::new(values, vec![false, true, true], None).unwrap();
        let out = impute_linear(&s, &grid).unwrap();
        assert_eq!(out.value(0, 0), 4.0);
    }

    #[test]
    fn impute_rejects_single_observation() {
        let grid = vec![0.0, 1.0, 2.0];
        let values = Matrix::from_rows(&[&[9.0], &[4.0], &[5.0]]);
        let s = FunctionalSample::new(values, vec![false, true, false], None).unwrap();
        assert!(matches!(
            impute_linear(&s, &grid),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fit_rejects_sparse_and_tiny_input() {
        let grid = vec![0.0, 1.0, 2.0];
        let values = Matrix::from_rows(&[&[9.0], &[4.0], &[5.0]]);
        let sparse = FunctionalSample::new(values, vec![false, true, true], Some(0)).unwrap();
        let ds = Dataset::new(grid, vec![sparse.clone(), sparse], 1, 1).unwrap();
        assert!(fpca_fit(&ds, 1).is_err());
        let one = random_dataset(1, 5, 1);
        assert!(fpca_fit(&one, 1).is_err());
    }
}
