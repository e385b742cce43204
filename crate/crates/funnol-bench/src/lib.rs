//! Shared setup for the criterion benchmarks.

use funnol_core::model::ActivationSet;
use funnol_core::simulate::two_class_curves;
use funnol_core::{CellKind, Dataset, Dims, FunctionalSample, FunnolParams};

pub fn bench_dataset(n: usize, j: usize, channels: usize) -> Dataset {
    two_class_curves(n, j, channels, 0.2, 1234).expect("valid bench dataset")
}

pub fn bench_params(kind: CellKind, channels: usize, latent: usize) -> FunnolParams {
    let dims = Dims {
        channels,
        latent,
        classes: 2,
    };
    FunnolParams::init(kind, dims, ActivationSet::default(), 99)
}

pub fn first_sample(ds: &Dataset) -> &FunctionalSample {
    &ds.samples[0]
}
