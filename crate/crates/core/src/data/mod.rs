//! Datasets: in-memory labelled example collections, synthetic Gaussian
//! class clusters for desk-scale runs, and file ingestion for MNIST-style
//! IDX pairs and numeric CSV tables.

mod csvload;
mod idx;

pub use csvload::load_csv;
pub use idx::load_idx;

use ndarray::Array2;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rngstream;
use crate::scalar::{from_f64, Scalar};

/// A labelled example collection with a fixed feature width and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<F> {
    examples: Vec<(Vec<F>, usize)>,
    n_classes: usize,
    input_dim: usize,
}

impl<F: Scalar> Dataset<F> {
    /// Build a dataset and check every invariant: consistent feature width,
    /// labels inside [0, n_classes), and at least one example per class.
    pub fn new(examples: Vec<(Vec<F>, usize)>, n_classes: usize, input_dim: usize) -> Result<Self> {
        let ds = Self::with_partial_coverage(examples, n_classes, input_dim)?;
        let counts = ds.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::config(format!("class {missing} has no examples")));
        }
        Ok(ds)
    }

    /// Build a dataset that may cover only a subset of the label range.
    /// Used for class-filtered views where the model keeps its full head
    /// but the data holds only some classes.
    pub fn with_partial_coverage(
        examples: Vec<(Vec<F>, usize)>,
        n_classes: usize,
        input_dim: usize,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::config("dataset must contain at least one example"));
        }
        if n_classes == 0 || input_dim == 0 {
            return Err(Error::config("dataset must have positive n_classes and input_dim"));
        }
        for (i, (x, y)) in examples.iter().enumerate() {
            if x.len() != input_dim {
                return Err(Error::config(format!(
                    "example {i} has {} features, expected {input_dim}",
                    x.len()
                )));
            }
            if *y >= n_classes {
                return Err(Error::config(format!(
                    "example {i} has label {y}, expected a class below {n_classes}"
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("example {i} has a non-finite feature")));
            }
        }
        Ok(Self { examples, n_classes, input_dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn examples(&self) -> &[(Vec<F>, usize)] {
        &self.examples
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for (_, y) in &self.examples {
            counts[*y] += 1;
        }
        counts
    }

    /// Keep only the examples whose label is in `keep`, preserving order
    /// and the full label range of the parent dataset.
    pub fn filter_classes(&self, keep: &[usize]) -> Result<Self> {
        let filtered: Vec<(Vec<F>, usize)> =
            self.examples.iter().filter(|(_, y)| keep.contains(y)).cloned().collect();
        if filtered.is_empty() {
            return Err(Error::config(format!("no examples carry a label from {keep:?}")));
        }
        Self::with_partial_coverage(filtered, self.n_classes, self.input_dim)
    }

    /// Gather the given example indices into a training batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<F>> {
        if indices.is_empty() {
            return Err(Error::config("cannot build a batch from zero indices"));
        }
        let mut inputs = Array2::zeros((indices.len(), self.input_dim));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            let (x, y) = self.examples.get(idx).ok_or_else(|| {
                Error::config(format!("example index {idx} out of range for {}", self.len()))
            })?;
            for (c, &v) in x.iter().enumerate() {
                inputs[(row, c)] = v;
            }
            labels.push(*y);
        }
        Batch::new(inputs, labels)
    }

    /// The whole dataset as one batch, in storage order.
    pub fn full_batch(&self) -> Result<Batch<F>> {
        let indices: Vec<usize> = (0..self.len()).collect();
        self.batch(&indices)
    }

    /// Take the examples at `indices` (in the given order) as a new dataset
    /// that keeps the parent's label range.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut examples = Vec::with_capacity(indices.len());
        for &idx in indices {
            let ex = self.examples.get(idx).ok_or_else(|| {
                Error::config(format!("example index {idx} out of range for {}", self.len()))
            })?;
            examples.push(ex.clone());
        }
        Self::with_partial_coverage(examples, self.n_classes, self.input_dim)
    }
}

/// Shape of a synthetic Gaussian-cluster dataset: class means sit uniformly
/// on a sphere of radius `class_sep` and examples scatter around them with
/// isotropic standard deviation `noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub input_dim: usize,
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    pub class_sep: f64,
    pub noise: f64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.input_dim == 0 {
            return Err(Error::config("synthetic n_classes and input_dim must be at least 1"));
        }
        if self.n_per_class == 0 || self.n_test_per_class == 0 {
            return Err(Error::config("synthetic per-class example counts must be at least 1"));
        }
        if !(self.class_sep > 0.0) || !self.class_sep.is_finite() {
            return Err(Error::config(format!(
                "class_sep must be positive and finite, got {}",
                self.class_sep
            )));
        }
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return Err(Error::config(format!(
                "noise must be positive and finite, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

// Class means drawn uniformly on the sphere of radius class_sep, one rng
// stream for the whole mean set so every draw with the same seed shares
// them.
fn class_means(cfg: &SyntheticConfig, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rngstream::derive(seed, rngstream::SYNTH_MEANS);
    (0..cfg.n_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..cfg.input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                return v.iter().map(|x| x / norm * cfg.class_sep).collect();
            }
        })
        .collect()
}

fn draw_class_examples<F: Scalar>(
    cfg: &SyntheticConfig,
    means: &[Vec<f64>],
    class: usize,
    count: usize,
    seed: u64,
    purpose_base: u64,
) -> Vec<(Vec<F>, usize)> {
    let mut rng = rngstream::derive(seed, purpose_base + class as u64);
    (0..count)
        .map(|_| {
            let x: Vec<F> = means[class]
                .iter()
                .map(|&m| {
                    let n: f64 = rng.sample(StandardNormal);
                    from_f64::<F>(m + cfg.noise * n)
                })
                .collect();
            (x, class)
        })
        .collect()
}

/// One training draw of the synthetic Gaussian clusters. Examples are laid
/// out class by class; the same seed always reproduces the same dataset,
/// and the class means are shared with [`make_synthetic_split`].
pub fn make_synthetic_gaussians<F: Scalar>(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset<F>> {
    cfg.validate()?;
    let means = class_means(cfg, seed);
    let mut examples = Vec::with_capacity(cfg.n_classes * cfg.n_per_class);
    for class in 0..cfg.n_classes {
        examples.extend(draw_class_examples(
            cfg,
            &means,
            class,
            cfg.n_per_class,
            seed,
            rngstream::SYNTH_TRAIN_BASE,
        ));
    }
    Dataset::new(examples, cfg.n_classes, cfg.input_dim)
}

/// Train and test draws around the same class means: the train half equals
/// [`make_synthetic_gaussians`] bitwise, the test half is an independent
/// draw of `n_test_per_class` examples per class.
pub fn make_synthetic_split<F: Scalar>(
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    cfg.validate()?;
    let train = make_synthetic_gaussians(cfg, seed)?;
    let means = class_means(cfg, seed);
    let mut examples = Vec::with_capacity(cfg.n_classes * cfg.n_test_per_class);
    for class in 0..cfg.n_classes {
        examples.extend(draw_class_examples(
            cfg,
            &means,
            class,
            cfg.n_test_per_class,
            seed,
            rngstream::SYNTH_TEST_BASE,
        ));
    }
    Ok((train, Dataset::new(examples, cfg.n_classes, cfg.input_dim)?))
}
