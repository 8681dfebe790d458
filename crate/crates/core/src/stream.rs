//! Partition of a dataset into an ordered stream of class-disjoint tasks,
//! each carrying train/validation/test splits, plus a manifest format that
//! records enough to rebuild a stream bit-exactly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::persist;
use crate::rngstream;
use crate::scalar::Scalar;

/// How a dataset is cut into sequential tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    /// Fraction of each task's training examples moved to its validation
    /// split, strictly between 0 and 1.
    pub val_fraction: f64,
    /// Shuffle the class order before grouping classes into tasks.
    pub shuffle_classes: bool,
    /// Seed for the class order and the validation carving.
    pub seed: u64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.classes_per_task == 0 {
            return Err(Error::config("n_tasks and classes_per_task must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!(
                "val_fraction must lie strictly inside (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// One task of the stream: its class set and the three data splits, with
/// the source indices kept for auditability.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<F> {
    pub class_set: Vec<usize>,
    pub train: Dataset<F>,
    pub val: Dataset<F>,
    pub test: Dataset<F>,
    /// Indices into the source training dataset backing `train` and `val`.
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Indices into the source test dataset backing `test`.
    pub test_indices: Vec<usize>,
}

/// An ordered sequence of class-disjoint tasks over a fixed model head.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream<F> {
    tasks: Vec<Task<F>>,
    n_classes: usize,
    input_dim: usize,
}

impl<F: Scalar> TaskStream<F> {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[Task<F>] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> Result<&Task<F>> {
        self.tasks
            .get(t)
            .ok_or_else(|| Error::config(format!("task index {t} out of range for {}", self.tasks.len())))
    }

    /// Total label range of the model head (not just the streamed classes).
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Sorted union of every task's class set.
    pub fn covered_classes(&self) -> Vec<usize> {
        let mut all: Vec<usize> =
            self.tasks.iter().flat_map(|t| t.class_set.iter().copied()).collect();
        all.sort_unstable();
        all
    }
}

// Classes present in the dataset, sorted ascending.
fn present_classes<F: Scalar>(ds: &Dataset<F>) -> Vec<usize> {
    ds.class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, _)| k)
        .collect()
}

/// Split a train/test dataset pair into a task stream: classes (optionally
/// seed-shuffled) are grouped into consecutive sets of `classes_per_task`,
/// each task's validation split is carved per class from its training
/// examples at `val_fraction`, and test examples come from the separate
/// test dataset. Deterministic given the config seed.
pub fn split_tasks<F: Scalar>(
    train_ds: &Dataset<F>,
    test_ds: &Dataset<F>,
    cfg: &SplitConfig,
) -> Result<TaskStream<F>> {
    cfg.validate()?;
    if train_ds.n_classes() != test_ds.n_classes() || train_ds.input_dim() != test_ds.input_dim() {
        return Err(Error::config(format!(
            "train ({} classes, dim {}) and test ({} classes, dim {}) datasets disagree",
            train_ds.n_classes(),
            train_ds.input_dim(),
            test_ds.n_classes(),
            test_ds.input_dim()
        )));
    }

    let mut classes = present_classes(train_ds);
    let needed = cfg.n_tasks * cfg.classes_per_task;
    if needed > classes.len() {
        return Err(Error::config(format!(
            "{} tasks of {} classes need {needed} classes but the dataset provides {}",
            cfg.n_tasks,
            cfg.classes_per_task,
            classes.len()
        )));
    }
    if cfg.shuffle_classes {
        let mut rng = rngstream::derive(cfg.seed, rngstream::SPLIT_CLASS_ORDER);
        classes.shuffle(&mut rng);
    }

    let test_counts = test_ds.class_counts();
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    for t in 0..cfg.n_tasks {
        let mut class_set: Vec<usize> =
            classes[t * cfg.classes_per_task..(t + 1) * cfg.classes_per_task].to_vec();
        class_set.sort_unstable();

        for &k in &class_set {
            if test_counts[k] == 0 {
                return Err(Error::config(format!(
                    "class {k} of task {t} has no test examples"
                )));
            }
        }

        // Carve validation indices per class so balanced classes stay
        // balanced across train and val.
        let mut rng = rngstream::derive(cfg.seed, rngstream::SPLIT_VAL_BASE + t as u64);
        let mut train_indices = Vec::new();
        let mut val_indices = Vec::new();
        for &k in &class_set {
            let mut idx: Vec<usize> = train_ds
                .examples()
                .iter()
                .enumerate()
                .filter(|(_, (_, y))| *y == k)
                .map(|(i, _)| i)
                .collect();
            idx.shuffle(&mut rng);
            let n_val = ((cfg.val_fraction * idx.len() as f64).round() as usize).min(idx.len() - 1);
            val_indices.extend_from_slice(&idx[..n_val]);
            train_indices.extend_from_slice(&idx[n_val..]);
        }
        if val_indices.is_empty() {
            return Err(Error::config(format!(
                "val_fraction {} leaves task {t} with an empty validation split",
                cfg.val_fraction
            )));
        }
        train_indices.sort_unstable();
        val_indices.sort_unstable();

        let test_indices: Vec<usize> = test_ds
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, (_, y))| class_set.contains(y))
            .map(|(i, _)| i)
            .collect();

        tasks.push(Task {
            class_set,
            train: train_ds.subset(&train_indices)?,
            val: train_ds.subset(&val_indices)?,
            test: test_ds.subset(&test_indices)?,
            train_indices,
            val_indices,
            test_indices,
        });
    }

    Ok(TaskStream { tasks, n_classes: train_ds.n_classes(), input_dim: train_ds.input_dim() })
}

/// Where a stream's data came from, with everything needed to regenerate
/// or reload it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSpec {
    Synthetic { cfg: SyntheticConfig, seed: u64 },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv { train_path: PathBuf, test_path: PathBuf, label_column: usize },
}

impl SourceSpec {
    /// Materialize the train/test dataset pair this source describes.
    pub fn load<F: Scalar>(&self) -> Result<(Dataset<F>, Dataset<F>)> {
        match self {
            SourceSpec::Synthetic { cfg, seed } => data::make_synthetic_split(cfg, *seed),
            SourceSpec::Idx { train_images, train_labels, test_images, test_labels } => Ok((
                data::load_idx(train_images, train_labels)?,
                data::load_idx(test_images, test_labels)?,
            )),
            SourceSpec::Csv { train_path, test_path, label_column } => Ok((
                data::load_csv(train_path, *label_column)?,
                data::load_csv(test_path, *label_column)?,
            )),
        }
    }
}

/// Everything needed to build a stream from scratch: the data source, an
/// optional class filter (for keeping some classes aside as pretext data),
/// and the split settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub source: SourceSpec,
    /// When present, only these classes enter the stream; the model head
    /// still spans the source's full label range.
    pub stream_classes: Option<Vec<usize>>,
    pub split: SplitConfig,
}

/// On-disk record of a built stream: the recipe plus the realized shape,
/// so a rebuild can be verified against what was recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub spec: StreamSpec,
    pub n_classes: usize,
    pub input_dim: usize,
    pub task_classes: Vec<Vec<usize>>,
    pub train_counts: Vec<usize>,
    pub val_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

/// Build a stream from its recipe and record the manifest.
pub fn build_stream<F: Scalar>(spec: &StreamSpec) -> Result<(TaskStream<F>, StreamManifest)> {
    let (mut train, mut test) = spec.source.load::<F>()?;
    if let Some(keep) = &spec.stream_classes {
        train = train.filter_classes(keep)?;
        test = test.filter_classes(keep)?;
    }
    let stream = split_tasks(&train, &test, &spec.split)?;
    let manifest = StreamManifest {
        spec: spec.clone(),
        n_classes: stream.n_classes(),
        input_dim: stream.input_dim(),
        task_classes: stream.tasks().iter().map(|t| t.class_set.clone()).collect(),
        train_counts: stream.tasks().iter().map(|t| t.train.len()).collect(),
        val_counts: stream.tasks().iter().map(|t| t.val.len()).collect(),
        test_counts: stream.tasks().iter().map(|t| t.test.len()).collect(),
    };
    Ok((stream, manifest))
}

/// Rebuild a stream from its manifest and verify the result matches what
/// the manifest recorded.
pub fn rebuild_stream<F: Scalar>(manifest: &StreamManifest) -> Result<TaskStream<F>> {
    let (stream, fresh) = build_stream::<F>(&manifest.spec)?;
    if fresh != *manifest {
        return Err(Error::config(
            "rebuilt stream does not match the manifest record; \
             the underlying data has changed",
        ));
    }
    Ok(stream)
}

pub fn save_manifest(path: &Path, manifest: &StreamManifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::config(format!("cannot serialize manifest: {e}")))?;
    persist::atomic_write(path, text.as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<StreamManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ingest(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::ingest(format!("{}: {e}", path.display())))
}
