//! Evaluation protocols and derived metrics: class-incremental accuracy
//! (argmax over every output unit), task-incremental accuracy (argmax
//! masked to each task's own classes), the per-stage accuracy matrix,
//! forgetting, and the zero-shot / joint-training reference baselines.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, MlpSpec, ParamVector};
use crate::optim::{sgd_step, SgdConfig};
use crate::rngstream;
use crate::scalar::{from_count, Scalar};
use crate::stream::TaskStream;

/// Which evaluation convention a number was produced under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalProtocol {
    ClassIl,
    TaskIl,
}

/// Which of a task's three data splits to evaluate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

fn split_of<F: Scalar>(task: &crate::stream::Task<F>, split: SplitKind) -> &Dataset<F> {
    match split {
        SplitKind::Train => &task.train,
        SplitKind::Val => &task.val,
        SplitKind::Test => &task.test,
    }
}

// Correct and total prediction counts on one dataset. With a mask the
// argmax runs over the masked class indices only; ties always resolve to
// the lowest class index because only strictly greater logits replace the
// running best.
fn correct_count<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    ds: &Dataset<F>,
    mask: Option<&[usize]>,
) -> Result<(usize, usize)> {
    let batch = ds.full_batch()?;
    let logits = nn::forward(spec, params, batch.inputs())?;
    let full_head: Vec<usize>;
    let considered: &[usize] = match mask {
        Some(m) => m,
        None => {
            full_head = (0..spec.output_dim()).collect();
            &full_head
        }
    };
    let mut correct = 0usize;
    for (row, &label) in batch.labels().iter().enumerate() {
        let mut best = considered[0];
        let mut best_logit = logits[(row, best)];
        for &k in &considered[1..] {
            let v = logits[(row, k)];
            if v > best_logit {
                best_logit = v;
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok((correct, ds.len()))
}

// 100 * correct / total, multiplied before dividing so balanced unions
// whose true accuracy is an integer come out exact.
fn percent<F: Scalar>(correct: usize, total: usize) -> F {
    from_count::<F>(100 * correct) / from_count::<F>(total)
}

/// Accuracy over the pooled `split` examples of tasks 0..=upto_task with
/// the argmax ranging over the full output head (no task identity).
pub fn eval_class_il_on<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    stream: &TaskStream<F>,
    upto_task: usize,
    split: SplitKind,
) -> Result<F> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for t in 0..=upto_task {
        let (c, n) = correct_count(spec, params, split_of(stream.task(t)?, split), None)?;
        correct += c;
        total += n;
    }
    Ok(percent(correct, total))
}

/// Accuracy with each example's argmax masked to its own task's class
/// set, macro-averaged over tasks 0..=upto_task with equal task weight.
pub fn eval_task_il_on<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    stream: &TaskStream<F>,
    upto_task: usize,
    split: SplitKind,
) -> Result<F> {
    let mut acc = F::zero();
    for t in 0..=upto_task {
        let task = stream.task(t)?;
        let (c, n) = correct_count(spec, params, split_of(task, split), Some(&task.class_set))?;
        acc += percent::<F>(c, n);
    }
    Ok(acc / from_count::<F>(upto_task + 1))
}

/// Class-incremental accuracy on the test splits of tasks 0..=upto_task.
pub fn eval_class_il<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    stream: &TaskStream<F>,
    upto_task: usize,
) -> Result<F> {
    eval_class_il_on(spec, params, stream, upto_task, SplitKind::Test)
}

/// Task-incremental accuracy on the test splits of tasks 0..=upto_task.
pub fn eval_task_il<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    stream: &TaskStream<F>,
    upto_task: usize,
) -> Result<F> {
    eval_task_il_on(spec, params, stream, upto_task, SplitKind::Test)
}

/// Accuracy on a single task's split: full-head argmax for the
/// class-incremental protocol, argmax masked to the task's own classes
/// for the task-incremental protocol.
pub fn task_accuracy<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    stream: &TaskStream<F>,
    task: usize,
    protocol: EvalProtocol,
    split: SplitKind,
) -> Result<F> {
    let task = stream.task(task)?;
    let mask: Option<&[usize]> = match protocol {
        EvalProtocol::ClassIl => None,
        EvalProtocol::TaskIl => Some(&task.class_set),
    };
    let (c, n) = correct_count(spec, params, split_of(task, split), mask)?;
    Ok(percent(c, n))
}

/// Lower-triangular grid of accuracies: row t holds the accuracy on each
/// task j <= t evaluated after training task t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix<F> {
    rows: Vec<Vec<F>>,
}

impl<F: Scalar> AccuracyMatrix<F> {
    /// Assemble the matrix from per-stage evaluation rows; row t must hold
    /// exactly t + 1 entries, all inside [0, 100].
    pub fn from_rows(rows: Vec<Vec<F>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::config("accuracy matrix needs at least one row"));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::config(format!(
                    "incomplete accuracy matrix: row {t} has {} entries, expected {}",
                    row.len(),
                    t + 1
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= F::zero() && v <= from_count::<F>(100)) {
                    return Err(Error::config(format!(
                        "accuracy ({t}, {j}) = {v} outside [0, 100]"
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn n_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<F>] {
        &self.rows
    }

    /// Accuracy on task j after training task t.
    pub fn get(&self, t: usize, j: usize) -> Option<F> {
        self.rows.get(t).and_then(|r| r.get(j)).copied()
    }

    /// Mean over tasks j < T-1 of (peak accuracy on j) minus (final
    /// accuracy on j); zero for a single-task stream.
    pub fn forgetting(&self) -> F {
        let t_final = self.rows.len() - 1;
        if t_final == 0 {
            return F::zero();
        }
        let final_row = &self.rows[t_final];
        let mut total = F::zero();
        for j in 0..t_final {
            let peak = self.rows[j..]
                .iter()
                .map(|row| row[j])
                .fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
            total += peak - final_row[j];
        }
        total / from_count::<F>(t_final)
    }
}

/// Class-incremental accuracy of the pretrained weights on the whole
/// stream before any continual training: the lower reference bound.
pub fn zero_shot_eval<F: Scalar>(
    spec: &MlpSpec,
    theta_pre: &ParamVector<F>,
    stream: &TaskStream<F>,
) -> Result<F> {
    eval_class_il(spec, theta_pre, stream, stream.n_tasks() - 1)
}

/// Fine-tune the pretrained weights on the shuffled union of every task's
/// training split (the IID counterpart of the continual stream) and return
/// the trained weights.
pub fn joint_train<F: Scalar>(
    spec: &MlpSpec,
    theta_pre: &ParamVector<F>,
    stream: &TaskStream<F>,
    epochs: usize,
    lr: F,
    batch_size: usize,
    seed: u64,
) -> Result<ParamVector<F>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut union: Vec<(Vec<F>, usize)> = Vec::new();
    for task in stream.tasks() {
        union.extend(task.train.examples().iter().cloned());
    }
    let union =
        Dataset::with_partial_coverage(union, stream.n_classes(), stream.input_dim())?;

    let sgd = SgdConfig::new(lr)?;
    let mut params = theta_pre.clone();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..union.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = rngstream::derive(seed, rngstream::JOINT_BASE + epoch as u64);
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch_size) {
            let batch = union.batch(chunk)?;
            let (loss, grad) = nn::backward(spec, &params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!(
                    "joint training loss diverged at epoch {epoch}"
                )));
            }
            params = sgd_step(&params, &grad, &sgd)?;
        }
    }
    Ok(params)
}

/// Joint training followed by class-incremental evaluation over the full
/// stream: the upper reference bound.
pub fn joint_train_eval<F: Scalar>(
    spec: &MlpSpec,
    theta_pre: &ParamVector<F>,
    stream: &TaskStream<F>,
    epochs: usize,
    lr: F,
    batch_size: usize,
    seed: u64,
) -> Result<F> {
    let params = joint_train(spec, theta_pre, stream, epochs, lr, batch_size, seed)?;
    eval_class_il(spec, &params, stream, stream.n_tasks() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, SyntheticConfig};
    use crate::nn::Activation;
    use crate::stream::{split_tasks, SplitConfig};
    use proptest::prelude::*;

    fn synth_cfg(n_classes: usize) -> SyntheticConfig {
        SyntheticConfig {
            n_classes,
            input_dim: 4,
            n_per_class: 20,
            n_test_per_class: 10,
            class_sep: 3.0,
            noise: 1.0,
        }
    }

    fn split_cfg(n_tasks: usize, cpt: usize) -> SplitConfig {
        SplitConfig {
            n_tasks,
            classes_per_task: cpt,
            val_fraction: 0.1,
            shuffle_classes: false,
            seed: 11,
        }
    }

    fn synth_stream(n_classes: usize, n_tasks: usize, cpt: usize, seed: u64) -> TaskStream<f64> {
        let (train, test) = data::make_synthetic_split::<f64>(&synth_cfg(n_classes), seed).unwrap();
        split_tasks(&train, &test, &split_cfg(n_tasks, cpt)).unwrap()
    }

    // A stream whose test splits are exactly the given examples, with a
    // placeholder train pool (5 examples per class so the val carve works).
    fn fixture_stream(
        n_classes: usize,
        cpt: usize,
        test_examples: Vec<(Vec<f64>, usize)>,
    ) -> TaskStream<f64> {
        let dim = test_examples[0].0.len();
        let mut train = Vec::new();
        for class in 0..n_classes {
            for i in 0..5 {
                let mut x = vec![0.0; dim];
                x[class % dim] = i as f64;
                train.push((x, class));
            }
        }
        let train = data::Dataset::new(train, n_classes, dim).unwrap();
        let test = data::Dataset::new(test_examples, n_classes, dim).unwrap();
        let cfg = SplitConfig {
            n_tasks: n_classes / cpt,
            classes_per_task: cpt,
            val_fraction: 0.2,
            shuffle_classes: false,
            seed: 1,
        };
        split_tasks(&train, &test, &cfg).unwrap()
    }

    // Identity-map parameters for a single-layer [d, d] net: logits = x.
    fn identity_params(dim: usize) -> ParamVector<f64> {
        let mut v = vec![0.0; dim * dim + dim];
        for i in 0..dim {
            v[i * dim + i] = 1.0;
        }
        ParamVector::new(v)
    }

    #[test]
    fn hand_fixture_scores_two_of_three_and_breaks_ties_low() {
        // Logits equal the inputs. Row 2 is an exact tie, which must
        // resolve to class 0 and count as wrong for label 1.
        let stream = fixture_stream(
            2,
            2,
            vec![
                (vec![1.0, 0.0], 0),
                (vec![0.5, 0.5], 1),
                (vec![0.0, 1.0], 1),
            ],
        );
        let spec = MlpSpec::new(vec![2, 2], Activation::Relu).unwrap();
        let acc = eval_class_il(&spec, &identity_params(2), &stream, 0).unwrap();
        assert!((acc - 200.0 / 3.0).abs() < 1e-12, "accuracy {acc} should be 66.67");
        assert_eq!(format!("{acc:.2}"), "66.67");
    }

    #[test]
    fn saturated_correct_logits_score_one_hundred() {
        // One-hot inputs through huge diagonal weights give the true class
        // a logit far above every other unit.
        let spec = MlpSpec::new(vec![4, 4], Activation::Relu).unwrap();
        let mut v = vec![0.0; 4 * 4 + 4];
        for i in 0..4 {
            v[i * 4 + i] = 1e6;
        }
        let fixture = fixture_stream(
            4,
            2,
            (0..4)
                .map(|k| {
                    let mut x = vec![0.0; 4];
                    x[k] = 1.0;
                    (x, k)
                })
                .collect(),
        );
        let acc = eval_class_il(&spec, &ParamVector::new(v), &fixture, 1).unwrap();
        assert_eq!(acc, 100.0);
    }

    #[test]
    fn zero_params_on_a_balanced_union_hit_the_tie_break_exactly() {
        // All-zero logits predict class 0 everywhere; a balanced 10-class
        // union then scores exactly 10 percent.
        let stream = synth_stream(10, 5, 2, 7);
        let spec = MlpSpec::new(vec![4, 10], Activation::Relu).unwrap();
        let zero = ParamVector::new(vec![0.0; spec.param_count()]);
        let acc = eval_class_il(&spec, &zero, &stream, 4).unwrap();
        assert_eq!(acc, 10.0, "balanced tie-break accuracy must be exact");
    }

    #[test]
    fn masking_rescues_a_model_dominated_by_another_tasks_logit() {
        // Class 2's logit dominates both task-0 examples, but within each
        // task's own pair the correct class still ranks first.
        let fixture = fixture_stream(
            4,
            2,
            vec![
                (vec![1.0, 0.0, 2.0, 0.0], 0),
                (vec![0.0, 1.0, 2.0, 0.0], 1),
                (vec![0.0, 0.0, 2.0, 0.0], 2),
                (vec![0.0, 0.0, 1.0, 3.0], 3),
            ],
        );
        let spec = MlpSpec::new(vec![4, 4], Activation::Relu).unwrap();
        let p = identity_params(4);
        let task_il = eval_task_il(&spec, &p, &fixture, 1).unwrap();
        let class_il = eval_class_il(&spec, &p, &fixture, 1).unwrap();
        assert_eq!(task_il, 100.0, "masked argmax ranks the sibling correctly");
        assert_eq!(class_il, 50.0, "unmasked argmax loses tasks 0 and 1 to class 2");
    }

    #[test]
    fn single_task_full_head_stream_makes_the_protocols_agree() {
        let stream = synth_stream(4, 1, 4, 5);
        let spec = MlpSpec::new(vec![4, 6, 4], Activation::Tanh).unwrap();
        let p = nn::init_params::<f64>(&spec, 2);
        let a = eval_class_il(&spec, &p, &stream, 0).unwrap();
        let b = eval_task_il(&spec, &p, &stream, 0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "identity mask means identical numbers");
    }

    #[test]
    fn evaluation_is_bitwise_reproducible() {
        let stream = synth_stream(6, 3, 2, 9);
        let spec = MlpSpec::new(vec![4, 5, 6], Activation::Relu).unwrap();
        let p = nn::init_params::<f64>(&spec, 3);
        let a = eval_class_il(&spec, &p, &stream, 2).unwrap();
        let b = eval_class_il(&spec, &p, &stream, 2).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn per_task_accuracies_reassemble_both_pooled_protocols() {
        // The pooled class-il number is the example-weighted mean of the
        // per-task entries, and the pooled task-il their plain mean.
        let stream = synth_stream(6, 3, 2, 31);
        let spec = MlpSpec::new(vec![4, 6], Activation::Relu).unwrap();
        let params = nn::init_params::<f64>(&spec, 5);
        let mut weighted = 0.0;
        let mut total = 0usize;
        let mut macro_sum = 0.0;
        for j in 0..3 {
            let n = stream.task(j).unwrap().test.len();
            let c = task_accuracy(&spec, &params, &stream, j, EvalProtocol::ClassIl, SplitKind::Test)
                .unwrap();
            let t = task_accuracy(&spec, &params, &stream, j, EvalProtocol::TaskIl, SplitKind::Test)
                .unwrap();
            weighted += c * n as f64;
            total += n;
            macro_sum += t;
        }
        let class_il = eval_class_il(&spec, &params, &stream, 2).unwrap();
        let task_il = eval_task_il(&spec, &params, &stream, 2).unwrap();
        assert!(
            (weighted / total as f64 - class_il).abs() < 1e-9,
            "weighted per-task mean {} should equal pooled class-il {class_il}",
            weighted / total as f64
        );
        assert!(
            (macro_sum / 3.0 - task_il).abs() < 1e-9,
            "plain per-task mean {} should equal pooled task-il {task_il}",
            macro_sum / 3.0
        );
    }

    #[test]
    fn accuracy_matrix_validates_shape_and_range() {
        assert!(AccuracyMatrix::from_rows(vec![vec![50.0], vec![40.0, 60.0]]).is_ok());
        assert!(
            AccuracyMatrix::from_rows(vec![vec![50.0], vec![40.0]]).is_err(),
            "row 1 must have 2 entries"
        );
        assert!(AccuracyMatrix::<f64>::from_rows(vec![]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![101.0]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![-0.5]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn forgetting_matches_the_two_task_hand_fixture() {
        let m = AccuracyMatrix::from_rows(vec![vec![80.0], vec![60.0, 90.0]]).unwrap();
        assert_eq!(m.forgetting(), 20.0, "peak 80 minus final 60");
    }

    #[test]
    fn forgetting_is_zero_for_monotone_columns_and_single_tasks() {
        let m = AccuracyMatrix::from_rows(vec![
            vec![50.0],
            vec![55.0, 70.0],
            vec![60.0, 75.0, 90.0],
        ])
        .unwrap();
        assert_eq!(m.forgetting(), 0.0, "columns never decay below their peak");
        let single = AccuracyMatrix::from_rows(vec![vec![75.0]]).unwrap();
        assert_eq!(single.forgetting(), 0.0, "single task forgets nothing by convention");
    }

    #[test]
    fn forgetting_uses_the_column_peak_not_the_diagonal() {
        // Task 0 peaks one stage after it was trained (backward transfer),
        // so forgetting must measure from that later peak.
        let m = AccuracyMatrix::from_rows(vec![
            vec![70.0],
            vec![85.0, 60.0],
            vec![65.0, 50.0, 90.0],
        ])
        .unwrap();
        // Column 0 peak 85, final 65 -> 20. Column 1 peak 60, final 50 -> 10.
        assert_eq!(m.forgetting(), 15.0);
    }

    #[test]
    fn matrix_accessors_expose_the_lower_triangle() {
        let m = AccuracyMatrix::from_rows(vec![vec![10.0], vec![20.0, 30.0]]).unwrap();
        assert_eq!(m.n_tasks(), 2);
        assert_eq!(m.get(1, 0), Some(20.0));
        assert_eq!(m.get(0, 1), None, "upper triangle entries are absent");
    }

    #[test]
    fn zero_shot_equals_class_il_of_the_pretrained_weights() {
        let stream = synth_stream(6, 3, 2, 4);
        let spec = MlpSpec::new(vec![4, 8, 6], Activation::Relu).unwrap();
        let p = nn::init_params::<f64>(&spec, 9);
        let a = zero_shot_eval(&spec, &p, &stream).unwrap();
        let b = eval_class_il(&spec, &p, &stream, 2).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn joint_training_with_zero_epochs_reduces_to_zero_shot() {
        let stream = synth_stream(6, 3, 2, 4);
        let spec = MlpSpec::new(vec![4, 8, 6], Activation::Relu).unwrap();
        let p = nn::init_params::<f64>(&spec, 9);
        let joint = joint_train_eval(&spec, &p, &stream, 0, 0.05, 16, 1).unwrap();
        let zero = zero_shot_eval(&spec, &p, &stream).unwrap();
        assert_eq!(joint.to_bits(), zero.to_bits());
    }

    #[test]
    fn joint_training_beats_zero_shot_from_a_random_init() {
        let stream = synth_stream(6, 3, 2, 4);
        let spec = MlpSpec::new(vec![4, 16, 6], Activation::Relu).unwrap();
        let p = nn::init_params::<f64>(&spec, 9);
        let zero = zero_shot_eval(&spec, &p, &stream).unwrap();
        let joint = joint_train_eval(&spec, &p, &stream, 20, 0.05, 16, 1).unwrap();
        assert!(
            joint > zero,
            "joint training ({joint}) should beat the untrained bound ({zero})"
        );
        // Six noisy clusters in four dimensions overlap a little, so the
        // ceiling sits below 100; anything far above the 16.7 chance rate
        // shows the optimizer works.
        assert!(joint > 70.0, "separable clusters should be learnable, got {joint}");
    }

    #[test]
    fn joint_training_is_deterministic_per_seed() {
        let stream = synth_stream(4, 2, 2, 8);
        let spec = MlpSpec::new(vec![4, 8, 4], Activation::Relu).unwrap();
        let p = nn::init_params::<f64>(&spec, 1);
        let a = joint_train_eval(&spec, &p, &stream, 5, 0.05, 8, 3).unwrap();
        let b = joint_train_eval(&spec, &p, &stream, 5, 0.05, 8, 3).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        // Masking can only help: a correct unmasked argmax stays correct
        // once masked to a set containing the true class. Streams here are
        // class-balanced, so macro and micro aggregation agree and the
        // dominance holds without slack beyond float rounding.
        #[test]
        fn task_il_dominates_class_il(seed in 0u64..200, init in 0u64..50) {
            let stream = synth_stream(6, 3, 2, seed);
            let spec = MlpSpec::new(vec![4, 5, 6], Activation::Tanh).unwrap();
            let p = nn::init_params::<f64>(&spec, init);
            for upto in 0..3 {
                let t = eval_task_il(&spec, &p, &stream, upto).unwrap();
                let c = eval_class_il(&spec, &p, &stream, upto).unwrap();
                prop_assert!(t >= c - 1e-9, "task-il {t} below class-il {c} at stage {upto}");
            }
        }

        // Every reported accuracy lies inside [0, 100].
        #[test]
        fn accuracies_stay_inside_bounds(seed in 0u64..200) {
            let stream = synth_stream(4, 2, 2, seed);
            let spec = MlpSpec::new(vec![4, 4], Activation::Relu).unwrap();
            let p = nn::init_params::<f64>(&spec, seed);
            let c = eval_class_il(&spec, &p, &stream, 1).unwrap();
            let t = eval_task_il(&spec, &p, &stream, 1).unwrap();
            prop_assert!((0.0..=100.0).contains(&c));
            prop_assert!((0.0..=100.0).contains(&t));
        }
    }
}
