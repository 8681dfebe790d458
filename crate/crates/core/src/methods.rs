//! The three continual-learning method families a run can train with:
//! plain SGD fine-tuning, online EWC regularization, and DER++ rehearsal
//! with a fixed-capacity reservoir buffer. Each exposes a per-batch
//! loss/gradient contribution plus an end-of-task hook, so the momentum
//! wrapper in `optim` can sit on top of any of them unchanged.

use ndarray::Array2;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Batch, Gradient, MlpSpec, ParamVector};
use crate::optim::{sgd_step, SgdConfig};
use crate::scalar::{from_count, Scalar};

/// Which method family a run trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Sgd,
    Oewc,
    Derpp,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Sgd => "sgd",
            MethodKind::Oewc => "oewc",
            MethodKind::Derpp => "derpp",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(MethodKind::Sgd),
            "oewc" => Ok(MethodKind::Oewc),
            "derpp" => Ok(MethodKind::Derpp),
            other => Err(Error::config(format!(
                "unknown method '{other}' (expected sgd, oewc, or derpp)"
            ))),
        }
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings for the online-EWC regularizer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OewcConfig<F> {
    /// Penalty strength applied to the quadratic anchor term.
    pub lambda: F,
    /// Decay applied to the accumulated Fisher at each consolidation.
    pub gamma: F,
    /// Upper bound on how many training examples each consolidation visits.
    pub n_samples: usize,
    /// Use the observed labels instead of the model's own predictive
    /// distribution when estimating the Fisher diagonal.
    pub empirical: bool,
}

impl<F: Scalar> OewcConfig<F> {
    pub fn new(lambda: F, gamma: F, n_samples: usize, empirical: bool) -> Result<Self> {
        if !(lambda >= F::zero()) || !lambda.is_finite() {
            return Err(Error::config(format!(
                "oewc lambda must be non-negative and finite, got {lambda}"
            )));
        }
        if !(gamma >= F::zero() && gamma <= F::one()) {
            return Err(Error::config(format!("oewc gamma must lie in [0, 1], got {gamma}")));
        }
        if n_samples == 0 {
            return Err(Error::config("oewc n_samples must be at least 1"));
        }
        Ok(Self { lambda, gamma, n_samples, empirical })
    }
}

/// Accumulated regularizer state: the anchor weights from the end of the
/// previous task and a decayed running estimate of the diagonal Fisher.
#[derive(Clone, Debug)]
pub struct OewcState<F> {
    cfg: OewcConfig<F>,
    anchor: ParamVector<F>,
    fisher: Gradient<F>,
    consolidated: bool,
}

impl<F: Scalar> OewcState<F> {
    /// Fresh state with no consolidation yet; the penalty stays zero until
    /// the first task boundary.
    pub fn new(cfg: OewcConfig<F>, param_len: usize) -> Self {
        Self {
            cfg,
            anchor: ParamVector::zeros(param_len),
            fisher: Gradient::zeros(param_len),
            consolidated: false,
        }
    }

    pub fn config(&self) -> &OewcConfig<F> {
        &self.cfg
    }

    pub fn consolidated(&self) -> bool {
        self.consolidated
    }

    pub fn fisher(&self) -> &Gradient<F> {
        &self.fisher
    }

    pub fn anchor(&self) -> &ParamVector<F> {
        &self.anchor
    }
}

/// Quadratic anchor penalty (lambda/2) * sum_i F_i (theta_i - anchor_i)^2
/// and its analytic gradient lambda * F ⊙ (theta - anchor). Both are zero
/// before the first consolidation.
pub fn oewc_penalty<F: Scalar>(
    params: &ParamVector<F>,
    state: &OewcState<F>,
) -> Result<(F, Gradient<F>)> {
    if !state.consolidated {
        return Ok((F::zero(), Gradient::zeros(params.len())));
    }
    if params.len() != state.anchor.len() {
        return Err(Error::config(format!(
            "parameter length {} does not match oewc anchor length {}",
            params.len(),
            state.anchor.len()
        )));
    }
    let half = F::one() / (F::one() + F::one());
    let mut penalty = F::zero();
    let mut grad = vec![F::zero(); params.len()];
    for (i, ((&p, &a), &f)) in params
        .as_slice()
        .iter()
        .zip(state.anchor.as_slice())
        .zip(state.fisher.as_slice())
        .enumerate()
    {
        let d = p - a;
        penalty += state.cfg.lambda * half * f * d * d;
        grad[i] = state.cfg.lambda * f * d;
    }
    Ok((penalty, Gradient::new(grad)))
}

/// End-of-task consolidation: estimate the diagonal Fisher on the task's
/// training data, fold it into the running estimate with decay gamma, and
/// move the anchor to the current weights.
///
/// The default estimator takes the exact expectation over the model's own
/// predictive distribution (sum over classes of p_y times the squared
/// label-y gradient), averaged over the visited examples. The empirical
/// flag switches to squared gradients at the observed labels.
pub fn oewc_consolidate<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    task_train: &Batch<F>,
    state: &mut OewcState<F>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if params.len() != state.fisher.len() {
        return Err(Error::config(format!(
            "parameter length {} does not match oewc fisher length {}",
            params.len(),
            state.fisher.len()
        )));
    }
    let n = task_train.len();
    let visit: Vec<usize> = if state.cfg.n_samples < n {
        rand::seq::index::sample(rng, n, state.cfg.n_samples).into_vec()
    } else {
        (0..n).collect()
    };

    let mut fisher_t = vec![F::zero(); params.len()];
    for &row in &visit {
        let input = task_train.inputs().row(row).insert_axis(ndarray::Axis(0)).to_owned();
        if state.cfg.empirical {
            let single = Batch::new(input, vec![task_train.labels()[row]])?;
            let (_, g) = nn::backward(spec, params, &single)?;
            for (acc, &gi) in fisher_t.iter_mut().zip(g.as_slice()) {
                *acc += gi * gi;
            }
        } else {
            let logits = nn::forward(spec, params, &input)?;
            let probs = nn::softmax_rows(&logits);
            for y in 0..spec.output_dim() {
                let p_y = probs[(0, y)];
                let single = Batch::new(input.clone(), vec![y])?;
                let (_, g) = nn::backward(spec, params, &single)?;
                for (acc, &gi) in fisher_t.iter_mut().zip(g.as_slice()) {
                    *acc += p_y * gi * gi;
                }
            }
        }
    }
    let inv = F::one() / from_count::<F>(visit.len());
    for (run, ft) in state.fisher.as_mut_slice().iter_mut().zip(&fisher_t) {
        *run = state.cfg.gamma * *run + *ft * inv;
    }
    if !state.fisher.all_finite() {
        return Err(Error::non_finite("fisher estimate produced a non-finite entry"));
    }
    state.anchor = params.clone();
    state.consolidated = true;
    Ok(())
}

/// Settings for the DER++ rehearsal loss.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DerppConfig<F> {
    /// Weight on the logit-matching (distillation) replay term.
    pub alpha_distill: F,
    /// Weight on the label cross-entropy replay term.
    pub beta_replay: F,
    /// Minibatch size for each of the two replay draws.
    pub replay_batch: usize,
}

impl<F: Scalar> DerppConfig<F> {
    pub fn new(alpha_distill: F, beta_replay: F, replay_batch: usize) -> Result<Self> {
        if !(alpha_distill >= F::zero()) || !alpha_distill.is_finite() {
            return Err(Error::config(format!(
                "alpha_distill must be non-negative and finite, got {alpha_distill}"
            )));
        }
        if !(beta_replay >= F::zero()) || !beta_replay.is_finite() {
            return Err(Error::config(format!(
                "beta_replay must be non-negative and finite, got {beta_replay}"
            )));
        }
        if replay_batch == 0 {
            return Err(Error::config("replay_batch must be at least 1"));
        }
        Ok(Self { alpha_distill, beta_replay, replay_batch })
    }
}

/// One stored rehearsal example: the raw input, its label, and the model
/// logits captured when it entered the buffer (never refreshed afterwards).
#[derive(Clone, Debug)]
pub struct BufferEntry<F> {
    pub input: Vec<F>,
    pub label: usize,
    pub logits: Vec<F>,
}

/// Fixed-capacity reservoir over the example stream. After n insertions
/// each stream item is retained with probability capacity/n.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<F> {
    capacity: usize,
    entries: Vec<BufferEntry<F>>,
    seen_count: usize,
}

impl<F: Scalar> ReplayBuffer<F> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay buffer capacity must be at least 1"));
        }
        Ok(Self { capacity, entries: Vec::new(), seen_count: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen_count(&self) -> usize {
        self.seen_count
    }

    pub fn entries(&self) -> &[BufferEntry<F>] {
        &self.entries
    }

    /// Offer one example to the reservoir. The buffer fills in stream order
    /// until capacity; afterwards the i-th item replaces a uniformly random
    /// slot with probability capacity/i.
    pub fn reservoir_insert(
        &mut self,
        input: &[F],
        label: usize,
        logits: &[F],
        rng: &mut ChaCha8Rng,
    ) {
        debug_assert!(
            self.entries.first().map_or(true, |e| e.input.len() == input.len()
                && e.logits.len() == logits.len()),
            "buffer entries must share input and logit dimensions"
        );
        self.seen_count += 1;
        let entry =
            BufferEntry { input: input.to_vec(), label, logits: logits.to_vec() };
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            let j = rng.random_range(0..self.seen_count);
            if j < self.capacity {
                self.entries[j] = entry;
            }
        }
    }

    /// Draw k entries uniformly with replacement as a training batch plus
    /// the matching rows of stored logits.
    pub fn buffer_sample(
        &self,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Batch<F>, Array2<F>)> {
        if self.entries.is_empty() {
            return Err(Error::config("cannot sample from an empty replay buffer"));
        }
        if k == 0 {
            return Err(Error::config("replay sample size must be at least 1"));
        }
        let input_dim = self.entries[0].input.len();
        let logit_dim = self.entries[0].logits.len();
        let mut inputs = Array2::zeros((k, input_dim));
        let mut logits = Array2::zeros((k, logit_dim));
        let mut labels = Vec::with_capacity(k);
        for i in 0..k {
            let e = &self.entries[rng.random_range(0..self.entries.len())];
            for (c, &v) in e.input.iter().enumerate() {
                inputs[(i, c)] = v;
            }
            for (c, &v) in e.logits.iter().enumerate() {
                logits[(i, c)] = v;
            }
            labels.push(e.label);
        }
        Ok((Batch::new(inputs, labels)?, logits))
    }
}

/// The two independent replay draws a DER++ step consumes: one batch for
/// the logit-matching term and a second for the label cross-entropy term.
#[derive(Clone, Debug)]
pub struct DerppDraws<F> {
    pub distill_batch: Batch<F>,
    pub stored_logits: Array2<F>,
    pub replay_batch: Batch<F>,
}

/// Sample both replay minibatches for one step, or None while the buffer
/// is still empty.
pub fn derpp_draw<F: Scalar>(
    buf: &ReplayBuffer<F>,
    cfg: &DerppConfig<F>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<DerppDraws<F>>> {
    if buf.is_empty() {
        return Ok(None);
    }
    let (distill_batch, stored_logits) = buf.buffer_sample(cfg.replay_batch, rng)?;
    let (replay_batch, _) = buf.buffer_sample(cfg.replay_batch, rng)?;
    Ok(Some(DerppDraws { distill_batch, stored_logits, replay_batch }))
}

/// Composite rehearsal loss
///   CE(current) + alpha * MSE(f(x'), stored logits) + beta * CE(f(x''), y'')
/// with its analytic gradient. Replay terms vanish when no draws exist or
/// their weight is zero; in those cases the result is exactly the plain
/// cross-entropy backward pass.
pub fn derpp_loss<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    current: &Batch<F>,
    draws: Option<&DerppDraws<F>>,
    cfg: &DerppConfig<F>,
) -> Result<(F, Gradient<F>)> {
    let (mut loss, mut grad) = nn::backward(spec, params, current)?;
    if let Some(d) = draws {
        if cfg.alpha_distill > F::zero() {
            let (l, g) = nn::backward_logit_mse(
                spec,
                params,
                d.distill_batch.inputs(),
                &d.stored_logits,
            )?;
            loss += cfg.alpha_distill * l;
            for (acc, &gi) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += cfg.alpha_distill * gi;
            }
        }
        if cfg.beta_replay > F::zero() {
            let (l, g) = nn::backward(spec, params, &d.replay_batch)?;
            loss += cfg.beta_replay * l;
            for (acc, &gi) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += cfg.beta_replay * gi;
            }
        }
    }
    if !loss.is_finite() || !grad.all_finite() {
        return Err(Error::non_finite("rehearsal loss produced a non-finite value"));
    }
    Ok((loss, grad))
}

/// Per-run method state: the regularizer accumulator for oEWC or the
/// replay buffer for DER++; plain SGD carries nothing.
#[derive(Clone, Debug)]
pub enum MethodState<F> {
    Sgd,
    Oewc(OewcState<F>),
    Derpp { cfg: DerppConfig<F>, buffer: ReplayBuffer<F> },
}

impl<F: Scalar> MethodState<F> {
    pub fn kind(&self) -> MethodKind {
        match self {
            MethodState::Sgd => MethodKind::Sgd,
            MethodState::Oewc(_) => MethodKind::Oewc,
            MethodState::Derpp { .. } => MethodKind::Derpp,
        }
    }
}

/// One gradient step of whichever method the state selects: build the
/// method's total loss and gradient on this batch, then apply a single
/// SGD update. Returns the new fast weights and the total loss.
pub fn method_step<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    batch: &Batch<F>,
    state: &mut MethodState<F>,
    sgd: &SgdConfig<F>,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamVector<F>, F)> {
    match state {
        MethodState::Sgd => {
            let (loss, grad) = nn::backward(spec, params, batch)?;
            Ok((sgd_step(params, &grad, sgd)?, loss))
        }
        MethodState::Oewc(oewc) => {
            let (mut loss, mut grad) = nn::backward(spec, params, batch)?;
            if oewc.consolidated {
                let (pl, pg) = oewc_penalty(params, oewc)?;
                loss += pl;
                for (acc, &gi) in grad.as_mut_slice().iter_mut().zip(pg.as_slice()) {
                    *acc += gi;
                }
            }
            Ok((sgd_step(params, &grad, sgd)?, loss))
        }
        MethodState::Derpp { cfg, buffer } => {
            let draws = derpp_draw(buffer, cfg, rng)?;
            let (loss, grad) = derpp_loss(spec, params, batch, draws.as_ref(), cfg)?;
            // Snapshot logits under the pre-step weights; the stored values
            // are never refreshed once an example enters the buffer.
            let logits = nn::forward(spec, params, batch.inputs())?;
            let next = sgd_step(params, &grad, sgd)?;
            for (i, &label) in batch.labels().iter().enumerate() {
                buffer.reservoir_insert(
                    &batch.inputs().row(i).to_vec(),
                    label,
                    &logits.row(i).to_vec(),
                    rng,
                );
            }
            Ok((next, loss))
        }
    }
}

/// End-of-task hook: oEWC consolidates its Fisher estimate and anchor on
/// the finished task's training data; the other methods do nothing.
pub fn task_boundary<F: Scalar>(
    spec: &MlpSpec,
    params: &ParamVector<F>,
    task_train: &Batch<F>,
    state: &mut MethodState<F>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    match state {
        MethodState::Oewc(oewc) => oewc_consolidate(spec, params, task_train, oewc, rng),
        _ => Ok(()),
    }
}
