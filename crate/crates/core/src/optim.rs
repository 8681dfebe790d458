//! Plain SGD stepping and the slow/fast weight state machine: EMA
//! interpolation of the fast weights into a slow copy, with optional update
//! and restart frequencies.

use crate::error::{Error, Result};
use crate::nn::{Gradient, ParamVector};
use crate::scalar::Scalar;

/// Fixed learning rate; there is no schedule anywhere.
#[derive(Debug, Clone, Copy)]
pub struct SgdConfig<F> {
    learning_rate: F,
}

impl<F: Scalar> SgdConfig<F> {
    pub fn new(learning_rate: F) -> Result<Self> {
        if !(learning_rate > F::zero()) || !learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be a positive finite number, got {learning_rate}"
            )));
        }
        Ok(SgdConfig { learning_rate })
    }

    pub fn learning_rate(&self) -> F {
        self.learning_rate
    }
}

/// One gradient step: params - lr * grad, elementwise.
pub fn sgd_step<F: Scalar>(
    params: &ParamVector<F>,
    grad: &Gradient<F>,
    cfg: &SgdConfig<F>,
) -> Result<ParamVector<F>> {
    if params.len() != grad.len() {
        return Err(Error::config(format!(
            "gradient length {} does not match parameter length {}",
            grad.len(),
            params.len()
        )));
    }
    let lr = cfg.learning_rate;
    let values = params
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&p, &g)| p - lr * g)
        .collect();
    Ok(ParamVector::new(values))
}

/// Momentum wrapper settings: EMA retention tau, how many gradient steps
/// between EMA applications, and (optionally) between slow-to-fast restarts.
#[derive(Debug, Clone, Copy)]
pub struct MomentumConfig<F> {
    tau: F,
    update_freq: u64,
    restart_freq: Option<u64>,
}

impl<F: Scalar> MomentumConfig<F> {
    pub fn new(tau: F, update_freq: u64, restart_freq: Option<u64>) -> Result<Self> {
        if !(tau >= F::zero() && tau <= F::one()) {
            return Err(Error::config(format!("tau must lie in [0, 1], got {tau}")));
        }
        if update_freq == 0 {
            return Err(Error::config("update_freq must be >= 1"));
        }
        if restart_freq == Some(0) {
            return Err(Error::config("restart_freq must be >= 1 when present"));
        }
        Ok(MomentumConfig {
            tau,
            update_freq,
            restart_freq,
        })
    }

    /// Plain EMA every step, never restarting.
    pub fn every_step(tau: F) -> Result<Self> {
        Self::new(tau, 1, None)
    }

    pub fn tau(&self) -> F {
        self.tau
    }

    pub fn update_freq(&self) -> u64 {
        self.update_freq
    }

    pub fn restart_freq(&self) -> Option<u64> {
        self.restart_freq
    }
}

/// Slow-weight state. The slow copy starts at the pretrained weights and is
/// pulled toward the fast weights by `observe` after every gradient step;
/// `finalize` hands out the slow copy for evaluation.
#[derive(Debug, Clone)]
pub struct MomentumState<F> {
    cfg: MomentumConfig<F>,
    slow: ParamVector<F>,
    step_count: u64,
}

impl<F: Scalar> MomentumState<F> {
    pub fn init(cfg: MomentumConfig<F>, initial: &ParamVector<F>) -> Self {
        MomentumState {
            cfg,
            slow: initial.clone(),
            step_count: 0,
        }
    }

    pub fn config(&self) -> &MomentumConfig<F> {
        &self.cfg
    }

    pub fn slow(&self) -> &ParamVector<F> {
        &self.slow
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Registers one completed gradient step. On steps divisible by
    /// update_freq the slow weights move: slow <- tau*slow + (1-tau)*fast.
    /// On steps divisible by restart_freq the fast weights are overwritten
    /// with the slow copy (EMA first when both fire).
    pub fn observe(&mut self, fast: &mut ParamVector<F>) -> Result<()> {
        if fast.len() != self.slow.len() {
            return Err(Error::config(format!(
                "fast weights length {} does not match slow weights length {}",
                fast.len(),
                self.slow.len()
            )));
        }
        self.step_count += 1;
        if self.step_count % self.cfg.update_freq == 0 {
            let tau = self.cfg.tau;
            let one_minus = F::one() - tau;
            for (s, &f) in self.slow.as_mut_slice().iter_mut().zip(fast.as_slice()) {
                *s = tau * *s + one_minus * f;
            }
        }
        if let Some(r) = self.cfg.restart_freq {
            if self.step_count % r == 0 {
                *fast = self.slow.clone();
            }
        }
        Ok(())
    }

    /// The weights to evaluate/deploy: a copy of the slow weights.
    pub fn finalize(&self) -> ParamVector<F> {
        self.slow.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector<f64> {
        ParamVector::new(values.to_vec())
    }

    #[test]
    fn sgd_with_zero_gradient_is_identity() {
        let cfg = SgdConfig::new(0.3).unwrap();
        let out = sgd_step(&pv(&[1.0, 2.0]), &Gradient::new(vec![0.0, 0.0]), &cfg).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn sgd_arithmetic() {
        let cfg = SgdConfig::new(0.5).unwrap();
        let out = sgd_step(&pv(&[1.0, 0.0]), &Gradient::new(vec![2.0, -4.0]), &cfg).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn sgd_on_quadratic_matches_closed_form_recurrence() {
        // Gradient of 0.5*theta^2 is theta, so each step multiplies by 0.9.
        let cfg = SgdConfig::new(0.1).unwrap();
        let mut theta = pv(&[1.0]);
        for _ in 0..200 {
            let g = Gradient::new(vec![theta.as_slice()[0]]);
            theta = sgd_step(&theta, &g, &cfg).unwrap();
        }
        // Independent iterated oracle.
        let mut expect = 1.0f64;
        for _ in 0..200 {
            expect *= 0.9;
        }
        let got = theta.as_slice()[0];
        assert!(
            ((got - expect) / expect).abs() < 1e-12,
            "got {got}, expected {expect}"
        );
    }

    #[test]
    fn sgd_rejects_mismatched_lengths_and_bad_rates() {
        let cfg = SgdConfig::new(0.1).unwrap();
        assert!(sgd_step(&pv(&[1.0]), &Gradient::new(vec![1.0, 2.0]), &cfg).is_err());
        assert!(SgdConfig::new(0.0).is_err());
        assert!(SgdConfig::new(-1.0).is_err());
        assert!(SgdConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn single_ema_step() {
        let cfg = MomentumConfig::every_step(0.9).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[1.0]));
        let mut fast = pv(&[0.0]);
        state.observe(&mut fast).unwrap();
        assert!((state.slow().as_slice()[0] - 0.9).abs() < 1e-15);
        assert_eq!(fast.as_slice(), &[0.0], "fast path untouched without restart");
    }

    #[test]
    fn three_ema_steps_match_hand_computation() {
        // tau = 0.5, slow0 = 1, fast sequence 0, 1, 0.25 -> slow = 0.5 exactly.
        let cfg = MomentumConfig::every_step(0.5).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[1.0]));
        for f in [0.0, 1.0, 0.25] {
            state.observe(&mut pv(&[f])).unwrap();
        }
        assert_eq!(state.slow().as_slice()[0], 0.5);
    }

    #[test]
    fn tau_one_freezes_slow_weights_bitwise() {
        let cfg = MomentumConfig::every_step(1.0).unwrap();
        let start = pv(&[0.25, -1.5, 0.0, 3.0]);
        let mut state = MomentumState::init(cfg, &start);
        for k in 0..100 {
            let mut fast = pv(&[k as f64, -k as f64, 1.0, 0.5]);
            state.observe(&mut fast).unwrap();
        }
        assert!(state.slow().bits_eq(&start));
        assert!(state.finalize().bits_eq(&start));
    }

    #[test]
    fn tau_zero_tracks_fast_weights_bitwise() {
        let cfg = MomentumConfig::every_step(0.0).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[5.0, -3.0]));
        let mut last = pv(&[0.0, 0.0]);
        for k in 1..50 {
            last = pv(&[0.1 * k as f64, -0.3 * k as f64]);
            let mut fast = last.clone();
            state.observe(&mut fast).unwrap();
        }
        assert!(state.finalize().bits_eq(&last));
    }

    #[test]
    fn unrolled_sum_oracle_matches_iterative_ema() {
        // slow_n = tau^n slow0 + (1-tau) sum_i tau^(n-i) fast_i, evaluated
        // term by term as an independent route.
        let tau = 0.99f64;
        let cfg = MomentumConfig::every_step(tau).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[0.0]));
        let fasts: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        for &f in &fasts {
            state.observe(&mut pv(&[f])).unwrap();
        }
        let n = fasts.len() as i32;
        let mut expect = 0.0;
        for (i, &f) in fasts.iter().enumerate() {
            expect += (1.0 - tau) * tau.powi(n - 1 - i as i32) * f;
        }
        let got = state.slow().as_slice()[0];
        assert!((got - expect).abs() < 1e-12, "got {got}, expected {expect}");
    }

    #[test]
    fn update_freq_skips_ema_between_multiples() {
        let cfg = MomentumConfig::new(0.5, 3, None).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[8.0]));
        let snapshots: Vec<f64> = (1..=9)
            .map(|k| {
                state.observe(&mut pv(&[k as f64])).unwrap();
                state.slow().as_slice()[0]
            })
            .collect();
        // Slow moves only on steps 3, 6, 9 and is bitwise constant between.
        assert_eq!(snapshots[0], 8.0);
        assert_eq!(snapshots[1], 8.0);
        assert_eq!(snapshots[2], 5.5); // 0.5*8 + 0.5*3
        assert_eq!(snapshots[3], 5.5);
        assert_eq!(snapshots[4], 5.5);
        assert_eq!(snapshots[5], 5.75); // 0.5*5.5 + 0.5*6
        assert_eq!(snapshots[8], 7.375); // 0.5*5.75 + 0.5*9
    }

    #[test]
    fn restart_copies_slow_into_fast() {
        let cfg = MomentumConfig::new(0.5, 1, Some(2)).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[0.0]));
        let mut fast = pv(&[4.0]);
        state.observe(&mut fast).unwrap(); // step 1: slow = 2, no restart
        assert_eq!(fast.as_slice(), &[4.0]);
        state.observe(&mut fast).unwrap(); // step 2: slow = 3, restart fires
        assert!(fast.bits_eq(state.slow()));
        assert_eq!(fast.as_slice(), &[3.0]);
    }

    #[test]
    fn ema_applies_before_restart_when_both_fire() {
        let cfg = MomentumConfig::new(0.5, 1, Some(1)).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[0.0]));
        let mut fast = pv(&[2.0]);
        state.observe(&mut fast).unwrap();
        // EMA first: slow = 0.5*0 + 0.5*2 = 1; restart then copies it out.
        assert_eq!(fast.as_slice(), &[1.0]);
    }

    #[test]
    fn step_count_increments_once_per_observe() {
        let cfg = MomentumConfig::new(1.0, 7, Some(13)).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[0.0]));
        for k in 1..=29u64 {
            state.observe(&mut pv(&[1.0])).unwrap();
            assert_eq!(state.step_count(), k);
        }
    }

    #[test]
    fn finalize_mid_stream_does_not_freeze_the_state() {
        let cfg = MomentumConfig::every_step(0.5).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[0.0]));
        state.observe(&mut pv(&[1.0])).unwrap();
        let early = state.finalize();
        state.observe(&mut pv(&[1.0])).unwrap();
        let late = state.finalize();
        assert!(!early.bits_eq(&late));
    }

    #[test]
    fn observe_rejects_length_mismatch() {
        let cfg = MomentumConfig::every_step(0.5).unwrap();
        let mut state = MomentumState::init(cfg, &pv(&[0.0]));
        assert!(state.observe(&mut pv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MomentumConfig::new(-0.1, 1, None).is_err());
        assert!(MomentumConfig::new(1.1, 1, None).is_err());
        assert!(MomentumConfig::new(f64::NAN, 1, None).is_err());
        assert!(MomentumConfig::new(0.5, 0, None).is_err());
        assert!(MomentumConfig::new(0.5, 1, Some(0)).is_err());
    }

    proptest! {
        // Every slow coordinate stays inside the interval spanned by its
        // previous value and the fast value, up to float rounding slack.
        #[test]
        fn ema_is_a_convex_combination(
            tau in 0.0f64..=1.0,
            (slow0, fast) in (1usize..8).prop_flat_map(|n| (
                proptest::collection::vec(-100.0f64..100.0, n),
                proptest::collection::vec(-100.0f64..100.0, n),
            )),
        ) {
            let cfg = MomentumConfig::every_step(tau).unwrap();
            let mut state = MomentumState::init(cfg, &ParamVector::new(slow0.clone()));
            state.observe(&mut ParamVector::new(fast.clone())).unwrap();
            for ((&s0, &f), &s1) in slow0.iter().zip(&fast).zip(state.slow().as_slice()) {
                let lo = s0.min(f);
                let hi = s0.max(f);
                let slack = (s0.abs() + f.abs()) * 4.0 * f64::EPSILON;
                prop_assert!(s1 >= lo - slack && s1 <= hi + slack,
                    "{s1} outside [{lo}, {hi}]");
            }
        }

        // tau = 0 is bitwise equivalent to copying the fast weights.
        #[test]
        fn tau_zero_finalize_returns_last_fast_bitwise(
            fasts in proptest::collection::vec(
                proptest::collection::vec(-1e6f64..1e6, 3), 1..40),
        ) {
            let cfg = MomentumConfig::every_step(0.0).unwrap();
            let mut state = MomentumState::init(cfg, &ParamVector::new(vec![7.0; 3]));
            for f in &fasts {
                state.observe(&mut ParamVector::new(f.clone())).unwrap();
            }
            let last = ParamVector::new(fasts.last().unwrap().clone());
            prop_assert!(state.finalize().bits_eq(&last));
        }
    }
}
