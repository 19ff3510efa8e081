//! Exact identities of the actor-critic building blocks.

#![allow(clippy::needless_range_loop)]

use invscape_core::agent::{
    clipped_noise, gaussian_noise, policy_entropy, sac_actor_objective, sac_target, soft_update, td3_target, train,
    Actor, ActorHead, AgentConfig, Algorithm, BanditTask, Batch, Critic, QFunction, ReplayBuffer, Smoothing, Task,
    Transition,
};
use invscape_core::seed::SeedStream;
use invscape_core::Result;
use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Critic that ignores its inputs.
struct Constant(f64);

impl QFunction for Constant {
    fn q(&self, s: &DMatrix<f64>, _a: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(vec![self.0; s.ncols()])
    }

    fn q_and_action_grad(&self, s: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((self.q(s, a)?, DMatrix::zeros(a.nrows(), a.ncols())))
    }
}

fn batch(rng: &mut impl rand::Rng, n: usize, done_every: usize) -> Batch {
    let ts: Vec<Transition> = (0..n)
        .map(|j| Transition {
            state: gaussian_noise(3, 1, rng).as_slice().to_vec(),
            action: vec![0.1 * j as f64 - 0.5, 0.2],
            reward: j as f64 * 0.25 - 1.0,
            next_state: gaussian_noise(3, 1, rng).as_slice().to_vec(),
            done: j % done_every == 0,
        })
        .collect();
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
}

#[test]
fn td3_zero_smoothing_equals_unsmoothed_target() {
    let mut rng = SeedStream::new(1).rng();
    let actor = Actor::new(3, 2, &[16], ActorHead::Tanh, &mut rng).unwrap();
    let q1 = Critic::new(3, 2, &[16], &mut rng).unwrap();
    let q2 = Critic::new(3, 2, &[16], &mut rng).unwrap();
    let b = batch(&mut rng, 12, 5);
    let smooth = Smoothing { std: 0.0, clip: 0.5 };
    let with = td3_target(&b, &q1, &q2, &actor, Some(smooth), 0.99, &mut rng).unwrap();
    let without = td3_target(&b, &q1, &q2, &actor, None, 0.99, &mut rng).unwrap();
    assert_eq!(
        with.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        without.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn targets_use_the_smaller_critic_and_respect_done() {
    let mut rng = SeedStream::new(2).rng();
    let actor = Actor::new(3, 2, &[8], ActorHead::Tanh, &mut rng).unwrap();
    let b = batch(&mut rng, 10, 3);
    let y = td3_target(&b, &Constant(3.0), &Constant(5.0), &actor, None, 0.9, &mut rng).unwrap();
    let y_swapped = td3_target(&b, &Constant(5.0), &Constant(3.0), &actor, None, 0.9, &mut rng).unwrap();
    for j in 0..b.len() {
        let expect = if b.dones[j] {
            b.rewards[j]
        } else {
            b.rewards[j] + 0.9 * 3.0
        };
        assert_eq!(y[j], expect);
        assert_eq!(y_swapped[j], expect);
    }
}

#[test]
fn sac_target_without_entropy() {
    let mut rng = SeedStream::new(3).rng();
    let actor = Actor::new(3, 2, &[8], ActorHead::TanhGaussian, &mut rng).unwrap();
    let b = batch(&mut rng, 10, 4);
    let noise = gaussian_noise(2, 10, &mut rng);
    let y = sac_target(&b, &Constant(-2.0), &Constant(1.0), &actor, &noise, 0.0, 0.5).unwrap();
    for j in 0..b.len() {
        let expect = if b.dones[j] {
            b.rewards[j]
        } else {
            b.rewards[j] + 0.5 * -2.0
        };
        assert_eq!(y[j], expect);
    }
    let y = sac_target(&b, &Constant(-2.0), &Constant(1.0), &actor, &noise, 0.3, 0.5).unwrap();
    let lp = actor.sample(&b.next_states, &noise).unwrap().log_probs;
    for j in 0..b.len() {
        let expect = if b.dones[j] {
            b.rewards[j]
        } else {
            b.rewards[j] + 0.5 * (-2.0 - 0.3 * lp[j])
        };
        assert_eq!(y[j], expect);
    }
}

#[test]
fn alpha_zero_objective_is_pure_q() {
    let mut rng = SeedStream::new(4).rng();
    let actor = Actor::new(3, 2, &[16, 16], ActorHead::TanhGaussian, &mut rng).unwrap();
    let q1 = Critic::new(3, 2, &[16], &mut rng).unwrap();
    let q2 = Critic::new(3, 2, &[16], &mut rng).unwrap();
    let s = gaussian_noise(3, 20, &mut rng);
    let noise = gaussian_noise(2, 20, &mut rng);
    let o = sac_actor_objective(&actor, &s, &noise, &q1, &q2, 0.0, true).unwrap();
    assert_eq!(o.entropy_term, 0.0);
    assert_eq!(o.loss, -o.q_term);
    let v1 = q1.q(&s, &o.actions).unwrap();
    let v2 = q2.q(&s, &o.actions).unwrap();
    let mean_min = v1.iter().zip(&v2).map(|(a, b)| a.min(*b)).sum::<f64>() / 20.0;
    assert_eq!(o.q_term, mean_min);
}

#[test]
fn entropy_grows_with_log_std() {
    // Monte-Carlo entropy of a constant actor is ordered in its std
    let mut rng = SeedStream::new(5).rng();
    let s = gaussian_noise(1, 1, &mut rng);
    let noise = gaussian_noise(1, 4000, &mut rng);
    let states = DMatrix::from_fn(1, 4000, |_, _| s[(0, 0)]);
    let mut last = f64::NEG_INFINITY;
    for log_std in [-3.0, -2.0, -1.0, -0.5] {
        let mut actor = Actor::new(1, 1, &[], ActorHead::TanhGaussian, &mut rng).unwrap();
        actor.net.set_params(&[0.0, 0.0, 0.0, log_std]).unwrap();
        let h = policy_entropy(&actor, &states, &noise).unwrap();
        // small std: Gaussian entropy plus the tanh Jacobian, E log(1 - tanh^2 x) ~ -std^2
        if log_std <= -2.0 {
            let gauss = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_std;
            let approx = gauss - (2.0 * log_std).exp();
            assert!((h - approx).abs() < 0.03, "{h} vs {approx}");
        }
        assert!(h > last);
        last = h;
    }
}

proptest! {
    #[test]
    fn clipped_noise_is_bounded(std in 0.0..5.0f64, clip in 0.0..2.0f64, seed in any::<u64>()) {
        let e = clipped_noise(4, 64, Smoothing { std, clip }, &mut SeedStream::new(seed).rng());
        prop_assert!(e.iter().all(|v| v.abs() <= clip));
    }

    #[test]
    fn soft_update_extremes_are_exact(v in prop::collection::vec(-1e6..1e6f64, 1..50), seed in any::<u64>()) {
        let online: Vec<f64> = v.iter().map(|x| x * 0.5 + seed as f64 * 1e-12).collect();
        let mut t = v.clone();
        soft_update(&mut t, &online, 0.0).unwrap();
        prop_assert_eq!(&t, &v);
        soft_update(&mut t, &online, 1.0).unwrap();
        prop_assert_eq!(&t, &online);
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(20);
    for k in 0..45 {
        buf.push(Transition {
            state: vec![k as f64],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
        });
    }
    let n = 40_000;
    let idx = buf.sample_indices(n, &mut SeedStream::new(6).rng());
    let mut counts = [0usize; 20];
    for i in idx {
        counts[i] += 1;
    }
    let e = n as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}");
}

#[test]
fn td3_actor_updates_follow_policy_delay() {
    for delay in [1, 2, 3] {
        let cfg = AgentConfig {
            algorithm: Algorithm::Td3,
            policy_delay: delay,
            hidden: vec![8],
            batch_size: 8,
            start_steps: 10,
            update_after: 10,
            eval_interval: 0,
            seed: SeedStream::new(7),
            ..Default::default()
        };
        let out = train(&mut BanditTask { target: 0.2 }, &cfg, 100).unwrap();
        assert_eq!(out.critic_updates, 91);
        assert_eq!(out.actor_updates, 91 / delay);
    }
}

#[test]
fn updates_per_step_multiplies_gradient_steps() {
    let cfg = AgentConfig {
        updates_per_step: 3,
        hidden: vec![8],
        batch_size: 8,
        start_steps: 10,
        update_after: 10,
        eval_interval: 0,
        seed: SeedStream::new(7),
        ..Default::default()
    };
    let out = train(&mut BanditTask { target: 0.2 }, &cfg, 100).unwrap();
    assert_eq!(out.critic_updates, 273);
    assert_eq!(out.actor_updates, 273);
}

#[test]
fn deterministic_sac_solves_the_bandit() {
    let cfg = AgentConfig {
        algorithm: Algorithm::SacDeterministic,
        hidden: vec![16],
        batch_size: 32,
        start_steps: 100,
        update_after: 100,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        eval_interval: 0,
        seed: SeedStream::new(8),
        ..Default::default()
    };
    let mut task = BanditTask { target: 0.0 };
    let out = train(&mut task, &cfg, 3000).unwrap();
    let err = task.evaluate(&out.actor, 1, SeedStream::new(0)).unwrap().sqrt();
    assert!(err < 2e-2, "mean action off by {err}");
}
