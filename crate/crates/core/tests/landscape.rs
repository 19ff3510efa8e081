//! Loss-slice identities and a closed-form quadratic check.

use invscape_core::agent::{gaussian_noise, sac_actor_objective, Actor, ActorHead, Critic, QFunction};
use invscape_core::landscape::{cosine, evaluate_grid, sample_direction, ActorLoss, Direction, LossDef};
use invscape_core::nn::{Layout, ParamVector};
use invscape_core::seed::SeedStream;
use invscape_core::Result;
use nalgebra::DMatrix;

/// `Q(s, a) = -sum (a - c)^2`.
struct Bowl(Vec<f64>);

impl QFunction for Bowl {
    fn q(&self, _s: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(a.column_iter()
            .map(|col| -col.iter().zip(&self.0).map(|(x, c)| (x - c).powi(2)).sum::<f64>())
            .collect())
    }

    fn q_and_action_grad(&self, s: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let g = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| -2.0 * (a[(i, j)] - self.0[i]));
        Ok((self.q(s, a)?, g))
    }
}

struct Setup {
    actor: Actor,
    q1: Critic,
    q2: Critic,
    states: DMatrix<f64>,
    noise: DMatrix<f64>,
}

fn setup(seed: u64) -> Setup {
    let mut rng = SeedStream::new(seed).rng();
    let actor = Actor::new(4, 2, &[16, 16], ActorHead::TanhGaussian, &mut rng).unwrap();
    let q1 = Critic::new(4, 2, &[16], &mut rng).unwrap();
    let q2 = Critic::new(4, 2, &[16], &mut rng).unwrap();
    let states = gaussian_noise(4, 64, &mut rng);
    let noise = gaussian_noise(2, 64, &mut rng);
    Setup {
        actor,
        q1,
        q2,
        states,
        noise,
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn center_cell_is_the_unperturbed_loss() {
    let s = setup(1);
    let loss = ActorLoss {
        actor: &s.actor,
        states: &s.states,
        noise: Some(&s.noise),
        q1: &s.q1,
        q2: &s.q2,
        def: LossDef::SacActor { alpha: 0.2 },
    };
    let center = s.actor.net.params();
    let w1 = sample_direction(center, SeedStream::new(10)).unwrap();
    let w2 = sample_direction(center, SeedStream::new(11)).unwrap();
    let g = evaluate_grid(&loss, &w1, &w2, 5).unwrap();
    let direct = sac_actor_objective(&s.actor, &s.states, &s.noise, &s.q1, &s.q2, 0.2, false)
        .unwrap()
        .loss;
    assert_eq!(g.at(2, 2).to_bits(), direct.to_bits());
    assert_eq!(g.center_loss.to_bits(), direct.to_bits());
    // parameters are untouched afterwards
    assert_eq!(bits(&s.actor.net.params().values), bits(&center.values));
}

#[test]
fn negating_directions_reverses_both_axes() {
    let s = setup(2);
    let loss = ActorLoss {
        actor: &s.actor,
        states: &s.states,
        noise: Some(&s.noise),
        q1: &s.q1,
        q2: &s.q2,
        def: LossDef::SacActor { alpha: 0.2 },
    };
    let c = s.actor.net.params();
    let w1 = sample_direction(c, SeedStream::new(1)).unwrap();
    let w2 = sample_direction(c, SeedStream::new(2)).unwrap();
    let g = evaluate_grid(&loss, &w1, &w2, 7).unwrap();
    let n = evaluate_grid(&loss, &w1.negated(), &w2.negated(), 7).unwrap();
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(g.at(i, j).to_bits(), n.at(6 - i, 6 - j).to_bits(), "({i},{j})");
        }
    }
    let again = evaluate_grid(&loss, &w1, &w2, 7).unwrap();
    assert_eq!(bits(&g.loss), bits(&again.loss));
}

#[test]
fn zero_directions_give_a_flat_grid() {
    let s = setup(3);
    let loss = ActorLoss {
        actor: &s.actor,
        states: &s.states,
        noise: None,
        q1: &s.q1,
        q2: &s.q2,
        def: LossDef::DeterministicActor,
    };
    let z = Direction::zeros(s.actor.net.params().len());
    let g = evaluate_grid(&loss, &z, &z, 3).unwrap();
    assert!(g.loss.iter().all(|v| v.to_bits() == g.center_loss.to_bits()));
    assert!(evaluate_grid(&loss, &z, &z, 4).is_err());
}

#[test]
fn linear_actor_with_quadratic_critic_matches_closed_form() {
    let mut rng = SeedStream::new(4).rng();
    let actor = Actor::new(3, 2, &[], ActorHead::Linear, &mut rng).unwrap();
    let states = gaussian_noise(3, 10, &mut rng);
    let bowl = Bowl(vec![0.4, -0.7]);
    let loss = ActorLoss {
        actor: &actor,
        states: &states,
        noise: None,
        q1: &bowl,
        q2: &bowl,
        def: LossDef::DeterministicActor,
    };
    let c = actor.net.params();
    let w1 = sample_direction(c, SeedStream::new(5)).unwrap();
    let w2 = sample_direction(c, SeedStream::new(6)).unwrap();
    let g = evaluate_grid(&loss, &w1, &w2, 3).unwrap();

    // a(p) = W s + b with W column-major 2x3 at p[0..6], b at p[6..8]
    let act = |p: &[f64], j: usize| -> [f64; 2] {
        let mut a = [p[6], p[7]];
        for (r, out) in a.iter_mut().enumerate() {
            for k in 0..3 {
                *out += p[k * 2 + r] * states[(k, j)];
            }
        }
        a
    };
    let zero = vec![0.0; 8];
    let (mut k00, mut k01, mut k02, mut k11, mut k12, mut k22) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..10 {
        let a0 = act(&c.values, j);
        let d1 = act(&w1.values, j);
        let d2 = act(&w2.values, j);
        let b1 = act(&zero, j);
        for r in 0..2 {
            let e = a0[r] - bowl.0[r];
            let (x, y) = (d1[r] - b1[r], d2[r] - b1[r]);
            k00 += e * e;
            k01 += e * x;
            k02 += e * y;
            k11 += x * x;
            k12 += x * y;
            k22 += y * y;
        }
    }
    for (i, &a) in g.alphas.iter().enumerate() {
        for (j, &b) in g.betas.iter().enumerate() {
            let f = (k00 + 2.0 * a * k01 + 2.0 * b * k02 + a * a * k11 + 2.0 * a * b * k12 + b * b * k22) / 10.0;
            assert!(
                (g.at(i, j) - f).abs() < 1e-6 * f.abs().max(1.0),
                "({a},{b}): {} vs {f}",
                g.at(i, j)
            );
        }
    }
}

#[test]
fn directions_match_block_norms() {
    let layout = Layout::new(&[10, 32, 32, 4]).unwrap();
    let mut rng = SeedStream::new(7).rng();
    let center = ParamVector::new(
        layout,
        gaussian_noise(1, Layout::new(&[10, 32, 32, 4]).unwrap().total(), &mut rng)
            .as_slice()
            .to_vec(),
    )
    .unwrap();
    let d = sample_direction(&center, SeedStream::new(8)).unwrap();
    assert!(d.zeroed.is_empty());
    for b in center.layout().blocks() {
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ratio = n(&d.values[b.offset..b.offset + b.len]) / n(center.block(b));
        assert!((ratio - 1.0).abs() < 1e-9, "{ratio}");
    }
    assert_eq!(sample_direction(&center, SeedStream::new(8)).unwrap(), d);
}

#[test]
fn random_directions_are_nearly_orthogonal() {
    let layout = Layout::new(&[20, 96, 96]).unwrap();
    assert!(layout.total() >= 10_000);
    let center = ParamVector::new(layout.clone(), vec![0.5; layout.total()]).unwrap();
    let ok = (0..100u64)
        .filter(|&t| {
            let a = sample_direction(&center, SeedStream::new(t).derive("a")).unwrap();
            let b = sample_direction(&center, SeedStream::new(t).derive("b")).unwrap();
            cosine(&a.values, &b.values).abs() < 0.1
        })
        .count();
    assert!(ok >= 95, "{ok}/100");
}
