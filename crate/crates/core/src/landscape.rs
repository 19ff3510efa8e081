//! Two-direction actor loss slices `f(a, b) = J(theta + a w1 + b w2)` with
//! per-block normalized random directions.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::agent::{
    deterministic_actor_objective, sac_actor_objective, Actor, ActorHead, ActorPolicy, InventoryEncoding, QFunction,
};
use crate::demand::DemandScenario;
use crate::env::{run_episode, InventoryEnv};
use crate::nn::ParamVector;
use crate::seed::SeedStream;
use crate::{Error, Result};

/// Perturbation direction with the layout of the parameters it perturbs.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub values: Vec<f64>,
    /// Scale applied to each layout block; 0 for blocks that were zeroed.
    pub scales: Vec<f64>,
    /// Blocks whose center norm was zero.
    pub zeroed: Vec<usize>,
}

impl Direction {
    /// Rescales `raw` block by block to the norm of the matching block of
    /// `center`.
    pub fn normalized(center: &ParamVector, mut raw: Vec<f64>) -> Result<Self> {
        if raw.len() != center.len() {
            return Err(Error::Shape(format!(
                "direction has {} entries, parameters have {}",
                raw.len(),
                center.len()
            )));
        }
        let mut scales = Vec::new();
        let mut zeroed = Vec::new();
        for (k, b) in center.layout().blocks().iter().enumerate() {
            let theta = norm(center.block(b));
            let d = &mut raw[b.offset..b.offset + b.len];
            let dn = norm(d);
            if theta == 0.0 || dn == 0.0 {
                d.fill(0.0);
                scales.push(0.0);
                zeroed.push(k);
            } else {
                let s = theta / dn;
                d.iter_mut().for_each(|v| *v *= s);
                scales.push(s);
            }
        }
        Ok(Self {
            values: raw,
            scales,
            zeroed,
        })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            scales: Vec::new(),
            zeroed: Vec::new(),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Standard-normal direction, normalized per block against `center`.
pub fn sample_direction(center: &ParamVector, seed: SeedStream) -> Result<Direction> {
    let mut rng = seed.rng();
    let raw = (0..center.len()).map(|_| rng.sample(StandardNormal)).collect();
    Direction::normalized(center, raw)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// `theta + a w1 + b w2`; zero coefficients leave entries untouched.
pub fn perturb(center: &[f64], a: f64, w1: &Direction, b: f64, w2: &Direction) -> Vec<f64> {
    let mut p = center.to_vec();
    if a != 0.0 {
        p.iter_mut().zip(&w1.values).for_each(|(x, d)| *x += a * d);
    }
    if b != 0.0 {
        p.iter_mut().zip(&w2.values).for_each(|(x, d)| *x += b * d);
    }
    p
}

/// `R` points on `[-1, 1]`, symmetric about 0 bit for bit.
pub fn grid_axis(resolution: usize) -> Vec<f64> {
    let m = (resolution - 1) as f64;
    (0..resolution).map(|i| (2.0 * i as f64 - m) / m).collect()
}

/// Uniform subsample of `pool` to exactly `target` columns. Falls back to
/// sampling with replacement (second value `true`) when the pool is smaller.
pub fn subsample<R: Rng + ?Sized>(pool: &[Vec<f64>], target: usize, rng: &mut R) -> Result<(DMatrix<f64>, bool)> {
    if pool.is_empty() {
        return Err(Error::Data("no states to sample an evaluation batch from".into()));
    }
    if target == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    let dim = pool[0].len();
    let (idx, replaced): (Vec<usize>, bool) = if target <= pool.len() {
        (index::sample(rng, pool.len(), target).into_vec(), false)
    } else {
        ((0..target).map(|_| rng.random_range(0..pool.len())).collect(), true)
    };
    let m = DMatrix::from_fn(dim, target, |r, c| pool[idx[c]][r]);
    Ok((m, replaced))
}

/// Evaluation batch built from the states visited by the actor's mean policy.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    pub states: DMatrix<f64>,
    pub pool_size: usize,
    pub with_replacement: bool,
}

/// Rolls out `episodes` seasons with the actor's mean action and uniformly
/// subsamples the visited (pre-decision) states.
pub fn collect_eval_batch(
    actor: &Actor,
    env: &InventoryEnv,
    scenario: &DemandScenario,
    episodes: usize,
    target: usize,
    seed: SeedStream,
) -> Result<EvalBatch> {
    let enc = InventoryEncoding::new(env, scenario);
    let mut pol = ActorPolicy::mean(actor, &enc);
    let rollouts = seed.derive("rollouts");
    let mut pool = Vec::new();
    for e in 0..episodes as u64 {
        let rec = run_episode(&mut pol, scenario, env, rollouts.index(e))?;
        pool.extend(rec.periods.iter().map(|p| enc.features(&p.state)));
    }
    let (states, with_replacement) = subsample(&pool, target, &mut seed.derive("subsample").rng())?;
    Ok(EvalBatch {
        states,
        pool_size: pool.len(),
        with_replacement,
    })
}

/// Which actor loss the grid records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossDef {
    /// `mean(alpha log pi - min(Q1, Q2))` with fixed per-state noise.
    SacActor { alpha: f64 },
    /// `-mean Q1(s, pi(s))`.
    DeterministicActor,
}

impl fmt::Display for LossDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossDef::SacActor { alpha } => write!(f, "sac-actor alpha={alpha} min-twin-q fixed-noise"),
            LossDef::DeterministicActor => f.write_str("deterministic-actor -q1"),
        }
    }
}

/// Actor loss as a function of the actor parameters, everything else frozen.
pub struct ActorLoss<'a> {
    pub actor: &'a Actor,
    pub states: &'a DMatrix<f64>,
    /// Per-state noise for the stochastic loss, `act_dim x batch`.
    pub noise: Option<&'a DMatrix<f64>>,
    pub q1: &'a dyn QFunction,
    pub q2: &'a dyn QFunction,
    pub def: LossDef,
}

impl ActorLoss<'_> {
    pub fn eval(&self, params: &[f64]) -> Result<f64> {
        let mut actor = self.actor.clone();
        actor.net.set_params(params)?;
        self.eval_actor(&actor)
    }

    /// Loss at the unperturbed actor.
    pub fn center(&self) -> Result<f64> {
        self.eval_actor(self.actor)
    }

    fn eval_actor(&self, actor: &Actor) -> Result<f64> {
        match self.def {
            LossDef::SacActor { alpha } => {
                let noise = self
                    .noise
                    .ok_or_else(|| Error::Parameter("stochastic actor loss needs a noise matrix".into()))?;
                Ok(sac_actor_objective(actor, self.states, noise, self.q1, self.q2, alpha, false)?.loss)
            }
            LossDef::DeterministicActor => {
                if actor.head == ActorHead::TanhGaussian {
                    let a = actor.mean_action(self.states)?;
                    let q = self.q1.q(self.states, &a)?;
                    Ok(-q.iter().sum::<f64>() / q.len() as f64)
                } else {
                    Ok(deterministic_actor_objective(actor, self.states, self.q1, false)?.0)
                }
            }
        }
    }
}

/// Loss values on an `R x R` lattice; `loss[i * R + j]` is at
/// `(alphas[i], betas[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub loss: Vec<f64>,
    pub center_loss: f64,
    pub non_finite: usize,
}

/// Evaluates the slice in parallel; the result does not depend on the
/// evaluation order.
pub fn evaluate_grid(loss: &ActorLoss<'_>, w1: &Direction, w2: &Direction, resolution: usize) -> Result<LandscapeGrid> {
    if resolution < 3 || resolution.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "resolution must be odd and >= 3, got {resolution}"
        )));
    }
    let center = &loss.actor.net.params().values;
    if w1.values.len() != center.len() || w2.values.len() != center.len() {
        return Err(Error::Shape(
            "direction length differs from the actor parameters".into(),
        ));
    }
    let axis = grid_axis(resolution);
    let r = resolution;
    let loss_vals = (0..r * r)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (axis[k / r], axis[k % r]);
            if a == 0.0 && b == 0.0 {
                loss.center()
            } else {
                loss.eval(&perturb(center, a, w1, b, w2))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let non_finite = loss_vals.iter().filter(|v| !v.is_finite()).count();
    let center_loss = loss_vals[(r / 2) * r + r / 2];
    Ok(LandscapeGrid {
        alphas: axis.clone(),
        betas: axis,
        loss: loss_vals,
        center_loss,
        non_finite,
    })
}

impl LandscapeGrid {
    pub fn resolution(&self) -> usize {
        self.alphas.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.loss[i * self.betas.len() + j]
    }

    /// Grid indices and value of the smallest finite cell.
    pub fn min_cell(&self) -> Option<(usize, usize, f64)> {
        let nb = self.betas.len();
        self.loss
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &v)| (k / nb, k % nb, v))
    }

    /// Fraction of finite cells strictly below the center value.
    pub fn center_percentile(&self) -> f64 {
        let finite: Vec<f64> = self.loss.iter().copied().filter(|v| v.is_finite()).collect();
        let below = finite.iter().filter(|&&v| v < self.center_loss).count();
        below as f64 / finite.len().max(1) as f64
    }

    pub fn write<W: Write>(&self, mut w: W, seed: u64, batch: &str, loss_def: &str) -> Result<()> {
        writeln!(w, "# seed {seed}")?;
        writeln!(w, "# batch {batch}")?;
        writeln!(w, "# loss-def {loss_def}")?;
        writeln!(w, "alpha,beta,loss")?;
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                let v = self.at(i, j);
                if v.is_finite() {
                    writeln!(w, "{a},{b},{v}")?;
                } else {
                    writeln!(w, "{a},{b},nan")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layout;

    #[test]
    fn axis_is_symmetric() {
        for r in [3, 5, 51, 101] {
            let ax = grid_axis(r);
            assert_eq!(ax[0], -1.0);
            assert_eq!(ax[r - 1], 1.0);
            assert_eq!(ax[r / 2], 0.0);
            for i in 0..r {
                assert_eq!(ax[i], -ax[r - 1 - i]);
            }
        }
    }

    #[test]
    fn zero_center_block_is_flagged() {
        let layout = Layout::new(&[2, 3, 1]).unwrap();
        let mut v = vec![1.0; layout.total()];
        let bias0 = layout.blocks()[1];
        v[bias0.offset..bias0.offset + bias0.len].fill(0.0);
        let center = ParamVector::new(layout, v).unwrap();
        let d = sample_direction(&center, SeedStream::new(4)).unwrap();
        assert_eq!(d.zeroed, vec![1]);
        assert!(d.values[bias0.offset..bias0.offset + bias0.len]
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn subsample_without_replacement() {
        let pool: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64]).collect();
        let (m, rep) = subsample(&pool, 256, &mut SeedStream::new(1).rng()).unwrap();
        assert!(!rep);
        let mut seen: Vec<f64> = m.iter().copied().collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 256);

        let (m, _) = subsample(&pool, 1000, &mut SeedStream::new(1).rng()).unwrap();
        let mut all: Vec<f64> = m.iter().copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..1000).map(|i| i as f64).collect::<Vec<_>>());

        let (m, rep) = subsample(&pool[..3], 10, &mut SeedStream::new(1).rng()).unwrap();
        assert!(rep);
        assert_eq!(m.ncols(), 10);
        assert!(matches!(
            subsample(&[], 3, &mut SeedStream::new(1).rng()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn nan_cells_are_written_as_nan() {
        let g = LandscapeGrid {
            alphas: vec![-1.0, 0.0, 1.0],
            betas: vec![-1.0, 0.0, 1.0],
            loss: vec![1.0, 2.0, f64::INFINITY, 0.5, 0.25, 0.5, f64::NAN, 1.0, 1.0],
            center_loss: 0.25,
            non_finite: 2,
        };
        let mut buf = Vec::new();
        g.write(&mut buf, 7, "256 states", "td3").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed 7");
        assert_eq!(lines[4], "-1,-1,1");
        assert_eq!(lines[6], "-1,1,nan");
        assert_eq!(lines[8], "0,0,0.25");
        assert_eq!(lines.len(), 13);
        assert_eq!(g.min_cell(), Some((1, 1, 0.25)));
        assert_eq!(g.center_percentile(), 0.0);
    }
}
