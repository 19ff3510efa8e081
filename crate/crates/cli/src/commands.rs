//! Subcommand implementations. Every command computes first and writes its
//! files afterwards, all under the configured output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use invscape_core::agent::{
    gaussian_noise, train as train_agent, write_log, Actor, ActorPolicy, Algorithm, Critic, EvalMode,
    InventoryEncoding, InventoryTask, Task,
};
use invscape_core::demand::DemandScenario;
use invscape_core::dp::{evaluate_policy, solve};
use invscape_core::env::{InventoryEnv, Policy};
use invscape_core::landscape::{collect_eval_batch, evaluate_grid, sample_direction, ActorLoss, LossDef};
use invscape_core::nn::{read_checkpoint, write_checkpoint, Mlp};
use invscape_core::policies::{MeanOrder, OrderUpTo};
use invscape_core::stats::{improvement_pct, Summary};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn checkpoint_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("seed-{seed}.ckpt"))
}

/// Builds the scenario and environment shared by all commands.
pub fn setup(cfg: &ExperimentConfig) -> Result<(DemandScenario, InventoryEnv)> {
    let scenario = cfg.scenario()?;
    let env = cfg.environment(&scenario)?;
    Ok((scenario, env))
}

#[derive(Debug, Clone)]
pub struct TrainedSeed {
    pub seed: u64,
    pub final_cost: f64,
    pub checkpoint: PathBuf,
}

pub fn train(cfg: &ExperimentConfig) -> Result<Vec<TrainedSeed>> {
    let (scenario, env) = setup(cfg)?;
    let results = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let agent = cfg.agent_config(seed)?;
            let mut task = InventoryTask::new(env.clone(), scenario.clone())?;
            let out = train_agent(&mut task, &agent, cfg.agent.steps)?;
            let final_cost = task.evaluate(&out.actor, agent.eval_episodes, agent.seed.derive("final-eval"))?;
            Ok((seed, out, final_cost))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    let mut report = Vec::new();
    for (seed, out, final_cost) in results {
        let path = checkpoint_path(cfg, seed);
        let mut w = create(&path)?;
        write_checkpoint(
            &mut w,
            &[
                ("actor", &out.actor.net),
                ("critic1", &out.critic1.net),
                ("critic2", &out.critic2.net),
            ],
        )?;
        w.flush()?;
        let mut w = create(&cfg.out_dir.join("logs").join(format!("seed-{seed}.csv")))?;
        write_log(&mut w, &out.log)?;
        w.flush()?;
        summary.push(format!("{seed},{final_cost}"));
        report.push(TrainedSeed {
            seed,
            final_cost,
            checkpoint: path,
        });
    }
    let mut w = create(&cfg.out_dir.join("train_summary.csv"))?;
    writeln!(w, "# algorithm {}", cfg.algorithm()?)?;
    writeln!(w, "# reward k={} mode={:?}", env.reward.k, env.reward.mode)?;
    writeln!(w, "seed,final_eval_cost")?;
    for line in summary {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(report)
}

/// Trained networks restored from a seed's checkpoint.
pub struct Trained {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
}

pub fn load_trained(
    cfg: &ExperimentConfig,
    seed: u64,
    env: &InventoryEnv,
    scenario: &DemandScenario,
) -> Result<Trained> {
    let path = checkpoint_path(cfg, seed);
    let file = File::open(&path).with_context(|| format!("missing checkpoint {}", path.display()))?;
    let nets = read_checkpoint(std::io::BufReader::new(file))?;
    let find = |name: &str| -> Result<Mlp> {
        nets.iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| anyhow!("checkpoint {} has no '{name}' network", path.display()))
    };
    let enc = InventoryEncoding::new(env, scenario);
    let algo = cfg.algorithm()?;
    let (obs, act) = (enc.obs_dim(), env.dims().action_len());
    let out = if algo.is_sac() { 2 * act } else { act };
    let expect = |input: usize, output: usize| {
        let mut s = vec![input];
        s.extend(&cfg.agent.hidden);
        s.push(output);
        s
    };
    let check = |name: &str, m: &Mlp, sizes: Vec<usize>| -> Result<()> {
        if m.sizes() != sizes.as_slice() {
            return Err(invscape_core::Error::Checkpoint(format!(
                "'{name}' in {} has layer sizes {:?}, configuration expects {:?}",
                path.display(),
                m.sizes(),
                sizes
            ))
            .into());
        }
        Ok(())
    };
    let (a, c1, c2) = (find("actor")?, find("critic1")?, find("critic2")?);
    check("actor", &a, expect(obs, out))?;
    check("critic1", &c1, expect(obs + act, 1))?;
    check("critic2", &c2, expect(obs + act, 1))?;
    Ok(Trained {
        actor: Actor {
            net: a,
            head: algo.head(),
        },
        critic1: Critic { net: c1 },
        critic2: Critic { net: c2 },
    })
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub policy: String,
    pub improvement: Summary,
}

/// Mean season cost of `policy` over the seed's shared demand paths.
fn seed_cost<P: Policy + ?Sized>(
    cfg: &ExperimentConfig,
    policy: &mut P,
    env: &InventoryEnv,
    scenario: &DemandScenario,
    seed: u64,
) -> Result<f64> {
    let stream = cfg.streams().derive("compare").index(seed);
    Ok(evaluate_policy(policy, env, scenario, cfg.compare.episodes, stream)?
        .summary
        .mean)
}

/// Per-seed costs of every configured policy, baseline first.
pub fn compare_costs(cfg: &ExperimentConfig) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (scenario, env) = setup(cfg)?;
    let dims = env.dims();
    let mut names = vec!["mean".to_string()];
    names.extend(cfg.compare.policies.iter().filter(|p| *p != "mean").cloned());
    if names.len() < 2 {
        bail!("compare needs at least one policy besides mean ordering");
    }
    let enc = InventoryEncoding::new(&env, &scenario);
    let costs = cfg
        .seeds
        .iter()
        .map(|&seed| {
            names
                .iter()
                .map(|name| match name.as_str() {
                    "mean" => seed_cost(cfg, &mut MeanOrder::new(dims, &scenario), &env, &scenario, seed),
                    "order-up-to" => {
                        let mut p = OrderUpTo::new(dims, &scenario, cfg.compare.service_level)?;
                        seed_cost(cfg, &mut p, &env, &scenario, seed)
                    }
                    "trained" => {
                        let t = load_trained(cfg, seed, &env, &scenario)?;
                        let mut p = ActorPolicy::mean(&t.actor, &enc);
                        if cfg.compare.stochastic_actions {
                            p.mode = EvalMode::Stochastic;
                            p.rng = cfg.streams().derive("compare-actions").index(seed).rng();
                        }
                        seed_cost(cfg, &mut p, &env, &scenario, seed)
                    }
                    other => bail!("unknown policy '{other}'"),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((names, costs))
}

pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<CompareRow>> {
    let (names, costs) = compare_costs(cfg)?;
    let mut rows = Vec::new();
    for (k, name) in names.iter().enumerate().skip(1) {
        let imp: Vec<f64> = costs.iter().map(|c| improvement_pct(c[0], c[k])).collect();
        rows.push(CompareRow {
            policy: name.clone(),
            improvement: Summary::from_slice(&imp),
        });
    }
    let mut w = create(&cfg.out_dir.join("compare.csv"))?;
    writeln!(w, "# scenario {}", cfg.scenario.kind)?;
    writeln!(
        w,
        "# baseline mean-ordering; improvement % = (baseline - policy) / baseline * 100 per seed"
    )?;
    writeln!(
        w,
        "# pairing: all policies share each seed's {} demand paths",
        cfg.compare.episodes
    )?;
    writeln!(
        w,
        "# trained actions: {}",
        if cfg.compare.stochastic_actions {
            "sampled"
        } else {
            "mean"
        }
    )?;
    writeln!(w, "policy,mean,min,max,std,seeds")?;
    for r in &rows {
        let s = &r.improvement;
        writeln!(w, "{},{},{},{},{},{}", r.policy, s.mean, s.min, s.max, s.std, s.n)?;
    }
    w.flush()?;
    let mut w = create(&cfg.out_dir.join("compare_per_seed.csv"))?;
    writeln!(w, "seed,policy,mean_cost,improvement_pct")?;
    for (seed, c) in cfg.seeds.iter().zip(&costs) {
        for (k, name) in names.iter().enumerate() {
            writeln!(w, "{seed},{name},{},{}", c[k], improvement_pct(c[0], c[k]))?;
        }
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct LandscapeReport {
    pub path: PathBuf,
    pub center_loss: f64,
    pub min_cell: Option<(f64, f64, f64)>,
    pub center_percentile: f64,
    pub non_finite: usize,
    pub with_replacement: bool,
}

pub fn landscape(cfg: &ExperimentConfig) -> Result<LandscapeReport> {
    let (scenario, env) = setup(cfg)?;
    let seed = cfg.landscape.seed.unwrap_or(cfg.seeds[0]);
    let t = load_trained(cfg, seed, &env, &scenario)?;
    let algo = cfg.algorithm()?;
    let stream = cfg.streams().derive("landscape").index(seed);
    let batch = collect_eval_batch(
        &t.actor,
        &env,
        &scenario,
        cfg.landscape.episodes,
        cfg.landscape.batch,
        stream.derive("batch"),
    )?;
    let noise = gaussian_noise(
        t.actor.act_dim(),
        batch.states.ncols(),
        &mut stream.derive("noise").rng(),
    );
    let def = match algo {
        Algorithm::Sac => LossDef::SacActor { alpha: cfg.agent.alpha },
        Algorithm::SacDeterministic => LossDef::SacActor { alpha: 0.0 },
        Algorithm::Td3 | Algorithm::Td3NoSmooth => LossDef::DeterministicActor,
    };
    let loss = ActorLoss {
        actor: &t.actor,
        states: &batch.states,
        noise: Some(&noise),
        q1: &t.critic1,
        q2: &t.critic2,
        def,
    };
    let center = t.actor.net.params();
    let w1 = sample_direction(center, stream.derive("direction-1"))?;
    let w2 = sample_direction(center, stream.derive("direction-2"))?;
    let grid = evaluate_grid(&loss, &w1, &w2, cfg.landscape.resolution)?;
    let path = cfg
        .out_dir
        .join("landscape")
        .join(format!("seed-{seed}-r{}.csv", cfg.landscape.resolution));
    let mut w = create(&path)?;
    let mut desc = format!(
        "{} states from {} mean-policy rollouts ({} visited)",
        batch.states.ncols(),
        cfg.landscape.episodes,
        batch.pool_size
    );
    if batch.with_replacement {
        desc.push_str(", sampled with replacement");
    }
    let zeroed = w1.zeroed.len() + w2.zeroed.len();
    if zeroed > 0 {
        desc.push_str(&format!(", {zeroed} zero-norm blocks left unperturbed"));
    }
    grid.write(&mut w, cfg.master_seed, &desc, &def.to_string())?;
    w.flush()?;
    Ok(LandscapeReport {
        path,
        center_loss: grid.center_loss,
        min_cell: grid.min_cell().map(|(i, j, v)| (grid.alphas[i], grid.betas[j], v)),
        center_percentile: grid.center_percentile(),
        non_finite: grid.non_finite,
        with_replacement: batch.with_replacement,
    })
}

#[derive(Debug, Clone)]
pub struct GapRow {
    pub policy: String,
    pub seed: Option<u64>,
    pub cost: f64,
    pub gap_pct: f64,
}

pub fn oracle(cfg: &ExperimentConfig) -> Result<(f64, Vec<GapRow>)> {
    let (scenario, env) = setup(cfg)?;
    let sol = solve(&env, &scenario, &cfg.grid(&scenario))?;
    let v0 = sol.initial_value();
    let stream = cfg.streams().derive("oracle");
    let episodes = cfg.oracle.episodes;
    let dims = env.dims();
    let gap = |c: f64| (c - v0) / v0 * 100.0;
    let mut rows = Vec::new();
    for name in &cfg.oracle.policies {
        let mut push = |seed: Option<u64>, cost: f64| {
            rows.push(GapRow {
                policy: name.clone(),
                seed,
                cost,
                gap_pct: gap(cost),
            })
        };
        match name.as_str() {
            "oracle" => push(
                None,
                evaluate_policy(&mut sol.greedy_policy(), &env, &scenario, episodes, stream)?
                    .summary
                    .mean,
            ),
            "mean" => push(
                None,
                evaluate_policy(&mut MeanOrder::new(dims, &scenario), &env, &scenario, episodes, stream)?
                    .summary
                    .mean,
            ),
            "order-up-to" => {
                let mut p = OrderUpTo::new(dims, &scenario, cfg.compare.service_level)?;
                push(
                    None,
                    evaluate_policy(&mut p, &env, &scenario, episodes, stream)?.summary.mean,
                )
            }
            "trained" => {
                let enc = InventoryEncoding::new(&env, &scenario);
                for &seed in &cfg.seeds {
                    let t = load_trained(cfg, seed, &env, &scenario)?;
                    let mut p = ActorPolicy::mean(&t.actor, &enc);
                    push(
                        Some(seed),
                        evaluate_policy(&mut p, &env, &scenario, episodes, stream)?.summary.mean,
                    );
                }
            }
            other => bail!("unknown policy '{other}'"),
        }
    }
    let mut w = create(&cfg.out_dir.join("oracle").join("values.csv"))?;
    sol.write_tables(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out_dir.join("oracle").join("gaps.csv"))?;
    writeln!(w, "# oracle V0 {v0}")?;
    writeln!(w, "policy,seed,mean_cost,gap_pct")?;
    for r in &rows {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{seed},{},{}", r.policy, r.cost, r.gap_pct)?;
    }
    w.flush()?;
    Ok((v0, rows))
}

pub fn scenario_export(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let scenario = cfg.scenario()?;
    let path = cfg.out_dir.join("scenario").join(format!("{}.csv", cfg.scenario.kind));
    let mut w = create(&path)?;
    if let Some(r) = scenario.repair() {
        writeln!(w, "# {r}")?;
    }
    scenario.write_trajectories(&mut w)?;
    w.flush()?;
    Ok(path)
}
