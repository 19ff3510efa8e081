//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use invscape_core::agent::{AgentConfig, Algorithm};
use invscape_core::demand::{kronecker_correlation, DemandScenario, ProfileParams, ScenarioKind};
use invscape_core::dp::DiscreteGrid;
use invscape_core::env::{mean_season_stock, CostParams, Dims, EnvState, InventoryEnv, RewardMode, RewardShaping};
use invscape_core::policies::estimate_reward_scale;
use invscape_core::seed::SeedStream;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub landscape: LandscapeSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub products: usize,
    pub stores: usize,
    pub depots: usize,
    pub horizon: usize,
    pub fixed_order: f64,
    pub unit_ship: f64,
    pub lost_sales: f64,
    pub holding: f64,
    pub salvage: f64,
    /// Defaults to `salvage`.
    pub depot_salvage: Option<f64>,
    pub gamma: f64,
    /// Per (product, depot); defaults to the season's mean demand split
    /// evenly over depots.
    pub initial_depot: Option<Vec<f64>>,
    /// Per (product, store); defaults to zero.
    pub initial_store: Option<Vec<f64>>,
    /// Reward scale; estimated from mean ordering when absent.
    pub reward_k: Option<f64>,
    /// "terminal" or "per-period".
    pub reward_mode: String,
    pub k_episodes: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            products: 2,
            stores: 2,
            depots: 1,
            horizon: 20,
            fixed_order: 0.0,
            unit_ship: 0.1,
            lost_sales: 50.0,
            holding: 1.0,
            salvage: 10.0,
            depot_salvage: None,
            gamma: 1.0,
            initial_depot: None,
            initial_store: None,
            reward_k: None,
            reward_mode: "terminal".into(),
            k_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub kind: String,
    pub base_mean: f64,
    pub amplitude: f64,
    pub cv: f64,
    pub product_rho: f64,
    pub store_rho: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: "decreasing".into(),
            base_mean: 10.0,
            amplitude: 5.0,
            cv: 0.25,
            product_rho: 0.3,
            store_rho: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub algorithm: String,
    pub steps: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    pub smoothing_std: f64,
    pub smoothing_clip: f64,
    pub exploration_std: f64,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub lr_decay: bool,
    pub buffer_capacity: usize,
    pub start_steps: usize,
    pub update_after: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let d = AgentConfig::default();
        Self {
            algorithm: d.algorithm.to_string(),
            steps: 100_000,
            alpha: d.alpha,
            gamma: d.gamma,
            tau: d.tau,
            policy_delay: d.policy_delay,
            smoothing_std: d.smoothing_std,
            smoothing_clip: d.smoothing_clip,
            exploration_std: d.exploration_std,
            batch_size: d.batch_size,
            updates_per_step: d.updates_per_step,
            hidden: d.hidden,
            actor_lr: d.actor_lr,
            critic_lr: d.critic_lr,
            lr_decay: d.lr_decay,
            buffer_capacity: d.buffer_capacity,
            start_steps: d.start_steps,
            update_after: d.update_after,
            eval_interval: d.eval_interval,
            eval_episodes: d.eval_episodes,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Any of "mean", "order-up-to", "trained".
    pub policies: Vec<String>,
    pub service_level: f64,
    /// Demand paths per seed.
    pub episodes: usize,
    /// Trained agents act with their mean action unless this is set.
    pub stochastic_actions: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            policies: vec!["mean".into(), "order-up-to".into(), "trained".into()],
            service_level: 0.95,
            episodes: 20,
            stochastic_actions: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeSection {
    pub resolution: usize,
    pub batch: usize,
    /// Rollouts pooled for the evaluation batch.
    pub episodes: usize,
    /// Which trained seed to slice; the first configured seed by default.
    pub seed: Option<u64>,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self {
            resolution: 51,
            batch: 1000,
            episodes: 100,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub stock_step: f64,
    /// Upper end of the store-stock axis; defaults to four times the peak
    /// mean demand.
    pub max_stock: Option<f64>,
    pub action_step: f64,
    pub quadrature_nodes: usize,
    pub budget: u64,
    pub episodes: usize,
    /// Policies evaluated against the oracle: "oracle", "mean",
    /// "order-up-to", "trained".
    pub policies: Vec<String>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            stock_step: 1.0,
            max_stock: None,
            action_step: 1.0,
            quadrature_nodes: 9,
            budget: invscape_core::dp::DEFAULT_BUDGET,
            episodes: 100,
            policies: vec!["oracle".into(), "mean".into(), "order-up-to".into()],
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub algo: Option<String>,
    pub resolution: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg: Self = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::parse("")?,
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.master_seed = s;
        }
        if let Some(o) = &ov.out {
            self.out_dir = o.clone();
        }
        if let Some(a) = &ov.algo {
            self.agent.algorithm = a.clone();
        }
        if let Some(r) = ov.resolution {
            self.landscape.resolution = r;
        }
    }

    /// Rejects inconsistent settings before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            bail!("seeds contain duplicates");
        }
        self.kind()?;
        self.algorithm()?;
        self.reward_mode()?;
        let dims = self.dims();
        if let Some(q) = &self.env.initial_depot {
            if q.len() != dims.depot_len() {
                bail!(
                    "initial_depot has {} entries, expected products x depots = {}",
                    q.len(),
                    dims.depot_len()
                );
            }
        }
        if let Some(i) = &self.env.initial_store {
            if i.len() != dims.store_len() {
                bail!(
                    "initial_store has {} entries, expected products x stores = {}",
                    i.len(),
                    dims.store_len()
                );
            }
        }
        if let Some(k) = self.env.reward_k {
            if !(k > 0.0 && k.is_finite()) {
                bail!("reward_k must be > 0");
            }
        } else if self.env.k_episodes == 0 {
            bail!("k_episodes must be >= 1 when reward_k is not given");
        }
        self.cost_params()?;
        self.scenario()?;
        self.agent_config(0)?.validate()?;
        if self.landscape.resolution < 3 || self.landscape.resolution.is_multiple_of(2) {
            bail!("landscape resolution must be odd and >= 3");
        }
        if self.landscape.batch == 0 || self.landscape.episodes == 0 {
            bail!("landscape batch and episodes must be >= 1");
        }
        if self.compare.episodes == 0 || self.oracle.episodes == 0 {
            bail!("episode counts must be >= 1");
        }
        for p in &self.compare.policies {
            if !["mean", "order-up-to", "trained"].contains(&p.as_str()) {
                bail!("unknown compare policy '{p}'");
            }
        }
        for p in &self.oracle.policies {
            if !["oracle", "mean", "order-up-to", "trained"].contains(&p.as_str()) {
                bail!("unknown oracle policy '{p}'");
            }
        }
        if !(self.compare.service_level > 0.0 && self.compare.service_level < 1.0) {
            bail!("service_level must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.env.products, self.env.stores, self.env.depots)
    }

    pub fn kind(&self) -> Result<ScenarioKind> {
        Ok(self.scenario.kind.parse()?)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Ok(self.agent.algorithm.parse()?)
    }

    fn reward_mode(&self) -> Result<RewardMode> {
        match self.env.reward_mode.as_str() {
            "terminal" => Ok(RewardMode::Terminal),
            "per-period" => Ok(RewardMode::PerPeriod),
            other => bail!("unknown reward_mode '{other}' (expected terminal or per-period)"),
        }
    }

    pub fn cost_params(&self) -> Result<CostParams> {
        let e = &self.env;
        let mut p = CostParams::uniform(
            self.dims(),
            e.fixed_order,
            e.unit_ship,
            e.lost_sales,
            e.holding,
            e.salvage,
            e.gamma,
            e.horizon,
        )?;
        if let Some(s) = e.depot_salvage {
            p.depot_salvage = vec![s; e.products];
        }
        p.validate()?;
        Ok(p)
    }

    pub fn scenario(&self) -> Result<DemandScenario> {
        let s = &self.scenario;
        let p = ProfileParams {
            base_mean: s.base_mean,
            amplitude: s.amplitude,
            cv: s.cv,
        };
        let corr = kronecker_correlation(self.env.products, self.env.stores, s.product_rho, s.store_rho);
        Ok(DemandScenario::make(
            self.kind()?,
            &p,
            self.env.horizon,
            self.env.products,
            self.env.stores,
            corr,
        )?)
    }

    /// Environment with the configured or estimated reward scale.
    pub fn environment(&self, scenario: &DemandScenario) -> Result<InventoryEnv> {
        let dims = self.dims();
        let depot = self
            .env
            .initial_depot
            .clone()
            .unwrap_or_else(|| mean_season_stock(dims, scenario));
        let store = self
            .env
            .initial_store
            .clone()
            .unwrap_or_else(|| vec![0.0; dims.store_len()]);
        let mode = self.reward_mode()?;
        let provisional = InventoryEnv::new(
            self.cost_params()?,
            EnvState::new(depot, store),
            RewardShaping { k: 1.0, mode },
        )?;
        let k = match self.env.reward_k {
            Some(k) => k,
            None => estimate_reward_scale(
                &provisional,
                scenario,
                self.env.k_episodes,
                self.streams().derive("reward-scale"),
            )?,
        };
        Ok(InventoryEnv {
            reward: RewardShaping { k, mode },
            ..provisional
        })
    }

    pub fn streams(&self) -> SeedStream {
        SeedStream::new(self.master_seed)
    }

    /// Agent settings for one training seed.
    pub fn agent_config(&self, seed: u64) -> Result<AgentConfig> {
        let a = &self.agent;
        Ok(AgentConfig {
            algorithm: self.algorithm()?,
            alpha: a.alpha,
            gamma: a.gamma,
            tau: a.tau,
            policy_delay: a.policy_delay,
            smoothing_std: a.smoothing_std,
            smoothing_clip: a.smoothing_clip,
            exploration_std: a.exploration_std,
            batch_size: a.batch_size,
            updates_per_step: a.updates_per_step,
            hidden: a.hidden.clone(),
            actor_lr: a.actor_lr,
            critic_lr: a.critic_lr,
            lr_decay: a.lr_decay,
            buffer_capacity: a.buffer_capacity,
            start_steps: a.start_steps,
            update_after: a.update_after,
            eval_interval: a.eval_interval,
            eval_episodes: a.eval_episodes,
            seed: self.streams().derive("train").index(seed),
        })
    }

    pub fn grid(&self, scenario: &DemandScenario) -> DiscreteGrid {
        let o = &self.oracle;
        DiscreteGrid {
            stock_step: o.stock_step,
            max_stock: o.max_stock.unwrap_or(4.0 * scenario.max_mean()),
            action_step: o.action_step,
            quadrature_nodes: o.quadrature_nodes,
            budget: o.budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let c = ExperimentConfig::parse("").unwrap();
        c.validate().unwrap();
        assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn rejects_bad_settings() {
        let bad = [
            "seeds = []",
            "seeds = [1, 1]",
            "[scenario]\nkind = \"weekly\"",
            "[agent]\nalgorithm = \"ppo\"",
            "[env]\nproducts = 2\ninitial_store = [1.0]",
            "[landscape]\nresolution = 4",
            "[env]\nreward_mode = \"sometimes\"",
            "[compare]\npolicies = [\"oracle\"]",
            "unknown = 1",
        ];
        for b in bad {
            let r = ExperimentConfig::parse(b).and_then(|c| c.validate());
            assert!(r.is_err(), "accepted: {b}");
        }
    }

    #[test]
    fn overrides_win() {
        let mut c = ExperimentConfig::parse("master_seed = 3").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            algo: Some("td3".into()),
            resolution: Some(5),
            ..Default::default()
        });
        assert_eq!(c.master_seed, 9);
        assert_eq!(c.algorithm().unwrap(), Algorithm::Td3);
        assert_eq!(c.landscape.resolution, 5);
    }
}
