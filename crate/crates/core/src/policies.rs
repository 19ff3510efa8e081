//! Heuristic ordering baselines, applied independently per (product, store).
//! Depot limits couple them only through [`crate::env::project_action`].

use statrs::distribution::{ContinuousCDF, Normal};

use crate::demand::DemandScenario;
use crate::env::{run_episode, ActionTensor, Dims, EnvState, InventoryEnv, Policy};
use crate::seed::SeedStream;
use crate::stats::Summary;
use crate::{Error, Result};

/// Per-series season-average mean demand.
pub fn average_means(scenario: &DemandScenario) -> Vec<f64> {
    let n = scenario.horizon() as f64;
    (0..scenario.series())
        .map(|k| scenario.series_mean(k).iter().sum::<f64>() / n)
        .collect()
}

/// Per-series standard deviation from the season-average variance.
pub fn average_stds(scenario: &DemandScenario) -> Vec<f64> {
    let n = scenario.horizon() as f64;
    (0..scenario.series())
        .map(|k| (scenario.series_std(k).iter().map(|s| s * s).sum::<f64>() / n).sqrt())
        .collect()
}

fn spread_over_depots(dims: Dims, per_series: &[f64]) -> Vec<f64> {
    let mut raw = vec![0.0; dims.action_len()];
    for i in 0..dims.products {
        for r in 0..dims.stores {
            let v = per_series[dims.s_idx(i, r)] / dims.depots as f64;
            for d in 0..dims.depots {
                raw[dims.a_idx(i, r, d)] = v;
            }
        }
    }
    raw
}

/// Ships the season-average mean demand every period.
#[derive(Debug, Clone)]
pub struct MeanOrder {
    dims: Dims,
    orders: Vec<f64>,
}

impl MeanOrder {
    pub fn new(dims: Dims, scenario: &DemandScenario) -> Self {
        Self {
            dims,
            orders: average_means(scenario),
        }
    }

    /// Order quantity per (product, store).
    pub fn orders(&self) -> &[f64] {
        &self.orders
    }
}

impl Policy for MeanOrder {
    fn act(&mut self, _state: &EnvState) -> Vec<f64> {
        spread_over_depots(self.dims, &self.orders)
    }
}

/// Order-up-to-S on the previous period's inventory position
/// `I_{t-1} + a_{t-1} - u_{t-1}` (not truncated at zero).
#[derive(Debug, Clone)]
pub struct OrderUpTo {
    dims: Dims,
    levels: Vec<f64>,
    memory: Option<Memory>,
}

#[derive(Debug, Clone)]
struct Memory {
    stock: Vec<f64>,
    shipped: Vec<f64>,
    demand: Vec<f64>,
}

impl OrderUpTo {
    /// `S` is the `service` quantile of a normal with the season-average mean
    /// and variance of each series.
    pub fn new(dims: Dims, scenario: &DemandScenario, service: f64) -> Result<Self> {
        let mu = average_means(scenario);
        let sd = average_stds(scenario);
        let levels = mu
            .iter()
            .zip(&sd)
            .map(|(&m, &s)| base_stock_level(m, s, service))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::with_levels(dims, levels))
    }

    pub fn with_levels(dims: Dims, levels: Vec<f64>) -> Self {
        assert_eq!(levels.len(), dims.store_len(), "one level per (product, store)");
        Self {
            dims,
            levels,
            memory: None,
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Inventory position each order is computed from.
    pub fn positions(&self, state: &EnvState) -> Vec<f64> {
        match &self.memory {
            None => state.store.clone(),
            Some(m) => (0..self.levels.len())
                .map(|k| m.stock[k] + m.shipped[k] - m.demand[k])
                .collect(),
        }
    }

    /// Orders per (product, store) before depot feasibility.
    pub fn orders(&self, state: &EnvState) -> Vec<f64> {
        self.positions(state)
            .iter()
            .zip(&self.levels)
            .map(|(p, s)| (s - p).max(0.0))
            .collect()
    }
}

/// Normal quantile `mean + std * z_service`; `mean` itself when `std` is 0.
pub fn base_stock_level(mean: f64, std: f64, service: f64) -> Result<f64> {
    if !(service > 0.0 && service < 1.0) {
        return Err(Error::Parameter(format!(
            "service level must lie in (0, 1), got {service}"
        )));
    }
    if std == 0.0 {
        return Ok(mean.max(0.0));
    }
    let n = Normal::new(mean, std).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(n.inverse_cdf(service).max(0.0))
}

impl Policy for OrderUpTo {
    fn reset(&mut self) {
        self.memory = None;
    }

    fn act(&mut self, state: &EnvState) -> Vec<f64> {
        spread_over_depots(self.dims, &self.orders(state))
    }

    fn observe(&mut self, state: &EnvState, shipped: &ActionTensor, demand: &[f64]) {
        let dims = self.dims;
        let mut arrived = vec![0.0; dims.store_len()];
        for i in 0..dims.products {
            for r in 0..dims.stores {
                arrived[dims.s_idx(i, r)] = shipped.to_store(dims, i, r);
            }
        }
        self.memory = Some(Memory {
            stock: state.store.clone(),
            shipped: arrived,
            demand: demand.to_vec(),
        });
    }
}

/// Default reward scale: mean total cost of mean-ordering over `episodes`
/// Monte-Carlo seasons.
pub fn estimate_reward_scale(
    env: &InventoryEnv,
    scenario: &DemandScenario,
    episodes: usize,
    seed: SeedStream,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Parameter("need at least one episode to estimate k".into()));
    }
    let mut pol = MeanOrder::new(env.dims(), scenario);
    let costs = (0..episodes as u64)
        .map(|e| run_episode(&mut pol, scenario, env, seed.index(e)).map(|r| r.total_cost))
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary::from_slice(&costs).mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{ProfileParams, ScenarioKind};
    use crate::env::{project_action, CostParams, RewardShaping};
    use nalgebra::DMatrix;

    fn scenario(kind: ScenarioKind, base: f64, amp: f64, cv: f64, n: usize) -> DemandScenario {
        let p = ProfileParams {
            base_mean: base,
            amplitude: amp,
            cv,
        };
        DemandScenario::make(kind, &p, n, 1, 1, DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn mean_order_amounts() {
        let d = Dims::new(1, 1, 1);
        let s = scenario(ScenarioKind::Increasing, 10.0, 5.0, 0.0, 3);
        let mut m = MeanOrder::new(d, &s);
        assert_eq!(m.act(&EnvState::new(vec![100.0], vec![0.0])), vec![10.0]);
        let s = scenario(ScenarioKind::Stationary, 10.0, 0.0, 0.2, 20);
        let mut m = MeanOrder::new(d, &s);
        let st = EnvState::new(vec![7.0], vec![0.0]);
        let raw = m.act(&st);
        assert_eq!(raw, vec![10.0]);
        assert_eq!(project_action(d, &raw, &st).ship, vec![7.0]);
    }

    #[test]
    fn base_stock_level_95() {
        let s = base_stock_level(10.0, 2.0, 0.95).unwrap();
        assert!((s - 13.289_707_253_902_945).abs() < 1e-9, "{s}");
        assert!(matches!(base_stock_level(10.0, 2.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(base_stock_level(10.0, 2.0, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn order_up_to_uses_previous_position() {
        let d = Dims::new(1, 1, 1);
        let mut p = OrderUpTo::with_levels(d, vec![10.0]);
        let st = EnvState::new(vec![100.0], vec![3.0]);
        p.observe(&st, &ActionTensor { ship: vec![2.0] }, &[4.0]);
        assert_eq!(p.act(&st), vec![9.0]);
        p.observe(&st, &ActionTensor { ship: vec![12.0] }, &[1.0]);
        assert_eq!(p.act(&st), vec![0.0]);
        p.reset();
        assert_eq!(p.act(&EnvState::new(vec![100.0], vec![4.0])), vec![6.0]);
    }

    #[test]
    fn order_up_to_averages_variance() {
        let mean = vec![vec![10.0, 10.0]];
        let std = vec![vec![1.0, 7.0f64.sqrt()]];
        let s = DemandScenario::new(1, 1, mean, std, DMatrix::identity(1, 1)).unwrap();
        assert!((average_stds(&s)[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reward_scale_is_mean_order_cost() {
        let d = Dims::new(1, 1, 1);
        let env = InventoryEnv::new(
            CostParams::reference(d, 4),
            EnvState::new(vec![20.0], vec![0.0]),
            RewardShaping::terminal(1.0),
        )
        .unwrap();
        let s = DemandScenario::deterministic(5.0, 4).unwrap();
        let k = estimate_reward_scale(&env, &s, 3, SeedStream::new(1)).unwrap();
        assert!((k - 2.0).abs() < 1e-12);
    }
}
