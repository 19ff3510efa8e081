//! Seasonal inventory MDP.
//!
//! Stock is procured once into depots at the start of the season and
//! distributed to stores period by period. Unmet demand is lost. At the end
//! of the season leftover stock is charged a salvage cost (plus one more
//! period of holding for store stock).
//!
//! Index layout, all row-major:
//! - depot stock `q[product][depot]`
//! - store stock `I[product][store]`
//! - shipments `a[product][store][depot]`
//! - demand `u[product][store]`

use std::io::Write;

use rand::Rng;

use crate::demand::DemandScenario;
use crate::seed::SeedStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub products: usize,
    pub stores: usize,
    pub depots: usize,
}

impl Dims {
    pub fn new(products: usize, stores: usize, depots: usize) -> Self {
        Self {
            products,
            stores,
            depots,
        }
    }

    pub fn action_len(&self) -> usize {
        self.products * self.stores * self.depots
    }

    pub fn depot_len(&self) -> usize {
        self.products * self.depots
    }

    pub fn store_len(&self) -> usize {
        self.products * self.stores
    }

    #[inline]
    pub fn a_idx(&self, i: usize, r: usize, d: usize) -> usize {
        (i * self.stores + r) * self.depots + d
    }

    #[inline]
    pub fn q_idx(&self, i: usize, d: usize) -> usize {
        i * self.depots + d
    }

    #[inline]
    pub fn s_idx(&self, i: usize, r: usize) -> usize {
        i * self.stores + r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub dims: Dims,
    /// Fixed cost per nonzero shipment, `[product][store][depot]`.
    pub fixed_order: Vec<f64>,
    /// Variable cost per unit shipped.
    pub unit_ship: f64,
    /// `[product][store]`
    pub lost_sales: Vec<f64>,
    /// `[product][store]`, per unit per period.
    pub holding: Vec<f64>,
    /// `[product][store]`, per leftover store unit.
    pub salvage: Vec<f64>,
    /// `[product]`, per leftover depot unit.
    pub depot_salvage: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
}

impl CostParams {
    /// Same coefficients for every index; depot salvage equals store salvage.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        dims: Dims,
        fixed: f64,
        unit_ship: f64,
        lost_sales: f64,
        holding: f64,
        salvage: f64,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self> {
        let p = Self {
            dims,
            fixed_order: vec![fixed; dims.action_len()],
            unit_ship,
            lost_sales: vec![lost_sales; dims.store_len()],
            holding: vec![holding; dims.store_len()],
            salvage: vec![salvage; dims.store_len()],
            depot_salvage: vec![salvage; dims.products],
            gamma,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    /// K=0, W=0.1, f=50, h=1, s=10, undiscounted.
    pub fn reference(dims: Dims, horizon: usize) -> Self {
        Self::uniform(dims, 0.0, 0.1, 50.0, 1.0, 10.0, 1.0, horizon).expect("reference costs are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.products == 0 || d.stores == 0 || d.depots == 0 {
            return Err(Error::Config("products, stores and depots must all be >= 1".into()));
        }
        let check_len = |name: &str, v: &[f64], n: usize| {
            if v.len() != n {
                return Err(Error::Config(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("{name} entries must be finite and >= 0")));
            }
            Ok(())
        };
        check_len("fixed_order", &self.fixed_order, d.action_len())?;
        check_len("lost_sales", &self.lost_sales, d.store_len())?;
        check_len("holding", &self.holding, d.store_len())?;
        check_len("salvage", &self.salvage, d.store_len())?;
        check_len("depot_salvage", &self.depot_salvage, d.products)?;
        check_len("unit_ship", &[self.unit_ship], 1)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// `[product][depot]`
    pub depot: Vec<f64>,
    /// `[product][store]`
    pub store: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    pub fn new(depot: Vec<f64>, store: Vec<f64>) -> Self {
        Self { depot, store, t: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionTensor {
    /// `[product][store][depot]`
    pub ship: Vec<f64>,
}

impl ActionTensor {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            ship: vec![0.0; dims.action_len()],
        }
    }

    /// Total shipped to store `r` of product `i`, over all depots.
    pub fn to_store(&self, dims: Dims, i: usize, r: usize) -> f64 {
        (0..dims.depots).map(|d| self.ship[dims.a_idx(i, r, d)]).sum()
    }

    /// Total shipped out of depot `d` for product `i`, summed over stores in order.
    pub fn from_depot(&self, dims: Dims, i: usize, d: usize) -> f64 {
        (0..dims.stores).map(|r| self.ship[dims.a_idx(i, r, d)]).sum()
    }
}

fn check_shapes(dims: Dims, action: &ActionTensor, state: &EnvState, demand: &[f64]) -> Result<()> {
    if action.ship.len() != dims.action_len()
        || state.depot.len() != dims.depot_len()
        || state.store.len() != dims.store_len()
        || demand.len() != dims.store_len()
    {
        return Err(Error::Shape(format!(
            "action/depot/store/demand lengths {}/{}/{}/{} do not match dims {:?}",
            action.ship.len(),
            state.depot.len(),
            state.store.len(),
            demand.len(),
            dims
        )));
    }
    Ok(())
}

/// Checks nonnegativity and per-(product, depot) stock limits.
pub fn check_feasible(dims: Dims, action: &ActionTensor, state: &EnvState) -> Result<()> {
    for i in 0..dims.products {
        for d in 0..dims.depots {
            let shipped = action.from_depot(dims, i, d);
            let available = state.depot[dims.q_idx(i, d)];
            let negative = (0..dims.stores).any(|r| !(action.ship[dims.a_idx(i, r, d)] >= 0.0));
            if negative || !(shipped <= available) {
                return Err(Error::Infeasible {
                    product: i,
                    depot: d,
                    shipped,
                    available,
                });
            }
        }
    }
    Ok(())
}

/// One period's cost for shipments `action` arriving before demand `demand`.
pub fn immediate_cost(action: &ActionTensor, state: &EnvState, demand: &[f64], params: &CostParams) -> Result<f64> {
    let dims = params.dims;
    check_shapes(dims, action, state, demand)?;
    check_feasible(dims, action, state)?;
    if demand.iter().any(|u| !(*u >= 0.0)) {
        return Err(Error::Parameter("demand entries must be >= 0".into()));
    }
    Ok(cost_unchecked(dims, action, state, demand, params))
}

fn cost_unchecked(dims: Dims, action: &ActionTensor, state: &EnvState, demand: &[f64], params: &CostParams) -> f64 {
    let mut c = 0.0;
    for i in 0..dims.products {
        for r in 0..dims.stores {
            let mut arriving = 0.0;
            for d in 0..dims.depots {
                let k = dims.a_idx(i, r, d);
                let a = action.ship[k];
                if a > 0.0 {
                    c += params.fixed_order[k];
                }
                c += params.unit_ship * a;
                arriving += a;
            }
            let s = dims.s_idx(i, r);
            let on_hand = state.store[s] + arriving;
            c += params.lost_sales[s] * (demand[s] - on_hand).max(0.0);
            c += params.holding[s] * (on_hand - demand[s]).max(0.0);
        }
    }
    c
}

/// Salvage of everything left at the end of the season.
pub fn terminal_cost(state: &EnvState, params: &CostParams) -> Result<f64> {
    if state.t != params.horizon {
        return Err(Error::Sequencing(format!(
            "terminal cost requested at period {} before horizon {}",
            state.t, params.horizon
        )));
    }
    let dims = params.dims;
    let mut c = 0.0;
    for i in 0..dims.products {
        for d in 0..dims.depots {
            c += state.depot[dims.q_idx(i, d)] * params.depot_salvage[i];
        }
        for r in 0..dims.stores {
            let s = dims.s_idx(i, r);
            c += state.store[s] * (params.holding[s] + params.salvage[s]);
        }
    }
    Ok(c)
}

/// Advances one period. Returns the next state and the period's cost.
pub fn step(state: &EnvState, action: &ActionTensor, demand: &[f64], params: &CostParams) -> Result<(EnvState, f64)> {
    if state.t >= params.horizon {
        return Err(Error::EpisodeFinished {
            t: state.t,
            horizon: params.horizon,
        });
    }
    let cost = immediate_cost(action, state, demand, params)?;
    let dims = params.dims;
    let mut next = state.clone();
    for i in 0..dims.products {
        for r in 0..dims.stores {
            let s = dims.s_idx(i, r);
            next.store[s] = (state.store[s] + action.to_store(dims, i, r) - demand[s]).max(0.0);
        }
        for d in 0..dims.depots {
            let q = dims.q_idx(i, d);
            next.depot[q] = state.depot[q] - action.from_depot(dims, i, d);
        }
    }
    next.t = state.t + 1;
    Ok((next, cost))
}

/// Maps an arbitrary real tensor onto the feasible set: negatives (and NaN)
/// become zero, then every (product, depot) slice whose total exceeds the
/// depot stock is scaled down proportionally to meet it with equality.
pub fn project_action(dims: Dims, raw: &[f64], state: &EnvState) -> ActionTensor {
    assert_eq!(raw.len(), dims.action_len(), "raw action length");
    let mut ship: Vec<f64> = raw
        .iter()
        .map(|&x| if x > 0.0 { x.min(f64::MAX) } else { 0.0 })
        .collect();
    for i in 0..dims.products {
        for d in 0..dims.depots {
            let avail = state.depot[dims.q_idx(i, d)].max(0.0);
            let idx: Vec<usize> = (0..dims.stores).map(|r| dims.a_idx(i, r, d)).collect();
            let total: f64 = idx.iter().map(|&k| ship[k]).sum();
            if total <= avail {
                continue;
            }
            let scale = avail / total;
            for &k in &idx {
                ship[k] *= scale;
            }
            // rounding can leave the scaled sum a few ulps above the limit
            loop {
                let total: f64 = idx.iter().map(|&k| ship[k]).sum();
                if total <= avail {
                    break;
                }
                let &big = idx
                    .iter()
                    .max_by(|&&a, &&b| ship[a].total_cmp(&ship[b]))
                    .expect("at least one store");
                ship[big] = (ship[big] - (total - avail)).max(0.0);
                if total - avail < f64::EPSILON * avail.max(1.0) {
                    ship[big] = next_down(ship[big]).max(0.0);
                }
            }
        }
    }
    ActionTensor { ship }
}

fn next_down(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

/// How the end-of-episode cost becomes a learning signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardMode {
    /// `k / total cost` on the final transition, zero elsewhere.
    Terminal,
    /// `-cost_t / k` every period, terminal cost added to the final one.
    PerPeriod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardShaping {
    pub k: f64,
    pub mode: RewardMode,
}

impl RewardShaping {
    pub fn terminal(k: f64) -> Self {
        Self {
            k,
            mode: RewardMode::Terminal,
        }
    }

    /// `k / total`, guarded against a zero-cost episode.
    pub fn episode_reward(&self, total_cost: f64) -> f64 {
        self.k / total_cost.max(1e-12)
    }
}

/// Inventory environment: costs, starting stock and reward shaping.
#[derive(Debug, Clone)]
pub struct InventoryEnv {
    pub params: CostParams,
    pub initial: EnvState,
    pub reward: RewardShaping,
}

impl InventoryEnv {
    pub fn new(params: CostParams, initial: EnvState, reward: RewardShaping) -> Result<Self> {
        params.validate()?;
        let dims = params.dims;
        if initial.depot.len() != dims.depot_len() || initial.store.len() != dims.store_len() {
            return Err(Error::Config("initial stock does not match dimensions".into()));
        }
        if initial.depot.iter().chain(&initial.store).any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("initial stock must be >= 0".into()));
        }
        if initial.t != 0 {
            return Err(Error::Config("initial state must be at period 0".into()));
        }
        if !(reward.k > 0.0) {
            return Err(Error::Config(format!("reward scale k must be > 0, got {}", reward.k)));
        }
        Ok(Self {
            params,
            initial,
            reward,
        })
    }

    pub fn dims(&self) -> Dims {
        self.params.dims
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    /// Checks that a scenario matches this environment's shape.
    pub fn check_scenario(&self, scenario: &DemandScenario) -> Result<()> {
        let d = self.dims();
        if scenario.horizon() != self.horizon() {
            return Err(Error::Config(format!(
                "scenario horizon {} does not match environment horizon {}",
                scenario.horizon(),
                self.horizon()
            )));
        }
        if scenario.products() != d.products || scenario.stores() != d.stores {
            return Err(Error::Config(format!(
                "scenario is {}x{} but environment has {} products and {} stores",
                scenario.products(),
                scenario.stores(),
                d.products,
                d.stores
            )));
        }
        Ok(())
    }
}

/// Total mean season demand per product, split evenly over depots.
pub fn mean_season_stock(dims: Dims, scenario: &DemandScenario) -> Vec<f64> {
    let mut q = vec![0.0; dims.depot_len()];
    for i in 0..dims.products {
        let total: f64 = (0..dims.stores)
            .map(|r| (0..scenario.horizon()).map(|t| scenario.mean(i, r, t)).sum::<f64>())
            .sum();
        for d in 0..dims.depots {
            q[dims.q_idx(i, d)] = total / dims.depots as f64;
        }
    }
    q
}

/// A decision rule mapping states to raw (unprojected) shipments.
pub trait Policy {
    /// Called once before each episode.
    fn reset(&mut self) {}

    /// Raw action of length `products * stores * depots`.
    fn act(&mut self, state: &EnvState) -> Vec<f64>;

    /// Called after each period with the shipped action and realized demand.
    fn observe(&mut self, _state: &EnvState, _shipped: &ActionTensor, _demand: &[f64]) {}
}

/// Adapts a closure into a memoryless [`Policy`].
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&EnvState) -> Vec<f64>> Policy for FnPolicy<F> {
    fn act(&mut self, state: &EnvState) -> Vec<f64> {
        (self.0)(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub state: EnvState,
    pub action: ActionTensor,
    pub demand: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub dims: Dims,
    pub periods: Vec<PeriodRecord>,
    pub final_state: EnvState,
    pub terminal_cost: f64,
    /// Discounted sum of period costs plus discounted terminal cost.
    pub total_cost: f64,
    pub reward: f64,
}

impl EpisodeRecord {
    /// Rows `t, q.., I.., a.., u.., cost`, then a trailing comment with the
    /// terminal and total cost.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims;
        let mut header = vec!["t".to_string()];
        for i in 0..d.products {
            for dd in 0..d.depots {
                header.push(format!("q_{i}_{dd}"));
            }
        }
        for i in 0..d.products {
            for r in 0..d.stores {
                header.push(format!("I_{i}_{r}"));
            }
        }
        for i in 0..d.products {
            for r in 0..d.stores {
                for dd in 0..d.depots {
                    header.push(format!("a_{i}_{r}_{dd}"));
                }
            }
        }
        for i in 0..d.products {
            for r in 0..d.stores {
                header.push(format!("u_{i}_{r}"));
            }
        }
        header.push("cost".into());
        writeln!(w, "{}", header.join(","))?;
        for p in &self.periods {
            let mut row = vec![p.state.t.to_string()];
            row.extend(p.state.depot.iter().map(|x| x.to_string()));
            row.extend(p.state.store.iter().map(|x| x.to_string()));
            row.extend(p.action.ship.iter().map(|x| x.to_string()));
            row.extend(p.demand.iter().map(|x| x.to_string()));
            row.push(p.cost.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        writeln!(
            w,
            "# terminal_cost={},total_cost={},reward={}",
            self.terminal_cost, self.total_cost, self.reward
        )?;
        Ok(())
    }
}

/// Simulates one season. Demand is drawn from `seed`'s stream, one period at
/// a time; every policy output passes through [`project_action`].
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    scenario: &DemandScenario,
    env: &InventoryEnv,
    seed: SeedStream,
) -> Result<EpisodeRecord> {
    let mut rng = seed.rng();
    run_episode_with(policy, env, |t, _| scenario.sample_period(t, &mut rng), scenario)
}

/// As [`run_episode`] but with demand supplied by `demand(t, state)`.
pub fn run_episode_with<P, D>(
    policy: &mut P,
    env: &InventoryEnv,
    mut demand: D,
    scenario: &DemandScenario,
) -> Result<EpisodeRecord>
where
    P: Policy + ?Sized,
    D: FnMut(usize, &EnvState) -> Result<Vec<f64>>,
{
    env.check_scenario(scenario)?;
    let params = &env.params;
    let dims = params.dims;
    policy.reset();
    let mut state = env.initial.clone();
    let mut periods = Vec::with_capacity(params.horizon);
    let mut total = 0.0;
    let mut discount = 1.0;
    while state.t < params.horizon {
        let raw = policy.act(&state);
        if raw.len() != dims.action_len() {
            return Err(Error::Shape(format!(
                "policy returned {} action entries, expected {}",
                raw.len(),
                dims.action_len()
            )));
        }
        let action = project_action(dims, &raw, &state);
        let u = demand(state.t, &state)?;
        let (next, cost) = step(&state, &action, &u, params)?;
        policy.observe(&state, &action, &u);
        total += discount * cost;
        discount *= params.gamma;
        periods.push(PeriodRecord {
            state,
            action,
            demand: u,
            cost,
        });
        state = next;
    }
    let terminal = terminal_cost(&state, params)?;
    total += discount * terminal;
    Ok(EpisodeRecord {
        dims,
        periods,
        final_state: state,
        terminal_cost: terminal,
        total_cost: total,
        reward: env.reward.episode_reward(total),
    })
}

/// Uniform random raw actions in `[-scale/2, scale]`, for fuzzing.
pub struct RandomPolicy<R> {
    pub dims: Dims,
    pub scale: f64,
    pub rng: R,
}

impl<R: Rng> Policy for RandomPolicy<R> {
    fn act(&mut self, _state: &EnvState) -> Vec<f64> {
        (0..self.dims.action_len())
            .map(|_| self.rng.random_range(-0.5 * self.scale..self.scale))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> Dims {
        Dims::new(1, 1, 1)
    }

    fn params(horizon: usize) -> CostParams {
        CostParams::reference(one(), horizon)
    }

    fn st(q: f64, i: f64) -> EnvState {
        EnvState::new(vec![q], vec![i])
    }

    fn act(a: f64) -> ActionTensor {
        ActionTensor { ship: vec![a] }
    }

    #[test]
    fn immediate_cost_examples() {
        let p = params(5);
        assert!((immediate_cost(&act(5.0), &st(10.0, 0.0), &[3.0], &p).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(immediate_cost(&act(0.0), &st(10.0, 1.0), &[4.0], &p).unwrap(), 150.0);
        assert_eq!(immediate_cost(&act(0.0), &st(0.0, 0.0), &[0.0], &p).unwrap(), 0.0);
    }

    #[test]
    fn fixed_cost_charged_per_nonzero_shipment() {
        let dims = Dims::new(1, 2, 2);
        let p = CostParams::uniform(dims, 3.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1).unwrap();
        let s = EnvState::new(vec![5.0, 5.0], vec![0.0, 0.0]);
        let a = ActionTensor {
            ship: vec![1.0, 0.0, 1.0, 2.0],
        };
        assert_eq!(immediate_cost(&a, &s, &[0.0, 0.0], &p).unwrap(), 9.0);
    }

    #[test]
    fn infeasible_action_names_product_and_depot() {
        let dims = Dims::new(2, 1, 1);
        let p = CostParams::reference(dims, 3);
        let s = EnvState::new(vec![5.0, 1.0], vec![0.0, 0.0]);
        let a = ActionTensor { ship: vec![1.0, 2.0] };
        match immediate_cost(&a, &s, &[0.0, 0.0], &p) {
            Err(Error::Infeasible { product, depot, .. }) => assert_eq!((product, depot), (1, 0)),
            other => panic!("expected infeasible, got {other:?}"),
        }
        let neg = ActionTensor { ship: vec![-1.0, 0.0] };
        assert!(matches!(
            check_feasible(dims, &neg, &s),
            Err(Error::Infeasible { product: 0, .. })
        ));
    }

    #[test]
    fn terminal_cost_examples() {
        let p = params(2);
        let mut s = st(0.0, 0.0);
        s.t = 2;
        assert_eq!(terminal_cost(&s, &p).unwrap(), 0.0);
        let mut s = st(10.0, 0.0);
        s.t = 2;
        assert_eq!(terminal_cost(&s, &p).unwrap(), 100.0);
        let mut s = st(0.0, 3.0);
        s.t = 2;
        assert_eq!(terminal_cost(&s, &p).unwrap(), 33.0);
        assert!(matches!(terminal_cost(&st(1.0, 1.0), &p), Err(Error::Sequencing(_))));
    }

    #[test]
    fn step_examples() {
        let p = params(3);
        let (n, _) = step(&st(10.0, 2.0), &act(3.0), &[4.0], &p).unwrap();
        assert_eq!((n.depot[0], n.store[0], n.t), (7.0, 1.0, 1));
        let (n, _) = step(&st(10.0, 0.0), &act(0.0), &[5.0], &p).unwrap();
        assert_eq!(n.store[0], 0.0);
        let (n, _) = step(&st(10.0, 1.0), &act(1.0), &[0.0], &p).unwrap();
        assert_eq!(n.store[0], 2.0);
        let mut done = st(10.0, 0.0);
        done.t = 3;
        assert!(matches!(
            step(&done, &act(0.0), &[0.0], &p),
            Err(Error::EpisodeFinished { .. })
        ));
        assert!(matches!(
            step(&st(1.0, 0.0), &act(2.0), &[0.0], &p),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let dims = Dims::new(1, 2, 1);
        let s = EnvState::new(vec![10.0], vec![0.0, 0.0]);
        assert_eq!(project_action(dims, &[6.0, 6.0], &s).ship, vec![5.0, 5.0]);
        assert_eq!(project_action(dims, &[-1.0, 4.0], &s).ship, vec![0.0, 4.0]);
        let z = EnvState::new(vec![0.0], vec![0.0, 0.0]);
        assert_eq!(project_action(dims, &[0.0, 0.0], &z).ship, vec![0.0, 0.0]);
        assert_eq!(project_action(dims, &[f64::NAN, 3.0], &s).ship, vec![0.0, 3.0]);
    }

    #[test]
    fn projection_is_exactly_feasible_for_awkward_ratios() {
        let dims = Dims::new(1, 3, 1);
        for q in [0.1, 1.0 / 3.0, 7.7, 1e-9, 123.456] {
            let s = EnvState::new(vec![q], vec![0.0; 3]);
            let a = project_action(dims, &[0.3, 0.7, 1.1], &s);
            assert!(a.from_depot(dims, 0, 0) <= q);
            check_feasible(dims, &a, &s).unwrap();
        }
    }

    #[test]
    fn salvage_only_episode() {
        let env = InventoryEnv::new(params(2), st(10.0, 0.0), RewardShaping::terminal(1.0)).unwrap();
        let sc = DemandScenario::deterministic(0.0, 2).unwrap();
        let mut pol = FnPolicy(|_: &EnvState| vec![0.0]);
        let rec = run_episode(&mut pol, &sc, &env, SeedStream::new(0)).unwrap();
        assert_eq!(rec.total_cost, 100.0);
        assert_eq!(rec.terminal_cost, 100.0);
        assert_eq!(rec.reward, 1.0 / 100.0);
    }

    #[test]
    fn one_period_brute_force() {
        // brute force over integer shipments 0..=10 with u = 5
        let env = InventoryEnv::new(params(1), st(10.0, 0.0), RewardShaping::terminal(7.0)).unwrap();
        let sc = DemandScenario::deterministic(5.0, 1).unwrap();
        let costs: Vec<f64> = (0..=10)
            .map(|a| {
                let mut pol = FnPolicy(move |_: &EnvState| vec![a as f64]);
                run_episode(&mut pol, &sc, &env, SeedStream::new(1)).unwrap().total_cost
            })
            .collect();
        let (best, &c) = costs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(best, 5);
        assert!((c - 50.5).abs() < 1e-12);
        let mut pol = FnPolicy(|_: &EnvState| vec![5.0]);
        let rec = run_episode(&mut pol, &sc, &env, SeedStream::new(1)).unwrap();
        assert_eq!(rec.reward, 7.0 / rec.total_cost);
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let env = InventoryEnv::new(params(3), st(10.0, 0.0), RewardShaping::terminal(1.0)).unwrap();
        let sc = DemandScenario::deterministic(1.0, 2).unwrap();
        let mut pol = FnPolicy(|_: &EnvState| vec![0.0]);
        assert!(matches!(
            run_episode(&mut pol, &sc, &env, SeedStream::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn lost_sales_slope_is_f() {
        let p = params(3);
        let s = st(10.0, 1.0);
        let base = immediate_cost(&act(2.0), &s, &[4.0], &p).unwrap();
        let more = immediate_cost(&act(2.0), &s, &[6.5], &p).unwrap();
        assert!((more - base - 50.0 * 2.5).abs() < 1e-9);
    }

    #[test]
    fn csv_export_has_row_per_period() {
        let env = InventoryEnv::new(params(3), st(10.0, 0.0), RewardShaping::terminal(1.0)).unwrap();
        let sc = DemandScenario::deterministic(2.0, 3).unwrap();
        let mut pol = FnPolicy(|_: &EnvState| vec![2.0]);
        let rec = run_episode(&mut pol, &sc, &env, SeedStream::new(0)).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,q_0_0,I_0_0,a_0_0_0,u_0_0,cost");
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[1].starts_with("0,10,0,2,2,"));
    }
}
