//! Exact small-instance oracle: backward induction over a discretized
//! (depot stock, store stock) grid for one product, one store, one depot.
//! Also hosts Monte-Carlo policy evaluation shared by the comparison tools.

use std::io::Write;

use nalgebra::DMatrix;

use crate::demand::DemandScenario;
use crate::env::{run_episode, EnvState, InventoryEnv, Policy};
use crate::seed::SeedStream;
use crate::stats::{improvement_pct, Summary};
use crate::{Error, Result};

/// Default cap on `grid points x actions x nodes x periods`.
pub const DEFAULT_BUDGET: u64 = 2_000_000_000;

/// Discretization of the single-store recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGrid {
    pub stock_step: f64,
    /// Upper end of the store-stock axis; the depot axis ends at the initial
    /// depot stock.
    pub max_stock: f64,
    pub action_step: f64,
    pub quadrature_nodes: usize,
    pub budget: u64,
}

impl DiscreteGrid {
    pub fn new(stock_step: f64, max_stock: f64, action_step: f64) -> Self {
        Self {
            stock_step,
            max_stock,
            action_step,
            quadrature_nodes: 9,
            budget: DEFAULT_BUDGET,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.stock_step > 0.0 && self.action_step > 0.0) {
            return Err(Error::Parameter("grid steps must be > 0".into()));
        }
        if !(self.max_stock >= 0.0) {
            return Err(Error::Parameter("max_stock must be >= 0".into()));
        }
        if self.quadrature_nodes == 0 {
            return Err(Error::Parameter("need at least one quadrature node".into()));
        }
        Ok(())
    }
}

/// Points `0, step, 2 step, ...` below `max`, then `max` itself.
pub fn axis(step: f64, max: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut k = 0u64;
    loop {
        let x = k as f64 * step;
        if x >= max - 1e-12 * max.max(1.0) {
            break;
        }
        v.push(x);
        k += 1;
    }
    v.push(max);
    v
}

/// Gauss-Hermite rule for `N(0, 1)` with `n` nodes (Golub-Welsch), weights
/// normalized to sum to 1.
pub fn standard_normal_rule(n: usize) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(0.0, 1.0)];
    }
    let j = DMatrix::from_fn(n, n, |a, b| {
        if a + 1 == b || b + 1 == a {
            (a.max(b) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = j.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (std::f64::consts::SQRT_2 * eig.eigenvalues[k], v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s: f64 = rule.iter().map(|r| r.1).sum();
    for r in &mut rule {
        r.1 /= s;
    }
    rule
}

/// Demand nodes and weights for one period: the normal rule mapped to
/// `mean + std * z` and truncated at zero, matching the simulator.
pub fn demand_rule(mean: f64, std: f64, n: usize) -> Vec<(f64, f64)> {
    if std == 0.0 {
        return vec![(mean.max(0.0), 1.0)];
    }
    standard_normal_rule(n)
        .into_iter()
        .map(|(z, w)| ((mean + std * z).max(0.0), w))
        .collect()
}

/// Bilinear interpolation on a rectilinear grid, clamped to the hull.
fn interp(xs: &[f64], ys: &[f64], v: &[f64], x: f64, y: f64) -> f64 {
    let (i0, i1, tx) = bracket(xs, x);
    let (j0, j1, ty) = bracket(ys, y);
    let ny = ys.len();
    let at = |i: usize, j: usize| v[i * ny + j];
    let a = at(i0, j0) * (1.0 - ty) + at(i0, j1) * ty;
    let b = at(i1, j0) * (1.0 - ty) + at(i1, j1) * ty;
    a * (1.0 - tx) + b * tx
}

fn bracket(xs: &[f64], x: f64) -> (usize, usize, f64) {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return (0, 0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = xs.partition_point(|&g| g <= x);
    let lo = hi - 1;
    if xs[lo] == x {
        return (lo, lo, 0.0);
    }
    (lo, hi, (x - xs[lo]) / (xs[hi] - xs[lo]))
}

/// Solved value and greedy-policy tables.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub depot_axis: Vec<f64>,
    pub store_axis: Vec<f64>,
    /// `values[t][iq * n_store + ii]` for `t` in `0..=N`.
    pub values: Vec<Vec<f64>>,
    /// Greedy shipment per grid point for `t` in `0..N`.
    pub policy: Vec<Vec<f64>>,
    action_step: f64,
    rules: Vec<Vec<(f64, f64)>>,
    env: InventoryEnv,
}

fn check_single(env: &InventoryEnv, scenario: &DemandScenario) -> Result<()> {
    let d = env.dims();
    if d.products != 1 || d.stores != 1 || d.depots != 1 {
        return Err(Error::Size(format!(
            "the DP oracle only handles 1 product x 1 store x 1 depot, got {}x{}x{}",
            d.products, d.stores, d.depots
        )));
    }
    env.check_scenario(scenario)
}

fn candidate_actions(q: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = (q / step).floor() as u64;
    (0..=n)
        .map(move |k| k as f64 * step)
        .filter(move |&a| a < q)
        .chain(std::iter::once(q))
}

impl OracleSolution {
    fn stage_cost(&self, t: usize, q: f64, i: f64, a: f64) -> f64 {
        let p = &self.env.params;
        let (k, w, f, h) = (p.fixed_order[0], p.unit_ship, p.lost_sales[0], p.holding[0]);
        let next = &self.values[t + 1];
        let mut total = 0.0;
        for &(u, wt) in &self.rules[t] {
            let on_hand = i + a;
            let mut c = w * a + f * (u - on_hand).max(0.0) + h * (on_hand - u).max(0.0);
            if a > 0.0 {
                c += k;
            }
            let i_next = (on_hand - u).max(0.0);
            let v = interp(&self.depot_axis, &self.store_axis, next, q - a, i_next);
            total += wt * (c + p.gamma * v);
        }
        total
    }

    fn best(&self, t: usize, q: f64, i: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for a in candidate_actions(q, self.action_step) {
            let v = self.stage_cost(t, q, i, a);
            if v < best.0 {
                best = (v, a);
            }
        }
        best
    }

    /// Interpolated value at an arbitrary state.
    pub fn value(&self, t: usize, q: f64, i: f64) -> f64 {
        interp(&self.depot_axis, &self.store_axis, &self.values[t], q, i)
    }

    /// Value at the environment's initial state.
    pub fn initial_value(&self) -> f64 {
        self.value(0, self.env.initial.depot[0], self.env.initial.store[0])
    }

    /// Greedy shipment at an arbitrary state by one-step lookahead.
    pub fn greedy_action(&self, t: usize, q: f64, i: f64) -> f64 {
        self.best(t, q, i).1
    }

    /// Greedy action stored at a grid point.
    pub fn grid_action(&self, t: usize, iq: usize, ii: usize) -> f64 {
        self.policy[t][iq * self.store_axis.len() + ii]
    }

    /// Policy acting greedily against the solved values.
    pub fn greedy_policy(&self) -> OraclePolicy<'_> {
        OraclePolicy { solution: self }
    }

    /// Rows `q,I,t,V,a*` (a* empty at the horizon).
    pub fn write_tables<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "q,I,t,V,a_star")?;
        let ni = self.store_axis.len();
        for (t, vals) in self.values.iter().enumerate() {
            for (iq, q) in self.depot_axis.iter().enumerate() {
                for (ii, i) in self.store_axis.iter().enumerate() {
                    let k = iq * ni + ii;
                    match self.policy.get(t) {
                        Some(p) => writeln!(w, "{q},{i},{t},{},{}", vals[k], p[k])?,
                        None => writeln!(w, "{q},{i},{t},{},", vals[k])?,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Backward induction from the salvage values at the horizon.
pub fn solve(env: &InventoryEnv, scenario: &DemandScenario, grid: &DiscreteGrid) -> Result<OracleSolution> {
    check_single(env, scenario)?;
    grid.validate()?;
    let q0 = env.initial.depot[0];
    let depot_axis = axis(grid.stock_step, q0);
    let store_max = grid.max_stock.max(env.initial.store[0]);
    let store_axis = axis(grid.stock_step, store_max);
    let n = env.horizon();
    let rules: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|t| demand_rule(scenario.mean(0, 0, t), scenario.std(0, 0, t), grid.quadrature_nodes))
        .collect();
    let max_actions = (q0 / grid.action_step).floor() as u64 + 2;
    let nodes = rules.iter().map(|r| r.len() as u64).max().unwrap_or(1);
    let work = (depot_axis.len() as u64)
        .saturating_mul(store_axis.len() as u64)
        .saturating_mul(max_actions)
        .saturating_mul(nodes)
        .saturating_mul(n as u64);
    if work > grid.budget {
        return Err(Error::Size(format!(
            "oracle needs ~{work} evaluations, over the budget of {}",
            grid.budget
        )));
    }
    let p = &env.params;
    let terminal: Vec<f64> = depot_axis
        .iter()
        .flat_map(|&q| {
            store_axis
                .iter()
                .map(move |&i| q * p.depot_salvage[0] + i * (p.holding[0] + p.salvage[0]))
        })
        .collect();
    let cells = terminal.len();
    let mut sol = OracleSolution {
        values: vec![Vec::new(); n + 1],
        policy: vec![Vec::new(); n],
        depot_axis,
        store_axis,
        action_step: grid.action_step,
        rules,
        env: env.clone(),
    };
    sol.values[n] = terminal;
    for t in (0..n).rev() {
        let ni = sol.store_axis.len();
        let (vals, acts): (Vec<f64>, Vec<f64>) = {
            let s = &sol;
            use rayon::prelude::*;
            (0..cells)
                .into_par_iter()
                .map(|k| s.best(t, s.depot_axis[k / ni], s.store_axis[k % ni]))
                .unzip()
        };
        sol.values[t] = vals;
        sol.policy[t] = acts;
    }
    Ok(sol)
}

/// Greedy policy against an [`OracleSolution`].
pub struct OraclePolicy<'a> {
    solution: &'a OracleSolution,
}

impl Policy for OraclePolicy<'_> {
    fn act(&mut self, state: &EnvState) -> Vec<f64> {
        vec![self.solution.greedy_action(state.t, state.depot[0], state.store[0])]
    }
}

/// Monte-Carlo total-cost statistics of a policy.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub costs: Vec<f64>,
    pub summary: Summary,
}

/// Runs `episodes` seasons with demand seeds `seed.index(0..episodes)`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &mut P,
    env: &InventoryEnv,
    scenario: &DemandScenario,
    episodes: usize,
    seed: SeedStream,
) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::Parameter("need at least one episode".into()));
    }
    let costs = (0..episodes as u64)
        .map(|e| run_episode(policy, scenario, env, seed.index(e)).map(|r| r.total_cost))
        .collect::<Result<Vec<_>>>()?;
    let summary = Summary::from_slice(&costs);
    Ok(Evaluation { costs, summary })
}

/// Per-episode paired improvement (%) of `candidate` over `baseline`.
pub fn paired_improvement(baseline: &[f64], candidate: &[f64]) -> Result<Summary> {
    if baseline.len() != candidate.len() || baseline.is_empty() {
        return Err(Error::Shape(
            "paired improvement needs equal, nonempty cost lists".into(),
        ));
    }
    let imp: Vec<f64> = baseline
        .iter()
        .zip(candidate)
        .map(|(&b, &c)| improvement_pct(b, c))
        .collect();
    Ok(Summary::from_slice(&imp))
}
