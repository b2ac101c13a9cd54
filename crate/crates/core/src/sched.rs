//! Planners producing complete offloading plans.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, Location, MergedDag, Plan, Platform};
use crate::scalar::{transfer_seconds, Scalar};
use crate::timing::{download_time, evaluate_partial, execution_time, SimState, TimingError};

/// Default executable-node limit of the exhaustive search.
pub const DEFAULT_OPTIMAL_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    Local,
    Remote,
    RoundRobin,
    Random { seed: u64 },
    Heft,
    Optimal { limit: usize },
}

impl SchedulerKind {
    /// Column label used in results tables.
    pub fn label(&self) -> &'static str {
        match self {
            SchedulerKind::Local => "Local",
            SchedulerKind::Remote => "Remote",
            SchedulerKind::RoundRobin => "RR",
            SchedulerKind::Random { .. } => "Random",
            SchedulerKind::Heft => "HEFT",
            SchedulerKind::Optimal { .. } => "Optimal",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedError;

    /// Accepts `local`, `remote`, `rr`, `random[:seed]`, `heft`, `optimal[:limit]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let num = |default: u64| -> Result<u64, SchedError> {
            arg.map_or(Ok(default), |a| {
                a.parse().map_err(|_| SchedError::UnknownScheduler(s.to_string()))
            })
        };
        Ok(match name {
            "local" => SchedulerKind::Local,
            "remote" => SchedulerKind::Remote,
            "rr" | "round-robin" | "roundrobin" => SchedulerKind::RoundRobin,
            "random" => SchedulerKind::Random { seed: num(0)? },
            "heft" => SchedulerKind::Heft,
            "optimal" => SchedulerKind::Optimal {
                limit: num(DEFAULT_OPTIMAL_LIMIT as u64)? as usize,
            },
            _ => return Err(SchedError::UnknownScheduler(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("instance has {nodes} executable nodes, above the exhaustive-search limit {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("platform has no edge servers")]
    NoServers,
    #[error("unknown scheduler '{0}'")]
    UnknownScheduler(String),
    #[error(transparent)]
    Timing(#[from] TimingError),
}

pub fn plan<T: Scalar>(
    kind: SchedulerKind,
    dag: &MergedDag,
    platform: &Platform<T>,
) -> Result<Plan, SchedError> {
    match kind {
        SchedulerKind::Local => Ok(plan_local(dag)),
        SchedulerKind::Remote => plan_remote(dag, platform),
        SchedulerKind::RoundRobin => Ok(plan_round_robin(dag, platform)),
        SchedulerKind::Random { seed } => Ok(plan_random(dag, platform, seed)),
        SchedulerKind::Heft => plan_heft(dag, platform),
        SchedulerKind::Optimal { limit } => plan_optimal(dag, platform, limit).map(|s| s.plan),
    }
}

/// Every executable node on its own device, ascending id.
pub fn plan_local(dag: &MergedDag) -> Plan {
    dag.exec_ids().map(|i| Action::new(i, Location::Own)).collect()
}

/// Every executable node offloaded in ascending id order; with several
/// servers the k-th node goes to server `(k mod M) + 1`.
pub fn plan_remote<T: Scalar>(dag: &MergedDag, platform: &Platform<T>) -> Result<Plan, SchedError> {
    if platform.m == 0 {
        return Err(SchedError::NoServers);
    }
    Ok(dag
        .exec_ids()
        .enumerate()
        .map(|(rank, i)| Action::new(i, Location::Edge(rank % platform.m + 1)))
        .collect())
}

/// Ascending id order, locations cycling own, es1, ..., esM with one
/// global counter.
pub fn plan_round_robin<T: Scalar>(dag: &MergedDag, platform: &Platform<T>) -> Plan {
    dag.exec_ids()
        .enumerate()
        .map(|(rank, i)| Action::new(i, Location::from_index(rank % (platform.m + 1))))
        .collect()
}

/// Uniform choice among available nodes and among the `M + 1` locations.
pub fn plan_random<T: Scalar>(dag: &MergedDag, platform: &Platform<T>, seed: u64) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pending: Vec<usize> = (0..dag.len())
        .map(|i| dag.preds(i).iter().filter(|e| dag.node(e.src).is_exec()).count())
        .collect();
    let mut ready: Vec<usize> = dag.exec_ids().filter(|&i| pending[i] == 0).collect();
    let mut plan = Vec::with_capacity(dag.exec_count());
    while !ready.is_empty() {
        let node = ready.remove(rng.gen_range(0..ready.len()));
        let loc = Location::from_index(rng.gen_range(0..=platform.m));
        plan.push(Action::new(node, loc));
        for e in dag.succs(node) {
            pending[e.dst] -= 1;
            if pending[e.dst] == 0 && dag.node(e.dst).is_exec() {
                let pos = ready.partition_point(|&x| x < e.dst);
                ready.insert(pos, e.dst);
            }
        }
    }
    Plan(plan)
}

/// Upward rank of every node (zero for sentinels).
///
/// Mean execution cost averages the device and the M servers; mean
/// communication cost uses the device-edge rate.
pub fn upward_ranks<T: Scalar>(dag: &MergedDag, platform: &Platform<T>) -> Vec<T> {
    let m = T::from_count(platform.m as u64);
    let mut rank = vec![T::zero(); dag.len()];
    for i in (0..dag.len()).rev() {
        let node = dag.node(i);
        if !node.is_exec() {
            continue;
        }
        let local = execution_time(node.cycles, Location::Own, platform);
        let remote = execution_time(node.cycles, Location::Edge(1), platform);
        let mean_exec = (local + m * remote) / (m + T::one());
        let tail = dag
            .succs(i)
            .iter()
            .map(|e| transfer_seconds(e.bytes, platform.tr_l) + rank[e.dst])
            .fold(T::zero(), T::max);
        rank[i] = mean_exec + tail;
    }
    rank
}

/// Rank-ordered list scheduling: highest upward rank first, each node on
/// the location giving the smallest finish time (ties: own device, then
/// lowest server index).
pub fn plan_heft<T: Scalar>(dag: &MergedDag, platform: &Platform<T>) -> Result<Plan, SchedError> {
    let rank = upward_ranks(dag, platform);
    let mut order: Vec<usize> = dag.exec_ids().collect();
    order.sort_by(|&a, &b| rank[b].partial_cmp(&rank[a]).expect("finite ranks").then(a.cmp(&b)));

    let mut state = SimState::new(dag, platform)?;
    let mut plan = Vec::with_capacity(order.len());
    for node in order {
        let mut best: Option<(T, Location)> = None;
        for loc in Location::all(platform.m) {
            let mut trial = state.clone();
            let ft = trial.apply(dag, platform, Action::new(node, loc))?.ft;
            if best.is_none_or(|(b, _)| ft < b) {
                best = Some((ft, loc));
            }
        }
        let (_, loc) = best.expect("at least the own device");
        let action = Action::new(node, loc);
        state.apply(dag, platform, action)?;
        plan.push(action);
    }
    Ok(Plan(plan))
}

/// Outcome of the exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution<T> {
    pub plan: Plan,
    pub mean_aft: T,
    /// Search-tree nodes expanded.
    pub expanded: u64,
}

/// Exact minimum of mean AFT over every dependency-safe order and every
/// location assignment, using branch and bound. Among equally good plans
/// the lexicographically smallest `(node, location)` sequence wins.
pub fn plan_optimal<T: Scalar>(
    dag: &MergedDag,
    platform: &Platform<T>,
    limit: usize,
) -> Result<OptimalSolution<T>, SchedError> {
    OptimalSearch::new(dag, platform, limit, true)?.run()
}

/// Same search without pruning or incumbent seeding; visits every plan.
pub fn plan_optimal_exhaustive<T: Scalar>(
    dag: &MergedDag,
    platform: &Platform<T>,
    limit: usize,
) -> Result<OptimalSolution<T>, SchedError> {
    OptimalSearch::new(dag, platform, limit, false)?.run()
}

struct OptimalSearch<'a, T> {
    dag: &'a MergedDag,
    platform: &'a Platform<T>,
    prune: bool,
    /// Longest chain of fastest-possible execution times strictly after a node.
    tail: Vec<T>,
    /// Result download if the node feeds its End from a server.
    download: Vec<T>,
    /// Lower bound on a user's AFT before anything is scheduled.
    static_bound: Vec<T>,
    best_total: T,
    best_plan: Option<Vec<Action>>,
    expanded: u64,
}

impl<'a, T: Scalar> OptimalSearch<'a, T> {
    fn new(dag: &'a MergedDag, platform: &'a Platform<T>, limit: usize, prune: bool) -> Result<Self, SchedError> {
        let nodes = dag.exec_count();
        if nodes > limit {
            return Err(SchedError::TooLarge { nodes, limit });
        }
        let fastest = |cycles: u64| {
            let own = execution_time(cycles, Location::Own, platform);
            if platform.m == 0 {
                own
            } else {
                own.min(execution_time(cycles, Location::Edge(1), platform))
            }
        };
        let mut tail = vec![T::zero(); dag.len()];
        let mut head = vec![T::zero(); dag.len()];
        for i in (0..dag.len()).rev() {
            tail[i] = dag
                .succs(i)
                .iter()
                .filter(|e| dag.node(e.dst).is_exec())
                .map(|e| fastest(dag.node(e.dst).cycles) + tail[e.dst])
                .fold(T::zero(), T::max);
        }
        let mut static_bound = vec![T::zero(); dag.users()];
        for i in dag.exec_ids() {
            head[i] = fastest(dag.node(i).cycles);
            let owner = dag.node(i).owner;
            static_bound[owner] = static_bound[owner].max(head[i] + tail[i]);
        }
        let download = (0..dag.len())
            .map(|i| {
                dag.result_bytes(i)
                    .filter(|_| dag.node(i).is_exec())
                    .map_or(T::zero(), |b| download_time(b, Location::Edge(1), platform))
            })
            .collect();

        let mut best_total = T::infinity();
        if prune {
            // seed the incumbent value (not the plan) with cheap heuristics
            let mut seeds = vec![plan_local(dag), plan_round_robin(dag, platform), plan_heft(dag, platform)?];
            if platform.m > 0 {
                seeds.push(plan_remote(dag, platform)?);
            }
            for p in &seeds {
                let total = evaluate_partial(dag, platform, p.actions())?.total_aft;
                best_total = best_total.min(total);
            }
        }
        Ok(Self {
            dag,
            platform,
            prune,
            tail,
            download,
            static_bound,
            best_total,
            best_plan: None,
            expanded: 0,
        })
    }

    fn run(mut self) -> Result<OptimalSolution<T>, SchedError> {
        let state = SimState::new(self.dag, self.platform)?;
        let mut prefix = Vec::with_capacity(self.dag.exec_count());
        self.dfs(&state, &mut prefix)?;
        let plan = Plan(self.best_plan.expect("search visits at least one complete plan"));
        let mean_aft = self.best_total / T::from_count(self.dag.users() as u64);
        Ok(OptimalSolution {
            plan,
            mean_aft,
            expanded: self.expanded,
        })
    }

    /// Lower bound on the total AFT of any completion of `state`.
    fn bound(&self, state: &SimState<T>) -> T {
        let mut per_user = self.static_bound.clone();
        for i in self.dag.exec_ids() {
            let Some(loc) = state.location(i) else { continue };
            let after = if loc.is_offloaded() {
                self.tail[i].max(self.download[i])
            } else {
                self.tail[i]
            };
            let owner = self.dag.node(i).owner;
            per_user[owner] = per_user[owner].max(state.finish_time(i) + after);
        }
        let total = per_user.into_iter().fold(T::zero(), |a, b| a + b);
        // shave a few ulps so rounding never lets the bound overshoot
        total * (T::one() - T::epsilon() * T::from_count(64))
    }

    fn dfs(&mut self, state: &SimState<T>, prefix: &mut Vec<Action>) -> Result<(), SchedError> {
        self.expanded += 1;
        if state.is_complete(self.dag) {
            let total = state.clone().finish(self.dag, self.platform)?.total_aft;
            let accept = match self.best_plan {
                Some(_) => total < self.best_total,
                None => total <= self.best_total,
            };
            if accept {
                self.best_total = total;
                self.best_plan = Some(prefix.clone());
            }
            return Ok(());
        }
        if self.prune {
            let bound = self.bound(state);
            let dominated = match self.best_plan {
                Some(_) => bound >= self.best_total,
                None => bound > self.best_total,
            };
            if dominated {
                return Ok(());
            }
        }
        let ready: Vec<usize> = state.available_nodes(self.dag).collect();
        for node in ready {
            for loc in Location::all(self.platform.m) {
                let mut next = state.clone();
                let action = Action::new(node, loc);
                next.apply(self.dag, self.platform, action)?;
                prefix.push(action);
                self.dfs(&next, prefix)?;
                prefix.pop();
            }
        }
        Ok(())
    }
}
