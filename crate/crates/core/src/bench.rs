//! Experiment grids, results CSV, summaries and transcript replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Request;
use crate::gen::{generate_batch, instance_seed, GenConfig, GenError};
use crate::model::{validate_plan, Action, Location, MergedDag, PlanViolation};
use crate::sched::{plan, plan_random, SchedError, SchedulerKind, DEFAULT_OPTIMAL_LIMIT};
use crate::timing::{evaluate_partial, TimingError};

type Platform = crate::model::Platform<f64>;

pub const CSV_HEADER: [&str; 6] = ["n", "K", "M", "scheduler", "mean_aft_s", "instances"];
/// Label of replayed external agent rows.
pub const AGENT_LABEL: &str = "DTODRL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// One edge server with a single processor.
    #[default]
    Single,
    /// Servers with two processors and a 20 Mbps server backbone.
    Multi,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformOverrides {
    pub f_ue: Option<f64>,
    pub f_es: Option<f64>,
    pub procs_per_es: Option<usize>,
    pub tr_l: Option<f64>,
    pub tr_s: Option<f64>,
}

/// Generator knobs shared by every cell; `n` and the seed come from the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub max_out_degree: usize,
    pub alpha: f64,
    pub beta: f64,
    pub cycles_range: (u64, u64),
    pub upload_range: (u64, u64),
    pub edge_range: (u64, u64),
}

impl Default for GeneratorParams {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            max_out_degree: g.max_out_degree,
            alpha: g.alpha,
            beta: g.beta,
            cycles_range: g.cycles_range,
            upload_range: g.upload_range,
            edge_range: g.edge_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    /// Instances per cell.
    pub instances: usize,
    /// Scheduler names as accepted by [`SchedulerKind`]'s parser.
    pub schedulers: Vec<String>,
    pub seed: u64,
    /// Seeds averaged per instance for the Random scheduler.
    pub random_seeds: usize,
    /// Optimal is reported as N/A for instances with more executable nodes.
    pub optimal_limit: usize,
    pub platform: PlatformOverrides,
    pub generator: GeneratorParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Single,
            n: vec![10],
            k: vec![1],
            m: vec![1],
            instances: 50,
            schedulers: ["Local", "Remote", "RR", "Random", "HEFT", "Optimal"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            seed: 0,
            random_seeds: 50,
            optimal_limit: DEFAULT_OPTIMAL_LIMIT,
            platform: PlatformOverrides::default(),
            generator: GeneratorParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Timing(#[from] TimingError),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: &str| Err(BenchError::Config(msg.to_string()));
        if self.n.is_empty() || self.k.is_empty() || self.m.is_empty() {
            return bad("n, K and M lists must be nonempty");
        }
        if self.k.contains(&0) || self.m.contains(&0) {
            return bad("K and M entries must be >= 1");
        }
        if self.instances == 0 {
            return bad("instances must be >= 1");
        }
        if self.random_seeds == 0 {
            return bad("random_seeds must be >= 1");
        }
        if self.schedulers.is_empty() {
            return bad("schedulers must be nonempty");
        }
        self.scheduler_kinds()?;
        for &k in &self.k {
            for &m in &self.m {
                self.platform_for(k, m)
                    .validate()
                    .map_err(|e| BenchError::Config(e.to_string()))?;
            }
        }
        for &n in &self.n {
            self.gen_config(n, 0).validate()?;
        }
        Ok(())
    }

    /// Parsed schedulers; a bare `optimal` picks up `optimal_limit`.
    pub fn scheduler_kinds(&self) -> Result<Vec<SchedulerKind>, BenchError> {
        self.schedulers
            .iter()
            .map(|s| {
                let kind: SchedulerKind = s.parse()?;
                Ok(match kind {
                    SchedulerKind::Optimal { .. } if !s.contains(':') => SchedulerKind::Optimal {
                        limit: self.optimal_limit,
                    },
                    other => other,
                })
            })
            .collect()
    }

    pub fn platform_for(&self, k: usize, m: usize) -> Platform {
        let mut p = match self.scenario {
            Scenario::Single => Platform {
                k,
                m,
                ..Platform::single_edge()
            },
            Scenario::Multi => Platform::multi_edge(k, m),
        };
        let o = &self.platform;
        p.f_ue = o.f_ue.unwrap_or(p.f_ue);
        p.f_es = o.f_es.unwrap_or(p.f_es);
        p.procs_per_es = o.procs_per_es.unwrap_or(p.procs_per_es);
        p.tr_l = o.tr_l.unwrap_or(p.tr_l);
        p.tr_s = o.tr_s.unwrap_or(p.tr_s);
        p
    }

    pub fn gen_config(&self, n: usize, seed: u64) -> GenConfig {
        let g = &self.generator;
        GenConfig {
            n,
            max_out_degree: g.max_out_degree,
            alpha: g.alpha,
            beta: g.beta,
            seed,
            cycles_range: g.cycles_range,
            upload_range: g.upload_range,
            edge_range: g.edge_range,
        }
    }
}

/// Seed of the instance set shared by every `M` for a given `(n, K)`.
pub fn cell_seed(seed: u64, n: usize, k: usize) -> u64 {
    instance_seed(seed, n, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub scheduler: String,
    /// `None` when the scheduler was skipped for this cell.
    pub mean_aft_s: Option<f64>,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub scheduler: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridResults {
    pub rows: Vec<ResultRow>,
    pub skipped: Vec<Skip>,
}

impl GridResults {
    pub fn to_csv(&self) -> Result<String, BenchError> {
        rows_to_csv(&self.rows)
    }
}

/// Mean AFT of one scheduler over a cell's instances.
fn score(
    kind: SchedulerKind,
    dags: &[MergedDag],
    platform: &Platform,
    random_seeds: usize,
    seed: u64,
) -> Result<f64, BenchError> {
    let mut sum = 0.0;
    for (i, dag) in dags.iter().enumerate() {
        sum += match kind {
            SchedulerKind::Random { seed: base } => {
                let mut acc = 0.0;
                for s in 0..random_seeds {
                    let p = plan_random(dag, platform, instance_seed(seed ^ base, i, s));
                    acc += evaluate_partial(dag, platform, &p.0)?.mean_aft;
                }
                acc / random_seeds as f64
            }
            _ => {
                let p = plan(kind, dag, platform)?;
                evaluate_partial(dag, platform, &p.0)?.mean_aft
            }
        };
    }
    Ok(sum / dags.len() as f64)
}

/// Runs every `(n, K, M, scheduler)` combination. Cells run in parallel;
/// output order is `n`, then `K`, then `M`, then the configured scheduler
/// order, independent of thread scheduling.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridResults, BenchError> {
    cfg.validate()?;
    let kinds = cfg.scheduler_kinds()?;

    let mut sets = Vec::new();
    for &n in &cfg.n {
        for &k in &cfg.k {
            sets.push((n, k, cell_seed(cfg.seed, n, k)));
        }
    }
    let datasets = sets
        .par_iter()
        .map(|&(n, k, seed)| generate_batch(&cfg.gen_config(n, seed), cfg.instances, k))
        .collect::<Result<Vec<_>, _>>()?;

    let mut jobs = Vec::new();
    for (set, dags) in sets.iter().zip(&datasets) {
        for &m in &cfg.m {
            for &kind in &kinds {
                jobs.push((*set, m, kind, dags));
            }
        }
    }
    let outcomes = jobs
        .par_iter()
        .map(|&((_, k, seed), m, kind, dags)| {
            let platform = cfg.platform_for(k, m);
            match score(kind, dags, &platform, cfg.random_seeds, seed) {
                Ok(v) => Ok((Some(v), None)),
                Err(BenchError::Sched(e @ SchedError::TooLarge { .. })) => Ok((None, Some(e.to_string()))),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let mut out = GridResults::default();
    for (&((n, k, _), m, kind, _), (value, reason)) in jobs.iter().zip(outcomes) {
        let scheduler = kind.label().to_string();
        if let Some(reason) = reason {
            out.skipped.push(Skip {
                n,
                k,
                m,
                scheduler: scheduler.clone(),
                reason,
            });
        }
        out.rows.push(ResultRow {
            n,
            k,
            m,
            scheduler,
            mean_aft_s: value,
            instances: cfg.instances,
        });
    }
    Ok(out)
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let value = r.mean_aft_s.map_or_else(|| "N/A".to_string(), |v| v.to_string());
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            r.m.to_string(),
            r.scheduler.clone(),
            value,
            r.instances.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>, BenchError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(BenchError::Config(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let int = |col: usize| -> Result<usize, BenchError> {
            rec[col]
                .parse()
                .map_err(|_| BenchError::Config(format!("line {line}: bad {} '{}'", CSV_HEADER[col], &rec[col])))
        };
        let mean_aft_s = match &rec[4] {
            "N/A" | "" => None,
            v => Some(
                v.parse()
                    .map_err(|_| BenchError::Config(format!("line {line}: bad mean_aft_s '{v}'")))?,
            ),
        };
        rows.push(ResultRow {
            n: int(0)?,
            k: int(1)?,
            m: int(2)?,
            scheduler: rec[3].to_string(),
            mean_aft_s,
            instances: int(5)?,
        });
    }
    Ok(rows)
}

/// Sort key putting known schedulers in a fixed column order.
type ColumnKey = (usize, String);

fn scheduler_order(name: &str) -> ColumnKey {
    const ORDER: [&str; 7] = ["Optimal", AGENT_LABEL, "HEFT", "RR", "Random", "Remote", "Local"];
    (ORDER.iter().position(|o| *o == name).unwrap_or(ORDER.len()), name.to_string())
}

/// Outcome of the `HEFT < RR < Local` check for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub heft: f64,
    pub rr: f64,
    pub local: f64,
}

impl OrderingCheck {
    pub fn holds(&self) -> bool {
        self.heft < self.rr && self.rr < self.local
    }
}

/// Ordering checks for every cell that has all three values.
pub fn ordering_checks(rows: &[ResultRow]) -> Vec<OrderingCheck> {
    let mut cells: BTreeMap<(usize, usize, usize), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.mean_aft_s {
            cells.entry((r.n, r.k, r.m)).or_default().insert(&r.scheduler, v);
        }
    }
    cells
        .into_iter()
        .filter_map(|((n, k, m), vals)| {
            Some(OrderingCheck {
                n,
                k,
                m,
                heft: *vals.get("HEFT")?,
                rr: *vals.get("RR")?,
                local: *vals.get("Local")?,
            })
        })
        .collect()
}

/// Plain-text report: per-scheduler means, ratios against Optimal and
/// the ordering check. Output depends only on `rows`.
pub fn summarize(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let mut cells: BTreeMap<(usize, usize, usize), BTreeMap<ColumnKey, Option<f64>>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.n, r.k, r.m))
            .or_default()
            .insert(scheduler_order(&r.scheduler), r.mean_aft_s);
    }
    let names: BTreeSet<ColumnKey> = cells.values().flat_map(|c| c.keys().cloned()).collect();

    let _ = writeln!(out, "cells: {}", cells.len());
    let _ = writeln!(out, "\nmean AFT (s), averaged over cells with a value:");
    for name in &names {
        let vals: Vec<f64> = cells.values().filter_map(|c| c.get(name).copied().flatten()).collect();
        if vals.is_empty() {
            let _ = writeln!(out, "  {:<8} N/A", name.1);
        } else {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let _ = writeln!(out, "  {:<8} {:.6} ({} cells)", name.1, mean, vals.len());
        }
    }

    let _ = writeln!(out, "\nratio to Optimal:");
    let optimal = (0, "Optimal".to_string());
    let mut any_ratio = false;
    for (&(n, k, m), vals) in &cells {
        let Some(Some(opt)) = vals.get(&optimal) else { continue };
        let parts: Vec<String> = vals
            .iter()
            .filter(|(name, v)| **name != optimal && v.is_some())
            .map(|(name, v)| format!("{} {:.4}", name.1, v.unwrap() / opt))
            .collect();
        if !parts.is_empty() {
            any_ratio = true;
            let _ = writeln!(out, "  n={n} K={k} M={m}: {}", parts.join(", "));
        }
    }
    if !any_ratio {
        let _ = writeln!(out, "  none (no Optimal values)");
    }

    let _ = writeln!(out, "\nordering HEFT < RR < Local:");
    let checks = ordering_checks(rows);
    for c in &checks {
        let _ = writeln!(
            out,
            "  n={} K={} M={}: {} ({:.6} / {:.6} / {:.6})",
            c.n,
            c.k,
            c.m,
            if c.holds() { "PASS" } else { "FAIL" },
            c.heft,
            c.rr,
            c.local
        );
    }
    let verdict = match (checks.is_empty(), checks.iter().all(OrderingCheck::holds)) {
        (true, _) => "not checked",
        (false, true) => "PASS",
        (false, false) => "FAIL",
    };
    let _ = writeln!(out, "  overall: {verdict}");
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("line {line}: illegal action ({node}, {loc}): {reason}")]
    IllegalAction {
        line: usize,
        node: usize,
        loc: usize,
        reason: String,
    },
    #[error("line {line}: {message}")]
    Protocol { line: usize, message: String },
    #[error("episode on instance {instance} ended at line {line} before all nodes were scheduled")]
    Incomplete { instance: usize, line: usize },
    #[error("transcript contains no episodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScore {
    pub instance: usize,
    pub actions: Vec<Action>,
    pub mean_aft: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub episodes: Vec<EpisodeScore>,
    /// Mean over episodes.
    pub mean_aft: f64,
}

impl ReplayResult {
    /// Results row for the replayed agent, sized from the dataset.
    pub fn row(&self, dataset: &[MergedDag], platform: &Platform) -> ResultRow {
        let first = &dataset[self.episodes[0].instance];
        ResultRow {
            n: first.exec_count() / first.users(),
            k: first.users(),
            m: platform.m,
            scheduler: AGENT_LABEL.to_string(),
            mean_aft_s: Some(self.mean_aft),
            instances: self.episodes.len(),
        }
    }
}

struct OpenEpisode {
    instance: usize,
    actions: Vec<Action>,
}

fn close_episode(
    dataset: &[MergedDag],
    platform: &Platform,
    ep: OpenEpisode,
    line: usize,
) -> Result<EpisodeScore, ReplayError> {
    let dag = &dataset[ep.instance];
    if ep.actions.len() != dag.exec_count() {
        return Err(ReplayError::Incomplete {
            instance: ep.instance,
            line,
        });
    }
    let eval = evaluate_partial(dag, platform, &ep.actions).map_err(|e| ReplayError::Protocol {
        line,
        message: e.to_string(),
    })?;
    Ok(EpisodeScore {
        instance: ep.instance,
        actions: ep.actions,
        mean_aft: eval.mean_aft,
    })
}

/// Scores the episodes recorded in a protocol transcript. Request lines
/// (`reset` with `instance_id`, `step`, `close`) drive replay; response
/// lines and `spec` requests are ignored, as is any request whose recorded
/// response is an error. Illegal actions are reported with their 1-based
/// line number.
pub fn replay_agent(dataset: &[MergedDag], platform: &Platform, transcript: &str) -> Result<ReplayResult, ReplayError> {
    let mut episodes = Vec::new();
    let mut open: Option<OpenEpisode> = None;
    let lines: Vec<&str> = transcript.lines().collect();
    let parse = |i: usize| -> Result<serde_json::Value, ReplayError> {
        serde_json::from_str(lines[i]).map_err(|e| ReplayError::Parse {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })
    };
    for i in 0..lines.len() {
        let line = i + 1;
        if lines[i].trim().is_empty() {
            continue;
        }
        let value = parse(i)?;
        if value.get("op").is_none() {
            continue;
        }
        // a request the server answered with an error never took effect
        if let Some(next) = lines.get(i + 1).filter(|l| !l.trim().is_empty()) {
            if let Ok(resp) = serde_json::from_str::<serde_json::Value>(next) {
                if resp.get("op").is_none() && resp.get("error").is_some() {
                    continue;
                }
            }
        }
        let req: Request = serde_json::from_value(value).map_err(|e| ReplayError::Parse {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        match req.op.as_str() {
            "spec" => {}
            "reset" => {
                if let Some(ep) = open.take() {
                    episodes.push(close_episode(dataset, platform, ep, line)?);
                }
                let instance = match (req.instance_id, req.seed) {
                    (Some(id), _) => id,
                    (None, Some(_)) => {
                        return Err(ReplayError::Protocol {
                            line,
                            message: "seeded resets cannot be scored against a dataset".into(),
                        })
                    }
                    (None, None) => 0,
                };
                if instance >= dataset.len() {
                    return Err(ReplayError::Protocol {
                        line,
                        message: format!("unknown instance {instance}"),
                    });
                }
                open = Some(OpenEpisode {
                    instance,
                    actions: Vec::new(),
                });
            }
            "step" => {
                let ep = open.as_mut().ok_or_else(|| ReplayError::Protocol {
                    line,
                    message: "step before reset".into(),
                })?;
                let [node, loc] = req.action.ok_or_else(|| ReplayError::Protocol {
                    line,
                    message: "step without action".into(),
                })?;
                let illegal = |reason: String| ReplayError::IllegalAction { line, node, loc, reason };
                if loc > platform.m {
                    return Err(illegal(format!("location index above {}", platform.m)));
                }
                ep.actions.push(Action::new(node, Location::from_index(loc)));
                if let Err(v) = validate_plan(&dataset[ep.instance], &ep.actions, false) {
                    let reason = match v {
                        PlanViolation::Dependency { pred, .. } => format!("predecessor {pred} not scheduled"),
                        other => other.to_string(),
                    };
                    return Err(illegal(reason));
                }
            }
            "close" => {
                if let Some(ep) = open.take() {
                    episodes.push(close_episode(dataset, platform, ep, line)?);
                }
            }
            other => {
                return Err(ReplayError::Protocol {
                    line,
                    message: format!("unknown op '{other}'"),
                })
            }
        }
    }
    if let Some(ep) = open.take() {
        episodes.push(close_episode(dataset, platform, ep, lines.len())?);
    }
    if episodes.is_empty() {
        return Err(ReplayError::Empty);
    }
    let mean_aft = episodes.iter().map(|e| e.mean_aft).sum::<f64>() / episodes.len() as f64;
    Ok(ReplayResult { episodes, mean_aft })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::plan_local;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n: vec![4, 6],
            k: vec![1, 2],
            m: vec![1, 2],
            instances: 3,
            random_seeds: 4,
            optimal_limit: 6,
            ..Default::default()
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            scenario = "multi"
            n = [10, 15]
            K = [2, 3]
            M = [1, 2]
            schedulers = ["Local", "HEFT"]
            seed = 7
            [platform]
            tr_l = 4e6
            [generator]
            alpha = 0.8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.instances, 50);
        assert_eq!(cfg.random_seeds, 50);
        let p = cfg.platform_for(3, 2);
        assert_eq!(p.procs_per_es, 2);
        assert_eq!(p.tr_l, 4e6);
        assert_eq!(p.tr_s, 20e6);
        assert_eq!(cfg.gen_config(10, 1).alpha, 0.8);
        assert_eq!(ExperimentConfig::default().platform_for(1, 1).procs_per_es, 1);
        assert!(ExperimentConfig::from_toml("n = []").is_err());
        assert!(ExperimentConfig::from_toml("schedulers = [\"peft\"]").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn grid_shape_and_order() {
        let res = run_grid(&small_config()).unwrap();
        assert_eq!(res.rows.len(), 2 * 2 * 2 * 6);
        assert_eq!(res.rows[0].scheduler, "Local");
        assert_eq!((res.rows[6].n, res.rows[6].k, res.rows[6].m), (4, 1, 2));
        // K = 2, n = 4 gives 8 executable nodes, above the limit of 6
        let skipped: Vec<_> = res.skipped.iter().map(|s| (s.n, s.k)).collect();
        assert!(skipped.iter().all(|&(n, k)| n * k > 6));
        assert!(!skipped.is_empty());
        let csv = res.to_csv().unwrap();
        assert!(csv.starts_with("n,K,M,scheduler,mean_aft_s,instances\n"));
        assert!(csv.contains(",Optimal,N/A,3\n"));
        assert_eq!(rows_from_csv(&csv).unwrap(), res.rows);
    }

    #[test]
    fn grid_is_deterministic() {
        let cfg = small_config();
        assert_eq!(run_grid(&cfg).unwrap().to_csv().unwrap(), run_grid(&cfg).unwrap().to_csv().unwrap());
    }

    #[test]
    fn m_sweep_shares_instances() {
        let mut cfg = small_config();
        cfg.schedulers = vec!["Local".into()];
        let res = run_grid(&cfg).unwrap();
        for pair in res.rows.chunks(2) {
            assert_eq!(pair[0].mean_aft_s, pair[1].mean_aft_s);
        }
    }

    #[test]
    fn summary_reports_ratios_and_ordering() {
        let rows = vec![
            ResultRow { n: 10, k: 1, m: 1, scheduler: "Local".into(), mean_aft_s: Some(6.0), instances: 5 },
            ResultRow { n: 10, k: 1, m: 1, scheduler: "RR".into(), mean_aft_s: Some(3.0), instances: 5 },
            ResultRow { n: 10, k: 1, m: 1, scheduler: "HEFT".into(), mean_aft_s: Some(2.5), instances: 5 },
            ResultRow { n: 10, k: 1, m: 1, scheduler: "Optimal".into(), mean_aft_s: Some(2.0), instances: 5 },
            ResultRow { n: 15, k: 1, m: 1, scheduler: "Local".into(), mean_aft_s: Some(6.0), instances: 5 },
            ResultRow { n: 15, k: 1, m: 1, scheduler: "RR".into(), mean_aft_s: Some(7.0), instances: 5 },
            ResultRow { n: 15, k: 1, m: 1, scheduler: "HEFT".into(), mean_aft_s: Some(2.5), instances: 5 },
            ResultRow { n: 15, k: 1, m: 1, scheduler: "Optimal".into(), mean_aft_s: None, instances: 5 },
        ];
        let report = summarize(&rows);
        assert!(report.contains("n=10 K=1 M=1: HEFT 1.2500, RR 1.5000, Local 3.0000"));
        assert!(!report.contains("n=15 K=1 M=1: HEFT"));
        assert!(report.contains("n=10 K=1 M=1: PASS"));
        assert!(report.contains("n=15 K=1 M=1: FAIL"));
        assert!(report.contains("overall: FAIL"));
        assert_eq!(report, summarize(&rows));
    }

    fn replay_fixture() -> (Vec<MergedDag>, Platform) {
        let dags = generate_batch(&GenConfig { n: 5, seed: 11, ..Default::default() }, 2, 1).unwrap();
        (dags, Platform::single_edge())
    }

    #[test]
    fn replaying_local_matches_plan_local() {
        let (dags, platform) = replay_fixture();
        let mut t = String::new();
        for (i, dag) in dags.iter().enumerate() {
            t.push_str(&format!("{{\"op\":\"reset\",\"instance_id\":{i}}}\n{{\"seq\":1}}\n"));
            for a in plan_local(dag).0 {
                t.push_str(&format!("{{\"op\":\"step\",\"action\":[{},0]}}\n", a.node));
            }
        }
        let res = replay_agent(&dags, &platform, &t).unwrap();
        let expected: f64 = dags
            .iter()
            .map(|d| evaluate_partial(d, &platform, &plan_local(d).0).unwrap().mean_aft)
            .sum::<f64>()
            / 2.0;
        assert_eq!(res.mean_aft, expected);
        assert_eq!(res.row(&dags, &platform).scheduler, "DTODRL");
        assert_eq!(res.row(&dags, &platform).n, 5);
    }

    #[test]
    fn replay_errors_carry_line_numbers() {
        let (dags, platform) = replay_fixture();
        let err = replay_agent(&dags, &platform, "{\"op\":\"reset\",\"instance_id\":0}\n{\"op\":\"step\",\"act").unwrap_err();
        assert!(matches!(err, ReplayError::Parse { line: 2, column, .. } if column > 0));
        let last = dags[0].exec_ids().last().unwrap();
        let t = format!("{{\"op\":\"reset\",\"instance_id\":0}}\n{{\"op\":\"step\",\"action\":[{last},1]}}\n");
        assert!(matches!(replay_agent(&dags, &platform, &t), Err(ReplayError::IllegalAction { line: 2, .. })));
        let t = "{\"op\":\"reset\",\"instance_id\":0}\n{\"op\":\"close\"}\n";
        assert_eq!(
            replay_agent(&dags, &platform, t).unwrap_err(),
            ReplayError::Incomplete { instance: 0, line: 2 }
        );
        assert_eq!(replay_agent(&dags, &platform, "").unwrap_err(), ReplayError::Empty);
    }
}
