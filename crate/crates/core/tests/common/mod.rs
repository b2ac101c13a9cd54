//! Reference simulator written without the engine's `SimState`.
//!
//! Every call replays a plan prefix from nothing: resources live in a map
//! keyed by what they are, nodes are pushed through upload, inbound
//! transfers and execution in plan order, the rest of the graph runs on
//! the owner's device in id order and each user's sink collects results.

#![allow(dead_code)]

use std::collections::HashMap;

use dagsched::model::{Action, Location, NodeKind};
use dagsched::{MergedDag, Platform};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Place {
    Ue(usize),
    Es(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Resource {
    Cpu(Place, usize),
    Uplink(usize),
    /// A user device sends everything through one queue.
    UeSend(usize),
    /// A server keeps one queue per receiving place.
    EsSend(usize, Place),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    /// `(st, ft, loc)` of every executable node, `None` for sentinels.
    pub nodes: Vec<Option<(f64, f64, Location)>>,
    pub aft: Vec<f64>,
    pub total: f64,
    pub mean: f64,
}

fn bits(bytes: u64) -> f64 {
    8.0 * bytes as f64
}

fn place(owner: usize, loc: Location) -> Place {
    match loc {
        Location::Own => Place::Ue(owner),
        Location::Edge(m) => Place::Es(m),
    }
}

struct Oracle<'a> {
    dag: &'a MergedDag,
    p: &'a Platform,
    free: HashMap<Resource, f64>,
    done: Vec<Option<(f64, f64, Location)>>,
}

impl<'a> Oracle<'a> {
    fn at(&self, r: Resource) -> f64 {
        self.free.get(&r).copied().unwrap_or(0.0)
    }

    /// Occupies `r` for `seconds`, starting no earlier than `ready`.
    fn send(&mut self, r: Resource, ready: f64, seconds: f64) -> f64 {
        let t = ready.max(self.at(r)) + seconds;
        self.free.insert(r, t);
        t
    }

    fn link(&self, owner: usize, from: Location, to: Location) -> (Resource, f64) {
        match place(owner, from) {
            Place::Ue(k) => (Resource::UeSend(k), self.p.tr_l),
            Place::Es(m) => {
                let rate = if to == Location::Own { self.p.tr_l } else { self.p.tr_s };
                (Resource::EsSend(m, place(owner, to)), rate)
            }
        }
    }

    fn run_node(&mut self, a: Action) {
        let node = self.dag.node(a.node);
        let owner = node.owner;
        let here = place(owner, a.loc);

        let mut earliest = 0.0_f64;
        if a.loc != Location::Own {
            let up = self.send(Resource::Uplink(owner), 0.0, bits(node.upload_bytes) / self.p.tr_l);
            earliest = earliest.max(up);
        }
        for e in self.dag.preds(a.node) {
            let Some((_, ft, from)) = self.done[e.src] else { continue };
            let arrive = if from == a.loc {
                ft
            } else {
                let (r, rate) = self.link(owner, from, a.loc);
                self.send(r, ft, bits(e.bytes) / rate)
            };
            earliest = earliest.max(arrive);
        }

        let cores = match here {
            Place::Ue(_) => 1,
            Place::Es(_) => self.p.procs_per_es,
        };
        let mut core = 0;
        for c in 1..cores {
            if self.at(Resource::Cpu(here, c)) < self.at(Resource::Cpu(here, core)) {
                core = c;
            }
        }
        let st = earliest.max(self.at(Resource::Cpu(here, core)));
        let freq = match here {
            Place::Ue(_) => self.p.f_ue,
            Place::Es(_) => self.p.f_es,
        };
        let ft = st + node.cycles as f64 / freq;
        self.free.insert(Resource::Cpu(here, core), ft);
        self.done[a.node] = Some((st, ft, a.loc));
    }
}

/// Timing of `prefix` followed by local completion, computed from scratch.
pub fn oracle_eval(dag: &MergedDag, p: &Platform, prefix: &[Action]) -> OracleRun {
    let mut o = Oracle {
        dag,
        p,
        free: HashMap::new(),
        done: vec![None; dag.len()],
    };
    for &a in prefix {
        o.run_node(a);
    }
    for node in dag.nodes() {
        if node.kind == NodeKind::Exec && o.done[node.id].is_none() {
            o.run_node(Action::new(node.id, Location::Own));
        }
    }
    let mut aft = Vec::new();
    for (user, &end) in dag.ends().iter().enumerate() {
        let mut t = 0.0_f64;
        for e in dag.preds(end) {
            let Some((_, ft, from)) = o.done[e.src] else { continue };
            let arrive = if from == Location::Own {
                ft
            } else {
                let (r, rate) = o.link(user, from, Location::Own);
                o.send(r, ft, bits(e.bytes) / rate)
            };
            t = t.max(arrive);
        }
        aft.push(t);
    }
    let mut total = 0.0;
    for &a in &aft {
        total += a;
    }
    OracleRun {
        nodes: o.done,
        mean: total / aft.len() as f64,
        aft,
        total,
    }
}

/// A random dependency-safe order with random locations.
pub fn random_plan<R: Rng>(dag: &MergedDag, servers: usize, rng: &mut R) -> Vec<Action> {
    let mut missing: Vec<usize> = (0..dag.len())
        .map(|i| dag.preds(i).iter().filter(|e| dag.node(e.src).kind == NodeKind::Exec).count())
        .collect();
    let mut ready: Vec<usize> = dag.exec_ids().filter(|&i| missing[i] == 0).collect();
    let mut plan = Vec::new();
    while !ready.is_empty() {
        let pick = rng.gen_range(0..ready.len());
        let node = ready.swap_remove(pick);
        plan.push(Action::new(node, Location::from_index(rng.gen_range(0..=servers))));
        for e in dag.succs(node) {
            missing[e.dst] -= 1;
            if missing[e.dst] == 0 && dag.node(e.dst).kind == NodeKind::Exec {
                ready.push(e.dst);
            }
        }
    }
    plan
}
