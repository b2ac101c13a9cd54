//! Earliest-available-time evaluation of offloading plans.
//!
//! Every resource (processor, upload queue, transmission channel) carries
//! an EAT: the time it next becomes free. Applying an action pushes the
//! node through upload, predecessor transfers and execution, advancing the
//! EATs it touches. Nodes on a device run FIFO on the processor with the
//! smallest EAT.
//!
//! Channels: each user device has one uplink (program uploads) and one
//! outgoing transmission channel. Each edge server has one channel per
//! peer (K devices plus the other M - 1 servers); results returned to a
//! device use the server's channel to that device.

use thiserror::Error;

use crate::model::{Action, Location, MergedDag, NodeId, NodeKind, Platform, UserId};
use crate::scalar::{transfer_seconds, Scalar};

/// Program upload cost. Zero when the node stays on its own device.
pub fn upload_time<T: Scalar>(upload_bytes: u64, loc: Location, platform: &Platform<T>) -> T {
    match loc {
        Location::Own => T::zero(),
        Location::Edge(_) => transfer_seconds(upload_bytes, platform.tr_l),
    }
}

/// Time to move `bytes` between two placements of the same user's nodes.
pub fn transmission_time<T: Scalar>(
    bytes: u64,
    src: Location,
    dst: Location,
    platform: &Platform<T>,
) -> T {
    match (src, dst) {
        _ if src == dst => T::zero(),
        (Location::Edge(_), Location::Edge(_)) => transfer_seconds(bytes, platform.tr_s),
        _ => transfer_seconds(bytes, platform.tr_l),
    }
}

pub fn execution_time<T: Scalar>(cycles: u64, loc: Location, platform: &Platform<T>) -> T {
    match loc {
        Location::Own => T::from_count(cycles) / platform.f_ue,
        Location::Edge(_) => T::from_count(cycles) / platform.f_es,
    }
}

/// Result download for a node feeding `End`; only offloaded nodes pay it.
pub fn download_time<T: Scalar>(result_bytes: u64, loc: Location, platform: &Platform<T>) -> T {
    match loc {
        Location::Own => T::zero(),
        Location::Edge(_) => transfer_seconds(result_bytes, platform.tr_l),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IllegalReason {
    UnknownNode,
    NotExecutable,
    AlreadyScheduled,
    /// Some predecessor is still unscheduled.
    Unavailable,
    /// Server index outside `1..=M`.
    NoSuchServer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("illegal action on node {node} at {loc}: {reason:?}")]
    IllegalAction {
        node: NodeId,
        loc: Location,
        reason: IllegalReason,
    },
    #[error("platform has K = {platform} users but the DAG has {dag}")]
    UserMismatch { platform: usize, dag: usize },
    #[error("{0} executable nodes are still unscheduled")]
    Incomplete(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// A device's outgoing transmission queue.
    DeviceOut(UserId),
    /// Edge server `server` (1-based) to a peer slot: `0..K` are devices,
    /// `K + s - 1` is server `s`.
    ServerOut { server: usize, peer: usize },
}

/// Timing of a single node after scheduling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeTiming<T> {
    pub st: T,
    pub ft: T,
    pub loc: Option<Location>,
}

/// What [`SimState::apply`] decided for one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Applied<T> {
    pub st: T,
    pub ft: T,
    /// Upload completion (zero for local execution).
    pub upload_finish: T,
    /// Processor index within the chosen device.
    pub processor: usize,
}

/// Mutable EAT bookkeeping for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T> {
    k: usize,
    m: usize,
    /// Per device (`0..K` user devices, then servers), per processor.
    proc_eat: Vec<Vec<T>>,
    uplink_eat: Vec<T>,
    device_out_eat: Vec<T>,
    /// Per server, per peer slot (`K + M` wide; the self slot stays unused).
    server_out_eat: Vec<Vec<T>>,
    loc: Vec<Option<Location>>,
    st: Vec<T>,
    ft: Vec<T>,
    scheduled: Vec<bool>,
    /// Unscheduled executable predecessors per node.
    pending_preds: Vec<usize>,
    steps: usize,
}

impl<T: Scalar> SimState<T> {
    /// Fresh state at t = 0 with `Start` already completed.
    pub fn new(dag: &MergedDag, platform: &Platform<T>) -> Result<Self, TimingError> {
        if platform.k != dag.users() {
            return Err(TimingError::UserMismatch {
                platform: platform.k,
                dag: dag.users(),
            });
        }
        let (k, m) = (platform.k, platform.m);
        let n = dag.len();
        let mut proc_eat = vec![vec![T::zero()]; k];
        proc_eat.extend((0..m).map(|_| vec![T::zero(); platform.procs_per_es]));
        let pending_preds = (0..n)
            .map(|i| {
                dag.preds(i)
                    .iter()
                    .filter(|e| dag.node(e.src).is_exec())
                    .count()
            })
            .collect();
        let mut scheduled = vec![false; n];
        scheduled[0] = true;
        Ok(Self {
            k,
            m,
            proc_eat,
            uplink_eat: vec![T::zero(); k],
            device_out_eat: vec![T::zero(); k],
            server_out_eat: vec![vec![T::zero(); k + m]; m],
            loc: vec![None; n],
            st: vec![T::zero(); n],
            ft: vec![T::zero(); n],
            scheduled,
            pending_preds,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn location(&self, node: NodeId) -> Option<Location> {
        self.loc[node]
    }

    pub fn start_time(&self, node: NodeId) -> T {
        self.st[node]
    }

    pub fn finish_time(&self, node: NodeId) -> T {
        self.ft[node]
    }

    pub fn is_scheduled(&self, node: NodeId) -> bool {
        self.scheduled[node]
    }

    /// `ava` flag: an unscheduled executable node whose executable
    /// predecessors are all scheduled.
    pub fn is_available(&self, dag: &MergedDag, node: NodeId) -> bool {
        dag.node(node).is_exec() && !self.scheduled[node] && self.pending_preds[node] == 0
    }

    pub fn available_nodes<'a>(&'a self, dag: &'a MergedDag) -> impl Iterator<Item = NodeId> + 'a {
        dag.exec_ids().filter(move |&i| self.is_available(dag, i))
    }

    pub fn is_complete(&self, dag: &MergedDag) -> bool {
        self.steps == dag.exec_count()
    }

    /// Index of the device hosting `loc` for a node owned by `owner`.
    pub fn device(&self, owner: UserId, loc: Location) -> usize {
        match loc {
            Location::Own => owner,
            Location::Edge(m) => self.k + m - 1,
        }
    }

    pub fn processor_eats(&self, device: usize) -> &[T] {
        &self.proc_eat[device]
    }

    /// Smallest processor EAT of a device.
    pub fn device_eat(&self, device: usize) -> T {
        self.proc_eat[device]
            .iter()
            .copied()
            .fold(T::infinity(), T::min)
    }

    pub fn uplink_eat(&self, user: UserId) -> T {
        self.uplink_eat[user]
    }

    pub fn channel_eat(&self, ch: Channel) -> T {
        match ch {
            Channel::DeviceOut(k) => self.device_out_eat[k],
            Channel::ServerOut { server, peer } => self.server_out_eat[server - 1][peer],
        }
    }

    fn channel_eat_mut(&mut self, ch: Channel) -> &mut T {
        match ch {
            Channel::DeviceOut(k) => &mut self.device_out_eat[k],
            Channel::ServerOut { server, peer } => &mut self.server_out_eat[server - 1][peer],
        }
    }

    /// Queue used to ship data from `src` to `dst` (distinct locations of
    /// the same user's nodes).
    pub fn channel(&self, owner: UserId, src: Location, dst: Location) -> Channel {
        match (src, dst) {
            (Location::Own, _) => Channel::DeviceOut(owner),
            (Location::Edge(server), Location::Own) => Channel::ServerOut { server, peer: owner },
            (Location::Edge(server), Location::Edge(to)) => Channel::ServerOut {
                server,
                peer: self.k + to - 1,
            },
        }
    }

    fn check(&self, dag: &MergedDag, action: Action) -> Result<(), TimingError> {
        let illegal = |reason| TimingError::IllegalAction {
            node: action.node,
            loc: action.loc,
            reason,
        };
        if action.node >= dag.len() {
            return Err(illegal(IllegalReason::UnknownNode));
        }
        if dag.node(action.node).kind != NodeKind::Exec {
            return Err(illegal(IllegalReason::NotExecutable));
        }
        if let Location::Edge(m) = action.loc {
            if m == 0 || m > self.m {
                return Err(illegal(IllegalReason::NoSuchServer));
            }
        }
        if self.scheduled[action.node] {
            return Err(illegal(IllegalReason::AlreadyScheduled));
        }
        if self.pending_preds[action.node] != 0 {
            return Err(illegal(IllegalReason::Unavailable));
        }
        Ok(())
    }

    /// Schedules one node. On error the state is left untouched.
    pub fn apply(
        &mut self,
        dag: &MergedDag,
        platform: &Platform<T>,
        action: Action,
    ) -> Result<Applied<T>, TimingError> {
        self.check(dag, action)?;
        let i = action.node;
        let node = dag.node(i);
        let owner = node.owner;
        let loc = action.loc;

        let upload_finish = if loc.is_offloaded() {
            let done = self.uplink_eat[owner] + upload_time(node.upload_bytes, loc, platform);
            self.uplink_eat[owner] = done;
            done
        } else {
            T::zero()
        };

        let mut ready = T::zero();
        for e in dag.preds(i) {
            let j = e.src;
            // Start contributes FT = 0 and carries no data
            let Some(src_loc) = self.loc[j] else { continue };
            let arrival = if src_loc == loc {
                self.ft[j]
            } else {
                let ch = self.channel(owner, src_loc, loc);
                let ready_at = self.ft[j];
                let slot = self.channel_eat_mut(ch);
                let done = ready_at.max(*slot) + transmission_time(e.bytes, src_loc, loc, platform);
                *slot = done;
                done
            };
            ready = ready.max(arrival);
        }

        let device = self.device(owner, loc);
        let (processor, proc_eat) = self.proc_eat[device]
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::infinity()), |best, (p, eat)| if eat < best.1 { (p, eat) } else { best });
        let st = proc_eat.max(upload_finish).max(ready);
        let ft = st + execution_time(node.cycles, loc, platform);
        self.proc_eat[device][processor] = ft;

        self.loc[i] = Some(loc);
        self.st[i] = st;
        self.ft[i] = ft;
        self.scheduled[i] = true;
        self.steps += 1;
        for e in dag.succs(i) {
            self.pending_preds[e.dst] -= 1;
        }
        Ok(Applied {
            st,
            ft,
            upload_finish,
            processor,
        })
    }

    /// Schedules every remaining executable node on its own device in
    /// ascending id order.
    pub fn complete_locally(&mut self, dag: &MergedDag, platform: &Platform<T>) -> Result<(), TimingError> {
        for i in dag.exec_ids() {
            if !self.scheduled[i] {
                self.apply(dag, platform, Action::new(i, Location::Own))?;
            }
        }
        Ok(())
    }

    /// Resolves every `End` node (result downloads included) and returns
    /// the full timing table. Requires a complete schedule.
    pub fn finish(mut self, dag: &MergedDag, platform: &Platform<T>) -> Result<EvalResult<T>, TimingError> {
        if !self.is_complete(dag) {
            return Err(TimingError::Incomplete(dag.exec_count() - self.steps));
        }
        let mut aft = Vec::with_capacity(self.k);
        for (user, &end) in dag.ends().iter().enumerate() {
            let mut done = T::zero();
            for e in dag.preds(end) {
                let Some(src_loc) = self.loc[e.src] else { continue };
                let arrival = match src_loc {
                    Location::Own => self.ft[e.src],
                    Location::Edge(_) => {
                        let ch = self.channel(user, src_loc, Location::Own);
                        let ready_at = self.ft[e.src];
                        let slot = self.channel_eat_mut(ch);
                        let t = ready_at.max(*slot) + download_time(e.bytes, src_loc, platform);
                        *slot = t;
                        t
                    }
                };
                done = done.max(arrival);
            }
            self.st[end] = done;
            self.ft[end] = done;
            aft.push(done);
        }
        let total = aft.iter().copied().fold(T::zero(), |a, b| a + b);
        let mean_aft = total / T::from_count(self.k as u64);
        let nodes = (0..dag.len())
            .map(|i| NodeTiming {
                st: self.st[i],
                ft: self.ft[i],
                loc: self.loc[i],
            })
            .collect();
        Ok(EvalResult {
            nodes,
            aft,
            total_aft: total,
            mean_aft,
        })
    }
}

/// Timing of a fully resolved plan.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult<T> {
    pub nodes: Vec<NodeTiming<T>>,
    /// Per-user actual finish time (ST of that user's `End`).
    pub aft: Vec<T>,
    pub total_aft: T,
    pub mean_aft: T,
}

/// Applies `prefix`, finishes the remaining nodes locally in id order and
/// resolves every `End`. With a complete plan this is plain evaluation.
pub fn evaluate_partial<T: Scalar>(
    dag: &MergedDag,
    platform: &Platform<T>,
    prefix: &[Action],
) -> Result<EvalResult<T>, TimingError> {
    let mut state = SimState::new(dag, platform)?;
    for &a in prefix {
        state.apply(dag, platform, a)?;
    }
    state.complete_locally(dag, platform)?;
    state.finish(dag, platform)
}

/// Drop in mean estimated finish time caused by the last action of
/// `with_action` (which must extend `without` by one action).
pub fn reward<T: Scalar>(
    dag: &MergedDag,
    platform: &Platform<T>,
    without: &[Action],
    with_action: &[Action],
) -> Result<T, TimingError> {
    let before = evaluate_partial(dag, platform, without)?.total_aft;
    let after = evaluate_partial(dag, platform, with_action)?.total_aft;
    Ok((before - after) / T::from_count(dag.users() as u64))
}
