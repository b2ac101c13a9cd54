//! Offloading MDP exposed over newline-delimited JSON.
//!
//! One request object per line in, one response object per line out.
//!
//! ```text
//! {"op":"reset","instance_id":0}
//! {"op":"step","action":[3,1]}
//! {"op":"spec"}
//! {"op":"close"}
//! ```
//!
//! Observations carry raw SI values (cycles, bytes, seconds, cycles/s).
//! `loc` is -1 until a node is scheduled, then its location index (0 = the
//! owner's device, m = edge server m). Rewards are the drop in mean
//! estimated finish time, where unscheduled nodes are assumed to run
//! locally in id order.

use std::io::{BufRead, Write};
use std::net::TcpListener;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gen::{generate_instance, GenConfig, GenError};
use crate::model::{Action, Location, MergedDag, NodeId};
use crate::timing::{evaluate_partial, IllegalReason, SimState, TimingError};

type Platform = crate::model::Platform<f64>;

pub const NODE_FEATURES: [&str; 6] = ["cycles", "upload_bytes", "in_degree", "out_degree", "loc", "ava"];
pub const LOCATION_FEATURES: [&str; 2] = ["eat_s", "freq_hz"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Actions taken so far in this episode.
    pub t: usize,
    pub n_nodes: usize,
    /// `[cycles, upload_bytes, in_degree, out_degree, loc, ava]` per node.
    pub node_features: Vec<[f64; 6]>,
    /// Directed edges `[src, dst]`; the adjacency diagonal is implicit.
    pub edges: Vec<[usize; 2]>,
    /// `[eat, freq]` for the K user devices then the M servers.
    pub location_features: Vec<[f64; 2]>,
    pub node_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub mean_aft: f64,
    pub baseline_aft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub time: String,
    pub work: String,
    pub data: String,
    pub rate: String,
    pub frequency: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "U")]
    pub u: usize,
    /// `[N, M + 1]`: node head and location head sizes.
    pub action_dims: [usize; 2],
    pub instances: usize,
    pub node_features: Vec<String>,
    pub location_features: Vec<String>,
    pub units: Units,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("unknown instance {0}")]
    UnknownInstance(usize),
    #[error("node {0} is masked out")]
    MaskedAction(NodeId),
    #[error("location index {loc} outside 0..={max}")]
    InvalidLocation { loc: usize, max: usize },
    #[error("no active episode; send reset first")]
    NoEpisode,
    #[error("episode is finished; send reset")]
    EpisodeDone,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Timing(#[from] TimingError),
}

impl EnvError {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvError::UnknownInstance(_) => "UnknownInstance",
            EnvError::MaskedAction(_) => "MaskedAction",
            EnvError::InvalidLocation { .. } => "InvalidLocation",
            EnvError::NoEpisode => "NoEpisode",
            EnvError::EpisodeDone => "EpisodeDone",
            EnvError::BadRequest(_) => "BadRequest",
            EnvError::Generator(_) => "Generator",
            EnvError::Timing(_) => "Timing",
        }
    }
}

/// What to load on reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetTarget {
    Instance(usize),
    /// Fresh instance from the environment's generator config.
    Generated { seed: u64 },
}

#[derive(Debug, Clone)]
struct Episode {
    dag: Arc<MergedDag>,
    state: SimState<f64>,
    actions: Vec<Action>,
    total_eft: f64,
    baseline_total: f64,
}

/// Single-episode environment. Cheap to create per connection; the
/// dataset is shared.
#[derive(Debug, Clone)]
pub struct Environment {
    dataset: Arc<Vec<Arc<MergedDag>>>,
    platform: Platform,
    generator: GenConfig,
    episode: Option<Episode>,
}

impl Environment {
    pub fn new(dataset: Vec<MergedDag>, platform: Platform, generator: GenConfig) -> Self {
        Self::shared(Arc::new(dataset.into_iter().map(Arc::new).collect()), platform, generator)
    }

    pub fn shared(dataset: Arc<Vec<Arc<MergedDag>>>, platform: Platform, generator: GenConfig) -> Self {
        Self {
            dataset,
            platform,
            generator,
            episode: None,
        }
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn dataset_len(&self) -> usize {
        self.dataset.len()
    }

    pub fn reset(&mut self, target: ResetTarget) -> Result<Observation, EnvError> {
        let dag = match target {
            ResetTarget::Instance(id) => self
                .dataset
                .get(id)
                .cloned()
                .ok_or(EnvError::UnknownInstance(id))?,
            ResetTarget::Generated { seed } => {
                let cfg = GenConfig {
                    seed,
                    ..self.generator.clone()
                };
                Arc::new(generate_instance(&cfg, 0, self.platform.k)?)
            }
        };
        let state = SimState::new(&dag, &self.platform)?;
        let baseline_total = evaluate_partial(&dag, &self.platform, &[])?.total_aft;
        self.episode = Some(Episode {
            dag,
            state,
            actions: Vec::new(),
            total_eft: baseline_total,
            baseline_total,
        });
        Ok(self.observation().expect("episode just created"))
    }

    /// Applies `(node, loc_index)`. On error nothing changes.
    pub fn step(&mut self, node: NodeId, loc_index: usize) -> Result<StepOutcome, EnvError> {
        let platform = self.platform.clone();
        let ep = self.episode.as_mut().ok_or(EnvError::NoEpisode)?;
        if ep.state.is_complete(&ep.dag) {
            return Err(EnvError::EpisodeDone);
        }
        if loc_index > platform.m {
            return Err(EnvError::InvalidLocation {
                loc: loc_index,
                max: platform.m,
            });
        }
        if node >= ep.dag.len() || !ep.state.is_available(&ep.dag, node) {
            return Err(EnvError::MaskedAction(node));
        }
        let action = Action::new(node, Location::from_index(loc_index));
        let mut state = ep.state.clone();
        state.apply(&ep.dag, &platform, action).map_err(|e| match e {
            TimingError::IllegalAction {
                reason: IllegalReason::Unavailable | IllegalReason::AlreadyScheduled,
                ..
            } => EnvError::MaskedAction(node),
            other => EnvError::Timing(other),
        })?;
        let mut actions = ep.actions.clone();
        actions.push(action);
        let total = evaluate_partial(&ep.dag, &platform, &actions)?.total_aft;
        let users = ep.dag.users() as f64;
        let reward = (ep.total_eft - total) / users;

        ep.state = state;
        ep.actions = actions;
        ep.total_eft = total;
        let done = ep.state.is_complete(&ep.dag);
        let info = StepInfo {
            mean_aft: total / users,
            baseline_aft: ep.baseline_total / users,
        };
        Ok(StepOutcome {
            observation: self.observation().expect("episode active"),
            reward,
            done,
            info,
        })
    }

    pub fn observation(&self) -> Option<Observation> {
        let ep = self.episode.as_ref()?;
        let dag = &ep.dag;
        let node_features = dag
            .nodes()
            .iter()
            .map(|node| {
                let loc = ep.state.location(node.id).map_or(-1.0, |l| l.index() as f64);
                let ava = if ep.state.is_available(dag, node.id) { 1.0 } else { 0.0 };
                [
                    node.cycles as f64,
                    node.upload_bytes as f64,
                    dag.preds(node.id).len() as f64,
                    dag.succs(node.id).len() as f64,
                    loc,
                    ava,
                ]
            })
            .collect();
        let location_features = (0..self.platform.devices())
            .map(|d| {
                let freq = if d < self.platform.k {
                    self.platform.f_ue
                } else {
                    self.platform.f_es
                };
                [ep.state.device_eat(d), freq]
            })
            .collect();
        Some(Observation {
            t: ep.state.steps(),
            n_nodes: dag.len(),
            node_features,
            edges: dag.edges().iter().map(|e| [e.src, e.dst]).collect(),
            location_features,
            node_mask: (0..dag.len()).map(|i| ep.state.is_available(dag, i)).collect(),
        })
    }

    pub fn spec(&self) -> EnvSpec {
        let n = self
            .episode
            .as_ref()
            .map(|ep| ep.dag.len())
            .or_else(|| self.dataset.first().map(|d| d.len()))
            .unwrap_or(0);
        EnvSpec {
            n,
            k: self.platform.k,
            m: self.platform.m,
            u: self.platform.devices(),
            action_dims: [n, self.platform.m + 1],
            instances: self.dataset.len(),
            node_features: NODE_FEATURES.iter().map(|s| s.to_string()).collect(),
            location_features: LOCATION_FEATURES.iter().map(|s| s.to_string()).collect(),
            units: Units {
                time: "s".into(),
                work: "cycles".into(),
                data: "bytes".into(),
                rate: "bit/s".into(),
                frequency: "cycles/s".into(),
            },
        }
    }

    /// Actions applied in the current episode.
    pub fn actions(&self) -> &[Action] {
        self.episode.as_ref().map_or(&[], |ep| &ep.actions)
    }

    /// Digest of the observable episode state.
    pub fn state_digest(&self) -> String {
        let obs = serde_json::to_string(&self.observation()).expect("serializable");
        let acts = serde_json::to_string(self.actions()).expect("serializable");
        hex::encode(Sha256::new().chain_update(obs).chain_update(acts).finalize())
    }
}

/// A request line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

/// A response line. Fields irrelevant to the request are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<StepInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<EnvSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// Protocol state machine for one connection.
#[derive(Debug)]
pub struct Session {
    env: Environment,
    seq: u64,
    closed: bool,
}

impl Session {
    pub fn new(env: Environment) -> Self {
        Self {
            env,
            seq: 0,
            closed: false,
        }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn handle(&mut self, req: &Request) -> Response {
        self.seq += 1;
        let mut resp = Response {
            seq: self.seq,
            ..Default::default()
        };
        match self.dispatch(req, &mut resp) {
            Ok(()) => resp,
            Err(e) => Response {
                seq: self.seq,
                error: Some(ErrorBody {
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                }),
                ..Default::default()
            },
        }
    }

    fn dispatch(&mut self, req: &Request, resp: &mut Response) -> Result<(), EnvError> {
        match req.op.as_str() {
            "spec" => resp.spec = Some(self.env.spec()),
            "reset" => {
                let target = match (req.instance_id, req.seed) {
                    (Some(id), _) => ResetTarget::Instance(id),
                    (None, Some(seed)) => ResetTarget::Generated { seed },
                    (None, None) => ResetTarget::Instance(0),
                };
                let obs = self.env.reset(target)?;
                let ep = self.env.episode.as_ref().expect("reset succeeded");
                let users = ep.dag.users() as f64;
                resp.info = Some(StepInfo {
                    mean_aft: ep.total_eft / users,
                    baseline_aft: ep.baseline_total / users,
                });
                resp.done = Some(ep.state.is_complete(&ep.dag));
                resp.observation = Some(obs);
            }
            "step" => {
                let [node, loc] = req
                    .action
                    .ok_or_else(|| EnvError::BadRequest("step needs \"action\": [node, loc]".into()))?;
                let out = self.env.step(node, loc)?;
                resp.observation = Some(out.observation);
                resp.reward = Some(out.reward);
                resp.done = Some(out.done);
                resp.info = Some(out.info);
            }
            "close" => {
                self.closed = true;
                resp.closed = Some(true);
            }
            other => return Err(EnvError::BadRequest(format!("unknown op '{other}'"))),
        }
        Ok(())
    }

    /// Handles one raw line, including JSON parse failures.
    pub fn handle_line(&mut self, line: &str) -> Response {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                self.seq += 1;
                Response {
                    seq: self.seq,
                    error: Some(ErrorBody {
                        kind: "BadRequest".into(),
                        message: e.to_string(),
                    }),
                    ..Default::default()
                }
            }
        }
    }
}

/// Serves one connection until `close` or end of input. Every request and
/// response line is also appended to `transcript` when given.
pub fn serve_lines<R: BufRead, W: Write>(
    env: Environment,
    input: R,
    mut output: W,
    mut transcript: Option<&mut dyn Write>,
) -> std::io::Result<()> {
    let mut session = Session::new(env);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(&line);
        let text = serde_json::to_string(&resp).expect("response serializes");
        writeln!(output, "{text}")?;
        output.flush()?;
        if let Some(t) = transcript.as_deref_mut() {
            writeln!(t, "{}", line.trim())?;
            writeln!(t, "{text}")?;
        }
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread and one environment each.
pub fn serve_tcp(listener: TcpListener, env: Environment) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let env = Environment {
            episode: None,
            ..env.clone()
        };
        std::thread::spawn(move || {
            let reader = std::io::BufReader::new(match stream.try_clone() {
                Ok(s) => s,
                Err(_) => return,
            });
            let _ = serve_lines(env, reader, stream, None);
        });
    }
    Ok(())
}
