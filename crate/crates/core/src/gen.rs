//! Random layered DAG generator.
//!
//! Shape follows the usual four-knob layered generator: `n` executable
//! nodes spread over `max(1, round(sqrt(n) / alpha))` levels, level widths
//! drawn around `n / depth` with spread `beta`, edges only between adjacent
//! levels and every node's out-degree capped by `max_out_degree`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{build_user_dag, merge_dags, DagError, MergedDag, ModelIoError, TaskEdge, TaskNode, UserDag, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Executable nodes per user DAG.
    pub n: usize,
    pub max_out_degree: usize,
    /// Shape: larger values give shallower, wider graphs.
    pub alpha: f64,
    /// Regularity: spread of level widths around the mean.
    pub beta: f64,
    pub seed: u64,
    /// Required CPU cycles per node, inclusive.
    pub cycles_range: (u64, u64),
    /// Program upload size in bytes, inclusive.
    pub upload_range: (u64, u64),
    /// Edge (and result) payload in bytes, inclusive. The default is
    /// 100..500 kbit; program uploads default to 20..200 kB.
    pub edge_range: (u64, u64),
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 10,
            max_out_degree: 5,
            alpha: 1.0,
            beta: 0.5,
            seed: 0,
            cycles_range: (100_000_000, 1_000_000_000),
            upload_range: (20_000, 200_000),
            // 100..500 kbit of intermediate data per dependency
            edge_range: (12_500, 62_500),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("level {level} has {width} nodes with out-degree <= {max_out}, cannot feed {next} children")]
    InfeasibleShape {
        level: usize,
        width: usize,
        next: usize,
        max_out: usize,
    },
    #[error(transparent)]
    Dag(#[from] DagError),
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: &str| Err(GenError::InvalidConfig(msg.to_string()));
        if self.n == 0 {
            return bad("n must be >= 1");
        }
        if self.max_out_degree == 0 {
            return bad("max_out_degree must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("alpha and beta must be positive");
        }
        for (name, (lo, hi)) in [
            ("cycles_range", self.cycles_range),
            ("upload_range", self.upload_range),
            ("edge_range", self.edge_range),
        ] {
            if lo == 0 || lo > hi {
                return Err(GenError::InvalidConfig(format!(
                    "{name} must be a nonempty range of positive values"
                )));
            }
        }
        Ok(())
    }

    /// Number of levels for this config.
    pub fn depth(&self) -> usize {
        let raw = ((self.n as f64).sqrt() / self.alpha).round() as usize;
        raw.clamp(1, self.n)
    }
}

/// Width of every level, summing to `n`.
fn level_widths(cfg: &GenConfig, rng: &mut impl Rng) -> Vec<usize> {
    let depth = cfg.depth();
    let mean = cfg.n as f64 / depth as f64;
    let lo = (((1.0 - cfg.beta) * mean).ceil().max(1.0)) as usize;
    let hi = (((1.0 + cfg.beta) * mean).floor() as usize).max(lo);
    let drawn: Vec<usize> = (0..depth).map(|_| rng.gen_range(lo..=hi)).collect();
    rescale(&drawn, cfg.n)
}

/// Largest-remainder rescaling to an exact total with every entry >= 1.
fn rescale(counts: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = counts.iter().sum();
    let mut out: Vec<usize> = counts.iter().map(|&c| (c * total / sum).max(1)).collect();
    let mut rem: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c * total % sum, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut current: usize = out.iter().sum();
    let mut idx = 0;
    while current < total {
        out[rem[idx % rem.len()].1] += 1;
        current += 1;
        idx += 1;
    }
    while current > total {
        // shrink the widest level, latest first
        let (i, _) = out
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|&(_, &w)| w)
            .expect("nonempty");
        out[i] -= 1;
        current -= 1;
    }
    out
}

/// Generates the structure and attributes of one user's raw task.
pub fn generate_task(cfg: &GenConfig) -> Result<(Vec<TaskNode>, Vec<TaskEdge>), GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let widths = level_widths(cfg, &mut rng);

    let mut levels = Vec::with_capacity(widths.len());
    let mut next_id = 0;
    for &w in &widths {
        levels.push((next_id..next_id + w).collect::<Vec<usize>>());
        next_id += w;
    }

    let mut links: Vec<(usize, usize)> = Vec::new();
    for (level, pair) in levels.windows(2).enumerate() {
        let (upper, lower) = (&pair[0], &pair[1]);
        if upper.len() * cfg.max_out_degree < lower.len() {
            return Err(GenError::InfeasibleShape {
                level,
                width: upper.len(),
                next: lower.len(),
                max_out: cfg.max_out_degree,
            });
        }
        let mut out_deg = vec![0usize; upper.len()];
        let mut linked = vec![vec![false; lower.len()]; upper.len()];
        // every child gets a parent with spare budget
        #[allow(clippy::needless_range_loop)]
        for c in 0..lower.len() {
            let open: Vec<usize> = (0..upper.len())
                .filter(|&p| out_deg[p] < cfg.max_out_degree)
                .collect();
            let p = *open.choose(&mut rng).expect("budget checked above");
            out_deg[p] += 1;
            linked[p][c] = true;
        }
        // then top every parent up to a random target out-degree
        for p in 0..upper.len() {
            let target = rng.gen_range(1..=cfg.max_out_degree).min(lower.len());
            while out_deg[p] < target {
                let free: Vec<usize> = (0..lower.len()).filter(|&c| !linked[p][c]).collect();
                let c = *free.choose(&mut rng).expect("target bounded by level width");
                linked[p][c] = true;
                out_deg[p] += 1;
            }
        }
        for (p, row) in linked.iter().enumerate() {
            for (c, &on) in row.iter().enumerate() {
                if on {
                    links.push((upper[p], lower[c]));
                }
            }
        }
    }

    let nodes: Vec<TaskNode> = (0..cfg.n)
        .map(|_| TaskNode {
            cycles: rng.gen_range(cfg.cycles_range.0..=cfg.cycles_range.1),
            upload_bytes: rng.gen_range(cfg.upload_range.0..=cfg.upload_range.1),
            result_bytes: 0,
        })
        .collect();
    let edges: Vec<TaskEdge> = links
        .into_iter()
        .map(|(src, dst)| TaskEdge {
            src,
            dst,
            bytes: rng.gen_range(cfg.edge_range.0..=cfg.edge_range.1),
        })
        .collect();
    let mut nodes = nodes;
    let mut has_succ = vec![false; cfg.n];
    for e in &edges {
        has_succ[e.src] = true;
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        if !has_succ[i] {
            node.result_bytes = rng.gen_range(cfg.edge_range.0..=cfg.edge_range.1);
        }
    }
    Ok((nodes, edges))
}

/// One user DAG with sentinels, reproducible from `cfg.seed`.
pub fn generate(cfg: &GenConfig, owner: UserId) -> Result<UserDag, GenError> {
    let (nodes, edges) = generate_task(cfg)?;
    Ok(build_user_dag(&nodes, &edges, owner)?)
}

/// splitmix64 finalizer, used to derive independent per-instance seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of user `user` in instance `index` of a batch.
pub fn instance_seed(seed: u64, index: usize, user: usize) -> u64 {
    mix(mix(mix(seed) ^ index as u64) ^ user as u64)
}

/// One merged instance of `users` independently generated DAGs.
pub fn generate_instance(cfg: &GenConfig, index: usize, users: usize) -> Result<MergedDag, GenError> {
    let dags = (0..users)
        .map(|u| {
            let c = GenConfig {
                seed: instance_seed(cfg.seed, index, u),
                ..cfg.clone()
            };
            generate(&c, u)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(merge_dags(&dags)?)
}

pub fn generate_batch(cfg: &GenConfig, count: usize, users: usize) -> Result<Vec<MergedDag>, GenError> {
    if count == 0 || users == 0 {
        return Err(GenError::InvalidConfig("count and K must be >= 1".into()));
    }
    (0..count).map(|i| generate_instance(cfg, i, users)).collect()
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    #[serde(rename = "K")]
    pub k: usize,
    pub count: usize,
    pub instances: Vec<ManifestEntry>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelIoError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("{file}: checksum mismatch")]
    Checksum { file: String },
}

pub fn instance_file_name(index: usize) -> String {
    format!("instance_{index:04}.json")
}

/// Generates and writes `count` instances plus a manifest into `dir`.
pub fn write_dataset(dir: &Path, cfg: &GenConfig, count: usize, users: usize) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir)?;
    let dags = generate_batch(cfg, count, users)?;
    let mut instances = Vec::with_capacity(count);
    for (i, dag) in dags.iter().enumerate() {
        let file = instance_file_name(i);
        let text = dag.to_json();
        std::fs::write(dir.join(&file), &text)?;
        instances.push(ManifestEntry {
            file,
            sha256: sha256_hex(&text),
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        k: users,
        count,
        instances,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads every instance listed in `dir/manifest.json`, verifying checksums.
/// Without a manifest, all `*.json` files are loaded in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<MergedDag>, DatasetError> {
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        return manifest
            .instances
            .iter()
            .map(|entry| {
                let text = std::fs::read_to_string(dir.join(&entry.file))?;
                if sha256_hex(&text) != entry.sha256 {
                    return Err(DatasetError::Checksum {
                        file: entry.file.clone(),
                    });
                }
                Ok(MergedDag::from_json(&text)?)
            })
            .collect();
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| Ok(MergedDag::load(p)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeKind;

    fn cfg(n: usize, seed: u64) -> GenConfig {
        GenConfig {
            n,
            seed,
            ..GenConfig::default()
        }
    }

    fn levels_of(dag: &UserDag) -> Vec<usize> {
        // longest distance from Start
        let mut depth = vec![0usize; dag.nodes.len()];
        for e in &dag.edges {
            depth[e.dst] = depth[e.dst].max(depth[e.src] + 1);
        }
        depth
    }

    #[test]
    fn single_node_is_a_chain() {
        for (alpha, beta) in [(0.1, 0.1), (5.0, 2.0)] {
            let dag = generate(&GenConfig { alpha, beta, ..cfg(1, 3) }, 0).unwrap();
            assert_eq!(dag.node_count(), 3);
            assert_eq!(dag.edges.len(), 2);
        }
    }

    #[test]
    fn wide_four_node_shape_is_shallow() {
        for seed in 0..20 {
            let dag = generate(&GenConfig { alpha: 2.0, ..cfg(4, seed) }, 0).unwrap();
            let depth = levels_of(&dag);
            let exec_depth = depth[1..dag.node_count() - 1].iter().max().unwrap();
            assert!(*exec_depth <= 2);
        }
    }

    #[test]
    fn deep_shape_has_more_levels() {
        let c = GenConfig { alpha: 0.5, ..cfg(16, 1) };
        assert_eq!(c.depth(), 8);
        let dag = generate(&c, 0).unwrap();
        let depth = levels_of(&dag);
        assert_eq!(depth[1..17].iter().max(), Some(&8));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_instance(&cfg(20, 9), 0, 2).unwrap().to_json();
        let b = generate_instance(&cfg(20, 9), 0, 2).unwrap().to_json();
        assert_eq!(a, b);
        let c = generate_instance(&cfg(20, 10), 0, 2).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_shape_is_reported() {
        // out-degree 1 cannot feed a level wider than its parent level
        let base = GenConfig {
            alpha: 0.5,
            beta: 1.9,
            max_out_degree: 1,
            ..cfg(10, 0)
        };
        let mut saw = false;
        for seed in 0..50 {
            match generate(&GenConfig { seed, ..base.clone() }, 0) {
                Err(GenError::InfeasibleShape { width, next, .. }) => {
                    assert!(width < next);
                    saw = true;
                }
                Ok(dag) => assert!(dag.edges.iter().all(|e| e.src < e.dst)),
                Err(other) => panic!("{other}"),
            }
        }
        assert!(saw);
    }

    #[test]
    fn batch_shape() {
        let batch = generate_batch(&cfg(10, 4), 50, 1).unwrap();
        assert_eq!(batch.len(), 50);
        assert!(batch.iter().all(|d| d.len() == 12));
    }

    #[test]
    fn two_user_start_degree_adds_up() {
        let c = cfg(8, 11);
        let merged = generate_batch(&c, 1, 2).unwrap().remove(0);
        let u0 = generate(&GenConfig { seed: instance_seed(11, 0, 0), ..c.clone() }, 0).unwrap();
        let u1 = generate(&GenConfig { seed: instance_seed(11, 0, 1), ..c.clone() }, 1).unwrap();
        assert_eq!(merged.succs(0).len(), u0.start_out_degree() + u1.start_out_degree());
        assert_eq!(merged.nodes().iter().filter(|n| n.kind == NodeKind::End).count(), 2);
    }

    #[test]
    fn rescale_hits_total() {
        assert_eq!(rescale(&[1, 1, 1], 3), vec![1, 1, 1]);
        assert_eq!(rescale(&[5, 5], 4).iter().sum::<usize>(), 4);
        assert_eq!(rescale(&[1, 9], 2), vec![1, 1]);
        assert_eq!(rescale(&[3, 3, 3], 10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn dataset_roundtrip_checks_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), &cfg(6, 2), 3, 2).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[0], generate_instance(&cfg(6, 2), 0, 2).unwrap());

        let again = tempfile::tempdir().unwrap();
        let regenerated = write_dataset(again.path(), &manifest.config, manifest.count, manifest.k).unwrap();
        assert_eq!(regenerated.instances, manifest.instances);

        std::fs::write(dir.path().join("instance_0001.json"), loaded[0].to_json()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::Checksum { .. })));
    }
}
