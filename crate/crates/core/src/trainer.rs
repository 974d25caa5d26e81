//! Sequence training with cross-entropy over a window of steps, submap
//! sampling, descriptor jitter, sim/real-like domain mixing and
//! validation-based early stopping.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{DiffError, Gradients, OptimConfig, OptimizerKind, Optimizer, ParamStore, Tape, Tensor, Var};
use crate::localizer::{Architecture, LocalizerError, LocalizerModel};
use crate::map_sampler::{sample_submap_with, SamplerError};
use crate::nn::{update_running_stats, Mode};
use crate::simworld::Domain;
use crate::topo_graph::{build_map_real, MapError, NodeId, Pose2D, TopoMap};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyData(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Model(#[from] LocalizerError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Observation sequence on a map with one ground-truth node per observation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub observations: Vec<Vec<f64>>,
    pub poses: Vec<Option<Pose2D>>,
    pub map: Arc<TopoMap>,
    pub targets: Vec<NodeId>,
    pub domain: Domain,
}

impl Sample {
    pub fn new(
        observations: Vec<Vec<f64>>,
        poses: Vec<Option<Pose2D>>,
        map: Arc<TopoMap>,
        targets: Vec<NodeId>,
        domain: Domain,
    ) -> Result<Self> {
        let s = Self {
            observations,
            poses,
            map,
            targets,
            domain,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.observations.len();
        if n == 0 {
            return Err(TrainError::Sample("no observations".into()));
        }
        if self.targets.len() != n || self.poses.len() != n {
            return Err(TrainError::Sample(format!(
                "{} observations, {} targets, {} poses",
                n,
                self.targets.len(),
                self.poses.len()
            )));
        }
        if let Some(t) = self.targets.iter().find(|t| t.0 >= self.map.len()) {
            return Err(TrainError::Map(MapError::InvalidNode(t.0, self.map.len())));
        }
        let d = self.map.descriptor_dim();
        if self.observations.iter().any(|o| o.len() != d) {
            return Err(TrainError::Sample(format!("observation dimension differs from map ({d})")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Sub-window `[start, start + len)` on the same map.
    pub fn window(&self, start: usize, len: usize) -> Sample {
        let end = (start + len).min(self.len());
        Sample {
            observations: self.observations[start..end].to_vec(),
            poses: self.poses[start..end].to_vec(),
            map: Arc::clone(&self.map),
            targets: self.targets[start..end].to_vec(),
            domain: self.domain,
        }
    }
}

/// Targets from the nearest map node under the pose metric.
pub fn make_sim_sample(observations: &[(Vec<f64>, Pose2D)], map: Arc<TopoMap>) -> Result<Sample> {
    if !map.has_poses() {
        return Err(MapError::PoselessMap.into());
    }
    let omega = map.config().omega_m;
    let targets = observations
        .iter()
        .map(|(_, p)| map.nearest_node(p, omega))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Sample::new(
        observations.iter().map(|(o, _)| o.clone()).collect(),
        observations.iter().map(|(_, p)| Some(*p)).collect(),
        map,
        targets,
        Domain::Sim,
    )
}

/// Node whose stride index is nearest to `t`; ties go to the earlier node.
pub fn stride_target(t: usize, m_stride: usize, n_nodes: usize) -> NodeId {
    let (q, r) = (t / m_stride, t % m_stride);
    let k = if 2 * r <= m_stride { q } else { q + 1 };
    NodeId(k.min(n_nodes - 1))
}

/// Map from every `m_stride`-th observation of the same sequence; targets by nearest stride index.
pub fn make_real_like_sample(sequence: &[Vec<f64>], m_stride: usize) -> Result<Sample> {
    let map = build_map_real(sequence, m_stride)?;
    let n = map.len();
    let targets = (0..sequence.len()).map(|t| stride_target(t, m_stride, n)).collect();
    Sample::new(
        sequence.to_vec(),
        vec![None; sequence.len()],
        Arc::new(map),
        targets,
        Domain::RealLike,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Window length in steps.
    pub tau: usize,
    pub n_prime: usize,
    pub lr_main: f64,
    pub lr_encoder: f64,
    pub patience_iters: usize,
    pub max_iters: usize,
    pub batch_size: usize,
    /// Probability that a batch element is drawn from the real-like set.
    pub mix_ratio: f64,
    pub jitter: f64,
    pub val_every: usize,
    pub bn_momentum: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 30,
            n_prime: 40,
            lr_main: 1e-3,
            lr_encoder: 1e-5,
            patience_iters: 300,
            max_iters: 3000,
            batch_size: 4,
            mix_ratio: 0.5,
            jitter: 0.02,
            val_every: 25,
            bn_momentum: 0.01,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.tau < 1 {
            return bad("tau must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio must lie in [0, 1]");
        }
        if self.patience_iters < 1 || self.val_every < 1 || self.batch_size < 1 || self.n_prime < 1 {
            return bad("patience_iters, val_every, batch_size and n_prime must be at least 1");
        }
        if self.jitter < 0.0 || self.lr_main < 0.0 || self.lr_encoder < 0.0 {
            return bad("jitter and learning rates must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            kind: OptimizerKind::Adam,
            lr_main: self.lr_main,
            lr_encoder: self.lr_encoder,
            clip_norm: self.clip_norm,
            ..OptimConfig::default()
        }
    }
}

/// Records the window loss on `tape`: submap sampling, jitter, fresh state,
/// then mean cross-entropy over every step of the sample.
pub fn record_sequence_loss<R: Rng>(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    sample: &Sample,
    n_prime: usize,
    jitter: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let sub = sample_submap_with(&sample.map, &sample.targets, n_prime, rng)?;
    let targets = sub.remap_targets(&sample.targets).expect("sampler keeps every target");
    let d = arch.dims();
    let n = sub.submap.len();

    let noise = Normal::new(0.0, jitter.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let jittered = |rows: Vec<Vec<f64>>, rng: &mut R| -> Result<Tensor> {
        let mut t = Tensor::from_rows(&rows)?;
        if jitter > 0.0 {
            t.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
        }
        Ok(t)
    };
    let node_rows: Vec<Vec<f64>> = sub.submap.nodes().iter().map(|n| n.descriptor.clone()).collect();
    let nodes = jittered(node_rows, rng)?;
    let obs = jittered(sample.observations.clone(), rng)?;
    if nodes.cols() != d.d_obs {
        return Err(LocalizerError::Dim(format!("descriptor dimension {} vs model {}", nodes.cols(), d.d_obs)).into());
    }

    let adj = Arc::new(sub.submap.adjacency().to_vec());
    let nodes = tape.constant(nodes);
    let obs = tape.constant(obs);
    let node_emb = arch.encode(tape, store, nodes)?;
    let obs_emb = arch.encode(tape, store, obs)?;
    let mut h = tape.constant(Tensor::zeros(n, d.d_h));
    let mut c = tape.constant(Tensor::zeros(n, d.d_h));
    let mut losses = Vec::with_capacity(sample.len());
    for (t, target) in targets.iter().enumerate() {
        let cur = tape.slice_rows(obs_emb, t, 1)?;
        let out = arch.step(tape, store, cur, node_emb, &adj, h, c, mode)?;
        losses.push(tape.cross_entropy(out.logits, target.0)?);
        h = out.h;
        c = out.c;
    }
    Ok(tape.mean(&losses)?)
}

/// Mean cross-entropy of a sample in evaluation mode.
pub fn sequence_loss<R: Rng>(model: &LocalizerModel, sample: &Sample, cfg: &TrainConfig, rng: &mut R) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = record_sequence_loss(
        &mut tape,
        &model.arch,
        &model.store,
        sample,
        cfg.n_prime,
        cfg.jitter,
        Mode::Eval,
        rng,
    )?;
    Ok(tape.value(loss).item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub val_loss: f64,
}

/// How often each training domain was drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAccess {
    pub sim: usize,
    pub real_like: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    pub iterations: usize,
    pub access: DomainAccess,
}

/// Training data: full sequences from which windows of `tau` steps are drawn.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    pub sim: Vec<Sample>,
    pub real_like: Vec<Sample>,
}

fn random_window<R: Rng>(set: &[Sample], tau: usize, rng: &mut R) -> Sample {
    let s = &set[rng.gen_range(0..set.len())];
    if s.len() <= tau {
        return s.clone();
    }
    let start = rng.gen_range(0..=s.len() - tau);
    s.window(start, tau)
}

/// Fixed validation windows: consecutive `tau`-step windows of each sample.
pub fn validation_windows(samples: &[Sample], tau: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for s in samples {
        let mut start = 0;
        loop {
            out.push(s.window(start, tau));
            start += tau;
            if start >= s.len() {
                break;
            }
        }
    }
    out
}

/// Mean evaluation-mode loss over `windows`, with per-window sampler seeds fixed by `seed`.
pub fn validation_loss(model: &LocalizerModel, windows: &[Sample], n_prime: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (k, w) in windows.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut tape = Tape::new();
        let loss = record_sequence_loss(&mut tape, &model.arch, &model.store, w, n_prime, 0.0, Mode::Eval, &mut rng)?;
        total += tape.value(loss).item();
    }
    Ok(total / windows.len() as f64)
}

/// Trains `model` in place and leaves it at the best validation checkpoint.
pub fn train(model: &mut LocalizerModel, data: &TrainSet, val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(TrainError::EmptyData("validation set"));
    }
    if cfg.mix_ratio < 1.0 && data.sim.is_empty() {
        return Err(TrainError::EmptyData("sim training set"));
    }
    if cfg.mix_ratio > 0.0 && data.real_like.is_empty() {
        return Err(TrainError::EmptyData("real-like training set"));
    }
    for s in data.sim.iter().chain(&data.real_like).chain(val) {
        s.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val_seed = cfg.seed ^ 0x7a11_da7a;
    let val_windows = validation_windows(val, cfg.tau);
    let mut opt = Optimizer::new(cfg.optim());
    let mut access = DomainAccess::default();

    let mut best_val = validation_loss(model, &val_windows, cfg.n_prime, val_seed)?;
    let mut best_store = model.store.clone();
    let mut best_iteration = 0;
    let mut history = Vec::new();
    let mut running = 0.0;
    let mut running_count = 0;
    let mut iteration = 0;

    while iteration < cfg.max_iters {
        iteration += 1;
        let mut grads = Gradients::zeros_like(&model.store);
        let mut stats = Vec::new();
        for _ in 0..cfg.batch_size {
            let use_real = cfg.mix_ratio > 0.0 && (cfg.mix_ratio >= 1.0 || rng.gen_bool(cfg.mix_ratio));
            let set = if use_real {
                access.real_like += 1;
                &data.real_like
            } else {
                access.sim += 1;
                &data.sim
            };
            let window = random_window(set, cfg.tau, &mut rng);
            let mut tape = Tape::new();
            let loss = record_sequence_loss(
                &mut tape,
                &model.arch,
                &model.store,
                &window,
                cfg.n_prime,
                cfg.jitter,
                Mode::Train,
                &mut rng,
            )?;
            running += tape.value(loss).item();
            running_count += 1;
            grads.accumulate(&tape.backward(loss)?, 1.0 / cfg.batch_size as f64);
            stats.extend(tape.take_bn_stats());
        }
        if !grads.is_finite() {
            return Err(TrainError::Config(format!("non-finite gradient at iteration {iteration}")));
        }
        opt.step(&mut model.store, &grads)?;
        update_running_stats(&mut model.store, &stats, cfg.bn_momentum);

        if iteration % cfg.val_every == 0 || iteration == cfg.max_iters {
            let val_loss = validation_loss(model, &val_windows, cfg.n_prime, val_seed)?;
            history.push(HistoryRow {
                iteration,
                train_loss: running / running_count as f64,
                val_loss,
            });
            running = 0.0;
            running_count = 0;
            if val_loss < best_val {
                best_val = val_loss;
                best_store = model.store.clone();
                best_iteration = iteration;
            } else if iteration - best_iteration >= cfg.patience_iters {
                break;
            }
        }
    }
    model.store = best_store;
    Ok(TrainOutcome {
        history,
        best_iteration,
        best_val_loss: best_val,
        iterations: iteration,
        access,
    })
}

/// Writes `iteration,train_loss,val_loss` rows after an optional `# ...` header line.
pub fn write_history_csv(path: &Path, history: &[HistoryRow], header_comment: Option<&str>) -> Result<()> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    if let Some(c) = header_comment {
        writeln!(f, "# {c}").map_err(io)?;
    }
    writeln!(f, "iteration,train_loss,val_loss").map_err(io)?;
    for r in history {
        writeln!(f, "{},{},{}", r.iteration, r.train_loss, r.val_loss).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localizer::{ModelConfig, ModelDims, Variant};
    use crate::topo_graph::{MapConfig, MapNode};

    fn dims() -> ModelDims {
        ModelDims {
            d_obs: 4,
            d_emb: 4,
            d_x: 4,
            d_h: 6,
            d_skip: 3,
            hidden: 6,
        }
    }

    fn chain_sample(rng: &mut ChaCha8Rng, n: usize, steps: usize) -> Sample {
        let nodes: Vec<MapNode> = (0..n)
            .map(|i| MapNode {
                descriptor: (0..4).map(|_| rng.gen_range(0.0..1.0)).collect(),
                pose: Some(Pose2D::new(i as f64, 0.0, 0.0)),
            })
            .collect();
        let edges = (1..n).map(|i| (NodeId(i - 1), NodeId(i))).collect();
        let map = Arc::new(TopoMap::new(nodes, edges, MapConfig::default()).unwrap());
        let obs: Vec<(Vec<f64>, Pose2D)> = (0..steps)
            .map(|t| {
                let x = t as f64 * (n - 1) as f64 / (steps - 1) as f64;
                let k = x.round() as usize;
                (map.descriptor(NodeId(k)).to_vec(), Pose2D::new(x, 0.0, 0.0))
            })
            .collect();
        make_sim_sample(&obs, map).unwrap()
    }

    #[test]
    fn sim_targets_match_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nodes: Vec<MapNode> = (0..12)
            .map(|_| MapNode {
                descriptor: vec![0.0],
                pose: Some(Pose2D::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(-180.0..180.0))),
            })
            .collect();
        let map = Arc::new(TopoMap::new(nodes, vec![], MapConfig::default()).unwrap());
        let obs: Vec<_> = (0..50)
            .map(|_| (vec![0.0], Pose2D::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(-180.0..180.0))))
            .collect();
        let s = make_sim_sample(&obs, Arc::clone(&map)).unwrap();
        for ((_, p), t) in obs.iter().zip(&s.targets) {
            let d: Vec<f64> = map
                .nodes()
                .iter()
                .map(|n| crate::topo_graph::pose_distance(p, &n.pose.unwrap(), 0.025))
                .collect();
            let best = (0..d.len()).fold(0, |b, i| if d[i] < d[b] { i } else { b });
            assert_eq!(t.0, best);
        }
        // an observation exactly at a node pose
        let at = vec![(vec![0.0], map.pose(NodeId(5)).unwrap())];
        assert_eq!(make_sim_sample(&at, Arc::clone(&map)).unwrap().targets, vec![NodeId(5)]);
        let poseless = Arc::new(TopoMap::new(vec![MapNode { descriptor: vec![0.0], pose: None }], vec![], MapConfig::default()).unwrap());
        assert!(make_sim_sample(&at, poseless).is_err());
    }

    #[test]
    fn smooth_trajectory_targets_move_few_hops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = chain_sample(&mut rng, 10, 40);
        for w in s.targets.windows(2) {
            assert!(s.map.edge_distance(w[0], w[1]).unwrap().unwrap() <= 1);
        }
    }

    #[test]
    fn real_like_targets_use_nearest_stride() {
        let seq: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64]).collect();
        let s = make_real_like_sample(&seq, 7).unwrap();
        assert_eq!(s.map.len(), 3);
        assert_eq!(s.targets[7], NodeId(1));
        assert_eq!(s.targets[3], NodeId(0));
        assert_eq!(s.targets[10], NodeId(1));
        for t in 0..15 {
            let best = (0..3).fold(0, |b, k: usize| if (t as i64 - 7 * k as i64).abs() < (t as i64 - 7 * b as i64).abs() { k } else { b });
            assert_eq!(s.targets[t].0, best);
        }
        assert!(make_real_like_sample(&[], 7).is_err());
        // the tail past the last node clamps to it
        let seq: Vec<Vec<f64>> = (0..13).map(|i| vec![i as f64]).collect();
        assert_eq!(make_real_like_sample(&seq, 7).unwrap().targets[12], NodeId(1));
    }

    #[test]
    fn symmetric_model_loss_is_log_n() {
        // identical descriptors and observations, edgeless map: every node sees the same input
        let n = 6;
        let nodes = (0..n)
            .map(|_| MapNode {
                descriptor: vec![0.2, 0.4, 0.1, 0.9],
                pose: None,
            })
            .collect();
        let map = Arc::new(TopoMap::new(nodes, vec![], MapConfig::default()).unwrap());
        let targets: Vec<NodeId> = (0..n).map(NodeId).collect();
        let s = Sample::new(vec![vec![0.2, 0.4, 0.1, 0.9]; n], vec![None; n], map, targets, Domain::RealLike).unwrap();
        let model = LocalizerModel::new(ModelConfig {
            dims: dims(),
            ..Default::default()
        });
        let cfg = TrainConfig {
            n_prime: n,
            jitter: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = sequence_loss(&model, &s, &cfg, &mut rng).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn random_model_loss_is_finite_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let s = chain_sample(&mut rng, 8, 10);
            let model = LocalizerModel::new(ModelConfig {
                dims: dims(),
                init_seed: seed,
                ..Default::default()
            });
            let l = sequence_loss(&model, &s, &TrainConfig::default(), &mut rng).unwrap();
            assert!(l.is_finite() && l >= 0.0);
        }
    }

    #[test]
    fn confident_correct_predictions_give_near_zero_loss() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::row_vector(vec![-40.0, 40.0, -40.0]));
        let l = tape.cross_entropy(logits, 1).unwrap();
        assert!(tape.value(l).item() < 1e-30);
    }

    fn memorization_cfg() -> TrainConfig {
        TrainConfig {
            tau: 12,
            n_prime: 8,
            lr_main: 1e-2,
            lr_encoder: 1e-2,
            patience_iters: 10_000,
            max_iters: 500,
            batch_size: 1,
            mix_ratio: 0.0,
            jitter: 0.0,
            val_every: 50,
            ..Default::default()
        }
    }

    #[test]
    fn memorizes_a_single_sample() {
        for variant in [Variant::Full, Variant::SingleFrame] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let s = chain_sample(&mut rng, 8, 12);
            // narrow ReLU stacks die easily, so this uses a wider model
            let mut model = LocalizerModel::new(ModelConfig {
                dims: ModelDims {
                    d_obs: 4,
                    d_emb: 12,
                    d_x: 12,
                    d_h: 12,
                    d_skip: 12,
                    hidden: 12,
                },
                variant,
                batch_norm: false,
                ..Default::default()
            });
            let cfg = TrainConfig {
                lr_main: 3e-3,
                lr_encoder: 3e-3,
                ..memorization_cfg()
            };
            let data = TrainSet {
                sim: vec![s.clone()],
                real_like: vec![],
            };
            let mut r0 = ChaCha8Rng::seed_from_u64(0);
            let before = sequence_loss(&model, &s, &cfg, &mut r0).unwrap();
            let out = train(&mut model, &data, &[s.clone()], &cfg).unwrap();
            let after = out.best_val_loss;
            assert!(after < 0.1 * before, "{variant:?}: {before} -> {after}");
        }
    }

    #[test]
    fn patience_one_stops_one_iteration_after_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = chain_sample(&mut rng, 6, 8);
        let mut model = LocalizerModel::new(ModelConfig {
            dims: dims(),
            ..Default::default()
        });
        let cfg = TrainConfig {
            lr_main: 0.0,
            lr_encoder: 0.0,
            patience_iters: 1,
            val_every: 1,
            bn_momentum: 0.0,
            mix_ratio: 0.0,
            ..memorization_cfg()
        };
        let data = TrainSet {
            sim: vec![s.clone()],
            real_like: vec![],
        };
        let out = train(&mut model, &data, &[s], &cfg).unwrap();
        assert_eq!(out.best_iteration, 0);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn fixed_seed_gives_identical_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = TrainSet {
            sim: vec![chain_sample(&mut rng, 8, 20)],
            real_like: vec![chain_sample(&mut rng, 8, 20)],
        };
        let val = vec![chain_sample(&mut rng, 8, 12)];
        let cfg = TrainConfig {
            max_iters: 30,
            val_every: 10,
            mix_ratio: 0.5,
            tau: 8,
            n_prime: 6,
            batch_size: 2,
            ..Default::default()
        };
        let run = || {
            let mut m = LocalizerModel::new(ModelConfig {
                dims: dims(),
                ..Default::default()
            });
            let out = train(&mut m, &data, &val, &cfg).unwrap();
            (out, m.store)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(a.access.sim + a.access.real_like, 60);
    }

    #[test]
    fn mix_ratio_extremes_never_touch_the_other_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sim = vec![chain_sample(&mut rng, 6, 10)];
        let real = vec![chain_sample(&mut rng, 6, 10)];
        let val = vec![chain_sample(&mut rng, 6, 10)];
        for (ratio, data) in [
            (0.0, TrainSet { sim: sim.clone(), real_like: vec![] }),
            (1.0, TrainSet { sim: vec![], real_like: real.clone() }),
        ] {
            let mut m = LocalizerModel::new(ModelConfig {
                dims: dims(),
                ..Default::default()
            });
            let cfg = TrainConfig {
                max_iters: 10,
                val_every: 5,
                mix_ratio: ratio,
                tau: 5,
                n_prime: 6,
                ..Default::default()
            };
            let out = train(&mut m, &data, &val, &cfg).unwrap();
            if ratio == 0.0 {
                assert_eq!(out.access.real_like, 0);
            } else {
                assert_eq!(out.access.sim, 0);
            }
        }
    }

    #[test]
    fn rejects_bad_config_and_empty_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = chain_sample(&mut rng, 5, 6);
        let mut m = LocalizerModel::new(ModelConfig {
            dims: dims(),
            ..Default::default()
        });
        let data = TrainSet {
            sim: vec![s.clone()],
            real_like: vec![],
        };
        let bad = TrainConfig {
            tau: 0,
            ..Default::default()
        };
        assert!(matches!(train(&mut m, &data, &[s.clone()], &bad), Err(TrainError::Config(_))));
        let cfg = TrainConfig::default();
        assert!(matches!(train(&mut m, &data, &[s.clone()], &cfg), Err(TrainError::EmptyData(_))));
        assert!(matches!(train(&mut m, &data, &[], &cfg), Err(TrainError::EmptyData(_))));
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let rows = [HistoryRow {
            iteration: 5,
            train_loss: 1.5,
            val_loss: 1.25,
        }];
        write_history_csv(&p, &rows, Some("seed=1")).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "# seed=1\niteration,train_loss,val_loss\n5,1.5,1.25\n");
    }
}
