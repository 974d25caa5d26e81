//! Dataset assembly on generated worlds: training/validation samples in both
//! domains and categorised test episodes, plus evaluation of several
//! localizers over them.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::{eval_run, pool, predict_nearest, predict_sequence, EvalError, LocEvalReport, LocMetrics};
use crate::localizer::LocalizerModel;
use crate::navigation::{
    nav_metrics, run_trial, ModelLocalizer, NavConfig, NavError, NavMetrics, NearestLocalizer, NodeLocalizer,
    OracleLocalizer, TrialOutcome, TrialSetup,
};
use crate::simworld::{
    generate_trajectory, generate_world, record, DeviationCategory, Domain, ObservationModel, Recording, SimError,
    TrajectorySpec, World, WorldSpec,
};
use crate::topo_graph::{build_map_real, build_map_sim, MapConfig, MapError, NodeId, Pose2D, TopoMap};
use crate::trainer::{make_real_like_sample, make_sim_sample, Sample, TrainError, TrainSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Layout template; each world replaces the seed.
    pub world: WorldSpec,
    pub d_clutter: usize,
    /// Seed of the observation model and its domain shift.
    pub obs_seed: u64,
    pub map: MapConfig,
    /// Path advance per observation [m].
    pub step: f64,
    pub train_worlds: usize,
    pub val_worlds: usize,
    pub test_worlds: usize,
    /// Sequences per training world in each domain.
    pub sim_sequences: usize,
    pub real_sequences: usize,
    pub max_deviation: f64,
    /// Test sequences per world and category.
    pub test_sequences: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::benchmark(0),
            d_clutter: 4,
            obs_seed: 7,
            map: MapConfig {
                omega_m: 0.025,
                alpha_th: 1.0,
                m_stride: 3,
            },
            step: 0.4,
            train_worlds: 18,
            val_worlds: 4,
            test_worlds: 3,
            sim_sequences: 4,
            real_sequences: 4,
            max_deviation: 2.0,
            test_sequences: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nav(#[from] NavError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Split-specific world seeds so train, validation and test worlds never coincide.
pub fn world_seed(root: u64, split: &str, k: usize) -> u64 {
    let tag = match split {
        "train" => 1u64,
        "val" => 2,
        "test" => 3,
        _ => 4,
    };
    root.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (tag << 56) ^ (k as u64).wrapping_mul(0x0100_0000_01b3)
}

impl BenchmarkConfig {
    pub fn observation_model(&self) -> ObservationModel {
        ObservationModel::standard(self.world.d_feat, self.d_clutter, self.obs_seed)
    }

    pub fn d_obs(&self) -> usize {
        self.world.d_feat + self.d_clutter
    }

    pub fn world(&self, seed: u64) -> Result<World> {
        let spec = WorldSpec {
            seed,
            ..self.world.clone()
        };
        Ok(generate_world(&spec)?)
    }

    fn trajectory_spec(&self, world: &World, deviation: f64, rng: &mut ChaCha8Rng) -> TrajectorySpec {
        TrajectorySpec {
            s_start: rng.gen_range(0.0..self.step),
            s_end: world.path_length(),
            step: self.step,
            deviation,
            seed: rng.gen(),
        }
    }

    /// Noisy recording of a trajectory at the given deviation.
    pub fn recording(&self, world: &World, deviation: f64, domain: Domain, rng: &mut ChaCha8Rng) -> Result<Recording> {
        let spec = self.trajectory_spec(world, deviation, rng);
        let traj = generate_trajectory(world, &spec, self.map.omega_m)?;
        Ok(record(world, &traj, &self.observation_model(), domain, rng.gen())?)
    }
}

/// A world with its maps: a pose-tagged map from a nominal sim traversal and a
/// pose-less strided map from a nominal real-like traversal.
#[derive(Debug, Clone)]
pub struct MappedWorld {
    pub world: World,
    pub sim_map: Arc<TopoMap>,
    pub real_map: Arc<TopoMap>,
    /// Poses of the real-like map's nodes (kept for ground truth only).
    pub real_node_poses: Vec<Pose2D>,
}

impl MappedWorld {
    pub fn new(cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        let world = cfg.world(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7073);
        let sim = cfg.recording(&world, 0.0, Domain::Sim, &mut rng)?;
        let sim_map = build_map_sim(&sim.samples(), &cfg.map)?;
        let real = cfg.recording(&world, 0.0, Domain::RealLike, &mut rng)?;
        let real_map = build_map_real(&real.observations, cfg.map.m_stride)?;
        let real_node_poses = real
            .trajectory
            .poses
            .iter()
            .step_by(cfg.map.m_stride)
            .copied()
            .collect();
        Ok(Self {
            world,
            sim_map: Arc::new(sim_map),
            real_map: Arc::new(real_map),
            real_node_poses,
        })
    }

    /// Nearest real-like map node by pose.
    pub fn real_target(&self, pose: &Pose2D, omega_m: f64) -> NodeId {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.real_node_poses.iter().enumerate() {
            let d = crate::topo_graph::pose_distance(pose, p, omega_m);
            if d < best.0 {
                best = (d, i);
            }
        }
        NodeId(best.1)
    }
}

/// Training and validation data drawn from disjoint worlds.
pub fn build_training_data(cfg: &BenchmarkConfig, root_seed: u64) -> Result<(TrainSet, Vec<Sample>)> {
    let mut set = TrainSet::default();
    for k in 0..cfg.train_worlds {
        let seed = world_seed(root_seed, "train", k);
        let mw = MappedWorld::new(cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6169);
        for _ in 0..cfg.sim_sequences {
            let dev = rng.gen_range(0.0..cfg.max_deviation);
            let rec = cfg.recording(&mw.world, dev, Domain::Sim, &mut rng)?;
            set.sim.push(make_sim_sample(&rec.samples(), Arc::clone(&mw.sim_map))?);
        }
        for _ in 0..cfg.real_sequences {
            let dev = rng.gen_range(0.0..cfg.max_deviation);
            let rec = cfg.recording(&mw.world, dev, Domain::RealLike, &mut rng)?;
            set.real_like.push(make_real_like_sample(&rec.observations, cfg.map.m_stride)?);
        }
    }
    let mut val = Vec::new();
    for k in 0..cfg.val_worlds {
        let seed = world_seed(root_seed, "val", k);
        let mw = MappedWorld::new(cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c69);
        for _ in 0..2 {
            let dev = rng.gen_range(0.0..cfg.max_deviation);
            let rec = cfg.recording(&mw.world, dev, Domain::Sim, &mut rng)?;
            val.push(make_sim_sample(&rec.samples(), Arc::clone(&mw.sim_map))?);
        }
    }
    Ok((set, val))
}

/// One evaluation sequence with its map and ground truth.
#[derive(Debug, Clone)]
pub struct TestEpisode {
    pub category: String,
    pub world_index: usize,
    pub map: Arc<TopoMap>,
    pub observations: Vec<Vec<f64>>,
    pub poses: Vec<Pose2D>,
    pub targets: Vec<NodeId>,
}

pub const REAL_LIKE: &str = "real_like";

fn deviation_for(cat: DeviationCategory, rng: &mut ChaCha8Rng) -> f64 {
    match cat {
        DeviationCategory::NotDeviated => 0.0,
        DeviationCategory::DeviatedLe1 => rng.gen_range(0.2..=1.0),
        DeviationCategory::Deviated1To2 => rng.gen_range(1.05..=2.0),
    }
}

/// Test sequences on held-out worlds: each sim deviation band, plus real-like sequences on the strided map.
pub fn build_test_episodes(cfg: &BenchmarkConfig, root_seed: u64) -> Result<Vec<TestEpisode>> {
    let mut out = Vec::new();
    for k in 0..cfg.test_worlds {
        let seed = world_seed(root_seed, "test", k);
        let mw = MappedWorld::new(cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7374);
        for cat in DeviationCategory::ALL {
            for _ in 0..cfg.test_sequences {
                let dev = deviation_for(cat, &mut rng);
                let rec = cfg.recording(&mw.world, dev, Domain::Sim, &mut rng)?;
                let s = make_sim_sample(&rec.samples(), Arc::clone(&mw.sim_map))?;
                out.push(TestEpisode {
                    category: cat.name().to_string(),
                    world_index: k,
                    map: Arc::clone(&mw.sim_map),
                    observations: rec.observations,
                    poses: rec.trajectory.poses,
                    targets: s.targets,
                });
            }
        }
        for _ in 0..cfg.test_sequences {
            let dev = rng.gen_range(0.0..=1.0);
            let rec = cfg.recording(&mw.world, dev, Domain::RealLike, &mut rng)?;
            let targets = rec
                .trajectory
                .poses
                .iter()
                .map(|p| mw.real_target(p, cfg.map.omega_m))
                .collect();
            out.push(TestEpisode {
                category: REAL_LIKE.to_string(),
                world_index: k,
                map: Arc::clone(&mw.real_map),
                observations: rec.observations,
                poses: rec.trajectory.poses,
                targets,
            });
        }
    }
    Ok(out)
}

/// A localization method under evaluation.
pub enum Predictor<'a> {
    Model(&'a LocalizerModel),
    Nearest,
    /// Ground-truth node (upper bound; sanity check).
    Oracle,
}

impl Predictor<'_> {
    pub fn predict(&self, ep: &TestEpisode) -> Result<Vec<NodeId>> {
        Ok(match self {
            Predictor::Model(m) => predict_sequence(m, &ep.map, &ep.observations)?,
            Predictor::Nearest => predict_nearest(&ep.map, &ep.observations)?,
            Predictor::Oracle => ep.targets.clone(),
        })
    }
}

pub const SIM_POOLED: &str = "sim_all";

/// Per-category pooled metrics for each method, plus a pooled row over all sim categories.
pub fn evaluate(methods: &[(&str, Predictor)], episodes: &[TestEpisode]) -> Result<LocEvalReport> {
    let mut report = LocEvalReport::default();
    for (name, pred) in methods {
        let mut by_cat: Vec<(String, Vec<LocMetrics>)> = Vec::new();
        for ep in episodes {
            let preds = pred.predict(ep)?;
            let m = eval_run(&preds, &ep.targets, &ep.map, Some(&ep.poses))?;
            match by_cat.iter_mut().find(|(c, _)| *c == ep.category) {
                Some((_, v)) => v.push(m),
                None => by_cat.push((ep.category.clone(), vec![m])),
            }
        }
        let mut sim_all = Vec::new();
        for (cat, runs) in &by_cat {
            if cat != REAL_LIKE {
                sim_all.extend(runs.iter().copied());
            }
            report.push(name, cat, pool(runs).expect("non-empty category"));
        }
        if let Some(p) = pool(&sim_all) {
            report.push(name, SIM_POOLED, p);
        }
    }
    Ok(report)
}

/// Start, goal and context of one navigation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavTrialSpec {
    pub world_index: usize,
    pub start: Pose2D,
    pub goal: NodeId,
    /// Nominal poses driven before `start`.
    pub warmup: Vec<Pose2D>,
    /// Nominal path from start to goal.
    pub waypoints: Vec<Pose2D>,
    pub seed: u64,
}

/// Navigation trials on the held-out test worlds: start somewhere along the
/// route with a small offset, goal a few metres further along it.
pub fn build_nav_trials(
    cfg: &BenchmarkConfig,
    nav: &NavConfig,
    root_seed: u64,
    count: usize,
) -> Result<(Vec<MappedWorld>, Vec<NavTrialSpec>)> {
    let worlds = (0..cfg.test_worlds.max(1))
        .map(|k| MappedWorld::new(cfg, world_seed(root_seed, "test", k)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed ^ 0x6e61_7669);
    let mut trials = Vec::with_capacity(count);
    for t in 0..count {
        let k = t % worlds.len();
        let w = &worlds[k].world;
        let ahead = rng.gen_range(4.0..9.0);
        let s0 = rng.gen_range(0.0..w.path_length() - ahead);
        let nominal = w.nominal_pose(s0)?;
        let (lat, yaw) = (rng.gen_range(-0.2..0.2), rng.gen_range(-10.0..10.0));
        let left = (nominal.theta + 90.0).to_radians();
        let start = Pose2D::new(nominal.x + lat * left.cos(), nominal.y + lat * left.sin(), nominal.theta + yaw);
        let goal_pose = w.nominal_pose(s0 + ahead)?;
        let goal = worlds[k].sim_map.nearest_node(&goal_pose, cfg.map.omega_m)?;
        let along = |from: f64, to: f64| -> Result<Vec<Pose2D>> {
            let steps = ((to - from) / cfg.step).floor().max(0.0) as usize;
            Ok((0..steps)
                .map(|i| w.nominal_pose(from + i as f64 * cfg.step))
                .collect::<std::result::Result<_, _>>()?)
        };
        let warmup = along((s0 - nav.warmup_length).max(0.0), s0)?;
        let mut waypoints = along(s0, s0 + ahead)?;
        waypoints.push(goal_pose);
        trials.push(NavTrialSpec {
            world_index: k,
            start,
            goal,
            warmup,
            waypoints,
            seed: rng.gen(),
        });
    }
    Ok((worlds, trials))
}

/// Runs every trial with one localization method on the sim-domain maps.
pub fn run_nav_benchmark(
    cfg: &BenchmarkConfig,
    nav: &NavConfig,
    worlds: &[MappedWorld],
    trials: &[NavTrialSpec],
    method: &Predictor,
) -> Result<(NavMetrics, Vec<TrialOutcome>)> {
    let obs = cfg.observation_model();
    let mut outcomes = Vec::with_capacity(trials.len());
    for t in trials {
        let mw = &worlds[t.world_index];
        let setup = TrialSetup {
            world: &mw.world,
            map: &mw.sim_map,
            obs_model: &obs,
            domain: Domain::Sim,
            start: t.start,
            goal: t.goal,
            warmup: &t.warmup,
            waypoints: &t.waypoints,
        };
        let mut loc: Box<dyn NodeLocalizer> = match method {
            Predictor::Model(m) => Box::new(ModelLocalizer::new(m, &mw.sim_map)?),
            Predictor::Nearest => Box::new(NearestLocalizer { map: &mw.sim_map }),
            Predictor::Oracle => Box::new(OracleLocalizer { map: &mw.sim_map }),
        };
        outcomes.push(run_trial(&setup, loc.as_mut(), nav, t.seed)?);
    }
    Ok((nav_metrics(&outcomes)?, outcomes))
}
