//! Closed-loop navigation on a topological map: localize, plan with
//! Dijkstra, servo toward the next subgoal node, and score the outcome.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::baseline_nearest_descriptor;
use crate::localizer::{Localizer, LocalizerError, LocalizerModel};
use crate::simworld::{render_observation, Domain, ObservationModel, SimError, World};
use crate::topo_graph::{wrap_deg, MapError, NodeId, Pose2D, TopoMap};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("node {goal} is unreachable from node {start}")]
    Unreachable { start: NodeId, goal: NodeId },
    #[error("empty plan")]
    EmptyPlan,
    #[error("no outcomes to summarise")]
    NoOutcomes,
    #[error("invalid navigation config: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] LocalizerError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, NavError>;

/// Minimum-hop directed path. Edges have unit weight, so Dijkstra reduces to
/// breadth-first search; among shortest paths the smallest next node wins at every step.
pub fn plan_dijkstra(map: &TopoMap, start: NodeId, goal: NodeId) -> Result<Vec<NodeId>> {
    let n = map.len();
    for id in [start, goal] {
        if id.0 >= n {
            return Err(MapError::InvalidNode(id.0, n).into());
        }
    }
    // hops to the goal over reversed edges
    let mut preds = vec![Vec::new(); n];
    for &(s, t) in map.edges() {
        preds[t.0].push(s.0);
    }
    let mut to_goal = vec![usize::MAX; n];
    to_goal[goal.0] = 0;
    let mut queue = VecDeque::from([goal.0]);
    while let Some(v) = queue.pop_front() {
        for &u in &preds[v] {
            if to_goal[u] == usize::MAX {
                to_goal[u] = to_goal[v] + 1;
                queue.push_back(u);
            }
        }
    }
    if to_goal[start.0] == usize::MAX {
        return Err(NavError::Unreachable { start, goal });
    }
    let mut path = vec![start];
    let mut cur = start;
    while cur != goal {
        cur = map
            .successors(cur)
            .into_iter()
            .find(|s| to_goal[s.0] == to_goal[cur.0] - 1)
            .expect("a successor lies on a shortest path");
        path.push(cur);
    }
    Ok(path)
}

/// Node after the plan entry nearest (in undirected hops) to `current`;
/// ties resolve to the later entry. The goal once `current` is at or past the end.
pub fn next_subgoal(plan: &[NodeId], current: NodeId, map: &TopoMap) -> Result<NodeId> {
    let last = *plan.last().ok_or(NavError::EmptyPlan)?;
    let dist = map.hop_distances(current)?;
    let mut best: Option<(usize, usize)> = None;
    for (k, p) in plan.iter().enumerate() {
        if let Some(d) = dist[p.0] {
            if best.map_or(true, |(bd, _)| d <= bd) {
                best = Some((d, k));
            }
        }
    }
    Ok(match best {
        Some((_, k)) if k + 1 < plan.len() => plan[k + 1],
        Some(_) => last,
        None => plan.get(1).copied().unwrap_or(last),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub time_limit_steps: usize,
    /// Per-step caps on travel [m] and rotation [deg].
    pub max_linear: f64,
    pub max_angular_deg: f64,
    pub k_linear: f64,
    pub k_angular: f64,
    /// Goal reached when the robot position is this close to the goal node.
    pub arrival_radius: f64,
    /// Nominal waypoints count as covered within this distance; defaults to the arrival radius.
    pub coverage_radius: f64,
    /// Nominal path driven (observations only) before the trial starts [m].
    pub warmup_length: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            time_limit_steps: 80,
            max_linear: 0.4,
            max_angular_deg: 30.0,
            k_linear: 1.0,
            k_angular: 1.0,
            arrival_radius: 0.6,
            coverage_radius: 0.6,
            warmup_length: 10.0,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_limit_steps < 1 {
            return Err(NavError::Config("time_limit_steps must be at least 1".into()));
        }
        if self.max_linear <= 0.0 || self.max_angular_deg <= 0.0 || self.arrival_radius <= 0.0 {
            return Err(NavError::Config("velocity caps and arrival radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.k_linear) || self.k_angular <= 0.0 || self.k_angular > 1.0 {
            return Err(NavError::Config("gains must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One servo step toward `target`: turn (capped), then advance along the new
/// heading by the capped distance scaled by the remaining heading alignment.
/// A blocked motion stops at the last free point and reports a collision.
pub fn control_step(world: &World, pose: &Pose2D, target: &Pose2D, cfg: &NavConfig) -> (Pose2D, bool) {
    let (dx, dy) = (target.x - pose.x, target.y - pose.y);
    let dist = dx.hypot(dy);
    if dist < 1e-9 {
        return (*pose, false);
    }
    let desired = dy.atan2(dx).to_degrees();
    let err = wrap_deg(desired - pose.theta);
    let turn = (cfg.k_angular * err).clamp(-cfg.max_angular_deg, cfg.max_angular_deg);
    let theta = wrap_deg(pose.theta + turn);
    let align = wrap_deg(desired - theta).to_radians().cos().max(0.0);
    let v = (cfg.k_linear * dist).min(cfg.max_linear) * align;
    let t = theta.to_radians();
    let goal = (pose.x + v * t.cos(), pose.y + v * t.sin());
    let ((x, y), blocked) = world.sweep((pose.x, pose.y), goal);
    (Pose2D::new(x, y, theta), blocked)
}

/// Something that names the current node from an observation.
pub trait NodeLocalizer {
    fn reset(&mut self);
    /// `true_pose` is only for the oracle; learned methods must ignore it.
    fn localize(&mut self, observation: &[f64], true_pose: &Pose2D) -> Result<NodeId>;
}

pub struct OracleLocalizer<'a> {
    pub map: &'a TopoMap,
}

impl NodeLocalizer for OracleLocalizer<'_> {
    fn reset(&mut self) {}

    fn localize(&mut self, _: &[f64], true_pose: &Pose2D) -> Result<NodeId> {
        Ok(self.map.nearest_node(true_pose, self.map.config().omega_m)?)
    }
}

pub struct NearestLocalizer<'a> {
    pub map: &'a TopoMap,
}

impl NodeLocalizer for NearestLocalizer<'_> {
    fn reset(&mut self) {}

    fn localize(&mut self, observation: &[f64], _: &Pose2D) -> Result<NodeId> {
        Ok(baseline_nearest_descriptor(observation, self.map)?)
    }
}

pub struct ModelLocalizer<'m> {
    inner: Localizer<'m>,
}

impl<'m> ModelLocalizer<'m> {
    pub fn new(model: &'m LocalizerModel, map: &TopoMap) -> Result<Self> {
        Ok(Self {
            inner: Localizer::new(model, map)?,
        })
    }
}

impl NodeLocalizer for ModelLocalizer<'_> {
    fn reset(&mut self) {
        self.inner.reset();
    }

    fn localize(&mut self, observation: &[f64], _: &Pose2D) -> Result<NodeId> {
        Ok(self.inner.step(observation)?.predicted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub pose: Pose2D,
    pub localized: NodeId,
    pub subgoal: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub status: TrialStatus,
    pub visited: Vec<Pose2D>,
    pub coverage: f64,
    pub log: Vec<StepLog>,
}

/// Everything a trial needs besides the localizer.
pub struct TrialSetup<'a> {
    pub world: &'a World,
    pub map: &'a TopoMap,
    pub obs_model: &'a ObservationModel,
    pub domain: Domain,
    pub start: Pose2D,
    pub goal: NodeId,
    /// Nominal poses the robot drove through before `start` (fed to the localizer only).
    pub warmup: &'a [Pose2D],
    /// Desired path for coverage.
    pub waypoints: &'a [Pose2D],
}

fn coverage(waypoints: &[Pose2D], visited: &[Pose2D], radius: f64) -> f64 {
    if waypoints.is_empty() {
        return 1.0;
    }
    let hit = waypoints
        .iter()
        .filter(|w| visited.iter().any(|v| v.position_distance(w) <= radius))
        .count();
    hit as f64 / waypoints.len() as f64
}

/// Runs one closed-loop trial; failures are outcomes, not errors.
pub fn run_trial(setup: &TrialSetup, localizer: &mut dyn NodeLocalizer, cfg: &NavConfig, seed: u64) -> Result<TrialOutcome> {
    cfg.validate()?;
    let goal_pose = setup.map.pose(setup.goal).ok_or(MapError::PoselessMap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    localizer.reset();
    for p in setup.warmup {
        let o = render_observation(setup.world, p, setup.obs_model, setup.domain, &mut rng)?;
        localizer.localize(&o, p)?;
    }

    let mut pose = setup.start;
    let mut visited = vec![pose];
    let mut log = Vec::new();
    let finish = |status, visited: Vec<Pose2D>, log| TrialOutcome {
        status,
        coverage: coverage(setup.waypoints, &visited, cfg.coverage_radius),
        visited,
        log,
    };
    for _ in 0..cfg.time_limit_steps {
        if pose.position_distance(&goal_pose) <= cfg.arrival_radius {
            return Ok(finish(TrialStatus::Success, visited, log));
        }
        let o = render_observation(setup.world, &pose, setup.obs_model, setup.domain, &mut rng)?;
        let here = localizer.localize(&o, &pose)?;
        let subgoal = match plan_dijkstra(setup.map, here, setup.goal) {
            Ok(plan) => next_subgoal(&plan, here, setup.map)?,
            Err(NavError::Unreachable { .. }) => setup.goal,
            Err(e) => return Err(e),
        };
        let target = setup.map.pose(subgoal).ok_or(MapError::PoselessMap)?;
        let (next, collided) = control_step(setup.world, &pose, &target, cfg);
        log.push(StepLog {
            pose,
            localized: here,
            subgoal,
        });
        pose = next;
        visited.push(pose);
        if collided {
            return Ok(finish(TrialStatus::Collision, visited, log));
        }
    }
    let status = if pose.position_distance(&goal_pose) <= cfg.arrival_radius {
        TrialStatus::Success
    } else {
        TrialStatus::Timeout
    };
    Ok(finish(status, visited, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavMetrics {
    pub sr: f64,
    pub cr: f64,
    pub tr: f64,
    pub cov_r: f64,
    pub trials: usize,
}

pub fn nav_metrics(outcomes: &[TrialOutcome]) -> Result<NavMetrics> {
    if outcomes.is_empty() {
        return Err(NavError::NoOutcomes);
    }
    let n = outcomes.len();
    let count = |s| outcomes.iter().filter(|o| o.status == s).count();
    let (ok, col) = (count(TrialStatus::Success), count(TrialStatus::Collision));
    let tim = n - ok - col;
    Ok(NavMetrics {
        sr: ok as f64 / n as f64,
        cr: col as f64 / n as f64,
        tr: tim as f64 / n as f64,
        cov_r: outcomes.iter().map(|o| o.coverage).sum::<f64>() / n as f64,
        trials: n,
    })
}

pub fn save_trial_log(path: &Path, outcome: &TrialOutcome) -> Result<()> {
    let text = serde_json::to_string_pretty(outcome).expect("outcome serializes");
    std::fs::write(path, text).map_err(|e| NavError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
