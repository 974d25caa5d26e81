//! Topological maps: nodes carrying an observation descriptor (and, for
//! simulator-built maps, a pose) connected by directed traversal edges.
//!
//! Maps are immutable once built. Proximity queries ([`TopoMap::neighbors`],
//! [`TopoMap::edge_distance`]) ignore edge direction; planning over directed
//! edges lives in [`crate::navigation`].

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default weight balancing yaw degrees against metres.
pub const DEFAULT_OMEGA_M: f64 = 0.025;
/// Default node-creation threshold for simulator maps.
pub const DEFAULT_ALPHA_TH: f64 = 1.0;
/// Default number of images per node for pose-less maps.
pub const DEFAULT_M_STRIDE: usize = 7;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cannot build a map from an empty sequence")]
    EmptySequence,
    #[error("node {0} does not exist (map has {1} nodes)")]
    InvalidNode(usize, usize),
    #[error("map has no node poses")]
    PoselessMap,
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("invalid map config: {0}")]
    InvalidConfig(String),
    #[error("map file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("map file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, MapError>;

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_deg(theta: f64) -> f64 {
    let mut t = theta % 360.0;
    if t <= -180.0 {
        t += 360.0;
    } else if t > 180.0 {
        t -= 360.0;
    }
    t
}

/// Absolute yaw difference on [0, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b).abs()
}

/// Planar pose: position in metres and yaw in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_deg(theta),
        }
    }

    pub fn position_distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// `‖p_a − p_b‖ + ω_m·|θ_a − θ_b|`, with the yaw difference wrapped to [0, 180].
pub fn pose_distance(a: &Pose2D, b: &Pose2D, omega_m: f64) -> f64 {
    debug_assert!(omega_m > 0.0);
    a.position_distance(b) + omega_m * angle_diff_deg(a.theta, b.theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub omega_m: f64,
    pub alpha_th: f64,
    pub m_stride: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            omega_m: DEFAULT_OMEGA_M,
            alpha_th: DEFAULT_ALPHA_TH,
            m_stride: DEFAULT_M_STRIDE,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_m > 0.0) {
            return Err(MapError::InvalidConfig(format!("omega_m must be > 0, got {}", self.omega_m)));
        }
        if !(self.alpha_th > 0.0) {
            return Err(MapError::InvalidConfig(format!("alpha_th must be > 0, got {}", self.alpha_th)));
        }
        if self.m_stride == 0 {
            return Err(MapError::InvalidConfig("m_stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub descriptor: Vec<f64>,
    pub pose: Option<Pose2D>,
}

/// Directed graph `G = (V, E)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoMap {
    nodes: Vec<MapNode>,
    edges: Vec<(NodeId, NodeId)>,
    config: MapConfig,
    // undirected, sorted, deduplicated
    adjacency: Vec<Vec<usize>>,
}

impl TopoMap {
    /// Validates every map invariant and builds the undirected adjacency.
    pub fn new(nodes: Vec<MapNode>, edges: Vec<(NodeId, NodeId)>, config: MapConfig) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(MapError::Invalid("map has no nodes".into()));
        }
        let dim = nodes[0].descriptor.len();
        let posed = nodes[0].pose.is_some();
        for (i, node) in nodes.iter().enumerate() {
            if node.descriptor.len() != dim {
                return Err(MapError::Invalid(format!(
                    "node {i} descriptor has dimension {} (expected {dim})",
                    node.descriptor.len()
                )));
            }
            if node.pose.is_some() != posed {
                return Err(MapError::Invalid("poses must be present for all nodes or none".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for &(s, t) in &edges {
            if s.0 >= n {
                return Err(MapError::InvalidNode(s.0, n));
            }
            if t.0 >= n {
                return Err(MapError::InvalidNode(t.0, n));
            }
            if s == t {
                return Err(MapError::Invalid(format!("self-loop on node {s}")));
            }
            if !seen.insert((s, t)) {
                return Err(MapError::Invalid(format!("duplicate edge {s}->{t}")));
            }
            adjacency[s.0].push(t.0);
            adjacency[t.0].push(s.0);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            nodes,
            edges,
            config,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[MapNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn descriptor_dim(&self) -> usize {
        self.nodes[0].descriptor.len()
    }

    pub fn has_poses(&self) -> bool {
        self.nodes[0].pose.is_some()
    }

    pub fn descriptor(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].descriptor
    }

    pub fn pose(&self, id: NodeId) -> Option<Pose2D> {
        self.nodes[id.0].pose
    }

    /// Undirected adjacency lists, sorted ascending.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            Err(MapError::InvalidNode(id.0, self.nodes.len()))
        } else {
            Ok(())
        }
    }

    /// Nodes adjacent to `id` through an edge of either direction.
    pub fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>> {
        self.check(id)?;
        Ok(self.adjacency[id.0].iter().map(|&j| NodeId(j)).collect())
    }

    /// Directed successors of `id`, ascending.
    pub fn successors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.edges.iter().filter(|(s, _)| *s == id).map(|&(_, t)| t).collect();
        out.sort_unstable();
        out
    }

    /// Undirected hop distances from `source` to every node; `None` when unreachable.
    pub fn hop_distances(&self, source: NodeId) -> Result<Vec<Option<usize>>> {
        self.check(source)?;
        let mut dist = vec![None; self.len()];
        dist[source.0] = Some(0);
        let mut queue = VecDeque::from([source.0]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Minimum undirected hop count between two nodes, `None` when unreachable.
    pub fn edge_distance(&self, a: NodeId, b: NodeId) -> Result<Option<usize>> {
        self.check(b)?;
        if a == b {
            self.check(a)?;
            return Ok(Some(0));
        }
        Ok(self.hop_distances(a)?[b.0])
    }

    /// All-pairs undirected hop distances.
    pub fn hop_matrix(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.len())
            .map(|i| self.hop_distances(NodeId(i)).expect("valid node"))
            .collect()
    }

    /// Map node minimising [`pose_distance`] to `query`; ties go to the smallest index.
    pub fn nearest_node(&self, query: &Pose2D, omega_m: f64) -> Result<NodeId> {
        if !self.has_poses() {
            return Err(MapError::PoselessMap);
        }
        let mut best = (0usize, f64::INFINITY);
        for (i, node) in self.nodes.iter().enumerate() {
            let d = pose_distance(query, node.pose.as_ref().unwrap(), omega_m);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(NodeId(best.0))
    }

    /// Sub-graph induced by `keep` (original ids, in submap order).
    pub fn induced(&self, keep: &[NodeId]) -> Result<TopoMap> {
        let mut remap = vec![usize::MAX; self.len()];
        for (new, old) in keep.iter().enumerate() {
            self.check(*old)?;
            remap[old.0] = new;
        }
        let nodes = keep.iter().map(|id| self.nodes[id.0].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter(|(s, t)| remap[s.0] != usize::MAX && remap[t.0] != usize::MAX)
            .map(|(s, t)| (NodeId(remap[s.0]), NodeId(remap[t.0])))
            .collect();
        TopoMap::new(nodes, edges, self.config)
    }
}

/// Builds a pose-tagged map: a node is created whenever the pose moves more
/// than `alpha_th` from the previously created node, chained to it, and
/// connected to every earlier non-adjacent node lying within `alpha_th`.
pub fn build_map_sim(trajectory: &[(Vec<f64>, Pose2D)], cfg: &MapConfig) -> Result<TopoMap> {
    cfg.validate()?;
    let (first, rest) = trajectory.split_first().ok_or(MapError::EmptySequence)?;
    let mut nodes = vec![MapNode {
        descriptor: first.0.clone(),
        pose: Some(first.1),
    }];
    let mut poses = vec![first.1];
    let mut edges = Vec::new();
    for (descriptor, pose) in rest {
        let last = poses[poses.len() - 1];
        if pose_distance(pose, &last, cfg.omega_m) <= cfg.alpha_th {
            continue;
        }
        let i = nodes.len();
        nodes.push(MapNode {
            descriptor: descriptor.clone(),
            pose: Some(*pose),
        });
        poses.push(*pose);
        edges.push((NodeId(i - 1), NodeId(i)));
        for j in 0..i.saturating_sub(1) {
            if pose_distance(pose, &poses[j], cfg.omega_m) <= cfg.alpha_th {
                edges.push((NodeId(i), NodeId(j)));
            }
        }
    }
    TopoMap::new(nodes, edges, *cfg)
}

/// Builds a pose-less map with one node every `m_stride` samples, chained in order.
pub fn build_map_real(sequence: &[Vec<f64>], m_stride: usize) -> Result<TopoMap> {
    if sequence.is_empty() {
        return Err(MapError::EmptySequence);
    }
    let cfg = MapConfig {
        m_stride,
        ..MapConfig::default()
    };
    cfg.validate()?;
    let nodes: Vec<MapNode> = sequence
        .iter()
        .step_by(m_stride)
        .map(|d| MapNode {
            descriptor: d.clone(),
            pose: None,
        })
        .collect();
    let edges = (1..nodes.len()).map(|i| (NodeId(i - 1), NodeId(i))).collect();
    TopoMap::new(nodes, edges, cfg)
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    descriptor: Vec<f64>,
    pose: Option<PoseRecord>,
}

/// On-disk layout of a map file.
#[derive(Serialize, Deserialize)]
pub struct MapFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<[usize; 2]>,
    config: MapConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl From<&TopoMap> for MapFile {
    fn from(map: &TopoMap) -> Self {
        MapFile {
            nodes: map
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    descriptor: n.descriptor.clone(),
                    pose: n.pose.map(|p| PoseRecord {
                        x: p.x,
                        y: p.y,
                        theta: p.theta,
                    }),
                })
                .collect(),
            edges: map.edges.iter().map(|(s, t)| [s.0, t.0]).collect(),
            config: map.config,
            meta: None,
        }
    }
}

impl TryFrom<MapFile> for TopoMap {
    type Error = MapError;

    fn try_from(file: MapFile) -> Result<Self> {
        let nodes = file
            .nodes
            .into_iter()
            .map(|n| MapNode {
                descriptor: n.descriptor,
                pose: n.pose.map(|p| Pose2D {
                    x: p.x,
                    y: p.y,
                    theta: p.theta,
                }),
            })
            .collect();
        let edges = file.edges.iter().map(|e| (NodeId(e[0]), NodeId(e[1]))).collect();
        TopoMap::new(nodes, edges, file.config)
    }
}

impl TopoMap {
    pub fn to_json(&self, meta: Option<serde_json::Value>) -> String {
        let mut file = MapFile::from(self);
        file.meta = meta;
        serde_json::to_string_pretty(&file).expect("map serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, MapError> {
        let file: MapFile = serde_json::from_str(text).map_err(|source| MapError::Parse {
            path: "<string>".into(),
            source,
        })?;
        TopoMap::try_from(file)
    }

    pub fn save(&self, path: &Path, meta: Option<serde_json::Value>) -> Result<()> {
        std::fs::write(path, self.to_json(meta)).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: MapFile = serde_json::from_str(&text).map_err(|source| MapError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        TopoMap::try_from(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, t: f64) -> Pose2D {
        Pose2D::new(x, y, t)
    }

    fn chain(n: usize) -> TopoMap {
        let nodes = (0..n)
            .map(|i| MapNode {
                descriptor: vec![i as f64],
                pose: Some(p(i as f64, 0.0, 0.0)),
            })
            .collect();
        let edges = (1..n).map(|i| (NodeId(i - 1), NodeId(i))).collect();
        TopoMap::new(nodes, edges, MapConfig::default()).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, p_edge: f64) -> TopoMap {
        let nodes = (0..n)
            .map(|_| MapNode {
                descriptor: vec![0.0],
                pose: None,
            })
            .collect();
        let mut edges = Vec::new();
        for s in 0..n {
            for t in 0..n {
                if s != t && rng.gen_bool(p_edge) {
                    edges.push((NodeId(s), NodeId(t)));
                }
            }
        }
        TopoMap::new(nodes, edges, MapConfig::default()).unwrap()
    }

    #[test]
    fn pose_distance_examples() {
        assert_eq!(pose_distance(&p(0.0, 0.0, 0.0), &p(0.0, 0.0, 0.0), 0.025), 0.0);
        let d = pose_distance(&p(0.0, 0.0, 0.0), &p(1.0, 0.0, 40.0), 0.025);
        assert!((d - 2.0).abs() < 1e-12);
        let d = pose_distance(&p(0.0, 0.0, 170.0), &p(0.0, 0.0, -170.0), 0.025);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(540.0), 180.0);
        assert!((wrap_deg(-190.0) - 170.0).abs() < 1e-12);
    }

    #[test]
    fn sim_map_singleton() {
        let map = build_map_sim(&[(vec![1.0], p(0.0, 0.0, 0.0))], &MapConfig::default()).unwrap();
        assert_eq!(map.len(), 1);
        assert!(map.edges().is_empty());
    }

    #[test]
    fn sim_map_straight_line() {
        let traj: Vec<_> = (0..7).map(|k| (vec![k as f64], p(0.5 * k as f64, 0.0, 0.0))).collect();
        let cfg = MapConfig {
            omega_m: 0.025,
            alpha_th: 1.0,
            m_stride: 7,
        };
        let map = build_map_sim(&traj, &cfg).unwrap();
        let xs: Vec<f64> = map.nodes().iter().map(|n| n.pose.unwrap().x).collect();
        assert_eq!(xs, vec![0.0, 1.5, 3.0]);
        assert_eq!(map.edges(), &[(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))]);
    }

    #[test]
    fn sim_map_square_loop_closes() {
        // 4 m square walked at 0.5 m spacing, returning near the origin
        let mut traj = Vec::new();
        let corners = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (0.0, 0.3)];
        for w in corners.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            let len: f64 = ((x1 - x0) as f64).hypot(y1 - y0);
            let steps = (len / 0.5).round() as usize;
            for k in 0..steps {
                let f = k as f64 / steps as f64;
                traj.push((vec![0.0], p(x0 + f * (x1 - x0), y0 + f * (y1 - y0), 0.0)));
            }
        }
        traj.push((vec![0.0], p(0.0, 0.3, 0.0)));
        let cfg = MapConfig::default();
        let map = build_map_sim(&traj, &cfg).unwrap();
        let last = NodeId(map.len() - 1);
        let last_pose = map.pose(last).unwrap();
        // brute force: which earlier non-predecessor nodes lie within alpha_th
        let expected: Vec<NodeId> = (0..map.len() - 2)
            .filter(|&j| pose_distance(&last_pose, &map.pose(NodeId(j)).unwrap(), cfg.omega_m) <= cfg.alpha_th)
            .map(NodeId)
            .collect();
        assert!(expected.contains(&NodeId(0)));
        for j in expected {
            assert!(map.edges().contains(&(last, j)));
        }
    }

    #[test]
    fn sim_map_rejects_empty() {
        assert!(matches!(build_map_sim(&[], &MapConfig::default()), Err(MapError::EmptySequence)));
    }

    #[test]
    fn real_map_stride() {
        let seq: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64]).collect();
        let map = build_map_real(&seq, 7).unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map.descriptor(NodeId(1)), &[7.0]);
        assert_eq!(map.descriptor(NodeId(2)), &[14.0]);
        assert_eq!(map.edges(), &[(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))]);
        assert!(!map.has_poses());

        let map = build_map_real(&seq[..1], 5).unwrap();
        assert_eq!((map.len(), map.edges().len()), (1, 0));
        let map = build_map_real(&seq[..8], 1).unwrap();
        assert_eq!((map.len(), map.edges().len()), (8, 7));
        assert!(build_map_real(&[], 7).is_err());
    }

    #[test]
    fn nearest_node_examples() {
        let map = chain(2);
        assert_eq!(map.nearest_node(&p(0.4, 0.0, 0.0), 0.025).unwrap(), NodeId(0));
        assert_eq!(map.nearest_node(&p(1.0, 0.0, 0.0), 0.025).unwrap(), NodeId(1));
        assert_eq!(map.nearest_node(&p(0.5, 0.0, 0.0), 0.025).unwrap(), NodeId(0));
        let seq = vec![vec![0.0]; 3];
        let real = build_map_real(&seq, 1).unwrap();
        assert!(matches!(real.nearest_node(&p(0.0, 0.0, 0.0), 0.025), Err(MapError::PoselessMap)));
    }

    #[test]
    fn neighbors_and_distance_on_chain() {
        let map = chain(3);
        assert_eq!(map.edge_distance(NodeId(0), NodeId(2)).unwrap(), Some(2));
        assert_eq!(map.neighbors(NodeId(1)).unwrap(), vec![NodeId(0), NodeId(2)]);
        for k in 0..3 {
            assert_eq!(map.edge_distance(NodeId(k), NodeId(k)).unwrap(), Some(0));
        }
        assert!(map.neighbors(NodeId(3)).is_err());
        assert!(map.edge_distance(NodeId(0), NodeId(9)).is_err());
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let nodes = vec![
            MapNode {
                descriptor: vec![0.0],
                pose: None,
            };
            3
        ];
        let map = TopoMap::new(nodes, vec![(NodeId(0), NodeId(1))], MapConfig::default()).unwrap();
        assert!(map.neighbors(NodeId(2)).unwrap().is_empty());
        assert_eq!(map.edge_distance(NodeId(0), NodeId(2)).unwrap(), None);
    }

    #[test]
    fn map_invariants_rejected() {
        let node = |d: usize, posed: bool| MapNode {
            descriptor: vec![0.0; d],
            pose: posed.then(|| p(0.0, 0.0, 0.0)),
        };
        let cfg = MapConfig::default();
        assert!(TopoMap::new(vec![node(1, false), node(2, false)], vec![], cfg).is_err());
        assert!(TopoMap::new(vec![node(1, true), node(1, false)], vec![], cfg).is_err());
        assert!(TopoMap::new(vec![node(1, false); 2], vec![(NodeId(0), NodeId(0))], cfg).is_err());
        assert!(TopoMap::new(vec![node(1, false); 2], vec![(NodeId(0), NodeId(1)); 2], cfg).is_err());
        assert!(TopoMap::new(vec![node(1, false); 2], vec![(NodeId(0), NodeId(5))], cfg).is_err());
    }

    /// Shortest path by exhaustive enumeration of simple undirected paths.
    fn brute_hops(map: &TopoMap, a: usize, b: usize) -> Option<usize> {
        fn dfs(map: &TopoMap, u: usize, b: usize, visited: &mut Vec<bool>, depth: usize, best: &mut Option<usize>) {
            if u == b {
                *best = Some(best.map_or(depth, |x| x.min(depth)));
                return;
            }
            for &v in &map.adjacency()[u] {
                if !visited[v] {
                    visited[v] = true;
                    dfs(map, v, b, visited, depth + 1, best);
                    visited[v] = false;
                }
            }
        }
        let mut visited = vec![false; map.len()];
        visited[a] = true;
        let mut best = None;
        dfs(map, a, b, &mut visited, 0, &mut best);
        best
    }

    #[test]
    fn edge_distance_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=10);
            let p_edge = rng.gen_range(0.05..0.4);
            let map = random_map(&mut rng, n, p_edge);
            let hops = map.hop_matrix();
            for a in 0..n {
                for b in 0..n {
                    assert_eq!(hops[a][b], brute_hops(&map, a, b));
                    // triangle inequality over reachable triples
                    for c in 0..n {
                        if let (Some(ab), Some(bc), Some(ac)) = (hops[a][b], hops[b][c], hops[a][c]) {
                            assert!(ac <= ab + bc);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn neighbors_match_edge_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=12);
            let map = random_map(&mut rng, n, 0.2);
            for i in 0..n {
                let mut expected: Vec<usize> = map
                    .edges()
                    .iter()
                    .filter_map(|&(s, t)| {
                        if s.0 == i {
                            Some(t.0)
                        } else if t.0 == i {
                            Some(s.0)
                        } else {
                            None
                        }
                    })
                    .collect();
                expected.sort_unstable();
                expected.dedup();
                let got: Vec<usize> = map.neighbors(NodeId(i)).unwrap().into_iter().map(|x| x.0).collect();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traj: Vec<_> = (0..40)
            .map(|k| {
                let d: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 1e3 - 1.0 / 3.0).collect();
                (d, p(0.37 * k as f64, rng.gen::<f64>(), rng.gen_range(-179.0..180.0)))
            })
            .collect();
        let map = build_map_sim(&traj, &MapConfig::default()).unwrap();
        let back = TopoMap::from_json(&map.to_json(None)).unwrap();
        assert_eq!(map, back);
        for (a, b) in map.nodes().iter().zip(back.nodes()) {
            for (x, y) in a.descriptor.iter().zip(&b.descriptor) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    fn pose_strategy() -> impl Strategy<Value = Pose2D> {
        (-50.0..50.0f64, -50.0..50.0f64, -540.0..540.0f64).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
    }

    proptest! {
        #[test]
        fn pose_distance_is_a_symmetric_nonnegative_metric(a in pose_strategy(), b in pose_strategy()) {
            let dab = pose_distance(&a, &b, 0.025);
            let dba = pose_distance(&b, &a, 0.025);
            prop_assert!(dab >= 0.0);
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert_eq!(pose_distance(&a, &a, 0.025), 0.0);
            let same = a.x == b.x && a.y == b.y && a.theta == b.theta;
            prop_assert_eq!(dab == 0.0, same);
        }

        #[test]
        fn theta_is_normalized(t in -2000.0..2000.0f64) {
            let w = Pose2D::new(0.0, 0.0, t).theta;
            prop_assert!(w > -180.0 && w <= 180.0);
        }

        #[test]
        fn compact_trajectory_gives_one_node(steps in prop::collection::vec((-0.1..0.1f64, -0.1..0.1f64), 1..30)) {
            // every pose within 0.2 m of the start while alpha_th = 1.0
            let traj: Vec<_> = steps.iter().map(|&(x, y)| (vec![0.0], Pose2D::new(x, y, 0.0))).collect();
            let map = build_map_sim(&traj, &MapConfig::default()).unwrap();
            prop_assert_eq!(map.len(), 1);
        }

        #[test]
        fn sim_map_chain_edges(steps in prop::collection::vec((0.0..0.8f64, -0.8..0.8f64, -30.0..30.0f64), 1..60)) {
            let mut pose = Pose2D::new(0.0, 0.0, 0.0);
            let mut traj = Vec::new();
            for (dx, dy, dt) in steps {
                pose = Pose2D::new(pose.x + dx, pose.y + dy, pose.theta + dt);
                traj.push((vec![0.0], pose));
            }
            let map = build_map_sim(&traj, &MapConfig::default()).unwrap();
            for i in 1..map.len() {
                let incoming_chain = map.edges().iter().filter(|&&(s, t)| t.0 == i && s.0 == i - 1).count();
                prop_assert_eq!(incoming_chain, 1);
            }
        }

        #[test]
        fn real_map_counts(len in 1usize..100, m in 1usize..12) {
            let seq = vec![vec![0.0]; len];
            let map = build_map_real(&seq, m).unwrap();
            prop_assert_eq!(map.len(), len.div_ceil(m));
            prop_assert_eq!(map.edges().len(), map.len() - 1);
        }
    }
}
