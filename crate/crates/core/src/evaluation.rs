//! Localization metrics (AC, AC*, PE, ME), baselines and report output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localizer::{Localizer, LocalizerError, LocalizerModel};
use crate::topo_graph::{pose_distance, MapError, NodeId, Pose2D, TopoMap};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("descriptor dimension {got} differs from map dimension {want}")]
    Dim { got: usize, want: usize },
    #[error("empty map")]
    EmptyMap,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Model(#[from] LocalizerError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocMetrics {
    pub ac: f64,
    pub ac_star: f64,
    /// Absent when the map carries no poses.
    pub pe: Option<f64>,
    pub me: f64,
    pub steps: usize,
}

/// Scores predictions against targets. Unreachable pairs count as `map.len()` hops.
pub fn eval_run(predictions: &[NodeId], targets: &[NodeId], map: &TopoMap, gt_poses: Option<&[Pose2D]>) -> Result<LocMetrics> {
    if predictions.len() != targets.len() {
        return Err(EvalError::Length(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(EvalError::Length("no predictions".into()));
    }
    if let Some(p) = gt_poses {
        if p.len() != targets.len() {
            return Err(EvalError::Length(format!("{} poses vs {} targets", p.len(), targets.len())));
        }
    }
    let n = predictions.len() as f64;
    let (mut exact, mut within, mut hops) = (0usize, 0usize, 0usize);
    let mut pe = 0.0;
    for (k, (&p, &t)) in predictions.iter().zip(targets).enumerate() {
        let d = map.edge_distance(p, t)?.unwrap_or(map.len());
        exact += usize::from(d == 0);
        within += usize::from(d <= 1);
        hops += d;
        if let (Some(poses), Some(np)) = (gt_poses, map.pose(p)) {
            pe += pose_distance(&poses[k], &np, map.config().omega_m);
        }
    }
    Ok(LocMetrics {
        ac: exact as f64 / n,
        ac_star: within as f64 / n,
        pe: (gt_poses.is_some() && map.has_poses()).then(|| pe / n),
        me: hops as f64 / n,
        steps: predictions.len(),
    })
}

/// Node with the smallest squared descriptor distance; ties to the smallest index.
pub fn baseline_nearest_descriptor(observation: &[f64], map: &TopoMap) -> Result<NodeId> {
    if map.is_empty() {
        return Err(EvalError::EmptyMap);
    }
    if observation.len() != map.descriptor_dim() {
        return Err(EvalError::Dim {
            got: observation.len(),
            want: map.descriptor_dim(),
        });
    }
    let mut best = (f64::INFINITY, 0);
    for (i, node) in map.nodes().iter().enumerate() {
        let d: f64 = node.descriptor.iter().zip(observation).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(NodeId(best.1))
}

/// Runs a model over a sequence from a fresh state.
pub fn predict_sequence(model: &LocalizerModel, map: &TopoMap, observations: &[Vec<f64>]) -> Result<Vec<NodeId>> {
    let mut loc = Localizer::new(model, map)?;
    observations
        .iter()
        .map(|o| Ok(loc.step(o)?.predicted))
        .collect()
}

/// The single-frame ablation applied to one observation.
pub fn baseline_single_frame(model: &LocalizerModel, observation: &[f64], map: &TopoMap) -> Result<NodeId> {
    Ok(model.localize_step(&model.fresh_state(map.len()), observation, map)?.predicted)
}

pub fn predict_nearest(map: &TopoMap, observations: &[Vec<f64>]) -> Result<Vec<NodeId>> {
    observations.iter().map(|o| baseline_nearest_descriptor(o, map)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub category: String,
    pub metrics: LocMetrics,
}

/// Rows of (method, category) metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocEvalReport {
    pub rows: Vec<ReportRow>,
}

/// Step-weighted average of several runs.
pub fn pool(runs: &[LocMetrics]) -> Option<LocMetrics> {
    let total: usize = runs.iter().map(|m| m.steps).sum();
    if total == 0 {
        return None;
    }
    let w = |f: &dyn Fn(&LocMetrics) -> f64| runs.iter().map(|m| f(m) * m.steps as f64).sum::<f64>() / total as f64;
    let pe = runs.iter().all(|m| m.pe.is_some()).then(|| w(&|m| m.pe.unwrap()));
    Some(LocMetrics {
        ac: w(&|m| m.ac),
        ac_star: w(&|m| m.ac_star),
        pe,
        me: w(&|m| m.me),
        steps: total,
    })
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

impl LocEvalReport {
    pub fn push(&mut self, method: &str, category: &str, metrics: LocMetrics) {
        self.rows.push(ReportRow {
            method: method.to_string(),
            category: category.to_string(),
            metrics,
        });
    }

    pub fn get(&self, method: &str, category: &str) -> Option<&LocMetrics> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.category == category)
            .map(|r| &r.metrics)
    }

    /// CSV text with columns `method,category,AC,ACstar,PE,ME`; an absent PE is empty.
    pub fn to_csv(&self, header_comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = header_comment {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("method,category,AC,ACstar,PE,ME\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.category,
                fmt_num(m.ac),
                fmt_num(m.ac_star),
                m.pe.map(fmt_num).unwrap_or_default(),
                fmt_num(m.me)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path, header_comment: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_csv(header_comment)).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Human-readable table, one line per row; AC and AC* in percent, "-" for absent PE.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:<16} {:>7} {:>7} {:>8} {:>8}\n",
            "method", "category", "AC%", "AC*%", "PE", "ME"
        );
        for r in &self.rows {
            let m = &r.metrics;
            let pe = m.pe.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "{:<12} {:<16} {:>7.1} {:>7.1} {:>8} {:>8.3}",
                r.method,
                r.category,
                100.0 * m.ac,
                100.0 * m.ac_star,
                pe,
                m.me
            );
        }
        out
    }
}
