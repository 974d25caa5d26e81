//! Config-driven pipeline steps shared by the command-line tool and the tests.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchmark::{
    build_nav_trials, build_test_episodes, build_training_data, evaluate, run_nav_benchmark, BenchError,
    BenchmarkConfig, Predictor,
};
use crate::evaluation::LocEvalReport;
use crate::localizer::{LocalizerError, LocalizerModel, ModelConfig, ModelDims, Variant};
use crate::navigation::{NavConfig, NavMetrics, TrialOutcome};
use crate::trainer::{train, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("unknown {what} '{value}'")]
    Unknown { what: &'static str, value: String },
    #[error("method '{0}' needs a trained model")]
    NeedsModel(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] LocalizerError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn file_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub dims: ModelDims,
    pub batch_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dims: ModelDims {
                d_obs: 16,
                d_emb: 16,
                d_x: 16,
                d_h: 16,
                d_skip: 16,
                hidden: 16,
            },
            batch_norm: false,
        }
    }
}

/// Everything a pipeline run depends on besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root of the world seeds for training, validation and test data.
    pub data_seed: u64,
    pub benchmark: BenchmarkConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub nav: NavConfig,
    pub nav_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_seed: 0,
            benchmark: BenchmarkConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig {
                lr_main: 3e-3,
                lr_encoder: 3e-3,
                max_iters: 2000,
                val_every: 100,
                patience_iters: 1500,
                ..TrainConfig::default()
            },
            nav: NavConfig::default(),
            nav_trials: 50,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        toml::from_str(&text).map_err(|e| file_error(path, e))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// `seed=..., config_hash=...` line attached to every artifact.
    pub fn provenance(&self, seed: u64) -> String {
        format!("seed={seed}, config_hash={}", self.hash())
    }

    pub fn model_config(&self, variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            dims: ModelDims {
                d_obs: self.benchmark.d_obs(),
                ..self.model.dims
            },
            variant,
            batch_norm: self.model.batch_norm,
            init_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    NoGclstm,
    NoSkip,
    Nearest,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ours, Method::NoGclstm, Method::NoSkip, Method::Nearest, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::NoGclstm => "no_gclstm",
            Method::NoSkip => "no_skip",
            Method::Nearest => "nearest",
            Method::Oracle => "oracle",
        }
    }

    /// Architecture of a learned method; `None` for the non-learned ones.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Ours => Some(Variant::Full),
            Method::NoGclstm => Some(Variant::SingleFrame),
            Method::NoSkip => Some(Variant::NoSkip),
            Method::Nearest | Method::Oracle => None,
        }
    }

    pub fn predictor<'a>(self, model: Option<&'a LocalizerModel>) -> Result<Predictor<'a>> {
        match (self, model) {
            (Method::Nearest, _) => Ok(Predictor::Nearest),
            (Method::Oracle, _) => Ok(Predictor::Oracle),
            (_, Some(m)) => Ok(Predictor::Model(m)),
            (m, None) => Err(PipelineError::NeedsModel(m.name().into())),
        }
    }
}

impl FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PipelineError::Unknown {
                what: "method",
                value: s.into(),
            })
    }
}

/// Which training data a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainDomain {
    Sim,
    Mixed,
}

impl FromStr for TrainDomain {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(TrainDomain::Sim),
            "mixed" => Ok(TrainDomain::Mixed),
            _ => Err(PipelineError::Unknown {
                what: "training domain",
                value: s.into(),
            }),
        }
    }
}

pub fn train_method(run: &RunConfig, method: Method, domain: TrainDomain, seed: u64) -> Result<(LocalizerModel, TrainOutcome)> {
    let variant = method.variant().ok_or_else(|| PipelineError::Unknown {
        what: "trainable method",
        value: method.name().into(),
    })?;
    let (data, val) = build_training_data(&run.benchmark, run.data_seed)?;
    let cfg = TrainConfig {
        seed,
        mix_ratio: match domain {
            TrainDomain::Sim => 0.0,
            TrainDomain::Mixed => run.train.mix_ratio,
        },
        ..run.train
    };
    let mut model = LocalizerModel::new(run.model_config(variant, seed));
    let outcome = train(&mut model, &data, &val, &cfg)?;
    Ok((model, outcome))
}

pub fn eval_loc(run: &RunConfig, methods: &[(&str, Predictor)]) -> Result<LocEvalReport> {
    let episodes = build_test_episodes(&run.benchmark, run.data_seed)?;
    Ok(evaluate(methods, &episodes)?)
}

pub fn eval_nav(run: &RunConfig, method: &Predictor) -> Result<(NavMetrics, Vec<TrialOutcome>)> {
    let (worlds, trials) = build_nav_trials(&run.benchmark, &run.nav, run.data_seed, run.nav_trials)?;
    Ok(run_nav_benchmark(&run.benchmark, &run.nav, &worlds, &trials, method)?)
}

/// CSV with columns `method,SR,CR,TR,CovR,trials`.
pub fn nav_csv(rows: &[(&str, NavMetrics)], header_comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = header_comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("method,SR,CR,TR,CovR,trials\n");
    for (name, m) in rows {
        let _ = writeln!(out, "{name},{:.6},{:.6},{:.6},{:.6},{}", m.sr, m.cr, m.tr, m.cov_r, m.trials);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("best".parse::<Method>().is_err());
        assert!(Method::Nearest.predictor(None).is_ok());
        assert!(Method::Ours.predictor(None).is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.tau += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let text = toml::to_string(&a).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, a);
        let partial: RunConfig = toml::from_str("nav_trials = 3\n[train]\ntau = 12\n").unwrap();
        assert_eq!((partial.nav_trials, partial.train.tau), (3, 12));
    }

    #[test]
    fn missing_config_names_the_path() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }
}
