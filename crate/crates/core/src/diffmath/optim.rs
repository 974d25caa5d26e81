use serde::{Deserialize, Serialize};

use super::{DiffError, Gradients, ParamGroup, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr_main: f64,
    pub lr_encoder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr_main: 1e-3,
            lr_encoder: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Main => self.lr_main,
            ParamGroup::Encoder => self.lr_encoder,
        }
    }
}

/// Optimizer state (Adam moments) for one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let n = store.len();
        self.m.resize(n, None);
        self.v.resize(n, None);
        self.step += 1;
        let cfg = self.config;

        let mut clip = 1.0;
        if cfg.clip_norm > 0.0 {
            let norm: f64 = store
                .trainable_ids()
                .filter_map(|id| grads.get(id))
                .flat_map(|g| g.data().iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > cfg.clip_norm {
                clip = cfg.clip_norm / norm;
            }
        }

        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let lr = cfg.lr(store.entry(id).group);
            let param = store.get_mut(id);
            if g.shape() != param.shape() {
                return Err(DiffError::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    param.shape()
                )));
            }
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (p, gv) in param.data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * clip * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let zeros = || Tensor::new(g.shape().to_vec(), vec![0.0; g.numel()]).unwrap();
                    let m = self.m[id.index()].get_or_insert_with(zeros);
                    let v = self.v[id.index()].get_or_insert_with(zeros);
                    let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
                    let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
                    for (((p, gv), mv), vv) in param
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        let gc = gv * clip;
                        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gc;
                        *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gc * gc;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Single update of `store` with a fresh optimizer state.
pub fn sgd_adam_step(store: &mut ParamStore, grads: &Gradients, config: OptimConfig) -> Result<()> {
    Optimizer::new(config).step(store, grads)
}
