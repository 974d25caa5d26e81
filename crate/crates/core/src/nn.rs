//! Fully connected building blocks recorded onto a [`Tape`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::diffmath::{ParamGroup, ParamId, ParamStore, Result, Tape, Tensor, Var};

/// Whether batch norms use batch statistics (and report them) or frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, width: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), group, Tensor::full(1, width, 1.0)),
            beta: store.add(&format!("{name}.beta"), group, Tensor::zeros(1, width)),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), group, Tensor::zeros(1, width)),
            running_var: store.add_buffer(&format!("{name}.running_var"), group, Tensor::full(1, width, 1.0)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        match mode {
            Mode::Train => tape.batch_norm(x, gamma, beta, None, Some((self.running_mean, self.running_var))),
            Mode::Eval => {
                let mean = store.get(self.running_mean).data();
                let var = store.get(self.running_var).data();
                tape.batch_norm(x, gamma, beta, Some((mean, var)), None)
            }
        }
    }
}

/// `act(bn(x·W + b))`, applied row-wise with shared weights.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        batch_norm: bool,
        activation: Activation,
    ) -> Self {
        // He-uniform for ReLU layers, Glorot-uniform otherwise
        let limit = match activation {
            Activation::Relu => (6.0 / d_in as f64).sqrt(),
            Activation::Identity => (6.0 / (d_in + d_out) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-limit, limit);
        let w: Vec<f64> = (0..d_in * d_out).map(|_| dist.sample(rng)).collect();
        let weight = store.add(&format!("{name}.weight"), group, Tensor::new(vec![d_in, d_out], w).unwrap());
        let bias = store.add(&format!("{name}.bias"), group, Tensor::zeros(1, d_out));
        let bn = batch_norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), group, d_out));
        Self {
            weight,
            bias,
            bn,
            activation,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        let mut y = tape.add_row(xw, b)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(tape, store, y, mode)?;
        }
        Ok(match self.activation {
            Activation::Identity => y,
            Activation::Relu => tape.relu(y),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var, mode: Mode) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, store, x, mode)?;
        }
        Ok(x)
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }
}

/// Folds training-mode batch statistics into running buffers.
pub fn update_running_stats(store: &mut ParamStore, stats: &[crate::diffmath::BnStats], momentum: f64) {
    for s in stats {
        for (r, v) in store.get_mut(s.mean_buffer).data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
        for (r, v) in store.get_mut(s.var_buffer).data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}
