//! The localization network: a shared descriptor encoder and pairwise
//! feature extractor, a graph convolutional LSTM whose eight graph
//! convolutions are GIN layers, a per-node skip path, and an identification
//! head producing one likelihood per map node followed by a softmax.
//!
//! Everything is recorded on a [`Tape`], so the same code serves inference
//! and training. Architectures are separated from their parameters
//! ([`ParamStore`]) so that gradient checks can evaluate perturbed copies.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Adjacency, Checkpoint, DiffError, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::nn::{Activation, Dense, Mlp, Mode};
use crate::topo_graph::{MapError, NodeId, TopoMap};

#[derive(Debug, Error)]
pub enum LocalizerError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Map(#[from] MapError),
}

pub type Result<T> = std::result::Result<T, LocalizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_obs: usize,
    pub d_emb: usize,
    pub d_x: usize,
    pub d_h: usize,
    pub d_skip: usize,
    /// Hidden width of GIN, identification and single-frame MLPs.
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_obs: 16,
            d_emb: 16,
            d_x: 16,
            d_h: 32,
            d_skip: 16,
            hidden: 32,
        }
    }
}

/// Network variant: the full model or one of the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Identification head reads the recurrent output only.
    NoSkip,
    /// Recurrent layer replaced by per-node FC layers; no state.
    SingleFrame,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "ours",
            Variant::NoSkip => "no_skip",
            Variant::SingleFrame => "no_gclstm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub variant: Variant,
    pub batch_norm: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            variant: Variant::Full,
            batch_norm: true,
            init_seed: 0,
        }
    }
}

/// One GIN layer: `MLP((1 + ε)·x_i + Σ_j x_j)` over undirected neighbours.
#[derive(Debug, Clone)]
pub struct Gin {
    pub eps: ParamId,
    pub mlp: Mlp,
}

impl Gin {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, adj: &Adjacency, mode: Mode) -> Result<Var> {
        let eps = tape.param(store, self.eps);
        let agg = tape.gin_aggregate(x, eps, adj)?;
        Ok(self.mlp.forward(tape, store, agg, mode)?)
    }
}

#[derive(Debug, Clone)]
pub struct GclstmParams {
    /// `G_1 … G_8`; odd slots read the input, even slots the previous output.
    pub gins: Vec<Gin>,
    pub w_ci: ParamId,
    pub w_cf: ParamId,
    pub w_co: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
}

/// Vars produced by one recurrent step.
#[derive(Debug, Clone, Copy)]
pub struct GclstmVars {
    pub h: Var,
    pub c: Var,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
}

impl GclstmParams {
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        adj: &Adjacency,
        mode: Mode,
    ) -> Result<GclstmVars> {
        let g = |k: usize, input: Var, tape: &mut Tape| self.gins[k - 1].forward(tape, store, input, adj, mode);
        let gate = |tape: &mut Tape, a: Var, b: Var, peep: Option<(ParamId, Var)>, bias: ParamId| -> Result<Var> {
            let mut s = tape.add(a, b)?;
            if let Some((w, c)) = peep {
                let w = tape.param(store, w);
                let wc = tape.mul_row(c, w)?;
                s = tape.add(s, wc)?;
            }
            let b = tape.param(store, bias);
            Ok(tape.add_row(s, b)?)
        };

        let (g1, g2) = (g(1, x, tape)?, g(2, h_prev, tape)?);
        let pre_i = gate(tape, g1, g2, Some((self.w_ci, c_prev)), self.b_i)?;
        let i = tape.sigmoid(pre_i);

        let (g3, g4) = (g(3, x, tape)?, g(4, h_prev, tape)?);
        let pre_f = gate(tape, g3, g4, Some((self.w_cf, c_prev)), self.b_f)?;
        let f = tape.sigmoid(pre_f);

        let (g5, g6) = (g(5, x, tape)?, g(6, h_prev, tape)?);
        let pre_c = gate(tape, g5, g6, None, self.b_c)?;
        let cand = tape.tanh(pre_c);
        let keep = tape.hadamard(f, c_prev)?;
        let write = tape.hadamard(i, cand)?;
        let c = tape.add(keep, write)?;

        let (g7, g8) = (g(7, x, tape)?, g(8, h_prev, tape)?);
        let pre_o = gate(tape, g7, g8, Some((self.w_co, c)), self.b_o)?;
        let o = tape.sigmoid(pre_o);

        let tc = tape.tanh(c);
        let h = tape.hadamard(o, tc)?;
        Ok(GclstmVars {
            h,
            c,
            input_gate: i,
            forget_gate: f,
            output_gate: o,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Core {
    Gclstm(GclstmParams),
    /// Four per-node FC layers standing in for the recurrent layer.
    Frame(Mlp),
}

/// Layer layout of a localizer; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder: Mlp,
    pub pair: Mlp,
    pub core: Core,
    pub skip: Option<Dense>,
    pub head: Mlp,
}

/// Recurrent cell output and state, one row per map node.
#[derive(Debug, Clone, PartialEq)]
pub struct GclstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl GclstmState {
    pub fn rows(&self) -> usize {
        self.h.rows()
    }
}

/// Zero-filled `n × d_h` output and cell state.
pub fn reset_state(n: usize, d_h: usize) -> GclstmState {
    GclstmState {
        h: Tensor::zeros(n, d_h),
        c: Tensor::zeros(n, d_h),
    }
}

/// Vars of one full localisation step.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// `1 × n` pre-softmax likelihoods.
    pub logits: Var,
    pub h: Var,
    pub c: Var,
}

impl Architecture {
    pub fn build(config: ModelConfig, store: &mut ParamStore) -> Self {
        let d = config.dims;
        let bn = config.batch_norm;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let rng = &mut rng;
        use Activation::{Identity, Relu};
        use ParamGroup::{Encoder, Main};

        let encoder = Mlp {
            layers: vec![
                Dense::new(store, rng, "encoder.0", Encoder, d.d_obs, d.d_emb, false, Relu),
                Dense::new(store, rng, "encoder.1", Encoder, d.d_emb, d.d_emb, false, Relu),
                Dense::new(store, rng, "encoder.2", Encoder, d.d_emb, d.d_emb, false, Relu),
            ],
        };
        let pair = Mlp {
            layers: vec![
                Dense::new(store, rng, "pair.0", Main, 2 * d.d_emb, d.d_x, bn, Relu),
                Dense::new(store, rng, "pair.1", Main, d.d_x, d.d_x, bn, Relu),
            ],
        };
        let core = match config.variant {
            Variant::Full | Variant::NoSkip => {
                let gins = (1..=8)
                    .map(|k| {
                        let d_in = if k % 2 == 1 { d.d_x } else { d.d_h };
                        let name = format!("gclstm.gin{k}");
                        Gin {
                            eps: store.add(&format!("{name}.eps"), Main, Tensor::scalar(0.0)),
                            mlp: Mlp {
                                layers: vec![
                                    Dense::new(store, rng, &format!("{name}.fc0"), Main, d_in, d.hidden, bn, Relu),
                                    Dense::new(store, rng, &format!("{name}.fc1"), Main, d.hidden, d.d_h, false, Identity),
                                ],
                            },
                        }
                    })
                    .collect();
                let peep = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| {
                    use rand::Rng;
                    let v = (0..d.d_h).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    store.add(name, Main, Tensor::row_vector(v))
                };
                Core::Gclstm(GclstmParams {
                    gins,
                    w_ci: peep(store, rng, "gclstm.w_ci"),
                    w_cf: peep(store, rng, "gclstm.w_cf"),
                    w_co: peep(store, rng, "gclstm.w_co"),
                    b_i: store.add("gclstm.b_i", Main, Tensor::zeros(1, d.d_h)),
                    b_f: store.add("gclstm.b_f", Main, Tensor::full(1, d.d_h, 1.0)),
                    b_c: store.add("gclstm.b_c", Main, Tensor::zeros(1, d.d_h)),
                    b_o: store.add("gclstm.b_o", Main, Tensor::zeros(1, d.d_h)),
                })
            }
            Variant::SingleFrame => Core::Frame(Mlp {
                layers: (0..4)
                    .map(|k| {
                        let d_in = if k == 0 { d.d_x } else { d.d_h };
                        Dense::new(store, rng, &format!("frame.{k}"), Main, d_in, d.d_h, bn, Relu)
                    })
                    .collect(),
            }),
        };
        let skip = (config.variant != Variant::NoSkip)
            .then(|| Dense::new(store, rng, "skip", Main, d.d_x, d.d_skip, bn, Relu));
        let head_in = d.d_h + if skip.is_some() { d.d_skip } else { 0 };
        let head = Mlp {
            layers: vec![
                Dense::new(store, rng, "head.0", Main, head_in, d.hidden, bn, Relu),
                Dense::new(store, rng, "head.1", Main, d.hidden, 1, false, Identity),
            ],
        };
        Self {
            config,
            encoder,
            pair,
            core,
            skip,
            head,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.core, Core::Gclstm(_))
    }

    /// `rows × d_obs` descriptors to `rows × d_emb` embeddings.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, descriptors: Var) -> Result<Var> {
        Ok(self.encoder.forward(tape, store, descriptors, Mode::Eval)?)
    }

    /// Pair features `x_t` (`n × d_x`): row i depends on the current embedding and node i only.
    pub fn pair_features(&self, tape: &mut Tape, store: &ParamStore, current: Var, nodes: Var, mode: Mode) -> Result<Var> {
        let n = tape.value(nodes).rows();
        let rep = tape.repeat_row(current, n)?;
        let cat = tape.concat_cols(rep, nodes)?;
        Ok(self.pair.forward(tape, store, cat, mode)?)
    }

    /// Recurrent (or single-frame) aggregation; returns the new `(h, c)`.
    pub fn core_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        adj: &Adjacency,
        h_prev: Var,
        c_prev: Var,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        match &self.core {
            Core::Gclstm(p) => {
                let out = p.step(tape, store, x, h_prev, c_prev, adj, mode)?;
                Ok((out.h, out.c))
            }
            Core::Frame(mlp) => {
                let h = mlp.forward(tape, store, x, mode)?;
                Ok((h, c_prev))
            }
        }
    }

    pub fn skip_path(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Option<Var>> {
        match &self.skip {
            Some(layer) => Ok(Some(layer.forward(tape, store, x, mode)?)),
            None => Ok(None),
        }
    }

    /// Per-node likelihoods as a `1 × n` row of logits.
    pub fn identify_logits(&self, tape: &mut Tape, store: &ParamStore, h: Var, skip: Option<Var>, mode: Mode) -> Result<Var> {
        let n = tape.value(h).rows();
        let input = match skip {
            Some(s) => tape.concat_cols(h, s)?,
            None => h,
        };
        let lik = self.head.forward(tape, store, input, mode)?;
        Ok(tape.reshape(lik, 1, n)?)
    }

    /// Full step from an encoded observation (`1 × d_emb`) and encoded nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        current: Var,
        nodes: Var,
        adj: &Adjacency,
        h_prev: Var,
        c_prev: Var,
        mode: Mode,
    ) -> Result<StepVars> {
        let x = self.pair_features(tape, store, current, nodes, mode)?;
        let (h, c) = self.core_step(tape, store, x, adj, h_prev, c_prev, mode)?;
        let skip = self.skip_path(tape, store, x, mode)?;
        let logits = self.identify_logits(tape, store, h, skip, mode)?;
        Ok(StepVars { logits, h, c })
    }
}

/// Per-map data reused across steps: the undirected adjacency and node embeddings.
#[derive(Debug, Clone)]
pub struct MapContext {
    pub adjacency: Adjacency,
    pub node_embeddings: Tensor,
}

impl MapContext {
    pub fn len(&self) -> usize {
        self.node_embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn adjacency_of(map: &TopoMap) -> Adjacency {
    Arc::new(map.adjacency().to_vec())
}

/// Undirected adjacency from an edge list, validated against `n`.
pub fn adjacency_from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Adjacency> {
    let mut adj = vec![Vec::new(); n];
    for &(s, t) in edges {
        if s.0 >= n || t.0 >= n {
            return Err(LocalizerError::Map(MapError::InvalidNode(s.0.max(t.0), n)));
        }
        if s == t {
            return Err(LocalizerError::Map(MapError::Invalid(format!("self-loop on node {s}"))));
        }
        adj[s.0].push(t.0);
        adj[t.0].push(s.0);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    Ok(Arc::new(adj))
}

/// Output of one localisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub probabilities: Vec<f64>,
    pub predicted: NodeId,
    pub state: GclstmState,
}

/// First index of the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Architecture plus parameters.
#[derive(Debug, Clone)]
pub struct LocalizerModel {
    pub arch: Architecture,
    pub store: ParamStore,
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        Err(LocalizerError::Dim(format!("{what}: got {got}, expected {want}")))
    } else {
        Ok(())
    }
}

impl LocalizerModel {
    pub fn new(config: ModelConfig) -> Self {
        let mut store = ParamStore::new();
        let arch = Architecture::build(config, &mut store);
        Self { arch, store }
    }

    pub fn config(&self) -> ModelConfig {
        self.arch.config
    }

    pub fn dims(&self) -> ModelDims {
        self.arch.config.dims
    }

    pub fn variant(&self) -> Variant {
        self.arch.config.variant
    }

    pub fn param_count(&self) -> usize {
        self.store.num_trainable()
    }

    /// Same configuration with the identification head reading the recurrent output only.
    pub fn ablation_no_skip(config: ModelConfig) -> Self {
        Self::new(ModelConfig {
            variant: Variant::NoSkip,
            ..config
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let manifest = serde_json::to_value(self.arch.config).expect("config serializes");
        self.store.to_checkpoint(manifest)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.manifest.clone())
            .map_err(|e| DiffError::Checkpoint(format!("bad model manifest: {e}")))?;
        let mut model = Self::new(config);
        let saved = ckpt.store()?;
        model.store.load_from(&saved)?;
        Ok(model)
    }

    pub fn encode(&self, descriptor: &[f64]) -> Result<Vec<f64>> {
        check_dim("descriptor", descriptor.len(), self.dims().d_obs)?;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(descriptor.to_vec()));
        let e = self.arch.encode(&mut tape, &self.store, x)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Encodes every node descriptor once.
    pub fn map_context(&self, map: &TopoMap) -> Result<MapContext> {
        check_dim("map descriptor", map.descriptor_dim(), self.dims().d_obs)?;
        let rows: Vec<Vec<f64>> = map.nodes().iter().map(|n| n.descriptor.clone()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows)?);
        let e = self.arch.encode(&mut tape, &self.store, x)?;
        Ok(MapContext {
            adjacency: adjacency_of(map),
            node_embeddings: tape.value(e).clone(),
        })
    }

    pub fn pair_features(&self, current: &[f64], node_embs: &Tensor, mode: Mode) -> Result<Tensor> {
        check_dim("embedding", current.len(), self.dims().d_emb)?;
        check_dim("node embedding", node_embs.cols(), self.dims().d_emb)?;
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row_vector(current.to_vec()));
        let n = tape.constant(node_embs.clone());
        let x = self.arch.pair_features(&mut tape, &self.store, c, n, mode)?;
        Ok(tape.value(x).clone())
    }

    pub fn gclstm_step(&self, x: &Tensor, adj: &Adjacency, state: &GclstmState, mode: Mode) -> Result<(Tensor, GclstmState)> {
        let d = self.dims();
        check_dim("x columns", x.cols(), d.d_x)?;
        check_dim("state rows", state.rows(), x.rows())?;
        check_dim("state columns", state.h.cols(), d.d_h)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let (h, c) = self.arch.core_step(&mut tape, &self.store, xv, adj, h, c, mode)?;
        let h = tape.value(h).clone();
        Ok((
            h.clone(),
            GclstmState {
                h,
                c: tape.value(c).clone(),
            },
        ))
    }

    pub fn skip_path(&self, x: &Tensor, mode: Mode) -> Result<Option<Tensor>> {
        check_dim("x columns", x.cols(), self.dims().d_x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = self.arch.skip_path(&mut tape, &self.store, xv, mode)?;
        Ok(s.map(|s| tape.value(s).clone()))
    }

    /// Softmax localisation probabilities over nodes.
    pub fn identify(&self, h: &Tensor, skip: Option<&Tensor>, mode: Mode) -> Result<Vec<f64>> {
        check_dim("h columns", h.cols(), self.dims().d_h)?;
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let sv = match skip {
            Some(s) => {
                check_dim("skip rows", s.rows(), h.rows())?;
                check_dim("skip columns", s.cols(), self.dims().d_skip)?;
                Some(tape.constant(s.clone()))
            }
            None => None,
        };
        let logits = self.arch.identify_logits(&mut tape, &self.store, hv, sv, mode)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).data().to_vec())
    }

    /// One inference step against precomputed node embeddings.
    pub fn step_with_context(&self, ctx: &MapContext, state: &GclstmState, observation: &[f64]) -> Result<StepOutput> {
        let d = self.dims();
        check_dim("observation", observation.len(), d.d_obs)?;
        check_dim("state rows", state.rows(), ctx.len())?;
        check_dim("state columns", state.h.cols(), d.d_h)?;
        let mut tape = Tape::new();
        let obs = tape.constant(Tensor::row_vector(observation.to_vec()));
        let cur = self.arch.encode(&mut tape, &self.store, obs)?;
        let nodes = tape.constant(ctx.node_embeddings.clone());
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let out = self
            .arch
            .step(&mut tape, &self.store, cur, nodes, &ctx.adjacency, h, c, Mode::Eval)?;
        let p = tape.softmax_rows(out.logits);
        let probabilities = tape.value(p).data().to_vec();
        let predicted = NodeId(argmax(tape.value(out.logits).data()));
        Ok(StepOutput {
            probabilities,
            predicted,
            state: GclstmState {
                h: tape.value(out.h).clone(),
                c: tape.value(out.c).clone(),
            },
        })
    }

    /// encode → pair features → {recurrent step, skip} → identify.
    pub fn localize_step(&self, state: &GclstmState, observation: &[f64], map: &TopoMap) -> Result<StepOutput> {
        let ctx = self.map_context(map)?;
        self.step_with_context(&ctx, state, observation)
    }

    pub fn fresh_state(&self, n: usize) -> GclstmState {
        reset_state(n, self.dims().d_h)
    }
}

/// Streams observations through a model on one map.
pub struct Localizer<'m> {
    model: &'m LocalizerModel,
    ctx: MapContext,
    state: GclstmState,
}

impl<'m> Localizer<'m> {
    pub fn new(model: &'m LocalizerModel, map: &TopoMap) -> Result<Self> {
        let ctx = model.map_context(map)?;
        let state = model.fresh_state(ctx.len());
        Ok(Self { model, ctx, state })
    }

    pub fn reset(&mut self) {
        self.state = self.model.fresh_state(self.ctx.len());
    }

    pub fn state(&self) -> &GclstmState {
        &self.state
    }

    pub fn step(&mut self, observation: &[f64]) -> Result<StepOutput> {
        let out = self.model.step_with_context(&self.ctx, &self.state, observation)?;
        self.state = out.state.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{grad_check, GradCheckConfig};
    use crate::topo_graph::{MapConfig, MapNode};
    use rand::Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            d_obs: 4,
            d_emb: 4,
            d_x: 4,
            d_h: 4,
            d_skip: 3,
            hidden: 5,
        }
    }

    fn model(variant: Variant, seed: u64) -> LocalizerModel {
        LocalizerModel::new(ModelConfig {
            dims: small_dims(),
            variant,
            batch_norm: true,
            init_seed: seed,
        })
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, d: usize) -> TopoMap {
        let nodes = (0..n)
            .map(|_| MapNode {
                descriptor: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                pose: None,
            })
            .collect();
        let mut edges = Vec::new();
        for i in 1..n {
            edges.push((NodeId(i - 1), NodeId(i)));
        }
        if n > 3 {
            edges.push((NodeId(n - 1), NodeId(0)));
        }
        TopoMap::new(nodes, edges, MapConfig::default()).unwrap()
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_encoder_gives_zero_embedding() {
        let mut m = model(Variant::Full, 1);
        zero_all(&mut m.store);
        assert_eq!(m.encode(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 4]);
        let m = model(Variant::Full, 1);
        assert_eq!(m.encode(&[1.0, 2.0, 3.0, 4.0]).unwrap(), m.encode(&[1.0, 2.0, 3.0, 4.0]).unwrap());
        assert!(m.encode(&[1.0]).is_err());
    }

    #[test]
    fn precomputed_node_embeddings_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = model(Variant::Full, 2);
        let map = random_map(&mut rng, 6, 4);
        let ctx = m.map_context(&map).unwrap();
        for i in 0..6 {
            assert_eq!(ctx.node_embeddings.row(i), m.encode(map.descriptor(NodeId(i))).unwrap().as_slice());
        }
        let mut loc = Localizer::new(&m, &map).unwrap();
        let mut state = m.fresh_state(6);
        for _ in 0..3 {
            let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = loc.step(&obs).unwrap();
            let b = m.localize_step(&state, &obs, &map).unwrap();
            assert_eq!(a, b);
            state = b.state;
        }
    }

    #[test]
    fn pair_features_are_row_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(Variant::Full, 3);
        let cur: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let nodes = Tensor::from_rows(&rows).unwrap();
        // eval mode: running statistics make rows independent of each other
        let x = m.pair_features(&cur, &nodes, Mode::Eval).unwrap();
        for i in 0..5 {
            let single = Tensor::from_rows(&[rows[i].clone()]).unwrap();
            let xi = m.pair_features(&cur, &single, Mode::Eval).unwrap();
            assert_eq!(xi.row(0), x.row(i));
        }
        // permuting nodes permutes rows (train mode too)
        let perm = [3, 0, 4, 1, 2];
        let prow: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let xt = m.pair_features(&cur, &nodes, Mode::Train).unwrap();
        let xp = m.pair_features(&cur, &Tensor::from_rows(&prow).unwrap(), Mode::Train).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            for (a, b) in xp.row(k).iter().zip(xt.row(p)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // identical nodes give identical rows
        let same = Tensor::from_rows(&[rows[0].clone(), rows[0].clone()]).unwrap();
        let xs = m.pair_features(&cur, &same, Mode::Train).unwrap();
        assert_eq!(xs.row(0), xs.row(1));
    }

    fn identity_gin(store: &mut ParamStore, d: usize, eps: f64) -> Gin {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::new(store, &mut rng, "id", ParamGroup::Main, d, d, false, Activation::Identity);
        let mut eye = Tensor::zeros(d, d);
        for i in 0..d {
            eye.set(i, i, 1.0);
        }
        *store.get_mut(layer.weight) = eye;
        Gin {
            eps: store.add("eps", ParamGroup::Main, Tensor::scalar(eps)),
            mlp: Mlp { layers: vec![layer] },
        }
    }

    #[test]
    fn gin_with_identity_mlp_sums_neighbours() {
        let mut store = ParamStore::new();
        let gin = identity_gin(&mut store, 2, 0.0);
        let adj = adjacency_from_edges(3, &[(NodeId(1), NodeId(0)), (NodeId(0), NodeId(2))]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let y = gin.forward(&mut tape, &store, x, &adj, Mode::Eval).unwrap();
        assert_eq!(tape.value(y).row(0), &[9.0, 12.0]);
        assert!(adjacency_from_edges(2, &[(NodeId(0), NodeId(3))]).is_err());
    }

    #[test]
    fn gin_neighbour_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let gin = Gin {
            eps: store.add("eps", ParamGroup::Main, Tensor::scalar(0.3)),
            mlp: Mlp {
                layers: vec![Dense::new(&mut store, &mut rng, "g", ParamGroup::Main, 3, 4, true, Activation::Relu)],
            },
        };
        let x = Tensor::new(vec![5, 3], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut edges = vec![
            (NodeId(0), NodeId(1)),
            (NodeId(1), NodeId(2)),
            (NodeId(3), NodeId(1)),
            (NodeId(4), NodeId(0)),
            (NodeId(2), NodeId(4)),
        ];
        let run = |edges: &[(NodeId, NodeId)]| {
            let adj = adjacency_from_edges(5, edges).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = gin.forward(&mut tape, &store, xv, &adj, Mode::Train).unwrap();
            tape.value(y).clone()
        };
        let base = run(&edges);
        edges.reverse();
        assert_eq!(run(&edges), base);
    }

    #[test]
    fn zero_parameter_fixed_point() {
        let mut m = model(Variant::Full, 1);
        zero_all(&mut m.store);
        let Core::Gclstm(p) = &m.arch.core else { unreachable!() };
        let adj = adjacency_from_edges(3, &[(NodeId(0), NodeId(1))]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(3, 4, 0.7));
        let h = tape.constant(Tensor::zeros(3, 4));
        let c = tape.constant(Tensor::zeros(3, 4));
        let out = p.step(&mut tape, &m.store, x, h, c, &adj, Mode::Train).unwrap();
        for gate in [out.input_gate, out.forget_gate, out.output_gate] {
            assert!(tape.value(gate).data().iter().all(|&v| v == 0.5));
        }
        assert!(tape.value(out.c).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_retain_memory() {
        let mut m = model(Variant::Full, 6);
        let Core::Gclstm(p) = m.arch.core.clone() else { unreachable!() };
        m.store.get_mut(p.b_f).data_mut().iter_mut().for_each(|v| *v = 20.0);
        m.store.get_mut(p.b_i).data_mut().iter_mut().for_each(|v| *v = -20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        let x = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let state = GclstmState {
            h: Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap(),
            c: Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        };
        let adj = adjacency_from_edges(n, &[(NodeId(0), NodeId(1)), (NodeId(2), NodeId(3))]).unwrap();
        let (_, next) = m.gclstm_step(&x, &adj, &state, Mode::Train).unwrap();
        for (a, b) in next.c.data().iter().zip(state.c.data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn skip_path_is_row_local_and_identity_capable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = LocalizerModel::new(ModelConfig {
            dims: ModelDims { d_skip: 4, ..small_dims() },
            batch_norm: false,
            ..Default::default()
        });
        let x = Tensor::new(vec![4, 4], (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let s = m.skip_path(&x, Mode::Eval).unwrap().unwrap();
        let mut x2 = x.clone();
        x2.set(2, 1, 9.0);
        let s2 = m.skip_path(&x2, Mode::Eval).unwrap().unwrap();
        for i in [0, 1, 3] {
            assert_eq!(s.row(i), s2.row(i));
        }
        let layer = m.arch.skip.clone().unwrap();
        let mut eye = Tensor::zeros(4, 4);
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        *m.store.get_mut(layer.weight) = eye;
        assert_eq!(m.skip_path(&x, Mode::Eval).unwrap().unwrap(), x);
    }

    #[test]
    fn identify_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model(Variant::Full, 4);
        let h = Tensor::from_rows(&vec![vec![0.2, 0.1, 0.4, 0.3]; 5]).unwrap();
        let s = Tensor::from_rows(&vec![vec![1.0, 0.0, 2.0]; 5]).unwrap();
        let p = m.identify(&h, Some(&s), Mode::Train).unwrap();
        for v in &p {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let h = Tensor::new(vec![6, 4], (0..24).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let s = Tensor::new(vec![6, 3], (0..18).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let p = m.identify(&h, Some(&s), Mode::Eval).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.identify(&h, None, Mode::Eval).is_err());
    }

    #[test]
    fn symmetric_inputs_give_uniform_probabilities() {
        let m = model(Variant::Full, 8);
        let nodes = (0..5)
            .map(|_| MapNode {
                descriptor: vec![0.3, -0.1, 0.8, 0.2],
                pose: None,
            })
            .collect();
        let edges = (1..5).map(|i| (NodeId(i - 1), NodeId(i))).collect();
        let map = TopoMap::new(nodes, edges, MapConfig::default()).unwrap();
        let frame = model(Variant::SingleFrame, 8);
        let out = frame.localize_step(&frame.fresh_state(5), &[1.0, 0.0, 0.0, 0.0], &map).unwrap();
        for p in &out.probabilities {
            assert!((p - 0.2).abs() < 1e-12);
        }
        // recurrent model on an edgeless map: every node sees the same input
        let iso = TopoMap::new(map.nodes().to_vec(), vec![], MapConfig::default()).unwrap();
        let out = m.localize_step(&m.fresh_state(5), &[1.0, 0.0, 0.0, 0.0], &iso).unwrap();
        for p in &out.probabilities {
            assert!((p - 0.2).abs() < 1e-12);
        }
        assert_eq!(out.predicted, NodeId(0));
    }

    #[test]
    fn recurrence_changes_state_on_repeated_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = model(Variant::Full, 12);
        let map = random_map(&mut rng, 6, 4);
        let mut loc = Localizer::new(&m, &map).unwrap();
        let obs = [0.1, 0.5, -0.2, 0.9];
        let a = loc.step(&obs).unwrap();
        let b = loc.step(&obs).unwrap();
        assert_ne!(a.state.h, b.state.h);
        loc.reset();
        assert!(loc.state().h.data().iter().all(|&v| v == 0.0));
        let c = loc.step(&obs).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn reset_state_shape() {
        let s = reset_state(7, 3);
        assert_eq!(s.h.shape(), &[7, 3]);
        assert_eq!(s.c.shape(), &[7, 3]);
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gclstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = model(Variant::Full, 21);
        let n = 8;
        let map = random_map(&mut rng, n, 4);
        let adj = adjacency_of(&map);
        let x = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let h0 = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let c0 = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let Core::Gclstm(p) = m.arch.core.clone() else { unreachable!() };
        let report = grad_check(
            &m.store,
            |t, s| {
                let xv = t.constant(x.clone());
                let hv = t.constant(h0.clone());
                let cv = t.constant(c0.clone());
                let out = p
                    .step(t, s, xv, hv, cv, &adj, Mode::Train)
                    .map_err(|e| DiffError::Shape(e.to_string()))?;
                let wv = t.constant(w.clone());
                let hw = t.hadamard(out.h, wv)?;
                let cw = t.hadamard(out.c, wv)?;
                let a = t.sum_all(hw);
                let b = t.sum_all(cw);
                t.add(a, b)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        let gclstm_params: Vec<_> = report.params.iter().filter(|p| p.name.starts_with("gclstm")).collect();
        assert!(gclstm_params.len() > 40);
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn no_skip_ablation_is_smaller_with_same_output_width() {
        let cfg = ModelConfig {
            dims: small_dims(),
            ..Default::default()
        };
        let full = LocalizerModel::new(cfg);
        let ablated = LocalizerModel::ablation_no_skip(cfg);
        assert!(ablated.param_count() < full.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 5, 4);
        let a = full.localize_step(&full.fresh_state(5), &[0.1; 4], &map).unwrap();
        let b = ablated.localize_step(&ablated.fresh_state(5), &[0.1; 4], &map).unwrap();
        assert_eq!(a.probabilities.len(), b.probabilities.len());
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let m = model(Variant::NoSkip, 33);
        let back = LocalizerModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.store, m.store);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let m = model(Variant::Full, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 4, 5);
        assert!(matches!(
            m.localize_step(&m.fresh_state(4), &[0.0; 4], &map),
            Err(LocalizerError::Dim(_))
        ));
        let map = random_map(&mut rng, 4, 4);
        assert!(m.localize_step(&m.fresh_state(3), &[0.0; 4], &map).is_err());
    }
}
