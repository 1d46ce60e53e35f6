//! Message-passing core shared by both networks.
//!
//! For `t = 1..T`, every directed edge `u → v` computes a message
//! `φ(h_v, h_u, e_uv)`, each node averages its incoming messages into `m_v`,
//! and updates `h_v ← γ(h_v, m_v)`. The final-step messages are returned
//! alongside the final node states.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::viewgraph::DirectedEdge;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpnnConfig {
    /// Message-passing rounds `T`.
    pub steps: usize,
    pub hidden_dim: usize,
    pub msg_dim: usize,
    pub edge_feat_dim: usize,
    /// Width of the per-node initial state; zero means all-zero states.
    pub node_init_dim: usize,
    pub per_step_weights: bool,
    /// Linear+ReLU layers in φ; the first consumes `[h_v, h_u, e]`.
    pub phi_layers: usize,
    /// Linear+ReLU layers in γ; the first consumes `[h_v, m_v]`.
    pub gamma_layers: usize,
}

impl MpnnConfig {
    pub fn clean() -> Self {
        MpnnConfig {
            steps: 4,
            hidden_dim: 32,
            msg_dim: 32,
            edge_feat_dim: 4,
            node_init_dim: 0,
            per_step_weights: true,
            phi_layers: 2,
            gamma_layers: 1,
        }
    }

    pub fn fine() -> Self {
        MpnnConfig {
            node_init_dim: 4,
            ..Self::clean()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0
            || self.hidden_dim == 0
            || self.msg_dim == 0
            || self.edge_feat_dim == 0
            || self.phi_layers == 0
            || self.gamma_layers == 0
        {
            return Err(Error::InvalidInput(format!("invalid message-passing config {self:?}")));
        }
        if self.node_init_dim > self.hidden_dim {
            return Err(Error::InvalidInput(format!(
                "node init width {} exceeds hidden width {}",
                self.node_init_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Scalars in the message-passing stack alone.
    pub fn stack_param_count(&self) -> usize {
        let (h, m, e) = (self.hidden_dim, self.msg_dim, self.edge_feat_dim);
        let phi = (2 * h + e) * m + m + (self.phi_layers - 1) * (m * m + m);
        let gamma = (h + m) * h + h + (self.gamma_layers - 1) * (h * h + h);
        let sets = if self.per_step_weights { self.steps } else { 1 };
        sets * (phi + gamma)
    }
}

/// Scalars in a stack plus single-layer heads given as `(in, out)` pairs.
pub fn param_count(cfg: &MpnnConfig, heads: &[(usize, usize)]) -> usize {
    cfg.stack_param_count() + heads.iter().map(|&(i, o)| i * o + o).sum::<usize>()
}

/// A dense layer `x·W + b` whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    /// He-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), he_uniform(fan_in, fan_in, out, rng))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(1, out))?;
        Ok(Dense { w, b })
    }

    /// Output head: He-uniform weights scaled by `scale`, bias set to `bias`.
    pub fn init_head<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        bias: &[f64],
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = he_uniform(fan_in, fan_in, bias.len(), rng);
        w.data_mut().iter_mut().for_each(|x| *x *= scale);
        let w = store.add(&format!("{name}.w"), w)?;
        let b = store.add(&format!("{name}.b"), Tensor::new(1, bias.len(), bias.to_vec())?)?;
        Ok(Dense { w, b })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, Some(b))
    }
}

fn he_uniform<R: Rng + ?Sized>(fan_in: usize, rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(rows, cols, data).expect("sized to shape")
}

#[derive(Debug, Clone)]
struct StepWeights {
    // first φ layer split by input block; the blocks sum to the concat form
    phi_recv: ParamId,
    phi_send: ParamId,
    phi_edge: ParamId,
    phi_bias: ParamId,
    phi_rest: Vec<Dense>,
    gamma: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MpnnWeights {
    cfg: MpnnConfig,
    steps: Vec<StepWeights>,
}

impl MpnnWeights {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &MpnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (h, m, e) = (cfg.hidden_dim, cfg.msg_dim, cfg.edge_feat_dim);
        let sets = if cfg.per_step_weights { cfg.steps } else { 1 };
        let mut steps = Vec::with_capacity(sets);
        for t in 0..sets {
            let p = format!("{prefix}.step{t}");
            let fan_in = 2 * h + e;
            let phi_recv = store.add(&format!("{p}.phi0.w_recv"), he_uniform(fan_in, h, m, rng))?;
            let phi_send = store.add(&format!("{p}.phi0.w_send"), he_uniform(fan_in, h, m, rng))?;
            let phi_edge = store.add(&format!("{p}.phi0.w_edge"), he_uniform(fan_in, e, m, rng))?;
            let phi_bias = store.add(&format!("{p}.phi0.b"), Tensor::zeros(1, m))?;
            let phi_rest = (1..cfg.phi_layers)
                .map(|l| Dense::init(store, &format!("{p}.phi{l}"), m, m, rng))
                .collect::<Result<_>>()?;
            let mut gamma = vec![Dense::init(store, &format!("{p}.gamma0"), h + m, h, rng)?];
            for l in 1..cfg.gamma_layers {
                gamma.push(Dense::init(store, &format!("{p}.gamma{l}"), h, h, rng)?);
            }
            steps.push(StepWeights {
                phi_recv,
                phi_send,
                phi_edge,
                phi_bias,
                phi_rest,
                gamma,
            });
        }
        Ok(MpnnWeights { cfg: *cfg, steps })
    }

    pub fn config(&self) -> &MpnnConfig {
        &self.cfg
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MpnnOutput {
    /// `[N × hidden]` final node states.
    pub nodes: Var,
    /// `[D × msg]` final-step message of each directed edge.
    pub edges: Var,
}

/// Runs the stack. `edge_feats` is `[D × edge_feat_dim]` aligned with
/// `edges`; `node_init`, if given, is `[N × node_init_dim]` and is
/// zero-padded to the hidden width.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    weights: &MpnnWeights,
    n_nodes: usize,
    edges: &[DirectedEdge],
    edge_feats: Var,
    node_init: Option<Var>,
) -> Result<MpnnOutput> {
    let cfg = &weights.cfg;
    let ef = tape.value(edge_feats);
    if ef.shape() != [edges.len(), cfg.edge_feat_dim] {
        return Err(Error::ShapeMismatch(format!(
            "edge features {:?} for {} directed edges of width {}",
            ef.shape(),
            edges.len(),
            cfg.edge_feat_dim
        )));
    }
    let mut h = match node_init {
        None => tape.constant(Tensor::zeros(n_nodes, cfg.hidden_dim)),
        Some(init) => {
            let it = tape.value(init);
            if it.shape() != [n_nodes, cfg.node_init_dim] {
                return Err(Error::ShapeMismatch(format!(
                    "node init {:?} for {n_nodes} nodes of width {}",
                    it.shape(),
                    cfg.node_init_dim
                )));
            }
            if cfg.node_init_dim == cfg.hidden_dim {
                init
            } else {
                let pad = tape.constant(Tensor::zeros(n_nodes, cfg.hidden_dim - cfg.node_init_dim));
                tape.concat(&[init, pad], 1)?
            }
        }
    };
    let src: Vec<usize> = edges.iter().map(|e| e.src).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.dst).collect();
    for (i, (&s, &d)) in src.iter().zip(&dst).enumerate() {
        if s >= n_nodes || d >= n_nodes {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: n_nodes,
            });
        }
    }

    let mut msg = None;
    for t in 0..cfg.steps {
        let w = &weights.steps[if cfg.per_step_weights { t } else { 0 }];
        let w_recv = tape.param(store, w.phi_recv);
        let w_send = tape.param(store, w.phi_send);
        let w_edge = tape.param(store, w.phi_edge);
        let b = tape.param(store, w.phi_bias);
        let recv = tape.linear(h, w_recv, None)?;
        let send = tape.linear(h, w_send, None)?;
        let recv = tape.gather(recv, &dst)?;
        let send = tape.gather(send, &src)?;
        let edge = tape.linear(edge_feats, w_edge, Some(b))?;
        let pre = tape.add(recv, send)?;
        let pre = tape.add(pre, edge)?;
        let mut m = tape.relu(pre);
        for layer in &w.phi_rest {
            let z = layer.apply(tape, store, m)?;
            m = tape.relu(z);
        }
        let agg = tape.scatter_mean(m, &dst, n_nodes)?;
        let mut hn = tape.concat(&[h, agg], 1)?;
        for layer in &w.gamma {
            let z = layer.apply(tape, store, hn)?;
            hn = tape.relu(z);
        }
        h = hn;
        msg = Some(m);
    }
    Ok(MpnnOutput {
        nodes: h,
        edges: msg.expect("at least one step"),
    })
}
