//! View-graph cleaning network.
//!
//! Each edge's final message `h_{u→v}` feeds two heads: `lp1` predicts a
//! correction quaternion `Δq` (rectified edge `Δq ⋆ q̃_uv`) and `lp2` an
//! outlier logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mpnn::{self, Dense, MpnnConfig, MpnnWeights};
use crate::so3::{geodesic_deg, UnitQuaternion};
use crate::tolerances::{CLEAN_EPSILON, OUTLIER_LABEL_DEG};
use crate::viewgraph::{augment_bidirectional, largest_component, Subgraph, ViewGraph};

pub const CLEANNET_TAG: &str = "cleannet";

const HEAD_SCALE: f64 = 0.1;
const PASSTHROUGH_LOGIT: f64 = -20.0;

#[derive(Debug, Clone)]
pub struct CleanNet {
    store: ParamStore,
    mpnn: MpnnWeights,
    lp1: Dense,
    lp2: Dense,
}

/// Per-edge outputs, aligned with `g.edges()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanPrediction {
    pub rect_quat: Vec<UnitQuaternion>,
    pub outlier_logit: Vec<f64>,
    pub outlier_prob: Vec<f64>,
}

/// Tape handles of one forward pass: `rect` is `[E × 4]` unit rows,
/// `logits` is `[E × 1]`.
#[derive(Debug, Clone, Copy)]
pub struct CleanVars {
    pub rect: Var,
    pub logits: Var,
}

impl CleanNet {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = MpnnConfig::clean();
        let mpnn = MpnnWeights::init(&mut store, "clean.mpnn", &cfg, &mut rng)?;
        let lp1 = Dense::init_head(&mut store, "clean.lp1", cfg.msg_dim, &[1.0, 0.0, 0.0, 0.0], HEAD_SCALE, &mut rng)?;
        let lp2 = Dense::init_head(&mut store, "clean.lp2", cfg.msg_dim, &[0.0], HEAD_SCALE, &mut rng)?;
        Ok(CleanNet { store, mpnn, lp1, lp2 })
    }

    /// Heads zeroed: every edge kept with its observed orientation.
    pub fn passthrough() -> Self {
        let mut net = Self::new(0).expect("fixed architecture");
        for (head, bias) in [(net.lp1, vec![1.0, 0.0, 0.0, 0.0]), (net.lp2, vec![PASSTHROUGH_LOGIT])] {
            net.store.value_mut(head.w).data_mut().iter_mut().for_each(|x| *x = 0.0);
            net.store.value_mut(head.b).data_mut().copy_from_slice(&bias);
        }
        net
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn to_json(&self) -> String {
        self.store.to_checkpoint_json(CLEANNET_TAG)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut net = Self::new(0)?;
        net.store.load_checkpoint_json(text, CLEANNET_TAG)?;
        Ok(net)
    }

    /// Records the forward pass of `g` on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, g: &ViewGraph) -> Result<CleanVars> {
        self.forward_with(tape, &self.store, g)
    }

    pub(crate) fn forward_with(&self, tape: &mut Tape, store: &ParamStore, g: &ViewGraph) -> Result<CleanVars> {
        let de = augment_bidirectional(g);
        let rows: Vec<[f64; 4]> = de.iter().map(|e| e.q.to_array()).collect();
        let feats = tape.constant(Tensor::from_rows(&rows));
        let out = mpnn::forward(tape, store, &self.mpnn, g.n_nodes(), &de, feats, None)?;
        let fwd: Vec<usize> = (0..g.n_edges()).collect();
        let h = tape.gather(out.edges, &fwd)?;
        let delta = self.lp1.apply(tape, store, h)?;
        let delta = tape.quat_normalize(delta)?;
        let observed = tape.constant(Tensor::from_rows(&rows[..g.n_edges()]));
        let rect = tape.quat_compose(delta, observed)?;
        let logits = self.lp2.apply(tape, store, h)?;
        Ok(CleanVars { rect, logits })
    }
}

pub fn clean_forward(net: &CleanNet, g: &ViewGraph) -> Result<CleanPrediction> {
    let mut tape = Tape::new();
    let vars = net.forward_tape(&mut tape, g)?;
    let rect = tape.value(vars.rect);
    let rect_quat = (0..g.n_edges())
        .map(|i| {
            let [w, x, y, z] = rect.quat_row(i);
            UnitQuaternion::from_wxyz(w, x, y, z)
        })
        .collect::<Result<_>>()?;
    let outlier_logit = tape.value(vars.logits).data().to_vec();
    let outlier_prob = outlier_logit.iter().map(|&z| crate::autodiff::sigmoid(z)).collect();
    Ok(CleanPrediction {
        rect_quat,
        outlier_logit,
        outlier_prob,
    })
}

/// `true` where the observed edge is more than 20° from the ground-truth
/// relative orientation.
pub fn gt_outlier_label(g: &ViewGraph) -> Result<Vec<bool>> {
    g.edges()
        .iter()
        .map(|e| Ok(geodesic_deg(&e.q, &g.relative_gt(e.u, e.v)?) > OUTLIER_LABEL_DEG))
        .collect()
}

fn loss_weights(g: &ViewGraph) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|e| 1.0 / (g.degree(e.u) * g.degree(e.v)) as f64)
        .collect()
}

/// Degree-normalised orientation error summed over edges plus `lambda`
/// times the mean cross-entropy of the outlier logits.
pub fn clean_loss_tape(tape: &mut Tape, vars: &CleanVars, g: &ViewGraph, lambda: f64) -> Result<Var> {
    let targets = g
        .edges()
        .iter()
        .map(|e| Ok(g.relative_gt(e.u, e.v)?.to_array()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = gt_outlier_label(g)?.into_iter().map(|b| f64::from(u8::from(b))).collect();
    let d = tape.quat_dist_loss(vars.rect, &targets)?;
    let orient = tape.weighted_sum(d, &loss_weights(g))?;
    let bce = tape.bce_with_logits(vars.logits, &labels)?;
    let bce = tape.mean(bce);
    let bce = tape.scale(bce, lambda);
    tape.add(orient, bce)
}

/// Loss value of a finished prediction (same definition as [`clean_loss_tape`]).
pub fn clean_loss(pred: &CleanPrediction, g: &ViewGraph, lambda: f64) -> Result<f64> {
    if pred.rect_quat.len() != g.n_edges() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} edges",
            pred.rect_quat.len(),
            g.n_edges()
        )));
    }
    let mut tape = Tape::new();
    let rows: Vec<[f64; 4]> = pred.rect_quat.iter().map(|q| q.to_array()).collect();
    let rect = tape.constant(Tensor::from_rows(&rows));
    let logits = tape.constant(Tensor::new(g.n_edges(), 1, pred.outlier_logit.clone())?);
    let l = clean_loss_tape(&mut tape, &CleanVars { rect, logits }, g, lambda)?;
    Ok(tape.value(l).item())
}

/// Drops edges with outlier probability above `eps`, substitutes rectified
/// orientations for the rest and keeps the largest connected component.
pub fn clean_graph(g: &ViewGraph, pred: &CleanPrediction, eps: f64) -> Result<Subgraph> {
    if pred.rect_quat.len() != g.n_edges() || pred.outlier_prob.len() != g.n_edges() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} edges",
            pred.rect_quat.len(),
            g.n_edges()
        )));
    }
    let rectified = g.with_edge_orientations(&pred.rect_quat)?;
    let kept = rectified.filter_edges(|i, _| pred.outlier_prob[i] <= eps);
    if kept.n_edges() == 0 {
        return Err(Error::EmptyCleanedGraph);
    }
    Ok(largest_component(&kept))
}

/// [`clean_graph`] at the default threshold.
pub fn clean_graph_default(g: &ViewGraph, pred: &CleanPrediction) -> Result<Subgraph> {
    clean_graph(g, pred, CLEAN_EPSILON)
}
