//! Fine-tuning network.
//!
//! Node states start from the initial absolute orientations; each directed
//! edge carries the discrepancy `R̃_v⁻¹ ⋆ q̃_uv ⋆ R̃_u` between the observation
//! and the initialisation. `lp3` maps final node states to a correction
//! `Δ_v`, giving `R*_v = Δ_v ⋆ R̃_v`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mpnn::{self, Dense, MpnnConfig, MpnnWeights};
use crate::so3::{geodesic_deg, UnitQuaternion};
use crate::viewgraph::{augment_bidirectional, rereference, NodeId, ViewGraph};

pub const FINENET_TAG: &str = "finenet";

const HEAD_SCALE: f64 = 0.1;
// largest root ground-truth angle accepted as "already re-referenced"
const REFERENCE_TOL_DEG: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FineNet {
    store: ParamStore,
    mpnn: MpnnWeights,
    lp3: Dense,
}

impl FineNet {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = MpnnConfig::fine();
        let mpnn = MpnnWeights::init(&mut store, "fine.mpnn", &cfg, &mut rng)?;
        let lp3 = Dense::init_head(&mut store, "fine.lp3", cfg.hidden_dim, &[1.0, 0.0, 0.0, 0.0], HEAD_SCALE, &mut rng)?;
        Ok(FineNet { store, mpnn, lp3 })
    }

    /// Head zeroed: outputs equal the initialisation.
    pub fn passthrough() -> Self {
        let mut net = Self::new(0).expect("fixed architecture");
        let lp3 = net.lp3;
        net.store.value_mut(lp3.w).data_mut().iter_mut().for_each(|x| *x = 0.0);
        net.store.value_mut(lp3.b).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
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
        self.store.to_checkpoint_json(FINENET_TAG)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut net = Self::new(0)?;
        net.store.load_checkpoint_json(text, FINENET_TAG)?;
        Ok(net)
    }

    /// Records the forward pass; returns the `[N × 4]` refined orientations
    /// before re-referencing.
    pub fn forward_tape(&self, tape: &mut Tape, g: &ViewGraph, init: &[UnitQuaternion]) -> Result<Var> {
        self.forward_with(tape, &self.store, g, init)
    }

    pub(crate) fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &ViewGraph,
        init: &[UnitQuaternion],
    ) -> Result<Var> {
        if init.len() != g.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "{} initial orientations for {} nodes",
                init.len(),
                g.n_nodes()
            )));
        }
        let de = augment_bidirectional(g);
        let feats: Vec<[f64; 4]> = edge_features(&de, init);
        let feats = tape.constant(Tensor::from_rows(&feats));
        let init_rows: Vec<[f64; 4]> = init.iter().map(|q| q.to_array()).collect();
        let init_var = tape.constant(Tensor::from_rows(&init_rows));
        let out = mpnn::forward(tape, store, &self.mpnn, g.n_nodes(), &de, feats, Some(init_var))?;
        let delta = self.lp3.apply(tape, store, out.nodes)?;
        let delta = tape.quat_normalize(delta)?;
        tape.quat_compose(delta, init_var)
    }
}

fn edge_features(de: &[crate::viewgraph::DirectedEdge], init: &[UnitQuaternion]) -> Vec<[f64; 4]> {
    de.iter()
        .map(|e| init[e.dst].inverse().compose(&e.q).compose(&init[e.src]).to_array())
        .collect()
}

fn to_quats(t: &Tensor) -> Result<Vec<UnitQuaternion>> {
    (0..t.rows())
        .map(|i| {
            let [w, x, y, z] = t.quat_row(i);
            UnitQuaternion::from_wxyz(w, x, y, z)
        })
        .collect()
}

/// Refined orientations re-referenced so that `root` is the identity.
pub fn fine_forward(
    net: &FineNet,
    g: &ViewGraph,
    init: &[UnitQuaternion],
    root: NodeId,
) -> Result<Vec<UnitQuaternion>> {
    if root >= g.n_nodes() {
        return Err(Error::IndexOutOfRange {
            index: root,
            len: g.n_nodes(),
        });
    }
    let mut tape = Tape::new();
    let raw = net.forward_tape(&mut tape, g, init)?;
    rereference(&to_quats(tape.value(raw))?, root)
}

/// Fails unless `gt[root]` is the identity.
pub fn check_reference(gt: &[UnitQuaternion], root: NodeId) -> Result<()> {
    let q = gt.get(root).ok_or(Error::IndexOutOfRange {
        index: root,
        len: gt.len(),
    })?;
    let angle = geodesic_deg(q, &UnitQuaternion::IDENTITY);
    if angle > REFERENCE_TOL_DEG {
        return Err(Error::ReferenceMismatch { root, angle_deg: angle });
    }
    Ok(())
}

/// Degree-normalised relative error over edges plus the `β/|N_v|`-weighted
/// absolute error over nodes. `gt` must be referenced at `root`.
pub fn fine_loss_tape(
    tape: &mut Tape,
    pred: Var,
    g: &ViewGraph,
    gt: &[UnitQuaternion],
    root: NodeId,
    beta: f64,
) -> Result<Var> {
    if gt.len() != g.n_nodes() || tape.value(pred).shape() != [g.n_nodes(), 4] {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} and {} ground-truth rows for {} nodes",
            tape.value(pred).shape(),
            gt.len(),
            g.n_nodes()
        )));
    }
    check_reference(gt, root)?;
    let us: Vec<usize> = g.edges().iter().map(|e| e.u).collect();
    let vs: Vec<usize> = g.edges().iter().map(|e| e.v).collect();
    let pu = tape.gather(pred, &us)?;
    let pv = tape.gather(pred, &vs)?;
    let pu_inv = tape.quat_conj(pu)?;
    let rel = tape.quat_compose(pv, pu_inv)?;
    let rel = tape.quat_normalize(rel)?;
    let rel_gt: Vec<[f64; 4]> = g
        .edges()
        .iter()
        .map(|e| UnitQuaternion::relative(&gt[e.u], &gt[e.v]).to_array())
        .collect();
    let d_edge = tape.quat_dist_loss(rel, &rel_gt)?;
    let w_edge: Vec<f64> = g
        .edges()
        .iter()
        .map(|e| 1.0 / (g.degree(e.u) * g.degree(e.v)) as f64)
        .collect();
    let edge_term = tape.weighted_sum(d_edge, &w_edge)?;

    let pn = tape.quat_normalize(pred)?;
    let abs_gt: Vec<[f64; 4]> = gt.iter().map(|q| q.to_array()).collect();
    let d_node = tape.quat_dist_loss(pn, &abs_gt)?;
    let w_node: Vec<f64> = (0..g.n_nodes()).map(|v| beta / g.degree(v).max(1) as f64).collect();
    let node_term = tape.weighted_sum(d_node, &w_node)?;
    tape.add(edge_term, node_term)
}

/// Loss of finished predictions against the graph's own ground truth, which
/// must already be referenced at `root`.
pub fn fine_loss(pred: &[UnitQuaternion], g: &ViewGraph, root: NodeId, beta: f64) -> Result<f64> {
    let gt = g.ground_truth()?;
    let mut tape = Tape::new();
    let rows: Vec<[f64; 4]> = pred.iter().map(|q| q.to_array()).collect();
    let p = tape.constant(Tensor::from_rows(&rows));
    let l = fine_loss_tape(&mut tape, p, g, &gt, root, beta)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpnn::param_count;
    use crate::so3::{quat_dist, sample_uniform};
    use crate::synthgen::{generate_graph_at, Range, SynthConfig};
    use crate::testutil::param_grad_error;
    use crate::tolerances::FINE_BETA;
    use crate::viewgraph::{bootstrap_orientations, select_root, shortest_path_tree};

    fn graph(seed: u64, sigma: f64) -> ViewGraph {
        let cfg = SynthConfig {
            n_cameras: Range::new(8, 12),
            edge_fraction: Range::fixed(0.4),
            sigma_deg: Range::fixed(sigma),
            outlier_fraction: Range::fixed(if sigma == 0.0 { 0.0 } else { 0.1 }),
            seed,
            ..SynthConfig::desk()
        };
        generate_graph_at(&cfg, 0).unwrap().0
    }

    fn referenced(g: &ViewGraph, root: usize) -> ViewGraph {
        let gt = rereference(&g.ground_truth().unwrap(), root).unwrap();
        ViewGraph::new(gt.into_iter().map(Some).collect(), g.edges().to_vec()).unwrap()
    }

    fn spt_init(g: &ViewGraph) -> (usize, Vec<UnitQuaternion>) {
        let root = select_root(g).unwrap();
        let t = shortest_path_tree(g, root).unwrap();
        (root, bootstrap_orientations(g, &t).unwrap().orientations)
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(FineNet::new(1).unwrap().param_count(), param_count(&MpnnConfig::fine(), &[(32, 4)]));
    }

    #[test]
    fn perfect_init_gives_identity_features() {
        let g = graph(1, 0.0);
        let (_, init) = spt_init(&g);
        for f in edge_features(&augment_bidirectional(&g), &init) {
            let q = UnitQuaternion::from_array(f).unwrap();
            assert!(quat_dist(&q, &UnitQuaternion::IDENTITY) < 1e-9);
        }
    }

    #[test]
    fn outputs_are_unit_and_root_referenced() {
        let g = graph(2, 10.0);
        let (root, init) = spt_init(&g);
        let out = fine_forward(&FineNet::new(3).unwrap(), &g, &init, root).unwrap();
        assert_eq!(out[root], UnitQuaternion::IDENTITY);
        for q in &out {
            assert!(q.w() >= 0.0);
        }
        let pass = fine_forward(&FineNet::passthrough(), &g, &init, root).unwrap();
        for (a, b) in pass.iter().zip(&init) {
            assert!(quat_dist(a, b) < 1e-12);
        }
        assert!(fine_forward(&FineNet::passthrough(), &g, &init[1..], root).is_err());
    }

    #[test]
    fn loss_zero_at_ground_truth() {
        let g = graph(4, 10.0);
        let root = select_root(&g).unwrap();
        let g = referenced(&g, root);
        let gt = g.ground_truth().unwrap();
        assert!(fine_loss(&gt, &g, root, FINE_BETA).unwrap() < 1e-9);
    }

    #[test]
    fn reference_mismatch_is_reported() {
        let g = graph(5, 10.0);
        let root = select_root(&g).unwrap();
        let gt = g.ground_truth().unwrap();
        assert!(matches!(
            fine_loss(&gt, &g, root, FINE_BETA),
            Err(Error::ReferenceMismatch { .. })
        ));
    }

    #[test]
    fn gauge_term_lives_only_in_node_anchor() {
        let g = graph(6, 10.0);
        let (root, init) = spt_init(&g);
        let g = referenced(&g, root);
        let r = sample_uniform(&mut ChaCha8Rng::seed_from_u64(7));
        let moved: Vec<_> = init.iter().map(|q| q.compose(&r)).collect();
        let a = fine_loss(&init, &g, root, 0.0).unwrap();
        let b = fine_loss(&moved, &g, root, 0.0).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        let a = fine_loss(&init, &g, root, FINE_BETA).unwrap();
        let b = fine_loss(&moved, &g, root, FINE_BETA).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let g = graph(8, 15.0);
        let (root, init) = spt_init(&g);
        let g = referenced(&g, root);
        let gt = g.ground_truth().unwrap();
        let net = FineNet::new(9).unwrap();
        let err = param_grad_error(net.store(), 4, |tape, store| {
            let p = net.forward_with(tape, store, &g, &init).unwrap();
            fine_loss_tape(tape, p, &g, &gt, root, FINE_BETA).unwrap()
        });
        assert!(err < 1e-3, "worst relative error {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let g = graph(10, 10.0);
        let (root, init) = spt_init(&g);
        let net = FineNet::new(11).unwrap();
        let back = FineNet::from_json(&net.to_json()).unwrap();
        assert_eq!(
            fine_forward(&net, &g, &init, root).unwrap(),
            fine_forward(&back, &g, &init, root).unwrap()
        );
        assert!(FineNet::from_json(&crate::cleannet::CleanNet::new(0).unwrap().to_json()).is_err());
    }
}
