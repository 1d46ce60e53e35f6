//! End-to-end composition (clean, bootstrap, refine), gauge alignment
//! against ground truth, error metrics and corpus evaluation.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Matrix4, SymmetricEigen};
use rayon::prelude::*;

use crate::baselines::{irls_mra, weiszfeld_mra, weiszfeld_median, IrlsConfig, WeiszfeldConfig};
use crate::cleannet::{clean_forward, clean_graph, CleanNet};
use crate::error::{Error, Result};
use crate::finenet::{fine_forward, FineNet};
use crate::so3::{geodesic_deg, UnitQuaternion};
use crate::tolerances::CLEAN_EPSILON;
use crate::viewgraph::{rereference, select_root, shortest_path_tree, bootstrap_orientations, spt_init, NodeId, ViewGraph};

/// Absolute orientations referenced at `root` (its entry is the identity).
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub orientations: Vec<UnitQuaternion>,
    pub root: NodeId,
}

fn require_connected(g: &ViewGraph) -> Result<()> {
    if g.n_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    let comps = g.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected {
            reached: comps.iter().map(Vec::len).max().unwrap_or(0),
            total: g.n_nodes(),
        });
    }
    Ok(())
}

/// Shortest-path-tree bootstrap on the observed edges.
pub fn noisy_spt_init(g: &ViewGraph) -> Result<Initialization> {
    let init = spt_init(g)?;
    Ok(Initialization {
        root: init.tree.root,
        orientations: init.orientations,
    })
}

/// Fills unknown orientations by chaining observed edges outward from the
/// known ones, in breadth-first order.
fn attach_breadth_first(g: &ViewGraph, partial: Vec<Option<UnitQuaternion>>) -> Result<Vec<UnitQuaternion>> {
    let mut queue: VecDeque<NodeId> = (0..g.n_nodes()).filter(|&v| partial[v].is_some()).collect();
    let mut r = partial;
    while let Some(u) = queue.pop_front() {
        let ru = r[u].expect("queued nodes are known");
        for &(v, idx) in g.neighbors(u) {
            if r[v].is_none() {
                r[v] = Some(g.oriented(idx, u).compose(&ru));
                queue.push_back(v);
            }
        }
    }
    r.into_iter()
        .enumerate()
        .map(|(v, q)| q.ok_or_else(|| Error::InvalidInput(format!("node {v} unreachable from the cleaned graph"))))
        .collect()
}

/// CleanNet prunes and rectifies the edges; the largest surviving component
/// is bootstrapped along its shortest-path tree. Nodes it lost are attached
/// breadth-first through the observed edges.
pub fn cleannet_spt_init(g: &ViewGraph, clean: &CleanNet, eps: f64) -> Result<Initialization> {
    require_connected(g)?;
    let pred = clean_forward(clean, g).map_err(|e| e.at_stage("clean"))?;
    let sub = clean_graph(g, &pred, eps).map_err(|e| e.at_stage("clean"))?;
    let root_sub = select_root(&sub.graph)?;
    let tree = shortest_path_tree(&sub.graph, root_sub).map_err(|e| e.at_stage("spt"))?;
    let boot = bootstrap_orientations(&sub.graph, &tree).map_err(|e| e.at_stage("spt"))?;

    let mut partial = vec![None; g.n_nodes()];
    for (new, &old) in sub.new_to_old.iter().enumerate() {
        partial[old] = Some(boot.orientations[new]);
    }
    let orientations = attach_breadth_first(g, partial)?;
    let root = sub.new_to_old[root_sub];
    Ok(Initialization {
        orientations: rereference(&orientations, root)?,
        root,
    })
}

/// Wall-clock time per stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub init_ms: f64,
    pub fine_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub orientations: Vec<UnitQuaternion>,
    pub root: NodeId,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Clean, bootstrap, then `passes` FineNet refinements, each fed the previous
/// output. FineNet always sees the observed edges.
pub fn neurora_passes(
    g: &ViewGraph,
    clean: &CleanNet,
    fine: &FineNet,
    eps: f64,
    passes: usize,
) -> Result<PipelineOutput> {
    let t0 = Instant::now();
    let init = cleannet_spt_init(g, clean, eps)?;
    let init_ms = ms_since(t0);
    let t1 = Instant::now();
    let mut r = init.orientations;
    for _ in 0..passes {
        r = fine_forward(fine, g, &r, init.root).map_err(|e| e.at_stage("fine"))?;
    }
    let timings = StageTimings {
        init_ms,
        fine_ms: ms_since(t1),
    };
    log::info!(
        "pipeline: {} nodes, {} edges, init {:.1} ms, refine {:.1} ms",
        g.n_nodes(),
        g.n_edges(),
        timings.init_ms,
        timings.fine_ms
    );
    Ok(PipelineOutput {
        orientations: r,
        root: init.root,
        timings,
    })
}

pub fn neurora(g: &ViewGraph, clean: &CleanNet, fine: &FineNet) -> Result<PipelineOutput> {
    neurora_passes(g, clean, fine, CLEAN_EPSILON, 1)
}

/// Two refinement passes with the same weights.
pub fn neurora_v2(g: &ViewGraph, clean: &CleanNet, fine: &FineNet) -> Result<PipelineOutput> {
    neurora_passes(g, clean, fine, CLEAN_EPSILON, 2)
}

/// How the global gauge is fitted before measuring errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Chordal L2 mean of the per-node offsets (closed form).
    #[default]
    ChordalL2,
    /// Geodesic ℓ1 median of the per-node offsets.
    L1Median,
}

fn check_same_len(pred: &[UnitQuaternion], gt: &[UnitQuaternion]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted orientations for {} ground-truth nodes",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(())
}

/// Right gauge `r` with `pred_v ⋆ r ≈ gt_v`.
pub fn fit_gauge(pred: &[UnitQuaternion], gt: &[UnitQuaternion], how: Alignment) -> Result<UnitQuaternion> {
    check_same_len(pred, gt)?;
    let offsets: Vec<UnitQuaternion> = pred.iter().zip(gt).map(|(p, g)| p.inverse().compose(g)).collect();
    match how {
        Alignment::ChordalL2 => {
            let mut m = Matrix4::<f64>::zeros();
            for c in &offsets {
                let v = nalgebra::Vector4::from(c.to_array());
                m += v * v.transpose();
            }
            let eig = SymmetricEigen::new(m);
            let k = eig.eigenvalues.imax();
            let v = eig.eigenvectors.column(k);
            UnitQuaternion::from_wxyz(v[0], v[1], v[2], v[3])
        }
        Alignment::L1Median => weiszfeld_median(&offsets, 100),
    }
}

pub fn align_to_gt_with(pred: &[UnitQuaternion], gt: &[UnitQuaternion], how: Alignment) -> Result<Vec<UnitQuaternion>> {
    let r = fit_gauge(pred, gt, how)?;
    Ok(pred.iter().map(|p| p.compose(&r)).collect())
}

pub fn align_to_gt(pred: &[UnitQuaternion], gt: &[UnitQuaternion]) -> Result<Vec<UnitQuaternion>> {
    align_to_gt_with(pred, gt, Alignment::ChordalL2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub per_node_deg: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-node geodesic errors of already aligned predictions.
pub fn metrics(pred: &[UnitQuaternion], gt: &[UnitQuaternion]) -> Result<Metrics> {
    check_same_len(pred, gt)?;
    let per_node_deg: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| geodesic_deg(p, g)).collect();
    Ok(Metrics {
        mean_deg: per_node_deg.iter().sum::<f64>() / per_node_deg.len() as f64,
        median_deg: median(&per_node_deg),
        per_node_deg,
    })
}

/// Aligns and measures in one step.
pub fn evaluate(pred: &[UnitQuaternion], gt: &[UnitQuaternion]) -> Result<Metrics> {
    metrics(&align_to_gt(pred, gt)?, gt)
}

/// Area under the ROC curve of `scores` against binary `labels` (the
/// Mann–Whitney statistic, ties counted as one half).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            if labels[k] {
                pos += 1;
                rank_sum += rank;
            } else {
                neg += 1;
            }
        }
        i = j;
    }
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ROC AUC needs both positive and negative labels".into()));
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Estimators compared by the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SptNoisy,
    CleanNetSpt,
    Neurora,
    NeuroraV2,
    /// 50 Weiszfeld sweeps from the noisy SPT.
    Weiszfeld,
    /// Two-phase IRLS from the noisy SPT.
    Irls,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SptNoisy,
        Method::CleanNetSpt,
        Method::Neurora,
        Method::NeuroraV2,
        Method::Weiszfeld,
        Method::Irls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SptNoisy => "spt-noisy",
            Method::CleanNetSpt => "cleannet-spt",
            Method::Neurora => "neurora",
            Method::NeuroraV2 => "neurora-v2",
            Method::Weiszfeld => "weiszfeld",
            Method::Irls => "irls",
        }
    }

    pub fn needs_models(self) -> bool {
        matches!(self, Method::CleanNetSpt | Method::Neurora | Method::NeuroraV2)
    }
}

/// The two trained networks.
#[derive(Debug, Clone)]
pub struct Models {
    pub clean: CleanNet,
    pub fine: FineNet,
}

pub fn run_method(method: Method, g: &ViewGraph, models: Option<&Models>) -> Result<Vec<UnitQuaternion>> {
    let need = || models.ok_or_else(|| Error::InvalidInput(format!("method `{}` needs trained networks", method.name())));
    Ok(match method {
        Method::SptNoisy => noisy_spt_init(g)?.orientations,
        Method::CleanNetSpt => cleannet_spt_init(g, &need()?.clean, CLEAN_EPSILON)?.orientations,
        Method::Neurora => {
            let m = need()?;
            neurora(g, &m.clean, &m.fine)?.orientations
        }
        Method::NeuroraV2 => {
            let m = need()?;
            neurora_v2(g, &m.clean, &m.fine)?.orientations
        }
        Method::Weiszfeld => {
            let init = noisy_spt_init(g)?;
            let cfg = WeiszfeldConfig {
                root: Some(init.root),
                ..Default::default()
            };
            weiszfeld_mra(g, &init.orientations, &cfg)
                .map_err(|e| e.at_stage("weiszfeld"))?
                .orientations
        }
        Method::Irls => {
            let init = noisy_spt_init(g)?;
            let cfg = IrlsConfig {
                root: Some(init.root),
                ..Default::default()
            };
            irls_mra(g, &init.orientations, &cfg).map_err(|e| e.at_stage("irls"))?.orientations
        }
    })
}

/// Per-graph metrics for one method, in corpus order.
#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub method: Method,
    pub per_graph: Vec<Metrics>,
    pub wall_ms: f64,
}

impl CorpusReport {
    /// Mean over graphs of the per-graph mean error.
    pub fn mean_deg(&self) -> f64 {
        self.per_graph.iter().map(|m| m.mean_deg).sum::<f64>() / self.per_graph.len().max(1) as f64
    }

    /// Mean over graphs of the per-graph median error.
    pub fn median_deg(&self) -> f64 {
        self.per_graph.iter().map(|m| m.median_deg).sum::<f64>() / self.per_graph.len().max(1) as f64
    }
}

/// Runs `method` on every graph; `jobs > 1` evaluates graphs in parallel,
/// results keep corpus order.
pub fn evaluate_corpus(graphs: &[ViewGraph], method: Method, models: Option<&Models>, jobs: usize) -> Result<CorpusReport> {
    let t0 = Instant::now();
    let one = |g: &ViewGraph| -> Result<Metrics> {
        let pred = run_method(method, g, models)?;
        evaluate(&pred, &g.ground_truth()?)
    };
    let per_graph = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| graphs.par_iter().map(one).collect::<Result<Vec<_>>>())?
    } else {
        graphs.iter().map(one).collect::<Result<Vec<_>>>()?
    };
    Ok(CorpusReport {
        method,
        per_graph,
        wall_ms: ms_since(t0),
    })
}

/// `NODE <id> qw qx qy qz` lines after `#` comment lines.
pub fn format_orientations(orientations: &[UnitQuaternion], comments: &[&str]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for (i, q) in orientations.iter().enumerate() {
        let [w, x, y, z] = q.to_array();
        let _ = writeln!(out, "NODE {i} {w:.17e} {x:.17e} {y:.17e} {z:.17e}");
    }
    out
}

/// Inverse of [`format_orientations`]; ids must be exactly `0..N` in some order.
pub fn parse_orientations(text: &str) -> Result<Vec<UnitQuaternion>> {
    let mut rows: Vec<Option<UnitQuaternion>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse { line, reason };
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 6 || tok[0] != "NODE" {
            return Err(err(format!("expected `NODE id qw qx qy qz`, got `{l}`")));
        }
        let id: usize = tok[1].parse().map_err(|_| err(format!("bad node id `{}`", tok[1])))?;
        let mut c = [0.0; 4];
        for k in 0..4 {
            c[k] = tok[k + 2]
                .parse()
                .map_err(|_| err(format!("bad number `{}`", tok[k + 2])))?;
        }
        let q = UnitQuaternion::from_wxyz(c[0], c[1], c[2], c[3]).map_err(|e| err(e.to_string()))?;
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].replace(q).is_some() {
            return Err(err(format!("duplicate node {id}")));
        }
    }
    rows.iter()
        .enumerate()
        .map(|(i, q)| q.ok_or_else(|| Error::InvalidInput(format!("orientation of node {i} missing"))))
        .collect()
}

/// `node,error_deg` rows followed by mean and median summary rows.
pub fn metrics_csv(m: &Metrics) -> String {
    let mut out = String::from("node,error_deg\n");
    for (i, e) in m.per_node_deg.iter().enumerate() {
        let _ = writeln!(out, "{i},{e:.9}");
    }
    let _ = writeln!(out, "mean,{:.9}", m.mean_deg);
    let _ = writeln!(out, "median,{:.9}", m.median_deg);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_uniform;
    use crate::synthgen::{generate_graph_at, Range, SynthConfig};
    use crate::viewgraph::Edge;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clean_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            n_cameras: Range::new(20, 40),
            edge_fraction: Range::fixed(0.2),
            sigma_deg: Range::fixed(0.0),
            outlier_fraction: Range::fixed(0.0),
            seed,
            ..SynthConfig::desk()
        }
    }

    fn noisy_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            n_cameras: Range::new(20, 40),
            edge_fraction: Range::fixed(0.25),
            sigma_deg: Range::fixed(8.0),
            outlier_fraction: Range::fixed(0.1),
            seed,
            ..SynthConfig::desk()
        }
    }

    fn random_rotations(n: usize, seed: u64) -> Vec<UnitQuaternion> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_uniform(&mut rng)).collect()
    }

    #[test]
    fn alignment_recovers_gauge_exactly() {
        let gt = random_rotations(30, 1);
        let r = random_rotations(1, 2)[0];
        let pred: Vec<_> = gt.iter().map(|g| g.compose(&r.inverse())).collect();
        let aligned = align_to_gt(&pred, &gt).unwrap();
        for (a, g) in aligned.iter().zip(&gt) {
            assert!(geodesic_deg(a, g) < 1e-9 * 180.0 / std::f64::consts::PI);
        }
        let id = fit_gauge(&gt, &gt, Alignment::ChordalL2).unwrap();
        assert!(geodesic_deg(&id, &UnitQuaternion::IDENTITY) < 1e-9);
    }

    #[test]
    fn alignment_beats_random_candidates() {
        let gt = random_rotations(25, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred: Vec<_> = gt
            .iter()
            .map(|g| {
                let noise = crate::so3::sample_noise(20.0, false, &mut rng);
                noise.compose(g)
            })
            .collect();
        let cost = |r: &UnitQuaternion| -> f64 {
            pred.iter()
                .zip(&gt)
                .map(|(p, g)| crate::so3::quat_dist(&p.compose(r), g).powi(2))
                .sum()
        };
        let best = cost(&fit_gauge(&pred, &gt, Alignment::ChordalL2).unwrap());
        for _ in 0..10_000 {
            let r = sample_uniform(&mut rng);
            assert!(cost(&r) > best - 1e-6);
        }
    }

    #[test]
    fn robust_alignment_ignores_a_wild_node() {
        let gt = random_rotations(9, 5);
        let r = random_rotations(1, 6)[0];
        let mut pred: Vec<_> = gt.iter().map(|g| g.compose(&r.inverse())).collect();
        pred[0] = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], 2.0).unwrap().compose(&pred[0]);
        let aligned = align_to_gt_with(&pred, &gt, Alignment::L1Median).unwrap();
        for v in 1..9 {
            assert!(geodesic_deg(&aligned[v], &gt[v]) < 1e-6);
        }
    }

    #[test]
    fn metrics_arithmetic() {
        let gt = vec![UnitQuaternion::IDENTITY; 5];
        let m = metrics(&gt, &gt).unwrap();
        assert_eq!((m.mean_deg, m.median_deg), (0.0, 0.0));
        let mut pred = gt.clone();
        pred[2] = UnitQuaternion::yaw_deg(10.0);
        let m = metrics(&pred, &gt).unwrap();
        assert!((m.mean_deg - 2.0).abs() < 1e-9);
        assert_eq!(m.median_deg, 0.0);
        assert!(matches!(metrics(&pred[..4], &gt), Err(Error::ShapeMismatch(_))));
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn auc_against_pairwise_count() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.5], &[true]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
        let labels: Vec<bool> = scores.iter().map(|s| rng.random::<f64>() < *s).collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn passthrough_pipeline_is_exact_on_clean_graphs() {
        let models = Models {
            clean: CleanNet::passthrough(),
            fine: FineNet::passthrough(),
        };
        for i in 0..5 {
            let (g, _) = generate_graph_at(&clean_cfg(7), i).unwrap();
            let gt = g.ground_truth().unwrap();
            for method in [Method::Neurora, Method::NeuroraV2, Method::CleanNetSpt, Method::SptNoisy] {
                let pred = run_method(method, &g, Some(&models)).unwrap();
                let m = evaluate(&pred, &gt).unwrap();
                assert!(m.mean_deg < 1e-6, "{}: {}", method.name(), m.mean_deg);
            }
        }
    }

    #[test]
    fn output_is_referenced_at_root() {
        let (g, _) = generate_graph_at(&noisy_cfg(8), 0).unwrap();
        let out = neurora(&g, &CleanNet::new(1).unwrap(), &FineNet::new(2).unwrap()).unwrap();
        assert_eq!(out.orientations.len(), g.n_nodes());
        assert!(geodesic_deg(&out.orientations[out.root], &UnitQuaternion::IDENTITY) < 1e-9);
        assert!(out.timings.init_ms >= 0.0 && out.timings.fine_ms >= 0.0);
    }

    #[test]
    fn nodes_cut_off_by_cleaning_are_attached() {
        let gt = random_rotations(4, 9);
        let edges = vec![
            Edge { u: 0, v: 1, q: UnitQuaternion::relative(&gt[0], &gt[1]), gt_outlier: None },
            Edge { u: 1, v: 2, q: UnitQuaternion::relative(&gt[1], &gt[2]), gt_outlier: None },
            Edge { u: 3, v: 2, q: UnitQuaternion::relative(&gt[3], &gt[2]), gt_outlier: None },
        ];
        let g = ViewGraph::new(gt.iter().copied().map(Some).collect(), edges).unwrap();
        let r = attach_breadth_first(&g, vec![Some(gt[0]), Some(gt[1]), None, None]).unwrap();
        for (a, b) in r.iter().zip(&gt) {
            assert!(geodesic_deg(a, b) < 1e-9);
        }
        let lone = ViewGraph::new(vec![None; 2], vec![]).unwrap();
        assert!(attach_breadth_first(&lone, vec![Some(UnitQuaternion::IDENTITY), None]).is_err());
    }

    #[test]
    fn all_edges_rejected_is_a_stage_error() {
        let (g, _) = generate_graph_at(&clean_cfg(13), 0).unwrap();
        let mut clean = CleanNet::passthrough();
        let b = clean.store().id("clean.lp2.b").unwrap();
        clean.store_mut().value_mut(b).data_mut()[0] = 20.0;
        let err = cleannet_spt_init(&g, &clean, 0.75).unwrap_err();
        assert!(matches!(&err, Error::Stage { stage: "clean", source } if matches!(**source, Error::EmptyCleanedGraph)));
    }

    #[test]
    fn disconnected_input_rejected() {
        let g = ViewGraph::new(vec![None; 3], vec![Edge { u: 0, v: 1, q: UnitQuaternion::IDENTITY, gt_outlier: None }]).unwrap();
        let err = neurora(&g, &CleanNet::passthrough(), &FineNet::passthrough()).unwrap_err();
        assert!(matches!(err, Error::Disconnected { .. }));
    }

    #[test]
    fn methods_without_models_fail_cleanly() {
        let (g, _) = generate_graph_at(&noisy_cfg(10), 0).unwrap();
        assert!(run_method(Method::Neurora, &g, None).is_err());
        assert!(run_method(Method::Irls, &g, None).is_ok());
    }

    #[test]
    fn corpus_report_matches_per_graph_recomputation() {
        let graphs: Vec<_> = (0..4).map(|i| generate_graph_at(&noisy_cfg(11), i).unwrap().0).collect();
        let seq = evaluate_corpus(&graphs, Method::Weiszfeld, None, 1).unwrap();
        let par = evaluate_corpus(&graphs, Method::Weiszfeld, None, 3).unwrap();
        assert_eq!(seq.per_graph, par.per_graph);
        let manual: f64 = graphs
            .iter()
            .map(|g| evaluate(&run_method(Method::Weiszfeld, g, None).unwrap(), &g.ground_truth().unwrap()).unwrap().mean_deg)
            .sum::<f64>()
            / 4.0;
        assert!((seq.mean_deg() - manual).abs() < 1e-12);
    }

    #[test]
    fn orientation_file_round_trip() {
        let qs = random_rotations(7, 12);
        let text = format_orientations(&qs, &["method neurora"]);
        assert!(text.starts_with("# method neurora\nNODE 0 "));
        assert_eq!(parse_orientations(&text).unwrap(), qs);
        assert!(parse_orientations("NODE 0 1 0 0\n").is_err());
        assert!(parse_orientations("NODE 1 1 0 0 0\n").is_err());
        assert!(parse_orientations("NODE 0 1 0 0 0\nNODE 0 1 0 0 0\n").is_err());
        assert!(metrics_csv(&metrics(&qs, &qs).unwrap()).ends_with("mean,0.000000000\nmedian,0.000000000\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn metrics_ignore_global_gauge(seed in 0u64..1000) {
            let (g, _) = generate_graph_at(&noisy_cfg(seed), 0).unwrap();
            let gt = g.ground_truth().unwrap();
            let r = random_rotations(1, seed + 1)[0];
            let shifted: Vec<_> = gt.iter().map(|q| Some(q.compose(&r))).collect();
            let g2 = ViewGraph::new(shifted, g.edges().to_vec()).unwrap();
            let a = evaluate(&run_method(Method::Irls, &g, None).unwrap(), &gt).unwrap();
            let b = evaluate(&run_method(Method::Irls, &g2, None).unwrap(), &g2.ground_truth().unwrap()).unwrap();
            prop_assert!((a.mean_deg - b.mean_deg).abs() < 1e-9);
            prop_assert!((a.median_deg - b.median_deg).abs() < 1e-9);
        }
    }
}
