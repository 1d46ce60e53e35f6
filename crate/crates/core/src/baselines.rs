//! Classical robust rotation averaging: Weiszfeld ℓ1 sweeps and two-phase
//! IRLS (ℓ1 then ℓ1/2) with a conjugate-gradient tangent-space solve.

use crate::error::{Error, Result};
use crate::so3::{geodesic_rad, UnitQuaternion};
use crate::tolerances::{CG_REL_TOL, IRLS_DELTA, IRLS_STEP_TOL, WEISZFELD_MIN_DIST};
use crate::viewgraph::{select_root, NodeId, ViewGraph};

/// Geodesic ℓ1 median by tangent-space Weiszfeld iterations, started at the
/// candidate with the smallest summed distance to the others.
pub fn weiszfeld_median(candidates: &[UnitQuaternion], iters: usize) -> Result<UnitQuaternion> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("median of zero rotations".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, a) in candidates.iter().enumerate() {
        let s: f64 = candidates.iter().map(|b| geodesic_rad(a, b)).sum();
        if s < best.0 {
            best = (s, i);
        }
    }
    let mut m = candidates[best.1];
    for _ in 0..iters {
        let inv = m.inverse();
        let mut num = [0.0; 3];
        let mut den = 0.0;
        let mut pull = [0.0; 3];
        let mut coincident = 0usize;
        for c in candidates {
            let v = inv.compose(c).log();
            let n = norm3(&v);
            if n < WEISZFELD_MIN_DIST {
                coincident += 1;
                continue;
            }
            for k in 0..3 {
                num[k] += v[k] / n;
                pull[k] += v[k] / n;
            }
            den += 1.0 / n;
        }
        if den == 0.0 {
            break;
        }
        // On a candidate the plain update stalls; damp the step by the
        // multiplicity instead, and stop when the subgradient contains zero.
        let mut scale = 1.0 / den;
        if coincident > 0 {
            let p = norm3(&pull);
            if p <= coincident as f64 {
                break;
            }
            scale *= 1.0 - coincident as f64 / p;
        }
        let step = num.map(|x| x * scale);
        m = m.compose(&UnitQuaternion::exp(step));
    }
    Ok(m)
}

/// Sum over edges of `∠(R_v, q̃_uv ⋆ R_u)`, radians.
pub fn l1_objective(g: &ViewGraph, r: &[UnitQuaternion]) -> f64 {
    g.edges()
        .iter()
        .map(|e| geodesic_rad(&r[e.v], &e.q.compose(&r[e.u])))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeiszfeldConfig {
    pub sweeps: usize,
    pub inner_iters: usize,
    /// Held fixed; defaults to the maximum-degree node.
    pub root: Option<NodeId>,
}

impl Default for WeiszfeldConfig {
    fn default() -> Self {
        WeiszfeldConfig {
            sweeps: 50,
            inner_iters: 10,
            root: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MraResult {
    pub orientations: Vec<UnitQuaternion>,
    pub root: NodeId,
    pub iterations: usize,
    /// Objective after each iteration (ℓ1 for Weiszfeld, the phase's robust
    /// cost for IRLS), preceded by the initial value.
    pub objective: Vec<f64>,
}

fn check_inputs(g: &ViewGraph, init: &[UnitQuaternion], root: Option<NodeId>) -> Result<NodeId> {
    if init.len() != g.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} initial orientations for {} nodes",
            init.len(),
            g.n_nodes()
        )));
    }
    let comps = g.components();
    if comps.len() > 1 {
        let reached = comps.iter().map(Vec::len).max().unwrap_or(0);
        return Err(Error::Disconnected {
            reached,
            total: g.n_nodes(),
        });
    }
    match root {
        Some(r) if r >= g.n_nodes() => Err(Error::IndexOutOfRange {
            index: r,
            len: g.n_nodes(),
        }),
        Some(r) => Ok(r),
        None => select_root(g),
    }
}

/// Gauss–Seidel sweeps in ascending node order; each node becomes the
/// median of the orientations its neighbours predict for it.
pub fn weiszfeld_mra(g: &ViewGraph, init: &[UnitQuaternion], cfg: &WeiszfeldConfig) -> Result<MraResult> {
    let root = check_inputs(g, init, cfg.root)?;
    let mut r = init.to_vec();
    let mut objective = vec![l1_objective(g, &r)];
    let mut cands = Vec::new();
    for _ in 0..cfg.sweeps {
        for v in 0..g.n_nodes() {
            if v == root {
                continue;
            }
            cands.clear();
            cands.extend(g.neighbors(v).iter().map(|&(u, idx)| g.oriented(idx, u).compose(&r[u])));
            r[v] = weiszfeld_median(&cands, cfg.inner_iters)?;
        }
        objective.push(l1_objective(g, &r));
    }
    Ok(MraResult {
        orientations: r,
        root,
        iterations: cfg.sweeps,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    /// Iteration cap of the ℓ1 phase.
    pub phase1_iters: usize,
    /// Iteration cap of the ℓ1/2 phase.
    pub phase2_iters: usize,
    pub delta: f64,
    /// A phase ends once every node moves less than this, radians.
    pub step_tol: f64,
    /// Starts the ℓ1 phase's weight floor at the median initial residual and
    /// halves it each iteration down to `delta`. Without it, edges with an
    /// exactly zero residual (every tree edge of a spanning-tree start) get
    /// weight `1/delta` and pin the solution in place.
    pub anneal: bool,
    pub root: Option<NodeId>,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            phase1_iters: 5,
            phase2_iters: 20,
            delta: IRLS_DELTA,
            step_tol: IRLS_STEP_TOL,
            anneal: true,
            root: None,
        }
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Minimises `Σ w_e ‖a_v − a_u − r_e‖²` over per-node 3-vectors with
/// `a_root = 0`. Edges are `(u, v, w)`; the three coordinates decouple into
/// one weighted-Laplacian system each, solved by conjugate gradients.
pub fn solve_weighted_laplacian(
    n: usize,
    edges: &[(NodeId, NodeId, f64)],
    rhs: &[[f64; 3]],
    root: NodeId,
) -> Result<Vec<[f64; 3]>> {
    if rhs.len() != edges.len() {
        return Err(Error::ShapeMismatch(format!("{} residuals for {} edges", rhs.len(), edges.len())));
    }
    let mut b = vec![[0.0; 3]; n];
    for (&(u, v, w), r) in edges.iter().zip(rhs) {
        for k in 0..3 {
            b[v][k] += w * r[k];
            b[u][k] -= w * r[k];
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(u, v, w) in edges {
            let d = w * (x[v] - x[u]);
            out[v] += d;
            out[u] -= d;
        }
        out[root] = 0.0;
    };
    let mut sol = vec![[0.0; 3]; n];
    let max_iter = 10 * n.max(1);
    for k in 0..3 {
        let mut rvec: Vec<f64> = b.iter().map(|bv| bv[k]).collect();
        rvec[root] = 0.0;
        let bnorm = rvec.iter().map(|x| x * x).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            continue;
        }
        let mut x = vec![0.0; n];
        let mut p = rvec.clone();
        let mut ap = vec![0.0; n];
        let mut rr = bnorm * bnorm;
        let mut it = 0;
        while rr.sqrt() > CG_REL_TOL * bnorm {
            if it >= max_iter {
                return Err(Error::CgNotConverged {
                    iterations: it,
                    residual: rr.sqrt() / bnorm,
                });
            }
            apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(Error::CgNotConverged {
                    iterations: it,
                    residual: rr.sqrt() / bnorm,
                });
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                rvec[i] -= alpha * ap[i];
            }
            let rr_new: f64 = rvec.iter().map(|x| x * x).sum();
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = rvec[i] + beta * p[i];
            }
            rr = rr_new;
            it += 1;
        }
        for i in 0..n {
            sol[i][k] = x[i];
        }
    }
    Ok(sol)
}

// Body-frame residual: zero when R_v = q̃_uv ⋆ R_u. Updating
// R ← R ⋆ exp(a) changes it by a_u − a_v to first order.
fn residuals(g: &ViewGraph, r: &[UnitQuaternion]) -> Vec<[f64; 3]> {
    g.edges()
        .iter()
        .map(|e| r[e.v].inverse().compose(&e.q).compose(&r[e.u]).log())
        .collect()
}

/// Two-phase iteratively reweighted least squares: weights `1/max(‖r‖, δ)`
/// then `1/max(‖r‖^{3/2}, δ)`.
pub fn irls_mra(g: &ViewGraph, init: &[UnitQuaternion], cfg: &IrlsConfig) -> Result<MraResult> {
    let root = check_inputs(g, init, cfg.root)?;
    let mut r = init.to_vec();
    let n = g.n_nodes();
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut floor = cfg.delta;
    if cfg.anneal {
        let mut norms: Vec<f64> = residuals(g, &r).iter().map(norm3).collect();
        norms.sort_by(f64::total_cmp);
        floor = floor.max(norms.get(norms.len() / 2).copied().unwrap_or(0.0));
    }
    for (phase, cap, power) in [(1, cfg.phase1_iters, 1.0), (2, cfg.phase2_iters, 0.5)] {
        if phase == 2 {
            floor = cfg.delta;
        }
        for _ in 0..cap {
            let res = residuals(g, &r);
            let norms: Vec<f64> = res.iter().map(norm3).collect();
            if objective.is_empty() {
                objective.push(norms.iter().sum());
            }
            let edges: Vec<(NodeId, NodeId, f64)> = g
                .edges()
                .iter()
                .zip(&norms)
                .map(|(e, &nr)| {
                    let w = 1.0 / nr.powf(2.0 - power).max(floor);
                    (e.u, e.v, w)
                })
                .collect();
            floor = (0.5 * floor).max(cfg.delta);
            let step = solve_weighted_laplacian(n, &edges, &res, root)?;
            let mut max_step: f64 = 0.0;
            for v in 0..n {
                if v != root {
                    r[v] = r[v].compose(&UnitQuaternion::exp(step[v]));
                    max_step = max_step.max(norm3(&step[v]));
                }
            }
            iterations += 1;
            objective.push(residuals(g, &r).iter().map(|x| norm3(x).powf(power)).sum());
            if max_step < cfg.step_tol {
                break;
            }
        }
    }
    Ok(MraResult {
        orientations: r,
        root,
        iterations,
        objective,
    })
}
