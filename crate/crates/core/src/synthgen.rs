//! Synthetic view-graph generator.
//!
//! One graph is produced as follows: sample a camera count, draw ground-truth
//! orientations (yaw-only for planar rigs, Haar-uniform otherwise), lay a
//! random spanning tree and add random pairs up to the sampled edge fraction,
//! corrupt every relative orientation with noise of a per-graph σ, then
//! replace a sampled fraction of edges with uniformly random rotations.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::so3::{sample_noise_with, sample_uniform, NoiseAxis, UnitQuaternion};
use crate::viewgraph::{self, Edge, ViewGraph};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy> Range<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Range { lo, hi }
    }
    pub const fn fixed(v: T) -> Self {
        Range { lo: v, hi: v }
    }
}

impl Range<f64> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_cameras: Range<usize>,
    /// Fraction of all `N(N−1)/2` pairs that become edges.
    pub edge_fraction: Range<f64>,
    /// Per-graph noise standard deviation, degrees.
    pub sigma_deg: Range<f64>,
    pub outlier_fraction: Range<f64>,
    /// Yaw-only ground truth.
    pub planar: bool,
    /// Noise axes have `|y| ~ U[axis_concentration, 1]`; 0 gives uniform axes.
    pub axis_concentration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SynthConfig {
    /// Desk-scale profile: 60–150 cameras, otherwise the full protocol ranges.
    pub fn desk() -> Self {
        SynthConfig {
            n_cameras: Range::new(60, 150),
            ..Self::paper()
        }
    }

    /// Full-scale protocol: 250–1000 cameras, 10–30 % of pairs,
    /// σ ∈ [5°, 30°], 0–30 % outliers, planar cameras.
    pub fn paper() -> Self {
        SynthConfig {
            n_cameras: Range::new(250, 1000),
            edge_fraction: Range::new(0.10, 0.30),
            sigma_deg: Range::new(5.0, 30.0),
            outlier_fraction: Range::new(0.0, 0.30),
            planar: true,
            axis_concentration: crate::so3::DEFAULT_AXIS_CONCENTRATION,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_cameras.lo > self.n_cameras.hi {
            return bad(format!("empty camera range {:?}", self.n_cameras));
        }
        if self.n_cameras.lo < 3 {
            return bad(format!("need at least 3 cameras, range starts at {}", self.n_cameras.lo));
        }
        for (name, r) in [
            ("edge_fraction", self.edge_fraction),
            ("outlier_fraction", self.outlier_fraction),
        ] {
            if !(0.0..=1.0).contains(&r.lo) || !(0.0..=1.0).contains(&r.hi) || r.lo > r.hi {
                return bad(format!("{name} range {r:?} must lie in [0, 1]"));
            }
        }
        if self.edge_fraction.hi <= 0.0 {
            return bad("edge_fraction must be positive".into());
        }
        if self.sigma_deg.lo < 0.0 || self.sigma_deg.lo > self.sigma_deg.hi {
            return bad(format!("invalid sigma range {:?}", self.sigma_deg));
        }
        if !(0.0..=1.0).contains(&self.axis_concentration) {
            return bad(format!("axis_concentration {} outside [0, 1]", self.axis_concentration));
        }
        Ok(())
    }

    /// Deterministic rng substream for graph `index`.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Parses flat `key = value` text; `profile` or `suite` keys pick the base
    /// configuration the remaining keys override.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = SynthConfig::desk();
        for (line, k, v) in &pairs {
            match k.as_str() {
                "profile" => {
                    cfg = match v.as_str() {
                        "desk" => SynthConfig::desk(),
                        "paper" => SynthConfig::paper(),
                        other => {
                            return Err(Error::Parse {
                                line: *line,
                                reason: format!("unknown profile `{other}`"),
                            })
                        }
                    }
                }
                "suite" => cfg = robustness_suite(v)?,
                _ => {}
            }
        }
        for (line, k, v) in pairs {
            let perr = |reason: String| Error::Parse { line, reason };
            let float_range = |v: &str| -> Result<Range<f64>> {
                let nums = v
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| perr(format!("bad number `{t}`"))))
                    .collect::<Result<Vec<_>>>()?;
                match nums[..] {
                    [x] => Ok(Range::fixed(x)),
                    [a, b] => Ok(Range::new(a, b)),
                    _ => Err(perr(format!("`{k}` takes one or two numbers"))),
                }
            };
            match k.as_str() {
                "profile" | "suite" => {}
                "n_cameras" => {
                    let r = float_range(&v)?;
                    if r.lo < 0.0 || r.lo.fract() != 0.0 || r.hi.fract() != 0.0 {
                        return Err(perr("n_cameras must be integers".into()));
                    }
                    cfg.n_cameras = Range::new(r.lo as usize, r.hi as usize);
                }
                "edge_fraction" => cfg.edge_fraction = float_range(&v)?,
                "sigma_deg" => cfg.sigma_deg = float_range(&v)?,
                "outlier_fraction" => cfg.outlier_fraction = float_range(&v)?,
                "axis_concentration" => cfg.axis_concentration = float_range(&v)?.lo,
                "planar" => {
                    cfg.planar = match v.as_str() {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        other => return Err(perr(format!("bad boolean `{other}`"))),
                    }
                }
                "seed" => cfg.seed = v.parse().map_err(|_| perr(format!("bad seed `{v}`")))?,
                other => return Err(perr(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "n_cameras = {} {}\nedge_fraction = {} {}\nsigma_deg = {} {}\noutlier_fraction = {} {}\nplanar = {}\naxis_concentration = {}\nseed = {}\n",
            self.n_cameras.lo,
            self.n_cameras.hi,
            self.edge_fraction.lo,
            self.edge_fraction.hi,
            self.sigma_deg.lo,
            self.sigma_deg.hi,
            self.outlier_fraction.lo,
            self.outlier_fraction.hi,
            self.planar,
            self.axis_concentration,
            self.seed
        )
    }
}

/// Per-graph values drawn from the config ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphMeta {
    pub n_cameras: usize,
    pub edge_fraction: f64,
    pub sigma_deg: f64,
    pub outlier_fraction: f64,
    pub n_outliers: usize,
}

pub fn generate_graph<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<ViewGraph> {
    generate_graph_with_meta(cfg, rng).map(|(g, _)| g)
}

pub fn generate_graph_with_meta<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<(ViewGraph, GraphMeta)> {
    generate_gauged(cfg, rng, None)
}

/// Graph `index` of the corpus defined by `cfg` (uses [`SynthConfig::rng_for`]).
pub fn generate_graph_at(cfg: &SynthConfig, index: u64) -> Result<(ViewGraph, GraphMeta)> {
    generate_graph_with_meta(cfg, &mut cfg.rng_for(index))
}

// `gauge` right-multiplies every ground-truth orientation after it is drawn;
// the edge orientations must not change.
pub(crate) fn generate_gauged<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    rng: &mut R,
    gauge: Option<UnitQuaternion>,
) -> Result<(ViewGraph, GraphMeta)> {
    cfg.validate()?;
    let n = rng.random_range(cfg.n_cameras.lo..=cfg.n_cameras.hi);
    let mut gt: Vec<UnitQuaternion> = (0..n)
        .map(|_| {
            if cfg.planar {
                UnitQuaternion::yaw_deg(rng.random_range(-180.0..180.0))
            } else {
                sample_uniform(rng)
            }
        })
        .collect();
    if let Some(r) = gauge {
        for q in &mut gt {
            *q = q.compose(&r);
        }
    }

    let edge_fraction = cfg.edge_fraction.sample(rng);
    let total_pairs = n * (n - 1) / 2;
    let target = ((edge_fraction * total_pairs as f64).round() as usize).clamp(n - 1, total_pairs);
    let pairs = random_connected_pairs(n, target, rng);

    let sigma_deg = cfg.sigma_deg.sample(rng);
    let axis = NoiseAxis::NearVertical {
        min_cos: cfg.axis_concentration,
    };
    let mut edges: Vec<Edge> = pairs
        .into_iter()
        .map(|(u, v)| {
            let noise = sample_noise_with(sigma_deg, axis, rng);
            Edge {
                u,
                v,
                q: noise.compose(&UnitQuaternion::relative(&gt[u], &gt[v])),
                gt_outlier: Some(false),
            }
        })
        .collect();

    let outlier_fraction = cfg.outlier_fraction.sample(rng);
    let n_outliers = (outlier_fraction * edges.len() as f64).round() as usize;
    let mut picked: Vec<usize> = sample_indices(rng, edges.len(), n_outliers).into_vec();
    picked.sort_unstable();
    for i in picked {
        edges[i].q = sample_uniform(rng);
        edges[i].gt_outlier = Some(true);
    }

    let graph = ViewGraph::new(gt.into_iter().map(Some).collect(), edges)?;
    Ok((
        graph,
        GraphMeta {
            n_cameras: n,
            edge_fraction,
            sigma_deg,
            outlier_fraction,
            n_outliers,
        },
    ))
}

// Random spanning tree over a random permutation, then uniformly random extra
// pairs until `target` edges exist. Returned sorted with u < v.
fn random_connected_pairs<R: Rng + ?Sized>(n: usize, target: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut set = HashSet::with_capacity(target);
    for i in 1..n {
        let j = rng.random_range(0..i);
        set.insert(key(perm[i], perm[j]));
    }
    let total = n * (n - 1) / 2;
    if target > total / 2 {
        let mut rest: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|p| !set.contains(p))
            .collect();
        let need = target - set.len();
        for i in 0..need {
            let j = rng.random_range(i..rest.len());
            rest.swap(i, j);
        }
        set.extend(rest.into_iter().take(need));
    } else {
        while set.len() < target {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                set.insert(key(a, b));
            }
        }
    }
    let mut pairs: Vec<_> = set.into_iter().collect();
    pairs.sort_unstable();
    pairs
}

/// Per-split relative file paths of a generated corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# rotavg corpus manifest\n");
        for (name, paths) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let _ = writeln!(out, "[{name}]");
            for p in paths {
                let _ = writeln!(out, "{}", p.display());
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        let mut section: Option<&mut Vec<PathBuf>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[train]" => section = Some(&mut m.train),
                "[val]" => section = Some(&mut m.val),
                "[test]" => section = Some(&mut m.test),
                path => match section.as_mut() {
                    Some(s) => s.push(PathBuf::from(path)),
                    None => {
                        return Err(Error::Parse {
                            line: i + 1,
                            reason: "path outside of a [train]/[val]/[test] section".into(),
                        })
                    }
                },
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }
}

/// Split counts for `count` graphs under `(train, val, test)` ratios.
pub fn split_counts(count: usize, split: (f64, f64, f64)) -> (usize, usize, usize) {
    let total = split.0 + split.1 + split.2;
    let n_train = (count as f64 * split.0 / total).round() as usize;
    let n_val = ((count as f64 * split.1 / total).round() as usize).min(count - n_train);
    (n_train, n_val, count - n_train - n_val)
}

/// Writes `count` graphs under `out/{train,val,test}/` plus the manifest.
/// Graph `i` always comes from rng substream `i`, so the corpus is identical
/// for any `jobs`.
pub fn generate_dataset(
    cfg: &SynthConfig,
    count: usize,
    split: (f64, f64, f64),
    out: &Path,
    jobs: usize,
) -> Result<Manifest> {
    if count < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 graphs, got {count}")));
    }
    cfg.validate()?;
    let (n_train, n_val, _) = split_counts(count, split);
    let split_of = |i: usize| {
        if i < n_train {
            "train"
        } else if i < n_train + n_val {
            "val"
        } else {
            "test"
        }
    };
    for dir in ["train", "val", "test"] {
        let d = out.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let write_one = |i: usize| -> Result<PathBuf> {
        let (g, meta) = generate_graph_at(cfg, i as u64)?;
        let rel = PathBuf::from(split_of(i)).join(format!("graph_{i:05}.vg"));
        let comment = format!(
            "synthetic seed={} index={i} n={} edge_fraction={:.6} sigma_deg={:.6} outlier_fraction={:.6} outliers={}",
            cfg.seed, meta.n_cameras, meta.edge_fraction, meta.sigma_deg, meta.outlier_fraction, meta.n_outliers
        );
        let path = out.join(&rel);
        fs::write(&path, viewgraph::serialize_with_comments(&g, &[&comment]))
            .map_err(|e| Error::io(&path, e))?;
        Ok(rel)
    };

    let paths: Vec<PathBuf> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        pool.install(|| (0..count).into_par_iter().map(write_one).collect::<Result<_>>())?
    } else {
        (0..count).map(write_one).collect::<Result<_>>()?
    };

    let manifest = Manifest {
        train: paths[..n_train].to_vec(),
        val: paths[n_train..n_train + n_val].to_vec(),
        test: paths[n_train + n_val..].to_vec(),
    };
    let mpath = out.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
    let cpath = out.join("config.txt");
    fs::write(&cpath, cfg.to_kv_text()).map_err(|e| Error::io(&cpath, e))?;
    Ok(manifest)
}

/// A loaded corpus split into its three parts.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<ViewGraph>,
    pub val: Vec<ViewGraph>,
    pub test: Vec<ViewGraph>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let m = Manifest::load(dir)?;
        let read = |paths: &[PathBuf]| -> Result<Vec<ViewGraph>> {
            paths
                .iter()
                .map(|p| {
                    let path = dir.join(p);
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    viewgraph::parse(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
                })
                .collect()
        };
        Ok(Corpus {
            train: read(&m.train)?,
            val: read(&m.val)?,
            test: read(&m.test)?,
        })
    }

    /// In-memory corpus of consecutive substreams: train first, then val, then test.
    pub fn generate(cfg: &SynthConfig, n_train: usize, n_val: usize, n_test: usize) -> Result<Self> {
        let gen = |range: std::ops::Range<usize>| -> Result<Vec<ViewGraph>> {
            range.map(|i| generate_graph_at(cfg, i as u64).map(|(g, _)| g)).collect()
        };
        Ok(Corpus {
            train: gen(0..n_train)?,
            val: gen(n_train..n_train + n_val)?,
            test: gen(n_train + n_val..n_train + n_val + n_test)?,
        })
    }
}

/// Names accepted by [`robustness_suite`].
pub const ROBUSTNESS_SUITES: [&str; 11] = [
    "cam250", "cam1000", "cam5000", "cam10000", "cam25000", "dense25", "sparse2.5", "noise30o10",
    "noise10o5", "planar", "nonplanar",
];

/// Dataset variations of the robustness study: fixed camera count and edge
/// fraction, σ uniform in (0°, E°], fixed outlier share O.
pub fn robustness_suite(name: &str) -> Result<SynthConfig> {
    let (n, frac, e, o, planar) = match name {
        "cam250" => (250, 0.25, 30.0, 0.10, true),
        "cam1000" | "dense25" | "noise30o10" | "planar" => (1000, 0.25, 30.0, 0.10, true),
        "cam5000" => (5000, 0.025, 30.0, 0.10, true),
        "cam10000" => (10000, 0.025, 30.0, 0.10, true),
        "cam25000" => (25000, 0.025, 30.0, 0.10, true),
        "sparse2.5" => (1000, 0.025, 30.0, 0.10, true),
        "noise10o5" => (1000, 0.25, 10.0, 0.05, true),
        "nonplanar" => (1000, 0.25, 30.0, 0.10, false),
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown robustness suite `{other}` (expected one of {})",
                ROBUSTNESS_SUITES.join(", ")
            )))
        }
    };
    Ok(SynthConfig {
        n_cameras: Range::fixed(n),
        edge_fraction: Range::fixed(frac),
        sigma_deg: Range::new(0.0, e),
        outlier_fraction: Range::fixed(o),
        planar,
        ..SynthConfig::paper()
    })
}
