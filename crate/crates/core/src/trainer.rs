//! Training loops: one AdamW step per graph, fresh undirected-edge dropout
//! per graph and epoch, best-validation-loss selection.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, ParamStore, Tape};
use crate::cleannet::{clean_loss_tape, CleanNet};
use crate::error::{Error, Result};
use crate::finenet::{fine_loss_tape, FineNet};
use crate::pipeline::{cleannet_spt_init, noisy_spt_init, Initialization};
use crate::tolerances::{CLEAN_EPSILON, CLEAN_LAMBDA, FINE_BETA};
use crate::viewgraph::{largest_component, rereference, ViewGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Share of undirected edges removed from each training graph per epoch.
    pub edge_dropout: f64,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
}

impl TrainConfig {
    /// 250 epochs at learning rate 0.5e-4, sized for about 1200 full-size
    /// graphs; this takes hours.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 250,
            lr: 0.5e-4,
            weight_decay: 1e-4,
            edge_dropout: 0.25,
            seed: 0,
            lambda: CLEAN_LAMBDA,
            beta: FINE_BETA,
        }
    }

    /// 100 epochs over about 200 graphs. The step budget is some fifteen
    /// times smaller than at full scale, so the learning rate is raised to 1e-3.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 1e-3,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return Err(Error::InvalidInput(format!("edge dropout {} outside [0, 1)", self.edge_dropout)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive, weight decay non-negative".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,wall_ms\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.9e},{:.9e},{:.3}", e.epoch, e.train_loss, e.val_loss, e.wall_ms);
        }
        out
    }

    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// Where FineNet's initial orientations come from.
#[derive(Debug, Clone)]
pub enum FineInit {
    /// Cleaned graph, then shortest-path-tree bootstrap.
    CleanNet(Box<CleanNet>),
    /// Shortest-path-tree bootstrap on the observed edges.
    NoisySpt,
}

impl FineInit {
    pub fn initialize(&self, g: &ViewGraph) -> Result<Initialization> {
        match self {
            FineInit::CleanNet(net) => match cleannet_spt_init(g, net, CLEAN_EPSILON) {
                Err(e) if matches!(&e, Error::Stage { source, .. } if matches!(**source, Error::EmptyCleanedGraph)) => {
                    log::warn!("cleaning rejected every edge; falling back to the noisy tree");
                    noisy_spt_init(g)
                }
                other => other,
            },
            FineInit::NoisySpt => noisy_spt_init(g),
        }
    }
}

fn check_corpus(train: &[ViewGraph], val: &[ViewGraph]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    for g in train.iter().chain(val) {
        g.ground_truth()?;
    }
    Ok(())
}

/// Keeps a uniformly chosen `round((1 - p)·E)` undirected edges; both
/// directions go together since directions are derived from edges.
pub fn drop_edges(g: &ViewGraph, p: f64, rng: &mut ChaCha8Rng) -> ViewGraph {
    if p <= 0.0 {
        return g.clone();
    }
    let e = g.n_edges();
    let keep_n = ((1.0 - p) * e as f64).round() as usize;
    let mut keep = vec![false; e];
    for i in rand::seq::index::sample(rng, e, keep_n) {
        keep[i] = true;
    }
    g.filter_edges(|i, _| keep[i])
}

/// Generic loop over per-graph losses. `loss` records one graph's loss on
/// the tape with the given parameter store, or `None` to skip the graph.
fn train_loop<F>(
    store: &mut ParamStore,
    train: &[ViewGraph],
    val: &[ViewGraph],
    cfg: &TrainConfig,
    what: &str,
    loss: F,
) -> Result<TrainLog>
where
    F: Fn(&mut Tape, &ParamStore, &ViewGraph) -> Result<Option<crate::autodiff::Var>>,
{
    cfg.validate()?;
    check_corpus(train, val)?;
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;

    let eval = |store: &ParamStore, g: &ViewGraph| -> Result<Option<f64>> {
        let mut tape = Tape::new();
        Ok(loss(&mut tape, store, g)?.map(|l| tape.value(l).item()))
    };

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut counted = 0usize;
        for &gi in &order {
            let g = drop_edges(&train[gi], cfg.edge_dropout, &mut rng);
            let mut tape = Tape::new();
            let Some(l) = loss(&mut tape, store, &g)? else { continue };
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, graph: gi });
            }
            store.zero_grad();
            tape.backward(l, store)?;
            if !store.grad_norm().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, graph: gi });
            }
            store.adam_step(&adam)?;
            total += value;
            counted += 1;
        }
        let mut val_total = 0.0;
        let mut val_counted = 0usize;
        for (vi, g) in val.iter().enumerate() {
            if let Some(v) = eval(store, g)? {
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, graph: train.len() + vi });
                }
                val_total += v;
                val_counted += 1;
            }
        }
        let entry = EpochLog {
            epoch,
            train_loss: total / counted.max(1) as f64,
            val_loss: val_total / val_counted.max(1) as f64,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "{what} epoch {epoch}: train {:.5} val {:.5} ({:.0} ms)",
            entry.train_loss,
            entry.val_loss,
            entry.wall_ms
        );
        if best.as_ref().is_none_or(|(b, _)| entry.val_loss < *b) {
            best = Some((entry.val_loss, store.clone()));
            log.best_epoch = epoch;
        }
        log.epochs.push(entry);
    }
    if let Some((_, s)) = best {
        *store = s;
    }
    Ok(log)
}

/// Trains CleanNet from `seed`; returns the best-validation parameters.
pub fn train_cleannet(train: &[ViewGraph], val: &[ViewGraph], cfg: &TrainConfig) -> Result<(CleanNet, TrainLog)> {
    let mut net = CleanNet::new(cfg.seed)?;
    let proto = net.clone();
    let mut store = net.store().clone();
    let lambda = cfg.lambda;
    let log = train_loop(&mut store, train, val, cfg, "cleannet", |tape, s, g| {
        if g.n_edges() == 0 {
            return Ok(None);
        }
        let vars = proto.forward_with(tape, s, g)?;
        clean_loss_tape(tape, &vars, g, lambda).map(Some)
    })?;
    *net.store_mut() = store;
    Ok((net, log))
}

/// Trains FineNet on inputs bootstrapped by `init` from each (dropped-out)
/// graph's largest component.
pub fn train_finenet(
    train: &[ViewGraph],
    val: &[ViewGraph],
    init: &FineInit,
    cfg: &TrainConfig,
) -> Result<(FineNet, TrainLog)> {
    let mut net = FineNet::new(cfg.seed)?;
    let proto = net.clone();
    let mut store = net.store().clone();
    let beta = cfg.beta;
    let log = train_loop(&mut store, train, val, cfg, "finenet", |tape, s, g| {
        let sub = largest_component(g).graph;
        if sub.n_edges() == 0 {
            return Ok(None);
        }
        let start = init.initialize(&sub)?;
        let gt = rereference(&sub.ground_truth()?, start.root)?;
        let pred = proto.forward_with(tape, s, &sub, &start.orientations)?;
        fine_loss_tape(tape, pred, &sub, &gt, start.root, beta).map(Some)
    })?;
    *net.store_mut() = store;
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finenet::fine_forward;
    use crate::pipeline::evaluate;
    use crate::synthgen::{Corpus, Range, SynthConfig};

    fn tiny(seed: u64, n_train: usize) -> Corpus {
        let cfg = SynthConfig {
            n_cameras: Range::new(12, 20),
            edge_fraction: Range::fixed(0.3),
            sigma_deg: Range::new(3.0, 10.0),
            outlier_fraction: Range::new(0.05, 0.15),
            seed,
            ..SynthConfig::desk()
        };
        Corpus::generate(&cfg, n_train, 2, 2).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: 2e-3,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::desk().validate().is_ok());
        assert_eq!(TrainConfig::paper().epochs, 250);
        assert_eq!(TrainConfig::default(), TrainConfig::paper());
        assert_eq!(TrainConfig::desk().epochs, 100);
        assert!(TrainConfig { epochs: 0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { edge_dropout: 1.0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { lr: f64::NAN, ..TrainConfig::desk() }.validate().is_err());
    }

    #[test]
    fn dropout_keeps_the_stated_share() {
        let c = tiny(1, 1);
        let g = &c.train[0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = drop_edges(g, 0.25, &mut rng);
        assert_eq!(d.n_edges(), (0.75 * g.n_edges() as f64).round() as usize);
        assert_eq!(d.n_nodes(), g.n_nodes());
        for e in d.edges() {
            assert!(g.edges().iter().any(|o| o.u == e.u && o.v == e.v && o.q == e.q));
        }
        assert_eq!(drop_edges(g, 0.0, &mut rng).n_edges(), g.n_edges());
    }

    #[test]
    fn cleannet_smoke_and_bookkeeping() {
        let c = tiny(3, 2);
        for dropout in [0.0, 0.25] {
            let cfg = TrainConfig { edge_dropout: dropout, ..quick(3) };
            let (net, log) = train_cleannet(&c.train, &c.val, &cfg).unwrap();
            assert_eq!(log.epochs.len(), 3);
            let min = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
            assert_eq!(log.best().unwrap().val_loss, min);
            // the kept parameters reproduce the best validation loss
            let v: f64 = c
                .val
                .iter()
                .map(|g| {
                    let p = crate::cleannet::clean_forward(&net, g).unwrap();
                    crate::cleannet::clean_loss(&p, g, cfg.lambda).unwrap()
                })
                .sum::<f64>()
                / c.val.len() as f64;
            assert!((v - min).abs() < 1e-9 * min.max(1.0));
            let back = CleanNet::from_json(&net.to_json()).unwrap();
            assert_eq!(crate::cleannet::clean_forward(&back, &c.val[0]).unwrap(), crate::cleannet::clean_forward(&net, &c.val[0]).unwrap());
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let c = tiny(4, 6);
        let cfg = quick(10);
        let (_, a) = train_cleannet(&c.train, &c.val, &cfg).unwrap();
        assert!(a.epochs[9].train_loss < a.epochs[0].train_loss, "{:?}", a.epochs);
        let (_, b) = train_cleannet(&c.train, &c.val, &cfg).unwrap();
        let strip = |l: &TrainLog| l.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.to_csv().lines().next().unwrap(), "epoch,train_loss,val_loss,wall_ms");
        assert_eq!(a.to_csv().lines().count(), 11);
    }

    #[test]
    fn finenet_trains_in_both_init_modes() {
        let c = tiny(5, 3);
        let (clean, _) = train_cleannet(&c.train, &c.val, &quick(2)).unwrap();
        for init in [FineInit::NoisySpt, FineInit::CleanNet(Box::new(clean))] {
            let (net, log) = train_finenet(&c.train, &c.val, &init, &quick(2)).unwrap();
            assert_eq!(log.epochs.len(), 2);
            let g = &c.test[0];
            let start = init.initialize(g).unwrap();
            let out = fine_forward(&net, g, &start.orientations, start.root).unwrap();
            assert!(evaluate(&out, &g.ground_truth().unwrap()).unwrap().mean_deg.is_finite());
        }
    }

    #[test]
    fn finenet_improves_on_its_inputs() {
        let c = tiny(6, 8);
        let (net, _) = train_finenet(&c.train, &c.val, &FineInit::NoisySpt, &quick(15)).unwrap();
        let (mut before, mut after) = (0.0, 0.0);
        for g in &c.val {
            let gt = g.ground_truth().unwrap();
            let start = noisy_spt_init(g).unwrap();
            before += evaluate(&start.orientations, &gt).unwrap().mean_deg;
            let out = fine_forward(&net, g, &start.orientations, start.root).unwrap();
            after += evaluate(&out, &gt).unwrap().mean_deg;
        }
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn corpus_errors() {
        let c = tiny(7, 2);
        assert!(train_cleannet(&[], &c.val, &quick(1)).is_err());
        let unlabeled: Vec<_> = c.train.iter().map(|g| ViewGraph::new(vec![None; g.n_nodes()], g.edges().to_vec()).unwrap()).collect();
        assert!(matches!(train_cleannet(&unlabeled, &c.val, &quick(1)), Err(Error::MissingGroundTruth(_))));
    }

    #[test]
    fn nan_loss_aborts_with_location() {
        let c = tiny(8, 2);
        let cfg = TrainConfig { lambda: f64::NAN, ..quick(1) };
        let err = train_cleannet(&c.train, &c.val, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
    }
}
