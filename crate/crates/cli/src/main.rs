use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rotavg::baselines::{irls_mra, weiszfeld_mra, IrlsConfig, WeiszfeldConfig};
use rotavg::cleannet::CleanNet;
use rotavg::finenet::FineNet;
use rotavg::pipeline::{
    align_to_gt_with, format_orientations, metrics, metrics_csv, neurora_passes, noisy_spt_init,
    parse_orientations, Alignment,
};
use rotavg::synthgen::{generate_dataset, Corpus, SynthConfig};
use rotavg::tolerances::CLEAN_EPSILON;
use rotavg::trainer::{train_cleannet, train_finenet, FineInit, TrainConfig};
use rotavg::viewgraph::{self, graph_stats, select_root, AngleAxisStats};
use rotavg::{Error, ErrorClass, Result, ViewGraph};

/// Robust multiple rotation averaging over camera view-graphs.
#[derive(Debug, Parser)]
#[command(name = "rotavg", version)]
struct Cli {
    /// Overrides every seed (generator, network initialisation, dropout).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-graph parallel work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a train/val/test manifest.
    Generate {
        /// Generator settings as `key = value` lines.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one of the two networks on a generated corpus.
    Train(TrainArgs),
    /// Run the full learned pipeline on one graph.
    Average {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        cleannet: PathBuf,
        #[arg(long)]
        finenet: PathBuf,
        /// Feed the refined output through the refinement network again.
        #[arg(long)]
        v2: bool,
        /// Outlier probability above which edges are dropped.
        #[arg(long, default_value_t = CLEAN_EPSILON)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a classical solver on one graph.
    Baseline {
        #[arg(value_enum)]
        solver: Solver,
        #[arg(long)]
        graph: PathBuf,
        /// `spt` or a file of `NODE` lines.
        #[arg(long, default_value = "spt")]
        init: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align predictions to the graph's ground truth and report errors.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Fit the gauge with the ℓ1 median instead of the chordal mean.
        #[arg(long)]
        robust_align: bool,
        /// Write the metrics CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Angle histograms of the relative orientations and, with ground
    /// truth, of their noise.
    Stats {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Network {
    Clean,
    Fine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Solver {
    Weiszfeld,
    Irls,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(value_enum)]
    network: Network,
    #[arg(long)]
    corpus: PathBuf,
    /// Trained cleaning network supplying the refinement inputs; without it
    /// they come from the tree on the observed edges.
    #[arg(long)]
    cleannet: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// 100 epochs (the default).
    #[arg(long, conflicts_with = "paper_scale")]
    desk_scale: bool,
    /// 250 epochs; takes hours on full-size corpora.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    edge_dropout: Option<f64>,
    /// Training curve CSV; defaults to the checkpoint path plus `.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_graph(path: &Path) -> Result<ViewGraph> {
    viewgraph::parse(&read(path)?).map_err(|e| e.at_stage("read graph"))
}

fn provenance(what: &str, graph: &Path) -> String {
    format!("rotavg {} {what} graph={}", env!("CARGO_PKG_VERSION"), graph.display())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, count, out } => {
            let mut cfg = SynthConfig::from_kv_text(&read(&config)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let m = generate_dataset(&cfg, count, (0.8, 0.1, 0.1), &out, cli.jobs)?;
            println!("wrote {} train, {} val, {} test graphs to {}", m.train.len(), m.val.len(), m.test.len(), out.display());
        }
        Command::Train(args) => train(args, cli.seed)?,
        Command::Average { graph, cleannet, finenet, v2, eps, out } => {
            let g = load_graph(&graph)?;
            let clean = CleanNet::from_json(&read(&cleannet)?).map_err(|e| e.at_stage("load cleannet"))?;
            let fine = FineNet::from_json(&read(&finenet)?).map_err(|e| e.at_stage("load finenet"))?;
            let res = neurora_passes(&g, &clean, &fine, eps, if v2 { 2 } else { 1 })?;
            eprintln!(
                "init {:.1} ms, refine {:.1} ms",
                res.timings.init_ms, res.timings.fine_ms
            );
            let head = provenance(if v2 { "average v2" } else { "average" }, &graph);
            write(&out, &format_orientations(&res.orientations, &[&head, &format!("root {}", res.root)]))?;
        }
        Command::Baseline { solver, graph, init, out } => {
            let g = load_graph(&graph)?;
            let (start, root) = if init == "spt" {
                let i = noisy_spt_init(&g)?;
                (i.orientations, i.root)
            } else {
                let start = parse_orientations(&read(Path::new(&init))?).map_err(|e| e.at_stage("read init"))?;
                (start, select_root(&g)?)
            };
            let (name, res) = match solver {
                Solver::Weiszfeld => {
                    let cfg = WeiszfeldConfig { root: Some(root), ..Default::default() };
                    ("weiszfeld", weiszfeld_mra(&g, &start, &cfg).map_err(|e| e.at_stage("weiszfeld"))?)
                }
                Solver::Irls => {
                    let cfg = IrlsConfig { root: Some(root), ..Default::default() };
                    ("irls", irls_mra(&g, &start, &cfg).map_err(|e| e.at_stage("irls"))?)
                }
            };
            eprintln!("{name}: {} iterations", res.iterations);
            let head = provenance(&format!("baseline {name}"), &graph);
            write(&out, &format_orientations(&res.orientations, &[&head, &format!("root {}", res.root)]))?;
        }
        Command::Eval { pred, graph, robust_align, out } => {
            let g = load_graph(&graph)?;
            let gt = g.ground_truth()?;
            let p = parse_orientations(&read(&pred)?).map_err(|e| e.at_stage("read prediction"))?;
            let how = if robust_align { Alignment::L1Median } else { Alignment::ChordalL2 };
            let m = metrics(&align_to_gt_with(&p, &gt, how)?, &gt)?;
            eprintln!("mean {:.4} deg, median {:.4} deg over {} nodes", m.mean_deg, m.median_deg, m.per_node_deg.len());
            match out {
                Some(path) => write(&path, &metrics_csv(&m))?,
                None => print!("{}", metrics_csv(&m)),
            }
        }
        Command::Stats { graph, out } => {
            let g = load_graph(&graph)?;
            let s = graph_stats(&g, g.has_ground_truth())?;
            let mut csv = String::from("series,bin_lo_deg,bin_hi_deg,count\n");
            let mut series = |name: &str, a: &AngleAxisStats| {
                for (k, c) in a.histogram.iter().enumerate() {
                    let (lo, hi) = AngleAxisStats::bin_edges_deg(k);
                    let _ = writeln!(csv, "{name},{lo},{hi},{c}");
                }
            };
            series("relative", &s.relative);
            if let Some(n) = &s.noise {
                series("noise", n);
            }
            write(&out, &csv)?;
        }
    }
    Ok(())
}

fn train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let corpus = Corpus::load(&args.corpus).map_err(|e| e.at_stage("load corpus"))?;
    let mut cfg = if args.paper_scale { TrainConfig::paper() } else { TrainConfig::desk() };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(p) = args.edge_dropout {
        cfg.edge_dropout = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (json, log) = match args.network {
        Network::Clean => {
            if args.cleannet.is_some() {
                return Err(Error::InvalidInput("--cleannet only applies to `train fine`".into()));
            }
            let (net, log) = train_cleannet(&corpus.train, &corpus.val, &cfg)?;
            (net.to_json(), log)
        }
        Network::Fine => {
            let init = match &args.cleannet {
                Some(p) => FineInit::CleanNet(Box::new(
                    CleanNet::from_json(&read(p)?).map_err(|e| e.at_stage("load cleannet"))?,
                )),
                None => FineInit::NoisySpt,
            };
            let (net, log) = train_finenet(&corpus.train, &corpus.val, &init, &cfg)?;
            (net.to_json(), log)
        }
    };
    write(&args.out, &json)?;
    let log_path = args.log.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write(&log_path, &log.to_csv())?;
    if let Some(b) = log.best() {
        eprintln!("kept epoch {} (validation loss {:.6})", b.epoch, b.val_loss);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROTAVG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
