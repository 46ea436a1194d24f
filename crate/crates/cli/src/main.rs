use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dgen::gradcheck::{self, SuiteOptions};
use dgen::graph::{generate_sbm, inject_noise_edges, load_citation_dataset, save_citation_dataset, AttributedGraph, SbmParams};
use dgen::metrics::ClusterMetrics;
use dgen::pipeline::{self, TrainConfig};
use dgen::pool::PoolMode;
use dgen::tensor::OpKind;
use dgen::Error;

#[derive(Parser, Debug)]
#[command(name = "dgen", version, about = "Attributed graph clustering with neighbor-cluster pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline and write report, labels and embeddings.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Pooling operator.
        #[arg(long, default_value = "ncpool")]
        pool: PoolMode,
        /// Fraction of nodes kept by pooling.
        #[arg(long, default_value_t = 0.6)]
        ratio: f64,
        /// Weight of the clustering loss.
        #[arg(long, default_value_t = 10.0)]
        lambda: f64,
        /// Fraction of extra random edges injected before training.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value = "dgen-out")]
        out_dir: PathBuf,
    },
    /// Score a label file against the ground truth of a dataset.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// `node_id cluster_id` lines, as written by `train`.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Generate a stochastic block model graph in citation-dataset format.
    GenSbm {
        /// Comma-separated block sizes.
        #[arg(long, value_delimiter = ',', default_value = "100,100,100")]
        blocks: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        /// Norm of each block's feature mean.
        #[arg(long, default_value_t = 2.0)]
        shift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of extra random edges.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value = "sbm")]
        out_dir: PathBuf,
    },
    /// Train every (pooling mode, noise, ratio, lambda) combination and
    /// tabulate the metrics.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "ncpool,topk,none")]
        pool: Vec<PoolMode>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        noise: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.6")]
        ratio: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        lambda: Vec<f64>,
        #[arg(long, default_value = "dgen-ablation")]
        out_dir: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::MIN_INSTANCES)]
        instances: usize,
        /// Scale the adjoint of one operation to verify the checker.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// `id feature… label` lines, tab separated.
    #[arg(long)]
    content: PathBuf,
    /// `cited citing` lines, tab separated.
    #[arg(long)]
    cites: PathBuf,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long, default_value_t = 200)]
    epochs_pretrain: usize,
    #[arg(long, default_value_t = 200)]
    epochs_train: usize,
    #[arg(long, default_value_t = 100)]
    epochs_clf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster count; defaults to the number of ground-truth classes.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 20)]
    center_refresh: usize,
    #[arg(long, default_value_t = 5)]
    target_refresh: usize,
}

impl ConfigArgs {
    fn to_config(&self, pool: PoolMode, ratio: f64, lambda: f64) -> TrainConfig {
        TrainConfig {
            pool,
            ratio,
            lambda,
            pretrain_epochs: self.epochs_pretrain,
            train_epochs: self.epochs_train,
            classifier_epochs: self.epochs_clf,
            seed: self.seed,
            clusters: self.clusters,
            center_refresh: self.center_refresh,
            target_refresh: self.target_refresh,
            ..TrainConfig::default()
        }
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Contract(_) => 1,
            Error::Parse { .. } | Error::EmptyInput(_) | Error::Io { .. } | Error::GraphComplete { .. } => 2,
            Error::Dimension { .. } | Error::Domain { .. } | Error::NonFinite { .. } | Error::DegenerateLabels(_) => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load(data: &DataArgs) -> Result<AttributedGraph, Failure> {
    let (graph, warnings) = load_citation_dataset(&data.content, &data.cites)?;
    if warnings.unknown_endpoint_edges + warnings.duplicate_edges + warnings.self_loops > 0 {
        log::warn!(
            "ignored {} citations with unknown endpoints, {} duplicates, {} self-loops",
            warnings.unknown_endpoint_edges,
            warnings.duplicate_edges,
            warnings.self_loops
        );
    }
    log::info!(
        "loaded {} nodes, {} edges, {} features",
        graph.num_nodes(),
        graph.num_edges(),
        graph.feature_dim()
    );
    Ok(graph)
}

fn with_noise(graph: AttributedGraph, noise: f64, seed: u64) -> Result<AttributedGraph, Failure> {
    if !(0.0..=10.0).contains(&noise) {
        return Err(Failure::usage(format!("noise fraction {noise} must lie in [0, 10]")));
    }
    if noise == 0.0 {
        return Ok(graph);
    }
    Ok(inject_noise_edges(&graph, noise, seed)?)
}

fn echo(lines: &[String]) {
    for line in lines {
        println!("# {line}");
    }
}

fn dataset_lines(data: &DataArgs) -> Vec<String> {
    vec![
        format!("content = {}", data.content.display()),
        format!("cites = {}", data.cites.display()),
    ]
}

fn print_metrics(prefix: &str, m: &ClusterMetrics) {
    println!("{prefix}acc {:.4} nmi {:.4} ari {:.4}", m.acc, m.nmi, m.ari);
}

fn cmd_train(
    data: &DataArgs,
    args: &ConfigArgs,
    pool: PoolMode,
    ratio: f64,
    lambda: f64,
    noise: f64,
    out_dir: &Path,
) -> Outcome {
    let config = args.to_config(pool, ratio, lambda);
    let mut extra = dataset_lines(data);
    extra.push(format!("noise = {noise}"));
    extra.push(format!("out_dir = {}", out_dir.display()));
    echo(&extra);
    echo(&config.describe());
    config.validate()?;
    let graph = with_noise(load(data)?, noise, config.seed)?;
    let report = pipeline::run(&graph, &config)?;
    let files = pipeline::write_run(out_dir, &report, &graph, &extra)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(m) = &report.metrics {
        print_metrics("", m);
    }
    println!("labels written to {}", files.labels.display());
    Ok(())
}

fn read_labels(path: &Path, graph: &AttributedGraph) -> Result<Vec<usize>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let index: std::collections::HashMap<&str, usize> =
        graph.node_ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut labels = vec![None; graph.num_nodes()];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Failure::data(format!("{}:{}: expected `node_id cluster_id`", path.display(), n + 1));
        let mut parts = line.split_whitespace();
        let (id, label) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
        let node = *index
            .get(id)
            .ok_or_else(|| Failure::data(format!("{}:{}: unknown node {id}", path.display(), n + 1)))?;
        labels[node] = Some(label.parse::<usize>().map_err(|_| bad())?);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Failure::data(format!("no label for node {}", graph.node_ids()[i]))))
        .collect()
}

fn cmd_eval(data: &DataArgs, labels: &Path) -> Outcome {
    echo(&dataset_lines(data));
    echo(&[format!("labels = {}", labels.display())]);
    let graph = load(data)?;
    let truth = graph
        .labels()
        .ok_or_else(|| Failure::data("dataset carries no ground-truth labels"))?;
    let pred = read_labels(labels, &graph)?;
    print_metrics("", &ClusterMetrics::evaluate(&pred, truth)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_sbm(
    blocks: &[usize],
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    shift: f64,
    seed: u64,
    noise: f64,
    out_dir: &Path,
) -> Outcome {
    let lines = vec![
        format!("blocks = {}", blocks.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")),
        format!("p_in = {p_in}"),
        format!("p_out = {p_out}"),
        format!("feature_dim = {feature_dim}"),
        format!("shift = {shift}"),
        format!("seed = {seed}"),
        format!("noise = {noise}"),
    ];
    echo(&lines);
    let params = SbmParams::new(blocks.to_vec(), p_in, p_out)
        .feature_dim(feature_dim)
        .feature_shift(shift)
        .seed(seed);
    let graph = with_noise(generate_sbm(&params)?, noise, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Failure::data(format!("{}: {e}", out_dir.display())))?;
    let header = lines.join("\n");
    let (content, cites) = (out_dir.join("sbm.content"), out_dir.join("sbm.cites"));
    save_citation_dataset(&graph, &content, &cites, &header)?;
    println!(
        "{} nodes, {} edges written to {} and {}",
        graph.num_nodes(),
        graph.num_edges(),
        content.display(),
        cites.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    data: &DataArgs,
    args: &ConfigArgs,
    pools: &[PoolMode],
    noises: &[f64],
    ratios: &[f64],
    lambdas: &[f64],
    out_dir: &Path,
) -> Outcome {
    let join = |v: &[f64]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    let mut extra = dataset_lines(data);
    extra.push(format!("pool = {}", pools.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")));
    extra.push(format!("noise = {}", join(noises)));
    extra.push(format!("ratio = {}", join(ratios)));
    extra.push(format!("lambda = {}", join(lambdas)));
    echo(&extra);
    let base = args.to_config(PoolMode::NcPool, ratios[0], lambdas[0]);
    echo(&base.describe());
    for &ratio in ratios {
        for &lambda in lambdas {
            args.to_config(PoolMode::NcPool, ratio, lambda).validate()?;
        }
    }
    let clean = load(data)?;
    let mut table = String::new();
    for line in &extra {
        let _ = writeln!(table, "# {line}");
    }
    for line in base.describe() {
        let _ = writeln!(table, "# {line}");
    }
    let _ = writeln!(table, "pool noise ratio lambda acc nmi ari selected_acc");
    for &noise in noises {
        let graph = with_noise(clean.clone(), noise, args.seed)?;
        for &ratio in ratios {
            for &lambda in lambdas {
                let config = args.to_config(PoolMode::NcPool, ratio, lambda);
                for report in pipeline::run_ablation(&graph, &config, pools)? {
                    let m = report
                        .metrics
                        .ok_or_else(|| Failure::data("ablation needs ground-truth labels"))?;
                    let local = report.selected_metrics.map_or(f64::NAN, |s| s.acc);
                    let row = format!(
                        "{} {noise} {ratio} {lambda} {:.4} {:.4} {:.4} {:.4}",
                        report.config.pool, m.acc, m.nmi, m.ari, local
                    );
                    println!("{row}");
                    let _ = writeln!(table, "{row}");
                }
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Failure::data(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join("ablation.txt");
    fs::write(&path, table).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    println!("table written to {}", path.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize, corrupt: Option<&str>) -> Outcome {
    let corrupt = match corrupt {
        None => None,
        Some(name) => Some(
            OpKind::DIFFERENTIABLE
                .into_iter()
                .find(|k| k.name() == name)
                .ok_or_else(|| Failure::usage(format!("unknown operation '{name}'")))?,
        ),
    };
    echo(&[
        format!("seed = {seed}"),
        format!("instances = {instances}"),
        format!("step = {}", gradcheck::STEP),
        format!("tolerance = {}", gradcheck::TOLERANCE),
    ]);
    let report = gradcheck::run_suite(SuiteOptions {
        instances,
        seed,
        corrupt,
    })?;
    for check in &report.checks {
        println!("{check}");
    }
    for kind in &report.uncovered {
        println!("UNCOVERED {kind}");
    }
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        let failing: Vec<_> = report.failures().map(|c| c.name).collect();
        Err(Failure::numerical(format!("gradient check failed: {}", failing.join(", "))))
    }
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train {
            data,
            config,
            pool,
            ratio,
            lambda,
            noise,
            out_dir,
        } => cmd_train(&data, &config, pool, ratio, lambda, noise, &out_dir),
        Command::Eval { data, labels } => cmd_eval(&data, &labels),
        Command::GenSbm {
            blocks,
            p_in,
            p_out,
            feature_dim,
            shift,
            seed,
            noise,
            out_dir,
        } => cmd_gen_sbm(&blocks, p_in, p_out, feature_dim, shift, seed, noise, &out_dir),
        Command::Ablate {
            data,
            config,
            pool,
            noise,
            ratio,
            lambda,
            out_dir,
        } => cmd_ablate(&data, &config, &pool, &noise, &ratio, &lambda, &out_dir),
        Command::Gradcheck {
            seed,
            instances,
            corrupt,
        } => cmd_gradcheck(seed, instances, corrupt.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
