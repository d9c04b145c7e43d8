use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gsm::affinity::fuzzy_graph;
use gsm::data::{self, DatasetBundle};
use gsm::init::{random_init, spectral_init, Embedding};
use gsm::knn::{build_knn_graph, Metric};
use gsm::lowdim::{kernel_curve, KernelParams};
use gsm::metrics::{cluster_error, kmeans, knn_preservation};
use gsm::optimizer::{optimize_with_progress, OptimizerConfig};
use gsm::plot::{line_svg, scatter_svg};
use gsm::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "gsm", about = "Tail-tunable sigmoid-kernel manifold embedding", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: kNN graph, affinity calibration,
    /// initialization and SGD; writes the embedding as CSV.
    Embed(EmbedArgs),
    /// Sample the low-dimensional kernel over a distance grid for one or
    /// more b values; writes CSV and an SVG line plot.
    Curve(CurveArgs),
    /// Evaluate an embedding: k-means cluster error and, when the
    /// original data is given, neighborhood preservation.
    Metrics(MetricsArgs),
    /// Render a 2-D embedding CSV as an SVG scatter plot.
    Plot(PlotArgs),
}

#[derive(Args)]
struct InputArgs {
    /// CSV input file of decimal reals.
    #[arg(long, conflicts_with_all = ["idx", "generate"])]
    input: Option<PathBuf>,
    /// The CSV file starts with a header line.
    #[arg(long, requires = "input")]
    has_header: bool,
    /// Column of --input holding integer labels.
    #[arg(long, requires = "input")]
    label_column: Option<usize>,
    /// IDX images file, optionally "IMAGES,LABELS". ".gz" accepted.
    #[arg(long, conflicts_with = "generate")]
    idx: Option<String>,
    /// Built-in generator: "sim" or "sim:n_clusters,points_per_cluster,dim,seed".
    #[arg(long)]
    generate: Option<String>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Nearest neighbors for the affinity graph.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Kernel exponent (useful range 1 to 1.5).
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Kernel tail parameter: smaller b, heavier tail, stronger cluster
    /// separation. No default; pick per dataset.
    #[arg(long)]
    b: f64,
    /// Output dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Negative samples per processed edge.
    #[arg(long, default_value_t = 5)]
    neg: usize,
    /// Initial learning rate (decays linearly to zero).
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Initialization: "spectral" or "random".
    #[arg(long, default_value = "spectral")]
    init: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads; 1 is deterministic. Falls back to GSM_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Output embedding CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    /// Comma-separated b values.
    #[arg(long, default_value = "0.5,1,2,5,10", value_delimiter = ',')]
    b: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Output CSV path; the SVG goes next to it unless --svg is given.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Embedding CSV; the last column holds labels unless --labels is given.
    #[arg(long)]
    embedding: PathBuf,
    /// Separate labels file: one integer per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of k-means clusters.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Original high-dimensional data CSV, enabling knn_preservation.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Neighborhood size for knn_preservation.
    #[arg(long, default_value_t = 10)]
    knn: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    point_size: f64,
    /// Color points by the label in the embedding's last column.
    #[arg(long)]
    color_by_label: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Embed(args) => cmd_embed(args),
        Command::Curve(args) => cmd_curve(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn parse_generate(spec: &str) -> Result<DatasetBundle, Error> {
    let (kind, params) = match spec.split_once(':') {
        Some((k, p)) => (k, Some(p)),
        None => (spec, None),
    };
    if kind != "sim" {
        return Err(Error::Config(format!("unknown generator {kind:?}")));
    }
    let (n_clusters, ppc, dim, seed) = match params {
        None => (10, 100, 20, 42),
        Some(p) => {
            let parts: Vec<&str> = p.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!(
                    "--generate sim takes 4 parameters (n_clusters,points_per_cluster,dim,seed), got {spec:?}"
                )));
            }
            let parse = |s: &str| -> Result<u64, Error> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad generator parameter {s:?}")))
            };
            (
                parse(parts[0])? as usize,
                parse(parts[1])? as usize,
                parse(parts[2])? as usize,
                parse(parts[3])?,
            )
        }
    };
    data::generate_gaussian_clusters(n_clusters, ppc, dim, 5.0, 2.3, seed)
}

fn load_input(args: &InputArgs) -> Result<DatasetBundle, Error> {
    if let Some(path) = &args.input {
        data::load_csv(path, args.has_header, args.label_column)
    } else if let Some(spec) = &args.idx {
        match spec.split_once(',') {
            Some((images, labels)) => data::load_idx(images, Some(labels.as_ref())),
            None => data::load_idx(spec, None),
        }
    } else if let Some(spec) = &args.generate {
        parse_generate(spec)
    } else {
        Err(Error::Config(
            "no input: pass --input, --idx or --generate".to_string(),
        ))
    }
}

fn threads_from(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("GSM_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
}

fn cmd_embed(args: EmbedArgs) -> Result<(), Error> {
    let kernel = KernelParams::new(args.a, args.b)?;
    if !kernel.a_in_recommended_range() {
        eprintln!("warning: a={} is outside the useful range [1, 1.5]", args.a);
    }
    match args.init.as_str() {
        "spectral" | "random" => {}
        other => return Err(Error::Config(format!("unknown init {other:?}"))),
    }
    let threads = threads_from(args.threads);

    let bundle = load_input(&args.input)?;
    let n = bundle.data.n_rows;
    eprintln!("loaded {n} points x {} dims ({})", bundle.data.n_cols, bundle.name);

    let t = Instant::now();
    let knn = build_knn_graph(&bundle.data, args.k, Metric::Euclidean)?;
    eprintln!("knn: {:.2}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let graph = fuzzy_graph(&knn)?;
    eprintln!("affinity: {:.2}s ({} edges)", t.elapsed().as_secs_f64(), graph.edges.len());

    let t = Instant::now();
    let emb = match args.init.as_str() {
        "spectral" => spectral_init(&graph, args.dim, args.seed)?,
        _ => random_init(n, args.dim, args.seed, 10.0),
    };
    eprintln!("init: {:.2}s", t.elapsed().as_secs_f64());

    let cfg = OptimizerConfig {
        n_epochs: args.epochs,
        neg_samples: args.neg,
        lr_initial: args.lr,
        seed: args.seed,
        threads,
        ..Default::default()
    };
    let t = Instant::now();
    let report_every = (args.epochs / 10).max(1);
    let emb = optimize_with_progress(emb, &graph, &kernel, &cfg, &mut |p| {
        if p.epoch % report_every == 0 {
            eprintln!("epoch {}/{} ({} edges)", p.epoch, args.epochs, p.edges_processed);
        }
    })?;
    eprintln!("optimize: {:.2}s", t.elapsed().as_secs_f64());

    data::write_embedding_csv(&emb, bundle.data.labels.as_deref(), &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_curve(args: CurveArgs) -> Result<(), Error> {
    let mut series = Vec::new();
    for &b in &args.b {
        let p = KernelParams::new(args.a, b)?;
        series.push((format!("b={b}"), kernel_curve(&p, 5.0, 0.01)));
    }

    let mut csv = String::from("dist");
    for (name, _) in &series {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for row in 0..series[0].1.len() {
        csv.push_str(&format!("{}", series[0].1[row].0));
        for (_, pts) in &series {
            csv.push_str(&format!(",{:.5}", pts[row].1));
        }
        csv.push('\n');
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::io(&args.out, e))?;

    let svg_path = args
        .svg
        .clone()
        .unwrap_or_else(|| args.out.with_extension("svg"));
    std::fs::write(&svg_path, line_svg(&series)?).map_err(|e| Error::io(&svg_path, e))?;
    eprintln!("wrote {} and {}", args.out.display(), svg_path.display());
    Ok(())
}

/// Read an embedding CSV, splitting off the trailing label column when
/// present (labels written by `embed`) or loading a separate labels file.
fn load_embedding(
    path: &PathBuf,
    labels_path: Option<&PathBuf>,
    expect_labels: bool,
) -> Result<(Embedding, Option<Vec<i64>>), Error> {
    let label_col = if labels_path.is_none() && expect_labels {
        // Peek at the first line to find the column count.
        let first = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))?
            .lines()
            .next()
            .map(|l| l.split(',').count())
            .unwrap_or(0);
        if first == 0 {
            return Err(Error::EmptyFile(path.clone()));
        }
        Some(first - 1)
    } else {
        None
    };
    let bundle = data::load_csv(path, false, label_col)?;
    let emb = Embedding {
        n_points: bundle.data.n_rows,
        dim: bundle.data.n_cols,
        coords: bundle.data.values,
    };
    let labels = match labels_path {
        Some(lp) => {
            let text = std::fs::read_to_string(lp).map_err(|e| Error::io(lp, e))?;
            let labels: Result<Vec<i64>, Error> = text
                .lines()
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(row, l)| {
                    l.trim().parse().map_err(|_| Error::BadCell {
                        row,
                        col: 0,
                        value: l.to_string(),
                    })
                })
                .collect();
            let labels = labels?;
            if labels.len() != emb.n_points {
                return Err(Error::LengthMismatch {
                    what: "labels",
                    found: labels.len(),
                    expected: emb.n_points,
                });
            }
            Some(labels)
        }
        None => bundle.data.labels,
    };
    Ok((emb, labels))
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Error> {
    let (emb, labels) = load_embedding(&args.embedding, args.labels.as_ref(), true)?;
    let labels = labels.ok_or_else(|| {
        Error::Config("metrics needs labels (last embedding column or --labels)".to_string())
    })?;

    let assign = kmeans(&emb, args.k, args.seed, args.restarts)?;
    let error = cluster_error(&assign, &labels)?;
    println!("cluster_error={error}");
    println!("kmeans_inertia={}", assign.inertia);

    if let Some(input) = &args.input {
        let bundle = data::load_csv(input, false, None)?;
        let high = build_knn_graph(&bundle.data, args.knn, Metric::Euclidean)?;
        let preservation = knn_preservation(&high, &emb, args.knn)?;
        println!("knn_preservation={preservation}");
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), Error> {
    let (emb, labels) =
        load_embedding(&args.embedding, None, args.color_by_label)?;
    let labels = if args.color_by_label { labels } else { None };
    let svg = scatter_svg(&emb, labels.as_deref(), args.point_size)?;
    std::fs::write(&args.out, svg).map_err(|e| Error::io(&args.out, e))?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}
