use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetcd::error::exit;
use hetcd::{checkpoint, config, graph_dir, run, Error, Result};
use hetcd_core::cluster::KlSign;
use hetcd_core::graph::generate_hsbm;
use hetcd_core::verify::{self, VerifyOptions};
use hetcd_core::{train, HsbmSpec, Split};

#[derive(Parser)]
#[command(
    name = "hetcd",
    version,
    about = "Community detection on heterogeneous graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic heterogeneous stochastic block model graph.
    Generate(GenerateArgs),
    /// Train a model and write checkpoint, history, metrics and manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Export embeddings and community predictions of every target node.
    Embed(EmbedArgs),
    /// Run the gradient, oracle and invariant checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    communities: usize,
    #[arg(long, default_value_t = 600)]
    target_nodes: usize,
    #[arg(long, default_value_t = 2)]
    aux_types: usize,
    #[arg(long, default_value_t = 300)]
    aux_nodes: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    /// Feature width of every type; 0 makes all types featureless.
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Norm of each community's feature mean.
    #[arg(long, default_value_t = 1.0)]
    feature_separation: f64,
    /// Standard deviation of feature noise.
    #[arg(long, default_value_t = 1.0)]
    feature_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override a config field, e.g. `--set loss.silhouette=false`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check the clustering loss with its sign flipped. The suite is
    /// expected to fail; used to test the checks themselves.
    #[arg(long, hide = true)]
    flip_kl_sign: bool,
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = HsbmSpec::new(a.target_nodes, a.aux_types, a.aux_nodes, a.communities);
    spec.p_in = a.p_in;
    spec.p_out = a.p_out;
    spec.feature_dim = a.feature_dim;
    spec.feature_separation = a.feature_separation;
    spec.feature_noise = a.feature_noise;
    spec.seed = a.seed;
    let graph = generate_hsbm(&spec)?;
    graph_dir::write_graph(&graph, &a.out)?;
    println!("wrote {}", a.out.display());
    for t in graph.node_types() {
        println!(
            "  {:<10} {:>7} nodes  feature_dim {}",
            t.name,
            t.count,
            t.feature_dim()
        );
    }
    let names: Vec<&str> = graph.node_types().iter().map(|t| t.name.as_str()).collect();
    for e in graph.edge_types() {
        println!(
            "  {} -{}-> {}: {} edges",
            names[e.src],
            e.rel,
            names[e.dst],
            e.edges.len()
        );
    }
    println!(
        "  {} communities, {} edges total",
        graph.num_classes(),
        graph.num_edges()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut overrides = a.overrides;
    if let Some(r) = a.repeats {
        overrides.push(format!("repeats={r}"));
    }
    let cfg = config::resolve(a.config.as_deref(), &overrides)?;
    let graph = graph_dir::load_graph(&a.data)?;
    let quiet = a.quiet;
    let repeats = cfg.repeats;
    let mut observe = |r: usize, rec: &train::EpochRecord| {
        if quiet {
            return;
        }
        let tag = if repeats > 1 {
            format!("[{r}] ")
        } else {
            String::new()
        };
        eprintln!(
            "{tag}epoch {:>3}  train {:.4} (cls {:.4} kl {:.4} sil {:.4})  val {:.4}  nmi {:.4} ari {:.4} acc {:.4}",
            rec.epoch, rec.train_total, rec.train_cls, rec.train_kl, rec.train_sil, rec.val_total, rec.val_nmi, rec.val_ari, rec.val_acc
        );
    };
    let summary = run::train_run(&graph, &a.data, &cfg, &a.out, &mut observe)?;
    let m = &summary.metrics;
    println!(
        "test metrics over {} repeat(s), written to {}",
        m.seeds.len(),
        a.out.display()
    );
    for (key, (mean, std)) in run::METRIC_KEYS
        .iter()
        .zip(m.mean.values().into_iter().zip(m.std.values()))
    {
        println!("  {key:<15} {mean:.4} ± {std:.4}");
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let state = checkpoint::load(&a.checkpoint)?;
    let graph = graph_dir::load_graph(&a.data)?;
    let metrics = run::evaluate(&state, &graph, a.split.into())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    );
    if let Some(out) = a.out {
        hetcd::write_json(&out, &metrics)?;
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let state = checkpoint::load(&a.checkpoint)?;
    let graph = graph_dir::load_graph(&a.data)?;
    let inference = train::infer(&state, &graph)?;
    run::write_embeddings(&inference, &graph, &a.out)?;
    println!(
        "wrote {} rows of width {} to {}",
        graph.target_count(),
        state.d_model(),
        a.out.display()
    );
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let options = VerifyOptions {
        kl_sign: if a.flip_kl_sign {
            KlSign::Verbatim
        } else {
            KlSign::Corrected
        },
        seed: a.seed,
    };
    let checks = verify::run(&options);
    for c in &checks {
        println!("{}", verify::format_check(c));
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        return Err(Error::Verify {
            failed,
            modules: verify::failing_modules(&checks)
                .into_iter()
                .map(String::from)
                .collect(),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::VALIDATION as u8
            } else {
                exit::OK as u8
            });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Embed(a) => embed(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
