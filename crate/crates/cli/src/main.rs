mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use archdiff::Error;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "archdiff", version, about = "Diffusion-based tooth arrangement on synthetic dentitions")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// TOML run configuration; missing keys take profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in defaults: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Print the full default configuration of the profile and exit.
    #[arg(long, global = true)]
    dump_default_config: bool,
    /// Run seed; overrides every component seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Run output directory.
    #[arg(long, global = true)]
    run: Option<PathBuf>,
    /// Train the local encoder from scratch (skip masked pretraining).
    #[arg(long, global = true)]
    no_mae: bool,
    /// Disable the global point encoder.
    #[arg(long, global = true)]
    no_global: bool,
    /// Disable feature propagation across teeth.
    #[arg(long, global = true)]
    no_fp: bool,
    /// Replace the diffusion model with a direct regression head.
    #[arg(long, global = true)]
    no_dpm: bool,
    /// Use the point-based local encoder instead of the mesh patch encoder.
    #[arg(long, global = true)]
    point_local: bool,
    /// Loss terms to keep, comma separated from cd, diff, pos; the others
    /// get weight zero.
    #[arg(long, global = true, value_delimiter = ',')]
    loss_mask: Option<Vec<String>>,
    /// Sampling steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Masked-autoencoder pretraining of the local encoder.
    Pretrain,
    /// Train the arrangement model (pretraining first unless disabled).
    Train {
        /// Ignore an existing checkpoint instead of resuming from it.
        #[arg(long)]
        fresh: bool,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict one record and write the arranged meshes.
    Sample {
        /// Record id (default: first test record).
        #[arg(long)]
        record: Option<String>,
    },
    /// Evaluate the trained model on the test split.
    Eval,
    /// Feed predictions back as inputs for several rounds.
    Iterate {
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        /// Number of test records to use.
        #[arg(long, default_value_t = 20)]
        records: usize,
    },
    /// Plot the cumulative distribution of per-record ADD.
    PlotDist {
        /// `report.json` files (or `eval` directories) written by `eval`.
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Series names (default: file stems).
        #[arg(long, num_args = 1..)]
        labels: Vec<String>,
        /// Comma-separated thresholds in mm (default: from the config).
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<f64>>,
        #[arg(long, default_value = "distance.svg")]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn resolve_config(g: &GlobalOpts) -> archdiff::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::profile(&g.profile)?,
    };
    if let Some(seed) = g.seed {
        cfg.apply_seed(seed);
    }
    if let Some(d) = &g.data {
        cfg.paths.data = d.display().to_string();
    }
    if let Some(r) = &g.run {
        cfg.paths.run = r.display().to_string();
    }
    if g.no_mae {
        cfg.pretrain.enabled = false;
    }
    if g.no_global {
        cfg.model.flags.global = false;
    }
    if g.no_fp {
        cfg.model.flags.propagation = false;
    }
    if g.no_dpm {
        cfg.model.dpm = false;
    }
    if g.point_local {
        cfg.model.flags.local = archdiff::encoders::LocalKind::Points;
        cfg.pretrain.enabled = false;
    }
    if let Some(keep) = &g.loss_mask {
        for k in keep {
            if !matches!(k.as_str(), "cd" | "diff" | "pos") {
                return Err(Error::Config(format!("unknown loss term {k:?} (expected cd, diff or pos)")));
            }
        }
        let on = |name: &str| keep.iter().any(|k| k == name);
        let w = &mut cfg.train.weights;
        if !on("cd") {
            w.cd = 0.0;
        }
        if !on("diff") {
            w.diff = 0.0;
        }
        if !on("pos") {
            w.pos = 0.0;
        }
    }
    if let Some(s) = g.steps {
        cfg.model.sample_steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> archdiff::Result<()> {
    if cli.global.dump_default_config {
        print!("{}", RunConfig::profile(&cli.global.profile)?.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given (see --help)".into()));
    };
    let cfg = resolve_config(&cli.global)?;
    match command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Pretrain => commands::pretrain(&cfg).map(|_| ()),
        Command::Train { fresh, epochs } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            commands::train(&cfg, fresh)
        }
        Command::Sample { record } => commands::sample(&cfg, record.as_deref(), cli.global.steps),
        Command::Eval => commands::eval(&cfg, cli.global.steps),
        Command::Iterate { rounds, records } => commands::iterate(&cfg, rounds, records, cli.global.steps),
        Command::PlotDist { reports, labels, edges, out } => {
            let edges = edges.unwrap_or_else(|| cfg.eval.bin_edges.clone());
            commands::plot_dist(&reports, &labels, &edges, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
