use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod render;

/// Motor-imagery EEG decoding experiments over session directories.
#[derive(Debug, Parser)]
#[command(name = "mi-decode", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline configuration (flat JSON); flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print aligned text tables instead of JSON.
    #[arg(long, global = true, conflicts_with = "json")]
    text: bool,
    /// Print JSON (the default).
    #[arg(long, global = true)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// PCA components kept before the classifier.
    #[arg(long, global = true)]
    pca: Option<usize>,
    /// Per-window feature map.
    #[arg(long, global = true)]
    features: Option<FeatureArg>,
    #[arg(long, global = true)]
    classifier: Option<ClassifierArg>,
    /// Filtering applied before windowing.
    #[arg(long, global = true)]
    filter_mode: Option<FilterArg>,
    /// Disable common average referencing.
    #[arg(long, global = true)]
    no_car: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeatureArg {
    Raw,
    Psd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Lda,
    NearestCentroid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterArg {
    ZeroPhase,
    Causal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Lexicographic,
    Weighted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SessionKindArg {
    Offline,
    Online1,
    Online2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic study (offline, online1, online2).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        erd_depth: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Convert a numeric CSV (one row per sample) to a session directory.
    ImportCsv {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        fs: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_header: bool,
        /// Column of integer event codes (name, or index without header).
        #[arg(long)]
        event_column: Option<String>,
        #[arg(long)]
        run_column: Option<String>,
        /// Event code mapping, e.g. `1=TrialStart,2=CueLeft`.
        #[arg(long, value_delimiter = ',')]
        label_map: Vec<String>,
        #[arg(long, default_value = "unknown")]
        subject: String,
        #[arg(long, value_enum, default_value = "offline")]
        session_kind: SessionKindArg,
    },
    /// Fit a decoder on one or more sessions.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        session: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run-wise cross-validation on one session.
    Cv {
        #[arg(long)]
        session: PathBuf,
        /// Permute window labels first (chance-level control).
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
    /// Window-level accuracy of a decoder on a session.
    EvalSamples {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        session: PathBuf,
    },
    /// Trial-level decisions by evidence accumulation.
    EvalTrials {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        delta: f64,
        /// Decode with forward-only filtering.
        #[arg(long)]
        causal: bool,
    },
    /// Cross-validated accuracy for several PCA sizes.
    PcaSweep {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Exhaustive (theta, delta) search.
    GridSearch {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        session: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thetas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        #[arg(long)]
        objective: Option<ObjectiveArg>,
        /// Write the correct/incorrect/timeout matrix as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Causal sample-by-sample replay; window events go to stderr as JSON lines.
    Replay {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        delta: f64,
        /// Sleep one window step between events.
        #[arg(long)]
        realtime: bool,
        /// Suppress the per-window event stream.
        #[arg(long)]
        quiet: bool,
    },
    /// Full experiment over a study directory.
    Repro {
        #[arg(long)]
        study: PathBuf,
        /// Save the base and fine-tuned decoders here.
        #[arg(long)]
        save_decoders: Option<PathBuf>,
    },
}

fn init_threads() {
    if let Some(n) = std::env::var("MI_DECODE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // a second initialisation attempt only happens in tests; ignore it
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_threads();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
