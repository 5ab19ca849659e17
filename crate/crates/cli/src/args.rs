use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use epl_core::layout::{Framework, Scheme, Task};

#[derive(Debug, Parser)]
#[command(name = "epl", version, about = "Position-ID layouts for soft-prompt context compression")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, validate and certify position layouts.
    #[command(subcommand)]
    Layout(LayoutCmd),
    /// Position-encoding locality curves.
    #[command(subcommand)]
    Pe(PeCmd),
    /// Toy-model losses, gradient checks and attention dumps.
    #[command(subcommand)]
    Toy(ToyCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where the layout configuration comes from, plus per-field overrides.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// LayoutConfig JSON file.
    #[arg(long, conflicts_with = "canonical")]
    pub config: Option<PathBuf>,
    /// Two 510-token chunks, 102 memory tokens each, |X| = 2040, |Q| = 50,
    /// |A| = 5 (the default when no --config is given).
    #[arg(long)]
    pub canonical: bool,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub framework: Option<Framework>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
}

#[derive(Debug, Subcommand)]
pub enum LayoutCmd {
    /// Encoder layout `[S; M]` of one chunk.
    Encode {
        #[command(flatten)]
        config: ConfigArgs,
        /// 1-based chunk index.
        #[arg(long, default_value_t = 1)]
        chunk: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        output: Output,
    },
    /// Decoder layout for the configured task.
    Decode {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        output: Output,
    },
    /// Vision-compression layout `[vision; voco; text]`.
    Voco {
        #[arg(long)]
        vision: usize,
        #[arg(long)]
        voco: usize,
        #[arg(long)]
        text: usize,
        #[arg(long, default_value_t = Scheme::Epl)]
        scheme: Scheme,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        output: Output,
    },
    /// Check a layout; exits 2 if any check fails.
    ///
    /// Without --layout, the layout is generated from the configuration:
    /// the encoder layout of --chunk if given, otherwise the decoder layout.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Layout file (JSON, or CSV if the name ends in `.csv`).
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        chunk: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Exhaustive minimax optimum for L context tokens and M memory tokens.
    Oracle {
        #[arg(long = "L")]
        len: usize,
        #[arg(long = "M")]
        memory: usize,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
pub enum PeCmd {
    /// Cosine similarity between sinusoidal encodings of positions 0..maxpos.
    SineSim {
        #[arg(long)]
        dmodel: usize,
        #[arg(long)]
        maxpos: usize,
        #[arg(long, default_value_t = epl_core::pe::DEFAULT_BASE)]
        base: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Mean rotary self-score of random unit vectors against relative offset.
    RopeDecay {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        max_delta: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = epl_core::pe::DEFAULT_BASE)]
        base: f64,
        #[command(flatten)]
        output: Output,
    },
}

/// Run spec plus overrides shared by every toy subcommand.
#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Run spec JSON `{"model": {...}, "layout": {...}, "seed": n}`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub framework: Option<Framework>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub memory_count: Option<usize>,
    #[arg(long)]
    pub context_len: Option<usize>,
    #[arg(long)]
    pub total_len: Option<usize>,
    #[arg(long)]
    pub question_len: Option<usize>,
    #[arg(long)]
    pub answer_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Encoder,
    Decoder,
}

#[derive(Debug, Subcommand)]
pub enum ToyCmd {
    /// Loss of the configured task.
    Loss {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Finite-difference check of the loss gradient; exits 2 at 1e-4 or above.
    GradCheck {
        #[command(flatten)]
        spec: SpecArgs,
        /// Loss to differentiate (defaults to the configured task).
        #[arg(long)]
        loss: Option<Task>,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Attention maps of one forward pass as CSV.
    AttnDump {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum, default_value_t = Stage::Decoder)]
        stage: Stage,
        /// 1-based chunk for the encoder stage.
        #[arg(long, default_value_t = 1)]
        chunk: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Largest logit change under a global position-ID shift; exits 2 at
    /// 1e-9 or above.
    ShiftTest {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 7, allow_hyphen_values = true)]
        shift: i64,
        #[command(flatten)]
        output: Output,
    },
}
