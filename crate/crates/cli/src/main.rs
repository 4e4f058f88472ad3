use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod summary;

/// Semantic concept vectors: compute, query, and use them to explain a
/// rectifier network.
#[derive(Parser, Debug)]
#[command(name = "sevec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing). Every command writes run.txt here.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute concept vectors from labelled features and store them.
    ComputeSevec {
        /// Feature-set manifest.
        #[arg(long)]
        features: PathBuf,
        /// Concept label; repeatable. Default: every label in the set.
        #[arg(long)]
        concept: Vec<String>,
        /// Stem of the store manifest written into --out; existing concepts
        /// in it are kept.
        #[arg(long, default_value = "store")]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Rank samples by cosine similarity to a concept (or by one unit).
    Retrieve {
        #[arg(long)]
        features: PathBuf,
        /// Concept-store manifest.
        #[arg(long, required_unless_present = "unit")]
        store: Option<PathBuf>,
        #[arg(long, required_unless_present = "unit")]
        concept: Option<String>,
        /// Rank by a single unit's activation instead of a concept.
        #[arg(long, conflicts_with_all = ["store", "concept"])]
        unit: Option<usize>,
        /// Number of samples to return.
        #[arg(short = 'N', default_value_t = 10)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// List samples within cosine distance r of a concept.
    Vicinity {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        concept: String,
        /// Radius in (0, 2].
        #[arg(short = 'r', default_value_t = 0.5)]
        r: f32,
        #[command(flatten)]
        common: Common,
    },
    /// Assign every sample to its nearest concept.
    Partition {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Saliency map for one input, optionally restricted to a concept.
    Saliency {
        /// Network manifest.
        #[arg(long)]
        network: PathBuf,
        /// Input tensor (STF1).
        #[arg(long)]
        input: PathBuf,
        /// Target class name or index.
        #[arg(long)]
        target: String,
        /// guidedbp, gradinput or gradient.
        #[arg(long, default_value = "guidedbp")]
        method: String,
        /// Concept mask as STORE:CONCEPT.
        #[arg(long)]
        semantic: Option<String>,
        /// Mask threshold on the activation rate.
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        /// Layer to mask (default: the network's tap layer).
        #[arg(long)]
        layer: Option<String>,
        /// Channel aggregation: sum or max (of absolute values).
        #[arg(long, default_value = "sum")]
        aggregation: String,
        #[command(flatten)]
        common: Common,
    },
    /// Pointing-game accuracy curves for saliency maps.
    Eval {
        /// CSV with header image_id,class,x0,y0,x1,y1.
        #[arg(long)]
        boxes: PathBuf,
        /// METHOD=DIR with maps named <image_id>.<class>.stf; repeatable.
        #[arg(long, required = true)]
        maps: Vec<String>,
        /// Fraction of kept pixels that must lie in the boxes.
        #[arg(long, default_value_t = 1.0)]
        containment: f64,
        /// Kept-energy percentage for the single-value summary.
        #[arg(short = 'm', default_value_t = 50.0)]
        m: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Change of the target probability under four representation changes.
    Perturb {
        #[arg(long)]
        network: PathBuf,
        /// Labelled tap-layer features.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[command(flatten)]
        common: Common,
    },
    /// Diversity of each concept, optionally correlated with per-concept scores.
    Diversity {
        #[arg(long)]
        features: PathBuf,
        /// Stored vectors to use; computed from the features when omitted.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Concepts to report; repeatable. Default: every label.
        #[arg(long)]
        concept: Vec<String>,
        /// CSV with header concept,score for a Pearson correlation.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise cosine relevance between stored concepts.
    Relevance {
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Spherical k-means over one concept's binarized samples.
    Facets {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        concept: String,
        #[arg(short = 'k', default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Describe one sample with the nearest concept of several stores.
    Explain {
        #[arg(long)]
        features: PathBuf,
        /// Sample id to explain.
        #[arg(long)]
        sample: String,
        /// ROLE=STORE; repeatable.
        #[arg(long, required = true)]
        store: Vec<String>,
        /// Abstain when the best cosine is below this.
        #[arg(long, default_value_t = 0.3)]
        threshold: f32,
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic four-class fixture: a trained network, its
    /// train/test tap features, and one input per class.
    MakeFixture {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
