use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riverseg::forest::{Forest, ForestConfig, DEFAULT_MIN_COMPONENT};
use riverseg::formats::{read_manifest, render_table};
use riverseg::pipeline::{self, ProposerSpec, RunConfig};
use riverseg::postproc::PatchGrid;
use riverseg::promptsel::{FloodFillProposer, LoopConfig};
use riverseg::raster::ResampleMethod;
use riverseg::synth::{self, SynthSpec};
use riverseg::{Error, Result};

#[derive(Parser)]
#[command(name = "riverseg", version, about = "River trash segmentation evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Fail if any file referenced by the manifest is missing.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against ground truth and write the CSV report.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Similarity-guided mask extraction.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Directory of `<image>[.<k>].rfld` similarity maps, instead of a manifest.
        #[arg(long)]
        similarity_dir: Option<PathBuf>,
        #[arg(long)]
        mfs_stop: f64,
        #[arg(long, default_value_t = 64)]
        max_masks: usize,
        /// Region-growing fraction of the seed value.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        /// Replay precomputed masks from this index instead of region growing.
        #[arg(long)]
        replay_index: Option<PathBuf>,
    },
    /// Pick the most similar prompt image for every test image.
    MatchPrompts {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "prompt_dir")]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        prompt_dir: Option<PathBuf>,
    },
    /// Train the random-forest pixel classifier.
    RfTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify a split with a trained forest.
    RfPredict {
        #[arg(long)]
        forest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_MIN_COMPONENT)]
        min_size: usize,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        locations: Option<u32>,
        #[arg(long)]
        images: Option<usize>,
    },
    /// Split a field into patches or merge them back.
    #[command(subcommand)]
    Patches(PatchesCommand),
    /// Threshold a logit map into a mask.
    Threshold {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        cutoff: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PatchesCommand {
    Split {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 448)]
        working_size: usize,
        #[arg(long, value_parser = parse_method, default_value = "bilinear")]
        method: ResampleMethod,
        #[arg(long)]
        out: PathBuf,
    },
    Merge {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<ResampleMethod, String> {
    match s {
        "nearest" => Ok(ResampleMethod::Nearest),
        "bilinear" => Ok(ResampleMethod::Bilinear),
        _ => Err(format!("unknown method {s:?}, expected nearest or bilinear")),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Invalid(format!("--{flag} is required")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })
}

fn run(cli: Cli) -> Result<String> {
    let mut buf = String::new();
    macro_rules! say {
        ($($t:tt)*) => {{
            let _ = writeln!(buf, $($t)*);
        }};
    }
    match cli.command {
        Command::Evaluate {
            config,
            common,
            run,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::new(required(common.manifest.clone(), "manifest")?, required(common.split.clone(), "split")?),
            };
            if let Some(m) = common.manifest {
                cfg.manifest = m;
            }
            if let Some(s) = common.split {
                cfg.split = s;
            }
            if let Some(o) = common.out {
                cfg.output.csv = Some(o);
            }
            if let Some(r) = run {
                cfg.run = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.workers = common.workers.or(cfg.workers);
            cfg.strict |= common.strict;
            let outcome = pipeline::cmd_evaluate(&cfg)?;
            buf.push_str(&render_table(&outcome.report));
            let missing = outcome.images.iter().filter(|i| i.barrier_missing).count();
            if missing > 0 {
                eprintln!("warning: {missing} images had no barrier mask; barrier filter skipped");
            }
        }
        Command::Extract {
            common,
            similarity_dir,
            mfs_stop,
            max_masks,
            fraction,
            replay_index,
        } => {
            let inputs = match similarity_dir {
                Some(dir) => pipeline::similarity_inputs_from_dir(dir)?,
                None => {
                    let m = read_manifest(required(common.manifest, "manifest")?, common.strict)?;
                    pipeline::similarity_inputs_from_manifest(&m, &required(common.split, "split")?)?
                }
            };
            let proposer = match replay_index {
                Some(p) => ProposerSpec::Replay(p),
                None => ProposerSpec::FloodFill(FloodFillProposer {
                    fraction,
                    ..Default::default()
                }),
            };
            let cfg = LoopConfig {
                max_masks,
                ..LoopConfig::new(mfs_stop)
            };
            let log = pipeline::cmd_extract(&inputs, &proposer, &cfg, required(common.out, "out")?, common.workers)?;
            for r in &log {
                say!("{}\t{} masks\t{:?}", r.image_id, r.masks.len(), r.stop);
            }
        }
        Command::MatchPrompts {
            common,
            test_dir,
            prompt_dir,
        } => {
            let out = required(common.out, "out")?;
            let matches = match (test_dir, prompt_dir) {
                (Some(t), Some(p)) => pipeline::cmd_match_prompts(t, p, &out)?,
                _ => {
                    let m = read_manifest(required(common.manifest, "manifest")?, common.strict)?;
                    pipeline::cmd_match_prompts_manifest(&m, &required(common.split, "split")?, &out)?
                }
            };
            for (id, m) in &matches {
                say!("{id}\t{}\t{:.6}", m.prompt_id, m.similarity);
            }
        }
        Command::RfTrain { config, common, seed } => {
            let mut cfg: ForestConfig = match config {
                Some(p) => read_json(&p)?,
                None => ForestConfig::default(),
            };
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let m = read_manifest(required(common.manifest, "manifest")?, common.strict)?;
            let out = required(common.out, "out")?;
            let forest = pipeline::cmd_rf_train(&m, &required(common.split, "split")?, &cfg, &out)?;
            say!("trained {} trees -> {}", forest.trees.len(), out.display());
        }
        Command::RfPredict {
            forest,
            common,
            min_size,
        } => {
            let forest = Forest::load(forest)?;
            let m = read_manifest(required(common.manifest, "manifest")?, common.strict)?;
            let path = pipeline::cmd_rf_predict(&forest, &m, &required(common.split, "split")?, required(common.out, "out")?, min_size)?;
            say!("{}", path.display());
        }
        Command::Synth {
            config,
            out,
            seed,
            locations,
            images,
        } => {
            let mut spec: SynthSpec = match config {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            spec.seed = seed.unwrap_or(spec.seed);
            spec.locations = locations.unwrap_or(spec.locations);
            spec.images_per_location = images.unwrap_or(spec.images_per_location);
            say!("{}", synth::generate(&spec, out)?.display());
        }
        Command::Patches(PatchesCommand::Split {
            field,
            rows,
            cols,
            working_size,
            method,
            out,
        }) => {
            let grid = PatchGrid {
                working_size: (working_size, working_size),
                ..PatchGrid::new(rows, cols)?
            };
            let layout = pipeline::cmd_patches_split(field, &grid, method, out)?;
            say!("{} patches", layout.patches.len());
        }
        Command::Patches(PatchesCommand::Merge { layout, out }) => {
            let f = pipeline::cmd_patches_merge(layout, out)?;
            say!("merged {}", f.dims());
        }
        Command::Threshold { logits, cutoff, out } => match pipeline::cmd_threshold(logits, cutoff, &out)? {
            Some(area) => say!("{area} pixels -> {}", out.display()),
            None => say!("no pixel reaches {cutoff}; nothing written"),
        },
    }
    Ok(buf)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
