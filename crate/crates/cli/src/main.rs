//! Command-line front end for the molecule/text alignment pipeline.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use molalign_core::augment::{self, read_corpus, read_pairs, write_pairs, CorpusFormat, CorpusRecord, PairClass};
use molalign_core::chem::parse_smiles;
use molalign_core::encoder::Model;
use molalign_core::eval;
use molalign_core::fragment::{fragment, RuleSet, Scheme};
use molalign_core::mine::{self, Threshold};
use molalign_core::phrase::PhraseExtractor;
use molalign_core::train::{TrainError, Trainer};

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser)]
#[command(name = "molalign", version, about = "Substructure-aware molecule/text alignment")]
struct Cli {
    /// key = value file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fragment every molecule of a corpus
    Fragment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Custom rule table replacing the bundled one
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Extract chemical phrases from every caption of a corpus
    ExtractPhrases {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, requires = "stoplist")]
        lexicon: Option<PathBuf>,
        #[arg(long, requires = "lexicon")]
        stoplist: Option<PathBuf>,
    },
    /// Build whole, fragment and phrase pairs from a corpus
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Train the encoders on augmented pairs and write a checkpoint
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch JSONL log (default: stdout)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Pairs with their final active flags
        #[arg(long)]
        refined: Option<PathBuf>,
    },
    /// Mine substructure/phrase relations and export generative prompts
    Mine {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Generative export (JSONL)
        #[arg(long)]
        output: PathBuf,
        /// Mined relations (JSONL)
        #[arg(long)]
        relations: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        /// Drop scores equal to theta
        #[arg(long)]
        strict: bool,
    },
    /// Retrieval metrics over the whole pairs of a pair file
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// JSON report; the table always goes to stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOLBRIDGE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let workers = cli.workers.or(cfg.workers);
    if workers == Some(0) {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Fragment {
            input,
            output,
            scheme,
            rules,
        } => {
            check_output(&output)?;
            let scheme = scheme.or(cfg.scheme).unwrap_or(Scheme::Brics);
            let custom;
            let rules = match rules {
                Some(path) => {
                    custom = RuleSet::from_path(&path, scheme).map_err(|e| CliError::Config(e.to_string()))?;
                    &custom
                }
                None => RuleSet::builtin(scheme),
            };
            cmd_fragment(&input, &output, rules)
        }
        Command::ExtractPhrases {
            input,
            output,
            lexicon,
            stoplist,
        } => {
            check_output(&output)?;
            let extractor = match (lexicon, stoplist) {
                (Some(l), Some(s)) => {
                    PhraseExtractor::from_files(&l, &s).map_err(|e| CliError::Config(e.to_string()))?
                }
                _ => PhraseExtractor::default(),
            };
            cmd_extract_phrases(&input, &output, &extractor)
        }
        Command::Augment { input, output, scheme } => {
            check_output(&output)?;
            let scheme = scheme.or(cfg.scheme).unwrap_or(Scheme::Brics);
            let corpus = load_corpus(&input)?;
            let pairs =
                augment::augment(&corpus, RuleSet::builtin(scheme), &PhraseExtractor::default()).map_err(data)?;
            write_atomic(&output, |w| write_pairs(w, &pairs))
        }
        Command::Train {
            input,
            output,
            seed,
            epochs,
            log,
            refined,
        } => {
            for path in [Some(&output), log.as_ref(), refined.as_ref()].into_iter().flatten() {
                check_output(path)?;
            }
            let mut train = cfg.train;
            if let Some(s) = seed {
                train.seed = s;
            }
            if let Some(e) = epochs {
                train.epochs = e;
            }
            cmd_train(&input, &output, train, log.as_deref(), refined.as_deref())
        }
        Command::Mine {
            input,
            model,
            output,
            relations,
            theta,
            strict,
        } => {
            for path in [Some(&output), relations.as_ref()].into_iter().flatten() {
                check_output(path)?;
            }
            let theta = theta.or(cfg.theta).unwrap_or(mine::DEFAULT_THETA);
            if !(-1.0..=1.0).contains(&theta) {
                return Err(CliError::Config(format!("theta {theta} outside [-1, 1]")));
            }
            let threshold = Threshold {
                theta,
                inclusive: !strict,
            };
            cmd_mine(&input, &model, &output, relations.as_deref(), threshold)
        }
        Command::Eval { input, model, output } => {
            if let Some(o) = &output {
                check_output(o)?;
            }
            cmd_eval(&input, &model, output.as_deref())
        }
    }
}

/// Fails early when the output directory does not exist.
fn check_output(path: &Path) -> Result<(), CliError> {
    let dir = parent_dir(path);
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "output directory {} does not exist",
            dir.display()
        )))
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    let tmp = tempfile::NamedTempFile::new_in(parent_dir(path)).map_err(io_err)?;
    let mut w = BufWriter::new(tmp);
    f(&mut w).map_err(io_err)?;
    let tmp = w.into_inner().map_err(|e| io_err(e.into_error()))?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CliError> {
    read_corpus(open(path)?, CorpusFormat::from_path(path))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_pairs(path: &Path) -> Result<Vec<augment::AlignmentPair>, CliError> {
    read_pairs(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load_path(path)
        .map(|(m, _)| m)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_fragment(input: &Path, output: &Path, rules: &RuleSet) -> Result<(), CliError> {
    let corpus = load_corpus(input)?;
    let results: Vec<_> = corpus
        .par_iter()
        .map(|r| {
            let m = parse_smiles(&r.smiles).map_err(|e| CliError::Data(format!("line {}: {e}", r.line)))?;
            fragment(&m, &r.id, rules).map_err(|e| CliError::Data(format!("line {}: {e}", r.line)))
        })
        .collect();
    let mut fragments = Vec::new();
    for r in results {
        fragments.extend(r?);
    }
    log::info!("{} molecules, {} fragments", corpus.len(), fragments.len());
    write_atomic(output, |w| mine::write_jsonl(w, &fragments))
}

fn cmd_extract_phrases(input: &Path, output: &Path, extractor: &PhraseExtractor) -> Result<(), CliError> {
    let corpus = load_corpus(input)?;
    let phrases: Vec<_> = corpus
        .par_iter()
        .map(|r| extractor.extract(&r.caption, &r.id))
        .collect::<Vec<_>>()
        .concat();
    write_atomic(output, |w| mine::write_jsonl(w, &phrases))
}

fn cmd_train(
    input: &Path,
    output: &Path,
    config: molalign_core::train::TrainConfig,
    log_path: Option<&Path>,
    refined: Option<&Path>,
) -> Result<(), CliError> {
    let pairs = load_pairs(input)?;
    let epochs = config.epochs;
    let mut trainer = Trainer::new(pairs, config);
    let mut log_lines = Vec::new();
    for _ in 0..epochs {
        match trainer.train_epoch() {
            Ok(report) => {
                let line = serde_json::to_string(&report).map_err(data)?;
                log::info!("{line}");
                if log_path.is_none() {
                    println!("{line}");
                }
                log_lines.push(line);
            }
            Err(e @ TrainError::DivergenceDetected { .. }) => {
                let dump = output.with_extension("diverged.json");
                write_atomic(&dump, |w| save(trainer.model(), w, trainer.epochs_done()))?;
                return Err(CliError::Diverged(format!("{e}; state written to {}", dump.display())));
            }
            Err(e) => return Err(data(e)),
        }
    }
    write_atomic(output, |w| save(trainer.model(), w, trainer.epochs_done()))?;
    if let Some(path) = log_path {
        write_atomic(path, |w| log_lines.iter().try_for_each(|l| writeln!(w, "{l}")))?;
    }
    if let Some(path) = refined {
        write_atomic(path, |w| write_pairs(w, trainer.pairs()))?;
    }
    Ok(())
}

fn save(model: &Model, w: &mut dyn Write, epochs: usize) -> std::io::Result<()> {
    model.save(w, epochs).map_err(std::io::Error::other)
}

fn cmd_mine(
    input: &Path,
    model: &Path,
    output: &Path,
    relations_path: Option<&Path>,
    threshold: Threshold,
) -> Result<(), CliError> {
    let pairs = load_pairs(input)?;
    let model = load_model(model)?;
    let groups = mine::group_pairs(&pairs);
    let relations = mine::mine(&model, &groups, threshold).map_err(data)?;
    let excluded = mine::excluded_origins(&relations, &groups);
    log::info!(
        "{} relations from {} origins; {} origins excluded",
        relations.len(),
        groups.len() - excluded.len(),
        excluded.len()
    );
    let records = mine::export_generative(&relations, &groups);
    if let Some(path) = relations_path {
        write_atomic(path, |w| mine::write_jsonl(w, &relations))?;
    }
    write_atomic(output, |w| mine::write_jsonl(w, &records))
}

fn cmd_eval(input: &Path, model: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let pairs = load_pairs(input)?;
    let model = load_model(model)?;
    let whole: Vec<(&str, &str)> = pairs
        .iter()
        .filter(|p| p.pair_class == PairClass::S)
        .map(|p| (p.mol.as_str(), p.text.as_str()))
        .collect();
    let (t2m, m2t) = eval::evaluate(&model, &whole).map_err(data)?;
    let reports = [t2m, m2t];
    print!("{}", eval::render_table(&reports));
    if let Some(path) = output {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &reports)?;
            writeln!(w)
        })?;
    }
    Ok(())
}
