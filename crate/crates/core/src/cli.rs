//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on numeric
//! failures (divergent training, failed gradient check). Every run writes a
//! [`RunManifest`]; subcommands that only print to standard output write it
//! to `--manifest`, defaulting to `<subcommand>-manifest.json`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{self, write_atomic, CheckpointMeta};
use crate::corpus::{generate_synthetic_corpus, parse_copa_records, parse_nli_records, write_nli_records, SynthMode, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy_csv, distribution_report, histogram_csv, pairwise_accuracy, render_svg, summary_csv,
};
use crate::objectives::Objective;
use crate::recast::{
    candidate_groups, copa_candidate_groups, read_candidate_groups, read_triplets, recast_copa, recast_joci,
    recast_mnli1, recast_mnli2_split, write_candidate_groups, write_triplets, CandidateGroup, JociVariant,
    TripletDataset,
};
use crate::training::{build_vocab, crossval_margin, train, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "plausrank", version, about = "Learning-to-rank for plausibility tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Variant {
    Mnli1,
    Mnli2,
    Joci1,
    Joci2,
    Copa,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Separable,
    Adversarial,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ObjectiveArg {
    Log,
    Margin,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recast a labeled corpus into ranked triplets.
    Recast {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        variant: Variant,
        /// Seed of the mnli2 train/dev coin.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Dev triplets; required by mnli2.
        #[arg(long)]
        out_dev: Option<PathBuf>,
        /// Also write per-premise candidate sets for `analyze`.
        #[arg(long)]
        sets_out: Option<PathBuf>,
    },
    /// Generate a synthetic three-level corpus.
    Synth {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        premises: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a scorer and write the best checkpoint and history.
    Train {
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// JSON training config; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Pairwise accuracy of a checkpoint; summary CSV on standard output.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Per-premise score distributions of a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sets: PathBuf,
        #[arg(long, default_value_t = crate::evaluation::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Choose the margin by k-fold cross-validation.
    Crossval {
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare exact gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Random draws per objective.
        #[arg(long, default_value_t = 10)]
        draws: u64,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Recast { .. } => "recast",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Analyze { .. } => "analyze",
            Command::Crossval { .. } => "crossval",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

/// Record of one invocation, sufficient to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub duration_secs: f64,
}

struct Run {
    manifest: RunManifest,
    manifest_path: PathBuf,
}

impl Run {
    fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.manifest.outputs.push(path.to_path_buf());
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, args: &[OsString]) -> Result<()> {
    let started = Instant::now();
    let name = command.name();
    let default_manifest = |dir: Option<&Path>| match dir {
        Some(d) => d.join("manifest.json"),
        None => PathBuf::from(format!("{name}-manifest.json")),
    };
    let manifest_path = match &command {
        Command::Recast { out, .. } | Command::Synth { out, .. } => sibling(out, "manifest.json"),
        Command::Train { out_dir, .. } | Command::Analyze { out_dir, .. } => default_manifest(Some(out_dir)),
        Command::Eval { manifest, .. } | Command::Crossval { manifest, .. } | Command::Gradcheck { manifest, .. } => {
            manifest.clone().unwrap_or_else(|| default_manifest(None))
        }
    };
    let mut run = Run {
        manifest: RunManifest {
            subcommand: name.to_string(),
            argv: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: 0.0,
        },
        manifest_path,
    };
    let outcome = dispatch(command, &mut run);
    run.manifest.duration_secs = started.elapsed().as_secs_f64();
    let mut json = serde_json::to_vec_pretty(&run.manifest)?;
    json.push(b'\n');
    // a failed run still records what it attempted
    let written = write_atomic(&run.manifest_path, &json);
    outcome.and(written)
}

/// `<dir of path>/<stem>.<name>`, e.g. `out/triplets.manifest.json`.
fn sibling(path: &Path, name: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{name}"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))
}

fn load_triplets(run: &mut Run, path: &Path) -> Result<TripletDataset> {
    run.manifest.inputs.push(path.to_path_buf());
    read_triplets(open(path)?)
}

fn load_config(run: &mut Run, path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            run.manifest.inputs.push(p.to_path_buf());
            serde_json::from_reader(open(p)?).map_err(|e| Error::validation(format!("{}: {e}", p.display())))
        }
        None => Ok(TrainConfig::default()),
    }
}

fn triplet_bytes(dataset: &TripletDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_triplets(dataset, &mut buf)?;
    Ok(buf)
}

fn dispatch(command: Command, run: &mut Run) -> Result<()> {
    match command {
        Command::Recast { input, variant, seed, out, out_dev, sets_out } => {
            run.manifest.inputs.push(input.clone());
            run.manifest.seed = Some(seed);
            run.manifest.config = json!({ "variant": variant, "seed": seed });
            let (train_set, dev_set, groups) = recast_input(&input, variant, seed, out_dev.is_some())?;
            run.output(&out, &triplet_bytes(&train_set)?)?;
            println!("{} triplets -> {}", train_set.len(), out.display());
            if let (Some(dev), Some(path)) = (dev_set, out_dev.as_ref()) {
                run.output(path, &triplet_bytes(&dev)?)?;
                println!("{} dev triplets -> {}", dev.len(), path.display());
            }
            if let Some(path) = sets_out {
                let mut buf = Vec::new();
                write_candidate_groups(&groups, &mut buf)?;
                run.output(&path, &buf)?;
                println!("{} candidate sets -> {}", groups.len(), path.display());
            }
            Ok(())
        }
        Command::Synth { mode, premises, seed, out } => {
            let synth_mode = match mode {
                ModeArg::Separable => SynthMode::Separable,
                ModeArg::Adversarial => SynthMode::AdversarialNeutral,
            };
            let spec = SynthSpec::mnli(premises, synth_mode);
            run.manifest.seed = Some(seed);
            run.manifest.config = json!({
                "mode": mode,
                "premises": premises,
                "vocab_size": spec.vocab_size,
                "tokens_per_text": spec.tokens_per_text,
            });
            let pairs = generate_synthetic_corpus(&spec, seed)?;
            let mut buf = Vec::new();
            write_nli_records(&pairs, &mut buf)?;
            run.output(&out, &buf)?;
            println!("{} labeled pairs -> {}", pairs.len(), out.display());
            Ok(())
        }
        Command::Train {
            triplets,
            dev,
            objective,
            xi,
            seed,
            out_dir,
            config,
            learning_rate,
            max_epochs,
            batch_size,
            patience,
            dim,
            hidden,
        } => {
            let mut cfg = load_config(run, config.as_deref())?;
            match (objective, xi) {
                (Some(ObjectiveArg::Log), Some(_)) => {
                    return Err(Error::validation("--xi applies to the margin objective only"))
                }
                (Some(ObjectiveArg::Log), None) => cfg.objective = Objective::Log,
                (Some(ObjectiveArg::Margin), xi) => {
                    let current = match cfg.objective {
                        Objective::Margin { xi } => xi,
                        Objective::Log => 0.2,
                    };
                    cfg.objective = Objective::Margin { xi: xi.unwrap_or(current) };
                }
                (None, Some(xi)) => match cfg.objective {
                    Objective::Margin { .. } => cfg.objective = Objective::Margin { xi },
                    Objective::Log => return Err(Error::validation("--xi given but the objective is log")),
                },
                (None, None) => {}
            }
            macro_rules! set {
                ($($field:ident),*) => { $( if let Some(v) = $field { cfg.$field = v; } )* };
            }
            set!(seed, learning_rate, max_epochs, batch_size, patience, dim, hidden);
            cfg.validate()?;
            run.manifest.seed = Some(cfg.seed);
            run.manifest.config = serde_json::to_value(&cfg)?;

            let train_set = load_triplets(run, &triplets)?;
            let dev_set = load_triplets(run, &dev)?;
            let vocab = build_vocab(&train_set, cfg.min_freq)?;
            std::fs::create_dir_all(&out_dir)?;
            let history_path = out_dir.join("history.csv");
            let outcome = match train(&train_set, &dev_set, &vocab, &cfg) {
                Ok(outcome) => outcome,
                Err(failure) => {
                    run.output(&history_path, failure.history.to_csv().as_bytes())?;
                    return Err(failure.error);
                }
            };
            let ckpt = out_dir.join("model.ckpt");
            let meta = CheckpointMeta::new(outcome.params.dims, &cfg)?;
            checkpoint::save(&ckpt, &outcome.params, &vocab, &meta)?;
            run.manifest.outputs.push(ckpt.clone());
            run.manifest.outputs.push(checkpoint::sidecar_path(&ckpt));
            run.output(&history_path, outcome.history.to_csv().as_bytes())?;
            let mut cfg_json = serde_json::to_vec_pretty(&cfg)?;
            cfg_json.push(b'\n');
            run.output(&out_dir.join("config.json"), &cfg_json)?;
            let best = outcome.history.best_record().expect("successful runs have a best record");
            println!(
                "best dev accuracy {:.4} at step {} ({} evaluations, {:?}) -> {}",
                best.dev_accuracy,
                best.step,
                outcome.history.records.len(),
                outcome.history.stop_reason.expect("set on success"),
                ckpt.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint: ckpt, triplets, .. } => {
            run.manifest.inputs.push(ckpt.clone());
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let dataset = load_triplets(run, &triplets)?;
            if dataset.is_empty() {
                return Err(Error::validation("no triplets to evaluate"));
            }
            let acc = pairwise_accuracy(&params, &vocab, &dataset)?;
            let csv = accuracy_csv(&acc);
            std::io::stdout().write_all(csv.as_bytes())?;
            Ok(())
        }
        Command::Analyze { checkpoint: ckpt, sets, bins, out_dir, svg } => {
            run.manifest.inputs.push(ckpt.clone());
            run.manifest.inputs.push(sets.clone());
            run.manifest.config = json!({ "bins": bins, "svg": svg });
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let groups = read_candidate_groups(open(&sets)?)?;
            if groups.is_empty() {
                return Err(Error::validation("no candidate sets to analyze"));
            }
            let report = distribution_report(&params, &vocab, &groups, bins)?;
            std::fs::create_dir_all(&out_dir)?;
            run.output(&out_dir.join("histogram.csv"), histogram_csv(&report).as_bytes())?;
            run.output(&out_dir.join("summary.csv"), summary_csv(&report).as_bytes())?;
            if svg {
                run.output(&out_dir.join("histogram.svg"), render_svg(&report).as_bytes())?;
            }
            print!("{}", summary_csv(&report));
            Ok(())
        }
        Command::Crossval { triplets, k, grid, seed, config, .. } => {
            let mut cfg = load_config(run, config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            run.manifest.seed = Some(cfg.seed);
            run.manifest.config = json!({ "k": k, "grid": grid, "base": cfg });
            let dataset = load_triplets(run, &triplets)?;
            let report = crossval_margin(&dataset, k, &grid, &cfg)?;
            print!("{}", report.to_csv());
            println!("best_xi,{}", report.best_xi);
            Ok(())
        }
        Command::Gradcheck { seed, eps, threshold, draws, .. } => {
            if !(eps > 0.0 && threshold > 0.0) || draws == 0 {
                return Err(Error::validation("eps, threshold and draws must be positive"));
            }
            run.manifest.seed = Some(seed);
            run.manifest.config = json!({ "eps": eps, "threshold": threshold, "draws": draws });
            println!("draw,objective,max_relative_error");
            let mut worst: f64 = 0.0;
            for i in 0..draws {
                for log in [false, true] {
                    let case = crate::autodiff::gradcheck_case(seed.wrapping_add(i), log, eps)?;
                    let err = case.max_relative_error(eps)?;
                    worst = worst.max(err);
                    println!("{i},{},{err:e}", case.objective.name());
                }
            }
            let pass = worst < threshold;
            println!("{} max relative error {worst:e} threshold {threshold:e}", if pass { "PASS" } else { "FAIL" });
            if pass {
                Ok(())
            } else {
                Err(Error::numeric("gradcheck", format!("max relative error {worst:e} >= {threshold:e}")))
            }
        }
    }
}

fn recast_input(
    input: &Path,
    variant: Variant,
    seed: u64,
    has_dev_out: bool,
) -> Result<(TripletDataset, Option<TripletDataset>, Vec<CandidateGroup>)> {
    if matches!(variant, Variant::Copa) {
        let items = parse_copa_records(open(input)?)?;
        return Ok((recast_copa(&items), None, copa_candidate_groups(&items)));
    }
    let pairs = parse_nli_records(open(input)?)?;
    let groups = candidate_groups(&pairs)?;
    match variant {
        Variant::Mnli1 => Ok((recast_mnli1(&pairs)?, None, groups)),
        Variant::Mnli2 => {
            if !has_dev_out {
                return Err(Error::validation("mnli2 writes a train and a dev split; pass --out-dev"));
            }
            let split = recast_mnli2_split(&pairs, seed)?;
            Ok((split.train, Some(split.dev), groups))
        }
        Variant::Joci1 => Ok((recast_joci(&pairs, JociVariant::Joci1)?, None, groups)),
        Variant::Joci2 => Ok((recast_joci(&pairs, JociVariant::Joci2)?, None, groups)),
        Variant::Copa => unreachable!("handled above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["plausrank"]), 1);
        assert_eq!(run(["plausrank", "frobnicate"]), 1);
        assert_eq!(run(["plausrank", "synth", "--mode", "sideways", "--premises", "3", "--out", "x"]), 1);
        assert_eq!(run(["plausrank", "--help"]), 0);
    }

    #[test]
    fn synth_then_recast_writes_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let trip = dir.path().join("trip.jsonl");
        let argv = |v: &[&str]| std::iter::once("plausrank").chain(v.iter().copied()).map(String::from).collect::<Vec<_>>();
        let c = corpus.to_str().unwrap();
        assert_eq!(run(argv(&["synth", "--mode", "separable", "--premises", "6", "--seed", "1", "--out", c])), 0);
        let t = trip.to_str().unwrap();
        assert_eq!(run(argv(&["recast", "--input", c, "--variant", "mnli1", "--out", t])), 0);
        let ds = read_triplets(open(&trip).unwrap()).unwrap();
        assert_eq!(ds.len(), 18);
        let m: RunManifest =
            serde_json::from_slice(&std::fs::read(dir.path().join("trip.manifest.json")).unwrap()).unwrap();
        assert_eq!(m.subcommand, "recast");
        assert_eq!(m.outputs, vec![trip.clone()]);
        assert!(dir.path().join("corpus.manifest.json").exists());
        // mnli2 without a dev output is a validation error
        assert_eq!(run(argv(&["recast", "--input", c, "--variant", "mnli2", "--out", t])), 1);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("a/b/trip.jsonl"), "manifest.json"), PathBuf::from("a/b/trip.manifest.json"));
    }
}
