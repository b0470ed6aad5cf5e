//! `cre`: command-line driver for continual relation extraction runs.

mod runner;
mod rundir;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cre_engine::config::{AblationFlags, BackendKind, DatasetSource, RunConfig};
use cre_engine::corpus::synthetic::{generate, SyntheticConfig};
use cre_engine::corpus::{
    build_task_sequences, cap_per_relation, parse_dataset, relation_set, write_dataset, DatasetFormat,
    SequenceManifest, TaskSequence,
};
use cre_engine::evaluation::{accuracy_csv, aggregate_runs, render_table, Aggregate, RunReport};
use cre_engine::orchestrator::prepare_sequences;

use rundir::{read_json, slug, write_json, RunDir, RunIndex};

/// Environment variable that overrides the service URL from the config.
const SERVICE_URL_ENV: &str = "CRE_SERVICE_URL";

#[derive(Parser)]
#[command(name = "cre", version, about = "Continual relation extraction with two-part memory and contrastive instructions")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus as a dataset file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticConfig::default().samples_per_relation)]
        samples_per_relation: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().seed)]
        seed: u64,
    },
    /// Parse a raw dataset, cap it per relation and write the task sequences.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// tacred-like or fewrel-like.
        #[arg(long)]
        format: DatasetFormat,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the configured pipeline variant over every sequence.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full pipeline and each single-component ablation.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the results table of a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Print per-sequence accuracies as CSV instead.
        #[arg(long)]
        csv: bool,
    },
    /// Re-run a run directory from its recorded logs and check the reports.
    Replay {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    memory_size: Option<usize>,
    #[arg(long)]
    kp: Option<usize>,
    #[arg(long)]
    kn: Option<usize>,
    /// sim or remote.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Dataset file; --format gives its flavour.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    dataset_format: Option<DatasetFormat>,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Config overrides such as `num_tasks=4` or `sim.pull_rate=0.2`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(config)
}

/// Config file, then flags, then `key=value` overrides, then the environment.
fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(m) = args.memory_size {
        config.memory_size = m;
    }
    if let Some(k) = args.kp {
        config.k_p = k;
    }
    if let Some(k) = args.kn {
        config.k_n = k;
    }
    if let Some(b) = args.backend {
        config.backend = b;
    }
    if let Some(path) = &args.dataset {
        config.dataset = DatasetSource::File {
            path: path.clone(),
            format: args.dataset_format.unwrap_or(DatasetFormat::TacredLike),
        };
    }
    for assignment in &args.overrides {
        config.apply_override(assignment)?;
    }
    if let Ok(url) = std::env::var(SERVICE_URL_ENV) {
        config.remote.base_url = url;
    }
    config.validate()?;
    Ok(config)
}

/// `full`, or the names of the switched-off components joined by `+`.
fn variant_name(flags: &AblationFlags) -> String {
    let value = serde_json::to_value(flags).unwrap_or_default();
    let on: Vec<&str> = value
        .as_object()
        .map(|o| o.iter().filter(|(_, v)| v.as_bool() == Some(true)).map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    if on.is_empty() {
        "full".to_string()
    } else {
        on.join("+")
    }
}

fn execute(command: &str, config: RunConfig, variants: Vec<(String, AblationFlags)>, out: &Path) -> Result<PathBuf> {
    let samples = runner::load_samples(&config)?;
    let sequences = prepare_sequences(&config, &samples)?;
    let run = RunDir::create(out, command)?;
    write_json(&run.config_path(), &config)?;
    for seq in &sequences {
        write_json(&run.manifest(seq.sequence_index), &seq.manifest())?;
    }
    let index = RunIndex {
        command: command.to_string(),
        created: chrono::Local::now().to_rfc3339(),
        num_sequences: sequences.len(),
        variants: variants.iter().map(|(name, _)| (name.clone(), slug(name))).collect(),
    };
    write_json(&run.index_path(), &index)?;

    let mut all_reports = Vec::new();
    let mut aggregates = Vec::new();
    for (name, flags) in &variants {
        let variant_config = RunConfig {
            ablation: *flags,
            ..config.clone()
        };
        eprintln!("running variant '{name}' on {} sequences", sequences.len());
        let reports = runner::run_variant(&variant_config, name, &sequences, &run.variant(&slug(name)))?;
        aggregates.push(aggregate_runs(&reports, config.std_kind)?);
        all_reports.extend(reports);
    }
    write_summaries(&run, &all_reports, &aggregates)?;
    println!("{}", render_table(&aggregates));
    println!("run directory: {}", run.root.display());
    Ok(run.root)
}

fn write_summaries(run: &RunDir, reports: &[RunReport], aggregates: &[Aggregate]) -> Result<()> {
    write_json(&run.root.join("aggregate.json"), aggregates)?;
    std::fs::write(run.root.join("accuracy.csv"), accuracy_csv(reports))?;
    std::fs::write(run.root.join("table.md"), render_table(aggregates))?;
    Ok(())
}

fn load_reports(run: &RunDir, index: &RunIndex) -> Result<Vec<(String, Vec<RunReport>)>> {
    index
        .variants
        .iter()
        .map(|(name, dir)| {
            let variant = run.variant(dir);
            let reports = runner::report_paths(&variant, index.num_sequences)
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    Ok(RunReport::from_json(&text)?)
                })
                .collect::<Result<Vec<_>>>()?;
            if reports.is_empty() {
                bail!("variant '{name}' has no reports in {}", variant.root.display());
            }
            Ok((name.clone(), reports))
        })
        .collect()
}

fn report(run_dir: &Path, csv: bool) -> Result<()> {
    let run = RunDir::open(run_dir)?;
    let index: RunIndex = read_json(&run.index_path())?;
    let config: RunConfig = read_json(&run.config_path())?;
    let variants = load_reports(&run, &index)?;
    if csv {
        let all: Vec<RunReport> = variants.into_iter().flat_map(|(_, r)| r).collect();
        print!("{}", accuracy_csv(&all));
    } else {
        let aggregates = variants
            .iter()
            .map(|(_, r)| aggregate_runs(r, config.std_kind))
            .collect::<cre_engine::Result<Vec<_>>>()?;
        println!("{}", render_table(&aggregates));
    }
    Ok(())
}

fn replay(run_dir: &Path) -> Result<()> {
    let run = RunDir::open(run_dir)?;
    let index: RunIndex = read_json(&run.index_path())?;
    let config: RunConfig = read_json(&run.config_path())?;
    let samples = runner::load_samples(&config)?;
    let mut sequences = Vec::new();
    for i in 0..index.num_sequences {
        let manifest: SequenceManifest = read_json(&run.manifest(i))?;
        sequences.push(TaskSequence::from_manifest(&manifest, &samples)?);
    }
    let mut checked = 0;
    for (name, dir) in &index.variants {
        let variant = run.variant(dir);
        for (i, path) in runner::report_paths(&variant, index.num_sequences).iter().enumerate() {
            let (recorded, replayed) = runner::replay_one(path, &variant, &sequences[i])?;
            if recorded != replayed {
                bail!("variant '{name}' sequence {i}: replayed report hash {replayed} differs from recorded {recorded}");
            }
            println!("{name} sequence {i}: {recorded}");
            checked += 1;
        }
    }
    if checked == 0 {
        bail!("no reports to replay in {}", run.root.display());
    }
    println!("replayed {checked} reports; all hashes match");
    Ok(())
}

fn ingest(input: &Path, format: DatasetFormat, out: &Path, common: &CommonArgs) -> Result<()> {
    let config = resolve_config(common)?;
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let records = text.lines().filter(|l| !l.trim().is_empty()).count();
    let samples = parse_dataset(&text, format).with_context(|| format!("parsing {}", input.display()))?;
    let split = cap_per_relation(&samples, config.train_cap, config.test_cap, config.seed)?;
    let relations = relation_set(&split.train);
    let partitions = build_task_sequences(&relations, config.num_tasks, config.num_sequences, config.seed)?;
    std::fs::create_dir_all(out.join("manifests")).with_context(|| format!("creating {}", out.display()))?;
    let mut capped = split.train.clone();
    capped.extend(split.test.iter().cloned());
    write_dataset(out.join("samples.jsonl"), &capped)?;
    for p in &partitions {
        let seq = TaskSequence::populate(p, &split)?;
        write_json(&out.join("manifests").join(format!("sequence-{}.json", p.sequence_index)), &seq.manifest())?;
    }
    println!(
        "{records} records, {} dropped as no relation, {} relations; capped to {} train / {} test; {} sequences of {} tasks written to {}",
        records - samples.len(),
        relations.len(),
        split.train.len(),
        split.test.len(),
        partitions.len(),
        config.num_tasks,
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Synth {
            out,
            samples_per_relation,
            seed,
        } => {
            let samples = generate(&SyntheticConfig {
                samples_per_relation,
                seed,
                ..SyntheticConfig::default()
            });
            write_dataset(&out, &samples)?;
            println!("wrote {} samples over {} relations to {}", samples.len(), relation_set(&samples).len(), out.display());
        }
        Command::Ingest {
            input,
            format,
            out_dir,
            common,
        } => ingest(&input, format, &out_dir, &common)?,
        Command::Run { common } => {
            let config = resolve_config(&common)?;
            let name = variant_name(&config.ablation);
            let flags = config.ablation;
            execute("run", config, vec![(name, flags)], &common.out)?;
        }
        Command::Ablate { common } => {
            let config = resolve_config(&common)?;
            let variants = AblationFlags::matrix().into_iter().map(|(n, f)| (n.to_string(), f)).collect();
            execute("ablate", config, variants, &common.out)?;
        }
        Command::Report { run_dir, csv } => report(&run_dir, csv)?,
        Command::Replay { run_dir } => replay(&run_dir)?,
    }
    Ok(())
}
