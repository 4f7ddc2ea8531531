mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scrubkit::harness::{
    run_cross_position, run_mean_probing, run_snapshot_probing, run_tracking, run_wer_comparison, Experiment,
    ExperimentConfig, OutputManifest, ResultMatrix, Source,
};
use scrubkit::io::{validate_manifest, write_stack_dump, LabelManifest};
use scrubkit::synth::{ConceptPlacement, SynthConfig};
use scrubkit::ScrubRun;

#[derive(Parser)]
#[command(name = "scrubkit", version, about = "Linear concept erasure and probing for layered embeddings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set probes.mlp.hidden=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Probe seeds, comma separated.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Option<Vec<u64>>,
    /// State indices to probe, comma separated (0 is the input).
    #[arg(long, value_delimiter = ',', global = true)]
    layers: Option<Vec<usize>>,
    /// Embedding container; use together with --manifest.
    #[arg(long, global = true)]
    container: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Language-head file for wer-compare on dumps.
    #[arg(long, global = true)]
    head: Option<PathBuf>,
    #[arg(long, global = true)]
    synth_utterances: Option<usize>,
    #[arg(long, global = true)]
    synth_seed: Option<u64>,
    /// orthogonal or overlap
    #[arg(long, global = true)]
    placement: Option<String>,
    #[arg(long, global = true)]
    no_scrub: bool,
    #[arg(long, global = true)]
    chunk_size: Option<usize>,
    /// Cache scrubbed states here instead of recomputing them each pass.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-pooled linear probe per layer.
    MeanProbe,
    /// Fit the eraser cascade and save it with its tracking scores.
    Scrub,
    /// Like scrub, and also write the tracking matrices.
    Track,
    /// Probes at ten frame positions per layer.
    SnapshotProbe,
    /// Train at one position, test at another.
    CrossProbe {
        /// State index; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Word error rate before and after scrubbing.
    WerCompare {
        /// Reuse erasers from a previous scrub output directory.
        #[arg(long)]
        erasers: Option<PathBuf>,
    },
    /// Write a synthetic corpus as container, manifest and head file.
    SynthGen,
    /// Check a manifest against a container; exits 1 on any violation.
    ValidateManifest,
}

fn apply_flags(cfg: &mut ExperimentConfig, c: &Common) -> Result<()> {
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seeds) = &c.seeds {
        cfg.probes.seeds = seeds.clone();
        cfg.scrub.probes.seeds = seeds.clone();
    }
    if let Some(layers) = &c.layers {
        cfg.layers = Some(layers.clone());
    }
    match (&c.container, &c.manifest) {
        (Some(container), Some(manifest)) => {
            cfg.source = Source::Dump {
                container: container.clone(),
                manifest: manifest.clone(),
                head: c.head.clone(),
            };
        }
        (None, None) => {
            if let (Some(h), Source::Dump { head, .. }) = (&c.head, &mut cfg.source) {
                *head = Some(h.clone());
            }
        }
        _ => bail!("--container and --manifest go together"),
    }
    if c.synth_utterances.is_some() || c.synth_seed.is_some() || c.placement.is_some() {
        let Source::Synth(s) = &mut cfg.source else {
            bail!("synthetic flags given but the source is a dump");
        };
        apply_synth_flags(s, c)?;
    }
    if c.no_scrub {
        cfg.scrub_enabled = false;
    }
    if let Some(n) = c.chunk_size {
        cfg.scrub.chunk_size = n;
    }
    if let Some(d) = &c.cache_dir {
        cfg.scrub.cache_dir = Some(d.clone());
    }
    Ok(())
}

fn apply_synth_flags(s: &mut SynthConfig, c: &Common) -> Result<()> {
    if let Some(n) = c.synth_utterances {
        s.n_utterances = n;
    }
    if let Some(seed) = c.synth_seed {
        s.seed = seed;
    }
    if let Some(p) = &c.placement {
        s.placement = match p.as_str() {
            "orthogonal" => ConceptPlacement::Orthogonal,
            "overlap" => ConceptPlacement::Overlap,
            other => bail!("unknown placement {other:?}; expected orthogonal or overlap"),
        };
    }
    Ok(())
}

fn print_matrix(m: &ResultMatrix) {
    let width = m.row_labels.iter().map(String::len).max().unwrap_or(0);
    let cols: Vec<String> = m.col_labels.iter().map(|c| format!("{c:>13}")).collect();
    println!("{:width$}  {}", "", cols.join(" "));
    for (label, row) in m.row_labels.iter().zip(&m.cells) {
        let cells: Vec<String> = row.iter().map(|c| format!("{:>6.3}±{:<6.3}", c.mean, c.std)).collect();
        println!("{label:width$}  {}", cells.join(" "));
    }
    println!("chance {:.3}", m.chance);
}

fn emit(manifest: &mut OutputManifest, out: &Path, m: &ResultMatrix) -> Result<()> {
    print_matrix(m);
    manifest.add(m.write_csv(out)?);
    manifest.write_json(out, &format!("{}.json", m.name), m)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut cfg = config::load(cli.common.config.as_deref(), &cli.common.sets)?;
    apply_flags(&mut cfg, &cli.common)?;
    let out = cfg.out_dir.clone();

    if let Command::ValidateManifest = cli.command {
        let (Some(container), Some(manifest)) = (&cli.common.container, &cli.common.manifest) else {
            bail!("validate-manifest needs --container and --manifest");
        };
        let report = validate_manifest(&LabelManifest::read(manifest, None)?, container)?;
        print!("{}", report.summary());
        let mut files = OutputManifest::new("validate-manifest");
        files.write_json(&out, "manifest_report.json", &report)?;
        files.finish(&out)?;
        if report.ok() {
            println!("manifest ok");
            return Ok(ExitCode::SUCCESS);
        }
        println!("manifest has violations");
        return Ok(ExitCode::from(1));
    }

    let exp = Experiment::from_config(&cfg)?;
    let name = match &cli.command {
        Command::MeanProbe => "mean-probe",
        Command::Scrub => "scrub",
        Command::Track => "track",
        Command::SnapshotProbe => "snapshot-probe",
        Command::CrossProbe { .. } => "cross-probe",
        Command::WerCompare { .. } => "wer-compare",
        Command::SynthGen => "synth-gen",
        Command::ValidateManifest => unreachable!(),
    };
    let mut files = OutputManifest::new(name);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let config_path = out.join("experiment.toml");
    std::fs::write(&config_path, toml::to_string(&cfg)?)?;
    files.add([config_path]);

    match cli.command {
        Command::MeanProbe => emit(&mut files, &out, &run_mean_probing(&exp, &cfg.probes, cfg.layers.as_deref())?)?,
        Command::Scrub | Command::Track => {
            let (run, matrix) = run_tracking(&exp, &cfg.scrub)?;
            files.add(run.write_dir(&out)?);
            let ranks: Vec<String> = run.erasers.iter().map(|e| e.rank().to_string()).collect();
            println!("eraser ranks: {}", ranks.join(" "));
            if matches!(cli.command, Command::Track) {
                emit(&mut files, &out, &matrix)?;
            }
        }
        Command::SnapshotProbe => {
            emit(&mut files, &out, &run_snapshot_probing(&exp, &cfg.probes, cfg.layers.as_deref())?)?
        }
        Command::CrossProbe { layer } => emit(&mut files, &out, &run_cross_position(&exp, &cfg.probes, layer)?)?,
        Command::WerCompare { erasers } => {
            let head = exp.head(cfg.head_ridge)?;
            let erasers = match erasers {
                Some(dir) => ScrubRun::load_erasers(&dir, exp.stack.n_layers())?,
                None if cfg.scrub_enabled => {
                    let (run, _) = run_tracking(&exp, &cfg.scrub)?;
                    files.add(run.write_dir(&out)?);
                    run.erasers
                }
                None => Vec::new(),
            };
            let table = run_wer_comparison(&exp, &head, &erasers)?;
            let c = &table.comparison;
            println!(
                "{}: WER {:.4} -> {:.4} (delta {:+.4}) over {} utterances",
                table.corpus,
                c.wer_original,
                c.wer_scrubbed,
                c.delta(),
                c.n_utterances
            );
            for (dataset, model, before, after) in &table.reference {
                println!("  reference {dataset}/{model}: {before:.2}% -> {after:.2}%");
            }
            files.write_json(&out, "wer.json", &table)?;
        }
        Command::SynthGen => {
            let Source::Synth(s) = &cfg.source else {
                bail!("synth-gen needs a synthetic source");
            };
            let container = out.join("corpus.scrb");
            let manifest = out.join("manifest.csv");
            let head_path = out.join("head.bin");
            let metadata = serde_json::json!({ "generator": "synth", "config": s });
            let n = write_stack_dump(exp.stack.as_ref(), exp.corpus.as_ref(), &container, &manifest, metadata)?;
            exp.head(cfg.head_ridge)?.save(&head_path)?;
            println!("wrote {n} utterances with {} states each", exp.n_states());
            files.add([container, manifest, head_path]);
        }
        Command::ValidateManifest => unreachable!(),
    }
    let path = files.finish(&out)?;
    println!("outputs listed in {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
